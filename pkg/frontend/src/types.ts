export interface ParticipantRow {
  pseudonym: string;
  last_chunk_at: number | null;
  last_answer_at: number | null;
  chunks_total: number;
  readings_total: number;
  answers_total: number;
  backlog_size: number;
  silent: boolean;
  pending_commands: string[];
  contact_ref: string;
}

export interface StatusResponse {
  now: number;
  silence_threshold_ms: number;
  participants: ParticipantRow[];
}

export interface SyncCommandWire {
  participant: string;
  kind: string;
  issued_at: number;
  delivered_at: number | null;
}

export interface ComplianceDay {
  date: string;
  participants_reporting: number;
  sensor_hours: number;
  diary_entries: number;
}

export type SortKey = "pseudonym" | "last_chunk_at" | "chunks_total" | "silent" | "backlog_size";
