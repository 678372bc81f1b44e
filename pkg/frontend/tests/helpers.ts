import type { ParticipantRow, StatusResponse } from "../src/types.js";

export function row(overrides: Partial<ParticipantRow> = {}): ParticipantRow {
  return {
    pseudonym: "aa".repeat(16),
    last_chunk_at: 990_000,
    last_answer_at: null,
    chunks_total: 3,
    readings_total: 1200,
    answers_total: 5,
    backlog_size: 2,
    silent: false,
    pending_commands: [],
    contact_ref: "ref-0001",
    ...overrides,
  };
}

export function status(rows: ParticipantRow[], now = 1_000_000): StatusResponse {
  return { now, silence_threshold_ms: 86_400_000, participants: rows };
}

export function manyRows(n: number, silentIndex = -1): ParticipantRow[] {
  return Array.from({ length: n }, (_, i) =>
    row({
      pseudonym: i.toString(16).padStart(32, "0"),
      contact_ref: `ref-${i}`,
      silent: i === silentIndex,
    }),
  );
}
