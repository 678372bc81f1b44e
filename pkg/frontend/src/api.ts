import type { StatusResponse, SyncCommandWire } from "./types.js";

export class UnknownParticipantError extends Error {}

export interface ApiConfig {
  baseUrl: string;
  credential: string;
}

/** Typed client for the documented supervisor endpoints. Nothing else. */
export class SupervisorApi {
  constructor(private readonly config: ApiConfig) {}

  private headers(): Record<string, string> {
    return { Authorization: this.config.credential };
  }

  async fetchStatus(): Promise<StatusResponse> {
    const resp = await fetch(`${this.config.baseUrl}/v1/supervisor/status`, {
      headers: this.headers(),
    });
    if (!resp.ok) {
      throw new Error(`status fetch failed: HTTP ${resp.status}`);
    }
    return (await resp.json()) as StatusResponse;
  }

  async triggerSync(pseudonym: string): Promise<SyncCommandWire> {
    const resp = await fetch(
      `${this.config.baseUrl}/v1/supervisor/sync/${pseudonym}`,
      { method: "POST", headers: this.headers() },
    );
    if (resp.status === 404) {
      throw new UnknownParticipantError(pseudonym);
    }
    if (!resp.ok) {
      throw new Error(`trigger sync failed: HTTP ${resp.status}`);
    }
    const body = (await resp.json()) as { command: SyncCommandWire };
    return body.command;
  }

  async fetchComplianceCsv(): Promise<string> {
    const resp = await fetch(`${this.config.baseUrl}/v1/supervisor/compliance.csv`, {
      headers: this.headers(),
    });
    if (!resp.ok) {
      throw new Error(`compliance fetch failed: HTTP ${resp.status}`);
    }
    return await resp.text();
  }
}
