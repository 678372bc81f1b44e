import type { ParticipantRow, SortKey, StatusResponse } from "./types.js";

/** Everything the fleet table shows, reconstructible from API responses.
 * Silent flags come from the server verbatim; the client never re-derives
 * them. */
export class FleetViewModel {
  rows: ParticipantRow[] = [];
  now = 0;
  silenceThresholdMs = 0;
  lastGoodAt: number | null = null;
  stale = false;
  sortKey: SortKey = "silent";
  sortDescending = true;
  filterText = "";
  selected: string | null = null;
  private pendingSync = new Set<string>();
  private unknown = new Set<string>();

  applyStatus(response: StatusResponse, receivedAt: number): void {
    this.rows = response.participants;
    this.now = response.now;
    this.silenceThresholdMs = response.silence_threshold_ms;
    this.lastGoodAt = receivedAt;
    this.stale = false;
    for (const row of response.participants) {
      if (
        this.pendingSync.has(row.pseudonym) &&
        !row.pending_commands.includes("force_sync_wifi")
      ) {
        this.pendingSync.delete(row.pseudonym);
      }
    }
  }

  markFetchFailed(): void {
    this.stale = true;
  }

  markSyncRequested(pseudonym: string): void {
    this.pendingSync.add(pseudonym);
  }

  markUnknown(pseudonym: string): void {
    this.unknown.add(pseudonym);
    this.pendingSync.delete(pseudonym);
  }

  hasPendingSync(pseudonym: string): boolean {
    return this.pendingSync.has(pseudonym);
  }

  isUnknown(pseudonym: string): boolean {
    return this.unknown.has(pseudonym);
  }

  setSort(key: SortKey): void {
    if (this.sortKey === key) {
      this.sortDescending = !this.sortDescending;
    } else {
      this.sortKey = key;
      this.sortDescending = key === "silent";
    }
  }

  visibleRows(): ParticipantRow[] {
    const needle = this.filterText.trim().toLowerCase();
    const filtered = needle
      ? this.rows.filter(
          (r) =>
            r.pseudonym.toLowerCase().includes(needle) ||
            r.contact_ref.toLowerCase().includes(needle),
        )
      : [...this.rows];
    const key = this.sortKey;
    filtered.sort((a, b) => {
      const va = sortValue(a, key);
      const vb = sortValue(b, key);
      const cmp = va < vb ? -1 : va > vb ? 1 : a.pseudonym.localeCompare(b.pseudonym);
      return this.sortDescending ? -cmp : cmp;
    });
    return filtered;
  }

  silentCount(): number {
    return this.rows.filter((r) => r.silent).length;
  }

  lastSyncAgeMs(row: ParticipantRow): number | null {
    return row.last_chunk_at === null ? null : this.now - row.last_chunk_at;
  }
}

function sortValue(row: ParticipantRow, key: SortKey): number | string {
  switch (key) {
    case "pseudonym":
      return row.pseudonym;
    case "last_chunk_at":
      return row.last_chunk_at ?? -1;
    case "chunks_total":
      return row.chunks_total;
    case "backlog_size":
      return row.backlog_size;
    case "silent":
      return row.silent ? 1 : 0;
  }
}
