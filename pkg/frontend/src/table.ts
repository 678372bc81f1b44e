import type { FleetViewModel } from "./model.js";
import type { SortKey } from "./types.js";

export interface TableHandlers {
  onTriggerSync(pseudonym: string): void;
  onSelect(pseudonym: string): void;
  onSort(key: SortKey): void;
}

const COLUMNS: Array<{ key: SortKey | null; label: string }> = [
  { key: "pseudonym", label: "participant" },
  { key: "last_chunk_at", label: "last sync" },
  { key: "chunks_total", label: "chunks" },
  { key: null, label: "readings" },
  { key: null, label: "answers" },
  { key: "backlog_size", label: "backlog" },
  { key: "silent", label: "state" },
  { key: null, label: "" },
];

export function formatAge(ms: number | null): string {
  if (ms === null) {
    return "never";
  }
  if (ms < 60_000) {
    return `${Math.max(0, Math.round(ms / 1000))}s ago`;
  }
  if (ms < 3_600_000) {
    return `${Math.round(ms / 60_000)}m ago`;
  }
  return `${(ms / 3_600_000).toFixed(1)}h ago`;
}

/** Render the fleet into `container`, replacing previous contents. */
export function renderFleetTable(
  vm: FleetViewModel,
  container: HTMLElement,
  handlers: TableHandlers,
): void {
  const doc = container.ownerDocument;
  container.textContent = "";

  if (vm.rows.length === 0) {
    const empty = doc.createElement("p");
    empty.className = "empty-state";
    empty.textContent = "No participants registered yet.";
    container.appendChild(empty);
    return;
  }

  const table = doc.createElement("table");
  table.className = "fleet";
  const head = table.createTHead().insertRow();
  for (const column of COLUMNS) {
    const th = doc.createElement("th");
    th.textContent = column.label;
    if (column.key) {
      th.classList.add("sortable");
      const key = column.key;
      th.addEventListener("click", () => handlers.onSort(key));
      if (vm.sortKey === key) {
        th.classList.add(vm.sortDescending ? "sorted-desc" : "sorted-asc");
      }
    }
    head.appendChild(th);
  }

  const body = table.createTBody();
  for (const row of vm.visibleRows()) {
    const tr = body.insertRow();
    tr.dataset.pseudonym = row.pseudonym;
    if (row.silent) {
      tr.classList.add("silent");
    }
    if (vm.isUnknown(row.pseudonym)) {
      tr.classList.add("unknown");
    }
    if (vm.selected === row.pseudonym) {
      tr.classList.add("selected");
    }
    tr.insertCell().textContent = row.pseudonym.slice(0, 8);
    tr.insertCell().textContent = formatAge(vm.lastSyncAgeMs(row));
    tr.insertCell().textContent = String(row.chunks_total);
    tr.insertCell().textContent = String(row.readings_total);
    tr.insertCell().textContent = String(row.answers_total);
    tr.insertCell().textContent = String(row.backlog_size);
    const state = tr.insertCell();
    state.className = row.silent ? "flag-silent" : "flag-ok";
    state.textContent = row.silent ? "silent" : "ok";

    const actions = tr.insertCell();
    const button = doc.createElement("button");
    button.textContent = vm.hasPendingSync(row.pseudonym) ? "sync pending" : "trigger sync";
    button.disabled = vm.hasPendingSync(row.pseudonym) || vm.isUnknown(row.pseudonym);
    if (vm.hasPendingSync(row.pseudonym)) {
      button.classList.add("pending");
    }
    button.addEventListener("click", (event) => {
      event.stopPropagation();
      handlers.onTriggerSync(row.pseudonym);
    });
    actions.appendChild(button);
    tr.addEventListener("click", () => handlers.onSelect(row.pseudonym));
  }
  container.appendChild(table);
}

/** Per-participant drill-down panel. Shows the opaque contact_ref so the
 * supervisor can look the person up in the separately held identity
 * ledger; the dashboard itself never sees contact data. */
export function renderDetail(
  vm: FleetViewModel,
  container: HTMLElement,
): void {
  const doc = container.ownerDocument;
  container.textContent = "";
  const row = vm.rows.find((r) => r.pseudonym === vm.selected);
  if (!row) {
    return;
  }
  const title = doc.createElement("h3");
  title.textContent = `participant ${row.pseudonym.slice(0, 8)}`;
  container.appendChild(title);
  const list = doc.createElement("dl");
  const fields: Array<[string, string]> = [
    ["pseudonym", row.pseudonym],
    ["contact ref", row.contact_ref],
    ["last sync", formatAge(vm.lastSyncAgeMs(row))],
    ["last answer", formatAge(row.last_answer_at === null ? null : vm.now - row.last_answer_at)],
    ["chunks", String(row.chunks_total)],
    ["readings", String(row.readings_total)],
    ["answers", String(row.answers_total)],
    ["backlog", String(row.backlog_size)],
    ["pending commands", row.pending_commands.join(", ") || "none"],
  ];
  for (const [label, value] of fields) {
    const dt = doc.createElement("dt");
    dt.textContent = label;
    const dd = doc.createElement("dd");
    dd.textContent = value;
    list.append(dt, dd);
  }
  container.appendChild(list);
}

export function renderStaleBanner(vm: FleetViewModel, container: HTMLElement): void {
  container.textContent = "";
  if (!vm.stale) {
    container.classList.remove("visible");
    return;
  }
  container.classList.add("visible");
  const when = vm.lastGoodAt === null
    ? "never"
    : new Date(vm.lastGoodAt).toISOString();
  container.textContent = `status feed unreachable; showing data from ${when}`;
}
