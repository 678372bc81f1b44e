import { SupervisorApi, UnknownParticipantError } from "./api.js";
import { renderChartsInto } from "./charts.js";
import { parseComplianceCsv } from "./csv.js";
import { FleetViewModel } from "./model.js";
import { renderDetail, renderFleetTable, renderStaleBanner } from "./table.js";

const POLL_INTERVAL_MS = Number(localStorage.getItem("ilog.pollMs") ?? "3000");
const CHART_INTERVAL_MS = POLL_INTERVAL_MS * 10;

function config() {
  const params = new URLSearchParams(window.location.search);
  const baseUrl =
    params.get("server") ??
    localStorage.getItem("ilog.server") ??
    window.location.origin;
  const credential =
    params.get("credential") ?? localStorage.getItem("ilog.credential") ?? "";
  localStorage.setItem("ilog.server", baseUrl);
  if (credential) {
    localStorage.setItem("ilog.credential", credential);
  }
  return { baseUrl, credential };
}

function toast(message: string): void {
  const box = document.getElementById("toasts")!;
  const note = document.createElement("div");
  note.className = "toast";
  note.textContent = message;
  box.appendChild(note);
  setTimeout(() => note.remove(), 6000);
}

async function start(): Promise<void> {
  const api = new SupervisorApi(config());
  const vm = new FleetViewModel();
  const tableBox = document.getElementById("fleet")!;
  const detailBox = document.getElementById("detail")!;
  const bannerBox = document.getElementById("banner")!;
  const chartsBox = document.getElementById("charts")!;
  const summaryBox = document.getElementById("summary")!;

  const handlers = {
    onSort(key: Parameters<FleetViewModel["setSort"]>[0]) {
      vm.setSort(key);
      redraw();
    },
    onSelect(pseudonym: string) {
      vm.selected = vm.selected === pseudonym ? null : pseudonym;
      redraw();
    },
    async onTriggerSync(pseudonym: string) {
      vm.markSyncRequested(pseudonym);
      redraw();
      try {
        await api.triggerSync(pseudonym);
      } catch (err) {
        if (err instanceof UnknownParticipantError) {
          vm.markUnknown(pseudonym);
          toast(`participant ${pseudonym.slice(0, 8)} is unknown or erased`);
        } else {
          toast(String(err));
        }
        redraw();
      }
    },
  };

  function redraw(): void {
    renderStaleBanner(vm, bannerBox);
    renderFleetTable(vm, tableBox, handlers);
    renderDetail(vm, detailBox);
    summaryBox.textContent =
      `${vm.rows.length} participants, ${vm.silentCount()} silent; ` +
      (vm.stale ? "feed stale" : "live");
  }

  const filterInput = document.getElementById("filter") as HTMLInputElement;
  filterInput.addEventListener("input", () => {
    vm.filterText = filterInput.value;
    redraw();
  });

  async function pollStatus(): Promise<void> {
    try {
      const status = await api.fetchStatus();
      vm.applyStatus(status, Date.now());
    } catch {
      vm.markFetchFailed();
    }
    redraw();
  }

  async function pollCharts(): Promise<void> {
    try {
      const csv = await api.fetchComplianceCsv();
      renderChartsInto(chartsBox, parseComplianceCsv(csv));
    } catch {
      renderChartsInto(chartsBox, null);
    }
  }

  await pollStatus();
  await pollCharts();
  setInterval(pollStatus, POLL_INTERVAL_MS);
  setInterval(pollCharts, CHART_INTERVAL_MS);
}

start().catch((err) => toast(String(err)));
