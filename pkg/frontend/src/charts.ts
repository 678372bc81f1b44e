import type { ComplianceDay } from "./types.js";

export interface ChartSeries {
  title: string;
  labels: string[];
  values: number[];
}

/** The three compliance series: participants/day, sensor hours/day, and
 * diary entries/day, straight from the report rows. */
export function buildChartSeries(days: ComplianceDay[]): ChartSeries[] {
  const labels = days.map((d) => d.date);
  return [
    { title: "participants reporting / day", labels, values: days.map((d) => d.participants_reporting) },
    { title: "sensor hours / day", labels, values: days.map((d) => d.sensor_hours) },
    { title: "diary entries / day", labels, values: days.map((d) => d.diary_entries) },
  ];
}

/** Minimal dependency-free polyline chart on a 2D canvas. */
export function drawLineChart(canvas: HTMLCanvasElement, series: ChartSeries): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) {
    return;
  }
  const width = canvas.width;
  const height = canvas.height;
  const pad = { left: 44, right: 12, top: 24, bottom: 22 };
  ctx.clearRect(0, 0, width, height);
  ctx.font = "12px system-ui, sans-serif";
  ctx.fillStyle = "#333";
  ctx.fillText(series.title, pad.left, 14);

  const values = series.values;
  if (values.length === 0) {
    ctx.fillText("no data", width / 2 - 20, height / 2);
    return;
  }
  const maxValue = Math.max(...values, 1);
  const plotW = width - pad.left - pad.right;
  const plotH = height - pad.top - pad.bottom;
  const x = (i: number) =>
    pad.left + (values.length === 1 ? plotW / 2 : (i / (values.length - 1)) * plotW);
  const y = (v: number) => pad.top + plotH - (v / maxValue) * plotH;

  ctx.strokeStyle = "#bbb";
  ctx.beginPath();
  ctx.moveTo(pad.left, pad.top);
  ctx.lineTo(pad.left, pad.top + plotH);
  ctx.lineTo(pad.left + plotW, pad.top + plotH);
  ctx.stroke();
  ctx.fillText(String(maxValue), 4, pad.top + 10);
  ctx.fillText("0", 4, pad.top + plotH);

  ctx.strokeStyle = "#2266cc";
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  values.forEach((v, i) => {
    if (i === 0) {
      ctx.moveTo(x(i), y(v));
    } else {
      ctx.lineTo(x(i), y(v));
    }
  });
  ctx.stroke();
  ctx.fillStyle = "#2266cc";
  values.forEach((v, i) => {
    ctx.beginPath();
    ctx.arc(x(i), y(v), 2.5, 0, Math.PI * 2);
    ctx.fill();
  });
  if (series.labels.length > 0) {
    ctx.fillStyle = "#666";
    ctx.fillText(series.labels[0], pad.left, height - 6);
    const last = series.labels[series.labels.length - 1];
    ctx.fillText(last, width - pad.right - 8 * last.length * 0.6, height - 6);
  }
}

/** Render placeholders when the series is missing entirely. */
export function renderChartsInto(
  container: HTMLElement,
  days: ComplianceDay[] | null,
): HTMLCanvasElement[] {
  const doc = container.ownerDocument;
  container.textContent = "";
  if (days === null || days.length === 0) {
    const note = doc.createElement("p");
    note.className = "chart-placeholder";
    note.textContent = "compliance series unavailable";
    container.appendChild(note);
    return [];
  }
  const canvases: HTMLCanvasElement[] = [];
  for (const series of buildChartSeries(days)) {
    const canvas = doc.createElement("canvas");
    canvas.width = 520;
    canvas.height = 180;
    canvas.dataset.points = String(series.values.length);
    canvas.dataset.title = series.title;
    container.appendChild(canvas);
    try {
      drawLineChart(canvas, series);
    } catch {
      // jsdom canvases have no 2D context; data attributes still carry the series
    }
    canvases.push(canvas);
  }
  return canvases;
}
