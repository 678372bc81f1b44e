import type { ComplianceDay } from "./types.js";

/** Parse the per-day compliance CSV served by the backend (or written by
 * the report pipeline); header row is required. */
export function parseComplianceCsv(text: string): ComplianceDay[] {
  const lines = text.trim().split(/\r?\n/);
  if (lines.length === 0 || lines[0].trim() === "") {
    return [];
  }
  const header = lines[0].split(",");
  const expected = ["date", "participants_reporting", "sensor_hours", "diary_entries"];
  if (header.join(",") !== expected.join(",")) {
    throw new Error(`unexpected compliance CSV header: ${lines[0]}`);
  }
  return lines.slice(1).map((line) => {
    const [date, reporting, hours, entries] = line.split(",");
    return {
      date,
      participants_reporting: Number(reporting),
      sensor_hours: Number(hours),
      diary_entries: Number(entries),
    };
  });
}
