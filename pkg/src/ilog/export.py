"""Batch export to columnar files and the study compliance/volume reports.

Exports are delimited columnar text: one file per sensor (pseudonym,
ts_ms, value_1..value_n) plus `answers` and `telemetry` tables, each with
a one-line typed header and a sidecar JSON schema. Row order is
deterministic (pseudonym, ts_ms), so re-exporting the same range under
the same clock produces byte-identical files. Identity-ledger fields are
never exported; every row is keyed by pseudonym only.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path

from .catalog import CATALOG, SensorCatalog, ValueKind
from .diarystore import DiaryStore
from .store import MS_PER_DAY, SeriesStore, day_of_ts
from .study import BYTES_PER_READING, StudyConfig, expected_daily_volume


class IoFailure(Exception):
    pass


@dataclass(frozen=True)
class ExportTable:
    name: str
    row_count: int
    path: str
    schema_hash: str


@dataclass(frozen=True)
class ExportManifest:
    export_id: str
    created_at: int
    range_start: int
    range_end: int
    tables: tuple[ExportTable, ...]

    def to_json(self) -> dict:
        return {
            "export_id": self.export_id,
            "created_at": self.created_at,
            "range": [self.range_start, self.range_end],
            "tables": [{"name": t.name, "row_count": t.row_count,
                        "path": t.path, "schema_hash": t.schema_hash}
                       for t in self.tables],
        }


def _schema_hash(columns: list[tuple[str, str]]) -> str:
    payload = json.dumps(columns, separators=(",", ":"))
    return hashlib.blake2b(payload.encode(), digest_size=8).hexdigest()


def _write_table(out_dir: Path, name: str, columns: list[tuple[str, str]],
                 rows) -> ExportTable:
    path = out_dir / f"{name}.tsv"
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(f"{col}:{typ}" for col, typ in columns) + "\n")
        for row in rows:
            fh.write("\t".join(_cell(v) for v in row) + "\n")
            count += 1
    schema = {"table": name, "columns": [{"name": c, "type": t} for c, t in columns]}
    (out_dir / f"{name}.schema.json").write_text(json.dumps(schema, sort_keys=True) + "\n")
    return ExportTable(name, count, path.name, _schema_hash(columns))


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value).replace("\t", " ").replace("\n", " ")


def _sensor_table_name(spec) -> str:
    return f"sensor_{spec.sensor_id:02d}_{spec.slug}"


def export_tables(store: SeriesStore, diary: DiaryStore, range_start: int, range_end: int,
                  out_dir: str | Path, catalog: SensorCatalog = CATALOG,
                  clock=None) -> ExportManifest:
    """Export [range_start, range_end) to out_dir; returns the manifest.

    An empty range is a success producing a manifest with zero tables.
    """
    if range_start > range_end:
        raise ValueError("range_start must be <= range_end")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc

    tables: list[ExportTable] = []
    by_sensor: dict[int, list] = {}
    for key, _count in store.partitions():
        day_ms = _day_ms(key.day)
        if day_ms + MS_PER_DAY <= range_start or day_ms >= range_end:
            continue
        by_sensor.setdefault(key.sensor_id, []).append(key)

    for sensor_id in sorted(by_sensor):
        spec = catalog.by_id(sensor_id)
        columns = [("pseudonym", "str"), ("ts_ms", "int")]
        value_type = {ValueKind.NUMERIC: "float", ValueKind.TEXT: "str",
                      ValueKind.BOOLEAN: "bool"}[spec.value_kind]
        columns += [(f"value_{i + 1}", value_type) for i in range(spec.value_arity)]

        def rows(sensor_id=sensor_id, keys=by_sensor[sensor_id]):
            for key in sorted(keys):
                for reading in store.query_range(key.pseudonym_id, sensor_id,
                                                 max(range_start, _day_ms(key.day)),
                                                 min(range_end, _day_ms(key.day) + MS_PER_DAY)):
                    yield (key.pseudonym_id, reading.ts_ms, *reading.values)

        table = _write_table(out_dir, _sensor_table_name(spec), columns, rows())
        if table.row_count == 0:
            (out_dir / f"{table.name}.tsv").unlink()
            (out_dir / f"{table.name}.schema.json").unlink()
        else:
            tables.append(table)

    answer_rows = []
    telemetry_rows = []
    for rec in diary.records():
        if not range_start <= rec.episode_start < range_end:
            continue
        for cb, code, text in rec.answers:
            answer_rows.append((rec.task_id, rec.pseudonym_id, rec.episode_start,
                                cb.value, code, text))
        telemetry_rows.append((rec.task_id, rec.pseudonym_id,
                               rec.telemetry.notified_at, rec.telemetry.reaction_ms,
                               rec.telemetry.completion_ms, rec.telemetry.delivered_offline))
    answer_rows.sort(key=lambda r: (r[1], r[2], r[0], r[3]))
    telemetry_rows.sort(key=lambda r: (r[1], r[2], r[0]))
    if answer_rows or telemetry_rows:
        tables.append(_write_table(out_dir, "answers", [
            ("task_id", "str"), ("pseudonym", "str"), ("episode_start", "int"),
            ("codebook", "str"), ("code", "int"), ("open_text", "str"),
        ], answer_rows))
        tables.append(_write_table(out_dir, "telemetry", [
            ("task_id", "str"), ("pseudonym", "str"), ("notified_at", "int"),
            ("reaction_ms", "int"), ("completion_ms", "int"), ("delivered_offline", "bool"),
        ], telemetry_rows))

    digest = hashlib.blake2b(digest_size=16)
    for t in tables:
        digest.update(f"{t.name}:{t.row_count}:{t.schema_hash}".encode())
        digest.update((out_dir / t.path).read_bytes())
    created_at = (clock or (lambda: int(time.time() * 1000)))()
    manifest = ExportManifest(
        export_id=digest.hexdigest(),
        created_at=created_at,
        range_start=range_start,
        range_end=range_end,
        tables=tuple(tables),
    )
    (out_dir / "manifest.json").write_text(json.dumps(manifest.to_json(), indent=2,
                                                      sort_keys=True) + "\n")
    return manifest


def _day_ms(day: date) -> int:
    from datetime import datetime, timezone
    return int(datetime(day.year, day.month, day.day, tzinfo=timezone.utc).timestamp() * 1000)


# ---------------------------------------------------------------------------
# Compliance report

@dataclass(frozen=True)
class ComplianceReport:
    per_day: list[dict]                # date, participants_reporting, sensor_hours, diary_entries
    per_sensor_hours: dict[int, int]
    per_participant: dict[str, dict]   # entries, reporting_days, entries_per_day
    total_diary_entries: int
    participants_registered: int | None = None


def compliance_report(store: SeriesStore, diary: DiaryStore,
                      config: StudyConfig) -> ComplianceReport:
    """Per-day participation, sensor coverage hours, and diary entry counts."""
    days = [config.start + timedelta(days=i) for i in range(config.day_count)]
    day_index = {d: i for i, d in enumerate(days)}

    reporting: list[set[str]] = [set() for _ in days]
    hours_per_day = [0] * len(days)
    per_sensor: dict[int, int] = {}
    for key, count in store.partitions():
        idx = day_index.get(key.day)
        if idx is None:
            continue
        hours = store.coverage_hours(key.pseudonym_id, key.sensor_id, key.day)
        reporting[idx].add(key.pseudonym_id)
        hours_per_day[idx] += hours
        per_sensor[key.sensor_id] = per_sensor.get(key.sensor_id, 0) + hours

    entries_per_day = [0] * len(days)
    per_participant: dict[str, dict] = {}
    participant_days: dict[str, set[date]] = {}
    for rec in diary.records():
        day = day_of_ts(rec.episode_start)
        idx = day_index.get(day)
        if idx is not None:
            entries_per_day[idx] += 1
        row = per_participant.setdefault(rec.pseudonym_id, {"entries": 0})
        row["entries"] += 1
    for idx, names in enumerate(reporting):
        for name in names:
            participant_days.setdefault(name, set()).add(days[idx])
    for name, row in per_participant.items():
        reporting_days = len(participant_days.get(name, ()))
        row["reporting_days"] = reporting_days
        row["entries_per_day"] = row["entries"] / reporting_days if reporting_days else 0.0
    for name, days_seen in participant_days.items():
        per_participant.setdefault(name, {"entries": 0, "reporting_days": len(days_seen),
                                          "entries_per_day": 0.0})

    per_day = [{
        "date": d.isoformat(),
        "participants_reporting": len(reporting[i]),
        "sensor_hours": hours_per_day[i],
        "diary_entries": entries_per_day[i],
    } for i, d in enumerate(days)]
    return ComplianceReport(
        per_day=per_day,
        per_sensor_hours=per_sensor,
        per_participant=per_participant,
        total_diary_entries=diary.count(),
    )


def per_day_csv(report: ComplianceReport) -> str:
    lines = ["date,participants_reporting,sensor_hours,diary_entries"]
    for row in report.per_day:
        lines.append(f"{row['date']},{row['participants_reporting']},"
                     f"{row['sensor_hours']},{row['diary_entries']}")
    return "\n".join(lines) + "\n"


def per_sensor_csv(report: ComplianceReport, catalog: SensorCatalog = CATALOG) -> str:
    lines = ["sensor_id,sensor,hours"]
    for sid in sorted(report.per_sensor_hours):
        lines.append(f"{sid},{catalog.by_id(sid).slug},{report.per_sensor_hours[sid]}")
    return "\n".join(lines) + "\n"


def per_participant_csv(report: ComplianceReport) -> str:
    lines = ["pseudonym,entries,reporting_days,entries_per_day"]
    for name in sorted(report.per_participant):
        row = report.per_participant[name]
        lines.append(f"{name},{row['entries']},{row['reporting_days']},"
                     f"{row['entries_per_day']:.3f}")
    return "\n".join(lines) + "\n"


def write_report(report: ComplianceReport, out_dir: str | Path,
                 catalog: SensorCatalog = CATALOG) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "per_day.csv").write_text(per_day_csv(report))
    (out_dir / "per_sensor.csv").write_text(per_sensor_csv(report, catalog))
    (out_dir / "per_participant.csv").write_text(per_participant_csv(report))
    total_hours = sum(report.per_sensor_hours.values())
    reporting_days = sum(r["participants_reporting"] for r in report.per_day)
    mean = report.total_diary_entries / reporting_days if reporting_days else 0.0
    lines = [
        "study compliance report",
        f"days: {len(report.per_day)}",
        f"participants with data: {len(report.per_participant)}",
        f"total sensor hours: {total_hours}",
        f"total diary entries: {report.total_diary_entries}",
        f"mean entries per participant-day: {mean:.2f}",
        "",
        "per-day:",
    ]
    for row in report.per_day:
        lines.append(f"  {row['date']}  reporting={row['participants_reporting']:3d}  "
                     f"hours={row['sensor_hours']:6d}  entries={row['diary_entries']:5d}")
    (out_dir / "report.txt").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Volume accounting

def volume_report(store: SeriesStore, config: StudyConfig,
                  range_start: int, range_end: int,
                  bytes_per_reading: int = BYTES_PER_READING,
                  flag_threshold: float = 0.5) -> list[dict]:
    """Per participant per day: reading counts and uncompressed-equivalent
    bytes, flagging devices deviating beyond the threshold from the
    expected volume for their own observed sensor set."""
    per_device_day: dict[tuple[str, date], int] = {}
    observed_sensors: dict[str, set[int]] = {}
    for key, count in store.partitions():
        if not range_start <= _day_ms(key.day) < range_end:
            continue
        per_device_day[(key.pseudonym_id, key.day)] = \
            per_device_day.get((key.pseudonym_id, key.day), 0) + count
        observed_sensors.setdefault(key.pseudonym_id, set()).add(key.sensor_id)

    rows = []
    for (pseudonym, day), count in sorted(per_device_day.items()):
        enabled = {sid: spec for sid, spec in config.sensors_enabled.items()
                   if sid in observed_sensors[pseudonym]}
        baseline_cfg = _config_with_sensors(config, enabled)
        expected = expected_daily_volume(baseline_cfg, bytes_per_reading)
        volume = count * bytes_per_reading
        deviation = abs(volume - expected) / expected if expected else 0.0
        rows.append({
            "pseudonym": pseudonym,
            "date": day.isoformat(),
            "readings": count,
            "bytes": volume,
            "expected_bytes": expected,
            "flagged": expected > 0 and deviation > flag_threshold,
        })
    return rows


def _config_with_sensors(config: StudyConfig, sensors) -> StudyConfig:
    from dataclasses import replace
    return replace(config, sensors_enabled=dict(sensors))
