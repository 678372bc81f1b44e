"""ilogctl: operate the study backend, simulator, and export pipelines."""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from pathlib import Path

from . import __version__
from .export import compliance_report, export_tables, volume_report, write_report
from .ingest import Backend
from .logpack import chunk_from_bytes, open_chunk
from .simulator import (
    CALIBRATION_ANSWER_PROB,
    BehaviorModel,
    ConnectivityModel,
    DeviceProfile,
    HttpTransport,
    calibration_config,
    calibration_fleet,
    run_fleet,
)
from .store import verify_store
from .study import StudyConfig, load_study_file
from .server import ServerThread


def _load_config(path: str) -> StudyConfig:
    return load_study_file(path)


# ---------------------------------------------------------------------------
# Fleet files

def parse_fleet_file(text: str, config: StudyConfig) -> list[DeviceProfile]:
    """Fleet description in the same INI family as study configs.

    `[fleet] calibration = yes` generates the shipped 95-profile calibration
    fleet; `[profile.<label>]` sections define explicit devices. Offline and
    upload-pause windows are `start-end` second offsets from study start
    (open end allowed: `600-`).
    """
    parser = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",))
    parser.optionxform = str
    parser.read_string(text)
    profiles: list[DeviceProfile] = []
    if parser.has_section("fleet") and parser["fleet"].get("calibration", "no") in ("yes", "true", "on"):
        answer_prob = float(parser["fleet"].get("answer_prob", str(CALIBRATION_ANSWER_PROB)))
        profiles.extend(calibration_fleet(answer_prob=answer_prob))
    for section in parser.sections():
        if not section.startswith("profile."):
            continue
        label = section.split(".", 1)[1]
        s = parser[section]
        behavior = BehaviorModel(
            answer_prob=float(s.get("answer_prob", "1.0")),
            reaction_median_s=float(s.get("reaction_median_s", "45")),
            reaction_sigma=float(s.get("reaction_sigma", "0.8")),
            completion_median_s=float(s.get("completion_median_s", "25")),
            completion_sigma=float(s.get("completion_sigma", "0.6")),
            same_as_previous_prob=float(s.get("same_as_previous_prob", "0")),
            start_day=int(s.get("start_day", "0")),
            dropout_day=int(s["dropout_day"]) if "dropout_day" in s else None,
        )
        connectivity = ConnectivityModel(
            offline_windows=_parse_windows(s.get("offline", ""), config),
            upload_pause_windows=_parse_windows(s.get("upload_pause", ""), config),
            sync_period_s=int(s.get("sync_period_s", str(config.sync_period_s))),
        )
        sensors = None
        if "sensors" in s:
            sensors = frozenset(int(x) for x in s["sensors"].split(",") if x.strip())
        profiles.append(DeviceProfile(
            label=label,
            behavior=behavior,
            connectivity=connectivity,
            enabled_sensors=sensors,
            active=s.get("active", "yes").lower() in ("yes", "true", "on", "1"),
        ))
    return profiles


def _parse_windows(raw: str, config: StudyConfig) -> tuple[tuple[int, int], ...]:
    windows = []
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        start_s, _, end_s = part.partition("-")
        start = config.start_ms + int(float(start_s)) * 1000
        end = config.end_ms if not end_s else config.start_ms + int(float(end_s)) * 1000
        windows.append((start, end))
    return tuple(windows)


# ---------------------------------------------------------------------------
# Subcommands

def cmd_inspect(args) -> int:
    data = Path(args.chunk_file).read_bytes()
    chunk = chunk_from_bytes(data)
    print(f"chunk_id:       {chunk.chunk_id.hex()}")
    print(f"pseudonym:      {chunk.pseudonym_id}")
    print(f"reading_count:  {chunk.reading_count}")
    print(f"ts_min..ts_max: {chunk.ts_min}..{chunk.ts_max}")
    print(f"plaintext_len:  {chunk.plaintext_len}")
    print(f"ciphertext_len: {len(chunk.ciphertext)}")
    if args.key:
        readings = open_chunk(chunk, bytes.fromhex(args.key))
        counts: dict[int, int] = {}
        for r in readings:
            counts[r.sensor_id] = counts.get(r.sensor_id, 0) + 1
        print("per-sensor readings:")
        from .catalog import CATALOG
        for sid in sorted(counts):
            spec = CATALOG.get(sid)
            name = spec.slug if spec else f"sensor_{sid}"
            print(f"  {sid:3d} {name:28s} {counts[sid]}")
    return 0


def cmd_serve(args) -> int:
    config = _load_config(args.config)
    data_dir = args.data_dir or os.environ.get("ILOG_DATA_DIR", "./ilog-data")
    mac_key = os.environ.get("ILOG_MAC_KEY", "").encode() or None
    supervisor = os.environ.get("ILOG_SUPERVISOR_CRED", args.supervisor_cred)
    silence_h = os.environ.get("ILOG_SILENCE_THRESHOLD_H")
    backend = Backend(config, data_dir, mac_key=mac_key, supervisor_cred=supervisor,
                      silence_threshold_h=float(silence_h) if silence_h else None)
    host, _, port = args.addr.partition(":")
    server = ServerThread(backend, host or "127.0.0.1", int(port or "8080"),
                          ui_dir=args.ui)
    with server:
        print(f"ilog backend listening on {server.url} (data: {data_dir})", flush=True)
        try:
            server.thread.join()
        except KeyboardInterrupt:
            pass
    backend.close()
    return 0


def cmd_simulate(args) -> int:
    config = _load_config(args.config)
    if args.reduced_rates:
        config = calibration_config(config)
    if args.fleet == "calibration":
        fleet = calibration_fleet()
    else:
        fleet = parse_fleet_file(Path(args.fleet).read_text(), config)
    if not fleet:
        print("fleet file defines no profiles", file=sys.stderr)
        return 2

    transport = backend = None
    if args.server:
        transport = HttpTransport(args.server)
    report, backend = run_fleet(
        config, fleet, args.seed,
        transport=transport,
        data_dir=None if args.server else (args.data_dir or "./ilog-data"),
        tick_len_ms=int(args.tick_seconds * 1000),
        rate_scale=args.rate_scale,
        duplicate_uploads=args.duplicate_uploads,
        sleep_scale=args.faster_than_real,
        progress=lambda i, n: print(f"  tick {i}/{n}", flush=True) if args.verbose else None,
    )
    if report is not None:
        print(json.dumps(report.to_json(), indent=2))
        if args.report_out:
            Path(args.report_out).mkdir(parents=True, exist_ok=True)
            (Path(args.report_out) / "fleet_report.json").write_text(
                json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")
    else:
        print("fleet run complete; reports live on the server side", flush=True)
    if backend is not None:
        backend.close()
    return 0


def cmd_export(args) -> int:
    config = _load_config(args.config)
    backend = Backend(config, args.data_dir)
    manifest = export_tables(backend.store, backend.diary, args.ts_from, args.ts_to,
                             args.out)
    print(json.dumps(manifest.to_json(), indent=2))
    backend.close()
    return 0


def cmd_report(args) -> int:
    config = _load_config(args.study)
    backend = Backend(config, args.data_dir)
    report = compliance_report(backend.store, backend.diary, config)
    write_report(report, args.out)
    volume = volume_report(backend.store, config, config.start_ms, config.end_ms)
    (Path(args.out) / "volume.json").write_text(json.dumps(volume, indent=2) + "\n")
    print(f"report written to {args.out}")
    backend.close()
    return 0


def cmd_store_verify(args) -> int:
    report = verify_store(args.root)
    print(json.dumps(report, indent=2))
    return 1 if report["corrupt"] else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ilogctl",
                                     description="smart-survey platform control tool")
    parser.add_argument("--version", action="version", version=f"ilogctl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="print a chunk file's header and contents")
    p.add_argument("chunk_file")
    p.add_argument("--key", help="device key (hex) to decode per-sensor counts")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("serve", help="run the ingest backend")
    p.add_argument("--config", required=True)
    p.add_argument("--addr", default="127.0.0.1:8080")
    p.add_argument("--data-dir")
    p.add_argument("--supervisor-cred", default="supervisor-secret")
    p.add_argument("--ui", help="serve the dashboard build from this directory at /ui")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("simulate", help="run a device fleet against a backend")
    p.add_argument("--config", required=True)
    p.add_argument("--fleet", required=True,
                   help="fleet file, or 'calibration' for the shipped 95-profile fleet")
    p.add_argument("--seed", type=int, default=2019)
    p.add_argument("--server", help="backend URL; omitted = in-process backend")
    p.add_argument("--data-dir")
    p.add_argument("--tick-seconds", type=float, default=60.0)
    p.add_argument("--rate-scale", type=float, default=1.0,
                   help="multiplier on fixed-rate sensor frequencies")
    p.add_argument("--reduced-rates", action="store_true",
                   help="use the reduced calibration sensor set")
    p.add_argument("--duplicate-uploads", action="store_true")
    p.add_argument("--faster-than-real", type=float, default=0.0,
                   help="pace the run at this multiple of real time (0 = flat out)")
    p.add_argument("--report-out")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("export", help="export stored data to columnar tables")
    p.add_argument("--config", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--from", dest="ts_from", type=int, required=True)
    p.add_argument("--to", dest="ts_to", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("report", help="write the study compliance report")
    p.add_argument("--study", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("store-verify", help="check segment checksums under a store root")
    p.add_argument("root")
    p.set_defaults(func=cmd_store_verify)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
