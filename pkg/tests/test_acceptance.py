"""Acceptance suite: one test per criterion, each printing a pass line.

Run with `pytest tests/test_acceptance.py -v -s`. The fleet calibration
uses a 1-minute simulation tick with fixed-rate sensors scaled by 1/1200
(20 Hz -> one reading per minute) over the reduced calibration sensor set;
count assertions scale accordingly. The volume criterion runs a separate
full-rate 10-minute device instead.
"""

import random
import time
from pathlib import Path

import pytest
import requests

from ilog.catalog import CATALOG, ValueKind
from ilog.ingest import Backend
from ilog.logpack import (
    AuthFailure,
    ReadingBuffer,
    SensorReading,
    append_reading,
    chunk_from_bytes,
    open_chunk,
    seal_chunk,
)
from ilog.scheduler import DiaryAnswer, TaskKind, generate_timeline, queue_for
from ilog.catalog import CodebookId
from ilog.export import export_tables
from ilog.simulator import (
    BehaviorModel,
    Device,
    DeviceProfile,
    calibration_config,
    calibration_fleet,
    run_fleet,
)
from ilog.server import ServerThread
from ilog.store import SeriesStore
from ilog.study import expected_daily_volume, load_preset, load_study_config

KEY = bytes(range(32))
PSEUDONYM = "5f" * 16
START_MS = 1_548_633_600_000  # 2019-01-28T00:00Z


def ok(line: str) -> None:
    print(f"PASS: {line}")


# -- criterion: codec round-trip + exhaustive tamper ------------------------

def test_codec_round_trip_and_tamper():
    t0 = time.time()
    rng = random.Random(20190128)
    readings = []
    specs = CATALOG.entries
    for i in range(100_000):
        spec = specs[rng.randrange(len(specs))]
        ts = rng.randrange(1, 14 * 86_400_000)
        if spec.value_kind is ValueKind.NUMERIC:
            values = tuple(rng.uniform(-50, 50) for _ in range(spec.value_arity))
        elif spec.value_kind is ValueKind.BOOLEAN:
            values = tuple(rng.random() < 0.5 for _ in range(spec.value_arity))
        else:
            values = tuple(f"t{rng.randrange(10_000)}" for _ in range(spec.value_arity))
        readings.append(SensorReading(spec.sensor_id, ts, values))

    buf = ReadingBuffer(PSEUDONYM)
    for r in readings:
        append_reading(buf, r, 1 << 34)
    chunk = seal_chunk(buf, KEY)
    assert open_chunk(chunk, KEY) == sorted(readings,
                                            key=lambda r: (r.ts_ms, r.sensor_id))

    small = ReadingBuffer(PSEUDONYM)
    for i in range(12):
        append_reading(small, SensorReading(1, 1000 + i, (1.0, 2.0, 3.0)), 1 << 30)
    tiny = seal_chunk(small, KEY)
    raw = tiny.to_bytes()
    assert len(raw) <= 1024
    for byte_pos in range(len(raw)):
        for bit in range(8):
            mutated = bytearray(raw)
            mutated[byte_pos] ^= 1 << bit
            with pytest.raises(AuthFailure):
                open_chunk(chunk_from_bytes(bytes(mutated)), KEY)
    elapsed = time.time() - t0
    assert elapsed < 60.0
    ok(f"codec round-trip of 100000 readings exact; all {len(raw) * 8} bit flips "
       f"rejected with AuthFailure; {elapsed:.1f}s < 60s")


# -- criterion: volume accounting -------------------------------------------

def test_volume_accounting():
    cfg = load_preset("hackathon2019")
    daily = expected_daily_volume(cfg, 32)
    assert 400_000_000 <= daily <= 600_000_000

    device = Device(DeviceProfile(label="fullrate"), cfg, master_seed=7,
                    rate_scale=1.0)
    count = 0
    for i in range(10):
        count += len(device.sense(START_MS + i * 60_000, 60_000))
    scaled = count * 32 * 144
    error = abs(scaled - daily) / daily
    assert error < 0.01
    ok(f"expected_daily_volume = {daily / 1e6:.1f} MB in [400, 600]; 10-min "
       f"full-rate device x144 within {error * 100:.3f}% of formula")


# -- criterion: scheduler counts ---------------------------------------------

def test_scheduler_counts():
    hack = generate_timeline(load_preset("hackathon2019"))
    episodes = [t for t in hack if t.kind is TaskKind.EPISODE]
    moods = [t for t in hack if t.kind is TaskKind.MOOD_PROMPT]
    assert len(episodes) == 336
    assert len(moods) == 28

    hetus = load_preset("hetus")
    per_day = [t for t in generate_timeline(hetus)
               if t.kind is TaskKind.EPISODE and
               t.episode_start < hetus.start_ms + 86_400_000]
    assert len(per_day) == 144
    ok("hackathon timeline = 336 episode + 28 mood tasks exactly; "
       "HETUS = 144 episodes/day exactly")


# -- criterion: backlog law ----------------------------------------------------

def test_backlog_law():
    cfg = load_preset("hackathon2019")
    queue = queue_for(cfg)
    timeline = generate_timeline(cfg)
    rng = random.Random(8)
    pos = 0
    events = 0
    max_pending = 0
    while events < 10_000:
        op = rng.random()
        if op < 0.5 and pos < len(timeline):
            queue.enqueue(timeline[pos])
            pos += 1
        elif op < 0.8 and queue.pending:
            task = rng.choice(queue.pending)
            answer = DiaryAnswer(task.task_id, ((CodebookId.MOOD, 4, None),),
                                 task.emit_at + 1, task.emit_at + 2)
            queue.accept_answer(task.task_id, answer, task.emit_at)
        elif pos:
            queue.deliver_pending(timeline[pos - 1].emit_at)
        events += 1
        max_pending = max(max_pending, len(queue.pending))
        assert len(queue.pending) <= 8

    fresh = queue_for(cfg)
    hourly = [t for t in generate_timeline(cfg) if t.kind is TaskKind.EPISODE]
    for task in hourly[:12]:
        fresh.enqueue(task)
    delivered = fresh.deliver_pending(hourly[11].emit_at)
    assert len(delivered) == 8
    assert len(fresh.expired) == 4
    ok(f"10000 random events kept |pending| <= 8 (max seen {max_pending}); "
       "12h offline delivered exactly 8 and expired 4")


# -- criterion: exactly-once ingest -------------------------------------------

def test_exactly_once_ingest(tmp_path):
    doc = """
[study]
code = 2019
start = 2019-01-28
end = 2019-01-29
diary_resolution_min = 60
backlog_cap = 8
mood_prompts = 08:00, 20:00
chunk_target_bytes = 8192

[sensors]
acceleration = on
screen_status = on
notifications = on
"""
    cfg = load_study_config(doc)
    fleet = [DeviceProfile(label=f"d{i}", behavior=BehaviorModel(answer_prob=0.5),
                           enabled_sensors=frozenset({1, 11, 25}))
             for i in range(6)]
    report, backend = run_fleet(cfg, fleet, 1001, data_dir=tmp_path / "dup",
                                rate_scale=1 / 1200, duplicate_uploads=True)
    delta = report.total_readings - report.generated_readings
    assert delta == 0
    assert report.duplicate_receipts == report.uploaded_chunks > 0
    backend.close()
    ok(f"every chunk uploaded twice: {report.uploaded_chunks} chunks, "
       f"{report.total_readings} readings stored, reconciliation delta = {delta}")


# -- criterion: store/oracle equivalence + crash recovery ----------------------

def test_store_oracle_equivalence(tmp_path):
    rng = random.Random(31337)
    sensors = (1, 11, 25, 29)
    readings = []
    for _ in range(100_000):
        sid = sensors[rng.randrange(4)]
        ts = rng.randrange(1, 5 * 86_400_000)
        spec = CATALOG.by_id(sid)
        if spec.value_kind is ValueKind.NUMERIC:
            values = tuple(float(rng.randrange(100)) for _ in range(spec.value_arity))
        elif spec.value_kind is ValueKind.BOOLEAN:
            values = (rng.random() < 0.5,)
        else:
            values = (f"n{rng.randrange(50)}",)
        readings.append(SensorReading(sid, ts, values))

    store = SeriesStore(tmp_path / "data", flush_readings=30_000)
    for i in range(0, len(readings), 5000):
        store.write_batch(readings[i:i + 5000], PSEUDONYM)

    keyed = [(r.ts_ms, i, r) for i, r in enumerate(readings)]
    keyed.sort(key=lambda e: (e[0], e[1]))
    by_sensor = {}
    for ts, i, r in keyed:
        by_sensor.setdefault(r.sensor_id, []).append(r)

    for q in range(100):
        sid = sensors[rng.randrange(4)]
        t0 = rng.randrange(0, 5 * 86_400_000)
        t1 = min(5 * 86_400_000, t0 + rng.randrange(1, 2 * 86_400_000))
        expected = [r for r in by_sensor[sid] if t0 <= r.ts_ms < t1]
        assert store.query_range(PSEUDONYM, sid, t0, t1) == expected
    store.close()
    ok("100 random range queries over 100000 readings match the linear-scan "
       "oracle exactly")


def test_store_crash_recovery(tmp_path):
    from tests.crash_harness import run_crash_cycles
    acked, cycles = run_crash_cycles(tmp_path, cycles=50, seed=99)
    ok(f"{cycles} induced SIGKILL crashes; all {acked} acknowledged batches "
       "intact after recovery")


# -- criterion: fleet calibration ----------------------------------------------

def test_fleet_calibration(tmp_path):
    t0 = time.time()
    cfg = calibration_config(load_preset("hackathon2019"))
    fleet = calibration_fleet()
    report, backend = run_fleet(cfg, fleet, 2019, data_dir=tmp_path / "fleet",
                                tick_len_ms=60_000, rate_scale=1 / 1200)
    backend.close()
    elapsed = time.time() - t0

    assert report.participants_with_data == 66
    daily = [row["participants_reporting"] for row in report.per_day]
    in_band = sum(1 for d in daily if 39 <= d <= 52)
    assert in_band >= 12
    assert abs(report.total_diary_entries - 8548) <= 854.8
    assert abs(report.mean_entries_per_reporting_day - 15) <= 2
    assert elapsed < 600
    ok(f"95-profile fleet: 66 with data (exact); reporting in [39, 52] on "
       f"{in_band}/14 days; {report.total_diary_entries} diary entries "
       f"(target 8548 +/-10%); mean {report.mean_entries_per_reporting_day:.2f} "
       f"entries/day (target 15 +/-2); runtime {elapsed:.0f}s < 600s")


# -- criterion: privacy invariants ----------------------------------------------

def test_privacy_invariants(tmp_path):
    doc = """
[study]
code = 2019
start = 2019-01-28
end = 2019-01-29
diary_resolution_min = 60
backlog_cap = 8
mood_prompts = 08:00, 20:00

[sensors]
acceleration = on
"""
    cfg = load_study_config(doc)
    clock = {"t": cfg.start_ms}
    backend = Backend(cfg, tmp_path / "srv", supervisor_cred="sup-cred",
                      clock=lambda: clock["t"], rng=random.Random(5))
    contacts = ["alice@example.org", "bob@example.org"]
    sessions = []
    for contact in contacts:
        record, token, key = backend.register("2019", {"gender": "x",
                                                       "occupation": "y"}, contact)
        buf = ReadingBuffer(record.pseudonym_id)
        for i in range(100):
            append_reading(buf, SensorReading(1, cfg.start_ms + 1 + i,
                                              (0.0, 0.0, 0.0)), 1 << 30)
        backend.receive_chunk(token, seal_chunk(buf, key).to_bytes())
        sessions.append((record, token))
    clock["t"] += 2 * 3_600_000
    for record, token in sessions:
        tasks, _ = backend.fetch_tasks(token)
        backend.submit_answers(token, [{
            "task_id": tasks[0].task_id,
            "answers": [["activity", 1, None], ["mood", 4, None]],
            "answered_at_start": clock["t"] + 1000,
            "answered_at_end": clock["t"] + 2000,
            "notified_at": clock["t"],
        }])

    out = tmp_path / "export"
    export_tables(backend.store, backend.diary, cfg.start_ms, cfg.end_ms, out)
    identity_markers = [c.encode() for c in contacts] + [b"contact_ref", b"email"]
    for path in out.iterdir():
        blob = path.read_bytes()
        for needle in identity_markers:
            assert needle not in blob, (path, needle)

    with ServerThread(backend) as server:
        token = sessions[0][1]
        non_admin = [
            requests.get(f"{server.url}/v1/tasks", params={"since": 0},
                         headers={"Authorization": token}, timeout=10).text,
            requests.get(f"{server.url}/v1/supervisor/status",
                         headers={"Authorization": "sup-cred"}, timeout=10).text,
            requests.get(f"{server.url}/v1/supervisor/compliance.csv",
                         headers={"Authorization": "sup-cred"}, timeout=10).text,
        ]
        for text in non_admin:
            for contact in contacts:
                assert contact not in text

        erased, _ = sessions[0]
        resp = requests.delete(f"{server.url}/v1/participants/{erased.pseudonym_id}",
                               headers={"Authorization": "sup-cred"}, timeout=10)
        assert resp.status_code == 200

        needle = erased.pseudonym_id.encode()
        survivors = []
        for path in sorted((tmp_path / "srv").rglob("*")):
            if path.is_file():
                blob = path.read_bytes()
                if needle in blob or needle in blob.hex().encode():
                    survivors.append(path)
        assert survivors == []
        status = requests.get(f"{server.url}/v1/supervisor/status",
                              headers={"Authorization": "sup-cred"}, timeout=10).text
        assert erased.pseudonym_id not in status
    backend.close()
    ok("exports and non-admin API responses free of identity fields; "
       "post-erasure scan of every store surface found zero records")


# -- criterion: telemetry recovery ----------------------------------------------

def test_telemetry_recovered(tmp_path):
    doc = """
[study]
code = 2019
start = 2019-01-28
end = 2019-01-29
diary_resolution_min = 60
backlog_cap = 8
mood_prompts = 08:00, 20:00

[sensors]
acceleration = on
"""
    cfg = load_study_config(doc)
    tick_ms = 60_000
    fleet = [DeviceProfile(label=f"d{i}", behavior=BehaviorModel(answer_prob=1.0),
                           enabled_sensors=frozenset({1}))
             for i in range(20)]
    report, backend = run_fleet(cfg, fleet, 777, data_dir=tmp_path / "tele",
                                tick_len_ms=tick_ms, rate_scale=1 / 1200)
    stored = {(r.pseudonym_id, r.task_id): r.telemetry
              for r in backend.diary.records()}
    backend.close()
    assert len(stored) >= 1000
    checked = 0
    worst = 0
    for device in report.devices:
        for task_id, (reaction, completion) in device.injected_telemetry.items():
            telemetry = stored.get((device.pseudonym, task_id))
            if telemetry is None:
                continue
            worst = max(worst, abs(telemetry.reaction_ms - reaction),
                        abs(telemetry.completion_ms - completion))
            assert abs(telemetry.reaction_ms - reaction) <= tick_ms
            assert abs(telemetry.completion_ms - completion) <= tick_ms
            checked += 1
    assert checked == len(stored)
    ok(f"{checked} answers: stored telemetry matches injected delays "
       f"(worst deviation {worst} ms <= one {tick_ms} ms tick)")
