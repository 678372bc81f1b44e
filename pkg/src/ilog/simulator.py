"""Virtual device fleet: the stand-in for the mobile app.

Each device is an independent state machine driven by a per-device RNG
derived from (master seed, profile label), so a fleet run is fully
deterministic. Devices synthesize sensor streams per the catalog
(fixed-rate waveforms, polled samples, Poisson event processes), buffer
readings into sealed chunks, poll the backend for diary tasks, answer them
under a behavioral model, and upload opportunistically.

Connectivity distinguishes hard-offline windows (no traffic at all;
emitted tasks pile up server-side and arrive together on reconnect) from
upload-pause windows (control-channel polls continue but chunk uploads
wait, modeling a device deferring bulk sync to Wi-Fi). A supervisor
force_sync_wifi command overrides an upload pause immediately; a
hard-offline device acts on it at its first poll after reconnecting.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field, replace

import requests

from .catalog import TRAVEL_ACTIVITY_CODE, CodebookId, Sampling, SensorSpec, ValueKind
from .ingest import Backend, command_to_wire, task_from_wire
from .logpack import ReadingBuffer, SensorReading, append_reading, seal_chunk
from .scheduler import DiaryTask, TaskKind
from .study import StudyConfig

MS_PER_DAY = 86_400_000
MS_PER_MIN = 60_000


class WrongKind(Exception):
    pass


class BackendUnavailable(Exception):
    pass


@dataclass(frozen=True)
class BehaviorModel:
    answer_prob: float = 1.0
    reaction_median_s: float = 45.0
    reaction_sigma: float = 0.8
    completion_median_s: float = 25.0
    completion_sigma: float = 0.6
    same_as_previous_prob: float = 0.0
    start_day: int = 0                      # first study day the device collects
    dropout_day: int | None = None          # first study day it no longer collects

    def __post_init__(self) -> None:
        for name in ("answer_prob", "same_as_previous_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be within [0, 1]")
        for name in ("reaction_median_s", "reaction_sigma",
                     "completion_median_s", "completion_sigma"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class ConnectivityModel:
    offline_windows: tuple[tuple[int, int], ...] = ()       # [start_ms, end_ms)
    upload_pause_windows: tuple[tuple[int, int], ...] = ()
    sync_period_s: int = 300

    def __post_init__(self) -> None:
        for windows in (self.offline_windows, self.upload_pause_windows):
            last_end = None
            for start, end in windows:
                if start >= end:
                    raise ValueError("connectivity window must have start < end")
                if last_end is not None and start < last_end:
                    raise ValueError("connectivity windows must be disjoint and ordered")
                last_end = end

    def offline_at(self, t: int) -> bool:
        return any(start <= t < end for start, end in self.offline_windows)

    def upload_paused_at(self, t: int) -> bool:
        return any(start <= t < end for start, end in self.upload_pause_windows)


@dataclass(frozen=True)
class DeviceProfile:
    label: str
    behavior: BehaviorModel = BehaviorModel()
    connectivity: ConnectivityModel = ConnectivityModel()
    enabled_sensors: frozenset[int] | None = None    # None = everything in the config
    active: bool = True


# Default on-change event rates per day; overridable per run. Battery level
# is not a Poisson source: it follows a sawtooth discharging 100 -> 15 over
# the day with a charge event at midnight.
DEFAULT_EVENT_RATES: dict[int, float] = {
    11: 60.0,    # screen status
    12: 2.0,     # flight mode
    13: 6.0,     # audio mode
    14: 4.0,     # battery charge
    16: 30.0,    # doze modality
    17: 4.0,     # headset
    18: 10.0,    # music playback
    19: 12.0,    # wifi network connected
    20: 80.0,    # proximity
    21: 3.0,     # incoming calls
    22: 3.0,     # outgoing calls
    23: 5.0,     # incoming sms
    24: 5.0,     # outgoing sms
    25: 120.0,   # notifications
    31: 200.0,   # touch event
    32: 24.0,    # cellular network info
}

_APPS = ("com.ilog.diary", "com.mail.app", "com.maps.app", "com.chat.app",
         "com.news.app", "com.camera.app")
_AUDIO_MODES = ("normal", "vibrate", "silent")


def _poisson(rng: random.Random, lam: float) -> int:
    if lam <= 0:
        return 0
    # Knuth's method; per-tick rates here are far below 1
    limit = math.exp(-lam)
    n = 0
    p = rng.random()
    while p > limit:
        n += 1
        p *= rng.random()
    return n


def _battery_level(t: int) -> int:
    frac = (t % MS_PER_DAY) / MS_PER_DAY
    return max(15, round(100 - 85 * frac))


def synthesize_on_change(spec: SensorSpec, t0: int, t1: int, rng: random.Random,
                         state: dict, rates: dict[int, float] | None = None) -> list[SensorReading]:
    """Event readings for one on-change sensor over [t0, t1).

    Events arrive as a Poisson process at the sensor's per-day rate; values
    come from small plausible state machines (booleans alternate, audio
    modes cycle, battery level follows its sawtooth).
    """
    if spec.sampling is not Sampling.ON_CHANGE:
        raise WrongKind(f"{spec.name} is not an on_change sensor")
    rates = rates if rates is not None else DEFAULT_EVENT_RATES
    sid = spec.sensor_id
    readings: list[SensorReading] = []
    if sid == 15:  # battery level: emit when the integer level steps
        last = state.get("battery", _battery_level(t0 - 1))
        step = max(1, (t1 - t0) // 4)
        for t in range(t0, t1, step):
            level = _battery_level(t)
            if level != last:
                readings.append(SensorReading(sid, max(t, 1), (float(level),)))
                last = level
        state["battery"] = last
        return readings
    lam = rates.get(sid, 0.0) * (t1 - t0) / MS_PER_DAY
    count = _poisson(rng, lam)
    if not count:
        return []
    times = sorted(t0 + int(rng.random() * (t1 - t0)) for _ in range(count))
    for t in times:
        readings.append(SensorReading(sid, max(t, 1), (_event_value(spec, rng, state),)))
    return readings


def _event_value(spec: SensorSpec, rng: random.Random, state: dict):
    sid = spec.sensor_id
    if spec.value_kind is ValueKind.BOOLEAN:
        flag = not state.get(sid, False)
        state[sid] = flag
        return flag
    if sid == 13:
        idx = (state.get(sid, -1) + 1) % len(_AUDIO_MODES)
        state[sid] = idx
        return _AUDIO_MODES[idx]
    if sid == 19:
        return f"ssid-{rng.randrange(4)}"
    if sid in (21, 22, 23, 24):
        return f"contact-{rng.randrange(16):02d}"
    if sid == 25:
        return _APPS[rng.randrange(len(_APPS))]
    if sid == 32:
        return f"cell-{rng.randrange(9)}"
    if sid == 20:  # proximity toggles near/far
        near = not state.get(sid, False)
        state[sid] = near
        return 0.0 if near else 5.0
    return f"event-{rng.randrange(100)}"


# ---------------------------------------------------------------------------
# Transports

class LocalTransport:
    """Direct calls into a Backend; used by desk-scale simulation runs."""

    def __init__(self, backend: Backend):
        self.backend = backend

    def register(self, study_code, background, contact, tz_offset_min=0) -> dict:
        record, token, key = self.backend.register(study_code, background, contact,
                                                   tz_offset_min)
        return {"token": token, "device_key": key.hex(), "pseudonym": record.pseudonym_id}

    def upload(self, token: str, data: bytes) -> dict:
        receipt = self.backend.receive_chunk(token, data)
        return {"chunk_id": receipt.chunk_id, "status": receipt.status,
                "readings_stored": receipt.readings_stored}

    def fetch(self, token: str, since: int) -> tuple[list[DiaryTask], list[dict]]:
        tasks, commands = self.backend.fetch_tasks(token, since)
        return list(tasks), [command_to_wire(c) for c in commands]

    def submit(self, token: str, items: list[dict]) -> list[dict]:
        return self.backend.submit_answers(token, items)


class HttpTransport:
    """Talks to a live ingest server over the documented wire protocol."""

    def __init__(self, base_url: str, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.session = requests.Session()

    def _check(self, resp) -> dict:
        if resp.status_code >= 400:
            raise BackendUnavailable(f"{resp.status_code}: {resp.text[:200]}")
        return resp.json()

    def register(self, study_code, background, contact, tz_offset_min=0) -> dict:
        return self._check(self.session.post(
            f"{self.base_url}/v1/register", timeout=self.timeout,
            json={"study_code": study_code, "background": background,
                  "contact": contact, "tz_offset_min": tz_offset_min}))

    def upload(self, token: str, data: bytes) -> dict:
        return self._check(self.session.post(
            f"{self.base_url}/v1/chunks", data=data, timeout=self.timeout,
            headers={"Authorization": f"Bearer {token}",
                     "Content-Type": "application/octet-stream"}))

    def fetch(self, token: str, since: int) -> tuple[list[DiaryTask], list[dict]]:
        payload = self._check(self.session.get(
            f"{self.base_url}/v1/tasks", params={"since": since}, timeout=self.timeout,
            headers={"Authorization": f"Bearer {token}"}))
        return [task_from_wire(t) for t in payload["tasks"]], payload["commands"]

    def submit(self, token: str, items: list[dict]) -> list[dict]:
        return self._check(self.session.post(
            f"{self.base_url}/v1/answers", timeout=self.timeout,
            json={"answers": items},
            headers={"Authorization": f"Bearer {token}"}))["results"]


# ---------------------------------------------------------------------------
# Device state machine

def _derive_seed(master_seed: int, label: str) -> int:
    digest = hashlib.blake2b(f"{master_seed}|{label}".encode(), digest_size=8)
    return int.from_bytes(digest.digest(), "big")


@dataclass
class _PendingAnswer:
    due_at: int
    item: dict


class Device:
    """One simulated smartphone."""

    def __init__(self, profile: DeviceProfile, config: StudyConfig, master_seed: int,
                 rate_scale: float = 1.0, event_rates: dict[int, float] | None = None,
                 max_upload_attempts: int = 8):
        self.profile = profile
        self.config = config
        self.rng = random.Random(_derive_seed(master_seed, profile.label))
        self.rate_scale = rate_scale
        self.event_rates = event_rates
        self.max_upload_attempts = max_upload_attempts

        enabled = profile.enabled_sensors
        self.sensors = [spec for sid, spec in sorted(config.sensors_enabled.items())
                        if enabled is None or sid in enabled]
        self._accumulators = {s.sensor_id: 0.0 for s in self.sensors
                              if s.sampling is Sampling.FIXED_RATE}
        self._phases = {s.sensor_id: self.rng.random() * 2 * math.pi for s in self.sensors}
        self._event_state: dict = {}
        self._next_poll = 0

        self.registered = False
        self.token = ""
        self.device_key = b""
        self.pseudonym = ""
        self.since = 0
        self.buffer: ReadingBuffer | None = None
        self.unacked: list[tuple[bytes, int]] = []     # (chunk bytes, attempts)
        self.pending_answers: list[_PendingAnswer] = []
        self.answered_once = False
        self.force_sync = False

        self.generated_readings = 0
        self.uploaded_chunks = 0
        self.duplicate_receipts = 0
        self.injected_telemetry: dict[str, tuple[int, int]] = {}

    # -- lifecycle -----------------------------------------------------------

    def window_ms(self) -> tuple[int, int]:
        """Collection window [start, end) in sim time."""
        b = self.profile.behavior
        start = self.config.start_ms + b.start_day * MS_PER_DAY
        end = self.config.end_ms if b.dropout_day is None else \
            self.config.start_ms + b.dropout_day * MS_PER_DAY
        return start, min(end, self.config.end_ms)

    def collecting_at(self, t: int) -> bool:
        if not self.profile.active:
            return False
        start, end = self.window_ms()
        return start <= t < end

    def register(self, transport) -> None:
        background = {
            "gender": self.rng.choice(("female", "male", "nonbinary")),
            "occupation": self.rng.choice(("analyst", "teacher", "engineer",
                                           "student", "researcher")),
            "activity_status": self.rng.choice(("employed", "student", "self-employed")),
            "employer": f"org-{self.rng.randrange(20):02d}",
            "place_of_employment": self.rng.choice(("north office", "south office",
                                                    "campus", "remote")),
        }
        reply = transport.register(self.config.study_code, background,
                                   f"sim-{self.profile.label}@example.org")
        self.token = reply["token"]
        self.device_key = bytes.fromhex(reply["device_key"])
        self.pseudonym = reply["pseudonym"]
        self.buffer = ReadingBuffer(self.pseudonym)
        start, _ = self.window_ms()
        self.since = start
        self._next_poll = start
        self.registered = True

    # -- sensing ---------------------------------------------------------------

    def _waveform(self, spec: SensorSpec, t: int) -> tuple:
        phase = self._phases[spec.sensor_id]
        base = 2.0 * spec.sensor_id
        slow = math.sin(2 * math.pi * (t % 3_600_000) / 3_600_000 + phase)
        values = []
        for j in range(spec.value_arity):
            values.append(base + j + slow + 0.05 * self.rng.gauss(0.0, 1.0))
        return tuple(values)

    def _polled_value(self, spec: SensorSpec, t: int) -> tuple:
        sid = spec.sensor_id
        if sid == 29:  # location: slow walk around a per-device anchor
            anchor = self._phases[sid]
            lat = 46.0 + anchor / 10 + 0.001 * math.sin(t / MS_PER_DAY * 2 * math.pi)
            lon = 11.0 + anchor / 10 + 0.001 * math.cos(t / MS_PER_DAY * 2 * math.pi)
            return (lat, lon, 10.0 + self.rng.random())
        if sid == 30:
            return (_APPS[int(t // 5000) % len(_APPS)],)
        if spec.value_kind is ValueKind.NUMERIC:
            return tuple(float(self.rng.randrange(9)) for _ in range(spec.value_arity))
        return tuple(f"poll-{self.rng.randrange(9)}" for _ in range(spec.value_arity))

    def sense(self, t: int, tick_len_ms: int) -> list[SensorReading]:
        readings: list[SensorReading] = []
        for spec in self.sensors:
            if spec.sampling is Sampling.FIXED_RATE:
                acc = self._accumulators[spec.sensor_id]
                acc += spec.hz * self.rate_scale * (tick_len_ms / 1000.0)
                n = int(acc)
                self._accumulators[spec.sensor_id] = acc - n
                if n:
                    step = tick_len_ms / n
                    for i in range(n):
                        ts = t + int(i * step)
                        readings.append(SensorReading(spec.sensor_id, max(ts, 1),
                                                      self._waveform(spec, ts)))
            elif spec.sampling is Sampling.POLLED:
                period_ms = spec.period_s * 1000
                first = ((t + period_ms - 1) // period_ms) * period_ms
                for ts in range(first, t + tick_len_ms, period_ms):
                    readings.append(SensorReading(spec.sensor_id, max(ts, 1),
                                                  self._polled_value(spec, ts)))
            else:
                readings.extend(synthesize_on_change(
                    spec, t, t + tick_len_ms, self.rng, self._event_state,
                    self.event_rates))
        return readings

    # -- diary behavior ----------------------------------------------------------

    def _compose_answers(self, task: DiaryTask) -> list:
        books = self.config.codebooks
        items = []
        if task.kind is TaskKind.MOOD_PROMPT:
            code = self.rng.randint(1, len(books[CodebookId.MOOD]))
            return [[CodebookId.MOOD.value, code, None]]
        activity = self.rng.randint(1, len(books[CodebookId.ACTIVITY]))
        items.append([CodebookId.ACTIVITY.value, activity, None])
        items.append([CodebookId.LOCATION.value,
                      self.rng.randint(1, len(books[CodebookId.LOCATION])), None])
        if activity == TRAVEL_ACTIVITY_CODE:
            items.append([CodebookId.TRANSPORT.value,
                          self.rng.randint(1, len(books[CodebookId.TRANSPORT])), None])
        items.append([CodebookId.WITH_WHOM.value,
                      self.rng.randint(1, len(books[CodebookId.WITH_WHOM])), None])
        for cb_id, _ in task.questions:
            if cb_id is CodebookId.MOOD:
                items.append([CodebookId.MOOD.value,
                              self.rng.randint(1, len(books[CodebookId.MOOD])), None])
        return items

    def _decide_answer(self, task: DiaryTask, notified_at: int, delivered_offline: bool) -> None:
        b = self.profile.behavior
        if self.rng.random() >= b.answer_prob:
            return
        reaction_ms = int(1000 * b.reaction_median_s
                          * math.exp(b.reaction_sigma * self.rng.gauss(0.0, 1.0)))
        completion_ms = int(1000 * b.completion_median_s
                            * math.exp(b.completion_sigma * self.rng.gauss(0.0, 1.0)))
        start = notified_at + reaction_ms
        end = start + completion_ms
        same_as_prev = (task.kind is TaskKind.EPISODE and self.answered_once
                        and self.rng.random() < b.same_as_previous_prob)
        item = {
            "task_id": task.task_id,
            "answers": [] if same_as_prev else self._compose_answers(task),
            "answered_at_start": start,
            "answered_at_end": end,
            "same_as_previous": same_as_prev,
            "notified_at": notified_at,
            "delivered_offline": delivered_offline,
        }
        self.injected_telemetry[task.task_id] = (reaction_ms, completion_ms)
        self.pending_answers.append(_PendingAnswer(end, item))
        if task.kind is TaskKind.EPISODE:
            self.answered_once = True

    # -- sync ------------------------------------------------------------------

    def _upload_all(self, transport, duplicate_uploads: bool = False) -> None:
        still: list[tuple[bytes, int]] = []
        for data, attempts in self.unacked:
            sends = 2 if duplicate_uploads else 1
            try:
                for _ in range(sends):
                    receipt = transport.upload(self.token, data)
                    if receipt["status"] == "duplicate":
                        self.duplicate_receipts += 1
                self.uploaded_chunks += 1
            except BackendUnavailable:
                if attempts + 1 >= self.max_upload_attempts:
                    raise
                still.append((data, attempts + 1))
        self.unacked = still

    def _seal_buffer(self) -> None:
        if self.buffer and self.buffer.pending:
            chunk = seal_chunk(self.buffer, self.device_key)
            self.unacked.append((chunk.to_bytes(), 0))

    def step(self, transport, t: int, tick_len_ms: int,
             duplicate_uploads: bool = False) -> None:
        """Advance this device across sim time [t, t + tick_len_ms)."""
        if not self.registered or not self.collecting_at(t):
            return
        conn = self.profile.connectivity
        readings = self.sense(t, tick_len_ms)
        self.generated_readings += len(readings)
        for reading in readings:
            if append_reading(self.buffer, reading, self.config.chunk_target_bytes):
                self._seal_buffer()

        if conn.offline_at(t):
            return
        if t >= self._next_poll:
            self._next_poll = t + conn.sync_period_s * 1000
            tasks, commands = transport.fetch(self.token, self.since)
            for cmd in commands:
                if cmd["kind"] == "force_sync_wifi":
                    self.force_sync = True
            for task in tasks:
                offline = any(s <= task.emit_at < e for s, e in conn.offline_windows)
                self._decide_answer(task, notified_at=t, delivered_offline=offline)
                self.since = max(self.since, task.emit_at)
            due = [p for p in self.pending_answers if p.due_at <= t]
            if due:
                transport.submit(self.token, [p.item for p in due])
                self.pending_answers = [p for p in self.pending_answers if p.due_at > t]
        if self.force_sync or not conn.upload_paused_at(t):
            if self.force_sync:
                self._seal_buffer()
            self._upload_all(transport, duplicate_uploads)
            self.force_sync = False

    def drain(self, transport, t: int, duplicate_uploads: bool = False) -> None:
        """End-of-collection sweep at sim time t: one final task poll (the
        last episode of the window emits exactly at its end), then seal and
        upload everything buffered and submit outstanding answers."""
        if not self.registered:
            return
        tasks, _commands = transport.fetch(self.token, self.since)
        for task in tasks:
            conn = self.profile.connectivity
            offline = any(s <= task.emit_at < e for s, e in conn.offline_windows)
            self._decide_answer(task, notified_at=t, delivered_offline=offline)
            self.since = max(self.since, task.emit_at)
        if self.pending_answers:
            transport.submit(self.token, [p.item for p in self.pending_answers])
            self.pending_answers = []
        self._seal_buffer()
        while True:
            self._upload_all(transport, duplicate_uploads)
            if not self.unacked:
                break


# ---------------------------------------------------------------------------
# Fleet runner

@dataclass
class FleetRunReport:
    registered: int
    participants_with_data: int
    per_day: list[dict]                 # date, participants_reporting, sensor_hours, diary_entries
    per_sensor_hours: dict[int, int]
    per_participant: dict[str, dict]
    total_readings: int
    total_diary_entries: int
    generated_readings: int
    uploaded_chunks: int
    duplicate_receipts: int
    mean_entries_per_reporting_day: float
    devices: list = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        return {
            "registered": self.registered,
            "participants_with_data": self.participants_with_data,
            "per_day": self.per_day,
            "per_sensor_hours": {str(k): v for k, v in sorted(self.per_sensor_hours.items())},
            "per_participant": {k: self.per_participant[k] for k in sorted(self.per_participant)},
            "total_readings": self.total_readings,
            "total_diary_entries": self.total_diary_entries,
            "generated_readings": self.generated_readings,
            "uploaded_chunks": self.uploaded_chunks,
            "duplicate_receipts": self.duplicate_receipts,
            "mean_entries_per_reporting_day": self.mean_entries_per_reporting_day,
        }


def run_fleet(config: StudyConfig, fleet: list[DeviceProfile], master_seed: int,
              backend: Backend | None = None, transport=None, data_dir=None,
              tick_len_ms: int = 60_000, rate_scale: float = 1.0,
              event_rates: dict[int, float] | None = None,
              duplicate_uploads: bool = False,
              sleep_scale: float = 0.0,
              wrap_transport=None,
              progress=None) -> tuple[FleetRunReport, Backend | None]:
    """Simulate the whole study span for every profile.

    Deterministic given (config, fleet, master_seed). When no transport is
    given, a Backend is created over data_dir with a simulation clock and a
    seeded RNG; wrap_transport may decorate that transport (fault injection,
    recording). sleep_scale > 0 sleeps tick_len_ms / sleep_scale of real
    time per tick (1.0 = real time) for live demonstrations.
    """
    if not fleet:
        raise ValueError("fleet must be nonempty")
    sim_now = {"t": config.start_ms}
    if transport is None:
        if backend is None:
            if data_dir is None:
                raise ValueError("need a backend, transport, or data_dir")
            backend = Backend(config, data_dir, clock=lambda: sim_now["t"],
                              rng=random.Random(_derive_seed(master_seed, "backend")))
        transport = LocalTransport(backend)
        if wrap_transport is not None:
            transport = wrap_transport(transport)

    devices = [Device(p, config, master_seed, rate_scale, event_rates) for p in fleet]
    for device in devices:
        device.register(transport)

    total_ticks = (config.end_ms - config.start_ms) // tick_len_ms
    window_ends = {d.profile.label: d.window_ms()[1] for d in devices if d.profile.active}
    drained: set[str] = set()
    for i in range(total_ticks):
        t = config.start_ms + i * tick_len_ms
        sim_now["t"] = t
        for device in devices:
            label = device.profile.label
            if label in window_ends and label not in drained and t >= window_ends[label]:
                device.drain(transport, t, duplicate_uploads)
                drained.add(label)
            device.step(transport, t, tick_len_ms, duplicate_uploads)
        if sleep_scale > 0:
            import time
            time.sleep(tick_len_ms / 1000.0 / sleep_scale)
        if progress and i % 1440 == 0:
            progress(i, total_ticks)
    sim_now["t"] = config.end_ms
    for device in devices:
        if device.profile.active and device.profile.label not in drained:
            device.drain(transport, config.end_ms, duplicate_uploads)
    if backend is not None:
        backend.finalize_study()
        report = build_report(config, devices, backend)
    else:
        report = None
    return report, backend


def build_report(config: StudyConfig, devices: list[Device], backend: Backend) -> FleetRunReport:
    from .export import compliance_report
    comp = compliance_report(backend.store, backend.diary, config)
    per_participant = {}
    for device in devices:
        if not device.registered:
            continue
        per_participant[device.pseudonym] = {
            "label": device.profile.label,
            "generated": device.generated_readings,
            "stored": backend.store.total_readings(device.pseudonym),
            "chunks": device.uploaded_chunks,
            "entries": backend.diary.count(device.pseudonym),
        }
    reporting_days = sum(d["participants_reporting"] for d in comp.per_day)
    total_entries = comp.total_diary_entries
    return FleetRunReport(
        devices=list(devices),
        registered=len(devices),
        participants_with_data=len(backend.store.pseudonyms()),
        per_day=comp.per_day,
        per_sensor_hours=comp.per_sensor_hours,
        per_participant=per_participant,
        total_readings=backend.store.total_readings(),
        total_diary_entries=total_entries,
        generated_readings=sum(d.generated_readings for d in devices),
        uploaded_chunks=sum(d.uploaded_chunks for d in devices),
        duplicate_receipts=sum(d.duplicate_receipts for d in devices),
        mean_entries_per_reporting_day=(total_entries / reporting_days
                                        if reporting_days else 0.0),
    )


# ---------------------------------------------------------------------------
# Calibration fleet: reproduces the registered-vs-reporting funnel with a
# configured join/dropout staircase so daily reporting declines 52 -> 39
# across a 14-day study, 29 of 95 registrants never activating.

CALIBRATION_ANSWER_PROB = 0.54


def calibration_fleet(size: int = 95, never_active: int = 29,
                      answer_prob: float = CALIBRATION_ANSWER_PROB,
                      sensors: frozenset[int] = frozenset({1, 11, 15, 25, 29}),
                      sync_period_s: int = 300) -> list[DeviceProfile]:
    windows: list[tuple[int, int]] = [(0, 13)] * 39
    windows += [(d, d) for d in range(13)]
    windows += [(0, 3), (4, 7), (8, 11)]
    windows += [(0, e) for e in range(10, -1, -1)]
    active_count = size - never_active
    if active_count != len(windows):
        raise ValueError(f"calibration fleet expects {len(windows)} active profiles")
    profiles: list[DeviceProfile] = []
    conn = ConnectivityModel(sync_period_s=sync_period_s)
    for i in range(never_active):
        profiles.append(DeviceProfile(label=f"p{i:03d}", active=False, connectivity=conn))
    for j, (start_day, end_day) in enumerate(windows):
        profiles.append(DeviceProfile(
            label=f"p{never_active + j:03d}",
            behavior=BehaviorModel(answer_prob=answer_prob, start_day=start_day,
                                   dropout_day=end_day + 1,
                                   same_as_previous_prob=0.1),
            connectivity=conn,
            enabled_sensors=sensors,
        ))
    return profiles


def calibration_config(base: StudyConfig) -> StudyConfig:
    """Reduced-rate sensor set for desk-scale runs; counts scale with
    rate_scale passed to run_fleet (documented in the README)."""
    keep = {1, 11, 15, 25, 29}
    sensors = {sid: spec for sid, spec in base.sensors_enabled.items() if sid in keep}
    sensors[29] = sensors[29].with_rate(period_s=600)
    return replace(base, sensors_enabled=sensors, chunk_target_bytes=64 * 1024)
