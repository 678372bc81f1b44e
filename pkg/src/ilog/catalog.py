"""Sensor catalog and answer codebooks.

The catalog is the single source of truth for what a device can record:
every sensor has a stable integer code, a sampling mode (fixed rate,
on-change events, or polled), and a fixed value shape. Codebooks map the
diary answer categories to stable integer codes so collected answers are
comparable across studies and languages.

Catalog codes are append-only: new sensors get new codes, existing codes
are never renumbered.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class SensorKind(Enum):
    HARDWARE = "hardware"
    SOFTWARE = "software"


class Sampling(Enum):
    FIXED_RATE = "fixed_rate"
    ON_CHANGE = "on_change"
    POLLED = "polled"


class ValueKind(Enum):
    NUMERIC = "numeric"
    TEXT = "text"
    BOOLEAN = "boolean"


class NotDeterministic(Exception):
    """Raised when asked for a closed-form reading count of an event sensor."""


@dataclass(frozen=True)
class SensorSpec:
    sensor_id: int
    name: str
    kind: SensorKind
    sampling: Sampling
    value_arity: int
    value_kind: ValueKind
    hz: float | None = None          # fixed_rate only
    period_s: int | None = None      # polled only

    def __post_init__(self) -> None:
        if self.value_arity < 1:
            raise ValueError(f"{self.name}: value_arity must be >= 1")
        if self.sampling is Sampling.FIXED_RATE:
            if self.hz is None or self.hz <= 0:
                raise ValueError(f"{self.name}: fixed_rate sensor needs hz > 0")
        elif self.sampling is Sampling.POLLED:
            if self.period_s is None or self.period_s < 1:
                raise ValueError(f"{self.name}: polled sensor needs period_s >= 1")

    @property
    def slug(self) -> str:
        """Config-file key for this sensor (lowercase, underscores)."""
        return self.name.lower().replace(" ", "_").replace("(", "").replace(")", "")

    def with_rate(self, hz: float | None = None, period_s: int | None = None) -> "SensorSpec":
        """Copy of this spec with an overridden sampling rate."""
        if self.sampling is Sampling.FIXED_RATE and hz is not None:
            return SensorSpec(self.sensor_id, self.name, self.kind, self.sampling,
                              self.value_arity, self.value_kind, hz=hz)
        if self.sampling is Sampling.POLLED and period_s is not None:
            return SensorSpec(self.sensor_id, self.name, self.kind, self.sampling,
                              self.value_arity, self.value_kind, period_s=period_s)
        raise ValueError(f"{self.name}: rate override does not match sampling mode")


def _hw_rate(sensor_id: int, name: str, arity: int = 3) -> SensorSpec:
    return SensorSpec(sensor_id, name, SensorKind.HARDWARE, Sampling.FIXED_RATE,
                      arity, ValueKind.NUMERIC, hz=20.0)


def _sw_event(sensor_id: int, name: str, value_kind: ValueKind, arity: int = 1) -> SensorSpec:
    return SensorSpec(sensor_id, name, SensorKind.SOFTWARE, Sampling.ON_CHANGE, arity, value_kind)


def _polled(sensor_id: int, name: str, period_s: int, value_kind: ValueKind,
            arity: int = 1, kind: SensorKind = SensorKind.SOFTWARE) -> SensorSpec:
    return SensorSpec(sensor_id, name, kind, Sampling.POLLED, arity, value_kind, period_s=period_s)


# Default catalog. Ten inertial/environment sensors at 20 Hz, software event
# sources as on-change, scan-style sources polled once a minute, the running
# application every five seconds. Touch events and cellular info are event
# sources with no documented default rate; they are on_change here.
DEFAULT_SENSORS: tuple[SensorSpec, ...] = (
    _hw_rate(1, "Acceleration"),
    _hw_rate(2, "Linear Acceleration"),
    _hw_rate(3, "Gyroscope"),
    _hw_rate(4, "Gravity"),
    _hw_rate(5, "Rotation Vector"),
    _hw_rate(6, "Magnetic Field"),
    _hw_rate(7, "Orientation"),
    _hw_rate(8, "Temperature", arity=1),
    _hw_rate(9, "Atmospheric Pressure", arity=1),
    _hw_rate(10, "Humidity", arity=1),
    _sw_event(11, "Screen Status", ValueKind.BOOLEAN),
    _sw_event(12, "Flight Mode", ValueKind.BOOLEAN),
    _sw_event(13, "Audio Mode", ValueKind.TEXT),
    _sw_event(14, "Battery Charge", ValueKind.BOOLEAN),
    _sw_event(15, "Battery Level", ValueKind.NUMERIC),
    _sw_event(16, "Doze Modality", ValueKind.BOOLEAN),
    _sw_event(17, "Headset", ValueKind.BOOLEAN),
    _sw_event(18, "Music Playback", ValueKind.BOOLEAN),
    _sw_event(19, "WIFI Network Connected", ValueKind.TEXT),
    SensorSpec(20, "Proximity", SensorKind.HARDWARE, Sampling.ON_CHANGE, 1, ValueKind.NUMERIC),
    _sw_event(21, "Incoming Calls", ValueKind.TEXT),
    _sw_event(22, "Outgoing Calls", ValueKind.TEXT),
    _sw_event(23, "Incoming Sms", ValueKind.TEXT),
    _sw_event(24, "Outgoing Sms", ValueKind.TEXT),
    _sw_event(25, "Notifications", ValueKind.TEXT),
    _polled(26, "WIFI Networks Available", 60, ValueKind.NUMERIC),
    _polled(27, "Bluetooth Device Available", 60, ValueKind.NUMERIC),
    _polled(28, "Bluetooth LE Available", 60, ValueKind.NUMERIC),
    _polled(29, "Location", 60, ValueKind.NUMERIC, arity=3, kind=SensorKind.HARDWARE),
    _polled(30, "Running Application", 5, ValueKind.TEXT),
    _sw_event(31, "Touch Event", ValueKind.BOOLEAN),
    _sw_event(32, "Cellular Network Info", ValueKind.TEXT),
)


@dataclass(frozen=True)
class SensorCatalog:
    entries: tuple[SensorSpec, ...] = DEFAULT_SENSORS
    _by_id: dict[int, SensorSpec] = field(default_factory=dict, repr=False, compare=False)
    _by_slug: dict[str, SensorSpec] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        for spec in self.entries:
            if spec.sensor_id in self._by_id:
                raise ValueError(f"duplicate sensor_id {spec.sensor_id}")
            self._by_id[spec.sensor_id] = spec
            self._by_slug[spec.slug] = spec

    def by_id(self, sensor_id: int) -> SensorSpec:
        return self._by_id[sensor_id]

    def get(self, sensor_id: int) -> SensorSpec | None:
        return self._by_id.get(sensor_id)

    def by_slug(self, slug: str) -> SensorSpec | None:
        return self._by_slug.get(slug.lower())

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)


CATALOG = SensorCatalog()


def expected_daily_readings(spec: SensorSpec) -> int:
    """Readings per 24 h for a deterministic (fixed-rate or polled) sensor."""
    if spec.sampling is Sampling.FIXED_RATE:
        return int(round(spec.hz * 86400))
    if spec.sampling is Sampling.POLLED:
        return 86400 // spec.period_s
    raise NotDeterministic(f"{spec.name} is on_change; it has no closed-form daily count")


# ---------------------------------------------------------------------------
# Codebooks


class CodebookId(Enum):
    ACTIVITY = "activity"
    LOCATION = "location"
    TRANSPORT = "transport"
    WITH_WHOM = "with_whom"
    MOOD = "mood"


@dataclass(frozen=True)
class Codebook:
    codebook_id: CodebookId
    entries: tuple[tuple[int, str], ...]
    allows_open_text: bool

    def __post_init__(self) -> None:
        codes = [code for code, _ in self.entries]
        if codes != list(range(1, len(codes) + 1)):
            raise ValueError(f"{self.codebook_id.value}: codes must be contiguous from 1")

    def valid_code(self, code: int) -> bool:
        return 1 <= code <= len(self.entries)

    def label(self, code: int) -> str:
        return self.entries[code - 1][1]

    def __len__(self) -> int:
        return len(self.entries)


def _book(cb_id: CodebookId, labels: list[str], open_text: bool) -> Codebook:
    return Codebook(cb_id, tuple((i + 1, lab) for i, lab in enumerate(labels)), open_text)


DEFAULT_CODEBOOKS: dict[CodebookId, Codebook] = {
    CodebookId.ACTIVITY: _book(CodebookId.ACTIVITY, [
        "sleeping", "eating", "personal care", "working", "studying",
        "household care", "shopping", "caring for others", "travelling",
        "sports", "walking", "reading", "watching tv or video",
        "computer and internet", "social life", "hobbies", "volunteering",
        "relaxing", "other activity",
    ], open_text=True),
    CodebookId.LOCATION: _book(CodebookId.LOCATION, [
        "home", "workplace", "school", "restaurant or cafe", "shop",
        "friends home", "relatives home", "outdoors", "gym or sports venue",
        "cultural venue", "in transit", "medical facility", "other place",
    ], open_text=True),
    CodebookId.TRANSPORT: _book(CodebookId.TRANSPORT, [
        "car", "bus", "train", "tram or metro", "bicycle", "on foot",
        "motorbike", "other transport",
    ], open_text=True),
    CodebookId.WITH_WHOM: _book(CodebookId.WITH_WHOM, [
        "nobody", "partner", "children", "parents or relatives", "friends",
        "colleagues", "other people",
    ], open_text=True),
    CodebookId.MOOD: _book(CodebookId.MOOD, [
        "very bad", "bad", "somewhat bad", "neutral", "somewhat good",
        "good", "very good",
    ], open_text=False),
}

# Activity code whose answer makes the transport question applicable.
TRAVEL_ACTIVITY_CODE = 9
assert DEFAULT_CODEBOOKS[CodebookId.ACTIVITY].label(TRAVEL_ACTIVITY_CODE) == "travelling"
