"""Study configuration: the shared contract between devices and backend.

A study is described by a human-editable INI-style file with a ``[study]``
section, a ``[sensors]`` section enabling catalog sensors (with optional
rate overrides), and optional ``[codebook.*]`` sections replacing the
shipped default codebooks. Two presets ship with the package:
``hetus.study`` (10-minute diary episodes) and ``hackathon2019.study``
(hourly episodes, backlog capped at eight, 14-day span).
"""

from __future__ import annotations

import configparser
import hmac
import importlib.resources
import re
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from enum import Enum

from .catalog import (
    CATALOG,
    Codebook,
    CodebookId,
    DEFAULT_CODEBOOKS,
    Sampling,
    SensorCatalog,
    SensorSpec,
    expected_daily_readings,
)


class ParseError(Exception):
    """The config document is not well-formed."""


class ValidationError(Exception):
    """A config value violates a study invariant; message names the field."""


class ReplyWindowKind(Enum):
    UNLIMITED = "unlimited"
    LIMITED = "limited"


@dataclass(frozen=True)
class ReplyWindow:
    kind: ReplyWindowKind
    minutes: int | None = None

    @property
    def limited(self) -> bool:
        return self.kind is ReplyWindowKind.LIMITED

    def __str__(self) -> str:
        if self.limited:
            return f"limited:{self.minutes}"
        return "unlimited"


UNLIMITED = ReplyWindow(ReplyWindowKind.UNLIMITED)

# Volume accounting charges this much per stored reading: an 8-byte
# timestamp plus up to three 8-byte values.
BYTES_PER_READING = 32


@dataclass(frozen=True)
class StudyConfig:
    study_code: str
    start: date
    end: date
    diary_resolution_min: int
    backlog_cap: int
    reply_window: ReplyWindow
    mood_prompts: tuple[tuple[int, int], ...]        # (hour, minute) local times
    mood_in_episode: bool
    sensors_enabled: dict[int, SensorSpec]           # sensor_id -> effective spec
    sync_period_s: int
    chunk_target_bytes: int
    codebooks: dict[CodebookId, Codebook] = field(default_factory=lambda: dict(DEFAULT_CODEBOOKS))
    name: str = ""
    silence_threshold_h: float = 24.0

    def __post_init__(self) -> None:
        if not self.study_code:
            raise ValidationError("study_code: must be nonempty")
        if self.start > self.end:
            raise ValidationError("start: must not be after end")
        if self.diary_resolution_min < 1 or 1440 % self.diary_resolution_min != 0:
            raise ValidationError("diary_resolution_min: must divide 1440")
        if self.backlog_cap < 1:
            raise ValidationError("backlog_cap: must be >= 1")
        if self.reply_window.limited and (self.reply_window.minutes or 0) < 1:
            raise ValidationError("reply_window: limited window must be >= 1 minute")
        if self.sync_period_s < 1:
            raise ValidationError("sync_period_s: must be >= 1")
        if self.chunk_target_bytes < 1:
            raise ValidationError("chunk_target_bytes: must be >= 1")
        for hh, mm in self.mood_prompts:
            if not (0 <= hh < 24 and 0 <= mm < 60):
                raise ValidationError("mood_prompts: times must be HH:MM within a day")

    @property
    def day_count(self) -> int:
        return (self.end - self.start).days + 1

    @property
    def start_ms(self) -> int:
        return _date_ms(self.start)

    @property
    def end_ms(self) -> int:
        """Exclusive end: midnight after the last study day, UTC."""
        return _date_ms(self.end) + 86_400_000


def _date_ms(d: date) -> int:
    return int(datetime(d.year, d.month, d.day, tzinfo=timezone.utc).timestamp() * 1000)


def verify_study_code(code: str, config: StudyConfig) -> bool:
    """Constant-time comparison of an enrollment code against the study's."""
    return hmac.compare_digest(code.encode(), config.study_code.encode())


def expected_daily_volume(config: StudyConfig, bytes_per_reading: int = BYTES_PER_READING,
                          on_change_events_per_day: float = 0.0) -> int:
    """Estimated bytes per device per 24 h over the enabled sensors.

    Deterministic sensors contribute their closed-form daily counts;
    on_change sensors contribute the given nominal event rate (default 0,
    matching the conservative uncompressed-volume estimate).
    """
    if bytes_per_reading < 1:
        raise ValueError("bytes_per_reading must be positive")
    readings = 0.0
    for spec in config.sensors_enabled.values():
        if spec.sampling is Sampling.ON_CHANGE:
            readings += on_change_events_per_day
        else:
            readings += expected_daily_readings(spec)
    return int(readings * bytes_per_reading)


# ---------------------------------------------------------------------------
# Config file parsing

_TIME_RE = re.compile(r"^(\d{1,2}):(\d{2})$")


def load_study_config(text: str, catalog: SensorCatalog = CATALOG) -> StudyConfig:
    """Parse and validate a study config document.

    Raises ParseError for malformed documents and ValidationError when a
    value violates an invariant (the message names the offending field).
    """
    parser = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",), strict=True)
    parser.optionxform = str  # keep key case; sensor slugs are lowercase anyway
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ParseError(f"malformed study config: {exc}") from exc

    if not parser.has_section("study"):
        raise ParseError("missing [study] section")
    s = parser["study"]

    def need(key: str) -> str:
        if key not in s:
            raise ValidationError(f"{key}: missing required key")
        return s[key].strip()

    def need_int(key: str) -> int:
        raw = need(key)
        try:
            return int(raw)
        except ValueError:
            raise ValidationError(f"{key}: expected an integer, got {raw!r}") from None

    start = _parse_date("start", need("start"))
    end = _parse_date("end", need("end"))
    reply_window = _parse_reply_window(s.get("reply_window", "unlimited").strip())
    mood_prompts = _parse_times("mood_prompts", s.get("mood_prompts", "").strip())
    mood_in_episode = _parse_bool("mood_in_episode", s.get("mood_in_episode", "yes").strip())

    sensors_enabled: dict[int, SensorSpec] = {}
    if parser.has_section("sensors"):
        for key, raw in parser["sensors"].items():
            spec = catalog.by_slug(key)
            if spec is None:
                raise ValidationError(f"sensors.{key}: unknown sensor name")
            resolved = _resolve_sensor(key, spec, raw.strip())
            if resolved is not None:
                sensors_enabled[spec.sensor_id] = resolved

    codebooks = dict(DEFAULT_CODEBOOKS)
    for section in parser.sections():
        if not section.startswith("codebook."):
            continue
        cb_name = section.split(".", 1)[1]
        try:
            cb_id = CodebookId(cb_name)
        except ValueError:
            raise ValidationError(f"{section}: unknown codebook") from None
        codebooks[cb_id] = _parse_codebook(cb_id, parser[section])
    _check_codebooks(codebooks)

    return StudyConfig(
        study_code=need("code"),
        start=start,
        end=end,
        diary_resolution_min=need_int("diary_resolution_min"),
        backlog_cap=need_int("backlog_cap"),
        reply_window=reply_window,
        mood_prompts=mood_prompts,
        mood_in_episode=mood_in_episode,
        sensors_enabled=sensors_enabled,
        sync_period_s=int(s.get("sync_period_s", "300")),
        chunk_target_bytes=int(s.get("chunk_target_bytes", str(1024 * 1024))),
        codebooks=codebooks,
        name=s.get("name", "").strip(),
        silence_threshold_h=float(s.get("silence_threshold_h", "24")),
    )


def load_study_file(path) -> StudyConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return load_study_config(fh.read())


def load_preset(name: str) -> StudyConfig:
    """Load one of the shipped presets ("hetus" or "hackathon2019")."""
    ref = importlib.resources.files("ilog.presets").joinpath(f"{name}.study")
    return load_study_config(ref.read_text(encoding="utf-8"))


def _parse_date(key: str, raw: str) -> date:
    try:
        return date.fromisoformat(raw)
    except ValueError:
        raise ValidationError(f"{key}: expected YYYY-MM-DD, got {raw!r}") from None


def _parse_bool(key: str, raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("yes", "true", "on", "1"):
        return True
    if lowered in ("no", "false", "off", "0"):
        return False
    raise ValidationError(f"{key}: expected yes/no, got {raw!r}")


def _parse_reply_window(raw: str) -> ReplyWindow:
    if raw == "unlimited":
        return UNLIMITED
    if raw.startswith("limited:"):
        try:
            minutes = int(raw.split(":", 1)[1])
        except ValueError:
            raise ValidationError(f"reply_window: bad limited window {raw!r}") from None
        return ReplyWindow(ReplyWindowKind.LIMITED, minutes)
    raise ValidationError(f"reply_window: expected 'unlimited' or 'limited:<minutes>', got {raw!r}")


def _parse_times(key: str, raw: str) -> tuple[tuple[int, int], ...]:
    if not raw:
        return ()
    times = []
    for part in raw.split(","):
        m = _TIME_RE.match(part.strip())
        if not m:
            raise ValidationError(f"{key}: expected HH:MM, got {part.strip()!r}")
        times.append((int(m.group(1)), int(m.group(2))))
    return tuple(times)


def _resolve_sensor(key: str, spec: SensorSpec, raw: str) -> SensorSpec | None:
    """Apply an enable/rate directive: on | off | <hz>hz | every:<seconds>."""
    lowered = raw.lower()
    if lowered in ("off", "no", "disabled"):
        return None
    if lowered in ("on", "default", "yes"):
        return spec
    if lowered.endswith("hz"):
        if spec.sampling is not Sampling.FIXED_RATE:
            raise ValidationError(f"sensors.{key}: hz override only valid for fixed-rate sensors")
        try:
            hz = float(lowered[:-2])
        except ValueError:
            raise ValidationError(f"sensors.{key}: bad rate {raw!r}") from None
        if hz <= 0:
            raise ValidationError(f"sensors.{key}: rate must be > 0")
        return spec.with_rate(hz=hz)
    if lowered.startswith("every:"):
        if spec.sampling is not Sampling.POLLED:
            raise ValidationError(f"sensors.{key}: polling override only valid for polled sensors")
        try:
            period = int(lowered.split(":", 1)[1])
        except ValueError:
            raise ValidationError(f"sensors.{key}: bad period {raw!r}") from None
        if period < 1:
            raise ValidationError(f"sensors.{key}: period must be >= 1 s")
        return spec.with_rate(period_s=period)
    raise ValidationError(f"sensors.{key}: expected on/off, <hz>hz, or every:<seconds>, got {raw!r}")


def _parse_codebook(cb_id: CodebookId, section) -> Codebook:
    open_text = False
    entries: list[tuple[int, str]] = []
    for key, value in section.items():
        if key == "open_text":
            open_text = _parse_bool(f"codebook.{cb_id.value}.open_text", value.strip())
            continue
        try:
            code = int(key)
        except ValueError:
            raise ValidationError(f"codebook.{cb_id.value}: keys must be integer codes") from None
        entries.append((code, value.strip()))
    entries.sort()
    try:
        return Codebook(cb_id, tuple(entries), open_text)
    except ValueError as exc:
        raise ValidationError(f"codebook.{cb_id.value}: {exc}") from None


_REQUIRED_SIZES = {
    CodebookId.ACTIVITY: 19,
    CodebookId.LOCATION: 13,
    CodebookId.TRANSPORT: 8,
    CodebookId.WITH_WHOM: 7,
    CodebookId.MOOD: 7,
}


def _check_codebooks(codebooks: dict[CodebookId, Codebook]) -> None:
    for cb_id, size in _REQUIRED_SIZES.items():
        book = codebooks.get(cb_id)
        if book is None:
            raise ValidationError(f"codebook.{cb_id.value}: missing")
        if len(book) != size:
            raise ValidationError(
                f"codebook.{cb_id.value}: expected {size} entries, got {len(book)}")
    for cb_id in (CodebookId.ACTIVITY, CodebookId.LOCATION,
                  CodebookId.TRANSPORT, CodebookId.WITH_WHOM):
        if not codebooks[cb_id].allows_open_text:
            raise ValidationError(f"codebook.{cb_id.value}: must allow one open-ended category")


# ---------------------------------------------------------------------------
# Participant identity model

class Consent(Enum):
    PENDING = "pending"
    GRANTED = "granted"
    REVOKED = "revoked"


@dataclass
class ParticipantRecord:
    """Logical participant aggregate.

    Physically this is stored split: the pseudonymous half (pseudonym, key,
    consent, background) lives with the collected data; contact details live
    in a separate identity ledger; the only join between the two is a single
    linkage table mapping contact_ref to pseudonym_id.
    """
    pseudonym_id: str                 # 32 hex chars (128-bit)
    contact_ref: str                  # opaque token into the identity ledger
    device_key: bytes                 # 256-bit symmetric key
    consent: Consent
    registered_at: int                # ts_ms
    background: dict[str, str] = field(default_factory=dict)
