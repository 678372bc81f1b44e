"""Backend service: registration, task distribution, chunk ingest, and
supervisor controls.

Identity separation is structural: contact details go to an identity
ledger, pseudonymous collection state to the data side, and the only join
is a single linkage table; no API response except the identity-ledger
admin export ever touches contact data.

Chunk ingest is idempotent at chunk granularity: the chunk_id rides into
the series store's write-ahead log as a dedupe key, so a resent chunk is
acknowledged as a duplicate without a second write even across restarts.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import json
import secrets
from dataclasses import dataclass, field
from pathlib import Path
from threading import RLock

from . import logpack
from .catalog import CodebookId
from .diarystore import DiaryStore
from .logpack import AuthFailure, chunk_from_bytes, open_chunk
from .scheduler import (
    DiaryAnswer,
    DiaryTask,
    InvalidAnswer,
    TaskKind,
    TaskQueue,
    UnknownTask,
    WindowExpired,
    generate_timeline,
    queue_for,
)
from .store import SeriesStore
from .study import Consent, ParticipantRecord, StudyConfig, verify_study_code


class BadStudyCode(Exception):
    pass


class StudyClosed(Exception):
    pass


class PseudonymMismatch(Exception):
    pass


class DecodeError(Exception):
    """Chunk authenticated but its payload would not decode; quarantined."""


class Unauthorized(Exception):
    pass


class UnknownParticipant(Exception):
    pass


@dataclass(frozen=True)
class UploadReceipt:
    chunk_id: str
    status: str                  # "stored" | "duplicate"
    readings_stored: int


@dataclass(frozen=True)
class SyncCommand:
    participant: str
    kind: str                    # "force_sync_wifi"
    issued_at: int
    delivered_at: int | None = None


@dataclass(frozen=True)
class ParticipantStatus:
    pseudonym_id: str
    last_chunk_at: int | None
    last_answer_at: int | None
    chunks_total: int
    readings_total: int
    answers_total: int
    backlog_size: int
    silent: bool
    pending_commands: tuple[str, ...]
    contact_ref: str


@dataclass
class _Participant:
    record: ParticipantRecord
    tz_offset_min: int = 0
    timeline: list[DiaryTask] = field(default_factory=list)
    queue: TaskQueue | None = None
    emit_pos: int = 0
    last_chunk_at: int | None = None
    commands: list[SyncCommand] = field(default_factory=list)
    closed: bool = False


def _now_ms() -> int:
    import time
    return int(time.time() * 1000)


class Backend:
    """The ingest service core. Wire protocol lives in ilog.server."""

    def __init__(self, config: StudyConfig, data_dir: str | Path,
                 mac_key: bytes | None = None, supervisor_cred: str = "supervisor-secret",
                 clock=None, rng=None, silence_threshold_h: float | None = None):
        self.config = config
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.mac_key = mac_key or b"ilog-dev-mac-key-not-for-production"
        self.supervisor_cred = supervisor_cred
        self.clock = clock or _now_ms
        self._rng = rng
        self.silence_threshold_ms = int(
            (silence_threshold_h if silence_threshold_h is not None
             else config.silence_threshold_h) * 3_600_000)

        self.store = SeriesStore(self.data_dir / "series")
        self.diary = DiaryStore(self.data_dir / "diary")
        self.dead_letter_dir = self.data_dir / "dead_letter"
        self.dead_letter_dir.mkdir(exist_ok=True)
        self._identity_dir = self.data_dir / "identity"
        self._identity_dir.mkdir(exist_ok=True)

        self._lock = RLock()
        self._participants: dict[str, _Participant] = {}
        self._identity: dict[str, dict] = {}        # contact_ref -> identity row
        self._linkage: dict[str, str] = {}          # contact_ref -> pseudonym
        self._erasure_log = self.data_dir / "erasures.log"
        self._load_state()

    # -- persistence of registry state --------------------------------------

    def _load_state(self) -> None:
        # the linkage table is the ONLY place joining contact_ref to
        # pseudonym_id; collection rows never persist the contact_ref
        linkage = self._identity_dir / "linkage.jsonl"
        if linkage.exists():
            for line in linkage.read_text().splitlines():
                if line.strip():
                    row = json.loads(line)
                    self._linkage[row["contact_ref"]] = row["pseudonym_id"]
        contact_ref_of = {p: cr for cr, p in self._linkage.items()}
        reg_path = self.data_dir / "participants.json"
        if reg_path.exists():
            for row in json.loads(reg_path.read_text()).values():
                record = ParticipantRecord(
                    pseudonym_id=row["pseudonym_id"],
                    contact_ref=contact_ref_of.get(row["pseudonym_id"], ""),
                    device_key=bytes.fromhex(row["device_key"]),
                    consent=Consent(row["consent"]),
                    registered_at=row["registered_at"],
                    background=row["background"],
                )
                self._participants[record.pseudonym_id] = _Participant(
                    record=record,
                    tz_offset_min=row.get("tz_offset_min", 0),
                    last_chunk_at=row.get("last_chunk_at"),
                )
        ledger = self._identity_dir / "ledger.jsonl"
        if ledger.exists():
            for line in ledger.read_text().splitlines():
                if line.strip():
                    row = json.loads(line)
                    self._identity[row["contact_ref"]] = row

    def _save_registry(self) -> None:
        rows = {}
        for p in self._participants.values():
            rows[p.record.pseudonym_id] = {
                "pseudonym_id": p.record.pseudonym_id,
                "device_key": p.record.device_key.hex(),
                "consent": p.record.consent.value,
                "registered_at": p.record.registered_at,
                "background": p.record.background,
                "tz_offset_min": p.tz_offset_min,
                "last_chunk_at": p.last_chunk_at,
            }
        tmp = self.data_dir / "participants.json.tmp"
        tmp.write_text(json.dumps(rows, sort_keys=True))
        tmp.replace(self.data_dir / "participants.json")

    def _save_identity(self) -> None:
        ledger = self._identity_dir / "ledger.jsonl"
        ledger.write_text("".join(json.dumps(r, sort_keys=True) + "\n"
                                  for r in self._identity.values()))
        linkage = self._identity_dir / "linkage.jsonl"
        linkage.write_text("".join(
            json.dumps({"contact_ref": cr, "pseudonym_id": p}, sort_keys=True) + "\n"
            for cr, p in self._linkage.items()))

    def _rand_bytes(self, n: int) -> bytes:
        if self._rng is not None:
            return self._rng.randbytes(n)
        return secrets.token_bytes(n)

    # -- tokens --------------------------------------------------------------

    def issue_token(self, pseudonym: str) -> str:
        issued_at = self.clock()
        mac = hmac.new(self.mac_key, f"{pseudonym}|{issued_at}".encode(),
                       hashlib.sha256).hexdigest()
        raw = f"{pseudonym}|{issued_at}|{mac}".encode()
        return base64.urlsafe_b64encode(raw).decode().rstrip("=")

    def verify_token(self, token: str) -> str:
        """Returns the pseudonym; checks the MAC without any lookup, then
        that the participant exists with active consent."""
        try:
            padded = token + "=" * (-len(token) % 4)
            pseudonym, issued_at, mac = base64.urlsafe_b64decode(padded).decode().split("|")
        except Exception:
            raise AuthFailure("malformed session token") from None
        expect = hmac.new(self.mac_key, f"{pseudonym}|{issued_at}".encode(),
                          hashlib.sha256).hexdigest()
        if not hmac.compare_digest(mac, expect):
            raise AuthFailure("bad token signature")
        participant = self._participants.get(pseudonym)
        if participant is None or participant.record.consent is not Consent.GRANTED:
            raise AuthFailure("unknown or revoked participant")
        return pseudonym

    def _check_supervisor(self, credential: str) -> None:
        if not hmac.compare_digest(credential.encode(), self.supervisor_cred.encode()):
            raise Unauthorized("bad supervisor credential")

    # -- registration ----------------------------------------------------------

    def register(self, study_code: str, background: dict[str, str], contact: str,
                 tz_offset_min: int = 0) -> tuple[ParticipantRecord, str, bytes]:
        """Enroll a participant; returns (record, session token, device key)."""
        with self._lock:
            if not verify_study_code(study_code, self.config):
                raise BadStudyCode("study code does not match")
            now = self.clock()
            if now >= self.config.end_ms:
                raise StudyClosed("study has ended")
            prior_ref = next((cr for cr, row in self._identity.items()
                              if row["contact"] == contact), None)
            if prior_ref is not None:
                old_pseudonym = self._linkage.get(prior_ref)
                if old_pseudonym and old_pseudonym in self._participants:
                    old = self._participants[old_pseudonym]
                    old.record.consent = Consent.REVOKED
                contact_ref = prior_ref
            else:
                contact_ref = self._rand_bytes(16).hex()
                self._identity[contact_ref] = {
                    "contact_ref": contact_ref,
                    "contact": contact,
                    "created_at": now,
                }
            pseudonym = self._rand_bytes(16).hex()
            device_key = self._rand_bytes(32)
            record = ParticipantRecord(
                pseudonym_id=pseudonym,
                contact_ref=contact_ref,
                device_key=device_key,
                consent=Consent.GRANTED,
                registered_at=now,
                background=dict(background),
            )
            self._linkage[contact_ref] = pseudonym
            self._participants[pseudonym] = _Participant(record=record,
                                                         tz_offset_min=tz_offset_min)
            self._save_registry()
            self._save_identity()
            return record, self.issue_token(pseudonym), device_key

    # -- task distribution -------------------------------------------------------

    def _participant(self, pseudonym: str) -> _Participant:
        p = self._participants.get(pseudonym)
        if p is None:
            raise UnknownParticipant(pseudonym)
        return p

    def _advance(self, p: _Participant, now: int) -> None:
        """Feed timeline tasks that have come due into the backlog queue."""
        if p.queue is None:
            p.queue = queue_for(self.config)
            p.timeline = generate_timeline(self.config, p.tz_offset_min)
            # restart rebuild: answered set and same-as-previous source
            answered = self.diary.answered_ids(p.record.pseudonym_id)
            p.queue.answered = {tid: None for tid in answered}
            episodes = [r for r in self.diary.records(p.record.pseudonym_id)
                        if r.kind is TaskKind.EPISODE]
            if episodes:
                latest = max(episodes, key=lambda r: r.answered_at_end)
                p.queue.last_episode_answers = latest.answers
        while p.emit_pos < len(p.timeline) and p.timeline[p.emit_pos].emit_at <= now:
            task = p.timeline[p.emit_pos]
            p.emit_pos += 1
            if task.task_id in p.queue.answered:
                continue
            p.queue.enqueue(task)
        if not p.closed and now >= self.config.end_ms + 86_400_000:
            p.queue.close_study()
            p.closed = True

    def fetch_tasks(self, token: str, acked_through: int = 0) -> tuple[list[DiaryTask], list[SyncCommand]]:
        """Due pending tasks emitted after the client's watermark, plus any
        queued commands (which this call marks delivered)."""
        with self._lock:
            pseudonym = self.verify_token(token)
            p = self._participant(pseudonym)
            now = self.clock()
            self._advance(p, now)
            tasks = p.queue.deliver_pending(now, after=acked_through or None)
            delivered = []
            remaining = []
            for cmd in p.commands:
                if cmd.delivered_at is None:
                    delivered.append(SyncCommand(cmd.participant, cmd.kind,
                                                 cmd.issued_at, delivered_at=now))
                else:
                    remaining.append(cmd)
            p.commands = remaining + delivered
            return tasks, delivered

    def submit_answers(self, token: str, items: list[dict]) -> list[dict]:
        """Accept a batch of answers; per-item statuses, batch never fails."""
        with self._lock:
            pseudonym = self.verify_token(token)
            p = self._participant(pseudonym)
            now = self.clock()
            self._advance(p, now)
            results = []
            for item in items:
                task_id = item["task_id"]
                if task_id in p.queue.answered:
                    results.append({"task_id": task_id, "status": "duplicate"})
                    continue
                try:
                    answer = DiaryAnswer(
                        task_id=task_id,
                        answers=tuple((CodebookId(cb), code, text)
                                      for cb, code, text in item.get("answers", [])),
                        answered_at_start=item["answered_at_start"],
                        answered_at_end=item["answered_at_end"],
                        same_as_previous=item.get("same_as_previous", False),
                    )
                    task = next((t for t in p.queue.pending if t.task_id == task_id), None)
                    telemetry = p.queue.accept_answer(
                        task_id, answer, item["notified_at"],
                        delivered_offline=item.get("delivered_offline", False))
                except UnknownTask:
                    results.append({"task_id": task_id, "status": "unknown_task"})
                    continue
                except WindowExpired:
                    results.append({"task_id": task_id, "status": "window_expired"})
                    continue
                except (InvalidAnswer, ValueError) as exc:
                    results.append({"task_id": task_id, "status": "invalid",
                                    "detail": str(exc)})
                    continue
                stored = p.queue.answered[task_id]
                self.diary.record(pseudonym, task, stored, telemetry)
                results.append({"task_id": task_id, "status": "accepted"})
            return results

    # -- chunk ingest ---------------------------------------------------------

    def receive_chunk(self, token: str, chunk_bytes: bytes) -> UploadReceipt:
        with self._lock:
            pseudonym = self.verify_token(token)
            p = self._participant(pseudonym)
            chunk = chunk_from_bytes(chunk_bytes)
            if chunk.pseudonym_id != pseudonym:
                raise PseudonymMismatch(
                    f"chunk for {chunk.pseudonym_id[:8]} on a session for {pseudonym[:8]}")
            chunk_id = chunk.chunk_id.hex()
            if self.store.has_dedupe_key(chunk_id):
                return UploadReceipt(chunk_id, "duplicate", 0)
            try:
                readings = open_chunk(chunk, p.record.device_key)
            except AuthFailure:
                raise
            except (logpack.CorruptPayload, logpack.CountMismatch) as exc:
                quarantine = self.dead_letter_dir / f"{pseudonym}_{chunk_id}.bin"
                quarantine.write_bytes(chunk_bytes)
                raise DecodeError(f"chunk {chunk_id[:8]} quarantined: {exc}") from exc
            result = self.store.write_batch(readings, pseudonym, dedupe_key=chunk_id)
            if result is None:
                return UploadReceipt(chunk_id, "duplicate", 0)
            p.last_chunk_at = self.clock()
            return UploadReceipt(chunk_id, "stored", len(readings))

    # -- supervisor surface ------------------------------------------------------

    def supervisor_status(self, credential: str) -> list[ParticipantStatus]:
        with self._lock:
            self._check_supervisor(credential)
            now = self.clock()
            rows = []
            for pseudonym in sorted(self._participants):
                p = self._participants[pseudonym]
                if p.record.consent is Consent.REVOKED:
                    continue
                self._advance(p, now)
                chunks_total = self.store.chunk_count(pseudonym)
                last_seen = p.last_chunk_at if p.last_chunk_at is not None \
                    else p.record.registered_at
                rows.append(ParticipantStatus(
                    pseudonym_id=pseudonym,
                    last_chunk_at=p.last_chunk_at,
                    last_answer_at=self.diary.last_answered_at(pseudonym),
                    chunks_total=chunks_total,
                    readings_total=self.store.total_readings(pseudonym),
                    answers_total=self.diary.count(pseudonym),
                    backlog_size=len(p.queue.pending),
                    silent=(now - last_seen) > self.silence_threshold_ms,
                    pending_commands=tuple(c.kind for c in p.commands
                                           if c.delivered_at is None),
                    contact_ref=p.record.contact_ref,
                ))
            return rows

    def trigger_sync(self, credential: str, pseudonym: str) -> SyncCommand:
        with self._lock:
            self._check_supervisor(credential)
            p = self._participants.get(pseudonym)
            if p is None or p.record.consent is Consent.REVOKED:
                raise UnknownParticipant(pseudonym)
            for cmd in p.commands:
                if cmd.kind == "force_sync_wifi" and cmd.delivered_at is None:
                    return cmd
            cmd = SyncCommand(pseudonym, "force_sync_wifi", self.clock())
            p.commands.append(cmd)
            return cmd

    # -- erasure -------------------------------------------------------------

    def erase_participant(self, credential_or_token: str, pseudonym: str) -> dict:
        with self._lock:
            try:
                self._check_supervisor(credential_or_token)
            except Unauthorized:
                if self.verify_token(credential_or_token) != pseudonym:
                    raise Unauthorized("token does not match participant")
            p = self._participants.get(pseudonym)
            if p is None:
                raise UnknownParticipant(pseudonym)
            chunks = self.store.chunk_count(pseudonym)
            readings = self.store.erase_pseudonym(pseudonym)
            answers = self.diary.erase(pseudonym)
            dead = 0
            for f in self.dead_letter_dir.glob(f"{pseudonym}_*.bin"):
                f.unlink()
                dead += 1
            self._identity.pop(p.record.contact_ref, None)
            self._linkage.pop(p.record.contact_ref, None)
            del self._participants[pseudonym]
            self._save_registry()
            self._save_identity()
            report = {"pseudonym": pseudonym, "readings": readings, "answers": answers,
                      "chunks": chunks, "dead_letters": dead, "erased_at": self.clock()}
            with open(self._erasure_log, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({k: v for k, v in report.items()
                                     if k != "pseudonym"}) + "\n")
            return report

    # -- lifecycle ------------------------------------------------------------

    def finalize_study(self) -> None:
        """Advance every queue to the end of the study and close it."""
        with self._lock:
            horizon = self.config.end_ms + 86_400_000
            for p in self._participants.values():
                if p.record.consent is Consent.GRANTED:
                    self._advance(p, horizon)

    def close(self) -> None:
        with self._lock:
            self._save_registry()
            self.store.close()
            self.diary.close()


# ---------------------------------------------------------------------------
# Wire conversion (shared by the HTTP server and the simulator transport)

def task_to_wire(task: DiaryTask) -> dict:
    return {
        "task_id": task.task_id,
        "kind": task.kind.value,
        "episode_start": task.episode_start,
        "emit_at": task.emit_at,
        "questions": [[cb.value, prompt] for cb, prompt in task.questions],
        "expiry": task.expiry,
    }


def task_from_wire(row: dict) -> DiaryTask:
    return DiaryTask(
        task_id=row["task_id"],
        kind=TaskKind(row["kind"]),
        episode_start=row["episode_start"],
        emit_at=row["emit_at"],
        questions=tuple((CodebookId(cb), prompt) for cb, prompt in row["questions"]),
        expiry=row.get("expiry"),
    )


def command_to_wire(cmd: SyncCommand) -> dict:
    return {"participant": cmd.participant, "kind": cmd.kind,
            "issued_at": cmd.issued_at, "delivered_at": cmd.delivered_at}
