"""Diary task timeline, per-participant backlog queue, and answer telemetry.

The timeline is a pure function of the study config and the participant's
UTC offset: one episode task per resolution slot (asked about once the
slot has elapsed) plus the configured daily mood prompts. The queue
enforces the backlog cap by evicting the oldest pending task and records
how every emitted task ends: answered, evicted, window-expired, or left
over at study end.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum

from .catalog import TRAVEL_ACTIVITY_CODE, Codebook, CodebookId
from .study import StudyConfig

MS_PER_MIN = 60_000


class DuplicateTask(Exception):
    pass


class UnknownTask(Exception):
    pass


class WindowExpired(Exception):
    pass


class InvalidAnswer(Exception):
    pass


class TaskKind(Enum):
    EPISODE = "episode"
    MOOD_PROMPT = "mood_prompt"


EPISODE_PROMPTS: tuple[tuple[CodebookId, str], ...] = (
    (CodebookId.ACTIVITY, "What are you doing?"),
    (CodebookId.LOCATION, "Where are you?"),
    (CodebookId.TRANSPORT, "How are you travelling?"),
    (CodebookId.WITH_WHOM, "Who is with you?"),
)
MOOD_PROMPT = (CodebookId.MOOD, "What is your mood?")


@dataclass(frozen=True)
class DiaryTask:
    task_id: str                    # 32 hex chars
    kind: TaskKind
    episode_start: int              # ts_ms of the episode the questions refer to
    emit_at: int                    # ts_ms the notification fires
    questions: tuple[tuple[CodebookId, str], ...]
    expiry: int | None = None

    def __post_init__(self) -> None:
        if self.emit_at < self.episode_start:
            raise ValueError("emit_at must be >= episode_start")


@dataclass(frozen=True)
class DiaryAnswer:
    task_id: str
    answers: tuple[tuple[CodebookId, int | None, str | None], ...]  # (codebook, code, open_text)
    answered_at_start: int
    answered_at_end: int
    same_as_previous: bool = False

    def __post_init__(self) -> None:
        if self.answered_at_start > self.answered_at_end:
            raise ValueError("answered_at_start must be <= answered_at_end")


@dataclass(frozen=True)
class AnswerTelemetry:
    task_id: str
    notified_at: int
    reaction_ms: int
    completion_ms: int
    delivered_offline: bool = False


def _task_id(kind: TaskKind, episode_start: int, emit_at: int) -> str:
    digest = hashlib.blake2b(
        f"{kind.value}|{episode_start}|{emit_at}".encode(), digest_size=16)
    return digest.hexdigest()


def generate_timeline(config: StudyConfig, tz_offset_min: int = 0) -> list[DiaryTask]:
    """All diary tasks for one participant, ordered by emit time.

    Episode slots tile each study day in the participant's local wall time;
    each slot's task fires when the slot ends. Deterministic given inputs.
    """
    offset_ms = tz_offset_min * MS_PER_MIN
    res_ms = config.diary_resolution_min * MS_PER_MIN
    window_ms = (config.reply_window.minutes or 0) * MS_PER_MIN
    slots_per_day = 1440 // config.diary_resolution_min

    questions = EPISODE_PROMPTS + ((MOOD_PROMPT,) if config.mood_in_episode else ())
    tasks: list[DiaryTask] = []
    for day in range(config.day_count):
        local_midnight = config.start_ms + day * 86_400_000 - offset_ms
        for slot in range(slots_per_day):
            episode_start = local_midnight + slot * res_ms
            emit_at = episode_start + res_ms
            tasks.append(DiaryTask(
                task_id=_task_id(TaskKind.EPISODE, episode_start, emit_at),
                kind=TaskKind.EPISODE,
                episode_start=episode_start,
                emit_at=emit_at,
                questions=questions,
                expiry=emit_at + window_ms if config.reply_window.limited else None,
            ))
        for hh, mm in config.mood_prompts:
            emit_at = local_midnight + (hh * 60 + mm) * MS_PER_MIN
            tasks.append(DiaryTask(
                task_id=_task_id(TaskKind.MOOD_PROMPT, emit_at, emit_at),
                kind=TaskKind.MOOD_PROMPT,
                episode_start=emit_at,
                emit_at=emit_at,
                questions=(MOOD_PROMPT,),
                expiry=emit_at + window_ms if config.reply_window.limited else None,
            ))
    tasks.sort(key=lambda t: (t.emit_at, t.episode_start, t.kind.value))
    return tasks


class ExpiryReason(Enum):
    BACKLOG_EVICTED = "backlog_evicted"
    WINDOW_EXPIRED = "window_expired"
    STUDY_ENDED = "study_ended"


@dataclass
class TaskQueue:
    """Per-participant pending-task state. Single writer."""
    cap: int
    codebooks: dict[CodebookId, Codebook]
    reply_window_min: int | None = None
    pending: list[DiaryTask] = field(default_factory=list)
    expired: list[tuple[str, ExpiryReason]] = field(default_factory=list)
    answered: dict[str, DiaryAnswer] = field(default_factory=dict)
    notified_at: dict[str, int] = field(default_factory=dict)
    last_episode_answers: tuple | None = None
    emitted_count: int = 0

    def enqueue(self, task: DiaryTask) -> None:
        if any(t.task_id == task.task_id for t in self.pending) or task.task_id in self.answered:
            raise DuplicateTask(task.task_id)
        self.pending.append(task)
        self.emitted_count += 1
        while len(self.pending) > self.cap:
            evicted = self.pending.pop(0)
            self.expired.append((evicted.task_id, ExpiryReason.BACKLOG_EVICTED))

    def deliver_pending(self, now: int, was_offline_since: int | None = None,
                        after: int | None = None) -> list[DiaryTask]:
        """Due pending tasks, marking first delivery time for telemetry.

        With `after` set, only tasks emitted strictly later are returned, so
        a client that acknowledges its watermark sees each task once while
        repeat calls with the same watermark stay stable.
        """
        due = [t for t in self.pending
               if t.emit_at <= now and (after is None or t.emit_at > after)]
        for t in due:
            self.notified_at.setdefault(t.task_id, now)
        return due

    def delivered_offline(self, task: DiaryTask, was_offline_since: int | None) -> bool:
        return was_offline_since is not None and task.emit_at >= was_offline_since

    def accept_answer(self, task_id: str, answer: DiaryAnswer, notified_at: int,
                      delivered_offline: bool = False) -> AnswerTelemetry:
        task = next((t for t in self.pending if t.task_id == task_id), None)
        if task is None:
            raise UnknownTask(task_id)
        if self.reply_window_min is not None:
            deadline = notified_at + self.reply_window_min * MS_PER_MIN
            if answer.answered_at_end > deadline:
                self.pending.remove(task)
                self.expired.append((task_id, ExpiryReason.WINDOW_EXPIRED))
                raise WindowExpired(task_id)
        if answer.same_as_previous:
            if task.kind is not TaskKind.EPISODE:
                raise InvalidAnswer("same-as-previous only applies to episode tasks")
            if self.last_episode_answers is None:
                raise InvalidAnswer("no previous episode answer to copy")
            answer = DiaryAnswer(answer.task_id, self.last_episode_answers,
                                 answer.answered_at_start, answer.answered_at_end,
                                 same_as_previous=True)
        self._validate_answers(task, answer)
        if answer.answered_at_start < notified_at:
            raise InvalidAnswer("answered before notification")
        self.pending.remove(task)
        self.answered[task_id] = answer
        if task.kind is TaskKind.EPISODE:
            self.last_episode_answers = answer.answers
        return AnswerTelemetry(
            task_id=task_id,
            notified_at=notified_at,
            reaction_ms=answer.answered_at_start - notified_at,
            completion_ms=answer.answered_at_end - answer.answered_at_start,
            delivered_offline=delivered_offline,
        )

    def close_study(self) -> None:
        """Mark every still-pending task as terminated by study end."""
        for task in self.pending:
            self.expired.append((task.task_id, ExpiryReason.STUDY_ENDED))
        self.pending = []

    def _validate_answers(self, task: DiaryTask, answer: DiaryAnswer) -> None:
        allowed = {cb for cb, _ in task.questions}
        seen: set[CodebookId] = set()
        activity_code: int | None = None
        for cb_id, code, open_text in answer.answers:
            if cb_id not in allowed:
                raise InvalidAnswer(f"{cb_id.value}: not asked by this task")
            if cb_id in seen:
                raise InvalidAnswer(f"{cb_id.value}: answered more than once")
            seen.add(cb_id)
            book = self.codebooks[cb_id]
            if code is not None and not book.valid_code(code):
                raise InvalidAnswer(f"{cb_id.value}: code {code} outside 1..{len(book)}")
            if open_text is not None and not book.allows_open_text:
                raise InvalidAnswer(f"{cb_id.value}: open text not allowed")
            if code is None and open_text is None:
                raise InvalidAnswer(f"{cb_id.value}: empty answer item")
            if cb_id is CodebookId.ACTIVITY:
                activity_code = code
        transport = next(((c, t) for cb, c, t in answer.answers
                          if cb is CodebookId.TRANSPORT), None)
        if transport is not None and activity_code != TRAVEL_ACTIVITY_CODE:
            raise InvalidAnswer("transport: only applicable when the activity is travelling")


def queue_for(config: StudyConfig) -> TaskQueue:
    return TaskQueue(
        cap=config.backlog_cap,
        codebooks=config.codebooks,
        reply_window_min=config.reply_window.minutes if config.reply_window.limited else None,
    )
