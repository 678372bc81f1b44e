"""Persistent storage for diary answers and their telemetry.

Append-only JSONL on disk, indexed in memory. One record per accepted
answer, carrying the answer items and the reaction/completion telemetry.
Erasure rewrites the file without the erased pseudonym's rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from threading import RLock

from .catalog import CodebookId
from .scheduler import AnswerTelemetry, DiaryAnswer, DiaryTask, TaskKind


@dataclass(frozen=True)
class DiaryRecord:
    pseudonym_id: str
    task_id: str
    kind: TaskKind
    episode_start: int
    emit_at: int
    answers: tuple[tuple[CodebookId, int | None, str | None], ...]
    answered_at_start: int
    answered_at_end: int
    same_as_previous: bool
    telemetry: AnswerTelemetry

    def to_json(self) -> dict:
        return {
            "pseudonym": self.pseudonym_id,
            "task_id": self.task_id,
            "kind": self.kind.value,
            "episode_start": self.episode_start,
            "emit_at": self.emit_at,
            "answers": [[cb.value, code, text] for cb, code, text in self.answers],
            "answered_at_start": self.answered_at_start,
            "answered_at_end": self.answered_at_end,
            "same_as_previous": self.same_as_previous,
            "notified_at": self.telemetry.notified_at,
            "reaction_ms": self.telemetry.reaction_ms,
            "completion_ms": self.telemetry.completion_ms,
            "delivered_offline": self.telemetry.delivered_offline,
        }

    @staticmethod
    def from_json(row: dict) -> "DiaryRecord":
        return DiaryRecord(
            pseudonym_id=row["pseudonym"],
            task_id=row["task_id"],
            kind=TaskKind(row["kind"]),
            episode_start=row["episode_start"],
            emit_at=row["emit_at"],
            answers=tuple((CodebookId(cb), code, text) for cb, code, text in row["answers"]),
            answered_at_start=row["answered_at_start"],
            answered_at_end=row["answered_at_end"],
            same_as_previous=row["same_as_previous"],
            telemetry=AnswerTelemetry(
                task_id=row["task_id"],
                notified_at=row["notified_at"],
                reaction_ms=row["reaction_ms"],
                completion_ms=row["completion_ms"],
                delivered_offline=row["delivered_offline"],
            ),
        )


class DiaryStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.path = self.root / "answers.jsonl"
        self._lock = RLock()
        self._records: list[DiaryRecord] = []
        self._by_participant: dict[str, list[DiaryRecord]] = {}
        if self.path.exists():
            with open(self.path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        self._index(DiaryRecord.from_json(json.loads(line)))
        self._fh = open(self.path, "a", encoding="utf-8")

    def _index(self, record: DiaryRecord) -> None:
        self._records.append(record)
        self._by_participant.setdefault(record.pseudonym_id, []).append(record)

    def record(self, pseudonym: str, task: DiaryTask, answer: DiaryAnswer,
               telemetry: AnswerTelemetry) -> DiaryRecord:
        rec = DiaryRecord(
            pseudonym_id=pseudonym,
            task_id=task.task_id,
            kind=task.kind,
            episode_start=task.episode_start,
            emit_at=task.emit_at,
            answers=answer.answers,
            answered_at_start=answer.answered_at_start,
            answered_at_end=answer.answered_at_end,
            same_as_previous=answer.same_as_previous,
            telemetry=telemetry,
        )
        with self._lock:
            self._fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
            self._fh.flush()
            self._index(rec)
        return rec

    def records(self, pseudonym: str | None = None) -> list[DiaryRecord]:
        with self._lock:
            if pseudonym is None:
                return list(self._records)
            return list(self._by_participant.get(pseudonym, []))

    def answered_ids(self, pseudonym: str) -> set[str]:
        with self._lock:
            return {r.task_id for r in self._by_participant.get(pseudonym, [])}

    def count(self, pseudonym: str | None = None) -> int:
        with self._lock:
            if pseudonym is None:
                return len(self._records)
            return len(self._by_participant.get(pseudonym, []))

    def last_answered_at(self, pseudonym: str) -> int | None:
        with self._lock:
            rows = self._by_participant.get(pseudonym)
            if not rows:
                return None
            return max(r.answered_at_end for r in rows)

    def erase(self, pseudonym: str) -> int:
        with self._lock:
            removed = len(self._by_participant.pop(pseudonym, []))
            if removed:
                self._records = [r for r in self._records if r.pseudonym_id != pseudonym]
                self._fh.close()
                tmp = self.path.with_suffix(".tmp")
                with open(tmp, "w", encoding="utf-8") as fh:
                    for rec in self._records:
                        fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
                tmp.replace(self.path)
                self._fh = open(self.path, "a", encoding="utf-8")
            return removed

    def close(self) -> None:
        with self._lock:
            self._fh.close()
