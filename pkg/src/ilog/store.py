"""Append-oriented time-series store partitioned by (pseudonym, sensor, day).

Write path: every batch is framed and CRC-checked into a single write-ahead
log and fsynced before the call returns, then applied to an in-memory
table. A flush moves memtable contents into per-partition segment files as
sorted, CRC-framed blocks of ~4 KiB (the block directory doubles as a
sparse time index), rewrites the manifest atomically, and truncates the
WAL. Each block records the highest batch sequence it contains, so replay
after a crash never duplicates flushed data and never loses an
acknowledged batch: a batch is acknowledged only after its WAL record is
durable.

Layout under the store root:

    wal.log                              write-ahead log
    manifest.json                        dedupe keys + last sequence
    <pseudonym>/<sensor_id>/<day>.seg    segment files, append-only blocks

Duplicate readings are stored as-is; exactly-once semantics live at chunk
granularity via the dedupe keys passed by the ingest layer.
"""

from __future__ import annotations

import errno
import heapq
import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from threading import RLock

from .catalog import CATALOG, SensorCatalog
from .logpack import SensorReading, decode_readings, encode_readings

MS_PER_DAY = 86_400_000
BLOCK_TARGET_BYTES = 4096
_FRAME = struct.Struct(">II")                      # payload length, crc32
_BLOCK_HEADER = struct.Struct(">QQQIIQ")           # min_ts max_ts flush_id count hour_bits first_arrival
_EPOCH_ORDINAL = date(1970, 1, 1).toordinal()
_MAX_DAY_NUM = date.max.toordinal() - _EPOCH_ORDINAL - 1


class IoFailure(Exception):
    pass


class StorageFull(Exception):
    pass


def _io_guard(exc: OSError) -> Exception:
    if exc.errno == errno.ENOSPC:
        return StorageFull(str(exc))
    return IoFailure(str(exc))


def day_of_ts(ts_ms: int) -> date:
    return datetime.fromtimestamp((ts_ms // MS_PER_DAY) * 86400, tz=timezone.utc).date()


@dataclass(frozen=True, order=True)
class PartitionKey:
    pseudonym_id: str
    sensor_id: int
    day: date

    def relpath(self) -> Path:
        return Path(self.pseudonym_id) / str(self.sensor_id) / f"{self.day.isoformat()}.seg"

    def __str__(self) -> str:
        return f"{self.pseudonym_id}/{self.sensor_id}/{self.day.isoformat()}"


@dataclass
class _Block:
    offset: int          # file offset of the frame
    length: int          # payload length
    min_ts: int
    max_ts: int
    max_seq: int
    count: int
    hour_bits: int


@dataclass
class _Partition:
    key: PartitionKey
    blocks: list[_Block] = field(default_factory=list)
    mem: list[tuple[int, SensorReading]] = field(default_factory=list)  # (arrival, reading)
    mem_sorted: bool = True

    @property
    def flushed_seq(self) -> int:
        return max((b.max_seq for b in self.blocks), default=0)

    @property
    def count(self) -> int:
        return sum(b.count for b in self.blocks) + len(self.mem)


def _fsync_dir(path: Path) -> None:
    fd = os.open(path, os.O_RDONLY)
    try:
        os.fsync(fd)
    finally:
        os.close(fd)


def _append_frame(fh, payload: bytes) -> None:
    fh.write(_FRAME.pack(len(payload), zlib.crc32(payload)))
    fh.write(payload)


def _scan_frames(data: bytes):
    """Yield (offset, payload) for every intact frame; stops at a torn tail."""
    pos = 0
    n = len(data)
    while pos + _FRAME.size <= n:
        length, crc = _FRAME.unpack_from(data, pos)
        start = pos + _FRAME.size
        end = start + length
        if end > n:
            return
        payload = data[start:end]
        if zlib.crc32(payload) != crc:
            return
        yield pos, payload
        pos = end


class SeriesStore:
    """Single-writer, multi-reader persistent series storage."""

    def __init__(self, root: str | Path, catalog: SensorCatalog = CATALOG,
                 flush_readings: int = 65536, flush_wal_bytes: int = 16 << 20):
        self.root = Path(root)
        self.catalog = catalog
        self.flush_readings = flush_readings
        self.flush_wal_bytes = flush_wal_bytes
        self._lock = RLock()
        self._partitions: dict[PartitionKey, _Partition] = {}
        self._dedupe: dict[str, str] = {}        # key hex -> pseudonym
        self._last_seq = 0
        self._next_arrival = 0
        self._mem_count = 0
        self._completed_flush = 0
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            self._load()
            self._wal = open(self.root / "wal.log", "ab")
        except OSError as exc:
            raise _io_guard(exc) from exc

    # -- recovery ----------------------------------------------------------

    def _load(self) -> None:
        manifest_path = self.root / "manifest.json"
        if manifest_path.exists():
            manifest = json.loads(manifest_path.read_text())
            self._dedupe = dict(manifest.get("dedupe", {}))
            self._last_seq = int(manifest.get("last_seq", 0))
            self._next_arrival = int(manifest.get("next_arrival", 0))
            self._completed_flush = int(manifest.get("completed_flush", 0))
        for seg_path in sorted(self.root.glob("*/*/*.seg")):
            key = PartitionKey(seg_path.parent.parent.name,
                               int(seg_path.parent.name),
                               date.fromisoformat(seg_path.stem))
            self._partitions[key] = self._load_segment(key, seg_path)
        wal_path = self.root / "wal.log"
        if wal_path.exists():
            self._replay_wal(wal_path.read_bytes())

    def _load_segment(self, key: PartitionKey, path: Path) -> _Partition:
        data = path.read_bytes()
        part = _Partition(key)
        good_end = 0
        for offset, payload in _scan_frames(data):
            min_ts, max_ts, flush_id, count, hour_bits, first_arrival = \
                _BLOCK_HEADER.unpack_from(payload, 0)
            if flush_id > self._completed_flush:
                # blocks of a flush that never reached its manifest commit;
                # their rows are still in the WAL, so drop them for replay
                break
            part.blocks.append(_Block(offset, len(payload), min_ts, max_ts,
                                      flush_id, count, hour_bits))
            good_end = offset + _FRAME.size + len(payload)
            self._last_seq = max(self._last_seq, flush_id)
        if good_end < len(data):
            # torn or uncommitted tail from a crash mid-flush
            with open(path, "r+b") as fh:
                fh.truncate(good_end)
        return part

    def _replay_wal(self, data: bytes) -> None:
        for _, payload in _scan_frames(data):
            seq, pseudonym, dedupe_key, readings, first_arrival = \
                _decode_wal_record(payload, self.catalog)
            self._last_seq = max(self._last_seq, seq)
            self._next_arrival = max(self._next_arrival, first_arrival + len(readings))
            if dedupe_key is not None:
                self._dedupe[dedupe_key] = pseudonym
            for i, reading in enumerate(readings):
                key = PartitionKey(pseudonym, reading.sensor_id, day_of_ts(reading.ts_ms))
                part = self._partitions.setdefault(key, _Partition(key))
                if seq > part.flushed_seq:
                    part.mem.append((first_arrival + i, reading))
                    part.mem_sorted = False
                    self._mem_count += 1

    # -- writes ------------------------------------------------------------

    def write_batch(self, readings: list[SensorReading], pseudonym: str,
                    dedupe_key: str | None = None) -> dict[PartitionKey, int] | None:
        """Durably append a batch; returns per-partition counts.

        Returns None without writing when dedupe_key was already stored.
        All readings become visible together once the call returns.
        """
        with self._lock:
            if dedupe_key is not None and dedupe_key in self._dedupe:
                return None
            if not readings:
                return {}
            seq = self._last_seq + 1
            first_arrival = self._next_arrival
            record = _encode_wal_record(seq, pseudonym, dedupe_key, readings,
                                        first_arrival, self.catalog)
            try:
                _append_frame(self._wal, record)
                self._wal.flush()
                os.fsync(self._wal.fileno())
            except OSError as exc:
                raise _io_guard(exc) from exc
            self._last_seq = seq
            self._next_arrival = first_arrival + len(readings)
            if dedupe_key is not None:
                self._dedupe[dedupe_key] = pseudonym
            counts: dict[PartitionKey, int] = {}
            for i, reading in enumerate(readings):
                key = PartitionKey(pseudonym, reading.sensor_id, day_of_ts(reading.ts_ms))
                part = self._partitions.setdefault(key, _Partition(key))
                part.mem.append((first_arrival + i, reading))
                part.mem_sorted = False
                counts[key] = counts.get(key, 0) + 1
            self._mem_count += len(readings)
            if (self._mem_count >= self.flush_readings
                    or self._wal.tell() >= self.flush_wal_bytes):
                self.flush()
            return counts

    def has_dedupe_key(self, key: str) -> bool:
        with self._lock:
            return key in self._dedupe

    def flush(self) -> None:
        """Move memtable contents into segment blocks and reset the WAL."""
        with self._lock:
            try:
                self._flush_locked()
            except OSError as exc:
                raise _io_guard(exc) from exc

    def _flush_locked(self) -> None:
        # ~4 KiB blocks assuming 33-byte records; exactness is not needed,
        # the block directory is only a sparse index.
        per_block = max(1, BLOCK_TARGET_BYTES // 33)
        dirty = [p for p in self._partitions.values() if p.mem]
        if not dirty:
            return
        # All blocks of this flush carry the same flush id; the manifest
        # commit below is what makes them durable. Blocks found above the
        # committed flush id on reopen are discarded (their rows are still
        # in the WAL), so a crash anywhere in here neither loses nor
        # duplicates a batch.
        flush_id = self._last_seq
        for part in dirty:
            part.mem.sort(key=lambda ar: (ar[1].ts_ms, ar[0]))
            part.mem_sorted = True
            path = self.root / part.key.relpath()
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "ab") as fh:
                for chunk_start in range(0, len(part.mem), per_block):
                    rows = part.mem[chunk_start:chunk_start + per_block]
                    payload, block = _encode_block(rows, flush_id, fh.tell(), self.catalog)
                    _append_frame(fh, payload)
                    part.blocks.append(block)
                fh.flush()
                os.fsync(fh.fileno())
            self._mem_count -= len(part.mem)
            part.mem = []
        self._completed_flush = flush_id
        self._write_manifest()
        self._wal.close()
        self._wal = open(self.root / "wal.log", "wb")
        os.fsync(self._wal.fileno())
        _fsync_dir(self.root)

    def _write_manifest(self) -> None:
        manifest = {
            "format": 1,
            "last_seq": self._last_seq,
            "next_arrival": self._next_arrival,
            "completed_flush": self._completed_flush,
            "dedupe": self._dedupe,
        }
        tmp = self.root / "manifest.json.tmp"
        tmp.write_text(json.dumps(manifest, sort_keys=True))
        with open(tmp, "rb") as fh:
            os.fsync(fh.fileno())
        os.replace(tmp, self.root / "manifest.json")
        _fsync_dir(self.root)

    def close(self) -> None:
        with self._lock:
            self.flush()
            self._wal.close()

    # -- reads -------------------------------------------------------------

    def query_range(self, pseudonym: str, sensor_id: int, t0: int, t1: int) -> list[SensorReading]:
        """Readings with ts in [t0, t1), ordered by (ts, arrival)."""
        if t0 > t1:
            raise ValueError("t0 must be <= t1")
        if t0 == t1:
            return []
        with self._lock:
            runs = []
            for key in self._partition_keys_between(pseudonym, sensor_id, t0, t1 - 1):
                part = self._partitions[key]
                for block in part.blocks:
                    if block.max_ts < t0 or block.min_ts >= t1:
                        continue
                    runs.append(self._read_block(part, block))
                if part.mem:
                    if not part.mem_sorted:
                        part.mem.sort(key=lambda ar: (ar[1].ts_ms, ar[0]))
                        part.mem_sorted = True
                    runs.append(list(part.mem))
            merged = heapq.merge(*runs, key=lambda ar: (ar[1].ts_ms, ar[0]))
            return [r for _, r in merged if t0 <= r.ts_ms < t1]

    def _partition_keys_between(self, pseudonym: str, sensor_id: int,
                                t0: int, t1_inclusive: int) -> list[PartitionKey]:
        d0 = date.fromordinal(_EPOCH_ORDINAL + t0 // MS_PER_DAY) \
            if t0 // MS_PER_DAY <= _MAX_DAY_NUM else date.max
        d1 = date.fromordinal(_EPOCH_ORDINAL + min(t1_inclusive // MS_PER_DAY,
                                                   _MAX_DAY_NUM))
        return sorted(k for k in self._partitions
                      if k.pseudonym_id == pseudonym and k.sensor_id == sensor_id
                      and d0 <= k.day <= d1)

    def _read_block(self, part: _Partition, block: _Block) -> list[tuple[int, SensorReading]]:
        path = self.root / part.key.relpath()
        with open(path, "rb") as fh:
            fh.seek(block.offset + _FRAME.size)
            payload = fh.read(block.length)
        return _decode_block(payload, self.catalog)

    def coverage_hours(self, pseudonym: str, sensor_id: int, day: date) -> int:
        """Distinct wall-clock hours of the UTC day containing >= 1 reading."""
        with self._lock:
            part = self._partitions.get(PartitionKey(pseudonym, sensor_id, day))
            if part is None:
                return 0
            bits = 0
            for block in part.blocks:
                bits |= block.hour_bits
            for _, r in part.mem:
                bits |= 1 << ((r.ts_ms % MS_PER_DAY) // 3_600_000)
            return bin(bits).count("1")

    def partitions(self) -> list[tuple[PartitionKey, int]]:
        """All nonempty partitions with their reading counts, sorted."""
        with self._lock:
            return sorted((k, p.count) for k, p in self._partitions.items() if p.count)

    def pseudonyms(self) -> set[str]:
        with self._lock:
            return {k.pseudonym_id for k, p in self._partitions.items() if p.count}

    def chunk_count(self, pseudonym: str) -> int:
        """Distinct dedupe keys (ingested chunks) stored for a pseudonym."""
        with self._lock:
            return sum(1 for v in self._dedupe.values() if v == pseudonym)

    def total_readings(self, pseudonym: str | None = None) -> int:
        with self._lock:
            return sum(p.count for k, p in self._partitions.items()
                       if pseudonym is None or k.pseudonym_id == pseudonym)

    # -- erasure -----------------------------------------------------------

    def erase_pseudonym(self, pseudonym: str) -> int:
        """Remove every trace of a pseudonym; returns readings removed."""
        with self._lock:
            self.flush()  # drains the WAL so no erased bytes linger there
            removed = 0
            for key in [k for k in self._partitions if k.pseudonym_id == pseudonym]:
                removed += self._partitions.pop(key).count
            pdir = self.root / pseudonym
            if pdir.exists():
                for seg in sorted(pdir.glob("*/*.seg")):
                    seg.unlink()
                for child in sorted(pdir.iterdir()):
                    child.rmdir()
                pdir.rmdir()
            self._dedupe = {k: v for k, v in self._dedupe.items() if v != pseudonym}
            self._write_manifest()
            return removed


def verify_store(root: str | Path) -> dict:
    """Walk every segment file, checking frame CRCs. Returns a summary."""
    root = Path(root)
    report = {"segments": 0, "blocks": 0, "readings": 0, "corrupt": []}
    for seg_path in sorted(root.glob("*/*/*.seg")):
        report["segments"] += 1
        data = seg_path.read_bytes()
        good_end = 0
        for offset, payload in _scan_frames(data):
            min_ts, max_ts, max_seq, count, hour_bits, first_arrival = \
                _BLOCK_HEADER.unpack_from(payload, 0)
            report["blocks"] += 1
            report["readings"] += count
            good_end = offset + _FRAME.size + len(payload)
        if good_end != len(data):
            report["corrupt"].append(str(seg_path.relative_to(root)))
    return report


# ---------------------------------------------------------------------------
# Record encodings

def _encode_wal_record(seq: int, pseudonym: str, dedupe_key: str | None,
                       readings: list[SensorReading], first_arrival: int,
                       catalog: SensorCatalog) -> bytes:
    key_bytes = bytes.fromhex(dedupe_key) if dedupe_key else b""
    head = struct.pack(">QQ16sBI", seq, first_arrival, bytes.fromhex(pseudonym),
                       len(key_bytes), len(readings))
    return head + key_bytes + encode_readings(readings, catalog)


def _decode_wal_record(payload: bytes, catalog: SensorCatalog):
    seq, first_arrival, pseudonym, key_len, count = struct.unpack_from(">QQ16sBI", payload, 0)
    pos = struct.calcsize(">QQ16sBI")
    dedupe_key = payload[pos:pos + key_len].hex() if key_len else None
    pos += key_len
    readings = decode_readings(payload[pos:], catalog)
    if len(readings) != count:
        raise IoFailure("WAL record count mismatch")
    return seq, pseudonym.hex(), dedupe_key, readings, first_arrival


def _encode_block(rows: list[tuple[int, SensorReading]], max_seq: int, offset: int,
                  catalog: SensorCatalog) -> tuple[bytes, _Block]:
    min_ts = rows[0][1].ts_ms
    max_ts = rows[-1][1].ts_ms
    hour_bits = 0
    for _, r in rows:
        hour_bits |= 1 << ((r.ts_ms % MS_PER_DAY) // 3_600_000)
    head = _BLOCK_HEADER.pack(min_ts, max_ts, max_seq, len(rows), hour_bits, rows[0][0])
    arrivals = struct.pack(f">{len(rows)}Q", *(arrival for arrival, _ in rows))
    payload = head + arrivals + encode_readings((r for _, r in rows), catalog)
    return payload, _Block(offset, len(payload), min_ts, max_ts, max_seq, len(rows), hour_bits)


def _decode_block(payload: bytes, catalog: SensorCatalog) -> list[tuple[int, SensorReading]]:
    min_ts, max_ts, max_seq, count, hour_bits, first_arrival = \
        _BLOCK_HEADER.unpack_from(payload, 0)
    pos = _BLOCK_HEADER.size
    arrivals = list(struct.unpack_from(f">{count}Q", payload, pos))
    pos += 8 * count
    readings = decode_readings(payload[pos:], catalog)
    return list(zip(arrivals, readings))
