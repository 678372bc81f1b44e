"""On-device log representation and the sealed chunk file format.

Readings accumulate in a per-device buffer; once the buffer's serialized
size reaches the study's chunk target the buffer is sealed into a chunk:
readings are sorted, serialized in a fixed record layout, compressed with
zlib, and encrypted with AES-256-GCM using the device key. The 80-byte
chunk header is bound as associated data, so a chunk cannot be truncated,
re-attributed to another device, or modified in any single bit without
failing authentication. See FORMAT.md for the byte-exact layout.

Record layout (plaintext, before compression), one record per reading:

    varint sensor_id | u64-le ts_ms | payload

where the payload is 8-byte IEEE-754 doubles (numeric), varint-length-
prefixed UTF-8 (text), or one byte per value (boolean), with arity and
kind fixed per sensor by the catalog.
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .catalog import CATALOG, SensorCatalog, ValueKind

MAGIC = b"ILG1"
HEADER_LEN = 80
NONCE_LEN = 12
TAG_LEN = 16
_HEADER_STRUCT = struct.Struct(">4s16s16sQQQQ12s")  # lengths and counters big-endian


class ArityMismatch(Exception):
    """Reading value count or type does not match the catalog spec."""


class EmptyBuffer(Exception):
    """Cannot seal a buffer with no pending readings."""


class AuthFailure(Exception):
    """Chunk failed authentication: wrong key, tampered or truncated bytes."""


class CorruptPayload(Exception):
    """Authentication passed but the decoded records are invalid (encoder bug)."""


class CountMismatch(Exception):
    """Decoded record count disagrees with the chunk header."""


@dataclass(frozen=True)
class SensorReading:
    sensor_id: int
    ts_ms: int
    values: tuple

    def __post_init__(self) -> None:
        if self.ts_ms <= 0:
            raise ValueError("ts_ms must be > 0")


def validate_reading(reading: SensorReading, catalog: SensorCatalog = CATALOG) -> None:
    spec = catalog.get(reading.sensor_id)
    if spec is None:
        raise ArityMismatch(f"unknown sensor_id {reading.sensor_id}")
    if len(reading.values) != spec.value_arity:
        raise ArityMismatch(
            f"{spec.name}: expected {spec.value_arity} values, got {len(reading.values)}")
    for v in reading.values:
        if spec.value_kind is ValueKind.NUMERIC and not isinstance(v, (int, float)):
            raise ArityMismatch(f"{spec.name}: numeric sensor got {type(v).__name__}")
        if spec.value_kind is ValueKind.TEXT and not isinstance(v, str):
            raise ArityMismatch(f"{spec.name}: text sensor got {type(v).__name__}")
        if spec.value_kind is ValueKind.BOOLEAN and not isinstance(v, bool):
            raise ArityMismatch(f"{spec.name}: boolean sensor got {type(v).__name__}")


# ---------------------------------------------------------------------------
# Record codec

def _write_varint(out: bytearray, value: int) -> None:
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return


def _read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise CorruptPayload("truncated varint")
        byte = buf[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7
        if shift > 63:
            raise CorruptPayload("varint overflow")


def _varint_len(value: int) -> int:
    n = 1
    while value > 0x7F:
        value >>= 7
        n += 1
    return n


def record_size(reading: SensorReading, catalog: SensorCatalog = CATALOG) -> int:
    """Exact serialized size of one reading."""
    spec = catalog.by_id(reading.sensor_id)
    size = _varint_len(reading.sensor_id) + 8
    if spec.value_kind is ValueKind.NUMERIC:
        size += 8 * spec.value_arity
    elif spec.value_kind is ValueKind.BOOLEAN:
        size += spec.value_arity
    else:
        for v in reading.values:
            encoded = len(v.encode("utf-8"))
            size += _varint_len(encoded) + encoded
    return size


def encode_readings(readings, catalog: SensorCatalog = CATALOG) -> bytes:
    out = bytearray()
    for r in readings:
        spec = catalog.by_id(r.sensor_id)
        _write_varint(out, r.sensor_id)
        out += struct.pack("<Q", r.ts_ms)
        if spec.value_kind is ValueKind.NUMERIC:
            out += struct.pack(f"<{spec.value_arity}d", *(float(v) for v in r.values))
        elif spec.value_kind is ValueKind.BOOLEAN:
            out += bytes(1 if v else 0 for v in r.values)
        else:
            for v in r.values:
                encoded = v.encode("utf-8")
                _write_varint(out, len(encoded))
                out += encoded
    return bytes(out)


def decode_readings(buf: bytes, catalog: SensorCatalog = CATALOG) -> list[SensorReading]:
    readings: list[SensorReading] = []
    pos = 0
    n = len(buf)
    while pos < n:
        sensor_id, pos = _read_varint(buf, pos)
        spec = catalog.get(sensor_id)
        if spec is None:
            raise CorruptPayload(f"unknown sensor_id {sensor_id} at offset {pos}")
        if pos + 8 > n:
            raise CorruptPayload("truncated timestamp")
        (ts_ms,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        if ts_ms == 0:
            raise CorruptPayload("zero timestamp")
        if spec.value_kind is ValueKind.NUMERIC:
            end = pos + 8 * spec.value_arity
            if end > n:
                raise CorruptPayload("truncated numeric payload")
            values = struct.unpack_from(f"<{spec.value_arity}d", buf, pos)
            pos = end
        elif spec.value_kind is ValueKind.BOOLEAN:
            end = pos + spec.value_arity
            if end > n:
                raise CorruptPayload("truncated boolean payload")
            values = tuple(b == 1 for b in buf[pos:end])
            pos = end
        else:
            texts = []
            for _ in range(spec.value_arity):
                length, pos = _read_varint(buf, pos)
                end = pos + length
                if end > n:
                    raise CorruptPayload("truncated text payload")
                try:
                    texts.append(buf[pos:end].decode("utf-8"))
                except UnicodeDecodeError as exc:
                    raise CorruptPayload(f"bad utf-8 in text value: {exc}") from None
                pos = end
            values = tuple(texts)
        readings.append(SensorReading(sensor_id, ts_ms, tuple(values)))
    return readings


# ---------------------------------------------------------------------------
# Buffer and chunk

@dataclass
class ReadingBuffer:
    pseudonym_id: str
    pending: list[SensorReading] = field(default_factory=list)
    byte_estimate: int = 0
    opened_at: int = 0

    def __len__(self) -> int:
        return len(self.pending)


def append_reading(buffer: ReadingBuffer, reading: SensorReading,
                   chunk_target_bytes: int, catalog: SensorCatalog = CATALOG) -> bool:
    """Append one reading; returns True when the caller must seal now.

    The triggering reading is part of the batch to be sealed.
    """
    validate_reading(reading, catalog)
    if not buffer.pending:
        buffer.opened_at = reading.ts_ms
    buffer.pending.append(reading)
    buffer.byte_estimate += record_size(reading, catalog)
    return buffer.byte_estimate >= chunk_target_bytes


@dataclass(frozen=True)
class LogChunk:
    chunk_id: bytes            # 16 bytes
    pseudonym_id: str          # 32 hex chars
    reading_count: int
    ts_min: int
    ts_max: int
    plaintext_len: int
    nonce: bytes               # 12 bytes
    ciphertext: bytes          # compressed records, encrypted
    auth_tag: bytes            # 16 bytes

    def header_bytes(self) -> bytes:
        return _HEADER_STRUCT.pack(MAGIC, self.chunk_id, bytes.fromhex(self.pseudonym_id),
                                   self.reading_count, self.ts_min, self.ts_max,
                                   self.plaintext_len, self.nonce)

    def to_bytes(self) -> bytes:
        return self.header_bytes() + self.ciphertext + self.auth_tag


def chunk_from_bytes(data: bytes) -> LogChunk:
    """Parse a chunk file. Malformed framing is an authentication failure."""
    if len(data) < HEADER_LEN + TAG_LEN:
        raise AuthFailure("chunk too short")
    magic, chunk_id, pseudonym, count, ts_min, ts_max, pt_len, nonce = \
        _HEADER_STRUCT.unpack_from(data, 0)
    if magic != MAGIC:
        raise AuthFailure("bad magic")
    body = data[HEADER_LEN:]
    return LogChunk(chunk_id, pseudonym.hex(), count, ts_min, ts_max, pt_len,
                    nonce, body[:-TAG_LEN], body[-TAG_LEN:])


def seal_chunk(buffer: ReadingBuffer, key: bytes, compress_level: int = 6) -> LogChunk:
    """Seal the buffer into an encrypted chunk and empty it.

    Readings are sorted by (ts_ms, sensor_id); the header is bound as
    associated data so it cannot be swapped onto another payload.
    """
    if not buffer.pending:
        raise EmptyBuffer("nothing to seal")
    if len(key) != 32:
        raise ValueError("device key must be 32 bytes")
    readings = sorted(buffer.pending, key=lambda r: (r.ts_ms, r.sensor_id))
    plaintext = encode_readings(readings)
    compressed = zlib.compress(plaintext, compress_level)
    chunk_id = os.urandom(16)
    nonce = os.urandom(NONCE_LEN)
    header = _HEADER_STRUCT.pack(MAGIC, chunk_id, bytes.fromhex(buffer.pseudonym_id),
                                 len(readings), readings[0].ts_ms, readings[-1].ts_ms,
                                 len(plaintext), nonce)
    sealed = AESGCM(key).encrypt(nonce, compressed, header)
    buffer.pending = []
    buffer.byte_estimate = 0
    buffer.opened_at = 0
    return LogChunk(chunk_id, buffer.pseudonym_id, len(readings),
                    readings[0].ts_ms, readings[-1].ts_ms, len(plaintext),
                    nonce, sealed[:-TAG_LEN], sealed[-TAG_LEN:])


def open_chunk(chunk: LogChunk, key: bytes,
               catalog: SensorCatalog = CATALOG) -> list[SensorReading]:
    """Authenticate, decompress and decode a chunk.

    Authentication (tag + header binding) happens before any decompression.
    """
    if len(key) != 32:
        raise ValueError("device key must be 32 bytes")
    try:
        compressed = AESGCM(key).decrypt(chunk.nonce, chunk.ciphertext + chunk.auth_tag,
                                         chunk.header_bytes())
    except InvalidTag:
        raise AuthFailure("chunk authentication failed") from None
    try:
        plaintext = zlib.decompress(compressed)
    except zlib.error as exc:
        raise CorruptPayload(f"decompression failed: {exc}") from None
    if len(plaintext) != chunk.plaintext_len:
        raise CorruptPayload(
            f"plaintext length {len(plaintext)} != header {chunk.plaintext_len}")
    readings = decode_readings(plaintext, catalog)
    if len(readings) != chunk.reading_count:
        raise CountMismatch(
            f"decoded {len(readings)} readings, header says {chunk.reading_count}")
    for r in readings:
        if not chunk.ts_min <= r.ts_ms <= chunk.ts_max:
            raise CorruptPayload(
                f"reading at {r.ts_ms} outside header range [{chunk.ts_min}, {chunk.ts_max}]")
    return readings


def verify_chunk(chunk: LogChunk, key: bytes,
                 catalog: SensorCatalog = CATALOG) -> tuple[int, tuple[int, int]]:
    """Validate a chunk without retaining the payload.

    Returns (reading_count, (ts_min, ts_max)). Raises the same errors as
    open_chunk; never mutates its inputs.
    """
    readings = open_chunk(chunk, key, catalog)
    return len(readings), (chunk.ts_min, chunk.ts_max)
