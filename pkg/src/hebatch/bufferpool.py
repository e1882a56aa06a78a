"""Host-side storage optimizer: reusable buffers, aggregation, serialization.

Mini-batch training re-requests buffers of the same handful of sizes every
epoch, so the pool keeps freed buffers in a size-indexed table and hands an
exact-size match straight back instead of allocating. A logical-clock LRU
garbage collector bounds retained bytes; eviction never touches a buffer
that is checked out.

The serialized ciphertext-batch layout is bit-exact and little-endian:

    bytes 0-3    magic "HAFB"
    bytes 4-7    version = 1 (u32)
    bytes 8-15   element count (u64)
    bytes 16-19  key_bits (u32)
    bytes 20-27  shape rows, cols (u32 each; cols = 0 means 1-D)
    byte  28     exponent mode (0 = shared, 1 = per element)
    bytes 29-31  zero padding
    exponents    i32 x (1 or count)
    payload      count words of ceil(2*key_bits/8) bytes, zero-padded high
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass

from .batches import CiphertextBatch, PlaintextBatch, ShapeMismatch, encode_batch
from .paillier import PublicKey

MAGIC = b"HAFB"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQIIIB3x")
HEADER_SIZE = _HEADER.size  # 32


class PoolError(RuntimeError):
    """Misuse of the buffer pool (double free, unknown handle)."""


class SerializationError(ValueError):
    pass


class CorruptHeader(SerializationError):
    pass


class VersionMismatch(SerializationError):
    pass


class TruncatedPayload(SerializationError):
    pass


class UndersizedBuffer(SerializationError):
    pass


class BufferHandle:
    """A checked-out (or pooled) host buffer; one user at a time."""

    __slots__ = ("id", "size_bytes", "data", "available", "last_used", "reuses")

    def __init__(self, handle_id: int, size_bytes: int):
        self.id = handle_id
        self.size_bytes = size_bytes
        self.data = bytearray(size_bytes)
        self.available = False
        self.last_used = 0
        self.reuses = 0

    @property
    def view(self) -> memoryview:
        return memoryview(self.data)

    def __repr__(self):
        state = "free" if self.available else "in-use"
        return f"BufferHandle(id={self.id}, size={self.size_bytes}, {state})"


@dataclass
class PoolStats:
    fresh_allocations: int = 0
    reuse_hits: int = 0
    evictions: int = 0


class BufferPool:
    """Size-indexed reuse table with LRU garbage collection.

    Reuse requires an exact size match (the table is indexed by size, so
    lookup stays O(1); uniform mini-batch sizes make best-fit pointless).
    GC runs synchronously whenever an allocation pushes retained bytes past
    capacity, releasing available buffers oldest-first until back under it.
    """

    def __init__(self, capacity_bytes: int = 1 << 30):
        self.capacity_bytes = capacity_bytes
        self.stats = PoolStats()
        self._lock = threading.RLock()
        self._buffers: dict[int, BufferHandle] = {}
        self._free_by_size: dict[int, list[int]] = {}
        self._clock = 0
        self._next_id = 0
        self._retained_bytes = 0

    def _tick(self) -> int:
        self._clock += 1
        return self._clock

    @property
    def retained_bytes(self) -> int:
        return self._retained_bytes

    def alloc(self, size_bytes: int) -> BufferHandle:
        if size_bytes <= 0:
            raise ValueError("allocation size must be positive")
        with self._lock:
            free_ids = self._free_by_size.get(size_bytes)
            if free_ids:
                handle = self._buffers[free_ids.pop()]
                handle.available = False
                handle.last_used = self._tick()
                handle.reuses += 1
                self.stats.reuse_hits += 1
                return handle
            try:
                handle = BufferHandle(self._next_id, size_bytes)
            except MemoryError as exc:
                raise PoolError(f"cannot allocate {size_bytes} bytes") from exc
            self._next_id += 1
            handle.last_used = self._tick()
            self._buffers[handle.id] = handle
            self._retained_bytes += size_bytes
            self.stats.fresh_allocations += 1
            if self._retained_bytes > self.capacity_bytes:
                self.gc()
            return handle

    def free(self, handle: BufferHandle) -> None:
        with self._lock:
            known = self._buffers.get(handle.id)
            if known is not handle:
                raise PoolError(f"unknown buffer id {handle.id}")
            if handle.available:
                raise PoolError(f"double free of buffer {handle.id}")
            handle.available = True
            handle.last_used = self._tick()
            self._free_by_size.setdefault(handle.size_bytes, []).append(handle.id)
            if self._retained_bytes > self.capacity_bytes:
                self.gc()

    def gc(self) -> list[int]:
        """Release available buffers, least recently used first, until the
        retained total fits capacity. In-use buffers are never released."""
        with self._lock:
            evicted: list[int] = []
            while self._retained_bytes > self.capacity_bytes:
                candidates = [h for h in self._buffers.values() if h.available]
                if not candidates:
                    break
                victim = min(candidates, key=lambda h: h.last_used)
                self._free_by_size[victim.size_bytes].remove(victim.id)
                del self._buffers[victim.id]
                self._retained_bytes -= victim.size_bytes
                self.stats.evictions += 1
                evicted.append(victim.id)
            return evicted


# --- mini-batch aggregation ---

@dataclass(frozen=True)
class AggregatedMiniBatch:
    ids: tuple
    features: PlaintextBatch
    labels: PlaintextBatch | None


class MiniBatchAggregator:
    """Packs per-instance rows into contiguous encoded arrays, once.

    The mini-batch separation is identical across epochs, so the packed
    result is cached by batch id and handed back on every later epoch
    without re-encoding.
    """

    def __init__(self, pk: PublicKey, target_exponent: int | None = None):
        self._pk = pk
        self._target_exponent = target_exponent
        self._cache: dict = {}

    def aggregate(self, batch_id, rows) -> AggregatedMiniBatch:
        cached = self._cache.get(batch_id)
        if cached is not None:
            return cached
        rows = list(rows)
        if not rows:
            raise ValueError("cannot aggregate an empty mini-batch")
        width = len(rows[0][1])
        for rid, features, _ in rows:
            if len(features) != width:
                raise ShapeMismatch(f"row {rid!r}: expected {width} features")
        ids = tuple(r[0] for r in rows)
        features = encode_batch(
            self._pk, [list(r[1]) for r in rows],
            target_exponent=self._target_exponent,
        )
        labels = None
        if rows[0][2] is not None:
            labels = encode_batch(self._pk, [r[2] for r in rows],
                                  target_exponent=self._target_exponent)
        packed = AggregatedMiniBatch(ids, features, labels)
        self._cache[batch_id] = packed
        return packed

    def deaggregate(self, packed: AggregatedMiniBatch):
        from .batches import decode_batch

        flat = decode_batch(self._pk, packed.features)
        rows, width = packed.features.shape
        features = [flat[i * width:(i + 1) * width] for i in range(rows)]
        labels = decode_batch(self._pk, packed.labels) if packed.labels else None
        return packed.ids, features, labels


# --- serialization ---

def word_size(key_bits: int) -> int:
    return -(-2 * key_bits // 8)


def serialized_size(count: int, key_bits: int, shared_exponent: bool) -> int:
    n_exponents = 1 if shared_exponent else count
    return HEADER_SIZE + 4 * n_exponents + count * word_size(key_bits)


@dataclass
class SerializedBatch:
    """A wire-format batch living inside a pooled buffer."""

    buffer: BufferHandle
    length: int

    def to_bytes(self) -> bytes:
        return bytes(self.buffer.view[:self.length])

    @property
    def header(self) -> tuple:
        return parse_header(self.buffer.view[:HEADER_SIZE])


def parse_header(data) -> tuple:
    """(count, key_bits, shape, shared_exponent) after validation."""
    if len(data) < HEADER_SIZE:
        raise CorruptHeader(f"header needs {HEADER_SIZE} bytes, got {len(data)}")
    magic, version, count, key_bits, rows, cols, exp_mode = _HEADER.unpack(bytes(data[:HEADER_SIZE]))
    if magic != MAGIC:
        raise CorruptHeader(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"format version {version}, expected {FORMAT_VERSION}")
    if exp_mode not in (0, 1):
        raise CorruptHeader(f"bad exponent mode {exp_mode}")
    shape = (rows,) if cols == 0 else (rows, cols)
    expected = rows * cols if cols else rows
    if count != expected:
        raise CorruptHeader(f"count {count} does not match shape {shape}")
    return count, key_bits, shape, exp_mode == 0


def serialize(batch: CiphertextBatch, into: BufferHandle) -> SerializedBatch:
    """Write the batch into a pooled buffer; exact layout per module docs."""
    needed = serialized_size(batch.count, batch.key.key_bits, batch.shared_exponent)
    if into.size_bytes < needed:
        raise UndersizedBuffer(f"need {needed} bytes, buffer holds {into.size_bytes}")
    into.view[:needed] = serialize_to_bytes(batch)
    return SerializedBatch(into, needed)


def serialize_to_bytes(batch: CiphertextBatch) -> bytes:
    rows = batch.shape[0]
    cols = batch.shape[1] if len(batch.shape) == 2 else 0
    if len(batch.shape) == 2 and cols == 0:
        raise ShapeMismatch("a 2-D batch with zero columns has no wire representation")
    exp_mode = 0 if batch.shared_exponent else 1
    out = bytearray(_HEADER.pack(MAGIC, FORMAT_VERSION, batch.count,
                                 batch.key.key_bits, rows, cols, exp_mode))
    out += struct.pack(f"<{len(batch.exponents)}i", *batch.exponents)
    word = word_size(batch.key.key_bits)
    for value in batch.payload:
        out += value.to_bytes(word, "little")
    return bytes(out)


def deserialize(source, pk: PublicKey, pool: BufferPool | None = None) -> CiphertextBatch:
    """Exact inverse of serialize.

    `source` may be raw bytes or a SerializedBatch; in the latter case the
    backing buffer is returned to its pool once the batch is rebuilt.
    """
    if isinstance(source, SerializedBatch):
        data = source.buffer.view[:source.length]
        batch = _deserialize_view(data, pk)
        if pool is not None:
            pool.free(source.buffer)
        return batch
    return _deserialize_view(memoryview(bytes(source)), pk)


def _deserialize_view(data, pk: PublicKey) -> CiphertextBatch:
    count, key_bits, shape, shared = parse_header(data)
    if key_bits != pk.key_bits:
        raise SerializationError(
            f"batch was packed under a {key_bits}-bit key, not {pk.key_bits}-bit"
        )
    n_exponents = 1 if shared else count
    word = word_size(key_bits)
    expected_len = HEADER_SIZE + 4 * n_exponents + count * word
    if len(data) != expected_len:
        raise TruncatedPayload(f"expected {expected_len} bytes, got {len(data)}")
    offset = HEADER_SIZE
    exponents = struct.unpack_from(f"<{n_exponents}i", data, offset)
    offset += 4 * n_exponents
    payload = []
    raw = bytes(data[offset:])
    for i in range(count):
        payload.append(int.from_bytes(raw[i * word:(i + 1) * word], "little"))
    return CiphertextBatch(pk, shape, exponents, tuple(payload), shared)
