"""Accelerator-arena simulation: cached intermediates, counted transfers.

The arena plays the role of device memory. Batches move in and out through
upload/download, every crossing is counted in a TransferLedger (bytes are
the wire-format sizes), and operator results can stay resident so chained
calculations never round-trip through the host. Capacity pressure evicts
the least recently used unpinned entries into a host-side spill store, so
eviction is always value-preserving; touching an evicted handle re-uploads
it transparently (and is counted like any other transfer).

The IO claims become testable here as ledger deltas: a cached pipeline
records zero intermediate downloads, an uncached one pays a download and a
re-upload per step.
"""

from __future__ import annotations

import random
import threading
from dataclasses import dataclass, field

from . import operators
from .backends import ExecutionBackend, NaiveBackend
from .batches import CiphertextBatch, PlaintextBatch, encode_batch, plain_mul
from .bufferpool import serialized_size
from .paillier import PublicKey, default_rng


class DeadHandle(RuntimeError):
    """Use (or repeated release) of a handle after release."""


class ArenaCapacityError(RuntimeError):
    """Not enough arena space even after evicting everything unpinned."""


@dataclass
class _Direction:
    count: int = 0
    bytes: int = 0

    def add(self, nbytes: int) -> None:
        self.count += 1
        self.bytes += nbytes


@dataclass
class TransferLedger:
    """Monotone counters for host<->arena traffic and (de)serialization."""

    uploads: _Direction = field(default_factory=_Direction)
    downloads: _Direction = field(default_factory=_Direction)
    serializations: int = 0
    deserializations: int = 0

    def to_json(self) -> dict:
        return {
            "uploads": {"count": self.uploads.count, "bytes": self.uploads.bytes},
            "downloads": {"count": self.downloads.count, "bytes": self.downloads.bytes},
            "serializations": self.serializations,
            "deserializations": self.deserializations,
        }

    def snapshot(self) -> tuple:
        return (self.uploads.count, self.uploads.bytes,
                self.downloads.count, self.downloads.bytes,
                self.serializations, self.deserializations)


_LIVE, _EVICTED, _RELEASED = "live", "evicted", "released"


class ArenaHandle:
    """Descriptor of an arena-resident batch: location plus shape metadata."""

    __slots__ = ("arena", "id", "size_bytes", "shape", "exponents", "key", "kind")

    def __init__(self, arena, handle_id, batch, size_bytes):
        self.arena = arena
        self.id = handle_id
        self.size_bytes = size_bytes
        self.shape = batch.shape
        self.exponents = batch.exponents
        self.key = batch.key
        self.kind = "cipher" if isinstance(batch, CiphertextBatch) else "plain"

    @property
    def live(self) -> bool:
        return self.arena.state_of(self) != _RELEASED

    def __repr__(self):
        return (f"ArenaHandle(id={self.id}, kind={self.kind}, shape={self.shape}, "
                f"{self.arena.state_of(self)})")


class _Entry:
    __slots__ = ("batch", "size_bytes", "last_used", "pinned", "state")

    def __init__(self, batch, size_bytes, tick):
        self.batch = batch
        self.size_bytes = size_bytes
        self.last_used = tick
        self.pinned = 0
        self.state = _LIVE


class Arena:
    """Shared arena service; all metadata mutation is lock-protected."""

    def __init__(self, pk: PublicKey, backend: ExecutionBackend | None = None,
                 rng: random.Random | None = None,
                 capacity_bytes: int | None = None,
                 caching_enabled: bool = True,
                 ledger: TransferLedger | None = None):
        self.pk = pk
        self.backend = backend or NaiveBackend()
        self.rng = rng or default_rng()
        self.capacity_bytes = capacity_bytes
        self.caching_enabled = caching_enabled
        self.ledger = ledger or TransferLedger()
        self._lock = threading.RLock()
        self._entries: dict[int, _Entry] = {}
        self._spill: dict[int, object] = {}
        self._next_id = 0
        self._clock = 0
        self.resident_bytes = 0
        self.released_bytes = 0
        self.evicted_bytes = 0
        self.produced_bytes = 0  # operator results born arena-side

    # -- bookkeeping -------------------------------------------------------

    def _tick(self) -> int:
        self._clock += 1
        return self._clock

    def state_of(self, handle: ArenaHandle) -> str:
        entry = self._entries.get(handle.id)
        return entry.state if entry else _RELEASED

    def check_conservation(self) -> bool:
        """Byte-flow balance: everything that entered the arena (uploads plus
        operator results produced in place) minus regions freed without a
        download equals what is resident plus what eviction sent back."""
        entered = self.ledger.uploads.bytes + self.produced_bytes
        return (entered - self.released_bytes
                == self.resident_bytes + self.evicted_bytes)

    def _batch_size(self, batch) -> int:
        return serialized_size(batch.count, batch.key.key_bits, batch.shared_exponent)

    def _ensure_room(self, needed: int) -> None:
        if self.capacity_bytes is None:
            return
        free = self.capacity_bytes - self.resident_bytes
        if free < needed:
            self.evict_lru(needed - free)

    # -- transfers ---------------------------------------------------------

    def upload(self, batch) -> ArenaHandle:
        """Host -> arena copy; serialization plus the transfer are counted."""
        if batch.key != self.pk:
            raise ValueError("batch does not belong to this arena's key")
        with self._lock:
            size = self._batch_size(batch)
            self._ensure_room(size)
            handle_id = self._next_id
            self._next_id += 1
            self._entries[handle_id] = _Entry(batch, size, self._tick())
            self.resident_bytes += size
            self.ledger.serializations += 1
            self.ledger.uploads.add(size)
            return ArenaHandle(self, handle_id, batch, size)

    def download(self, handle: ArenaHandle):
        """Arena -> host copy; the handle stays live until released."""
        with self._lock:
            entry = self._require(handle)
            self.ledger.downloads.add(entry.size_bytes)
            self.ledger.deserializations += 1
            return entry.batch

    def release(self, handle: ArenaHandle) -> None:
        with self._lock:
            entry = self._entries.get(handle.id)
            if entry is None or entry.state == _RELEASED:
                raise DeadHandle(f"handle {handle.id} was already released")
            if entry.state == _LIVE:
                self.resident_bytes -= entry.size_bytes
                self.released_bytes += entry.size_bytes
            else:  # evicted: arena bytes were reclaimed when it spilled
                self._spill.pop(handle.id, None)
            entry.state = _RELEASED
            entry.batch = None

    def evict_lru(self, needed_bytes: int) -> list[int]:
        """Spill least-recently-used unpinned entries until needed_bytes fit."""
        with self._lock:
            if self.capacity_bytes is None:
                return []
            evicted = []
            while self.capacity_bytes - self.resident_bytes < needed_bytes:
                victims = [(e.last_used, hid) for hid, e in self._entries.items()
                           if e.state == _LIVE and e.pinned == 0]
                if not victims:
                    raise ArenaCapacityError(
                        f"need {needed_bytes} free bytes but everything live is pinned"
                    )
                _, hid = min(victims)
                entry = self._entries[hid]
                self._spill[hid] = entry.batch
                entry.batch = None
                entry.state = _EVICTED
                self.resident_bytes -= entry.size_bytes
                self.evicted_bytes += entry.size_bytes
                self.ledger.downloads.add(entry.size_bytes)
                self.ledger.deserializations += 1
                evicted.append(hid)
            return evicted

    def _require(self, handle: ArenaHandle) -> _Entry:
        entry = self._entries.get(handle.id)
        if entry is None or entry.state == _RELEASED:
            raise DeadHandle(f"handle {handle.id} is dead (released arena region)")
        if entry.state == _EVICTED:
            # transparent restore from the spill store, counted as an upload
            batch = self._spill.pop(handle.id)
            self._ensure_room(entry.size_bytes)
            entry.batch = batch
            entry.state = _LIVE
            self.resident_bytes += entry.size_bytes
            self.ledger.serializations += 1
            self.ledger.uploads.add(entry.size_bytes)
        entry.last_used = self._tick()
        return entry

    # -- execution ---------------------------------------------------------

    def exec_op(self, op: str, inputs, cache_result: bool = True, *, axis=None):
        """Run a batch operator over arena-resident and/or immediate inputs.

        Handle inputs stay put; immediate batches are uploaded for the call
        and released afterwards. With cache_result the output never leaves
        the arena and only a handle comes back; otherwise it is downloaded
        and returned as a batch.
        """
        with self._lock:
            pinned: list[_Entry] = []
            transient: list[ArenaHandle] = []
            try:
                batches = []
                for item in inputs:
                    if isinstance(item, ArenaHandle):
                        entry = self._require(item)
                    else:
                        handle = self.upload(item)
                        transient.append(handle)
                        entry = self._entries[handle.id]
                    entry.pinned += 1
                    pinned.append(entry)
                    batches.append(entry.batch)
                result = self._dispatch(op, batches, axis)
                if cache_result:
                    size = self._batch_size(result)
                    self._ensure_room(size)
                    handle_id = self._next_id
                    self._next_id += 1
                    self._entries[handle_id] = _Entry(result, size, self._tick())
                    self.resident_bytes += size
                    self.produced_bytes += size
                    return ArenaHandle(self, handle_id, result, size)
                self.ledger.downloads.add(self._batch_size(result))
                self.ledger.deserializations += 1
                return result
            finally:
                for entry in pinned:
                    entry.pinned -= 1
                for handle in transient:
                    self.release(handle)

    def _dispatch(self, op, batches, axis):
        pk = self.pk
        if op == "add":
            a, b = batches
            if isinstance(a, PlaintextBatch) and isinstance(b, CiphertextBatch):
                a, b = b, a
            if isinstance(a, CiphertextBatch):
                return operators.batch_add(pk, a, b, self.backend)
            from .batches import plain_add

            return plain_add(a, b)
        if op == "mul":
            a, b = batches
            if isinstance(a, PlaintextBatch) and isinstance(b, CiphertextBatch):
                a, b = b, a
            if isinstance(a, CiphertextBatch):
                return operators.batch_mul_plain(pk, a, b, self.backend)
            return plain_mul(a, b)
        if op == "sum":
            (a,) = batches
            return operators.batch_sum(pk, a, axis, self.backend)
        if op == "matmul":
            a, x = batches
            return operators.batch_matmul(pk, a, x, self.backend)
        if op == "encrypt":
            (a,) = batches
            return operators.batch_encrypt(pk, a, self.rng, self.backend)
        if op == "obfuscate":
            (a,) = batches
            return operators.batch_obfuscate(pk, a, self.rng, self.backend)
        raise ValueError(f"unknown arena operator {op!r}")

    # -- the fused fore-gradient pipeline -----------------------------------

    def run_fore_gradient_pipeline(self, h_logits_host, logits_guest: PlaintextBatch,
                                   label: PlaintextBatch):
        """Eight basic operators computing  [[0.25*(lh + lg) - 0.5*y]].

        Two constant encodes, a plaintext scale of the guest logits, one
        encryption, a ciphertext scale of the host logits, an addition, a
        plaintext scale of the labels and a final addition. With caching on,
        every intermediate stays resident and a handle to the result comes
        back; with caching off each step round-trips through the host and
        the result is returned as a batch.
        """
        pk = self.pk
        host_exp = h_logits_host.exponents[0]
        guest_exp = logits_guest.exponents[0]
        if guest_exp != host_exp:
            raise ValueError(
                f"guest logits exponent {guest_exp} must match host logits {host_exp}; "
                "encode them on the same grid"
            )
        if label.exponents[0] < host_exp:
            raise ValueError("labels must not be encoded finer than the logits")
        quarter = encode_batch(pk, [0.25])
        neg_half = encode_batch(pk, [-0.5])
        if self.caching_enabled:
            return self._pipeline_cached(h_logits_host, logits_guest, label,
                                         quarter, neg_half)
        return self._pipeline_uncached(h_logits_host, logits_guest, label,
                                       quarter, neg_half)

    def _pipeline_cached(self, h_lh, lg, label, quarter, neg_half):
        own_lh = not isinstance(h_lh, ArenaHandle)
        if own_lh:
            h_lh = self.upload(h_lh)
        h_lg = self.upload(lg)
        h_label = self.upload(label)
        h_scaled_guest = self.exec_op("mul", [h_lg, quarter])
        h_enc_guest = self.exec_op("encrypt", [h_scaled_guest])
        self.release(h_scaled_guest)
        self.release(h_lg)
        h_scaled_host = self.exec_op("mul", [h_lh, quarter])
        h_logit_sum = self.exec_op("add", [h_enc_guest, h_scaled_host])
        self.release(h_enc_guest)
        self.release(h_scaled_host)
        h_scaled_label = self.exec_op("mul", [h_label, neg_half])
        self.release(h_label)
        h_fore = self.exec_op("add", [h_logit_sum, h_scaled_label])
        self.release(h_logit_sum)
        self.release(h_scaled_label)
        if own_lh:
            self.release(h_lh)
        return h_fore

    def _pipeline_uncached(self, h_lh, lg, label, quarter, neg_half):
        lh = self.download(h_lh) if isinstance(h_lh, ArenaHandle) else h_lh
        scaled_guest = self.exec_op("mul", [lg, quarter], cache_result=False)
        enc_guest = self.exec_op("encrypt", [scaled_guest], cache_result=False)
        scaled_host = self.exec_op("mul", [lh, quarter], cache_result=False)
        logit_sum = self.exec_op("add", [enc_guest, scaled_host], cache_result=False)
        scaled_label = self.exec_op("mul", [label, neg_half], cache_result=False)
        return self.exec_op("add", [logit_sum, scaled_label], cache_result=False)
