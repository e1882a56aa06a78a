"""Densely packed plaintext and ciphertext batches.

Both batch kinds share the same shape discipline: a flat row-major payload
whose length equals the product of the shape dims, and either one shared
exponent or one exponent per element. Batches are immutable value objects;
operators always build new ones.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import encoding
from .encoding import EncodedNumber
from .paillier import PublicKey


class ShapeMismatch(ValueError):
    pass


class ExponentMismatch(ValueError):
    pass


class KeyMismatch(ValueError):
    pass


def _shape_count(shape: tuple[int, ...]) -> int:
    count = 1
    for dim in shape:
        count *= dim
    return count


def _validate(batch, limit: int, what: str) -> None:
    if len(batch.shape) not in (1, 2) or any(d < 0 for d in batch.shape):
        raise ShapeMismatch(f"bad shape {batch.shape}")
    count = _shape_count(batch.shape)
    values = batch.mantissas if what == "mantissa" else batch.payload
    if len(values) != count:
        raise ShapeMismatch(
            f"payload length {len(values)} does not match shape {batch.shape}"
        )
    if batch.shared_exponent:
        if len(batch.exponents) != 1:
            raise ExponentMismatch("shared-exponent batch must carry exactly one exponent")
    elif len(batch.exponents) != count:
        raise ExponentMismatch("per-element batch needs one exponent per element")
    for i, v in enumerate(values):
        if not 0 <= v < limit:
            raise ValueError(f"element {i}: {what} {v} out of range")


@dataclass(frozen=True)
class PlaintextBatch:
    """Encoded (not encrypted) values packed for batch operators."""

    key: PublicKey
    shape: tuple[int, ...]
    exponents: tuple[int, ...]
    mantissas: tuple[int, ...]
    shared_exponent: bool = True

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(self.shape))
        object.__setattr__(self, "exponents", tuple(self.exponents))
        object.__setattr__(self, "mantissas", tuple(self.mantissas))
        _validate(self, self.key.n, "mantissa")

    @property
    def count(self) -> int:
        return _shape_count(self.shape)

    def exponent_at(self, i: int) -> int:
        return self.exponents[0] if self.shared_exponent else self.exponents[i]

    def element(self, i: int) -> EncodedNumber:
        return EncodedNumber(self.mantissas[i], self.exponent_at(i))


@dataclass(frozen=True)
class CiphertextBatch:
    """Raw ciphertext values packed for batch operators.

    Exponent metadata travels with the payload so decryption can place the
    decoded mantissas back on the right grid.
    """

    key: PublicKey
    shape: tuple[int, ...]
    exponents: tuple[int, ...]
    payload: tuple[int, ...]
    shared_exponent: bool = True
    obfuscated: bool = True

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(self.shape))
        object.__setattr__(self, "exponents", tuple(self.exponents))
        object.__setattr__(self, "payload", tuple(self.payload))
        _validate(self, self.key.n_squared, "ciphertext")

    @property
    def count(self) -> int:
        return _shape_count(self.shape)

    def exponent_at(self, i: int) -> int:
        return self.exponents[0] if self.shared_exponent else self.exponents[i]


def encode_batch(pk: PublicKey, values, shape: tuple[int, ...] | None = None,
                 target_exponent: int | None = None) -> PlaintextBatch:
    """Encode a flat or nested sequence with one shared exponent.

    Without an explicit target the shared exponent is the minimum of the
    per-value exact exponents, so plain doubles still encode exactly.
    """
    flat, inferred = _flatten(values)
    if shape is None:
        shape = inferred
    if target_exponent is None:
        target_exponent = min((encoding.exact_exponent(v) for v in flat), default=0)
    mantissas = tuple(encoding.encode(pk, v, target_exponent).mantissa for v in flat)
    return PlaintextBatch(pk, tuple(shape), (target_exponent,), mantissas, True)


def decode_batch(pk: PublicKey, batch: PlaintextBatch) -> list[float]:
    return [encoding.decode(pk, batch.element(i)) for i in range(batch.count)]


def _flatten(values) -> tuple[list, tuple[int, ...]]:
    values = list(values)
    if values and isinstance(values[0], (list, tuple)):
        width = len(values[0])
        flat = []
        for row in values:
            if len(row) != width:
                raise ShapeMismatch("ragged rows")
            flat.extend(row)
        return [float(v) for v in flat], (len(values), width)
    return [float(v) for v in values], (len(values),)


def require_same_key(a, b) -> None:
    if a.key != b.key:
        raise KeyMismatch("operands were built under different public keys")


def shared_exponent_of(batch) -> int:
    """The single exponent of a shared-exponent batch (error otherwise)."""
    if batch.shared_exponent:
        return batch.exponents[0]
    first = batch.exponents[0] if batch.exponents else 0
    if any(e != first for e in batch.exponents):
        raise ExponentMismatch("operation requires one shared exponent")
    return first


def plain_rescale(batch: PlaintextBatch, new_exponent: int) -> PlaintextBatch:
    """Exactly re-grid every element onto a finer shared exponent."""
    current = shared_exponent_of(batch)
    if new_exponent == current:
        return batch
    pk = batch.key
    mantissas = tuple(
        encoding.rescale(pk, EncodedNumber(m, current), new_exponent).mantissa
        for m in batch.mantissas
    )
    return PlaintextBatch(pk, batch.shape, (new_exponent,), mantissas, True)


def plain_mul(a: PlaintextBatch, b: PlaintextBatch) -> PlaintextBatch:
    """Element-wise (or scalar-broadcast) encoded product: mantissas multiply
    mod n, exponents add."""
    require_same_key(a, b)
    pk = a.key
    n = pk.n
    if b.count == 1:
        bm = b.mantissas[0]
        be = b.exponent_at(0)
        mantissas = tuple(m * bm % n for m in a.mantissas)
        if a.shared_exponent:
            return PlaintextBatch(pk, a.shape, (a.exponents[0] + be,), mantissas, True)
        exps = tuple(e + be for e in a.exponents)
        return PlaintextBatch(pk, a.shape, exps, mantissas, False)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    mantissas = tuple(x * y % n for x, y in zip(a.mantissas, b.mantissas))
    exps = tuple(a.exponent_at(i) + b.exponent_at(i) for i in range(a.count))
    shared = len(set(exps)) == 1
    return PlaintextBatch(pk, a.shape, exps[:1] if shared else exps, mantissas, shared)


def plain_add(a: PlaintextBatch, b: PlaintextBatch) -> PlaintextBatch:
    """Element-wise encoded sum after exact alignment to the finer exponent."""
    require_same_key(a, b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    target = min(shared_exponent_of(a), shared_exponent_of(b))
    a = plain_rescale(a, target)
    b = plain_rescale(b, target)
    n = a.key.n
    mantissas = tuple((x + y) % n for x, y in zip(a.mantissas, b.mantissas))
    return PlaintextBatch(a.key, a.shape, (target,), mantissas, True)
