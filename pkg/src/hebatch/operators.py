"""Performance-critical homomorphic operators over packed batches.

Every operator runs its element kernel through an ExecutionBackend and is
bit-deterministic: for fixed inputs (and a fixed rng seed where randomness
is involved) the naive and parallel backends produce identical payloads.

Scalar multiplication by a negative encoded value exponentiates the
modular inverse of the ciphertext by the small complement n - k instead of
raising to the full-width residue k; the decrypted result is unchanged and
the exponent stays the size of the magnitude being multiplied.
"""

from __future__ import annotations

import random

import gmpy2

from . import encoding
from .backends import ExecutionBackend, NaiveBackend
from .batches import (
    CiphertextBatch,
    ExponentMismatch,
    PlaintextBatch,
    ShapeMismatch,
    plain_rescale,
    require_same_key,
    shared_exponent_of,
)
from .paillier import PrivateKey, PublicKey, draw_unit

_DEFAULT_BACKEND = NaiveBackend()

OPERATOR_NAMES = ("encode", "decode", "henc", "hdec", "hmul", "hadd", "hmatmul", "hsum")


# --- element kernels (module level so the process pool can import them) ---

def _k_encrypt(common, items):
    n, n2 = common
    return [int((1 + m * n) * gmpy2.powmod(r, n, n2) % n2) for m, r in items]


def _k_obfuscate(common, items):
    n, n2 = common
    return [int(c * gmpy2.powmod(r, n, n2) % n2) for c, r in items]


def _k_decrypt(common, items):
    p, q, p2, q2, hp, hq, q_inv = common
    out = []
    for c in items:
        mp = (int(gmpy2.powmod(c, p - 1, p2)) - 1) // p * hp % p
        mq = (int(gmpy2.powmod(c, q - 1, q2)) - 1) // q * hq % q
        out.append(mq + q * ((mp - mq) * q_inv % p))
    return out


def _pow_scalar(c, k, n, n2, neg_band):
    if k > neg_band:
        return gmpy2.powmod(gmpy2.invert(c, n2), n - k, n2)
    return gmpy2.powmod(c, k, n2)


def _k_mul(common, items):
    n, n2, neg_band = common
    return [int(_pow_scalar(c, k, n, n2, neg_band)) for c, k in items]


def _k_add(common, items):
    n2 = common
    return [int(gmpy2.mpz(a) * b % n2) for a, b in items]


def _k_product(common, items):
    n2 = common
    out = []
    for values in items:
        acc = gmpy2.mpz(1)
        for v in values:
            acc = acc * v % n2
        out.append(int(acc))
    return out


def _k_dot(common, items):
    n, n2, neg_band, rows, cols = common
    out = []
    for i, j in items:
        acc = gmpy2.mpz(1)
        for c, k in zip(rows[i], cols[j]):
            acc = acc * _pow_scalar(c, k, n, n2, neg_band) % n2
        out.append(int(acc))
    return out


def _k_encode(common, items):
    pk, exponent = common
    return [encoding.encode(pk, v, exponent).mantissa for v in items]


def _k_decode(common, items):
    pk, exponent = common
    return [encoding.decode(pk, encoding.EncodedNumber(m, exponent)) for m in items]


# --- batch operators ---

def batch_encode(pk: PublicKey, values, exponent: int,
                 backend: ExecutionBackend = _DEFAULT_BACKEND) -> PlaintextBatch:
    """Shared-exponent bulk encode, dispatched like any other operator."""
    values = list(values)
    mantissas = backend.run(_k_encode, (pk, exponent), values)
    return PlaintextBatch(pk, (len(values),), (exponent,), tuple(mantissas), True)


def batch_decode(pk: PublicKey, batch: PlaintextBatch,
                 backend: ExecutionBackend = _DEFAULT_BACKEND) -> list[float]:
    """Shared-exponent bulk decode, dispatched like any other operator."""
    exponent = shared_exponent_of(batch)
    return backend.run(_k_decode, (pk, exponent), list(batch.mantissas))


def batch_encrypt(pk: PublicKey, plain: PlaintextBatch, rng: random.Random,
                  backend: ExecutionBackend = _DEFAULT_BACKEND) -> CiphertextBatch:
    """Element-wise encryption with an independent obfuscation factor each.

    The factors are drawn from `rng` in element order before dispatch, so
    output bits depend only on the seed, never on the backend.
    """
    if plain.key != pk:
        raise ValueError("plaintext batch was encoded under a different key")
    items = [(m, draw_unit(pk.n, rng)) for m in plain.mantissas]
    payload = backend.run(_k_encrypt, (pk.n, pk.n_squared), items)
    return CiphertextBatch(pk, plain.shape, plain.exponents, tuple(payload),
                           plain.shared_exponent, obfuscated=True)


def batch_obfuscate(pk: PublicKey, cipher: CiphertextBatch, rng: random.Random,
                    backend: ExecutionBackend = _DEFAULT_BACKEND) -> CiphertextBatch:
    """Re-randomize every element before it leaves the local party."""
    items = [(c, draw_unit(pk.n, rng)) for c in cipher.payload]
    payload = backend.run(_k_obfuscate, (pk.n, pk.n_squared), items)
    return CiphertextBatch(pk, cipher.shape, cipher.exponents, tuple(payload),
                           cipher.shared_exponent, obfuscated=True)


def batch_decrypt(sk: PrivateKey, cipher: CiphertextBatch,
                  backend: ExecutionBackend = _DEFAULT_BACKEND,
                  min_exponent: int = encoding.DEFAULT_MIN_EXPONENT) -> PlaintextBatch:
    """Element-wise decryption; exponents are preserved unless they sank
    below the floor, in which case the plaintext side renormalizes."""
    pk = sk.public_key
    if cipher.key != pk:
        raise ValueError("ciphertext batch does not belong to this private key")
    common = (sk.p, sk.q, sk._p_squared, sk._q_squared, sk._hp, sk._hq, sk._q_inv_p)
    mantissas = backend.run(_k_decrypt, common, list(cipher.payload))
    plain = PlaintextBatch(pk, cipher.shape, cipher.exponents, tuple(mantissas),
                           cipher.shared_exponent)
    if min(plain.exponents) >= min_exponent:
        return plain
    renorm = [encoding.renormalize(pk, plain.element(i), min_exponent)
              for i in range(plain.count)]
    exps = tuple(e.exponent for e in renorm)
    shared = len(set(exps)) == 1
    return PlaintextBatch(pk, plain.shape, exps[:1] if shared else exps,
                          tuple(e.mantissa for e in renorm), shared)


def _require_added_exponents(a: CiphertextBatch, b) -> tuple[tuple[int, ...], bool]:
    if a.shared_exponent and b.shared_exponent:
        if a.exponents[0] != b.exponents[0]:
            raise ExponentMismatch(
                f"ciphertext exponents differ ({a.exponents[0]} vs {b.exponents[0]}); "
                "align at encode time"
            )
        return a.exponents, True
    for i in range(a.count):
        if a.exponent_at(i) != b.exponent_at(i):
            raise ExponentMismatch(f"element {i}: exponents differ; align at encode time")
    return a.exponents, a.shared_exponent


def batch_add(pk: PublicKey, a: CiphertextBatch, b,
              backend: ExecutionBackend = _DEFAULT_BACKEND) -> CiphertextBatch:
    """Element-wise homomorphic sum.

    The right operand may be a PlaintextBatch: it is aligned down to the
    ciphertext exponent (exact) and lifted with the deterministic g^m form,
    which costs no modular exponentiation. Ciphertext operands must already
    share the left operand's exponents; implicit ciphertext rescaling would
    silently drop precision, so it is an error instead.
    """
    require_same_key(a, b)
    if isinstance(b, PlaintextBatch):
        if b.count == 1 and a.count != 1:
            b = PlaintextBatch(pk, a.shape, b.exponents, b.mantissas * a.count,
                               b.shared_exponent)
        if a.shape != b.shape:
            raise ShapeMismatch(f"{a.shape} vs {b.shape}")
        target = shared_exponent_of(a) if a.shared_exponent else None
        if target is None:
            raise ExponentMismatch("plaintext addition needs a shared-exponent ciphertext")
        if shared_exponent_of(b) < target:
            raise ExponentMismatch(
                f"plaintext exponent {b.exponents[0]} finer than ciphertext {target}; "
                "encode the ciphertext side at least as fine"
            )
        b = plain_rescale(b, target)
        n, n2 = pk.n, pk.n_squared
        items = [(c, (1 + m * n) % n2) for c, m in zip(a.payload, b.mantissas)]
        payload = backend.run(_k_add, n2, items)
        return CiphertextBatch(pk, a.shape, a.exponents, tuple(payload),
                               a.shared_exponent, a.obfuscated)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    exps, shared = _require_added_exponents(a, b)
    payload = backend.run(_k_add, pk.n_squared, list(zip(a.payload, b.payload)))
    return CiphertextBatch(pk, a.shape, exps, tuple(payload), shared,
                           a.obfuscated or b.obfuscated)


def batch_mul_plain(pk: PublicKey, a: CiphertextBatch, k: PlaintextBatch,
                    backend: ExecutionBackend = _DEFAULT_BACKEND) -> CiphertextBatch:
    """Element-wise scalar multiplication; result exponents are the sums.

    k may be a scalar (count 1, broadcast to every element) or a row
    vector broadcast across the rows of a 2-D ciphertext batch.
    """
    require_same_key(a, k)
    if k.count == 1:
        pairs = [(c, k.mantissas[0]) for c in a.payload]
        exps = (tuple(e + k.exponent_at(0) for e in a.exponents), a.shared_exponent)
    elif k.shape == a.shape:
        pairs = list(zip(a.payload, k.mantissas))
        if a.shared_exponent and k.shared_exponent:
            exps = ((a.exponents[0] + k.exponents[0],), True)
        else:
            exps = (tuple(a.exponent_at(i) + k.exponent_at(i) for i in range(a.count)), False)
    elif len(a.shape) == 2 and k.shape == (a.shape[1],):
        cols = a.shape[1]
        pairs = [(c, k.mantissas[i % cols]) for i, c in enumerate(a.payload)]
        if a.shared_exponent and k.shared_exponent:
            exps = ((a.exponents[0] + k.exponents[0],), True)
        else:
            exps = (tuple(a.exponent_at(i) + k.exponent_at(i % cols)
                          for i in range(a.count)), False)
    else:
        raise ShapeMismatch(f"cannot broadcast {k.shape} across {a.shape}")
    payload = backend.run(_k_mul, (pk.n, pk.n_squared, pk.n - pk.max_int), pairs)
    return CiphertextBatch(pk, a.shape, exps[0], tuple(payload), exps[1], a.obfuscated)


def batch_sum(pk: PublicKey, a: CiphertextBatch, axis: int | None = None,
              backend: ExecutionBackend = _DEFAULT_BACKEND) -> CiphertextBatch:
    """Modular-product reduction; decrypts to the plaintext sum.

    Modular multiplication is exact, so any reduction order yields the
    same ciphertext bits; a full reduction is split into per-worker
    partial products so the parallel backend stays balanced.
    """
    exponent = shared_exponent_of(a)
    if axis is None:
        workers = max(backend.worker_count, 1)
        if workers > 1 and a.count > workers:
            chunk = -(-a.count // workers)
            parts = [tuple(a.payload[i:i + chunk])
                     for i in range(0, a.count, chunk)]
            partials = backend.run(_k_product, pk.n_squared, parts)
            total = 1
            n2 = pk.n_squared
            for p in partials:
                total = total * p % n2
            return CiphertextBatch(pk, (1,), (exponent,), (int(total),), True,
                                   a.obfuscated)
        groups = [tuple(a.payload)]
        shape: tuple[int, ...] = (1,)
    elif len(a.shape) != 2:
        raise ShapeMismatch("axis reduction requires a 2-D batch")
    elif axis == 0:
        rows, cols = a.shape
        groups = [tuple(a.payload[r * cols + c] for r in range(rows)) for c in range(cols)]
        shape = (cols,)
    elif axis == 1:
        rows, cols = a.shape
        groups = [tuple(a.payload[r * cols + c] for c in range(cols)) for r in range(rows)]
        shape = (rows,)
    else:
        raise ValueError(f"bad axis {axis}")
    payload = backend.run(_k_product, pk.n_squared, groups)
    return CiphertextBatch(pk, shape, (exponent,), tuple(payload), True, a.obfuscated)


def batch_matmul(pk: PublicKey, a: CiphertextBatch, x: PlaintextBatch,
                 backend: ExecutionBackend = _DEFAULT_BACKEND) -> CiphertextBatch:
    """Encrypted-left times plaintext-right matrix product.

    result[i][j] decrypts to sum_t a[i][t] * x[t][j]; each output element
    is a scalar-multiplication pass followed by a modular-product reduction.
    """
    require_same_key(a, x)
    a_shape = a.shape if len(a.shape) == 2 else (1, a.shape[0])
    if len(x.shape) != 2:
        raise ShapeMismatch("right operand must be 2-D")
    k_rows, inner = a_shape
    if x.shape[0] != inner:
        raise ShapeMismatch(f"inner dims disagree: {a_shape} x {x.shape}")
    d = x.shape[1]
    ea = shared_exponent_of(a)
    ex = shared_exponent_of(x)
    rows = tuple(tuple(a.payload[i * inner + t] for t in range(inner)) for i in range(k_rows))
    cols = tuple(tuple(x.mantissas[t * d + j] for t in range(inner)) for j in range(d))
    common = (pk.n, pk.n_squared, pk.n - pk.max_int, rows, cols)
    items = [(i, j) for i in range(k_rows) for j in range(d)]
    payload = backend.run(_k_dot, common, items)
    shape = (k_rows, d) if len(a.shape) == 2 else (d,)
    return CiphertextBatch(pk, shape, (ea + ex,), tuple(payload), True, a.obfuscated)
