"""Throughput micro-benchmarks for the eight batch operators.

Methodology: seeded operand batches, a few untimed warmup passes, then the
median wall time of the timed repeats; throughput is instances per second.
For the matrix multiplication the instance unit is output elements (a 1 x 16
encrypted row against a 16 x count plaintext matrix). Ciphertext operands
are drawn from a pool of real encryptions and tiled out to the requested
count: modular-arithmetic cost depends on operand sizes, not values, and
pre-encrypting 10^5 elements would dwarf the measurement itself.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field

from . import operators
from .arena import TransferLedger
from .backends import ExecutionBackend
from .batches import CiphertextBatch, encode_batch
from .paillier import KeyPair, default_rng

ENCRYPT_POOL = 256


@dataclass
class BenchReport:
    operator: str
    backend: str
    count: int
    key_bits: int
    wall_time_s: float
    throughput: float
    ledger: dict = field(default_factory=lambda: TransferLedger().to_json())
    verified: bool | None = None

    def to_json(self) -> dict:
        out = {
            "operator": self.operator,
            "backend": self.backend,
            "count": self.count,
            "key_bits": self.key_bits,
            "wall_time_s": self.wall_time_s,
            "throughput": self.throughput,
            "ledger": self.ledger,
        }
        if self.verified is not None:
            out["verified"] = self.verified
        return out


def _tiled_cipher(keys: KeyPair, count: int, seed: int,
                  exponent: int = -8) -> CiphertextBatch:
    pk = keys.public
    rng = default_rng(seed)
    pool_n = min(count, ENCRYPT_POOL)
    values = [rng.uniform(-100.0, 100.0) for _ in range(pool_n)]
    pool = operators.batch_encrypt(
        pk, encode_batch(pk, values, target_exponent=exponent), default_rng(seed + 1))
    payload = tuple(pool.payload[i % pool_n] for i in range(count))
    return CiphertextBatch(pk, (count,), (exponent,), payload, True)


def _setup(op: str, keys: KeyPair, count: int, seed: int):
    """Returns a zero-argument factory of `run(backend) -> result`."""
    pk = keys.public
    rng = default_rng(seed)
    if op == "encode":
        values = [rng.uniform(-100.0, 100.0) for _ in range(count)]
        return lambda backend: operators.batch_encode(pk, values, -8, backend)
    if op == "decode":
        values = [rng.uniform(-100.0, 100.0) for _ in range(count)]
        plain = encode_batch(pk, values, target_exponent=-8)
        return lambda backend: operators.batch_decode(pk, plain, backend)
    if op == "henc":
        values = [rng.uniform(-100.0, 100.0) for _ in range(count)]
        plain = encode_batch(pk, values, target_exponent=-8)
        return lambda backend: operators.batch_encrypt(pk, plain,
                                                       default_rng(seed + 2), backend)
    if op == "hdec":
        cipher = _tiled_cipher(keys, count, seed)
        return lambda backend: operators.batch_decrypt(keys.private, cipher, backend)
    if op == "hmul":
        cipher = _tiled_cipher(keys, count, seed)
        scalar = encode_batch(pk, [rng.uniform(0.1, 2.0)], target_exponent=-8)
        return lambda backend: operators.batch_mul_plain(pk, cipher, scalar, backend)
    if op == "hadd":
        a = _tiled_cipher(keys, count, seed)
        b = _tiled_cipher(keys, count, seed + 10)
        return lambda backend: operators.batch_add(pk, a, b, backend)
    if op == "hsum":
        cipher = _tiled_cipher(keys, count, seed)
        return lambda backend: operators.batch_sum(pk, cipher, None, backend)
    if op == "hmatmul":
        inner = 16
        a = _tiled_cipher(keys, inner, seed)
        x = encode_batch(pk, [[rng.uniform(-1.0, 1.0) for _ in range(count)]
                              for _ in range(inner)], target_exponent=-8)
        return lambda backend: operators.batch_matmul(pk, a, x, backend)
    raise ValueError(f"unknown operator {op!r}")


def run_benchmark(op: str, keys: KeyPair, count: int, backend: ExecutionBackend,
                  seed: int = 0, warmup: int = 3, repeats: int = 5) -> BenchReport:
    if count < 1:
        raise ValueError("count must be at least 1")
    if op not in operators.OPERATOR_NAMES:
        raise ValueError(f"unknown operator {op!r}; pick one of "
                         f"{', '.join(operators.OPERATOR_NAMES)}")
    run = _setup(op, keys, count, seed)
    for _ in range(warmup):
        run(backend)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        run(backend)
        times.append(time.perf_counter() - t0)
    wall = statistics.median(times)
    return BenchReport(op, backend.name, count, keys.public.key_bits,
                       wall, count / wall)


def verify_backends(op: str, keys: KeyPair, count: int,
                    reference: ExecutionBackend, candidate: ExecutionBackend,
                    seed: int = 0) -> bool:
    """Bit-exact agreement between two backends on identical seeded inputs."""
    ref = _setup(op, keys, count, seed)(reference)
    got = _setup(op, keys, count, seed)(candidate)
    return ref == got
