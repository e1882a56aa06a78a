"""Arbitrary-precision Paillier cryptosystem.

Key generation, raw encrypt/decrypt over integers in [0, n), and the two
homomorphic identities everything else builds on:

    E(a) * E(b) mod n^2   decrypts to  (a + b) mod n
    E(a) ^ k   mod n^2    decrypts to  (a * k) mod n

Big-integer modular arithmetic is delegated to gmpy2 (GMP), which is the
standard choice for CPU-side Paillier. Timing side channels are not a
design goal here; keys below 1024 bits are refused unless the caller
explicitly opts into insecure sizes for testing.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import NamedTuple

import gmpy2

MIN_KEY_BITS = 16
SECURE_KEY_BITS = 1024
DEFAULT_KEY_BITS = 1024
KEY_FILE_VERSION = 1

_PRIMALITY_ROUNDS = 40


def default_rng(seed: int | None = None) -> random.Random:
    """OS randomness when unseeded, reproducible stream otherwise."""
    if seed is None:
        return random.SystemRandom()
    return random.Random(seed)


class PublicKey:
    """Paillier public key (n, g) with cached derived values.

    g is fixed to n + 1, which turns g^m mod n^2 into (1 + m*n) mod n^2.
    max_int = n // 3 splits the residue ring into a positive band, a
    negative band and an overflow-detection band for the fixed-point codec.
    """

    __slots__ = ("n", "n_squared", "g", "key_bits", "max_int")

    def __init__(self, n: int):
        n = int(n)
        if n < 4:
            raise ValueError("modulus too small")
        self.n = n
        self.n_squared = n * n
        self.g = n + 1
        self.key_bits = n.bit_length()
        self.max_int = n // 3

    def __eq__(self, other):
        return isinstance(other, PublicKey) and self.n == other.n

    def __hash__(self):
        return hash(self.n)

    def __repr__(self):
        return f"PublicKey(key_bits={self.key_bits})"


class PrivateKey:
    """Paillier private key holding the factorization of n.

    lam = lcm(p-1, q-1) and mu = (L(g^lam mod n^2))^-1 mod n are the
    textbook decryption values; decryption itself runs through the CRT
    over p^2 and q^2, which is bit-identical to the L-function form.
    """

    __slots__ = (
        "public_key", "p", "q", "lam", "mu",
        "_p_squared", "_q_squared", "_hp", "_hq", "_q_inv_p",
    )

    def __init__(self, public_key: PublicKey, p: int, q: int):
        p, q = int(p), int(q)
        if p == q:
            raise ValueError("p and q must differ")
        if p * q != public_key.n:
            raise ValueError("p * q does not match the public modulus")
        self.public_key = public_key
        self.p = p
        self.q = q
        self.lam = math.lcm(p - 1, q - 1)
        n, n2 = public_key.n, public_key.n_squared
        self.mu = int(gmpy2.invert(_l_function(gmpy2.powmod(public_key.g, self.lam, n2), n), n))
        self._p_squared = p * p
        self._q_squared = q * q
        self._hp = int(gmpy2.invert(_l_function(gmpy2.powmod(public_key.g, p - 1, self._p_squared), p), p))
        self._hq = int(gmpy2.invert(_l_function(gmpy2.powmod(public_key.g, q - 1, self._q_squared), q), q))
        self._q_inv_p = int(gmpy2.invert(q, p))

    def __eq__(self, other):
        return isinstance(other, PrivateKey) and (self.p, self.q) == (other.p, other.q)

    def __hash__(self):
        return hash((self.p, self.q))

    def __repr__(self):
        return f"PrivateKey(key_bits={self.public_key.key_bits})"


class KeyPair(NamedTuple):
    public: PublicKey
    private: PrivateKey


@dataclass(frozen=True)
class RawCiphertext:
    """A single Paillier ciphertext value in [0, n^2).

    obfuscated is True once a random r^n factor has been folded in; the
    deterministic (1 + m*n) lift used for plaintext addition is not
    obfuscated and must not leave the local party without re-randomization.
    """

    value: int
    obfuscated: bool = True


def _l_function(u, n) -> int:
    return int((u - 1) // n)


def _probable_prime(bits: int, rng: random.Random) -> int:
    # top two bits set so p*q always reaches the full key width
    high = 3 << (bits - 2)
    while True:
        cand = rng.getrandbits(bits) | high | 1
        if gmpy2.is_prime(cand, _PRIMALITY_ROUNDS):
            return int(cand)


def keypair_from_primes(p: int, q: int) -> KeyPair:
    """Build a keypair from explicit primes (deterministic test keys)."""
    pk = PublicKey(p * q)
    return KeyPair(pk, PrivateKey(pk, p, q))


def keygen(bits: int = DEFAULT_KEY_BITS, rng: random.Random | None = None,
           *, allow_insecure: bool = False) -> KeyPair:
    """Generate a keypair whose modulus has exactly `bits` bits.

    Retries internally on degenerate draws (p == q, short product), so the
    returned keys always satisfy the size invariants. Sizes below 1024 bits
    are for tests only and require allow_insecure=True.
    """
    if bits < MIN_KEY_BITS:
        raise ValueError(f"key size must be at least {MIN_KEY_BITS} bits")
    if bits % 2:
        raise ValueError("key size must be even")
    if bits < SECURE_KEY_BITS and not allow_insecure:
        raise ValueError(
            f"{bits}-bit keys are insecure; pass allow_insecure=True for test keys"
        )
    if rng is None:
        rng = default_rng()
    half = bits // 2
    while True:
        p = _probable_prime(half, rng)
        q = _probable_prime(half, rng)
        if p != q and (p * q).bit_length() == bits:
            return keypair_from_primes(p, q)


def draw_unit(n: int, rng: random.Random) -> int:
    """Random r in (0, n) with gcd(r, n) = 1."""
    while True:
        r = rng.randrange(1, n)
        if math.gcd(r, n) == 1:
            return r


def encrypt_raw(pk: PublicKey, m: int, r: int) -> RawCiphertext:
    """E(m) = g^m * r^n mod n^2 with an explicit obfuscation factor r."""
    n, n2 = pk.n, pk.n_squared
    if not 0 <= m < n:
        raise ValueError("plaintext out of range [0, n)")
    if not 0 < r < n:
        raise ValueError("obfuscation factor out of range (0, n)")
    if math.gcd(r, n) != 1:
        raise ValueError("obfuscation factor shares a factor with n")
    value = int((1 + m * n) * gmpy2.powmod(r, n, n2) % n2)
    return RawCiphertext(value, obfuscated=True)


def lift_raw(pk: PublicKey, m: int) -> RawCiphertext:
    """Deterministic g^m lift (r implicitly 1); used for plaintext addition."""
    if not 0 <= m < pk.n:
        raise ValueError("plaintext out of range [0, n)")
    return RawCiphertext(int((1 + m * pk.n) % pk.n_squared), obfuscated=False)


def decrypt_raw(sk: PrivateKey, c: RawCiphertext) -> int:
    """Recover m in [0, n); CRT-accelerated, bit-identical to the L form."""
    n2 = sk.public_key.n_squared
    if not 0 <= c.value < n2:
        raise ValueError("ciphertext out of range [0, n^2)")
    p, q = sk.p, sk.q
    mp = _l_function(gmpy2.powmod(c.value, p - 1, sk._p_squared), p) * sk._hp % p
    mq = _l_function(gmpy2.powmod(c.value, q - 1, sk._q_squared), q) * sk._hq % q
    return int(mq + q * ((mp - mq) * sk._q_inv_p % p))


def hadd_raw(pk: PublicKey, a: RawCiphertext, b: RawCiphertext) -> RawCiphertext:
    """Ciphertext product: decrypts to (m1 + m2) mod n."""
    n2 = pk.n_squared
    if not (0 <= a.value < n2 and 0 <= b.value < n2):
        raise ValueError("ciphertext out of range for this key")
    return RawCiphertext(int(gmpy2.mpz(a.value) * b.value % n2),
                         obfuscated=a.obfuscated or b.obfuscated)


def hmul_raw(pk: PublicKey, a: RawCiphertext, k: int) -> RawCiphertext:
    """Ciphertext power: decrypts to (m1 * k) mod n."""
    if not 0 <= k < pk.n:
        raise ValueError("scalar out of range [0, n)")
    if not 0 <= a.value < pk.n_squared:
        raise ValueError("ciphertext out of range for this key")
    return RawCiphertext(int(gmpy2.powmod(a.value, k, pk.n_squared)),
                         obfuscated=a.obfuscated and k != 0)


def obfuscate(pk: PublicKey, a: RawCiphertext, rng: random.Random) -> RawCiphertext:
    """Fold in a fresh r^n factor; plaintext is unchanged."""
    if not 0 <= a.value < pk.n_squared:
        raise ValueError("ciphertext out of range for this key")
    r = draw_unit(pk.n, rng)
    value = int(a.value * gmpy2.powmod(r, pk.n, pk.n_squared) % pk.n_squared)
    return RawCiphertext(value, obfuscated=True)


def export_key(key: KeyPair | PublicKey) -> dict:
    """Key-file dict: hex fields, private primes included only for keypairs."""
    if isinstance(key, KeyPair):
        pk = key.public
        out = {
            "version": KEY_FILE_VERSION,
            "key_bits": pk.key_bits,
            "n": format(pk.n, "x"),
            "p": format(key.private.p, "x"),
            "q": format(key.private.q, "x"),
        }
        return out
    return {
        "version": KEY_FILE_VERSION,
        "key_bits": key.key_bits,
        "n": format(key.n, "x"),
    }


def import_key(data: dict) -> KeyPair | PublicKey:
    """Inverse of export_key; validates version and modulus consistency."""
    if data.get("version") != KEY_FILE_VERSION:
        raise ValueError(f"unsupported key file version: {data.get('version')!r}")
    n = int(data["n"], 16)
    pk = PublicKey(n)
    if pk.key_bits != data["key_bits"]:
        raise ValueError("key_bits field does not match the modulus width")
    if "p" in data or "q" in data:
        p, q = int(data["p"], 16), int(data["q"], 16)
        return KeyPair(pk, PrivateKey(pk, p, q))
    return pk
