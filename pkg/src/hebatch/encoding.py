"""Fixed-point codec mapping signed reals onto residues mod n.

A value is represented as mantissa * BASE**exponent with the mantissa
stored as an n-complement residue: mantissas below max_int are positive,
mantissas above n - max_int are negative, and the band in between only
ever appears when homomorphic arithmetic has wrapped around, so decoding
it is an error rather than a silent corruption.

The default exponent is derived from the binary exponent of the input, so
every finite double round-trips exactly: x = M * 2**E with M odd encodes
at exponent floor(E / 4) (BASE is 16 = 2**4).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .paillier import PublicKey

BASE = 16
LOG2_BASE = 4
DEFAULT_MIN_EXPONENT = -32


class FixedPointOverflow(ArithmeticError):
    """Magnitude too large for the key's positive/negative bands, or a
    decoded mantissa fell inside the overflow-detection band."""


@dataclass(frozen=True)
class EncodedNumber:
    """Fixed-point plaintext: mantissa residue plus a signed base-16 exponent."""

    mantissa: int
    exponent: int

    def __post_init__(self):
        if self.mantissa < 0:
            raise ValueError("mantissa must be stored as a non-negative residue")


def exact_exponent(value: float | int) -> int:
    """Largest base-16 exponent at which `value` encodes without rounding."""
    num, den = value.as_integer_ratio()
    if num == 0:
        return 0
    lsb = (num & -num).bit_length() - 1
    e2 = lsb - (den.bit_length() - 1)
    return e2 // LOG2_BASE


def encode(pk: PublicKey, value: float | int,
           target_exponent: int | None = None) -> EncodedNumber:
    """Scale `value` onto the mantissa grid of the given (or derived) exponent.

    With target_exponent=None the exponent is chosen so the encoding is
    exact; an explicit target rounds half-to-even onto that grid.
    """
    if isinstance(value, float) and not math.isfinite(value):
        raise ValueError("cannot encode non-finite values")
    if target_exponent is None:
        exponent = exact_exponent(value)
        num, den = value.as_integer_ratio()
        shift = -LOG2_BASE * exponent - (den.bit_length() - 1)
        # exact by construction of the exponent: num always carries enough
        # trailing zero bits to absorb a negative shift
        scaled = num << shift if shift >= 0 else num >> -shift
    else:
        exponent = int(target_exponent)
        scaled = round(Fraction(value) * Fraction(BASE) ** -exponent)
    if abs(scaled) >= pk.max_int:
        raise FixedPointOverflow(
            f"|{value}| needs a mantissa of {abs(scaled)} at exponent {exponent}, "
            f"beyond max_int={pk.max_int}"
        )
    return EncodedNumber(scaled % pk.n, exponent)


def signed_mantissa(pk: PublicKey, enc: EncodedNumber) -> int:
    """Map the residue back to a signed integer, rejecting the overflow band."""
    m = enc.mantissa
    if m >= pk.n:
        raise ValueError("mantissa exceeds the modulus")
    if m < pk.max_int:
        return m
    if m > pk.n - pk.max_int:
        return m - pk.n
    raise FixedPointOverflow(
        "mantissa falls in the overflow-detection band (homomorphic wrap-around)"
    )


def decode(pk: PublicKey, enc: EncodedNumber) -> float:
    """Signed value mantissa * BASE**exponent as a double."""
    s = signed_mantissa(pk, enc)
    if enc.exponent >= 0:
        return float(s * BASE ** enc.exponent)
    # int/int division rounds correctly even for huge mantissas
    return s / BASE ** -enc.exponent


def rescale(pk: PublicKey, enc: EncodedNumber, new_exponent: int) -> EncodedNumber:
    """Exactly re-grid onto a smaller (finer) exponent."""
    if new_exponent > enc.exponent:
        raise ValueError("can only rescale toward a smaller exponent")
    if new_exponent == enc.exponent:
        return enc
    s = signed_mantissa(pk, enc) * BASE ** (enc.exponent - new_exponent)
    if abs(s) >= pk.max_int:
        raise FixedPointOverflow("rescaled mantissa exceeds max_int")
    return EncodedNumber(s % pk.n, new_exponent)


def align(pk: PublicKey, a: EncodedNumber, b: EncodedNumber) -> tuple[EncodedNumber, EncodedNumber]:
    """Bring both operands onto the smaller of the two exponents, exactly."""
    if a.exponent == b.exponent:
        return a, b
    if a.exponent > b.exponent:
        return rescale(pk, a, b.exponent), b
    return a, rescale(pk, b, a.exponent)


def renormalize(pk: PublicKey, enc: EncodedNumber,
                min_exponent: int = DEFAULT_MIN_EXPONENT) -> EncodedNumber:
    """Lift an exponent that sank below the floor back up after decryption.

    Long multiplication chains keep subtracting from the exponent; the
    ciphertext side cannot rescale without interaction, so the fix happens
    here on the plaintext side: decode to a double and re-encode at the
    exact exponent of that double, clamped to the floor.
    """
    if enc.exponent >= min_exponent:
        return enc
    value = decode(pk, enc)
    return encode(pk, value, max(exact_exponent(value), min_exponent))
