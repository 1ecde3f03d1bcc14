"""CRC generation and verification over GF(2).

Convention: MSB-first bit order, zero initial register, no reflection and no
final XOR.  The remainder is the plain algebraic ``a(x) * x^l mod g(x)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class CrcSpec:
    """Generator polynomial of degree ``degree``.

    ``poly`` holds the coefficients below the leading term, e.g. ``0x1021``
    for CRC-16-CCITT (``x^16 + x^12 + x^5 + 1``).  A value that also carries
    the ``x^l`` term (the usual way CRC-24A is written, ``0x1864CFB``) is
    normalized by dropping it.
    """

    name: str
    poly: int
    degree: int

    def __post_init__(self) -> None:
        if self.degree < 1:
            raise ValueError(f"CRC degree must be positive, got {self.degree}")
        if self.poly >> self.degree == 1:
            object.__setattr__(self, "poly", self.poly ^ (1 << self.degree))
        if not 0 <= self.poly < (1 << self.degree):
            raise ValueError(f"{self.name}: polynomial 0x{self.poly:X} does not fit in {self.degree} bits")
        if self.poly & 1 == 0:
            # without the constant term x divides g and single-bit detection is lost
            raise ValueError(f"{self.name}: polynomial must have a nonzero constant term")

    @property
    def poly_bits(self) -> np.ndarray:
        """Coefficients of ``x^(l-1) .. x^0`` as a bit vector of length ``l``."""
        return int_to_bits(self.poly, self.degree)


CRC6 = CrcSpec("CRC6", 0x27, 6)
CRC11 = CrcSpec("CRC11", 0x307, 11)
CRC16 = CrcSpec("CRC16", 0x1021, 16)
CRC24A = CrcSpec("CRC24A", 0x1864CFB, 24)

BUILTIN_CRCS: tuple[CrcSpec, ...] = (CRC6, CRC11, CRC16, CRC24A)


def as_bits(bits, name: str = "bits") -> np.ndarray:
    """Validate a bit sequence and return it as a 1-D uint8 array."""
    arr = np.asarray(bits)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if arr.size == 0:
        raise ValueError(f"{name} must be nonempty")
    if arr.dtype != np.uint8:
        if not np.all((arr == 0) | (arr == 1)):
            raise ValueError(f"{name} must contain only 0 and 1")
        arr = arr.astype(np.uint8)
    elif arr.max() > 1:
        raise ValueError(f"{name} must contain only 0 and 1")
    return arr


def int_to_bits(value: int, width: int) -> np.ndarray:
    return np.array([(value >> (width - 1 - i)) & 1 for i in range(width)], dtype=np.uint8)


def bits_to_int(bits: np.ndarray) -> int:
    pad = (-bits.size) % 8
    packed = np.packbits(np.concatenate([np.zeros(pad, dtype=np.uint8), bits]))
    return int.from_bytes(packed.tobytes(), "big")


@lru_cache(maxsize=None)
def _table(poly: int, degree: int) -> tuple[int, ...]:
    width = max(degree, 8)
    top = 1 << (width - 1)
    mask = (1 << width) - 1
    p = poly << (width - degree)
    table = []
    for byte in range(256):
        reg = byte << (width - 8)
        for _ in range(8):
            reg = ((reg << 1) ^ p) & mask if reg & top else (reg << 1) & mask
        table.append(reg)
    return tuple(table)


def _remainder_int(bits: np.ndarray, spec: CrcSpec) -> int:
    # Degrees below 8 run as a width-8 register with g(x) * x^(8-l), then shift back.
    width = max(spec.degree, 8)
    table = _table(spec.poly, spec.degree)
    mask = (1 << width) - 1
    shift = width - 8
    pad = (-bits.size) % 8  # leading zeros leave the polynomial unchanged
    data = np.packbits(np.concatenate([np.zeros(pad, dtype=np.uint8), bits])).tobytes()
    reg = 0
    for byte in data:
        reg = ((reg << 8) & mask) ^ table[((reg >> shift) ^ byte) & 0xFF]
    return reg >> (width - spec.degree)


def crc_remainder(payload, spec: CrcSpec) -> np.ndarray:
    """Remainder of ``payload(x) * x^l`` divided by ``g(x)``, as ``l`` bits (table-driven)."""
    bits = as_bits(payload, "payload")
    return int_to_bits(_remainder_int(bits, spec), spec.degree)


def crc_remainder_bitwise(payload, spec: CrcSpec) -> np.ndarray:
    """Shift-register long division, one bit at a time.

    Slow reference for :func:`crc_remainder`.
    """
    bits = as_bits(payload, "payload")
    top = 1 << spec.degree
    reg = 0
    for b in bits.tolist() + [0] * spec.degree:
        reg = (reg << 1) | b
        if reg & top:
            reg ^= top | spec.poly
    return int_to_bits(reg, spec.degree)


def crc_append(payload, spec: CrcSpec) -> np.ndarray:
    bits = as_bits(payload, "payload")
    return np.concatenate([bits, crc_remainder(bits, spec)])


def crc_check(block, spec: CrcSpec) -> bool:
    """True iff ``block(x)`` is divisible by ``g(x)``.

    Since ``block = a * x^l + b`` with ``deg b < l``, this is the same as the
    trailing ``l`` bits equalling the remainder of the leading bits.
    """
    bits = as_bits(block, "block")
    if bits.size <= spec.degree:
        raise ValueError(f"block of {bits.size} bits is too short for {spec.name} (needs > {spec.degree})")
    head, tail = bits[: -spec.degree], bits[-spec.degree :]
    return _remainder_int(head, spec) == bits_to_int(tail)
