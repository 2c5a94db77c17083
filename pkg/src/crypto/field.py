"""
Field arithmetic for the two fields used by TrustSAS.

GF(2^8) with reduction polynomial x^8+x^4+x^3+x+1 backs the PIR scheme;
addition is XOR and multiplication is table driven. The prime scalar field
of BLS12-381 backs threshold signatures and credentials.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np
from py_ecc.optimized_bls12_381 import curve_order

from ..core.errors import ContractViolation, ParameterError

GF256_POLY = 0x11B
_POLY_REDUCED = 0x1B
SCALAR_ORDER = curve_order


class FieldId(Enum):
    GF256 = "gf256"
    SCALAR = "bls12_381_scalar"

    @property
    def size(self) -> int:
        return 256 if self is FieldId.GF256 else SCALAR_ORDER


def gf_mul_slow(a: int, b: int) -> int:
    """Carry-less multiply with on-the-fly reduction. Used to build the tables."""
    res = 0
    while b:
        if b & 1:
            res ^= a
        hi = a & 0x80
        a = (a << 1) & 0xFF
        if hi:
            a ^= _POLY_REDUCED
        b >>= 1
    return res


def _build_tables():
    exp = np.zeros(512, dtype=np.uint8)
    log = np.zeros(256, dtype=np.int32)
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x = gf_mul_slow(x, 0x03)
    exp[255:510] = exp[0:255]
    a = np.arange(256)
    la = log[a]
    mul = exp[(la[:, None] + la[None, :]) % 255].astype(np.uint8)
    mul[0, :] = 0
    mul[:, 0] = 0
    inv = np.zeros(256, dtype=np.uint8)
    inv[1:] = exp[(255 - log[1:]) % 255]
    return exp, log, mul, inv


GF_EXP, GF_LOG, MUL_TABLE, INV_TABLE = _build_tables()


@dataclass(frozen=True)
class FieldElement:
    """An element of GF(2^8) or of the BLS12-381 scalar field, tagged by field"""
    value: int
    field: FieldId

    def __post_init__(self):
        if not 0 <= self.value < self.field.size:
            raise ParameterError(f"{self.value} is not an element of {self.field.value}")

    @classmethod
    def gf256(cls, value: int) -> "FieldElement":
        return cls(value, FieldId.GF256)

    @classmethod
    def scalar(cls, value: int) -> "FieldElement":
        return cls(value % SCALAR_ORDER, FieldId.SCALAR)

    def _check(self, other: "FieldElement") -> None:
        if not isinstance(other, FieldElement) or other.field is not self.field:
            raise ContractViolation(
                f"operands from different fields: {self.field.value} and "
                f"{getattr(getattr(other, 'field', None), 'value', type(other).__name__)}")

    def __add__(self, other: "FieldElement") -> "FieldElement":
        return field_add(self, other)

    def __sub__(self, other: "FieldElement") -> "FieldElement":
        self._check(other)
        if self.field is FieldId.GF256:
            return FieldElement(self.value ^ other.value, self.field)
        return FieldElement((self.value - other.value) % SCALAR_ORDER, self.field)

    def __neg__(self) -> "FieldElement":
        if self.field is FieldId.GF256:
            return self
        return FieldElement((-self.value) % SCALAR_ORDER, self.field)

    def __mul__(self, other: "FieldElement") -> "FieldElement":
        return field_mul(self, other)

    def __truediv__(self, other: "FieldElement") -> "FieldElement":
        return field_mul(self, other.inverse())

    def __pow__(self, exponent: int) -> "FieldElement":
        if self.field is FieldId.SCALAR:
            return FieldElement(pow(self.value, exponent, SCALAR_ORDER), self.field)
        result = FieldElement(1, self.field)
        base = self
        e = exponent % 255 if self.value else exponent
        while e:
            if e & 1:
                result = result * base
            base = base * base
            e >>= 1
        return result

    def inverse(self) -> "FieldElement":
        if self.value == 0:
            raise ZeroDivisionError(f"zero has no inverse in {self.field.value}")
        if self.field is FieldId.GF256:
            return FieldElement(int(INV_TABLE[self.value]), self.field)
        return FieldElement(pow(self.value, -1, SCALAR_ORDER), self.field)

    def is_zero(self) -> bool:
        return self.value == 0

    def __int__(self) -> int:
        return self.value


def field_add(a: FieldElement, b: FieldElement) -> FieldElement:
    a._check(b)
    if a.field is FieldId.GF256:
        return FieldElement(a.value ^ b.value, a.field)
    return FieldElement((a.value + b.value) % SCALAR_ORDER, a.field)


def field_mul(a: FieldElement, b: FieldElement) -> FieldElement:
    """
    Multiply two elements of the same field.

    Raises:
        ContractViolation: operands belong to different fields
    """
    a._check(b)
    if a.field is FieldId.GF256:
        return FieldElement(int(MUL_TABLE[a.value, b.value]), a.field)
    return FieldElement((a.value * b.value) % SCALAR_ORDER, a.field)


def element(value: Union[int, FieldElement], field: FieldId) -> FieldElement:
    if isinstance(value, FieldElement):
        if value.field is not field:
            raise ContractViolation(f"expected {field.value}, got {value.field.value}")
        return value
    if field is FieldId.SCALAR:
        return FieldElement.scalar(value)
    return FieldElement.gf256(value)


def random_element(field: FieldId, rng: random.Random) -> FieldElement:
    return FieldElement(rng.randrange(field.size), field)


# Vectorized GF(2^8) helpers over uint8 arrays

def gf_mul_array(a, b) -> np.ndarray:
    """Element-wise product of broadcastable uint8 arrays"""
    return MUL_TABLE[np.asarray(a, dtype=np.uint8), np.asarray(b, dtype=np.uint8)]


def gf_scale(coeff: int, arr: np.ndarray) -> np.ndarray:
    return MUL_TABLE[coeff][arr]


def gf_poly_eval(coeffs: np.ndarray, x: int) -> np.ndarray:
    """
    Evaluate array-valued polynomials at the scalar point x with Horner's rule.

    Args:
        coeffs: shape (d+1, ...), coeffs[k] multiplies x^k
        x: evaluation point in GF(2^8)
    """
    row = MUL_TABLE[x]
    acc = coeffs[-1].copy()
    for c in coeffs[-2::-1]:
        acc = row[acc] ^ c
    return acc


def gf_matmul(a: np.ndarray, b: np.ndarray, max_block: int = 1 << 22) -> np.ndarray:
    """
    Matrix product over GF(2^8).

    The inner dimension is processed in blocks so the (rows, block, cols)
    lookup tensor stays bounded in memory.
    """
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ParameterError(f"cannot multiply shapes {a.shape} and {b.shape}")
    rows, inner = a.shape
    cols = b.shape[1]
    out = np.zeros((rows, cols), dtype=np.uint8)
    if rows == 0 or cols == 0 or inner == 0:
        return out
    block = max(1, max_block // max(1, rows * cols))
    for k0 in range(0, inner, block):
        k1 = min(inner, k0 + block)
        prod = MUL_TABLE[a[:, k0:k1, None], b[None, k0:k1, :]]
        out ^= np.bitwise_xor.reduce(prod, axis=1)
    return out
