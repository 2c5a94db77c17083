"""
BLS12-381 group helpers on top of py_ecc.

All scalar multiplications and pairings go through this module so that the
operation counter reflects the real work done by a signer or verifier.
"""
from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, asdict
from functools import lru_cache
from typing import Iterable, Tuple

from py_ecc.bls.g2_primitives import (
    G1_to_pubkey,
    G2_to_signature,
    pubkey_to_G1,
    signature_to_G2,
)
from py_ecc.bls.hash_to_curve import hash_to_G1
from py_ecc.optimized_bls12_381 import (
    FQ12,
    G1,
    G2,
    Z1,
    Z2,
    add,
    curve_order,
    eq,
    final_exponentiate,
    is_inf,
    multiply,
    neg,
    pairing,
)

from ..core.errors import DecodeError

G1_BYTES = 48
G2_BYTES = 96

__all__ = [
    "G1", "G2", "Z1", "Z2", "add", "neg", "eq", "is_inf", "curve_order",
    "g1_mul", "g2_mul", "hash_g1", "hash_to_scalar", "pairing_product_is_one",
    "gt_pairing", "gt_multi_pairing", "gt_bytes", "encode_g1", "decode_g1", "encode_g2", "decode_g2",
    "random_scalar", "OPS", "OperationCounter", "sum_points",
]


@dataclass
class OperationCounter:
    """Counts group work: exponentiations in G1/G2/GT, pairings and hashes to G1"""
    g1_exp: int = 0
    g2_exp: int = 0
    gt_exp: int = 0
    pairings: int = 0
    hash_to_group: int = 0

    @property
    def exponentiations(self) -> int:
        return self.g1_exp + self.g2_exp + self.gt_exp

    def reset(self) -> None:
        self.g1_exp = self.g2_exp = self.gt_exp = self.pairings = self.hash_to_group = 0

    def snapshot(self) -> dict:
        data = asdict(self)
        data["exponentiations"] = self.exponentiations
        return data


OPS = OperationCounter()


def g1_mul(point, scalar: int):
    OPS.g1_exp += 1
    return multiply(point, scalar % curve_order)


def g2_mul(point, scalar: int):
    OPS.g2_exp += 1
    return multiply(point, scalar % curve_order)


def sum_points(points: Iterable, zero):
    acc = zero
    for p in points:
        acc = add(acc, p)
    return acc


@lru_cache(maxsize=16384)
def _hash_g1_cached(message: bytes, dst: bytes):
    return hash_to_G1(message, dst, hashlib.sha256)


def hash_g1(message: bytes, dst: bytes):
    OPS.hash_to_group += 1
    return _hash_g1_cached(bytes(message), dst)


def hash_to_scalar(*parts: bytes) -> int:
    h = hashlib.sha512()
    for part in parts:
        h.update(len(part).to_bytes(4, "big"))
        h.update(part)
    return int.from_bytes(h.digest(), "big") % curve_order


def random_scalar(rng: random.Random) -> int:
    return rng.randrange(1, curve_order)


def gt_pairing(p_g1, q_g2):
    """Full pairing e(P, Q) with P in G1 and Q in G2"""
    OPS.pairings += 1
    return pairing(q_g2, p_g1)


def pairing_product_is_one(pairs: Iterable[Tuple[object, object]]) -> bool:
    """
    Check prod e(P_i, Q_i) == 1 with one shared final exponentiation.

    Args:
        pairs: (G1 point, G2 point) tuples
    """
    acc = FQ12.one()
    for p_g1, q_g2 in pairs:
        if is_inf(p_g1) or is_inf(q_g2):
            continue
        OPS.pairings += 1
        acc = acc * pairing(q_g2, p_g1, final_exponentiate=False)
    return final_exponentiate(acc) == FQ12.one()


def gt_multi_pairing(pairs: Iterable[Tuple[object, object]]):
    """prod e(P_i, Q_i) as a GT element, sharing one final exponentiation"""
    acc = FQ12.one()
    for p_g1, q_g2 in pairs:
        if is_inf(p_g1) or is_inf(q_g2):
            continue
        OPS.pairings += 1
        acc = acc * pairing(q_g2, p_g1, final_exponentiate=False)
    return final_exponentiate(acc)


def gt_bytes(x) -> bytes:
    return b"".join(int(c).to_bytes(48, "big") for c in x.coeffs)


def encode_g1(point) -> bytes:
    return bytes(G1_to_pubkey(point))


def encode_g2(point) -> bytes:
    return bytes(G2_to_signature(point))


def decode_g1(data: bytes):
    return _decode_g1(bytes(data))


@lru_cache(maxsize=65536)
def _decode_g1(data: bytes):
    if len(data) != G1_BYTES:
        raise DecodeError(f"G1 encoding must be {G1_BYTES} bytes, got {len(data)}")
    try:
        return pubkey_to_G1(data)
    except (ValueError, AssertionError) as e:
        raise DecodeError(f"invalid G1 point: {e}") from e


def decode_g2(data: bytes):
    return _decode_g2(bytes(data))


@lru_cache(maxsize=65536)
def _decode_g2(data: bytes):
    if len(data) != G2_BYTES:
        raise DecodeError(f"G2 encoding must be {G2_BYTES} bytes, got {len(data)}")
    try:
        return signature_to_G2(data)
    except (ValueError, AssertionError) as e:
        raise DecodeError(f"invalid G2 point: {e}") from e
