"""
Plain BLS signatures (signature in G1, key in G2).

Used for the DB consortium record key and for validator commit votes.
Verifications are pure and memoized on their encoded inputs.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

from .curve import (
    G2, Z1, Z2, add, decode_g1, decode_g2, encode_g1, encode_g2, g1_mul, g2_mul,
    hash_g1, is_inf, neg, pairing_product_is_one, random_scalar, sum_points,
)
from ..core.errors import DecodeError

RECORD_DST = b"TRUSTSAS-RECORD-BLS12381G1_XMD:SHA-256_SSWU_RO_"
VOTE_DST = b"TRUSTSAS-COMMIT-BLS12381G1_XMD:SHA-256_SSWU_RO_"


@dataclass(frozen=True)
class BlsKeyPair:
    secret: int
    public: bytes  # compressed G2

    @classmethod
    def generate(cls, rng: random.Random) -> "BlsKeyPair":
        sk = random_scalar(rng)
        return cls(sk, encode_g2(g2_mul(G2, sk)))

    def sign(self, message: bytes, dst: bytes) -> bytes:
        return bls_sign(self.secret, message, dst)


def bls_sign(secret: int, message: bytes, dst: bytes) -> bytes:
    return encode_g1(g1_mul(hash_g1(message, dst), secret))


@lru_cache(maxsize=65536)
def bls_verify(public: bytes, message: bytes, signature: bytes, dst: bytes) -> bool:
    """
    Verify a single signature.

    Raises:
        DecodeError: malformed point encoding
    """
    sig = decode_g1(signature)
    pk = decode_g2(public)
    if is_inf(sig) or is_inf(pk):
        return False
    return pairing_product_is_one([(sig, neg(G2)), (hash_g1(message, dst), pk)])


def aggregate_signatures(signatures: Sequence[bytes]) -> bytes:
    return encode_g1(sum_points((decode_g1(s) for s in signatures), Z1))


@lru_cache(maxsize=4096)
def verify_same_message(publics: tuple, message: bytes, aggregate: bytes, dst: bytes) -> bool:
    """Aggregate check for many signers over one message: 2 pairings"""
    try:
        agg_pk = sum_points((decode_g2(p) for p in publics), Z2)
        sig = decode_g1(aggregate)
    except DecodeError:
        return False
    if is_inf(sig) or is_inf(agg_pk):
        return False
    return pairing_product_is_one([(sig, neg(G2)), (hash_g1(message, dst), agg_pk)])


def batch_verify_same_key(public: bytes, messages: Sequence[bytes], signatures: Sequence[bytes],
                          dst: bytes, rng: random.Random) -> bool:
    """
    Batch check of distinct messages signed by one key.

    A random 64-bit linear combination folds every check into one 2-pairing
    equation: e(sum r_i s_i, g2) == e(sum r_i H(m_i), pk).
    """
    if not messages:
        return True
    pk = decode_g2(public)
    if is_inf(pk):
        return False
    sig_acc, hash_acc = Z1, Z1
    for m, s in zip(messages, signatures):
        r = rng.getrandbits(64) | 1
        sig_acc = add(sig_acc, g1_mul(decode_g1(s), r))
        hash_acc = add(hash_acc, g1_mul(hash_g1(m, dst), r))
    return pairing_product_is_one([(sig_acc, neg(G2)), (hash_acc, pk)])
