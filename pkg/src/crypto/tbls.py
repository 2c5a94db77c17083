"""
(t, n)-threshold BLS signatures with a joint-Feldman distributed key generation.

Signature shares live in G1, public keys (y and the per-member z_j) in G2.
"""
from __future__ import annotations

import logging
import random
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

from ..core.errors import DecodeError, DKGFailure, InsufficientSharesError, ParameterError
from .curve import (
    G2, Z1, Z2, add, curve_order, decode_g1, decode_g2, encode_g1, encode_g2, eq,
    g1_mul, g2_mul, hash_g1, is_inf, multiply, neg, pairing_product_is_one, random_scalar,
)
from .field import FieldElement
from .shamir import lagrange_coeffs

logger = logging.getLogger(__name__)

TBLS_DST = b"TRUSTSAS-TBLS-BLS12381G1_XMD:SHA-256_SSWU_RO_"


@dataclass(frozen=True)
class ClusterKeyMaterial:
    """One member's view of a completed DKG"""
    index: int
    t: int
    n: int
    y: bytes
    x_j: int
    z: Dict[int, bytes]
    qualified: Tuple[int, ...]

    @property
    def z_j(self) -> bytes:
        return self.z[self.index]


@dataclass(frozen=True)
class SignatureShare:
    index: int
    sigma: bytes


# DKG messages

@dataclass(frozen=True)
class DealMessage:
    dealer: int
    commitments: Tuple[bytes, ...]


@dataclass(frozen=True)
class ShareMessage:
    dealer: int
    recipient: int
    value: int


@dataclass(frozen=True)
class ComplaintMessage:
    accuser: int
    accused: Tuple[int, ...]


def _horner_g2(points: Sequence, x: int):
    """sum_k x^k * points[k] for a small integer x"""
    acc = Z2
    for p in reversed(points):
        acc = add(multiply(acc, x), p) if x > 1 else add(acc, p)
    return acc


def _eval_poly(coeffs: Sequence[int], x: int) -> int:
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * x + c) % curve_order
    return acc


@lru_cache(maxsize=4096)
def _public_share(commitment_key: Tuple[bytes, ...], index: int) -> bytes:
    points = [decode_g2(c) for c in commitment_key]
    return encode_g2(_horner_g2(points, index))


class DkgParticipant:
    """
    Message-driven joint-Feldman DKG state for a single member.

    Round 1: deal commitments and private shares.
    Round 2: broadcast complaints about silent or inconsistent dealers.
    Finalize: sum qualified shares and derive y and the z-vector.
    """

    def __init__(self, index: int, members: Sequence[int], t: int, rng: random.Random):
        if t < 0 or len(members) < t + 1:
            raise ParameterError(f"DKG needs n >= t+1, got n={len(members)}, t={t}")
        self.index = index
        self.members = tuple(sorted(members))
        self.t = t
        self.rng = rng
        self.deals: Dict[int, DealMessage] = {}
        self.shares: Dict[int, int] = {}
        self.complaints: Dict[int, Tuple[int, ...]] = {}
        self._coeffs: List[int] = []

    def deal(self) -> Tuple[DealMessage, List[ShareMessage]]:
        self._coeffs = [random_scalar(self.rng) for _ in range(self.t + 1)]
        commitments = tuple(encode_g2(g2_mul(G2, a)) for a in self._coeffs)
        shares = [ShareMessage(self.index, j, _eval_poly(self._coeffs, j)) for j in self.members]
        return DealMessage(self.index, commitments), shares

    def receive_deal(self, message: DealMessage) -> None:
        if len(message.commitments) != self.t + 1:
            logger.warning(f"DKG member {self.index}: dealer {message.dealer} sent "
                           f"{len(message.commitments)} commitments, expected {self.t + 1}")
            return
        self.deals[message.dealer] = message

    def receive_share(self, message: ShareMessage) -> None:
        if message.recipient == self.index:
            self.shares[message.dealer] = message.value % curve_order

    def _share_consistent(self, dealer: int) -> bool:
        expected = decode_g2(_public_share(self.deals[dealer].commitments, self.index))
        return eq(g2_mul(G2, self.shares[dealer]), expected)

    def check_shares(self) -> ComplaintMessage:
        """
        Verify every received share against its dealer's commitments.

        A single aggregated check covers all dealers; only when it fails are
        dealers checked one by one.
        """
        dealers = [d for d in self.members if d in self.deals and d in self.shares]
        accused = {d for d in self.members if d not in dealers}
        if dealers:
            total = sum(self.shares[d] for d in dealers) % curve_order
            agg = [Z2] * (self.t + 1)
            for d in dealers:
                for k, c in enumerate(self.deals[d].commitments):
                    agg[k] = add(agg[k], decode_g2(c))
            if not eq(g2_mul(G2, total), _horner_g2(agg, self.index)):
                accused |= {d for d in dealers if not self._share_consistent(d)}
        return ComplaintMessage(self.index, tuple(sorted(accused)))

    def receive_complaint(self, message: ComplaintMessage) -> None:
        self.complaints[message.accuser] = message.accused

    def qualified_set(self) -> Tuple[int, ...]:
        accused: Set[int] = set()
        for accusations in self.complaints.values():
            accused.update(accusations)
        return tuple(d for d in self.members
                     if d in self.deals and d in self.complaints and d not in accused)

    def finalize(self) -> ClusterKeyMaterial:
        qualified = self.qualified_set()
        if len(qualified) < self.t + 1:
            raise DKGFailure(f"qualified set {qualified} smaller than t+1={self.t + 1}")
        if self.index not in qualified:
            raise DKGFailure(f"member {self.index} is not in the qualified set")
        x_j = sum(self.shares[d] for d in qualified) % curve_order
        agg = [Z2] * (self.t + 1)
        for d in qualified:
            for k, c in enumerate(self.deals[d].commitments):
                agg[k] = add(agg[k], decode_g2(c))
        agg_key = tuple(encode_g2(p) for p in agg)
        z = {j: _public_share(agg_key, j) for j in qualified}
        return ClusterKeyMaterial(index=self.index, t=self.t, n=len(qualified), y=agg_key[0],
                                  x_j=x_j, z=z, qualified=qualified)


class InMemoryTransport:
    """
    Reliable broadcast channel for DKG rounds with scripted silence.

    Members listed in `silent_round1` never deal; members in `silent_round2`
    never publish their complaint message.
    """

    def __init__(self, silent_round1: Iterable[int] = (), silent_round2: Iterable[int] = ()):
        self.silent_round1 = set(silent_round1)
        self.silent_round2 = set(silent_round2)
        self.messages_sent: Dict[int, int] = {}

    def _count(self, sender: int, n: int) -> None:
        self.messages_sent[sender] = self.messages_sent.get(sender, 0) + n

    def round1(self, participants: Dict[int, DkgParticipant]) -> None:
        outgoing = []
        for j, p in participants.items():
            if j in self.silent_round1:
                continue
            outgoing.append(p.deal())
        for deal, shares in outgoing:
            self._count(deal.dealer, len(participants) + len(shares))
            for p in participants.values():
                p.receive_deal(deal)
            for share in shares:
                if share.recipient in participants:
                    participants[share.recipient].receive_share(share)

    def round2(self, participants: Dict[int, DkgParticipant]) -> None:
        complaints = [p.check_shares() for j, p in participants.items() if j not in self.silent_round2]
        for complaint in complaints:
            self._count(complaint.accuser, len(participants))
            for p in participants.values():
                p.receive_complaint(complaint)


def dkg(members: Sequence[int], t: int, rng: random.Random,
        transport: Optional[InMemoryTransport] = None) -> Dict[int, ClusterKeyMaterial]:
    """
    Run a joint-Feldman DKG among `members`.

    Args:
        members: member indices, also their evaluation points
        t: polynomial degree; t+1 shares reconstruct
        rng: seeded randomness, split per participant
        transport: broadcast channel, reliable by default

    Returns:
        key material of every qualified member keyed by index
    """
    transport = transport or InMemoryTransport()
    participants = {
        j: DkgParticipant(j, members, t, random.Random(rng.getrandbits(64)))
        for j in sorted(members)
    }
    transport.round1(participants)
    transport.round2(participants)
    honest_view = next(p for j, p in participants.items() if j not in transport.silent_round2)
    qualified = honest_view.qualified_set()
    if len(qualified) < t + 1:
        raise DKGFailure(f"qualified set {qualified} smaller than t+1={t + 1}")
    results = {j: participants[j].finalize() for j in qualified}
    ys = {m.y for m in results.values()}
    if len(ys) != 1:
        raise DKGFailure(f"members disagree on y: {len(ys)} distinct keys")
    logger.info(f"DKG complete: n={len(members)}, t={t}, qualified={len(results)}")
    return results


def sign_share_gen(x_j: int, message: bytes, index: int = 0) -> SignatureShare:
    return SignatureShare(index, encode_g1(g1_mul(hash_g1(message, TBLS_DST), x_j)))


@lru_cache(maxsize=65536)
def _share_valid(sigma: bytes, z_j: bytes, message: bytes) -> bool:
    point, key = decode_g1(sigma), decode_g2(z_j)
    if is_inf(point) or is_inf(key):
        return False
    return pairing_product_is_one([(point, neg(G2)), (hash_g1(message, TBLS_DST), key)])


def sign_share_verify(share: SignatureShare, z_j: bytes, message: bytes) -> bool:
    """
    Pairing check e(sigma_j, g) == e(H(m), z_j).

    Raises:
        DecodeError: malformed encoding of sigma_j or z_j
    """
    return _share_valid(bytes(share.sigma), bytes(z_j), bytes(message))


def batch_verify_shares(shares: Sequence[SignatureShare], z: Dict[int, bytes], message: bytes,
                        rng: random.Random) -> List[SignatureShare]:
    """
    Return the subset of shares that verify.

    All shares are first checked together with a random linear combination;
    individual checks only run when the combined check fails.
    """
    decodable = []
    for s in shares:
        if s.index not in z:
            continue
        try:
            point = decode_g1(s.sigma)
            if is_inf(point) or is_inf(decode_g2(z[s.index])):
                logger.debug(f"dropping identity share from member {s.index}")
                continue
            decodable.append((s, point))
        except DecodeError:
            logger.debug(f"dropping undecodable share from member {s.index}")
    if not decodable:
        return []
    sig_acc, key_acc = Z1, Z2
    for s, point in decodable:
        r = rng.getrandbits(64) | 1
        sig_acc = add(sig_acc, multiply(point, r))
        key_acc = add(key_acc, multiply(decode_g2(z[s.index]), r))
    if pairing_product_is_one([(sig_acc, neg(G2)), (hash_g1(message, TBLS_DST), key_acc)]):
        return [s for s, _ in decodable]
    return [s for s, _ in decodable if sign_share_verify(s, z[s.index], message)]


def sign_reconstruct(shares: Sequence[SignatureShare], t: int) -> bytes:
    """
    Combine t+1 shares with Lagrange coefficients at zero.

    Raises:
        InsufficientSharesError: fewer than t+1 distinct shares
    """
    by_index = {s.index: s for s in shares}
    if len(by_index) < t + 1:
        raise InsufficientSharesError(f"need {t + 1} signature shares, got {len(by_index)}")
    used = [by_index[j] for j in sorted(by_index)[: t + 1]]
    lambdas = lagrange_coeffs([FieldElement.scalar(s.index) for s in used])
    acc = Z1
    for lam, s in zip(lambdas, used):
        acc = add(acc, multiply(decode_g1(s.sigma), lam.value))
    return encode_g1(acc)


def robust_reconstruct(shares: Sequence[SignatureShare], z: Dict[int, bytes], message: bytes,
                       t: int, rng: random.Random) -> bytes:
    return sign_reconstruct(batch_verify_shares(shares, z, message, rng), t)


@lru_cache(maxsize=16384)
def _group_valid(message: bytes, sigma: bytes, y: bytes) -> bool:
    point, key = decode_g1(sigma), decode_g2(y)
    if is_inf(point) or is_inf(key):
        return False
    return pairing_product_is_one([(point, neg(G2)), (hash_g1(message, TBLS_DST), key)])


def group_sign_verify(message: bytes, sigma: bytes, y: bytes) -> bool:
    """
    Standard BLS verification of a cluster signature under y.

    Raises:
        DecodeError: malformed sigma or y
    """
    return _group_valid(bytes(message), bytes(sigma), bytes(y))
