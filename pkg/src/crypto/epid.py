"""
EPID-style anonymous membership signatures with three revocation sublists.

The membership credential is a Pointcheval-Sanders signature (sigma1, sigma2)
on the member scalar f, issued blindly from a Pedersen commitment. A signature
randomizes the credential, publishes the link tag K = H(m)^f and proves in
zero knowledge that the same f underlies both, plus one inequality proof per
signature-based (L2) and issuer-based (L3) revocation entry.

Exponentiation count of `epid_sign` is 11 + 6*|L2| + 2*|L3|.
"""
from __future__ import annotations

import hashlib
import logging
import random
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

from ..core.errors import DecodeError, JoinError, ParameterError
from .curve import (
    G1, G2, add, curve_order, decode_g1, decode_g2, encode_g1, encode_g2, eq,
    g1_mul, g2_mul, gt_bytes, gt_multi_pairing, hash_g1, hash_to_scalar, is_inf, neg,
    pairing_product_is_one, random_scalar,
)

logger = logging.getLogger(__name__)

EPID_DST = b"TRUSTSAS-EPID-BLS12381G1_XMD:SHA-256_SSWU_RO_"
SIGNATURE_VERSION = 0x01
SUPPORTED_SECURITY_LEVELS = (128,)


def _basename(message: bytes):
    return hash_g1(b"basename|" + bytes(message), EPID_DST)


def _issuer_base(group_id: bytes):
    return hash_g1(b"issuer|" + group_id, EPID_DST)


def _s(x: int) -> bytes:
    return (x % curve_order).to_bytes(32, "big")


# Keys

@dataclass(frozen=True)
class GroupPublicKey:
    """Kpk: shared with every entity"""
    group_id: bytes
    epoch: int
    x_tilde: bytes
    y_tilde: bytes
    y_1: bytes

    def encode(self) -> bytes:
        return (bytes([SIGNATURE_VERSION]) + self.group_id + struct.pack(">I", self.epoch)
                + self.x_tilde + self.y_tilde + self.y_1)

    def to_dict(self) -> dict:
        return {"group_id": self.group_id.hex(), "epoch": self.epoch, "x_tilde": self.x_tilde.hex(),
                "y_tilde": self.y_tilde.hex(), "y_1": self.y_1.hex()}

    @classmethod
    def from_dict(cls, data: dict) -> "GroupPublicKey":
        return cls(bytes.fromhex(data["group_id"]), int(data["epoch"]), bytes.fromhex(data["x_tilde"]),
                   bytes.fromhex(data["y_tilde"]), bytes.fromhex(data["y_1"]))


@dataclass(frozen=True)
class IssuerSecretKey:
    """Ksk: held by the issuer role only"""
    x: int
    y: int


@dataclass(frozen=True)
class GroupKeys:
    public: GroupPublicKey
    secret: IssuerSecretKey


@dataclass(frozen=True)
class MemberSecret:
    """sk_SU: the member scalar and its credential under one group"""
    f: int
    sigma1: bytes
    sigma2: bytes
    group_id: bytes
    epoch: int
    issuer_tag: bytes


@dataclass(frozen=True)
class IssuanceRecord:
    """What the issuer keeps after a join: never the member scalar"""
    epoch: int
    commitment: bytes
    issuer_tag: bytes


# Revocation list

@dataclass(frozen=True)
class LinkTagEntry:
    basename: bytes
    tag: bytes


@dataclass(frozen=True)
class RevokedKey:
    f: int


@dataclass(frozen=True)
class IssuerRevocation:
    issuer_tag: bytes


RevocationTarget = Union[LinkTagEntry, RevokedKey, IssuerRevocation]


def target_to_dict(target: RevocationTarget) -> dict:
    if isinstance(target, LinkTagEntry):
        return {"list": "l2", "basename": target.basename.hex(), "tag": target.tag.hex()}
    if isinstance(target, RevokedKey):
        return {"list": "l1", "f": str(target.f)}
    return {"list": "l3", "issuer_tag": target.issuer_tag.hex()}


def target_from_dict(data: dict) -> RevocationTarget:
    """
    Raises:
        DecodeError: unknown sublist
    """
    kind = data.get("list")
    if kind == "l2":
        return LinkTagEntry(bytes.fromhex(data["basename"]), bytes.fromhex(data["tag"]))
    if kind == "l1":
        return RevokedKey(int(data["f"]))
    if kind == "l3":
        return IssuerRevocation(bytes.fromhex(data["issuer_tag"]))
    raise DecodeError(f"unknown revocation sublist {kind!r}")


@dataclass(frozen=True)
class RevocationList:
    """
    L = L1 u L2 u L3, append-only.

    L1 holds revoked member scalars, L2 (basename, link tag) pairs of revoked
    signatures, L3 issuer tags of issuance records revoked by the issuer.
    """
    l1: Tuple[int, ...] = ()
    l2: Tuple[LinkTagEntry, ...] = ()
    l3: Tuple[bytes, ...] = ()

    @property
    def deltas(self) -> Tuple[int, int, int]:
        return len(self.l1), len(self.l2), len(self.l3)

    @property
    def version(self) -> int:
        return len(self.l1) + len(self.l2) + len(self.l3)

    def __len__(self) -> int:
        return self.version

    def proof_digest(self) -> bytes:
        h = hashlib.sha256(b"L2L3")
        for e in self.l2:
            h.update(hashlib.sha256(e.basename).digest() + e.tag)
        for tag in self.l3:
            h.update(tag)
        return h.digest()

    def contains(self, target: RevocationTarget) -> bool:
        if isinstance(target, LinkTagEntry):
            return target in self.l2
        if isinstance(target, RevokedKey):
            return target.f in self.l1
        return target.issuer_tag in self.l3

    def to_dict(self) -> dict:
        return {
            "l1": [str(f) for f in self.l1],
            "l2": [{"basename": e.basename.hex(), "tag": e.tag.hex()} for e in self.l2],
            "l3": [t.hex() for t in self.l3],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RevocationList":
        return cls(
            tuple(int(f) for f in data.get("l1", [])),
            tuple(LinkTagEntry(bytes.fromhex(e["basename"]), bytes.fromhex(e["tag"]))
                  for e in data.get("l2", [])),
            tuple(bytes.fromhex(t) for t in data.get("l3", [])),
        )


def revoke(revocations: RevocationList, target: RevocationTarget) -> RevocationList:
    """Append target to its sublist; duplicates are a no-op"""
    if revocations.contains(target):
        return revocations
    if isinstance(target, LinkTagEntry):
        decode_g1(target.tag)
        return RevocationList(revocations.l1, revocations.l2 + (target,), revocations.l3)
    if isinstance(target, RevokedKey):
        return RevocationList(revocations.l1 + (target.f % curve_order,), revocations.l2, revocations.l3)
    if isinstance(target, IssuerRevocation):
        decode_g1(target.issuer_tag)
        return RevocationList(revocations.l1, revocations.l2, revocations.l3 + (target.issuer_tag,))
    raise ParameterError(f"unknown revocation target {type(target).__name__}")


# Signature

@dataclass(frozen=True)
class EpidSignature:
    """Sigma (randomized credential, link tag, proof of knowledge) plus non-revocation proof P"""
    group_id: bytes
    epoch: int
    s1: bytes
    s2: bytes
    link_tag: bytes
    c: int
    s_f: int
    s_t: int
    list_digest: bytes
    l3_proof: Tuple[int, int, Tuple[bytes, ...]]
    l2_proof: Tuple[Tuple[bytes, int, int], ...]

    def revocation_entry(self, message: bytes) -> LinkTagEntry:
        return LinkTagEntry(bytes(message), self.link_tag)

    def encode(self) -> bytes:
        fields: List[bytes] = [
            self.group_id, struct.pack(">I", self.epoch), self.s1, self.s2, self.link_tag,
            _s(self.c), _s(self.s_f), _s(self.s_t), self.list_digest,
            _s(self.l3_proof[0]), _s(self.l3_proof[1]),
            struct.pack(">I", len(self.l3_proof[2])), *self.l3_proof[2],
            struct.pack(">I", len(self.l2_proof)),
        ]
        for t_k, s_a, s_rho in self.l2_proof:
            fields.extend([t_k, _s(s_a), _s(s_rho)])
        out = bytearray([SIGNATURE_VERSION])
        for f in fields:
            out += struct.pack(">H", len(f)) + f
        return bytes(out)

    @classmethod
    def decode(cls, data: bytes) -> "EpidSignature":
        """
        Raises:
            DecodeError: wrong version, truncated fields or invalid points
        """
        data = bytes(data)
        if not data or data[0] != SIGNATURE_VERSION:
            raise DecodeError("unknown EPID signature version")
        pos = 1
        fields: List[bytes] = []
        while pos < len(data):
            if pos + 2 > len(data):
                raise DecodeError("truncated field length")
            (n,) = struct.unpack(">H", data[pos:pos + 2])
            pos += 2
            if pos + n > len(data):
                raise DecodeError("truncated field")
            fields.append(data[pos:pos + n])
            pos += n
        it = iter(fields)
        try:
            group_id, epoch_b, s1, s2, tag = [next(it) for _ in range(5)]
            c, s_f, s_t = [int.from_bytes(next(it), "big") for _ in range(3)]
            digest = next(it)
            l3_sa, l3_srho = [int.from_bytes(next(it), "big") for _ in range(2)]
            (n3,) = struct.unpack(">I", next(it))
            l3_ts = tuple([next(it) for _ in range(n3)])
            (n2,) = struct.unpack(">I", next(it))
            l2 = tuple([(next(it), int.from_bytes(next(it), "big"), int.from_bytes(next(it), "big"))
                        for _ in range(n2)])
        except (StopIteration, struct.error) as e:
            raise DecodeError(f"malformed EPID signature: {e}") from e
        if next(it, None) is not None:
            raise DecodeError("trailing fields in EPID signature")
        if len(epoch_b) != 4 or len(digest) != 32:
            raise DecodeError("malformed EPID signature header")
        for point in (s1, s2, tag, *l3_ts, *(e[0] for e in l2)):
            decode_g1(point)
        (epoch,) = struct.unpack(">I", epoch_b)
        return cls(group_id, epoch, s1, s2, tag, c, s_f, s_t, digest, (l3_sa, l3_srho, l3_ts), l2)


# Issuer and join

@dataclass(frozen=True)
class JoinRequest:
    group_id: bytes
    nonce: bytes
    commitment: bytes
    issuer_tag: bytes
    c: int
    s_t: int
    s_f: int


@dataclass(frozen=True)
class JoinResponse:
    sigma1: bytes
    sigma2_blind: bytes


def _join_challenge(group_id: bytes, nonce: bytes, commitment: bytes, tag: bytes, r_c, r_j) -> int:
    return hash_to_scalar(b"epid-join", group_id, nonce, commitment, tag, encode_g1(r_c), encode_g1(r_j))


class EpidIssuer:
    """
    Issuer role: holds Ksk, blindly issues credentials and keeps issuance records.
    """

    def __init__(self, keys: GroupKeys, rng: Optional[random.Random] = None):
        self.keys = keys
        self.rng = rng or random.Random()
        self.records: List[IssuanceRecord] = []
        self._nonces: set = set()

    @property
    def public(self) -> GroupPublicKey:
        return self.keys.public

    def issue_nonce(self) -> bytes:
        nonce = self.rng.getrandbits(128).to_bytes(16, "big")
        self._nonces.add(nonce)
        return nonce

    def issue(self, request: JoinRequest) -> JoinResponse:
        """
        Verify the member's proof over its commitment and sign it blindly.

        Raises:
            JoinError: wrong group, stale nonce, bad proof or duplicate member
        """
        kpk = self.keys.public
        if request.group_id != kpk.group_id:
            raise JoinError("join request targets a different group")
        if request.nonce not in self._nonces:
            raise JoinError("unknown or reused join nonce")
        self._nonces.discard(request.nonce)
        try:
            commitment = decode_g1(request.commitment)
            tag = decode_g1(request.issuer_tag)
        except DecodeError as e:
            raise JoinError(f"malformed join request: {e}") from e
        y_1 = decode_g1(kpk.y_1)
        base = _issuer_base(kpk.group_id)
        r_c = add(add(g1_mul(G1, request.s_t), g1_mul(y_1, request.s_f)), neg(g1_mul(commitment, request.c)))
        r_j = add(g1_mul(base, request.s_f), neg(g1_mul(tag, request.c)))
        if _join_challenge(kpk.group_id, request.nonce, request.commitment, request.issuer_tag, r_c, r_j) != request.c:
            raise JoinError("join proof of knowledge failed")
        if any(r.issuer_tag == request.issuer_tag for r in self.records):
            raise JoinError("member scalar already issued")
        u = random_scalar(self.rng)
        x_1 = g1_mul(G1, self.keys.secret.x)
        sigma1 = g1_mul(G1, u)
        sigma2_blind = g1_mul(add(x_1, commitment), u)
        self.records.append(IssuanceRecord(kpk.epoch, request.commitment, request.issuer_tag))
        logger.info(f"EPID issuer {kpk.group_id.hex()[:8]}: issued credential #{len(self.records)}")
        return JoinResponse(encode_g1(sigma1), encode_g1(sigma2_blind))

    def renew(self, rng: random.Random) -> "EpidIssuer":
        """Fresh group keys for the next issuer epoch"""
        return EpidIssuer(epid_setup(128, rng, epoch=self.keys.public.epoch + 1), rng)


def epid_setup(security_level: int, rng: random.Random, epoch: int = 1) -> GroupKeys:
    """
    Generate fresh group keys.

    Raises:
        ParameterError: unsupported security level
    """
    if security_level not in SUPPORTED_SECURITY_LEVELS:
        raise ParameterError(f"security level {security_level} not supported; use {SUPPORTED_SECURITY_LEVELS}")
    x, y = random_scalar(rng), random_scalar(rng)
    group_id = rng.getrandbits(128).to_bytes(16, "big")
    public = GroupPublicKey(
        group_id=group_id,
        epoch=epoch,
        x_tilde=encode_g2(g2_mul(G2, x)),
        y_tilde=encode_g2(g2_mul(G2, y)),
        y_1=encode_g1(g1_mul(G1, y)),
    )
    return GroupKeys(public, IssuerSecretKey(x, y))


def epid_join(kpk: GroupPublicKey, issuer: EpidIssuer, rng: random.Random) -> MemberSecret:
    """
    Run the blind issuance protocol as the joining member.

    Raises:
        JoinError: issuer key does not match Kpk or the credential fails its check
    """
    if issuer.public.group_id != kpk.group_id:
        raise JoinError("issuer does not hold the secret key for this Kpk")
    f, t = random_scalar(rng), random_scalar(rng)
    y_1 = decode_g1(kpk.y_1)
    base = _issuer_base(kpk.group_id)
    commitment = add(g1_mul(G1, t), g1_mul(y_1, f))
    tag = g1_mul(base, f)
    k_t, k_f = random_scalar(rng), random_scalar(rng)
    r_c = add(g1_mul(G1, k_t), g1_mul(y_1, k_f))
    r_j = g1_mul(base, k_f)
    nonce = issuer.issue_nonce()
    enc_c, enc_tag = encode_g1(commitment), encode_g1(tag)
    c = _join_challenge(kpk.group_id, nonce, enc_c, enc_tag, r_c, r_j)
    request = JoinRequest(kpk.group_id, nonce, enc_c, enc_tag, c,
                          (k_t + c * t) % curve_order, (k_f + c * f) % curve_order)
    response = issuer.issue(request)
    sigma1 = decode_g1(response.sigma1)
    sigma2 = add(decode_g1(response.sigma2_blind), neg(g1_mul(sigma1, t)))
    key = add(decode_g2(kpk.x_tilde), g2_mul(decode_g2(kpk.y_tilde), f))
    if is_inf(sigma1) or not pairing_product_is_one([(sigma1, key), (neg(sigma2), G2)]):
        raise JoinError("issued credential does not verify under Kpk")
    return MemberSecret(f, encode_g1(sigma1), encode_g1(sigma2), kpk.group_id, kpk.epoch, enc_tag)


# Sign / verify

def _challenge(kpk: GroupPublicKey, message: bytes, s1: bytes, s2: bytes, tag: bytes,
               digest: bytes, r1, r2, v3, l3_items: Sequence[Tuple[bytes, object]],
               l2_items: Sequence[Tuple[bytes, object, object]]) -> int:
    parts = [b"epid-sign", kpk.encode(), bytes(message), s1, s2, tag, digest,
             gt_bytes(r1), encode_g1(r2), encode_g1(v3)]
    for t_k, u_k in l3_items:
        parts += [t_k, encode_g1(u_k)]
    for t_k, u_k, v_k in l2_items:
        parts += [t_k, encode_g1(u_k), encode_g1(v_k)]
    return hash_to_scalar(*parts)


def epid_sign(sk: MemberSecret, kpk: GroupPublicKey, message: bytes, revocations: RevocationList,
              rng: random.Random) -> EpidSignature:
    """
    Sign a challenge anonymously, proving non-revocation against L2 and L3.

    A revoked signer still gets a signature; it simply fails verification.
    """
    message = bytes(message)
    sigma1, sigma2 = decode_g1(sk.sigma1), decode_g1(sk.sigma2)
    f = sk.f
    r, t = random_scalar(rng), random_scalar(rng)
    s1 = g1_mul(sigma1, r)
    s2 = g1_mul(add(sigma2, g1_mul(sigma1, t)), r)
    base = _basename(message)
    link = g1_mul(base, f)

    k_f, k_t = random_scalar(rng), random_scalar(rng)
    w = add(g2_mul(decode_g2(kpk.y_tilde), k_f), g2_mul(G2, k_t))
    r1 = gt_multi_pairing([(s1, w)])
    r2 = g1_mul(base, k_f)

    # L3: one blinded pair (a, rho) with a = f*rho shared by every entry
    issuer_base = _issuer_base(kpk.group_id)
    rho, k_rho, k_a = random_scalar(rng), random_scalar(rng), random_scalar(rng)
    a = f * rho % curve_order
    p_a = g1_mul(issuer_base, a)
    q_a = g1_mul(issuer_base, k_a)
    v3 = add(g1_mul(link, k_rho), neg(g1_mul(base, k_a)))
    l3_items = []
    for tag_k in revocations.l3:
        j_k = decode_g1(tag_k)
        t_k = add(p_a, neg(g1_mul(j_k, rho)))
        u_k = add(q_a, neg(g1_mul(j_k, k_rho)))
        l3_items.append((encode_g1(t_k), u_k))

    # L2: independent (a_k, rho_k) per revoked signature
    l2_secrets = []
    l2_items = []
    for entry in revocations.l2:
        b_k, k_k = _basename(entry.basename), decode_g1(entry.tag)
        rho_k, kr_k, ka_k = random_scalar(rng), random_scalar(rng), random_scalar(rng)
        a_k = f * rho_k % curve_order
        t_k = add(g1_mul(b_k, a_k), neg(g1_mul(k_k, rho_k)))
        u_k = add(g1_mul(b_k, ka_k), neg(g1_mul(k_k, kr_k)))
        v_k = add(g1_mul(link, kr_k), neg(g1_mul(base, ka_k)))
        l2_items.append((encode_g1(t_k), u_k, v_k))
        l2_secrets.append((a_k, rho_k, ka_k, kr_k))

    enc_s1, enc_s2, enc_link = encode_g1(s1), encode_g1(s2), encode_g1(link)
    digest = revocations.proof_digest()
    c = _challenge(kpk, message, enc_s1, enc_s2, enc_link, digest, r1, r2, v3, l3_items, l2_items)
    l2_proof = tuple(
        (t_enc, (ka_k + c * a_k) % curve_order, (kr_k + c * rho_k) % curve_order)
        for (t_enc, _, _), (a_k, rho_k, ka_k, kr_k) in zip(l2_items, l2_secrets)
    )
    return EpidSignature(
        group_id=kpk.group_id, epoch=kpk.epoch, s1=enc_s1, s2=enc_s2, link_tag=enc_link, c=c,
        s_f=(k_f + c * f) % curve_order, s_t=(k_t + c * t) % curve_order, list_digest=digest,
        l3_proof=((k_a + c * a) % curve_order, (k_rho + c * rho) % curve_order,
                  tuple(t for t, _ in l3_items)),
        l2_proof=l2_proof,
    )


def epid_verify(kpk: GroupPublicKey, message: bytes, signature: Union[EpidSignature, bytes],
                revocations: RevocationList) -> bool:
    """
    Check a member signature and its non-revocation proof against the current L.

    Raises:
        DecodeError: malformed signature encoding
    """
    sig = EpidSignature.decode(signature) if isinstance(signature, (bytes, bytearray)) else signature
    return _verify(kpk, bytes(message), sig, revocations)


@lru_cache(maxsize=8192)
def _verify(kpk: GroupPublicKey, message: bytes, sig: EpidSignature, revocations: RevocationList) -> bool:
    if sig.group_id != kpk.group_id or sig.epoch != kpk.epoch:
        return False
    if sig.list_digest != revocations.proof_digest():
        return False
    if len(sig.l2_proof) != len(revocations.l2) or len(sig.l3_proof[2]) != len(revocations.l3):
        return False
    s1, s2, link = decode_g1(sig.s1), decode_g1(sig.s2), decode_g1(sig.link_tag)
    if is_inf(s1) or is_inf(link):
        return False
    base = _basename(message)
    c = sig.c

    for f_k in revocations.l1:
        if eq(g1_mul(base, f_k), link):
            return False

    w = add(add(g2_mul(decode_g2(kpk.y_tilde), sig.s_f), g2_mul(G2, sig.s_t)),
            g2_mul(decode_g2(kpk.x_tilde), c))
    r1 = gt_multi_pairing([(s1, w), (g1_mul(s2, -c), G2)])
    r2 = add(g1_mul(base, sig.s_f), neg(g1_mul(link, c)))

    s_a, s_rho, l3_ts = sig.l3_proof
    issuer_base = _issuer_base(kpk.group_id)
    v3 = add(g1_mul(link, s_rho), neg(g1_mul(base, s_a)))
    l3_items = []
    for t_enc, tag_k in zip(l3_ts, revocations.l3):
        t_k = decode_g1(t_enc)
        if is_inf(t_k):
            return False
        u_k = add(add(g1_mul(issuer_base, s_a), neg(g1_mul(decode_g1(tag_k), s_rho))), neg(g1_mul(t_k, c)))
        l3_items.append((t_enc, u_k))

    l2_items = []
    for (t_enc, sa_k, sr_k), entry in zip(sig.l2_proof, revocations.l2):
        t_k = decode_g1(t_enc)
        if is_inf(t_k):
            return False
        b_k, k_k = _basename(entry.basename), decode_g1(entry.tag)
        u_k = add(add(g1_mul(b_k, sa_k), neg(g1_mul(k_k, sr_k))), neg(g1_mul(t_k, c)))
        v_k = add(g1_mul(link, sr_k), neg(g1_mul(base, sa_k)))
        l2_items.append((t_enc, u_k, v_k))

    expected = _challenge(kpk, message, sig.s1, sig.s2, sig.link_tag, sig.list_digest,
                          r1, r2, v3, l3_items, l2_items)
    return expected == c


# Two-way authentication and sessions

class EpidChallenger:
    """
    Verifier side of an EPID challenge-response.

    Challenges are fresh and single use, so a replayed signature over a
    consumed or foreign challenge is rejected.
    """

    def __init__(self, name: str, rng: random.Random):
        self.name = name
        self.rng = rng
        self._outstanding: set = set()

    def issue_challenge(self) -> bytes:
        challenge = b"chal|" + self.rng.getrandbits(256).to_bytes(32, "big")
        self._outstanding.add(challenge)
        return challenge

    def consume(self, challenge: bytes) -> bool:
        """Retire an outstanding challenge; False when it was never issued or already used"""
        if challenge not in self._outstanding:
            return False
        self._outstanding.discard(challenge)
        return True

    def accept(self, challenge: bytes, signature: Optional[EpidSignature], kpk: GroupPublicKey,
               revocations: RevocationList) -> bool:
        if not self.consume(challenge) or signature is None:
            return False
        try:
            return epid_verify(kpk, challenge, signature, revocations)
        except DecodeError:
            return False


class EpidParty(EpidChallenger):
    """A group member taking part in mutual authentication"""

    def __init__(self, name: str, secret: MemberSecret, rng: random.Random):
        super().__init__(name, rng)
        self.secret = secret

    def respond(self, challenge: bytes, kpk: GroupPublicKey, revocations: RevocationList) -> EpidSignature:
        return epid_sign(self.secret, kpk, challenge, revocations, self.rng)


Leg = Callable[[str, str, EpidSignature], Optional[EpidSignature]]


def two_way_epid(a: EpidParty, b: EpidParty, kpk: GroupPublicKey, revocations: RevocationList,
                 deliver: Optional[Leg] = None) -> bool:
    """
    Mutual authentication: each side signs the other's fresh challenge.

    Args:
        deliver: optional hook applied to each signature in flight; returning
            None models a timeout on that leg
    """
    deliver = deliver or (lambda src, dst, sig: sig)
    m_a, m_b = a.issue_challenge(), b.issue_challenge()
    sig_a = deliver(a.name, b.name, a.respond(m_b, kpk, revocations))
    v_b = b.accept(m_b, sig_a, kpk, revocations)
    sig_b = deliver(b.name, a.name, b.respond(m_a, kpk, revocations))
    v_a = a.accept(m_a, sig_b, kpk, revocations)
    return v_a and v_b


@dataclass
class EpidSessionCache:
    """Verified peers, valid until the revocation list version changes"""
    sessions: Dict[str, int] = field(default_factory=dict)

    def record(self, peer: str, revocations: RevocationList) -> None:
        self.sessions[peer] = revocations.version

    def is_valid(self, peer: str, revocations: RevocationList) -> bool:
        return self.sessions.get(peer) == revocations.version

    def invalidate(self, peer: Optional[str] = None) -> None:
        if peer is None:
            self.sessions.clear()
        else:
            self.sessions.pop(peer, None)
