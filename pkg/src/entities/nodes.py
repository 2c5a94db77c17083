"""
Node roles: the FCC issuer, the DB replicas and the secondary users.

Each role holds only its own key material. A node's network address is its
name ("fcc", "db3") or, for an SU, its pseudonym; the true SU identity stays
inside the SU and the FCC registration desk.
"""
from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import DecodeError
from ..core.utilities import sha256_hex
from ..crypto.bls import BlsKeyPair
from ..crypto.epid import (
    EpidChallenger, EpidIssuer, EpidParty, EpidSessionCache, EpidSignature, GroupPublicKey,
    IssuerRevocation, MemberSecret, RevocationList, epid_join, epid_verify,
)
from ..crypto.tbls import ClusterKeyMaterial
from ..ledger.chain import LightChainCopy
from ..pir.batch_pir import PIRServer, decode_payload, encode_payload
from .spectrum import SpectrumDB

logger = logging.getLogger(__name__)


class FccNode:
    """Group issuer: holds Ksk, registers SUs and hands out the anchor list"""

    name = "fcc"

    def __init__(self, issuer: EpidIssuer, rng: random.Random):
        self.issuer = issuer
        self.rng = rng
        self.anchors: List[str] = []
        self.retired: List[GroupPublicKey] = []
        self.challenger = EpidChallenger(self.name, rng)
        # registration desk: true identity -> issuer tag of its issuance record
        self._registry: Dict[str, bytes] = {}

    @property
    def kpk(self) -> GroupPublicKey:
        return self.issuer.public

    def register(self, identity: str, rng: random.Random) -> MemberSecret:
        """
        Blindly issue sk_SU to a registering SU.

        Raises:
            JoinError: the issuance protocol fails
        """
        secret = epid_join(self.kpk, self.issuer, rng)
        self._registry[identity] = secret.issuer_tag
        return secret

    def issuer_revocation(self, identity: str) -> IssuerRevocation:
        """L3 entry for an identity the FCC withdraws"""
        return IssuerRevocation(self._registry[identity])

    def renew(self) -> GroupPublicKey:
        self.retired.append(self.kpk)
        self.issuer = self.issuer.renew(self.rng)
        logger.info(f"FCC: group renewed, epoch {self.kpk.epoch}")
        return self.kpk

    @property
    def registrations(self) -> int:
        return len(self._registry)


class DbNode:
    """
    A DB replica: spectrum records, PIR service, validator key and the
    per-cluster query authorization cache.
    """

    def __init__(self, index: int, replica: SpectrumDB, key: BlsKeyPair, record_signer: BlsKeyPair,
                 rng: random.Random, byzantine_pir: bool = False):
        self.index = index
        self.name = f"db{index}"
        self.replica = replica
        self.key = key
        self.record_signer = record_signer
        self.rng = rng
        self.byzantine_pir = byzantine_pir
        self.challenger = EpidChallenger(self.name, rng)
        self.sessions = EpidSessionCache()
        self.pir = PIRServer(index + 1, replica.matrix)
        # cluster id -> (membership digest, revocation version) of the last accepted tau signatures
        self.authorized: Dict[int, Tuple[str, int]] = {}

    @property
    def point(self) -> int:
        return self.pir.point

    def serve(self, message: bytes) -> bytes:
        """
        Answer one PIR batch. A Byzantine server answers with noise of the right shape.

        Raises:
            DecodeError: malformed query
            PIRError: query for a different database shape
        """
        response = self.pir.handle(message)
        if not self.byzantine_pir:
            return response
        matrix, r, s = decode_payload(response, "s")
        noise = np.frombuffer(self.rng.randbytes(matrix.size), dtype=np.uint8).reshape(matrix.shape)
        return encode_payload(noise, r, s)

    def authorize(self, challenge: bytes, signatures: Sequence[EpidSignature], kpk: GroupPublicKey,
                  revocations: RevocationList, tau: int) -> Optional[str]:
        """
        Check the tau member signatures over this DB's challenge.

        Signatures over one challenge are linkable, so tau distinct link tags
        prove tau distinct members.

        Returns:
            None when authorized, otherwise the reason
        """
        if not self.challenger.consume(challenge):
            return "stale or foreign challenge"
        if len(signatures) < tau:
            return f"{len(signatures)} signatures, need {tau}"
        tags = set()
        for sig in signatures:
            try:
                if not epid_verify(kpk, challenge, sig, revocations):
                    return "member signature does not verify"
            except DecodeError:
                return "malformed member signature"
            tags.add(sig.link_tag)
        if len(tags) < tau:
            return f"only {len(tags)} distinct signers among {len(signatures)} signatures"
        return None

    def reset_sessions(self) -> None:
        self.sessions.invalidate()
        self.authorized.clear()


@dataclass
class SuNode:
    """A secondary user: credential, position, cluster key share and chain views"""
    identity: str
    pseudonym: str
    cell: int
    secret: MemberSecret
    rng: random.Random
    anchors: Tuple[str, ...] = ()
    keys: Optional[ClusterKeyMaterial] = None
    cluster_id: Optional[int] = None
    validator: Optional[BlsKeyPair] = None
    light: Optional[LightChainCopy] = None
    revoked: bool = False
    party: EpidParty = field(init=False)

    def __post_init__(self):
        self.party = EpidParty(self.pseudonym, self.secret, self.rng)

    @property
    def validator_id(self) -> str:
        """Global-chain validator name used while this SU leads a cluster"""
        return f"ldr-{self.pseudonym[:12]}"

    def ensure_validator(self) -> BlsKeyPair:
        if self.validator is None:
            self.validator = BlsKeyPair.generate(self.rng)
        return self.validator

    def sign(self, message: bytes, kpk: GroupPublicKey, revocations: RevocationList) -> EpidSignature:
        return self.party.respond(message, kpk, revocations)

    def recredential(self, secret: MemberSecret) -> None:
        self.secret = secret
        self.party = EpidParty(self.pseudonym, secret, self.rng)


def new_pseudonym(rng: random.Random) -> str:
    """Random 128-bit network pseudonym"""
    return f"{rng.getrandbits(128):032x}"


def membership_digest(members: Sequence[str], key_epoch: int) -> str:
    return sha256_hex(("|".join(sorted(members)) + f"#{key_epoch}").encode("utf-8"))


def place_sus(center: Tuple[int, int], spread: int, count: int, grid_n: int,
              rng: random.Random) -> List[Tuple[int, int]]:
    """Uniform positions in the square of side 2*spread+1 around center, clipped to the grid"""
    row0, col0 = center
    out = []
    for _ in range(count):
        row = min(grid_n - 1, max(0, row0 + rng.randint(-spread, spread)))
        col = min(grid_n - 1, max(0, col0 + rng.randint(-spread, spread)))
        out.append((row, col))
    return out

