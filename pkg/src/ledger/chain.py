"""
Hash-chained permissioned ledgers.

The same block and transaction schema serves the global chain (validators:
DBs and cluster leaders) and every cluster's local chain (validators: the
cluster members, voting with their TBLS key shares). Each block header
commits to the replayed chain state through `state_root`, which is what
light copies check against.
"""
from __future__ import annotations

import copy
import json
import logging
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import ChainError, DecodeError, ForkError, QuorumError, TransactionError
from ..core.utilities import canonical_json, sha256_hex
from ..crypto.bls import VOTE_DST, aggregate_signatures, bls_sign, bls_verify, verify_same_message
from ..crypto.epid import (
    GroupPublicKey, RevocationList, epid_verify, revoke, target_from_dict,
)
from ..crypto.tbls import SignatureShare, group_sign_verify, sign_share_verify
from ..entities.spectrum import verify_rows

logger = logging.getLogger(__name__)

TX_DST = b"TRUSTSAS-TX-BLS12381G1_XMD:SHA-256_SSWU_RO_"
ZERO_HASH = "00" * 32


class TxKind(str, Enum):
    KEY_BINDING = "KeyBinding"
    SHARE_SIGNATURE = "ShareSignature"
    CLUSTER_PUBKEY = "ClusterPubKey"
    BEACON_ISSUE = "BeaconIssue"
    EPOCH_AVAILABILITY = "EpochAvailability"
    USAGE_REPORT = "UsageReport"
    REVOCATION = "Revocation"
    CONTRACT_TRIGGER = "ContractTrigger"
    GROUP_RENEWAL = "GroupRenewal"


class SignatureKind(str, Enum):
    TBLS_SHARE = "tbls_share"
    TBLS_GROUP = "tbls_group"
    EPID = "epid"
    DB_KEY = "db_key"


SIGNATURE_KIND = {
    TxKind.KEY_BINDING: SignatureKind.EPID,
    TxKind.SHARE_SIGNATURE: SignatureKind.TBLS_SHARE,
    TxKind.CLUSTER_PUBKEY: SignatureKind.TBLS_GROUP,
    TxKind.BEACON_ISSUE: SignatureKind.DB_KEY,
    TxKind.EPOCH_AVAILABILITY: SignatureKind.DB_KEY,
    TxKind.USAGE_REPORT: SignatureKind.TBLS_GROUP,
    TxKind.REVOCATION: SignatureKind.DB_KEY,
    TxKind.CONTRACT_TRIGGER: SignatureKind.TBLS_SHARE,
    TxKind.GROUP_RENEWAL: SignatureKind.DB_KEY,
}

LOCAL_KINDS = frozenset({TxKind.KEY_BINDING, TxKind.SHARE_SIGNATURE, TxKind.EPOCH_AVAILABILITY,
                         TxKind.CONTRACT_TRIGGER})
GLOBAL_KINDS = frozenset({TxKind.CLUSTER_PUBKEY, TxKind.BEACON_ISSUE, TxKind.USAGE_REPORT,
                          TxKind.REVOCATION, TxKind.GROUP_RENEWAL})

PAYLOAD_FIELDS = {
    TxKind.KEY_BINDING: ("cluster_id", "key_epoch", "index", "pseudonym", "z_j", "y", "binding_share",
                         "group_id", "revocation_version"),
    TxKind.SHARE_SIGNATURE: ("cluster_id", "key_epoch", "index", "message"),
    TxKind.CLUSTER_PUBKEY: ("cluster_id", "key_epoch", "y", "leader_validator", "validator_key",
                            "epid_signature", "group_id", "revocation_version"),
    TxKind.BEACON_ISSUE: ("beacon",),
    TxKind.EPOCH_AVAILABILITY: ("cluster_id", "epoch", "indices", "rows"),
    TxKind.USAGE_REPORT: ("cluster_id", "key_epoch", "epoch", "usage"),
    TxKind.REVOCATION: ("target", "reason"),
    TxKind.CONTRACT_TRIGGER: ("cluster_id", "epoch", "availability_tx", "assignment_digest"),
    TxKind.GROUP_RENEWAL: ("kpk", "retired_group"),
}


@dataclass(frozen=True)
class Transaction:
    kind: TxKind
    payload: dict
    author: str
    signature: str = ""

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", TxKind(self.kind))
        except ValueError as e:
            raise TransactionError(f"unknown transaction kind {self.kind!r}") from e
        missing = [f for f in PAYLOAD_FIELDS[self.kind] if f not in self.payload]
        if missing:
            raise TransactionError(f"{self.kind.value} payload is missing {missing}")

    @property
    def signature_kind(self) -> SignatureKind:
        return SIGNATURE_KIND[self.kind]

    def signing_bytes(self) -> bytes:
        return canonical_json({"kind": self.kind.value, "payload": self.payload, "author": self.author})

    @property
    def tx_hash(self) -> str:
        return sha256_hex(canonical_json(self.to_dict()))

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "payload": self.payload, "author": self.author,
                "signature": self.signature, "signature_kind": self.signature_kind.value}

    @classmethod
    def from_dict(cls, data: dict) -> "Transaction":
        tx = cls(data["kind"], data["payload"], data["author"], data.get("signature", ""))
        if data.get("signature_kind", tx.signature_kind.value) != tx.signature_kind.value:
            raise TransactionError(f"{tx.kind.value} cannot carry a {data['signature_kind']} signature")
        return tx

    def wire_size(self) -> int:
        return len(canonical_json(self.to_dict()))


def sign_transaction(kind: TxKind, payload: dict, author: str, secret: int) -> Transaction:
    """Transaction signed with a validator BLS key"""
    unsigned = Transaction(kind, payload, author)
    return Transaction(kind, payload, author, bls_sign(secret, unsigned.signing_bytes(), TX_DST).hex())


@dataclass(frozen=True)
class CommitProof:
    """Sorted signer ids and their aggregate vote over the block hash"""
    signers: Tuple[str, ...]
    aggregate: str

    def to_dict(self) -> dict:
        return {"signers": list(self.signers), "aggregate": self.aggregate}

    @classmethod
    def from_dict(cls, data: dict) -> "CommitProof":
        return cls(tuple(data["signers"]), data["aggregate"])


@dataclass(frozen=True)
class Block:
    height: int
    previous_hash: str
    transactions: Tuple[Transaction, ...]
    proposer: str
    timestamp: float
    state_root: str
    genesis: Optional[dict] = None
    commit_proof: Optional[CommitProof] = None

    def header(self) -> dict:
        return {
            "height": self.height,
            "previous_hash": self.previous_hash,
            "tx_hashes": [tx.tx_hash for tx in self.transactions],
            "proposer": self.proposer,
            "timestamp": self.timestamp,
            "state_root": self.state_root,
            "genesis": self.genesis,
        }

    @property
    def block_hash(self) -> str:
        return sha256_hex(canonical_json(self.header()))

    def with_proof(self, proof: CommitProof) -> "Block":
        return Block(self.height, self.previous_hash, self.transactions, self.proposer,
                     self.timestamp, self.state_root, self.genesis, proof)

    def to_dict(self) -> dict:
        return {
            "hash": self.block_hash,
            "height": self.height,
            "previous_hash": self.previous_hash,
            "proposer": self.proposer,
            "timestamp": self.timestamp,
            "state_root": self.state_root,
            "genesis": self.genesis,
            "transactions": [tx.to_dict() for tx in self.transactions],
            "commit_proof": self.commit_proof.to_dict() if self.commit_proof else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Block":
        """
        Raises:
            DecodeError: recorded hash does not match the decoded header
        """
        try:
            block = cls(
                height=int(data["height"]),
                previous_hash=data["previous_hash"],
                transactions=tuple(Transaction.from_dict(tx) for tx in data["transactions"]),
                proposer=data["proposer"],
                timestamp=float(data["timestamp"]),
                state_root=data["state_root"],
                genesis=data.get("genesis"),
                commit_proof=CommitProof.from_dict(data["commit_proof"]) if data.get("commit_proof") else None,
            )
        except (KeyError, TypeError) as e:
            raise DecodeError(f"malformed block: {e}") from e
        if "hash" in data and data["hash"] != block.block_hash:
            raise DecodeError(f"block {block.height}: recorded hash does not match its header")
        return block

    def wire_size(self) -> int:
        return len(canonical_json(self.to_dict()))


@dataclass(frozen=True)
class ValidatorSet:
    """Validator id -> hex G2 key, plus each validator's role"""
    keys: Dict[str, str]
    roles: Dict[str, str] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.keys)

    @property
    def f(self) -> int:
        return (self.n - 1) // 3

    @property
    def quorum(self) -> int:
        # equals 2f+1 when n = 3f+1; larger otherwise so two quorums share an honest validator
        return max(2 * self.f + 1, math.ceil((self.n + self.f + 1) / 2))

    def ids(self) -> List[str]:
        return sorted(self.keys)

    def __contains__(self, validator: str) -> bool:
        return validator in self.keys

    def to_dict(self) -> dict:
        return {v: {"key": self.keys[v], "role": self.roles.get(v, "")} for v in sorted(self.keys)}

    @classmethod
    def from_dict(cls, data: dict) -> "ValidatorSet":
        return cls({v: d["key"] for v, d in data.items()}, {v: d.get("role", "") for v, d in data.items()})


def sign_vote(block_hash: str, secret: int) -> bytes:
    return bls_sign(secret, bytes.fromhex(block_hash), VOTE_DST)


def make_commit_proof(votes: Dict[str, bytes]) -> CommitProof:
    signers = tuple(sorted(votes))
    return CommitProof(signers, aggregate_signatures([votes[s] for s in signers]).hex())


def verify_commit_proof(block: Block, validators: ValidatorSet) -> bool:
    proof = block.commit_proof
    if proof is None:
        return False
    signers = proof.signers
    if len(set(signers)) != len(signers) or any(s not in validators for s in signers):
        return False
    if len(signers) < validators.quorum:
        return False
    try:
        aggregate = bytes.fromhex(proof.aggregate)
    except ValueError:
        return False
    keys = tuple(bytes.fromhex(validators.keys[s]) for s in signers)
    return verify_same_message(keys, bytes.fromhex(block.block_hash), aggregate, VOTE_DST)


@dataclass
class ChainContext:
    """
    Trust anchors outside a chain: group keys, the revocation history and
    the DB record key. The global chain writes into its context while it
    replays; local chains read the same object.
    """
    record_key: Optional[bytes] = None
    group_keys: Dict[str, GroupPublicKey] = field(default_factory=dict)
    revocations: Dict[Tuple[str, int], RevocationList] = field(default_factory=dict)
    verify_signatures: bool = True

    def revocation_list(self, group_id: str, version: int) -> Optional[RevocationList]:
        if version == 0:
            return RevocationList()
        return self.revocations.get((group_id, version))


@dataclass
class ChainState:
    """Replayed chain state; its summary digest is each block's state_root"""
    validators: ValidatorSet
    params: dict
    group_id: str = ""
    revocations: RevocationList = field(default_factory=RevocationList)
    retired_groups: List[str] = field(default_factory=list)
    beacons: Dict[str, dict] = field(default_factory=dict)
    removed_beacons: List[str] = field(default_factory=list)
    cluster_keys: Dict[str, str] = field(default_factory=dict)
    cluster_leaders: Dict[str, str] = field(default_factory=dict)
    usage_reports: List[str] = field(default_factory=list)
    key_epoch: int = 0
    y: str = ""
    bindings: Dict[str, str] = field(default_factory=dict)
    binding_index: Dict[str, int] = field(default_factory=dict)
    availability: Dict[str, str] = field(default_factory=dict)
    assignments: Dict[str, str] = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "validators": self.validators.to_dict(),
            "group_id": self.group_id,
            "revocation_version": self.revocations.version,
            "retired_groups": list(self.retired_groups),
            "beacons": sorted(self.beacons),
            "removed_beacons": list(self.removed_beacons),
            "cluster_keys": dict(sorted(self.cluster_keys.items())),
            "usage_reports": len(self.usage_reports),
            "key_epoch": self.key_epoch,
            "y": self.y,
            "bindings": dict(sorted(self.bindings.items())),
            "availability": dict(sorted(self.availability.items())),
            "assignments": dict(sorted(self.assignments.items())),
        }

    def root(self) -> str:
        return sha256_hex(canonical_json(self.summary()))


def cluster_key_id(cluster_id: int, key_epoch: int) -> str:
    return f"{cluster_id}:{key_epoch}"


def binding_message(payload: dict) -> bytes:
    """Bytes each member's key-binding share signs"""
    core = {k: payload[k] for k in ("cluster_id", "key_epoch", "index", "pseudonym", "z_j", "y")}
    return canonical_json(core)


def cluster_key_message(payload: dict) -> bytes:
    """Bytes the leader's EPID signature over a new cluster key covers"""
    core = {k: payload[k] for k in ("cluster_id", "key_epoch", "y", "leader_validator", "validator_key")}
    return canonical_json(core)


def _epid_ok(ctx: ChainContext, payload: dict, message: bytes, signature_hex: str) -> bool:
    kpk = ctx.group_keys.get(payload["group_id"])
    revocations = ctx.revocation_list(payload["group_id"], int(payload["revocation_version"]))
    if kpk is None or revocations is None:
        return False
    try:
        return epid_verify(kpk, message, bytes.fromhex(signature_hex), revocations)
    except (DecodeError, ValueError):
        return False


def _db_signed(tx: Transaction, state: ChainState) -> Optional[str]:
    if state.validators.roles.get(tx.author) != "db":
        return f"{tx.kind.value} author {tx.author} is not a DB validator"
    try:
        ok = bls_verify(bytes.fromhex(state.validators.keys[tx.author]), tx.signing_bytes(),
                        bytes.fromhex(tx.signature), TX_DST)
    except (DecodeError, ValueError):
        ok = False
    return None if ok else f"{tx.kind.value} signature by {tx.author} does not verify"


def verify_transaction(tx: Transaction, state: ChainState, ctx: ChainContext) -> Optional[str]:
    """
    Check a transaction's embedded signatures against the state it applies to.

    Returns:
        None when valid, otherwise the reason for rejection
    """
    p = tx.payload
    kind = tx.kind
    if kind in (TxKind.BEACON_ISSUE, TxKind.REVOCATION, TxKind.GROUP_RENEWAL):
        return _db_signed(tx, state) if ctx.verify_signatures else None
    if kind == TxKind.EPOCH_AVAILABILITY and len(p["indices"]) != len(p["rows"]):
        return "availability indices and rows differ in length"
    if not ctx.verify_signatures:
        return None
    try:
        if kind == TxKind.KEY_BINDING:
            share = SignatureShare(int(p["index"]), bytes.fromhex(p["binding_share"]))
            if not sign_share_verify(share, bytes.fromhex(p["z_j"]), binding_message(p)):
                return f"binding share of {p['pseudonym'][:8]} does not verify under z_j"
            if not _epid_ok(ctx, p, tx.signing_bytes(), tx.signature):
                return f"EPID signature on binding of {p['pseudonym'][:8]} does not verify"
        elif kind in (TxKind.SHARE_SIGNATURE, TxKind.CONTRACT_TRIGGER):
            z_j = state.bindings.get(tx.author)
            if z_j is None:
                return f"{kind.value} author is not a bound member"
            message = bytes.fromhex(p["message"]) if kind == TxKind.SHARE_SIGNATURE else tx.signing_bytes()
            share = SignatureShare(state.binding_index.get(tx.author, 0), bytes.fromhex(tx.signature))
            if not sign_share_verify(share, bytes.fromhex(z_j), message):
                return f"{kind.value} share of {tx.author[:8]} does not verify"
        elif kind == TxKind.CLUSTER_PUBKEY:
            if not group_sign_verify(tx.signing_bytes(), bytes.fromhex(tx.signature), bytes.fromhex(p["y"])):
                return f"cluster {p['cluster_id']} key is not signed under itself"
            if not _epid_ok(ctx, p, cluster_key_message(p), p["epid_signature"]):
                return f"cluster {p['cluster_id']} leader EPID signature does not verify"
        elif kind == TxKind.USAGE_REPORT:
            y = state.cluster_keys.get(cluster_key_id(p["cluster_id"], p["key_epoch"]))
            if y is None:
                return f"no registered key for cluster {p['cluster_id']} epoch {p['key_epoch']}"
            if not group_sign_verify(tx.signing_bytes(), bytes.fromhex(tx.signature), bytes.fromhex(y)):
                return f"usage report of cluster {p['cluster_id']} fails group verification"
        elif kind == TxKind.EPOCH_AVAILABILITY:
            if ctx.record_key is None:
                return "no DB record key to check availability against"
            rows = np.array([np.frombuffer(bytes.fromhex(r), dtype=np.uint8) for r in p["rows"]])
            if rows.size and not verify_rows(rows, ctx.record_key, random.Random(tx.tx_hash)):
                return "availability rows fail DB signature verification"
    except (DecodeError, ValueError) as e:
        return f"{kind.value}: malformed field: {e}"
    return None


def apply_transaction(tx: Transaction, state: ChainState, ctx: ChainContext) -> None:
    p = tx.payload
    kind = tx.kind
    if kind == TxKind.CLUSTER_PUBKEY:
        cid = str(p["cluster_id"])
        state.cluster_keys[cluster_key_id(p["cluster_id"], p["key_epoch"])] = p["y"]
        keys, roles = dict(state.validators.keys), dict(state.validators.roles)
        previous = state.cluster_leaders.get(cid)
        if previous is not None:
            keys.pop(previous, None)
            roles.pop(previous, None)
        keys[p["leader_validator"]] = p["validator_key"]
        roles[p["leader_validator"]] = "leader"
        state.cluster_leaders[cid] = p["leader_validator"]
        state.validators = ValidatorSet(keys, roles)
    elif kind == TxKind.BEACON_ISSUE:
        beacon = p["beacon"]
        if beacon["beacon_id"] not in state.removed_beacons:
            state.beacons[beacon["beacon_id"]] = beacon
    elif kind == TxKind.REVOCATION:
        state.revocations = revoke(state.revocations, target_from_dict(p["target"]))
        ctx.revocations[(state.group_id, state.revocations.version)] = state.revocations
        beacon_id = p.get("beacon_id")
        if beacon_id and beacon_id in state.beacons:
            del state.beacons[beacon_id]
            state.removed_beacons.append(beacon_id)
        validator = p.get("validator")
        if validator and validator in state.validators:
            keys = {v: k for v, k in state.validators.keys.items() if v != validator}
            roles = {v: r for v, r in state.validators.roles.items() if v != validator}
            state.validators = ValidatorSet(keys, roles)
            state.cluster_leaders = {c: v for c, v in state.cluster_leaders.items() if v != validator}
    elif kind == TxKind.GROUP_RENEWAL:
        kpk = GroupPublicKey.from_dict(p["kpk"])
        state.retired_groups.append(p["retired_group"])
        state.group_id = kpk.group_id.hex()
        state.revocations = RevocationList()
        ctx.group_keys[state.group_id] = kpk
    elif kind == TxKind.USAGE_REPORT:
        state.usage_reports.append(tx.tx_hash)
    elif kind == TxKind.EPOCH_AVAILABILITY:
        state.availability[str(p["epoch"])] = tx.tx_hash
    elif kind == TxKind.CONTRACT_TRIGGER:
        state.assignments[str(p["epoch"])] = p["assignment_digest"]


def _apply_block(block: Block, state: ChainState, ctx: ChainContext) -> None:
    """
    Verify and apply transactions in order.

    A batch of key bindings for a newer key epoch replaces the local
    validator set once the whole block is applied.

    Raises:
        TransactionError: a transaction fails verification
    """
    new_bindings: Dict[str, Tuple[int, str, str, int]] = {}
    for tx in block.transactions:
        reason = verify_transaction(tx, state, ctx)
        if reason is not None:
            raise TransactionError(f"height {block.height}: {reason}")
        if tx.kind == TxKind.KEY_BINDING and int(tx.payload["key_epoch"]) > state.key_epoch:
            p = tx.payload
            new_bindings[p["pseudonym"]] = (int(p["key_epoch"]), p["z_j"], p["y"], int(p["index"]))
        else:
            apply_transaction(tx, state, ctx)
    if new_bindings:
        epochs = {b[0] for b in new_bindings.values()}
        ys = {b[2] for b in new_bindings.values()}
        if len(epochs) != 1 or len(ys) != 1:
            raise TransactionError("key bindings in one block disagree on key epoch or y")
        state.key_epoch = epochs.pop()
        state.y = ys.pop()
        state.bindings = {p: b[1] for p, b in new_bindings.items()}
        state.binding_index = {p: b[3] for p, b in new_bindings.items()}
        state.validators = ValidatorSet(dict(state.bindings), {p: "member" for p in state.bindings})


def genesis_state(genesis: dict, ctx: ChainContext) -> ChainState:
    validators = ValidatorSet.from_dict(genesis["validators"])
    params = genesis.get("params", {})
    state = ChainState(validators=validators, params=params)
    if "kpk" in params:
        kpk = GroupPublicKey.from_dict(params["kpk"])
        state.group_id = kpk.group_id.hex()
        ctx.group_keys[state.group_id] = kpk
    if "record_key" in params and ctx.record_key is None:
        ctx.record_key = bytes.fromhex(params["record_key"])
    if "y" in params:
        state.y = params["y"]
        state.key_epoch = int(params.get("key_epoch", 0))
        state.bindings = {v: validators.keys[v] for v in validators.keys}
        state.binding_index = {v: int(i) for v, i in params.get("indices", {}).items()}
    return state


class Chain:
    """An append-only chain with its replayed state and per-height validator sets"""

    def __init__(self, name: str, genesis: Block, context: Optional[ChainContext] = None):
        if genesis.height != 0 or genesis.genesis is None:
            raise ChainError(f"{name}: first block must be a genesis block")
        self.name = name
        self.context = context or ChainContext()
        self.state = genesis_state(genesis.genesis, self.context)
        if genesis.state_root != self.state.root():
            raise ChainError(f"{name}: genesis state root mismatch")
        self.blocks: List[Block] = [genesis]
        self.summaries: List[dict] = [self.state.summary()]
        self._validators: List[ValidatorSet] = [self.state.validators]

    @classmethod
    def create(cls, name: str, validators: ValidatorSet, params: dict,
               context: Optional[ChainContext] = None, timestamp: float = 0.0) -> "Chain":
        context = context or ChainContext()
        genesis_data = {"name": name, "validators": validators.to_dict(), "params": params}
        root = genesis_state(genesis_data, ChainContext(record_key=context.record_key)).root()
        genesis = Block(0, ZERO_HASH, (), "genesis", timestamp, root, genesis_data)
        return cls(name, genesis, context)

    @property
    def head(self) -> Block:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return self.head.height

    def validators_for(self, height: int) -> ValidatorSet:
        """Set that must sign block `height`: the state after block height-1"""
        if not 1 <= height <= len(self._validators):
            raise ChainError(f"{self.name}: no validator set for height {height}")
        return self._validators[height - 1]

    @property
    def next_validators(self) -> ValidatorSet:
        return self._validators[-1]

    def _replay(self, block: Block) -> Tuple[ChainState, ChainContext]:
        state = copy.deepcopy(self.state)
        ctx = ChainContext(self.context.record_key, dict(self.context.group_keys),
                           dict(self.context.revocations), self.context.verify_signatures)
        try:
            _apply_block(block, state, ctx)
        except TransactionError as e:
            raise TransactionError(f"{self.name}: {e}") from e
        return state, ctx

    def propose(self, transactions: Sequence[Transaction], proposer: str, timestamp: float) -> Block:
        """
        Build the next block over the current head, without a commit proof.

        Raises:
            TransactionError: a transaction does not verify
        """
        draft = Block(self.height + 1, self.head.block_hash, tuple(transactions), proposer, timestamp, "")
        state, _ = self._replay(draft)
        return Block(draft.height, draft.previous_hash, draft.transactions, proposer, timestamp, state.root())

    def validate_proposal(self, block: Block) -> Optional[str]:
        """What an honest validator checks before voting; None when acceptable"""
        if block.height != self.height + 1 or block.previous_hash != self.head.block_hash:
            return f"block {block.height} does not extend head {self.height}"
        try:
            state, _ = self._replay(block)
        except ChainError as e:
            return str(e)
        if state.root() != block.state_root:
            return f"block {block.height} state root mismatch"
        return None

    def append_block(self, block: Block) -> "Chain":
        """
        Raises:
            ForkError: block does not extend the head
            QuorumError: commit proof missing, short of quorum or invalid
            TransactionError: an embedded signature does not verify
            ChainError: state root mismatch
        """
        if block.height != self.height + 1 or block.previous_hash != self.head.block_hash:
            raise ForkError(f"{self.name}: block {block.height} with parent {block.previous_hash[:12]} "
                            f"does not extend head {self.height} ({self.head.block_hash[:12]})")
        validators = self.next_validators
        if not verify_commit_proof(block, validators):
            signers = len(block.commit_proof.signers) if block.commit_proof else 0
            raise QuorumError(f"{self.name}: block {block.height} commit proof invalid "
                              f"({signers} signers, quorum {validators.quorum} of {validators.n})")
        state, ctx = self._replay(block)
        if state.root() != block.state_root:
            raise ChainError(f"{self.name}: block {block.height} state root mismatch")
        self.state = state
        self.context.group_keys.update(ctx.group_keys)
        self.context.revocations.update(ctx.revocations)
        self.blocks.append(block)
        self.summaries.append(state.summary())
        self._validators.append(state.validators)
        logger.debug(f"{self.name}: appended block {block.height} ({len(block.transactions)} txs)")
        return self

    def transactions(self, kind: Optional[TxKind] = None) -> List[Tuple[int, Transaction]]:
        return [(b.height, tx) for b in self.blocks for tx in b.transactions if kind is None or tx.kind == kind]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(b.to_dict(), sort_keys=True, separators=(",", ":")) + "\n" for b in self.blocks)

    def dump(self, path: Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


def append_block(chain: Chain, block: Block) -> Chain:
    return chain.append_block(block)


def revocation_update(chain: Chain, tx: Transaction, certify: Callable[[Block], Optional[CommitProof]],
                      timestamp: float) -> Chain:
    """
    Commit a Revocation transaction on the global chain.

    Args:
        certify: runs agreement on the proposal, returning its commit proof
            or None on abort

    Raises:
        TransactionError: author is not a DB validator or the signature fails
        ChainError: consensus aborted
    """
    if tx.kind != TxKind.REVOCATION:
        raise TransactionError(f"expected a Revocation transaction, got {tx.kind.value}")
    if chain.state.validators.roles.get(tx.author) != "db":
        raise TransactionError(f"revocation author {tx.author} is not a DB validator")
    block = chain.propose([tx], tx.author, timestamp)
    proof = certify(block)
    if proof is None:
        raise ChainError(f"{chain.name}: revocation block {block.height} was not committed")
    return chain.append_block(block.with_proof(proof))


def load_blocks(path: Path) -> List[Block]:
    """
    Raises:
        DecodeError: a line is not valid JSON or not a block
    """
    blocks = []
    for number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            blocks.append(Block.from_dict(json.loads(line)))
        except json.JSONDecodeError as e:
            raise DecodeError(f"{path}:{number}: {e}") from e
    return blocks


@dataclass
class AuditReport:
    chain: str
    ok: bool
    height: int
    errors: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"chain": self.chain, "ok": self.ok, "height": self.height, "errors": list(self.errors)}


def audit_chain(blocks: Sequence[Block], context: Optional[ChainContext] = None,
                name: str = "chain") -> Tuple[AuditReport, Optional[Chain]]:
    """
    Re-verify linkage, commit proofs, state roots and embedded signatures
    from genesis.

    Returns:
        the report and the rebuilt chain (None when genesis itself fails)
    """
    if not blocks:
        return AuditReport(name, False, -1, ["empty chain"]), None
    try:
        chain = Chain(name, blocks[0], context)
    except ChainError as e:
        return AuditReport(name, False, -1, [str(e)]), None
    for block in blocks[1:]:
        try:
            chain.append_block(block)
        except ChainError as e:
            return AuditReport(name, False, chain.height, [str(e)]), chain
    return AuditReport(name, True, chain.height), chain


@dataclass(frozen=True)
class Checkpoint:
    height: int
    block_hash: str
    state_root: str
    summary: dict


class LightChainCopy:
    """
    Headers plus the latest certified state summary of a chain.

    Every header is accepted only with a commit proof valid for the
    validator set certified by the previous summary.
    """

    def __init__(self, genesis: Block):
        summary = genesis_state(genesis.genesis, ChainContext()).summary()
        self.headers: List[dict] = [genesis.header()]
        self._hashes: List[str] = [genesis.block_hash]
        self.checkpoint = Checkpoint(0, genesis.block_hash, genesis.state_root, summary)

    @property
    def height(self) -> int:
        return self.checkpoint.height

    @property
    def validators(self) -> ValidatorSet:
        return ValidatorSet.from_dict(self.checkpoint.summary["validators"])

    def accept(self, block: Block, summary: dict) -> None:
        """
        Raises:
            ForkError: header does not extend the copy
            QuorumError: commit proof invalid for the certified validator set
            ChainError: summary does not match the header's state root
        """
        if block.height != self.height + 1 or block.previous_hash != self._hashes[-1]:
            raise ForkError(f"light copy: header {block.height} does not extend {self.height}")
        if not verify_commit_proof(block, self.validators):
            raise QuorumError(f"light copy: header {block.height} lacks a valid commit proof")
        if sha256_hex(canonical_json(summary)) != block.state_root:
            raise ChainError(f"light copy: summary for {block.height} does not match its state root")
        self.headers.append(block.header())
        self._hashes.append(block.block_hash)
        self.checkpoint = Checkpoint(block.height, block.block_hash, block.state_root, summary)

    def sync(self, chain: Chain) -> int:
        """Pull headers and summaries from a full copy; returns the number accepted"""
        accepted = 0
        for height in range(self.height + 1, chain.height + 1):
            self.accept(chain.blocks[height], chain.summaries[height])
            accepted += 1
        return accepted

    @property
    def valid_beacons(self) -> List[str]:
        return list(self.checkpoint.summary["beacons"])

    @property
    def revocation_version(self) -> int:
        return int(self.checkpoint.summary["revocation_version"])

    def cluster_key(self, cluster_id: int, key_epoch: int) -> Optional[str]:
        return self.checkpoint.summary["cluster_keys"].get(cluster_key_id(cluster_id, key_epoch))
