"""
Bootstrapping, peering and clustering, and peering with the DBs.

The FCC sets up the EPID group, the DBs receive Kpk and their replicas,
anchors authenticate pairwise, every SU peers through an anchor, clusters
form and key themselves, and finally each leader joins the global validator
set and obtains a beacon.
"""
from __future__ import annotations

import itertools
import logging
from typing import Generator, Iterable, List, Optional, Tuple

from ..core.event_handler import ProtocolEvents
from ..core.errors import InsufficientSharesError
from ..core.utilities import sha256_hex
from ..crypto.bls import BlsKeyPair
from ..crypto.epid import EpidIssuer, EpidParty, LinkTagEntry, epid_join, epid_setup
from ..crypto.tbls import SignatureShare, group_sign_verify, robust_reconstruct, sign_share_gen
from ..entities.clusters import Beacon, ClusterState, form_clusters
from ..entities.nodes import DbNode, FccNode, SuNode, new_pseudonym, place_sus
from ..entities.spectrum import SpectrumDB
from ..ledger.chain import (
    Chain, LightChainCopy, Transaction, TxKind, ValidatorSet, cluster_key_message, sign_transaction,
)
from .system import GLOBAL_CHAIN, TrustSasSystem

logger = logging.getLogger(__name__)

CHALLENGE_BYTES = 37
SHARE_BYTES = 48


def register_su(system: TrustSasSystem, identity: str, cell: int, anchors: Iterable[str] = ()) -> SuNode:
    """FCC registration: blind issuance of sk_SU plus the anchor list"""
    rng = system.rng(identity)
    secret = system.fcc.register(identity, rng)
    su = SuNode(identity, new_pseudonym(rng), cell, secret, rng, anchors=tuple(anchors))
    system.sus[su.pseudonym] = su
    system.protocol_logger.register_identities([identity])
    return su


def two_way_authenticate(system: TrustSasSystem, a: SuNode, b: SuNode) -> Generator:
    """
    TwoWayEPID over the network: each side signs the other's fresh challenge.

    Returns:
        (a proved membership to b, b proved membership to a)
    """
    kpk, revocations = system.kpk, system.revocations
    cal = system.calibration
    m_a, m_b = a.party.issue_challenge(), b.party.issue_challenge()
    reached_b = yield from system.transfer(a.pseudonym, b.pseudonym, "epid:challenge", CHALLENGE_BYTES)
    reached_a = yield from system.transfer(b.pseudonym, a.pseudonym, "epid:challenge", CHALLENGE_BYTES)
    if not (reached_a and reached_b):
        a.party.consume(m_a)
        b.party.consume(m_b)
        return False, False
    sig_a = a.sign(m_b, kpk, revocations)
    sig_b = b.sign(m_a, kpk, revocations)
    yield system.all_work([a.pseudonym, b.pseudonym], cal.epid_sign_s, "epid_sign")
    got_b = yield from system.transfer(a.pseudonym, b.pseudonym, "epid:signature", len(sig_a.encode()))
    got_a = yield from system.transfer(b.pseudonym, a.pseudonym, "epid:signature", len(sig_b.encode()))
    a_ok = b.party.accept(m_b, sig_a if got_b else None, kpk, revocations)
    b_ok = a.party.accept(m_a, sig_b if got_a else None, kpk, revocations)
    yield system.all_work([a.pseudonym, b.pseudonym], cal.epid_verify_s, "epid_verify")
    return a_ok, b_ok


def cluster_sign(system: TrustSasSystem, cluster: ClusterState, message: bytes,
                 share_event: Optional[str] = None) -> Generator:
    """
    Cluster group signature: members send TBLS shares to the leader, which
    reconstructs from the ones that verify.

    Args:
        share_event: event emitted for every member whose share reaches the leader

    Returns:
        the signature, or None with fewer than t+1 valid shares
    """
    cal = system.calibration
    leader = system.sus[cluster.leader]
    members = system.keyed_members(cluster)
    if leader.keys is None or cluster.leader not in members:
        return None
    others = [p for p in members if p != cluster.leader]
    reached = yield from system.scatter(cluster.leader, others, "tbls:request", len(message) + 16)
    signers = [cluster.leader] + reached
    yield system.all_work(signers, cal.share_gen_s, "share_gen")
    shares = {p: sign_share_gen(system.sus[p].keys.x_j, message, system.sus[p].keys.index) for p in signers}
    heard = yield from system.gather(reached, cluster.leader, "tbls:share", SHARE_BYTES)
    collected: List[SignatureShare] = [shares[cluster.leader]] + [shares[p] for p in heard]
    if share_event is not None:
        for p in [cluster.leader] + heard:
            system.emit(share_event, p, {"cluster": cluster.cluster_id, "index": shares[p].index})
    t = leader.keys.t
    yield system.work(cluster.leader, cal.share_verify_s * len(collected), "share_verify", len(collected))
    try:
        sigma = robust_reconstruct(collected, leader.keys.z, message, t, system.rng(f"combine:{cluster.cluster_id}"))
    except InsufficientSharesError as e:
        logger.warning(f"cluster {cluster.cluster_id}: {e}")
        return None
    yield system.work(cluster.leader, cal.reconstruct(t), "reconstruct")
    return sigma


# Bootstrapping

def bootstrap(system: TrustSasSystem) -> Generator:
    """FCC keys, DB replicas, anchor mesh and SU registration"""
    cfg = system.config
    fcc_rng = system.rng("fcc")
    system.fcc = FccNode(EpidIssuer(epid_setup(128, fcc_rng), fcc_rng), fcc_rng)
    kpk = system.kpk
    system.context.group_keys[system.group_id] = kpk
    system.emit(ProtocolEvents.GROUP_KEYS_GENERATED, "fcc",
                {"group_id": system.group_id, "epoch": kpk.epoch}, "fcc")

    consortium_rng = system.rng("consortium")
    system.record_signer = BlsKeyPair.generate(consortium_rng)
    primary = SpectrumDB.generate(system.layout, system.record_signer, consortium_rng, system.rules,
                                  cfg.grid.availability)
    for i in range(cfg.population.dbs):
        rng = system.rng(f"db{i}")
        db = DbNode(i, primary.replicate(i), BlsKeyPair.generate(rng), system.record_signer, rng,
                    byzantine_pir=i in cfg.byzantine.pir_servers)
        system.dbs.append(db)
    for db in system.dbs:
        yield from system.transfer("fcc", db.name, "kpk", len(kpk.encode()))
        system.emit(ProtocolEvents.KPK_DISTRIBUTED, db.name,
                    {"group_id": system.group_id, "replica": db.replica.digest()[:16]}, "db")

    positions = []
    for g, group in enumerate(cfg.population.groups):
        placed = place_sus(tuple(group.center), group.spread, group.sus, cfg.grid.n, system.rng(f"placement:{g}"))
        positions.extend(system.grid.cell_id(row, col) for row, col in placed)
    anchor_count = min(cfg.population.anchors, len(positions))

    anchors = [register_su(system, f"su-{k}", positions[k]) for k in range(anchor_count)]
    for k in cfg.byzantine.revoked_anchors:
        if k < anchor_count:
            system.revoke_early(system.fcc.issuer_revocation(anchors[k].identity))
    mesh = yield from authenticate_anchors(system, anchors)
    system.fcc.anchors = [a.pseudonym for a in mesh]
    for a in mesh:
        a.anchors = tuple(p for p in system.fcc.anchors if p != a.pseudonym)

    for k in range(len(positions)):
        if k < anchor_count:
            su = anchors[k]
        else:
            su = register_su(system, f"su-{k}", positions[k], system.fcc.anchors)
        yield from system.transfer("fcc", su.pseudonym, "register", 256 + 16 * len(system.fcc.anchors))
        system.emit(ProtocolEvents.SU_REGISTERED, su.pseudonym,
                    {"registration": k, "anchors": len(system.fcc.anchors)}, "fcc")
    logger.info(f"bootstrap: {len(system.dbs)} DBs, {len(mesh)}/{anchor_count} anchors, {len(positions)} SUs")


def authenticate_anchors(system: TrustSasSystem, anchors: List[SuNode]) -> Generator:
    """
    Pairwise TwoWayEPID among anchors; an anchor whose signature fails any
    run is excluded.

    Returns:
        anchors kept in the mesh
    """
    failed = set()
    links: List[Tuple[str, str]] = []
    for a, b in itertools.combinations(anchors, 2):
        a_ok, b_ok = yield from two_way_authenticate(system, a, b)
        if not a_ok:
            failed.add(a.pseudonym)
        if not b_ok:
            failed.add(b.pseudonym)
        if a_ok and b_ok:
            links.append((a.pseudonym, b.pseudonym))
    for a, b in links:
        system.peers[a].add(b)
        system.peers[b].add(a)
        system.emit(ProtocolEvents.ANCHOR_AUTHENTICATED, a, {"peer": b})
    for a in anchors:
        if a.pseudonym in failed:
            a.revoked = True
            system.emit(ProtocolEvents.ANCHOR_EXCLUDED, a.pseudonym, {"reason": "TwoWayEPID failed"})
    return [a for a in anchors if a.pseudonym not in failed]


# Peering and clustering

def peer_and_cluster(system: TrustSasSystem) -> Generator:
    """SUs peer through an anchor, clusters form and run their first rekeying"""
    from .membership import rekeying

    cfg = system.config.cluster
    peered = []
    for su in sorted(system.sus.values(), key=lambda s: s.pseudonym):
        if su.revoked:
            continue
        if su.pseudonym in system.fcc.anchors:
            peered.append(su)
            continue
        if not su.anchors:
            peered.append(su)
            system.emit(ProtocolEvents.SU_PEERED, su.pseudonym, {"anchor": None})
            continue
        anchor = system.sus[su.anchors[su.rng.randrange(len(su.anchors))]]
        su_ok, anchor_ok = yield from two_way_authenticate(system, su, anchor)
        if su_ok and anchor_ok:
            system.peers[su.pseudonym].add(anchor.pseudonym)
            system.peers[anchor.pseudonym].add(su.pseudonym)
            peered.append(su)
            system.emit(ProtocolEvents.SU_PEERED, su.pseudonym, {"anchor": anchor.pseudonym})
        else:
            su.revoked = not su_ok
            logger.warning(f"SU {su.pseudonym[:8]} could not peer with anchor {anchor.pseudonym[:8]}")

    clusters = form_clusters([(su.pseudonym, su.cell) for su in peered], system.grid, cfg.radius, cfg.tau,
                             cfg.t_epoch_s, cfg.t_beacon_s, cfg.beacon_duration_s, cfg.max_members)
    system.emit(ProtocolEvents.CLUSTERS_FORMED, "sim",
                {"clusters": len(clusters), "sizes": [c.n for c in clusters]})
    for cluster in clusters:
        system.state.add_cluster(cluster)
        for p in cluster.members:
            system.sus[p].cluster_id = cluster.cluster_id
        system.emit(ProtocolEvents.LEADER_ELECTED, cluster.leader,
                    {"cluster": cluster.cluster_id, "reason": "initial"})
    for cluster in clusters:
        yield from rekeying(system, cluster)


# Peering with DBs

def peer_with_dbs(system: TrustSasSystem, forged_leaders: Iterable[int] = ()) -> Generator:
    """
    Global chain genesis among the DBs, then each leader authenticates, joins
    the validator set with its cluster key and obtains a beacon.

    Args:
        forged_leaders: clusters whose leader answers the DB challenge with a
            credential from outside the group
    """
    forged = set(forged_leaders)
    validators = ValidatorSet({db.name: db.key.public.hex() for db in system.dbs},
                              {db.name: "db" for db in system.dbs})
    params = {"kpk": system.kpk.to_dict(), "record_key": system.record_signer.public.hex()}
    system.global_chain = Chain.create(GLOBAL_CHAIN, validators, params, system.context, system.sim.now)
    system.emit(ProtocolEvents.VALIDATOR_SET_FORMED, system.dbs[0].name,
                {"validators": validators.n, "quorum": validators.quorum}, "db")

    pending, system.pending_revocations = system.pending_revocations, []
    for target in pending:
        yield from system.revoke_on_chain(target, "issuer revocation")

    for cid in sorted(system.state.clusters):
        yield from connect_cluster(system, system.state.clusters[cid], forge=cid in forged)
    logger.info(f"global chain: {system.global_chain.next_validators.n} validators after peering")


def connect_cluster(system: TrustSasSystem, cluster: ClusterState, forge: bool = False) -> Generator:
    """Leader authentication, cluster key submission and beacon issuance"""
    accepted = yield from authenticate_leader(system, cluster, forge)
    if not accepted:
        return False
    submitted = yield from submit_cluster_key(system, cluster)
    if not submitted:
        return False
    beacon = yield from issue_beacon(system, cluster)
    return beacon is not None


def authenticate_leader(system: TrustSasSystem, cluster: ClusterState, forge: bool = False) -> Generator:
    """
    The contact DB challenges the leader, which answers with an EPID signature.

    A failed signature gets its (challenge, link tag) revoked and leaves the
    cluster unpeered.
    """
    cal = system.calibration
    db = system.db(cluster.cluster_id)
    leader = system.sus[cluster.leader]
    kpk, revocations = system.kpk, system.revocations
    challenge = db.challenger.issue_challenge()
    reached = yield from system.transfer(db.name, leader.pseudonym, "epid:challenge", CHALLENGE_BYTES)
    if not reached:
        db.challenger.consume(challenge)
        return False
    if forge:
        rogue = EpidIssuer(epid_setup(128, leader.rng), leader.rng)
        rogue_secret = epid_join(rogue.public, rogue, leader.rng)
        signature = EpidParty(leader.pseudonym, rogue_secret, leader.rng).respond(challenge, rogue.public, revocations)
    else:
        signature = leader.sign(challenge, kpk, revocations)
    yield system.work(leader.pseudonym, cal.epid_sign_s, "epid_sign")
    delivered = yield from system.transfer(leader.pseudonym, db.name, "epid:signature", len(signature.encode()))
    accepted = db.challenger.accept(challenge, signature if delivered else None, kpk, revocations)
    yield system.work(db.name, cal.epid_verify_s, "epid_verify")
    if accepted:
        db.sessions.record(leader.pseudonym, revocations)
        system.emit(ProtocolEvents.LEADER_AUTHENTICATED, db.name,
                    {"cluster": cluster.cluster_id, "link_tag": signature.link_tag.hex()[:16]}, "db")
        return True
    system.emit(ProtocolEvents.LEADER_REJECTED, db.name,
                {"cluster": cluster.cluster_id, "link_tag": signature.link_tag.hex()[:16]}, "db")
    if delivered:
        yield from system.revoke_on_chain(LinkTagEntry(challenge, signature.link_tag), "leader authentication failed",
                                          author=db)
    return False


def submit_cluster_key(system: TrustSasSystem, cluster: ClusterState) -> Generator:
    """ClusterPubKey transaction: y, the leader's validator key, its EPID signature and a group signature"""
    cal = system.calibration
    db = system.db(cluster.cluster_id)
    leader = system.sus[cluster.leader]
    validator = leader.ensure_validator()
    revocations = system.revocations
    payload = {
        "cluster_id": cluster.cluster_id,
        "key_epoch": cluster.key_epoch,
        "y": cluster.y.hex(),
        "leader_validator": leader.validator_id,
        "validator_key": validator.public.hex(),
        "group_id": system.group_id,
        "revocation_version": revocations.version,
    }
    payload["epid_signature"] = leader.sign(cluster_key_message(payload), system.kpk, revocations).encode().hex()
    yield system.work(leader.pseudonym, cal.epid_sign_s, "epid_sign")
    unsigned = Transaction(TxKind.CLUSTER_PUBKEY, payload, leader.validator_id)
    sigma = yield from cluster_sign(system, cluster, unsigned.signing_bytes())
    if sigma is None:
        return False
    tx = Transaction(TxKind.CLUSTER_PUBKEY, payload, leader.validator_id, sigma.hex())
    delivered = yield from system.transfer(leader.pseudonym, db.name, "chain:tx", tx.wire_size())
    if not delivered:
        return False
    chain = system.global_chain
    block = chain.propose([tx], db.name, system.sim.now)
    outcome = yield from system.commit(chain, block, cal.group_verify_s + cal.epid_verify_s)
    if not outcome.committed:
        return False
    system.emit(ProtocolEvents.CLUSTER_KEY_SUBMITTED, db.name, {
        "cluster": cluster.cluster_id, "key_epoch": cluster.key_epoch, "validator": leader.validator_id,
        "y": cluster.y.hex()[:16],
    }, "db")
    return True


def issue_beacon(system: TrustSasSystem, cluster: ClusterState) -> Generator:
    """
    Beacon challenge-response: the cluster group-signs a DB challenge and the
    DB registers the beacon on the global chain.

    Returns:
        the Beacon, or None when the response fails
    """
    cal = system.calibration
    cfg = system.config.cluster
    db = system.db(cluster.cluster_id)
    challenge = db.challenger.issue_challenge()
    yield from system.transfer(db.name, cluster.leader, "beacon:challenge", CHALLENGE_BYTES)
    sigma = yield from cluster_sign(system, cluster, challenge)
    delivered = False
    if sigma is not None:
        delivered = yield from system.transfer(cluster.leader, db.name, "beacon:response", len(sigma))
    fresh = db.challenger.consume(challenge)
    yield system.work(db.name, cal.group_verify_s, "group_verify")
    if not (delivered and fresh and group_sign_verify(challenge, sigma, cluster.y)):
        logger.warning(f"cluster {cluster.cluster_id}: beacon challenge not answered")
        return None
    beacon = Beacon(
        beacon_id=sha256_hex(challenge + cluster.y)[:16],
        cluster_id=cluster.cluster_id,
        issuer=db.name,
        period_s=cfg.t_beacon_s,
        duration_s=cfg.beacon_duration_s,
        control_channel=cfg.control_channel,
        cells=cluster.cells,
    )
    tx = sign_transaction(TxKind.BEACON_ISSUE, {"beacon": beacon.to_dict()}, db.name, db.key.secret)
    chain = system.global_chain
    outcome = yield from system.commit(chain, chain.propose([tx], db.name, system.sim.now), cal.bls_verify_s)
    if not outcome.committed:
        return None
    cluster.beacon = beacon
    offset = db.rng.uniform(0.0, cfg.t_beacon_s - cfg.beacon_duration_s)
    system.state.put_on_air(beacon, offset)
    system.emit(ProtocolEvents.BEACON_ISSUED, db.name, {
        "cluster": cluster.cluster_id, "beacon": beacon.beacon_id, "cells": list(beacon.cells),
    }, "db")
    return beacon


def light_copy(system: TrustSasSystem, su: SuNode) -> Optional[LightChainCopy]:
    """Bring an SU's light copy of the global chain up to date"""
    if system.global_chain is None:
        return None
    if su.light is None:
        su.light = LightChainCopy(system.global_chain.blocks[0])
    su.light.sync(system.global_chain)
    return su.light
