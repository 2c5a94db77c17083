"""
Cluster membership over time: rekeying, joins, leader replacement,
member revocation and EPID group renewal.
"""
from __future__ import annotations

import logging
from typing import Dict, Generator, Optional

from ..core.errors import ChainError, DKGFailure
from ..core.event_handler import ProtocolEvents
from ..core.metrics import OperationRecord
from ..crypto.epid import RevocationTarget
from ..crypto.tbls import InMemoryTransport, dkg, sign_share_gen
from ..entities.clusters import ClusterState, cluster_threshold, elect_leader
from ..entities.nodes import SuNode
from ..ledger.chain import Chain, Transaction, TxKind, ValidatorSet, binding_message, sign_transaction
from .bootstrap import (
    CHALLENGE_BYTES, authenticate_leader, issue_beacon, light_copy, submit_cluster_key, two_way_authenticate,
)
from .system import TrustSasSystem, local_chain_name

logger = logging.getLogger(__name__)

SHARE_MESSAGE_BYTES = 96


def _settle_members(system: TrustSasSystem, cluster: ClusterState) -> None:
    """Admit pending joiners, drop crashed and revoked members"""
    cluster.members.update(cluster.pending_joins)
    cluster.pending_joins.clear()
    for p in list(cluster.members):
        if not system.alive(p) or system.sus[p].revoked:
            del cluster.members[p]
            cluster.active_from.pop(p, None)
            system.sus[p].cluster_id = None
    if cluster.members and cluster.leader not in cluster.members:
        cluster.leader = elect_leader(cluster.members)
        system.emit(ProtocolEvents.LEADER_ELECTED, cluster.leader,
                    {"cluster": cluster.cluster_id, "reason": "leader left"})


def rekeying(system: TrustSasSystem, cluster: ClusterState, reason: str = "membership") -> Generator:
    """
    Fresh DKG among the current members, key bindings on the local chain and
    the new cluster key on the global chain.

    Returns:
        the OperationRecord, or None when the cluster is empty
    """
    cal = system.calibration
    cid = cluster.cluster_id
    started = system.sim.now
    _settle_members(system, cluster)
    if not cluster.members:
        logger.warning(f"cluster {cid}: no members left to rekey")
        return None

    members = cluster.sorted_members()
    indices = {p: i + 1 for i, p in enumerate(members)}
    key_epoch = cluster.key_epoch + 1
    t = cluster_threshold(len(members))
    transport = InMemoryTransport()
    try:
        materials = dkg(list(indices.values()), t, system.rng(f"dkg:{cid}:{key_epoch}"), transport)
    except DKGFailure as e:
        logger.error(f"cluster {cid}: {e}")
        return system.record_operation("rekeying", cid, started, {}, "failed")
    yield system.all_work(members, cal.dkg(len(members)), "dkg")
    yield from system.all_to_all(members, "dkg:share", SHARE_MESSAGE_BYTES * (t + 1))
    members = [p for p in members if indices[p] in materials]
    y = next(iter(materials.values())).y
    system.emit(ProtocolEvents.DKG_COMPLETED, cluster.leader, {
        "cluster": cid, "n": len(members), "t": t, "key_epoch": key_epoch,
        "messages": transport.messages_sent, "reason": reason,
    })
    t_dkg = system.sim.now

    kpk, revocations = system.kpk, system.revocations
    bindings = []
    for p in members:
        keys = materials[indices[p]]
        payload = {
            "cluster_id": cid, "key_epoch": key_epoch, "index": keys.index, "pseudonym": p,
            "z_j": keys.z_j.hex(), "y": y.hex(), "group_id": system.group_id,
            "revocation_version": revocations.version,
        }
        payload["binding_share"] = sign_share_gen(keys.x_j, binding_message(payload), keys.index).sigma.hex()
        unsigned = Transaction(TxKind.KEY_BINDING, payload, p)
        signature = system.sus[p].sign(unsigned.signing_bytes(), kpk, revocations)
        bindings.append(Transaction(TxKind.KEY_BINDING, payload, p, signature.encode().hex()))
    yield system.all_work(members, cal.share_gen_s, "share_gen")
    yield system.all_work(members, cal.epid_sign_s, "epid_sign")
    for tx in bindings:
        system.emit(ProtocolEvents.KEY_BOUND, tx.author,
                    {"cluster": cid, "key_epoch": key_epoch, "index": tx.payload["index"]})
    others = [p for p in members if p != cluster.leader]
    yield from system.gather(others, cluster.leader, "chain:tx", bindings[0].wire_size())
    t_bind = system.sim.now

    chain = system.local_chains.get(cid)
    secrets: Optional[Dict[str, int]] = None
    if chain is None:
        validators = ValidatorSet({p: materials[indices[p]].z_j.hex() for p in members},
                                  {p: "member" for p in members})
        params = {"y": y.hex(), "key_epoch": key_epoch, "indices": {p: indices[p] for p in members}}
        chain = Chain.create(local_chain_name(cid), validators, params, system.context, system.sim.now)
        system.local_chains[cid] = chain
        secrets = {p: materials[indices[p]].x_j for p in members}
    current = chain.next_validators
    proposer = cluster.leader if cluster.leader in current else next(
        (v for v in current.ids() if system.alive(v)), current.ids()[0])
    block = chain.propose(bindings, proposer, system.sim.now)
    validate_cost = len(members) * (cal.share_verify_s + cal.epid_verify_s)
    outcome = yield from system.commit(chain, block, validate_cost, secrets=secrets)
    t_local = system.sim.now
    if not outcome.committed:
        logger.warning(f"cluster {cid}: key bindings for epoch {key_epoch} not committed")
        return system.record_operation("rekeying", cid, started, {
            "dkg": t_dkg - started, "bind": t_bind - t_dkg, "local_bft": t_local - t_bind}, "failed")

    for p in members:
        system.sus[p].keys = materials[indices[p]]
        system.sus[p].cluster_id = cid
    cluster.y = y
    cluster.z = {p: materials[indices[p]].z_j for p in members}
    cluster.indices = {p: indices[p] for p in members}
    cluster.key_epoch = key_epoch
    system.emit(ProtocolEvents.BINDINGS_COMMITTED, cluster.leader,
                {"cluster": cid, "key_epoch": key_epoch, "height": chain.height, "members": len(members)})

    status = "ok"
    if system.global_chain is not None:
        db = system.db(cid)
        authenticated = db.sessions.is_valid(cluster.leader, system.revocations)
        if not authenticated:
            authenticated = yield from authenticate_leader(system, cluster)
        submitted = authenticated and (yield from submit_cluster_key(system, cluster))
        if submitted:
            system.emit(ProtocolEvents.GLOBAL_KEY_UPDATED, db.name,
                        {"cluster": cid, "key_epoch": key_epoch}, "db")
        else:
            status = "unpeered"
    return system.record_operation("rekeying", cid, started, {
        "dkg": t_dkg - started, "bind": t_bind - t_dkg, "local_bft": t_local - t_bind,
        "global_bft": system.sim.now - t_local,
    }, status)


def _admission_open(system: TrustSasSystem, cluster: ClusterState) -> bool:
    """The post-join member count must fit the remaining capacity of the cluster's cells"""
    if not system.config.cluster.admission_check:
        return True
    records = system.availability.get((cluster.cluster_id, system.state.epoch))
    if records is None:
        return True
    capacity = sum(rec.remaining_capacity(system.state.epoch) for rec in records)
    return cluster.n + len(cluster.pending_joins) + 1 <= capacity


def join_cluster(system: TrustSasSystem, su: SuNode) -> Generator:
    """
    A new SU scans for beacons, authenticates with the closest leader and
    waits for the next epoch's rekeying; with no beacon in range it founds a
    cluster of its own.

    Returns:
        the ClusterState joined or founded, None when denied
    """
    cfg = system.config.cluster
    started = system.sim.now
    light = light_copy(system, su)
    valid = light.valid_beacons if light is not None else []
    window = cfg.t_beacon_s + cfg.beacon_duration_s
    yield system.sim.timeout(window)
    heard = system.state.audible_beacons(su.cell, valid, started, window)
    system.emit(ProtocolEvents.BEACON_SCANNED, su.pseudonym, {"heard": len(heard), "window": window})
    t_scan = system.sim.now
    if not heard:
        cluster = yield from found_cluster(system, su, started, t_scan)
        return cluster

    beacon, cluster = heard[0]
    cid = cluster.cluster_id
    if not system.alive(cluster.leader):
        system.emit(ProtocolEvents.JOIN_DENIED, su.pseudonym, {"cluster": cid, "reason": "leader unreachable"})
        system.record_operation("join", cid, started, {"scan": t_scan - started}, "denied")
        return None
    if not _admission_open(system, cluster):
        system.emit(ProtocolEvents.JOIN_DENIED, su.pseudonym, {"cluster": cid, "reason": "cluster at channel capacity"})
        system.record_operation("join", cid, started, {"scan": t_scan - started}, "denied")
        return None

    leader = system.sus[cluster.leader]
    su_ok, leader_ok = yield from two_way_authenticate(system, su, leader)
    t_auth = system.sim.now
    if not (su_ok and leader_ok):
        system.emit(ProtocolEvents.JOIN_DENIED, su.pseudonym, {"cluster": cid, "reason": "TwoWayEPID failed"})
        system.record_operation("join", cid, started,
                                {"scan": t_scan - started, "authenticate": t_auth - t_scan}, "denied")
        return None
    system.emit(ProtocolEvents.JOIN_AUTHENTICATED, su.pseudonym, {"cluster": cid, "beacon": beacon.beacon_id})

    system.peers[su.pseudonym].add(leader.pseudonym)
    system.peers[leader.pseudonym].add(su.pseudonym)
    chain = system.local_chains[cid]
    size = sum(b.wire_size() for b in chain.blocks)
    yield from system.transfer(leader.pseudonym, su.pseudonym, "chain:download", size)
    t_download = system.sim.now
    system.emit(ProtocolEvents.JOIN_ACCEPTED, su.pseudonym, {"cluster": cid, "height": chain.height, "bytes": size})

    epoch = system.state.epoch
    su.cluster_id = cid
    cluster.pending_joins[su.pseudonym] = su.cell
    cluster.active_from[su.pseudonym] = epoch + 1
    system.emit(ProtocolEvents.REKEY_SCHEDULED, leader.pseudonym, {"cluster": cid, "epoch": epoch + 1})
    system.record_operation("join", cid, started, {
        "scan": t_scan - started, "authenticate": t_auth - t_scan, "download": t_download - t_auth,
    })
    return cluster


def found_cluster(system: TrustSasSystem, su: SuNode, started: float, t_scan: float) -> Generator:
    """No beacon heard: the SU becomes leader of a new cluster and peers with the DBs"""
    cfg = system.config.cluster
    cid = system.state.next_cluster_id()
    cluster = ClusterState(cid, su.cell, {su.pseudonym: su.cell}, su.pseudonym, cfg.tau,
                           cfg.t_epoch_s, cfg.t_beacon_s, cfg.beacon_duration_s)
    system.state.add_cluster(cluster)
    su.cluster_id = cid
    system.emit(ProtocolEvents.NEW_CLUSTER_CREATED, su.pseudonym, {"cluster": cid, "cell": su.cell})
    system.emit(ProtocolEvents.LEADER_ELECTED, su.pseudonym, {"cluster": cid, "reason": "founder"})
    record = yield from rekeying(system, cluster, "founded")
    t_rekey = system.sim.now
    beacon = None
    if record is not None and record.status == "ok":
        beacon = yield from issue_beacon(system, cluster)
    system.record_operation("join", cid, started, {
        "scan": t_scan - started, "rekeying": t_rekey - t_scan, "beacon": system.sim.now - t_rekey,
    }, "founded" if beacon is not None else "unpeered")
    return cluster


def replace_leader(system: TrustSasSystem, cluster: ClusterState, reason: str,
                   evidence: Optional[RevocationTarget] = None, revoke: bool = True) -> Generator:
    """
    Members elect a new leader, revoke the old one with its beacon, rekey and
    obtain a new beacon.

    Args:
        evidence: revocation target proving misbehaviour; defaults to the
            EPID signature the leader put on the cluster key
        revoke: False when the caller already committed the revocation
    """
    cid = cluster.cluster_id
    old = system.sus[cluster.leader]
    beacon_id = cluster.beacon.beacon_id if cluster.beacon is not None else None
    if revoke and system.global_chain is not None:
        target = (evidence or system.leader_link_entry(cid, old.validator_id)
                  or system.member_link_entry(cid, old.pseudonym))
        validator = old.validator_id if old.validator_id in system.global_chain.next_validators else None
        if target is not None:
            committed = yield from system.revoke_on_chain(target, reason, author=system.db(cid),
                                                          beacon_id=beacon_id, validator=validator)
            if committed:
                system.emit(ProtocolEvents.LEADER_REVOKED, system.db(cid).name,
                            {"cluster": cid, "beacon": beacon_id, "validator": validator, "reason": reason}, "db")
    if beacon_id is not None:
        system.state.take_off_air(beacon_id)
    old.revoked = True
    old.validator = None
    cluster.members.pop(old.pseudonym, None)
    cluster.active_from.pop(old.pseudonym, None)
    old.cluster_id = None
    if not cluster.members:
        return None
    cluster.leader = elect_leader(system.live_members(cluster) or cluster.members)
    system.emit(ProtocolEvents.LEADER_ELECTED, cluster.leader, {"cluster": cid, "reason": reason})
    record = yield from rekeying(system, cluster, "leader replaced")
    if record is None or record.status != "ok":
        return None
    beacon = yield from issue_beacon(system, cluster)
    return cluster.leader if beacon is not None else None


def revoke_member(system: TrustSasSystem, cluster: ClusterState, pseudonym: str) -> Generator:
    """Revoke a member's credential through its key-binding signature, then rekey without it"""
    if pseudonym == cluster.leader:
        result = yield from replace_leader(system, cluster, "member revoked")
        return result is not None
    target = system.member_link_entry(cluster.cluster_id, pseudonym)
    if target is None:
        return False
    committed = yield from system.revoke_on_chain(target, "member revoked", author=system.db(cluster.cluster_id))
    if not committed:
        return False
    system.sus[pseudonym].revoked = True
    system.emit(ProtocolEvents.MEMBER_REVOKED, system.db(cluster.cluster_id).name,
                {"cluster": cluster.cluster_id, "revocation_version": system.revocations.version}, "db")
    record = yield from rekeying(system, cluster, "member revoked")
    return record is not None and record.status == "ok"


def renew_group(system: TrustSasSystem) -> Generator:
    """
    Replace the EPID group once the revocation list outgrows its threshold.

    Unrevoked SUs prove membership under the retiring group to the FCC and
    receive a credential for the new one; revoked ones are left out.

    Returns:
        True when a renewal was committed
    """
    cal = system.calibration
    revocations = system.revocations
    if len(revocations) <= system.config.cluster.renewal_threshold:
        return False
    fcc = system.fcc
    old_kpk = fcc.kpk
    retired = system.group_id
    proofs = {}
    for su in sorted(system.sus.values(), key=lambda s: s.pseudonym):
        if su.revoked or not system.alive(su.pseudonym):
            continue
        challenge = fcc.challenger.issue_challenge()
        yield from system.transfer("fcc", su.pseudonym, "epid:challenge", CHALLENGE_BYTES)
        signature = su.sign(challenge, old_kpk, revocations)
        yield system.work(su.pseudonym, cal.epid_sign_s, "epid_sign")
        yield from system.transfer(su.pseudonym, "fcc", "epid:signature", len(signature.encode()))
        proofs[su.pseudonym] = fcc.challenger.accept(challenge, signature, old_kpk, revocations)
        yield system.work("fcc", cal.epid_verify_s, "epid_verify")

    new_kpk = fcc.renew()
    author = system.dbs[0]
    tx = sign_transaction(TxKind.GROUP_RENEWAL, {"kpk": new_kpk.to_dict(), "retired_group": retired},
                          author.name, author.key.secret)
    chain = system.global_chain
    outcome = yield from system.commit(chain, chain.propose([tx], author.name, system.sim.now), cal.bls_verify_s)
    if not outcome.committed:
        raise ChainError(f"group renewal to epoch {new_kpk.epoch} was not committed")
    for db in system.dbs:
        yield from system.transfer("fcc", db.name, "kpk", len(new_kpk.encode()))

    renewed = 0
    for pseudonym, ok in proofs.items():
        su = system.sus[pseudonym]
        if not ok:
            su.revoked = True
            continue
        su.recredential(fcc.register(su.identity, su.rng))
        renewed += 1
    system.invalidate_sessions()
    system.emit(ProtocolEvents.GROUP_RENEWED, "fcc", {
        "retired_group": retired, "group_id": system.group_id, "epoch": new_kpk.epoch,
        "renewed": renewed, "retired_entries": len(revocations),
    }, "fcc")
    logger.info(f"EPID group renewed: {renewed} members moved to epoch {new_kpk.epoch}")
    return True


def rekey_pending(system: TrustSasSystem, cluster: ClusterState) -> Generator:
    """Epoch-end rekeying for joiners; their join records absorb its duration"""
    joiners = set(cluster.pending_joins)
    record: Optional[OperationRecord] = yield from rekeying(system, cluster, "join")
    if record is None:
        return None
    for op in system.operations:
        if op.operation == "join" and op.cluster_id == cluster.cluster_id and op.status == "ok" \
                and "rekeying" not in op.components:
            op.components["rekeying"] = record.duration
    if joiners:
        logger.info(f"cluster {cluster.cluster_id}: {len(joiners)} joiners admitted at key epoch {cluster.key_epoch}")
    return record
