"""
Spectrum usage notification: the cluster group-signs its per-(cell, channel)
usage and the global validators commit it, after which every DB replica
updates the affected records.
"""
from __future__ import annotations

import logging
from typing import Generator, Optional

from ..core.event_handler import ProtocolEvents
from ..crypto.tbls import sign_share_gen
from ..entities.clusters import ClusterState
from ..ledger.chain import Transaction, TxKind
from ..ledger.contract import AssignmentMap, usage_summary
from .bootstrap import cluster_sign
from .membership import replace_leader
from .system import TrustSasSystem

logger = logging.getLogger(__name__)


def spectrum_usage_notification(system: TrustSasSystem, cluster: ClusterState, assignment: AssignmentMap,
                                forge: bool = False) -> Generator:
    """
    Report the epoch's usage to the global chain.

    A forging leader signs the report with its own share only. Validators
    reject it, the leader is revoked with its beacon, members elect a new
    leader and the report is resubmitted without the old leader's assignment.

    Returns:
        the committed UsageReport transaction, or None when signing stalls
        or consensus aborts
    """
    cal = system.calibration
    cid = cluster.cluster_id
    epoch = assignment.epoch
    started = system.sim.now

    while True:
        leader = system.sus[cluster.leader]
        usage = usage_summary(assignment)
        payload = {"cluster_id": cid, "key_epoch": cluster.key_epoch, "epoch": epoch,
                   "usage": [entry.to_dict() for entry in usage]}
        unsigned = Transaction(TxKind.USAGE_REPORT, payload, leader.validator_id)
        system.emit(ProtocolEvents.USAGE_BLOCK_BUILT, leader.pseudonym,
                    {"cluster": cid, "epoch": epoch, "entries": len(usage)})
        t0 = system.sim.now
        if forge:
            sigma: Optional[bytes] = sign_share_gen(leader.keys.x_j, unsigned.signing_bytes(), leader.keys.index).sigma
            yield system.work(leader.pseudonym, cal.share_gen_s, "share_gen")
        else:
            sigma = yield from cluster_sign(system, cluster, unsigned.signing_bytes(),
                                            share_event=ProtocolEvents.USAGE_SHARE_CONTRIBUTED)
        if sigma is None:
            logger.warning(f"cluster {cid}: usage report for epoch {epoch} stalled")
            system.record_operation("usage", cid, started, {"sign": system.sim.now - t0}, "stalled")
            return None
        system.emit(ProtocolEvents.USAGE_SIGNED, leader.pseudonym, {"cluster": cid, "epoch": epoch})
        tx = Transaction(TxKind.USAGE_REPORT, payload, leader.validator_id, sigma.hex())
        t1 = system.sim.now

        db = system.db(cid)
        chain = system.global_chain
        proposer = leader.validator_id if leader.validator_id in chain.next_validators else db.name
        yield from system.transfer(leader.pseudonym, db.name, "chain:tx", tx.wire_size())
        if forge:
            block = system.draft_block(chain, [tx], proposer)
            outcome = yield from system.commit(chain, block, cal.group_verify_s, reproposal=lambda node: None)
        else:
            block = chain.propose([tx], proposer, system.sim.now)
            outcome = yield from system.commit(chain, block, cal.group_verify_s)
        components = {"sign": t1 - t0, "global_bft": system.sim.now - t1}

        if outcome.committed:
            entries = usage_summary(assignment)
            updated = []
            for replica in system.dbs:
                updated = replica.replica.apply_usage(entries, epoch, system.record_signer)
            system.emit(ProtocolEvents.USAGE_COMMITTED, db.name, {
                "cluster": cid, "epoch": epoch, "rows": len(updated), "height": chain.height,
            }, "db")
            system.record_operation("usage", cid, started, components)
            return tx

        if not forge:
            logger.warning(f"cluster {cid}: usage report for epoch {epoch} not committed")
            system.record_operation("usage", cid, started, components, "failed")
            return None

        system.record_operation("usage", cid, t0, components, "rejected")
        forge = False
        beacon_id = cluster.beacon.beacon_id if cluster.beacon is not None else None
        validator = leader.validator_id if leader.validator_id in chain.next_validators else None
        target = system.leader_link_entry(cid, leader.validator_id) or system.member_link_entry(cid, leader.pseudonym)
        if target is not None:
            revoked = yield from system.revoke_on_chain(target, "forged usage report", author=db,
                                                        beacon_id=beacon_id, validator=validator)
            if revoked:
                system.emit(ProtocolEvents.LEADER_REVOKED, db.name,
                            {"cluster": cid, "beacon": beacon_id, "validator": validator}, "db")
        replaced = yield from replace_leader(system, cluster, "forged usage report", revoke=False)
        if replaced is None:
            system.record_operation("usage", cid, started, {}, "failed")
            return None
        assignment = AssignmentMap(epoch, tuple(a for a in assignment.assignments if a.pseudonym in cluster.members))
