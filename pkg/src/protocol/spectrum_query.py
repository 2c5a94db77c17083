"""
Private spectrum query: tau-signature authorization with the contact DB,
BatchPIR retrieval of the cluster's rows, the epoch availability block on
the local chain and the allocation contract.
"""
from __future__ import annotations

import logging
from typing import Generator, List, Optional, Tuple

import numpy as np

from ..core.errors import InvariantViolation, PIRError, TransactionError
from ..core.event_handler import ProtocolEvents
from ..crypto.epid import LinkTagEntry
from ..crypto.tbls import sign_share_gen
from ..entities.clusters import ClusterState
from ..entities.nodes import DbNode, membership_digest
from ..entities.spectrum import SpectrumRecord, verify_rows
from ..ledger.chain import Block, Transaction, TxKind
from ..ledger.contract import AssignmentMap, check_assignment, execute_contract
from ..pir.batch_pir import PIRClient
from .bootstrap import CHALLENGE_BYTES
from .membership import replace_leader
from .system import TrustSasSystem

logger = logging.getLogger(__name__)

# a tampered availability row has this byte of its record body flipped
TAMPER_OFFSET = 8


def expected_query_time(system: TrustSasSystem, cluster: ClusterState) -> float:
    """Simulated round trip of an honest query; the leader timeout is a multiple of it"""
    cal = system.calibration
    q = len(system.layout.rows_for_cells(cluster.cells)) or 1
    r, s = system.layout.r, system.layout.b
    latency = system.config.network.latency_s
    return (cal.epid_sign_s + cluster.tau * cal.epid_verify_s
            + cal.pir_query_gen(q, r, len(system.dbs)) + cal.pir_process(q, r, s) + 6 * latency)


def authorize_query(system: TrustSasSystem, cluster: ClusterState, db: DbNode,
                    forge: bool = False) -> Generator:
    """
    Gather tau EPID signatures over a fresh DB challenge.

    A forging leader signs all tau itself; signatures on one challenge are
    linkable, so the DB sees a single signer.

    Returns:
        ("authorized" | "deferred" | "rejected", revocation evidence or None)
    """
    cal = system.calibration
    kpk, revocations = system.kpk, system.revocations
    leader = system.sus[cluster.leader]
    tau = cluster.tau
    challenge = db.challenger.issue_challenge()
    reached = yield from system.transfer(db.name, leader.pseudonym, "query:challenge", CHALLENGE_BYTES)
    if not reached:
        db.challenger.consume(challenge)
        return "deferred", None

    if forge:
        signatures = [leader.sign(challenge, kpk, revocations) for _ in range(tau)]
        yield system.work(leader.pseudonym, cal.epid_sign_s * tau, "epid_sign", tau)
    else:
        others = [p for p in system.keyed_members(cluster) if p != leader.pseudonym]
        asked = yield from system.scatter(leader.pseudonym, others[:tau - 1], "query:challenge", CHALLENGE_BYTES)
        signers = [leader.pseudonym] + asked
        signatures = [system.sus[p].sign(challenge, kpk, revocations) for p in signers]
        yield system.all_work(signers, cal.epid_sign_s, "epid_sign")
        yield from system.gather(asked, leader.pseudonym, "epid:signature", len(signatures[0].encode()))
    system.emit(ProtocolEvents.QUERY_SIGNATURES_GATHERED, leader.pseudonym,
                {"cluster": cluster.cluster_id, "signatures": len(signatures), "tau": tau})

    size = sum(len(sig.encode()) for sig in signatures)
    yield from system.transfer(leader.pseudonym, db.name, "query:signatures", size)
    reason = db.authorize(challenge, signatures, kpk, revocations, tau)
    yield system.work(db.name, cal.epid_verify_s * len(signatures), "epid_verify", len(signatures))
    if reason is None:
        system.emit(ProtocolEvents.QUERY_AUTHORIZED, db.name,
                    {"cluster": cluster.cluster_id, "signatures": len(signatures)}, "db")
        return "authorized", None
    if len(signatures) < tau:
        system.emit(ProtocolEvents.QUERY_DEFERRED, db.name, {"cluster": cluster.cluster_id, "reason": reason}, "db")
        return "deferred", None
    system.emit(ProtocolEvents.QUERY_REJECTED, db.name, {"cluster": cluster.cluster_id, "reason": reason}, "db")
    evidence: LinkTagEntry = signatures[0].revocation_entry(challenge)
    return "rejected", evidence


def batch_pir(system: TrustSasSystem, cluster: ClusterState, rows: List[int]) -> Generator:
    """
    Retrieve `rows` from the DB replicas without revealing them.

    Returns:
        the verified record matrix, or None when too few servers answer correctly
    """
    cal = system.calibration
    cid, epoch = cluster.cluster_id, system.state.epoch
    leader = cluster.leader
    layout = system.layout
    q, r, s = len(rows), layout.r, layout.b
    seed = system.rng(f"pir:{cid}:{epoch}:{system.sim.now}").getrandbits(64)
    client = PIRClient(len(system.dbs), system.config.pir.t, r, s, np.random.default_rng(seed))
    _, messages = client.queries(rows)
    yield system.work(leader, cal.pir_query_gen(q, r, len(system.dbs)), "pir_query_gen")

    by_name = {db.name: db for db in system.dbs}
    reached = yield from system.scatter(leader, list(by_name), "pir:query", len(next(iter(messages.values()))))
    yield system.all_work(reached, cal.pir_process(q, r, s), "pir_process")
    answers = {}
    for name in reached:
        db = by_name[name]
        answers[name] = db.serve(messages[db.point])
        system.emit(ProtocolEvents.PIR_SERVED, name, {"queries": q, "rows": r}, "db")
    heard = yield from system.gather(reached, leader, "pir:response", len(next(iter(answers.values()), b"")))
    responses = [client.receive(by_name[name].point, answers[name]) for name in heard]

    verify_rng = system.rng(f"pir-verify:{cid}:{epoch}")
    try:
        records = client.retrieve(responses, verify=lambda m: verify_rows(m, system.record_signer.public, verify_rng))
    except PIRError as e:
        logger.warning(f"cluster {cid}: PIR retrieval failed: {e}")
        return None
    yield system.work(leader, cal.record_verify_s * q, "pir_reconstruct")

    point = by_name[heard[0]].point
    counter = client.counters[point]
    system.pir_batches.append({
        "cluster_id": cid, "epoch": epoch, "q": q, "r": r, "s": s, "servers": len(system.dbs),
        "answered": len(heard), "t": system.config.pir.t,
        "elements_per_server": counter.elements_up + counter.elements_down,
        "bytes_up": sum(c.bytes_up for c in client.counters.values()),
        "bytes_down": sum(c.bytes_down for c in client.counters.values()),
    })
    system.emit(ProtocolEvents.PIR_BATCH_COMPLETED, leader, {"cluster": cid, "q": q, "servers": len(heard)})
    return records


def _availability_block(system: TrustSasSystem, cluster: ClusterState, rows: List[int], records: np.ndarray,
                        assignment: AssignmentMap, tamper: bool) -> Tuple[Transaction, Block]:
    """EpochAvailability plus the leader's ContractTrigger, as one local block"""
    chain = system.local_chains[cluster.cluster_id]
    leader = system.sus[cluster.leader]
    row_hex = [bytes(records[i]).hex() for i in range(len(rows))]
    if tamper and row_hex:
        bad = bytearray(bytes.fromhex(row_hex[0]))
        bad[TAMPER_OFFSET] ^= 0xFF
        row_hex[0] = bad.hex()
    availability = Transaction(TxKind.EPOCH_AVAILABILITY, {
        "cluster_id": cluster.cluster_id, "epoch": assignment.epoch, "indices": list(rows), "rows": row_hex,
    }, leader.pseudonym)
    trigger_payload = {"cluster_id": cluster.cluster_id, "epoch": assignment.epoch,
                       "availability_tx": availability.tx_hash, "assignment_digest": assignment.digest()}
    unsigned = Transaction(TxKind.CONTRACT_TRIGGER, trigger_payload, leader.pseudonym)
    share = sign_share_gen(leader.keys.x_j, unsigned.signing_bytes(), leader.keys.index)
    trigger = Transaction(TxKind.CONTRACT_TRIGGER, trigger_payload, leader.pseudonym, share.sigma.hex())
    if tamper:
        return availability, system.draft_block(chain, [availability, trigger], leader.pseudonym)
    return availability, chain.propose([availability, trigger], leader.pseudonym, system.sim.now)


def private_spectrum_query(system: TrustSasSystem, cluster: ClusterState, forge: bool = False,
                           tamper: bool = False) -> Generator:
    """
    One epoch's spectrum query for a cluster.

    A crashed leader is detected by timeout and replaced; a leader that forges
    the tau signatures or submits altered availability rows is revoked and
    replaced, and the query restarts under the new leader.

    Args:
        forge: the leader answers the DB challenge with its own signatures only
        tamper: the leader alters one retrieved row before proposing it

    Returns:
        the epoch's AssignmentMap, or None when the query is deferred or fails
    """
    cal = system.calibration
    cid = cluster.cluster_id
    epoch = system.state.epoch
    started = system.sim.now
    components = {}

    while True:
        if not cluster.members:
            return None
        if not system.alive(cluster.leader):
            waited = system.config.cluster.leader_timeout_factor * expected_query_time(system, cluster)
            yield system.sim.timeout(waited)
            live = system.live_members(cluster)
            system.emit(ProtocolEvents.LEADER_TIMEOUT, live[0] if live else "sim",
                        {"cluster": cid, "waited": waited})
            t0 = system.sim.now
            replaced = yield from replace_leader(system, cluster, "leader timeout")
            components["timeout"] = components.get("timeout", 0.0) + waited
            components["recovery"] = components.get("recovery", 0.0) + system.sim.now - t0
            if replaced is None:
                system.record_operation("query", cid, started, components, "failed")
                return None
            continue

        db = system.db(cid)
        keyed = set(system.keyed_members(cluster))
        active = [(p, cell) for p, cell in cluster.active_members(epoch) if p in keyed]
        if not active:
            system.record_operation("query", cid, started, components, "deferred")
            return None
        cache_key = (membership_digest([p for p, _ in active], cluster.key_epoch), system.revocations.version)
        if forge:
            db.authorized.pop(cid, None)
        t0 = system.sim.now
        if db.authorized.get(cid) != cache_key:
            status, evidence = yield from authorize_query(system, cluster, db, forge)
            components["authorize"] = components.get("authorize", 0.0) + system.sim.now - t0
            if status == "deferred":
                system.record_operation("query", cid, started, components, "deferred")
                return None
            if status == "rejected":
                forge = False
                t1 = system.sim.now
                replaced = yield from replace_leader(system, cluster, "forged query signatures", evidence)
                components["recovery"] = components.get("recovery", 0.0) + system.sim.now - t1
                if replaced is None:
                    system.record_operation("query", cid, started, components, "failed")
                    return None
                continue
            db.authorized[cid] = cache_key

        t1 = system.sim.now
        rows = system.layout.rows_for_cells({cell for _, cell in active})
        records = yield from batch_pir(system, cluster, rows)
        components["pir"] = components.get("pir", 0.0) + system.sim.now - t1
        if records is None:
            system.record_operation("query", cid, started, components, "failed")
            return None

        retrieved = [SpectrumRecord.from_row(bytes(records[i])) for i in range(len(rows))]
        members = [p for p, _ in active]
        assignment = execute_contract(system.rules, active, retrieved, epoch)
        violations = check_assignment(assignment, system.rules, retrieved, epoch)
        if violations:
            raise InvariantViolation(f"cluster {cid} epoch {epoch}: {violations}")

        t2 = system.sim.now
        chain = system.local_chains[cid]
        availability, block = _availability_block(system, cluster, rows, records, assignment, tamper)
        system.emit(ProtocolEvents.AVAILABILITY_SUBMITTED, cluster.leader,
                    {"cluster": cid, "epoch": epoch, "rows": len(rows), "height": block.height})

        def validate(proposal: Block) -> Optional[str]:
            reason = chain.validate_proposal(proposal)
            if reason is not None:
                return reason
            mine = execute_contract(system.rules, active, retrieved, epoch).digest()
            for tx in proposal.transactions:
                if tx.kind == TxKind.CONTRACT_TRIGGER and tx.payload["assignment_digest"] != mine:
                    return "assignment digest differs from local contract execution"
            return None

        validate_cost = len(rows) * cal.record_verify_s + cal.share_verify_s
        reproposal = (lambda proposer: None) if tamper else None
        try:
            outcome = yield from system.commit(chain, block, validate_cost, validate=validate, reproposal=reproposal)
        except TransactionError as e:
            logger.warning(f"cluster {cid}: availability block rejected: {e}")
            outcome = None
        components["local_bft"] = components.get("local_bft", 0.0) + system.sim.now - t2
        if outcome is None or not outcome.committed:
            system.emit(ProtocolEvents.AVAILABILITY_REJECTED, cluster.leader,
                        {"cluster": cid, "epoch": epoch, "height": block.height})
            tamper = False
            t3 = system.sim.now
            replaced = yield from replace_leader(system, cluster, "invalid availability block")
            components["recovery"] = components.get("recovery", 0.0) + system.sim.now - t3
            if replaced is None:
                system.record_operation("query", cid, started, components, "failed")
                return None
            continue

        system.emit(ProtocolEvents.AVAILABILITY_COMMITTED, cluster.leader,
                    {"cluster": cid, "epoch": epoch, "height": chain.height})
        digests = {execute_contract(system.rules, active, retrieved, epoch).digest() for _ in members}
        if digests != {assignment.digest()}:
            raise InvariantViolation(f"cluster {cid}: members disagree on the epoch {epoch} assignment")
        system.emit(ProtocolEvents.CONTRACT_EXECUTED, cluster.leader, {
            "cluster": cid, "epoch": epoch, "assigned": len(assignment), "members": len(members),
            "digest": assignment.digest()[:16], "availability_tx": availability.tx_hash[:16],
        })
        system.assignments[(cid, epoch)] = assignment
        system.availability[(cid, epoch)] = retrieved
        system.record_operation("query", cid, started, components)
        return assignment
