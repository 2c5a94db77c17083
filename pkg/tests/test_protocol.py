import json
import logging

import pytest

from src.core.config import build_config, load_config
from src.core.errors import PrivacyViolation
from src.core.event_handler import ALGORITHM_STEPS, BaseEvent, EventHandler, ProtocolEvents
from src.core.metrics import read_table
from src.core.protocol_logger import ProtocolEventLogger, load_trace
from src.core.scenario_engine import ScenarioEngine, run_scenario
from src.crypto.tbls import sign_share_gen, sign_share_verify
from src.ledger.chain import ChainContext, TxKind, audit_chain, load_blocks
from src.ledger.contract import check_assignment
from src.protocol.bootstrap import bootstrap, peer_and_cluster, peer_with_dbs, register_su
from src.protocol.membership import join_cluster, rekey_pending, rekeying
from src.protocol.system import GLOBAL_CHAIN, local_chain_name

from conftest import CONFIG_DIR

TINY = {
    "name": "tiny",
    "seed": 5,
    "epochs": 1,
    "grid": {"n": 4, "channels": 4, "max_concurrent_sus": 2},
    "pir": {"t": 1},
    "cluster": {"radius": 1, "tau": 2, "t_epoch_s": 3600.0},
    "consensus": {"fanout": 3},
    "population": {"dbs": 3, "anchors": 1, "groups": [{"center": [1, 1], "spread": 0, "sus": 3}]},
}

# steps every healthy epoch goes through
HEALTHY_STEPS = [
    ProtocolEvents.GROUP_KEYS_GENERATED, ProtocolEvents.KPK_DISTRIBUTED, ProtocolEvents.SU_REGISTERED,
    ProtocolEvents.SU_PEERED, ProtocolEvents.CLUSTERS_FORMED, ProtocolEvents.LEADER_ELECTED,
    ProtocolEvents.VALIDATOR_SET_FORMED, ProtocolEvents.LEADER_AUTHENTICATED,
    ProtocolEvents.CLUSTER_KEY_SUBMITTED, ProtocolEvents.BEACON_ISSUED, ProtocolEvents.DKG_COMPLETED,
    ProtocolEvents.KEY_BOUND, ProtocolEvents.BINDINGS_COMMITTED, ProtocolEvents.QUERY_SIGNATURES_GATHERED,
    ProtocolEvents.QUERY_AUTHORIZED, ProtocolEvents.PIR_BATCH_COMPLETED, ProtocolEvents.AVAILABILITY_SUBMITTED,
    ProtocolEvents.AVAILABILITY_COMMITTED, ProtocolEvents.CONTRACT_EXECUTED, ProtocolEvents.USAGE_BLOCK_BUILT,
    ProtocolEvents.USAGE_SHARE_CONTRIBUTED, ProtocolEvents.USAGE_SIGNED, ProtocolEvents.USAGE_COMMITTED,
]


def test_algorithm_steps_use_declared_events():
    declared = {v for k, v in vars(ProtocolEvents).items() if k.isupper()}
    assert set(ALGORITHM_STEPS.values()) <= declared
    assert len(set(ALGORITHM_STEPS.values())) == len(ALGORITHM_STEPS)


def test_event_handler_dispatch_and_history():
    clock = iter([1.0, 2.0, 3.0])
    events = EventHandler(clock=lambda: next(clock), max_history=2)
    seen = []
    events.subscribe(ProtocolEvents.BEACON_ISSUED, lambda ev: seen.append(ev.sim_time))
    events.emit(ProtocolEvents.BEACON_ISSUED, "db0", side="db")
    events.emit(ProtocolEvents.SU_PEERED, "a")
    events.emit(ProtocolEvents.BEACON_ISSUED, "db0", side="db")
    assert seen == [1.0, 3.0]
    assert len(events.get_event_history()) == 2
    assert events.count(ProtocolEvents.BEACON_ISSUED) == 1


def test_db_side_events_never_carry_true_identities():
    protocol_logger = ProtocolEventLogger(logging.WARNING)
    protocol_logger.register_identities(["su-0"])
    protocol_logger(BaseEvent(ProtocolEvents.SU_REGISTERED, 0.0, "ab" * 8, {"identity": "su-0"}, "fcc"))
    protocol_logger(BaseEvent(ProtocolEvents.QUERY_AUTHORIZED, 1.0, "db0", {"cluster": 0}, "db"))
    with pytest.raises(PrivacyViolation):
        protocol_logger(BaseEvent(ProtocolEvents.QUERY_AUTHORIZED, 2.0, "db0", {"from": "su-0"}, "db"))
    assert len(protocol_logger.trace) == 2


def test_trace_hash_and_dump(tmp_path):
    first, second = ProtocolEventLogger(logging.WARNING), ProtocolEventLogger(logging.WARNING)
    for protocol_logger in (first, second):
        protocol_logger(BaseEvent(ProtocolEvents.EPOCH_STARTED, 0.0, "sim", {"epoch": 1}))
    assert first.trace_hash() == second.trace_hash()
    second(BaseEvent(ProtocolEvents.EPOCH_STARTED, 5.0, "sim", {"epoch": 2}))
    assert first.trace_hash() != second.trace_hash()
    path = tmp_path / "trace.jsonl"
    second.dump_trace(path)
    assert load_trace(path) == second.trace
    assert [r["detail"]["epoch"] for r in second.events(ProtocolEvents.EPOCH_STARTED)] == [1, 2]


def test_engine_indexes_script_by_epoch():
    config = load_config(str(CONFIG_DIR / "scenarios" / "reference.json"))
    engine = ScenarioEngine(config)
    assert engine.initialize()
    assert sorted(engine.script) == [2, 3]
    assert [e.kind for e in engine.script[2]] == ["pu_vacate", "leader_crash", "join"]
    assert engine.system.network.crashed == set()


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    config = build_config(dict(TINY), debug_invariants=True)
    engine = ScenarioEngine(config)
    report = engine.run()
    engine.write_outputs(out, report)
    return engine, report, out


@pytest.mark.slow
def test_tiny_scenario_traces_every_healthy_step(tiny_run):
    engine, report, _ = tiny_run
    traced = {r["event"] for r in engine.system.protocol_logger.trace}
    missing = [event for event in HEALTHY_STEPS if event not in traced]
    assert not missing
    assert report.invariant_violations == 0


@pytest.mark.slow
def test_tiny_scenario_keeps_replicas_and_chains_sound(tiny_run):
    engine, _, _ = tiny_run
    checks = engine.system.protocol_logger.events(ProtocolEvents.REPLICAS_CHECKED)
    assert checks and all(c["detail"]["consistent"] for c in checks)
    audits = engine.audit()
    assert [a["chain"] for a in audits] == [GLOBAL_CHAIN] + [local_chain_name(c) for c in
                                                             sorted(engine.system.local_chains)]
    assert all(a["ok"] for a in audits)


@pytest.mark.slow
def test_tiny_scenario_writes_outputs(tiny_run):
    _, report, out = tiny_run
    assert (out / "chains" / f"{GLOBAL_CHAIN}.jsonl").exists()
    assert len(load_trace(out / "trace.jsonl")) > 0
    rows = {row["operation"] for row in read_table(out / "tables" / "end_to_end.csv")}
    assert {"rekeying", "query", "usage"} <= rows
    for row in read_table(out / "tables" / "pir.csv"):
        if row["operation"].startswith("BatchPIR communication"):
            assert row["analytic_model"].endswith("= " + row["measured"])


@pytest.mark.slow
def test_same_seed_same_trace(tiny_run):
    _, report, _ = tiny_run
    again = run_scenario(build_config(dict(TINY), debug_invariants=True))
    assert again.trace_hash == report.trace_hash


@pytest.mark.slow
def test_byzantine_scenario_contains_misbehaviour(tmp_path):
    config = load_config(str(CONFIG_DIR / "scenarios" / "byzantine.json"), debug_invariants=True)
    engine = ScenarioEngine(config)
    report = engine.run()
    trace = engine.system.protocol_logger
    assert trace.events(ProtocolEvents.QUERY_REJECTED)
    assert trace.events(ProtocolEvents.JOIN_DENIED)
    assert all(c["detail"]["consistent"] for c in trace.events(ProtocolEvents.REPLICAS_CHECKED))
    assert all(a["ok"] for a in engine.audit())
    assert report.invariant_violations == 0


@pytest.fixture(scope="module")
def reference_run(tmp_path_factory):
    config = load_config(str(CONFIG_DIR / "scenarios" / "reference.json"), debug_invariants=True)
    engine = ScenarioEngine(config)
    assert engine.initialize()
    system = engine.system
    crashed = []

    def on_leader_timeout(event):
        cluster = system.state.clusters[event.detail["cluster"]]
        crashed.append(system.leader_link_entry(cluster.cluster_id, system.sus[cluster.leader].validator_id))

    system.events.subscribe(ProtocolEvents.LEADER_TIMEOUT, on_leader_timeout)
    report = engine.run()
    out = engine.write_outputs(tmp_path_factory.mktemp("reference"), report)
    return engine, report, crashed, out


@pytest.mark.slow
def test_reference_scenario_survives_leader_crash(reference_run):
    engine, report, crashed, _ = reference_run
    trace = engine.system.protocol_logger
    assert trace.events(ProtocolEvents.LEADER_TIMEOUT)
    assert trace.events(ProtocolEvents.PU_VACATED)
    assert trace.events(ProtocolEvents.LEADER_REVOKED)
    # the crashed leader is revoked through its signature on the cluster key
    assert crashed and all(entry is not None for entry in crashed)
    assert all(engine.system.revocations.contains(entry) for entry in crashed)
    assert report.invariant_violations == 0


@pytest.mark.slow
def test_reference_scenario_rejects_forged_usage(reference_run):
    engine, _, _, _ = reference_run
    system = engine.system
    rejected = [op for op in system.operations if op.operation == "usage" and op.status == "rejected"]
    assert [op.cluster_id for op in rejected] == [1]
    state = system.global_chain.state
    revoked = system.protocol_logger.events(ProtocolEvents.LEADER_REVOKED)
    assert {r["detail"]["cluster"] for r in revoked} == {0, 1}
    for record in revoked:
        assert record["detail"]["beacon"] in state.removed_beacons
        assert record["detail"]["beacon"] not in state.beacons


@pytest.mark.slow
def test_reference_scenario_replicas_and_dumped_chains(reference_run):
    engine, _, _, out = reference_run
    checks = engine.system.protocol_logger.events(ProtocolEvents.REPLICAS_CHECKED)
    assert len(checks) == engine.config.epochs
    assert all(c["detail"]["consistent"] for c in checks)
    context = ChainContext()
    dumps = [out / "chains" / f"{GLOBAL_CHAIN}.jsonl"] + sorted(
        p for p in (out / "chains").glob("*.jsonl") if p.stem != GLOBAL_CHAIN)
    assert len(dumps) == 1 + len(engine.system.local_chains)
    for path in dumps:
        audit, _ = audit_chain(load_blocks(path), context, path.stem)
        assert audit.ok, audit.errors


@pytest.mark.slow
def test_reference_scenario_respects_caps_and_vacated_channels(reference_run):
    engine, _, _, _ = reference_run
    system = engine.system
    assert system.assignments
    for (cid, epoch), assignment in system.assignments.items():
        assert check_assignment(assignment, system.rules, system.availability[(cid, epoch)], epoch) == []
    vacated = system.grid.cell_id(3, 3)
    for (cid, epoch), assignment in system.assignments.items():
        if epoch == 2:
            assert not [a for a in assignment.assignments if a.cell == vacated and a.channel in (0, 1)]


@pytest.mark.slow
def test_reference_scenario_keeps_identities_out_of_db_records(reference_run):
    engine, _, _, _ = reference_run
    system = engine.system
    identities = {su.identity for su in system.sus.values()}
    db_side = [r for r in system.protocol_logger.trace if r["node"] in system.db_names]
    assert db_side
    for record in db_side:
        text = json.dumps(record["detail"], sort_keys=True, default=str)
        assert not [i for i in identities if i in text]


# protocol phases driven one at a time

def _drive(system, generator):
    return system.sim.run_until(system.sim.process(generator, name="test"))


def _engine(overrides=None):
    config = build_config({**TINY, **(overrides or {})}, debug_invariants=True)
    engine = ScenarioEngine(config)
    assert engine.initialize()
    return engine


def _deployed(overrides=None):
    """System that has bootstrapped, formed its clusters and peered with the DBs"""
    system = _engine(overrides).system
    _drive(system, bootstrap(system))
    _drive(system, peer_and_cluster(system))
    _drive(system, peer_with_dbs(system))
    return system


THREE_ANCHORS = {"dbs": 3, "anchors": 3, "groups": [{"center": [1, 1], "spread": 0, "sus": 3}]}


@pytest.mark.slow
def test_anchor_mesh_authenticates_every_pair():
    system = _engine({"population": THREE_ANCHORS}).system
    _drive(system, bootstrap(system))
    trace = system.protocol_logger
    assert len(trace.events(ProtocolEvents.ANCHOR_AUTHENTICATED)) == 3
    assert not trace.events(ProtocolEvents.ANCHOR_EXCLUDED)
    assert len(system.fcc.anchors) == 3
    for pseudonym in system.fcc.anchors:
        assert system.peers[pseudonym] == set(system.fcc.anchors) - {pseudonym}


@pytest.mark.slow
def test_revoked_anchor_is_excluded_from_mesh():
    system = _engine({"population": THREE_ANCHORS, "byzantine": {"revoked_anchors": [1]}}).system
    _drive(system, bootstrap(system))
    revoked = next(su for su in system.sus.values() if su.identity == "su-1")
    trace = system.protocol_logger
    assert [r["node"] for r in trace.events(ProtocolEvents.ANCHOR_EXCLUDED)] == [revoked.pseudonym]
    assert len(trace.events(ProtocolEvents.ANCHOR_AUTHENTICATED)) == 1
    assert revoked.revoked
    assert revoked.pseudonym not in system.fcc.anchors
    assert len(system.fcc.anchors) == 2


@pytest.mark.slow
def test_rekeying_replaces_cluster_key():
    system = _deployed()
    cluster = system.state.clusters[0]
    member = cluster.sorted_members()[0]
    old_y, old_keys, old_epoch = cluster.y, system.sus[member].keys, cluster.key_epoch
    record = _drive(system, rekeying(system, cluster, "refresh"))
    assert record.status == "ok"
    assert cluster.y != old_y
    assert cluster.key_epoch == old_epoch + 1
    message = b"after rekeying"
    old_share = sign_share_gen(old_keys.x_j, message, old_keys.index)
    assert sign_share_verify(old_share, old_keys.z_j, message)
    assert not sign_share_verify(old_share, cluster.z[member], message)
    on_chain = {tx.payload["y"] for _, tx in system.global_chain.transactions(TxKind.CLUSTER_PUBKEY)
                if int(tx.payload["cluster_id"]) == 0}
    assert {old_y.hex(), cluster.y.hex()} <= on_chain


@pytest.mark.slow
def test_mid_epoch_join_is_active_from_next_epoch():
    system = _deployed()
    cluster = system.state.clusters[0]
    system.state.start_epoch(1, system.sim.now)
    su = register_su(system, "su-joiner", cluster.center_cell, system.fcc.anchors)
    joined = _drive(system, join_cluster(system, su))
    assert joined is cluster
    assert su.pseudonym in cluster.pending_joins
    assert cluster.active_from[su.pseudonym] == 2
    scheduled = system.protocol_logger.events(ProtocolEvents.REKEY_SCHEDULED)
    assert [r["detail"]["epoch"] for r in scheduled] == [2]

    _drive(system, rekey_pending(system, cluster))
    assert su.pseudonym in cluster.members
    assert su.pseudonym in cluster.indices
    assert su.pseudonym not in [p for p, _ in cluster.active_members(1)]
    assert su.pseudonym in [p for p, _ in cluster.active_members(2)]


@pytest.mark.slow
def test_join_without_beacon_founds_singleton_cluster():
    system = _deployed({"grid": {"n": 8, "channels": 4, "max_concurrent_sus": 2}})
    far = system.grid.cell_id(7, 7)
    su = register_su(system, "su-remote", far, system.fcc.anchors)
    cluster = _drive(system, join_cluster(system, su))
    assert cluster is not system.state.clusters[0]
    assert cluster.members == {su.pseudonym: far}
    assert cluster.leader == su.pseudonym
    assert su.cluster_id == cluster.cluster_id
    created = system.protocol_logger.events(ProtocolEvents.NEW_CLUSTER_CREATED)
    assert [r["node"] for r in created] == [su.pseudonym]
