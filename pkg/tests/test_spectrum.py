import random

import numpy as np
import pytest

from src.core.errors import DecodeError, ParameterError
from src.crypto.bls import BlsKeyPair
from src.entities.spectrum import (
    DbLayout, Grid, MIN_RECORD_BYTES, SpectrumDB, SpectrumRecord, record_index, replicas_consistent, sign_record,
    verify_record, verify_rows,
)
from src.ledger.contract import (
    Assignment, AssignmentMap, UsageEntry, UsageRules, check_assignment, execute_contract, usage_summary,
)

RULES = UsageRules(2, 30.0, 3600)
P1, P2, P3 = "01" * 8, "02" * 8, "03" * 8


@pytest.fixture(scope="module")
def signer():
    return BlsKeyPair.generate(random.Random(21))


@pytest.fixture(scope="module")
def small_db(signer):
    return SpectrumDB.generate(DbLayout(Grid(2), 2), signer, random.Random(22), RULES, availability=1.0)


def _record(cell, channel, cap=2, power=20.0, **kw):
    return SpectrumRecord(cell, channel, power, 3600, UsageRules(cap, 30.0, 3600), **kw)


def test_grid_and_layout_indexing():
    grid = Grid(4)
    assert grid.cell_id(1, 2) == 6
    assert grid.coords(6) == (1, 2)
    assert grid.distance(0, 15) == 3
    layout = DbLayout(grid, 16)
    assert layout.r == 256
    assert record_index(3, 5, layout) == 3 * 16 + 5
    assert layout.cell_channel(53) == (3, 5)
    with pytest.raises(ParameterError):
        record_index(16, 0, layout)
    with pytest.raises(ParameterError):
        DbLayout(grid, 4, record_bytes=MIN_RECORD_BYTES - 1)


def test_record_row_and_signature(signer):
    record = sign_record(_record(3, 1, active_users=1, usage_epoch=2), signer, 128)
    row = record.to_row(128)
    assert len(row) == 128
    assert SpectrumRecord.from_row(row) == record
    assert verify_record(row, signer.public)
    tampered = bytearray(row)
    tampered[10] ^= 1
    assert not verify_record(bytes(tampered), signer.public)
    with pytest.raises(DecodeError):
        SpectrumRecord.from_row(row[:40])


def test_remaining_capacity():
    record = _record(0, 0, cap=3, usage_epoch=4, active_users=2)
    assert record.remaining_capacity(4) == 1
    assert record.remaining_capacity(5) == 3
    assert _record(0, 0, power=0.0).remaining_capacity(1) == 0
    assert _record(0, 0, blocked_epoch=4).remaining_capacity(4) == 0


def test_generated_rows_batch_verify(small_db, signer):
    assert verify_rows(small_db.matrix, signer.public, random.Random(0))
    corrupted = small_db.matrix.copy()
    corrupted[2, 5] ^= 0x40
    assert not verify_rows(corrupted, signer.public, random.Random(0))


def test_usage_accumulates_within_epoch(small_db, signer):
    db = small_db.replicate(1)
    db.apply_usage([UsageEntry(1, 0, 1, 100)], 3, signer)
    db.apply_usage([UsageEntry(1, 0, 1, 50)], 3, signer)
    assert db.record_at(1, 0).active_users == 2
    assert db.record_at(1, 0).aggregate_power_mw == 150
    db.apply_usage([UsageEntry(1, 0, 1, 10)], 4, signer)
    assert db.record_at(1, 0).active_users == 1
    assert verify_record(db.row(record_index(1, 0, db.layout)), signer.public)


def test_replicas_stay_identical(small_db, signer):
    replicas = [small_db.replicate(i) for i in range(3)]
    for db in replicas:
        db.apply_usage([UsageEntry(0, 1, 1, 100)], 1, signer)
        db.vacate(2, [0], 1, signer)
    assert replicas_consistent(replicas)
    assert replicas[0].record_at(2, 0).remaining_capacity(1) == 0
    replicas[2].apply_usage([UsageEntry(3, 1, 1, 1)], 1, signer)
    assert not replicas_consistent(replicas)


def test_dump_and_load(small_db, tmp_path):
    path = tmp_path / "db0.bin"
    small_db.dump(path)
    loaded = SpectrumDB.load(path)
    assert loaded.digest() == small_db.digest()
    assert np.array_equal(loaded.matrix, small_db.matrix)
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(DecodeError):
        SpectrumDB.load(path)


def test_contract_serves_members_in_pseudonym_order():
    availability = [_record(0, 1, cap=1), _record(0, 0, cap=1), _record(1, 0, cap=2)]
    members = [(P3, 0), (P1, 0), (P2, 0)]
    result = execute_contract(RULES, members, availability, epoch=1)
    assert [(a.pseudonym, a.channel) for a in result.assignments] == [(P1, 0), (P2, 1)]
    assert result.for_member(P3) is None
    assert execute_contract(RULES, list(reversed(members)), availability, 1).digest() == result.digest()


def test_contract_respects_existing_usage_and_power():
    availability = [_record(0, 0, cap=2, power=25.0, usage_epoch=1, active_users=1)]
    rules = UsageRules(5, 20.0, 3600)
    result = execute_contract(rules, [(P1, 0), (P2, 0)], availability, epoch=1)
    assert len(result) == 1
    assert result.assignments[0].power_dbm == 20.0
    assert check_assignment(result, rules, availability, 1) == []


def _expected_assignment(rules, members, availability, epoch):
    """Slot-filling reference: per cell, members in byte order take channel slots in ascending order"""
    expected = []
    for cell in sorted({c for _, c in members}):
        slots = []
        for rec in sorted((r for r in availability if r.cell == cell), key=lambda r: r.channel):
            used = rec.rules.max_concurrent_sus - rec.remaining_capacity(epoch)
            free = max(0, min(rec.rules.max_concurrent_sus, rules.max_concurrent_sus) - used)
            power = min(rec.max_power_dbm, rec.rules.max_tx_power_dbm, rules.max_tx_power_dbm)
            slots += [(rec.channel, power)] * free
        ordered = sorted((p for p, c in members if c == cell), key=bytes.fromhex)
        expected += [Assignment(p, cell, ch, power) for p, (ch, power) in zip(ordered, slots)]
    return {a.pseudonym: a for a in expected}


def test_contract_matches_slot_filling_reference():
    rng = random.Random(31)
    for trial in range(200):
        epoch = rng.randint(1, 3)
        rules = UsageRules(rng.randint(1, 4), rng.choice([10.0, 20.0, 30.0]), 3600)
        availability = []
        for cell in range(3):
            for channel in rng.sample(range(5), rng.randint(0, 5)):
                cap = rng.randint(1, 4)
                availability.append(_record(
                    cell, channel, cap=cap, power=rng.choice([5.0, 15.0, 25.0]),
                    usage_epoch=rng.randint(1, 3), active_users=rng.randint(0, cap),
                    blocked_epoch=rng.choice([0, epoch])))
        names = {rng.getrandbits(64).to_bytes(8, "big").hex() for _ in range(rng.randint(0, 12))}
        members = [(p, rng.randrange(3)) for p in names]
        result = execute_contract(rules, members, availability, epoch)
        assert {a.pseudonym: a for a in result.assignments} == _expected_assignment(
            rules, members, availability, epoch)
        assert check_assignment(result, rules, availability, epoch) == []
        shuffled = rng.sample(members, len(members))
        assert execute_contract(rules, shuffled, availability, epoch).digest() == result.digest()


def test_check_assignment_flags_violations():
    availability = [_record(0, 0, cap=1)]
    overfull = AssignmentMap(1, (Assignment(P1, 0, 0, 10.0), Assignment(P2, 0, 0, 10.0),
                                 Assignment(P3, 0, 1, 10.0), Assignment(P1, 0, 0, 40.0)))
    violations = check_assignment(overfull, RULES, availability, 1)
    assert any("assigned twice" in v for v in violations)
    assert any("not available" in v for v in violations)
    assert any("exceeds max power" in v for v in violations)
    assert any("cap" in v for v in violations)


def test_usage_summary_aggregates_power():
    assignment = AssignmentMap(1, (Assignment(P1, 2, 0, 20.0), Assignment(P2, 2, 0, 20.0),
                                   Assignment(P3, 1, 3, 10.0)))
    summary = usage_summary(assignment)
    assert summary == [UsageEntry(1, 3, 1, 10), UsageEntry(2, 0, 2, 200)]


def test_rules_validation():
    with pytest.raises(ParameterError):
        UsageRules(0, 30.0, 3600)
    assert UsageRules.from_dict(RULES.to_dict()) == RULES
