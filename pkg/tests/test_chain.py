import json
import random

import pytest

from src.core.errors import ChainError, DecodeError, ForkError, QuorumError, TransactionError
from src.crypto.bls import BlsKeyPair
from src.crypto.curve import G1, encode_g1, g1_mul
from src.crypto.epid import LinkTagEntry, target_to_dict
from src.ledger.chain import (
    Block, Chain, ChainContext, LightChainCopy, Transaction, TxKind, ValidatorSet, audit_chain, load_blocks,
    make_commit_proof, revocation_update, sign_transaction, sign_vote,
)


@pytest.fixture(scope="module")
def db_keys():
    rng = random.Random(31)
    return {f"db{i}": BlsKeyPair.generate(rng) for i in range(4)}


def _global_chain(db_keys):
    validators = ValidatorSet({v: k.public.hex() for v, k in db_keys.items()}, {v: "db" for v in db_keys})
    return Chain.create("global", validators, {})


def _certify(block, db_keys, signers=("db0", "db1", "db2")):
    return block.with_proof(make_commit_proof({v: sign_vote(block.block_hash, db_keys[v].secret) for v in signers}))


def _beacon_tx(db_keys, beacon_id, author="db0"):
    beacon = {"beacon_id": beacon_id, "cluster_id": 0, "cell": 5}
    return sign_transaction(TxKind.BEACON_ISSUE, {"beacon": beacon}, author, db_keys[author].secret)


def _revocation_tx(db_keys, beacon_id=None):
    target = LinkTagEntry(b"chal|x", encode_g1(g1_mul(G1, 5)))
    payload = {"target": target_to_dict(target), "reason": "forged usage report"}
    if beacon_id:
        payload["beacon_id"] = beacon_id
    return sign_transaction(TxKind.REVOCATION, payload, "db1", db_keys["db1"].secret)


@pytest.mark.parametrize("n,quorum", [(1, 1), (4, 3), (5, 4), (7, 5), (10, 7), (1000, 667)])
def test_quorum_size(n, quorum):
    validators = ValidatorSet({f"v{i}": "" for i in range(n)})
    assert validators.quorum == quorum


def test_append_certified_block(db_keys):
    chain = _global_chain(db_keys)
    block = chain.propose([_beacon_tx(db_keys, "b1")], "db0", 1.0)
    assert chain.validate_proposal(block) is None
    chain.append_block(_certify(block, db_keys))
    assert chain.height == 1
    assert "b1" in chain.state.beacons


def test_short_quorum_rejected(db_keys):
    chain = _global_chain(db_keys)
    block = chain.propose([_beacon_tx(db_keys, "b1")], "db0", 1.0)
    with pytest.raises(QuorumError):
        chain.append_block(_certify(block, db_keys, signers=("db0", "db1")))
    with pytest.raises(QuorumError):
        chain.append_block(block)


def test_fork_rejected(db_keys):
    chain = _global_chain(db_keys)
    first = chain.propose([_beacon_tx(db_keys, "b1")], "db0", 1.0)
    second = chain.propose([_beacon_tx(db_keys, "b2")], "db0", 1.0)
    chain.append_block(_certify(first, db_keys))
    with pytest.raises(ForkError):
        chain.append_block(_certify(second, db_keys))
    assert chain.validate_proposal(second) is not None


def test_bad_transaction_signature_rejected(db_keys):
    chain = _global_chain(db_keys)
    tx = _beacon_tx(db_keys, "b1")
    forged = Transaction(tx.kind, tx.payload, "db2", tx.signature)
    with pytest.raises(TransactionError):
        chain.propose([forged], "db0", 1.0)


def test_tampered_state_root_rejected(db_keys):
    chain = _global_chain(db_keys)
    block = chain.propose([_beacon_tx(db_keys, "b1")], "db0", 1.0)
    bad = Block(block.height, block.previous_hash, block.transactions, block.proposer, block.timestamp, "ab" * 32)
    assert "state root" in chain.validate_proposal(bad)
    with pytest.raises(ChainError):
        chain.append_block(_certify(bad, db_keys))


def test_revocation_removes_beacon(db_keys):
    chain = _global_chain(db_keys)
    chain.append_block(_certify(chain.propose([_beacon_tx(db_keys, "b1")], "db0", 1.0), db_keys))
    revocation_update(chain, _revocation_tx(db_keys, "b1"), lambda b: _certify(b, db_keys).commit_proof, 2.0)
    assert "b1" not in chain.state.beacons
    assert chain.state.removed_beacons == ["b1"]
    assert chain.state.revocations.version == 1


def test_revocation_update_requires_commit(db_keys):
    chain = _global_chain(db_keys)
    with pytest.raises(ChainError):
        revocation_update(chain, _revocation_tx(db_keys), lambda b: None, 1.0)
    with pytest.raises(TransactionError):
        revocation_update(chain, _beacon_tx(db_keys, "b1"), lambda b: None, 1.0)


def test_transaction_schema():
    with pytest.raises(TransactionError):
        Transaction(TxKind.USAGE_REPORT, {"cluster_id": 0}, "leader")
    with pytest.raises(TransactionError):
        Transaction("Mint", {}, "db0")
    tx = Transaction(TxKind.REVOCATION, {"target": {}, "reason": "r"}, "db0")
    data = dict(tx.to_dict(), signature_kind="epid")
    with pytest.raises(TransactionError):
        Transaction.from_dict(data)


def test_dump_audit_and_tamper(db_keys, tmp_path):
    chain = _global_chain(db_keys)
    for k in range(2):
        chain.append_block(_certify(chain.propose([_beacon_tx(db_keys, f"b{k}")], "db0", float(k + 1)), db_keys))
    path = tmp_path / "global.jsonl"
    chain.dump(path)
    report, rebuilt = audit_chain(load_blocks(path), ChainContext(), "global")
    assert report.ok and report.height == 2
    assert rebuilt.state.root() == chain.state.root()

    lines = path.read_text().splitlines()
    record = json.loads(lines[1])
    record["transactions"][0]["payload"]["beacon"]["cell"] = 6
    lines[1] = json.dumps(record)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DecodeError):
        load_blocks(path)

    record.pop("hash")
    lines[1] = json.dumps(record)
    path.write_text("\n".join(lines) + "\n")
    report, _ = audit_chain(load_blocks(path), ChainContext(), "global")
    assert not report.ok
    assert report.height == 0


def test_audit_of_empty_dump():
    report, chain = audit_chain([], ChainContext(), "empty")
    assert not report.ok and chain is None


def test_light_copy_follows_certified_headers(db_keys):
    chain = _global_chain(db_keys)
    light = LightChainCopy(chain.blocks[0])
    chain.append_block(_certify(chain.propose([_beacon_tx(db_keys, "b1")], "db0", 1.0), db_keys))
    assert light.sync(chain) == 1
    assert light.valid_beacons == ["b1"]
    revocation_update(chain, _revocation_tx(db_keys, "b1"), lambda b: _certify(b, db_keys).commit_proof, 2.0)
    light.sync(chain)
    assert light.valid_beacons == []
    assert light.revocation_version == 1
    with pytest.raises(ChainError):
        light.accept(chain.blocks[2], chain.summaries[2])
