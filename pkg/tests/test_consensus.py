import random

import pytest

from src.core.config import ConsensusConfig
from src.crypto.bls import VOTE_DST, BlsKeyPair, batch_verify_same_key, bls_verify, verify_same_message
from src.crypto.curve import Z1, Z2, encode_g1, encode_g2
from src.ledger.chain import Block, ValidatorSet, ZERO_HASH, verify_commit_proof
from src.ledger.consensus import check_message_bound, message_bound, run_consensus


def _validators(n):
    ids = [f"v{i:02d}" for i in range(n)]
    return ValidatorSet({v: "" for v in ids}, {v: "db" for v in ids})


def _proposal(proposer="v00"):
    return Block(1, ZERO_HASH, (), proposer, 0.0, ZERO_HASH)


@pytest.mark.parametrize("n", [4, 7, 10])
def test_all_honest_commit(n):
    outcome = run_consensus(_validators(n), _proposal(), seed=n)
    assert outcome.committed
    assert outcome.views == 1
    assert len(outcome.decisions) == n
    assert set(outcome.decisions.values()) == {outcome.block.block_hash}
    check_message_bound(outcome, n, ConsensusConfig().fanout)


@pytest.mark.parametrize("n,behavior", [(4, "equivocate"), (7, "silent"), (10, "equivocate")])
def test_commit_with_f_byzantine(n, behavior):
    f = (n - 1) // 3
    behaviors = {f"v{i:02d}": behavior for i in range(n - f, n)}
    outcome = run_consensus(_validators(n), _proposal(), behaviors=behaviors, seed=100 + n)
    assert outcome.committed
    assert len(set(outcome.decisions.values())) == 1
    assert not set(outcome.decisions) & set(behaviors)


def test_silent_primary_forces_view_change():
    outcome = run_consensus(_validators(4), _proposal("v00"), behaviors={"v00": "silent"}, seed=3)
    assert outcome.committed
    assert outcome.views >= 2


def test_equivocating_primary_never_splits_honest_replicas():
    for seed in range(5):
        outcome = run_consensus(_validators(7), _proposal("v00"), behaviors={"v00": "equivocate"}, seed=seed)
        assert len(set(outcome.decisions.values())) <= 1


def test_rejected_proposal_aborts():
    config = ConsensusConfig(max_views=2, view_timeout_s=1.0)
    outcome = run_consensus(_validators(4), _proposal(), config=config, validate=lambda block: "bad block",
                            reproposal=lambda node: None, seed=4)
    assert not outcome.committed
    assert outcome.block is None
    assert outcome.reason == "aborted"


def test_commit_proof_verifies_under_validator_keys():
    rng = random.Random(5)
    keys = {f"v{i:02d}": BlsKeyPair.generate(rng) for i in range(4)}
    validators = ValidatorSet({v: k.public.hex() for v, k in keys.items()})
    outcome = run_consensus(validators, _proposal(), secrets={v: k.secret for v, k in keys.items()}, seed=5)
    assert outcome.committed
    assert len(outcome.commit_proof.signers) >= validators.quorum
    assert verify_commit_proof(outcome.block, validators)


def test_identity_points_never_verify():
    key = BlsKeyPair.generate(random.Random(6))
    zero_sig, zero_key = encode_g1(Z1), encode_g2(Z2)
    assert bls_verify(key.public, b"block", key.sign(b"block", VOTE_DST), VOTE_DST)
    assert not bls_verify(zero_key, b"block", zero_sig, VOTE_DST)
    assert not bls_verify(key.public, b"block", zero_sig, VOTE_DST)
    assert not verify_same_message((zero_key,), b"block", zero_sig, VOTE_DST)
    assert not batch_verify_same_key(zero_key, [b"a", b"b"], [zero_sig, zero_sig], VOTE_DST, random.Random(7))


def test_message_bound_grows_as_n_log_n():
    assert message_bound(1, 8) == 0
    assert message_bound(64, 8) == 2 * 8 * 64 * 2
    assert message_bound(512, 8) == 2 * 8 * 512 * 3


@pytest.mark.slow
@pytest.mark.parametrize("n", [4, 7, 10])
def test_safety_under_fault_injection_many_runs(n):
    f = (n - 1) // 3
    for seed in range(500):
        rng = random.Random(seed)
        faulty = rng.sample(range(n), f)
        behaviors = {f"v{i:02d}": rng.choice(["equivocate", "silent"]) for i in faulty}
        outcome = run_consensus(_validators(n), _proposal(), behaviors=behaviors, seed=seed)
        assert outcome.committed
        assert len(set(outcome.decisions.values())) == 1


@pytest.mark.slow
def test_commit_time_at_one_thousand_validators():
    validators = _validators(1000)
    healthy = run_consensus(validators, _proposal(), seed=7)
    assert healthy.committed
    assert 2.15 <= healthy.duration <= 8.6
    behaviors = {f"v{i:02d}": "silent" for i in range(1000 - 333, 1000)}
    faulty = run_consensus(validators, _proposal(), behaviors=behaviors, seed=8)
    assert faulty.committed
    assert faulty.duration < 7.0
