import random
from dataclasses import replace

import pytest
from scipy.stats import binomtest

from src.core.errors import DecodeError, JoinError, ParameterError
from src.crypto import epid as epid_module
from src.crypto.curve import G1, OPS, encode_g1, g1_mul, random_scalar
from src.crypto.epid import (
    EpidChallenger, EpidIssuer, EpidParty, EpidSessionCache, EpidSignature, IssuerRevocation, JoinRequest,
    LinkTagEntry, MemberSecret, RevocationList, RevokedKey, epid_join, epid_setup, epid_sign, epid_verify,
    revoke, two_way_epid,
)

EMPTY = RevocationList()


@pytest.fixture(scope="module")
def group():
    rng = random.Random(77)
    issuer = EpidIssuer(epid_setup(128, rng), rng)
    members = [epid_join(issuer.public, issuer, rng) for _ in range(3)]
    return issuer, members


def test_sign_verify_completeness(group):
    issuer, (alice, _, _) = group
    rng = random.Random(1)
    sig = epid_sign(alice, issuer.public, b"chal|1", EMPTY, rng)
    assert epid_verify(issuer.public, b"chal|1", sig, EMPTY)
    assert epid_verify(issuer.public, b"chal|1", sig.encode(), EMPTY)
    assert not epid_verify(issuer.public, b"chal|2", sig, EMPTY)


def test_repeated_verification_is_served_from_cache(group):
    issuer, (alice, _, _) = group
    sig = epid_sign(alice, issuer.public, b"chal|again", EMPTY, random.Random(18))
    before = epid_module._verify.cache_info()
    results = [epid_verify(issuer.public, b"chal|again", sig.encode(), EMPTY) for _ in range(3)]
    after = epid_module._verify.cache_info()
    assert results == [True, True, True]
    assert after.hits - before.hits >= 2
    assert after.currsize <= after.maxsize


def test_link_tag_scoped_to_challenge(group):
    issuer, (alice, bob, _) = group
    rng = random.Random(2)
    a1 = epid_sign(alice, issuer.public, b"chal|x", EMPTY, rng)
    a2 = epid_sign(alice, issuer.public, b"chal|x", EMPTY, rng)
    a3 = epid_sign(alice, issuer.public, b"chal|y", EMPTY, rng)
    b1 = epid_sign(bob, issuer.public, b"chal|x", EMPTY, rng)
    assert a1.link_tag == a2.link_tag
    assert a1.s1 != a2.s1
    assert a1.link_tag != a3.link_tag
    assert a1.link_tag != b1.link_tag


def test_signature_revocation_excludes_only_the_signer(group):
    issuer, (alice, bob, _) = group
    rng = random.Random(3)
    kpk = issuer.public
    offending = epid_sign(alice, kpk, b"chal|forged", EMPTY, rng)
    revocations = revoke(EMPTY, offending.revocation_entry(b"chal|forged"))
    assert revocations.deltas == (0, 1, 0)
    assert not epid_verify(kpk, b"chal|next", epid_sign(alice, kpk, b"chal|next", revocations, rng), revocations)
    assert epid_verify(kpk, b"chal|next", epid_sign(bob, kpk, b"chal|next", revocations, rng), revocations)


def test_issuer_revocation(group):
    issuer, (alice, bob, _) = group
    rng = random.Random(4)
    kpk = issuer.public
    revocations = revoke(EMPTY, IssuerRevocation(bob.issuer_tag))
    assert not epid_verify(kpk, b"chal|i", epid_sign(bob, kpk, b"chal|i", revocations, rng), revocations)
    assert epid_verify(kpk, b"chal|i", epid_sign(alice, kpk, b"chal|i", revocations, rng), revocations)


def test_key_revocation(group):
    issuer, (_, _, carol) = group
    rng = random.Random(5)
    revocations = revoke(EMPTY, RevokedKey(carol.f))
    sig = epid_sign(carol, issuer.public, b"chal|k", revocations, rng)
    assert not epid_verify(issuer.public, b"chal|k", sig, revocations)


def test_revoke_is_idempotent(group):
    _, (alice, _, _) = group
    once = revoke(EMPTY, IssuerRevocation(alice.issuer_tag))
    assert revoke(once, IssuerRevocation(alice.issuer_tag)) is once
    assert once.version == 1


def test_stale_revocation_list_rejected(group):
    issuer, (alice, bob, _) = group
    rng = random.Random(6)
    newer = revoke(EMPTY, IssuerRevocation(bob.issuer_tag))
    sig = epid_sign(alice, issuer.public, b"chal|s", EMPTY, rng)
    assert not epid_verify(issuer.public, b"chal|s", sig, newer)


def test_foreign_group_and_tampered_signatures_rejected(group):
    issuer, (alice, _, _) = group
    rng = random.Random(7)
    rogue = EpidIssuer(epid_setup(128, rng), rng)
    outsider = epid_join(rogue.public, rogue, rng)
    forged = epid_sign(outsider, rogue.public, b"chal|f", EMPTY, rng)
    assert not epid_verify(issuer.public, b"chal|f", forged, EMPTY)

    sig = epid_sign(alice, issuer.public, b"chal|t", EMPTY, rng)
    assert not epid_verify(issuer.public, b"chal|t", replace(sig, s_f=(sig.s_f + 1)), EMPTY)
    assert not epid_verify(issuer.public, b"chal|t", replace(sig, link_tag=forged.link_tag), EMPTY)


def test_malformed_encoding_raises():
    with pytest.raises(DecodeError):
        EpidSignature.decode(b"\x02garbage")
    with pytest.raises(DecodeError):
        EpidSignature.decode(b"\x01\x00\x05ab")


def test_join_rejects_unknown_nonce_and_foreign_issuer(group):
    issuer, _ = group
    rng = random.Random(8)
    request = JoinRequest(issuer.public.group_id, b"\x00" * 16, b"", b"", 0, 0, 0)
    with pytest.raises(JoinError):
        issuer.issue(request)
    other = EpidIssuer(epid_setup(128, rng), rng)
    with pytest.raises(JoinError):
        epid_join(other.public, issuer, rng)


def test_unsupported_security_level():
    with pytest.raises(ParameterError):
        epid_setup(80, random.Random(0))


def test_exponentiation_count_shape(group):
    issuer, (alice, bob, carol) = group
    rng = random.Random(9)
    kpk = issuer.public
    l2_entry = epid_sign(bob, kpk, b"chal|l2", EMPTY, rng).revocation_entry(b"chal|l2")
    counts = {}
    for d2, d3 in ((0, 0), (1, 0), (0, 1), (1, 1)):
        revocations = EMPTY
        if d2:
            revocations = revoke(revocations, l2_entry)
        if d3:
            revocations = revoke(revocations, IssuerRevocation(carol.issuer_tag))
        OPS.reset()
        epid_sign(alice, kpk, b"chal|count", revocations, rng)
        counts[(d2, d3)] = OPS.exponentiations
    assert counts[(0, 0)] == 11
    assert counts[(1, 0)] - counts[(0, 0)] == 6
    assert counts[(0, 1)] - counts[(0, 0)] == 2
    assert counts[(1, 1)] == 11 + 6 + 2


def _cheap_revocations(d2, d3):
    revocations = EMPTY
    for k in range(d2):
        revocations = revoke(revocations, LinkTagEntry(f"chal|r{k}".encode(), encode_g1(g1_mul(G1, k + 2))))
    for k in range(d3):
        revocations = revoke(revocations, IssuerRevocation(encode_g1(g1_mul(G1, 1000 + k))))
    return revocations


def _count_case(d2, d3):
    marks = [pytest.mark.slow] if max(d2, d3) == 100 else []
    return pytest.param(d2, d3, marks=marks, id=f"l2={d2}-l3={d3}")


@pytest.mark.parametrize("d2,d3", [_count_case(d2, d3) for d2 in (0, 10, 100) for d3 in (0, 10, 100)])
def test_exponentiation_count_is_linear_in_list_sizes(group, d2, d3):
    issuer, (alice, _, _) = group
    revocations = _cheap_revocations(d2, d3)
    assert revocations.deltas == (0, d2, d3)
    OPS.reset()
    sig = epid_sign(alice, issuer.public, b"chal|count", revocations, random.Random(d2 * 1000 + d3))
    assert OPS.exponentiations - 6 * d2 - 2 * d3 == 11
    if max(d2, d3) <= 10:
        assert epid_verify(issuer.public, b"chal|count", sig, revocations)


def test_challenges_are_single_use(group):
    issuer, (alice, _, _) = group
    verifier = EpidChallenger("db0", random.Random(10))
    prover = EpidParty("su", alice, random.Random(11))
    challenge = verifier.issue_challenge()
    sig = prover.respond(challenge, issuer.public, EMPTY)
    assert verifier.accept(challenge, sig, issuer.public, EMPTY)
    assert not verifier.accept(challenge, sig, issuer.public, EMPTY)
    assert not verifier.accept(b"chal|never-issued", sig, issuer.public, EMPTY)


def test_two_way_authentication(group):
    issuer, (alice, bob, _) = group
    a = EpidParty("a", alice, random.Random(12))
    b = EpidParty("b", bob, random.Random(13))
    assert two_way_epid(a, b, issuer.public, EMPTY)
    assert not two_way_epid(a, b, issuer.public, EMPTY, deliver=lambda src, dst, sig: None if src == "b" else sig)


def test_session_cache_tracks_list_version(group):
    _, (alice, _, _) = group
    cache = EpidSessionCache()
    cache.record("peer", EMPTY)
    assert cache.is_valid("peer", EMPTY)
    assert not cache.is_valid("peer", revoke(EMPTY, IssuerRevocation(alice.issuer_tag)))
    cache.invalidate()
    assert not cache.is_valid("peer", EMPTY)


@pytest.mark.slow
def test_cross_challenge_unlinkability(group):
    issuer, (alice, bob, _) = group
    rng = random.Random(14)
    trials = 1000
    correct = 0
    for i in range(trials):
        same = rng.random() < 0.5
        first = epid_sign(alice, issuer.public, f"chal|a{i}".encode(), EMPTY, rng)
        second = epid_sign(alice if same else bob, issuer.public, f"chal|b{i}".encode(), EMPTY, rng)
        guess = (first.link_tag[-1] ^ second.link_tag[-1]) & 1 == 0
        correct += guess == same
    assert binomtest(correct, trials, 0.5).pvalue > 0.01


@pytest.mark.slow
def test_non_member_forgery_fuzz(group):
    issuer, (alice, _, _) = group
    rng = random.Random(15)
    base = epid_sign(alice, issuer.public, b"chal|fuzz", EMPTY, rng)
    for _ in range(1000):
        forged = replace(base, c=rng.randrange(1, 2 ** 255), s_f=rng.randrange(1, 2 ** 255),
                         s_t=rng.randrange(1, 2 ** 255))
        assert not epid_verify(issuer.public, b"chal|fuzz", forged, EMPTY)


def _random_member(kpk, rng):
    return MemberSecret(
        f=random_scalar(rng), sigma1=encode_g1(g1_mul(G1, random_scalar(rng))),
        sigma2=encode_g1(g1_mul(G1, random_scalar(rng))), group_id=kpk.group_id, epoch=kpk.epoch,
        issuer_tag=encode_g1(g1_mul(G1, random_scalar(rng))),
    )


def _non_member_forgeries(issuer, trials, seed):
    rng = random.Random(seed)
    rogue = EpidIssuer(epid_setup(128, rng), rng)
    outsiders = [epid_join(rogue.public, rogue, rng) for _ in range(3)]
    for i in range(trials):
        message = f"chal|forge{i}".encode()
        signer = _random_member(issuer.public, rng) if i % 2 == 0 else outsiders[i % 3]
        yield message, epid_sign(signer, issuer.public, message, EMPTY, rng)


def test_non_members_cannot_sign(group):
    issuer, _ = group
    for message, forged in _non_member_forgeries(issuer, 6, seed=16):
        assert not epid_verify(issuer.public, message, forged, EMPTY)


@pytest.mark.slow
def test_non_member_forgery_many_trials(group):
    issuer, _ = group
    accepted = sum(epid_verify(issuer.public, message, forged, EMPTY)
                   for message, forged in _non_member_forgeries(issuer, 1000, seed=17))
    assert accepted == 0
