import random

import numpy as np
import pytest

from src.core.errors import ContractViolation, InsufficientSharesError, InterpolationError, ParameterError
from src.crypto.field import (
    FieldElement, FieldId, INV_TABLE, MUL_TABLE, SCALAR_ORDER, gf_matmul, gf_mul_slow, gf_poly_eval,
)
from src.crypto.shamir import ShareSet, lagrange_reconstruct, shamir_share


def test_gf256_known_products():
    # AES field reference values
    assert gf_mul_slow(0x57, 0x83) == 0xC1
    assert gf_mul_slow(0x57, 0x13) == 0xFE
    assert int(MUL_TABLE[0x57, 0x83]) == 0xC1


def test_gf256_tables_match_slow_multiply():
    for a in range(0, 256, 7):
        for b in range(0, 256, 11):
            assert int(MUL_TABLE[a, b]) == gf_mul_slow(a, b)


def test_gf256_inverse():
    for a in range(1, 256):
        assert int(MUL_TABLE[a, INV_TABLE[a]]) == 1
    with pytest.raises(ZeroDivisionError):
        FieldElement.gf256(0).inverse()


def test_scalar_field_arithmetic():
    a = FieldElement.scalar(SCALAR_ORDER - 1)
    b = FieldElement.scalar(5)
    assert (a + b).value == 4
    assert (b / b).value == 1
    assert (b - a).value == 6
    assert (-b + b).is_zero()


def test_mixed_fields_rejected():
    with pytest.raises(ContractViolation):
        FieldElement.gf256(3) + FieldElement.scalar(3)
    with pytest.raises(ParameterError):
        FieldElement(256, FieldId.GF256)


def test_gf_matmul_matches_scalar_loop(np_rng):
    a = np_rng.integers(0, 256, size=(3, 5), dtype=np.uint8)
    b = np_rng.integers(0, 256, size=(5, 4), dtype=np.uint8)
    out = gf_matmul(a, b, max_block=8)
    for i in range(3):
        for j in range(4):
            acc = 0
            for k in range(5):
                acc ^= gf_mul_slow(int(a[i, k]), int(b[k, j]))
            assert int(out[i, j]) == acc


def test_gf_matmul_shape_mismatch():
    with pytest.raises(ParameterError):
        gf_matmul(np.zeros((2, 3), dtype=np.uint8), np.zeros((2, 3), dtype=np.uint8))


def test_gf_poly_eval_constant_term_at_zero(np_rng):
    coeffs = np_rng.integers(0, 256, size=(3, 4), dtype=np.uint8)
    assert np.array_equal(gf_poly_eval(coeffs, 0), coeffs[0])


@pytest.mark.parametrize("field", [FieldId.GF256, FieldId.SCALAR])
def test_shamir_any_t_plus_one_reconstruct(field):
    rng = random.Random(9)
    secret = FieldElement(123, field)
    shares = shamir_share(secret, 2, 6, rng)
    for subset in ([0, 1, 2], [3, 4, 5], [0, 2, 5]):
        assert lagrange_reconstruct(shares.subset(subset)) == secret


def test_shamir_too_few_shares():
    shares = shamir_share(42, 3, 5, random.Random(1))
    with pytest.raises(InsufficientSharesError):
        lagrange_reconstruct(shares.subset([0, 1, 2]))


def test_shamir_parameter_checks():
    with pytest.raises(ParameterError):
        shamir_share(1, 5, 5, random.Random(1))
    with pytest.raises(ParameterError):
        shamir_share(FieldElement.gf256(1), 1, 256, random.Random(1))


def test_duplicate_points_rejected():
    shares = shamir_share(7, 1, 3, random.Random(2))
    with pytest.raises(InterpolationError):
        ShareSet(1, (shares.shares[0], shares.shares[0]))
