"""
Shamir secret sharing and Lagrange interpolation over either supported field.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Union

from ..core.errors import InsufficientSharesError, InterpolationError, ParameterError
from .field import FieldElement, FieldId, element, random_element


class Share(NamedTuple):
    point: FieldElement
    value: FieldElement


@dataclass(frozen=True)
class ShareSet:
    """Shares of a degree-t polynomial; any t+1 of them reconstruct"""
    threshold: int
    shares: tuple

    def __post_init__(self):
        points = [s.point.value for s in self.shares]
        if len(set(points)) != len(points):
            raise InterpolationError("share points must be distinct")
        if any(p == 0 for p in points):
            raise ParameterError("share points must be nonzero")

    @property
    def field(self) -> FieldId:
        if not self.shares:
            raise InsufficientSharesError("empty share set has no field")
        return self.shares[0].point.field

    def subset(self, indices: Sequence[int]) -> "ShareSet":
        return ShareSet(self.threshold, tuple(self.shares[i] for i in indices))

    def __len__(self) -> int:
        return len(self.shares)


def evaluate_polynomial(coeffs: Sequence[FieldElement], x: FieldElement) -> FieldElement:
    acc = coeffs[-1]
    for c in reversed(coeffs[:-1]):
        acc = acc * x + c
    return acc


def shamir_share(secret: Union[FieldElement, int], t: int, n: int, rng: random.Random,
                 field: Optional[FieldId] = None) -> ShareSet:
    """
    Split a secret into n shares of a degree-t polynomial.

    Args:
        secret: constant term; plain ints are read in `field` (default scalar field)
        t: polynomial degree, so t+1 shares reconstruct
        n: number of shares, evaluated at points 1..n
        rng: seeded randomness for the coefficients

    Returns:
        ShareSet with points 1..n
    """
    field = field or (secret.field if isinstance(secret, FieldElement) else FieldId.SCALAR)
    secret = element(secret, field)
    if t < 0 or t >= n:
        raise ParameterError(f"need 0 <= t < n, got t={t}, n={n}")
    if n >= field.size:
        raise ParameterError(f"n={n} exceeds the number of nonzero points in {field.value}")
    coeffs = [secret] + [random_element(field, rng) for _ in range(t)]
    shares = tuple(
        Share(element(j, field), evaluate_polynomial(coeffs, element(j, field)))
        for j in range(1, n + 1)
    )
    return ShareSet(t, shares)


def lagrange_coeffs(points: Sequence[FieldElement], at: Optional[FieldElement] = None) -> List[FieldElement]:
    """
    Lagrange basis coefficients for interpolating at `at` (default zero).

    Raises:
        InterpolationError: duplicate points
    """
    if not points:
        raise InsufficientSharesError("no points to interpolate")
    field = points[0].field
    at = at if at is not None else FieldElement(0, field)
    values = [p.value for p in points]
    if len(set(values)) != len(values):
        raise InterpolationError(f"duplicate interpolation points: {values}")
    one = FieldElement(1, field)
    coeffs = []
    for j, xj in enumerate(points):
        num, den = one, one
        for m, xm in enumerate(points):
            if m == j:
                continue
            num = num * (at - xm)
            den = den * (xj - xm)
        coeffs.append(num / den)
    return coeffs


def lagrange_reconstruct(shares: ShareSet, at: Optional[FieldElement] = None) -> FieldElement:
    """Evaluate the shared polynomial at `at`; defaults to the secret"""
    if len(shares.shares) < shares.threshold + 1:
        raise InsufficientSharesError(
            f"need {shares.threshold + 1} shares, got {len(shares.shares)}")
    used = shares.shares[: shares.threshold + 1]
    lambdas = lagrange_coeffs([s.point for s in used], at)
    acc = FieldElement(0, used[0].value.field)
    for lam, share in zip(lambdas, used):
        acc = acc + lam * share.value
    return acc
