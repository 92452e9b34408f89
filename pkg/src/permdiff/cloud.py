"""Point clouds, permutations, and canonical quotient representatives.

A cloud is an ordered array of N points in R^d. Two clouds describe the same
unordered configuration when one is a point-permutation of the other;
``canonicalize`` picks the lexicographically sorted representative so that
equality on representatives is equality of configurations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DomainError, ShapeMismatchError

# Largest N for which enumeration over all N! permutations is allowed.
# 9! = 362880 terms keeps a single exact evaluation around a second.
ENUMERATION_CAP = 9


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An ordered representative: N points, each a d-vector, all finite."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ShapeMismatchError(
                f"expected an (n, d) array with n, d >= 1, got shape {pts.shape}"
            )
        if not np.all(np.isfinite(pts)):
            raise DomainError("point cloud entries must be finite")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def __repr__(self):
        return f"PointCloud(n={self.n}, d={self.d})"


@dataclass(frozen=True)
class QuotientPoint:
    """A cloud in canonical (lexicographically sorted) order."""

    representative: PointCloud

    @property
    def points(self) -> np.ndarray:
        return self.representative.points


def as_points(cloud) -> np.ndarray:
    """Coerce a PointCloud, QuotientPoint, or array-like to an (n, d) array."""
    if isinstance(cloud, QuotientPoint):
        return cloud.representative.points
    if isinstance(cloud, PointCloud):
        return cloud.points
    return PointCloud(np.asarray(cloud, dtype=float)).points


def check_same_shape(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        raise ShapeMismatchError(f"cloud shapes differ: {x.shape} vs {y.shape}")


@dataclass(frozen=True)
class Permutation:
    """A bijection sigma on {0, .., n-1}.

    ``mapping[i] = sigma(i)``. The action on clouds places point i at output
    slot sigma(i), i.e. output slot j receives point sigma^{-1}(j).
    """

    mapping: tuple[int, ...]

    def __post_init__(self):
        m = tuple(int(v) for v in self.mapping)
        n = len(m)
        if n < 1 or sorted(m) != list(range(n)):
            raise DomainError(f"mapping {m} is not a bijection on 0..{n - 1}")
        object.__setattr__(self, "mapping", m)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(tuple(range(n)))

    @classmethod
    def transposition(cls, n: int, a: int, b: int) -> "Permutation":
        m = list(range(n))
        m[a], m[b] = m[b], m[a]
        return cls(tuple(m))

    @property
    def n(self) -> int:
        return len(self.mapping)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.mapping, dtype=np.intp)

    def inverse(self) -> "Permutation":
        inv = [0] * self.n
        for i, v in enumerate(self.mapping):
            inv[v] = i
        return Permutation(tuple(inv))

    def compose(self, other: "Permutation") -> "Permutation":
        """Return self o other, acting as other first: i -> self(other(i))."""
        if self.n != other.n:
            raise ShapeMismatchError("cannot compose permutations of different size")
        return Permutation(tuple(self.mapping[v] for v in other.mapping))


def apply(sigma: Permutation, cloud) -> PointCloud:
    """Permute a cloud: output slot j holds input point sigma^{-1}(j)."""
    pts = as_points(cloud)
    if sigma.n != pts.shape[0]:
        raise ShapeMismatchError(
            f"permutation size {sigma.n} does not match cloud with {pts.shape[0]} points"
        )
    out = np.empty_like(pts)
    out[sigma.as_array()] = pts
    return PointCloud(out)


def canonicalize(cloud) -> QuotientPoint:
    """Sort points lexicographically; the result is permutation-invariant."""
    pts = as_points(cloud)
    order = np.lexsort(pts.T[::-1])
    return QuotientPoint(PointCloud(pts[order]))


def pairwise_sq_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Matrix of squared distances D[i, j] = ||x_i - y_j||^2."""
    diff = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def orbit_distance(x, y) -> float:
    """Distance between configurations: min over permutations of ||x - sigma(y)||.

    Solved as a minimum-cost assignment on squared distances; the minimizing
    permutation of a sum of per-pair squared distances is an assignment.
    """
    px, py = as_points(x), as_points(y)
    check_same_shape(px, py)
    cost = pairwise_sq_dists(px, py)
    rows, cols = linear_sum_assignment(cost)
    return math.sqrt(float(cost[rows, cols].sum()))


def min_cost_assignment(x, y) -> Permutation:
    """The permutation sigma minimizing ||x - sigma(y)||.

    Returned in the action convention above: y-slot j is matched with point
    x_{sigma(j)}.
    """
    px, py = as_points(x), as_points(y)
    check_same_shape(px, py)
    cost = pairwise_sq_dists(px, py)
    rows, cols = linear_sum_assignment(cost)
    mapping = np.empty(px.shape[0], dtype=np.intp)
    mapping[cols] = rows
    return Permutation(tuple(int(v) for v in mapping))


def iter_permutations(n: int) -> Iterator[tuple[int, ...]]:
    """All permutations of 0..n-1 in Heap's order (fixed, deterministic)."""
    a = list(range(n))
    yield tuple(a)
    c = [0] * n
    i = 0
    while i < n:
        if c[i] < i:
            if i % 2 == 0:
                a[0], a[i] = a[i], a[0]
            else:
                a[c[i]], a[i] = a[i], a[c[i]]
            yield tuple(a)
            c[i] += 1
            i = 0
        else:
            c[i] = 0
            i += 1


@lru_cache(maxsize=None)
def permutation_array(n: int, cap: int = ENUMERATION_CAP) -> np.ndarray:
    """All n! permutations as an (n!, n) index array, cached per n.

    Raises CapacityError above the enumeration cap; callers wanting larger N
    should switch to the MCMC estimators.
    """
    check_enumeration_cap(n, cap)
    arr = np.array(list(iter_permutations(n)), dtype=np.intp)
    assert arr.shape == (math.factorial(n), n)
    arr.setflags(write=False)
    return arr


def check_enumeration_cap(n: int, cap: int = ENUMERATION_CAP) -> None:
    from .errors import CapacityError

    if n > cap:
        raise CapacityError(
            f"exact enumeration over {n}! permutations exceeds the cap of {cap}; "
            "use the MCMC estimator instead"
        )
