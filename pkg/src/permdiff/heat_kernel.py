"""Heat kernels on R^(d x N) and on the permutation quotient.

The quotient kernel is the sum of Euclidean Gaussian kernels over all N!
relabelings of the second argument. Everything is computed in log domain:
at small times the permutation sum spans hundreds of orders of magnitude.
"""

from __future__ import annotations

import math
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp

from .cloud import (
    ENUMERATION_CAP,
    as_points,
    check_same_shape,
    pairwise_sq_dists,
    permutation_array,
)
from .errors import DomainError


def _check_time(t: float) -> float:
    t = float(t)
    if not math.isfinite(t) or t <= 0.0:
        raise DomainError(f"time must be positive and finite, got {t}")
    return t


def euclid_log_heat_kernel(x, y, t: float) -> float:
    """log of the Gaussian heat kernel: -(dN/2) log(4 pi t) - ||x-y||^2 / (4t)."""
    t = _check_time(t)
    px, py = as_points(x), as_points(y)
    check_same_shape(px, py)
    n, d = px.shape
    sq = float(((px - py) ** 2).sum())
    return -(d * n / 2.0) * math.log(4.0 * math.pi * t) - sq / (4.0 * t)


def quotient_log_kernel_terms(x, y, t: float, cap: int = ENUMERATION_CAP) -> np.ndarray:
    """Per-permutation log summands, one per element of S_N in Heap's order.

    The term count is exactly N!; tests assert this to guard double counting.
    """
    t = _check_time(t)
    px, py = as_points(x), as_points(y)
    check_same_shape(px, py)
    n, d = px.shape
    perms = permutation_array(n, cap)
    sq = pairwise_sq_dists(px, py)[perms, np.arange(n)].sum(axis=1)
    return -(d * n / 2.0) * math.log(4.0 * math.pi * t) - sq / (4.0 * t)


def quotient_log_heat_kernel_exact(x, y, t: float, cap: int = ENUMERATION_CAP) -> float:
    """log sum over all permutations sigma of the Euclidean kernel at (x, sigma(y))."""
    return float(logsumexp(quotient_log_kernel_terms(x, y, t, cap)))


class SemigroupResidual(NamedTuple):
    residual: float
    std_error: float


def quotient_kernel_semigroup_residual(
    x,
    y,
    s: float,
    t: float,
    m: int,
    seed: int,
    cap: int = ENUMERATION_CAP,
) -> SemigroupResidual:
    """Monte Carlo check of the Chapman-Kolmogorov identity on the quotient.

    The intermediate integral over the quotient equals the Euclidean-measure
    expectation E_{z ~ N(x, 2sI)}[Kq(t, z, y)]: lifting the invariant
    integrand makes every one of the N! orbit copies contribute identically,
    cancelling the 1/N! volume factor. Returns |estimate - Kq(s+t, x, y)|
    and the standard error of the estimate.
    """
    s = _check_time(s)
    t = _check_time(t)
    if m < 1:
        raise DomainError("sample count m must be >= 1")
    px, py = as_points(x), as_points(y)
    check_same_shape(px, py)
    n, d = px.shape
    perms = permutation_array(n, cap)
    rng = np.random.default_rng(seed)
    z = px[None, :, :] + math.sqrt(2.0 * s) * rng.standard_normal((m, n, d))
    # ||z_m - sigma(y)||^2 for every draw and permutation, via the pair matrix
    diff = z[:, :, None, :] - py[None, None, :, :]
    pair_sq = np.einsum("mijk,mijk->mij", diff, diff)
    sq = pair_sq[:, perms, np.arange(n)].sum(axis=2)
    log_vals = -(d * n / 2.0) * math.log(4.0 * math.pi * t) + logsumexp(
        -sq / (4.0 * t), axis=1
    )
    vals = np.exp(log_vals)
    estimate = float(vals.mean())
    std_error = float(vals.std(ddof=1) / math.sqrt(m)) if m > 1 else float("inf")
    exact = math.exp(quotient_log_heat_kernel_exact(px, py, s + t, cap))
    return SemigroupResidual(abs(estimate - exact), std_error)


def initial_condition_check(
    f: Callable[[np.ndarray], float],
    x,
    t_sequence: Sequence[float],
    m: int,
    seed: int,
) -> list[float]:
    """Estimates of the kernel smoothing of f at x for each time in sequence.

    ``f`` must be a bounded permutation-invariant function of an (n, d)
    array. Smoothing with the quotient kernel of an invariant function
    reduces to the Euclidean expectation E_{z ~ N(x, 2tI)}[f(z)], which is
    what is sampled here. As t decreases toward 0 the estimates converge
    to f(x).
    """
    px = as_points(x)
    ts = [float(t) for t in t_sequence]
    if any(t <= 0 for t in ts):
        raise DomainError("all times must be positive")
    if any(b >= a for a, b in zip(ts, ts[1:])):
        raise DomainError("t_sequence must be strictly decreasing")
    if m < 1:
        raise DomainError("sample count m must be >= 1")
    rng = np.random.default_rng(seed)
    estimates = []
    for t in ts:
        z = px[None, :, :] + math.sqrt(2.0 * t) * rng.standard_normal((m, *px.shape))
        vals = [float(f(z[k])) for k in range(m)]
        estimates.append(float(np.mean(vals)))
    return estimates
