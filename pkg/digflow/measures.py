"""
The MIT License (MIT)

Copyright (c) 2026 digflow contributors
"""

from __future__ import annotations

__all__ = (
    "EmpiricalMeasure",
    "DiscrepancyKind",
    "w2_1d",
    "sample_directions",
    "sliced_w2_terms",
    "sliced_w2",
    "exact_w2_oracle",
    "sinkhorn_divergence",
    "mmd_rbf",
    "cosine_mean_discrepancy",
    "discrepancy",
    "batch_discrepancy",
    "ORACLE_MAX_POINTS",
)

import logging
import math
from dataclasses import dataclass, field
from itertools import permutations
from typing import TYPE_CHECKING

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .enums import DiscrepancyTag
from .errors import (
    DimensionMismatch,
    EmptyMeasure,
    MeasureError,
    OracleTooLarge,
    SinkhornDidNotConverge,
    ZeroMeanMeasure,
)
from .utils import STREAM_DIRECTIONS, derive_rng

if TYPE_CHECKING:
    from typing import Iterable, Optional, Sequence, Tuple, Union

    ArrayLike = Union[np.ndarray, Sequence[float], Sequence[Sequence[float]]]


_log = logging.getLogger(__name__)

ORACLE_MAX_POINTS = 8

# sinkhorn iterations spent at each coarse regularization level
_STAGE_ITERS = 100
# sinkhorn iterations at the target level before switching to newton steps
_NEWTON_AFTER = 200


@dataclass(frozen=True)
class EmpiricalMeasure:
    """
    A uniform-weight point cloud in ``R^d``.

    Every point carries mass ``1/n``. The points are stored as a read-only ``(n, d)`` float64 array.

    Attributes
    ----------
    points: :class:`numpy.ndarray`
        The support, one row per Dirac mass.
    """

    points: np.ndarray

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64)

        if points.ndim == 1:
            points = points[:, None]

        if points.ndim != 2:
            _log.error("measure points must be a 2D array")
            raise DimensionMismatch(f"expected an (n, d) array of points, got shape {points.shape}")

        if points.shape[0] < 1:
            _log.error("measure built from zero points")
            raise EmptyMeasure("an empirical measure needs at least one point")

        if points.shape[1] < 1:
            raise DimensionMismatch("points must have dimension d >= 1")

        if not np.all(np.isfinite(points)):
            _log.error("measure points contain non-finite values")
            raise MeasureError("measure points must be finite")

        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    @classmethod
    def from_points(cls, points: Iterable[Iterable[float]]) -> EmpiricalMeasure:
        return cls(np.array([list(p) for p in points], dtype=np.float64))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def __len__(self) -> int:
        return self.n

    def __repr__(self):
        return f"<EmpiricalMeasure(n={self.n}, d={self.dim})>"


@dataclass(frozen=True)
class DiscrepancyKind:
    """
    Tagged description of a discrepancy and its parameters.

    Only the fields relevant to :attr:`tag` are read. Use the classmethod constructors.

    Attributes
    ----------
    tag: :class:`.DiscrepancyTag`
        Which discrepancy to compute.

    projections: :class:`int`
        Number of sliced directions ``M``.

    seed: :class:`int`
        Base seed for the sliced directions.

    epsilon: :class:`float`
        Entropic regularization for Sinkhorn.

    max_iters: :class:`int`
        Iteration cap for Sinkhorn.

    tol: :class:`float`
        Marginal-violation tolerance for Sinkhorn.

    sigma: :class:`float`
        Kernel bandwidth for MMD.
    """

    tag: DiscrepancyTag = DiscrepancyTag.sliced_w2
    projections: int = 32
    seed: int = 0
    epsilon: float = 0.1
    max_iters: int = 10000
    tol: float = 1e-9
    sigma: float = 1.0

    def __post_init__(self):
        if not isinstance(self.tag, DiscrepancyTag):
            object.__setattr__(self, "tag", DiscrepancyTag(self.tag))

        if self.projections < 1:
            raise MeasureError(f"number of projections must be >= 1, got {self.projections}")

        if not self.epsilon > 0:
            raise MeasureError(f"entropic regularization must be > 0, got {self.epsilon}")

        if not self.sigma > 0:
            raise MeasureError(f"kernel bandwidth must be > 0, got {self.sigma}")

        if self.max_iters < 1 or not self.tol > 0:
            raise MeasureError("sinkhorn needs max_iters >= 1 and tol > 0")

    @classmethod
    def sliced(cls, projections: int = 32, seed: int = 0) -> DiscrepancyKind:
        return cls(DiscrepancyTag.sliced_w2, projections=projections, seed=seed)

    @classmethod
    def sinkhorn(cls, epsilon: float = 0.1, max_iters: int = 10000, tol: float = 1e-9) -> DiscrepancyKind:
        return cls(DiscrepancyTag.sinkhorn, epsilon=epsilon, max_iters=max_iters, tol=tol)

    @classmethod
    def mmd(cls, sigma: float = 1.0) -> DiscrepancyKind:
        return cls(DiscrepancyTag.mmd_rbf, sigma=sigma)

    @classmethod
    def cosine(cls) -> DiscrepancyKind:
        return cls(DiscrepancyTag.cosine_mean)

    def describe(self) -> str:
        if self.tag is DiscrepancyTag.sliced_w2:
            return f"sliced_w2(M={self.projections})"

        if self.tag is DiscrepancyTag.sinkhorn:
            return f"sinkhorn(eps={self.epsilon:g})"

        if self.tag is DiscrepancyTag.mmd_rbf:
            return f"mmd_rbf(sigma={self.sigma:g})"

        return "cosine_mean"


def _check_pair(mu: EmpiricalMeasure, nu: EmpiricalMeasure, *, same_size: bool = False):
    if mu.dim != nu.dim:
        _log.error("measure dimension mismatch")
        raise DimensionMismatch(f"measures live in different spaces: d={mu.dim} vs d={nu.dim}")

    if same_size and mu.n != nu.n:
        _log.error("measure size mismatch")
        raise DimensionMismatch(f"measures must have equal point counts: {mu.n} vs {nu.n}")


def w2_1d(a: ArrayLike, b: ArrayLike) -> float:
    """
    Squared 2-Wasserstein distance between two equal-size uniform measures on the line.

    Both inputs are sorted ascending and paired by rank.

    Raises
    ------
    :exc:`DimensionMismatch`
        The inputs have different lengths.

    :exc:`EmptyMeasure`
        The inputs are empty.
    """

    a_sorted = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b_sorted = np.sort(np.asarray(b, dtype=np.float64).ravel())

    if a_sorted.size != b_sorted.size:
        _log.error("w2_1d: length mismatch")
        raise DimensionMismatch(f"1D measures must have equal size, got {a_sorted.size} and {b_sorted.size}")

    if a_sorted.size == 0:
        raise EmptyMeasure("1D measures must be non-empty")

    return float(np.mean((a_sorted - b_sorted) ** 2))


def sample_directions(count: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """
    Draw ``count`` directions uniformly on the unit sphere ``S^{dim-1}``.

    Standard normal vectors normalized to unit length.
    """

    raw = rng.standard_normal((count, dim))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)

    # a zero draw has probability zero; keep the row well defined anyway
    norms[norms == 0.0] = 1.0

    return raw / norms


def sliced_w2_terms(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    projections: int = 32,
    seed: int = 0,
    *,
    directions: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Per-direction 1D squared Wasserstein costs, in direction order.

    Returns an array of length ``M``.
    """

    _check_pair(mu, nu, same_size=True)

    if directions is None:
        if projections < 1:
            raise MeasureError(f"number of projections must be >= 1, got {projections}")

        directions = sample_directions(projections, mu.dim, derive_rng(seed, STREAM_DIRECTIONS))

    else:
        directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))

        if directions.shape[1] != mu.dim:
            raise DimensionMismatch(f"directions have dimension {directions.shape[1]}, measures have {mu.dim}")

    proj_mu = np.sort(mu.points @ directions.T, axis=0)
    proj_nu = np.sort(nu.points @ directions.T, axis=0)

    return np.mean((proj_mu - proj_nu) ** 2, axis=0)


def sliced_w2(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    projections: int = 32,
    seed: int = 0,
    *,
    directions: Optional[np.ndarray] = None,
) -> float:
    """
    Sliced squared 2-Wasserstein distance.

    Averages :func:`w2_1d` of the projected measures over ``M`` random unit directions drawn
    from ``seed``. Deterministic for a fixed seed.

    Parameters
    ----------
    mu: :class:`EmpiricalMeasure`
        First measure.

    nu: :class:`EmpiricalMeasure`
        Second measure, same point count and dimension as ``mu``.

    projections: :class:`int`
        Number of directions ``M``.

    seed: :class:`int`
        Seed for the direction draw.

    directions: Optional[:class:`numpy.ndarray`]
        Explicit ``(M, d)`` directions, bypassing the sphere sampler.

    Raises
    ------
    :exc:`DimensionMismatch`
        The measures differ in dimension or size.
    """

    terms = sliced_w2_terms(mu, nu, projections, seed, directions=directions)

    return float(np.mean(terms))


def exact_w2_oracle(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """
    Exact squared 2-Wasserstein distance by enumerating every assignment.

    Uniform weights with equal counts make optimal transport an assignment problem, so the
    minimum over the ``n!`` permutations is exact.

    Raises
    ------
    :exc:`OracleTooLarge`
        More than :data:`ORACLE_MAX_POINTS` points.
    """

    _check_pair(mu, nu, same_size=True)

    if mu.n > ORACLE_MAX_POINTS:
        _log.error("exact_w2_oracle: refusing factorial enumeration")
        raise OracleTooLarge(f"brute-force oracle supports n <= {ORACLE_MAX_POINTS}, got n = {mu.n}")

    cost = cdist(mu.points, nu.points, "sqeuclidean")
    rows = np.arange(mu.n)

    best = math.inf
    for perm in permutations(range(mu.n)):
        value = float(cost[rows, list(perm)].mean())

        if value < best:
            best = value

    return best


def _row_potential(g: np.ndarray, cost: np.ndarray, log_b: np.ndarray, epsilon: float) -> np.ndarray:
    return -epsilon * logsumexp((g[None, :] - cost) / epsilon + log_b[None, :], axis=1)


def _column_potential(f: np.ndarray, cost: np.ndarray, log_a: np.ndarray, epsilon: float) -> np.ndarray:
    return -epsilon * logsumexp((f[:, None] - cost) / epsilon + log_a[:, None], axis=0)


def _plan(
    f: np.ndarray, g: np.ndarray, cost: np.ndarray, log_a: np.ndarray, log_b: np.ndarray, epsilon: float
) -> np.ndarray:
    return np.exp((f[:, None] + g[None, :] - cost) / epsilon + log_a[:, None] + log_b[None, :])


def _sinkhorn_stage(
    cost: np.ndarray, log_a: np.ndarray, log_b: np.ndarray, epsilon: float, g: np.ndarray, iters: int, tol: float
) -> Tuple[np.ndarray, np.ndarray, float, int]:
    """
    Alternating log-domain updates from the column potential ``g``.

    Returns ``(f, g, violation, iterations)``; the violation is the L1 error of the row marginal.
    """

    f = _row_potential(g, cost, log_b, epsilon)
    violation = math.inf
    iteration = 0

    for iteration in range(1, iters + 1):
        f = _row_potential(g, cost, log_b, epsilon)
        g = _column_potential(f, cost, log_a, epsilon)

        # columns are exact after the g update
        row_mass = _plan(f, g, cost, log_a, log_b, epsilon).sum(axis=1)
        violation = float(np.abs(row_mass - np.exp(log_a)).sum())

        if violation <= tol:
            break

    return f, g, violation, iteration


def _newton_stage(
    cost: np.ndarray, log_a: np.ndarray, log_b: np.ndarray, epsilon: float, g: np.ndarray, iters: int, tol: float
) -> Tuple[np.ndarray, np.ndarray, float, int]:
    """
    Damped Newton steps on the semi-dual in ``g``, with the row potential kept exact.

    The Hessian is ``diag(P^T 1) - P^T diag(1/a) P`` up to ``1/epsilon``; its null direction
    (a constant shift of ``g``) is left to the least-squares solve. A step is halved until the
    column violation decreases. Returns ``(f, g, violation, iterations)``.
    """

    a, b = np.exp(log_a), np.exp(log_b)

    f = _row_potential(g, cost, log_b, epsilon)
    plan = _plan(f, g, cost, log_a, log_b, epsilon)
    residual = b - plan.sum(axis=0)
    violation = float(np.abs(residual).sum())
    iteration = 0

    while violation > tol and iteration < iters:
        iteration += 1

        hessian = np.diag(plan.sum(axis=0)) - plan.T @ (plan / a[:, None])
        step = np.linalg.lstsq(hessian, epsilon * residual, rcond=None)[0]

        scale = 1.0
        for _ in range(40):
            trial_g = g + scale * step
            trial_f = _row_potential(trial_g, cost, log_b, epsilon)
            trial_plan = _plan(trial_f, trial_g, cost, log_a, log_b, epsilon)
            trial_residual = b - trial_plan.sum(axis=0)
            trial_violation = float(np.abs(trial_residual).sum())

            if trial_violation < violation:
                break

            scale *= 0.5

        else:
            _log.debug("sinkhorn: newton steps stalled at violation %.3e", violation)
            break

        f, g, plan, residual, violation = trial_f, trial_g, trial_plan, trial_residual, trial_violation

    return f, g, violation, iteration


def _entropic_ot(
    x: np.ndarray, y: np.ndarray, epsilon: float, max_iters: int, tol: float
) -> float:
    """
    Entropic transport cost between uniform measures.

    The regularization is annealed by halving from the largest cost down to ``epsilon``,
    warm-starting the potentials at every level. At the target level, alternating updates run
    first and damped Newton steps finish whatever tolerance they leave. ``max_iters`` bounds
    the iterations at the target level.

    Returns the dual value ``<a, f> + <b, g>``.
    """

    n, m = x.shape[0], y.shape[0]
    cost = cdist(x, y, "sqeuclidean")

    log_a = np.full(n, -math.log(n))
    log_b = np.full(m, -math.log(m))

    g = np.zeros(m)

    levels = []
    level = float(cost.max())
    while level > 2.0 * epsilon:
        levels.append(level)
        level *= 0.5

    for level in levels:
        _, g, _, _ = _sinkhorn_stage(cost, log_a, log_b, level, g, min(max_iters, _STAGE_ITERS), tol)

    f, g, violation, used = _sinkhorn_stage(cost, log_a, log_b, epsilon, g, min(max_iters, _NEWTON_AFTER), tol)

    if violation > tol and used < max_iters:
        f, g, violation, polished = _newton_stage(cost, log_a, log_b, epsilon, g, max_iters - used, tol)
        used += polished

    if violation > tol:
        _log.error("sinkhorn: no convergence after %d iterations (violation %.3e)", used, violation)
        raise SinkhornDidNotConverge(
            f"sinkhorn did not reach tol={tol:g} in {used} iterations (violation {violation:.3e})",
            violation=violation,
            iterations=used,
        )

    _log.debug("sinkhorn converged in %d iterations over %d levels", used, len(levels) + 1)

    return float(np.exp(log_a) @ f + np.exp(log_b) @ g)


def sinkhorn_divergence(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    epsilon: float = 0.1,
    max_iters: int = 10000,
    tol: float = 1e-9,
) -> float:
    """
    Debiased Sinkhorn divergence ``OT(mu, nu) - OT(mu, mu)/2 - OT(nu, nu)/2``.

    Raises
    ------
    :exc:`SinkhornDidNotConverge`
        Any of the three transport problems failed to reach ``tol``.
    """

    _check_pair(mu, nu)

    if not epsilon > 0:
        raise MeasureError(f"entropic regularization must be > 0, got {epsilon}")

    x, y = mu.points, nu.points

    cross = _entropic_ot(x, y, epsilon, max_iters, tol)
    self_x = _entropic_ot(x, x, epsilon, max_iters, tol)
    self_y = _entropic_ot(y, y, epsilon, max_iters, tol)

    return max(0.0, cross - 0.5 * self_x - 0.5 * self_y)


def mmd_rbf(mu: EmpiricalMeasure, nu: EmpiricalMeasure, sigma: float = 1.0) -> float:
    """
    Squared MMD with kernel ``exp(-|x - y|^2 / (2 sigma^2))``, biased V-statistic.
    """

    _check_pair(mu, nu)

    if not sigma > 0:
        raise MeasureError(f"kernel bandwidth must be > 0, got {sigma}")

    scale = 2.0 * sigma * sigma
    k_xx = np.exp(-cdist(mu.points, mu.points, "sqeuclidean") / scale).mean()
    k_yy = np.exp(-cdist(nu.points, nu.points, "sqeuclidean") / scale).mean()
    k_xy = np.exp(-cdist(mu.points, nu.points, "sqeuclidean") / scale).mean()

    return max(0.0, float(k_xx + k_yy - 2.0 * k_xy))


def cosine_mean_discrepancy(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """
    ``1 - cos(mean(mu), mean(nu))``, in ``[0, 2]``.

    Raises
    ------
    :exc:`ZeroMeanMeasure`
        Either mean vector is zero.
    """

    _check_pair(mu, nu)

    m_a, m_b = mu.mean, nu.mean
    n_a, n_b = float(np.linalg.norm(m_a)), float(np.linalg.norm(m_b))

    if n_a == 0.0 or n_b == 0.0:
        _log.error("cosine discrepancy on a zero-mean measure")
        raise ZeroMeanMeasure("cosine discrepancy needs nonzero measure means")

    cos = float(m_a @ m_b) / (n_a * n_b)

    return min(2.0, max(0.0, 1.0 - cos))


def discrepancy(
    mu: EmpiricalMeasure, nu: EmpiricalMeasure, kind: DiscrepancyKind, *, seed: Optional[int] = None
) -> float:
    """
    Dispatch to the discrepancy selected by ``kind``.

    ``seed`` overrides ``kind.seed`` for the sliced directions.
    """

    tag = kind.tag

    if tag is DiscrepancyTag.sliced_w2:
        return sliced_w2(mu, nu, kind.projections, kind.seed if seed is None else seed)

    if tag is DiscrepancyTag.sinkhorn:
        return sinkhorn_divergence(mu, nu, kind.epsilon, kind.max_iters, kind.tol)

    if tag is DiscrepancyTag.mmd_rbf:
        return mmd_rbf(mu, nu, kind.sigma)

    return cosine_mean_discrepancy(mu, nu)


def batch_discrepancy(
    features: np.ndarray, targets: np.ndarray, kind: DiscrepancyKind, seed: int
) -> np.ndarray:
    """
    Per-element discrepancies for a batch of ``(B, T, d)`` feature and target sequences.

    All elements share one set of sliced directions drawn from ``seed``.
    """

    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)

    if features.ndim != 3 or features.shape[0] != targets.shape[0] or features.shape[2] != targets.shape[2]:
        _log.error("batch_discrepancy: shape mismatch")
        raise DimensionMismatch(f"incompatible batch shapes {features.shape} and {targets.shape}")

    if kind.tag is DiscrepancyTag.sliced_w2:
        if features.shape[1] != targets.shape[1]:
            raise DimensionMismatch("sliced discrepancy needs equal token counts per element")

        directions = sample_directions(kind.projections, features.shape[2], derive_rng(seed, STREAM_DIRECTIONS))

        proj_h = np.sort(features @ directions.T, axis=1)
        proj_z = np.sort(targets @ directions.T, axis=1)

        return np.mean(np.mean((proj_h - proj_z) ** 2, axis=1), axis=1)

    return np.array(
        [
            discrepancy(EmpiricalMeasure(h), EmpiricalMeasure(z), kind, seed=seed)
            for h, z in zip(features, targets)
        ]
    )
