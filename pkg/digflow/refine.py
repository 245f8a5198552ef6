"""
The MIT License (MIT)

Copyright (c) 2026 digflow contributors
"""

from __future__ import annotations

__all__ = (
    "RefineConfig",
    "RefineRecord",
    "infer",
    "ContractionField",
    "contraction_rate",
    "fixed_gate_iterate",
    "estimate_rate",
    "random_spd_field",
)

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import torch

from .enums import GateStrategy
from .errors import ContractionWindowError, DegenerateTrajectory, RefinementError, UntrainedState
from .flow import centroid_broadcast, encode_actions, euler_sample
from .gating import gate
from .measures import EmpiricalMeasure, discrepancy
from .residual import as_feature_sequence, gated_update
from .utils import STREAM_DIRECTIONS, STREAM_GATE, derive_rng, derive_seed

if TYPE_CHECKING:
    from typing import List, Optional, Sequence, Tuple

    from .trainer import DigState


_log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RefineConfig:
    """
    Inference settings.

    Attributes
    ----------
    n_refine: :class:`int`
        Refinement iterations after the base prediction. ``0`` is the single-pass pipeline.

    flow_steps: :class:`int`
        Euler steps per generation.

    seed: :class:`int`
        Seed of the base noise, shared by every iteration.

    use_previous: :class:`bool`
        Gate the first prediction of a decision step with the previous step's prediction.
    """

    n_refine: int = 0
    flow_steps: int = 10
    seed: int = 0
    use_previous: bool = False

    def __post_init__(self):
        if self.n_refine < 0:
            raise RefinementError(f"n_refine must be >= 0, got {self.n_refine}")

        if self.flow_steps < 1:
            raise RefinementError(f"flow_steps must be >= 1, got {self.flow_steps}")


@dataclass(frozen=True)
class RefineRecord:
    iteration: int
    discrepancy: float
    gate: float


def _check_state(state: DigState):
    for module in (state.model, state.encoder, state.residual):
        for param in module.parameters():
            if not bool(torch.isfinite(param).all()):
                _log.error("inference on a state with non-finite parameters")
                raise UntrainedState("model state holds non-finite parameters")


def _enhance(
    state: DigState, features: np.ndarray, chunk: np.ndarray, seed: int, iteration: int
) -> Tuple[np.ndarray, RefineRecord]:
    cfg = state.config
    dig = cfg.dig

    targets = centroid_broadcast(encode_actions(state.encoder, chunk), features.shape[0])
    value = discrepancy(
        EmpiricalMeasure(features),
        EmpiricalMeasure(targets),
        dig.discrepancy,
        seed=derive_seed(seed, STREAM_DIRECTIONS, iteration),
    )

    if not cfg.uses_gate:
        g = 1.0
    elif cfg.gate_strategy is GateStrategy.fixed:
        g = cfg.fixed_gate
    elif cfg.gate_strategy is GateStrategy.random:
        g = float(derive_rng(seed, STREAM_GATE, iteration).uniform())
    else:
        g = gate(value, dig.gate)

    if cfg.uses_residual:
        enhanced = gated_update(features, g, dig.lam, state.residual)
    else:
        enhanced = features

    return enhanced, RefineRecord(iteration, float(value), float(g))


def infer(
    state: DigState, observation: np.ndarray, cfg: RefineConfig, *, previous: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, List[RefineRecord]]:
    """
    Predict an action chunk for one observation, with optional iterative refinement.

    The base prediction conditions on the raw features. Each refinement iteration embeds the
    current prediction, gates the residual enhancement by its discrepancy to the features and
    regenerates from the same base noise.

    Parameters
    ----------
    state: :class:`~digflow.trainer.DigState`
        A trained state.

    observation: :class:`numpy.ndarray`
        ``(T, d)`` observation features.

    cfg: :class:`RefineConfig`
        Inference settings.

    previous: Optional[:class:`numpy.ndarray`]
        The prediction of the previous decision step, used when ``cfg.use_previous`` is set.

    Raises
    ------
    :exc:`UntrainedState`
        The state holds non-finite parameters.

    Returns
    -------
    Tuple[:class:`numpy.ndarray`, List[:class:`RefineRecord`]]
        The final ``(K, d_a)`` chunk and one record per gated generation.
    """

    _check_state(state)

    features = as_feature_sequence(observation)
    records = []

    conditioning = features
    if cfg.use_previous and previous is not None:
        conditioning, record = _enhance(state, features, np.asarray(previous, dtype=np.float64), cfg.seed, 0)
        records.append(record)

    chunk = euler_sample(state.model, conditioning, cfg.flow_steps, cfg.seed)

    for i in range(1, cfg.n_refine + 1):
        conditioning, record = _enhance(state, features, chunk, cfg.seed, i)
        records.append(record)

        chunk = euler_sample(state.model, conditioning, cfg.flow_steps, cfg.seed)

        _log.debug("refine iteration %d: D=%.6g g=%.6g", i, record.discrepancy, record.gate)

    return chunk, records


@dataclass(frozen=True)
class ContractionField:
    """
    Linear fixed-gate field ``E(Z) = A (Z - Z*)`` iterated as ``Z <- Z - alpha E(Z)``.

    Attributes
    ----------
    matrix: :class:`numpy.ndarray`
        Symmetric positive-definite ``A``.

    fixed_point: :class:`numpy.ndarray`
        ``Z*``, with as many rows as ``A``.

    alpha: :class:`float`
        Step size.
    """

    matrix: np.ndarray
    fixed_point: np.ndarray
    alpha: float

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=np.float64)
        fixed_point = np.array(self.fixed_point, dtype=np.float64)

        if fixed_point.ndim == 1:
            fixed_point = fixed_point[:, None]

        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] != fixed_point.shape[0]:
            raise RefinementError(f"incompatible field shapes {matrix.shape} and {fixed_point.shape}")

        if not np.allclose(matrix, matrix.T, rtol=0, atol=1e-12):
            raise RefinementError("contraction field matrix must be symmetric")

        eigenvalues = np.linalg.eigvalsh(matrix)

        if eigenvalues[0] <= 0:
            raise RefinementError(
                f"contraction field matrix must be positive definite, smallest eigenvalue {eigenvalues[0]:.3g}"
            )

        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "fixed_point", fixed_point)
        object.__setattr__(self, "_spectrum", (float(eigenvalues[0]), float(eigenvalues[-1])))

    @property
    def mu(self) -> float:
        return self._spectrum[0]  # type: ignore

    @property
    def lipschitz(self) -> float:
        return self._spectrum[1]  # type: ignore

    @property
    def alpha_max(self) -> float:
        """Upper end of the contraction window, ``2 mu / L_E^2``."""

        return 2.0 * self.mu / self.lipschitz**2

    def residual(self, point: np.ndarray) -> np.ndarray:
        return self.matrix @ (point - self.fixed_point)


def contraction_rate(field: ContractionField) -> float:
    """
    ``sqrt(1 - 2 alpha mu + alpha^2 L_E^2)``
    """

    rho_sq = 1.0 - 2.0 * field.alpha * field.mu + field.alpha**2 * field.lipschitz**2

    return math.sqrt(max(0.0, rho_sq))


def fixed_gate_iterate(field: ContractionField, start: np.ndarray, iterations: int) -> Tuple[np.ndarray, List[float]]:
    """
    Run ``iterations`` steps of the fixed-gate map from ``start``.

    Raises
    ------
    :exc:`ContractionWindowError`
        ``alpha`` lies outside ``(0, 2 mu / L_E^2)``.

    Returns
    -------
    Tuple[:class:`numpy.ndarray`, List[:class:`float`]]
        The final point and the per-step distance ratios to ``Z*``. A step taken from ``Z*`` has ratio 0.
    """

    if not 0.0 < field.alpha < field.alpha_max:
        _log.error("step size %.6g outside the contraction window", field.alpha)
        raise ContractionWindowError(
            f"alpha must satisfy 0 < alpha < 2*mu/L_E^2 = {field.alpha_max:.6g}, got {field.alpha:.6g}"
        )

    point = np.array(start, dtype=np.float64).reshape(field.fixed_point.shape)
    distance = float(np.linalg.norm(point - field.fixed_point))
    ratios = []

    for _ in range(iterations):
        point = point - field.alpha * field.residual(point)
        new_distance = float(np.linalg.norm(point - field.fixed_point))

        ratios.append(new_distance / distance if distance > 0 else 0.0)
        distance = new_distance

    return point, ratios


def estimate_rate(ratios: Sequence[float]) -> float:
    """
    Geometric mean of per-step distance ratios.

    Raises
    ------
    :exc:`DegenerateTrajectory`
        Fewer than two ratios, or a ratio that is zero or not finite.
    """

    values = np.asarray(list(ratios), dtype=np.float64)

    if values.size < 2:
        _log.error("estimate_rate needs at least two ratios")
        raise DegenerateTrajectory(f"need at least two ratios to estimate a rate, got {values.size}")

    if not np.all(np.isfinite(values)) or np.any(values <= 0):
        _log.error("estimate_rate on a converged or invalid trajectory")
        raise DegenerateTrajectory("ratios must be finite and positive; the trajectory has already converged")

    return float(np.exp(np.mean(np.log(values))))


def random_spd_field(
    rng: np.random.Generator,
    dim: int = 4,
    columns: int = 3,
    *,
    max_condition: float = 4.0,
    alpha: Optional[float] = None,
) -> ContractionField:
    """
    Draw a random SPD contraction field with condition number at most ``max_condition``.

    The step size is drawn uniformly inside the contraction window unless given.
    """

    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    mu = rng.uniform(0.5, 1.0)
    eigenvalues = rng.uniform(mu, mu * max_condition, size=dim)
    eigenvalues[0] = mu

    matrix = (q * eigenvalues) @ q.T
    matrix = 0.5 * (matrix + matrix.T)

    fixed_point = rng.standard_normal((dim, columns))

    field = ContractionField(matrix, fixed_point, 1.0)

    if alpha is None:
        alpha = float(rng.uniform(0.0, 1.0)) * field.alpha_max

        while alpha <= 0.0:
            alpha = float(rng.uniform(0.0, 1.0)) * field.alpha_max

    return ContractionField(matrix, fixed_point, alpha)
