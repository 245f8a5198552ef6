"""
The MIT License (MIT)

Copyright (c) 2026 digflow contributors
"""

from __future__ import annotations

__all__ = (
    "FeatureSequence",
    "as_feature_sequence",
    "ResidualOperator",
    "spectral_norm_estimate",
    "spectral_project",
    "apply",
    "gated_update",
)

import logging
import math
from typing import TYPE_CHECKING, Union

import numpy as np
import torch
from torch import nn

from .errors import DimensionMismatch, MeasureError

if TYPE_CHECKING:
    from typing import Optional


_log = logging.getLogger(__name__)

FeatureSequence = np.ndarray
TensorLike = Union[np.ndarray, torch.Tensor]


def as_feature_sequence(data: TensorLike) -> FeatureSequence:
    """
    Coerce ``data`` into a finite ``(T, d)`` float64 array.

    Raises
    ------
    :exc:`DimensionMismatch`
        Wrong rank, or a zero-sized axis.

    :exc:`MeasureError`
        Non-finite entries.
    """

    if isinstance(data, torch.Tensor):
        data = data.detach().cpu().numpy()

    rows = np.array(data, dtype=np.float64)

    if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < 1:
        _log.error("feature sequence has shape %s", rows.shape)
        raise DimensionMismatch(f"feature sequences are (T, d) with T, d >= 1, got shape {rows.shape}")

    if not np.all(np.isfinite(rows)):
        _log.error("feature sequence contains non-finite values")
        raise MeasureError("feature sequences must be finite")

    return rows


class ResidualOperator(nn.Module):
    """
    Affine feature correction ``R(H) = H W^T + b`` with a spectral bound on ``W``.

    Parameters
    ----------
    dim: :class:`int`
        Feature dimension ``d``.

    bound: :class:`float`
        Spectral bound ``B_R`` enforced by :func:`spectral_project`.

    power_iters: :class:`int`
        Power-iteration steps used to estimate the spectral norm.

    seed: :class:`int`
        Seed for the weight initialization and the power-iteration start vector.

    init_scale: :class:`float`
        Standard deviation of the initial weight entries, relative to ``1/sqrt(d)``.
    """

    def __init__(self, dim: int, *, bound: float = 2.0, power_iters: int = 50, seed: int = 0, init_scale: float = 0.1):
        super().__init__()

        if dim < 1:
            raise DimensionMismatch(f"residual operator needs d >= 1, got {dim}")

        if not bound > 0:
            raise MeasureError(f"spectral bound must be > 0, got {bound}")

        if power_iters < 1:
            raise MeasureError(f"power_iters must be >= 1, got {power_iters}")

        self.dim = dim
        self.bound = float(bound)
        self.power_iters = int(power_iters)
        self.seed = int(seed)

        generator = torch.Generator().manual_seed(self.seed)
        weight = torch.randn(dim, dim, generator=generator, dtype=torch.float64) * (init_scale / math.sqrt(dim))

        self.weight = nn.Parameter(weight)
        self.bias = nn.Parameter(torch.zeros(dim, dtype=torch.float64))

    @classmethod
    def from_matrix(
        cls,
        weight: TensorLike,
        bias: Optional[TensorLike] = None,
        *,
        bound: float = 2.0,
        power_iters: int = 50,
        seed: int = 0,
    ) -> ResidualOperator:
        weight_t = torch.as_tensor(np.asarray(weight, dtype=np.float64))

        if weight_t.ndim != 2 or weight_t.shape[0] != weight_t.shape[1]:
            raise DimensionMismatch(f"residual weight must be square, got shape {tuple(weight_t.shape)}")

        op = cls(weight_t.shape[0], bound=bound, power_iters=power_iters, seed=seed)

        with torch.no_grad():
            op.weight.copy_(weight_t)

            if bias is not None:
                op.bias.copy_(torch.as_tensor(np.asarray(bias, dtype=np.float64)))

        return op

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        if features.shape[-1] != self.dim:
            _log.error("residual operator dimension mismatch")
            raise DimensionMismatch(f"features have dimension {features.shape[-1]}, operator expects {self.dim}")

        return features @ self.weight.T + self.bias

    def extra_repr(self) -> str:
        return f"dim={self.dim}, bound={self.bound}, power_iters={self.power_iters}"


def spectral_norm_estimate(weight: torch.Tensor, iters: int = 50, seed: int = 0) -> float:
    """
    Estimate the largest singular value of ``weight`` by power iteration on ``W^T W``.

    The start vector is drawn from ``seed``, so the estimate is deterministic.
    """

    with torch.no_grad():
        w = weight.detach().to(torch.float64)
        generator = torch.Generator().manual_seed(int(seed))
        v = torch.randn(w.shape[1], generator=generator, dtype=torch.float64)
        v = v / torch.linalg.vector_norm(v)

        sigma = 0.0
        for _ in range(iters):
            u = w @ v
            u_norm = torch.linalg.vector_norm(u)

            if u_norm == 0:
                return 0.0

            u = u / u_norm
            v = w.T @ u
            sigma = float(torch.linalg.vector_norm(v))

            if sigma == 0.0:
                return 0.0

            v = v / sigma

    return sigma


def spectral_project(op: ResidualOperator) -> ResidualOperator:
    """
    Scale ``op.weight`` onto the spectral ball of radius ``op.bound`` in place.

    The power-iteration estimate can sit below the largest singular value when the top two are
    nearly equal, so the exact spectral norm is taken as well. Operators already inside the ball
    are left untouched. Returns ``op``.
    """

    estimate = spectral_norm_estimate(op.weight, op.power_iters, op.seed)

    with torch.no_grad():
        sigma = max(estimate, float(torch.linalg.matrix_norm(op.weight.detach(), ord=2)))

    if sigma > op.bound:
        _log.debug("projecting residual weight: sigma %.6g (estimate %.6g) -> %.6g", sigma, estimate, op.bound)

        with torch.no_grad():
            op.weight.mul_(op.bound / sigma)

    return op


def _check_sequence(op: ResidualOperator, features: torch.Tensor):
    if features.ndim < 2 or features.shape[-1] != op.dim:
        _log.error("residual input has shape %s", tuple(features.shape))
        raise DimensionMismatch(f"expected (..., T, {op.dim}) features, got shape {tuple(features.shape)}")


def apply(op: ResidualOperator, features: TensorLike) -> TensorLike:
    """
    Evaluate ``R(H)`` row by row.

    Accepts a ``(T, d)`` sequence or a ``(B, T, d)`` batch, as a tensor or an array; arrays come back as arrays.
    """

    if isinstance(features, torch.Tensor):
        _check_sequence(op, features)
        return op(features)

    tensor = torch.as_tensor(np.asarray(features, dtype=np.float64))
    _check_sequence(op, tensor)

    with torch.no_grad():
        return op(tensor).numpy()


def gated_update(features: TensorLike, g: Union[float, TensorLike], lam: float, op: ResidualOperator) -> TensorLike:
    """
    Gated residual enhancement ``H + lam * g * R(H)``.

    Parameters
    ----------
    features: Union[:class:`numpy.ndarray`, :class:`torch.Tensor`]
        A ``(T, d)`` sequence, or a ``(B, T, d)`` batch with one gate per element.

    g: Union[:class:`float`, :class:`numpy.ndarray`, :class:`torch.Tensor`]
        Gate value, or a length-``B`` vector of gates for a batch. Treated as a constant.

    lam: :class:`float`
        Residual strength. ``0`` returns the features unchanged.

    op: :class:`ResidualOperator`
        The residual operator.

    Raises
    ------
    :exc:`MeasureError`
        ``lam`` is negative or not finite.

    :exc:`DimensionMismatch`
        Feature dimension or gate count disagree.
    """

    if not (math.isfinite(lam) and lam >= 0):
        _log.error("gated_update with invalid residual strength %r", lam)
        raise MeasureError(f"residual strength must be finite and >= 0, got {lam}")

    as_array = not isinstance(features, torch.Tensor)
    tensor = torch.as_tensor(np.asarray(features, dtype=np.float64)) if as_array else features
    _check_sequence(op, tensor)

    gates = torch.as_tensor(np.asarray(g, dtype=np.float64)) if not isinstance(g, torch.Tensor) else g.detach()

    if gates.ndim == 1:
        if tensor.ndim != 3 or gates.shape[0] != tensor.shape[0]:
            raise DimensionMismatch(f"{gates.shape[0]} gates for features of shape {tuple(tensor.shape)}")

        gates = gates[:, None, None]

    if as_array:
        with torch.no_grad():
            return (tensor + lam * gates * op(tensor)).numpy()

    if lam == 0:
        return tensor

    return tensor + lam * gates * op(tensor)
