"""
The MIT License (MIT)

Copyright (c) 2026 digflow contributors
"""

from __future__ import annotations

__all__ = (
    "FlowSample",
    "ActionChunk",
    "interpolate",
    "VectorFieldModel",
    "ActionEncoder",
    "flow_losses",
    "per_sample_loss",
    "loss_gradients",
    "encode_actions",
    "centroid_broadcast",
    "euler_sample",
)

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Union

import numpy as np
import torch
from torch import nn

from .errors import DimensionMismatch, FlowTimeOutOfRange
from .utils import STREAM_NOISE, derive_rng

if TYPE_CHECKING:
    from typing import Dict, Optional, Tuple


_log = logging.getLogger(__name__)

ActionChunk = np.ndarray
TensorLike = Union[np.ndarray, torch.Tensor]


def _tensor(data: TensorLike) -> torch.Tensor:
    if isinstance(data, torch.Tensor):
        return data

    return torch.as_tensor(np.asarray(data, dtype=np.float64))


@dataclass(frozen=True)
class FlowSample:
    """
    A point on the linear probability path between base noise and a flattened action chunk.

    Attributes
    ----------
    x0: :class:`numpy.ndarray`
        Base noise, length ``K * d_a``.

    x1: :class:`numpy.ndarray`
        Flattened ground-truth chunk.

    t: :class:`float`
        Path time in ``[0, 1]``.

    xt: :class:`numpy.ndarray`
        ``(1 - t) * x0 + t * x1``
    """

    x0: np.ndarray
    x1: np.ndarray
    t: float
    xt: np.ndarray

    @property
    def target(self) -> np.ndarray:
        """The conditional target field ``x1 - x0``."""

        return self.x1 - self.x0


def interpolate(x0: TensorLike, x1: TensorLike, t: float) -> FlowSample:
    """
    Build the path sample at time ``t``.

    Raises
    ------
    :exc:`FlowTimeOutOfRange`
        ``t`` lies outside ``[0, 1]``.

    :exc:`DimensionMismatch`
        ``x0`` and ``x1`` differ in size.
    """

    if not 0.0 <= t <= 1.0:
        _log.error("interpolate: t=%r outside [0, 1]", t)
        raise FlowTimeOutOfRange(f"path time must lie in [0, 1], got {t}")

    start = np.asarray(x0, dtype=np.float64).ravel()
    end = np.asarray(x1, dtype=np.float64).ravel()

    if start.shape != end.shape:
        _log.error("interpolate: endpoint size mismatch")
        raise DimensionMismatch(f"path endpoints differ in size: {start.size} vs {end.size}")

    return FlowSample(x0=start, x1=end, t=float(t), xt=(1.0 - t) * start + t * end)


class VectorFieldModel(nn.Module):
    """
    Conditional vector field ``v(x_t, t | H)``.

    A two-hidden-layer tanh perceptron over ``concat(x_t, t, mean_T(H))``. All parameters are float64.

    Parameters
    ----------
    action_dim: :class:`int`
        Per-step action dimension ``d_a``.

    horizon: :class:`int`
        Chunk length ``K``.

    feature_dim: :class:`int`
        Observation feature dimension ``d``.

    width: :class:`int`
        Hidden width.

    seed: :class:`int`
        Seed for the parameter initialization.
    """

    def __init__(self, action_dim: int, horizon: int, feature_dim: int, width: int = 64, *, seed: int = 0):
        super().__init__()

        if min(action_dim, horizon, feature_dim, width) < 1:
            raise DimensionMismatch("model dimensions must all be >= 1")

        self.action_dim = action_dim
        self.horizon = horizon
        self.feature_dim = feature_dim
        self.width = width

        out_dim = action_dim * horizon

        self.input = nn.Linear(out_dim + 1 + feature_dim, width, dtype=torch.float64)
        self.hidden = nn.Linear(width, width, dtype=torch.float64)
        self.output = nn.Linear(width, out_dim, dtype=torch.float64)

        generator = torch.Generator().manual_seed(int(seed))

        with torch.no_grad():
            for layer in (self.input, self.hidden, self.output):
                bound = 1.0 / math.sqrt(layer.in_features)
                noise = torch.rand(layer.weight.shape, generator=generator, dtype=torch.float64)
                layer.weight.copy_(noise * 2 * bound - bound)
                layer.bias.zero_()

    @property
    def flat_dim(self) -> int:
        return self.action_dim * self.horizon

    def forward(self, xt: torch.Tensor, t: torch.Tensor, features: torch.Tensor) -> torch.Tensor:
        pooled = features.mean(dim=-2)
        t = t.reshape(*xt.shape[:-1], 1)

        hidden = torch.tanh(self.input(torch.cat([xt, t, pooled], dim=-1)))
        hidden = torch.tanh(self.hidden(hidden))

        return self.output(hidden)

    def check_inputs(self, xt: torch.Tensor, features: torch.Tensor):
        if xt.shape[-1] != self.flat_dim:
            _log.error("vector field input has %d entries, expected %d", xt.shape[-1], self.flat_dim)
            raise DimensionMismatch(f"x_t has {xt.shape[-1]} entries, model expects {self.flat_dim}")

        if features.ndim < 2 or features.shape[-1] != self.feature_dim:
            _log.error("conditioning features have shape %s", tuple(features.shape))
            raise DimensionMismatch(
                f"conditioning features need dimension {self.feature_dim}, got shape {tuple(features.shape)}"
            )

    def extra_repr(self) -> str:
        return f"d_a={self.action_dim}, K={self.horizon}, d={self.feature_dim}, width={self.width}"


class ActionEncoder(nn.Module):
    """
    Linear action embedding ``z = E a`` into feature space.

    Parameters
    ----------
    action_dim: :class:`int`
        Input dimension ``d_a``.

    feature_dim: :class:`int`
        Output dimension ``d``.

    seed: :class:`int`
        Seed for the initialization.
    """

    def __init__(self, action_dim: int, feature_dim: int, *, seed: int = 0):
        super().__init__()

        if action_dim < 1 or feature_dim < 1:
            raise DimensionMismatch("encoder dimensions must be >= 1")

        self.action_dim = action_dim
        self.feature_dim = feature_dim

        generator = torch.Generator().manual_seed(int(seed))
        weight = torch.randn(feature_dim, action_dim, generator=generator, dtype=torch.float64) / math.sqrt(action_dim)

        self.weight = nn.Parameter(weight)

    @classmethod
    def from_matrix(cls, weight: TensorLike) -> ActionEncoder:
        matrix = _tensor(weight).to(torch.float64)

        if matrix.ndim != 2:
            raise DimensionMismatch(f"encoder weight must be a matrix, got shape {tuple(matrix.shape)}")

        enc = cls(matrix.shape[1], matrix.shape[0])

        with torch.no_grad():
            enc.weight.copy_(matrix)

        return enc

    def forward(self, chunk: torch.Tensor) -> torch.Tensor:
        if chunk.shape[-1] != self.action_dim:
            _log.error("encoder input has action dimension %d, expected %d", chunk.shape[-1], self.action_dim)
            raise DimensionMismatch(f"actions have dimension {chunk.shape[-1]}, encoder expects {self.action_dim}")

        return chunk @ self.weight.T


def flow_losses(
    model: VectorFieldModel, xt: torch.Tensor, t: torch.Tensor, target: torch.Tensor, features: torch.Tensor
) -> torch.Tensor:
    """
    Per-element squared error ``|v(x_t, t | H) - target|^2`` over a leading batch axis.
    """

    model.check_inputs(xt, features)
    prediction = model(xt, t, features)

    return ((prediction - target) ** 2).sum(dim=-1)


def per_sample_loss(model: VectorFieldModel, sample: FlowSample, features: TensorLike) -> float:
    """
    Flow-matching loss of one path sample conditioned on a ``(T, d)`` feature sequence.
    """

    with torch.no_grad():
        loss = flow_losses(
            model,
            torch.as_tensor(sample.xt),
            torch.tensor(sample.t, dtype=torch.float64),
            torch.as_tensor(sample.target),
            _tensor(features),
        )

    return float(loss)


def loss_gradients(
    model: VectorFieldModel, sample: FlowSample, features: TensorLike
) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """
    Exact gradients of :func:`per_sample_loss` by reverse-mode differentiation.

    Returns
    -------
    Tuple[Dict[:class:`str`, :class:`numpy.ndarray`], :class:`numpy.ndarray`]
        Gradients keyed by parameter name, and the gradient with respect to the features.
    """

    feats = _tensor(features).detach().clone().requires_grad_(True)
    names, params = zip(*model.named_parameters())

    loss = flow_losses(
        model,
        torch.as_tensor(sample.xt),
        torch.tensor(sample.t, dtype=torch.float64),
        torch.as_tensor(sample.target),
        feats,
    )

    grads = torch.autograd.grad(loss, [*params, feats], allow_unused=True)

    grad_theta = {
        name: (np.zeros(tuple(param.shape)) if grad is None else grad.detach().numpy().copy())
        for name, param, grad in zip(names, params, grads[:-1])
    }
    grad_h = np.zeros(tuple(feats.shape)) if grads[-1] is None else grads[-1].detach().numpy().copy()

    return grad_theta, grad_h


def encode_actions(enc: ActionEncoder, chunk: TensorLike) -> TensorLike:
    """
    Embed each action row: row ``k`` of the result is ``E a_k``. Arrays come back as arrays.
    """

    if isinstance(chunk, torch.Tensor):
        return enc(chunk)

    with torch.no_grad():
        return enc(_tensor(chunk)).numpy()


def euler_sample(
    model: VectorFieldModel,
    features: TensorLike,
    steps: int,
    seed: int,
    *,
    x0: Optional[np.ndarray] = None,
) -> ActionChunk:
    """
    Integrate ``dx/dt = v(x, t | H)`` from ``t = 0`` to ``t = 1`` with fixed-step Euler.

    Parameters
    ----------
    model: :class:`VectorFieldModel`
        The vector field.

    features: Union[:class:`numpy.ndarray`, :class:`torch.Tensor`]
        A ``(T, d)`` sequence, or a ``(B, T, d)`` batch.

    steps: :class:`int`
        Number of Euler steps, at least one.

    seed: :class:`int`
        Seed for the standard-normal base draw.

    x0: Optional[:class:`numpy.ndarray`]
        Explicit base point(s), bypassing the seeded draw.

    Returns
    -------
    :class:`numpy.ndarray`
        A ``(K, d_a)`` chunk, or ``(B, K, d_a)`` for a batch.
    """

    if steps < 1:
        raise DimensionMismatch(f"euler_sample needs steps >= 1, got {steps}")

    feats = _tensor(features).detach()
    batch_shape = tuple(feats.shape[:-2])

    if x0 is None:
        start = derive_rng(seed, STREAM_NOISE).standard_normal((*batch_shape, model.flat_dim))
    else:
        start = np.asarray(x0, dtype=np.float64).reshape(*batch_shape, model.flat_dim)

    x = torch.as_tensor(start.copy())
    dt = 1.0 / steps

    with torch.no_grad():
        model.check_inputs(x, feats)

        for i in range(steps):
            t = torch.full((*batch_shape, 1), i * dt, dtype=torch.float64)
            x = x + dt * model(x, t, feats)

    return x.numpy().reshape(*batch_shape, model.horizon, model.action_dim)


def centroid_broadcast(embeddings: TensorLike, tokens: int) -> TensorLike:
    """
    Replace a ``(K, d)`` embedding set by its centroid repeated ``tokens`` times.

    Batched ``(B, K, d)`` input gives ``(B, tokens, d)``. Row order of the input does not matter.
    """

    if tokens < 1:
        raise DimensionMismatch(f"centroid_broadcast needs at least one token, got {tokens}")

    if embeddings.shape[-2] < 1:
        raise DimensionMismatch("centroid_broadcast needs at least one embedding row")

    if isinstance(embeddings, torch.Tensor):
        centroid = embeddings.mean(dim=-2, keepdim=True)
        return centroid.expand(*embeddings.shape[:-2], tokens, embeddings.shape[-1])

    rows = np.asarray(embeddings, dtype=np.float64)
    centroid = rows.mean(axis=-2, keepdims=True)

    return np.repeat(centroid, tokens, axis=-2)
