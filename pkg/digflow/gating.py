"""
The MIT License (MIT)

Copyright (c) 2026 digflow contributors
"""

from __future__ import annotations

__all__ = ("GateConfig", "DEFAULT_G_MIN", "gate", "gate_array", "gate_lipschitz_bound", "strategy_gates")

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .enums import GateStrategy
from .errors import GateDomainError

if TYPE_CHECKING:
    from typing import Optional


_log = logging.getLogger(__name__)

#: Lower clip of the gate when none is configured.
DEFAULT_G_MIN = 0.05


@dataclass(frozen=True)
class GateConfig:
    """
    Parameters of the gate map ``max(g_min, exp(-tau * D))``.

    Attributes
    ----------
    tau: :class:`float`
        Temperature, strictly positive.

    g_min: :class:`float`
        Lower clip, in the open interval ``(0, 1)``.
    """

    tau: float = 1.0
    g_min: float = DEFAULT_G_MIN

    def __post_init__(self):
        if not (math.isfinite(self.tau) and self.tau > 0):
            _log.error("gate temperature must be positive")
            raise GateDomainError(f"tau must be > 0, got {self.tau}")

        if not 0 < self.g_min < 1:
            _log.error("gate lower clip outside (0, 1)")
            raise GateDomainError(f"g_min must lie in (0, 1), got {self.g_min}")


def gate(discrepancy: float, cfg: GateConfig) -> float:
    """
    Map a discrepancy to a gate value in ``[g_min, 1]``.

    Parameters
    ----------
    discrepancy: :class:`float`
        A finite, nonnegative discrepancy.

    cfg: :class:`GateConfig`
        The gate parameters.

    Raises
    ------
    :exc:`GateDomainError`
        ``discrepancy`` is negative or not finite.

    Returns
    -------
    :class:`float`
        ``max(g_min, exp(-tau * discrepancy))``
    """

    value = float(discrepancy)

    if not math.isfinite(value) or value < 0:
        _log.error("gate requested for invalid discrepancy %r", value)
        raise GateDomainError(f"discrepancy must be finite and >= 0, got {value}")

    return max(cfg.g_min, math.exp(-cfg.tau * value))


def gate_array(discrepancies: np.ndarray, cfg: GateConfig) -> np.ndarray:
    """
    Elementwise :func:`gate` over an array of discrepancies.
    """

    values = np.asarray(discrepancies, dtype=np.float64)

    if not np.all(np.isfinite(values)) or np.any(values < 0):
        _log.error("gate requested for invalid discrepancies")
        raise GateDomainError("discrepancies must be finite and >= 0")

    return np.maximum(cfg.g_min, np.exp(-cfg.tau * values))


def gate_lipschitz_bound(cfg: GateConfig) -> float:
    # sup of |d/dD exp(-tau D)| over D >= 0 sits at D = 0
    return float(cfg.tau)


def strategy_gates(
    strategy: GateStrategy,
    discrepancies: np.ndarray,
    cfg: GateConfig,
    *,
    fixed: float = 0.5,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """
    Produce per-sample gates for a training strategy.

    ``transport`` uses :func:`gate_array`, ``fixed`` repeats ``fixed``, ``random`` draws
    ``U(0, 1)`` from ``rng`` and ``none`` returns ones.
    """

    discrepancies = np.asarray(discrepancies, dtype=np.float64)

    if strategy is GateStrategy.transport:
        return gate_array(discrepancies, cfg)

    if strategy is GateStrategy.fixed:
        if not 0 < fixed <= 1:
            raise GateDomainError(f"fixed gate must lie in (0, 1], got {fixed}")

        return np.full(discrepancies.shape, float(fixed))

    if strategy is GateStrategy.random:
        if rng is None:
            raise GateDomainError("random gates need a generator")

        return rng.uniform(0.0, 1.0, size=discrepancies.shape)

    return np.ones(discrepancies.shape)
