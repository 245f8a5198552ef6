"""
The MIT License (MIT)

Copyright (c) 2026 digflow contributors
"""

from __future__ import annotations

__all__ = (
    "DiscrepancyTag",
    "GateStrategy",
    "PerturbMode",
    "Command",
    "RecordType",
    "LRSchedule",
    "AblationAxis",
    "ResidualLoss",
)

import logging
from enum import Enum

_log = logging.getLogger(__name__)


class DiscrepancyTag(Enum):
    """
    Selects the discrepancy between observation and action measures.
    """

    #: Monte-Carlo sliced squared 2-Wasserstein distance.
    sliced_w2 = "sliced_w2"
    #: Debiased entropic optimal transport.
    sinkhorn = "sinkhorn"
    #: Squared maximum mean discrepancy with a Gaussian kernel.
    mmd_rbf = "mmd_rbf"
    #: One minus the cosine between measure means.
    cosine_mean = "cosine_mean"


class GateStrategy(Enum):
    """
    Controls how the per-sample weight is produced during training.
    """

    #: Clipped exponential of the discrepancy.
    transport = "transport"
    #: A constant gate for every sample.
    fixed = "fixed"
    #: Independent uniform draws on ``[0, 1)``.
    random = "random"
    #: Gate and residual both disabled; plain conditional flow matching.
    none = "none"


class PerturbMode(Enum):
    """
    Shape of the time-varying test perturbation.
    """

    #: ``c1 * cos(c2 * t)``
    cosine = "cosine"
    #: ``c3 * sin(c4 * t)``
    sine = "sine"
    #: Sum of the cosine and sine terms.
    both = "both"
    #: No perturbation.
    none = "none"


class Command(Enum):
    """
    CLI subcommands.
    """

    train = "train"
    eval = "eval"
    refine_sweep = "refine-sweep"
    ablate = "ablate"
    verify = "verify"


class RecordType(Enum):
    """
    Record discriminator for JSON-lines output.
    """

    header = "header"
    step = "step"
    refine = "refine"
    eval = "eval"
    check = "check"


class LRSchedule(Enum):
    """
    Learning-rate schedule for the trainer.
    """

    #: Fixed learning rate.
    constant = "constant"
    #: Half-cosine decay from the base rate to zero over the run.
    cosine = "cosine"


class AblationAxis(Enum):
    """
    Axis swept by the ``ablate`` command.
    """

    #: One row per discrepancy kind.
    discrepancy = "discrepancy"
    #: One row per gate strategy.
    gate = "gate"
    #: Cartesian grid over residual strength and temperature.
    lambda_tau = "lambda_tau"
    #: One row per number of sliced projections.
    projections = "projections"


class ResidualLoss(Enum):
    """
    Instance family for the residual-improvement check.
    """

    #: The toy conditional flow-matching loss.
    flow = "flow"
    #: A quadratic loss in the features with exactly known smoothness.
    quadratic = "quadratic"
