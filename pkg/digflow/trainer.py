"""
The MIT License (MIT)

Copyright (c) 2026 digflow contributors
"""

from __future__ import annotations

__all__ = (
    "DigConfig",
    "OptimizerConfig",
    "TrainConfig",
    "StepRecord",
    "MetricLog",
    "DigState",
    "build_state",
    "centroid_broadcast",
    "learning_rate",
    "gated_objective",
    "train_step",
    "train",
)

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import TYPE_CHECKING

import numpy as np
import torch

from .enums import GateStrategy, LRSchedule, RecordType
from .errors import TrainingDiverged, TrainingError
from .flow import ActionEncoder, VectorFieldModel, centroid_broadcast, flow_losses
from .gating import GateConfig, strategy_gates
from .measures import DiscrepancyKind, EmpiricalMeasure, batch_discrepancy, discrepancy
from .residual import ResidualOperator, gated_update, spectral_project
from .synthetic import TaskBatch, TaskSpec, sample_batch
from .utils import (
    STREAM_DIRECTIONS,
    STREAM_GATE,
    STREAM_INIT,
    STREAM_NOISE,
    STREAM_TIME,
    derive_rng,
    derive_seed,
    dumps,
)

if TYPE_CHECKING:
    from typing import Any, Dict, Iterator, List, Optional, Tuple


_log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DigConfig:
    """
    Knobs of the gated residual mechanism.

    Attributes
    ----------
    gate: :class:`~digflow.gating.GateConfig`
        Temperature and lower clip.

    lam: :class:`float`
        Residual strength ``lambda``.

    bound: :class:`float`
        Spectral bound ``B_R`` of the residual weight.

    discrepancy: :class:`~digflow.measures.DiscrepancyKind`
        Discrepancy between features and the broadcast action centroid.

    power_iters: :class:`int`
        Power-iteration steps of the spectral projection.
    """

    gate: GateConfig = field(default_factory=GateConfig)
    lam: float = 0.4
    bound: float = 2.0
    discrepancy: DiscrepancyKind = field(default_factory=DiscrepancyKind.sliced)
    power_iters: int = 50

    def __post_init__(self):
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise TrainingError(f"residual strength must be >= 0, got {self.lam}")

        if not self.bound > 0:
            raise TrainingError(f"spectral bound must be > 0, got {self.bound}")

        if self.power_iters < 1:
            raise TrainingError(f"power_iters must be >= 1, got {self.power_iters}")

    @property
    def projections(self) -> int:
        return self.discrepancy.projections


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    schedule: LRSchedule = LRSchedule.constant

    def __post_init__(self):
        if not self.lr > 0:
            raise TrainingError(f"learning rate must be > 0, got {self.lr}")

        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise TrainingError("moment decays must lie in [0, 1)")

        if self.weight_decay < 0:
            raise TrainingError(f"weight decay must be >= 0, got {self.weight_decay}")


@dataclass(frozen=True)
class TrainConfig:
    """
    Full training configuration.

    Attributes
    ----------
    dig: :class:`DigConfig`
        Mechanism settings.

    optimizer: :class:`OptimizerConfig`
        AdamW settings and schedule.

    steps: :class:`int`
        Total optimizer steps. ``0`` trains nothing.

    batch_size: :class:`int`
        Samples per step.

    seed: :class:`int`
        Base seed for initialization and every per-step draw.

    gate_enabled: :class:`bool`
        Weight per-sample losses and residual updates by the gate.

    residual_enabled: :class:`bool`
        Apply the gated residual enhancement.

    gate_strategy: :class:`~digflow.enums.GateStrategy`
        How gates are produced. ``none`` disables both gate and residual.

    fixed_gate: :class:`float`
        Gate value of the ``fixed`` strategy.

    batch_gate: :class:`bool`
        Compute one discrepancy over the pooled batch instead of one per element.

    width: :class:`int`
        Hidden width of the vector field.

    log_every: :class:`int`
        Progress logging interval in steps.
    """

    dig: DigConfig = field(default_factory=DigConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    steps: int = 2000
    batch_size: int = 32
    seed: int = 0
    gate_enabled: bool = True
    residual_enabled: bool = True
    gate_strategy: GateStrategy = GateStrategy.transport
    fixed_gate: float = 0.5
    batch_gate: bool = False
    width: int = 64
    log_every: int = 100

    def __post_init__(self):
        if self.steps < 0:
            raise TrainingError(f"steps must be >= 0, got {self.steps}")

        if self.batch_size < 1:
            raise TrainingError(f"batch_size must be >= 1, got {self.batch_size}")

        if not 0 < self.fixed_gate <= 1:
            raise TrainingError(f"fixed_gate must lie in (0, 1], got {self.fixed_gate}")

        if self.width < 1 or self.log_every < 1:
            raise TrainingError("width and log_every must be >= 1")

    @property
    def uses_gate(self) -> bool:
        return self.gate_enabled and self.gate_strategy is not GateStrategy.none

    @property
    def uses_residual(self) -> bool:
        return self.residual_enabled and self.gate_strategy is not GateStrategy.none


@dataclass(frozen=True)
class StepRecord:
    """
    Metrics of one optimizer step.

    ``wall_time`` is excluded from equality so that records from identical runs compare equal.
    """

    step: int
    discrepancy: float
    gate: float
    loss: float
    objective: float
    discrepancy_std: float = 0.0
    g_clean: Optional[float] = None
    g_shortcut: Optional[float] = None
    wall_time: float = field(default=0.0, compare=False)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["type"] = RecordType.step.value

        return data


class MetricLog:
    """
    Append-only sequence of :class:`StepRecord`.

    Raises
    ------
    :exc:`TrainingError`
        An appended record does not advance the step counter or holds non-finite values.
    """

    def __init__(self, records: Optional[List[StepRecord]] = None):
        self._records: List[StepRecord] = []

        for record in records or ():
            self.append(record)

    def append(self, record: StepRecord):
        if self._records and record.step <= self._records[-1].step:
            raise TrainingError(f"metric log steps must increase: {record.step} after {self._records[-1].step}")

        values = [getattr(record, f.name) for f in fields(record) if f.name != "step"]
        if not all(math.isfinite(v) for v in values if v is not None):
            raise TrainingError(f"metric record for step {record.step} holds non-finite values")

        self._records.append(record)

    def extend(self, other: MetricLog):
        for record in other:
            self.append(record)

    @property
    def records(self) -> List[StepRecord]:
        return list(self._records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self._records], dtype=np.float64)

    def to_jsonl(self) -> str:
        return "".join(dumps(r.to_dict()) + "\n" for r in self._records)

    def __iter__(self) -> Iterator[StepRecord]:
        return iter(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MetricLog):
            return NotImplemented

        return self._records == other._records

    def __repr__(self):
        return f"<MetricLog(records={len(self._records)})>"


@dataclass
class DigState:
    """
    Everything a training run mutates.

    Attributes
    ----------
    model: :class:`~digflow.flow.VectorFieldModel`
        The conditional vector field.

    encoder: :class:`~digflow.flow.ActionEncoder`
        The action embedding.

    residual: :class:`~digflow.residual.ResidualOperator`
        The residual operator.

    optimizer: :class:`torch.optim.AdamW`
        Optimizer over all three components, in that order.

    config: :class:`TrainConfig`
        The configuration the state was built for.

    task: :class:`~digflow.synthetic.TaskSpec`
        The task the state trains on.

    step: :class:`int`
        Completed optimizer steps. Every per-step draw derives from it.
    """

    model: VectorFieldModel
    encoder: ActionEncoder
    residual: ResidualOperator
    optimizer: torch.optim.AdamW
    config: TrainConfig
    task: TaskSpec
    step: int = 0

    def parameters(self) -> Iterator[Tuple[str, torch.nn.Parameter]]:
        """All parameters in checkpoint order, with component-prefixed names."""

        for prefix, module in (("model", self.model), ("encoder", self.encoder), ("residual", self.residual)):
            for name, param in module.named_parameters():
                yield f"{prefix}.{name}", param


def build_state(cfg: TrainConfig, task: TaskSpec) -> DigState:
    """
    Initialize a fresh state. Initialization is a function of ``cfg.seed`` only.
    """

    model = VectorFieldModel(
        task.action_dim, task.horizon, task.feature_dim, cfg.width, seed=derive_seed(cfg.seed, STREAM_INIT, 0)
    )
    encoder = ActionEncoder(task.action_dim, task.feature_dim, seed=derive_seed(cfg.seed, STREAM_INIT, 1))
    residual = ResidualOperator(
        task.feature_dim,
        bound=cfg.dig.bound,
        power_iters=cfg.dig.power_iters,
        seed=derive_seed(cfg.seed, STREAM_INIT, 2),
    )

    opt = cfg.optimizer
    optimizer = torch.optim.AdamW(
        [*model.parameters(), *encoder.parameters(), *residual.parameters()],
        lr=opt.lr,
        betas=(opt.beta1, opt.beta2),
        eps=opt.eps,
        weight_decay=opt.weight_decay,
    )

    return DigState(model, encoder, residual, optimizer, cfg, task)


def learning_rate(cfg: TrainConfig, step: int) -> float:
    """
    Learning rate for the update taken at ``step`` (zero-based).
    """

    opt = cfg.optimizer

    if opt.schedule is LRSchedule.cosine and cfg.steps > 0:
        return opt.lr * 0.5 * (1.0 + math.cos(math.pi * min(step, cfg.steps) / cfg.steps))

    return opt.lr


def _batch_discrepancies(state: DigState, features: np.ndarray, targets: np.ndarray, seed: int) -> np.ndarray:
    kind = state.config.dig.discrepancy

    if state.config.batch_gate:
        dim = features.shape[-1]
        value = discrepancy(
            EmpiricalMeasure(features.reshape(-1, dim)), EmpiricalMeasure(targets.reshape(-1, dim)), kind, seed=seed
        )

        return np.full(features.shape[0], value)

    return batch_discrepancy(features, targets, kind, seed)


def gated_objective(
    state: DigState, batch: TaskBatch, step: int
) -> Tuple[torch.Tensor, torch.Tensor, np.ndarray, np.ndarray]:
    """
    Build the gated objective of one batch without stepping the optimizer.

    Discrepancies and gates are computed outside the autograd graph, so no parameter receives
    gradient through them.

    Returns
    -------
    Tuple[:class:`torch.Tensor`, :class:`torch.Tensor`, :class:`numpy.ndarray`, :class:`numpy.ndarray`]
        The scalar objective, per-element losses, per-element discrepancies and gates.
    """

    cfg = state.config
    n = len(batch)

    features = torch.as_tensor(batch.observations)
    actions = torch.as_tensor(batch.actions)

    with torch.no_grad():
        targets = centroid_broadcast(state.encoder(actions), features.shape[1]).numpy()

    seed = derive_seed(cfg.seed, step, STREAM_DIRECTIONS)
    discrepancies = _batch_discrepancies(state, batch.observations, targets, seed)

    if cfg.uses_gate:
        gates = strategy_gates(
            cfg.gate_strategy,
            discrepancies,
            cfg.dig.gate,
            fixed=cfg.fixed_gate,
            rng=derive_rng(cfg.seed, step, STREAM_GATE),
        )
    else:
        gates = np.ones(n)

    gate_t = torch.as_tensor(gates)

    if cfg.uses_residual:
        features = gated_update(features, gate_t, cfg.dig.lam, state.residual)

    t = torch.as_tensor(derive_rng(cfg.seed, step, STREAM_TIME).uniform(size=n))
    x0 = torch.as_tensor(derive_rng(cfg.seed, step, STREAM_NOISE).standard_normal((n, state.model.flat_dim)))
    x1 = actions.reshape(n, -1)

    xt = (1.0 - t)[:, None] * x0 + t[:, None] * x1
    losses = flow_losses(state.model, xt, t, x1 - x0, features)

    if cfg.uses_gate:
        objective = (gate_t * losses).mean()
    else:
        objective = losses.mean()

    return objective, losses, discrepancies, gates


def train_step(state: DigState, batch: TaskBatch) -> Tuple[DigState, StepRecord]:
    """
    Take one gated optimizer step on ``batch``.

    Updates the state in place, projects the residual weight back onto its spectral ball and
    advances ``state.step``.

    Raises
    ------
    :exc:`TrainingDiverged`
        The objective or the losses are not finite. The state is left unchanged.
    """

    cfg = state.config
    started = time.perf_counter()
    step = state.step

    objective, losses, discrepancies, gates = gated_objective(state, batch, step)

    loss_mean = float(losses.detach().mean())
    objective_value = float(objective.detach())

    if not (math.isfinite(loss_mean) and math.isfinite(objective_value)):
        record = {
            "step": step + 1,
            "loss": loss_mean,
            "objective": objective_value,
            "discrepancy": float(np.mean(discrepancies)),
            "gate": float(np.mean(gates)),
        }
        _log.error("training diverged at step %d: %s", step + 1, dumps(record))
        raise TrainingDiverged(f"non-finite loss at step {step + 1}", record=record)

    lr = learning_rate(cfg, step)
    for group in state.optimizer.param_groups:
        group["lr"] = lr

    state.optimizer.zero_grad(set_to_none=True)
    objective.backward()
    state.optimizer.step()

    if cfg.uses_residual:
        spectral_project(state.residual)

    state.step = step + 1

    shortcut = batch.shortcut
    record = StepRecord(
        step=state.step,
        discrepancy=float(np.mean(discrepancies)),
        gate=float(np.mean(gates)),
        loss=loss_mean,
        objective=objective_value,
        discrepancy_std=float(np.std(discrepancies)),
        g_clean=float(np.mean(gates[~shortcut])) if (~shortcut).any() else None,
        g_shortcut=float(np.mean(gates[shortcut])) if shortcut.any() else None,
        wall_time=time.perf_counter() - started,
    )

    _log.debug("step %d: %s", record.step, dumps(record.to_dict()))

    return state, record


def train(
    cfg: TrainConfig, task: TaskSpec, *, state: Optional[DigState] = None, stop_at: Optional[int] = None
) -> Tuple[DigState, MetricLog]:
    """
    Run the training loop.

    Parameters
    ----------
    cfg: :class:`TrainConfig`
        The configuration.

    task: :class:`~digflow.synthetic.TaskSpec`
        The task to draw batches from.

    state: Optional[:class:`DigState`]
        A state to resume from. A fresh one is built when omitted.

    stop_at: Optional[:class:`int`]
        Stop after this many total steps instead of ``cfg.steps``.

    Returns
    -------
    Tuple[:class:`DigState`, :class:`MetricLog`]
        The final state and the records of the steps taken by this call.
    """

    if state is None:
        state = build_state(cfg, task)

    end = cfg.steps if stop_at is None else min(stop_at, cfg.steps)
    log = MetricLog()

    if state.step < end:
        _log.info(
            "training steps %d..%d (batch %d, gate %s, residual %s)",
            state.step + 1,
            end,
            cfg.batch_size,
            cfg.gate_strategy.value if cfg.uses_gate else "off",
            "on" if cfg.uses_residual else "off",
        )

    while state.step < end:
        batch = sample_batch(task, cfg.batch_size, derive_seed(cfg.seed, state.step))
        state, record = train_step(state, batch)
        log.append(record)

        if record.step % cfg.log_every == 0 or record.step == end:
            _log.info(
                "step %d: D %.5g, g %.4f, loss %.5g, J %.5g",
                record.step,
                record.discrepancy,
                record.gate,
                record.loss,
                record.objective,
            )

    return state, log
