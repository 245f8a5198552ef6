"""
The MIT License (MIT)

Copyright (c) 2026 digflow contributors
"""

from __future__ import annotations

__all__ = (
    "TaskSpec",
    "TaskSample",
    "TaskBatch",
    "PerturbSpec",
    "EpisodeRecord",
    "EvalReport",
    "task_actions",
    "task_tokens",
    "sample_batch",
    "apply_perturbation",
    "eval_policy",
    "DEFAULT_EPISODE_LENGTH",
)

import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import TYPE_CHECKING, NamedTuple

import numpy as np

from .enums import PerturbMode
from .errors import ConfigError, UntrainedState
from .refine import RefineConfig, infer
from .utils import STREAM_BATCH, STREAM_EVAL, STREAM_INIT, derive_rng, derive_seed

if TYPE_CHECKING:
    from typing import Callable, Iterator, List, Optional, Tuple

    from .trainer import DigState

    Policy = Callable[["TaskSample"], np.ndarray]


_log = logging.getLogger(__name__)

_STANDARDIZE_DRAWS = 4096

DEFAULT_EPISODE_LENGTH = 8


@dataclass(frozen=True)
class TaskSpec:
    """
    A seeded toy task mapping a latent state to observation tokens and an action chunk.

    The last token is a nuisance token. On clean samples it holds observation noise only. On
    shortcut samples it carries a scaled copy of the action chunk, while the remaining tokens are
    rendered from a latent mixed with an independent one.

    Attributes
    ----------
    latent_dim: :class:`int`
        Dimension of the latent state.

    tokens: :class:`int`
        Token count ``T``, at least 2 (task tokens plus the nuisance token).

    feature_dim: :class:`int`
        Feature dimension ``d``.

    horizon: :class:`int`
        Chunk length ``K``.

    action_dim: :class:`int`
        Action dimension ``d_a``.

    obs_noise: :class:`float`
        Standard deviation of the Gaussian observation noise.

    shortcut_fraction: :class:`float`
        Probability that a sample is a shortcut sample.

    shortcut_strength: :class:`float`
        Mixing weight ``s`` of the independent latent in shortcut task tokens.

    nuisance_scale: :class:`float`
        Gain of the action copy in the nuisance token.

    hidden: :class:`int`
        Hidden width of the frozen generator networks.

    seed: :class:`int`
        Seed of the frozen generator networks.
    """

    latent_dim: int = 4
    tokens: int = 8
    feature_dim: int = 8
    horizon: int = 4
    action_dim: int = 2
    obs_noise: float = 0.05
    shortcut_fraction: float = 0.0
    shortcut_strength: float = 0.8
    nuisance_scale: float = 3.0
    hidden: int = 32
    seed: int = 0

    def __post_init__(self):
        for name in ("latent_dim", "feature_dim", "horizon", "action_dim", "hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"task.{name} must be >= 1, got {getattr(self, name)}", key=f"task.{name}")

        if self.tokens < 2:
            raise ConfigError(f"task.tokens must be >= 2, got {self.tokens}", key="task.tokens")

        if not 0.0 <= self.shortcut_fraction <= 1.0:
            raise ConfigError(
                f"task.shortcut_fraction must lie in [0, 1], got {self.shortcut_fraction}", key="task.shortcut_fraction"
            )

        if not 0.0 <= self.shortcut_strength <= 1.0:
            raise ConfigError(
                f"task.shortcut_strength must lie in [0, 1], got {self.shortcut_strength}", key="task.shortcut_strength"
            )

        if self.obs_noise < 0:
            raise ConfigError(f"task.obs_noise must be >= 0, got {self.obs_noise}", key="task.obs_noise")

    @property
    def flat_action_dim(self) -> int:
        return self.horizon * self.action_dim

    def clean(self) -> TaskSpec:
        """The same task with shortcut corruption switched off."""

        return replace(self, shortcut_fraction=0.0)


class _Net(NamedTuple):
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    mean: np.ndarray
    scale: np.ndarray

    def __call__(self, latents: np.ndarray) -> np.ndarray:
        raw = np.tanh(latents @ self.w1.T + self.b1) @ self.w2.T

        return (raw - self.mean) / self.scale


class _TaskMaps(NamedTuple):
    tokens: _Net
    actions: _Net
    nuisance: np.ndarray


def _frozen_net(rng: np.random.Generator, in_dim: int, hidden: int, out_dim: int, draws: np.ndarray) -> _Net:
    w1 = rng.standard_normal((hidden, in_dim)) / math.sqrt(in_dim) * 1.5
    b1 = rng.standard_normal(hidden) * 0.1
    w2 = rng.standard_normal((out_dim, hidden)) / math.sqrt(hidden)

    raw = np.tanh(draws @ w1.T + b1) @ w2.T
    scale = raw.std(axis=0)
    scale[scale == 0.0] = 1.0

    return _Net(w1, b1, w2, raw.mean(axis=0), scale)


@lru_cache(maxsize=32)
def _task_maps(latent_dim: int, tokens: int, feature_dim: int, flat_actions: int, hidden: int, seed: int) -> _TaskMaps:
    rng = derive_rng(seed, STREAM_INIT, 100)
    draws = rng.standard_normal((_STANDARDIZE_DRAWS, latent_dim))

    token_net = _frozen_net(rng, latent_dim, hidden, (tokens - 1) * feature_dim, draws)
    action_net = _frozen_net(rng, latent_dim, hidden, flat_actions, draws)
    nuisance = rng.standard_normal((feature_dim, flat_actions)) / math.sqrt(flat_actions)

    return _TaskMaps(token_net, action_net, nuisance)


def _maps(spec: TaskSpec) -> _TaskMaps:
    return _task_maps(spec.latent_dim, spec.tokens, spec.feature_dim, spec.flat_action_dim, spec.hidden, spec.seed)


def task_actions(spec: TaskSpec, latents: np.ndarray) -> np.ndarray:
    """
    Ground-truth action chunks ``(n, K, d_a)`` for a batch of latents. Entries are standardized.
    """

    latents = np.atleast_2d(np.asarray(latents, dtype=np.float64))

    return _maps(spec).actions(latents).reshape(-1, spec.horizon, spec.action_dim)


def task_tokens(spec: TaskSpec, latents: np.ndarray) -> np.ndarray:
    """
    Noise-free task tokens ``(n, T - 1, d)`` for a batch of latents.
    """

    latents = np.atleast_2d(np.asarray(latents, dtype=np.float64))

    return _maps(spec).tokens(latents).reshape(-1, spec.tokens - 1, spec.feature_dim)


@dataclass(frozen=True)
class TaskSample:
    observation: np.ndarray
    actions: np.ndarray
    is_shortcut: bool


@dataclass(frozen=True)
class TaskBatch:
    """
    A batch of task samples stored as stacked arrays.

    Attributes
    ----------
    observations: :class:`numpy.ndarray`
        ``(n, T, d)`` observation tokens.

    actions: :class:`numpy.ndarray`
        ``(n, K, d_a)`` ground-truth chunks.

    shortcut: :class:`numpy.ndarray`
        ``(n,)`` boolean shortcut flags.

    latents: :class:`numpy.ndarray`
        ``(n, latent_dim)`` latent states the actions were rendered from.
    """

    observations: np.ndarray
    actions: np.ndarray
    shortcut: np.ndarray
    latents: np.ndarray

    def __len__(self) -> int:
        return self.observations.shape[0]

    def __getitem__(self, index: int) -> TaskSample:
        return TaskSample(self.observations[index], self.actions[index], bool(self.shortcut[index]))

    def __iter__(self) -> Iterator[TaskSample]:
        for i in range(len(self)):
            yield self[i]


def sample_batch(spec: TaskSpec, n: int, seed: int) -> TaskBatch:
    """
    Draw ``n`` task samples.

    Every random quantity is drawn for every sample regardless of its shortcut flag, so the
    draws are a fixed function of ``(spec, n, seed)``.

    Raises
    ------
    :exc:`ConfigError`
        ``n < 1``.
    """

    if n < 1:
        raise ConfigError(f"sample_batch needs n >= 1, got {n}")

    rng = derive_rng(seed, STREAM_BATCH)
    maps = _maps(spec)

    latents = rng.standard_normal((n, spec.latent_dim))
    shortcut = rng.uniform(size=n) < spec.shortcut_fraction
    decoys = rng.standard_normal((n, spec.latent_dim))
    noise = rng.standard_normal((n, spec.tokens, spec.feature_dim)) * spec.obs_noise

    s = spec.shortcut_strength
    mixed = np.where(shortcut[:, None], math.sqrt(1.0 - s * s) * latents + s * decoys, latents)

    actions = task_actions(spec, latents)
    flat = actions.reshape(n, -1)

    observations = np.empty((n, spec.tokens, spec.feature_dim))
    observations[:, :-1, :] = task_tokens(spec, mixed)
    observations[:, -1, :] = np.where(shortcut[:, None], spec.nuisance_scale * flat @ maps.nuisance.T, 0.0)
    observations += noise

    return TaskBatch(observations, actions, shortcut, latents)


@dataclass(frozen=True)
class PerturbSpec:
    """
    Time-varying additive perturbation ``c1 cos(c2 t) + c3 sin(c4 t)``.

    Coefficients are drawn per episode from ``Normal(mean, std)`` unless given explicitly.
    """

    mode: PerturbMode = PerturbMode.none
    mean: float = 0.01
    std: float = 0.5
    coefficients: Optional[Tuple[float, float, float, float]] = None

    def __post_init__(self):
        if not isinstance(self.mode, PerturbMode):
            object.__setattr__(self, "mode", PerturbMode(self.mode))

        if self.std < 0:
            raise ConfigError(f"perturb.std must be >= 0, got {self.std}", key="perturb.std")

        if self.coefficients is not None:
            coefficients = tuple(float(c) for c in self.coefficients)

            if len(coefficients) != 4 or not all(math.isfinite(c) for c in coefficients):
                raise ConfigError("perturbation needs four finite coefficients", key="perturb.coefficients")

            object.__setattr__(self, "coefficients", coefficients)

    @classmethod
    def draw(cls, mode: PerturbMode, rng: np.random.Generator, *, mean: float = 0.01, std: float = 0.5) -> PerturbSpec:
        return cls(mode, mean, std, tuple(rng.normal(mean, std, size=4)))

    def for_episode(self, rng: np.random.Generator) -> PerturbSpec:
        if self.coefficients is not None:
            return self

        return PerturbSpec.draw(self.mode, rng, mean=self.mean, std=self.std)

    def shift(self, t: float) -> float:
        if self.mode is PerturbMode.none:
            return 0.0

        if self.coefficients is None:
            raise ConfigError("perturbation coefficients have not been drawn", key="perturb.coefficients")

        c1, c2, c3, c4 = self.coefficients
        value = 0.0

        if self.mode in (PerturbMode.cosine, PerturbMode.both):
            value += c1 * math.cos(c2 * t)

        if self.mode in (PerturbMode.sine, PerturbMode.both):
            value += c3 * math.sin(c4 * t)

        return value


def apply_perturbation(observation: np.ndarray, t: float, perturb: PerturbSpec) -> np.ndarray:
    """
    Add the perturbation value at time ``t`` to every token entry.
    """

    observation = np.asarray(observation, dtype=np.float64)

    if perturb.mode is PerturbMode.none:
        return observation

    return observation + perturb.shift(t)


@dataclass(frozen=True)
class EpisodeRecord:
    episode: int
    mse: float
    discrepancies: Tuple[float, ...] = ()
    gates: Tuple[float, ...] = ()


@dataclass(frozen=True)
class EvalReport:
    """
    Result of :func:`eval_policy`.

    Attributes
    ----------
    mse: :class:`float`
        Mean squared action error over every decision step of every episode.

    episodes: List[:class:`EpisodeRecord`]
        Per-episode error and refinement traces.
    """

    mse: float
    episodes: List[EpisodeRecord] = field(default_factory=list)

    @property
    def stddev(self) -> float:
        if len(self.episodes) < 2:
            return 0.0

        return float(np.std([e.mse for e in self.episodes], ddof=1))


def eval_policy(
    state: Optional[DigState],
    spec: TaskSpec,
    perturb: PerturbSpec,
    episodes: int,
    seed: int,
    *,
    refine: Optional[RefineConfig] = None,
    episode_length: int = DEFAULT_EPISODE_LENGTH,
    policy: Optional[Policy] = None,
) -> EvalReport:
    """
    Roll clean test episodes, perturb the observations and score the predicted chunks.

    Each episode has ``episode_length`` decision steps; step ``j`` is perturbed at time ``j``.

    Parameters
    ----------
    state: Optional[:class:`~digflow.trainer.DigState`]
        Trained state. Ignored when ``policy`` is given.

    spec: :class:`TaskSpec`
        The task. Shortcut corruption is switched off for evaluation.

    perturb: :class:`PerturbSpec`
        Test-time perturbation.

    episodes: :class:`int`
        Number of episodes.

    seed: :class:`int`
        Evaluation seed.

    refine: Optional[:class:`~digflow.refine.RefineConfig`]
        Inference settings.

    episode_length: :class:`int`
        Decision steps per episode.

    policy: Optional[Callable[[:class:`TaskSample`], :class:`numpy.ndarray`]]
        Replaces the trained pipeline with a fixed policy.

    Raises
    ------
    :exc:`UntrainedState`
        No policy was given and ``state`` has not been trained.
    """

    if policy is None and (state is None or state.step == 0):
        _log.error("eval_policy called with an untrained state")
        raise UntrainedState("evaluation needs a trained state or an explicit policy")

    if episodes < 1 or episode_length < 1:
        raise ConfigError("evaluation needs episodes >= 1 and episode_length >= 1")

    refine = refine or RefineConfig()
    test_spec = spec.clean()
    records = []

    for episode in range(episodes):
        rng = derive_rng(seed, STREAM_EVAL, episode)
        episode_perturb = perturb.for_episode(rng)
        batch = sample_batch(test_spec, episode_length, derive_seed(seed, STREAM_EVAL, episode))

        errors = []
        discrepancies = []
        gates = []
        previous = None

        for step in range(episode_length):
            observation = apply_perturbation(batch.observations[step], float(step), episode_perturb)

            if policy is not None:
                chunk = np.asarray(policy(TaskSample(observation, batch.actions[step], False)), dtype=np.float64)

            else:
                step_cfg = replace(refine, seed=derive_seed(refine.seed, seed, episode, step))
                chunk, trace = infer(state, observation, step_cfg, previous=previous)
                discrepancies.extend(r.discrepancy for r in trace)
                gates.extend(r.gate for r in trace)
                previous = chunk

            errors.append(float(np.sum((chunk - batch.actions[step]) ** 2)))

        records.append(EpisodeRecord(episode, float(np.mean(errors)), tuple(discrepancies), tuple(gates)))

    report = EvalReport(float(np.mean([r.mse for r in records])), records)
    _log.info("evaluated %d episodes: mse %.6g", episodes, report.mse)

    return report
