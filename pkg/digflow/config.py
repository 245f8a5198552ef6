"""
The MIT License (MIT)

Copyright (c) 2026 digflow contributors
"""

from __future__ import annotations

__all__ = (
    "OUT_ROOT_ENV",
    "DEFAULTS",
    "FLAG_KEYS",
    "ConfigSchema",
    "EvalConfig",
    "SweepConfig",
    "RunConfig",
    "flatten",
    "load_file",
    "parse_override",
    "parse_config",
)

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import yaml

from .enums import AblationAxis, Command, DiscrepancyTag, GateStrategy, LRSchedule, PerturbMode, ResidualLoss
from .errors import ConfigError, ConfigTypeMismatch, DigFlowException
from .gating import GateConfig
from .measures import DiscrepancyKind
from .refine import RefineConfig
from .synthetic import DEFAULT_EPISODE_LENGTH, PerturbSpec, TaskSpec
from .trainer import DigConfig, OptimizerConfig, TrainConfig
from .utils import partial
from .validation import As, Fn, ListOf, Maybe, OneOf, Schema, Type, transform
from .verify import CHECK_NAMES, VerifyConfig

if TYPE_CHECKING:
    from typing import Any, Dict, Iterable, Mapping, Optional, Sequence, Tuple, Union


_log = logging.getLogger(__name__)

#: Environment variable holding the default output root.
OUT_ROOT_ENV = "DIGFLOW_OUT_ROOT"


def _at_least(minimum: float, value: Any) -> Any:
    if value < minimum:
        raise ValueError(f"value should be >= {minimum}, got {value}")

    return value


def _positive(value: Any) -> Any:
    if not value > 0:
        raise ValueError(f"value should be > 0, got {value}")

    return value


def _unit(value: float) -> float:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"value should lie in [0, 1], got {value}")

    return value


def _path(value: Any) -> str:
    if not isinstance(value, str) or not value:
        raise TypeError(f"expected a non-empty path, got {value!r}")

    return os.path.expanduser(value)


# Schema models start here

Int = Type(int)

Count = As(Int, partial(_at_least, 1))

NonNegativeInt = As(Int, partial(_at_least, 0))

Real = As(Type((int, float)), float)

PositiveReal = As(Real, _positive)

NonNegativeReal = As(Real, partial(_at_least, 0.0))

UnitReal = As(Real, _unit)

Flag = Type(bool)

FilePath = Fn(_path)


ConfigSchema = Schema(
    {
        "command": OneOf(Command),
        "seed": NonNegativeInt,
        "out": Maybe(FilePath),
        "jobs": Count,
        "task.latent_dim": Count,
        "task.tokens": As(Int, partial(_at_least, 2)),
        "task.feature_dim": Count,
        "task.horizon": Count,
        "task.action_dim": Count,
        "task.obs_noise": NonNegativeReal,
        "task.shortcut_fraction": UnitReal,
        "task.shortcut_strength": UnitReal,
        "task.nuisance_scale": NonNegativeReal,
        "task.hidden": Count,
        "task.seed": NonNegativeInt,
        "train.steps": NonNegativeInt,
        "train.batch_size": Count,
        "train.lr": PositiveReal,
        "train.beta1": UnitReal,
        "train.beta2": UnitReal,
        "train.weight_decay": NonNegativeReal,
        "train.schedule": OneOf(LRSchedule),
        "train.lambda": NonNegativeReal,
        "train.tau": PositiveReal,
        "train.g_min": UnitReal,
        "train.bound": PositiveReal,
        "train.projections": Count,
        "train.power_iters": Count,
        "train.discrepancy": OneOf(DiscrepancyTag),
        "train.epsilon": PositiveReal,
        "train.sinkhorn_iters": Count,
        "train.sinkhorn_tol": PositiveReal,
        "train.sigma": PositiveReal,
        "train.gate_strategy": OneOf(GateStrategy),
        "train.fixed_gate": UnitReal,
        "train.gate_enabled": Flag,
        "train.residual_enabled": Flag,
        "train.batch_gate": Flag,
        "train.width": Count,
        "train.log_every": Count,
        "refine.n_refine": NonNegativeInt,
        "refine.flow_steps": Count,
        "refine.use_previous": Flag,
        "perturb.mode": OneOf(PerturbMode),
        "perturb.mean": Real,
        "perturb.std": NonNegativeReal,
        "eval.episodes": Count,
        "eval.episode_length": Count,
        "eval.checkpoint": Maybe(FilePath),
        "sweep.axis": OneOf(AblationAxis),
        "sweep.seeds": ListOf(NonNegativeInt),
        "sweep.lambdas": ListOf(NonNegativeReal),
        "sweep.taus": ListOf(PositiveReal),
        "sweep.projections": ListOf(Count),
        "sweep.n_refine": ListOf(NonNegativeInt),
        "sweep.discrepancies": ListOf(OneOf(DiscrepancyTag)),
        "sweep.gates": ListOf(OneOf(GateStrategy)),
        "verify.descent_trials": Count,
        "verify.bracketing_trials": Count,
        "verify.residual_trials": Count,
        "verify.contraction_trials": Count,
        "verify.concentration_repeats": As(Int, partial(_at_least, 2)),
        "verify.projections": ListOf(Count),
        "verify.lambda_fractions": ListOf(As(Real, _unit)),
        "verify.residual_loss": OneOf(ResidualLoss),
        "verify.checks": ListOf(OneOf(CHECK_NAMES)),
    },
    required=("command",),
)


DEFAULTS: Dict[str, Any] = {
    "seed": 0,
    "out": None,
    "jobs": 1,
    "task.latent_dim": 4,
    "task.tokens": 8,
    "task.feature_dim": 8,
    "task.horizon": 4,
    "task.action_dim": 2,
    "task.obs_noise": 0.05,
    "task.shortcut_fraction": 0.0,
    "task.shortcut_strength": 0.8,
    "task.nuisance_scale": 3.0,
    "task.hidden": 32,
    "task.seed": 0,
    "train.steps": 2000,
    "train.batch_size": 32,
    "train.lr": 1e-3,
    "train.beta1": 0.9,
    "train.beta2": 0.999,
    "train.weight_decay": 1e-4,
    "train.schedule": "constant",
    "train.lambda": 0.4,
    "train.tau": 1.0,
    "train.g_min": 0.05,
    "train.bound": 2.0,
    "train.projections": 32,
    "train.power_iters": 50,
    "train.discrepancy": "sliced_w2",
    "train.epsilon": 0.1,
    "train.sinkhorn_iters": 10000,
    "train.sinkhorn_tol": 1e-9,
    "train.sigma": 1.0,
    "train.gate_strategy": "transport",
    "train.fixed_gate": 0.5,
    "train.gate_enabled": True,
    "train.residual_enabled": True,
    "train.batch_gate": False,
    "train.width": 64,
    "train.log_every": 100,
    "refine.n_refine": 0,
    "refine.flow_steps": 10,
    "refine.use_previous": False,
    "perturb.mode": "none",
    "perturb.mean": 0.01,
    "perturb.std": 0.5,
    "eval.episodes": 20,
    "eval.episode_length": DEFAULT_EPISODE_LENGTH,
    "eval.checkpoint": None,
    "sweep.axis": "discrepancy",
    "sweep.seeds": (0,),
    "sweep.lambdas": (0.1, 0.2, 0.4, 0.8),
    "sweep.taus": (0.5, 1.0, 2.0),
    "sweep.projections": (4, 8, 16, 32, 64),
    "sweep.n_refine": tuple(range(9)),
    "sweep.discrepancies": tuple(tag.value for tag in DiscrepancyTag),
    "sweep.gates": ("transport", "fixed", "random", "none"),
    "verify.descent_trials": 1000,
    "verify.bracketing_trials": 10000,
    "verify.residual_trials": 200,
    "verify.contraction_trials": 50,
    "verify.concentration_repeats": 200,
    "verify.projections": (8, 32, 128, 512),
    "verify.lambda_fractions": (0.05, 0.1, 0.25, 0.5, 0.75, 1.0),
    "verify.residual_loss": "flow",
    "verify.checks": CHECK_NAMES,
}

#: Dedicated CLI flags and the keys they set.
FLAG_KEYS: Dict[str, str] = {
    "seed": "seed",
    "out": "out",
    "jobs": "jobs",
    "lambda": "train.lambda",
    "tau": "train.tau",
    "steps": "train.steps",
    "projections": "train.projections",
    "n_refine": "refine.n_refine",
}

# defaults the literature leaves open; logged louder so runs record the assumption
_ASSUMED_DEFAULTS = frozenset({"train.g_min"})


@dataclass(frozen=True)
class EvalConfig:
    episodes: int = 20
    episode_length: int = DEFAULT_EPISODE_LENGTH
    checkpoint: Optional[str] = None


@dataclass(frozen=True)
class SweepConfig:
    """
    Grids for the ``refine-sweep`` and ``ablate`` commands. Every grid is non-empty.
    """

    axis: AblationAxis = AblationAxis.discrepancy
    seeds: Tuple[int, ...] = (0,)
    lambdas: Tuple[float, ...] = (0.1, 0.2, 0.4, 0.8)
    taus: Tuple[float, ...] = (0.5, 1.0, 2.0)
    projections: Tuple[int, ...] = (4, 8, 16, 32, 64)
    n_refine: Tuple[int, ...] = tuple(range(9))
    discrepancies: Tuple[DiscrepancyTag, ...] = tuple(DiscrepancyTag)
    gates: Tuple[GateStrategy, ...] = tuple(GateStrategy)

    def __post_init__(self):
        for name in ("seeds", "lambdas", "taus", "projections", "n_refine", "discrepancies", "gates"):
            if not getattr(self, name):
                raise ConfigError(f"sweep grid {name!r} must be non-empty", key=f"sweep.{name}")


@dataclass(frozen=True)
class RunConfig:
    """
    A fully resolved run.

    Attributes
    ----------
    command: :class:`~digflow.enums.Command`
        What to run.

    seed: :class:`int`
        Run seed, shared by training and inference.

    out: :class:`pathlib.Path`
        Output directory.

    jobs: :class:`int`
        Maximum grid points run in parallel.

    values: Dict[:class:`str`, Any]
        Every resolved dotted key, embedded in output files.
    """

    command: Command
    seed: int
    out: Path
    jobs: int
    task: TaskSpec
    train: TrainConfig
    refine: RefineConfig
    perturb: PerturbSpec
    eval: EvalConfig
    sweep: SweepConfig
    verify: VerifyConfig
    values: Dict[str, Any] = field(default_factory=dict, compare=False)

    def discrepancy_kind(self, tag: DiscrepancyTag, projections: Optional[int] = None) -> DiscrepancyKind:
        v = self.values

        return DiscrepancyKind(
            tag,
            projections=projections if projections is not None else v["train.projections"],
            seed=self.seed,
            epsilon=v["train.epsilon"],
            max_iters=v["train.sinkhorn_iters"],
            tol=v["train.sinkhorn_tol"],
            sigma=v["train.sigma"],
        )


def flatten(data: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    """
    Flatten nested mappings into dotted keys. Lists are kept as values.
    """

    flat: Dict[str, Any] = {}

    for key, value in data.items():
        name = f"{prefix}{key}"

        if isinstance(value, dict):
            flat.update(flatten(value, f"{name}."))
        else:
            flat[name] = value

    return flat


def load_file(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Read a YAML run configuration into flat dotted keys.

    Raises
    ------
    :exc:`ConfigError`
        The file is missing, unreadable or not a YAML mapping.
    """

    try:
        text = Path(path).read_text(encoding="utf-8")
        data = yaml.safe_load(text)

    except OSError as e:
        _log.error("could not read config file %s", path)
        raise ConfigError(f"could not read config file {path}: {e}", original=e) from e

    except yaml.YAMLError as e:
        _log.error("config file %s is not valid YAML", path)
        raise ConfigError(f"config file {path} is not valid YAML: {e}", original=e) from e

    if data is None:
        return {}

    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a mapping, got {type(data).__name__}")

    return flatten(data)


def parse_override(text: str) -> Tuple[str, Any]:
    """
    Parse a ``key=value`` override. The value is read as a YAML scalar or list.
    """

    key, sep, raw = text.partition("=")
    key = key.strip()

    if not sep or not key:
        raise ConfigError(f"override {text!r} should look like key=value")

    try:
        value = yaml.safe_load(raw) if raw.strip() else None

    except yaml.YAMLError as e:
        raise ConfigTypeMismatch(f"could not parse override for {key!r}: {e}", key=key, original=e) from e

    return key, value


def _build(values: Mapping[str, Any]) -> RunConfig:
    v = values
    command = Command(v["command"])

    out = v["out"]
    if out is None:
        out = str(Path(os.environ.get(OUT_ROOT_ENV, "runs")) / command.value)

    task = TaskSpec(
        latent_dim=v["task.latent_dim"],
        tokens=v["task.tokens"],
        feature_dim=v["task.feature_dim"],
        horizon=v["task.horizon"],
        action_dim=v["task.action_dim"],
        obs_noise=v["task.obs_noise"],
        shortcut_fraction=v["task.shortcut_fraction"],
        shortcut_strength=v["task.shortcut_strength"],
        nuisance_scale=v["task.nuisance_scale"],
        hidden=v["task.hidden"],
        seed=v["task.seed"],
    )

    dig = DigConfig(
        gate=GateConfig(tau=v["train.tau"], g_min=v["train.g_min"]),
        lam=v["train.lambda"],
        bound=v["train.bound"],
        discrepancy=DiscrepancyKind(
            DiscrepancyTag(v["train.discrepancy"]),
            projections=v["train.projections"],
            seed=v["seed"],
            epsilon=v["train.epsilon"],
            max_iters=v["train.sinkhorn_iters"],
            tol=v["train.sinkhorn_tol"],
            sigma=v["train.sigma"],
        ),
        power_iters=v["train.power_iters"],
    )

    train = TrainConfig(
        dig=dig,
        optimizer=OptimizerConfig(
            lr=v["train.lr"],
            beta1=v["train.beta1"],
            beta2=v["train.beta2"],
            weight_decay=v["train.weight_decay"],
            schedule=LRSchedule(v["train.schedule"]),
        ),
        steps=v["train.steps"],
        batch_size=v["train.batch_size"],
        seed=v["seed"],
        gate_enabled=v["train.gate_enabled"],
        residual_enabled=v["train.residual_enabled"],
        gate_strategy=GateStrategy(v["train.gate_strategy"]),
        fixed_gate=v["train.fixed_gate"],
        batch_gate=v["train.batch_gate"],
        width=v["train.width"],
        log_every=v["train.log_every"],
    )

    return RunConfig(
        command=command,
        seed=v["seed"],
        out=Path(out),
        jobs=v["jobs"],
        task=task,
        train=train,
        refine=RefineConfig(
            n_refine=v["refine.n_refine"],
            flow_steps=v["refine.flow_steps"],
            seed=v["seed"],
            use_previous=v["refine.use_previous"],
        ),
        perturb=PerturbSpec(PerturbMode(v["perturb.mode"]), mean=v["perturb.mean"], std=v["perturb.std"]),
        eval=EvalConfig(v["eval.episodes"], v["eval.episode_length"], v["eval.checkpoint"]),
        sweep=SweepConfig(
            axis=AblationAxis(v["sweep.axis"]),
            seeds=tuple(v["sweep.seeds"]),
            lambdas=tuple(v["sweep.lambdas"]),
            taus=tuple(v["sweep.taus"]),
            projections=tuple(v["sweep.projections"]),
            n_refine=tuple(v["sweep.n_refine"]),
            discrepancies=tuple(DiscrepancyTag(t) for t in v["sweep.discrepancies"]),
            gates=tuple(GateStrategy(g) for g in v["sweep.gates"]),
        ),
        verify=VerifyConfig(
            descent_trials=v["verify.descent_trials"],
            bracketing_trials=v["verify.bracketing_trials"],
            residual_trials=v["verify.residual_trials"],
            contraction_trials=v["verify.contraction_trials"],
            concentration_repeats=v["verify.concentration_repeats"],
            projections=tuple(v["verify.projections"]),
            lambda_fractions=tuple(v["verify.lambda_fractions"]),
            residual_loss=ResidualLoss(v["verify.residual_loss"]),
            g_min=v["train.g_min"],
            tau=v["train.tau"],
            checks=tuple(v["verify.checks"]),
        ),
        values=dict(v),
    )


def parse_config(
    path: Optional[Union[str, Path]] = None,
    *,
    command: Optional[str] = None,
    overrides: Iterable[str] = (),
    flags: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """
    Resolve a run configuration.

    Sources are layered as built-in defaults, then the YAML file, then ``key=value`` overrides,
    then dedicated flags. Each layer is validated on its own so errors name the key at fault.

    Parameters
    ----------
    path: Optional[Union[:class:`str`, :class:`pathlib.Path`]]
        YAML configuration file.

    command: Optional[:class:`str`]
        Command given on the command line. Takes precedence over the file's ``command``.

    overrides: Iterable[:class:`str`]
        ``key=value`` strings.

    flags: Optional[Mapping[:class:`str`, Any]]
        Dedicated flag values keyed by :data:`FLAG_KEYS` names. ``None`` values are skipped.

    Raises
    ------
    :exc:`UnknownConfigKey`
        A key no schema entry accepts.

    :exc:`ConfigTypeMismatch`
        A value of the wrong type or outside its range.

    :exc:`MissingConfigField`
        No command was given.
    """

    layers: Sequence[Tuple[str, Dict[str, Any]]] = [
        ("file", load_file(path) if path is not None else {}),
        ("override", dict(parse_override(o) for o in overrides)),
        ("flag", {FLAG_KEYS[name]: value for name, value in (flags or {}).items() if value is not None}),
    ]

    if command is not None:
        layers[-1][1]["command"] = command

    values: Dict[str, Any] = {}
    sources: Dict[str, str] = {}

    for source, layer in layers:
        checked = transform(ConfigSchema, layer, partial=True) if layer else {}

        values.update(checked)
        sources.update((key, source) for key in checked)

    ConfigSchema.check_required(values)

    for key, default in DEFAULTS.items():
        if key not in values:
            values[key] = default
            sources[key] = "default"

    for key in sorted(values):
        if key in _ASSUMED_DEFAULTS and sources[key] == "default":
            _log.warning("config %s = %r (assumed default)", key, values[key])
        else:
            _log.info("config %s = %r (%s)", key, values[key], sources[key])

    try:
        return _build(values)

    except ConfigError:
        raise

    except DigFlowException as e:
        raise ConfigError(f"invalid configuration: {e.message}", original=e) from e
