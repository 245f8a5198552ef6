"""
The MIT License (MIT)

Copyright (c) 2026 digflow contributors
"""

from __future__ import annotations

__all__ = (
    "CHECKPOINT_NAME",
    "EXIT_OK",
    "EXIT_CHECK_FAILED",
    "EXIT_ERROR",
    "GridPoint",
    "PointResult",
    "diagnostic",
    "refine_grid",
    "ablation_grid",
    "run_grid",
    "run_async",
    "run",
)

import asyncio
import csv
import io
import logging
import sys
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from . import __version__
from .checkpoint import load, save
from .enums import AblationAxis, Command, RecordType
from .errors import ConfigError, DigFlowException
from .synthetic import eval_policy
from .trainer import train
from .utils import dumps, format_float
from .verify import format_table, run_all_checks

if TYPE_CHECKING:
    from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, TextIO, Tuple

    from .config import RunConfig
    from .refine import RefineConfig
    from .synthetic import EvalReport, PerturbSpec, TaskSpec
    from .trainer import MetricLog, TrainConfig


_log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.digf"

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_ERROR = 2


def diagnostic(exc: DigFlowException) -> Dict[str, Any]:
    """
    JSON-ready description of a library error.
    """

    data: Dict[str, Any] = {"error": type(exc).__name__, "message": exc.message}

    for name in ("key", "violation", "iterations", "record"):
        value = getattr(exc, name, None)

        if value is not None:
            data[name] = value

    if exc.original is not None:
        data["cause"] = f"{type(exc.original).__name__}: {exc.original}"

    return data


# Output helpers


def _header(cfg: RunConfig, **extra: Any) -> Dict[str, Any]:
    return {"type": RecordType.header.value, "version": __version__, "config": cfg.values, **extra}


def _write_jsonl(path: Path, records: Iterable[Mapping[str, Any]]):
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(dumps(record))
            f.write("\n")


def _cell(value: Any) -> str:
    if isinstance(value, float) or value is None:
        return format_float(value)

    if isinstance(value, bool):
        return "true" if value else "false"

    return str(value)


def _write_csv(path: Path, cfg: RunConfig, columns: Sequence[str], rows: Iterable[Sequence[Any]]):
    buffer = io.StringIO()
    buffer.write(f"# digflow {__version__} config={dumps(cfg.values)}\n")

    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)

    for row in rows:
        writer.writerow([_cell(v) for v in row])

    path.write_text(buffer.getvalue(), encoding="utf-8")
    _log.info("wrote %s", path)


def _mean_std(values: Sequence[float]) -> Tuple[float, float]:
    data = np.asarray(values, dtype=np.float64)

    if data.size == 0:
        return float("nan"), float("nan")

    return float(data.mean()), float(data.std(ddof=1)) if data.size > 1 else 0.0


def _eval_record(report: EvalReport, n_refine: int) -> Dict[str, Any]:
    return {
        "type": RecordType.eval.value,
        "n_refine": n_refine,
        "mse": report.mse,
        "stddev": report.stddev,
        "episodes": [e.mse for e in report.episodes],
    }


def _refine_records(report: EvalReport, n_refine: int) -> List[Dict[str, Any]]:
    return [
        {
            "type": RecordType.refine.value,
            "n_refine": n_refine,
            "episode": e.episode,
            "discrepancies": list(e.discrepancies),
            "gates": list(e.gates),
        }
        for e in report.episodes
        if e.discrepancies
    ]


# Grid points


@dataclass(frozen=True)
class GridPoint:
    """
    One independent unit of a sweep: train once, evaluate under one or more inference settings.

    Attributes
    ----------
    index: :class:`int`
        Position in grid order. Output rows are sorted by it.

    label: Tuple[Tuple[:class:`str`, Any], ...]
        Axis names and values identifying the configuration, shared by every seed.

    seed: :class:`int`
        Seed of this point.

    train: :class:`~digflow.trainer.TrainConfig`
        Training settings, seed already applied.

    refines: Tuple[:class:`~digflow.refine.RefineConfig`, ...]
        Inference settings evaluated on the trained state.
    """

    index: int
    label: Tuple[Tuple[str, Any], ...]
    seed: int
    train: TrainConfig
    refines: Tuple[RefineConfig, ...]

    @property
    def name(self) -> str:
        parts = [f"{key}-{_cell(value)}" for key, value in self.label]

        return "_".join([f"{self.index:03d}", *parts, f"seed-{self.seed}"])


@dataclass(frozen=True)
class PointResult:
    index: int
    label: Tuple[Tuple[str, Any], ...]
    seed: int
    errors: Tuple[float, ...]
    discrepancy: Optional[float] = None
    gate: Optional[float] = None


@dataclass(frozen=True)
class _PointJob:
    point: GridPoint
    task: TaskSpec
    perturb: PerturbSpec
    episodes: int
    episode_length: int
    directory: Path
    header: Dict[str, Any]


def _seeded(cfg: TrainConfig, seed: int) -> TrainConfig:
    dig = replace(cfg.dig, discrepancy=replace(cfg.dig.discrepancy, seed=seed))

    return replace(cfg, seed=seed, dig=dig)


def refine_grid(cfg: RunConfig) -> List[GridPoint]:
    """
    One point per seed, each evaluated at every refinement count of the sweep.
    """

    points = []

    for seed in cfg.sweep.seeds:
        refines = tuple(replace(cfg.refine, n_refine=n, seed=seed) for n in cfg.sweep.n_refine)
        points.append(GridPoint(len(points), (), seed, _seeded(cfg.train, seed), refines))

    return points


def _ablation_axis(cfg: RunConfig) -> List[Tuple[Tuple[Tuple[str, Any], ...], TrainConfig]]:
    base = cfg.train
    dig = base.dig
    axis = cfg.sweep.axis

    if axis is AblationAxis.discrepancy:
        return [
            ((("discrepancy", tag.value),), replace(base, dig=replace(dig, discrepancy=cfg.discrepancy_kind(tag))))
            for tag in cfg.sweep.discrepancies
        ]

    if axis is AblationAxis.gate:
        return [((("gate", strategy.value),), replace(base, gate_strategy=strategy)) for strategy in cfg.sweep.gates]

    if axis is AblationAxis.lambda_tau:
        return [
            (
                (("lambda", lam), ("tau", tau)),
                replace(base, dig=replace(dig, lam=lam, gate=replace(dig.gate, tau=tau))),
            )
            for lam in cfg.sweep.lambdas
            for tau in cfg.sweep.taus
        ]

    return [
        (
            (("projections", m),),
            replace(base, dig=replace(dig, discrepancy=cfg.discrepancy_kind(dig.discrepancy.tag, m))),
        )
        for m in cfg.sweep.projections
    ]


def ablation_grid(cfg: RunConfig) -> List[GridPoint]:
    """
    One point per axis value and seed, in axis-major order.
    """

    points = []

    for label, train_cfg in _ablation_axis(cfg):
        for seed in cfg.sweep.seeds:
            refine = replace(cfg.refine, seed=seed)
            points.append(GridPoint(len(points), label, seed, _seeded(train_cfg, seed), (refine,)))

    return points


def _run_point(job: _PointJob) -> PointResult:
    point = job.point
    job.directory.mkdir(parents=True, exist_ok=True)

    _log.info("grid point %s", point.name)

    state, log = train(point.train, job.task)
    records: List[Dict[str, Any]] = [dict(job.header, point=dict(point.label), seed=point.seed)]
    records.extend(r.to_dict() for r in log)

    errors = []
    for refine in point.refines:
        report = eval_policy(
            state,
            job.task,
            job.perturb,
            job.episodes,
            point.seed,
            refine=refine,
            episode_length=job.episode_length,
        )
        records.extend(_refine_records(report, refine.n_refine))
        records.append(_eval_record(report, refine.n_refine))
        errors.append(report.mse)

    _write_jsonl(job.directory / "metrics.jsonl", records)

    last = log.records[-1] if len(log) else None

    return PointResult(
        point.index,
        point.label,
        point.seed,
        tuple(errors),
        last.discrepancy if last else None,
        last.gate if last else None,
    )


def _executor(jobs: int) -> Executor:
    if jobs == 1:
        return ThreadPoolExecutor(max_workers=1)

    return ProcessPoolExecutor(max_workers=jobs)


async def run_grid(
    points: Sequence[GridPoint], cfg: RunConfig, *, worker: Callable[[_PointJob], PointResult] = _run_point
) -> List[PointResult]:
    """
    Run grid points with at most ``cfg.jobs`` in flight. Results come back in grid order.
    """

    loop = asyncio.get_running_loop()
    header = _header(cfg)

    jobs = [
        _PointJob(
            point,
            cfg.task,
            cfg.perturb,
            cfg.eval.episodes,
            cfg.eval.episode_length,
            cfg.out / point.name,
            header,
        )
        for point in points
    ]

    _log.info("running %d grid points with %d job(s)", len(jobs), cfg.jobs)

    with _executor(cfg.jobs) as executor:
        results = await asyncio.gather(*(loop.run_in_executor(executor, worker, job) for job in jobs))

    return sorted(results, key=lambda r: r.index)


def _group(results: Sequence[PointResult]) -> List[Tuple[Tuple[Tuple[str, Any], ...], List[PointResult]]]:
    groups: Dict[Tuple[Tuple[str, Any], ...], List[PointResult]] = {}

    for result in results:
        groups.setdefault(result.label, []).append(result)

    return list(groups.items())


# Commands


def _run_train(cfg: RunConfig) -> int:
    state, log = train(cfg.train, cfg.task)

    _write_jsonl(cfg.out / "metrics.jsonl", [_header(cfg), *(r.to_dict() for r in log)])
    save(state, cfg.out / CHECKPOINT_NAME)

    _write_csv(
        cfg.out / "transport_cost.csv",
        cfg,
        ("step", "discrepancy_mean", "discrepancy_std"),
        ((r.step, r.discrepancy, r.discrepancy_std) for r in log),
    )

    last = log.records[-1] if len(log) else None
    _write_csv(
        cfg.out / "summary.csv",
        cfg,
        ("seed", "steps", "loss", "objective", "discrepancy", "gate", "g_clean", "g_shortcut"),
        [
            (
                cfg.seed,
                state.step,
                last.loss if last else None,
                last.objective if last else None,
                last.discrepancy if last else None,
                last.gate if last else None,
                last.g_clean if last else None,
                last.g_shortcut if last else None,
            )
        ],
    )

    return EXIT_OK


def _run_eval(cfg: RunConfig) -> int:
    if cfg.eval.checkpoint is not None:
        state = load(cfg.eval.checkpoint, cfg.train, cfg.task)
        records: List[Dict[str, Any]] = [_header(cfg, checkpoint=cfg.eval.checkpoint)]

    else:
        _log.info("no checkpoint given, training from the configuration first")
        state, log = train(cfg.train, cfg.task)
        records = [_header(cfg), *(r.to_dict() for r in log)]

    report = eval_policy(
        state,
        cfg.task,
        cfg.perturb,
        cfg.eval.episodes,
        cfg.seed,
        refine=cfg.refine,
        episode_length=cfg.eval.episode_length,
    )

    records.extend(_refine_records(report, cfg.refine.n_refine))
    records.append(_eval_record(report, cfg.refine.n_refine))
    _write_jsonl(cfg.out / "metrics.jsonl", records)

    _write_csv(
        cfg.out / "summary.csv",
        cfg,
        ("n_refine", "perturb", "episodes", "mse_mean", "mse_std"),
        [(cfg.refine.n_refine, cfg.perturb.mode.value, len(report.episodes), report.mse, report.stddev)],
    )

    return EXIT_OK


async def _run_refine_sweep(cfg: RunConfig) -> int:
    results = await run_grid(refine_grid(cfg), cfg)

    rows = []
    for i, n in enumerate(cfg.sweep.n_refine):
        mean, std = _mean_std([r.errors[i] for r in results])
        rows.append((n, len(results), mean, std))

    _write_csv(cfg.out / "summary.csv", cfg, ("n_refine", "seeds", "mse_mean", "mse_std"), rows)
    _write_csv(cfg.out / "refine.csv", cfg, ("n_refine", "error_mean", "error_std"), [(n, m, s) for n, _, m, s in rows])

    return EXIT_OK


async def _run_ablate(cfg: RunConfig) -> int:
    results = await run_grid(ablation_grid(cfg), cfg)
    groups = _group(results)

    axis_names = [name for name, _ in groups[0][0]] if groups else []
    rows = []

    for label, members in groups:
        mean, std = _mean_std([m.errors[0] for m in members])
        d_mean, _ = _mean_std([m.discrepancy for m in members if m.discrepancy is not None])
        g_mean, _ = _mean_std([m.gate for m in members if m.gate is not None])

        rows.append((*(value for _, value in label), len(members), mean, std, d_mean, g_mean))

    _write_csv(
        cfg.out / "summary.csv",
        cfg,
        (*axis_names, "seeds", "mse_mean", "mse_std", "discrepancy", "gate"),
        rows,
    )

    axis = cfg.sweep.axis
    if axis is AblationAxis.lambda_tau:
        columns = ("lambda", "tau", "error_mean", "error_std")
        _write_csv(cfg.out / "lambda_tau.csv", cfg, columns, [r[:2] + r[3:5] for r in rows])

    elif axis is AblationAxis.projections:
        columns = ("projections", "error_mean", "error_std")
        _write_csv(cfg.out / "projections.csv", cfg, columns, [r[:1] + r[2:4] for r in rows])

    return EXIT_OK


def _run_verify(cfg: RunConfig, stdout: TextIO) -> int:
    reports = run_all_checks(cfg.verify, cfg.seed)

    records = [_header(cfg), *({"type": RecordType.check.value, **r.to_dict()} for r in reports)]
    _write_jsonl(cfg.out / "metrics.jsonl", records)

    _write_csv(
        cfg.out / "summary.csv",
        cfg,
        ("check", "trials", "violations", "worst_margin", "passed"),
        [(r.name, r.trials, r.violations, r.worst_margin, r.passed) for r in reports],
    )

    print(format_table(reports), file=stdout)

    failed = [r.name for r in reports if not r.passed]
    if failed:
        _log.warning("checks failed: %s", ", ".join(failed))
        return EXIT_CHECK_FAILED

    return EXIT_OK


async def run_async(cfg: RunConfig, *, stdout: Optional[TextIO] = None) -> int:
    """
    Dispatch a resolved configuration to its command. Library errors propagate.
    """

    try:
        cfg.out.mkdir(parents=True, exist_ok=True)

    except OSError as e:
        _log.error("could not create output directory %s", cfg.out)
        raise ConfigError(f"could not create output directory {cfg.out}: {e}", key="out", original=e) from e

    _log.info("digflow %s: %s -> %s", __version__, cfg.command.value, cfg.out)

    if cfg.command is Command.train:
        return _run_train(cfg)

    if cfg.command is Command.eval:
        return _run_eval(cfg)

    if cfg.command is Command.refine_sweep:
        return await _run_refine_sweep(cfg)

    if cfg.command is Command.ablate:
        return await _run_ablate(cfg)

    return _run_verify(cfg, stdout or sys.stdout)


def run(cfg: RunConfig, *, stdout: Optional[TextIO] = None, stderr: Optional[TextIO] = None) -> int:
    """
    Run a configuration to completion and return the process exit status.

    ``0`` on success, ``1`` when a verification check fails, ``2`` on any library error. Errors
    are reported as a single JSON object on ``stderr``.
    """

    try:
        return asyncio.run(run_async(cfg, stdout=stdout))

    except DigFlowException as e:
        _log.error("%s failed: %s", cfg.command.value, e.message)
        print(dumps(diagnostic(e)), file=stderr or sys.stderr)

        return EXIT_ERROR
