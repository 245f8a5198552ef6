"""
The MIT License (MIT)

Copyright (c) 2026 digflow contributors
"""

import csv
import io

import pytest

from digflow import checkpoint
from digflow.config import parse_config
from digflow.errors import SinkhornDidNotConverge, TrainingDiverged
from digflow.runner import (
    CHECKPOINT_NAME,
    EXIT_ERROR,
    EXIT_OK,
    PointResult,
    ablation_grid,
    diagnostic,
    refine_grid,
    run,
    run_grid,
)
from digflow.utils import loads

TINY = [
    "task.latent_dim=2",
    "task.tokens=4",
    "task.feature_dim=4",
    "task.horizon=2",
    "task.hidden=8",
    "train.steps=4",
    "train.batch_size=4",
    "train.width=8",
    "train.log_every=2",
    "eval.episodes=2",
    "eval.episode_length=2",
    "refine.flow_steps=2",
]

SMALL_VERIFY = [
    "verify.descent_trials=20",
    "verify.bracketing_trials=50",
    "verify.residual_trials=3",
    "verify.residual_loss=quadratic",
    "verify.contraction_trials=3",
    "verify.concentration_repeats=100",
]


def configure(command, out, *overrides, **flags):
    return parse_config(command=command, overrides=[*TINY, *overrides], flags={"out": str(out), **flags})


def read_table(path):
    lines = path.read_text(encoding="utf-8").splitlines()

    assert lines[0].startswith("# digflow ")

    return list(csv.DictReader(lines[1:]))


def read_jsonl(path):
    return [loads(line) for line in path.read_text(encoding="utf-8").splitlines()]


def test_verify_command(tmp_path):
    stdout = io.StringIO()
    status = run(configure("verify", tmp_path, *SMALL_VERIFY), stdout=stdout)

    assert status == EXIT_OK
    assert "gated_descent" in stdout.getvalue()

    rows = read_table(tmp_path / "summary.csv")
    assert len(rows) == 5
    assert all(row["passed"] == "true" for row in rows)

    records = read_jsonl(tmp_path / "metrics.jsonl")
    assert records[0]["type"] == "header"
    assert [r["type"] for r in records[1:]] == ["check"] * 5


def test_train_then_eval(tmp_path):
    train_dir, eval_dir = tmp_path / "train", tmp_path / "eval"

    assert run(configure("train", train_dir)) == EXIT_OK

    cfg = configure("train", train_dir)
    state = checkpoint.load(train_dir / CHECKPOINT_NAME, cfg.train, cfg.task)
    assert state.step == 4

    steps = read_jsonl(train_dir / "metrics.jsonl")
    assert [r["step"] for r in steps[1:]] == [1, 2, 3, 4]
    assert len(read_table(train_dir / "transport_cost.csv")) == 4
    assert read_table(train_dir / "summary.csv")[0]["steps"] == "4"

    eval_cfg = configure(
        "eval",
        eval_dir,
        f"eval.checkpoint={train_dir / CHECKPOINT_NAME}",
        "perturb.mode=both",
        "refine.n_refine=2",
    )
    assert run(eval_cfg) == EXIT_OK

    summary = read_table(eval_dir / "summary.csv")[0]
    assert summary["perturb"] == "both"
    assert float(summary["mse_mean"]) >= 0

    kinds = [r["type"] for r in read_jsonl(eval_dir / "metrics.jsonl")]
    assert kinds[0] == "header"
    assert kinds[-1] == "eval"
    assert "refine" in kinds


def test_eval_missing_checkpoint_reports_error(tmp_path, capsys):
    cfg = configure("eval", tmp_path, f"eval.checkpoint={tmp_path / 'absent.digf'}")

    assert run(cfg) == EXIT_ERROR

    report = loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert report["error"] == "CheckpointFormatError"


def test_ablate_discrepancy_rows(tmp_path):
    cfg = configure("ablate", tmp_path, "train.epsilon=1.0", "train.sinkhorn_tol=1.0e-6")

    assert run(cfg) == EXIT_OK

    rows = read_table(tmp_path / "summary.csv")
    assert [row["discrepancy"] for row in rows] == ["sliced_w2", "sinkhorn", "mmd_rbf", "cosine_mean"]
    assert all(row["seeds"] == "1" for row in rows)


def test_ablate_lambda_tau(tmp_path):
    cfg = configure("ablate", tmp_path, "sweep.axis=lambda_tau", "sweep.lambdas=[0.2, 0.4]", "sweep.taus=[1.0]")

    assert run(cfg) == EXIT_OK

    rows = read_table(tmp_path / "lambda_tau.csv")
    assert [(row["lambda"], row["tau"]) for row in rows] == [("0.2", "1"), ("0.4", "1")]


def test_refine_sweep(tmp_path):
    cfg = configure("refine-sweep", tmp_path, "sweep.n_refine=[0, 1, 2]", "sweep.seeds=[0, 1]")

    assert run(cfg) == EXIT_OK

    rows = read_table(tmp_path / "refine.csv")
    assert [row["n_refine"] for row in rows] == ["0", "1", "2"]
    assert all(float(row["error_std"]) >= 0 for row in rows)
    assert len(list(tmp_path.glob("*/metrics.jsonl"))) == 2


def test_summary_is_reproducible(tmp_path):
    cfg = configure("ablate", tmp_path, "sweep.axis=gate", "sweep.seeds=[0, 1]")

    run(cfg)
    first = (tmp_path / "summary.csv").read_bytes()

    run(cfg)
    assert (tmp_path / "summary.csv").read_bytes() == first


def test_grids(tmp_path):
    cfg = configure(
        "ablate",
        tmp_path,
        "sweep.axis=lambda_tau",
        "sweep.lambdas=[0.1, 0.2]",
        "sweep.taus=[0.5, 1, 2]",
        "sweep.seeds=[0, 1]",
    )
    points = ablation_grid(cfg)

    assert len(points) == 12
    assert [p.index for p in points] == list(range(12))
    assert points[0].name == "000_lambda-0.1_tau-0.5_seed-0"
    assert points[1].train.seed == 1
    assert points[1].train.dig.discrepancy.seed == 1

    sweep = refine_grid(configure("refine-sweep", tmp_path, "sweep.n_refine=[0, 4]", "sweep.seeds=[3]"))

    assert len(sweep) == 1
    assert [r.n_refine for r in sweep[0].refines] == [0, 4]


@pytest.mark.asyncio
async def test_run_grid_orders_results(tmp_path):
    cfg = configure("ablate", tmp_path, "sweep.axis=gate")

    def worker(job):
        return PointResult(job.point.index, job.point.label, job.point.seed, (float(job.point.index),))

    results = await run_grid(list(reversed(ablation_grid(cfg))), cfg, worker=worker)

    assert [r.index for r in results] == [0, 1, 2, 3]
    assert [r.errors for r in results] == [(0.0,), (1.0,), (2.0,), (3.0,)]


def test_diagnostic():
    report = diagnostic(SinkhornDidNotConverge("no", violation=0.5, iterations=3))

    assert report == {"error": "SinkhornDidNotConverge", "message": "no", "violation": 0.5, "iterations": 3}
    assert diagnostic(TrainingDiverged("nan", record={"step": 2}))["record"] == {"step": 2}
