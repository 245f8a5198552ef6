"""
The MIT License (MIT)

Copyright (c) 2026 digflow contributors
"""

import copy
import math
from dataclasses import replace

import numpy as np
import pytest
import torch

from digflow.enums import GateStrategy, LRSchedule
from digflow.errors import TrainingDiverged, TrainingError
from digflow.flow import flow_losses
from digflow.gating import GateConfig
from digflow.residual import spectral_norm_estimate
from digflow.synthetic import TaskSpec, sample_batch
from digflow.trainer import (
    DigConfig,
    MetricLog,
    OptimizerConfig,
    StepRecord,
    TrainConfig,
    build_state,
    centroid_broadcast,
    gated_objective,
    learning_rate,
    train,
    train_step,
)
from digflow.utils import STREAM_NOISE, STREAM_TIME, derive_rng, loads


class TestCentroidBroadcast:
    def test_single_row(self):
        np.testing.assert_array_equal(centroid_broadcast(np.array([[1.0, 2.0]]), 3), [[1.0, 2.0]] * 3)

    def test_mean_rows(self):
        np.testing.assert_array_equal(centroid_broadcast(np.array([[1.0, 0.0], [3.0, 0.0]]), 3), [[2.0, 0.0]] * 3)

    def test_order_invariant(self):
        rows = np.random.default_rng(0).standard_normal((4, 3))

        np.testing.assert_allclose(centroid_broadcast(rows[::-1], 5), centroid_broadcast(rows, 5), rtol=1e-15)

    def test_batched_tensor(self):
        rows = torch.randn(2, 3, 4, dtype=torch.float64)

        assert centroid_broadcast(rows, 6).shape == (2, 6, 4)


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig()

        assert (cfg.dig.gate.tau, cfg.dig.lam, cfg.dig.projections, cfg.dig.bound) == (1.0, 0.4, 32, 2.0)
        assert cfg.dig.gate.g_min == 0.05

    @pytest.mark.parametrize(
        "kwargs",
        [dict(steps=-1), dict(batch_size=0), dict(fixed_gate=0.0), dict(width=0)],
    )
    def test_rejects(self, kwargs):
        with pytest.raises(TrainingError):
            TrainConfig(**kwargs)

    def test_rejects_optimizer(self):
        with pytest.raises(TrainingError):
            OptimizerConfig(lr=0.0)

        with pytest.raises(TrainingError):
            DigConfig(lam=-0.1)

    def test_strategy_none_disables_both(self):
        cfg = TrainConfig(gate_strategy=GateStrategy.none)

        assert not cfg.uses_gate
        assert not cfg.uses_residual

    def test_cosine_schedule(self):
        cfg = TrainConfig(steps=10, optimizer=OptimizerConfig(lr=1e-2, schedule=LRSchedule.cosine))

        assert learning_rate(cfg, 0) == pytest.approx(1e-2)
        assert learning_rate(cfg, 5) == pytest.approx(5e-3)
        assert learning_rate(cfg, 10) == pytest.approx(0.0, abs=1e-18)
        assert learning_rate(TrainConfig(), 123) == 1e-3


class TestMetricLog:
    def test_rejects_non_increasing(self):
        log = MetricLog([StepRecord(1, 0.1, 0.9, 1.0, 0.9)])

        with pytest.raises(TrainingError):
            log.append(StepRecord(1, 0.1, 0.9, 1.0, 0.9))

    def test_rejects_non_finite(self):
        with pytest.raises(TrainingError):
            MetricLog([StepRecord(1, math.nan, 0.9, 1.0, 0.9)])

    def test_jsonl(self):
        log = MetricLog([StepRecord(1, 0.1, 0.9, 1.0, 0.9), StepRecord(2, 0.2, 0.8, 0.5, 0.4)])
        lines = log.to_jsonl().splitlines()

        assert len(lines) == 2
        assert loads(lines[1])["type"] == "step"
        assert loads(lines[1])["objective"] == 0.4
        np.testing.assert_array_equal(log.column("loss"), [1.0, 0.5])

    def test_equality_ignores_wall_time(self):
        a = MetricLog([StepRecord(1, 0.1, 0.9, 1.0, 0.9, wall_time=1.0)])
        b = MetricLog([StepRecord(1, 0.1, 0.9, 1.0, 0.9, wall_time=2.0)])

        assert a == b


def test_zero_steps(tiny_task):
    cfg = TrainConfig(steps=0, width=8)
    state, log = train(cfg, tiny_task)

    assert state.step == 0
    assert len(log) == 0


def test_deterministic(tiny_task, tiny_config, trained):
    _, log = trained
    _, again = train(tiny_config, tiny_task)

    assert log == again
    assert [r.step for r in log] == list(range(1, tiny_config.steps + 1))


def test_bracketing_every_step(shortcut_task):
    cfg = TrainConfig(steps=8, batch_size=8, seed=2, width=8)
    _, log = train(cfg, shortcut_task)

    for record in log:
        assert cfg.dig.gate.g_min * record.loss <= record.objective + 1e-12
        assert record.objective <= record.loss + 1e-12


def test_residual_stays_in_ball(trained):
    state, _ = trained
    sigma = spectral_norm_estimate(state.residual.weight, 500, 0)

    assert sigma <= state.config.dig.bound * (1 + 1e-6)


def test_split_and_resume(tiny_task, tiny_config, trained):
    _, straight = trained

    state, first = train(tiny_config, tiny_task, stop_at=3)
    state, second = train(tiny_config, tiny_task, state=state)

    first.extend(second)

    assert state.step == tiny_config.steps
    assert first == straight


def test_ungated_matches_plain_flow_matching(tiny_task):
    cfg = TrainConfig(steps=1, batch_size=4, seed=5, width=8, gate_enabled=False, residual_enabled=False)
    state = build_state(cfg, tiny_task)
    batch = sample_batch(tiny_task, 4, 99)

    model = copy.deepcopy(state.model)
    opt = cfg.optimizer
    reference = torch.optim.AdamW(
        model.parameters(), lr=opt.lr, betas=(opt.beta1, opt.beta2), eps=opt.eps, weight_decay=opt.weight_decay
    )

    n = len(batch)
    features = torch.as_tensor(batch.observations)
    actions = torch.as_tensor(batch.actions)
    t = torch.as_tensor(derive_rng(cfg.seed, 0, STREAM_TIME).uniform(size=n))
    x0 = torch.as_tensor(derive_rng(cfg.seed, 0, STREAM_NOISE).standard_normal((n, model.flat_dim)))
    x1 = actions.reshape(n, -1)
    xt = (1.0 - t)[:, None] * x0 + t[:, None] * x1

    loss = flow_losses(model, xt, t, x1 - x0, features).mean()
    reference.zero_grad(set_to_none=True)
    loss.backward()
    reference.step()

    state, record = train_step(state, batch)

    assert record.loss == float(loss.detach())
    assert record.gate == 1.0

    for (name, param), expected in zip(state.model.named_parameters(), model.parameters()):
        assert torch.equal(param, expected), name


def test_encoder_receives_no_gradient(shortcut_task):
    cfg = TrainConfig(steps=1, batch_size=8, seed=6, width=8)
    state = build_state(cfg, shortcut_task)
    batch = sample_batch(shortcut_task, 8, 1)

    objective, _, _, _ = gated_objective(state, batch, 0)
    objective.backward()

    assert state.encoder.weight.grad is None
    assert state.residual.weight.grad is not None
    assert state.model.output.weight.grad is not None


def test_encoder_change_moves_only_gate(shortcut_task):
    cfg = TrainConfig(steps=1, batch_size=8, seed=7, width=8)
    state = build_state(cfg, shortcut_task)
    batch = sample_batch(shortcut_task, 8, 2)

    _, _, discrepancies, gates = gated_objective(state, batch, 0)

    shifted = copy.deepcopy(state)
    with torch.no_grad():
        shifted.encoder.weight.mul_(3.0)

    _, _, discrepancies_shifted, _ = gated_objective(shifted, batch, 0)

    assert not np.array_equal(discrepancies, discrepancies_shifted)
    assert np.all((gates >= cfg.dig.gate.g_min) & (gates <= 1.0))

    with torch.no_grad():
        ungated = replace(cfg, residual_enabled=False)
        plain = gated_objective(replace(state, config=ungated), batch, 0)[1]
        plain_shifted = gated_objective(replace(shifted, config=ungated), batch, 0)[1]

    torch.testing.assert_close(plain, plain_shifted, rtol=0, atol=0)


def test_batch_gate_shares_one_discrepancy(shortcut_task):
    cfg = TrainConfig(steps=2, batch_size=6, seed=3, width=8, batch_gate=True)
    state = build_state(cfg, shortcut_task)

    _, _, discrepancies, gates = gated_objective(state, sample_batch(shortcut_task, 6, 0), 0)

    assert np.all(discrepancies == discrepancies[0])
    assert np.all(gates == gates[0])


def test_fixed_and_random_strategies(shortcut_task):
    batch = sample_batch(shortcut_task, 6, 4)

    fixed_cfg = TrainConfig(batch_size=6, width=8, gate_strategy=GateStrategy.fixed, fixed_gate=0.5)
    random_cfg = TrainConfig(batch_size=6, width=8, gate_strategy=GateStrategy.random)

    fixed = build_state(fixed_cfg, shortcut_task)
    random = build_state(random_cfg, shortcut_task)

    np.testing.assert_array_equal(gated_objective(fixed, batch, 0)[3], np.full(6, 0.5))

    gates = gated_objective(random, batch, 0)[3]
    np.testing.assert_array_equal(gates, gated_objective(random, batch, 0)[3])
    assert np.all((gates >= 0) & (gates < 1))


def test_diverged_step_leaves_state(tiny_task, tiny_config):
    state = build_state(tiny_config, tiny_task)

    with torch.no_grad():
        state.model.output.bias.fill_(math.nan)

    with pytest.raises(TrainingDiverged) as info:
        train_step(state, sample_batch(tiny_task, 4, 0))

    assert state.step == 0
    assert info.value.record["step"] == 1
    assert math.isnan(info.value.record["loss"])


def test_shortcut_split_recorded(shortcut_task):
    cfg = TrainConfig(steps=3, batch_size=32, seed=1, width=8)
    _, log = train(cfg, shortcut_task)

    assert any(r.g_shortcut is not None for r in log)
    assert all(r.g_clean is not None for r in log)


@pytest.mark.slow
def test_transport_cost_stays_positive_while_loss_falls():
    task = TaskSpec()
    cfg = TrainConfig(
        steps=2000,
        seed=0,
        log_every=500,
        dig=DigConfig(gate=GateConfig(tau=1.0)),
        optimizer=OptimizerConfig(lr=1e-3, schedule=LRSchedule.cosine),
    )
    _, log = train(cfg, task)

    d = log.column("discrepancy")
    loss = log.column("loss")

    late, early = d[-200:].mean(), d[:100].mean()

    assert late > 0
    assert late > 0.1 * early
    assert loss[-100:].mean() < 0.1 * loss[:10].mean()
