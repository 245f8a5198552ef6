"""
The MIT License (MIT)

Copyright (c) 2026 digflow contributors
"""

import math

import numpy as np
import pytest

from digflow.enums import GateStrategy, PerturbMode
from digflow.errors import ConfigError, UntrainedState
from digflow.refine import RefineConfig
from digflow.synthetic import (
    DEFAULT_EPISODE_LENGTH,
    PerturbSpec,
    TaskSpec,
    apply_perturbation,
    eval_policy,
    sample_batch,
    task_actions,
)
from digflow.trainer import TrainConfig, build_state, train


def test_batch_shapes(tiny_task):
    batch = sample_batch(tiny_task, 5, 0)

    assert batch.observations.shape == (5, tiny_task.tokens, tiny_task.feature_dim)
    assert batch.actions.shape == (5, tiny_task.horizon, tiny_task.action_dim)
    assert batch.shortcut.shape == (5,)
    assert len(batch) == 5
    assert len(list(batch)) == 5


def test_batch_deterministic(shortcut_task):
    a, b = sample_batch(shortcut_task, 16, 7), sample_batch(shortcut_task, 16, 7)

    np.testing.assert_array_equal(a.observations, b.observations)
    np.testing.assert_array_equal(a.shortcut, b.shortcut)
    assert not np.array_equal(a.observations, sample_batch(shortcut_task, 16, 8).observations)


def test_actions_follow_latents(tiny_task):
    batch = sample_batch(tiny_task, 3, 1)

    np.testing.assert_array_equal(batch.actions, task_actions(tiny_task, batch.latents))


def test_clean_task_has_no_shortcuts(shortcut_task):
    clean = shortcut_task.clean()
    batch = sample_batch(clean, 64, 2)

    assert clean.shortcut_fraction == 0.0
    assert not batch.shortcut.any()


def test_shortcut_samples_leak_actions_into_nuisance_token(shortcut_task):
    batch = sample_batch(shortcut_task, 256, 3)
    nuisance = np.linalg.norm(batch.observations[:, -1, :], axis=1)

    assert batch.shortcut.any() and (~batch.shortcut).any()
    assert nuisance[batch.shortcut].mean() > 10 * nuisance[~batch.shortcut].mean()


def test_shortcut_fraction_matches_rate(shortcut_task):
    n = 10000
    p = shortcut_task.shortcut_fraction
    batch = sample_batch(shortcut_task, n, 4)

    assert abs(batch.shortcut.mean() - p) <= 3 * math.sqrt(p * (1 - p) / n)


@pytest.mark.parametrize(
    "kwargs",
    [dict(tokens=1), dict(feature_dim=0), dict(shortcut_fraction=1.5), dict(obs_noise=-0.1)],
)
def test_task_rejects(kwargs):
    with pytest.raises(ConfigError) as info:
        TaskSpec(**kwargs)

    assert info.value.key == f"task.{next(iter(kwargs))}"


def test_sample_batch_rejects_empty(tiny_task):
    with pytest.raises(ConfigError):
        sample_batch(tiny_task, 0, 0)


class TestPerturbation:
    def test_none_is_identity(self):
        obs = np.ones((2, 3))

        np.testing.assert_array_equal(apply_perturbation(obs, 5.0, PerturbSpec()), obs)

    def test_modes(self):
        coefficients = (2.0, 1.0, 3.0, 0.5)
        t = 1.3

        assert PerturbSpec(PerturbMode.cosine, coefficients=coefficients).shift(t) == 2.0 * math.cos(t)
        assert PerturbSpec(PerturbMode.sine, coefficients=coefficients).shift(t) == 3.0 * math.sin(0.5 * t)
        assert PerturbSpec(PerturbMode.both, coefficients=coefficients).shift(t) == pytest.approx(
            2.0 * math.cos(t) + 3.0 * math.sin(0.5 * t), rel=1e-15
        )

    def test_shift_added_everywhere(self):
        perturb = PerturbSpec(PerturbMode.cosine, coefficients=(0.5, 0.0, 0.0, 0.0))

        np.testing.assert_array_equal(apply_perturbation(np.zeros((2, 2)), 3.0, perturb), np.full((2, 2), 0.5))

    def test_shift_keeps_token_covariance(self, tiny_task):
        perturb = PerturbSpec(PerturbMode.both, coefficients=(0.8, 1.5, -0.6, 0.7))
        observation = sample_batch(tiny_task, 1, 9).observations[0]
        shifted = apply_perturbation(observation, 2.0, perturb)

        assert not np.allclose(shifted, observation)
        np.testing.assert_allclose(np.cov(shifted, rowvar=False), np.cov(observation, rowvar=False), atol=1e-12)

    def test_draw_per_episode(self):
        perturb = PerturbSpec(PerturbMode.both)
        a = perturb.for_episode(np.random.default_rng(1))
        b = perturb.for_episode(np.random.default_rng(1))

        assert a.coefficients == b.coefficients
        assert len(a.coefficients) == 4
        assert a.for_episode(np.random.default_rng(2)) is a

    def test_undrawn_shift_raises(self):
        with pytest.raises(ConfigError):
            PerturbSpec(PerturbMode.sine).shift(1.0)

    def test_rejects(self):
        with pytest.raises(ConfigError):
            PerturbSpec(PerturbMode.sine, std=-1.0)

        with pytest.raises(ConfigError):
            PerturbSpec(PerturbMode.sine, coefficients=(1.0, 2.0))

    def test_mode_from_string(self):
        assert PerturbSpec("cosine").mode is PerturbMode.cosine


class TestEvalPolicy:
    def test_perfect_policy_scores_zero(self, tiny_task):
        report = eval_policy(None, tiny_task, PerturbSpec(), 3, 0, policy=lambda sample: sample.actions)

        assert report.mse == 0.0
        assert report.stddev == 0.0
        assert len(report.episodes) == 3

    def test_zero_policy_scores_action_energy(self, tiny_task):
        zeros = np.zeros((tiny_task.horizon, tiny_task.action_dim))
        seen = []

        def policy(sample):
            seen.append(sample.actions)
            return zeros

        report = eval_policy(None, tiny_task, PerturbSpec(), 4, 1, episode_length=2, policy=policy)
        energy = np.sum(np.asarray(seen) ** 2, axis=(1, 2)).reshape(4, 2)

        assert report.mse == pytest.approx(float(np.mean(energy.mean(axis=1))), rel=1e-12)
        assert report.stddev > 0

    def test_zero_policy_matches_second_moment(self, tiny_task):
        zeros = np.zeros((tiny_task.horizon, tiny_task.action_dim))
        report = eval_policy(None, tiny_task, PerturbSpec(), 200, 2, episode_length=10, policy=lambda _: zeros)

        latents = np.random.default_rng(3).standard_normal((20000, tiny_task.latent_dim))
        moment = float(np.mean(np.sum(task_actions(tiny_task, latents) ** 2, axis=(1, 2))))

        assert report.mse == pytest.approx(moment, rel=0.1)

    def test_perturbation_varies_across_steps(self, tiny_task):
        perturb = PerturbSpec(PerturbMode.both, coefficients=(1.0, 1.0, 1.0, 1.0))
        clean, shifted = [], []

        def recorder(store):
            def policy(sample):
                store.append(sample.observation)
                return sample.actions

            return policy

        eval_policy(None, tiny_task, PerturbSpec(), 1, 4, episode_length=4, policy=recorder(clean))
        eval_policy(None, tiny_task, perturb, 1, 4, episode_length=4, policy=recorder(shifted))

        offsets = np.asarray(shifted) - np.asarray(clean)

        for step, offset in enumerate(offsets):
            np.testing.assert_allclose(offset, perturb.shift(float(step)), rtol=0, atol=1e-12)

        assert len({round(float(o[0, 0]), 9) for o in offsets}) == 4

    def test_default_episode_is_multi_step(self, tiny_task):
        steps = []

        def policy(sample):
            steps.append(sample)
            return sample.actions

        eval_policy(None, tiny_task, PerturbSpec(), 1, 0, policy=policy)

        assert len(steps) == DEFAULT_EPISODE_LENGTH > 1

    def test_trained_state_is_deterministic(self, trained, tiny_task):
        state, _ = trained
        perturb = PerturbSpec(PerturbMode.both)
        refine = RefineConfig(n_refine=2, flow_steps=2)

        a = eval_policy(state, tiny_task, perturb, 2, 5, refine=refine, episode_length=2)
        b = eval_policy(state, tiny_task, perturb, 2, 5, refine=refine, episode_length=2)

        assert a == b
        assert math.isfinite(a.mse)
        assert len(a.episodes[0].gates) == 4

    def test_untrained_state(self, tiny_task):
        state = build_state(TrainConfig(width=8), tiny_task)

        with pytest.raises(UntrainedState):
            eval_policy(state, tiny_task, PerturbSpec(), 1, 0)

        with pytest.raises(UntrainedState):
            eval_policy(None, tiny_task, PerturbSpec(), 1, 0)

    def test_rejects_empty(self, tiny_task):
        with pytest.raises(ConfigError):
            eval_policy(None, tiny_task, PerturbSpec(), 0, 0, policy=lambda sample: sample.actions)


SEEDS = range(5)


@pytest.fixture(scope="module")
def shortcut_runs():
    task = TaskSpec(shortcut_fraction=0.3)
    runs = {}

    for strategy in (GateStrategy.transport, GateStrategy.fixed, GateStrategy.none):
        for seed in SEEDS:
            cfg = TrainConfig(steps=2000, seed=seed, gate_strategy=strategy, fixed_gate=0.5, log_every=500)
            runs[strategy, seed] = train(cfg, task)

    return task, runs


def perturbed_mse(state, task, seed, n_refine=0):
    perturb = PerturbSpec(PerturbMode.both)

    return eval_policy(state, task, perturb, 20, seed, refine=RefineConfig(n_refine=n_refine)).mse


@pytest.mark.slow
def test_clean_samples_gated_above_shortcuts(shortcut_runs):
    _, runs = shortcut_runs

    for seed in SEEDS:
        _, log = runs[GateStrategy.transport, seed]
        tail = log.records[-200:]

        g_clean = np.mean([r.g_clean for r in tail if r.g_clean is not None])
        g_shortcut = np.mean([r.g_shortcut for r in tail if r.g_shortcut is not None])

        assert g_clean > g_shortcut


@pytest.mark.slow
def test_transport_gate_beats_fixed_and_ungated(shortcut_runs):
    task, runs = shortcut_runs

    def average(strategy):
        return np.mean([perturbed_mse(runs[strategy, seed][0], task, seed) for seed in SEEDS])

    gated = average(GateStrategy.transport)

    assert gated <= 0.9 * average(GateStrategy.fixed)
    assert gated <= 0.9 * average(GateStrategy.none)


@pytest.mark.slow
def test_refinement_saturates(shortcut_runs):
    task, runs = shortcut_runs

    errors = np.array(
        [
            np.mean([perturbed_mse(runs[GateStrategy.transport, seed][0], task, seed, n) for seed in SEEDS])
            for n in range(9)
        ]
    )
    ungated = np.mean([perturbed_mse(runs[GateStrategy.none, seed][0], task, seed) for seed in SEEDS])

    assert errors[3] <= 1.02 * errors.min()
    assert errors[0] < ungated
