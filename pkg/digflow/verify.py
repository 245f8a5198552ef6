"""
The MIT License (MIT)

Copyright (c) 2026 digflow contributors
"""

from __future__ import annotations

__all__ = (
    "CheckReport",
    "VerifyConfig",
    "CHECK_NAMES",
    "check_gated_descent",
    "check_bracketing",
    "check_residual_improvement",
    "check_contraction",
    "check_concentration",
    "run_all_checks",
    "format_table",
)

import logging
import math
import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
import torch

from .enums import ResidualLoss
from .errors import DegenerateInstance, VerificationError
from .flow import VectorFieldModel, flow_losses
from .gating import DEFAULT_G_MIN, GateConfig, gate, gate_lipschitz_bound
from .measures import EmpiricalMeasure, sliced_w2_terms
from .refine import ContractionField, contraction_rate, fixed_gate_iterate, random_spd_field
from .utils import STREAM_CHECK, derive_rng, derive_seed

if TYPE_CHECKING:
    from typing import Any, Callable, Dict, List, Sequence, Tuple


_log = logging.getLogger(__name__)

CHECK_NAMES = ("gated_descent", "bracketing", "residual_improvement", "contraction", "concentration")

_SAFETY = 1.5


@dataclass(frozen=True)
class CheckReport:
    """
    Outcome of one certification check.

    Attributes
    ----------
    name: :class:`str`
        Check name.

    trials: :class:`int`
        Number of randomized instances evaluated.

    violations: :class:`int`
        Number of inequality violations. The check passes iff this is zero.

    worst_margin: :class:`float`
        Smallest observed slack of the certified inequality. Negative on violation.

    parameters: Dict[:class:`str`, Any]
        Settings and measured constants.

    wall_time: :class:`float`
        Seconds spent, excluded from equality.
    """

    name: str
    trials: int
    violations: int
    worst_margin: float
    parameters: Dict[str, Any] = field(default_factory=dict)
    wall_time: float = field(default=0.0, compare=False)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "trials": self.trials,
            "violations": self.violations,
            "worst_margin": self.worst_margin,
            "passed": self.passed,
            "parameters": self.parameters,
            "wall_time": self.wall_time,
        }


@dataclass(frozen=True)
class VerifyConfig:
    descent_trials: int = 1000
    bracketing_trials: int = 10000
    residual_trials: int = 200
    contraction_trials: int = 50
    concentration_repeats: int = 200
    projections: Tuple[int, ...] = (8, 32, 128, 512)
    lambda_fractions: Tuple[float, ...] = (0.05, 0.1, 0.25, 0.5, 0.75, 1.0)
    residual_loss: ResidualLoss = ResidualLoss.flow
    g_min: float = DEFAULT_G_MIN
    tau: float = 1.0
    checks: Tuple[str, ...] = CHECK_NAMES

    def __post_init__(self):
        unknown = set(self.checks) - set(CHECK_NAMES)

        if unknown:
            raise VerificationError(f"unknown checks: {', '.join(sorted(unknown))}")

        if len(self.projections) < 2:
            raise VerificationError("concentration needs at least two projection counts")

        if not all(0 < f <= 1 for f in self.lambda_fractions):
            raise VerificationError("lambda fractions must lie in (0, 1]")


def _timed(name: str, fn: Callable[[], Tuple[int, int, float, Dict[str, Any]]]) -> CheckReport:
    started = time.perf_counter()
    trials, violations, margin, parameters = fn()
    report = CheckReport(name, trials, violations, margin, parameters, time.perf_counter() - started)

    log = _log.info if report.passed else _log.warning
    log("check %s: %d trials, %d violations, worst margin %.3e", name, trials, violations, margin)

    return report


def check_gated_descent(
    trials: int = 1000, seed: int = 0, *, g_min: float = DEFAULT_G_MIN, tol: float = 1e-10
) -> CheckReport:
    """
    Certify the gated descent inequality on random gated least-squares objectives.

    Each trial draws ``J(theta) = sum_i g_i |A_i theta - b_i|^2 / n`` with gates in ``[g_min, 1]``,
    takes a gradient step with ``alpha`` inside ``(0, 2 / L_J)`` and checks
    ``J(theta+) <= J(theta) - alpha (1 - alpha L_J / 2) |grad J|^2``.
    """

    def run():
        violations = 0
        worst = math.inf

        for trial in range(trials):
            rng = derive_rng(seed, STREAM_CHECK, 0, trial)
            dim = int(rng.integers(1, 5))
            terms = int(rng.integers(1, 6))

            mats = [rng.standard_normal((int(rng.integers(1, 4)), dim)) for _ in range(terms)]
            targets = [rng.standard_normal(m.shape[0]) for m in mats]
            gates = rng.uniform(g_min, 1.0, size=terms)

            def objective(theta):
                return sum(g * float(np.sum((a @ theta - b) ** 2)) for g, a, b in zip(gates, mats, targets)) / terms

            def gradient(theta):
                return sum(2.0 * g * a.T @ (a @ theta - b) for g, a, b in zip(gates, mats, targets)) / terms

            curvature = sum(g * a.T @ a for g, a in zip(gates, mats)) / terms
            lipschitz = 2.0 * float(np.linalg.eigvalsh(curvature)[-1])

            if lipschitz <= 0:
                continue

            alpha = float(rng.uniform(0.0, 1.0)) * 2.0 / lipschitz
            theta = rng.standard_normal(dim)

            value = objective(theta)
            grad = gradient(theta)
            bound = value - alpha * (1.0 - alpha * lipschitz / 2.0) * float(grad @ grad)
            after = objective(theta - alpha * grad)

            margin = bound - after
            worst = min(worst, margin)

            if margin < -tol * max(1.0, abs(value)):
                violations += 1

        return trials, violations, worst, {"g_min": g_min, "tol": tol}

    return _timed("gated_descent", run)


def check_bracketing(
    trials: int = 10000, seed: int = 0, *, g_min: float = DEFAULT_G_MIN, tol: float = 1e-12
) -> CheckReport:
    """
    Certify ``g_min * mean(l) <= mean(g * l) <= mean(l)`` on random loss and gate batches.
    """

    def run():
        violations = 0
        worst = math.inf

        for trial in range(trials):
            rng = derive_rng(seed, STREAM_CHECK, 1, trial)
            size = int(rng.integers(1, 65))

            losses = rng.exponential(1.0, size=size)
            gates = rng.uniform(g_min, 1.0, size=size)

            raw = float(np.mean(losses))
            gated = float(np.mean(gates * losses))

            margin = min(gated - g_min * raw, raw - gated)
            worst = min(worst, margin)

            if margin < -tol * max(1.0, raw):
                violations += 1

        return trials, violations, worst, {"g_min": g_min, "tol": tol}

    return _timed("bracketing", run)


class _FlowInstance:
    """
    Per-sample flow losses of a small random model as a function of the features.
    """

    def __init__(self, rng: np.random.Generator, samples: int):
        action_dim, horizon, feature_dim, width, tokens = 2, 1, 3, 8, 2

        self.model = VectorFieldModel(action_dim, horizon, feature_dim, width, seed=int(rng.integers(2**31)))
        flat = action_dim * horizon

        t = rng.uniform(size=samples)
        x0 = rng.standard_normal((samples, flat))
        x1 = rng.standard_normal((samples, flat))

        self.t = torch.as_tensor(t)
        self.xt = torch.as_tensor((1.0 - t)[:, None] * x0 + t[:, None] * x1)
        self.target = torch.as_tensor(x1 - x0)
        self.features = rng.standard_normal((samples, tokens, feature_dim))

    def losses(self, features: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            return flow_losses(self.model, self.xt, self.t, self.target, torch.as_tensor(features)).numpy()

    def gradients(self, features: np.ndarray) -> np.ndarray:
        feats = torch.as_tensor(features).clone().requires_grad_(True)
        losses = flow_losses(self.model, self.xt, self.t, self.target, feats)
        (grad,) = torch.autograd.grad(losses.sum(), feats)

        return grad.numpy()


class _QuadraticInstance:
    """
    ``l_i(H) = |A vec(H_i) - y_i|^2 / 2`` with exact smoothness ``sigma_max(A^T A)``.
    """

    def __init__(self, rng: np.random.Generator, samples: int):
        tokens, feature_dim = 2, 3
        size = tokens * feature_dim

        self.matrix = rng.standard_normal((size, size)) / math.sqrt(size)
        self.targets = rng.standard_normal((samples, size))
        self.features = rng.standard_normal((samples, tokens, feature_dim))
        self.smoothness = float(np.linalg.eigvalsh(self.matrix.T @ self.matrix)[-1])

    def losses(self, features: np.ndarray) -> np.ndarray:
        flat = features.reshape(features.shape[0], -1)

        return 0.5 * np.sum((flat @ self.matrix.T - self.targets) ** 2, axis=1)

    def gradients(self, features: np.ndarray) -> np.ndarray:
        flat = features.reshape(features.shape[0], -1)

        return ((flat @ self.matrix.T - self.targets) @ self.matrix).reshape(features.shape)


def _aligned_field(features: np.ndarray, grads: np.ndarray) -> np.ndarray:
    grad_norms = np.linalg.norm(grads.reshape(grads.shape[0], -1), axis=1)
    feat_norms = np.linalg.norm(features.reshape(features.shape[0], -1), axis=1)

    scale = np.divide(feat_norms, grad_norms, out=np.zeros_like(grad_norms), where=grad_norms > 0)

    return -grads * scale[:, None, None]


def _curvature_quotients(instance, features, grads, step) -> np.ndarray:
    base = instance.losses(features)
    moved = instance.losses(features + step)

    sq = np.sum(step.reshape(step.shape[0], -1) ** 2, axis=1)
    linear = np.sum((grads * step).reshape(step.shape[0], -1), axis=1)

    return np.divide(2.0 * (moved - base - linear), sq, out=np.zeros_like(sq), where=sq > 0)


def _estimate_smoothness(instance, features, grads, rng: np.random.Generator, curvature_draws: int) -> float:
    """
    Largest curvature quotient over random steps in the ball of radius ``|H_i|`` around each sample.
    """

    samples = features.shape[0]
    radii = np.sqrt(np.sum(features.reshape(samples, -1) ** 2, axis=1))
    worst = 0.0

    for _ in range(curvature_draws):
        direction = rng.standard_normal(features.shape)
        direction /= np.sqrt(np.sum(direction.reshape(samples, -1) ** 2, axis=1))[:, None, None]
        step = direction * (rng.uniform(0.05, 1.0, size=samples) * radii)[:, None, None]

        worst = max(worst, float(np.max(np.abs(_curvature_quotients(instance, features, grads, step)))))

    return worst


def check_residual_improvement(
    lambda_fractions: Sequence[float] = (0.05, 0.1, 0.25, 0.5, 0.75, 1.0),
    trials: int = 200,
    seed: int = 0,
    *,
    loss: ResidualLoss = ResidualLoss.flow,
    g_min: float = DEFAULT_G_MIN,
    samples: int = 8,
    curvature_draws: int = 32,
    smoothness_scale: float = 1.0,
) -> CheckReport:
    """
    Certify the gated residual improvement bound inside its admissible window.

    Each trial uses the aligned test field ``R(H) = -grad l(H) / |grad l(H)| * |H|`` (so
    ``B_R = 1``) and random gates in ``[g_min, 1]``. It measures ``alpha0 = -E[g <grad l, R>]``,
    estimates ``L_H`` and ``C_H`` and checks
    ``E[l(H~)] <= E[l(H)] - alpha0 * lambda / 2`` at ``lambda = f * lambda_max`` for each
    fraction ``f``, with ``lambda_max = 2 alpha0 / (L_H B_R^2 C_H^2)``.

    For the ``flow`` family ``L_H`` is estimated once per trial, before any update is chosen,
    from ``curvature_draws`` random steps in the ball of radius ``|H_i|`` and enlarged by the safety
    factor. The ``quadratic`` family uses its exact smoothness constant. ``smoothness_scale``
    multiplies either value; updates that break the bound are counted as violations.

    Raises
    ------
    :exc:`DegenerateInstance`
        A trial has ``alpha0 <= 0``.
    """

    fractions = sorted(float(f) for f in lambda_fractions)
    bound = 1.0

    if not smoothness_scale > 0:
        raise VerificationError(f"smoothness_scale must be > 0, got {smoothness_scale}")

    def run():
        violations = 0
        worst = math.inf
        alpha_min = math.inf
        lambda_maxes = []
        reach = 0.0

        for trial in range(trials):
            rng = derive_rng(seed, STREAM_CHECK, 2, trial)
            instance = _FlowInstance(rng, samples) if loss is ResidualLoss.flow else _QuadraticInstance(rng, samples)

            features = instance.features
            gates = rng.uniform(g_min, 1.0, size=samples)
            grads = instance.gradients(features)
            field_values = _aligned_field(features, grads)

            inner = np.sum((grads * field_values).reshape(samples, -1), axis=1)
            alpha0 = float(-np.mean(gates * inner))

            if not alpha0 > 0:
                _log.error("residual improvement trial %d is degenerate (alpha0 = %.3g)", trial, alpha0)
                raise DegenerateInstance(f"trial {trial} has alpha0 = {alpha0:.3g} <= 0")

            alpha_min = min(alpha_min, alpha0)
            sq_norms = np.sum(features.reshape(samples, -1) ** 2, axis=1)
            c_hat = _SAFETY * math.sqrt(float(np.mean(sq_norms)))

            if loss is ResidualLoss.quadratic:
                l_hat = instance.smoothness
            else:
                l_hat = _SAFETY * max(_estimate_smoothness(instance, features, grads, rng, curvature_draws), 1e-8)

            l_hat *= smoothness_scale

            lambda_max = 2.0 * alpha0 / (l_hat * bound**2 * c_hat**2)
            lambda_maxes.append(lambda_max)
            # largest step relative to |H_i|; above one the update leaves the sampled ball
            reach = max(reach, lambda_max * float(np.max(gates)))

            before = float(np.mean(instance.losses(features)))

            for f in fractions:
                lam = f * lambda_max
                after = float(np.mean(instance.losses(features + lam * gates[:, None, None] * field_values)))

                margin = (before - alpha0 * lam / 2.0) - after
                worst = min(worst, margin)

                if margin < -1e-12 * max(1.0, abs(before)):
                    violations += 1

        parameters = {
            "loss": loss.value,
            "fractions": fractions,
            "bound": bound,
            "g_min": g_min,
            "curvature_draws": curvature_draws,
            "smoothness_scale": smoothness_scale,
            "alpha0_min": alpha_min,
            "lambda_max_median": float(np.median(lambda_maxes)) if lambda_maxes else 0.0,
            "max_reach": reach,
        }

        return trials, violations, worst, parameters

    return _timed("residual_improvement", run)


def check_contraction(trials: int = 50, seed: int = 0, *, iterations: int = 60, slack: float = 1e-9) -> CheckReport:
    """
    Certify ``|Z_k - Z*| <= rho^k |Z_0 - Z*|`` on random SPD fixed-gate fields, plus convergence of
    two starts to the same fixed point.
    """

    def run():
        violations = 0
        worst = math.inf
        spread = 0.0

        for trial in range(trials):
            rng = derive_rng(seed, STREAM_CHECK, 3, trial)
            field_ = random_spd_field(rng)
            rho = contraction_rate(field_)

            start = field_.fixed_point + rng.standard_normal(field_.fixed_point.shape)
            initial = float(np.linalg.norm(start - field_.fixed_point))

            _, ratios = fixed_gate_iterate(field_, start, iterations)
            distances = initial * np.cumprod(ratios)

            for k, (ratio, distance) in enumerate(zip(ratios, distances), start=1):
                margin = min(rho - ratio, rho**k * initial - distance)
                worst = min(worst, margin)

                if ratio > rho + slack or distance > rho**k * initial + slack * max(1.0, initial):
                    violations += 1

            fast = ContractionField(field_.matrix, field_.fixed_point, field_.mu / field_.lipschitz**2)
            first, _ = fixed_gate_iterate(fast, rng.standard_normal(field_.fixed_point.shape) * 10, 2000)
            second, _ = fixed_gate_iterate(fast, rng.standard_normal(field_.fixed_point.shape) * 10, 2000)

            gap = float(np.linalg.norm(first - second))
            spread = max(spread, gap)

            if gap > 1e-8:
                violations += 1

        return trials, violations, worst, {"iterations": iterations, "slack": slack, "uniqueness_spread": spread}

    return _timed("contraction", run)


def check_concentration(
    projections: Sequence[int] = (8, 32, 128, 512),
    repeats: int = 200,
    seed: int = 0,
    *,
    tau: float = 1.0,
    g_min: float = DEFAULT_G_MIN,
    radius: float = 1.0,
    points: int = 16,
    dim: int = 3,
    identical: bool = False,
    slope_window: Tuple[float, float] = (-0.65, -0.35),
) -> CheckReport:
    """
    Certify the ``M^(-1/2)`` concentration of the sliced estimator and its propagation through the gate.

    Fits the log-log slope of the across-repeat standard deviation against ``M``, checks every
    per-direction term against the range ``(2R)^2`` and checks
    ``|g(D) - g(mean D)| <= tau |D - mean D|`` on every repeat.
    """

    cfg = GateConfig(tau=tau, g_min=g_min)
    lipschitz = gate_lipschitz_bound(cfg)

    def in_ball(rng: np.random.Generator) -> np.ndarray:
        cloud = rng.standard_normal((points, dim))
        norms = np.linalg.norm(cloud, axis=1, keepdims=True)

        return cloud / np.maximum(norms, 1.0) * radius

    def run():
        rng = derive_rng(seed, STREAM_CHECK, 4)
        mu = EmpiricalMeasure(in_ball(rng))
        nu = mu if identical else EmpiricalMeasure(in_ball(rng))

        violations = 0
        worst = math.inf
        stddevs = []
        term_range = (2.0 * radius) ** 2

        for m in projections:
            estimates = []

            for r in range(repeats):
                terms = sliced_w2_terms(mu, nu, m, derive_seed(seed, m, r))
                estimates.append(float(np.mean(terms)))

                if float(np.max(terms)) > term_range + 1e-12:
                    violations += 1

            estimates = np.asarray(estimates)
            center = float(np.mean(estimates))
            g_center = gate(center, cfg)

            for value in estimates:
                margin = lipschitz * abs(value - center) - abs(gate(value, cfg) - g_center)
                worst = min(worst, margin)

                if margin < -1e-12:
                    violations += 1

            stddevs.append(float(np.std(estimates, ddof=1)) if repeats > 1 else 0.0)

        parameters: Dict[str, Any] = {
            "projections": list(projections),
            "repeats": repeats,
            "stddevs": stddevs,
            "tau": tau,
            "term_range": term_range,
        }

        if all(s > 0 for s in stddevs):
            slope = float(np.polyfit(np.log(projections), np.log(stddevs), 1)[0])
            parameters["slope"] = slope

            slope_margin = min(slope - slope_window[0], slope_window[1] - slope)
            worst = min(worst, slope_margin)

            if slope_margin < 0:
                violations += 1

        elif any(s > 0 for s in stddevs):
            violations += 1
            parameters["slope"] = None

        else:
            parameters["slope"] = None

        return repeats * len(projections), violations, worst if math.isfinite(worst) else 0.0, parameters

    return _timed("concentration", run)


def run_all_checks(cfg: VerifyConfig, seed: int = 0) -> List[CheckReport]:
    """
    Run the checks selected by ``cfg.checks`` in their canonical order.
    """

    runners: Dict[str, Callable[[], CheckReport]] = {
        "gated_descent": lambda: check_gated_descent(cfg.descent_trials, seed, g_min=cfg.g_min),
        "bracketing": lambda: check_bracketing(cfg.bracketing_trials, seed, g_min=cfg.g_min),
        "residual_improvement": lambda: check_residual_improvement(
            cfg.lambda_fractions, cfg.residual_trials, seed, loss=cfg.residual_loss, g_min=cfg.g_min
        ),
        "contraction": lambda: check_contraction(cfg.contraction_trials, seed),
        "concentration": lambda: check_concentration(
            cfg.projections, cfg.concentration_repeats, seed, tau=cfg.tau, g_min=cfg.g_min
        ),
    }

    return [runners[name]() for name in CHECK_NAMES if name in cfg.checks]


def format_table(reports: Sequence[CheckReport]) -> str:
    """
    Plain-text pass table, one row per report.
    """

    header = f"{'check':<22} {'trials':>7} {'violations':>10} {'worst margin':>14}  result"
    rows = [header, "-" * len(header)]

    for report in reports:
        rows.append(
            f"{report.name:<22} {report.trials:>7} {report.violations:>10} {report.worst_margin:>14.3e}  "
            f"{'pass' if report.passed else 'FAIL'}"
        )

    return "\n".join(rows)
