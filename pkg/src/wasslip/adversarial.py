"""Adversarial risk under norm-bounded input perturbations, and its machine
check against the distributionally robust value.

The attack never touches labels, so pushing every atom by its perturbation
keeps the empirical measure inside the transport ball of radius
max_i ||delta_i||; the dual robust value at rho = epsilon therefore upper
bounds the adversarial risk for any kappa.  PGD/FGSM report lower bounds on
the inner maximum (which only makes the inequality easier); GRID mode makes
the check sharp in two dimensions by sweeping a lattice plus a dense boundary
ring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from wasslip.measures import (
    DiscreteMeasure,
    LabeledPoint,
    PointSet,
    ball_contains,
    cost_matrix,
    transport_cost,
)
from wasslip.models import BoundMode, Model, loss_and_grad_x, loss_value
from wasslip.numerics import NormTag, as_vector, norm
from wasslip.robust import (
    RobustInstance,
    primal_robust_risk_lp,
    robust_certificate_for,
)
from wasslip.seeding import derive_rng


@dataclass(frozen=True)
class BallSpec:
    norm: NormTag
    epsilon: float

    def __post_init__(self):
        if self.epsilon < 0.0 or not math.isfinite(self.epsilon):
            raise ValueError("epsilon must be finite and non-negative")


@dataclass(frozen=True)
class AttackConfig:
    method: str = "PGD"  # PGD | FGSM | GRID
    steps: int = 40
    step_size: float | None = None  # default: 2.5 * epsilon / steps
    restarts: int = 3
    seed: int = 0
    grid_points: int = 41

    def __post_init__(self):
        if self.method not in ("PGD", "FGSM", "GRID"):
            raise ValueError(f"unknown attack method {self.method!r}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.step_size is not None and self.step_size <= 0.0:
            raise ValueError("step_size must be positive")


@dataclass(frozen=True)
class AttackResult:
    perturbations: np.ndarray
    losses: np.ndarray
    adversarial_risk: float
    method: str
    epsilon: float
    norm: NormTag


def _project_l1(v: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto the l1 ball via the sorted simplex projection."""
    if float(np.sum(np.abs(v))) <= radius:
        return v
    u = np.sort(np.abs(v))[::-1]
    cumsum = np.cumsum(u)
    ks = np.arange(1, v.size + 1)
    mask = u > (cumsum - radius) / ks
    k = int(np.max(np.nonzero(mask)[0])) + 1
    theta = (cumsum[k - 1] - radius) / k
    return np.sign(v) * np.maximum(np.abs(v) - theta, 0.0)


def project_ball(v: np.ndarray, ball: BallSpec) -> np.ndarray:
    v = as_vector(v)
    eps = ball.epsilon
    if ball.norm == NormTag.LINF:
        return np.clip(v, -eps, eps)
    if ball.norm == NormTag.L2:
        nv = math.sqrt(float(np.dot(v, v)))
        return v if nv <= eps else v * (eps / nv)
    return _project_l1(v, eps)


def _ascent_direction(g: np.ndarray, tag: NormTag) -> np.ndarray:
    if tag == NormTag.LINF:
        return np.sign(g)
    if tag == NormTag.L2:
        ng = math.sqrt(float(np.dot(g, g)))
        return g / ng if ng > 0.0 else g
    # steepest ascent for an l1 budget: put everything on the best coordinate
    out = np.zeros_like(g)
    i = int(np.argmax(np.abs(g)))
    out[i] = math.copysign(1.0, g[i])
    return out


def _random_start(rng: np.random.Generator, dim: int, ball: BallSpec) -> np.ndarray:
    if ball.norm == NormTag.LINF:
        return rng.uniform(-ball.epsilon, ball.epsilon, dim)
    if ball.norm == NormTag.L2:
        direction = rng.standard_normal(dim)
        nd = math.sqrt(float(np.dot(direction, direction)))
        if nd == 0.0:
            return np.zeros(dim)
        radius = ball.epsilon * rng.uniform() ** (1.0 / dim)
        return direction / nd * radius
    return project_ball(rng.uniform(-ball.epsilon, ball.epsilon, dim), ball)


def pgd_attack(
    model: Model,
    x,
    y: int,
    ball: BallSpec,
    steps: int = 40,
    step_size: float | None = None,
    rng: np.random.Generator | None = None,
    restarts: int = 3,
    extra_starts: Sequence[np.ndarray] = (),
) -> tuple[np.ndarray, float]:
    """Projected gradient ascent on the loss over the perturbation ball.

    Best iterate over {zero start, extra starts, `restarts` random starts};
    the zero start guarantees the result never falls below the clean loss.
    """
    x = as_vector(x)
    if ball.epsilon == 0.0:
        return np.zeros_like(x), loss_value(model, x, y)
    step = step_size if step_size is not None else 2.5 * ball.epsilon / steps
    starts = [np.zeros_like(x)]
    starts.extend(project_ball(np.asarray(s, dtype=float), ball) for s in extra_starts)
    if restarts > 0:
        if rng is None:
            raise ValueError("random restarts need a generator")
        starts.extend(_random_start(rng, x.size, ball) for _ in range(restarts))

    best_delta = np.zeros_like(x)
    best_loss = -math.inf
    for start in starts:
        delta = start.copy()
        value = loss_value(model, x + delta, y)
        if value > best_loss:
            best_loss, best_delta = value, delta.copy()
        for _ in range(steps):
            value, grad = loss_and_grad_x(model, x + delta, y)
            direction = _ascent_direction(grad, ball.norm)
            if not direction.any():
                break
            delta = project_ball(delta + step * direction, ball)
            value = loss_value(model, x + delta, y)
            if value > best_loss:
                best_loss, best_delta = value, delta.copy()
    return best_delta, float(best_loss)


def fgsm_attack(model: Model, x, y: int, ball: BallSpec) -> tuple[np.ndarray, float]:
    """Single normalized gradient step from the clean point, then project.
    Falls back to the clean point when the step does not increase the loss,
    so the reported loss never drops below the clean one."""
    x = as_vector(x)
    clean = loss_value(model, x, y)
    if ball.epsilon == 0.0:
        return np.zeros_like(x), clean
    _, grad = loss_and_grad_x(model, x, y)
    delta = project_ball(ball.epsilon * _ascent_direction(grad, ball.norm), ball)
    value = loss_value(model, x + delta, y)
    if value < clean:
        return np.zeros_like(x), clean
    return delta, value


def _boundary_ring(ball: BallSpec, count: int) -> np.ndarray:
    """Dense boundary sample of a 2-D ball; the maximum of a convex loss over
    the ball lives on the boundary, so this is where resolution matters."""
    eps = ball.epsilon
    ts = np.linspace(0.0, 1.0, count, endpoint=False)
    if ball.norm == NormTag.L2:
        ang = 2.0 * math.pi * ts
        return np.stack([eps * np.cos(ang), eps * np.sin(ang)], axis=1)
    if ball.norm == NormTag.LINF:
        side = np.linspace(-eps, eps, max(count // 4, 2))
        edges = [
            np.stack([side, np.full_like(side, eps)], axis=1),
            np.stack([side, np.full_like(side, -eps)], axis=1),
            np.stack([np.full_like(side, eps), side], axis=1),
            np.stack([np.full_like(side, -eps), side], axis=1),
        ]
        return np.concatenate(edges, axis=0)
    # l1 diamond
    side = np.linspace(0.0, eps, max(count // 4, 2))
    quads = [
        np.stack([side, eps - side], axis=1),
        np.stack([-side, eps - side], axis=1),
        np.stack([side, side - eps], axis=1),
        np.stack([-side, side - eps], axis=1),
    ]
    return np.concatenate(quads, axis=0)


def grid_attack(model: Model, x, y: int, ball: BallSpec, points_per_dim: int = 41) -> tuple[np.ndarray, float]:
    """Exhaustive sweep over a lattice inside the ball plus a dense boundary
    ring; only supported in one or two input dimensions."""
    x = as_vector(x)
    if x.size > 2:
        raise ValueError("grid attack only supports 1- or 2-D inputs")
    eps = ball.epsilon
    if eps == 0.0:
        return np.zeros_like(x), loss_value(model, x, y)
    axis = np.linspace(-eps, eps, points_per_dim)
    if x.size == 1:
        candidates = axis[:, None]
    else:
        gx, gy = np.meshgrid(axis, axis, indexing="ij")
        candidates = np.stack([gx.ravel(), gy.ravel()], axis=1)
        candidates = np.concatenate([candidates, _boundary_ring(ball, 16 * points_per_dim)], axis=0)
    candidates = np.concatenate([np.zeros((1, x.size)), candidates], axis=0)
    best_delta = np.zeros_like(x)
    best_loss = -math.inf
    for delta in candidates:
        if norm(delta, ball.norm) > eps * (1.0 + 1e-12):
            continue
        value = loss_value(model, x + delta, y)
        if value > best_loss:
            best_loss, best_delta = value, delta.copy()
    return best_delta, float(best_loss)


def adversarial_risk(
    model: Model,
    mu: DiscreteMeasure,
    ball: BallSpec,
    config: AttackConfig = AttackConfig(),
    warm_starts: Sequence[np.ndarray] = (),
) -> AttackResult:
    """Weighted average of per-sample worst-case losses.

    Each element of `warm_starts` holds one extra PGD starting point per atom
    (shape n x dim); sweeping epsilon upward while passing the previous optima
    makes the reported risk monotone in epsilon by construction.
    """
    n = len(mu)
    dim = mu.support.dim
    deltas = np.zeros((n, dim))
    losses = np.zeros(n)
    for i, p in enumerate(mu.support.points):
        if config.method == "GRID":
            delta, value = grid_attack(model, p.x, p.y, ball, config.grid_points)
        elif config.method == "FGSM":
            delta, value = fgsm_attack(model, p.x, p.y, ball)
        else:
            extra = [np.asarray(ws[i], dtype=float) for ws in warm_starts]
            rng = derive_rng(config.seed, f"attack/{i}")
            delta, value = pgd_attack(
                model,
                p.x,
                p.y,
                ball,
                steps=config.steps,
                step_size=config.step_size,
                rng=rng,
                restarts=config.restarts,
                extra_starts=extra,
            )
        feasibility = norm(delta, ball.norm) if delta.any() else 0.0
        if feasibility > ball.epsilon + 1e-9:
            raise RuntimeError(f"attack produced an infeasible perturbation of norm {feasibility}")
        deltas[i] = delta
        losses[i] = value
    risk = float(np.dot(mu.weights, losses))
    return AttackResult(deltas, losses, risk, config.method, ball.epsilon, ball.norm)


@dataclass(frozen=True)
class AdversarialBoundVerdict:
    passed: bool
    adversarial_risk: float
    robust_value: float
    lp_oracle_value: float | None
    pushforward_cost: float
    max_perturbation_norm: float
    checks: tuple

    def failures(self) -> list:
        return [name for name, ok in self.checks if not ok]


def check_adversarial_bound(
    model: Model,
    instance: RobustInstance,
    ball: BallSpec,
    config: AttackConfig = AttackConfig(),
    bound_mode: BoundMode = BoundMode.CERTIFIED,
    grid_cross_check: bool = False,
) -> AdversarialBoundVerdict:
    """Machine check that the adversarial risk sits below the robust value.

    Requires the instance to be aligned with the attack: radius = epsilon and
    input norm = ball norm.  Also verifies the attack-induced pushforward
    measure lies inside the transport ball (via the coupling LP) and, when
    candidate targets are present, that the restricted primal LP already
    dominates the attack.
    """
    if instance.rho != ball.epsilon:
        raise ValueError("instance radius must equal the attack epsilon")
    if instance.metric.x_norm != ball.norm:
        raise ValueError("instance input norm must match the attack ball norm")

    mu = instance.empirical
    result = adversarial_risk(model, mu, ball, config)
    risks = [("pgd", result)]
    if grid_cross_check and mu.support.dim <= 2:
        risks.append(("grid", adversarial_risk(model, mu, ball, AttackConfig(method="GRID", grid_points=config.grid_points))))

    cert = robust_certificate_for(model, instance, bound_mode)

    checks = []
    for name, res in risks:
        checks.append((f"adversarial_risk_{name}_le_robust_value", res.adversarial_risk <= cert.robust_value + 1e-8))

    # the attack map keeps labels, so its pushforward must stay in the ball
    attacked = attack_pushforward(mu, result)
    max_norm = max((norm(d, ball.norm) for d in result.perturbations), default=0.0)
    costs = cost_matrix(instance.metric, mu.support, attacked.support)
    inside = ball_contains(mu, attacked, costs, max_norm)
    checks.append(("attack_pushforward_inside_ball", inside))
    push_cost = transport_cost(mu, attacked, costs)

    # restricted primal on a target set containing the attacked points: it
    # must already dominate the attack, and the dual must dominate it
    extra = list(instance.candidate_targets.points) if instance.candidate_targets is not None else []
    aug_targets = PointSet(
        tuple(list(attacked_targets(instance, result).points) + extra), mu.support.label_count
    )
    aug_instance = RobustInstance(mu, instance.metric, instance.rho, aug_targets)
    losses = np.array([loss_value(model, t.x, t.y) for t in aug_targets.points])
    lp_value = primal_robust_risk_lp(aug_instance, losses)
    checks.append(("lp_oracle_ge_attack", lp_value >= result.adversarial_risk - 1e-8))
    checks.append(("robust_value_ge_lp_oracle", cert.robust_value >= lp_value - 1e-9))

    return AdversarialBoundVerdict(
        passed=all(ok for _, ok in checks),
        adversarial_risk=result.adversarial_risk,
        robust_value=cert.robust_value,
        lp_oracle_value=lp_value,
        pushforward_cost=push_cost,
        max_perturbation_norm=max_norm,
        checks=tuple(checks),
    )


def attack_pushforward(mu: DiscreteMeasure, result: AttackResult) -> DiscreteMeasure:
    """Image of mu under the attack map x -> x + delta(x); index-aligned."""
    points = tuple(
        LabeledPoint(p.x + d, p.y) for p, d in zip(mu.support.points, result.perturbations)
    )
    return DiscreteMeasure(PointSet(points, mu.support.label_count), mu.weights.copy())


def attacked_targets(instance: RobustInstance, result: AttackResult) -> PointSet:
    """Candidate-target set containing the support and the attacked points."""
    support = instance.empirical.support
    points = list(support.points)
    for p, delta in zip(support.points, result.perturbations):
        points.append(LabeledPoint(p.x + delta, p.y))
    return PointSet(tuple(points), support.label_count)
