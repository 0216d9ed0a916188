"""Seeded instance builders and the named verification checks behind the
`verify` command.

Each check pits an implementation against an independent route to the same
quantity (restricted primal LP vs. the dual, coupling LPs vs. Lipschitz
contraction, exhaustive grids vs. analytic collapse) on freshly seeded
instances, and reports a verdict with enough diagnostics to debug a failure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from wasslip.adversarial import AttackConfig, BallSpec, check_adversarial_bound
from wasslip.measures import (
    DiscreteMeasure,
    LabeledPoint,
    MetricSpec,
    PointSet,
    cost_matrix,
    empirical_from_samples,
    transport_cost,
)
from wasslip.models import (
    ActivationTag,
    BoundMode,
    LinearSoftmax,
    MLP,
    MLPLayer,
    ce_lipschitz_bound,
    ce_slice_lipschitz,
    empirical_lipschitz,
    mlp_forward,
    network_lipschitz_bound,
    phi_apply,
    phi_lipschitz_bound,
)
from wasslip.numerics import NormTag, operator_norm
from wasslip.robust import (
    RobustInstance,
    check_envelope_collapse,
    grid_targets,
    minimize_dual_on_targets,
    primal_robust_risk_lp,
    pushforward_risk,
)
from wasslip.seeding import derive_rng

_NORMS = (NormTag.L1, NormTag.L2, NormTag.LINF)


@dataclass(frozen=True)
class VerdictRecord:
    name: str
    passed: bool
    details: dict

    def to_json_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "details": self.details}


# ---------------------------------------------------------------------------
# seeded builders


def seeded_points(rng: np.random.Generator, n: int, dim: int, k: int, spread: float = 1.0) -> PointSet:
    xs = spread * rng.standard_normal((n, dim))
    ys = rng.integers(0, k, n)
    return PointSet(tuple(LabeledPoint(x, int(y)) for x, y in zip(xs, ys)), k)


def seeded_weights(rng: np.random.Generator, n: int) -> np.ndarray:
    w = rng.uniform(0.1, 1.0, n)
    return w / w.sum()


def seeded_linear_model(rng: np.random.Generator, dim: int, k: int, scale: float = 1.0) -> LinearSoftmax:
    return LinearSoftmax(scale * rng.standard_normal((k, dim)))


def seeded_mlp(
    rng: np.random.Generator,
    dims: list,
    activation: ActivationTag = ActivationTag.RELU,
    scale: float = 1.0,
    bias: bool = False,
) -> MLP:
    layers = []
    for i in range(len(dims) - 1):
        W = scale / math.sqrt(dims[i]) * rng.standard_normal((dims[i + 1], dims[i]))
        b = 0.1 * rng.standard_normal(dims[i + 1]) if bias else None
        act = activation if i < len(dims) - 2 else ActivationTag.IDENTITY
        layers.append(MLPLayer(W, act, b))
    return MLP(tuple(layers))


def seeded_finite_instance(rng: np.random.Generator, max_atoms: int = 8, max_targets: int = 20, max_labels: int = 4):
    """A finite robust instance with an arbitrary loss table on its targets:
    support atoms plus extra candidate atoms, random weights, random radius."""
    k = int(rng.integers(2, max_labels + 1))
    dim = 2
    n = int(rng.integers(1, max_atoms + 1))
    extra = int(rng.integers(0, max_targets - n + 1))
    support = seeded_points(rng, n, dim, k, spread=1.5)
    extra_points = seeded_points(rng, extra, dim, k, spread=2.0).points if extra else ()
    targets = PointSet(tuple(support.points) + tuple(extra_points), k)
    kappa = float(rng.choice([0.5, 1.0, 2.0, math.inf]))
    metric = MetricSpec(_NORMS[int(rng.integers(0, len(_NORMS)))], kappa, k)
    mu = DiscreteMeasure(support, seeded_weights(rng, n))
    rho = float(rng.uniform(0.0, 2.0))
    instance = RobustInstance(mu, metric, rho, targets)
    losses = rng.uniform(-2.0, 3.0, len(targets))
    return instance, losses


# ---------------------------------------------------------------------------
# named checks


def check_strong_duality(seed: int, instances: int = 100) -> VerdictRecord:
    """Restricted dual vs. restricted primal LP on seeded finite instances."""
    rng = derive_rng(seed, "verify/strong-duality")
    worst = 0.0
    for _ in range(instances):
        instance, losses = seeded_finite_instance(rng)
        dual = minimize_dual_on_targets(instance, losses)
        lp = primal_robust_risk_lp(instance, losses)
        rel = abs(dual.value - lp) / (1.0 + abs(dual.value))
        worst = max(worst, rel)
    return VerdictRecord(
        "strong_duality",
        worst <= 1e-6,
        {"instances": instances, "worst_relative_gap": worst, "tolerance": 1e-6},
    )


def _huber(x: np.ndarray) -> float:
    r = float(np.sqrt(np.dot(x, x)))
    return r * r if r <= 1.0 else 2.0 * r - 1.0


def check_envelope_collapse_suite(seed: int, points_per_dim: int = 65) -> VerdictRecord:
    """Penalized-supremum collapse for |x|, a clipped quadratic, and softmax
    cross-entropy slices: equality when gamma dominates the Lipschitz
    constant, unbounded growth when it does not."""
    rng = derive_rng(seed, "verify/envelope")
    cases = []

    cases.append(("abs_equality", lambda v: abs(float(v[0])), 2.0, np.array([0.0]), True))
    cases.append(("abs_growth", lambda v: abs(float(v[0])), 0.5, np.array([0.0]), False))
    cases.append(("huber_equality", _huber, 2.5, np.array([0.3]), True))
    cases.append(("huber_growth", _huber, 1.0, np.array([-0.2]), False))

    model = seeded_linear_model(rng, 2, 3, scale=0.8)
    z = rng.standard_normal(2)
    y = int(rng.integers(0, 3))

    def ce_slice(v: np.ndarray) -> float:
        zlogits = model.logits(v)
        m = float(np.max(zlogits))
        return m + math.log(float(np.sum(np.exp(zlogits - m)))) - float(zlogits[y])

    certified = ce_lipschitz_bound(model, NormTag.L2, BoundMode.CERTIFIED)
    tight = ce_slice_lipschitz(model, y, NormTag.L2)
    cases.append(("ce_slice_equality", ce_slice, certified, z, True))
    cases.append(("ce_slice_growth", ce_slice, 0.5 * tight, z, False))

    details = {}
    passed = True
    for name, psi, gamma, center, expect_equality in cases:
        verdict = check_envelope_collapse(psi, gamma, center, points_per_dim=points_per_dim)
        ok = (verdict.equality_holds and not verdict.growth_detected) if expect_equality else verdict.growth_detected
        details[name] = {
            "gamma": gamma,
            "sup_values": list(verdict.sup_values),
            "equality_gap": verdict.equality_gap,
            "ok": ok,
        }
        passed = passed and ok
    return VerdictRecord("envelope_collapse", passed, details)


def check_pushforward_containment(seed: int, triples: int = 50) -> VerdictRecord:
    """Lipschitz maps contract transport balls: cost between image measures
    is at most lip(phi) times the input cost, checked by coupling LPs."""
    rng = derive_rng(seed, "verify/pushforward-containment")
    worst = -math.inf
    count_inside = 0
    for _ in range(triples):
        k = int(rng.integers(2, 4))
        n = int(rng.integers(2, 7))
        support = seeded_points(rng, n, 2, k, spread=1.2)
        mu = DiscreteMeasure(support, seeded_weights(rng, n))
        nu0 = DiscreteMeasure(support, seeded_weights(rng, n))
        kappa = float(rng.choice([0.5, 1.0, 2.0]))
        metric = MetricSpec(NormTag.L2, kappa, k)
        costs = cost_matrix(metric, support, support)
        rho = float(rng.uniform(0.1, 1.0))
        base_cost = transport_cost(mu, nu0, costs)
        t = 1.0 if base_cost <= 0.9 * rho else 0.9 * rho / base_cost
        nu = DiscreteMeasure(support, (1.0 - t) * mu.weights + t * nu0.weights)
        cost_in = transport_cost(mu, nu, costs)

        depth = int(rng.integers(1, 3))
        dims = [2] + [int(rng.integers(2, 4)) for _ in range(depth)]
        layers = []
        for i in range(len(dims) - 1):
            layers.append(
                MLPLayer(
                    0.9 * rng.standard_normal((dims[i + 1], dims[i])),
                    ActivationTag.RELU if i < len(dims) - 2 else ActivationTag.IDENTITY,
                )
            )
        lip_phi = phi_lipschitz_bound(layers, NormTag.L2)

        def phi_map(p: LabeledPoint) -> LabeledPoint:
            return LabeledPoint(phi_apply(layers, p.x), p.y)

        image_points = tuple(phi_map(p) for p in support.points)
        image_support = PointSet(image_points, k)
        feature_metric = MetricSpec(NormTag.L2, max(kappa * lip_phi, 1e-9), k)
        feature_costs = cost_matrix(feature_metric, image_support, image_support)
        mu_img = DiscreteMeasure(image_support, mu.weights.copy())
        nu_img = DiscreteMeasure(image_support, nu.weights.copy())
        cost_out = transport_cost(mu_img, nu_img, feature_costs)

        worst = max(worst, cost_out - lip_phi * cost_in)
        if cost_out <= lip_phi * rho + 1e-8:
            count_inside += 1
    passed = worst <= 1e-8 and count_inside == triples
    return VerdictRecord(
        "pushforward_containment",
        passed,
        {"triples": triples, "worst_contraction_slack": worst, "inside_scaled_ball": count_inside},
    )


def check_pushforward_bound(seed: int, cases: int = 10, grid_side: int = 7) -> VerdictRecord:
    """Feature-space certificate dominates the input-space grid LP oracle."""
    rng = derive_rng(seed, "verify/pushforward-bound")
    worst = -math.inf
    for _ in range(cases):
        k = int(rng.integers(2, 4))
        n = int(rng.integers(3, 7))
        dataset = seeded_points(rng, n, 2, k, spread=1.0)
        model = seeded_mlp(rng, [2, 3, k], scale=0.9)
        kappa = float(rng.choice([1.0, math.inf]))
        metric = MetricSpec(NormTag.L2, kappa, k)
        rho = float(rng.uniform(0.05, 0.5))
        instance = RobustInstance(empirical_from_samples(dataset), metric, rho)
        instance = RobustInstance(
            instance.empirical, metric, rho, grid_targets(instance, grid_side, pad=0.1)
        )
        cert = pushforward_risk(instance, model)
        worst = max(worst, cert.oracle_value - cert.robust_value)
    return VerdictRecord(
        "pushforward_bound",
        worst <= 1e-8,
        {"cases": cases, "worst_oracle_excess": worst, "tolerance": 1e-8},
    )


def check_adversarial_bounds(
    seed: int,
    tuples: int = 30,
    epsilons: tuple = (0.01, 0.1, 0.5),
    norms: tuple = (NormTag.L2, NormTag.LINF),
) -> VerdictRecord:
    """Attack risk below the dual robust value at rho = epsilon, plus the
    coupling-LP membership check for the attack-induced pushforward."""
    rng = derive_rng(seed, "verify/adversarial")
    combos = [(eps, nrm) for eps in epsilons for nrm in norms]
    failures = []
    done = 0
    idx = 0
    while done < tuples:
        eps, nrm = combos[idx % len(combos)]
        idx += 1
        k = int(rng.integers(2, 4))
        n = int(rng.integers(3, 7))
        dataset = seeded_points(rng, n, 2, k, spread=1.0)
        deep = bool(rng.integers(0, 2))
        model = seeded_mlp(rng, [2, 3, k], scale=0.8) if deep else seeded_linear_model(rng, 2, k, scale=0.8)
        kappa = float(rng.choice([1.0, math.inf]))
        instance = RobustInstance(empirical_from_samples(dataset), MetricSpec(nrm, kappa, k), eps)
        verdict = check_adversarial_bound(
            model,
            instance,
            BallSpec(nrm, eps),
            AttackConfig(seed=int(rng.integers(0, 2**32))),
            grid_cross_check=True,
        )
        if not verdict.passed:
            failures.append({"epsilon": eps, "norm": nrm.value, "failed": verdict.failures()})
        done += 1
    return VerdictRecord(
        "adversarial_bound",
        not failures,
        {"tuples": tuples, "failures": failures},
    )


def check_lipschitz_chain(seed: int, nets: int = 50) -> VerdictRecord:
    """Sampled Lipschitz estimate <= layerwise product <= power-mean bound,
    and the separable penalty dominates the product penalty."""
    rng = derive_rng(seed, "verify/lipschitz-chain")
    worst_emp = -math.inf
    worst_young = -math.inf
    worst_penalty = -math.inf
    for i in range(nets):
        depth = int(rng.integers(1, 5))
        dims = [int(rng.integers(2, 17)) for _ in range(depth + 1)]
        model = seeded_mlp(rng, dims, scale=1.0)
        bounds = network_lipschitz_bound(model, NormTag.L2)

        def logits(x: np.ndarray) -> np.ndarray:
            out, _ = mlp_forward(model, x)
            return out

        sampler_rng = derive_rng(seed, f"verify/chain-sampler/{i}")
        emp = empirical_lipschitz(
            logits, lambda: sampler_rng.standard_normal(dims[0]), pairs=60, tag=NormTag.L2
        )
        worst_emp = max(worst_emp, emp - bounds.product)
        worst_young = max(worst_young, bounds.product - bounds.young)

        sig = [operator_norm(layer.weights, NormTag.L2) for layer in model.layers]
        l = len(sig)
        product_pen = math.sqrt(2.0) * math.prod(sig)
        spectral_pen = math.sqrt(2.0) / l * sum(s**l for s in sig)
        worst_penalty = max(worst_penalty, product_pen - spectral_pen)
    passed = worst_emp <= 1e-6 and worst_young <= 1e-9 and worst_penalty <= 1e-9
    return VerdictRecord(
        "lipschitz_chain",
        passed,
        {
            "nets": nets,
            "worst_empirical_excess": worst_emp,
            "worst_product_minus_young": worst_young,
            "worst_product_minus_spectral_penalty": worst_penalty,
        },
    )


DEFAULT_SIZES = {
    "strong_duality_instances": 25,
    "envelope_points_per_dim": 33,
    "pushforward_triples": 12,
    "pushforward_cases": 6,
    "adversarial_tuples": 6,
    "chain_nets": 10,
}


def run_verification_suite(seed: int, sizes: dict | None = None) -> list:
    cfg = dict(DEFAULT_SIZES)
    if sizes:
        cfg.update(sizes)
    return [
        check_strong_duality(seed, cfg["strong_duality_instances"]),
        check_envelope_collapse_suite(seed, cfg["envelope_points_per_dim"]),
        check_pushforward_containment(seed, cfg["pushforward_triples"]),
        check_pushforward_bound(seed, cfg["pushforward_cases"]),
        check_adversarial_bounds(seed, cfg["adversarial_tuples"]),
        check_lipschitz_chain(seed, cfg["chain_nets"]),
    ]
