"""Batch front end: dataset generation, training, certification, attacks,
and the verification suite, driven by a strict JSON config.

    wasslip <gen-data|train|certify|attack|verify> --config cfg.json [--out DIR] [--seed N]

Exit codes: 0 success/verified, 1 verification failure, 2 usage or config
error, 3 numerical failure.  Reports are byte-identical across reruns with
the same seed; wall-clock and other volatile facts go to metadata.json.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from wasslip import io
from wasslip.adversarial import AttackConfig, BallSpec, adversarial_risk
from wasslip.datasets import GENERATORS, dataset_fingerprint, gen_data, load_dataset_csv, save_dataset_csv
from wasslip.measures import MetricSpec, TransportInfeasibleError, empirical_from_samples
from wasslip.models import (
    ActivationTag,
    BoundMode,
    LinearSoftmax,
    MLP,
    MLPLayer,
    Model,
    accuracy,
    load_model,
    save_model,
)
from wasslip.numerics import NormTag, NumericalError, UnsupportedNormError
from wasslip.numerics import norm as vec_norm
from wasslip.robust import RobustInstance, grid_targets, robust_certificate_for
from wasslip.seeding import derive_rng, derive_seed
from wasslip.suite import run_verification_suite
from wasslip.train import ObjectiveKind, TrainConfig, train_loop


class ConfigError(ValueError):
    """Invalid configuration; the message carries the offending field path."""


# ---------------------------------------------------------------------------
# config validation: every key is checked, unknown keys are rejected


def _fail(path: str, msg: str):
    raise ConfigError(f"config error at {path}: {msg}")


def _check_keys(obj: dict, path: str, allowed: set):
    if not isinstance(obj, dict):
        _fail(path, "expected an object")
    for key in obj:
        if key not in allowed:
            _fail(f"{path}.{key}", "unknown key")


def _get_int(obj: dict, path: str, key: str, default=None, lo=None, hi=None, required=False):
    if key not in obj:
        if required:
            _fail(f"{path}.{key}", "required key missing")
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        _fail(f"{path}.{key}", f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        _fail(f"{path}.{key}", f"must be >= {lo}")
    if hi is not None and v > hi:
        _fail(f"{path}.{key}", f"must be <= {hi}")
    return v


def _get_float(obj: dict, path: str, key: str, default=None, lo=None, required=False, allow_inf=False):
    if key not in obj:
        if required:
            _fail(f"{path}.{key}", "required key missing")
        return default
    v = obj[key]
    if allow_inf and v == "inf":
        return math.inf
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(f"{path}.{key}", f"expected a number, got {v!r}")
    v = float(v)
    if math.isnan(v) or (not allow_inf and math.isinf(v)):
        _fail(f"{path}.{key}", "must be finite")
    if lo is not None and v < lo:
        _fail(f"{path}.{key}", f"must be >= {lo}")
    return v


def _get_str(obj: dict, path: str, key: str, default=None, choices=None, required=False):
    if key not in obj:
        if required:
            _fail(f"{path}.{key}", "required key missing")
        return default
    v = obj[key]
    if not isinstance(v, str):
        _fail(f"{path}.{key}", f"expected a string, got {v!r}")
    if choices is not None and v not in choices:
        _fail(f"{path}.{key}", f"must be one of {sorted(choices)}")
    return v


def _get_bool(obj: dict, path: str, key: str, default=None):
    if key not in obj:
        return default
    v = obj[key]
    if not isinstance(v, bool):
        _fail(f"{path}.{key}", f"expected a boolean, got {v!r}")
    return v


_NORM_CHOICES = {t.value for t in NormTag}
_MODE_CHOICES = {m.value for m in BoundMode}


def validate_config(raw: dict) -> dict:
    _check_keys(raw, "config", {"seed", "output_dir", "dataset", "model", "robust", "attack", "train", "verify"})
    cfg = {"seed": _get_int(raw, "config", "seed", required=True, lo=0)}
    if "output_dir" in raw:
        cfg["output_dir"] = _get_str(raw, "config", "output_dir", required=True)

    if "dataset" in raw:
        d = raw["dataset"]
        _check_keys(d, "dataset", {"path", "generator", "n", "k", "dim", "seed", "noise", "std", "lo", "hi"})
        if "path" in d:
            out = {"path": _get_str(d, "dataset", "path", required=True)}
            if len(d) > 1:
                _fail("dataset", "'path' cannot be combined with generator parameters")
        else:
            out = {
                "generator": _get_str(d, "dataset", "generator", choices=set(GENERATORS), required=True),
                "n": _get_int(d, "dataset", "n", required=True, lo=2),
                "k": _get_int(d, "dataset", "k", required=True, lo=2),
                "dim": _get_int(d, "dataset", "dim", required=True, lo=1),
                "seed": _get_int(d, "dataset", "seed", default=None, lo=0),
                "noise": _get_float(d, "dataset", "noise", default=0.15, lo=0.0),
                "std": _get_float(d, "dataset", "std", default=0.6, lo=0.0),
                "lo": _get_float(d, "dataset", "lo", default=-1.0),
                "hi": _get_float(d, "dataset", "hi", default=1.0),
            }
        cfg["dataset"] = out

    if "model" in raw:
        m = raw["model"]
        _check_keys(m, "model", {"path", "dims", "activation", "bias", "init_scale", "norm", "seed"})
        if "path" in m:
            out = {"path": _get_str(m, "model", "path", required=True)}
            if len(m) > 1:
                _fail("model", "'path' cannot be combined with architecture parameters")
        else:
            dims = m.get("dims")
            if not isinstance(dims, list) or len(dims) < 2 or not all(isinstance(v, int) and v >= 1 for v in dims):
                _fail("model.dims", "expected a list of >= 2 positive integers")
            out = {
                "dims": dims,
                "activation": _get_str(m, "model", "activation", default="RELU", choices={t.value for t in ActivationTag}),
                "bias": _get_bool(m, "model", "bias", default=True),
                "init_scale": _get_float(m, "model", "init_scale", default=1.0, lo=0.0),
                "norm": _get_str(m, "model", "norm", default="L2", choices=_NORM_CHOICES),
                "seed": _get_int(m, "model", "seed", default=None, lo=0),
            }
        cfg["model"] = out

    if "robust" in raw:
        r = raw["robust"]
        _check_keys(r, "robust", {"rho", "kappa", "bound_mode", "oracle_grid_side"})
        cfg["robust"] = {
            "rho": _get_float(r, "robust", "rho", required=True, lo=0.0),
            "kappa": _get_float(r, "robust", "kappa", default=math.inf, allow_inf=True),
            "bound_mode": _get_str(r, "robust", "bound_mode", default="certified", choices=_MODE_CHOICES),
            "oracle_grid_side": _get_int(r, "robust", "oracle_grid_side", default=None, lo=2),
        }
        if not cfg["robust"]["kappa"] > 0.0:
            _fail("robust.kappa", "must be positive (or \"inf\")")

    if "attack" in raw:
        a = raw["attack"]
        _check_keys(a, "attack", {"epsilons", "norm", "method", "steps", "step_size", "restarts", "grid_points", "kappa", "bound_mode"})
        eps = a.get("epsilons")
        if not isinstance(eps, list) or not eps or not all(isinstance(v, (int, float)) and not isinstance(v, bool) and v >= 0 for v in eps):
            _fail("attack.epsilons", "expected a non-empty list of numbers >= 0")
        cfg["attack"] = {
            "epsilons": [float(v) for v in eps],
            "norm": _get_str(a, "attack", "norm", default="LINF", choices=_NORM_CHOICES),
            "method": _get_str(a, "attack", "method", default="PGD", choices={"PGD", "FGSM", "GRID"}),
            "steps": _get_int(a, "attack", "steps", default=40, lo=1),
            "step_size": _get_float(a, "attack", "step_size", default=None, lo=1e-12),
            "restarts": _get_int(a, "attack", "restarts", default=3, lo=0),
            "grid_points": _get_int(a, "attack", "grid_points", default=41, lo=3),
            "kappa": _get_float(a, "attack", "kappa", default=math.inf, allow_inf=True),
            "bound_mode": _get_str(a, "attack", "bound_mode", default="certified", choices=_MODE_CHOICES),
        }

    if "train" in raw:
        t = raw["train"]
        _check_keys(t, "train", {"objective", "rho", "kappa", "learning_rate", "epochs", "batch_size", "momentum", "layer_cap", "bound_mode", "norm"})
        cfg["train"] = {
            "objective": _get_str(t, "train", "objective", required=True, choices={o.value for o in ObjectiveKind}),
            "rho": _get_float(t, "train", "rho", required=True, lo=0.0),
            "kappa": _get_float(t, "train", "kappa", default=math.inf, allow_inf=True),
            "learning_rate": _get_float(t, "train", "learning_rate", default=0.1, lo=1e-12),
            "epochs": _get_int(t, "train", "epochs", default=100, lo=0),
            "batch_size": _get_int(t, "train", "batch_size", default=None, lo=1),
            "momentum": _get_float(t, "train", "momentum", default=0.0, lo=0.0),
            "layer_cap": _get_float(t, "train", "layer_cap", default=None, lo=1e-12),
            "bound_mode": _get_str(t, "train", "bound_mode", default="certified", choices=_MODE_CHOICES),
            "norm": _get_str(t, "train", "norm", default="L2", choices=_NORM_CHOICES),
        }

    if "verify" in raw:
        v = raw["verify"]
        allowed = {
            "strong_duality_instances",
            "envelope_points_per_dim",
            "pushforward_triples",
            "pushforward_cases",
            "adversarial_tuples",
            "chain_nets",
        }
        _check_keys(v, "verify", allowed)
        cfg["verify"] = {key: _get_int(v, "verify", key, default=None, lo=1) for key in allowed if key in v}

    return cfg


# ---------------------------------------------------------------------------
# shared builders


def _load_points(cfg: dict, master_seed: int):
    section = cfg.get("dataset")
    if section is None:
        raise ConfigError("config error at dataset: section required for this command")
    if "path" in section:
        return load_dataset_csv(section["path"])
    seed = section["seed"] if section["seed"] is not None else derive_seed(master_seed, "dataset")
    params = {}
    if section["generator"] == "gaussian-blobs":
        params["std"] = section["std"]
    elif section["generator"] == "two-moons":
        params["noise"] = section["noise"]
    else:
        params["lo"], params["hi"] = section["lo"], section["hi"]
    if section["generator"] == "grid":
        return gen_data(section["generator"], section["n"], section["k"], section["dim"], seed=0, **params)
    return gen_data(section["generator"], section["n"], section["k"], section["dim"], seed, **params)


def _build_model(cfg: dict, master_seed: int, points) -> tuple[Model, NormTag]:
    section = cfg.get("model")
    if section is None:
        raise ConfigError("config error at model: section required for this command")
    if "path" in section:
        return load_model(section["path"])
    dims = section["dims"]
    if dims[0] != points.dim:
        raise ConfigError(f"config error at model.dims: first entry {dims[0]} must equal the data dimension {points.dim}")
    if dims[-1] != points.label_count:
        raise ConfigError(f"config error at model.dims: last entry {dims[-1]} must equal the label count {points.label_count}")
    seed = section["seed"] if section["seed"] is not None else derive_seed(master_seed, "model-init")
    rng = derive_rng(seed, "model-init")
    layers = []
    for i in range(len(dims) - 1):
        W = section["init_scale"] / math.sqrt(dims[i]) * rng.standard_normal((dims[i + 1], dims[i]))
        b = 0.1 * rng.standard_normal(dims[i + 1]) if section["bias"] else None
        act = ActivationTag(section["activation"]) if i < len(dims) - 2 else ActivationTag.IDENTITY
        layers.append(MLPLayer(W, act, b))
    norm_tag = NormTag(section["norm"])
    if len(layers) == 1:
        return LinearSoftmax(layers[0].weights, layers[0].bias), norm_tag
    return MLP(tuple(layers)), norm_tag


def _fingerprint(cfg: dict, points, rho: float, kappa: float, norm_tag: NormTag, bound_mode: str) -> dict:
    return {
        "dataset_sha256": dataset_fingerprint(points),
        "seed": cfg["seed"],
        "rho": rho,
        "kappa": "inf" if math.isinf(kappa) else kappa,
        "norm": norm_tag.value,
        "bound_mode": bound_mode,
    }


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(cfg: dict, out_dir: Path) -> int:
    section = cfg.get("dataset")
    if section is None or "generator" not in section:
        raise ConfigError("config error at dataset.generator: gen-data needs a generator spec")
    points = _load_points(cfg, cfg["seed"])
    save_dataset_csv(points, out_dir / "dataset.csv")
    return 0


def cmd_certify(cfg: dict, out_dir: Path) -> int:
    section = cfg.get("robust")
    if section is None:
        raise ConfigError("config error at robust: section required for certify")
    points = _load_points(cfg, cfg["seed"])
    model, norm_tag = _build_model(cfg, cfg["seed"], points)
    metric = MetricSpec(norm_tag, section["kappa"], points.label_count)
    instance = RobustInstance(empirical_from_samples(points), metric, section["rho"])
    if section["oracle_grid_side"] is not None:
        instance = RobustInstance(
            instance.empirical, metric, section["rho"], grid_targets(instance, section["oracle_grid_side"], pad=0.1)
        )
    cert = robust_certificate_for(model, instance, BoundMode(section["bound_mode"]))
    doc = cert.to_json_dict(_fingerprint(cfg, points, section["rho"], section["kappa"], norm_tag, section["bound_mode"]))
    io.dump_json(doc, out_dir / "certificate.json")
    return 0


def cmd_attack(cfg: dict, out_dir: Path) -> int:
    section = cfg.get("attack")
    if section is None:
        raise ConfigError("config error at attack: section required for attack")
    points = _load_points(cfg, cfg["seed"])
    model, _ = _build_model(cfg, cfg["seed"], points)
    norm_tag = NormTag(section["norm"])
    mode = BoundMode(section["bound_mode"])
    mu = empirical_from_samples(points)
    metric = MetricSpec(norm_tag, section["kappa"], points.label_count)
    attack_cfg = AttackConfig(
        method=section["method"],
        steps=section["steps"],
        step_size=section["step_size"],
        restarts=section["restarts"],
        seed=derive_seed(cfg["seed"], "attack"),
        grid_points=section["grid_points"],
    )

    rows = []
    sweeps = []
    warm: list = []
    prev_eps = None
    for eps in sorted(section["epsilons"]):
        ball = BallSpec(norm_tag, eps)
        starts = []
        if warm and prev_eps and prev_eps > 0:
            starts = [warm[-1], warm[-1] * (eps / prev_eps)]
        result = adversarial_risk(model, mu, ball, attack_cfg, warm_starts=starts)
        warm.append(result.perturbations)
        prev_eps = eps
        cert = robust_certificate_for(model, RobustInstance(mu, metric, eps), mode)
        rows.append([eps, result.adversarial_risk, cert.robust_value])
        sweeps.append(
            {
                "epsilon": eps,
                "adversarial_risk": result.adversarial_risk,
                "robust_value": cert.robust_value,
                "bound_holds": result.adversarial_risk <= cert.robust_value + 1e-8,
                "per_sample_losses": [float(v) for v in result.losses],
                "per_sample_norms": [
                    float(vec_norm(d, norm_tag)) if d.any() else 0.0 for d in result.perturbations
                ],
            }
        )
    doc = {
        "method": section["method"],
        "norm": norm_tag.value,
        "kappa": "inf" if math.isinf(section["kappa"]) else section["kappa"],
        "seed": attack_cfg.seed,
        "sweep": sweeps,
        "fingerprint": _fingerprint(
            cfg, points, max(section["epsilons"]), section["kappa"], norm_tag, section["bound_mode"]
        ),
    }
    io.dump_json(doc, out_dir / "attack_report.json")
    io.write_csv(out_dir / "bound_curve.csv", ["epsilon", "adversarial_risk", "robust_value"], rows)
    return 0


def cmd_train(cfg: dict, out_dir: Path) -> int:
    section = cfg.get("train")
    if section is None:
        raise ConfigError("config error at train: section required for train")
    points = _load_points(cfg, cfg["seed"])
    model, norm_tag = _build_model(cfg, cfg["seed"], points)
    train_cfg = TrainConfig(
        objective=ObjectiveKind(section["objective"]),
        rho=section["rho"],
        kappa=section["kappa"],
        learning_rate=section["learning_rate"],
        epochs=section["epochs"],
        batch_size=section["batch_size"],
        seed=derive_seed(cfg["seed"], "train"),
        momentum=section["momentum"],
        layer_cap=section["layer_cap"],
        bound_mode=BoundMode(section["bound_mode"]),
        norm=NormTag(section["norm"]),
    )
    report = train_loop(model, points, train_cfg)
    doc = report.to_json_dict()
    doc["final_accuracy"] = accuracy(report.model, points)
    doc["fingerprint"] = _fingerprint(cfg, points, section["rho"], section["kappa"], norm_tag, section["bound_mode"])
    io.dump_json(doc, out_dir / "train_report.json")
    io.write_csv(
        out_dir / "train_curves.csv",
        ["epoch", "erm", "penalty", "objective", "product_bound", "young_bound"],
        [[r.epoch, r.erm, r.penalty, r.objective, r.product_bound, r.young_bound] for r in report.records],
    )
    save_model(report.model, out_dir / "model.txt", train_cfg.norm)
    return 0


def cmd_verify(cfg: dict, out_dir: Path) -> int:
    sizes = cfg.get("verify", {})
    records = run_verification_suite(cfg["seed"], sizes)
    doc = {
        "seed": cfg["seed"],
        "all_passed": all(r.passed for r in records),
        "checks": [r.to_json_dict() for r in records],
    }
    io.dump_json(doc, out_dir / "verify_report.json")
    if not doc["all_passed"]:
        failing = [r.name for r in records if not r.passed]
        print(f"verification FAILED: {', '.join(failing)}", file=sys.stderr)
        return 1
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "certify": cmd_certify,
    "attack": cmd_attack,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="wasslip", description=__doc__)
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="path to the JSON experiment config")
    parser.add_argument("--out", default=None, help="output directory (default: config output_dir or '.')")
    parser.add_argument("--seed", type=int, default=None, help="override the master seed")
    args = parser.parse_args(argv)

    t0 = time.perf_counter()
    try:
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            print(f"config file not found: {args.config}", file=sys.stderr)
            return 2
        except json.JSONDecodeError as exc:
            print(f"config is not valid JSON: {exc}", file=sys.stderr)
            return 2
        cfg = validate_config(raw)
        if args.seed is not None:
            cfg["seed"] = args.seed
        out_dir = Path(args.out or cfg.get("output_dir", "."))
        out_dir.mkdir(parents=True, exist_ok=True)
        code = _COMMANDS[args.command](cfg, out_dir)
        io.dump_json(
            {"command": args.command, "config": str(args.config), "wall_clock_seconds": time.perf_counter() - t0},
            out_dir / "metadata.json",
        )
        return code
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except (NumericalError, TransportInfeasibleError, UnsupportedNormError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
