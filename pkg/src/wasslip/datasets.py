"""Deterministic dataset generators and the dataset CSV format.

CSV layout: header ``label,x0,x1,...`` then one row per sample; labels are
integers in [0, k).  All generators are pure functions of their arguments.
"""

from __future__ import annotations

import math

import numpy as np

from wasslip import io
from wasslip.measures import LabeledPoint, PointSet
from wasslip.seeding import derive_rng

GENERATORS = ("gaussian-blobs", "two-moons", "grid")


def gaussian_blobs(n: int, k: int, dim: int, seed: int, std: float = 0.6, center_box: float = 3.0) -> PointSet:
    """k isotropic Gaussian clusters at seeded centers; class-major order."""
    rng = derive_rng(seed, "gen/gaussian-blobs")
    centers = rng.uniform(-center_box, center_box, (k, dim))
    counts = [n // k + (1 if c < n % k else 0) for c in range(k)]
    points = []
    for label, count in enumerate(counts):
        for _ in range(count):
            points.append(LabeledPoint(centers[label] + std * rng.standard_normal(dim), label))
    return PointSet(tuple(points), k)


def two_moons(n: int, seed: int, noise: float = 0.15) -> PointSet:
    """The standard interleaved half-circles in 2-D; classes split n//2 / n - n//2."""
    rng = derive_rng(seed, "gen/two-moons")
    n_in = n // 2
    n_out = n - n_in
    t_out = np.linspace(0.0, math.pi, n_out)
    t_in = np.linspace(0.0, math.pi, n_in)
    pts = []
    for t in t_out:
        x = np.array([math.cos(t), math.sin(t)]) + noise * rng.standard_normal(2)
        pts.append(LabeledPoint(x, 0))
    for t in t_in:
        x = np.array([1.0 - math.cos(t), 0.5 - math.sin(t)]) + noise * rng.standard_normal(2)
        pts.append(LabeledPoint(x, 1))
    return PointSet(tuple(pts), 2)


def grid(n: int, k: int, dim: int, lo: float = -1.0, hi: float = 1.0) -> PointSet:
    """A lattice of n = side**dim points; labels cycle through [0, k)."""
    side = round(n ** (1.0 / dim))
    if side**dim != n:
        raise ValueError(f"grid size {n} is not a perfect {dim}-th power")
    axes = [np.linspace(lo, hi, side) for _ in range(dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    lattice = np.stack([m.ravel() for m in mesh], axis=1)
    points = tuple(LabeledPoint(row, i % k) for i, row in enumerate(lattice))
    return PointSet(points, k)


def gen_data(kind: str, n: int, k: int, dim: int, seed: int, **params) -> PointSet:
    if kind not in GENERATORS:
        raise ValueError(f"unknown generator {kind!r}; choose one of {GENERATORS}")
    if n < k or k < 2:
        raise ValueError("need n >= k >= 2")
    if kind == "gaussian-blobs":
        return gaussian_blobs(n, k, dim, seed, **params)
    if kind == "two-moons":
        if dim != 2 or k != 2:
            raise ValueError("two-moons requires dim=2 and k=2")
        return two_moons(n, seed, **params)
    return grid(n, k, dim, **params)


def save_dataset_csv(points: PointSet, path) -> None:
    header = ["label"] + [f"x{i}" for i in range(points.dim)]
    rows = [[int(p.y)] + [float(c) for c in p.x] for p in points.points]
    io.write_csv(path, header, rows)


def load_dataset_csv(path, label_count: int | None = None) -> PointSet:
    header, rows = io.read_csv(path)
    if not header or header[0] != "label":
        raise ValueError("dataset CSV must start with a 'label' column")
    points = [LabeledPoint(np.array([float(c) for c in row[1:]]), int(row[0])) for row in rows]
    k = label_count if label_count is not None else max(p.y for p in points) + 1
    return PointSet(tuple(points), k)


def dataset_fingerprint(points: PointSet) -> str:
    header = "label," + ",".join(f"x{i}" for i in range(points.dim))
    lines = [header]
    for p in points.points:
        lines.append(",".join([str(int(p.y))] + [io.fmt_float(c) for c in p.x]))
    return io.sha256_hex("\n".join(lines).encode("utf-8"))
