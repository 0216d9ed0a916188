"""Linear-softmax and MLP classifiers with cross-entropy loss, exact
reverse-mode gradients, and the Lipschitz bookkeeping the robust certificates
rely on: per-label loss constants, layerwise product bounds, the separable
power-mean relaxation of the product, and a sampled lower-bound estimator.

Two flavours of the loss constant are exposed.  OPERATOR returns the plain
operator norm of the weight matrix; CERTIFIED returns the slightly larger
constant that actually follows from the gradient identity
grad_x = W^T (p - e_y) (for L2 inputs, sqrt(2) times the spectral norm).
Certificates default to CERTIFIED because only that one is provable.
Biases are allowed everywhere but never enter a Lipschitz computation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from wasslip.io import fmt_float
from wasslip.numerics import (
    DimensionError,
    NormTag,
    UnsupportedNormError,
    as_matrix,
    as_vector,
    norm,
    operator_norm,
)


class ActivationTag(str, Enum):
    RELU = "RELU"
    TANH = "TANH"
    IDENTITY = "IDENTITY"

    @property
    def lip_bound(self) -> float:
        return 1.0


class BoundMode(str, Enum):
    OPERATOR = "operator"
    CERTIFIED = "certified"


def _activate(tag: ActivationTag, z: np.ndarray) -> np.ndarray:
    if tag == ActivationTag.RELU:
        return np.maximum(z, 0.0)
    if tag == ActivationTag.TANH:
        return np.tanh(z)
    return z


def _activation_slope(tag: ActivationTag, z: np.ndarray) -> np.ndarray:
    if tag == ActivationTag.RELU:
        return (z > 0.0).astype(float)  # subgradient 0 at the kink
    if tag == ActivationTag.TANH:
        t = np.tanh(z)
        return 1.0 - t * t
    return np.ones_like(z)


@dataclass(frozen=True)
class LinearSoftmax:
    weights: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        W = as_matrix(self.weights)
        object.__setattr__(self, "weights", W)
        if self.bias is not None:
            b = as_vector(self.bias)
            if b.size != W.shape[0]:
                raise DimensionError("bias length must equal the number of classes")
            object.__setattr__(self, "bias", b)

    @property
    def label_count(self) -> int:
        return self.weights.shape[0]

    @property
    def input_dim(self) -> int:
        return self.weights.shape[1]

    def logits(self, x: np.ndarray) -> np.ndarray:
        x = as_vector(x)
        if x.size != self.input_dim:
            raise DimensionError(f"input has dimension {x.size}, expected {self.input_dim}")
        z = self.weights @ x
        return z if self.bias is None else z + self.bias


@dataclass(frozen=True)
class MLPLayer:
    weights: np.ndarray
    activation: ActivationTag
    bias: np.ndarray | None = None

    def __post_init__(self):
        W = as_matrix(self.weights)
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "activation", ActivationTag(self.activation))
        if self.bias is not None:
            b = as_vector(self.bias)
            if b.size != W.shape[0]:
                raise DimensionError("bias length must equal the layer output dimension")
            object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class MLP:
    """Stack of linear layers with activations; the final layer emits logits
    that feed a softmax cross-entropy head, so its activation must be IDENTITY.
    The feature map is everything before the final layer."""

    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("an MLP needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.weights.shape[1] != prev.weights.shape[0]:
                raise DimensionError("consecutive layer dimensions do not chain")
        if layers[-1].activation != ActivationTag.IDENTITY:
            raise ValueError("the final layer must have IDENTITY activation (logits)")
        object.__setattr__(self, "layers", layers)

    @property
    def label_count(self) -> int:
        return self.layers[-1].weights.shape[0]

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]


Model = LinearSoftmax | MLP


def as_mlp(model: Model) -> MLP:
    if isinstance(model, MLP):
        return model
    return MLP((MLPLayer(model.weights, ActivationTag.IDENTITY, model.bias),))


@dataclass(frozen=True)
class LossEval:
    value: float
    grad_x: np.ndarray
    grad_params: np.ndarray


def log_sum_exp(z: np.ndarray) -> float:
    m = float(np.max(z))
    return m + math.log(float(np.sum(np.exp(z - m))))


def softmax(z: np.ndarray) -> np.ndarray:
    m = np.max(z)
    e = np.exp(z - m)
    return e / np.sum(e)


def _check_label(k: int, y: int) -> int:
    y = int(y)
    if not 0 <= y < k:
        raise ValueError(f"label {y} outside [0, {k})")
    return y


def softmax_ce_loss(model: LinearSoftmax, x, y: int) -> LossEval:
    """Cross entropy after a linear softmax layer, with exact gradients."""
    x = as_vector(x)
    y = _check_label(model.label_count, y)
    z = model.logits(x)
    lse = log_sum_exp(z)
    value = lse - float(z[y])
    p = np.exp(z - lse)
    g = p.copy()
    g[y] -= 1.0
    grad_x = model.weights.T @ g
    grad_w = np.outer(g, x)
    parts = [grad_w.ravel()]
    if model.bias is not None:
        parts.append(g)
    return LossEval(value, grad_x, np.concatenate(parts))


def mlp_forward(model: MLP, x) -> tuple[np.ndarray, list]:
    """Logits plus a tape of (layer input, pre-activation) pairs for backprop."""
    a = as_vector(x)
    if a.size != model.input_dim:
        raise DimensionError(f"input has dimension {a.size}, expected {model.input_dim}")
    tape = []
    for layer in model.layers:
        pre = layer.weights @ a
        if layer.bias is not None:
            pre = pre + layer.bias
        tape.append((a, pre))
        a = _activate(layer.activation, pre)
    return a, tape


def _mlp_loss_grads(model: MLP, x, y: int):
    y = _check_label(model.label_count, y)
    logits, tape = mlp_forward(model, x)
    lse = log_sum_exp(logits)
    value = lse - float(logits[y])
    p = np.exp(logits - lse)
    delta = p.copy()
    delta[y] -= 1.0
    grads_w = [None] * len(model.layers)
    grads_b = [None] * len(model.layers)
    for idx in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[idx]
        a_in, pre = tape[idx]
        dpre = delta * _activation_slope(layer.activation, pre)
        grads_w[idx] = np.outer(dpre, a_in)
        if layer.bias is not None:
            grads_b[idx] = dpre.copy()
        delta = layer.weights.T @ dpre
    return value, delta, grads_w, grads_b


def mlp_backprop(model: MLP, x, y: int) -> LossEval:
    """Softmax cross entropy through the net; exact reverse-mode accumulation."""
    value, grad_x, grads_w, grads_b = _mlp_loss_grads(model, x, y)
    parts = []
    for gw, gb in zip(grads_w, grads_b):
        parts.append(gw.ravel())
        if gb is not None:
            parts.append(gb)
    return LossEval(value, grad_x, np.concatenate(parts))


def loss_value(model: Model, x, y: int) -> float:
    if isinstance(model, LinearSoftmax):
        z = model.logits(x)
        return log_sum_exp(z) - float(z[_check_label(model.label_count, y)])
    logits, _ = mlp_forward(model, x)
    return log_sum_exp(logits) - float(logits[_check_label(model.label_count, y)])


def loss_and_grad_x(model: Model, x, y: int) -> tuple[float, np.ndarray]:
    if isinstance(model, LinearSoftmax):
        ev = softmax_ce_loss(model, x, y)
        return ev.value, ev.grad_x
    value, grad_x, _, _ = _mlp_loss_grads(model, x, y)
    return value, grad_x


def label_loss_matrix(model: Model, xs: np.ndarray) -> np.ndarray:
    """Loss of every (sample, label) pair; row i is x_i against all labels."""
    out = np.empty((xs.shape[0], model_label_count(model)))
    for i in range(xs.shape[0]):
        if isinstance(model, LinearSoftmax):
            z = model.logits(xs[i])
        else:
            z, _ = mlp_forward(model, xs[i])
        out[i] = log_sum_exp(z) - z
    return out


def model_label_count(model: Model) -> int:
    return model.label_count


def ce_lipschitz_bound(model: LinearSoftmax, tag: NormTag, mode: BoundMode = BoundMode.CERTIFIED) -> float:
    """Lipschitz constant of x -> CE(softmax(Wx+b), y), uniform over labels.

    OPERATOR: the operator norm of W under `tag`.
    CERTIFIED: the constant provable from grad_x = W^T (p - e_y), using
    ||p - e_y||_2 <= sqrt(2) and ||p - e_y||_1 <= 2.
    """
    W = model.weights
    if mode == BoundMode.OPERATOR:
        return operator_norm(W, tag)
    if tag == NormTag.L2:
        return math.sqrt(2.0) * operator_norm(W, NormTag.L2)
    if tag == NormTag.LINF:
        # sup over ||v||_1 <= 2 of ||W^T v||_1 = 2 * max abs row sum
        return 2.0 * operator_norm(W, NormTag.LINF)
    if tag == NormTag.L1:
        return 2.0 * float(np.max(np.abs(W)))
    raise UnsupportedNormError(f"unsupported norm tag {tag!r}")


def ce_slice_lipschitz(model: LinearSoftmax, y: int, tag: NormTag) -> float:
    """Tight constant for the fixed-label slice x -> CE(softmax(Wx), y).

    The gradient is W^T (p - e_y) with p in the probability simplex, and the
    dual norm of W^T (p - e_y) is maximized at a simplex vertex, so the exact
    supremum over the simplex is max_j ||row_j - row_y||_dual.
    """
    y = _check_label(model.label_count, y)
    W = model.weights
    dual = tag.dual
    return max(norm(W[j] - W[y], dual) for j in range(W.shape[0]))


class LipschitzBounds(NamedTuple):
    product: float
    young: float


def network_lipschitz_bound(model: MLP, tag: NormTag) -> LipschitzBounds:
    """Layerwise product bound and its separable power-mean relaxation.

    product = prod_i lip(act_i) * ||W_i||; young = (1/l) sum_i ||W_i||^l,
    which dominates the product by the arithmetic-geometric mean inequality.
    """
    sigmas = [operator_norm(layer.weights, tag) for layer in model.layers]
    product = 1.0
    for layer, s in zip(model.layers, sigmas):
        product *= layer.activation.lip_bound * s
    l = len(sigmas)
    young = float(sum(s**l for s in sigmas)) / l
    return LipschitzBounds(float(product), young)


def empirical_lipschitz(
    f: Callable[[np.ndarray], float | np.ndarray],
    sampler: Callable[[], np.ndarray],
    pairs: int,
    tag: NormTag,
) -> float:
    """Sampled lower bound on lip(f): max difference quotient over random pairs
    plus coordinate-perturbation pairs (x, x + eps e_i)."""
    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    points = [as_vector(sampler()) for _ in range(pairs + 1)]
    candidates = list(zip(points[:-1], points[1:]))
    eps = 1e-4
    for base in points[: min(8, len(points))]:
        for i in range(base.size):
            step = np.zeros_like(base)
            step[i] = eps
            candidates.append((base, base + step))
    best = None
    for x1, x2 in candidates:
        din = norm(x1 - x2, tag)
        if din < 1e-12:
            continue
        d = np.atleast_1d(np.asarray(f(x1), dtype=float) - np.asarray(f(x2), dtype=float))
        best_q = norm(d, tag) / din
        if best is None or best_q > best:
            best = best_q
    if best is None:
        raise ValueError("all sampled pairs were degenerate")
    return float(best)


def phi_head_split(model: MLP) -> tuple[tuple, LinearSoftmax]:
    """Feature map (all layers but the last) and the linear softmax head."""
    head_layer = model.layers[-1]
    head = LinearSoftmax(head_layer.weights, head_layer.bias)
    return model.layers[:-1], head


def phi_apply(layers: Sequence[MLPLayer], x) -> np.ndarray:
    a = as_vector(x)
    for layer in layers:
        pre = layer.weights @ a
        if layer.bias is not None:
            pre = pre + layer.bias
        a = _activate(layer.activation, pre)
    return a


def phi_lipschitz_bound(layers: Sequence[MLPLayer], tag: NormTag) -> float:
    bound = 1.0
    for layer in layers:
        bound *= layer.activation.lip_bound * operator_norm(layer.weights, tag)
    return float(bound)


def predict(model: Model, x) -> int:
    if isinstance(model, LinearSoftmax):
        return int(np.argmax(model.logits(x)))
    logits, _ = mlp_forward(model, x)
    return int(np.argmax(logits))


def accuracy(model: Model, points) -> float:
    hits = sum(1 for p in points.points if predict(model, p.x) == p.y)
    return hits / len(points)


_FORMAT_HEADER = "wasslip-model v1"


def save_model(model: Model, path, norm_tag: NormTag = NormTag.L2) -> None:
    mlp = as_mlp(model)
    kind = "linear" if isinstance(model, LinearSoftmax) else "mlp"
    lines = [_FORMAT_HEADER, f"kind {kind}", f"norm {norm_tag.value}", f"layers {len(mlp.layers)}"]
    for layer in mlp.layers:
        r, c = layer.weights.shape
        has_bias = 1 if layer.bias is not None else 0
        lines.append(f"layer {r} {c} {layer.activation.value} {has_bias}")
        for row in layer.weights:
            lines.append(",".join(fmt_float(v) for v in row))
        if layer.bias is not None:
            lines.append(",".join(fmt_float(v) for v in layer.bias))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path) -> tuple[Model, NormTag]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != _FORMAT_HEADER:
        raise ValueError("unrecognized model file header")
    kind = lines[1].split()[1]
    norm_tag = NormTag(lines[2].split()[1])
    n_layers = int(lines[3].split()[1])
    pos = 4
    layers = []
    for _ in range(n_layers):
        _, r, c, act, has_bias = lines[pos].split()
        r, c, has_bias = int(r), int(c), int(has_bias)
        pos += 1
        rows = [[float(v) for v in lines[pos + i].split(",")] for i in range(r)]
        pos += r
        bias = None
        if has_bias:
            bias = np.array([float(v) for v in lines[pos].split(",")])
            pos += 1
        layers.append(MLPLayer(np.array(rows), ActivationTag(act), bias))
    if kind == "linear":
        return LinearSoftmax(layers[0].weights, layers[0].bias), norm_tag
    return MLP(tuple(layers)), norm_tag
