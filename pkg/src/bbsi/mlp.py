"""Feedforward probability estimator trained by cross-entropy with Adam.

The network maps a basis vector to the probability that the selection
algorithm reproduces the observed model. Everything is plain numpy:
analytic backpropagation, bias-corrected Adam, deterministic given the
seed and evaluation order.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import RandomSeed
from .training import TrainingSet

__all__ = [
    "MlpParams",
    "Standardizer",
    "AdamState",
    "SelectionProbEstimate",
    "init_params",
    "forward",
    "predict",
    "loss",
    "backward",
    "adam_step",
    "train",
    "save_model",
    "load_model",
]

_CLAMP = 1e-12
_PROB_FLOOR = 1e-300
_PROB_CEIL = float(np.nextafter(1.0, 0.0))


@dataclass
class MlpParams:
    """Weight matrices and bias vectors; rectifier hidden, logistic output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class Standardizer:
    """Per-input affine map fitted on the training rows (scale floored at 1e-12)."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        mean = x.mean(axis=0)
        scale = np.maximum(x.std(axis=0), 1e-12)
        return cls(mean=mean, scale=scale)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.scale


def init_params(widths, rng: RandomSeed) -> MlpParams:
    """Symmetric-uniform init with scale sqrt(6 / (fan_in + fan_out)), zero biases."""
    gen = rng.generator()
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(gen.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_pass(params: MlpParams, x_std: np.ndarray):
    """Returns layer pre-activations and activations for backprop."""
    activations = [x_std]
    pre = []
    h = x_std
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        pre.append(z)
        h = _sigmoid(z) if i == last else np.maximum(z, 0.0)
        activations.append(h)
    return pre, activations


def predict(params: MlpParams, standardizer: Standardizer, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != params.weights[0].shape[0]:
        raise ValueError("input dimension does not match the network")
    _, acts = _forward_pass(params, standardizer.apply(x))
    probs = acts[-1][:, 0]
    return np.clip(probs, _PROB_FLOOR, _PROB_CEIL)


def forward(params: MlpParams, standardizer: Standardizer, z) -> float:
    """Selection probability for a single basis vector."""
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("input must be finite")
    return float(predict(params, standardizer, z.reshape(1, -1))[0])


def loss(params: MlpParams, standardizer: Standardizer, ts: TrainingSet) -> float:
    probs = predict(params, standardizer, ts.x)
    clamped = np.clip(probs, _CLAMP, 1.0 - _CLAMP)
    y = ts.labels
    return float(-np.sum(y * np.log(clamped) + (1.0 - y) * np.log(1.0 - clamped)))


def backward(params: MlpParams, standardizer: Standardizer, x: np.ndarray, y: np.ndarray):
    """Summed cross-entropy gradients over the batch.

    Uses the logistic-link identity dL/dz_out = p - y, so the gradient of
    the final bias is exactly sum(p - y).
    """
    x_std = standardizer.apply(np.atleast_2d(x))
    pre, acts = _forward_pass(params, x_std)
    grad_w = [None] * len(params.weights)
    grad_b = [None] * len(params.biases)
    delta = acts[-1] - np.asarray(y, dtype=float).reshape(-1, 1)
    for i in range(len(params.weights) - 1, -1, -1):
        grad_w[i] = acts[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * (pre[i - 1] > 0.0)
    return grad_w, grad_b


@dataclass
class AdamState:
    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def for_params(cls, params: MlpParams, lr: float = 1e-3, weight_decay: float = 0.0) -> "AdamState":
        return cls(
            m_w=[np.zeros_like(w) for w in params.weights],
            v_w=[np.zeros_like(w) for w in params.weights],
            m_b=[np.zeros_like(b) for b in params.biases],
            v_b=[np.zeros_like(b) for b in params.biases],
            lr=lr,
            weight_decay=weight_decay,
        )


def adam_step(state: AdamState, params: MlpParams, grads) -> tuple[AdamState, MlpParams]:
    """One bias-corrected Adam update, applied in place.

    Weight decay is decoupled (applied directly to the weights, not through
    the moment accumulators) and never touches the biases.
    """
    grad_w, grad_b = grads
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for i in range(len(params.weights)):
        for m, v, g, p in (
            (state.m_w[i], state.v_w[i], grad_w[i], params.weights[i]),
            (state.m_b[i], state.v_b[i], grad_b[i], params.biases[i]),
        ):
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * g * g
            p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay:
            params.weights[i] -= state.lr * state.weight_decay * params.weights[i]
    return state, params


@dataclass(frozen=True)
class SelectionProbEstimate:
    """Trained network plus its input standardizer; maps a basis to (0, 1)."""

    params: MlpParams
    standardizer: Standardizer

    def predict(self, x) -> np.ndarray:
        return predict(self.params, self.standardizer, np.atleast_2d(np.asarray(x, dtype=float)))

    def __call__(self, z) -> float:
        return forward(self.params, self.standardizer, z)


def train(
    ts: TrainingSet,
    epochs: int = 3000,
    batch: int = 200,
    rng: RandomSeed | None = None,
    hidden=(200, 200, 200),
    lr: float = 1e-3,
    holdout: float = 0.0,
    weight_decay: float = 0.0,
    early_stop: bool = False,
    validation: tuple[np.ndarray, np.ndarray] | None = None,
) -> SelectionProbEstimate:
    """Fit the selection probability by minibatch cross-entropy descent.

    Rows are shuffled every epoch; one Adam step per minibatch. ``holdout``
    reserves a random fraction of rows from fitting; with ``early_stop``
    the parameters snapshotted at the best validation loss are returned,
    which is the main guard against the network interpolating the
    Bernoulli labels and destroying the smooth conditional probability it
    is supposed to estimate. ``validation`` supplies explicit (x, labels)
    rows for that purpose instead of an internal split; callers that
    duplicate rows (class balancing) must validate on pre-duplication
    rows, otherwise copies leak across the split and the snapshot rewards
    memorization. Aborts if the full-batch loss ever turns non-finite.
    """
    if rng is None:
        rng = RandomSeed(0)
    if ts.n_rows == 0:
        raise ValueError("empty training set")
    if ts.counts[0] == 0 or ts.counts[1] == 0:
        warnings.warn("training set contains a single label; fit will be degenerate")
    if early_stop and holdout <= 0.0 and validation is None:
        raise ValueError("early_stop requires a holdout fraction or a validation set")

    x, y = ts.x, ts.labels.astype(float)
    x_held = y_held = None
    if validation is not None:
        x_held = np.atleast_2d(np.asarray(validation[0], dtype=float))
        y_held = np.asarray(validation[1], dtype=float)
    elif holdout > 0.0:
        gen = rng.child(1).generator()
        perm = gen.permutation(ts.n_rows)
        n_keep = max(1, int(round((1.0 - holdout) * ts.n_rows)))
        keep, held = perm[:n_keep], perm[n_keep:]
        if held.size:
            x_held, y_held = x[held], y[held].astype(float)
        x, y = x[keep], y[keep]

    standardizer = Standardizer.fit(x)
    widths = [x.shape[1], *hidden, 1]
    params = init_params(widths, rng.child(0))
    state = AdamState.for_params(params, lr=lr, weight_decay=weight_decay)
    gen = rng.child(2).generator()
    n = x.shape[0]
    x_std = standardizer.apply(x)
    identity = Standardizer(mean=np.zeros(x.shape[1]), scale=np.ones(x.shape[1]))

    def dataset_loss(x_eval, y_eval):
        probs = np.clip(predict(params, identity, x_eval), _CLAMP, 1.0 - _CLAMP)
        return -np.sum(y_eval * np.log(probs) + (1.0 - y_eval) * np.log(1.0 - probs))

    x_held_std = standardizer.apply(x_held) if x_held is not None else None
    best_loss = math.inf
    best_params = None

    for epoch in range(epochs):
        perm = gen.permutation(n)
        for start in range(0, n, batch):
            rows = perm[start : start + batch]
            grads = backward(params, identity, x_std[rows], y[rows])
            adam_step(state, params, grads)
        epoch_loss = dataset_loss(x_std, y)
        if not np.isfinite(epoch_loss):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}")
        if early_stop and x_held_std is not None:
            held_loss = dataset_loss(x_held_std, y_held)
            if held_loss < best_loss:
                best_loss = held_loss
                best_params = params.copy()

    if early_stop and best_params is not None:
        params = best_params
    return SelectionProbEstimate(params=params, standardizer=standardizer)


def _format_array(arr: np.ndarray) -> str:
    return " ".join(f"{v:.17g}" for v in np.ravel(arr))


def save_model(estimate: SelectionProbEstimate, path) -> None:
    """Flat text persistence: widths and standardizer, then weight/bias blocks."""
    params, std = estimate.params, estimate.standardizer
    lines = [
        "bbsi-mlp 1",
        "widths " + " ".join(str(w) for w in params.widths),
        "mean " + _format_array(std.mean),
        "scale " + _format_array(std.scale),
    ]
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        lines.append(f"w{i} " + _format_array(w))
        lines.append(f"b{i} " + _format_array(b))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> SelectionProbEstimate:
    with open(path, encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("bbsi-mlp"):
        raise ValueError("not a saved model file")
    fields = {}
    for line in lines[1:]:
        key, _, rest = line.partition(" ")
        fields[key] = rest
    widths = [int(v) for v in fields["widths"].split()]
    mean = np.array([float(v) for v in fields["mean"].split()])
    scale = np.array([float(v) for v in fields["scale"].split()])
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        w = np.array([float(v) for v in fields[f"w{i}"].split()]).reshape(fan_in, fan_out)
        b = np.array([float(v) for v in fields[f"b{i}"].split()])
        weights.append(w)
        biases.append(b)
    return SelectionProbEstimate(
        params=MlpParams(weights, biases),
        standardizer=Standardizer(mean=mean, scale=scale),
    )
