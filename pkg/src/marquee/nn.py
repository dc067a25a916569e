"""Dense MLP forward/backward, dropout, optimizers and a gradient checker.

Gradients are hand-derived per layer (no autodiff). Everything is float64.
The batch entry points (``mlp_forward_batch`` / ``mlp_backward_batch``) are
the hot path and delegate their inner loops to :mod:`marquee.kernels`; the
single-vector API wraps them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ShapeError, TrainingError
from .rng import as_generator

ACTIVATIONS = {
    "identity": kernels.ACT_IDENTITY,
    "relu": kernels.ACT_RELU,
    "tanh": kernels.ACT_TANH,
}

# A Tensor2 is a C-contiguous float64 matrix; validated by as_tensor2.
Tensor2 = np.ndarray


def as_tensor2(a, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Validate/coerce to a finite, C-contiguous float64 matrix."""
    out = np.ascontiguousarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ShapeError(f"expected a 2-D array, got ndim={out.ndim}")
    if rows is not None and out.shape[0] != rows:
        raise ShapeError(f"expected {rows} rows, got {out.shape[0]}")
    if cols is not None and out.shape[1] != cols:
        raise ShapeError(f"expected {cols} cols, got {out.shape[1]}")
    if not np.all(np.isfinite(out)):
        raise ShapeError("matrix contains non-finite entries")
    return out


def as_vector(a, length: int | None = None) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=np.float64)
    if out.ndim != 1:
        raise ShapeError(f"expected a 1-D array, got ndim={out.ndim}")
    if length is not None and out.shape[0] != length:
        raise ShapeError(f"expected length {length}, got {out.shape[0]}")
    return out


@dataclass(frozen=True)
class MlpSpec:
    """Architecture: layer_dims[0] is the input dim, layer_dims[-1] the output.

    ``activation`` applies to every hidden layer; the output layer is linear.
    """

    layer_dims: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        if len(self.layer_dims) < 2:
            raise ShapeError("MlpSpec needs at least one layer transition")
        if any(d < 1 for d in self.layer_dims):
            raise ShapeError(f"all layer dims must be >= 1, got {self.layer_dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def activation_code(self, layer: int) -> int:
        # last layer is always linear
        if layer == self.n_layers - 1:
            return kernels.ACT_IDENTITY
        return ACTIVATIONS[self.activation]


@dataclass
class MlpState:
    """Weights (n_in x n_out per layer) and biases matching an MlpSpec."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "MlpState":
        return MlpState([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def check_shapes(self, spec: MlpSpec) -> None:
        if len(self.weights) != spec.n_layers or len(self.biases) != spec.n_layers:
            raise ShapeError("layer count mismatch between MlpState and MlpSpec")
        for layer in range(spec.n_layers):
            as_tensor2(self.weights[layer], spec.layer_dims[layer], spec.layer_dims[layer + 1])
            as_vector(self.biases[layer], spec.layer_dims[layer + 1])


def init_mlp_state(spec: MlpSpec, seed) -> MlpState:
    """Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)); zero biases."""
    rng = as_generator(seed)
    weights, biases = [], []
    for n_in, n_out in zip(spec.layer_dims[:-1], spec.layer_dims[1:]):
        a = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-a, a, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return MlpState(weights, biases)


@dataclass
class MlpCache:
    """Per-layer inputs and pre-activations recorded by a forward pass."""

    inputs: list[np.ndarray]
    pre: list[np.ndarray]


def mlp_forward_batch(spec: MlpSpec, state: MlpState, x: np.ndarray):
    """Forward over a batch of row vectors; returns (output, cache)."""
    x = as_tensor2(x, cols=spec.in_dim)
    inputs, pre = [], []
    a = x
    for layer in range(spec.n_layers):
        w, b = state.weights[layer], state.biases[layer]
        if w.shape[0] != a.shape[1]:
            raise ShapeError(
                f"layer {layer}: weight rows {w.shape[0]} != input dim {a.shape[1]}"
            )
        inputs.append(a)
        z = kernels.affine_forward(a, w, b)
        pre.append(z)
        a = kernels.act_forward(z, spec.activation_code(layer))
    return a, MlpCache(inputs, pre)


def mlp_backward_batch(spec: MlpSpec, state: MlpState, cache: MlpCache, grad_output: np.ndarray):
    """Backward through a cached forward pass.

    Returns (grad_input, grad_weights, grad_biases); shapes mirror the state.
    """
    if len(cache.inputs) != spec.n_layers:
        raise ShapeError("cache does not match the spec's layer count")
    da = as_tensor2(grad_output, cols=spec.out_dim)
    if da.shape[0] != cache.pre[-1].shape[0]:
        raise ShapeError("grad_output batch size does not match the cached forward pass")
    grad_weights: list[np.ndarray] = [None] * spec.n_layers  # type: ignore[list-item]
    grad_biases: list[np.ndarray] = [None] * spec.n_layers  # type: ignore[list-item]
    for layer in reversed(range(spec.n_layers)):
        dz = kernels.act_backward(cache.pre[layer], da, spec.activation_code(layer))
        da, dw, db = kernels.affine_backward(cache.inputs[layer], state.weights[layer], dz)
        grad_weights[layer] = dw
        grad_biases[layer] = db
    return da, grad_weights, grad_biases


def mlp_forward(spec: MlpSpec, state: MlpState, x: np.ndarray):
    """Single-vector forward; returns (output vector, cache)."""
    y, cache = mlp_forward_batch(spec, state, as_vector(x, spec.in_dim)[None, :])
    return y[0], cache


def mlp_backward(spec: MlpSpec, state: MlpState, cache: MlpCache, grad_output: np.ndarray):
    """Single-vector backward; returns (grad_input, grad_weights, grad_biases)."""
    dx, gw, gb = mlp_backward_batch(spec, state, cache, as_vector(grad_output, spec.out_dim)[None, :])
    return dx[0], gw, gb


def apply_dropout(x: np.ndarray, p: float, mode: str, seed) -> np.ndarray:
    """Inverted dropout: train mode zeroes entries with prob p and rescales
    survivors by 1/(1-p); eval mode returns the input unchanged.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(x, dtype=np.float64)
    if mode == "eval" or p == 0.0:
        return x.copy()
    rng = as_generator(seed)
    mask = rng.random(x.shape) >= p
    return x * mask / (1.0 - p)


@dataclass
class OptimizerState:
    """SGD or Adam state. Moment buffers are created lazily to match the
    parameter shapes on the first step. The moments and step counter are the
    optimizer's own bookkeeping and are updated in place; parameter arrays
    passed to optimizer_step are never mutated.
    """

    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"optimizer kind must be 'sgd' or 'adam', got {self.kind!r}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


def optimizer_step(state: OptimizerState, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
    """One update step; returns the new parameter list.

    Raises TrainingError when any gradient entry is non-finite.
    """
    if len(params) != len(grads):
        raise ShapeError("params and grads length mismatch")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ShapeError(f"param {i}: shape {p.shape} != grad shape {g.shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.count_nonzero(~np.isfinite(g)))
            raise TrainingError(f"non-finite gradient for parameter {i}: {bad} bad entries")
    new_params = [np.ascontiguousarray(p, dtype=np.float64).copy() for p in params]
    if state.kind == "sgd":
        for p, g in zip(new_params, grads):
            kernels.sgd_update(p, np.ascontiguousarray(g, dtype=np.float64), state.learning_rate)
        state.step += 1
        return new_params
    if not state.m:
        state.m = [np.zeros_like(p) for p in new_params]
        state.v = [np.zeros_like(p) for p in new_params]
    for m, g in zip(state.m, grads):
        if m.shape != g.shape:
            raise ShapeError("optimizer moment shape does not match gradient shape")
    state.step += 1
    for p, g, m, v in zip(new_params, grads, state.m, state.v):
        kernels.adam_update(
            p,
            np.ascontiguousarray(g, dtype=np.float64),
            m,
            v,
            state.step,
            state.learning_rate,
            state.beta1,
            state.beta2,
            state.eps,
        )
    return new_params


GRAD_CHECK_FLOOR = 1e-5


def grad_check(loss_fn, params: list[np.ndarray], eps: float = 1e-5, loss_only=None) -> float:
    """Compare analytic gradients against central finite differences.

    ``loss_fn(params) -> (loss, grads)`` must be deterministic (dropout in
    eval mode). ``loss_only(params) -> loss``, when given, is used for the
    finite-difference evaluations so they skip the backward pass. Returns the
    max over all scalars of |analytic - numeric| / max(floor, |analytic| +
    |numeric|). The floor keeps the comparison absolute for coordinates whose
    gradient sits below what central differences can resolve; a genuinely
    wrong gradient at any meaningful scale still reads as an error near 1.
    """
    if loss_only is None:
        loss_only = lambda ps: loss_fn(ps)[0]  # noqa: E731
    _, analytic = loss_fn(params)
    worst = 0.0
    work = [p.astype(np.float64).copy() for p in params]
    for t, p in enumerate(work):
        flat = p.reshape(-1)
        a_flat = np.asarray(analytic[t], dtype=np.float64).reshape(-1)
        for i in range(flat.shape[0]):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_only(work)
            flat[i] = orig - eps
            down = loss_only(work)
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            a = a_flat[i]
            err = abs(a - numeric) / max(GRAD_CHECK_FLOOR, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
