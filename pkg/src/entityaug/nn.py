"""Small dense network engine with hand-written reverse mode.

Arrays are plain float64 numpy arrays. A forward pass returns the output
together with a :class:`Tape` holding whatever the backward pass needs; the
backward pass consumes the tape, accumulates parameter gradients and returns
the gradient with respect to the network input (the part a host ships back
to a guest).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

LEAKY_SLOPE = 0.01
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class Activation(str, Enum):
    RELU = "relu"
    LEAKY_RELU = "leaky_relu"
    IDENTITY = "identity"


@dataclass
class Parameter:
    value: np.ndarray
    grad: np.ndarray | None = None
    adam_m: np.ndarray = field(default=None)  # type: ignore[assignment]
    adam_v: np.ndarray = field(default=None)  # type: ignore[assignment]
    step_count: int = 0

    def __post_init__(self) -> None:
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.adam_m is None:
            self.adam_m = np.zeros_like(self.value)
        if self.adam_v is None:
            self.adam_v = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths plus one activation applied after each affine layer."""

    layer_dims: tuple[int, ...]
    activations: tuple[Activation, ...]

    def __init__(self, layer_dims: Sequence[int], activations: Sequence[Activation | str]):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in layer_dims))
        object.__setattr__(self, "activations", tuple(Activation(a) for a in activations))
        self.validate()

    def validate(self) -> None:
        if len(self.layer_dims) < 2:
            raise ValueError(f"need at least two layer dims, got {list(self.layer_dims)}")
        if any(d <= 0 for d in self.layer_dims):
            raise ValueError(f"layer dims must be positive, got {list(self.layer_dims)}")
        if len(self.activations) != len(self.layer_dims) - 1:
            raise ValueError(
                f"{len(self.layer_dims)} layer dims need {len(self.layer_dims) - 1} activations, "
                f"got {len(self.activations)}"
            )

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]


@dataclass
class Tape:
    inputs: list[np.ndarray]
    pre_acts: list[np.ndarray]
    squeeze: bool
    consumed: bool = False


@dataclass
class Mlp:
    spec: MlpSpec
    layers: list[tuple[Parameter, Parameter]]

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Tape]:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.spec.in_dim:
            raise ValueError(f"expected input width {self.spec.in_dim}, got shape {x.shape}")
        inputs, pre_acts = [], []
        h = x
        for (w, b), act in zip(self.layers, self.spec.activations):
            inputs.append(h)
            z = h @ w.value.T + b.value
            pre_acts.append(z)
            h = activate(z, act)
        out = h[0] if squeeze else h
        return out, Tape(inputs, pre_acts, squeeze)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, tape: Tape, grad_out: np.ndarray) -> np.ndarray:
        """Accumulate parameter grads from ``dL/d(output)``; return ``dL/d(input)``."""
        if tape is None or tape.consumed:
            raise RuntimeError("backward called without a pending forward tape")
        g = np.asarray(grad_out, dtype=np.float64)
        if tape.squeeze:
            g = g[None, :]
        if g.shape != tape.pre_acts[-1].shape:
            raise ValueError(f"grad shape {g.shape} does not match output {tape.pre_acts[-1].shape}")
        tape.consumed = True
        for (w, b), act, h, z in zip(
            reversed(self.layers),
            reversed(self.spec.activations),
            reversed(tape.inputs),
            reversed(tape.pre_acts),
        ):
            g = g * activation_grad(z, act)
            w.accumulate(g.T @ h)
            b.accumulate(g.sum(axis=0))
            g = g @ w.value
        return g[0] if tape.squeeze else g


def mlp_init(spec: MlpSpec, seed: int) -> Mlp:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    spec.validate()
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(spec.layer_dims[:-1], spec.layer_dims[1:]):
        bound = np.sqrt(1.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append((Parameter(w), Parameter(np.zeros(fan_out))))
    return Mlp(spec, layers)


def leaky_relu(x: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"slope must lie in (0, 1), got {slope}")
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, x, slope * x)


def activate(z: np.ndarray, act: Activation) -> np.ndarray:
    if act is Activation.RELU:
        return np.maximum(z, 0.0)
    if act is Activation.LEAKY_RELU:
        return leaky_relu(z)
    return z


def activation_grad(z: np.ndarray, act: Activation) -> np.ndarray | float:
    if act is Activation.RELU:
        return (z > 0).astype(np.float64)
    if act is Activation.LEAKY_RELU:
        return np.where(z >= 0, 1.0, LEAKY_SLOPE)
    return 1.0


def bce_with_logits(logits: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy on logits, plus its gradient w.r.t. the logits.

    Targets may be fractional (interpolated labels), anything in [0, 1].
    """
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if z.shape != t.shape:
        raise ValueError(f"logits shape {z.shape} != target shape {t.shape}")
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError("targets must lie in [0, 1]")
    e = np.exp(-np.abs(z))
    loss = np.maximum(z, 0.0) - z * t + np.log1p(e)
    sig = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    grad = (sig - t) / z.size
    return float(loss.mean()), grad


def adam_step(params: Iterable[Parameter], lr: float) -> None:
    """Bias-corrected Adam update in place; clears the gradients afterwards."""
    params = list(params)
    if not params:
        raise ValueError("no parameters to step")
    missing = [i for i, p in enumerate(params) if p.grad is None]
    if missing:
        raise RuntimeError(f"parameters {missing} have no gradient; run backward first")
    for p in params:
        g = p.grad
        p.step_count += 1
        p.adam_m *= ADAM_BETA1
        p.adam_m += (1.0 - ADAM_BETA1) * g
        p.adam_v *= ADAM_BETA2
        p.adam_v += (1.0 - ADAM_BETA2) * (g * g)
        bc1 = 1.0 - ADAM_BETA1**p.step_count
        bc2 = 1.0 - ADAM_BETA2**p.step_count
        denom = np.sqrt(p.adam_v / bc2)
        denom += ADAM_EPS
        p.value -= (lr / bc1) * p.adam_m / denom
        p.grad = None


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.grad = None


def numerical_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` at ``x`` (x is perturbed in place, then restored)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(1e-8, |a| + |n|) over all entries."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))))


def check_gradients(spec: MlpSpec, seed: int, batch: int = 3, h: float = 1e-5) -> float:
    """Max relative error between backward and central differences for every
    parameter of a freshly initialised net under a random soft-target BCE loss."""
    rng = np.random.default_rng(seed)
    model = mlp_init(spec, seed)
    for w, b in model.layers:
        b.value = rng.normal(0.0, 0.1, size=b.shape)
    x = rng.normal(size=(batch, spec.in_dim))
    t = rng.uniform(size=(batch, spec.out_dim))

    def loss() -> float:
        return bce_with_logits(model(x), t)[0]

    out, tape = model.forward(x)
    _, g = bce_with_logits(out, t)
    model.backward(tape, g)
    worst = 0.0
    for p in model.parameters():
        analytic = p.grad
        numeric = numerical_gradient(loss, p.value, h)
        worst = max(worst, relative_error(analytic, numeric))
    zero_grad(model.parameters())
    return worst
