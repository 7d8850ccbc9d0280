"""Feed-forward networks and the Adam optimizer."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

ACTIVATIONS = ("tanh", "relu", "sigmoid", "identity")
TIME_FEATURES = 16


class NonFiniteError(FloatingPointError):
    """Raised when a gradient or loss stops being finite."""


_EMB_CACHE: dict[tuple[int, int], np.ndarray] = {}


def time_embedding(t, T: int, dim: int = TIME_FEATURES) -> np.ndarray:
    """Sinusoidal features of integer timesteps, shape (len(t), dim).

    Angular frequencies are geometric from 1 to ``T`` and act on ``t / T``.
    """
    t = np.atleast_1d(np.asarray(t))
    if t.dtype.kind in "iu":
        table = _EMB_CACHE.get((T, dim))
        if table is None:
            table = _EMB_CACHE[(T, dim)] = _embed(np.arange(T + 1, dtype=np.float64), T, dim)
        if t.size and (t.min() < 0 or t.max() > T):
            raise ValueError(f"timestep outside [0, {T}]")
        return table[t]
    return _embed(t.astype(np.float64), T, dim)


def _embed(t: np.ndarray, T: int, dim: int) -> np.ndarray:
    freqs = np.geomspace(1.0, float(T), dim // 2)
    phase = (t / T)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=1)


def _np_act(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(x)
    if kind == "relu":
        return np.where(x > 0, x, 0.0)
    if kind == "sigmoid":
        return ad._sigmoid(x)
    return x


def _tape_act(kind: str, x: Tensor) -> Tensor:
    if kind == "tanh":
        return ad.tanh(x)
    if kind == "relu":
        return ad.relu(x)
    if kind == "sigmoid":
        return ad.sigmoid(x)
    return x


@dataclass
class MlpNetwork:
    """Dense layers ``h <- act(h @ W + b)``; the last layer is usually linear."""

    weights: list[Tensor]
    biases: list[Tensor]
    activations: list[str]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ShapeError("layer lists must have equal length")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: bias shape {b.shape} does not match weight {w.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(
                    f"layer {i}: input width {w.shape[0]} != previous output {self.weights[i - 1].shape[1]}")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")

    @classmethod
    def init(cls, sizes: list[int], activation: str, rng: np.random.Generator,
             final_activation: str = "identity") -> MlpNetwork:
        """He/Glorot-style scaled normal weights, zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            gain = 2.0 if activation == "relu" else 1.0
            w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(gain / fan_in)
            weights.append(Tensor(w, requires_grad=True))
            biases.append(Tensor(np.zeros(fan_out), requires_grad=True))
        acts = [activation] * (len(sizes) - 2) + [final_activation]
        return cls(weights, biases, acts)

    @property
    def in_width(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_width(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def hidden_widths(self) -> list[int]:
        return [w.shape[1] for w in self.weights[:-1]]

    @property
    def parameter_count(self) -> int:
        return int(sum(w.data.size + b.data.size for w, b in zip(self.weights, self.biases)))

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def copy(self) -> MlpNetwork:
        return MlpNetwork(
            [Tensor(w.data.copy(), requires_grad=True) for w in self.weights],
            [Tensor(b.data.copy(), requires_grad=True) for b in self.biases],
            list(self.activations),
        )

    def load_arrays(self, arrays: list[np.ndarray]) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise ShapeError(f"expected {len(params)} arrays, got {len(arrays)}")
        for p, a in zip(params, arrays):
            if p.shape != a.shape:
                raise ShapeError(f"parameter shape {p.shape} != loaded shape {a.shape}")
            p.data = np.array(a, dtype=np.float64)


def forward(net: MlpNetwork, x, record: bool = False, param_grad: bool = True,
            taps: bool = False):
    """Run ``net`` on ``x`` of shape (batch, in_width).

    With ``record`` the result lives on the tape; ``param_grad=False`` keeps
    the weights out of it so only the input receives gradient.  With ``taps``
    the post-activation output of every hidden layer is returned as well.
    """
    x = ad.as_tensor(x)
    if x.data.ndim != 2 or x.shape[-1] != net.in_width:
        raise ShapeError(f"network expects input (batch, {net.in_width}), got {x.shape}")
    hidden = []
    last = len(net.weights) - 1
    if not record:
        h = x.data
        for i, (w, b, act) in enumerate(zip(net.weights, net.biases, net.activations)):
            h = _np_act(act, h @ w.data + b.data)
            if taps and i < last:
                hidden.append(Tensor(h))
        out = Tensor(h)
    else:
        h = x
        for i, (w, b, act) in enumerate(zip(net.weights, net.biases, net.activations)):
            if not param_grad:
                w, b = Tensor(w.data), Tensor(b.data)
            h = _tape_act(act, ad.add(ad.matmul(h, w), b))
            if taps and i < last:
                hidden.append(h)
        out = h
    return (out, hidden) if taps else out


@dataclass
class AdamState:
    """Bias-corrected Adam accumulators for one group of parameter blocks."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[Tensor], lr: float = 1e-3, **kw) -> AdamState:
        return cls(lr=lr, m=[np.zeros_like(p.data) for p in params],
                   v=[np.zeros_like(p.data) for p in params], **kw)


def adam_step(state: AdamState, params: list[Tensor], grads: list[np.ndarray | None] | None = None,
              names: list[str] | None = None) -> None:
    """One Adam update in place.  ``grads`` defaults to each parameter's ``.grad``
    (missing gradients count as zero)."""
    if grads is None:
        grads = [p.grad for p in params]
    if len(grads) != len(params) or len(state.m) != len(params):
        raise ShapeError(f"adam: {len(params)} params, {len(grads)} grads, {len(state.m)} slots")
    fixed = []
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.zeros_like(p.data) if g is None else g
        if not np.all(np.isfinite(g)):
            label = names[i] if names else f"block {i} (shape {p.shape})"
            raise NonFiniteError(f"non-finite gradient in parameter {label}")
        fixed.append(g)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    step_size = state.lr / c1
    for p, g, m, v in zip(params, fixed, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = np.sqrt(v / c2)
        denom += state.eps
        p.data = p.data - step_size * m / denom
