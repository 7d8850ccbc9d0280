"""Variance-preserving noising, denoising-MSE training and deterministic DDIM sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .nn import AdamState, MlpNetwork, adam_step, forward, time_embedding, TIME_FEATURES

ROLES = ("source", "fake", "target", "student")
BETA_START = 1e-4
BETA_END = 2e-2


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    alpha: np.ndarray
    sigma: np.ndarray

    def check_t(self, t) -> np.ndarray:
        t = np.asarray(t)
        if t.size and (np.any(t < 0) or np.any(t > self.T)):
            raise ValueError(f"timestep out of range [0, {self.T}]: {t}")
        return t


def build_schedule(T: int) -> NoiseSchedule:
    """Linear-beta VP schedule indexed by integer t = 0..T."""
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T}")
    T = int(T)
    betas = np.linspace(BETA_START, BETA_END, T)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    alpha = np.sqrt(alpha_bar)
    sigma = np.sqrt(1.0 - alpha_bar)
    alpha.setflags(write=False)
    sigma.setflags(write=False)
    return NoiseSchedule(T, alpha, sigma)


def _coef(values: np.ndarray, t, batch: int) -> np.ndarray:
    """Per-sample column (batch, 1) of schedule values at integer t."""
    t = np.asarray(t)
    if t.ndim == 0:
        return np.full((batch, 1), values[int(t)])
    if t.shape != (batch,):
        raise ShapeError(f"timestep array shape {t.shape} does not match batch {batch}")
    return values[t][:, None]


def q_sample(schedule: NoiseSchedule, x, t, eps):
    """alpha_t * x + sigma_t * eps.  Tensors stay on the tape; arrays stay arrays."""
    schedule.check_t(t)
    xs = x.shape
    if xs != eps.shape:
        raise ShapeError(f"q_sample: x shape {xs} != noise shape {eps.shape}")
    a = _coef(schedule.alpha, t, xs[0])
    s = _coef(schedule.sigma, t, xs[0])
    if isinstance(x, Tensor) or isinstance(eps, Tensor):
        return ad.add(ad.mul(a, x), ad.mul(s, eps))
    return a * x + s * eps


def sample_timestep(rng: np.random.Generator, T: int, size: int | None = None):
    """Uniform integer t in [ceil(0.02T), floor(0.98T)]: the DMD / adversarial range."""
    if T < 50:
        raise ValueError(f"admissible timestep range needs T >= 50, got {T}")
    lo, hi = math.ceil(0.02 * T), math.floor(0.98 * T)
    return int(rng.integers(lo, hi + 1)) if size is None else rng.integers(lo, hi + 1, size=size)


def sample_train_timestep(rng: np.random.Generator, T: int, size: int | None = None):
    """Uniform integer t in [1, T], used for denoising-MSE training."""
    return int(rng.integers(1, T + 1)) if size is None else rng.integers(1, T + 1, size=size)


def ladder(T: int, n: int) -> list[int]:
    """n evenly spaced integer timesteps descending from T: floor((n - i) T / n)."""
    if n < 1 or n > T:
        raise ValueError(f"need 1 <= steps <= T, got steps={n}, T={T}")
    return [(n - i) * T // n for i in range(n)]


class Denoiser:
    """Timestep-conditioned epsilon predictor on ``[x_t | time features]``."""

    def __init__(self, network: MlpNetwork, role: str, T: int, dim: int = 2):
        if role not in ROLES:
            raise ValueError(f"unknown denoiser role {role!r}")
        if network.in_width != dim + TIME_FEATURES or network.out_width != dim:
            raise ShapeError(
                f"network maps {network.in_width}->{network.out_width}, "
                f"need {dim + TIME_FEATURES}->{dim}")
        self.network = network
        self._role = role
        self.T = T
        self.dim = dim

    @property
    def role(self) -> str:
        return self._role

    @classmethod
    def init(cls, role: str, T: int, rng: np.random.Generator, dim: int = 2,
             width: int = 64, depth: int = 4, activation: str = "relu") -> Denoiser:
        sizes = [dim + TIME_FEATURES] + [width] * depth + [dim]
        return cls(MlpNetwork.init(sizes, activation, rng), role, T, dim)

    def copy(self, role: str | None = None) -> Denoiser:
        return Denoiser(self.network.copy(), role or self._role, self.T, self.dim)

    def parameters(self) -> list[Tensor]:
        return self.network.parameters()

    def _input(self, x_t, t):
        batch = x_t.shape[0]
        t = np.broadcast_to(np.asarray(t), (batch,))
        emb = time_embedding(t, self.T)
        if isinstance(x_t, Tensor) and x_t.requires_grad:
            return ad.concat([x_t, Tensor(emb)], axis=1)
        x = x_t.data if isinstance(x_t, Tensor) else np.asarray(x_t, dtype=np.float64)
        return np.concatenate([x, emb], axis=1)

    def predict(self, x_t, t, record: bool = False, param_grad: bool = True, taps: bool = False):
        shape = np.shape(x_t.data if isinstance(x_t, Tensor) else x_t)
        if len(shape) != 2 or shape[1] != self.dim:
            raise ShapeError(f"denoiser input must be (batch, {self.dim}), got {shape}")
        return forward(self.network, self._input(x_t, t), record=record,
                       param_grad=param_grad, taps=taps)

    def __call__(self, x_t, t) -> np.ndarray:
        return self.predict(x_t, t).data


def _eps_fn(model):
    if isinstance(model, Denoiser):
        return lambda x, t: model.predict(x, t).data
    if callable(model):
        return lambda x, t: np.asarray(model(x, t), dtype=np.float64)
    raise TypeError(f"not an epsilon model: {model!r}")


def denoise_loss(model: Denoiser, schedule: NoiseSchedule, x, t, eps, record: bool = True) -> Tensor:
    """Batch mean of ||eps_model(x_t, t) - eps||^2 with unit loss weight."""
    x = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    eps = eps.data if isinstance(eps, Tensor) else np.asarray(eps, dtype=np.float64)
    if x.shape != eps.shape:
        raise ShapeError(f"denoise_loss: x shape {x.shape} != noise shape {eps.shape}")
    t = np.asarray(t)
    if t.ndim and t.shape[0] != x.shape[0]:
        raise ShapeError(f"denoise_loss: {t.shape[0]} timesteps for batch {x.shape[0]}")
    x_t = q_sample(schedule, x, t, eps)
    pred = model.predict(x_t, t, record=record)
    return ad.mean(ad.sq_norm(ad.sub(pred, eps), axis=1))


def ddim_sample(model, schedule: NoiseSchedule, steps: int, z) -> np.ndarray:
    """Deterministic DDIM from x_T = z over ``steps`` evenly spaced timesteps; returns x0-hat."""
    if steps < 1 or steps > schedule.T:
        raise ValueError(f"steps must lie in [1, {schedule.T}], got {steps}")
    eps_fn = _eps_fn(model)
    ts = ladder(schedule.T, steps)
    x = np.array(z.data if isinstance(z, Tensor) else z, dtype=np.float64)
    x0 = x
    for i, t in enumerate(ts):
        eps = eps_fn(x, t)
        x0 = (x - schedule.sigma[t] * eps) / schedule.alpha[t]
        if i + 1 < len(ts):
            tn = ts[i + 1]
            x = schedule.alpha[tn] * x0 + schedule.sigma[tn] * eps
    return x0


def train_denoiser(model: Denoiser, schedule: NoiseSchedule, data_fn, iterations: int,
                   batch_size: int, rng: np.random.Generator, lr: float = 1e-3,
                   state: AdamState | None = None, timesteps: list[int] | None = None,
                   on_step=None, decay_to: float | None = None) -> AdamState:
    """Minimise the denoising MSE.

    ``data_fn(n)`` returns an (n, d) clean batch.  ``timesteps`` restricts t to
    a fixed set (fine-tuning a few-step student); otherwise t ~ U[1, T].
    ``decay_to`` anneals the learning rate linearly to that fraction of ``lr``.
    """
    params = model.parameters()
    state = state or AdamState.for_params(params, lr=lr)
    for it in range(iterations):
        if decay_to is not None:
            state.lr = lr * (1.0 - (1.0 - decay_to) * it / max(iterations - 1, 1))
        x = data_fn(batch_size)
        if timesteps is None:
            t = sample_train_timestep(rng, schedule.T, batch_size)
        else:
            t = np.asarray(timesteps)[rng.integers(0, len(timesteps), size=batch_size)]
        eps = rng.standard_normal(x.shape)
        model.network.zero_grad()
        loss = denoise_loss(model, schedule, x, t, eps)
        if not np.isfinite(loss.data):
            raise FloatingPointError(f"non-finite denoising loss at iteration {it}")
        ad.backward(loss)
        adam_step(state, params)
        if on_step is not None:
            on_step(it, float(loss.data))
    model.network.zero_grad()
    return state
