"""Distribution-matching directions, the few-step student and the analytic Gaussian oracle."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, TapeError, Tensor
from .diffusion import Denoiser, NoiseSchedule, _coef, _eps_fn, ladder, q_sample

OMEGA_CLAMP = 1e-8
MAX_NFE = 4


@dataclass
class DmdDirection:
    """Per-sample update direction ``d_vec`` (batch, d) and its weights ``omega`` (batch,)."""

    d_vec: np.ndarray
    omega: np.ndarray
    tag: str = "source"

    def __post_init__(self):
        if isinstance(self.d_vec, Tensor):
            if self.d_vec.requires_grad:
                raise TapeError("DMD direction must be detached from the tape")
            self.d_vec = self.d_vec.data
        if not np.all(np.isfinite(self.d_vec)):
            raise FloatingPointError(f"non-finite {self.tag} DMD direction")


@dataclass(frozen=True)
class AnalyticGaussianScore:
    """Exact epsilon-minimiser for N(mu, I) data under VP noising."""

    mu: tuple[float, ...]

    def __post_init__(self):
        if not np.all(np.isfinite(self.mu)):
            raise ValueError("mean must be finite")

    def eps_model(self, schedule: NoiseSchedule):
        return lambda x_t, t: analytic_eps(self, schedule, x_t, t)


def analytic_eps(oracle: AnalyticGaussianScore, schedule: NoiseSchedule, x_t, t) -> np.ndarray:
    """sigma_t * (x_t - alpha_t * mu).  Noised marginal is N(alpha_t mu, I), so this
    is -sigma_t times its score."""
    x_t = np.asarray(x_t, dtype=np.float64)
    a = _coef(schedule.alpha, t, len(x_t))
    s = _coef(schedule.sigma, t, len(x_t))
    return s * (x_t - a * np.asarray(oracle.mu, dtype=np.float64))


def omega(schedule: NoiseSchedule, t, eps_true: np.ndarray, eps_fk_pred: np.ndarray, d: int) -> np.ndarray:
    """sigma_t * d / max(||eps - eps_fk||_1, clamp), one constant per sample."""
    sig = _coef(schedule.sigma, t, len(eps_true))[:, 0]
    l1 = np.abs(np.asarray(eps_true) - np.asarray(eps_fk_pred)).sum(axis=1)
    return sig * d / np.maximum(l1, OMEGA_CLAMP)


def _predict(model, x_t, t, tag: str) -> np.ndarray:
    out = _eps_fn(model)(x_t, t)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"non-finite epsilon prediction from the {tag} model")
    return out


def dmd_direction(teacher, fake, schedule: NoiseSchedule, x, t, eps,
                  tag: str = "source", omega_override: float | None = None) -> DmdDirection:
    """omega * (eps_fake(x_t) - eps_teacher(x_t)) at x_t = q_sample(x, t, eps).

    Moving a student sample along this vector lowers KL(student || teacher).
    Everything here is off the tape.
    """
    x = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    eps = np.asarray(eps.data if isinstance(eps, Tensor) else eps, dtype=np.float64)
    x_t = q_sample(schedule, x, t, eps)
    e_fk = _predict(fake, x_t, t, "fake")
    e_te = _predict(teacher, x_t, t, tag)
    if omega_override is None:
        w = omega(schedule, t, eps, e_fk, x.shape[1])
    else:
        w = np.full(len(x), float(omega_override))
    return DmdDirection(w[:, None] * (e_fk - e_te), w, tag)


def dual_dmd_direction(src: DmdDirection, trg: DmdDirection, a: float) -> DmdDirection:
    """(1 - a) * src + a * trg."""
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"weight a must lie in [0, 1], got {a}")
    if src.d_vec.shape != trg.d_vec.shape:
        raise ShapeError(f"direction shapes differ: {src.d_vec.shape} vs {trg.d_vec.shape}")
    if a == 0.0:
        return DmdDirection(src.d_vec.copy(), src.omega.copy(), "dual")
    if a == 1.0:
        return DmdDirection(trg.d_vec.copy(), trg.omega.copy(), "dual")
    return DmdDirection((1.0 - a) * src.d_vec + a * trg.d_vec,
                        (1.0 - a) * src.omega + a * trg.omega, "dual")


def dmd_surrogate_loss(x: Tensor, direction: DmdDirection) -> Tensor:
    """0.5 * mean ||x - stopgrad(x + d)||^2; d(loss)/dx = -d / batch."""
    d = direction.d_vec
    if isinstance(d, Tensor) and d.requires_grad:
        raise TapeError("DMD direction must be detached from the tape")
    if x.shape != d.shape:
        raise ShapeError(f"student batch {x.shape} does not match direction {d.shape}")
    goal = ad.stop_gradient(Tensor(x.data + d))
    return ad.mul(0.5, ad.mean(ad.sq_norm(ad.sub(x, goal), axis=1)))


class StudentGenerator:
    """Few-step generator.  Its body is an epsilon network; one call maps
    (x_t, t) to the clean-sample estimate (x_t - sigma_t eps(x_t, t)) / alpha_t."""

    def __init__(self, body: Denoiser, nfe: int):
        if not 1 <= nfe <= MAX_NFE:
            raise ValueError(f"NFE must lie in [1, {MAX_NFE}], got {nfe}")
        self.body = body
        self.nfe = nfe
        self.ladder = ladder(body.T, nfe)

    @classmethod
    def from_teacher(cls, teacher: Denoiser, nfe: int) -> StudentGenerator:
        return cls(teacher.copy(role="student"), nfe)

    def parameters(self) -> list[Tensor]:
        return self.body.parameters()

    def __call__(self, x_t, t: int, schedule: NoiseSchedule, record: bool = False):
        eps = self.body.predict(x_t, t, record=record)
        a, s = schedule.alpha[t], schedule.sigma[t]
        if record:
            return ad.mul(1.0 / a, ad.sub(x_t, ad.mul(s, eps)))
        x = x_t.data if isinstance(x_t, Tensor) else np.asarray(x_t)
        return Tensor((x - s * eps.data) / a)


def student_generate(G, schedule: NoiseSchedule, z, rng: np.random.Generator,
                     record: bool = False) -> Tensor:
    """Run the ladder: x_T = z, x_hat = G(x_t, t), re-noise to the next rung with
    fresh noise, return the last x_hat.  With ``record`` the whole chain is taped."""
    z = z.data if isinstance(z, Tensor) else np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ShapeError(f"latent batch must be (batch, d), got {z.shape}")
    rungs = G.ladder
    x = Tensor(z)
    x_hat = x
    for i, t in enumerate(rungs):
        x_hat = G(x, t, schedule, record=record)
        if i + 1 < len(rungs):
            eps = rng.standard_normal(z.shape)
            x = q_sample(schedule, x_hat, rungs[i + 1], eps) if record else \
                Tensor(q_sample(schedule, x_hat.data, rungs[i + 1], eps))
    return x_hat
