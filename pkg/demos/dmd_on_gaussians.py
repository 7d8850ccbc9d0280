# %% [markdown]
# # Distribution matching with exact scores
#
# Before any network is trained we can watch the distillation rule work on a
# problem where every score is known in closed form.  The "teacher" is
# N((2, 0), I) and the generator is affine: x = z W + b with z ~ N(0, I).
# The "fake" score simply tracks the generator's current mean.
#
# The update moves each sample along  d = w * (eps_fake - eps_teacher),
# so samples drift from where the fake density is high towards where the
# teacher density is high.

# %%
import numpy as np

from unidad import autodiff as ad
from unidad.autodiff import Tensor
from unidad.diffusion import build_schedule, sample_timestep
from unidad.distillation import AnalyticGaussianScore, dmd_direction, dmd_surrogate_loss
from unidad.nn import AdamState, adam_step
from unidad.rng import stream

schedule = build_schedule(1000)
teacher = AnalyticGaussianScore((2.0, 0.0)).eps_model(schedule)

W = Tensor(np.eye(2), requires_grad=True)
b = Tensor(np.zeros(2), requires_grad=True)
opt = AdamState.for_params([W, b], lr=0.01)
rng = stream(0, "demo/affine")

# %% [markdown]
# Each step noises a fresh batch at random timesteps, then takes one Adam
# step on the surrogate loss  0.5 * |x - stopgrad(x + d)|^2, whose gradient in x
# is exactly -d.

# %%
for step in range(501):
    z = rng.standard_normal((256, 2))
    t = sample_timestep(rng, 1000, 256)
    eps = rng.standard_normal((256, 2))
    x = ad.add(ad.matmul(Tensor(z), W), b)
    fake = AnalyticGaussianScore(tuple(b.data)).eps_model(schedule)
    direction = dmd_direction(teacher, fake, schedule, x, t, eps)
    W.grad = b.grad = None
    ad.backward(dmd_surrogate_loss(x, direction))
    adam_step(opt, [W, b])
    if step % 100 == 0:
        print(f"step {step:3d}  generator mean ({b.data[0]:+.3f}, {b.data[1]:+.3f})")

# %% [markdown]
# The mean lands on (2, 0).  The covariance W^T W stays close to the identity
# because teacher and fake share unit variance, so only the location differs.

# %%
print("W^T W =\n", np.round(W.data.T @ W.data, 3))
