# %% [markdown]
# # Measuring generations with exact W2
#
# All trend numbers in this project are 2-Wasserstein distances between point
# clouds.  For equal-size clouds the optimal coupling is a permutation, so the
# distance comes from a linear assignment.  Larger or unequal clouds fall back
# to entropic Sinkhorn.

# %%
import numpy as np

from unidad.datasets import make_benchmark, sample_distribution
from unidad.evaluation import w2_exact, w2_sinkhorn, wasserstein2
from unidad.rng import stream

bench = make_benchmark("close")
target = bench.held_out[:1000]

# %% [markdown]
# A fresh draw from the target has a small but nonzero distance to the
# held-out set.  That is the floor any generator can hope for at this sample
# size.

# %%
fresh = sample_distribution(bench.target, 1000, stream(1, "demo/fresh"))
print("fresh target draw :", round(w2_exact(fresh, target), 3))

# %% [markdown]
# The metric is very sensitive to how mass is split between modes.  Moving a
# fifth of the mass from one target mode to its neighbour costs more than
# doubling the spread of every mode.

# %%
centers = bench.target.mode_centers()
rng = np.random.default_rng(0)


def mixture(weights, scale, n=1000):
    lab = rng.choice(len(centers), n, p=weights)
    return centers[lab] + scale * rng.standard_normal((n, 2))


print("balanced, scale 0.15:", round(w2_exact(mixture([1 / 3] * 3, 0.15), target), 3))
print("balanced, scale 0.30:", round(w2_exact(mixture([1 / 3] * 3, 0.30), target), 3))
print("0.53/0.13/0.33, 0.15:", round(w2_exact(mixture([0.534, 0.133, 0.333], 0.15), target), 3))

# %% [markdown]
# Sinkhorn with regularisation relative to the mean cost tracks the exact value
# closely enough for progress curves.

# %%
print("source vs target   : exact", round(w2_exact(bench_src := sample_distribution(bench.source, 1000, stream(2, "demo/src")), target), 3),
      " sinkhorn", round(w2_sinkhorn(bench_src, target), 3))
print("unequal sizes      :", round(wasserstein2(bench_src[:700], target), 3))
