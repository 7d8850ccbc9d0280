"""Sample-based quality metrics for generated 2-D point clouds."""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

EXACT_LIMIT = 2000
SINKHORN_REG = 0.01
SINKHORN_ITERS = 500

REPORT_COLUMNS = ("w2_to_target", "w2_to_source", "diversity", "coverage", "memorization")


def sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _check(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("wasserstein2 needs non-empty point sets")
    return a.reshape(len(a), -1), b.reshape(len(b), -1)


def w2_exact(a, b) -> float:
    """Exact W2 between equal-size uniform point clouds via optimal assignment."""
    a, b = _check(a, b)
    if len(a) != len(b):
        raise ValueError("exact assignment needs equal sample counts")
    cost = sq_dists(a, b)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(max(cost[rows, cols].mean(), 0.0)))


def _sinkhorn_cost(cost: np.ndarray, reg: float, iters: int) -> float:
    n, m = cost.shape
    a = np.full(n, 1.0 / n)
    b = np.full(m, 1.0 / m)
    kernel = np.exp(-cost / reg)
    u = np.ones(n)
    v = np.ones(m)
    for _ in range(iters):
        u = a / (kernel @ v)
        v = b / (kernel.T @ u)
    plan = u[:, None] * kernel * v[None, :]
    return float(np.sum(plan * cost))


def w2_sinkhorn(a, b, reg: float = SINKHORN_REG, iters: int = SINKHORN_ITERS) -> float:
    """Debiased entropic estimate sqrt(OT(a,b) - OT(a,a)/2 - OT(b,b)/2).

    ``reg`` is relative to the largest pairwise cost of the combined cloud, which
    keeps the Gibbs kernel above float64 underflow for any data scale.
    """
    a, b = _check(a, b)
    both = np.concatenate([a, b])
    scale = float(sq_dists(both, both).max()) or 1.0
    eps = reg * scale
    ab = _sinkhorn_cost(sq_dists(a, b), eps, iters)
    aa = _sinkhorn_cost(sq_dists(a, a), eps, iters)
    bb = _sinkhorn_cost(sq_dists(b, b), eps, iters)
    return float(np.sqrt(max(ab - 0.5 * aa - 0.5 * bb, 0.0)))


def wasserstein2(a, b) -> float:
    a, b = _check(a, b)
    if len(a) == len(b) and len(a) <= EXACT_LIMIT:
        return w2_exact(a, b)
    return w2_sinkhorn(a, b)


def intra_diversity(generated, exemplars, return_flag: bool = False):
    """Mean pairwise distance inside each nearest-exemplar cluster, averaged over
    clusters holding at least two generations."""
    gen = np.asarray(generated, dtype=np.float64)
    ex = np.asarray(getattr(exemplars, "samples", exemplars), dtype=np.float64)
    if len(gen) < 2:
        raise ValueError("intra_diversity needs at least 2 generations")
    owner = np.argmin(sq_dists(gen, ex), axis=1)
    per_cluster = []
    for c in range(len(ex)):
        pts = gen[owner == c]
        if len(pts) < 2:
            continue
        d = np.sqrt(sq_dists(pts, pts))
        iu = np.triu_indices(len(pts), 1)
        per_cluster.append(d[iu].mean())
    degenerate = not per_cluster
    value = 0.0 if degenerate else float(np.mean(per_cluster))
    return (value, degenerate) if return_flag else value


def mode_coverage(generated, centers, radius: float) -> float:
    if radius <= 0:
        raise ValueError("radius must be positive")
    gen = np.asarray(generated, dtype=np.float64).reshape(-1, 2)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    if len(gen) == 0:
        return 0.0
    hit = (sq_dists(centers, gen) <= radius * radius).any(axis=1)
    return float(hit.mean())


def memorization(generated, exemplars) -> float:
    """Mean distance from each generation to its nearest few-shot exemplar."""
    gen = np.asarray(generated, dtype=np.float64)
    ex = np.asarray(getattr(exemplars, "samples", exemplars), dtype=np.float64)
    return float(np.sqrt(sq_dists(gen, ex).min(axis=1)).mean())


@dataclass
class MetricsReport:
    w2_to_target: float
    w2_to_source: float
    diversity: float
    coverage: float
    memorization: float
    n_generated: int = 0
    n_reference: int = 0

    def __post_init__(self):
        for k in REPORT_COLUMNS:
            v = getattr(self, k)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"metric {k} must be finite and >= 0, got {v}")
        if self.coverage > 1:
            raise ValueError(f"coverage must lie in [0, 1], got {self.coverage}")

    def row(self) -> list[str]:
        return [repr(float(getattr(self, k))) for k in REPORT_COLUMNS]

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate(generated, target_ref, source_ref, exemplars, source_centers,
             coverage_radius: float = 0.9) -> MetricsReport:
    """Compare generations against held-out target and source samples.

    References are subsampled to the generation count so the exact solver applies.
    """
    gen = np.asarray(generated, dtype=np.float64)
    n = len(gen)
    tgt = np.asarray(target_ref)[:n]
    src = np.asarray(source_ref)[:n]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        div = intra_diversity(gen, exemplars)
    return MetricsReport(
        w2_to_target=wasserstein2(gen, tgt),
        w2_to_source=wasserstein2(gen, src),
        diversity=div,
        coverage=mode_coverage(gen, source_centers, coverage_radius),
        memorization=memorization(gen, exemplars),
        n_generated=n,
        n_reference=len(tgt),
    )
