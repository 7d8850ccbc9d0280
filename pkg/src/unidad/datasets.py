"""Synthetic 2-D source/target distributions and deterministic few-shot sets."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import stream

KINDS = ("gaussian-ring", "two-moons", "grid", "single-gaussian")
SHOTS = (1, 5, 10)
HELD_OUT = 2000
FEWSHOT_SEED = 20240
HELD_OUT_SEED = 777


@dataclass(frozen=True)
class DistributionSpec:
    """A mixture of isotropic Gaussians placed at ``centers`` (two-moons: noisy arcs).

    ``centers`` are given before the global transform; :meth:`mode_centers`
    returns them after the global affine map.
    """

    kind: str
    centers: tuple[tuple[float, float], ...]
    scale: float
    rotation: float = 0.0
    zoom: float = 1.0
    translation: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.scale < 0 or not math.isfinite(self.scale):
            raise ValueError(f"mode scale must be finite and >= 0, got {self.scale}")
        if not np.all(np.isfinite(np.asarray(self.centers, dtype=float))):
            raise ValueError("mode centers must be finite")

    @property
    def mode_count(self) -> int:
        return len(self.centers)

    def _transform(self, pts: np.ndarray) -> np.ndarray:
        if self.rotation == 0.0 and self.zoom == 1.0 and self.translation == (0.0, 0.0):
            return pts
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        rot = np.array([[c, -s], [s, c]])
        return self.zoom * pts @ rot.T + np.asarray(self.translation)

    def mode_centers(self) -> np.ndarray:
        return self._transform(np.asarray(self.centers, dtype=np.float64).reshape(-1, 2))

    def log_density(self, x: np.ndarray) -> np.ndarray:
        """Exact mixture log-density (Gaussian-mixture kinds only)."""
        if self.kind == "two-moons":
            raise NotImplementedError("two-moons has no closed-form density here")
        s = self.scale * self.zoom
        mu = self.mode_centers()
        d2 = ((x[:, None, :] - mu[None, :, :]) ** 2).sum(-1)
        logs = -d2 / (2 * s * s) - math.log(2 * math.pi * s * s)
        m = logs.max(axis=1, keepdims=True)
        return (m + np.log(np.exp(logs - m).mean(axis=1, keepdims=True)))[:, 0]


def ring(modes: int, radius: float, scale: float, indices=None) -> DistributionSpec:
    ks = range(modes) if indices is None else indices
    centers = tuple((radius * math.cos(2 * math.pi * k / modes),
                     radius * math.sin(2 * math.pi * k / modes)) for k in ks)
    return DistributionSpec("gaussian-ring", centers, scale)


def grid(side: int, radius: float, scale: float, rotation: float = 0.0) -> DistributionSpec:
    """side x side square grid whose corner points sit at distance ``radius``."""
    half = radius / math.sqrt(2)
    coords = np.linspace(-half, half, side) if side > 1 else np.zeros(1)
    centers = tuple((float(x), float(y)) for y in coords for x in coords)
    return DistributionSpec("grid", centers, scale, rotation=rotation)


def two_moons(scale: float = 0.1) -> DistributionSpec:
    return DistributionSpec("two-moons", ((0.0, 0.0), (1.0, 0.5)), scale)


def single_gaussian(mu, scale: float) -> DistributionSpec:
    return DistributionSpec("single-gaussian", (tuple(float(v) for v in mu),), scale)


def sample_distribution(spec: DistributionSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. draws, shape (n, 2)."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    if spec.kind == "two-moons":
        upper = rng.random(n) < 0.5
        theta = rng.random(n) * math.pi
        pts = np.where(upper[:, None],
                       np.stack([np.cos(theta), np.sin(theta)], 1),
                       np.stack([1 - np.cos(theta), 0.5 - np.sin(theta)], 1))
        pts = pts + spec.scale * rng.standard_normal((n, 2))
        return spec._transform(pts)
    centers = np.asarray(spec.centers, dtype=np.float64).reshape(-1, 2)
    idx = rng.integers(0, len(centers), size=n)
    pts = centers[idx] + spec.scale * rng.standard_normal((n, 2))
    return spec._transform(pts)


@dataclass(frozen=True)
class FewShotSet:
    samples: np.ndarray
    spec: DistributionSpec
    seed: int

    @property
    def k(self) -> int:
        return len(self.samples)


def few_shot(spec: DistributionSpec, k: int, seed: int = FEWSHOT_SEED) -> FewShotSet:
    if k not in SHOTS:
        raise ValueError(f"k must be one of {SHOTS}, got {k}")
    ys = sample_distribution(spec, k, stream(seed, f"fewshot/{k}"))
    ys.setflags(write=False)
    return FewShotSet(ys, spec, seed)


@dataclass(frozen=True)
class Benchmark:
    name: str
    source: DistributionSpec
    target: DistributionSpec
    shots: dict = field(default_factory=dict)
    held_out: np.ndarray | None = None


SOURCE_RADIUS = 4.0
SOURCE_SCALE = 0.3


def make_benchmark(name: str) -> Benchmark:
    """``close``: target = 3 adjacent modes of the source ring at half the spread.
    ``distant``: target = 4-mode grid rotated 45 degrees at radius 6, off the ring."""
    source = ring(8, SOURCE_RADIUS, SOURCE_SCALE)
    if name == "close":
        target = ring(8, SOURCE_RADIUS, 0.15, indices=(0, 1, 2))
    elif name == "distant":
        target = grid(2, 6.0, 0.3, rotation=math.pi / 4)
    else:
        raise ValueError(f"unknown benchmark {name!r} (expected 'close' or 'distant')")
    shots = {k: few_shot(target, k) for k in SHOTS}
    held = sample_distribution(target, HELD_OUT, stream(HELD_OUT_SEED, f"held-out/{name}"))
    held.setflags(write=False)
    return Benchmark(name, source, target, shots, held)


def save_fewshot_csv(samples: np.ndarray, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["x0", "x1"])
        for row in np.asarray(samples):
            w.writerow([f"{v:.17g}" for v in row])


def load_fewshot_csv(path) -> np.ndarray:
    with open(Path(path), newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != ["x0", "x1"]:
        raise ValueError(f"{path}: expected header 'x0,x1'")
    return np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64).reshape(-1, 2)
