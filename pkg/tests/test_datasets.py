from pathlib import Path

import numpy as np
import pytest

from unidad.datasets import (DistributionSpec, few_shot, load_fewshot_csv, make_benchmark, ring,
                             sample_distribution, save_fewshot_csv, single_gaussian, two_moons)
from unidad.rng import Streams, stream

DATA = Path(__file__).parent / "data"


def test_zero_scale_gaussian_is_a_point():
    pts = sample_distribution(single_gaussian((1.5, -2.0), 0.0), 50, stream(0, "t"))
    np.testing.assert_array_equal(pts, np.tile([1.5, -2.0], (50, 1)))


def test_ring_occupancy():
    spec = ring(8, 4.0, 0.3)
    pts = sample_distribution(spec, 100_000, stream(0, "occupancy"))
    label = np.argmin(((pts[:, None] - spec.mode_centers()[None]) ** 2).sum(-1), axis=1)
    counts = np.bincount(label, minlength=8)
    p = 1 / 8
    noise = np.sqrt(100_000 * p * (1 - p))
    assert np.all(np.abs(counts - 100_000 * p) < 5 * noise)


def test_same_seed_same_draws():
    spec = ring(8, 4.0, 0.3)
    a = sample_distribution(spec, 20, stream(3, "x"))
    b = sample_distribution(spec, 20, stream(3, "x"))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, sample_distribution(spec, 20, stream(3, "y")))


def test_two_moons_shape():
    pts = sample_distribution(two_moons(), 500, stream(0, "moons"))
    assert pts.shape == (500, 2) and np.all(np.isfinite(pts))


def test_invalid_specs():
    with pytest.raises(ValueError):
        DistributionSpec("spiral", ((0.0, 0.0),), 1.0)
    with pytest.raises(ValueError):
        DistributionSpec("grid", ((0.0, np.inf),), 1.0)
    with pytest.raises(ValueError):
        single_gaussian((0, 0), -1.0)
    with pytest.raises(ValueError):
        few_shot(ring(8, 4, 0.3), 3)
    with pytest.raises(ValueError):
        make_benchmark("far")


def test_close_shots_sit_on_designated_modes(close_bench):
    centers = close_bench.target.mode_centers()
    assert len(centers) == 3
    for k in (1, 5, 10):
        ys = close_bench.shots[k].samples
        # per-coordinate offset from the nearest designated center
        d = np.abs(ys[:, None] - centers[None]).max(-1).min(axis=1)
        assert np.all(d < 3 * 0.15)


def test_distant_modes_are_off_the_ring(distant_bench):
    t = distant_bench.target.mode_centers()
    s = distant_bench.source.mode_centers()
    d = np.sqrt(((t[:, None] - s[None]) ** 2).sum(-1))
    assert d.min() == pytest.approx(2.0, abs=1e-12)


def test_support_containment(close_bench, distant_bench):
    floor = -6.0
    assert np.all(close_bench.source.log_density(close_bench.held_out) > floor)
    assert np.all(distant_bench.source.log_density(distant_bench.held_out) < floor)


def test_benchmarks_are_reproducible():
    a, b = make_benchmark("close"), make_benchmark("close")
    for k in (1, 5, 10):
        np.testing.assert_array_equal(a.shots[k].samples, b.shots[k].samples)
    np.testing.assert_array_equal(a.held_out, b.held_out)
    assert not a.shots[10].samples.flags.writeable


@pytest.mark.parametrize("name", ["close", "distant"])
def test_golden_ten_shot_sets(name):
    golden = load_fewshot_csv(DATA / f"{name}_10shot.csv")
    np.testing.assert_array_equal(make_benchmark(name).shots[10].samples, golden)


def test_csv_round_trip(tmp_path, rng):
    pts = rng.normal(size=(7, 2)) * 1e3
    save_fewshot_csv(pts, tmp_path / "s.csv")
    np.testing.assert_array_equal(load_fewshot_csv(tmp_path / "s.csv"), pts)
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        load_fewshot_csv(tmp_path / "bad.csv")


def test_streams_are_order_independent():
    a = Streams(5)
    x1 = a["noise"].standard_normal(3)
    y1 = a["t"].integers(0, 100, 3)
    b = Streams(5)
    y2 = b["t"].integers(0, 100, 3)
    x2 = b["noise"].standard_normal(3)
    np.testing.assert_array_equal(x1, x2)
    np.testing.assert_array_equal(y1, y2)


def test_stream_state_round_trip():
    s = Streams(1)
    s["a"].standard_normal(10)
    restored = Streams.from_state(s.state())
    np.testing.assert_array_equal(s["a"].standard_normal(4), restored["a"].standard_normal(4))
