"""Acceptance gate.  Each test reports one PASS/FAIL line through ``gate.verdict``;
the lines are repeated in the terminal summary."""
import time

import numpy as np
import pytest

from unidad import autodiff as ad
from unidad import training as tr
from unidad.adversarial import FAMILIES, gan_d_loss, gan_g_loss
from unidad.autodiff import Tensor
from unidad.config import TrainConfig
from unidad.datasets import make_benchmark
from unidad.diffusion import Denoiser, build_schedule
from unidad.distillation import AnalyticGaussianScore, analytic_eps, dmd_direction, dual_dmd_direction
from unidad.evaluation import w2_exact
from unidad.nn import MlpNetwork, forward
from unidad.rng import stream

from gate import verdict
from oracles import brute_force_w2, central_diff, gaussian_log_density, rel_err, run_affine_dmd

FINAL_SAMPLES = 1000


# ------------------------------------------------------------ shared runs

class RunCache:
    """Trains each (pipeline, config) once per session and evaluates it on
    ``FINAL_SAMPLES`` generations against the first held-out samples."""

    def __init__(self, source):
        self.source = source
        self.benches = {}
        self.done = {}

    def bench(self, name):
        if name not in self.benches:
            self.benches[name] = make_benchmark(name)
        return self.benches[name]

    def __call__(self, kind, benchmark="close", student=None, target=None, tag="", **overrides):
        config = TrainConfig(benchmark=benchmark, **overrides)
        key = (kind, config.to_text(), tag)
        if key not in self.done:
            bench = self.bench(benchmark)
            t0 = time.time()
            result = tr.run_pipeline(kind, config, bench, self.source, student_ckpt=student,
                                     target_ckpt=target, evaluate_during=False)
            ctx = tr.EvalContext.build(bench, config.k_shot, FINAL_SAMPLES, config.seed)
            report = ctx.report(result.sample(ctx, build_schedule(config.T)))
            print(f"  {kind} {benchmark} {overrides} {tag}: {report.as_dict()} ({time.time() - t0:.0f} s)")
            self.done[key] = (result, report)
        return self.done[key]


@pytest.fixture(scope="module")
def runs(source_teacher):
    return RunCache(source_teacher)


# ------------------------------------------------------------ criteria 1-7

def test_criterion_01_autodiff_matches_finite_differences():
    t0 = time.time()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for case in range(200):
        sizes = [int(rng.integers(1, 5))] + [int(rng.integers(2, 6)) for _ in range(int(rng.integers(1, 3)))] \
            + [int(rng.integers(1, 4))]
        act = ("tanh", "relu")[case % 2]
        net = MlpNetwork.init(sizes, act, rng)
        for b in net.biases:
            # zero biases behind a dead layer would park relu exactly on its kink
            b.data = rng.normal(size=b.data.shape) * 0.5
        x0 = rng.normal(size=(3, sizes[0]))
        w = rng.normal(size=(3, sizes[-1]))

        def value(xv):
            return float(np.sum(np.tanh(forward(net, xv).data) * w))

        net.zero_grad()
        x = Tensor(x0.copy(), requires_grad=True)
        ad.backward(ad.sum(ad.mul(ad.tanh(forward(net, x, record=True)), w)))
        worst = max(worst, rel_err(x.grad, central_diff(value, x0)))
        for p in net.parameters():
            def f(v, p=p):
                saved, p.data = p.data, v
                try:
                    return value(x0)
                finally:
                    p.data = saved
            worst = max(worst, rel_err(p.grad, central_diff(f, p.data)))
    elapsed = time.time() - t0
    verdict(1, worst < 1e-5 and elapsed < 10, f"max rel err {worst:.2e} over 200 cases, {elapsed:.1f} s")


def test_criterion_02_variance_preserving_schedule():
    t0 = time.time()
    s = build_schedule(1000)
    dev = float(np.max(np.abs(s.alpha ** 2 + s.sigma ** 2 - 1.0)))
    elapsed = time.time() - t0
    verdict(2, dev <= 1e-12 and elapsed < 1, f"max |alpha^2 + sigma^2 - 1| = {dev:.1e}, {elapsed:.2f} s")


def test_criterion_03_analytic_score_oracle():
    t0 = time.time()
    s = build_schedule(1000)
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        mu = rng.uniform(-3, 3, 2)
        t = int(rng.integers(1, 1001))
        x = s.alpha[t] * mu + rng.normal(size=2) * 1.5
        # the noised marginal of N(mu, I) is N(alpha_t mu, I)
        score = central_diff(lambda v: gaussian_log_density(v, s.alpha[t] * mu, 1.0), x, h=1e-4)
        expected = -s.sigma[t] * score
        got = analytic_eps(AnalyticGaussianScore(tuple(mu)), s, x[None], t)[0]
        worst = max(worst, float(np.linalg.norm(got - expected) / max(np.linalg.norm(expected), 1e-3)))
    elapsed = time.time() - t0
    verdict(3, worst < 1e-6 and elapsed < 5, f"max rel err {worst:.1e} on 1000 points, {elapsed:.1f} s")


def test_criterion_04_dmd_descends_kl():
    t0 = time.time()
    mean, kl = run_affine_dmd(steps=500, seed=0)
    dist = float(np.linalg.norm(mean - np.array([2.0, 0.0])))
    elapsed = time.time() - t0
    ok = dist < 0.1 and kl[100] < kl[0] and elapsed < 30
    verdict(4, ok, f"mean ({mean[0]:.3f}, {mean[1]:.3f}), |mean - (2,0)| = {dist:.3f}, "
                   f"KL {kl[0]:.3f} -> {kl[100]:.3f} at step 100, {elapsed:.1f} s")


def test_criterion_05_dual_direction_is_linear():
    t0 = time.time()
    rng = np.random.default_rng(5)
    s = build_schedule(1000)
    nets = [Denoiser.init(r, 1000, rng, width=16, depth=2) for r in ("source", "target", "fake")]
    x, eps = rng.normal(size=(64, 2)) * 3, rng.normal(size=(64, 2))
    t = rng.integers(20, 981, 64)
    d_src = dmd_direction(nets[0], nets[2], s, x, t, eps)
    d_trg = dmd_direction(nets[1], nets[2], s, x, t, eps)
    worst = 0.0
    for a in (0.0, 0.25, 0.5, 0.75, 1.0):
        mix = dual_dmd_direction(d_src, d_trg, a).d_vec
        ref = (1 - a) * d_src.d_vec + a * d_trg.d_vec
        worst = max(worst, float(np.max(np.abs(mix - ref)) / np.max(np.abs(ref))))
    elapsed = time.time() - t0
    verdict(5, worst <= 4 * np.finfo(float).eps and elapsed < 1, f"max rel dev {worst:.1e}, {elapsed:.2f} s")


def test_criterion_06_algorithm_schedule(monkeypatch):
    t0 = time.time()
    bench = make_benchmark("close")
    config = TrainConfig(update_ratio=5, target_mode="online")
    source = Denoiser.init("source", 1000, stream(0, "gate/source"), width=config.width, depth=config.depth)
    before = [p.data.copy() for p in source.parameters()]
    state = tr.init_state(config, source, bench.shots[10].samples)
    counts = {}
    real = tr.adam_step

    def counting(opt, params, *args, **kw):
        name = next(k for k, v in state.opts.items() if v is opt)
        counts[name] = counts.get(name, 0) + 1
        return real(opt, params, *args, **kw)

    monkeypatch.setattr(tr, "adam_step", counting)
    schedule = build_schedule(1000)
    unchanged = True
    for _ in range(100):
        tr.unidad_step(state, config, schedule)
        unchanged &= all(np.array_equal(a, p.data) for a, p in zip(before, state.source.parameters()))
    elapsed = time.time() - t0
    want = {"student": 20, "fake_disc": 100, "target": 20}
    verdict(6, counts == want and unchanged and elapsed < 30,
            f"updates {counts}, source unchanged={unchanged}, {elapsed:.1f} s")


def test_criterion_07_exact_ot_matches_brute_force():
    t0 = time.time()
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        a, b = rng.normal(size=(8, 2)), rng.normal(size=(8, 2))
        worst = max(worst, abs(w2_exact(a, b) - brute_force_w2(a, b)))
    elapsed = time.time() - t0
    verdict(7, worst <= 1e-12 and elapsed < 10, f"max |diff| {worst:.1e} on 50 instances, {elapsed:.1f} s")


# ------------------------------------------------------------ trend criteria

@pytest.mark.slow
def test_criterion_08_a_sweep_on_distant(runs):
    t0 = time.time()
    r = {a: runs("unidad", "distant", a=a)[1] for a in (0.0, 0.75, 1.0)}
    elapsed = time.time() - t0
    trg = r[0.75].w2_to_target < r[0.0].w2_to_target
    src = r[0.0].w2_to_source < r[1.0].w2_to_source
    verdict(8, trg and src and elapsed < 600,
            f"W2 to target a=0.75 {r[0.75].w2_to_target:.3f} vs a=0 {r[0.0].w2_to_target:.3f}; "
            f"W2 to source a=0 {r[0.0].w2_to_source:.3f} vs a=1 {r[1.0].w2_to_source:.3f}; {elapsed:.0f} s")


@pytest.mark.slow
def test_criterion_09_nfe_trend(runs):
    t0 = time.time()
    w = {n: runs("unidad", "close", nfe=n)[1].w2_to_target for n in (1, 3, 4)}
    elapsed = time.time() - t0
    ok = w[3] <= w[1] and abs(w[4] - w[3]) <= 0.15 * w[3] and elapsed < 900
    verdict(9, ok, f"W2 to target NFE=1 {w[1]:.3f}, NFE=3 {w[3]:.3f}, NFE=4 {w[4]:.3f}; {elapsed:.0f} s")


@pytest.mark.slow
def test_criterion_10_pipeline_ordering(runs):
    t0 = time.time()
    wins, parts = 0, []
    for seed in (0, 1, 2):
        u = runs("unidad", "close", seed=seed)[1]
        a = runs("dmd2_then_ft", "close", seed=seed)[1]
        b = runs("ft_then_dmd2", "close", seed=seed)[1]
        ok = u.w2_to_target <= min(a.w2_to_target, b.w2_to_target) and u.diversity >= b.diversity
        wins += ok
        parts.append(f"s{seed} W2 {u.w2_to_target:.3f}/{a.w2_to_target:.3f}/{b.w2_to_target:.3f} "
                     f"div {u.diversity:.3f}/{b.diversity:.3f} {'ok' if ok else 'no'}")
    elapsed = time.time() - t0
    verdict(10, wins >= 2 and elapsed < 1800,
            f"{wins}/3 seeds (unidad/dmd2_then_ft/ft_then_dmd2): " + "; ".join(parts) + f"; {elapsed:.0f} s")


@pytest.mark.slow
def test_criterion_11_gan_families(runs):
    t0 = time.time()
    finite = True
    variants = [dict(gan_family=f) for f in FAMILIES] + [dict(multi_head=False)]
    for kw in variants:
        result, report = runs("unidad", "close", iterations=2000, **kw)
        for row in result.log:
            finite &= all(np.isfinite(v) for k, v in row.items() if v is not None)
        finite &= bool(np.all(np.isfinite(result.sample(tr.EvalContext.build(runs.bench("close"), 10, 200, 0),
                                                        build_schedule(1000)))))
    rng = np.random.default_rng(11)
    worst = 0.0
    for family in FAMILIES:
        real = [Tensor(rng.normal(size=(16, 1))) for _ in range(4)]
        fake = [Tensor(rng.normal(size=(16, 1))) for _ in range(4)]
        worst = max(worst,
                    abs(float(gan_d_loss(family, real, fake).data)
                        - sum(float(gan_d_loss(family, [r], [f]).data) for r, f in zip(real, fake))),
                    abs(float(gan_g_loss(family, fake).data) - sum(float(gan_g_loss(family, [f]).data) for f in fake)))
    elapsed = time.time() - t0
    verdict(11, finite and worst <= 1e-12 and elapsed < 600,
            f"{len(variants)} variants finite={finite}, aggregation dev {worst:.1e}, {elapsed:.0f} s")


@pytest.mark.slow
def test_criterion_12_checkpoint_agnostic_init(runs):
    t0 = time.time()
    base = runs("unidad", "close")[1].w2_to_target
    student = runs("dmd2", "close")[0].student
    target = runs("ft", "close")[0].teacher
    variants = {
        "student": runs("unidad", "close", student=student, tag="student",
                        student_init="pre-distilled-checkpoint")[1],
        "target": runs("unidad", "close", target=target, tag="target", target_mode="frozen-checkpoint")[1],
        "both": runs("unidad", "close", student=student, target=target, tag="both",
                     student_init="pre-distilled-checkpoint", target_mode="frozen-checkpoint")[1],
    }
    elapsed = time.time() - t0
    ok = all(r.w2_to_target <= 1.25 * base for r in variants.values()) and elapsed < 1200
    verdict(12, ok, f"from scratch {base:.3f}; " +
            ", ".join(f"{k} {r.w2_to_target:.3f}" for k, r in variants.items()) + f"; {elapsed:.0f} s")


def test_criterion_13_determinism(tmp_path):
    from unidad import cli
    cfg = tmp_path / "small.cfg"
    cfg.write_text("width = 32\ndepth = 3\niterations = 200\nft_iterations = 100\npretrain_iterations = 300\n"
                   "eval_every = 100\neval_samples = 200\n")
    assert cli.main(["pretrain-source", "--config", str(cfg), "--out", str(tmp_path / "src")]) == 0
    src = str(tmp_path / "src" / "checkpoint.udad")
    same = {}
    for kind in tr.PIPELINES:
        for rep in ("x", "y"):
            assert cli.main(["run", "--pipeline", kind, "--config", str(cfg), "--checkpoint", src,
                             "--out", str(tmp_path / f"{kind}-{rep}")]) == 0
        same[kind] = all((tmp_path / f"{kind}-x" / f).read_bytes() == (tmp_path / f"{kind}-y" / f).read_bytes()
                         for f in ("metrics.csv", "checkpoint.udad"))
    verdict(13, all(same.values()), "byte-identical metrics.csv and checkpoint: " +
            ", ".join(f"{k}={v}" for k, v in same.items()))
