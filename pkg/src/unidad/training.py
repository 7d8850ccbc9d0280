"""Joint distill-and-adapt training loop plus the baseline pipelines."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .adversarial import MultiHeadDiscriminator, extract_logits, gan_d_loss, gan_g_loss
from .autodiff import TapeError, Tensor
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .datasets import Benchmark, DistributionSpec, sample_distribution
from .diffusion import (Denoiser, NoiseSchedule, build_schedule, ddim_sample, denoise_loss,
                        q_sample, sample_timestep, train_denoiser)
from .distillation import (StudentGenerator, dmd_direction, dmd_surrogate_loss,
                           dual_dmd_direction, student_generate)
from .evaluation import MetricsReport, evaluate
from .nn import AdamState, MlpNetwork, NonFiniteError, adam_step, forward
from .rng import Streams, stream

PIPELINES = ("unidad", "ft", "dmd2", "ft_then_dmd2", "dmd2_then_ft")
LOSS_COLUMNS = ("loss_g_dmd_src", "loss_g_dmd_trg", "loss_g_gan", "loss_fk_mse",
                "loss_d_gan", "loss_trg_mse")
METRIC_COLUMNS = ("w2_to_target", "w2_to_source", "diversity", "coverage", "memorization")
LOG_COLUMNS = ("step",) + LOSS_COLUMNS + METRIC_COLUMNS
FT_SAMPLER_STEPS = 25
SOURCE_REF_SEED = 4242


class MissingCheckpointError(FileNotFoundError):
    pass


@dataclass
class TrainerState:
    G: StudentGenerator
    source: Denoiser
    fake: Denoiser
    target: Denoiser | None
    disc: MultiHeadDiscriminator
    opts: dict[str, AdamState]
    streams: Streams
    reals: np.ndarray | DistributionSpec
    train_target: bool
    step: int = 0
    window: dict = field(default_factory=dict)

    def groups(self) -> dict[str, list[Tensor]]:
        out = {"student": self.G.parameters(),
               "fake_disc": self.fake.parameters() + self.disc.parameters()}
        if self.target is not None:
            out["target"] = self.target.parameters()
        return out

    def zero_grads(self) -> None:
        for net in (self.G.body, self.source, self.fake) + ((self.target,) if self.target else ()):
            net.network.zero_grad()
        self.disc.zero_grad()


def init_state(config: TrainConfig, source: Denoiser, reals,
               student: StudentGenerator | None = None,
               target: Denoiser | None = None) -> TrainerState:
    """Fake teacher and (online) target teacher start as copies of the source teacher.

    A supplied ``target`` is used as a frozen pre-adapted teacher; a supplied
    ``student`` replaces the copy-of-source initialisation.
    """
    streams = Streams(config.seed)
    fake = source.copy(role="fake")
    if config.target_mode == "disabled":
        trg, train_target = None, False
    elif config.target_mode == "frozen-checkpoint":
        if target is None:
            raise MissingCheckpointError("target_mode=frozen-checkpoint needs a pre-adapted target teacher")
        trg, train_target = target.copy(role="target"), False
    else:
        trg, train_target = source.copy(role="target"), True
    if config.student_init == "pre-distilled-checkpoint":
        if student is None:
            raise MissingCheckpointError("student_init=pre-distilled-checkpoint needs a distilled student")
        G = StudentGenerator(student.body.copy(role="student"), config.nfe)
    else:
        G = StudentGenerator.from_teacher(source, config.nfe)
    disc = MultiHeadDiscriminator.init(fake, streams["init/disc"], multi_head=config.multi_head)
    state = TrainerState(G, source, fake, trg, disc, {}, streams, reals, train_target)
    state.opts["student"] = AdamState.for_params(G.parameters(), lr=config.lr_for("student"))
    state.opts["fake_disc"] = AdamState.for_params(state.groups()["fake_disc"], lr=config.lr_for("fake"))
    if train_target:
        state.opts["target"] = AdamState.for_params(trg.parameters(), lr=config.lr_for("target"))
    return state


def draw_reals(state: TrainerState, n: int) -> np.ndarray:
    rng = state.streams["reals"]
    if isinstance(state.reals, DistributionSpec):
        return sample_distribution(state.reals, n, rng)
    pool = np.asarray(state.reals)
    return pool[rng.integers(0, len(pool), size=n)]


# --------------------------------------------------------------------- losses

def _value(d: np.ndarray) -> float:
    return float(0.5 * np.mean(np.sum(d * d, axis=1)))


def student_loss(state: TrainerState, config: TrainConfig, schedule: NoiseSchedule,
                 x: Tensor, t, eps) -> tuple[Tensor, dict]:
    """Dual-domain DMD surrogate plus the weighted adversarial generator loss."""
    a = config.a if state.target is not None else 0.0
    d_src = dmd_direction(state.source, state.fake, schedule, x, t, eps, tag="source")
    parts = {"loss_g_dmd_src": _value(d_src.d_vec)}
    if state.target is not None and a > 0.0:
        d_trg = dmd_direction(state.target, state.fake, schedule, x, t, eps, tag="target")
        parts["loss_g_dmd_trg"] = _value(d_trg.d_vec)
        direction = dual_dmd_direction(d_src, d_trg, a)
    else:
        direction = d_src
    loss = dmd_surrogate_loss(x, direction)
    if config.lambda_g_gan > 0:
        x_t = q_sample(schedule, x, t, eps)
        logits = extract_logits(state.disc, state.fake, x_t, t, record=True, param_grad=False)
        g_gan = gan_g_loss(config.gan_family, logits)
        parts["loss_g_gan"] = float(g_gan.data)
        loss = ad.add(loss, ad.mul(config.lambda_g_gan, g_gan))
    return loss, parts


def fake_and_disc_loss(state: TrainerState, config: TrainConfig, schedule: NoiseSchedule,
                       x_detached, y, t, eps) -> tuple[Tensor, dict]:
    """Fake-teacher denoising MSE on student samples plus the weighted discriminator loss."""
    if isinstance(x_detached, Tensor) and x_detached.requires_grad:
        raise TapeError("student samples must be detached before the fake-teacher update")
    x = x_detached.data if isinstance(x_detached, Tensor) else np.asarray(x_detached)
    x_t = q_sample(schedule, x, t, eps)
    out, hidden = state.fake.predict(x_t, t, record=True, taps=True)
    mse = ad.mean(ad.sq_norm(ad.sub(out, eps), axis=1))
    parts = {"loss_fk_mse": float(mse.data)}
    loss = mse
    if config.lambda_d_gan > 0:
        fake_logits = [forward(h, hidden[b], record=True) for h, b in zip(state.disc.heads, state.disc.taps)]
        y_t = q_sample(schedule, np.asarray(y), t, eps)
        real_logits = extract_logits(state.disc, state.fake, y_t, t, record=True)
        d_gan = gan_d_loss(config.gan_family, real_logits, fake_logits)
        parts["loss_d_gan"] = float(d_gan.data)
        loss = ad.add(loss, ad.mul(config.lambda_d_gan, d_gan))
    return loss, parts


def target_teacher_loss(state: TrainerState, schedule: NoiseSchedule, y, t, eps) -> Tensor:
    if state.target is None or not state.train_target:
        raise RuntimeError("target-teacher loss is only defined for an online target teacher")
    return denoise_loss(state.target, schedule, y, t, eps)


# ----------------------------------------------------------------- iteration

GROUP_LR = {"student": "student", "fake_disc": "fake", "target": "target"}


def annealed_lr(config: TrainConfig, model: str, step: int, iterations: int) -> float:
    frac = min(step / max(iterations - 1, 1), 1.0)
    return config.lr_for(model) * (1.0 - (1.0 - config.lr_decay_to) * frac)


def _update(state: TrainerState, name: str, loss: Tensor, step: int, config: TrainConfig) -> None:
    if not np.isfinite(loss.data):
        raise NonFiniteError(f"step {step}: non-finite {name} loss ({float(loss.data)})")
    ad.backward(loss)
    state.opts[name].lr = annealed_lr(config, GROUP_LR[name], step, config.iterations)
    params = state.groups()[name]
    adam_step(state.opts[name], params, names=[f"{name}[{i}]" for i in range(len(params))])


def unidad_step(state: TrainerState, config: TrainConfig, schedule: NoiseSchedule) -> dict:
    """One iteration of the joint loop.  The fake teacher and discriminator update
    every step; the student and the online target teacher update every
    ``update_ratio`` steps.  All sub-steps share a single (t, z, eps, y) draw."""
    s = state.streams
    B, d = config.batch_size, state.G.body.dim
    t = sample_timestep(s["t"], schedule.T, B)
    z = s["z"].standard_normal((B, d))
    eps = s["eps"].standard_normal((B, d))
    y = draw_reals(state, B)
    g_turn = state.step % config.update_ratio == 0

    report: dict = {}
    x = student_generate(state.G, schedule, z, s["ladder"], record=g_turn)
    if g_turn:
        state.zero_grads()
        loss_g, parts = student_loss(state, config, schedule, x, t, eps)
        report.update(parts)
        _update(state, "student", loss_g, state.step, config)

    state.zero_grads()
    loss_fd, parts = fake_and_disc_loss(state, config, schedule, ad.stop_gradient(x), y, t, eps)
    report.update(parts)
    _update(state, "fake_disc", loss_fd, state.step, config)

    if g_turn and state.train_target:
        state.zero_grads()
        loss_t = target_teacher_loss(state, schedule, y, t, eps)
        report["loss_trg_mse"] = float(loss_t.data)
        _update(state, "target", loss_t, state.step, config)

    state.step += 1
    for k, v in report.items():
        tot, cnt = state.window.get(k, (0.0, 0))
        state.window[k] = (tot + v, cnt + 1)
    return report


# ---------------------------------------------------------------- evaluation

@dataclass
class EvalContext:
    target_ref: np.ndarray
    source_ref: np.ndarray
    exemplars: np.ndarray
    source_centers: np.ndarray
    n: int
    seed: int

    @classmethod
    def build(cls, bench: Benchmark, k_shot: int, n: int, seed: int) -> EvalContext:
        n_ref = min(n, len(bench.held_out))
        src = sample_distribution(bench.source, n_ref, stream(SOURCE_REF_SEED, f"source-ref/{bench.name}"))
        return cls(np.asarray(bench.held_out[:n_ref]), src, np.asarray(bench.shots[k_shot].samples),
                   bench.source.mode_centers(), n_ref, seed)

    def student_samples(self, G: StudentGenerator, schedule: NoiseSchedule, n: int | None = None) -> np.ndarray:
        n = n or self.n
        z = stream(self.seed, "eval/z").standard_normal((n, G.body.dim))
        return student_generate(G, schedule, z, stream(self.seed, "eval/ladder")).data

    def teacher_samples(self, model: Denoiser, schedule: NoiseSchedule, n: int | None = None,
                        steps: int = FT_SAMPLER_STEPS) -> np.ndarray:
        n = n or self.n
        z = stream(self.seed, "eval/z").standard_normal((n, model.dim))
        return ddim_sample(model, schedule, steps, z)

    def report(self, samples: np.ndarray) -> MetricsReport:
        return evaluate(samples, self.target_ref, self.source_ref, self.exemplars, self.source_centers)


def _row(step: int, window: dict, report: MetricsReport | None) -> dict:
    row = {"step": step}
    for k in LOSS_COLUMNS:
        tot, cnt = window.get(k, (0.0, 0))
        row[k] = tot / cnt if cnt else None
    for k in METRIC_COLUMNS:
        row[k] = getattr(report, k) if report is not None else None
    return row


# ----------------------------------------------------------------- pipelines

@dataclass
class PipelineResult:
    kind: str
    log: list[dict]
    student: StudentGenerator | None = None
    teacher: Denoiser | None = None
    state: TrainerState | None = None
    extra: dict = field(default_factory=dict)

    def sample(self, ctx: EvalContext, schedule: NoiseSchedule, n: int | None = None) -> np.ndarray:
        if self.student is not None:
            return ctx.student_samples(self.student, schedule, n)
        return ctx.teacher_samples(self.teacher, schedule, n)


def pretrain_source(config: TrainConfig, bench: Benchmark, schedule: NoiseSchedule | None = None) -> Denoiser:
    """Fit the source teacher to the benchmark's source distribution."""
    schedule = schedule or build_schedule(config.T)
    model = Denoiser.init("source", config.T, stream(config.seed, "pretrain/init"),
                          width=config.width, depth=config.depth, activation=config.activation)
    data_rng = stream(config.seed, "pretrain/data")
    train_denoiser(model, schedule, lambda n: sample_distribution(bench.source, n, data_rng),
                   config.pretrain_iterations, config.pretrain_batch_size,
                   stream(config.seed, "pretrain/noise"), lr=config.lr_for("teacher"),
                   decay_to=0.05)
    return model


def finetune_teacher(teacher: Denoiser, samples: np.ndarray, config: TrainConfig,
                     schedule: NoiseSchedule, iterations: int, role: str = "target",
                     timesteps: list[int] | None = None, tag: str = "ft",
                     on_step=None) -> Denoiser:
    """Denoising-MSE fine-tuning on a few-shot set with fresh optimiser state."""
    model = teacher.copy(role=role)
    pick = stream(config.seed, f"{tag}/data")
    pool = np.asarray(samples)
    train_denoiser(model, schedule, lambda n: pool[pick.integers(0, len(pool), size=n)],
                   iterations, config.batch_size, stream(config.seed, f"{tag}/noise"),
                   lr=config.lr_for("teacher"), timesteps=timesteps, on_step=on_step,
                   decay_to=config.lr_decay_to)
    return model


def train_loop(state: TrainerState, config: TrainConfig, schedule: NoiseSchedule,
               ctx: EvalContext | None, iterations: int, log: list[dict],
               step_offset: int = 0, stop_at: int | None = None) -> list[dict]:
    """Run ``unidad_step`` until ``state.step == iterations`` (or ``stop_at``),
    appending a log row every ``eval_every`` steps and at the end."""
    end = iterations if stop_at is None else min(stop_at, iterations)
    while state.step < end:
        unidad_step(state, config, schedule)
        if state.step % config.eval_every == 0 or state.step == iterations:
            report = ctx.report(ctx.student_samples(state.G, schedule)) if ctx else None
            log.append(_row(state.step + step_offset, state.window, report))
            state.window = {}
    return log


def _ft_rows(model_sampler, ctx: EvalContext | None, config: TrainConfig, iterations: int,
             step_offset: int):
    """Callback + row list for logging a fine-tuning stage in loss_trg_mse."""
    rows: list[dict] = []
    window: dict = {}

    def on_step(it: int, loss: float) -> None:
        tot, cnt = window.get("loss_trg_mse", (0.0, 0))
        window["loss_trg_mse"] = (tot + loss, cnt + 1)
        done = it + 1
        if done % config.eval_every == 0 or done == iterations:
            report = ctx.report(model_sampler()) if ctx else None
            rows.append(_row(done + step_offset, window, report))
            window.clear()

    return rows, on_step


def run_pipeline(kind: str, config: TrainConfig, bench: Benchmark, source: Denoiser | None,
                 student_ckpt: StudentGenerator | None = None, target_ckpt: Denoiser | None = None,
                 evaluate_during: bool = True) -> PipelineResult:
    """Train one of: unidad, ft, dmd2, ft_then_dmd2, dmd2_then_ft."""
    if kind not in PIPELINES:
        raise ValueError(f"unknown pipeline {kind!r}; expected one of {PIPELINES}")
    if source is None:
        raise MissingCheckpointError("a pretrained source teacher is required")
    schedule = build_schedule(config.T)
    ctx = EvalContext.build(bench, config.k_shot, config.eval_samples, config.seed) if evaluate_during else None
    Y = np.asarray(bench.shots[config.k_shot].samples)
    log: list[dict] = []

    if kind == "ft":
        holder: dict = {}
        rows, cb = _ft_rows(lambda: ctx.teacher_samples(holder["m"], schedule), ctx, config,
                            config.ft_iterations, 0)
        model = source.copy(role="target")
        holder["m"] = model
        pick = stream(config.seed, "ft/data")
        train_denoiser(model, schedule, lambda n: Y[pick.integers(0, len(Y), size=n)],
                       config.ft_iterations, config.batch_size, stream(config.seed, "ft/noise"),
                       lr=config.lr_for("teacher"), on_step=cb, decay_to=config.lr_decay_to)
        return PipelineResult(kind, rows, teacher=model)

    if kind == "unidad":
        reals = Y if config.gan_reals == "target" else bench.source
        state = init_state(config, source, reals, student=student_ckpt, target=target_ckpt)
        train_loop(state, config, schedule, ctx, config.iterations, log)
        return PipelineResult(kind, log, student=state.G, state=state)

    dmd2_cfg = config.replace(a=0.0, target_mode="disabled", gan_reals="source")
    if kind == "dmd2":
        state = init_state(dmd2_cfg, source, bench.source, student=student_ckpt)
        train_loop(state, dmd2_cfg, schedule, ctx, config.iterations, log)
        return PipelineResult(kind, log, student=state.G, state=state)

    if kind == "ft_then_dmd2":
        holder = {}
        rows, cb = _ft_rows(lambda: ctx.teacher_samples(holder["m"], schedule), ctx, config,
                            config.ft_iterations, 0)
        adapted = source.copy(role="target")
        holder["m"] = adapted
        pick = stream(config.seed, "ft/data")
        train_denoiser(adapted, schedule, lambda n: Y[pick.integers(0, len(Y), size=n)],
                       config.ft_iterations, config.batch_size, stream(config.seed, "ft/noise"),
                       lr=config.lr_for("teacher"), on_step=cb, decay_to=config.lr_decay_to)
        log.extend(rows)
        # the adapted teacher plays the source role; its data is the few-shot set
        stage_cfg = dmd2_cfg.replace(student_init="copy-of-source")
        state = init_state(stage_cfg, adapted, Y)
        train_loop(state, stage_cfg, schedule, ctx, config.iterations, log,
                   step_offset=config.ft_iterations)
        return PipelineResult(kind, log, student=state.G, state=state, teacher=adapted)

    # dmd2_then_ft
    state = init_state(dmd2_cfg, source, bench.source, student=student_ckpt)
    train_loop(state, dmd2_cfg, schedule, ctx, config.iterations, log)
    G = state.G
    rows, cb = _ft_rows(lambda: ctx.student_samples(G, schedule), ctx, config,
                        config.ft_iterations, config.iterations)
    pick = stream(config.seed, "ft/data")
    train_denoiser(G.body, schedule, lambda n: Y[pick.integers(0, len(Y), size=n)],
                   config.ft_iterations, config.batch_size, stream(config.seed, "ft/noise"),
                   lr=config.lr_for("teacher"), timesteps=G.ladder, on_step=cb,
                   decay_to=config.lr_decay_to)
    log.extend(rows)
    return PipelineResult(kind, log, student=G, state=state)


# --------------------------------------------------------------- persistence

def _put_net(arrays: dict, meta: dict, name: str, model: Denoiser | MlpNetwork, **info) -> None:
    net = model.network if isinstance(model, Denoiser) else model
    for i, p in enumerate(net.parameters()):
        arrays[f"{name}/{i:03d}"] = p.data
    entry = {"activations": net.activations, "count": len(net.parameters())}
    if isinstance(model, Denoiser):
        entry.update(role=model.role, T=model.T, dim=model.dim)
    entry.update(info)
    meta.setdefault("models", {})[name] = entry


def _get_net(ckpt: Checkpoint, name: str) -> MlpNetwork:
    info = ckpt.meta.get("models", {}).get(name)
    if info is None:
        raise CheckpointError(f"checkpoint has no model {name!r}")
    arrays = [ckpt.arrays[f"{name}/{i:03d}"] for i in range(info["count"])]
    ws = [Tensor(a.copy(), requires_grad=True) for a in arrays[0::2]]
    bs = [Tensor(a.copy(), requires_grad=True) for a in arrays[1::2]]
    try:
        return MlpNetwork(ws, bs, list(info["activations"]))
    except ValueError as err:
        raise CheckpointError(f"model {name!r}: {err}") from None


def get_denoiser(ckpt: Checkpoint, name: str) -> Denoiser:
    info = ckpt.meta["models"][name] if name in ckpt.meta.get("models", {}) else None
    net = _get_net(ckpt, name)
    return Denoiser(net, info["role"], info["T"], info["dim"])


def get_student(ckpt: Checkpoint, name: str = "student") -> StudentGenerator:
    body = get_denoiser(ckpt, name)
    return StudentGenerator(body, ckpt.meta["models"][name]["nfe"])


def models_checkpoint(models: dict, meta: dict | None = None) -> Checkpoint:
    """Bundle denoisers / students under the given names."""
    ckpt = Checkpoint(meta=dict(meta or {}))
    for name, m in models.items():
        if isinstance(m, StudentGenerator):
            _put_net(ckpt.arrays, ckpt.meta, name, m.body, nfe=m.nfe)
        else:
            _put_net(ckpt.arrays, ckpt.meta, name, m)
    return ckpt


def state_checkpoint(state: TrainerState, config: TrainConfig, log: list[dict] | None = None) -> Checkpoint:
    models = {"student": state.G, "source": state.source, "fake": state.fake}
    if state.target is not None:
        models["target"] = state.target
    ckpt = models_checkpoint(models)
    for i, head in enumerate(state.disc.heads):
        _put_net(ckpt.arrays, ckpt.meta, f"disc/{i}", head)
    ckpt.meta.update(
        kind="trainer", step=state.step, taps=state.disc.taps, train_target=state.train_target,
        window={k: list(v) for k, v in state.window.items()}, config=config.to_text(),
        log=[[r[c] for c in LOG_COLUMNS] for r in (log or [])],
    )
    if isinstance(state.reals, DistributionSpec):
        ckpt.meta["reals"] = {"spec": _spec_to_json(state.reals)}
    else:
        ckpt.arrays["reals"] = np.asarray(state.reals)
    ckpt.optimizers = dict(state.opts)
    ckpt.rng = state.streams.state()
    return ckpt


def _spec_to_json(spec: DistributionSpec) -> dict:
    return {"kind": spec.kind, "centers": [list(c) for c in spec.centers], "scale": spec.scale,
            "rotation": spec.rotation, "zoom": spec.zoom, "translation": list(spec.translation)}


def _spec_from_json(d: dict) -> DistributionSpec:
    return DistributionSpec(d["kind"], tuple(tuple(c) for c in d["centers"]), d["scale"],
                            d["rotation"], d["zoom"], tuple(d["translation"]))


def state_from_checkpoint(ckpt: Checkpoint) -> tuple[TrainerState, list[dict]]:
    if ckpt.meta.get("kind") != "trainer":
        raise CheckpointError("checkpoint does not hold trainer state")
    meta = ckpt.meta
    G = get_student(ckpt)
    source, fake = get_denoiser(ckpt, "source"), get_denoiser(ckpt, "fake")
    target = get_denoiser(ckpt, "target") if "target" in meta["models"] else None
    heads = [_get_net(ckpt, f"disc/{i}") for i in range(len(meta["taps"]))]
    disc = MultiHeadDiscriminator(heads, meta["taps"])
    reals = _spec_from_json(meta["reals"]["spec"]) if "reals" in meta else ckpt.arrays["reals"]
    state = TrainerState(G, source, fake, target, disc, dict(ckpt.optimizers),
                         Streams.from_state(ckpt.rng), reals, meta["train_target"],
                         step=meta["step"], window={k: tuple(v) for k, v in meta["window"].items()})
    for name, params in state.groups().items():
        opt = state.opts.get(name)
        if opt is not None and [m.shape for m in opt.m] != [p.shape for p in params]:
            raise CheckpointError(f"optimizer {name!r} does not match its parameters")
    log = [dict(zip(LOG_COLUMNS, r)) for r in meta["log"]]
    return state, log


def save_trainer(state: TrainerState, config: TrainConfig, path, log: list[dict] | None = None) -> None:
    save_checkpoint(state_checkpoint(state, config, log), path)


def load_trainer(path) -> tuple[TrainerState, list[dict], TrainConfig]:
    from .config import parse_config_text
    ckpt = load_checkpoint(path)
    state, log = state_from_checkpoint(ckpt)
    return state, log, parse_config_text(ckpt.meta["config"])


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def write_metrics_csv(log: list[dict], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for row in log:
            w.writerow([_fmt(row.get(c)) for c in LOG_COLUMNS])
