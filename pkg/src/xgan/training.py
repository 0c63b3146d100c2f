"""Coupled adversarial training: phase-wise minimax updates over one store.

Each iteration runs four Adam phases in order: (1) both VAEs on the
KL+reconstruction estimator, (2) the alignment map (and, through the codes,
both encoders) on the floored squared-distance loss, (3) both discriminators
on the binary-entropy loss, (4) both generators on the non-saturating (or
literal saturating, or feature-matching) objective against the just-updated
discriminators.  Weight-tied slots receive one update with the summed
gradient.  All randomness is drawn from counter-based streams keyed by
(purpose, view, step), so reruns and checkpoint resumes are bit-exact.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from . import tensor as T
from . import vae as V
from .alignment import AlignmentConfig, align, alignment_loss
from .checkpoint import restore_into, save_checkpoint
from .models import ModelBundle, build_image_models, build_toy_models
from .nn import ParameterStore, SharingConfig, adam_step, clip_grads
from .rng import Rng
from .tensor import NumericError, Tape, Tensor

METRICS_HEADER = ["step", "l_vae", "l_align", "l_gan_d1", "l_gan_d2", "l_gan_g", "l_total"]
PROB_EPS = 1e-7


class TrainAbort(RuntimeError):
    """Training hit a non-finite loss; carries the last good checkpoint path."""

    def __init__(self, message: str, last_checkpoint: str | None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.002
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 32
    iterations: int = 3000
    k: int = 4
    l: int = 1
    tau: float = 1.0
    feature_matching: bool = False
    saturating_generator: bool = False
    align_enabled: bool = True
    seed: int = 0
    latent_dim: int = 100
    checkpoint_every: int = 500
    grad_clip: float = 10.0
    eps_adam: float = 1e-8
    # Restrict to one GAN stream (1 or 2): diagnostic mode for the
    # decoupling check; skips the alignment phase and the twin stream.
    single_stream: int | None = None

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size <= 0 or self.iterations < 0:
            raise ValueError("lr/batch_size must be positive, iterations >= 0")
        if self.batch_size % 2:
            raise ValueError(f"batch_size must be even, got {self.batch_size}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        return cls(**{"iterations": 3000, "batch_size": 32, **overrides})

    @classmethod
    def paper(cls, **overrides) -> "TrainConfig":
        return cls(**{"iterations": 30000, "batch_size": 128, **overrides})

    @property
    def sharing(self) -> SharingConfig:
        return SharingConfig(k=self.k, l=self.l)


@dataclass
class LossReport:
    step: int
    l_vae: float
    l_align: float
    l_gan_d1: float
    l_gan_d2: float
    l_gan_g: float
    l_total: float
    # per-stream components (not part of the metrics CSV)
    l_vae_a: float = 0.0
    l_vae_b: float = 0.0
    l_gan_g1: float = 0.0
    l_gan_g2: float = 0.0

    def csv_row(self) -> list[str]:
        return [str(self.step)] + [
            f"{v:.8e}"
            for v in (self.l_vae, self.l_align, self.l_gan_d1, self.l_gan_d2,
                      self.l_gan_g, self.l_total)
        ]

    def is_finite(self) -> bool:
        return all(
            np.isfinite(v)
            for v in (self.l_vae, self.l_align, self.l_gan_d1, self.l_gan_d2,
                      self.l_gan_g, self.l_total)
        )


@dataclass
class TrainState:
    bundle: ModelBundle
    cfg: TrainConfig
    rng: Rng
    step: int = 0
    last_checkpoint: str | None = None


def _watch(store: ParameterStore, slot_ids: Iterable[str], tape: Tape):
    leaves: dict[str, Tensor] = {}
    for sid in slot_ids:
        leaves[sid] = tape.leaf(store.slots[sid].value)
    return leaves


def _slot_grads(tape: Tape, loss: Tensor, leaves: Mapping[str, Tensor]):
    gmap = tape.backward(loss)
    grads: dict[str, np.ndarray] = {}
    for sid, leaf in leaves.items():
        g = gmap.get(leaf.node)
        if g is not None:
            grads[sid] = g
    return grads


def _adam_phase(state: TrainState, tape: Tape, loss: Tensor, leaves) -> None:
    cfg = state.cfg
    grads = _slot_grads(tape, loss, leaves)
    grads = clip_grads(grads, cfg.grad_clip)
    adam_step(
        state.bundle.store, grads,
        lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
        eps_adam=cfg.eps_adam, t=state.step + 1,
    )


def _clamped_log(p: Tensor) -> Tensor:
    return T.log(T.clip(p, PROB_EPS, 1.0 - PROB_EPS))


def _one_minus(p: Tensor) -> Tensor:
    one = Tensor(np.asarray(1.0, p.array.dtype))
    return T.sub(one, p)


def gan_stream_d_loss(disc, x_real: Tensor, x_fake: Tensor, params) -> Tensor:
    """-[log f(x) + log(1 - f(g(z)))] batch-meaned for one stream.

    Real and fake go through the discriminator as one concatenated batch
    (halves the conv call count; per-sample results are unchanged).
    """
    m = x_real.shape[0]
    p = disc.forward(T.concat((x_real, x_fake), axis=0), params, mode="train")
    p_real = T.slice_rows(p, 0, m)
    p_fake = T.slice_rows(p, m, m + x_fake.shape[0])
    score = T.add(T.tmean(_clamped_log(p_real)), T.tmean(_clamped_log(_one_minus(p_fake))))
    return T.mul(score, Tensor(np.asarray(-1.0, score.array.dtype)))


def feature_matching_loss(real_features: Tensor, fake_features: Tensor) -> Tensor:
    """Squared distance between batch-mean penultimate features."""
    diff = T.sub(T.tmean(real_features, axis=0), T.tmean(fake_features, axis=0))
    return T.tsum(T.square(diff))


def gan_loss_pair(
    f1, f2, g1, g2,
    x: Tensor,
    x_bar: Tensor,
    z_a: Tensor,
    z_b: Tensor,
    params: Mapping[str, Tensor] | None = None,
    saturating_generator: bool = False,
    mode: str = "train",
) -> tuple[Tensor, Tensor]:
    """Coupled adversarial losses for one batch, as pure functions.

    The codes must come from the view VAEs, not from a prior; view-A reals
    only ever meet f1 and view-B reals only f2.  Returns (d_loss, g_loss):
    discriminators minimize d_loss (equivalently maximize the two-stream
    binary-entropy score) and generators minimize g_loss.
    """
    fake1 = g1.forward(z_a, params, mode=mode)
    fake2 = g2.forward(z_b, params, mode=mode)
    d_loss = T.add(
        gan_stream_d_loss(f1, x, fake1, params),
        gan_stream_d_loss(f2, x_bar, fake2, params),
    )
    neg_one = Tensor(np.asarray(-1.0, np.float32))
    parts = []
    for disc, fake in ((f1, fake1), (f2, fake2)):
        p_fake = disc.forward(fake, params, mode=mode)
        if saturating_generator:
            parts.append(T.tmean(_clamped_log(_one_minus(p_fake))))
        else:
            parts.append(T.mul(T.tmean(_clamped_log(p_fake)), neg_one))
    return d_loss, T.add(parts[0], parts[1])


def train_step(state: TrainState, batch: tuple[np.ndarray, np.ndarray]) -> LossReport:
    """One full iteration; returns the per-phase losses."""
    cfg = state.cfg
    bundle = state.bundle
    store = bundle.store
    step = state.step
    x_np, xbar_np = batch
    x = Tensor(np.asarray(x_np, np.float32))
    x_bar = Tensor(np.asarray(xbar_np, np.float32))
    stream1 = cfg.single_stream in (None, 1)
    stream2 = cfg.single_stream in (None, 2)

    # --- phase 1: VAE update -------------------------------------------------
    tape = Tape()
    if cfg.single_stream is None:
        leaves = _watch(store, bundle.group("vae"), tape)
    else:
        leaves = _watch(store, bundle.stream_group("vae", cfg.single_stream), tape)
    rng_eps_a = state.rng.split("eps", "vae", "A", step)
    rng_eps_b = state.rng.split("eps", "vae", "B", step)
    l_vae_a_t = V.vae_sample_loss(bundle.vae_a, x, rng_eps_a, leaves) if stream1 else None
    l_vae_b_t = V.vae_sample_loss(bundle.vae_b, x_bar, rng_eps_b, leaves) if stream2 else None
    if l_vae_a_t is not None and l_vae_b_t is not None:
        vae_loss = T.add(l_vae_a_t, l_vae_b_t)
    else:
        vae_loss = l_vae_a_t if l_vae_a_t is not None else l_vae_b_t
    _adam_phase(state, tape, vae_loss, leaves)
    l_vae_a = l_vae_a_t.item() if l_vae_a_t is not None else 0.0
    l_vae_b = l_vae_b_t.item() if l_vae_b_t is not None else 0.0
    l_vae = l_vae_a + l_vae_b
    tape.release()

    # --- phase 2: alignment update -------------------------------------------
    l_align = 0.0
    if cfg.align_enabled and cfg.single_stream is None:
        tape = Tape()
        leaves = _watch(store, bundle.group("align"), tape)
        post_a = V.encode(bundle.vae_a, x, leaves)
        post_b = V.encode(bundle.vae_b, x_bar, leaves)
        code_a = V.reparameterize(post_a, state.rng.split("eps", "align", "A", step))
        code_b = V.reparameterize(post_b, state.rng.split("eps", "align", "B", step))
        aligned = align(bundle.align_net, code_b.z, leaves)
        loss_align = alignment_loss(code_a.z, aligned, AlignmentConfig(cfg.tau))
        _adam_phase(state, tape, loss_align, leaves)
        l_align = loss_align.item()
        tape.release()

    # --- codes for the adversarial phases (constants w.r.t. the GAN updates) --
    z_a = z_b = None
    if stream1:
        post_a = V.encode(bundle.vae_a, x)
        z_a = Tensor(V.reparameterize(post_a, state.rng.split("eps", "gan", "A", step)).z.array)
    if stream2:
        post_b = V.encode(bundle.vae_b, x_bar)
        z_b = Tensor(V.reparameterize(post_b, state.rng.split("eps", "gan", "B", step)).z.array)

    # --- phase 3: discriminator update (f^t) ----------------------------------
    tape = Tape()
    g_ids = bundle.group("g") if cfg.single_stream is None else bundle.stream_group("g", cfg.single_stream)
    d_ids = bundle.group("d") if cfg.single_stream is None else bundle.stream_group("d", cfg.single_stream)
    g_leaves = _watch(store, g_ids, tape)
    fake1 = bundle.g1.forward(z_a, g_leaves, mode="train") if stream1 else None
    fake2 = bundle.g2.forward(z_b, g_leaves, mode="train") if stream2 else None
    d_leaves = _watch(store, d_ids, tape)
    l_d1_t = gan_stream_d_loss(bundle.f1, x, fake1.detach(), d_leaves) if stream1 else None
    l_d2_t = gan_stream_d_loss(bundle.f2, x_bar, fake2.detach(), d_leaves) if stream2 else None
    if l_d1_t is not None and l_d2_t is not None:
        d_loss = T.add(l_d1_t, l_d2_t)
    else:
        d_loss = l_d1_t if l_d1_t is not None else l_d2_t
    _adam_phase(state, tape, d_loss, d_leaves)
    l_gan_d1 = l_d1_t.item() if l_d1_t is not None else 0.0
    l_gan_d2 = l_d2_t.item() if l_d2_t is not None else 0.0

    # --- phase 4: generator update against f^{t+1} -----------------------------
    neg_one = Tensor(np.asarray(-1.0, np.float32))
    g_parts = []
    for present, fake, disc, real in (
        (stream1, fake1, bundle.f1, x),
        (stream2, fake2, bundle.f2, x_bar),
    ):
        if not present:
            g_parts.append(None)
            continue
        if cfg.feature_matching:
            _, real_feats = disc.forward(real, None, mode="train", return_features=True)
            _, fake_feats = disc.forward(fake, None, mode="train", return_features=True)
            g_parts.append(feature_matching_loss(real_feats.detach(), fake_feats))
        else:
            p_fake = disc.forward(fake, None, mode="train")
            if cfg.saturating_generator:
                g_parts.append(T.tmean(_clamped_log(_one_minus(p_fake))))
            else:
                g_parts.append(T.mul(T.tmean(_clamped_log(p_fake)), neg_one))
    live = [p for p in g_parts if p is not None]
    g_loss = live[0] if len(live) == 1 else T.add(live[0], live[1])
    _adam_phase(state, tape, g_loss, g_leaves)
    tape.release()
    l_gan_g1 = g_parts[0].item() if g_parts[0] is not None else 0.0
    l_gan_g2 = g_parts[1].item() if g_parts[1] is not None else 0.0

    # Objective value for monitoring: total = vae + align - gan score,
    # where the gan score is the (negated) discriminator loss.
    l_total = l_vae + l_align + l_gan_d1 + l_gan_d2
    report = LossReport(
        step=step + 1,
        l_vae=l_vae, l_align=l_align,
        l_gan_d1=l_gan_d1, l_gan_d2=l_gan_d2,
        l_gan_g=l_gan_g1 + l_gan_g2, l_total=l_total,
        l_vae_a=l_vae_a, l_vae_b=l_vae_b,
        l_gan_g1=l_gan_g1, l_gan_g2=l_gan_g2,
    )
    state.step += 1
    return report


@dataclass
class TrainResult:
    checkpoint_path: Path
    metrics_path: Path
    reports: list[LossReport]
    sample_paths: list[Path] = field(default_factory=list)


class PairBatcher:
    """Draws index-aligned pair batches; never sees identity labels."""

    def __init__(self, x: np.ndarray, x_bar: np.ndarray):
        if len(x) == 0 or len(x) != len(x_bar):
            raise ValueError(f"paired arrays must be nonempty and equal length, got {len(x)}/{len(x_bar)}")
        self.x = np.asarray(x, np.float32)
        self.x_bar = np.asarray(x_bar, np.float32)

    def __len__(self) -> int:
        return len(self.x)

    def batch(self, rng: Rng, step: int, size: int):
        idx = rng.split("batch", step).integers(0, len(self.x), (size,))
        return self.x[idx], self.x_bar[idx]


def build_bundle(cfg: TrainConfig, toy: bool = False) -> ModelBundle:
    rng = Rng(cfg.seed)
    if toy:
        return build_toy_models(cfg.sharing, rng, latent_dim=cfg.latent_dim)
    return build_image_models(cfg.sharing, rng, latent_dim=cfg.latent_dim)


def train(
    cfg: TrainConfig,
    batcher: PairBatcher,
    out_dir: str | Path,
    toy: bool = False,
    resume_from: str | Path | None = None,
    log_every: int = 0,
) -> TrainResult:
    """Run ``cfg.iterations`` steps; writes metrics CSV, checkpoints, samples.

    With ``resume_from`` the store and step counter are restored and training
    continues to ``cfg.iterations``; the restored segment reproduces an
    uninterrupted run bit-exactly because all per-step noise is counter-keyed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bundle = build_bundle(cfg, toy=toy)
    state = TrainState(bundle=bundle, cfg=cfg, rng=Rng(cfg.seed))
    if resume_from is not None:
        state.step = restore_into(bundle.store, resume_from)
        state.last_checkpoint = str(resume_from)

    metrics_path = out_dir / "metrics.csv"
    ckpt = out_dir / f"checkpoint_{state.step:06d}.xgan"
    save_checkpoint(ckpt, bundle.store, state.step)
    state.last_checkpoint = str(ckpt)

    reports: list[LossReport] = []
    sample_paths: list[Path] = []
    with open(metrics_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        while state.step < cfg.iterations:
            batch = batcher.batch(state.rng, state.step, cfg.batch_size)
            try:
                report = train_step(state, batch)
            except NumericError as exc:
                raise TrainAbort(
                    f"non-finite values at step {state.step + 1}: {exc}",
                    state.last_checkpoint,
                ) from exc
            if not report.is_finite():
                raise TrainAbort(
                    f"non-finite loss at step {report.step}", state.last_checkpoint
                )
            writer.writerow(report.csv_row())
            reports.append(report)
            if log_every and report.step % log_every == 0:
                print(
                    f"step {report.step}: vae={report.l_vae:.3f} align={report.l_align:.3f} "
                    f"d1={report.l_gan_d1:.3f} d2={report.l_gan_d2:.3f} g={report.l_gan_g:.3f}",
                    flush=True,
                )
            at_mark = cfg.checkpoint_every and report.step % cfg.checkpoint_every == 0
            if at_mark or report.step == cfg.iterations:
                ckpt = out_dir / f"checkpoint_{report.step:06d}.xgan"
                save_checkpoint(ckpt, bundle.store, report.step)
                state.last_checkpoint = str(ckpt)
                if not toy:
                    sample_paths += _dump_samples(bundle, batcher, out_dir, report.step)
    return TrainResult(
        checkpoint_path=Path(state.last_checkpoint),
        metrics_path=metrics_path,
        reports=reports,
        sample_paths=sample_paths,
    )


def _dump_samples(bundle: ModelBundle, batcher: PairBatcher, out_dir: Path, step: int) -> list[Path]:
    from .data import write_ppm_grid

    n = min(16, len(batcher))
    paths = []
    pairs = ((bundle.vae_a, bundle.g1, batcher.x[:n], "g1"),
             (bundle.vae_b, bundle.g2, batcher.x_bar[:n], "g2"))
    for vae_nets, gen, images, tag in pairs:
        post = V.encode(vae_nets, Tensor(images))
        out = gen.forward(post.mu, mode="eval")
        path = out_dir / f"samples_{tag}_{step:06d}.ppm"
        write_ppm_grid(path, out.array, cols=4)
        paths.append(path)
    return paths
