"""Retrieval evaluation: single-shot CMC with trial averaging, mAP, the
pixel-agreement ablation, and the latent-inversion matcher.

Gallery images come from view A (one per identity per trial), probes from
view B.  The latent strategy embeds both sides with the encoders' posterior
means (no sampling at eval time) and ranks by Euclidean distance between the
gallery code and the aligned probe code.  The inversion strategy recovers a
code that reproduces the probe through its view's generator, transfers it
through the other generator, and ranks by pixel distance.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from . import vae as V
from .alignment import align
from .models import ModelBundle
from .rng import Rng
from .tensor import Tape, Tensor


class EvalError(RuntimeError):
    """Evaluation called with inconsistent gallery/probe structure."""


@dataclass
class CmcCurve:
    """Trial-averaged cumulative match rates; rates[r] is the rank-(r+1) rate."""

    rates: np.ndarray
    trials: int
    map_score: float

    def rank(self, r: int) -> float:
        return float(self.rates[r - 1])

    def rows(self) -> list[tuple[int, float]]:
        return [(r + 1, float(v)) for r, v in enumerate(self.rates)]


def encode_means(vae_nets, images: np.ndarray, batch: int = 256) -> np.ndarray:
    """Posterior means for a stack of images (deterministic, no sampling)."""
    outs = []
    for i in range(0, len(images), batch):
        post = V.encode(vae_nets, Tensor(images[i : i + batch]))
        outs.append(post.mu.array)
    return np.concatenate(outs, axis=0)


def latent_distances(bundle: ModelBundle, probe_images: np.ndarray, gallery_images: np.ndarray) -> np.ndarray:
    """d(p, g) = ||z_g - Align(z_p)||_2 over posterior means."""
    if len(probe_images) == 0 or len(gallery_images) == 0:
        raise EvalError("latent_distances: empty probe or gallery")
    z_g = encode_means(bundle.vae_a, gallery_images)
    z_p = encode_means(bundle.vae_b, probe_images)
    aligned = align(bundle.align_net, Tensor(z_p)).array
    diff = aligned[:, None, :] - z_g[None, :, :]
    return np.sqrt(np.maximum((diff.astype(np.float64) ** 2).sum(axis=2), 0.0))


def raw_latent_distances(bundle: ModelBundle, probe_images: np.ndarray, gallery_images: np.ndarray) -> np.ndarray:
    """Alignment-free baseline: ||z_g - z_p||_2 on posterior means."""
    z_g = encode_means(bundle.vae_a, gallery_images)
    z_p = encode_means(bundle.vae_b, probe_images)
    diff = z_p[:, None, :] - z_g[None, :, :]
    return np.sqrt(np.maximum((diff.astype(np.float64) ** 2).sum(axis=2), 0.0))


def cmc(
    dist: np.ndarray,
    probe_ids: np.ndarray,
    gallery_ids: np.ndarray,
    trials: int = 10,
    rng: Rng | None = None,
) -> CmcCurve:
    """Single-shot CMC averaged over gallery resampling trials.

    Each trial keeps exactly one gallery image per identity (sampled when an
    identity has several candidates).  Ranks use ascending distance with ties
    broken by ascending gallery index; every probe must have its identity in
    the gallery.  mAP has a single relevant item per probe, so it equals mean
    reciprocal rank.
    """
    dist = np.asarray(dist)
    probe_ids = np.asarray(probe_ids)
    gallery_ids = np.asarray(gallery_ids)
    if dist.shape != (len(probe_ids), len(gallery_ids)):
        raise EvalError(
            f"cmc: distance matrix {list(dist.shape)} does not match "
            f"{len(probe_ids)} probes x {len(gallery_ids)} gallery images"
        )
    missing = set(probe_ids.tolist()) - set(gallery_ids.tolist())
    if missing:
        raise EvalError(f"cmc: probe identities missing from gallery: {sorted(missing)[:5]}")
    if trials < 1:
        raise EvalError(f"cmc: trials must be >= 1, got {trials}")
    rng = rng or Rng(0)
    unique_ids = np.unique(gallery_ids)
    n_gal = len(unique_ids)
    candidates = {int(u): np.flatnonzero(gallery_ids == u) for u in unique_ids}

    rates = np.zeros(n_gal, dtype=np.float64)
    rr_sum = 0.0
    for trial in range(trials):
        trng = rng.split("trial", trial)
        cols = np.empty(n_gal, dtype=np.int64)
        for gi, u in enumerate(unique_ids):
            cands = candidates[int(u)]
            pick = int(trng.split(int(u)).integers(0, len(cands))) if len(cands) > 1 else 0
            cols[gi] = cands[pick]
        sub = dist[:, cols]
        col_ids = gallery_ids[cols]
        for p in range(len(probe_ids)):
            true_col = int(np.flatnonzero(col_ids == probe_ids[p])[0])
            d = sub[p]
            dt = d[true_col]
            # rank = 1 + closer items + equal-distance items at lower index
            rank = 1 + int((d < dt).sum()) + int((d[:true_col] == dt).sum())
            rates[rank - 1 :] += 1.0
            rr_sum += 1.0 / rank
    n_eval = trials * len(probe_ids)
    rates /= n_eval
    return CmcCurve(rates=rates, trials=trials, map_score=rr_sum / n_eval)


def latent_inversion(
    generator,
    x: np.ndarray,
    steps: int = 200,
    lr_z: float = 0.05,
    rng: Rng | None = None,
    latent_dim: int = 100,
) -> tuple[np.ndarray, np.ndarray]:
    """Recover codes minimizing mean squared pixel error against ``x``.

    Plain gradient descent from a seeded normal start; the generator runs in
    eval mode and stays frozen.  Returns (z_best, per-item best losses); the
    best-loss iterate is kept per item.  Raises on divergence (mean loss
    exceeding ten times its initial value).
    """
    rng = rng or Rng(0)
    x = np.asarray(x, np.float32)
    n = len(x)
    z = rng.split("init").normal((n, latent_dim), dtype=np.float32)
    target = Tensor(x)
    pixels = int(np.prod(x.shape[1:]))

    def forward_losses(z_arr):
        tape = Tape()
        z_leaf = tape.leaf(z_arr)
        out = generator.forward(z_leaf, mode="eval")
        diff = T.sub(out, target)
        flat = T.reshape(T.square(diff), (n, pixels))
        per_item = T.tsum(flat, axis=1)
        scale = Tensor(np.asarray(1.0 / pixels, np.float32))
        per_item = T.mul(per_item, scale)
        # sum (not mean) as the backward root: every item descends its own
        # loss at full step size regardless of how many are batched together
        loss = T.tsum(per_item)
        grads = tape.backward(loss)[z_leaf.node]
        tape.release()
        return per_item.array.copy(), grads

    per_item, grad = forward_losses(z)
    init_mean = float(per_item.mean())
    best_loss = per_item.copy()
    best_z = z.copy()
    for it in range(steps):
        z = z - np.float32(lr_z) * grad
        per_item, grad = forward_losses(z)
        improved = per_item < best_loss
        if improved.any():
            best_loss = np.where(improved, per_item, best_loss)
            best_z[improved] = z[improved]
        mean_now = float(per_item.mean())
        if not np.isfinite(mean_now) or mean_now > 10.0 * max(init_mean, 1e-12):
            raise EvalError(
                f"latent_inversion diverged at step {it + 1}: "
                f"mean loss {mean_now:.4g} vs initial {init_mean:.4g}"
            )
    return best_z, best_loss


def invert_with_restarts(
    generator,
    x: np.ndarray,
    steps: int = 200,
    lr_z: float = 0.05,
    restarts: int = 3,
    rng: Rng | None = None,
    latent_dim: int = 100,
) -> tuple[np.ndarray, np.ndarray]:
    """Best-of-n seeded inversions per item (the optimization is non-convex)."""
    rng = rng or Rng(0)
    best_z = best_loss = None
    for r in range(restarts):
        z, loss = latent_inversion(
            generator, x, steps=steps, lr_z=lr_z, rng=rng.split("restart", r),
            latent_dim=latent_dim,
        )
        if best_loss is None:
            best_z, best_loss = z, loss
        else:
            better = loss < best_loss
            best_loss = np.where(better, loss, best_loss)
            best_z[better] = z[better]
    return best_z, best_loss


def inversion_distances(
    bundle: ModelBundle,
    probe_images: np.ndarray,
    gallery_images: np.ndarray,
    steps: int = 200,
    lr_z: float = 0.05,
    restarts: int = 3,
    rng: Rng | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pixel distances between transferred probes and gallery images.

    Probes (view B) are inverted through g2, transferred through g1 into the
    gallery view, then compared by Euclidean pixel distance.  Returns
    (dist matrix, transferred images, per-probe inversion losses).
    """
    rng = rng or Rng(0)
    z_star, inv_loss = invert_with_restarts(
        bundle.g2, probe_images, steps=steps, lr_z=lr_z, restarts=restarts,
        rng=rng, latent_dim=bundle.latent_dim,
    )
    transferred = bundle.g1.forward(Tensor(z_star), mode="eval").array
    p = transferred.reshape(len(transferred), -1).astype(np.float64)
    g = np.asarray(gallery_images, np.float64).reshape(len(gallery_images), -1)
    d2 = (p * p).sum(1)[:, None] - 2.0 * (p @ g.T) + (g * g).sum(1)[None, :]
    return np.sqrt(np.maximum(d2, 0.0)), transferred, inv_loss


def pixel_agreement_ratio(
    transferred: np.ndarray, gallery: np.ndarray, quantization: int = 32
) -> float:
    """Fraction of spatially corresponding pixels landing in the same
    quantization level, averaged over pixels then pairs."""
    a = np.asarray(transferred)
    b = np.asarray(gallery)
    if a.shape != b.shape:
        raise EvalError(f"pixel_agreement_ratio: shapes {list(a.shape)} != {list(b.shape)}")
    if quantization < 2:
        raise EvalError(f"pixel_agreement_ratio: need >= 2 levels, got {quantization}")
    qa = _quantize_levels(a, quantization)
    qb = _quantize_levels(b, quantization)
    per_pair = (qa == qb).reshape(len(a) if a.ndim > 3 else 1, -1).mean(axis=1)
    return float(per_pair.mean())


def _quantize_levels(x: np.ndarray, q: int) -> np.ndarray:
    lv = np.floor((np.clip(x, -1.0, 1.0) + 1.0) * 0.5 * q).astype(np.int64)
    return np.minimum(lv, q - 1)


# ---------------------------------------------------------------------------
# whole-checkpoint evaluation and the ablation grid
# ---------------------------------------------------------------------------


@dataclass
class EvalResult:
    curve: CmcCurve
    strategy: str
    mean_inversion_loss: float | None = None
    pixel_agreement: float | None = None


def evaluate_retrieval(
    bundle: ModelBundle,
    test_images_a: np.ndarray,
    test_images_b: np.ndarray,
    test_ids: np.ndarray,
    strategy: str = "latent",
    trials: int = 10,
    seed: int = 0,
    use_alignment: bool = True,
    inversion_steps: int = 200,
    inversion_restarts: int = 3,
) -> EvalResult:
    """Single-shot retrieval on a test split: view-A gallery, view-B probes."""
    if strategy not in ("latent", "inversion"):
        raise EvalError(f"unknown strategy {strategy!r}")
    rng = Rng(seed)
    if strategy == "latent":
        dist = (
            latent_distances(bundle, test_images_b, test_images_a)
            if use_alignment
            else raw_latent_distances(bundle, test_images_b, test_images_a)
        )
        curve = cmc(dist, test_ids, test_ids, trials=trials, rng=rng.split("cmc"))
        return EvalResult(curve=curve, strategy=strategy)
    dist, transferred, inv_loss = inversion_distances(
        bundle, test_images_b, test_images_a,
        steps=inversion_steps, restarts=inversion_restarts, rng=rng.split("inv"),
    )
    curve = cmc(dist, test_ids, test_ids, trials=trials, rng=rng.split("cmc"))
    # agreement vs each probe's same-identity gallery counterpart (first match)
    first_of = {int(i): np.flatnonzero(test_ids == i)[0] for i in np.unique(test_ids)}
    partner = np.array([first_of[int(i)] for i in test_ids])
    agreement = pixel_agreement_ratio(transferred, test_images_a[partner])
    return EvalResult(
        curve=curve,
        strategy=strategy,
        mean_inversion_loss=float(inv_loss.mean()),
        pixel_agreement=agreement,
    )


def write_cmc_csv(path: str | Path, curve: CmcCurve) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "rate"])
        for rank, rate in curve.rows():
            writer.writerow([rank, f"{rate:.6f}"])
    return path


ABLATION_HEADER = ["align", "k", "l", "rank1", "rank10", "map", "mean_inv_loss"]


@dataclass
class AblationCell:
    align: bool
    k: int
    l: int
    rank1: float | None = None
    rank10: float | None = None
    map_score: float | None = None
    mean_inv_loss: float | None = None
    error: str | None = None

    def row(self) -> list[str]:
        if self.error is not None:
            return ["on" if self.align else "off", str(self.k), str(self.l),
                    "error", "error", "error", self.error]
        return [
            "on" if self.align else "off",
            str(self.k),
            str(self.l),
            f"{self.rank1:.6f}",
            f"{self.rank10:.6f}",
            f"{self.map_score:.6f}",
            f"{self.mean_inv_loss:.6f}",
        ]


def write_ablation_csv(path: str | Path, cells: list[AblationCell]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ABLATION_HEADER)
        for cell in cells:
            writer.writerow(cell.row())
    return path
