"""Per-view variational auto-encoders.

Each view gets its own encoder MLP producing a diagonal Gaussian posterior
(mu, log variance) and a decoder MLP mapping codes back to inputs.  The loss
is the analytic KL to the standard-normal prior plus a unit-variance Gaussian
reconstruction term (squared error, constants dropped).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import tensor as T
from .nn import Network
from .rng import Rng
from .tensor import ShapeError, Tensor


@dataclass
class GaussianPosterior:
    """Per-sample posterior parameters, both [batch, latent_dim]."""

    mu: Tensor
    log_var: Tensor

    @property
    def batch(self) -> int:
        return self.mu.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.mu.shape[1]


@dataclass
class LatentCode:
    z: Tensor
    view: str  # "A" | "B"


@dataclass
class VaeNets:
    """Encoder trunk with two heads plus a decoder, all alias-backed."""

    trunk: Network
    head_mu: Network
    head_log_var: Network
    decoder: Network
    view: str

    def slot_ids(self) -> list[str]:
        ids = (
            self.trunk.slot_ids()
            + self.head_mu.slot_ids()
            + self.head_log_var.slot_ids()
            + self.decoder.slot_ids()
        )
        return sorted(set(ids))

    def encoder_slot_ids(self) -> list[str]:
        ids = self.trunk.slot_ids() + self.head_mu.slot_ids() + self.head_log_var.slot_ids()
        return sorted(set(ids))


def encode(vae: VaeNets, x: Tensor, params: Mapping[str, Tensor] | None = None) -> GaussianPosterior:
    h = vae.trunk.forward(x, params)
    mu = vae.head_mu.forward(h, params)
    log_var = vae.head_log_var.forward(h, params)
    return GaussianPosterior(mu=mu, log_var=log_var)


def decode(vae: VaeNets, z: Tensor, params: Mapping[str, Tensor] | None = None) -> Tensor:
    return vae.decoder.forward(z, params)


def reparameterize(post: GaussianPosterior, rng: Rng) -> LatentCode:
    """z = mu + exp(log_var / 2) * eps with eps drawn fresh from the stream.

    eps is a plain constant tensor, so gradients reach mu and log_var only.
    """
    eps = Tensor(rng.normal(post.mu.shape, dtype=post.mu.array.dtype))
    half = Tensor(np.asarray(0.5, post.log_var.array.dtype))
    std = T.exp(T.mul(post.log_var, half))
    z = T.add(post.mu, T.mul(std, eps))
    return LatentCode(z=z, view="?")


def kl_to_standard_normal(post: GaussianPosterior) -> Tensor:
    """Batch-mean analytic KL(q(z|x) || N(0, I)); nonnegative."""
    one = Tensor(np.asarray(1.0, post.mu.array.dtype))
    var = T.exp(post.log_var)
    inner = T.sub(T.add(one, post.log_var), T.add(T.square(post.mu), var))
    per_sample = T.tsum(inner, axis=1)
    neg_half = Tensor(np.asarray(-0.5, post.mu.array.dtype))
    return T.tmean(T.mul(per_sample, neg_half))


def reconstruction_loss(x_hat: Tensor, x: Tensor) -> Tensor:
    """Half squared error per sample, averaged over the batch."""
    if x_hat.shape != x.shape:
        raise ShapeError(
            f"reconstruction_loss: shapes {list(x_hat.shape)} != {list(x.shape)}"
        )
    diff = T.sub(x_hat, x)
    sq = T.square(diff)
    flat = T.reshape(sq, (x.shape[0], int(np.prod(x.shape[1:]))))
    per_sample = T.tsum(flat, axis=1)
    half = Tensor(np.asarray(0.5, x.array.dtype))
    return T.tmean(T.mul(per_sample, half))


def vae_sample_loss(vae: VaeNets, x: Tensor, rng: Rng, params=None) -> Tensor:
    """KL + reconstruction for one view's batch."""
    post = encode(vae, x, params)
    code = reparameterize(post, rng)
    x_hat = decode(vae, code.z, params)
    return T.add(kl_to_standard_normal(post), reconstruction_loss(x_hat, x))


def vae_loss_pair(
    vae_a: VaeNets,
    vae_b: VaeNets,
    x: Tensor,
    x_bar: Tensor,
    rng_a: Rng,
    rng_b: Rng,
    params=None,
) -> tuple[Tensor, Tensor]:
    """Both views' losses; their sum is the pair-mean dataset estimator."""
    if x.shape[0] == 0 or x_bar.shape[0] == 0:
        raise ShapeError("vae_loss_pair: empty batch")
    if x.shape[0] != x_bar.shape[0]:
        raise ShapeError(
            f"vae_loss_pair: batch sizes differ ({x.shape[0]} vs {x_bar.shape[0]})"
        )
    loss_a = vae_sample_loss(vae_a, x, rng_a, params)
    loss_b = vae_sample_loss(vae_b, x_bar, rng_b, params)
    return loss_a, loss_b
