"""Cross-view alignment: a learned tanh map from view-B codes into view-A
latent space, trained with a floored squared-distance loss."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from . import tensor as T
from .nn import Network
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class AlignmentConfig:
    tau: float = 1.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"alignment tau must be positive, got {self.tau}")


def align(align_net: Network, z_bar: Tensor, params: Mapping[str, Tensor] | None = None) -> Tensor:
    """tanh(W z_bar + b): view-B codes mapped into view-A code space."""
    return align_net.forward(z_bar, params)


def alignment_loss(z: Tensor, z_aligned: Tensor, cfg: AlignmentConfig) -> Tensor:
    """Batch mean of max(||z_i - aligned_i||^2, tau).

    Pairs already closer than tau contribute the constant floor and therefore
    no gradient; at the kink the squared-distance branch wins.
    """
    if z.shape[0] == 0:
        raise ShapeError("alignment_loss: empty batch")
    if z.shape != z_aligned.shape:
        raise ShapeError(
            f"alignment_loss: shapes {list(z.shape)} != {list(z_aligned.shape)}"
        )
    diff = T.sub(z, z_aligned)
    d2 = T.tsum(T.square(diff), axis=1)
    floored = T.maximum_scalar(d2, cfg.tau)
    return T.tmean(floored)
