"""Cross-view representation learning with paired VAEs, a latent alignment
map, and weight-tied twin GANs, plus a synthetic two-view dataset and a
retrieval evaluator."""

__version__ = "0.1.0"
