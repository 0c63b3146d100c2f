import os
import sys
from pathlib import Path

import numpy as np
import pytest

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
sys.path.insert(0, str(Path(__file__).parent))

from xgan.rng import Rng
from xgan.training import PairBatcher, TrainConfig, TrainState, build_bundle, train_step


def toy_two_gaussians(n: int = 512, seed: int = 42, mean: float = 2.0, std: float = 0.5):
    """Paired 1-d samples: view A ~ N(+mean, std), view B ~ N(-mean, std)."""
    r = Rng(seed)
    xa = (r.split("A").normal((n, 1)) * std + mean).astype(np.float32)
    xb = (r.split("B").normal((n, 1)) * std - mean).astype(np.float32)
    return PairBatcher(xa, xb)


def run_toy_training(cfg: TrainConfig, steps: int, batcher: PairBatcher | None = None):
    batcher = batcher or toy_two_gaussians()
    bundle = build_bundle(cfg, toy=True)
    state = TrainState(bundle=bundle, cfg=cfg, rng=Rng(cfg.seed))
    reports = []
    for _ in range(steps):
        reports.append(train_step(state, batcher.batch(state.rng, state.step, cfg.batch_size)))
    return bundle, reports


@pytest.fixture(scope="session")
def small_image_dataset():
    from xgan.data import generate_dataset

    return generate_dataset(n_identities=9, per_view_count=3, seed=11)


@pytest.fixture(scope="session")
def default_desk_dataset():
    from xgan.data import generate_dataset

    return generate_dataset(n_identities=96, per_view_count=6, seed=0)
