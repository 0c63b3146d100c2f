"""Weight-sharing sweep: how generator tying depth affects cross-view
transfer, measured by the latent-inversion matching loss (lower is better)
and retrieval rates."""
import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from xgan.data import generate_dataset
from xgan.evaluate import cmc, inversion_distances, latent_distances
from xgan.rng import Rng
from xgan.training import PairBatcher, TrainConfig, TrainState, build_bundle, train_step


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--iters", type=int, default=900)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--ks", type=int, nargs="+", default=[0, 2, 4])
    parser.add_argument("--l", type=int, default=1)
    parser.add_argument("--inversion-steps", type=int, default=120)
    parser.add_argument("--probes", type=int, default=64)
    args = parser.parse_args()

    dataset = generate_dataset(96, 6, seed=args.seed)
    test = dataset.test
    print(f"{'k':>3} {'rank1':>7} {'map':>7} {'mean inversion loss':>20}")
    for k in args.ks:
        cfg = TrainConfig.desk(seed=args.seed, iterations=args.iters, k=k, l=args.l)
        batcher = PairBatcher(*dataset.train_pairs_only())
        bundle = build_bundle(cfg)
        state = TrainState(bundle=bundle, cfg=cfg, rng=Rng(cfg.seed))
        for _ in range(cfg.iterations):
            train_step(state, batcher.batch(state.rng, state.step, cfg.batch_size))
        d = latent_distances(bundle, test.images_b, test.images_a)
        curve = cmc(d, test.identities, test.identities, trials=10, rng=Rng(1))
        _, _, inv_loss = inversion_distances(
            bundle, test.images_b[: args.probes], test.images_a,
            steps=args.inversion_steps, restarts=1, rng=Rng(2).split("inv"),
        )
        print(f"{k:>3} {curve.rank(1):>7.3f} {curve.map_score:>7.3f} "
              f"{float(inv_loss.mean()):>20.5f}", flush=True)


if __name__ == "__main__":
    main()
