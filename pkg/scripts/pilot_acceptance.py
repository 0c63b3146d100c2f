"""Pilot study for the acceptance thresholds: trains the desk configuration
with/without alignment and with k=4 vs k=0, evaluating retrieval and
inversion quality at several checkpoints.  Results guide the training length
used by the acceptance suite."""
import json
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from xgan.checkpoint import restore_into
from xgan.data import generate_dataset
from xgan.evaluate import cmc, evaluate_retrieval, inversion_distances, latent_distances, raw_latent_distances
from xgan.models import build_image_models
from xgan.nn import SharingConfig
from xgan.rng import Rng
from xgan.training import PairBatcher, TrainConfig, TrainState, build_bundle, train_step


def run_variant(tag, cfg, dataset, eval_marks, out):
    batcher = PairBatcher(*dataset.train_pairs_only())
    bundle = build_bundle(cfg)
    state = TrainState(bundle=bundle, cfg=cfg, rng=Rng(cfg.seed))
    results = []
    t0 = time.time()
    for step in range(max(eval_marks)):
        train_step(state, batcher.batch(state.rng, state.step, cfg.batch_size))
        if state.step in eval_marks:
            test = dataset.test
            d_align = latent_distances(bundle, test.images_b, test.images_a)
            d_raw = raw_latent_distances(bundle, test.images_b, test.images_a)
            c_align = cmc(d_align, test.identities, test.identities, trials=10, rng=Rng(1).split("c"))
            c_raw = cmc(d_raw, test.identities, test.identities, trials=10, rng=Rng(1).split("c"))
            _, _, inv_loss = inversion_distances(
                bundle, test.images_b[:48], test.images_a, steps=100, restarts=1,
                rng=Rng(2).split("inv"),
            )
            row = {
                "tag": tag, "step": state.step,
                "rank1_align": c_align.rank(1), "rank1_raw": c_raw.rank(1),
                "map_align": c_align.map_score,
                "mean_inv_loss": float(inv_loss.mean()),
                "elapsed_min": (time.time() - t0) / 60,
            }
            results.append(row)
            print(json.dumps(row), flush=True)
            with open(out, "a") as fh:
                fh.write(json.dumps(row) + "\n")
    return results


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("/tmp/pilot_results.jsonl")
    out.write_text("")
    marks = {200, 400, 600, 900, 1200, 1500}
    dataset = generate_dataset(96, 6, seed=0)
    print("dataset ready", flush=True)
    run_variant("align_k4", TrainConfig.desk(seed=0, k=4, l=1), dataset, marks, out)
    run_variant("noalign_k4", TrainConfig.desk(seed=0, k=4, l=1, align_enabled=False), dataset, marks, out)
    run_variant("align_k0", TrainConfig.desk(seed=0, k=0, l=1), dataset, marks, out)


if __name__ == "__main__":
    main()
