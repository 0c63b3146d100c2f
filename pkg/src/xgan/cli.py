"""Command-line entry point: dataset generation, training, evaluation, and
the weight-sharing/alignment ablation grid.

Every command serializes its full configuration to ``run.json`` in the output
directory before doing any work; rerunning with the same flags reproduces the
outputs byte-for-byte.  Exit codes: 2 bad flags, 3 I/O failure, 4 numeric
abort during training, 5 missing/corrupt checkpoint, 6 all ablation cells
failed.  stdout carries the paths of produced artifacts; diagnostics go to
stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_CHECKPOINT = 5
EXIT_ALL_CELLS_FAILED = 6


def _write_run_json(out_dir: Path, command: str, config: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "run.json"
    payload = {"command": command, "config": config}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _fail(code: int, message: str) -> int:
    print(message, file=sys.stderr)
    return code


def cmd_gen_data(args: argparse.Namespace) -> int:
    from .data import VIEW_PRESETS, generate_dataset, save_dataset, DatasetError

    out_dir = Path(args.out)
    config = {
        "identities": args.identities,
        "per_view": args.per_view,
        "seed": args.seed,
        "view_b_preset": args.view_b_preset,
    }
    try:
        _write_run_json(out_dir, "gen-data", config)
        if args.dry_run:
            return EXIT_OK
        view_a, view_b = VIEW_PRESETS[args.view_b_preset]
        dataset = generate_dataset(
            n_identities=args.identities,
            per_view_count=args.per_view,
            view_a=view_a,
            view_b=view_b,
            seed=args.seed,
        )
        save_dataset(dataset, out_dir)
    except DatasetError as exc:
        return _fail(EXIT_USAGE if "identities" in str(exc) else EXIT_IO, f"gen-data: {exc}")
    except OSError as exc:
        return _fail(EXIT_IO, f"gen-data: I/O failure: {exc}")
    print(out_dir)
    return EXIT_OK


def _train_config(args: argparse.Namespace):
    from .training import TrainConfig

    base = TrainConfig.paper if args.preset == "paper" else TrainConfig.desk
    overrides = dict(
        k=args.k, l=args.l, seed=args.seed,
        align_enabled=not args.no_align,
        feature_matching=args.feature_matching,
        saturating_generator=args.saturating_generator,
    )
    if args.iters is not None:
        overrides["iterations"] = args.iters
    if args.batch is not None:
        overrides["batch_size"] = args.batch
    if args.checkpoint_every is not None:
        overrides["checkpoint_every"] = args.checkpoint_every
    return base(**overrides)


def cmd_train(args: argparse.Namespace) -> int:
    from .data import DatasetError, load_dataset
    from .training import PairBatcher, TrainAbort, train

    out_dir = Path(args.out)
    try:
        cfg = _train_config(args)
    except ValueError as exc:
        return _fail(EXIT_USAGE, f"train: bad config: {exc}")
    _write_run_json(out_dir, "train", {**asdict(cfg), "data": str(args.data)})
    if args.dry_run:
        return EXIT_OK
    try:
        dataset = load_dataset(args.data)
    except DatasetError as exc:
        return _fail(EXIT_IO, f"train: cannot load dataset: {exc}")
    batcher = PairBatcher(*dataset.train_pairs_only())
    try:
        result = train(cfg, batcher, out_dir, resume_from=args.resume,
                       log_every=args.log_every)
    except TrainAbort as exc:
        print(f"train: numeric abort: {exc}", file=sys.stderr)
        if exc.last_checkpoint:
            print(f"last good checkpoint: {exc.last_checkpoint}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        return _fail(EXIT_IO, f"train: I/O failure: {exc}")
    print(result.metrics_path)
    print(result.checkpoint_path)
    return EXIT_OK


def _load_bundle(checkpoint: str, k: int, l: int, seed: int):
    from .checkpoint import restore_into
    from .models import build_image_models
    from .nn import SharingConfig
    from .rng import Rng

    bundle = build_image_models(SharingConfig(k=k, l=l), Rng(seed))
    step = restore_into(bundle.store, checkpoint)
    return bundle, step


def cmd_eval(args: argparse.Namespace) -> int:
    from .checkpoint import CheckpointError
    from .data import DatasetError, load_dataset
    from .evaluate import EvalError, evaluate_retrieval, write_cmc_csv

    out_dir = Path(args.out)
    config = {
        "checkpoint": str(args.checkpoint), "data": str(args.data),
        "strategy": args.strategy, "trials": args.trials, "seed": args.seed,
        "k": args.k, "l": args.l, "no_align": args.no_align,
        "inversion_steps": args.inversion_steps,
    }
    _write_run_json(out_dir, "eval", config)
    if args.dry_run:
        return EXIT_OK
    try:
        dataset = load_dataset(args.data)
    except DatasetError as exc:
        return _fail(EXIT_IO, f"eval: cannot load dataset: {exc}")
    try:
        bundle, step = _load_bundle(args.checkpoint, args.k, args.l, args.seed)
    except CheckpointError as exc:
        return _fail(EXIT_CHECKPOINT, f"eval: {exc}")
    try:
        result = evaluate_retrieval(
            bundle,
            dataset.test.images_a,
            dataset.test.images_b,
            dataset.test.identities,
            strategy=args.strategy,
            trials=args.trials,
            seed=args.seed,
            use_alignment=not args.no_align,
            inversion_steps=args.inversion_steps,
        )
    except EvalError as exc:
        return _fail(EXIT_USAGE, f"eval: {exc}")
    cmc_path = write_cmc_csv(out_dir / "cmc.csv", result.curve)
    summary = {
        "checkpoint_step": step,
        "strategy": result.strategy,
        "trials": result.curve.trials,
        "rank1": result.curve.rank(1),
        "rank5": result.curve.rank(min(5, len(result.curve.rates))),
        "rank10": result.curve.rank(min(10, len(result.curve.rates))),
        "map": result.curve.map_score,
    }
    if result.mean_inversion_loss is not None:
        summary["mean_inversion_loss"] = result.mean_inversion_loss
        summary["pixel_agreement"] = result.pixel_agreement
        with open(out_dir / "pixel_agreement.csv", "w") as fh:
            fh.write("quantization,agreement\n")
            fh.write(f"32,{result.pixel_agreement:.6f}\n")
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(cmc_path)
    print(out_dir / "summary.json")
    return EXIT_OK


def _parse_grid(spec: str) -> list[tuple[bool, int, int]]:
    """Parse 'k=0..5,l=0..5,align=on|off' into cells."""

    def parse_range(text: str) -> list[int]:
        if ".." in text:
            lo, hi = text.split("..")
            return list(range(int(lo), int(hi) + 1))
        return [int(v) for v in text.split("|")]

    ks, ls, aligns = [4], [1], [True]
    for part in spec.split(","):
        key, _, val = part.partition("=")
        key = key.strip()
        if key == "k":
            ks = parse_range(val)
        elif key == "l":
            ls = parse_range(val)
        elif key == "align":
            aligns = [v == "on" for v in val.split("|")]
        else:
            raise ValueError(f"unknown grid key {key!r}")
    return [(a, k, l) for a in aligns for k in ks for l in ls]


def _cell_seed(seed: int, align: bool, k: int, l: int) -> int:
    from .rng import derive_seed

    return derive_seed(seed, f"cell-{int(align)}-{k}-{l}")


def _run_cell(args, align_on: bool, k: int, l: int, cell_dir: Path):
    from .data import load_dataset
    from .evaluate import AblationCell, evaluate_retrieval, inversion_distances
    from .rng import Rng
    from .training import PairBatcher, TrainConfig, train

    cell = AblationCell(align=align_on, k=k, l=l)
    done_marker = cell_dir / "cell.json"
    if done_marker.exists():
        saved = json.loads(done_marker.read_text())
        cell.rank1 = saved["rank1"]
        cell.rank10 = saved["rank10"]
        cell.map_score = saved["map"]
        cell.mean_inv_loss = saved["mean_inv_loss"]
        return cell
    dataset = load_dataset(args.data)
    seed = _cell_seed(args.seed, align_on, k, l)
    cfg = TrainConfig.desk(
        k=k, l=l, seed=seed, align_enabled=align_on,
        iterations=args.iters, batch_size=args.batch,
        checkpoint_every=max(1, args.iters),
    )
    batcher = PairBatcher(*dataset.train_pairs_only())
    result = train(cfg, batcher, cell_dir)
    from .checkpoint import restore_into
    from .models import build_image_models
    from .nn import SharingConfig

    bundle = build_image_models(SharingConfig(k=k, l=l), Rng(seed))
    restore_into(bundle.store, result.checkpoint_path)
    ev = evaluate_retrieval(
        bundle, dataset.test.images_a, dataset.test.images_b,
        dataset.test.identities, strategy="latent", trials=args.trials,
        seed=seed, use_alignment=align_on,
    )
    _, _, inv_loss = inversion_distances(
        bundle, dataset.test.images_b[: args.inversion_probes],
        dataset.test.images_a, steps=args.inversion_steps, restarts=1,
        rng=Rng(seed).split("ablate-inv"),
    )
    cell.rank1 = ev.curve.rank(1)
    cell.rank10 = ev.curve.rank(min(10, len(ev.curve.rates)))
    cell.map_score = ev.curve.map_score
    cell.mean_inv_loss = float(inv_loss.mean())
    with open(done_marker, "w") as fh:
        json.dump(
            {"rank1": cell.rank1, "rank10": cell.rank10, "map": cell.map_score,
             "mean_inv_loss": cell.mean_inv_loss},
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")
    return cell


def cmd_ablate(args: argparse.Namespace) -> int:
    from .evaluate import AblationCell, write_ablation_csv

    out_dir = Path(args.out)
    try:
        grid = _parse_grid(args.grid)
    except ValueError as exc:
        return _fail(EXIT_USAGE, f"ablate: bad grid: {exc}")
    config = {
        "data": str(args.data), "grid": args.grid, "seed": args.seed,
        "iters": args.iters, "batch": args.batch, "trials": args.trials,
    }
    _write_run_json(out_dir, "ablate", config)
    if args.dry_run:
        return EXIT_OK
    max_workers = max(1, int(os.environ.get("XGAN_THREADS", "1")))
    cells: list[AblationCell] = []
    failures = 0

    def run_one(item):
        align_on, k, l = item
        cell_dir = out_dir / f"cell_align{'on' if align_on else 'off'}_k{k}_l{l}"
        cell_dir.mkdir(parents=True, exist_ok=True)
        try:
            return _run_cell(args, align_on, k, l, cell_dir)
        except Exception as exc:  # noqa: BLE001 - per-cell isolation
            cell = AblationCell(align=align_on, k=k, l=l, error=str(exc))
            return cell

    if max_workers == 1:
        results = [run_one(item) for item in grid]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(run_one, grid))
    for cell in results:
        cells.append(cell)
        if cell.error is not None:
            failures += 1
            print(f"ablate: cell align={cell.align} k={cell.k} l={cell.l} failed: {cell.error}",
                  file=sys.stderr)
    csv_path = write_ablation_csv(out_dir / "ablation.csv", cells)
    print(csv_path)
    if failures == len(grid):
        return EXIT_ALL_CELLS_FAILED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xgan",
        description="Cross-view twin-GAN training and retrieval evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate the synthetic two-view dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--identities", type=int, default=96)
    g.add_argument("--per-view", type=int, default=6)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--view-b-preset", choices=["default", "identity", "hard"], default="default")
    g.add_argument("--dry-run", action="store_true")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the coupled model")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--preset", choices=["desk", "paper"], default="desk")
    t.add_argument("--iters", type=int, default=None)
    t.add_argument("--batch", type=int, default=None)
    t.add_argument("--k", type=int, default=4)
    t.add_argument("--l", type=int, default=1)
    t.add_argument("--no-align", action="store_true")
    t.add_argument("--feature-matching", action="store_true")
    t.add_argument("--saturating-generator", action="store_true")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--checkpoint-every", type=int, default=None)
    t.add_argument("--resume", default=None)
    t.add_argument("--log-every", type=int, default=0)
    t.add_argument("--dry-run", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="retrieval evaluation of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--strategy", choices=["latent", "inversion"], default="latent")
    e.add_argument("--trials", type=int, default=10)
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--k", type=int, default=4)
    e.add_argument("--l", type=int, default=1)
    e.add_argument("--no-align", action="store_true")
    e.add_argument("--inversion-steps", type=int, default=200)
    e.add_argument("--dry-run", action="store_true")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train+eval a sharing/alignment grid")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--grid", default="k=0..4,l=1,align=on")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--iters", type=int, default=800)
    a.add_argument("--batch", type=int, default=32)
    a.add_argument("--trials", type=int, default=10)
    a.add_argument("--inversion-steps", type=int, default=120)
    a.add_argument("--inversion-probes", type=int, default=64)
    a.add_argument("--dry-run", action="store_true")
    a.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
