#!/usr/bin/env python3
"""Compare fusion strategies on a small synthetic cohort.

Trains early fusion, late fusion, hyper-dense and hyper-dense with
asymmetric blocks on the same 9/3 phantom split at reduced width, then
reports the best validation DSC of each. The expected ordering
(hyper-dense variants >= late >= early) is printed, not enforced.

    python scripts/trend_experiment.py --out runs/trend --epochs 50 --seed 0
"""
from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

import torch

from ivdnet.data import make_cohort, split_dataset, subject_slices
from ivdnet.metrics import aggregate, evaluate_subject
from ivdnet.model import ModelConfig, build_model, parameter_count
from ivdnet.training import TrainConfig, load_checkpoint, train

VARIANTS = {
    "early": dict(fusion="early"),
    "late": dict(fusion="late"),
    "hyper_dense": dict(fusion="hyper_dense"),
    "hyper_dense_asym": dict(fusion="hyper_dense", block_variant="asymmetric"),
}
SHAPE = (12, 96, 96)
GROWTH = (8, 16, 32, 64)


def run(out, epochs=50, seed=0, num_subjects=12, lr=1e-3, variants=None):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cohort = make_cohort(num_subjects, seed=seed, num_discs=7, volume_shape=SHAPE)
    train_subj, val_subj = split_dataset(cohort, 9 / 12, seed)
    samples = [s for subj in train_subj for s in subject_slices(subj)]

    results = {"seed": seed, "epochs": epochs, "lr": lr, "shape": SHAPE, "growth": GROWTH,
               "train": [s.subject_id for s in train_subj],
               "val": [s.subject_id for s in val_subj],
               "val_dsc": {}, "distance": {}, "params": {}, "seconds": {}}
    for name in variants or VARIANTS:
        torch.manual_seed(seed)
        config = ModelConfig(input_size=SHAPE[1], growth=GROWTH, bridge_channels=128,
                             seed=seed, **VARIANTS[name])
        model = build_model(config)
        start = time.perf_counter()
        res = train(model, samples,
                    TrainConfig(epochs=epochs, initial_lr=lr, lr_halve_at_epoch=epochs // 2,
                                seed=seed, checkpoint_dir=str(out / name)),
                    val_subj)
        best, _ = load_checkpoint(res.best_path)
        agg = aggregate([evaluate_subject(best, s) for s in val_subj])
        results["val_dsc"][name] = agg["dsc"]
        results["distance"][name] = agg["distance"]
        results["params"][name] = parameter_count(model)
        results["seconds"][name] = round(time.perf_counter() - start, 1)
        (out / name / "results.json").write_text(json.dumps(
            {"subjects": [], "aggregate": agg}, indent=2))
        print(f"{name}: DSC {agg['dsc']}  distance {agg['distance']}  "
              f"({results['seconds'][name]} s)", flush=True)
    (out / "trend.json").write_text(json.dumps(results, indent=2))
    return results


def _mean(cell):
    return float(cell.split(" ± ")[0])


def ordering_holds(results) -> bool:
    d = {k: _mean(v) for k, v in results["val_dsc"].items()}
    return min(d["hyper_dense"], d["hyper_dense_asym"]) >= d["late"] >= d["early"]


def format_results(results) -> str:
    lines = ["| method | params | val DSC | distance |", "|---|---|---|---|"]
    for name, cell in results["val_dsc"].items():
        lines.append(f"| {name} | {results['params'][name]:,} | {cell} | "
                     f"{results['distance'][name]} |")
    if set(results["val_dsc"]) == set(VARIANTS):
        lines.append("")
        lines.append(f"expected ordering holds: {ordering_holds(results)} "
                     f"(seed {results['seed']}, {results['epochs']} epochs)")
    return "\n".join(lines)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/trend")
    parser.add_argument("--epochs", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--variants", help="comma-separated subset of " + ",".join(VARIANTS))
    args = parser.parse_args(argv)
    variants = args.variants.split(",") if args.variants else None
    results = run(args.out, args.epochs, args.seed, lr=args.lr, variants=variants)
    print(format_results(results))


if __name__ == "__main__":
    main()
