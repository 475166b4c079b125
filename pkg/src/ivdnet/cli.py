"""Command-line entry point.

Every subcommand accepts ``--config FILE`` (JSON). Its keys are the flag
destinations (``--batch-size`` -> ``batch_size``); flags given on the
command line override file values. Exit codes: 0 success, 1 usage error,
2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(value) -> tuple[int, ...]:
    if isinstance(value, str):
        parts = [p for p in value.replace(" ", "").split(",") if p]
    else:
        parts = list(value)
    try:
        return tuple(int(p) for p in parts)
    except (TypeError, ValueError):
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {value!r}")


def _str_list(value) -> list[str] | None:
    if value is None:
        return None
    if isinstance(value, str):
        return [p for p in value.split(",") if p]
    return list(value)


# ---------------------------------------------------------------- subcommands

def cmd_plan(args) -> int:
    from .plan import build_plan, input_channels

    plan = build_plan(args.streams, args.growth, args.mode, permute_streams=not args.no_permute)
    print(plan.format_table())
    bridge = input_channels(plan, plan.num_layers + 1, 1)
    print(f"bridge input channels: {bridge}")
    if args.json:
        Path(args.json).parent.mkdir(parents=True, exist_ok=True)
        Path(args.json).write_text(plan.to_json())
    return EXIT_OK


def cmd_generate_data(args) -> int:
    from .data import make_cohort, save_dataset

    shape = args.shape
    if len(shape) != 3:
        raise UsageError(f"--shape needs three sizes, got {shape}")
    subjects = make_cohort(args.subjects, seed=args.seed, num_discs=args.discs,
                           volume_shape=shape)
    path = save_dataset(args.out, subjects)
    print(f"wrote {len(subjects)} subjects, manifest {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    import torch

    from .data import load_dataset, split_dataset, subject_slices
    from .model import ModelConfig, build_model
    from .training import TrainConfig, train

    torch.manual_seed(args.seed)
    subjects = load_dataset(args.data)
    if not subjects:
        raise ValueError(f"dataset {args.data} has no subjects")
    train_subj, val_subj = split_dataset(subjects, args.train_fraction, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "split.json").write_text(json.dumps({
        "train": [s.subject_id for s in train_subj],
        "val": [s.subject_id for s in val_subj],
    }, indent=2))

    mconf = ModelConfig(
        num_streams=len(subjects[0].modalities),
        input_size=subjects[0].shape[1],
        growth=args.growth,
        bridge_channels=args.bridge,
        fusion=args.fusion,
        block_variant=args.variant,
        dilation_rates=args.dilation,
        permute_streams=not args.no_permute,
        seed=args.seed,
    )
    tconf = TrainConfig(
        epochs=args.epochs,
        initial_lr=args.lr,
        lr_halve_at_epoch=args.lr_halve_at if args.lr_halve_at is not None else args.epochs // 2,
        batch_size=args.batch_size,
        seed=args.seed,
        checkpoint_dir=str(out),
        loss=args.loss,
    )
    (out / "config.json").write_text(json.dumps({
        "model": mconf.to_dict(), "train": tconf.__dict__,
    }, indent=2))
    samples = [s for subj in train_subj for s in subject_slices(subj)]
    model = build_model(mconf)
    result = train(model, samples, tconf, val_subj, resume_from=args.resume)
    last = result.history[-1]
    print(f"trained {len(result.history)} epochs; final loss {last['train_loss']:.5f}, "
          f"val DSC {last['val_dsc']:.4f}; checkpoints in {out}")
    return EXIT_OK


def _select_subjects(data, subjects_arg, split_arg):
    from .data import load_dataset

    ids = _str_list(subjects_arg)
    if ids is None and split_arg:
        ids = json.loads(Path(split_arg).read_text())["val"]
    return load_dataset(data, ids)


def cmd_predict(args) -> int:
    from .data import save_volume
    from .metrics import predict_volume
    from .training import load_checkpoint

    model, _ = load_checkpoint(args.checkpoint)
    subjects = _select_subjects(args.data, args.subjects, args.split)
    if not subjects:
        raise ValueError("no subjects selected for prediction")
    out = Path(args.out)
    for subj in subjects:
        pred = predict_volume(model, subj, args.batch_size)
        save_volume(out / f"{subj.subject_id}.nii.gz", pred.astype(np.uint8), subj.label.spacing)
    print(f"wrote {len(subjects)} predicted volumes to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .data import load_dataset, read_volume
    from .metrics import aggregate, evaluate_volumes

    pred_dir = Path(args.pred)
    if not pred_dir.is_dir():
        raise FileNotFoundError(f"prediction directory not found: {pred_dir}")
    ids = _str_list(args.subjects)
    if ids is None:
        ids = sorted(p.name[:-len(".nii.gz")] for p in pred_dir.glob("*.nii.gz"))
    subjects = load_dataset(args.data, ids, normalized=False)
    if not subjects:
        raise ValueError(f"no subjects of {args.data} have predictions in {pred_dir}")
    reports = []
    for subj in subjects:
        pred, _ = read_volume(pred_dir / f"{subj.subject_id}.nii.gz")
        reports.append(evaluate_volumes(subj.label.voxels, pred.astype(np.uint8), subj.subject_id))
    agg = aggregate(reports)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.json").write_text(json.dumps({
        "subjects": [r.to_dict() for r in reports], "aggregate": agg,
    }, indent=2))
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject", "dsc", "mean_distance", "matched", "misses", "false_positives"])
        for r in reports:
            w.writerow([r.subject_id, r.dsc, r.mean_distance, r.matched, r.misses,
                        r.false_positives])
        w.writerow(["mean", agg["dsc_mean"], agg["distance_mean"], "", agg["misses"],
                    agg["false_positives"]])
    for r in reports:
        print(f"{r.subject_id}: DSC {r.dsc:.4f}  distance {r.mean_distance:.4f}")
    print(f"DSC {agg['dsc']}  distance {agg['distance']}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .data import load_dataset, read_volume
    from .report import load_summary, plot_loss_curves, plot_overlay, read_history, write_comparison

    runs = [Path(r) for r in _str_list(args.runs) or []]
    names = _str_list(args.names) or [r.name for r in runs]
    if len(names) != len(runs):
        raise UsageError("--names must match --runs in length")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    histories, summaries = {}, {}
    for name, run in zip(names, runs):
        hist = run / "history.csv"
        if not hist.exists():
            raise FileNotFoundError(f"no history.csv in {run}")
        histories[name] = read_history(hist)
        if (run / "results.json").exists():
            summaries[name] = load_summary(run / "results.json")
    written = []
    if histories:
        written.append(plot_loss_curves(histories, out / "loss_curves.png"))
    if summaries:
        written.extend(write_comparison(summaries, out))
    if args.data and args.pred:
        pred_dir = Path(args.pred)
        ids = sorted(p.name[:-len(".nii.gz")] for p in pred_dir.glob("*.nii.gz"))
        for subj in load_dataset(args.data, ids):
            pred, _ = read_volume(pred_dir / f"{subj.subject_id}.nii.gz")
            written.append(plot_overlay(
                [m.voxels for m in subj.modalities], [m.modality_id for m in subj.modalities],
                subj.label.voxels, pred, out / f"overlay_{subj.subject_id}.png"))
    for p in written:
        print(f"wrote {p}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ivdnet", description="Multi-modal hyper-dense UNet toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", help="JSON file whose keys mirror the flags below")
        p.set_defaults(func=func)
        return p

    p = add("plan", cmd_plan, "print the encoder connectivity plan")
    p.add_argument("--streams", type=int, default=4, help="number of modality streams")
    p.add_argument("--growth", type=_int_list, default=(32, 64, 128, 256),
                   help="comma-separated output channels per encoder layer")
    p.add_argument("--mode", default="hyper_dense",
                   choices=["plain", "dense_within_stream", "hyper_dense"])
    p.add_argument("--no-permute", action="store_true",
                   help="keep the same stream order in every stream")
    p.add_argument("--json", help="also write the plan as JSON to this path")

    p = add("generate-data", cmd_generate_data, "write a synthetic phantom dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--subjects", type=int, default=16)
    p.add_argument("--discs", type=int, default=7, help="discs per subject")
    p.add_argument("--shape", type=_int_list, default=(36, 256, 256),
                   help="volume shape depth,height,width")
    p.add_argument("--seed", type=int, default=0)

    p = add("train", cmd_train, "train a model on a phantom dataset")
    p.add_argument("--data", required=True, help="dataset directory with manifest.json")
    p.add_argument("--out", required=True, help="run directory for checkpoints and history")
    p.add_argument("--fusion", default="hyper_dense", choices=["early", "late", "hyper_dense"])
    p.add_argument("--variant", default="standard", choices=["standard", "asymmetric"])
    p.add_argument("--growth", type=_int_list, default=(32, 64, 128, 256))
    p.add_argument("--bridge", type=int, default=512, help="bridge output channels")
    p.add_argument("--dilation", type=_int_list, default=(2, 4), help="two dilation rates")
    p.add_argument("--no-permute", action="store_true")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-4, help="initial learning rate")
    p.add_argument("--lr-halve-at", type=int, default=None,
                   help="epoch at which the learning rate halves (default epochs/2)")
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--loss", default="cross_entropy", choices=["cross_entropy", "dice_loss"])
    p.add_argument("--train-fraction", type=float, default=13 / 16)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--seed", type=int, default=0)

    p = add("predict", cmd_predict, "write predicted 3D masks")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="directory for <subject>.nii.gz masks")
    p.add_argument("--subjects", help="comma-separated subject ids (default: all)")
    p.add_argument("--split", help="split.json of a run; predicts its validation subjects")
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)

    p = add("evaluate", cmd_evaluate, "score predicted masks against dataset labels")
    p.add_argument("--data", required=True, help="dataset directory with reference labels")
    p.add_argument("--pred", required=True, help="directory of <subject>.nii.gz masks")
    p.add_argument("--out", required=True, help="directory for results.csv and results.json")
    p.add_argument("--subjects", help="comma-separated subject ids (default: all predicted)")
    p.add_argument("--seed", type=int, default=0)

    p = add("report", cmd_report, "render loss curves, comparison table and overlays")
    p.add_argument("--runs", required=True, help="comma-separated run directories")
    p.add_argument("--names", help="comma-separated display names for the runs")
    p.add_argument("--data", help="dataset directory, for overlay images")
    p.add_argument("--pred", help="prediction directory, for overlay images")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _commands(parser) -> dict:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices
    return {}


def _subparser(parser, command):
    return _commands(parser)[command]


def config_keys(parser, command) -> set[str]:
    sp = _subparser(parser, command)
    return {a.dest for a in sp._actions if a.dest not in ("help", "config", "func")}


def _prescan(argv, commands) -> tuple[str | None, str | None]:
    """Find the subcommand and ``--config`` value before the full parse."""
    command = config = None
    for i, tok in enumerate(argv):
        if command is None and tok in commands:
            command = tok
        elif tok == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
        elif tok.startswith("--config="):
            config = tok.split("=", 1)[1]
    return command, config


def parse(argv=None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    commands = _commands(parser)
    command, config = _prescan(argv, commands)
    if command and config:
        try:
            conf = json.loads(Path(config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {config}: {exc}")
        if not isinstance(conf, dict):
            parser.error(f"config {config} must hold a JSON object")
        unknown = set(conf) - config_keys(parser, command)
        if unknown:
            parser.error(f"unknown config keys for {command}: {sorted(unknown)}")
        sp = _subparser(parser, command)
        for action in sp._actions:
            if action.dest in conf:
                action.required = False
        sp.set_defaults(**conf)
    args = parser.parse_args(argv)
    for key in ("growth", "shape", "dilation"):
        if hasattr(args, key):
            setattr(args, key, _int_list(getattr(args, key)))
    return args


def main(argv=None) -> int:
    args = parse(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ivdnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError, FloatingPointError, RuntimeError) as exc:
        print(f"ivdnet {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
