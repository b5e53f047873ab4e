"""Experiment runner CLI.

Subcommands: gen-data, train, eval, noise-sweep, quality-report.
Exit codes: 0 success, 1 usage error, 2 data/config error, 3 training
divergence. ``PROBFAS_OUT_ROOT`` provides the default output root when
--out is omitted.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import data, experiments, inference, metrics, training

DATASET_FILENAME = "dataset.txt"
CHECKPOINT_FILENAME = "checkpoint.ckpt"
TRAINLOG_FILENAME = "trainlog.jsonl"
MANIFEST_FILENAME = "manifest.json"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _parse_seeds(text):
    if ".." in text:
        lo, _, hi = text.partition("..")
        try:
            lo_i, hi_i = int(lo), int(hi)
        except ValueError:
            raise _UsageError(f"bad --seeds range {text!r}")
        if hi_i < lo_i:
            raise _UsageError(f"empty --seeds range {text!r}")
        return list(range(lo_i, hi_i + 1))
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise _UsageError(f"bad --seeds list {text!r}")


def _parse_fractions(text):
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise _UsageError(f"bad --fractions list {text!r}")


def _resolve_out(out, command):
    if out is None:
        root = os.environ.get("PROBFAS_OUT_ROOT")
        if root is None:
            raise _UsageError("--out is required (or set PROBFAS_OUT_ROOT)")
        out = os.path.join(root, command)
    os.makedirs(out, exist_ok=True)
    return out


def _load_config(path, seed=None):
    cfg = training.load_config(path) if path else experiments.default_benchmark_config()
    if seed is not None:
        cfg.seed = seed
    return cfg


def build_parser():
    parser = _Parser(prog="probfas", description="Noise-robust probabilistic classification experiments")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset, optionally with injected noise")
    p.add_argument("--n", type=int, required=True, help="samples per cluster")
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--spoof-types", type=int, default=3)
    p.add_argument("--overlap", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--semantic-noise", type=float, default=0.0)
    p.add_argument("--binary-noise", type=float, default=0.0)
    p.add_argument("--data-noise", type=float, default=0.0)
    p.add_argument("--severity", type=float, default=experiments.DEFAULT_DATA_NOISE_SEVERITY)
    p.add_argument("--out")

    p = sub.add_parser("train", help="train one ablation arm")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--arm", choices=training.ARMS, default="s-lq-dq")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--corrected", action="store_true")
    mode.add_argument("--uncorrected", action="store_true")
    p.add_argument("--out")

    p = sub.add_parser("noise-sweep", help="noise-robustness sweep over arms and seeds")
    p.add_argument("--noise-kind", choices=experiments.NOISE_KINDS, action="append")
    p.add_argument("--fractions", type=_parse_fractions)
    p.add_argument("--arm", choices=training.ARMS, action="append")
    p.add_argument("--seeds", type=_parse_seeds, default=[0, 1, 2, 3, 4])
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--config")
    p.add_argument("--out")

    p = sub.add_parser("quality-report", help="per-sample data-quality export")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out")

    return parser


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args):
    out = _resolve_out(args.out, "gen-data")
    ds = data.generate_synthetic(
        n_per_class=args.n, D=args.dim, categories={"spoof_type": args.spoof_types},
        cluster_overlap=args.overlap, seed=args.seed,
    )
    spec = data.NoiseSpec(
        semantic_noise_fraction=args.semantic_noise,
        binary_label_flip_fraction=args.binary_noise,
        data_noise_fraction=args.data_noise,
        data_noise_severity=args.severity,
        cluster_overlap=args.overlap,
    )
    ds = data.apply_noise(ds, spec, args.seed)
    path = os.path.join(out, DATASET_FILENAME)
    data.save_dataset(ds, path)
    experiments.write_manifest(os.path.join(out, MANIFEST_FILENAME), {
        "experiment": "gen-data",
        "seed": args.seed,
        "dataset_paths": [DATASET_FILENAME],
        "flags": {
            "n": args.n, "dim": args.dim, "spoof_types": args.spoof_types,
            "overlap": args.overlap, "semantic_noise": args.semantic_noise,
            "binary_noise": args.binary_noise, "data_noise": args.data_noise,
            "severity": args.severity,
        },
    })
    n_live = int(np.sum(ds.c_labels() == data.LIVE))
    print(f"seed={args.seed} n={len(ds)} live={n_live} spoof={len(ds) - n_live} -> {path}")
    return 0


def cmd_train(args):
    out = _resolve_out(args.out, "train")
    if not os.path.exists(args.data):
        raise data.DataError(f"dataset file not found: {args.data}")
    ds = data.load_dataset(args.data)
    cfg = _load_config(args.config, args.seed)
    cfg = training.arm_config(args.arm, cfg)
    params, log = training.train_two_stage(ds, cfg)
    training.save_checkpoint(os.path.join(out, CHECKPOINT_FILENAME), params, config=cfg)
    training.save_trainlog(log, os.path.join(out, TRAINLOG_FILENAME))
    experiments.write_manifest(os.path.join(out, MANIFEST_FILENAME), {
        "experiment": "train",
        "arm": args.arm,
        "config": cfg.to_dict(),
        "dataset_paths": [args.data],
        "flags": {"seed": cfg.seed},
    })
    print(f"arm={args.arm} seed={cfg.seed} epochs={len(log)} -> {out}")
    return 0


def _eval_mode(params, ds, corrected, threshold, out, tag):
    preds, _ = inference.predict_batch(params, ds.X(), corrected=corrected)
    inference.save_predictions(preds, os.path.join(out, f"predictions_{tag}.csv"))
    report = metrics.evaluate_predictions(preds, ds.c_labels(), threshold)
    with open(os.path.join(out, f"report_{tag}.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_json() + "\n")
    return report


def cmd_eval(args):
    out = _resolve_out(args.out, "eval")
    if not os.path.exists(args.data):
        raise data.DataError(f"dataset file not found: {args.data}")
    ds = data.load_dataset(args.data)
    params, _, _, _ = training.load_checkpoint(args.checkpoint)

    modes = ["uncorrected", "corrected"]
    if args.corrected:
        modes = ["corrected"]
    elif args.uncorrected:
        modes = ["uncorrected"]
    reports = {}
    for tag in modes:
        reports[tag] = _eval_mode(params, ds, tag == "corrected", args.threshold, out, tag)
    if len(reports) == 2:
        delta = {
            key: getattr(reports["corrected"], key) - getattr(reports["uncorrected"], key)
            for key in ("apcer", "bpcer", "acer", "hter")
        }
        with open(os.path.join(out, "report_delta.json"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(delta, sort_keys=True, separators=(",", ":")) + "\n")
    experiments.write_manifest(os.path.join(out, MANIFEST_FILENAME), {
        "experiment": "eval",
        "dataset_paths": [args.data],
        "checkpoint": args.checkpoint,
        "flags": {"threshold": args.threshold, "modes": modes},
    })
    for tag, rep in reports.items():
        print(f"{tag}: apcer={rep.apcer:.4f} bpcer={rep.bpcer:.4f} acer={rep.acer:.4f}")
    return 0


def cmd_noise_sweep(args):
    out = _resolve_out(args.out, "noise-sweep")
    kinds = args.noise_kind or ["semantic", "data"]
    arms = args.arm or list(training.ARMS)
    fractions_by_kind = {}
    for kind in kinds:
        if args.fractions is not None:
            fractions_by_kind[kind] = list(args.fractions)
        elif kind == "data":
            fractions_by_kind[kind] = list(experiments.DATA_NOISE_FRACTIONS)
        else:
            fractions_by_kind[kind] = list(experiments.LABEL_NOISE_FRACTIONS)
    cfg = _load_config(args.config)
    rows = experiments.noise_sweep(kinds, fractions_by_kind, arms, args.seeds, cfg, args.threshold)
    experiments.sweep_rows_to_csv(rows, os.path.join(out, "sweep.csv"))
    experiments.write_manifest(os.path.join(out, MANIFEST_FILENAME), {
        "experiment": "noise-sweep",
        "config": cfg.to_dict(),
        "seeds": args.seeds,
        "flags": {"kinds": kinds, "arms": arms, "fractions": fractions_by_kind,
                  "threshold": args.threshold},
    })
    print(f"{len(rows)} sweep rows -> {os.path.join(out, 'sweep.csv')}")
    return 0


def cmd_quality_report(args):
    out = _resolve_out(args.out, "quality-report")
    if not os.path.exists(args.data):
        raise data.DataError(f"dataset file not found: {args.data}")
    ds = data.load_dataset(args.data)
    params, _, _, _ = training.load_checkpoint(args.checkpoint)
    per_sample, hist, summary = experiments.quality_report(params, ds)
    with open(os.path.join(out, "quality.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(per_sample)
    with open(os.path.join(out, "quality_hist.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(hist)
    with open(os.path.join(out, "quality_summary.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(summary, sort_keys=True, separators=(",", ":")) + "\n")
    experiments.write_manifest(os.path.join(out, MANIFEST_FILENAME), {
        "experiment": "quality-report",
        "dataset_paths": [args.data],
        "checkpoint": args.checkpoint,
        "flags": {},
    })
    print(f"quality report for {summary['n']} samples -> {out}")
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "noise-sweep": cmd_noise_sweep,
    "quality-report": cmd_quality_report,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except training.TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    except (data.DataError, training.ConfigError, training.CheckpointError,
            metrics.MetricError, experiments.ManifestError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry():
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
