"""Desk-scale experiment machinery shared by the CLI and the acceptance
suite: the default synthetic benchmark, ablation-arm runs, noise sweeps,
and quality reports."""

import json
import os
from dataclasses import dataclass

import numpy as np

from . import data, inference, metrics, model, training

LABEL_NOISE_FRACTIONS = (0.0, 0.2, 0.5, 0.7, 1.0)
DATA_NOISE_FRACTIONS = (0.0, 0.1, 0.2, 0.3, 0.5)
DEFAULT_DATA_NOISE_SEVERITY = 2.0
NOISE_KINDS = ("semantic", "binary", "data")


def default_benchmark_config(seed=0):
    """Training configuration of the default synthetic benchmark.

    The stage-1 learning rate is raised from the 1e-4 library default so
    the small MLP converges on a few hundred samples, and the schedule is
    long enough (125 epochs) for the learned label-quality scale to anneal
    toward its deterministic limit within the budget.
    """
    cfg = training.TrainConfig(seed=seed)
    cfg.stage1 = training.StageConfig("adam", 3e-3, 125, 32)
    cfg.stage2 = training.StageConfig("sgd", 1e-1, 50, 32)
    cfg.hidden = (32,)
    cfg.embedding_dim = 16
    return cfg.validate()


def make_benchmark_data(seed, n_per_class=120, D=8, spoof_types=3, overlap=1.5):
    """Clean train/test pair drawn from one cluster layout."""
    ds = data.generate_synthetic(
        n_per_class=n_per_class, D=D, categories={"spoof_type": spoof_types},
        cluster_overlap=overlap, seed=seed,
    )
    return data.split_dataset(ds, test_fraction=0.5, seed=seed)


def apply_noise_kind(train, test, kind, fraction, seed, severity=DEFAULT_DATA_NOISE_SEVERITY):
    """Route one noise kind to the split the mechanism targets: label
    noise pollutes training labels, data noise pollutes both splits."""
    if kind == "semantic":
        return data.inject_semantic_label_noise(train, fraction, seed), test
    if kind == "binary":
        return data.inject_binary_label_noise(train, fraction, seed), test
    if kind == "data":
        return (
            data.inject_data_noise(train, fraction, severity, seed),
            data.inject_data_noise(test, fraction, severity, seed + 1),
        )
    raise data.DataError(f"unknown noise kind {kind!r}")


@dataclass
class ArmResult:
    arm: str
    seed: int
    params: model.ModelParams
    log: list
    report: metrics.EvalReport


def run_arm(train, test, arm, config, threshold=0.5):
    """Train one ablation arm and evaluate on the test split. The DQ arm
    uses stage-2 training and corrected inference."""
    cfg = training.arm_config(arm, config)
    params, log = training.train_two_stage(train, cfg)
    preds, _ = inference.predict_batch(params, test.X(), corrected=cfg.enable_dq)
    report = metrics.evaluate_predictions(preds, test.c_labels(), threshold, include_roc=False)
    return ArmResult(arm=arm, seed=cfg.seed, params=params, log=log, report=report)


# ---------------------------------------------------------------------------
# noise sweep
# ---------------------------------------------------------------------------

def noise_sweep(kinds, fractions_by_kind, arms, seeds, base_config=None, threshold=0.5):
    """Returns raw rows [(kind, fraction, arm, seed, acer, apcer, bpcer)]
    in canonical order plus aggregate mean/std rows per cell."""
    rows = []
    for kind in kinds:
        for fraction in fractions_by_kind[kind]:
            for arm in training.ARMS if arms is None else arms:
                for seed in seeds:
                    cfg = base_config or default_benchmark_config()
                    cfg = training.TrainConfig.from_dict(cfg.to_dict())
                    cfg.seed = seed
                    train, test = make_benchmark_data(seed)
                    train, test = apply_noise_kind(train, test, kind, fraction, seed)
                    res = run_arm(train, test, arm, cfg, threshold)
                    rows.append((kind, fraction, arm, seed, res.report.acer,
                                 res.report.apcer, res.report.bpcer))
    return rows


def sweep_rows_to_csv(rows, path):
    """Raw per-seed rows followed by per-cell mean and std rows."""
    cells = {}
    for kind, fraction, arm, seed, acer_v, apcer_v, bpcer_v in rows:
        cells.setdefault((kind, fraction, arm), []).append((seed, acer_v, apcer_v, bpcer_v))
    lines = ["noise_kind,fraction,arm,seed,acer,apcer,bpcer"]
    for key in sorted(cells):
        kind, fraction, arm = key
        entries = sorted(cells[key])
        for seed, acer_v, apcer_v, bpcer_v in entries:
            lines.append(
                f"{kind},{format(fraction, '.17g')},{arm},{seed},"
                f"{format(acer_v, '.17g')},{format(apcer_v, '.17g')},{format(bpcer_v, '.17g')}"
            )
        vals = np.array([[e[1], e[2], e[3]] for e in entries])
        for stat_name, stat in (("mean", vals.mean(axis=0)), ("std", vals.std(axis=0))):
            lines.append(
                f"{kind},{format(fraction, '.17g')},{arm},{stat_name},"
                + ",".join(format(v, ".17g") for v in stat)
            )
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return text


# ---------------------------------------------------------------------------
# quality report
# ---------------------------------------------------------------------------

def quality_report(params, ds, n_bins=20):
    """Per-sample data-quality values with corruption provenance plus a
    binned histogram comparing corrupted vs clean distributions."""
    if len(ds) == 0:
        raise data.DataError("cannot build a quality report for an empty dataset")
    mu = model.embed(params, ds.X())
    s2 = model.dq_variance(params, mu)
    corrupted = ds.flag_mask("data_corrupted")
    severities = np.array([s.flags.corruption_severity for s in ds.samples])

    lo, hi = float(s2.min()), float(s2.max())
    if hi == lo:
        hi = lo + 1e-12
    edges = np.linspace(lo, hi, n_bins + 1)
    hist_corrupt, _ = np.histogram(s2[corrupted], bins=edges)
    hist_clean, _ = np.histogram(s2[~corrupted], bins=edges)

    per_sample_lines = ["id,sigma_d_sq,data_corrupted,corruption_severity"]
    for i, smp in enumerate(ds.samples):
        per_sample_lines.append(
            f"{smp.id},{format(float(s2[i]), '.17g')},{int(corrupted[i])},"
            f"{format(float(severities[i]), '.17g')}"
        )
    hist_lines = ["bin_lo,bin_hi,count_clean,count_corrupted"]
    for b in range(n_bins):
        hist_lines.append(
            f"{format(edges[b], '.17g')},{format(edges[b + 1], '.17g')},"
            f"{int(hist_clean[b])},{int(hist_corrupt[b])}"
        )
    summary = {
        "n": len(ds),
        "n_corrupted": int(corrupted.sum()),
        "mean_quality_clean": float(s2[~corrupted].mean()) if (~corrupted).any() else None,
        "mean_quality_corrupted": float(s2[corrupted].mean()) if corrupted.any() else None,
    }
    return "\n".join(per_sample_lines) + "\n", "\n".join(hist_lines) + "\n", summary


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

class ManifestError(Exception):
    pass


def write_manifest(path, doc):
    """Manifests are immutable: rewriting identical content is a no-op,
    any other overwrite is an error."""
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            if fh.read() == text:
                return
        raise ManifestError(f"{path}: manifest exists with different content")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
