"""Self-labeling pipeline: train a semantic tagger on a label-sufficient
dataset, tag self-distributed labels on a label-deficient dataset, then
run the full two-stage training there."""

import json
from dataclasses import dataclass, field

import numpy as np

from . import inference, losses, metrics, model, training
from .data import SPOOF
from .training import ConfigError


@dataclass
class TaggerModel:
    params: model.ModelParams
    category: str

    def predict_proba(self, X):
        mu = model.embed(self.params, X)
        logits = model.semantic_logits(self.params, self.category, mu)
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)


def train_tagger(d_suf, category, config):
    """Supervised training of a semantic-category classifier on the spoof
    samples of the sufficient dataset."""
    if category not in d_suf.categories:
        raise ConfigError(f"category {category!r} not in dataset")
    spoof = d_suf.spoof_mask()
    labels = d_suf.s_labels(category)[spoof]
    if np.unique(labels).size < 2:
        raise ConfigError(f"category {category!r} is degenerate: fewer than 2 observed classes")

    params = model.init_params(
        d_suf.feature_dim, {category: d_suf.categories[category]},
        B=config.embedding_dim, hidden=config.hidden, seed=config.seed,
    )
    X = d_suf.X()[spoof]
    n = X.shape[0]
    bs = config.stage1.batch_size
    flat = model.flatten_params(params)
    opt = training.OptState.create(config.stage1, flat.size)
    for epoch in range(config.stage1.epochs):
        rng, _ = training._epoch_rngs(config.seed, 3, epoch)
        order = rng.permutation(n)
        for lo in range(0, n, bs):
            idx = order[lo : lo + bs]
            params = model.unflatten_params(flat, params)
            mu, cache = model.embed_with_cache(params, X[idx])
            loss, dz, domega = losses.semantic_ce_with_grads(mu, params.omega_s[category], labels[idx])
            training._check_finite(3, epoch, loss.total, {"tagger_loss": loss.total})
            grads = model.zeros_like_params(params)
            grads.omega_s[category] += domega
            layer_grads, _ = model.embed_backward(params, cache, dz)
            for (gW, gb), (GW, Gb) in zip(layer_grads, grads.layers):
                GW += gW
                Gb += gb
            opt.step(flat, model.flatten_params(grads))
    params = model.unflatten_params(flat, params)
    return TaggerModel(params=params, category=category)


def tagger_accuracy(tagger, ds):
    spoof = ds.spoof_mask()
    if not spoof.any():
        raise ConfigError("no spoof samples to score the tagger on")
    pred = tagger.predict(ds.X()[spoof])
    return float(np.mean(pred == ds.s_labels(tagger.category)[spoof]))


def self_label(tagger, d_def, category=None):
    """Assign argmax tagger predictions as the category's labels on spoof
    samples; originals are retained on each sample for agreement analysis.

    Returns (dataset, agreement_rate): the fraction of relabeled samples
    whose self-distributed label equals the prior annotation."""
    category = category or tagger.category
    if category != tagger.category:
        raise ConfigError(f"tagger was trained for {tagger.category!r}, not {category!r}")
    out = d_def.copy()
    spoof_ids = [s.id for s in out.samples if s.c == SPOOF]
    if not spoof_ids:
        return out, float("nan")
    X = np.stack([out.samples[i].x for i in spoof_ids])
    pred = tagger.predict(X)
    agree = 0
    for k, sid in enumerate(spoof_ids):
        smp = out.samples[sid]
        if smp.s_annotated is None:
            smp.s_annotated = dict(smp.s)
        if smp.s[category] == int(pred[k]):
            agree += 1
        smp.s[category] = int(pred[k])
    return out, agree / len(spoof_ids)


@dataclass
class PipelineReport:
    tagger_accuracy: float
    agreement_rate: float
    eval_reports: dict = field(default_factory=dict)  # arm -> EvalReport

    def to_json(self):
        doc = {
            "tagger_accuracy": self.tagger_accuracy,
            "agreement_rate": self.agreement_rate,
            "arms": {arm: json.loads(rep.to_json()) for arm, rep in sorted(self.eval_reports.items())},
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def run_generalized_pipeline(d_suf, d_def, config, d_def_test=None, category=None,
                             arms=("s-lq-dq",), threshold=0.5):
    """Train tagger on d_suf, self-label d_def, train the requested arms
    there, and evaluate on d_def_test (defaults to d_def).

    Returns (params_by_arm, PipelineReport); params_by_arm holds the final
    model of each arm.
    """
    category = category or d_suf.primary_category
    tagger = train_tagger(d_suf, category, config)
    tagged, agreement = self_label(tagger, d_def, category)
    test = d_def_test if d_def_test is not None else tagged

    params_by_arm = {}
    reports = {}
    for arm in arms:
        cfg = training.arm_config(arm, config)
        params, _ = training.train_two_stage(tagged, cfg)
        params_by_arm[arm] = params
        preds, _ = inference.predict_batch(params, test.X(), corrected=cfg.enable_dq)
        reports[arm] = metrics.evaluate_predictions(preds, test.c_labels(), threshold, include_roc=False)

    report = PipelineReport(
        tagger_accuracy=tagger_accuracy(tagger, d_suf),
        agreement_rate=agreement,
        eval_reports=reports,
    )
    return params_by_arm, report
