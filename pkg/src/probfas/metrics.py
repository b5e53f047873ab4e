"""Anti-spoofing evaluation metrics over live-probability scores.

Convention: live (label 1) is the positive class, so FPR is the rate of
spoof samples accepted as live. A sample is accepted when its live
probability is >= threshold. All rates are percentages except TPR/FPR
values in the ROC, which are fractions in [0, 1].
"""

import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

import numpy as np


class MetricError(Exception):
    """Raised when a metric is undefined (e.g. an empty class)."""


def round_half_up(value, ndigits=2):
    """Conventional half-up rounding for reported rates (Python's built-in
    round is half-even, which disagrees with how tables are reported)."""
    q = Decimal(1).scaleb(-ndigits)
    return float(Decimal(repr(float(value))).quantize(q, rounding=ROUND_HALF_UP))


def _as_arrays(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have the same shape")
    return scores, labels


def _check_both_classes(labels):
    if not np.any(labels == 1) or not np.any(labels == 0):
        raise MetricError("both live and spoof samples are required")


def apcer(scores, labels, threshold=0.5):
    """Percent of spoof samples accepted as live (p_live >= threshold)."""
    scores, labels = _as_arrays(scores, labels)
    spoof = labels == 0
    if not np.any(spoof):
        raise MetricError("APCER undefined: no spoof samples")
    return 100.0 * int(np.sum(scores[spoof] >= threshold)) / int(spoof.sum())


def bpcer(scores, labels, threshold=0.5):
    """Percent of live samples rejected (p_live < threshold)."""
    scores, labels = _as_arrays(scores, labels)
    live = labels == 1
    if not np.any(live):
        raise MetricError("BPCER undefined: no live samples")
    return 100.0 * int(np.sum(scores[live] < threshold)) / int(live.sum())


def acer(apcer_value, bpcer_value):
    return (apcer_value + bpcer_value) / 2.0


def hter(scores, labels, threshold=0.5):
    """(FAR + FRR)/2; identical to ACER under the live-positive convention."""
    return acer(apcer(scores, labels, threshold), bpcer(scores, labels, threshold))


def roc_sweep(scores, labels):
    """(threshold, fpr, tpr) at every distinct score plus -inf/+inf sentinels.

    Acceptance rule is score >= threshold, so fpr and tpr are
    non-increasing in threshold; endpoints (0,0) and (1,1) are always
    present. Fractions, not percentages.
    """
    scores, labels = _as_arrays(scores, labels)
    _check_both_classes(labels)
    n_live = int(np.sum(labels == 1))
    n_spoof = int(np.sum(labels == 0))
    thresholds = np.concatenate(([-np.inf], np.unique(scores), [np.inf]))
    out = []
    for t in thresholds:
        accepted = scores >= t
        fpr = int(np.sum(accepted & (labels == 0))) / n_spoof
        tpr = int(np.sum(accepted & (labels == 1))) / n_live
        out.append((float(t), fpr, tpr))
    return out


def tpr_at_fpr(scores, labels, fpr_target):
    """Best attainable TPR subject to FPR <= fpr_target; ties go to the
    higher threshold. Returns (tpr, attainable_flag): the flag is False
    when there are too few spoof samples to resolve the target (fewer
    than 1/fpr_target spoof samples)."""
    if not 0.0 < fpr_target < 1.0:
        raise ValueError(f"fpr_target must be in (0,1), got {fpr_target}")
    scores, labels = _as_arrays(scores, labels)
    _check_both_classes(labels)
    n_spoof = int(np.sum(labels == 0))
    attainable = n_spoof * fpr_target >= 1.0
    best_tpr = 0.0
    best_thr = np.inf
    for t, fpr, tpr in roc_sweep(scores, labels):
        if fpr <= fpr_target and (tpr > best_tpr or (tpr == best_tpr and t > best_thr)):
            best_tpr = tpr
            best_thr = t
    return best_tpr, attainable


def auc(scores, labels):
    """Trapezoidal area under the ROC."""
    pts = sorted((fpr, tpr) for _, fpr, tpr in roc_sweep(scores, labels))
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    return float(np.trapezoid(ys, xs))


@dataclass
class EvalReport:
    apcer: float
    bpcer: float
    acer: float
    hter: float
    threshold_used: float
    n_live: int
    n_spoof: int
    tpr_at_fpr: dict = field(default_factory=dict)  # fpr target -> (tpr, attainable)
    roc: list = field(default_factory=list)

    def to_json(self):
        doc = {
            "apcer": self.apcer,
            "bpcer": self.bpcer,
            "acer": self.acer,
            "hter": self.hter,
            "threshold_used": self.threshold_used,
            "n_live": self.n_live,
            "n_spoof": self.n_spoof,
            "tpr_at_fpr": {
                format(k, ".17g"): {"tpr": v[0], "attainable": v[1]}
                for k, v in sorted(self.tpr_at_fpr.items())
            },
            "roc": [[t, f, tp] for t, f, tp in self.roc],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    def csv_row(self):
        cells = [self.apcer, self.bpcer, self.acer, self.hter, self.threshold_used]
        return ",".join(format(v, ".17g") for v in cells) + f",{self.n_live},{self.n_spoof}"

    @staticmethod
    def csv_header():
        return "apcer,bpcer,acer,hter,threshold,n_live,n_spoof"


def evaluate(scores, labels, threshold=0.5, fpr_targets=(0.01, 0.005, 0.001), include_roc=True):
    scores, labels = _as_arrays(scores, labels)
    _check_both_classes(labels)
    a = apcer(scores, labels, threshold)
    b = bpcer(scores, labels, threshold)
    return EvalReport(
        apcer=a,
        bpcer=b,
        acer=acer(a, b),
        hter=hter(scores, labels, threshold),
        threshold_used=float(threshold),
        n_live=int(np.sum(labels == 1)),
        n_spoof=int(np.sum(labels == 0)),
        tpr_at_fpr={t: tpr_at_fpr(scores, labels, t) for t in fpr_targets},
        roc=roc_sweep(scores, labels) if include_roc else [],
    )


def evaluate_predictions(preds, labels, threshold=0.5, **kw):
    """Evaluate a list of inference.Prediction against true labels."""
    scores = [p.p_live for p in preds]
    return evaluate(scores, labels, threshold, **kw)
