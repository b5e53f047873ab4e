"""Prediction with and without data-quality confidence correction, plus
the line-delimited prediction dump consumed by the metrics module."""

from dataclasses import dataclass

import numpy as np

from . import model
from .losses import l2_normalize_rows


@dataclass
class Prediction:
    probs: np.ndarray  # (2,), sums to 1
    predicted_class: int
    quality: float  # sigma_D^2
    corrected: bool

    @property
    def p_live(self):
        return float(self.probs[1])


def _softmax2(logits):
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def standard_confidence(mu_row, omega_c, sigma_d_sq=1.0):
    """Softmax of the plain inner-product logits."""
    probs = _softmax2(omega_c @ mu_row)
    return Prediction(probs, int(np.argmax(probs)), float(sigma_d_sq), corrected=False)


def corrected_confidence(mu_row, omega_c, sigma_d_sq):
    """Softmax over classes of -||omega_c - mu||^2 / (2 sigma^2).

    Inputs are expected to be the l2-normalized mu and omega rows from
    the second training stage. Larger sigma^2 damps the confidence gap
    but never changes the argmax.
    """
    if sigma_d_sq <= 0:
        raise ValueError("sigma_d_sq must be strictly positive")
    d2 = ((omega_c - mu_row) ** 2).sum(axis=1)
    probs = _softmax2(-d2 / (2.0 * sigma_d_sq))
    return Prediction(probs, int(np.argmax(probs)), float(sigma_d_sq), corrected=True)


def predict_batch(params, X, corrected):
    """Batch prediction; returns (list of Prediction, EmbeddingBatch export).

    When corrected, mu and omega_c are row-normalized (the stage-2
    geometry) and the distance softmax is used.
    """
    mu = model.embed(params, X)
    s2 = model.dq_variance(params, mu)
    if corrected:
        mu_eval = l2_normalize_rows(mu)
        omega = l2_normalize_rows(params.omega_c)
        preds = [corrected_confidence(mu_eval[i], omega, float(s2[i])) for i in range(len(mu))]
    else:
        preds = [standard_confidence(mu[i], params.omega_c, float(s2[i])) for i in range(len(mu))]
    export = model.EmbeddingBatch(mu=mu, sigma_d_sq=s2)
    return preds, export


# ---------------------------------------------------------------------------
# prediction dump: `id,p_live,predicted,quality,corrected`
# ---------------------------------------------------------------------------

def save_predictions(preds, path):
    lines = ["id,p_live,predicted,quality,corrected"]
    for i, p in enumerate(preds):
        lines.append(
            f"{i},{format(p.p_live, '.17g')},{p.predicted_class},"
            f"{format(p.quality, '.17g')},{int(p.corrected)}"
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_predictions(path):
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or lines[0] != "id,p_live,predicted,quality,corrected":
        raise ValueError(f"{path}: not a prediction dump")
    preds = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 5:
            raise ValueError(f"{path}: row {parts[0]}: expected 5 fields")
        p_live = float(parts[1])
        predicted = int(parts[2])
        probs = np.array([1.0 - p_live, p_live])
        preds.append(Prediction(probs, predicted, float(parts[3]), bool(int(parts[4]))))
    return preds
