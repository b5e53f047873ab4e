"""Small differentiable model: tanh MLP backbone producing embeddings mu,
a per-dimension log-variance head for label-quality learning, a scalar
log-variance head for data-quality learning, and bias-free linear
classifiers for the live/spoof label and each semantic category.

Gradients are hand-written; the test suite checks every path against
central finite differences.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ModelParams:
    layers: list  # [(W: (out,in), b: (out,)), ...], tanh between, last linear
    w_lq: np.ndarray  # (B, B) log-variance head, sigma_L = exp(0.5 * affine)
    b_lq: np.ndarray  # (B,)
    w_dq: np.ndarray  # (B,) scalar log-variance head, sigma_D^2 = exp(affine)
    b_dq: np.ndarray  # ()
    omega_c: np.ndarray  # (2, B) live/spoof classifier rows
    omega_s: dict  # category -> (A_k, B)

    @property
    def D(self):
        return self.layers[0][0].shape[1]

    @property
    def B(self):
        return self.layers[-1][0].shape[0]

    def copy(self):
        return ModelParams(
            layers=[(W.copy(), b.copy()) for W, b in self.layers],
            w_lq=self.w_lq.copy(),
            b_lq=self.b_lq.copy(),
            w_dq=self.w_dq.copy(),
            b_dq=self.b_dq.copy(),
            omega_c=self.omega_c.copy(),
            omega_s={k: v.copy() for k, v in self.omega_s.items()},
        )

    def named_tensors(self):
        """Stable (name, array) listing of every parameter tensor."""
        out = []
        for i, (W, b) in enumerate(self.layers):
            out.append((f"layers.{i}.W", W))
            out.append((f"layers.{i}.b", b))
        out += [("w_lq", self.w_lq), ("b_lq", self.b_lq), ("w_dq", self.w_dq), ("b_dq", self.b_dq)]
        out.append(("omega_c", self.omega_c))
        for name in sorted(self.omega_s):
            out.append((f"omega_s.{name}", self.omega_s[name]))
        return out

    def check_finite(self):
        for name, t in self.named_tensors():
            if not np.all(np.isfinite(t)):
                raise ValueError(f"non-finite values in parameter {name}")


def init_params(D, categories, B=32, hidden=(64, 64), seed=0):
    """Gaussian init with std 1/sqrt(fan_in), zero biases; both variance
    heads start at zero so sigma == 1 initially."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1417]))
    sizes = [D, *hidden, B]
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in)
        layers.append((W, np.zeros(fan_out)))
    omega_c = rng.standard_normal((2, B)) / np.sqrt(B)
    omega_s = {name: rng.standard_normal((card, B)) / np.sqrt(B) for name, card in categories.items()}
    return ModelParams(
        layers=layers,
        w_lq=np.zeros((B, B)),
        b_lq=np.zeros(B),
        w_dq=np.zeros(B),
        b_dq=np.zeros(()),
        omega_c=omega_c,
        omega_s=omega_s,
    )


def zeros_like_params(params):
    return ModelParams(
        layers=[(np.zeros_like(W), np.zeros_like(b)) for W, b in params.layers],
        w_lq=np.zeros_like(params.w_lq),
        b_lq=np.zeros_like(params.b_lq),
        w_dq=np.zeros_like(params.w_dq),
        b_dq=np.zeros_like(params.b_dq),
        omega_c=np.zeros_like(params.omega_c),
        omega_s={k: np.zeros_like(v) for k, v in params.omega_s.items()},
    )


def flatten_params(params):
    return np.concatenate([t.ravel() for _, t in params.named_tensors()])


def unflatten_params(vec, template):
    out = template.copy()
    offset = 0
    for _, t in out.named_tensors():
        n = t.size
        t[...] = np.asarray(vec[offset : offset + n]).reshape(t.shape)
        offset += n
    if offset != vec.size:
        raise ValueError(f"flat vector size {vec.size} != parameter count {offset}")
    return out


@dataclass
class EmbeddingBatch:
    mu: np.ndarray
    sigma_l: np.ndarray | None = None
    sigma_d_sq: np.ndarray | None = None


# ---------------------------------------------------------------------------
# backbone
# ---------------------------------------------------------------------------

def embed_with_cache(params, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.D:
        raise ValueError(f"X must be (N, {params.D}), got {X.shape}")
    h = X
    activations = [h]
    last = len(params.layers) - 1
    for i, (W, b) in enumerate(params.layers):
        a = h @ W.T + b
        h = a if i == last else np.tanh(a)
        activations.append(h)
    return h, activations


def embed(params, X):
    mu, _ = embed_with_cache(params, X)
    return mu


def embed_backward(params, activations, dmu):
    """Backprop dL/dmu through the MLP. Returns (layer_grads, dX)."""
    grads = [None] * len(params.layers)
    delta = dmu
    last = len(params.layers) - 1
    for i in range(last, -1, -1):
        W, _ = params.layers[i]
        h_in = activations[i]
        if i != last:
            h_out = activations[i + 1]
            delta = delta * (1.0 - h_out * h_out)
        grads[i] = (delta.T @ h_in, delta.sum(axis=0))
        delta = delta @ W
    return grads, delta


# ---------------------------------------------------------------------------
# variance heads
# ---------------------------------------------------------------------------

def lq_variance(params, mu):
    """Per-dimension std of the label-quality Gaussian: exp(0.5 * affine(mu))."""
    return np.exp(0.5 * (mu @ params.w_lq.T + params.b_lq))


def lq_variance_backward(params, mu, sigma_l, dsigma):
    """Returns (dw_lq, db_lq, dmu)."""
    da = 0.5 * sigma_l * dsigma
    return da.T @ mu, da.sum(axis=0), da @ params.w_lq


def dq_variance(params, mu):
    """Per-sample data-quality variance: exp(affine(mu)), shape (N,)."""
    return np.exp(mu @ params.w_dq + params.b_dq)


def dq_variance_backward(params, mu, sigma_d_sq, ds2):
    """Returns (dw_dq, db_dq, dmu)."""
    da = sigma_d_sq * ds2
    return mu.T @ da, np.asarray(da.sum()), np.outer(da, params.w_dq)


# ---------------------------------------------------------------------------
# classifiers (bias-free inner products)
# ---------------------------------------------------------------------------

def semantic_logits(params, category, z):
    omega = params.omega_s[category]
    if z.shape[1] != omega.shape[1]:
        raise ValueError(f"z dim {z.shape[1]} != embedding dim {omega.shape[1]}")
    return z @ omega.T


def live_spoof_logits(params, mu):
    if mu.shape[1] != params.omega_c.shape[1]:
        raise ValueError(f"mu dim {mu.shape[1]} != embedding dim {params.omega_c.shape[1]}")
    return mu @ params.omega_c.T
