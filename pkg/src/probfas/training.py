"""Two-stage training pipeline.

Stage 1 trains the backbone, the label-quality head and both classifier
matrices with Adam on the multi-task objective. Stage 2 freezes the
backbone and label-quality head and finetunes only omega_c and the
data-quality head with SGD on the normalized Gaussian NLL.

Determinism: per-epoch shuffling and reparameterization noise use
independent streams derived from (seed, stage, epoch), so a run can be
resumed from a checkpoint and reproduce the uninterrupted result.
"""

import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import kernels, losses, model

DIVERGENCE_CAP = 1e6


class ConfigError(Exception):
    """Invalid training configuration or config file."""


class CheckpointError(Exception):
    """Malformed or mismatched checkpoint."""


class TrainingDiverged(Exception):
    def __init__(self, stage, epoch, components):
        self.stage = stage
        self.epoch = epoch
        self.components = components
        super().__init__(f"stage {stage} diverged at epoch {epoch}: {components}")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class StageConfig:
    optimizer: str
    lr: float
    epochs: int
    batch_size: int

    def validate(self, name):
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"{name}.optimizer must be adam or sgd")
        if self.lr <= 0:
            raise ConfigError(f"{name}.lr must be > 0")
        if self.epochs < 0:
            raise ConfigError(f"{name}.epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError(f"{name}.batch_size must be >= 1")


@dataclass
class TrainConfig:
    stage1: StageConfig = field(default_factory=lambda: StageConfig("adam", 1e-4, 50, 64))
    stage2: StageConfig = field(default_factory=lambda: StageConfig("sgd", 1e-1, 50, 64))
    lambda_s: float = 1.0
    seed: int = 0
    enable_lq: bool = True
    enable_dq: bool = True
    hidden: tuple = (64, 64)
    embedding_dim: int = 32

    def validate(self):
        self.stage1.validate("stage1")
        self.stage2.validate("stage2")
        if self.embedding_dim < 1:
            raise ConfigError("embedding_dim must be >= 1")
        return self

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @staticmethod
    def from_dict(d):
        d = dict(d)
        cfg = TrainConfig(
            stage1=StageConfig(**d.pop("stage1")),
            stage2=StageConfig(**d.pop("stage2")),
            **{**d, "hidden": tuple(d.pop("hidden", (64, 64)))},
        )
        return cfg.validate()


_CONFIG_KEYS = {
    "stage1.optimizer": str,
    "stage1.lr": float,
    "stage1.epochs": int,
    "stage1.batch_size": int,
    "stage2.optimizer": str,
    "stage2.lr": float,
    "stage2.epochs": int,
    "stage2.batch_size": int,
    "lambda_s": float,
    "seed": int,
    "enable_lq": bool,
    "enable_dq": bool,
    "hidden": tuple,
    "embedding_dim": int,
}


def _parse_bool(v):
    low = v.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def load_config(path):
    """Flat `key = value` config file; unknown keys are rejected."""
    cfg = TrainConfig()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            typ = _CONFIG_KEYS[key]
            try:
                if typ is bool:
                    parsed = _parse_bool(val)
                elif typ is tuple:
                    parsed = tuple(int(tok) for tok in val.split(",") if tok.strip())
                else:
                    parsed = typ(val)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {val!r}") from exc
            if "." in key:
                stage_name, attr = key.split(".")
                setattr(getattr(cfg, stage_name), attr, parsed)
            else:
                setattr(cfg, key, parsed)
    return cfg.validate()


def save_config(cfg, path):
    lines = []
    for key in _CONFIG_KEYS:
        if "." in key:
            stage_name, attr = key.split(".")
            val = getattr(getattr(cfg, stage_name), attr)
        else:
            val = getattr(cfg, key)
        if isinstance(val, tuple):
            val = ",".join(str(v) for v in val)
        lines.append(f"{key} = {val}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# optimizer state (operates on the flattened parameter vector)
# ---------------------------------------------------------------------------

@dataclass
class OptState:
    kind: str
    lr: float
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0

    @staticmethod
    def create(stage_cfg, n_params):
        if stage_cfg.optimizer == "adam":
            return OptState("adam", stage_cfg.lr, np.zeros(n_params), np.zeros(n_params), 0)
        return OptState("sgd", stage_cfg.lr)

    def step(self, flat_params, flat_grads):
        if self.kind == "adam":
            self.t += 1
            kernels.adam_step(flat_params, flat_grads, self.m, self.v, self.lr, 0.9, 0.999, 1e-8, self.t)
        else:
            flat_params -= self.lr * flat_grads


def _epoch_rngs(seed, stage, epoch):
    shuffle = np.random.default_rng(np.random.SeedSequence([int(seed), stage, epoch, 0]))
    eps = np.random.default_rng(np.random.SeedSequence([int(seed), stage, epoch, 1]))
    return shuffle, eps


def _check_finite(stage, epoch, total, components):
    if not np.isfinite(total) or abs(total) > DIVERGENCE_CAP:
        raise TrainingDiverged(stage, epoch, components)


# ---------------------------------------------------------------------------
# stage 1
# ---------------------------------------------------------------------------

def train_stage1_lq(ds, config, params=None, start_epoch=0, opt_state=None):
    """Multi-task stage-1 training. With enable_lq=False the semantic loss
    is evaluated at mu (deterministic arm) and the variance head stays at
    its initialization. Returns (params, train_log)."""
    config.validate()
    if config.lambda_s != 0.0 and not ds.categories:
        raise ConfigError("semantic supervision requires at least one category")
    if params is None:
        params = model.init_params(
            ds.feature_dim, ds.categories, B=config.embedding_dim,
            hidden=config.hidden, seed=config.seed,
        )
    else:
        params = params.copy()

    X = ds.X()
    c = ds.c_labels()
    s_by_cat = {cat: ds.s_labels(cat) for cat in ds.categories}
    n = len(ds)
    bs = config.stage1.batch_size
    flat = model.flatten_params(params)
    if opt_state is None:
        opt_state = OptState.create(config.stage1, flat.size)
    log = []

    for epoch in range(start_epoch, config.stage1.epochs):
        shuffle_rng, eps_rng = _epoch_rngs(config.seed, 1, epoch)
        order = shuffle_rng.permutation(n)
        epoch_loss = []
        epoch_loss_c = []
        for lo in range(0, n, bs):
            idx = order[lo : lo + bs]
            eps = eps_rng.standard_normal((idx.size, params.B))
            params = model.unflatten_params(flat, params)
            loss, grads, aux = losses.stage1_objective(
                params, X[idx], c[idx], {k: v[idx] for k, v in s_by_cat.items()},
                eps, lambda_s=config.lambda_s, enable_lq=config.enable_lq,
            )
            _check_finite(1, epoch, loss.total, {"total": loss.total, "loss_c": aux["loss_c"], "loss_s": aux["loss_s"]})
            opt_state.step(flat, model.flatten_params(grads))
            epoch_loss.append(loss.total)
            epoch_loss_c.append(aux["loss_c"])
        params = model.unflatten_params(flat, params)
        mu_full = model.embed(params, X)
        acc = float(np.mean(np.argmax(mu_full @ params.omega_c.T, axis=1) == c))
        sigma_l = model.lq_variance(params, mu_full)
        row = {
            "stage": 1,
            "epoch": epoch,
            "loss_total": float(np.mean(epoch_loss)),
            "loss_c": float(np.mean(epoch_loss_c)),
            "mean_sigma_l": float(sigma_l.mean()),
            "mean_sigma_d_sq": float(model.dq_variance(params, mu_full).mean()),
            "train_acc": acc,
        }
        log.append(row)
    params = model.unflatten_params(flat, params)
    return params, log


# ---------------------------------------------------------------------------
# stage 2
# ---------------------------------------------------------------------------

def train_stage2_dq(params, ds, config, start_epoch=0, opt_state=None):
    """Finetune omega_c and the data-quality head on the normalized NLL;
    backbone and label-quality head are exact no-ops."""
    config.validate()
    params = params.copy()
    X = ds.X()
    c = ds.c_labels()
    n = len(ds)
    bs = config.stage2.batch_size
    flat = model.flatten_params(params)
    if opt_state is None:
        opt_state = OptState.create(config.stage2, flat.size)
    log = []

    for epoch in range(start_epoch, config.stage2.epochs):
        shuffle_rng, _ = _epoch_rngs(config.seed, 2, epoch)
        order = shuffle_rng.permutation(n)
        epoch_loss = []
        for lo in range(0, n, bs):
            idx = order[lo : lo + bs]
            params = model.unflatten_params(flat, params)
            loss, grads, aux = losses.stage2_objective(params, X[idx], c[idx])
            _check_finite(2, epoch, loss.total, {"total": loss.total, "mean_d2": float(aux["d2"].mean())})
            opt_state.step(flat, model.flatten_params(grads))
            epoch_loss.append(loss.total)
        params = model.unflatten_params(flat, params)
        mu_full = model.embed(params, X)
        s2_full = model.dq_variance(params, mu_full)
        log.append({
            "stage": 2,
            "epoch": epoch,
            "loss_total": float(np.mean(epoch_loss)),
            "mean_sigma_d_sq": float(s2_full.mean()),
        })
    params = model.unflatten_params(flat, params)
    return params, log


def train_two_stage(ds, config):
    """Stage 1 followed (when enable_dq) by stage 2."""
    params, log1 = train_stage1_lq(ds, config)
    if config.enable_dq:
        params, log2 = train_stage2_dq(params, ds, config)
        return params, log1 + log2
    return params, log1


ARMS = ("baseline", "s", "s-lq", "s-lq-dq")


def arm_config(arm, base):
    """Map an ablation arm name onto the TrainConfig enable bits."""
    if arm not in ARMS:
        raise ConfigError(f"unknown arm {arm!r}; expected one of {ARMS}")
    cfg = TrainConfig.from_dict(base.to_dict())
    if arm == "baseline":
        cfg.lambda_s = 0.0
        cfg.enable_lq = False
        cfg.enable_dq = False
    else:
        cfg.lambda_s = base.lambda_s if base.lambda_s > 0 else 1.0
        cfg.enable_lq = arm in ("s-lq", "s-lq-dq")
        cfg.enable_dq = arm == "s-lq-dq"
    return cfg


# ---------------------------------------------------------------------------
# train log I/O (line-delimited JSON)
# ---------------------------------------------------------------------------

def save_trainlog(log, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in log:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")


def load_trainlog(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(ln) for ln in fh if ln.strip()]


# ---------------------------------------------------------------------------
# checkpoint format: magic, 4-byte header length, JSON header, raw float64
# buffers in header order. Deterministic byte-for-byte.
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"PROBFAS-CKPT v1\n"


def save_checkpoint(path, params, config=None, extra_arrays=None, extra_meta=None):
    params.check_finite()
    tensors = params.named_tensors()
    extra_arrays = extra_arrays or {}
    header = {
        "version": 1,
        "tensors": [{"name": name, "shape": list(t.shape)} for name, t in tensors],
        "extra_arrays": [
            {"name": name, "shape": list(np.asarray(a).shape)} for name, a in sorted(extra_arrays.items())
        ],
        "config": config.to_dict() if config is not None else None,
        "extra_meta": extra_meta or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, t in tensors:
            fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())
        for name, a in sorted(extra_arrays.items()):
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path, expect_config=None):
    """Returns (params, config_or_None, extra_arrays, extra_meta)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise CheckpointError(f"{path}: bad magic")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        arrays = {}
        for spec in header["tensors"] + header["extra_arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise CheckpointError(f"{path}: truncated tensor {spec['name']}")
            arrays[spec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()

    layer_idx = sorted({int(n.split(".")[1]) for n in arrays if n.startswith("layers.")})
    try:
        layers = [(arrays[f"layers.{i}.W"], arrays[f"layers.{i}.b"]) for i in layer_idx]
        params = model.ModelParams(
            layers=layers,
            w_lq=arrays["w_lq"],
            b_lq=arrays["b_lq"],
            w_dq=arrays["w_dq"],
            b_dq=arrays["b_dq"],
            omega_c=arrays["omega_c"],
            omega_s={n.split(".", 1)[1]: arrays[n] for n in arrays if n.startswith("omega_s.")},
        )
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing tensor {exc}") from exc

    config = TrainConfig.from_dict(header["config"]) if header["config"] else None
    check_against = expect_config or config
    if check_against is not None and params.B != check_against.embedding_dim:
        raise CheckpointError(
            f"{path}: embedding dim {params.B} does not match config embedding_dim "
            f"{check_against.embedding_dim}"
        )
    extras = {spec["name"]: arrays[spec["name"]] for spec in header["extra_arrays"]}
    return params, config, extras, header["extra_meta"]
