"""SplineNet classifier: configuration, parameters, loss, training and evaluation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Literal, Sequence

import numpy as np
from scipy.stats import rankdata

from . import engine
from . import polynomial as P
from .errors import DegreeCapError, DimensionMismatch, DivergenceError, EmptyBatch, LabelOutOfRange, SingleClassAUC
from .layers import AffineParams, AreaNormState, KernelBank, affine_forward, area_norm, integration_layer, kernel_apply
from .spline import FIT_KINDS, Spline, TimeSeries, fit, integrate_spline, segment_query, stack_channels

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "splinenet-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class SplineNetConfig:
    in_channels: int
    n_classes: int
    fit_kind: Literal["constant", "linear", "natural_cubic"] = "natural_cubic"
    hidden: int = 8
    blocks: int = 1
    integration: bool = True
    kernels: int = 8
    grid: int = 9
    kernel_order: int = 1
    kernel_mode: Literal["multiply", "distance"] = "distance"
    distance_integral: bool = True
    area_norm: bool = True
    segments: int = 8
    learnable_offsets: bool = False
    aggregator: Literal["last", "mean", "gru"] = "gru"
    gru_hidden: int = 16
    eps: float = 1e-5
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        for name in ("in_channels", "n_classes", "hidden", "blocks", "kernels", "segments", "gru_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.grid < 2:
            raise ValueError("kernel grid needs at least two knots")
        if self.fit_kind not in FIT_KINDS:
            raise ValueError(f"unknown fit kind {self.fit_kind!r}")
        if self.kernel_mode not in ("multiply", "distance"):
            raise ValueError(f"unknown kernel mode {self.kernel_mode!r}")
        if self.aggregator not in ("last", "mean", "gru"):
            raise ValueError(f"unknown aggregator {self.aggregator!r}")
        self.degrees()

    @property
    def input_order(self) -> int:
        return {"constant": 0, "linear": 1, "natural_cubic": 3}[self.fit_kind]

    def block_out_channels(self) -> int:
        return self.kernels if self.kernel_mode == "distance" else self.kernels * self.hidden

    def degrees(self) -> list[int]:
        """Output degree of every block; raises DegreeCapError past the cap."""
        deg, out = self.input_order, []
        for _ in range(self.blocks):
            deg += int(self.integration)
            if self.kernel_mode == "distance":
                deg = 2 * max(deg, self.kernel_order) + int(self.distance_integral)
            else:
                deg += self.kernel_order
            if deg > P.MAX_DEGREE:
                raise DegreeCapError(f"block output degree {deg} exceeds {P.MAX_DEGREE}")
            out.append(deg)
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SplineNetConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ModelParams:
    """Named trainable tensors plus non-trainable buffers (running area statistics)."""

    tensors: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def merged(self) -> dict[str, np.ndarray]:
        return {**self.tensors, **self.buffers}

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.tensors.items()}, {k: v.copy() for k, v in self.buffers.items()})

    @property
    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))


def init_params(cfg: SplineNetConfig, seed: int | None = None) -> ModelParams:
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    t: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    c_in = cfg.in_channels
    for j in range(cfg.blocks):
        bound = 1.0 / math.sqrt(c_in)
        t[f"block{j}.W"] = rng.uniform(-bound, bound, size=(cfg.hidden, c_in))
        t[f"block{j}.b"] = np.zeros(cfg.hidden)
        t[f"block{j}.kernels"] = KernelBank.init(rng, cfg.kernels, cfg.grid, cfg.hidden, cfg.kernel_order, cfg.kernel_mode).coeffs
        c_in = cfg.block_out_channels()
        if cfg.area_norm:
            buffers[f"block{j}.running_area"] = AreaNormState.init(c_in).running_mean_area
    t["offset_logits"] = np.zeros(cfg.segments)
    feat = c_in
    if cfg.aggregator == "gru":
        H = cfg.gru_hidden
        t["gru.W_ih"] = np.concatenate([_orthogonal(rng, H, c_in) for _ in range(3)])
        t["gru.W_hh"] = np.concatenate([_orthogonal(rng, H, H) for _ in range(3)])
        t["gru.b_ih"] = np.zeros(3 * H)
        t["gru.b_hh"] = np.zeros(3 * H)
        feat = H
    t["head.W"] = np.zeros((cfg.n_classes, feat))
    t["head.b"] = np.zeros(cfg.n_classes)
    return ModelParams(t, buffers)


def _orthogonal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    n = max(rows, cols)
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    q = q * np.sign(np.diag(r))
    return q[:rows, :cols]


# --- forward / loss ------------------------------------------------------------


def prepare(cfg: SplineNetConfig, series: Sequence[TimeSeries]) -> list[engine.Prepared]:
    return [engine.prepare(ts, cfg.fit_kind, cfg.grid, cfg.kernel_order) for ts in series]


def _as_prepared(cfg, items) -> list[engine.Prepared]:
    return [x if isinstance(x, engine.Prepared) else engine.prepare(x, cfg.fit_kind, cfg.grid, cfg.kernel_order) for x in items]


def forward(params: ModelParams, cfg: SplineNetConfig, ts: TimeSeries | engine.Prepared) -> tuple[np.ndarray, engine.BatchResult]:
    """Class probabilities for one series (inference mode) and the recorded pass."""
    if isinstance(ts, TimeSeries) and ts.d != cfg.in_channels:
        raise DimensionMismatch(f"series has {ts.d} channels, model expects {cfg.in_channels}")
    res = engine.run(params.merged(), cfg, engine.chunked(_as_prepared(cfg, [ts]), cfg.grid))
    return res.probs[0], res


def predict_proba(params: ModelParams, cfg: SplineNetConfig, items, threads: int = 1, batch_size: int = 64) -> np.ndarray:
    items = _as_prepared(cfg, items)
    out = []
    for i in range(0, len(items), batch_size):
        res = engine.run(params.merged(), cfg, engine.chunked(items[i : i + batch_size], cfg.grid), threads=threads)
        out.append(res.probs)
    return np.concatenate(out, axis=0)


def loss_and_grad(params: ModelParams, cfg: SplineNetConfig, batch, threads: int = 1, dropout_mask=None) -> tuple[float, dict, engine.BatchResult]:
    """Mean cross-entropy over ``batch`` of (series, label) and its gradient.

    Area normalization runs in training mode with statistics shared over the batch.
    """
    if len(batch) == 0:
        raise EmptyBatch("loss_and_grad needs a non-empty batch")
    items, labels = zip(*batch)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= cfg.n_classes:
        raise LabelOutOfRange(f"labels must lie in [0, {cfg.n_classes})")
    chunks = engine.chunked(_as_prepared(cfg, items), cfg.grid)
    res = engine.run(params.merged(), cfg, chunks, labels, training=True, need_grad=True, threads=threads, dropout_mask=dropout_mask)
    return res.loss, res.grads, res


def reference_forward(params: ModelParams, cfg: SplineNetConfig, ts: TimeSeries) -> np.ndarray:
    """Same network built from Spline objects and the layer functions (slow, for checking)."""
    t = params.tensors
    s = fit(ts, cfg.fit_kind)
    for j in range(cfg.blocks):
        s = affine_forward(s, AffineParams(t[f"block{j}.W"], t[f"block{j}.b"]))
        if cfg.integration:
            s = integration_layer(s)
        out = kernel_apply(s, KernelBank(t[f"block{j}.kernels"], cfg.kernel_mode))
        if cfg.kernel_mode == "multiply":
            out = stack_channels(out)
        elif cfg.distance_integral:
            out = integrate_spline(out)
        s = out
        if cfg.area_norm:
            state = AreaNormState(params.buffers[f"block{j}.running_area"], cfg.momentum, cfg.eps)
            (s,), _ = area_norm([s], state, training=False)
    offsets, _ = engine.offsets_fw(t["offset_logits"] if cfg.learnable_offsets else None, cfg.segments)
    F = np.maximum(segment_query(s, cfg.segments, offsets), 0.0)[None]
    if cfg.aggregator == "gru":
        h, _ = engine.gru_fw(F, t["gru.W_ih"], t["gru.W_hh"], t["gru.b_ih"], t["gru.b_hh"])
    elif cfg.aggregator == "mean":
        h = F.mean(axis=1)
    else:
        h = F[:, -1]
    return engine.softmax(h @ t["head.W"].T + t["head.b"])[0]


# --- training ------------------------------------------------------------------


@dataclass
class TrainSettings:
    lr: float = 1e-2
    epochs: int = 100
    batch_size: int = 32
    patience: int = 20
    metric: Literal["accuracy", "auroc"] = "accuracy"
    weight_decay: float = 0.0
    dropout: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    threads: int = 1


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _first_nonfinite(tensors: dict[str, np.ndarray]) -> str | None:
    for k, v in tensors.items():
        if not np.all(np.isfinite(v)):
            return k
    return None


def train(
    params: ModelParams,
    cfg: SplineNetConfig,
    train_set: Sequence[tuple],
    val_set: Sequence[tuple],
    settings: TrainSettings = TrainSettings(),
    progress=None,
) -> tuple[ModelParams, list[dict]]:
    """Adam with seeded minibatch shuffling and early stopping on the validation metric.

    Returns the best-validation parameters and one history record per epoch.
    """
    params = params.copy()
    tr_items = _as_prepared(cfg, [x for x, _ in train_set])
    tr_labels = np.asarray([y for _, y in train_set], dtype=np.int64)
    va_items = _as_prepared(cfg, [x for x, _ in val_set])
    va_labels = np.asarray([y for _, y in val_set], dtype=np.int64)
    rng = np.random.default_rng(settings.seed)
    opt = Adam(params.tensors, settings.lr, settings.beta1, settings.beta2, settings.adam_eps)
    history: list[dict] = []
    best = (-np.inf, params.copy())
    stale = 0
    for epoch in range(settings.epochs):
        order = rng.permutation(len(tr_items))
        losses = []
        for i in range(0, len(order), settings.batch_size):
            idx = order[i : i + settings.batch_size]
            mask = None
            if settings.dropout > 0:
                feat = params.tensors["head.W"].shape[1]
                mask = (rng.random((len(idx), feat)) >= settings.dropout) / (1.0 - settings.dropout)
            batch = [(tr_items[k], tr_labels[k]) for k in idx]
            loss, grads, res = loss_and_grad(params, cfg, batch, threads=settings.threads, dropout_mask=mask)
            if not math.isfinite(loss):
                bad = _first_nonfinite(params.tensors) or _first_nonfinite(grads) or "loss"
                raise DivergenceError(f"non-finite loss at epoch {epoch}; first non-finite tensor: {bad}")
            if settings.weight_decay:
                for k in grads:
                    grads[k] = grads[k] + settings.weight_decay * params.tensors[k]
            opt.step(params.tensors, grads)
            bad = _first_nonfinite(params.tensors)
            if bad is not None:
                raise DivergenceError(f"non-finite parameter after update at epoch {epoch}: {bad}")
            for j, areas in enumerate(res.batch_areas):
                key = f"block{j}.running_area"
                params.buffers[key] = cfg.momentum * params.buffers[key] + (1.0 - cfg.momentum) * np.abs(areas).mean(axis=0)
            losses.append(loss * len(idx))
        train_loss = float(np.sum(losses) / len(tr_items))
        probs = predict_proba(params, cfg, va_items, threads=settings.threads)
        val_metric = score(probs, va_labels, settings.metric)
        val_loss = float(-np.mean(np.log(np.maximum(probs[np.arange(len(va_labels)), va_labels], 1e-300))))
        rec = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, f"val_{settings.metric}": val_metric}
        history.append(rec)
        if progress is not None:
            progress(rec)
        log.debug("epoch %d %s", epoch, rec)
        if val_metric > best[0]:
            best = (val_metric, params.copy())
            stale = 0
        else:
            stale += 1
            if stale >= settings.patience:
                break
    return best[1], history


# --- evaluation ----------------------------------------------------------------


def auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney statistic; tied scores count one half."""
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClassAUC("AUROC needs both classes present")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def score(probs: np.ndarray, labels: np.ndarray, metric: str = "accuracy") -> float:
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise EmptyBatch("cannot score an empty set")
    if metric == "accuracy":
        return float(np.mean(np.argmax(probs, axis=1) == labels))
    if metric == "auroc":
        if probs.shape[1] != 2 or labels.max() > 1:
            raise ValueError("auroc requires binary labels")
        return auroc(probs[:, 1], labels)
    raise ValueError(f"unknown metric {metric!r}")


def evaluate(params: ModelParams, cfg: SplineNetConfig, test_set: Sequence[tuple], metric: str = "accuracy", threads: int = 1) -> float:
    if len(test_set) == 0:
        raise EmptyBatch("empty test set")
    probs = predict_proba(params, cfg, [x for x, _ in test_set], threads=threads)
    return score(probs, np.asarray([y for _, y in test_set]), metric)


# --- checkpoints ---------------------------------------------------------------


def _tensor_record(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": a.reshape(-1).tolist()}


def checkpoint_bytes(params: ModelParams, cfg: SplineNetConfig, extra: dict | None = None) -> bytes:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "tensors": {k: _tensor_record(v) for k, v in params.tensors.items()},
        "buffers": {k: _tensor_record(v) for k, v in params.buffers.items()},
    }
    if extra:
        doc["extra"] = extra
    return (json.dumps(doc, sort_keys=True, indent=1) + "\n").encode("utf-8")


def save_checkpoint(path, params: ModelParams, cfg: SplineNetConfig, extra: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(params, cfg, extra))


def load_checkpoint(path) -> tuple[ModelParams, SplineNetConfig, dict]:
    with open(path, "rb") as fh:
        doc = json.loads(fh.read().decode("utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a splinenet checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")

    def unpack(rec):
        return np.asarray(rec["data"], dtype=np.float64).reshape(rec["shape"])

    params = ModelParams({k: unpack(v) for k, v in doc["tensors"].items()}, {k: unpack(v) for k, v in doc["buffers"].items()})
    return params, SplineNetConfig.from_dict(doc["config"]), doc.get("extra", {})


def spline_of(params: ModelParams, cfg: SplineNetConfig, block: int, kernel: int) -> Spline:
    """Learned kernel as a Spline on the unit span (for plotting)."""
    return KernelBank(params.tensors[f"block{block}.kernels"], cfg.kernel_mode).kernel(kernel)
