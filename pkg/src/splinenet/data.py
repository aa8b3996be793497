"""Datasets of irregular multivariate series: I/O, normalization, augmentation, splits."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ClassTooSmall, InvalidSeries, NonMonotoneTimes, ParseError
from .spline import TimeSeries


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    time_scale: float

    def apply(self, ts: TimeSeries) -> TimeSeries:
        values = (ts.values - self.mean) / self.std
        return TimeSeries(ts.times / self.time_scale, values, ts.mask, ts.horizon / self.time_scale)

    def invert_values(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "time_scale": self.time_scale}


@dataclass(frozen=True)
class Dataset:
    samples: list[tuple[TimeSeries, int]]
    n_classes: int
    d: int
    ids: list[str] = field(default_factory=list)
    stats: NormStats | None = None

    def __post_init__(self):
        for ts, y in self.samples:
            if ts.d != self.d:
                raise InvalidSeries(f"sample with {ts.d} channels in a {self.d}-channel dataset")
            if not 0 <= y < self.n_classes:
                raise InvalidSeries(f"label {y} outside [0, {self.n_classes})")
        if not self.ids:
            object.__setattr__(self, "ids", [str(i) for i in range(len(self.samples))])

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.asarray([y for _, y in self.samples], dtype=np.int64)

    def subset(self, idx) -> list[tuple[TimeSeries, int]]:
        return [self.samples[i] for i in idx]

    @classmethod
    def from_samples(cls, samples, n_classes=None, ids=None) -> "Dataset":
        if not samples:
            raise InvalidSeries("empty dataset")
        n_classes = n_classes or max(y for _, y in samples) + 1
        return cls(list(samples), max(int(n_classes), 2), samples[0][0].d, list(ids or []))


# --- JSONL -----------------------------------------------------------------------


def _parse_record(rec, lineno: int) -> tuple[TimeSeries, int, str | None]:
    if not isinstance(rec, dict):
        raise ParseError("record must be a JSON object", lineno)
    try:
        label = rec["label"]
        times = rec["times"]
        values = rec["values"]
    except KeyError as e:
        raise ParseError(f"missing key {e.args[0]!r}", lineno) from None
    if not isinstance(label, int) or isinstance(label, bool):
        raise ParseError("label must be an integer", lineno)
    if not isinstance(times, list) or not isinstance(values, list) or len(times) != len(values) or not times:
        raise ParseError("times and values must be non-empty lists of equal length", lineno)
    t = np.asarray(times, dtype=np.float64)
    if np.any(np.diff(t) <= 0):
        raise NonMonotoneTimes("times must be strictly increasing (duplicates are rejected)", lineno)
    rows = [row if isinstance(row, list) else [row] for row in values]
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ParseError("every values row needs the same channel count", lineno)
    v = np.array([[np.nan if x is None else x for x in r] for r in rows], dtype=np.float64)
    try:
        ts = TimeSeries.from_values(t, v, rec.get("horizon"))
    except InvalidSeries as e:
        raise ParseError(str(e), lineno) from None
    return ts, label, rec.get("id")


def load_jsonl(path) -> Dataset:
    """One JSON object per line: {"label": int, "times": [...], "values": [[x or null, ...], ...]}."""
    samples, ids = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON: {e.msg}", lineno) from None
            ts, label, sid = _parse_record(rec, lineno)
            samples.append((ts, label))
            ids.append(str(sid) if sid is not None else str(len(ids)))
    if not samples:
        raise ParseError(f"{path} holds no records")
    d = samples[0][0].d
    for i, (ts, _) in enumerate(samples):
        if ts.d != d:
            raise ParseError(f"record has {ts.d} channels, expected {d}", i + 1)
    return Dataset.from_samples(samples, ids=ids)


def series_record(ts: TimeSeries, label: int, sid: str | None = None) -> dict:
    rec = {}
    if sid is not None:
        rec["id"] = sid
    rec["label"] = int(label)
    rec["times"] = ts.times.tolist()
    rec["values"] = [[float(x) if m else None for x, m in zip(row, mrow)] for row, mrow in zip(ts.values, ts.mask)]
    rec["horizon"] = ts.horizon
    return rec


def save_jsonl(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (ts, y), sid in zip(ds.samples, ds.ids):
            fh.write(json.dumps(series_record(ts, y, sid)) + "\n")


def load_csv_long(path) -> Dataset:
    """Long format with header ``series_id,time,channel,value,label``; empty value = missing."""
    rows: dict[str, dict] = {}
    order: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"series_id", "time", "channel", "value", "label"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ParseError(f"CSV header must contain {sorted(need)}", 1)
        for lineno, row in enumerate(reader, 2):
            try:
                sid = row["series_id"]
                t = float(row["time"])
                c = int(row["channel"])
                v = float(row["value"]) if row["value"].strip() else None
                y = int(row["label"])
            except ValueError as e:
                raise ParseError(str(e), lineno) from None
            if sid not in rows:
                rows[sid] = {"label": y, "obs": defaultdict(dict)}
                order.append(sid)
            elif rows[sid]["label"] != y:
                raise ParseError(f"series {sid} has conflicting labels", lineno)
            if c in rows[sid]["obs"][t]:
                raise ParseError(f"duplicate entry for series {sid}, time {t}, channel {c}", lineno)
            rows[sid]["obs"][t][c] = v
    if not rows:
        raise ParseError(f"{path} holds no rows")
    d = 1 + max(c for r in rows.values() for obs in r["obs"].values() for c in obs)
    samples = []
    for sid in order:
        obs = rows[sid]["obs"]
        times = sorted(obs)
        values = np.full((len(times), d), np.nan)
        for i, t in enumerate(times):
            for c, v in obs[t].items():
                if v is not None:
                    values[i, c] = v
        samples.append((TimeSeries.from_values(times, values), rows[sid]["label"]))
    return Dataset.from_samples(samples, ids=order)


def csv_to_jsonl(src, dst) -> Dataset:
    ds = load_csv_long(src)
    save_jsonl(ds, dst)
    return ds


# --- transforms --------------------------------------------------------------------


def fit_stats(ds: Dataset, train_idx) -> NormStats:
    train_idx = list(train_idx)
    if not train_idx:
        raise ValueError("normalization needs a non-empty training split")
    vals = np.concatenate([ds.samples[i][0].values for i in train_idx], axis=0)
    mask = np.concatenate([ds.samples[i][0].mask for i in train_idx], axis=0)
    mean = np.zeros(ds.d)
    std = np.ones(ds.d)
    for c in range(ds.d):
        obs = vals[mask[:, c], c]
        if obs.size:
            mean[c] = obs.mean()
            s = obs.std()
            std[c] = s if s >= 1e-8 else 1.0
    time_scale = max(ds.samples[i][0].horizon for i in train_idx)
    return NormStats(mean, std, float(time_scale))


def normalize(ds: Dataset, train_idx) -> Dataset:
    """Standardize channels and rescale time with statistics of the training split only."""
    stats = fit_stats(ds, train_idx)
    samples = [(stats.apply(ts), y) for ts, y in ds.samples]
    return replace(ds, samples=samples, stats=stats)


def drop_observations(ds: Dataset, rate: float, seed: int) -> Dataset:
    """Hide each observed (time, channel) entry with probability ``rate``.

    A sample that would lose every observation is redrawn.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError("rate must lie in [0, 1)")
    if rate == 0.0:
        return ds
    rng = np.random.default_rng(seed)
    out = []
    for ts, y in ds.samples:
        while True:
            keep = ts.mask & (rng.random(ts.mask.shape) >= rate)
            if keep.any():
                break
        out.append((TimeSeries(ts.times, ts.values, keep, ts.horizon), y))
    return replace(ds, samples=out)


def _sawtooth(x: np.ndarray) -> np.ndarray:
    return 2.0 * (x - np.floor(x)) - 1.0


SHAPE_CLASSES = ("sine", "sawtooth", "bump")
BUMP_WIDTH = 0.1


def shape_curve(kind: int, t: np.ndarray, freq: float, phase: float, center: float) -> np.ndarray:
    if kind == 0:
        return np.sin(2.0 * np.pi * freq * t + phase)
    if kind == 1:
        return _sawtooth(freq * t + phase / (2.0 * np.pi))
    return np.exp(-0.5 * ((t - center) / BUMP_WIDTH) ** 2)


def _random_times(rng: np.random.Generator, n: int) -> np.ndarray:
    while True:
        t = np.sort(rng.uniform(0.0, 1.0, n))
        if np.all(np.diff(t) > 1e-6):
            return t


def synth_shapes(
    n_per_class: int,
    d: int = 1,
    length_range: tuple[int, int] = (40, 80),
    noise: float = 0.1,
    seed: int = 0,
    missing: float = 0.3,
) -> Dataset:
    """Three shape classes on the unit span: sine, sawtooth and a Gaussian bump.

    Sampling times are drawn the same way for every class, so only the shape
    carries the label. Frequencies lie in [1, 3]; phases are uniform.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    samples = []
    for label in range(len(SHAPE_CLASSES)):
        for _ in range(n_per_class):
            n = int(rng.integers(length_range[0], length_range[1] + 1))
            t = _random_times(rng, n)
            cols = []
            for _ in range(d):
                freq = rng.uniform(1.0, 3.0)
                phase = rng.uniform(0.0, 2.0 * np.pi)
                center = rng.uniform(0.2, 0.8)
                cols.append(shape_curve(label, t, freq, phase, center) + noise * rng.normal(size=n))
            samples.append((TimeSeries.from_values(t, np.stack(cols, axis=1), horizon=1.0), label))
    ds = Dataset(samples, len(SHAPE_CLASSES), d)
    return drop_observations(ds, missing, seed + 1) if missing > 0 else ds


def split(ds: Dataset, fractions=(0.6, 0.2, 0.2), seed: int = 0, stratified: bool = False) -> tuple[list[int], list[int], list[int]]:
    """Disjoint, exhaustive train/val/test index lists."""
    if len(fractions) != 3 or not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise ValueError("fractions must be three numbers summing to 1")
    rng = np.random.default_rng(seed)

    def cut(idx: np.ndarray):
        n = len(idx)
        n_tr = int(round(fractions[0] * n))
        n_va = min(int(round(fractions[1] * n)), n - n_tr)
        return idx[:n_tr].tolist(), idx[n_tr : n_tr + n_va].tolist(), idx[n_tr + n_va :].tolist()

    if not stratified:
        return cut(rng.permutation(len(ds)))
    labels = ds.labels
    parts: tuple[list[int], list[int], list[int]] = ([], [], [])
    for c in range(ds.n_classes):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            continue
        if members.size < 3:
            raise ClassTooSmall(f"class {c} has {members.size} samples; stratified split needs 3")
        for acc, part in zip(parts, cut(rng.permutation(members))):
            acc.extend(part)
    return tuple(sorted(p) for p in parts)  # type: ignore[return-value]
