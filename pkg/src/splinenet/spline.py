"""Multi-channel piecewise polynomials on a shared knot grid.

Pieces are stored in local coordinates: on ``[knots[i], knots[i+1]]`` channel
``c`` evaluates ``sum_p coeffs[i, c, p] * (t - knots[i])**p``. Local storage
keeps powers bounded by the interval width; the Taylor shift moves a piece to
a new left endpoint when knots are inserted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.linalg import solve_banded

from . import polynomial as P
from .errors import DegreeCapError, DimensionMismatch, InvalidSeries, OutOfRange, SpanMismatch

FitKind = Literal["constant", "linear", "natural_cubic"]
FIT_KINDS = ("constant", "linear", "natural_cubic")

GAP_TOL = 1e-9  # minimum knot gap, relative to the span length


@dataclass(frozen=True)
class TimeSeries:
    """Irregular multivariate observations; ``mask[i, c]`` is False where missing."""

    times: np.ndarray
    values: np.ndarray
    mask: np.ndarray
    horizon: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim == 1:
            mask = mask[:, None]
        if values.shape != mask.shape or values.shape[0] != times.shape[0]:
            raise InvalidSeries(f"shape mismatch: times {times.shape}, values {values.shape}, mask {mask.shape}")
        if times.size == 0:
            raise InvalidSeries("empty series")
        if np.any(np.diff(times) <= 0):
            raise InvalidSeries("times must be strictly increasing")
        if times[0] < 0:
            raise InvalidSeries("times must be non-negative")
        mask = mask & np.isfinite(values)
        if not mask.any():
            raise InvalidSeries("series has no observed values")
        horizon = float(times[-1]) if self.horizon is None else float(self.horizon)
        if horizon < times[-1] or horizon <= 0:
            raise InvalidSeries(f"horizon {horizon} must be positive and cover the last time {times[-1]}")
        values = np.where(mask, values, np.nan)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "horizon", horizon)

    @classmethod
    def from_values(cls, times, values, horizon=None) -> "TimeSeries":
        """Build from a value array where NaN marks a missing entry."""
        values = np.asarray(values, dtype=np.float64)
        return cls(times, values, np.isfinite(values), horizon)

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def n(self) -> int:
        return self.times.shape[0]

    def channel(self, c: int) -> tuple[np.ndarray, np.ndarray]:
        m = self.mask[:, c]
        return self.times[m], self.values[m, c]


@dataclass(frozen=True)
class Spline:
    """Shared knots ``(m+1,)`` and local coefficients ``(m, d, order+1)``."""

    knots: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=np.float64).reshape(-1)
        coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if coeffs.ndim != 3:
            raise ValueError(f"coeffs must be (intervals, channels, order+1), got {coeffs.shape}")
        if knots.size < 2 or coeffs.shape[0] != knots.size - 1:
            raise ValueError(f"{knots.size} knots do not match {coeffs.shape[0]} pieces")
        gaps = np.diff(knots)
        if np.any(gaps <= 0):
            raise ValueError("knots must be strictly increasing")
        if gaps.min() < 0.5 * GAP_TOL * (knots[-1] - knots[0]):
            raise ValueError("knots closer than the minimum gap")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def d(self) -> int:
        return self.coeffs.shape[1]

    @property
    def order(self) -> int:
        return self.coeffs.shape[2] - 1

    @property
    def n_intervals(self) -> int:
        return self.coeffs.shape[0]

    @property
    def span(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    @property
    def length(self) -> float:
        return float(self.knots[-1] - self.knots[0])

    @property
    def tol(self) -> float:
        return GAP_TOL * self.length

    def __call__(self, t):
        return eval_spline(self, t)

    def __add__(self, other: "Spline") -> "Spline":
        return add_splines(self, other)

    def __mul__(self, other: "Spline") -> "Spline":
        return mul_splines(self, other)

    def __sub__(self, other: "Spline") -> "Spline":
        return add_splines(self, other.scaled(-1.0))

    def scaled(self, factor) -> "Spline":
        """Multiply channel values by ``factor`` (scalar or length-d vector)."""
        f = np.asarray(factor, dtype=np.float64)
        if f.ndim == 1:
            f = f[None, :, None]
        return Spline(self.knots, self.coeffs * f)

    def with_order(self, order: int) -> "Spline":
        if order < self.order:
            raise ValueError("cannot lower the order by padding")
        return Spline(self.knots, _pad_order(self.coeffs, order + 1))

    @classmethod
    def constant(cls, value, knots) -> "Spline":
        value = np.atleast_1d(np.asarray(value, dtype=np.float64))
        knots = np.asarray(knots, dtype=np.float64)
        coeffs = np.broadcast_to(value[None, :, None], (knots.size - 1, value.size, 1)).copy()
        return cls(knots, coeffs)

    def channels(self, idx) -> "Spline":
        return Spline(self.knots, self.coeffs[:, np.atleast_1d(idx), :])


def _pad_order(coeffs: np.ndarray, width: int) -> np.ndarray:
    if coeffs.shape[-1] == width:
        return coeffs
    out = np.zeros(coeffs.shape[:-1] + (width,))
    out[..., : coeffs.shape[-1]] = coeffs
    return out


def stack_channels(splines: list[Spline]) -> Spline:
    """Concatenate channels of splines that already share a knot vector."""
    width = max(s.order for s in splines) + 1
    for s in splines[1:]:
        if s.knots.shape != splines[0].knots.shape or not np.array_equal(s.knots, splines[0].knots):
            raise SpanMismatch("stack_channels needs identical knots; align first")
    return Spline(splines[0].knots, np.concatenate([_pad_order(s.coeffs, width) for s in splines], axis=1))


# --- evaluation --------------------------------------------------------------


def interval_index(knots: np.ndarray, t) -> np.ndarray:
    """Index of the piece used at time t (right piece at interior knots)."""
    idx = np.searchsorted(knots, t, side="right") - 1
    return np.clip(idx, 0, knots.size - 2)


def eval_spline(s: Spline, t):
    """Values at time(s) t, shape ``(d,)`` for a scalar, ``(len(t), d)`` otherwise.

    Times outside the span are clamped to the nearest endpoint.
    """
    scalar = np.ndim(t) == 0
    t = np.clip(np.atleast_1d(np.asarray(t, dtype=np.float64)), s.knots[0], s.knots[-1])
    idx = interval_index(s.knots, t)
    tau = (t - s.knots[idx])[:, None]
    out = P.polyval_many(s.coeffs[idx], tau)
    return out[0] if scalar else out


def eval_derivative(s: Spline, t, order: int = 1):
    """Time derivative of the given order, evaluated like eval_spline."""
    c = s.coeffs
    for _ in range(order):
        if c.shape[-1] == 1:
            c = np.zeros_like(c)
        else:
            c = c[..., 1:] * np.arange(1, c.shape[-1])
    return eval_spline(Spline(s.knots, c), t)


# --- knot algebra ------------------------------------------------------------


def _merge_knots(base: np.ndarray, extra, tol: float) -> np.ndarray:
    """Union of knot vectors; candidates within tol of a kept knot are dropped."""
    extra = np.asarray(extra, dtype=np.float64).reshape(-1)
    extra = extra[(extra > base[0] + tol) & (extra < base[-1] - tol)]
    if extra.size == 0:
        return base
    merged = [base[0]]
    for t in np.unique(np.concatenate([base[1:-1], extra])):
        if t - merged[-1] > tol:
            merged.append(t)
    if base[-1] - merged[-1] <= tol:
        merged.pop()
    merged.append(base[-1])
    return np.asarray(merged)


def reexpress(s: Spline, knots: np.ndarray) -> Spline:
    """Re-express s on a refinement of its knot vector (same span)."""
    knots = np.asarray(knots, dtype=np.float64)
    src = np.searchsorted(s.knots, knots[:-1] + s.tol, side="right") - 1
    src = np.clip(src, 0, s.n_intervals - 1)
    shift = knots[:-1] - s.knots[src]
    coeffs = P.taylor_shift_many(s.coeffs[src], shift[:, None])
    return Spline(knots, coeffs)


def insert_knots(s: Spline, ts) -> Spline:
    merged = _merge_knots(s.knots, ts, s.tol)
    if merged.size == s.knots.size:
        return s
    return reexpress(s, merged)


def insert_knot(s: Spline, t: float) -> Spline:
    """Split the piece containing t; the right half is Taylor-shifted by t - t_i."""
    if not s.knots[0] < t < s.knots[-1]:
        raise OutOfRange(f"knot {t} outside the open span {s.span}")
    return insert_knots(s, [t])


def _check_span(a: Spline, b: Spline) -> None:
    tol = GAP_TOL * max(a.length, b.length)
    if abs(a.knots[0] - b.knots[0]) > tol or abs(a.knots[-1] - b.knots[-1]) > tol:
        raise SpanMismatch(f"spans differ: {a.span} vs {b.span}")


def align(a: Spline, b: Spline) -> tuple[Spline, Spline]:
    """Re-express a and b on the sorted union of their knots."""
    _check_span(a, b)
    if a.knots.size == b.knots.size and np.array_equal(a.knots, b.knots):
        return a, b
    union = _merge_knots(a.knots, b.knots, a.tol)
    return reexpress(a, union), reexpress(b, union)


# --- arithmetic --------------------------------------------------------------


def _check_dims(a: Spline, b: Spline) -> None:
    if a.d != b.d:
        raise DimensionMismatch(f"channel counts differ: {a.d} vs {b.d}")


def add_splines(a: Spline, b: Spline) -> Spline:
    _check_dims(a, b)
    a, b = align(a, b)
    width = max(a.order, b.order) + 1
    return Spline(a.knots, _pad_order(a.coeffs, width) + _pad_order(b.coeffs, width))


def _piece_product(knots: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-piece coefficient products, computed in the unit-width variable tau / width.

    Local coefficients of short pieces span many orders of magnitude; the
    FFT path is only accurate relative to the largest one, so products run
    on rescaled coefficients and are mapped back afterwards.
    """
    w = np.diff(knots)
    w = np.maximum(w, 1e-3 * (knots[-1] - knots[0]))[:, None, None]
    pa = w ** np.arange(a.shape[-1])
    pb = w ** np.arange(b.shape[-1])
    out = P.convolve_many(a * pa, b * pb)
    return out / w ** np.arange(out.shape[-1])


def mul_splines(a: Spline, b: Spline) -> Spline:
    """Pointwise (channel-wise) product; order(a) + order(b)."""
    _check_dims(a, b)
    P.check_degree(a.order + b.order)
    a, b = align(a, b)
    return Spline(a.knots, _piece_product(a.knots, a.coeffs, b.coeffs))


def piece_integrals(coeffs: np.ndarray, widths: np.ndarray) -> np.ndarray:
    """Integral of each piece over its own interval, shape ``coeffs.shape[:-1]``."""
    k = np.arange(1, coeffs.shape[-1] + 1)
    w = np.asarray(widths, dtype=np.float64)
    w = w.reshape(w.shape + (1,) * (coeffs.ndim - w.ndim))
    return np.sum(coeffs * w**k / k, axis=-1)


def integrate_spline(s: Spline) -> Spline:
    """Running integral from the span start; order rises by one."""
    if s.order + 1 > P.MAX_DEGREE:
        raise DegreeCapError(f"integration would give degree {s.order + 1}")
    widths = np.diff(s.knots)
    areas = piece_integrals(s.coeffs, widths)
    offsets = np.cumsum(areas, axis=0) - areas
    out = np.empty(s.coeffs.shape[:2] + (s.order + 2,))
    out[..., 0] = offsets
    out[..., 1:] = s.coeffs / np.arange(1, s.order + 2)
    return Spline(s.knots, out)


def _cumulative(s: Spline, x: float) -> np.ndarray:
    i = int(interval_index(s.knots, x))
    widths = np.diff(s.knots)
    full = piece_integrals(s.coeffs[:i], widths[:i]).sum(axis=0)
    part = piece_integrals(s.coeffs[i], np.full(1, x - s.knots[i]))
    return full + part


def definite_integral(s: Spline, a: float, b: float) -> np.ndarray:
    lo, hi = s.span
    if not (lo - s.tol <= a <= b <= hi + s.tol):
        raise OutOfRange(f"[{a}, {b}] not inside {s.span}")
    if a == b:
        return np.zeros(s.d)
    a, b = max(a, lo), min(b, hi)
    return _cumulative(s, b) - _cumulative(s, a)


def squared_distance_curve(s: Spline, k: Spline) -> Spline:
    """Single-channel spline of sum_c (s_c(t) - k_c(t))**2."""
    _check_dims(s, k)
    P.check_degree(2 * max(s.order, k.order))
    diff = add_splines(s, k.scaled(-1.0))
    sq = _piece_product(diff.knots, diff.coeffs, diff.coeffs)
    return Spline(diff.knots, sq.sum(axis=1, keepdims=True))


def relu_spline(s: Spline) -> Spline:
    """Exact max(0, s) by inserting every in-piece root as a knot."""
    widths = np.diff(s.knots)
    roots = []
    for i in range(s.n_intervals):
        for c in range(s.d):
            for r in P.real_roots_in(s.coeffs[i, c], 0.0, widths[i]):
                roots.append(s.knots[i] + r)
    out = insert_knots(s, roots) if roots else s
    mid = 0.5 * np.diff(out.knots)
    negative = P.polyval_many(out.coeffs, mid[:, None]) < 0
    coeffs = np.where(negative[..., None], 0.0, out.coeffs)
    return Spline(out.knots, coeffs)


def segment_query(s: Spline, l: int, offsets=None) -> np.ndarray:
    """Evaluate s at ``l`` relative positions in the span; default (j+1)/l."""
    if l < 1:
        raise ValueError("need at least one segment")
    if offsets is None:
        offsets = np.arange(1, l + 1) / l
    offsets = np.asarray(offsets, dtype=np.float64)
    if offsets.shape != (l,):
        raise ValueError(f"expected {l} offsets, got {offsets.shape}")
    return eval_spline(s, s.knots[0] + offsets * s.length)


# --- fitting -----------------------------------------------------------------


def _natural_cubic_pieces(t: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Local cubic coefficients with zero second derivative at both ends."""
    n = t.size
    h = np.diff(t)
    slope = np.diff(x) / h
    m = np.zeros(n)  # second derivatives at the knots
    if n > 2:
        ab = np.zeros((3, n - 2))
        ab[0, 1:] = h[1:-1]
        ab[1, :] = 2.0 * (h[:-1] + h[1:])
        ab[2, :-1] = h[1:-1]
        rhs = 6.0 * np.diff(slope)
        m[1:-1] = solve_banded((1, 1), ab, rhs)
    out = np.empty((n - 1, 4))
    out[:, 0] = x[:-1]
    out[:, 1] = slope - h * (2.0 * m[:-1] + m[1:]) / 6.0
    out[:, 2] = m[:-1] / 2.0
    out[:, 3] = np.diff(m) / (6.0 * h)
    return out


def _fit_channel(t: np.ndarray, x: np.ndarray, kind: str, horizon: float) -> Spline:
    """One-channel spline on [0, horizon] with constant extension outside [t0, tn]."""
    if t.size == 0:
        return Spline(np.array([0.0, horizon]), np.zeros((1, 1, 1)))
    if t.size == 1 or (kind == "natural_cubic" and t.size == 2):
        kind = "constant" if t.size == 1 else "linear"
    knots = t.copy()
    if kind == "constant":
        pieces = x[:-1, None].copy()
        tol = GAP_TOL * horizon
        # one value per piece cannot also hit the final observation when it
        # sits on the span end, so a 2*tol sliver carries it
        if t.size >= 2 and horizon - t[-1] <= tol and t[-1] - t[-2] > 4 * tol:
            knots = np.concatenate([t[:-1], [t[-1] - 2 * tol, t[-1]]])
            pieces = np.concatenate([pieces, x[-1:, None]])
    elif kind == "linear":
        pieces = np.stack([x[:-1], np.diff(x) / np.diff(t)], axis=1)
    else:
        pieces = _natural_cubic_pieces(t, x)
    width = pieces.shape[1]
    if t.size == 1:
        knots = np.array([0.0, horizon])
        pieces = np.full((1, 1), x[0])
    else:
        if knots[0] > GAP_TOL * horizon:
            knots = np.concatenate([[0.0], knots])
            pieces = np.concatenate([_const_row(x[0], width), pieces])
        else:
            knots[0] = 0.0
        if horizon - knots[-1] > GAP_TOL * horizon:
            knots = np.concatenate([knots, [horizon]])
            pieces = np.concatenate([pieces, _const_row(x[-1], width)])
        else:
            knots[-1] = horizon
    return Spline(knots, pieces[:, None, :])


def _const_row(value: float, width: int) -> np.ndarray:
    row = np.zeros((1, width))
    row[0, 0] = value
    return row


def fit(ts: TimeSeries, kind: FitKind = "natural_cubic") -> Spline:
    """Interpolating spline over ``[0, ts.horizon]`` on the union of observed times.

    Each channel is fitted on its own observed points and extended as a
    constant beyond them; a channel without observations is zero.
    """
    if kind not in FIT_KINDS:
        raise ValueError(f"unknown fit kind {kind!r}; expected one of {FIT_KINDS}")
    horizon = ts.horizon
    obs_t = ts.times[ts.mask.any(axis=1)]
    if np.any(np.diff(obs_t) < GAP_TOL * horizon):
        raise InvalidSeries("observation times closer than the minimum knot gap")
    channels = [_fit_channel(*ts.channel(c), kind, horizon) for c in range(ts.d)]
    knots = np.array([0.0, horizon])
    for ch in channels:
        knots = _merge_knots(knots, ch.knots, GAP_TOL * horizon)
    knots = _merge_knots(knots, obs_t, GAP_TOL * horizon)
    return stack_channels([reexpress(ch, knots) for ch in channels])
