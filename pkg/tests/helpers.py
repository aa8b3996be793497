"""Random generators and dense-grid oracles shared by the test modules."""

import numpy as np

from splinenet.spline import Spline, TimeSeries


def random_knots(rng, n_knots, lo=0.0, hi=1.0):
    inner = np.sort(rng.uniform(lo, hi, size=max(n_knots - 2, 0)))
    knots = np.concatenate([[lo], inner, [hi]])
    # keep gaps comfortably above the minimum-gap tolerance
    while np.min(np.diff(knots)) < 1e-4 * (hi - lo):
        inner = np.sort(rng.uniform(lo, hi, size=max(n_knots - 2, 0)))
        knots = np.concatenate([[lo], inner, [hi]])
    return knots


def random_spline(rng, n_knots=None, d=None, order=None, lo=0.0, hi=1.0, scale=1.0):
    n_knots = n_knots or int(rng.integers(2, 21))
    d = d or int(rng.integers(1, 7))
    order = int(rng.integers(0, 4)) if order is None else order
    knots = random_knots(rng, n_knots, lo, hi)
    widths = np.diff(knots)
    # coefficients scaled so each piece term stays O(scale) over its interval
    powers = widths[:, None, None] ** -np.arange(order + 1)
    coeffs = rng.normal(size=(n_knots - 1, d, order + 1)) * powers * scale
    return Spline(knots, coeffs)


def dense_eval(s, t):
    """Straightforward evaluation: locate each t by a linear scan of the knots, then power sums."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty((t.size, s.d))
    for n, x in enumerate(t):
        x = min(max(x, s.knots[0]), s.knots[-1])
        i = 0
        while i + 1 < s.n_intervals and x >= s.knots[i + 1]:
            i += 1
        tau = x - s.knots[i]
        out[n] = sum(s.coeffs[i, :, p] * tau**p for p in range(s.coeffs.shape[2]))
    return out


def random_series(rng, n=None, d=None, missing=0.3, horizon=1.0):
    n = n or int(rng.integers(3, 40))
    d = d or int(rng.integers(1, 5))
    while True:
        t = np.sort(rng.uniform(0, horizon, size=n))
        if np.min(np.diff(t), initial=1.0) > 1e-6 * horizon:
            break
    v = rng.normal(size=(n, d))
    mask = rng.random((n, d)) >= missing
    if not mask.any():
        mask[0, 0] = True
    return TimeSeries(t, v, mask, horizon)
