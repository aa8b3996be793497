"""Micro-benchmarks of the polynomial kernels: schoolbook vs FFT products and
the two Taylor-shift variants.

Each timing is the median over ``reps`` rounds on fixed-seed random inputs.
The product paths are cross-checked on every benchmarked degree.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass

import numpy as np

from . import polynomial as P

DEFAULT_DEGREES = tuple(2**k for k in range(2, 13))  # 4 .. 4096
ALGORITHMS = ("mul_naive", "mul_fft", "shift_horner", "shift_dc")
AGREEMENT_TOL = 1e-6


@dataclass(frozen=True)
class BenchRow:
    algorithm: str
    degree: int
    reps: int
    median_ns: float
    rel_error: float  # disagreement with the sibling path at this degree


def _rel_diff(a: np.ndarray, b: np.ndarray) -> float:
    n = max(len(a), len(b))
    a, b = np.pad(a, (0, n - len(a))), np.pad(b, (0, n - len(b)))
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def run_bench(degrees=DEFAULT_DEGREES, reps: int = 30, seed: int = 0) -> list[BenchRow]:
    """Median time per (algorithm, degree).

    Every repetition is one round that times each algorithm at each degree once,
    so slow phases of a shared machine hit all cells alike instead of whichever
    degree happened to be running.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    rng = np.random.default_rng(seed)
    calls, errors = {}, {}
    for k in degrees:
        p = rng.normal(size=k + 1)
        q = rng.normal(size=k + 1)
        # a shift of 1/k keeps (1 + 1/k)^k bounded, so coefficients stay comparable
        s = 1.0 / k
        mul_err = _rel_diff(P.mul_fft(p, q), P.mul_naive(p, q))
        shift_err = _rel_diff(P.taylor_shift_dc(p, s), P.taylor_shift_horner(p, s))
        calls[("mul_naive", k)] = lambda p=p, q=q: P.mul_naive(p, q)
        calls[("mul_fft", k)] = lambda p=p, q=q: P.mul_fft(p, q)
        calls[("shift_horner", k)] = lambda p=p, s=s: P.taylor_shift_horner(p, s)
        calls[("shift_dc", k)] = lambda p=p, s=s: P.taylor_shift_dc(p, s)
        errors.update({("mul_naive", k): mul_err, ("mul_fft", k): mul_err, ("shift_horner", k): shift_err, ("shift_dc", k): shift_err})
    times = {key: np.empty(reps) for key in calls}
    for i in range(reps):
        for key, fn in calls.items():
            t0 = time.perf_counter_ns()
            fn()
            times[key][i] = time.perf_counter_ns() - t0
    return [BenchRow(a, k, reps, float(np.median(times[(a, k)])), errors[(a, k)]) for k in degrees for a in ALGORITHMS]


def _times(rows: list[BenchRow], algorithm: str) -> dict[int, float]:
    return {r.degree: r.median_ns for r in rows if r.algorithm == algorithm}


def crossover(rows: list[BenchRow], slow: str = "mul_naive", fast: str = "mul_fft") -> int | None:
    """Smallest degree from which ``fast`` beats ``slow`` at every larger benchmarked degree."""
    a, b = _times(rows, slow), _times(rows, fast)
    degrees = sorted(set(a) & set(b))
    best = None
    for k in reversed(degrees):
        if b[k] < a[k]:
            best = k
        else:
            break
    return best


def ratios(rows: list[BenchRow], slow: str = "mul_naive", fast: str = "mul_fft") -> dict[int, float]:
    a, b = _times(rows, slow), _times(rows, fast)
    return {k: b[k] / a[k] for k in sorted(set(a) & set(b))}


def to_csv(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["algorithm", "degree", "reps", "median_ns", "rel_error"])
    for r in rows:
        w.writerow([r.algorithm, r.degree, r.reps, f"{r.median_ns:.0f}", f"{r.rel_error:.3e}"])
    return buf.getvalue()
