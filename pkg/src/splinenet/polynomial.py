"""Dense single-channel polynomial arithmetic.

A polynomial is a 1-D float array ``c`` with ``c[i]`` the coefficient of
``tau**i``. Public single-polynomial functions return canonical arrays
(exact trailing zeros trimmed, zero polynomial is ``[0.0]``).

The ``*_many`` helpers operate along the last axis of stacked coefficient
arrays and never trim; the spline module builds on them.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .errors import DegreeCapError

MAX_DEGREE = 64
NAIVE_MUL_LIMIT = 16  # deg p + deg q below this -> schoolbook product
FAST_SHIFT_DEGREE = 32  # divide-and-conquer Taylor shift from this degree on

_ZERO_TOL = 1e-300


def as_poly(p) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(p, dtype=np.float64))
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("polynomial needs a non-empty 1-D coefficient vector")
    return arr


def trim(p) -> np.ndarray:
    """Drop exact trailing zeros; near-zeros are kept on purpose."""
    p = as_poly(p)
    nz = np.flatnonzero(np.abs(p) > _ZERO_TOL)
    if nz.size == 0:
        return np.zeros(1)
    return p[: nz[-1] + 1].copy()


def degree(p) -> int:
    return len(trim(p)) - 1


def check_degree(deg: int, cap: int | None = MAX_DEGREE) -> None:
    if cap is not None and deg > cap:
        raise DegreeCapError(f"degree {deg} exceeds cap {cap}")


def eval_poly(p, tau):
    """Horner evaluation; ``tau`` may be a scalar or an array."""
    p = as_poly(p)
    tau = np.asarray(tau, dtype=np.float64)
    acc = np.full(tau.shape, p[-1])
    for c in p[-2::-1]:
        acc = acc * tau + c
    return acc[()] if acc.ndim == 0 else acc


def add(p, q) -> np.ndarray:
    p, q = as_poly(p), as_poly(q)
    out = np.zeros(max(len(p), len(q)))
    out[: len(p)] += p
    out[: len(q)] += q
    return trim(out)


def scale(p, c: float) -> np.ndarray:
    return trim(as_poly(p) * c)


def mul_naive(p, q) -> np.ndarray:
    """Schoolbook product, O(len(p) * len(q)) multiply-adds."""
    p, q = as_poly(p), as_poly(q)
    return trim(_convolve_direct(p, q))


def _convolve_direct(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    # shift-and-add over the shorter operand, vectorized over the longer
    if len(p) < len(q):
        p, q = q, p
    out = np.zeros(p.shape[:-1] + (p.shape[-1] + q.shape[-1] - 1,))
    n = p.shape[-1]
    for j in range(q.shape[-1]):
        out[..., j : j + n] += q[..., j : j + 1] * p
    return out


@lru_cache(maxsize=None)
def _bit_reverse_permutation(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=None)
def _twiddles(m: int, inverse: bool) -> np.ndarray:
    sign = 1.0 if inverse else -1.0
    return np.exp(sign * 2j * np.pi * np.arange(m // 2) / m)


def fft(x, inverse: bool = False) -> np.ndarray:
    """Iterative radix-2 Cooley-Tukey transform along the last axis.

    The length must be a power of two. The inverse includes the 1/n factor.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n & (n - 1):
        raise ValueError(f"fft length {n} is not a power of two")
    a = x[..., _bit_reverse_permutation(n)]
    lead = a.shape[:-1]
    m = 2
    while m <= n:
        half = m // 2
        blocks = a.reshape(lead + (n // m, m))
        even = blocks[..., :half]
        odd = blocks[..., half:] * _twiddles(m, inverse)
        out = np.empty_like(blocks)
        np.add(even, odd, out=out[..., :half])
        np.subtract(even, odd, out=out[..., half:])
        a = out.reshape(lead + (n,))
        m *= 2
    if inverse:
        a = a / n
    return a


def next_pow2(n: int) -> int:
    return 1 << max(n - 1, 0).bit_length()


def _convolve_fft(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    out_len = p.shape[-1] + q.shape[-1] - 1
    n = next_pow2(out_len)
    # both real operands share one complex transform: z = p + i q
    lead = np.broadcast_shapes(p.shape[:-1], q.shape[:-1])
    z = np.zeros(lead + (n,), dtype=np.complex128)
    z.real[..., : p.shape[-1]] = p
    z.imag[..., : q.shape[-1]] = q
    fz = fft(z)
    fz_rev = np.conj(fz[..., -np.arange(n) % n])
    fp = 0.5 * (fz + fz_rev)
    fq = -0.5j * (fz - fz_rev)
    return fft(fp * fq, inverse=True).real[..., :out_len]


def _pad_last(a: np.ndarray, n: int) -> np.ndarray:
    width = [(0, 0)] * (a.ndim - 1) + [(0, n - a.shape[-1])]
    return np.pad(a, width)


def mul_fft(p, q) -> np.ndarray:
    """Product through the convolution theorem with the in-house radix-2 FFT."""
    p, q = as_poly(p), as_poly(q)
    return trim(_convolve_fft(p, q))


def mul(p, q, cap: int | None = MAX_DEGREE) -> np.ndarray:
    p, q = trim(p), trim(q)
    deg = len(p) + len(q) - 2
    check_degree(deg, cap)
    if deg < NAIVE_MUL_LIMIT:
        return mul_naive(p, q)
    return mul_fft(p, q)


def taylor_shift_horner(p, s: float) -> np.ndarray:
    """Return q with q(tau) = p(tau + s) by repeated synthetic division, O(k^2)."""
    return trim(taylor_shift_many(as_poly(p), s))


def taylor_shift_dc(p, s: float) -> np.ndarray:
    """Divide-and-conquer Taylor shift, O(M(k) log k) with FFT products.

    Splits p = lo + tau^h * hi and uses p(tau+s) = lo(tau+s) + (tau+s)^h hi(tau+s).
    """
    return trim(_shift_dc(as_poly(p), float(s)))


def _binomial_power(h: int, s: float) -> np.ndarray:
    # coefficients of (tau + s)^h, built from the top so |s| <= 1 stays tame
    c = np.empty(h + 1)
    c[h] = 1.0
    for j in range(h, 0, -1):
        c[j - 1] = c[j] * s * j / (h - j + 1)
    return c


def _shift_dc(p: np.ndarray, s: float) -> np.ndarray:
    n = len(p)
    if n <= FAST_SHIFT_DEGREE or s == 0.0:
        return taylor_shift_many(p, s)
    h = n // 2
    lo = _shift_dc(p[:h], s)
    hi = _shift_dc(p[h:], s)
    out = _convolve_fft(_binomial_power(h, s), hi)[:n]
    out[:h] += lo
    return out


def taylor_shift(p, s: float) -> np.ndarray:
    p = as_poly(p)
    if len(p) - 1 >= FAST_SHIFT_DEGREE:
        return taylor_shift_dc(p, s)
    return taylor_shift_horner(p, s)


def antiderivative(p, c0: float = 0.0) -> np.ndarray:
    p = as_poly(p)
    out = np.empty(len(p) + 1)
    out[0] = c0
    out[1:] = p / np.arange(1, len(p) + 1)
    return trim(out)


def derivative(p) -> np.ndarray:
    p = as_poly(p)
    if len(p) == 1:
        return np.zeros(1)
    return trim(p[1:] * np.arange(1, len(p)))


# --- stacked helpers (last axis = coefficients, no trimming) ---------------


def polyval_many(c: np.ndarray, tau) -> np.ndarray:
    """Evaluate stacked polynomials ``c[..., k]`` at ``tau`` broadcast to ``c.shape[:-1]``."""
    tau = np.asarray(tau, dtype=np.float64)
    acc = np.broadcast_to(c[..., -1], np.broadcast_shapes(c.shape[:-1], tau.shape)).copy()
    for k in range(c.shape[-1] - 2, -1, -1):
        acc = acc * tau + c[..., k]
    return acc


def taylor_shift_many(c: np.ndarray, s) -> np.ndarray:
    """Horner-style shift of stacked polynomials; ``s`` broadcasts over ``c.shape[:-1]``.

    Builds q = (...((c_k)(tau+s) + c_{k-1})(tau+s) + ...) + c_0, O(k^2) operations.
    """
    c = np.asarray(c, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    lead = np.broadcast_shapes(c.shape[:-1], s.shape)
    c = np.broadcast_to(c, lead + c.shape[-1:])
    s = s[..., None]
    n = c.shape[-1]
    q = np.zeros(lead + (n,))
    for i in range(n - 1, -1, -1):
        nxt = s * q
        nxt[..., 1:] += q[..., :-1]
        nxt[..., 0] += c[..., i]
        q = nxt
    return q


def shift_matrix(s: float, n: int) -> np.ndarray:
    """Matrix M with taylor_shift(c, s) == M @ c for length-n coefficient vectors."""
    m = np.zeros((n, n))
    for j in range(n):
        for i in range(j + 1):
            m[i, j] = math.comb(j, i) * float(s) ** (j - i)
    return m


def convolve_many(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched coefficient convolution along the last axis (broadcast leading axes)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    lead = np.broadcast_shapes(a.shape[:-1], b.shape[:-1])
    a = np.broadcast_to(a, lead + a.shape[-1:])
    b = np.broadcast_to(b, lead + b.shape[-1:])
    if a.shape[-1] + b.shape[-1] - 2 < NAIVE_MUL_LIMIT:
        return _convolve_direct(a, b)
    return _convolve_fft(a, b)


# --- roots -----------------------------------------------------------------


def _quadratic_roots(c: np.ndarray) -> list[float]:
    c0, c1, c2 = c
    disc = c1 * c1 - 4.0 * c2 * c0
    if disc < 0:
        return []
    sq = math.sqrt(disc)
    q = -0.5 * (c1 + math.copysign(sq, c1))
    roots = []
    if q != 0.0:
        roots.append(c0 / q)
    roots.append(q / c2)
    return roots


def _bisect(p: np.ndarray, lo: float, hi: float, tol: float) -> float:
    flo = float(eval_poly(p, lo))
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = float(eval_poly(p, mid))
        if fm == 0.0:
            return mid
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _newton_polish(p: np.ndarray, r: float, steps: int = 3) -> float:
    dp = derivative(p)
    for _ in range(steps):
        d = float(eval_poly(dp, r))
        if d == 0.0:
            break
        step = float(eval_poly(p, r)) / d
        if not math.isfinite(step):
            break
        r_new = r - step
        if abs(float(eval_poly(p, r_new))) >= abs(float(eval_poly(p, r))):
            break
        r = r_new
    return r


def _cubic_roots(c: np.ndarray) -> list[float]:
    # one real root by bisection on the Cauchy bound, then deflate to a quadratic
    lead = c[-1]
    bound = 1.0 + float(np.max(np.abs(c[:-1] / lead)))
    r = _bisect(c, -bound, bound, 1e-15 * bound)
    r = _newton_polish(c, r)
    # synthetic division by (tau - r)
    b2 = c[3]
    b1 = c[2] + r * b2
    b0 = c[1] + r * b1
    roots = [r] + _quadratic_roots(np.array([b0, b1, b2]))
    return [_newton_polish(c, x) for x in roots]


def real_roots_in(p, a: float, b: float) -> list[float]:
    """Real roots strictly inside (a, b), sorted and de-duplicated.

    Degree >= 4 uses sign-change bisection on 64*deg subintervals, so roots
    of even multiplicity (tangential touches) can be missed.
    """
    if not a < b:
        raise ValueError("need a < b")
    p = trim(p)
    deg = len(p) - 1
    if deg == 0:
        return []
    if deg == 1:
        roots = [-p[0] / p[1]]
    elif deg == 2:
        roots = _quadratic_roots(p)
    elif deg == 3:
        roots = _cubic_roots(p)
    else:
        roots = []
        grid = np.linspace(a, b, 64 * deg + 1)
        vals = eval_poly(p, grid)
        tol = 1e-12 * (b - a)
        for i in range(len(grid) - 1):
            if vals[i] == 0.0:
                roots.append(float(grid[i]))
            elif vals[i] * vals[i + 1] < 0:
                roots.append(_bisect(p, float(grid[i]), float(grid[i + 1]), tol))
    inside = sorted(float(r) for r in roots if a < r < b and math.isfinite(r))
    out: list[float] = []
    for r in inside:
        if not out or r - out[-1] > 1e-12 * max(1.0, abs(r)):
            out.append(r)
    return out
