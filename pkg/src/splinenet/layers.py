"""Spline-to-spline network layers operating on coefficients only.

These are the readable, object-level versions of the layers. Training runs
on the batched engine in :mod:`splinenet.engine`, which is tested against
these functions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from .errors import DimensionMismatch, EmptyBatch
from .spline import Spline, definite_integral, integrate_spline, mul_splines, squared_distance_curve, stack_channels

KernelMode = Literal["multiply", "distance"]


@dataclass(frozen=True)
class AffineParams:
    W: np.ndarray  # (d_out, d_in)
    b: np.ndarray  # (d_out,)

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=np.float64))
        b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if b.shape[0] != W.shape[0]:
            raise DimensionMismatch(f"bias length {b.shape[0]} != rows of W {W.shape[0]}")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ValueError("affine parameters must be finite")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)


def affine_forward(s: Spline, p: AffineParams) -> Spline:
    """W s(t) + b, computed on coefficients; knots and order are unchanged."""
    if s.d != p.W.shape[1]:
        raise DimensionMismatch(f"spline has {s.d} channels, W expects {p.W.shape[1]}")
    coeffs = np.einsum("oc,mcp->mop", p.W, s.coeffs)
    coeffs[:, :, 0] += p.b
    return Spline(s.knots, coeffs)


def integration_layer(s: Spline) -> Spline:
    return integrate_spline(s)


def uniform_grid(g: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, g)


@dataclass(frozen=True)
class KernelBank:
    """Learnable splines on a fixed uniform grid of ``g`` knots over [0, 1].

    ``coeffs`` has shape ``(n_kernels, g - 1, d, order + 1)`` in the local
    variable of each unit-span grid interval.
    """

    coeffs: np.ndarray
    mode: KernelMode = "distance"

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.ndim != 4 or c.shape[1] < 1:
            raise ValueError(f"kernel coefficients must be (n, g-1, d, order+1), got {c.shape}")
        if self.mode not in ("multiply", "distance"):
            raise ValueError(f"unknown kernel mode {self.mode!r}")
        object.__setattr__(self, "coeffs", c)

    @property
    def n_kernels(self) -> int:
        return self.coeffs.shape[0]

    @property
    def g(self) -> int:
        return self.coeffs.shape[1] + 1

    @property
    def d(self) -> int:
        return self.coeffs.shape[2]

    @property
    def order(self) -> int:
        return self.coeffs.shape[3] - 1

    @classmethod
    def init(cls, rng: np.random.Generator, n_kernels: int, g: int, d: int, order: int = 1, mode: KernelMode = "distance") -> "KernelBank":
        std = 1.0 / np.sqrt(g * d)
        return cls(rng.normal(0.0, std, size=(n_kernels, g - 1, d, order + 1)), mode)

    def kernel(self, j: int, span: tuple[float, float] = (0.0, 1.0)) -> Spline:
        """Kernel j mapped onto ``span``; local powers are rescaled by the span length."""
        lo, hi = span
        length = hi - lo
        knots = lo + uniform_grid(self.g) * length
        scale = length ** -np.arange(self.order + 1, dtype=np.float64)
        return Spline(knots, self.coeffs[j] * scale)


def kernel_apply(s: Spline, bank: KernelBank) -> list[Spline] | Spline:
    """Multiply mode: one product spline per kernel. Distance mode: one channel per kernel."""
    if s.d != bank.d:
        raise DimensionMismatch(f"spline has {s.d} channels, kernels have {bank.d}")
    kernels = [bank.kernel(j, s.span) for j in range(bank.n_kernels)]
    if bank.mode == "multiply":
        return [mul_splines(s, k) for k in kernels]
    curves = [squared_distance_curve(s, k) for k in kernels]
    # the curves share knots (each is s aligned with the same grid)
    return stack_channels(curves)


@dataclass(frozen=True)
class AreaNormState:
    running_mean_area: np.ndarray
    momentum: float = 0.9
    epsilon: float = 1e-5

    @classmethod
    def init(cls, d: int, momentum: float = 0.9, epsilon: float = 1e-5) -> "AreaNormState":
        return cls(np.ones(d), momentum, epsilon)


def spline_area(s: Spline) -> np.ndarray:
    return definite_integral(s, *s.span)


def area_norm(batch: list[Spline], state: AreaNormState, training: bool = True) -> tuple[list[Spline], AreaNormState]:
    """Scale channels so the batch-mean absolute area is one.

    Returns the scaled splines and the (possibly updated) state.
    """
    if not batch:
        raise EmptyBatch("area_norm needs at least one spline")
    if training:
        areas = np.abs(np.stack([spline_area(s) for s in batch]))
        mu = areas.mean(axis=0)
        running = state.momentum * state.running_mean_area + (1.0 - state.momentum) * mu
        state = replace(state, running_mean_area=running)
    else:
        mu = state.running_mean_area
    factor = 1.0 / (mu + state.epsilon)
    return [s.scaled(factor) for s in batch], state


def relu_values(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


