"""Compactly supported smoothing kernels and their integral tables.

Both regularization directions use the same normalized bump

    psi(w) = exp(-1/(1 - w^2)) / Z   on |w| < 1,   Z ~= 0.4439938162,

scaled to width gamma in space (wrapped on the torus) and width delta in
the state variable.  The doubling functional and its certificates need
the primitives

    X(r)  = int_{-inf}^{r} psi(s) ds          (the kernel CDF)
    Xi(r) = int_{-inf}^{r} X(s) ds            (second antiderivative)

X is tabulated once on 4096 lattice points by per-interval Gauss
quadrature and evaluated with cubic interpolation; Xi follows from the
exact integration-by-parts identity Xi(r) = r*X(r) - int_{-1}^{r} s*psi(s) ds,
so Xi(1) = 1 and Xi(r) = r for r >= 1 with no drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline

TABLE_POINTS = 4096
# 5-point Gauss-Legendre nodes/weights on [-1, 1]
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)


def bump_raw(w):
    """Unnormalized bump exp(-1/(1-w^2)) on |w| < 1, zero outside."""
    w = np.asarray(w, dtype=float)
    inside = np.abs(w) < 1.0
    out = np.zeros_like(w)
    ws = np.where(inside, w, 0.0)
    with np.errstate(divide="ignore", over="ignore"):
        vals = np.exp(-1.0 / (1.0 - ws * ws))
    out[inside] = vals[inside]
    return out


@lru_cache(maxsize=1)
def bump_norm() -> float:
    """Normalizer Z = int_{-1}^{1} exp(-1/(1-w^2)) dw by adaptive quadrature."""
    val, err = quad(lambda s: float(bump_raw(s)), -1.0, 1.0,
                    epsabs=1e-13, epsrel=1e-13, limit=200)
    assert err < 1e-10
    return val


def psi(w):
    """Normalized unit-width kernel."""
    return bump_raw(w) / bump_norm()


def psi_sup() -> float:
    """C_psi = sup psi = psi(0) = e^{-1}/Z (< 1, so psi_delta <= 1/delta)."""
    return float(np.exp(-1.0) / bump_norm())


def psi_scalar(w: float) -> float:
    """Scalar psi without array overhead (hot path of adaptive quadrature)."""
    if not -1.0 < w < 1.0:
        return 0.0
    return math.exp(-1.0 / (1.0 - w * w)) / bump_norm()


def _gauss_cumulative(f, grid: np.ndarray) -> np.ndarray:
    """Cumulative integral of f from grid[0], 5-point Gauss per interval."""
    lo, hi = grid[:-1], grid[1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    nodes = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    pieces = half * (f(nodes) @ _GL_WEIGHTS)
    return np.concatenate([[0.0], np.cumsum(pieces)])


@dataclass(frozen=True)
class KernelTables:
    """Cubic-spline tables of X and of S(r) = int_{-1}^{r} s*psi(s) ds."""

    knots: np.ndarray
    x_spline: CubicSpline = field(repr=False)
    s_spline: CubicSpline = field(repr=False)

    @classmethod
    def build(cls, n: int = TABLE_POINTS) -> "KernelTables":
        knots = np.linspace(-1.0, 1.0, n)
        xvals = _gauss_cumulative(psi, knots)
        svals = _gauss_cumulative(lambda s: s * psi(s), knots)
        return cls(knots, CubicSpline(knots, xvals), CubicSpline(knots, svals))

    def X(self, r):
        """Kernel CDF: 0 left of the support, 1 right of it."""
        r = np.asarray(r, dtype=float)
        rc = np.clip(r, -1.0, 1.0)
        # clip away sub-1e-30 spline wiggle at the flat ends of the bump
        out = np.clip(self.x_spline(rc), 0.0, 1.0)
        return np.where(r <= -1.0, 0.0, np.where(r >= 1.0, 1.0, out))

    def Xi(self, r):
        """Second antiderivative of psi: 0 for r <= -1, r for r >= 1."""
        r = np.asarray(r, dtype=float)
        rc = np.clip(r, -1.0, 1.0)
        core = np.maximum(rc * self.x_spline(rc) - self.s_spline(rc), 0.0)
        return np.where(r <= -1.0, 0.0, np.where(r >= 1.0, r, core))


@lru_cache(maxsize=1)
def kernel_tables() -> KernelTables:
    """Shared immutable tables (safe to use from worker threads)."""
    return KernelTables.build()


@dataclass(frozen=True)
class MollifierPair:
    """Widths (gamma, delta) of the space/state regularization pair.

    gamma must leave room on both sides of the torus (gamma < 1/2) and
    delta must be positive.  All kernel evaluations are exact formulas;
    only X and Xi go through the shared tables.
    """

    gamma: float
    delta: float

    def __post_init__(self):
        if not 0.0 < self.gamma < 0.5:
            raise ValueError(f"gamma must lie in (0, 1/2), got {self.gamma}")
        if self.delta <= 0.0:
            raise ValueError(f"delta must be positive, got {self.delta}")

    # -- space kernel -------------------------------------------------------

    def rho(self, z):
        """Spatial kernel rho_gamma(z) = psi(z/gamma)/gamma for |z| < gamma."""
        return psi(np.asarray(z, dtype=float) / self.gamma) / self.gamma

    def rho_grad(self, z):
        """Analytic derivative of rho_gamma."""
        z = np.asarray(z, dtype=float)
        s = z / self.gamma
        inside = np.abs(s) < 1.0
        ss = np.where(inside, s, 0.0)
        one = 1.0 - ss * ss
        with np.errstate(divide="ignore", over="ignore"):
            val = np.exp(-1.0 / one) * (-2.0 * ss) / (one * one)
        out = np.where(inside, val, 0.0)
        return out / (bump_norm() * self.gamma * self.gamma)

    # -- state kernel -------------------------------------------------------

    def psi_delta(self, w):
        """State kernel psi_delta(w) = psi(w/delta)/delta."""
        return psi(np.asarray(w, dtype=float) / self.delta) / self.delta

    def X_delta(self, w):
        """CDF of psi_delta."""
        return kernel_tables().X(np.asarray(w, dtype=float) / self.delta)

    # -- discrete offsets on a grid -----------------------------------------

    def support_offsets(self, grid) -> np.ndarray:
        """Integer cell offsets d with periodic displacement |d*dx| < gamma."""
        if self.gamma < grid.dx:
            raise ValueError(
                f"gamma={self.gamma} is below the grid resolution dx={grid.dx}")
        dmax = int(np.ceil(self.gamma * grid.cells)) - 1
        return np.arange(-dmax, dmax + 1)

    def spatial_weights(self, grid) -> tuple[np.ndarray, np.ndarray]:
        """(offsets, weights) for the discrete kernel sum.

        Midpoint weights rho_gamma(d*dx)*dx rescaled to unit total, so
        the discrete kernel carries mass exactly 1 and every continuum
        certificate that integrates rho to 1 transfers to the grid
        verbatim.
        """
        offs = self.support_offsets(grid)
        z = offs * grid.dx
        w = self.rho(z) * grid.dx
        total = w.sum()
        if total <= 0:
            raise ValueError("empty kernel support on this grid")
        return offs, w / total

    def gradient_weights(self, grid) -> tuple[np.ndarray, np.ndarray]:
        """(offsets, rho_gamma'(d*dx)*dx), signed, not normalized."""
        offs = self.support_offsets(grid)
        z = offs * grid.dx
        return offs, self.rho_grad(z) * grid.dx
