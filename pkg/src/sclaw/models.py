"""Flux and noise models, certificate validation, noise paths, run config.

A flux model carries the scalar flux A, its derivative a = A', and the
pieces of the Engquist-Osher numerical flux in closed form.  A noise
model is a finite family of modes g_k(x, u) = sigma_k * phi_k(x) *
(alpha_k + beta_k * u) with spatial profile phi_k constant, cos, or sin.
Both carry declared growth/Lipschitz constants; ``validate_flux`` and
``validate_noise`` check the corresponding inequalities on a sampling
lattice and report the worst ratio and where it occurred.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial

FLUX_KINDS = ("zero", "linear", "burgers", "polynomial")
PROFILE_KINDS = ("constant", "cos", "sin")

# Stream identifiers keyed into the RNG so that independent Monte Carlo
# samples (e.g. the two sides of a distribution comparison) never share
# Brownian increments.
STREAM_MAIN = 0
STREAM_BASE = 1
STREAM_SCALED = 2


# ---------------------------------------------------------------------------
# flux models


@dataclass(frozen=True)
class FluxModel:
    """Scalar flux A with closed-form Engquist-Osher decomposition.

    ``apos(u)`` and ``aneg(u)`` are the exact integrals of max(a, 0) and
    min(a, 0) from 0 to u, so the two-point numerical flux is

        F(ul, ur) = A(0) + apos(ul) + aneg(ur),

    consistent (F(c, c) = A(c)), nondecreasing in ul and nonincreasing
    in ur.  ``growth_const`` (N) and ``growth_power`` (q0 >= 1) declare
    the polynomial growth certificate |a(xi)| <= N * (1 + |xi|^q0).
    """

    kind: str
    growth_power: float
    growth_const: float
    speed: float = 0.0
    coeffs: tuple[float, ...] = ()
    _a_roots: np.ndarray = field(init=False, repr=False, compare=False)
    _take_pos: np.ndarray = field(init=False, repr=False, compare=False)
    _take_neg: np.ndarray = field(init=False, repr=False, compare=False)
    _phi_pos: np.ndarray = field(init=False, repr=False, compare=False)
    _phi_neg: np.ndarray = field(init=False, repr=False, compare=False)
    _crit: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in FLUX_KINDS:
            raise ValueError(f"unknown flux kind: {self.kind}")
        if self.growth_power < 1:
            raise ValueError(f"growth_power must be >= 1, got {self.growth_power}")
        if self.growth_const < 0:
            raise ValueError(f"growth_const must be >= 0, got {self.growth_const}")
        if self.kind == "polynomial" and len(self.coeffs) == 0:
            raise ValueError("polynomial flux needs coefficients")
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        self._build_piecewise()

    # -- basic evaluations --------------------------------------------------

    def A(self, u):
        """Flux function."""
        u = np.asarray(u, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(u)
        if self.kind == "linear":
            return self.speed * u
        if self.kind == "burgers":
            return 0.5 * u * u
        return np.polynomial.polynomial.polyval(u, self.coeffs)

    def a(self, u):
        """Characteristic speed a = A'."""
        u = np.asarray(u, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(u)
        if self.kind == "linear":
            return np.full_like(u, self.speed)
        if self.kind == "burgers":
            return u.copy()
        return np.polynomial.polynomial.polyval(u, self._da_coeffs)

    def growth_envelope(self, xi):
        """Right-hand side of the growth certificate, N * (1 + |xi|^q0)."""
        return self.growth_const * (1.0 + np.abs(xi) ** self.growth_power)

    def lipschitz_envelope(self, xi, zeta):
        """Local Lipschitz envelope N * (1 + |xi|^(q0-1) + |zeta|^(q0-1))."""
        q = self.growth_power - 1.0
        return self.growth_const * (1.0 + np.abs(xi) ** q + np.abs(zeta) ** q)

    # -- Engquist-Osher pieces ----------------------------------------------

    def apos(self, u):
        """Integral of max(a, 0) from 0 to u, in closed form."""
        u = np.asarray(u, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(u)
        if self.kind == "linear":
            return max(self.speed, 0.0) * u
        if self.kind == "burgers":
            return 0.5 * np.maximum(u, 0.0) ** 2
        return self._piecewise_part(u, positive=True)

    def aneg(self, u):
        """Integral of min(a, 0) from 0 to u, in closed form."""
        u = np.asarray(u, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(u)
        if self.kind == "linear":
            return min(self.speed, 0.0) * u
        if self.kind == "burgers":
            return 0.5 * np.minimum(u, 0.0) ** 2
        return self._piecewise_part(u, positive=False)

    def eo_flux(self, ul, ur):
        """Engquist-Osher two-point flux."""
        a0 = float(self.A(0.0))
        return a0 + self.apos(ul) + self.aneg(ur)

    def sup_abs_a(self, lo: float, hi: float) -> float:
        """sup |a| over [lo, hi]: endpoints plus interior critical points."""
        if self.kind == "zero":
            return 0.0
        if self.kind == "linear":
            return abs(self.speed)
        cand = [lo, hi]
        cand.extend(r for r in self._crit if lo < r < hi)
        return float(np.max(np.abs(self.a(np.array(cand)))))

    # -- internal piecewise machinery for polynomial kind -------------------

    def _build_piecewise(self):
        empty = np.empty(0)
        if self.kind != "polynomial":
            for name in ("_a_roots", "_take_pos", "_take_neg", "_phi_pos",
                         "_phi_neg"):
                object.__setattr__(self, name, empty)
            crit = np.array([0.0]) if self.kind == "burgers" else empty
            object.__setattr__(self, "_crit", crit)
            return
        pa = Polynomial(self.coeffs).deriv()
        object.__setattr__(self, "_da_coeffs", tuple(pa.coef))
        roots = pa.roots() if pa.degree() >= 1 else np.empty(0, dtype=complex)
        real = np.sort(np.real(roots[np.abs(np.imag(roots)) < 1e-9]))
        # merge numerically coincident roots
        keep = []
        for r in real:
            if not keep or r - keep[-1] > 1e-9 * max(1.0, abs(r)):
                keep.append(float(r))
        knots = np.array(keep)
        # second-derivative roots, for range maximization of |a|
        paa = pa.deriv()
        croots = paa.roots() if paa.degree() >= 1 else np.empty(0, dtype=complex)
        crit = np.sort(np.real(croots[np.abs(np.imag(croots)) < 1e-9]))
        object.__setattr__(self, "_crit", crit)
        object.__setattr__(self, "_a_roots", knots)
        # constant sign of a on each of the m+1 intervals between knots
        if knots.size:
            mids = np.concatenate([[knots[0] - 1.0],
                                   0.5 * (knots[:-1] + knots[1:]),
                                   [knots[-1] + 1.0]])
        else:
            mids = np.array([0.0])
        sgn = np.sign(np.polynomial.polynomial.polyval(mids, self._da_coeffs))
        object.__setattr__(self, "_take_pos", (sgn > 0).astype(float))
        object.__setattr__(self, "_take_neg", (sgn < 0).astype(float))
        # cumulative antiderivative values at the knots, anchored at knots[0]
        for attr, take in (("_phi_pos", self._take_pos),
                           ("_phi_neg", self._take_neg)):
            phi = np.zeros(max(knots.size, 1))
            if knots.size > 1:
                jumps = take[1:-1] * np.diff(self.A(knots))
                phi[1:] = np.cumsum(jumps)
            object.__setattr__(self, attr, phi)

    def _piecewise_part(self, u, positive: bool):
        take = self._take_pos if positive else self._take_neg
        phi = self._phi_pos if positive else self._phi_neg
        knots = self._a_roots
        if knots.size == 0:
            scale = take[0]
            return scale * (self.A(u) - self.A(0.0))

        def antider(x):
            x = np.atleast_1d(np.asarray(x, dtype=float))
            j = np.searchsorted(knots, x)
            left = np.maximum(j - 1, 0)
            ref = knots[np.where(j == 0, 0, left)]
            base = np.where(j == 0, 0.0, phi[left])
            return base + take[j] * (self.A(x) - self.A(ref))

        out = antider(u) - antider(0.0)[0]
        return out.reshape(np.shape(u))


def make_flux(kind: str, *, growth_power: float = 2.0, growth_const: float = 1.0,
              speed: float = 0.0, coeffs=()) -> FluxModel:
    return FluxModel(kind=kind, growth_power=growth_power,
                     growth_const=growth_const, speed=speed,
                     coeffs=tuple(coeffs))


# ---------------------------------------------------------------------------
# noise models


@dataclass(frozen=True)
class NoiseMode:
    """One forcing mode sigma * phi(x) * (alpha + beta * u)."""

    sigma: float
    profile: str = "constant"
    wavenumber: int = 1
    alpha: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        if self.profile not in PROFILE_KINDS:
            raise ValueError(f"unknown profile kind: {self.profile}")
        if self.profile != "constant" and self.wavenumber < 1:
            raise ValueError(f"wavenumber must be >= 1, got {self.wavenumber}")

    def phi(self, x):
        x = np.asarray(x, dtype=float)
        if self.profile == "constant":
            return np.ones_like(x)
        w = 2.0 * np.pi * self.wavenumber
        return np.cos(w * x) if self.profile == "cos" else np.sin(w * x)

    @property
    def profile_slope(self) -> float:
        """Lipschitz constant of phi on the torus."""
        if self.profile == "constant":
            return 0.0
        return 2.0 * np.pi * self.wavenumber


@dataclass(frozen=True)
class NoiseModel:
    """Finite family of affine noise modes with derived certificate constants.

    Per-mode constants (certified for |u| <= state_bound):

        C0_k = |sigma_k| * (|alpha_k| + |beta_k|)
        C1_k = |sigma_k| * max(Lphi_k * (|alpha_k| + |beta_k| * state_bound),
                               |beta_k|)

    and the aggregates D0 = 2 * sum C0_k^2, D1 = 2 * sum C1_k^2.  The
    x-Lipschitz part of C1 cannot be state-uniform when a varying
    profile multiplies a state-dependent factor, which is why the
    certificate is tied to a bounded state range.
    """

    modes: tuple[NoiseMode, ...]
    state_bound: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        if self.state_bound <= 0:
            raise ValueError("state_bound must be positive")

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    def mode_growth_consts(self) -> np.ndarray:
        return np.array([abs(m.sigma) * (abs(m.alpha) + abs(m.beta))
                         for m in self.modes])

    def mode_lipschitz_consts(self) -> np.ndarray:
        out = []
        for m in self.modes:
            space = m.profile_slope * (abs(m.alpha) + abs(m.beta) * self.state_bound)
            state = abs(m.beta)
            out.append(abs(m.sigma) * max(space, state))
        return np.array(out)

    @property
    def D0(self) -> float:
        c = self.mode_growth_consts()
        return float(2.0 * np.sum(c * c))

    @property
    def D1(self) -> float:
        c = self.mode_lipschitz_consts()
        return float(2.0 * np.sum(c * c))

    def g(self, k: int, x, u):
        """Evaluate mode k at positions x and states u (broadcasting)."""
        m = self.modes[k]
        return m.sigma * m.phi(x) * (m.alpha + m.beta * np.asarray(u, dtype=float))

    def affine_parts(self, x) -> tuple[np.ndarray, np.ndarray]:
        """(P0, P1) with g_k(x, u) = P0[k] + P1[k] * u, each shaped (K, len(x)).

        Precomputed once per grid by the solvers; the per-step noise
        increment is then amp * (P0^T db + (P1^T db) * u).
        """
        x = np.asarray(x, dtype=float)
        if not self.modes:
            return np.zeros((0, x.size)), np.zeros((0, x.size))
        p0 = np.stack([m.sigma * m.alpha * m.phi(x) for m in self.modes])
        p1 = np.stack([m.sigma * m.beta * m.phi(x) for m in self.modes])
        return p0, p1

    def g_sq_sum(self, x, u):
        """G^2(x, u) = sum_k g_k(x, u)^2."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        total = np.zeros(np.broadcast(x, u).shape)
        for k in range(self.n_modes):
            gk = self.g(k, x, u)
            total = total + gk * gk
        return total


def additive_noise(scale: float = 1.0) -> NoiseModel:
    """Single constant mode g(x, u) = scale."""
    return NoiseModel(modes=(NoiseMode(sigma=scale, alpha=1.0, beta=0.0),))


# ---------------------------------------------------------------------------
# certificate validation


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    worst_ratio: float
    worst_point: tuple[float, ...]


@dataclass(frozen=True)
class ValidationReport:
    subject: str
    checks: tuple[CheckResult, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> list[str]:
        out = [f"{self.subject}: {'PASS' if self.passed else 'FAIL'}"]
        for c in self.checks:
            pt = ", ".join(f"{v:.6g}" for v in c.worst_point)
            out.append(f"  {'PASS' if c.passed else 'FAIL'}  {c.name}  "
                       f"worst_ratio={c.worst_ratio:.6g}  at ({pt})")
        return out


def _ratio_check(name: str, lhs: np.ndarray, rhs: np.ndarray,
                 points: list[np.ndarray]) -> CheckResult:
    """Worst lhs/rhs over a lattice; passes when lhs <= rhs everywhere.

    A relative slack of 1e-12 absorbs roundoff at points where the
    inequality is attained with equality.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, lhs / rhs, np.where(lhs > 0, np.inf, 0.0))
    flat = int(np.argmax(ratio))
    worst = float(ratio.flat[flat])
    idx = np.unravel_index(flat, ratio.shape)
    point = tuple(float(np.broadcast_to(p, ratio.shape)[idx]) for p in points)
    return CheckResult(name, worst <= 1.0 + 1e-12, worst, point)


def validate_flux(flux: FluxModel, r_val: float = 10.0,
                  lattice_n: int = 1024) -> ValidationReport:
    """Check the declared growth and local-Lipschitz certificates of a
    on the lattice xi, zeta in [-r_val, r_val]."""
    if r_val <= 0 or lattice_n < 2:
        raise ValueError("need r_val > 0 and lattice_n >= 2")
    xi = np.linspace(-r_val, r_val, lattice_n)
    checks = [
        _ratio_check("speed_growth", np.abs(flux.a(xi)),
                     flux.growth_envelope(xi), [xi]),
    ]
    zeta = xi[:, None]
    diff = np.abs(flux.a(xi)[None, :] - flux.a(zeta))
    env = flux.lipschitz_envelope(xi[None, :], zeta) * np.abs(xi[None, :] - zeta)
    mask = np.abs(xi[None, :] - zeta) > 0
    checks.append(_ratio_check(
        "speed_local_lipschitz",
        np.where(mask, diff, 0.0), np.where(mask, env, 1.0),
        [np.broadcast_to(xi[None, :], env.shape),
         np.broadcast_to(zeta, env.shape)]))
    return ValidationReport(f"flux[{flux.kind}]", tuple(checks))


def validate_noise(noise: NoiseModel, r_val: float = 10.0,
                   lattice_n: int = 1024) -> ValidationReport:
    """Check per-mode growth/Lipschitz and the aggregate D0/D1 bounds.

    1-D state lattices use lattice_n points; the four-variable Lipschitz
    inequalities use a coarser product sub-lattice (25 points per space
    axis, 51 per state axis), which is the testable surrogate for the
    continuum statement.
    """
    if r_val <= 0 or lattice_n < 2:
        raise ValueError("need r_val > 0 and lattice_n >= 2")
    u = np.linspace(-r_val, r_val, lattice_n)
    x = np.linspace(0.0, 1.0, 65, endpoint=False)
    c0 = noise.mode_growth_consts()
    c1 = noise.mode_lipschitz_consts()
    checks: list[CheckResult] = []

    xs = np.linspace(0.0, 1.0, 25, endpoint=False)
    us = np.linspace(-r_val, r_val, 51)
    x1 = xs[:, None, None, None]
    x2 = xs[None, :, None, None]
    u1 = us[None, None, :, None]
    u2 = us[None, None, None, :]
    dx_axis = np.abs(x1 - x2)
    du_axis = np.abs(u1 - u2)
    sum_sq = np.zeros(np.broadcast_shapes(x1.shape, x2.shape, u1.shape, u2.shape))

    for k in range(noise.n_modes):
        gk = np.abs(noise.g(k, x[:, None], u[None, :]))
        checks.append(_ratio_check(
            f"mode{k}_growth", gk, c0[k] * (1.0 + np.abs(u[None, :])),
            [np.broadcast_to(x[:, None], gk.shape),
             np.broadcast_to(u[None, :], gk.shape)]))
        dg = np.abs(noise.g(k, x1, u1) - noise.g(k, x2, u2))
        checks.append(_ratio_check(
            f"mode{k}_lipschitz", dg, c1[k] * (dx_axis + du_axis + 0.0),
            [np.broadcast_to(x1, dg.shape), np.broadcast_to(x2, dg.shape),
             np.broadcast_to(u1, dg.shape), np.broadcast_to(u2, dg.shape)]))
        sum_sq = sum_sq + dg * dg

    gsq = noise.g_sq_sum(x[:, None], u[None, :])
    checks.append(_ratio_check(
        "sum_sq_growth", gsq, noise.D0 * (1.0 + u[None, :] ** 2),
        [np.broadcast_to(x[:, None], gsq.shape),
         np.broadcast_to(u[None, :], gsq.shape)]))
    if noise.n_modes:
        checks.append(_ratio_check(
            "sum_sq_lipschitz", sum_sq,
            noise.D1 * (dx_axis ** 2 + du_axis ** 2),
            [np.broadcast_to(x1, sum_sq.shape), np.broadcast_to(x2, sum_sq.shape),
             np.broadcast_to(u1, sum_sq.shape), np.broadcast_to(u2, sum_sq.shape)]))
    consts_ok = (abs(noise.D0 - 2.0 * float(np.sum(c0 * c0))) == 0.0
                 and abs(noise.D1 - 2.0 * float(np.sum(c1 * c1))) == 0.0)
    checks.append(CheckResult("aggregate_consts", consts_ok,
                              0.0 if consts_ok else np.inf, ()))
    return ValidationReport(f"noise[{noise.n_modes} modes]", tuple(checks))


# ---------------------------------------------------------------------------
# counter-keyed Brownian increments


@dataclass(frozen=True)
class NoisePath:
    """Per-step, per-mode Brownian increments with variance dt.

    The block of standard normals for a path is a pure function of the
    counter-based key (seed, stream, path_index): seed and stream form
    the Philox key, path_index sits in the high counter word.  The
    increment at (step, mode) therefore never depends on generation
    order or on how many other paths were sampled, which is what makes
    multi-threaded tallies bitwise reproducible.
    """

    seed: int
    stream: int
    path_index: int
    dt: float
    increments: np.ndarray

    def __post_init__(self):
        inc = np.array(self.increments, dtype=float, copy=True)
        if inc.ndim != 2:
            raise ValueError("increments must be (steps, modes)")
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    @property
    def n_modes(self) -> int:
        return self.increments.shape[1]

    @classmethod
    def generate(cls, seed: int, stream: int, path_index: int,
                 n_steps: int, n_modes: int, dt: float) -> "NoisePath":
        if seed < 0 or stream < 0 or path_index < 0:
            raise ValueError("seed, stream and path_index must be nonnegative")
        if n_steps < 1 or dt <= 0:
            raise ValueError("need n_steps >= 1 and dt > 0")
        bits = np.random.Philox(
            counter=[0, 0, path_index, 0],
            key=[seed & 0xFFFFFFFFFFFFFFFF, stream & 0xFFFFFFFFFFFFFFFF])
        z = np.random.Generator(bits).standard_normal((n_steps, max(n_modes, 0)))
        return cls(seed, stream, path_index, dt, math.sqrt(dt) * z)

    def coarsen(self, factor: int) -> "NoisePath":
        """Aggregate consecutive increments: the same Brownian path on a
        grid coarsened by an integer factor."""
        if factor < 1 or self.n_steps % factor:
            raise ValueError(f"factor {factor} does not divide {self.n_steps} steps")
        inc = self.increments.reshape(self.n_steps // factor, factor,
                                      self.n_modes).sum(axis=1)
        return NoisePath(self.seed, self.stream, self.path_index,
                         self.dt * factor, inc)


# ---------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class SimConfig:
    """Static description of one stochastic run on the unit horizon.

    Exactly one time-step policy applies: an explicit dt (must divide
    the horizon) or a CFL-derived dt.  ``cfl_fraction`` doubles as the
    ceiling of the per-step Courant certificate even when dt is
    explicit.
    """

    epsilon: float
    cells: int
    seed: int
    dt: float | None = None
    cfl_fraction: float = 0.45
    horizon: float = 1.0
    splitting: str = "lie"
    save_stride: int = 1

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if self.cells < 2:
            raise ValueError(f"cells must be >= 2, got {self.cells}")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive when given")
        if not 0.0 < self.cfl_fraction < 1.0:
            raise ValueError(
                f"cfl_fraction must lie in (0, 1), got {self.cfl_fraction}")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.splitting not in ("lie", "strang"):
            raise ValueError(f"unknown splitting: {self.splitting}")
        if self.save_stride < 1:
            raise ValueError("save_stride must be >= 1")
        if self.dt is not None:
            n = round(self.horizon / self.dt)
            if n < 1 or abs(n * self.dt - self.horizon) > 1e-9 * max(1.0, self.horizon):
                raise ValueError(
                    f"dt={self.dt} does not divide horizon={self.horizon}")

    @property
    def grid(self) -> "TorusGrid":
        from .grid import TorusGrid
        return TorusGrid(self.cells)
