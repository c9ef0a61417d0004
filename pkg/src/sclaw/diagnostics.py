"""Kinetic-formulation diagnostics and pathwise certificate checks.

Everything here works with the level-set (kinetic) picture of a pair of
fields u, v: the indicator f(x, xi) = 1_{u(x) > xi}, its conjugate
1 - f, and smoothed products against the mollifier pair.  The central
object is the doubling functional

    R(u, v) = sum_{x,y} rho_gamma(x - y) * delta * [ Xi((u(x)-v(y))/delta)
                                                   + Xi((v(y)-u(x))/delta) ] dx dy

which is the exact xi,zeta-integral of the smoothed kinetic products:
for the wedge {xi < a, zeta >= b},

    int int psi_delta(xi - zeta) dxi dzeta = delta * Xi((a - b)/delta),

and symmetrically for the opposite wedge.  A brute-force adaptive
quadrature of the same wedges is kept as an independent cross-check.

Discrete kernel sums use the unit-mass spatial weights of the
MollifierPair, so the continuum inequalities for the error term and the
J-type certificates transfer to the grid exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import dblquad

from .grid import ScalarField, Trajectory
from .mollifier import MollifierPair, kernel_tables, psi_scalar, psi_sup
from .models import FluxModel, NoiseModel, NoisePath
from .solvers import lp_moment

# 12-point Gauss-Legendre rule for the speed-weighted wedge integrals
_GL12_NODES, _GL12_WEIGHTS = np.polynomial.legendre.leggauss(12)

Pair = tuple[Trajectory, Trajectory]


# ---------------------------------------------------------------------------
# state-variable quadratures


def _xi_grid(lo: float, hi: float, dxi: float) -> np.ndarray:
    n = int(np.ceil((hi - lo) / dxi))
    return lo + (np.arange(n) + 0.5) * dxi


def bracket_identity(u: ScalarField, v: ScalarField, dxi: float,
                     xi_lo: float | None = None,
                     xi_hi: float | None = None) -> tuple[float, float]:
    """Midpoint xi-quadrature of the two kinetic products.

    Returns (plus, minus) approximating the integrals of
    1_{u > xi} * 1_{v <= xi} and 1_{v > xi} * 1_{u <= xi} over x and xi,
    which collapse to int (u - v)^+ dx and int (u - v)^- dx.  The xi
    grid must cover both field ranges with a unit margin; by default it
    is built to do so.
    """
    if dxi <= 0:
        raise ValueError("dxi must be positive")
    if u.grid.cells != v.grid.cells:
        raise ValueError("fields must share a grid")
    lo = min(u.values.min(), v.values.min()) - 1.0
    hi = max(u.values.max(), v.values.max()) + 1.0
    if xi_lo is not None or xi_hi is not None:
        if xi_lo is None or xi_hi is None or xi_lo > lo or xi_hi < hi:
            raise ValueError(
                f"xi grid [{xi_lo}, {xi_hi}] does not cover the field ranges "
                f"[{lo}, {hi}] (unit margin included)")
        lo, hi = xi_lo, xi_hi
    xi = _xi_grid(lo, hi, dxi)
    dx = u.grid.dx
    # number of midpoints strictly below a value, exact on the sorted grid
    below_u = np.searchsorted(xi, u.values)
    below_v = np.searchsorted(xi, v.values)
    plus = dx * dxi * np.maximum(below_u - below_v, 0).sum()
    minus = dx * dxi * np.maximum(below_v - below_u, 0).sum()
    return float(plus), float(minus)


def direct_brackets(u: ScalarField, v: ScalarField) -> tuple[float, float]:
    """Exact right-hand sides int (u-v)^+ dx and int (u-v)^- dx."""
    d = u.values - v.values
    dx = u.grid.dx
    return (float(dx * np.sum(np.maximum(d, 0.0))),
            float(dx * np.sum(np.maximum(-d, 0.0))))


def correction_mass(u: ScalarField, dxi: float) -> float:
    """Mass of the kinetic correction |1_{u > xi} - 1_{0 > xi}|.

    The correction is supported between 0 and u(x), so the exact value
    is the L1 norm of u; the quadrature counts xi midpoints in between.
    """
    if dxi <= 0:
        raise ValueError("dxi must be positive")
    lo = min(float(u.values.min()), 0.0) - 1.0
    hi = max(float(u.values.max()), 0.0) + 1.0
    xi = _xi_grid(lo, hi, dxi)
    below_u = np.searchsorted(xi, u.values)
    below_0 = np.searchsorted(xi, 0.0)
    return float(u.grid.dx * dxi * np.abs(below_u - below_0).sum())


# ---------------------------------------------------------------------------
# doubling functional


def doubling_functional(u: ScalarField, v: ScalarField, moll: MollifierPair,
                        method: str = "closed") -> float:
    """Kernel-smoothed kinetic overlap of two fields (see module docstring).

    method="closed" evaluates the exact Xi reduction through the kernel
    tables; method="bruteforce" integrates psi_delta over both wedges
    with adaptive 2-D quadrature per cell pair (small grids only).
    """
    if u.grid.cells != v.grid.cells:
        raise ValueError("fields must share a grid")
    offs, w = moll.spatial_weights(u.grid)
    dx = u.grid.dx
    delta = moll.delta
    if method == "closed":
        tab = kernel_tables()
        total = 0.0
        for d, wd in zip(offs, w):
            diff = (u.values - np.roll(v.values, d)) / delta
            total += wd * float(np.sum(tab.Xi(diff) + tab.Xi(-diff)))
        return float(total * delta * dx)
    if method == "bruteforce":
        total = 0.0
        for d, wd in zip(offs, w):
            vy = np.roll(v.values, d)
            total += wd * sum(_wedges_quadrature(a, b, moll)
                              for a, b in zip(u.values, vy))
        return float(total * dx)
    raise ValueError(f"unknown method: {method}")


def _wedges_quadrature(a: float, b: float, moll: MollifierPair) -> float:
    """T+ + T- for one (a, b) pair by adaptive 2-D quadrature.

    T+ integrates psi_delta(xi - zeta) over {xi < a, zeta >= b}, which
    meets the kernel support only for xi in (b - delta, a); T- covers
    the opposite wedge {xi >= a, zeta < b}.
    """
    delta = moll.delta
    kw = dict(epsabs=1e-9, epsrel=1e-9)

    def psi_d(z, x):
        return psi_scalar((x - z) / delta) / delta

    tp = 0.0
    if a > b - delta:
        tp, _ = dblquad(psi_d, b - delta, a,
                        lambda x: b, lambda x: x + delta, **kw)
    tm = 0.0
    if a < b + delta:
        tm, _ = dblquad(psi_d, a, b + delta,
                        lambda x: x - delta, lambda x: b, **kw)
    return tp + tm


def shift_modulus(v: ScalarField, gamma: float) -> float:
    """L1 modulus of continuity over the kernel-resolvable grid shifts:
    max over offsets |d * dx| < gamma of int |v(x - d dx) - v(x)| dx."""
    moll_offsets = int(np.ceil(gamma * v.grid.cells)) - 1
    if moll_offsets < 1:
        return 0.0
    out = 0.0
    for d in range(1, moll_offsets + 1):
        for s in (d, -d):
            out = max(out, float(np.abs(np.roll(v.values, s) - v.values).sum()
                                 * v.grid.dx))
    return out


def error_term(u: ScalarField, v: ScalarField, moll: MollifierPair) -> float:
    """Defect of the doubling functional against the exact L1 bracket:

        E = R(u, v) - int (u - v)^+ dx - int (u - v)^- dx.

    |E| <= 4*delta + 2*omega_v(gamma) with omega the grid shift modulus;
    the smoothing-in-state part contributes at most 4*delta and the
    kernel off-diagonal at most twice the modulus.
    """
    plus, minus = direct_brackets(u, v)
    return doubling_functional(u, v, moll) - plus - minus


def smoothing_defect(u: ScalarField, v: ScalarField, moll: MollifierPair) -> float:
    """The state-smoothing part of the error term alone:

        H2 = R(u, v) - sum_{x,y} rho_gamma(x - y) |u(x) - v(y)| dx dy,

    bounded by 4*delta pointwise under the unit-mass discrete kernel.
    """
    offs, w = moll.spatial_weights(u.grid)
    dx = u.grid.dx
    diag = 0.0
    for d, wd in zip(offs, w):
        diag += wd * float(np.abs(u.values - np.roll(v.values, d)).sum())
    return doubling_functional(u, v, moll) - diag * dx


# ---------------------------------------------------------------------------
# pathwise certificates


@dataclass(frozen=True)
class BoundReport:
    """One certificate instance: lhs <= rhs with its run context."""

    name: str
    lhs: float
    rhs: float
    epsilon: float
    gamma: float
    delta: float
    path_index: int = 0

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs

    def csv_row(self) -> str:
        cols = [self.name, str(self.path_index), repr(self.epsilon),
                repr(self.gamma), repr(self.delta), repr(self.lhs),
                repr(self.rhs), str(self.passed).lower()]
        return ",".join(cols)


BOUND_CSV_HEADER = "name,path,epsilon,gamma,delta,lhs,rhs,pass"


def write_bound_reports(reports: list[BoundReport], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(BOUND_CSV_HEADER + "\n")
        for r in reports:
            fh.write(r.csv_row() + "\n")


def _pair_arrays(pair: Pair) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    u, v = pair
    if u.grid.cells != v.grid.cells or not np.array_equal(u.times, v.times):
        raise ValueError("coupled pair must share grid and time grid")
    return u.values, v.values, u.times


def bound_check_J(pair: Pair, moll: MollifierPair, epsilon: float,
                  noise: NoiseModel, path_index: int = 0
                  ) -> tuple[BoundReport, BoundReport]:
    """Evaluate both smoothing-cost certificates along a coupled pair.

    With D1 the aggregate noise Lipschitz constant, w the unit-mass
    kernel weights over offsets z and psi_d the state kernel,

        J1 = eps*D1 * int_t sum_z w(z) z^2 sum_x psi_d(u - v_z) dx
           <= eps*D1 * gamma^2 / delta
        J2 = eps*D1 * int_t sum_z w(z) sum_x psi_d(u - v_z) (u - v_z)^2
                      1_{|u - v_z| <= delta} dx
           <= eps*D1 * delta * C_psi

    Time integrals are left-endpoint sums over the saved snapshots.
    """
    uvals, vvals, times = _pair_arrays(pair)
    grid = pair[0].grid
    offs, w = moll.spatial_weights(grid)
    z = offs * grid.dx
    delta = moll.delta
    d1 = noise.D1
    wts = np.diff(times)
    j1_t = np.zeros(len(times) - 1)
    j2_t = np.zeros(len(times) - 1)
    u = uvals[:-1]
    for d, wd, zd in zip(offs, w, z):
        diff = u - np.roll(vvals[:-1], d, axis=1)
        psi_vals = moll.psi_delta(diff)
        j1_t += wd * zd * zd * psi_vals.sum(axis=1)
        inside = np.abs(diff) <= delta
        j2_t += wd * np.sum(psi_vals * diff * diff * inside, axis=1)
    dx = grid.dx
    j1 = epsilon * d1 * float(np.dot(wts, j1_t)) * dx
    j2 = epsilon * d1 * float(np.dot(wts, j2_t)) * dx
    r1 = BoundReport("J1", j1, epsilon * d1 * moll.gamma ** 2 / delta,
                     epsilon, moll.gamma, delta, path_index)
    r2 = BoundReport("J2", j2, epsilon * d1 * delta * psi_sup(),
                     epsilon, moll.gamma, delta, path_index)
    return r1, r2


def _wedge_values(a: np.ndarray, b: np.ndarray, flux: FluxModel,
                  moll: MollifierPair) -> np.ndarray:
    """W+(a,b) + W-(a,b): the speed-weighted kinetic wedges.

        W+(a,b) = int_{xi < a} a(xi) X_delta(xi - b) dxi
        W-(a,b) = int_{xi >= a} a(xi) (1 - X_delta(xi - b)) dxi

    Both integrands vanish outside (b - delta, b + delta) except for the
    flat tail of W+ above b + delta (resp. of W- below b - delta), which
    integrates the plain speed and is the exact flux difference A(.)-A(.).
    The banded parts use fixed 12-point Gauss against the tabulated CDF.
    """
    delta = moll.delta
    tab = kernel_tables()

    def band(lo, hi, conj: bool):
        half = 0.5 * np.maximum(hi - lo, 0.0)
        mid = 0.5 * (hi + lo)
        nodes = mid[:, None] + half[:, None] * _GL12_NODES[None, :]
        xfac = tab.X((nodes - b[:, None]) / delta)
        if conj:
            xfac = 1.0 - xfac
        integ = flux.a(nodes) * xfac
        return half * (integ @ _GL12_WEIGHTS)

    wplus = band(b - delta, np.minimum(a, b + delta), conj=False)
    wplus = wplus + np.where(a > b + delta, flux.A(a) - flux.A(b + delta), 0.0)
    wminus = band(np.maximum(a, b - delta), b + delta, conj=True)
    wminus = wminus + np.where(a < b - delta, flux.A(b - delta) - flux.A(a), 0.0)
    return wplus + wminus


def transport_term(pair: Pair, moll: MollifierPair, epsilon: float,
                   flux: FluxModel) -> float:
    """Signed transport contribution along the pair:

        I = eps * int_t sum_z rho_gamma'(z) dx sum_x [W+ + W-](u(x), v(x-z)) dx
    """
    uvals, vvals, times = _pair_arrays(pair)
    grid = pair[0].grid
    offs, gw = moll.gradient_weights(grid)
    wts = np.diff(times)
    total_t = np.zeros(len(times) - 1)
    u = uvals[:-1]
    for d, gwd in zip(offs, gw):
        if gwd == 0.0:
            continue
        b = np.roll(vvals[:-1], d, axis=1)
        vals = _wedge_values(u.ravel(), b.ravel(), flux, moll)
        total_t += gwd * vals.reshape(u.shape).sum(axis=1)
    return epsilon * float(np.dot(wts, total_t)) * grid.dx


def bound_check_I(pair: Pair, moll: MollifierPair, epsilon: float,
                  flux: FluxModel, path_index: int = 0) -> BoundReport:
    """Certificate for the transport term via the growth envelope of a:

        |I| <= (2 eps N Cq / gamma) * (1 + delta^(q0+1))
             + (2 eps N Cq / gamma) * (max_t ||u||_{q0+1}^{q0+1}
                                       + max_t ||v||_{q0+1}^{q0+1})

    with Cq = max(1, 2^q0).
    """
    lhs = abs(transport_term(pair, moll, epsilon, flux))
    q0 = flux.growth_power
    cq = max(1.0, 2.0 ** q0)
    lead = 2.0 * epsilon * flux.growth_const * cq / moll.gamma
    mom_u = lp_moment(pair[0], q0 + 1.0)
    mom_v = lp_moment(pair[1], q0 + 1.0)
    rhs = lead * (1.0 + moll.delta ** (q0 + 1.0)) + lead * (mom_u + mom_v)
    return BoundReport("I", lhs, rhs, epsilon, moll.gamma, moll.delta,
                       path_index)


# ---------------------------------------------------------------------------
# martingale diagnostic


def martingale_path(pair: Pair, moll: MollifierPair, noise: NoiseModel,
                    epsilon: float, path: NoisePath
                    ) -> tuple[np.ndarray, float]:
    """Accumulate the stochastic boundary term K(t) along one pair.

    Per step j (state taken at the left endpoint) and mode k,

        S_k = sum_z w(z) sum_x (g_k(x, u) - g_k(x - z, v(x - z)))
                              * X((u(x) - v(x - z))/delta) dx,
        K increment = 2 sqrt(eps) * sum_k S_k * db_k,

    and the predictable bracket is <K>(1) = 4 eps int sum_k S_k^2 dt.
    Requires the pair saved at every step (stride 1) so states align
    with the increments of the driving path.
    """
    uvals, vvals, times = _pair_arrays(pair)
    if len(times) != path.n_steps + 1:
        raise ValueError("martingale accumulation needs save_stride 1 "
                         "(one snapshot per increment)")
    grid = pair[0].grid
    offs, w = moll.spatial_weights(grid)
    p0, p1 = noise.affine_parts(grid.centers)
    tab = kernel_tables()
    dx = grid.dx
    delta = moll.delta
    amp = 2.0 * math.sqrt(epsilon)
    n = path.n_steps
    kpath = np.zeros(n + 1)
    qv = 0.0
    for j in range(n):
        u = uvals[j]
        v = vvals[j]
        gu = p0 + p1 * u
        gv = p0 + p1 * v
        s_k = np.zeros(noise.n_modes)
        for d, wd in zip(offs, w):
            xfac = tab.X((u - np.roll(v, d)) / delta)
            s_k += wd * ((gu - np.roll(gv, d, axis=1)) @ xfac)
        s_k *= dx
        kpath[j + 1] = kpath[j] + amp * float(s_k @ path.increments[j])
        qv += float(s_k @ s_k) * (times[j + 1] - times[j])
    return kpath, 4.0 * epsilon * qv


@dataclass(frozen=True)
class MartingaleReport:
    n_paths: int
    mean_final: float
    ci_lo: float
    ci_hi: float
    mean_sup_sq: float
    doob_bound: float
    slack: float

    @property
    def mean_covers_zero(self) -> bool:
        return self.ci_lo <= 0.0 <= self.ci_hi

    @property
    def doob_ok(self) -> bool:
        return self.mean_sup_sq <= self.doob_bound + self.slack

    @property
    def passed(self) -> bool:
        return self.mean_covers_zero and self.doob_ok


def martingale_diagnostic(ensemble: list[tuple[np.ndarray, float]]
                          ) -> MartingaleReport:
    """Aggregate K-paths: zero-mean check and the p=2 Doob inequality.

    The mean of K(1) gets a normal 95% CI; the Doob check compares the
    Monte Carlo means of sup_t K^2 and 4<K>(1) allowing three standard
    errors of each side as slack.  Tallies run through math.fsum so the
    result does not depend on accumulation order.
    """
    n = len(ensemble)
    if n < 100:
        raise ValueError(f"need at least 100 paths, got {n}")
    finals = [float(k[-1]) for k, _ in ensemble]
    sups = [float(np.max(k * k)) for k, _ in ensemble]
    mean_f = math.fsum(finals) / n
    var_f = math.fsum((f - mean_f) ** 2 for f in finals) / max(n - 1, 1)
    half = 1.959963984540054 * math.sqrt(var_f / n)
    mean_sup = math.fsum(sups) / n
    mean_br = math.fsum(q for _, q in ensemble) / n
    var_sup = math.fsum((s - mean_sup) ** 2 for s in sups) / max(n - 1, 1)
    var_br = math.fsum((q - mean_br) ** 2 for _, q in ensemble) / max(n - 1, 1)
    slack = 3.0 * (math.sqrt(var_sup / n) + 4.0 * math.sqrt(var_br / n))
    return MartingaleReport(n, mean_f, mean_f - half, mean_f + half,
                            mean_sup, 4.0 * mean_br, slack)
