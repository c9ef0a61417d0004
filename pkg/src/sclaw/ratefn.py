"""Control action and rate estimation by penalty optimization.

The reachable-trajectory problem "which controls steer the forced ODE to
a target path, and at what quadratic cost" is solved approximately over
piecewise-constant controls: minimize action + lambda * residual^2 for
an increasing ladder of penalties, warm-starting each rung from the
previous optimum.  Both the final residual and the action are reported,
so the gap between the penalized surrogate and the hard constraint stays
visible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalFailure
from .grid import ScalarField, Trajectory
from .harness import l1l1_distance
from .models import NoiseModel
from .solvers import solve_skeleton

DIMENSION_CAP = 512


@dataclass(frozen=True)
class Control:
    """Piecewise-constant control: values[k, b] on B uniform bins of [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[1] < 1:
            raise ValueError(f"control values must be (modes, bins), "
                             f"got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("control values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n_modes(self) -> int:
        return self.values.shape[0]

    @property
    def bins(self) -> int:
        return self.values.shape[1]


def action(h: Control) -> float:
    """(1/2) sum_k integral |h_k|^2: exact for piecewise-constant controls."""
    v = h.values
    return 0.5 * float((v * v).sum()) / h.bins


def refine_control(h: Control) -> Control:
    """Same function on twice as many bins (exact piecewise embedding)."""
    return Control(np.repeat(h.values, 2, axis=1))


def uniform_times(n_steps: int) -> np.ndarray:
    times = np.arange(n_steps + 1) * (1.0 / n_steps)
    times[-1] = 1.0
    return times


def drift_target(eta: ScalarField, slope: float, n_steps: int) -> Trajectory:
    """Target path eta + slope * t on the skeleton time grid."""
    times = uniform_times(n_steps)
    return Trajectory(eta.grid, times,
                      eta.values[None, :] + slope * times[:, None])


def constant_target(eta: ScalarField, n_steps: int) -> Trajectory:
    return Trajectory(eta.grid, uniform_times(n_steps),
                      np.tile(eta.values, (n_steps + 1, 1)))


def _match_time_grid(rho_target: Trajectory, skel: Trajectory) -> Trajectory:
    if np.array_equal(rho_target.times, skel.times):
        return rho_target
    if rho_target.times.shape == skel.times.shape and np.allclose(
            rho_target.times, skel.times, rtol=0.0, atol=1e-12):
        return Trajectory(rho_target.grid, skel.times, rho_target.values)
    raise ValueError("target must live on the uniform skeleton time grid")


def skeleton_residual(h: Control, rho_target: Trajectory, noise: NoiseModel,
                      eta: ScalarField | None = None) -> float:
    """L1-in-time, L1-in-space distance between the driven skeleton and
    the target.  The skeleton starts from eta (default: the target's
    initial snapshot) and integrates on the target's own time grid."""
    n_steps = len(rho_target.times) - 1
    if n_steps % h.bins:
        raise ValueError(f"target steps {n_steps} must be a multiple of "
                         f"control bins {h.bins}")
    if eta is None:
        eta = rho_target.field(0)
    skel = solve_skeleton(eta, h.values, noise, n_steps)
    return l1l1_distance(skel, _match_time_grid(rho_target, skel))


def penalty_objective(h: Control, lam: float, rho_target: Trajectory,
                      noise: NoiseModel,
                      eta: ScalarField | None = None) -> float:
    res = skeleton_residual(h, rho_target, noise, eta)
    phi = action(h) + lam * res * res
    if not math.isfinite(phi):
        raise NumericalFailure("non-finite penalty objective")
    return phi


def central_gradient(fn, x: np.ndarray, step: float) -> np.ndarray:
    """Central finite differences of a scalar function, one coordinate
    at a time."""
    g = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        g[i] = (fn(xp) - fn(xm)) / (2.0 * step)
    return g


def _residuals_batch(flats: np.ndarray, n_modes: int, bins: int,
                     rho_target: Trajectory, noise: NoiseModel,
                     eta: ScalarField) -> np.ndarray:
    """skeleton_residual for a stack of flattened controls in one pass.

    Reproduces solve_skeleton's RK4 and the trapezoidal L1L1 distance
    with the control axis vectorized; used for finite-difference
    gradients where one state per coordinate would dominate the cost.
    """
    n_steps = len(rho_target.times) - 1
    h = flats.reshape(len(flats), n_modes, bins)
    p0, p1 = noise.affine_parts(eta.grid.centers)
    q0 = np.einsum("ckb,km->cbm", h, p0)
    q1 = np.einsum("ckb,km->cbm", h, p1)
    dx = eta.grid.dx
    dt = 1.0 / n_steps
    target = rho_target.values
    u = np.tile(eta.values, (len(flats), 1))
    prev = dx * np.abs(u - target[0]).sum(axis=1)
    total = np.zeros(len(flats))
    for s in range(n_steps):
        b = (s * bins) // n_steps
        c0 = q0[:, b, :]
        c1 = q1[:, b, :]
        k1 = c0 + c1 * u
        k2 = c0 + c1 * (u + 0.5 * dt * k1)
        k3 = c0 + c1 * (u + 0.5 * dt * k2)
        k4 = c0 + c1 * (u + dt * k3)
        u = u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        cur = dx * np.abs(u - target[s + 1]).sum(axis=1)
        total += 0.5 * dt * (prev + cur)
        prev = cur
    if not np.all(np.isfinite(total)):
        raise NumericalFailure("non-finite state in skeleton integration")
    return total


def _fd_bundle(x: np.ndarray, lam: float, n_modes: int, bins: int,
               rho_target: Trajectory, noise: NoiseModel, eta: ScalarField,
               fd_step: float) -> tuple[np.ndarray, np.ndarray, float]:
    """One batched sweep of x and its coordinate perturbations.

    Returns (gradient of the penalty objective by central differences,
    central-difference gradient of the bare residual, residual at x).
    """
    dim = x.size
    pts = np.tile(x, (2 * dim + 1, 1))
    pts[:dim, :] += fd_step * np.eye(dim)
    pts[dim:2 * dim, :] -= fd_step * np.eye(dim)
    res = _residuals_batch(pts, n_modes, bins, rho_target, noise, eta)
    vals = 0.5 * (pts * pts).sum(axis=1) / bins + lam * res * res
    gphi = (vals[:dim] - vals[dim:2 * dim]) / (2.0 * fd_step)
    gres = (res[:dim] - res[dim:2 * dim]) / (2.0 * fd_step)
    return gphi, gres, float(res[-1])


def objective_gradient(h: Control, lam: float, rho_target: Trajectory,
                       noise: NoiseModel, eta: ScalarField | None = None,
                       fd_step: float = 1e-4) -> np.ndarray:
    """Central finite-difference gradient of the penalty objective,
    all coordinate perturbations integrated in one batch; shaped like
    h.values."""
    if eta is None:
        eta = rho_target.field(0)
    gphi, _, _ = _fd_bundle(h.values.flatten(), lam, h.n_modes, h.bins,
                            rho_target, noise, eta, fd_step)
    return gphi.reshape(h.n_modes, h.bins)


def inverse_dynamics_start(rho_target: Trajectory, noise: NoiseModel,
                           eta: ScalarField | None = None,
                           bins: int = 16) -> Control:
    """Initial control from a bin-wise least-squares fit of the target's
    discrete time derivative through the forcing basis.

    For each bin, solve min_h sum_j ||G_j h - drho_j/dt||^2 where G_j
    stacks the mode shapes g_k(x, rho_j).  Exact when the target is
    itself a skeleton path of a piecewise-constant control; a neutral
    zero start when the modes vanish.
    """
    n_steps = len(rho_target.times) - 1
    if n_steps % bins:
        raise ValueError(f"target steps {n_steps} must be a multiple of "
                         f"control bins {bins}")
    grid = rho_target.grid
    p0, p1 = noise.affine_parts(grid.centers)
    k = noise.n_modes
    vals = np.zeros((k, bins))
    if k == 0:
        return Control(np.zeros((0, bins)))
    per = n_steps // bins
    dt = 1.0 / n_steps
    rho = rho_target.values
    for b in range(bins):
        rows = []
        rhs = []
        for j in range(b * per, (b + 1) * per):
            basis = p0 + p1 * rho[j][None, :]          # (K, M)
            rows.append(basis.T)
            rhs.append((rho[j + 1] - rho[j]) / dt)
        a = np.concatenate(rows, axis=0)
        y = np.concatenate(rhs)
        vals[:, b] = np.linalg.lstsq(a, y, rcond=None)[0]
    return Control(vals)


@dataclass(frozen=True)
class OptConfig:
    lambda_ladder: tuple = (10.0, 100.0, 1000.0, 10000.0)
    tol_feas: float = 1e-3
    fd_step: float = 1e-4
    max_iters: int = 150
    armijo: float = 1e-4
    init_step: float = 1.0
    shrink: float = 0.5
    min_step: float = 1e-12
    grad_tol: float = 1e-8

    def __post_init__(self):
        ladder = tuple(float(x) for x in self.lambda_ladder)
        if not ladder or any(x <= 0 for x in ladder):
            raise ValueError("penalty ladder must be positive")
        if any(a >= b for a, b in zip(ladder, ladder[1:])):
            raise ValueError("penalty ladder must be strictly increasing")
        object.__setattr__(self, "lambda_ladder", ladder)
        for name in ("tol_feas", "fd_step", "armijo", "init_step", "shrink",
                     "min_step", "grad_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True)
class RateResult:
    i_hat: float
    h_opt: Control
    residual: float
    feasible: bool
    iterations: int

    def report_lines(self) -> list[str]:
        return [f"i_hat {repr(self.i_hat)}",
                f"action {repr(action(self.h_opt))}",
                f"residual {repr(self.residual)}",
                f"feasible {'true' if self.feasible else 'false'}",
                f"iterations {self.iterations}"]

    def control_csv_lines(self) -> list[str]:
        out = ["bin,mode,value"]
        for b in range(self.h_opt.bins):
            for k in range(self.h_opt.n_modes):
                out.append(f"{b},{k},{repr(float(self.h_opt.values[k, b]))}")
        return out


def rate_estimate(rho_target: Trajectory, noise: NoiseModel,
                  eta: ScalarField | None = None, bins: int = 16,
                  opt: OptConfig | None = None,
                  warm_start: Control | None = None) -> RateResult:
    """Estimated minimal action over controls steering the skeleton to
    the target.

    Runs penalty descent over an increasing penalty ladder, warm-starting
    each level from the previous one, and returns the lowest-action point
    visited whose residual is within opt.tol_feas.  If no visited point
    is feasible the result carries i_hat = inf with the smallest residual
    found, never a float overflow.
    """
    opt = opt if opt is not None else OptConfig()
    n_modes = noise.n_modes
    if n_modes * bins > DIMENSION_CAP:
        raise ConfigError(f"control dimension {n_modes}x{bins} exceeds "
                          f"the cap {DIMENSION_CAP}")
    if (len(rho_target.times) - 1) % bins:
        raise ValueError(f"target steps {len(rho_target.times) - 1} must be "
                         f"a multiple of control bins {bins}")
    if eta is None:
        eta = rho_target.field(0)
    if warm_start is not None:
        if warm_start.values.shape != (n_modes, bins):
            raise ValueError(f"warm start shape {warm_start.values.shape} "
                             f"does not match ({n_modes}, {bins})")
        x = warm_start.values.flatten()
    else:
        x = inverse_dynamics_start(rho_target, noise, eta, bins).values.flatten()

    def objective(lam, flat):
        return penalty_objective(Control(flat.reshape(n_modes, bins)), lam,
                                 rho_target, noise, eta)

    # The ladder is allowed to wander through infeasible territory (low
    # penalties actively reward trading feasibility for action), so the
    # answer is the best point seen anywhere along the hike, not the last.
    best_feas = None       # (action, x) with residual within tolerance
    best_res = (math.inf, x)
    def track(flat, res):
        nonlocal best_feas, best_res
        if res < best_res[0]:
            best_res = (res, flat)
        if res <= opt.tol_feas:
            act = 0.5 * float(flat @ flat) / bins
            if best_feas is None or act < best_feas[0]:
                best_feas = (act, flat)

    total_iters = 0
    for lam in opt.lambda_ladder:
        phi = objective(lam, x)
        stall = 0
        for _ in range(opt.max_iters):
            g, r, res_here = _fd_bundle(x, lam, n_modes, bins, rho_target,
                                        noise, eta, opt.fd_step)
            track(x, res_here)
            if math.sqrt(float(g @ g)) <= opt.grad_tol:
                break
            # The objective is quadratic action plus lam * (scalar
            # residual)^2, so its stiffness is one rank-one term; scale
            # the gradient by the exact inverse of that surrogate
            # curvature (Sherman-Morrison) to keep steps usable at high
            # penalties.  The direction stays downhill because the
            # scaling matrix is positive definite.
            bq = float(bins)
            rr = float(r @ r)
            d = -bq * (g - (2.0 * lam * bq * float(r @ g))
                       / (1.0 + 2.0 * lam * bq * rr) * r)
            slope = float(g @ d)
            if slope >= 0.0:
                d = -g
                slope = -float(g @ g)
            s = opt.init_step
            trial_phi = None
            while s >= opt.min_step:
                try:
                    cand = objective(lam, x + s * d)
                except NumericalFailure:
                    cand = math.inf
                if cand <= phi + opt.armijo * s * slope:
                    trial_phi = cand
                    break
                if cand < phi - 1e-14:
                    # sufficient decrease is unreachable across the kinks
                    # of the L1 residual; settle for plain decrease
                    trial_phi = cand
                    break
                s *= opt.shrink
            if trial_phi is None:
                break
            assert trial_phi <= phi + 1e-12   # descent across accepted steps
            x = x + s * d
            stall = stall + 1 if phi - trial_phi <= 1e-9 * max(1.0, abs(phi)) \
                else 0
            phi = trial_phi
            total_iters += 1
            if stall >= 10:
                break

    track(x, skeleton_residual(Control(x.reshape(n_modes, bins)),
                               rho_target, noise, eta))
    if best_feas is not None:
        flat = best_feas[1]
        h_opt = Control(flat.reshape(n_modes, bins))
        res = skeleton_residual(h_opt, rho_target, noise, eta)
        return RateResult(action(h_opt), h_opt, res, True, total_iters)
    res, flat = best_res
    return RateResult(math.inf, Control(flat.reshape(n_modes, bins)), res,
                      False, total_iters)
