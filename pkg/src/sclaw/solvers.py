"""Finite-volume and splitting solvers on the periodic unit interval.

The deterministic substep is the Engquist-Osher scheme in conservation
form; the stochastic substep is Ito Euler-Maruyama with the noise
evaluated at the pre-update state.  Lie splitting runs flux then noise
each step, Strang wraps the noise update between two half flux steps.
Every flux substep re-checks the Courant certificate

    scale * sup|a| * dt / dx <= nu < 1

with sup|a| taken over the running solution range widened by a fixed
margin, and raises a NumericalFailure naming the attained Courant
number (and the path/step) on violation.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from .errors import NumericalFailure
from .grid import ScalarField, TorusGrid, Trajectory
from .models import (STREAM_BASE, STREAM_MAIN, FluxModel, NoiseModel,
                     NoisePath, SimConfig)

# widening of the running solution range when certifying the CFL condition
RANGE_PAD = 1.0


def resolve_time_grid(cfg: SimConfig, flux: FluxModel | None,
                      eta: ScalarField) -> tuple[int, float]:
    """Fixed (n_steps, dt) for a run; shared by both members of a pair.

    Explicit cfg.dt wins.  Otherwise dt comes from the CFL fraction
    applied to the initial range plus margin, capped at dx so that
    flux-free runs still resolve the noise in time.
    """
    horizon = cfg.horizon
    if cfg.dt is not None:
        n = round(horizon / cfg.dt)
        return n, horizon / n
    dx = 1.0 / cfg.cells
    dt = min(dx, horizon)
    if flux is not None:
        lo, hi = eta.range_bounds()
        sup = flux.sup_abs_a(lo - RANGE_PAD, hi + RANGE_PAD)
        if cfg.epsilon * sup > 0.0:
            dt = min(dt, cfg.cfl_fraction * dx / (cfg.epsilon * sup))
    n = max(1, int(np.ceil(horizon / dt - 1e-12)))
    return n, horizon / n


def _flux_update(u: np.ndarray, dx: float, flux: FluxModel, scale: float,
                 dt: float, nu_max: float, path_index: int | None,
                 step: int | None) -> np.ndarray:
    lo = float(u.min())
    hi = float(u.max())
    sup = flux.sup_abs_a(lo - RANGE_PAD, hi + RANGE_PAD)
    courant = scale * sup * dt / dx
    if courant > nu_max:
        raise NumericalFailure(
            f"CFL violation: Courant number {courant:.6g} exceeds the "
            f"certified fraction {nu_max:.6g}", path_index, step)
    f = flux.eo_flux(u, np.roll(u, -1))      # flux through right interfaces
    return u - scale * (dt / dx) * (f - np.roll(f, 1))


def _noise_update(u: np.ndarray, amp: float, db: np.ndarray, p0: np.ndarray,
                  p1: np.ndarray, path_index: int | None,
                  step: int | None) -> np.ndarray:
    out = u + amp * (db @ p0 + (db @ p1) * u)
    if not np.all(np.isfinite(out)):
        raise NumericalFailure("non-finite state after noise update",
                               path_index, step)
    return out


def deterministic_step(field: ScalarField, flux: FluxModel, scale: float,
                       dt: float, nu_max: float = 0.45) -> ScalarField:
    """One conservative Engquist-Osher step of size dt."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    vals = _flux_update(field.values, field.grid.dx, flux, scale, dt,
                        nu_max, None, None)
    return ScalarField(field.grid, vals)


def stochastic_substep(field: ScalarField, noise: NoiseModel, amp: float,
                       db: np.ndarray) -> ScalarField:
    """One Euler-Maruyama noise update u + amp * sum_k g_k(x, u) db_k."""
    db = np.asarray(db, dtype=float)
    if db.shape != (noise.n_modes,):
        raise ValueError(f"expected {noise.n_modes} increments, got {db.shape}")
    p0, p1 = noise.affine_parts(field.grid.centers)
    vals = _noise_update(field.values, amp, db, p0, p1, None, None)
    return ScalarField(field.grid, vals)


def _run(eta: ScalarField, flux: FluxModel | None, flux_scale: float,
         noise: NoiseModel, noise_amp: float, n_steps: int, dt: float,
         path: NoisePath, splitting: str, save_stride: int, nu_max: float,
         path_index: int | None, horizon: float) -> Trajectory:
    grid = eta.grid
    dx = grid.dx
    if path.n_steps != n_steps or path.n_modes != noise.n_modes:
        raise ValueError(
            f"noise path shape {(path.n_steps, path.n_modes)} does not match "
            f"run shape {(n_steps, noise.n_modes)}")
    p0, p1 = noise.affine_parts(grid.centers)
    inc = path.increments
    u = np.array(eta.values, dtype=float)
    saved = [u.copy()]
    marks = [0]
    half = 0.5 * dt
    for s in range(n_steps):
        if flux is not None:
            u = _flux_update(u, dx, flux, flux_scale,
                             half if splitting == "strang" else dt,
                             nu_max, path_index, s)
        if noise.n_modes:
            u = _noise_update(u, noise_amp, inc[s], p0, p1, path_index, s)
        if flux is not None and splitting == "strang":
            u = _flux_update(u, dx, flux, flux_scale, half, nu_max,
                             path_index, s)
        if (s + 1) % save_stride == 0 or s + 1 == n_steps:
            saved.append(u.copy())
            marks.append(s + 1)
    times = np.array(marks, dtype=float) * dt
    times[-1] = horizon
    return Trajectory(grid, times, np.array(saved))


def solve_scaled_spde(eta: ScalarField, cfg: SimConfig, flux: FluxModel,
                      noise: NoiseModel, path_index: int = 0,
                      stream: int = STREAM_MAIN,
                      noise_path: NoisePath | None = None) -> Trajectory:
    """Solve du + eps * div A(u) dt = sqrt(eps) * sum g_k db_k on [0, 1]."""
    if cfg.horizon != 1.0:
        raise ValueError("the rescaled dynamics run on the unit horizon")
    n, dt = resolve_time_grid(cfg, flux, eta)
    path = noise_path if noise_path is not None else NoisePath.generate(
        cfg.seed, stream, path_index, n, noise.n_modes, dt)
    return _run(eta, flux, cfg.epsilon, noise, math.sqrt(cfg.epsilon), n, dt,
                path, cfg.splitting, cfg.save_stride, cfg.cfl_fraction,
                path_index, cfg.horizon)


def solve_flux_free(eta: ScalarField, cfg: SimConfig, noise: NoiseModel,
                    path_index: int = 0, stream: int = STREAM_MAIN,
                    noise_path: NoisePath | None = None) -> Trajectory:
    """Same stochastic dynamics without transport: dv = sqrt(eps) sum g_k db_k."""
    if cfg.horizon != 1.0:
        raise ValueError("the rescaled dynamics run on the unit horizon")
    n, dt = resolve_time_grid(cfg, None, eta)
    if noise_path is not None:
        n, dt = noise_path.n_steps, noise_path.dt
    path = noise_path if noise_path is not None else NoisePath.generate(
        cfg.seed, stream, path_index, n, noise.n_modes, dt)
    return _run(eta, None, 0.0, noise, math.sqrt(cfg.epsilon), n, dt, path,
                cfg.splitting, cfg.save_stride, cfg.cfl_fraction, path_index,
                cfg.horizon)


def solve_coupled_pair(eta: ScalarField, cfg: SimConfig, flux: FluxModel,
                       noise: NoiseModel, path_index: int = 0,
                       stream: int = STREAM_MAIN
                       ) -> tuple[Trajectory, Trajectory]:
    """(transport run, flux-free run) driven by one shared noise path.

    The time grid is resolved once from the transport side, so both
    members see identical Brownian increments step by step; their gap
    isolates the effect of the scaled flux.
    """
    n, dt = resolve_time_grid(cfg, flux, eta)
    path = NoisePath.generate(cfg.seed, stream, path_index, n,
                              noise.n_modes, dt)
    with_flux = solve_scaled_spde(eta, cfg, flux, noise, path_index,
                                  stream, noise_path=path)
    without = solve_flux_free(eta, cfg, noise, path_index, stream,
                              noise_path=path)
    return with_flux, without


def solve_base_small_time(eta: ScalarField, epsilon: float, cfg: SimConfig,
                          flux: FluxModel, noise: NoiseModel,
                          path_index: int = 0, stream: int = STREAM_BASE,
                          noise_path: NoisePath | None = None) -> ScalarField:
    """Endpoint of the unscaled dynamics at the small horizon epsilon.

    Runs du + div A(u) dt = sum g_k db_k to time epsilon with the same
    number of steps the rescaled unit-horizon run would take, i.e.
    dt_base = epsilon * dt.  In law the endpoint matches the rescaled
    endpoint at time 1; with zero noise the two agree to roundoff, and
    at epsilon = 1 the computation is identical step for step.
    """
    if not 0.0 < epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    base_cfg = replace(cfg, epsilon=epsilon)
    n, dt = resolve_time_grid(base_cfg, flux, eta)
    dt_base = epsilon * dt
    path = noise_path if noise_path is not None else NoisePath.generate(
        cfg.seed, stream, path_index, n, noise.n_modes, dt_base)
    traj = _run(eta, flux, 1.0, noise, 1.0, n, dt_base, path, cfg.splitting,
                n, cfg.cfl_fraction, path_index, epsilon * cfg.horizon)
    return traj.final()


def pair_l1_distance(eta: ScalarField, cfg: SimConfig, flux: FluxModel,
                     noise: NoiseModel, path_index: int = 0,
                     stream: int = STREAM_MAIN) -> float:
    """Space-time L1 gap of a coupled pair, accumulated on the fly.

    Runs the same updates as solve_coupled_pair but keeps only the
    running trapezoidal integral of ||u - v||_L1, so large Monte Carlo
    sweeps avoid building trajectories.
    """
    grid = eta.grid
    dx = grid.dx
    n, dt = resolve_time_grid(cfg, flux, eta)
    path = NoisePath.generate(cfg.seed, stream, path_index, n,
                              noise.n_modes, dt)
    p0, p1 = noise.affine_parts(grid.centers)
    inc = path.increments
    amp = math.sqrt(cfg.epsilon)
    u = np.array(eta.values, dtype=float)
    v = u.copy()
    half = 0.5 * dt
    strang = cfg.splitting == "strang"
    prev = 0.0
    total = 0.0
    for s in range(n):
        u = _flux_update(u, dx, flux, cfg.epsilon, half if strang else dt,
                         cfg.cfl_fraction, path_index, s)
        if noise.n_modes:
            db = inc[s]
            u = _noise_update(u, amp, db, p0, p1, path_index, s)
            v = _noise_update(v, amp, db, p0, p1, path_index, s)
        if strang:
            u = _flux_update(u, dx, flux, cfg.epsilon, half,
                             cfg.cfl_fraction, path_index, s)
        cur = dx * float(np.abs(u - v).sum())
        total += 0.5 * dt * (prev + cur)
        prev = cur
    return total


# ---------------------------------------------------------------------------
# batched Monte Carlo engine
#
# Per-path runs on (cells,) arrays are numpy-call-overhead bound, which
# is too slow for the larger sweeps.  The helpers below advance a block
# of paths at once as (paths, cells) arrays; every update is elementwise
# along the path axis, so each row reproduces the single-path dynamics.


def _batch_increments(seed: int, stream: int, path_indices, n_steps: int,
                      n_modes: int, dt: float) -> np.ndarray:
    return np.stack([
        NoisePath.generate(seed, stream, int(i), n_steps, n_modes,
                           dt).increments
        for i in path_indices])


def _batch_flux_update(u: np.ndarray, dx: float, flux: FluxModel,
                       scale: float, dt: float, nu_max: float,
                       path_indices, step: int) -> np.ndarray:
    lo = float(u.min())
    hi = float(u.max())
    sup = flux.sup_abs_a(lo - RANGE_PAD, hi + RANGE_PAD)
    if scale * sup * dt / dx > nu_max:
        # the hull bound is conservative: certify per path before failing
        for r in range(u.shape[0]):
            rsup = flux.sup_abs_a(float(u[r].min()) - RANGE_PAD,
                                  float(u[r].max()) + RANGE_PAD)
            courant = scale * rsup * dt / dx
            if courant > nu_max:
                raise NumericalFailure(
                    f"CFL violation: Courant number {courant:.6g} exceeds "
                    f"the certified fraction {nu_max:.6g}",
                    int(path_indices[r]), step)
    f = flux.eo_flux(u, np.roll(u, -1, axis=1))
    return u - scale * (dt / dx) * (f - np.roll(f, 1, axis=1))


def _batch_noise_update(u: np.ndarray, amp: float, db: np.ndarray,
                        p0: np.ndarray, p1: np.ndarray, path_indices,
                        step: int) -> np.ndarray:
    out = u + amp * (db @ p0 + (db @ p1) * u)
    fin = np.isfinite(out).all(axis=1)
    if not fin.all():
        bad = int(np.nonzero(~fin)[0][0])
        raise NumericalFailure("non-finite state after noise update",
                               int(path_indices[bad]), step)
    return out


def _pair_sweep(eta: ScalarField, cfg: SimConfig, flux: FluxModel,
                noise: NoiseModel, path_indices, stream: int,
                p_list) -> tuple[np.ndarray, np.ndarray | None]:
    """Coupled pairs for a block of paths in lockstep.

    Returns the space-time L1 gaps (paths,) and, when p_list is given,
    running maxima over time of the L^p mass dx * sum |.|^p for both
    members, shaped (paths, len(p_list), 2).
    """
    indices = [int(i) for i in path_indices]
    grid = eta.grid
    dx = grid.dx
    n, dt = resolve_time_grid(cfg, flux, eta)
    inc = _batch_increments(cfg.seed, stream, indices, n, noise.n_modes, dt)
    p0, p1 = noise.affine_parts(grid.centers)
    amp = math.sqrt(cfg.epsilon)
    u = np.tile(eta.values, (len(indices), 1))
    v = u.copy()
    half = 0.5 * dt
    strang = cfg.splitting == "strang"
    prev = np.zeros(len(indices))
    total = np.zeros(len(indices))
    moms = None
    if p_list is not None:
        moms = np.empty((len(indices), len(p_list), 2))
        for j, p in enumerate(p_list):
            moms[:, j, :] = dx * (np.abs(eta.values) ** p).sum()
    for s in range(n):
        u = _batch_flux_update(u, dx, flux, cfg.epsilon,
                               half if strang else dt, cfg.cfl_fraction,
                               indices, s)
        if noise.n_modes:
            db = inc[:, s, :]
            u = _batch_noise_update(u, amp, db, p0, p1, indices, s)
            v = _batch_noise_update(v, amp, db, p0, p1, indices, s)
        if strang:
            u = _batch_flux_update(u, dx, flux, cfg.epsilon, half,
                                   cfg.cfl_fraction, indices, s)
        cur = dx * np.abs(u - v).sum(axis=1)
        total += 0.5 * dt * (prev + cur)
        prev = cur
        if moms is not None:
            for j, p in enumerate(p_list):
                np.maximum(moms[:, j, 0], dx * (np.abs(u) ** p).sum(axis=1),
                           out=moms[:, j, 0])
                np.maximum(moms[:, j, 1], dx * (np.abs(v) ** p).sum(axis=1),
                           out=moms[:, j, 1])
    return total, moms


def pair_l1_distances(eta: ScalarField, cfg: SimConfig, flux: FluxModel,
                      noise: NoiseModel, path_indices,
                      stream: int = STREAM_MAIN) -> np.ndarray:
    """Space-time L1 gaps of coupled pairs for a block of path indices."""
    return _pair_sweep(eta, cfg, flux, noise, path_indices, stream, None)[0]


def pair_moment_maxes(eta: ScalarField, cfg: SimConfig, flux: FluxModel,
                      noise: NoiseModel, path_indices, p_list,
                      stream: int = STREAM_MAIN) -> np.ndarray:
    """max_t dx * sum |.|^p for both pair members, (paths, len(p_list), 2)."""
    return _pair_sweep(eta, cfg, flux, noise, path_indices, stream,
                       [float(p) for p in p_list])[1]


def _endpoint_sweep(eta: ScalarField, flux: FluxModel, flux_scale: float,
                    noise: NoiseModel, noise_amp: float, n: int, dt: float,
                    inc: np.ndarray, splitting: str, nu_max: float,
                    path_indices) -> np.ndarray:
    indices = [int(i) for i in path_indices]
    dx = eta.grid.dx
    p0, p1 = noise.affine_parts(eta.grid.centers)
    u = np.tile(eta.values, (len(indices), 1))
    half = 0.5 * dt
    strang = splitting == "strang"
    for s in range(n):
        u = _batch_flux_update(u, dx, flux, flux_scale,
                               half if strang else dt, nu_max, indices, s)
        if noise.n_modes:
            u = _batch_noise_update(u, noise_amp, inc[:, s, :], p0, p1,
                                    indices, s)
        if strang:
            u = _batch_flux_update(u, dx, flux, flux_scale, half, nu_max,
                                   indices, s)
    return u


def scaled_endpoints(eta: ScalarField, cfg: SimConfig, flux: FluxModel,
                     noise: NoiseModel, path_indices,
                     stream: int = STREAM_MAIN) -> np.ndarray:
    """Final states of the rescaled dynamics for a block of paths, (paths, cells)."""
    if cfg.horizon != 1.0:
        raise ValueError("the rescaled dynamics run on the unit horizon")
    n, dt = resolve_time_grid(cfg, flux, eta)
    inc = _batch_increments(cfg.seed, stream, path_indices, n,
                            noise.n_modes, dt)
    return _endpoint_sweep(eta, flux, cfg.epsilon, noise,
                           math.sqrt(cfg.epsilon), n, dt, inc, cfg.splitting,
                           cfg.cfl_fraction, path_indices)


def base_small_time_endpoints(eta: ScalarField, epsilon: float,
                              cfg: SimConfig, flux: FluxModel,
                              noise: NoiseModel, path_indices,
                              stream: int = STREAM_BASE) -> np.ndarray:
    """Endpoints of the unscaled dynamics at horizon epsilon, (paths, cells)."""
    if not 0.0 < epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    base_cfg = replace(cfg, epsilon=epsilon)
    n, dt = resolve_time_grid(base_cfg, flux, eta)
    dt_base = epsilon * dt
    inc = _batch_increments(cfg.seed, stream, path_indices, n,
                            noise.n_modes, dt_base)
    return _endpoint_sweep(eta, flux, 1.0, noise, 1.0, n, dt_base, inc,
                           cfg.splitting, cfg.cfl_fraction, path_indices)


def solve_skeleton(eta: ScalarField, h_values: np.ndarray, noise: NoiseModel,
                   n_steps: int) -> Trajectory:
    """Integrate the controlled ODE du/dt = sum_k g_k(x, u) h_k(t) on [0, 1].

    The control is piecewise constant on B equal bins, h_values shaped
    (K, B); integration is classical RK4 with steps aligned to the bins
    (n_steps must be a multiple of B).  Since g is affine in u the
    right-hand side per bin is q0(x) + q1(x) * u.
    """
    h = np.asarray(h_values, dtype=float)
    if h.ndim != 2 or h.shape[0] != noise.n_modes:
        raise ValueError(f"control shape {h.shape} does not match "
                         f"{noise.n_modes} noise modes")
    bins = h.shape[1]
    if bins < 1 or not np.all(np.isfinite(h)):
        raise ValueError("control must be finite with at least one bin")
    if n_steps < bins or n_steps % bins:
        raise ValueError(
            f"n_steps={n_steps} must be a positive multiple of bins={bins}")
    grid = eta.grid
    p0, p1 = noise.affine_parts(grid.centers)
    q0 = h.T @ p0 if noise.n_modes else np.zeros((bins, grid.cells))
    q1 = h.T @ p1 if noise.n_modes else np.zeros((bins, grid.cells))
    dt = 1.0 / n_steps
    u = np.array(eta.values, dtype=float)
    saved = np.empty((n_steps + 1, grid.cells))
    saved[0] = u
    for s in range(n_steps):
        b = (s * bins) // n_steps
        c0, c1 = q0[b], q1[b]
        k1 = c0 + c1 * u
        k2 = c0 + c1 * (u + 0.5 * dt * k1)
        k3 = c0 + c1 * (u + 0.5 * dt * k2)
        k4 = c0 + c1 * (u + dt * k3)
        u = u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        saved[s + 1] = u
    if not np.all(np.isfinite(saved)):
        raise NumericalFailure("non-finite state in skeleton integration")
    times = np.arange(n_steps + 1) * dt
    times[-1] = 1.0
    return Trajectory(grid, times, saved)


def lp_moment(traj: Trajectory, p: float) -> float:
    """max over snapshots of the p-th power norm dx * sum |u_i|^p."""
    if p <= 0:
        raise ValueError("p must be positive")
    return float(np.max(traj.grid.dx *
                        np.sum(np.abs(traj.values) ** p, axis=1)))
