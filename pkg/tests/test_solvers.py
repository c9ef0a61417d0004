import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from sclaw.errors import NumericalFailure
from sclaw.grid import ScalarField, TorusGrid, make_initial
from sclaw.models import (FluxModel, NoiseMode, NoiseModel, NoisePath,
                          SimConfig, additive_noise, make_flux)
from sclaw.solvers import (STREAM_MAIN, base_small_time_endpoints,
                           deterministic_step, lp_moment, pair_l1_distance,
                           pair_l1_distances, pair_moment_maxes,
                           scaled_endpoints, solve_base_small_time,
                           solve_coupled_pair, solve_flux_free,
                           solve_scaled_spde, solve_skeleton,
                           stochastic_substep)

rng = np.random.default_rng(42)


# ---------------------------------------------------------------------------
# numerical flux


def test_eo_consistency_burgers():
    flux = make_flux("burgers")
    for c in (-1.3, 0.0, 0.4, 2.0):
        assert flux.eo_flux(c, c) == pytest.approx(0.5 * c * c, abs=1e-15)


def test_eo_transonic_rarefaction_value():
    # both half-integrals contribute through the sonic point
    flux = make_flux("burgers")
    assert flux.eo_flux(1.0, -1.0) == 1.0


def test_eo_linear_upwind():
    flux = make_flux("linear", speed=2.0)
    assert flux.eo_flux(0.7, -5.0) == pytest.approx(1.4)
    back = make_flux("linear", speed=-2.0)
    assert back.eo_flux(0.7, -5.0) == pytest.approx(10.0)


def test_eo_polynomial_parts_match_quadrature():
    # quartic A with genuinely sign-changing speed a = A'
    flux = FluxModel(kind="polynomial", coeffs=(0.0, -0.5, 0.1, 0.0, 0.25),
                     growth_power=4.0, growth_const=2.0)
    for u in (-1.7, -0.3, 0.0, 0.6, 1.9):
        pos, _ = quad(lambda s: max(float(flux.a(s)), 0.0), 0.0, u)
        neg, _ = quad(lambda s: min(float(flux.a(s)), 0.0), 0.0, u)
        assert float(flux.apos(u)) == pytest.approx(pos, abs=1e-9)
        assert float(flux.aneg(u)) == pytest.approx(neg, abs=1e-9)


# ---------------------------------------------------------------------------
# deterministic step


def test_constant_field_is_steady():
    grid = TorusGrid(16)
    f = ScalarField(grid, np.full(16, 0.8))
    out = deterministic_step(f, make_flux("burgers"), 1.0, 0.01)
    assert np.allclose(out.values, 0.8, atol=1e-15)


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=20, deadline=None)
def test_step_preserves_mean(seed):
    grid = TorusGrid(32)
    vals = np.random.default_rng(seed).uniform(-1.0, 1.0, 32)
    f = ScalarField(grid, vals)
    out = deterministic_step(f, make_flux("burgers"), 1.0, 0.005)
    assert abs(out.mean() - f.mean()) <= 1e-12 * (1.0 + abs(f.mean()))


def test_cfl_violation_names_courant_number():
    grid = TorusGrid(16)
    f = ScalarField(grid, np.full(16, 3.0))
    with pytest.raises(NumericalFailure, match="Courant"):
        deterministic_step(f, make_flux("burgers"), 1.0, 0.1, nu_max=0.45)


def test_shock_speed_coarse():
    # Riemann (1, 0): the shock moves at speed 1/2
    grid = TorusGrid(100)
    eta = make_initial(grid, "riemann", left=1.0, right=0.0, x0=0.5)
    f, t, dt = eta, 0.0, 0.2 * grid.dx
    while t < 0.5 - 1e-12:
        step = min(dt, 0.5 - t)
        f = deterministic_step(f, make_flux("burgers"), 1.0, step)
        t += step
    jumps = np.diff(f.values)
    pos = (np.argmin(jumps) + 1) * grid.dx
    assert abs(pos - 0.75) <= 3 * grid.dx


def test_l1_contraction_sample():
    grid = TorusGrid(32)
    flux = make_flux("burgers")
    g = np.random.default_rng(3)
    for _ in range(10):
        u = ScalarField(grid, g.uniform(-1, 1, 32))
        v = ScalarField(grid, g.uniform(-1, 1, 32))
        dist = float(np.abs(u.values - v.values).sum() * grid.dx)
        for _ in range(40):
            u = deterministic_step(u, flux, 1.0, 0.005)
            v = deterministic_step(v, flux, 1.0, 0.005)
            new = float(np.abs(u.values - v.values).sum() * grid.dx)
            assert new <= dist + 1e-10
            dist = new


# ---------------------------------------------------------------------------
# stochastic substep


def test_noise_substep_zero_amp():
    grid = TorusGrid(8)
    f = ScalarField(grid, np.linspace(-1, 1, 8))
    out = stochastic_substep(f, additive_noise(1.0), 0.0, np.array([0.4]))
    assert np.array_equal(out.values, f.values)


def test_noise_substep_additive_shift():
    grid = TorusGrid(8)
    f = ScalarField(grid, np.zeros(8))
    out = stochastic_substep(f, additive_noise(1.0), 1.0, np.array([0.3]))
    assert np.allclose(out.values, 0.3, atol=1e-16)


def test_noise_substep_mean_zero():
    grid = TorusGrid(4)
    f = ScalarField(grid, np.full(4, 0.2))
    noise = additive_noise(1.0)
    draws = math.sqrt(0.01) * np.random.default_rng(9).standard_normal(10_000)
    mean = np.mean([stochastic_substep(f, noise, 1.0, np.array([d])).values[0]
                    for d in draws])
    se = math.sqrt(0.01 / 10_000)
    assert abs(mean - 0.2) <= 3 * se


# ---------------------------------------------------------------------------
# full paths


def test_flux_zero_matches_flux_free_bitwise(small_eta, two_mode_noise):
    cfg = SimConfig(epsilon=0.1, cells=32, seed=5, dt=1.0 / 64)
    a = solve_scaled_spde(small_eta, cfg, make_flux("zero"), two_mode_noise)
    b = solve_flux_free(small_eta, cfg, two_mode_noise)
    assert np.array_equal(a.values, b.values)


def test_trajectory_determinism(small_eta, two_mode_noise, burgers):
    cfg = SimConfig(epsilon=0.1, cells=32, seed=5, dt=1.0 / 64,
                    cfl_fraction=0.9)
    a = solve_scaled_spde(small_eta, cfg, burgers, two_mode_noise, 3)
    b = solve_scaled_spde(small_eta, cfg, burgers, two_mode_noise, 3)
    assert np.array_equal(a.values, b.values)
    c = solve_scaled_spde(small_eta, cfg, burgers, two_mode_noise, 4)
    assert not np.array_equal(a.values, c.values)


def test_zero_noise_flux_free_is_frozen(small_eta):
    dead = NoiseModel(())
    cfg = SimConfig(epsilon=0.1, cells=32, seed=5, dt=1.0 / 64)
    traj = solve_flux_free(small_eta, cfg, dead)
    assert np.allclose(traj.values, small_eta.values[None, :], atol=0.0)


def test_flux_free_additive_integrates_exactly(small_eta):
    cfg = SimConfig(epsilon=0.25, cells=32, seed=8, dt=1.0 / 64)
    traj = solve_flux_free(small_eta, cfg, additive_noise(1.0))
    path = NoisePath.generate(8, STREAM_MAIN, 0, 64, 1, 1.0 / 64)
    brownian = np.concatenate([[0.0], np.cumsum(path.increments[:, 0])])
    expect = small_eta.values[None, :] + 0.5 * brownian[:, None]
    assert np.allclose(traj.values, expect, atol=1e-12)


def test_coupled_pair_identical_when_flux_zero(small_eta, two_mode_noise):
    cfg = SimConfig(epsilon=0.1, cells=32, seed=5, dt=1.0 / 64)
    u, v = solve_coupled_pair(small_eta, cfg, make_flux("zero"),
                              two_mode_noise)
    assert np.array_equal(u.values, v.values)


def test_base_small_time_zero_noise_maps_onto_scaled(small_eta, burgers):
    dead = NoiseModel(())
    cfg = SimConfig(epsilon=0.25, cells=32, seed=5, dt=1.0 / 64,
                    cfl_fraction=0.9)
    base = solve_base_small_time(small_eta, 0.25, cfg, burgers, dead)
    scaled = solve_scaled_spde(small_eta, cfg, burgers, dead)
    assert np.allclose(base.values, scaled.values[-1], atol=1e-12)


def test_base_small_time_at_unit_epsilon_is_scaled_run(small_eta, burgers,
                                                       two_mode_noise):
    cfg = SimConfig(epsilon=1.0, cells=32, seed=5, dt=1.0 / 64,
                    cfl_fraction=0.9)
    base = solve_base_small_time(small_eta, 1.0, cfg, burgers, two_mode_noise,
                                 stream=STREAM_MAIN)
    scaled = solve_scaled_spde(small_eta, cfg, burgers, two_mode_noise)
    assert np.array_equal(base.values, scaled.values[-1])


def test_splitting_gap_shrinks_with_dt(small_eta, burgers, two_mode_noise):
    fine = NoisePath.generate(5, STREAM_MAIN, 0, 512, 2, 1.0 / 512)
    gaps = []
    for n in (128, 256, 512):
        path = fine.coarsen(512 // n)
        gap = None
        ends = {}
        for splitting in ("lie", "strang"):
            cfg = SimConfig(epsilon=0.1, cells=32, seed=5, dt=1.0 / n,
                            cfl_fraction=0.9, splitting=splitting)
            traj = solve_scaled_spde(small_eta, cfg, burgers, two_mode_noise,
                                     noise_path=path)
            ends[splitting] = traj.values[-1]
        gaps.append(float(np.abs(ends["lie"] - ends["strang"]).max()))
    assert gaps[0] > gaps[1] > gaps[2]


# ---------------------------------------------------------------------------
# skeleton


def test_skeleton_zero_control_constant(small_eta, unit_additive):
    traj = solve_skeleton(small_eta, np.zeros((1, 4)), unit_additive, 16)
    assert np.array_equal(traj.values[-1], small_eta.values)


def test_skeleton_additive_linear_in_time(small_eta, unit_additive):
    c = 0.37
    traj = solve_skeleton(small_eta, np.full((1, 8), c), unit_additive, 64)
    expect = small_eta.values + c
    assert np.allclose(traj.values[-1], expect, atol=1e-13)
    mid = small_eta.values + 0.5 * c
    j = np.argmin(np.abs(traj.times - 0.5))
    assert np.allclose(traj.values[j], mid, atol=1e-13)


def test_skeleton_multiplicative_exponential():
    grid = TorusGrid(8)
    eta = ScalarField(grid, np.linspace(0.5, 1.2, 8))
    mult = NoiseModel((NoiseMode(
        sigma=1.0, alpha=0.0, beta=1.0),))
    c = 0.9
    traj = solve_skeleton(eta, np.full((1, 4), c), mult, 100)
    assert np.allclose(traj.values[-1], eta.values * math.exp(c), atol=1e-8)


def test_skeleton_rk4_order():
    grid = TorusGrid(4)
    eta = ScalarField(grid, np.full(4, 1.0))
    mult = NoiseModel((NoiseMode(
        sigma=1.0, alpha=0.0, beta=1.0),))
    errs = []
    for n in (4, 8, 16, 32):
        traj = solve_skeleton(eta, np.full((1, 4), 1.0), mult, n)
        errs.append(abs(float(traj.values[-1][0]) - math.e))
    rates = [math.log2(errs[i] / errs[i + 1]) for i in range(3)]
    assert all(r > 3.5 for r in rates)


def test_skeleton_requires_bin_divisibility(small_eta, unit_additive):
    with pytest.raises(ValueError):
        solve_skeleton(small_eta, np.zeros((1, 3)), unit_additive, 16)


# ---------------------------------------------------------------------------
# moments


def test_lp_moment_constant_and_riemann():
    grid = TorusGrid(10)
    c = ScalarField(grid, np.full(10, -1.5))
    traj_c = solve_skeleton(c, np.zeros((0, 1)), NoiseModel(()), 4)
    assert lp_moment(traj_c, 2.0) == pytest.approx(2.25, abs=1e-14)
    grid4 = TorusGrid(4)
    step = make_initial(grid4, "riemann", left=1.0, right=0.0, x0=0.5)
    traj_s = solve_skeleton(step, np.zeros((0, 1)), NoiseModel(()), 4)
    assert lp_moment(traj_s, 1.0) == pytest.approx(0.5, abs=1e-14)


def test_lp_moment_stride_monotone(small_eta, burgers, two_mode_noise):
    base = SimConfig(epsilon=0.1, cells=32, seed=5, dt=1.0 / 64,
                     cfl_fraction=0.9)
    dense = solve_scaled_spde(small_eta, base, burgers, two_mode_noise)
    sparse_cfg = SimConfig(epsilon=0.1, cells=32, seed=5, dt=1.0 / 64,
                           cfl_fraction=0.9, save_stride=8)
    sparse = solve_scaled_spde(small_eta, sparse_cfg, burgers, two_mode_noise)
    assert lp_moment(dense, 2.0) >= lp_moment(sparse, 2.0)


# ---------------------------------------------------------------------------
# batched routes agree with the scalar reference


def test_batched_pair_distances_match_scalar(small_eta, burgers,
                                             two_mode_noise):
    cfg = SimConfig(epsilon=0.2, cells=32, seed=21, dt=1.0 / 64,
                    cfl_fraction=0.9)
    idx = np.arange(5)
    batched = pair_l1_distances(small_eta, cfg, burgers, two_mode_noise, idx)
    scalar = np.array([pair_l1_distance(small_eta, cfg, burgers,
                                        two_mode_noise, int(i)) for i in idx])
    assert np.allclose(batched, scalar, rtol=1e-10, atol=1e-14)


def test_batched_moments_match_scalar(small_eta, burgers, two_mode_noise):
    cfg = SimConfig(epsilon=0.2, cells=32, seed=21, dt=1.0 / 64,
                    cfl_fraction=0.9)
    idx = np.arange(3)
    p_list = [1.0, 2.0]
    batched = pair_moment_maxes(small_eta, cfg, burgers, two_mode_noise, idx,
                                p_list)
    for r, i in enumerate(idx):
        u, v = solve_coupled_pair(small_eta, cfg, burgers, two_mode_noise,
                                  int(i))
        for c, p in enumerate(p_list):
            assert batched[r, c, 0] == pytest.approx(lp_moment(u, p),
                                                     rel=1e-10)
            assert batched[r, c, 1] == pytest.approx(lp_moment(v, p),
                                                     rel=1e-10)


def test_batched_endpoints_match_scalar(small_eta, burgers, two_mode_noise):
    cfg = SimConfig(epsilon=0.2, cells=32, seed=21, dt=1.0 / 64,
                    cfl_fraction=0.9)
    idx = np.arange(4)
    ends = scaled_endpoints(small_eta, cfg, burgers, two_mode_noise, idx)
    for r, i in enumerate(idx):
        traj = solve_scaled_spde(small_eta, cfg, burgers, two_mode_noise,
                                 int(i))
        assert np.allclose(ends[r], traj.values[-1], rtol=1e-10, atol=1e-14)
    base = base_small_time_endpoints(small_eta, 0.2, cfg, burgers,
                                     two_mode_noise, idx)
    for r, i in enumerate(idx):
        fld = solve_base_small_time(small_eta, 0.2, cfg, burgers,
                                    two_mode_noise, int(i))
        assert np.allclose(base[r], fld.values, rtol=1e-10, atol=1e-14)


def test_batched_cfl_failure_names_offender(small_eta, burgers):
    # large multiplicative noise at a generous dt blows the certificate
    wild = NoiseModel((NoiseMode(
        sigma=40.0, alpha=1.0, beta=1.0),))
    cfg = SimConfig(epsilon=0.9, cells=32, seed=1, dt=1.0 / 16,
                    cfl_fraction=0.5)
    with pytest.raises(NumericalFailure) as err:
        pair_l1_distances(small_eta, cfg, burgers, wild, np.arange(4))
    assert err.value.path_index is not None
    assert err.value.step is not None


# ---------------------------------------------------------------------------
# trajectory export


def test_trajectory_csv_roundtrip(small_eta, burgers, two_mode_noise,
                                  tmp_path):
    from sclaw.grid import trajectory_from_csv
    cfg = SimConfig(epsilon=0.1, cells=32, seed=5, dt=1.0 / 64,
                    cfl_fraction=0.9, save_stride=4)
    traj = solve_scaled_spde(small_eta, cfg, burgers, two_mode_noise)
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "t," + ",".join(f"cell_{i}" for i in range(32))
    back = trajectory_from_csv(path)
    assert np.array_equal(back.values, traj.values)
    assert np.array_equal(back.times, traj.times)
