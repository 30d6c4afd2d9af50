import math

import numpy as np
import pytest

from carlstab import grid as g
from carlstab.coefficients import (CoefficientFields, ConstantField,
                                   random_smooth_coefficients)
from carlstab.errors import GridError, SolverError
from carlstab.solver import (TimeGrid, Trajectory, apply_ah, apply_bh, assemble_ah,
                             central_time_derivative, energy_check, solve_forward,
                             solve_z_system)

GRID = g.GridSpec(1, 15)


def product_sine(X):
    return np.prod(np.sin(np.pi * X), axis=1)


def test_time_grid_index_lookup():
    tg = TimeGrid(1.0, 8)
    assert tg.index_of(0.5) == 4
    assert tg.index_of(0.0) == 0
    with pytest.raises(GridError):
        tg.index_of(0.3)


def test_constant_coefficient_stencil_rows():
    A = assemble_ah(GRID, CoefficientFields.constant(1), 0.0).toarray()
    h2 = GRID.h ** 2
    for i in range(1, 14):
        assert A[i, i] * h2 == pytest.approx(-2.0)
        assert A[i, i - 1] * h2 == pytest.approx(1.0)
        assert A[i, i + 1] * h2 == pytest.approx(1.0)


def test_matrix_matches_operator_application(rng):
    coeffs = random_smooth_coefficients(rng, 2, 1.0, time_dependent=True, b_amp=0.7)
    grid = g.GridSpec(2, 7)
    A = assemble_ah(grid, coeffs, 0.37)
    pm = g.primal(grid)
    for _ in range(20):
        u = g.MeshFunction(pm, rng.normal(size=pm.size))
        direct = apply_ah(grid, coeffs, 0.37, u).values
        scale = max(1.0, float(np.max(np.abs(direct))))
        assert np.max(np.abs(A @ u.values - direct)) <= 1e-12 * scale


def test_nonpositive_diffusion_rejected_with_location():
    bad = CoefficientFields(gamma=(ConstantField(0.0),), b=None, c=ConstantField(0.0))
    with pytest.raises(GridError, match="gamma_0"):
        assemble_ah(GRID, bad, 0.0)


def test_symmetry_without_advection(rng):
    coeffs = random_smooth_coefficients(rng, 1, 1.0)
    A = assemble_ah(GRID, coeffs, 0.0)
    asym = np.max(np.abs((A - A.T).toarray()))
    assert asym <= 1e-12 * np.max(np.abs(A.toarray()))


def test_zero_data_zero_solution():
    tg = TimeGrid(1.0, 16)
    traj = solve_forward(GRID, CoefficientFields.constant(1),
                         lambda t, X: np.zeros(X.shape[0]), tg)
    assert np.all(traj.values == 0.0)


def test_discrete_manufactured_reproduction():
    pm = g.primal(GRID)
    u0 = g.sample(pm, product_sine)
    coeffs = CoefficientFields.constant(1)
    a_u0 = apply_ah(GRID, coeffs, 0.0, u0).values

    def src(t, X):
        return -math.exp(-t) * (u0.values + a_u0)

    tg = TimeGrid(0.25, 2048)
    traj = solve_forward(GRID, coeffs, src, tg, y_ini=u0)
    scale = np.max(np.abs(u0.values))
    worst = max(np.max(np.abs(traj.values[m] - math.exp(-t) * u0.values)) / scale
                for m, t in enumerate(tg.times))
    assert worst <= 1e-9


def test_spatial_convergence_order():
    errs = []
    for n in (7, 15):
        grid = g.GridSpec(1, n)
        pm = g.primal(grid)
        u0 = g.sample(pm, product_sine)

        def src(t, X):
            return (math.pi ** 2 - 1.0) * math.exp(-t) * np.sin(math.pi * X[:, 0])

        tg = TimeGrid(0.25, 1024)
        traj = solve_forward(grid, CoefficientFields.constant(1), src, tg, y_ini=u0)
        exact = math.exp(-0.25) * u0.values
        errs.append(np.sqrt(grid.h * np.sum((traj.values[-1] - exact) ** 2)))
    assert math.log2(errs[0] / errs[1]) >= 1.9


def test_temporal_convergence_trapezoid_and_backward_euler():
    pm = g.primal(GRID)
    u0 = g.sample(pm, product_sine)
    coeffs = CoefficientFields.constant(1)
    a_u0 = apply_ah(GRID, coeffs, 0.0, u0).values

    def src(t, X):
        return -math.exp(-t) * (u0.values + a_u0)

    def final_err(scheme, steps):
        tg = TimeGrid(0.5, steps)
        traj = solve_forward(GRID, coeffs, src, tg, y_ini=u0, scheme=scheme)
        return np.max(np.abs(traj.values[-1] - math.exp(-0.5) * u0.values))

    tr = [final_err("trapezoid", m) for m in (32, 64)]
    be = [final_err("backward-euler", m) for m in (32, 64)]
    assert math.log2(tr[0] / tr[1]) >= 1.9
    order_be = math.log2(be[0] / be[1])
    assert 0.8 <= order_be <= 1.2


def test_maximum_principle_backward_euler(rng):
    grid = g.GridSpec(1, 9)
    pm = g.primal(grid)
    coeffs = CoefficientFields.constant(1, gamma=1.0, c=0.5)
    y0 = g.MeshFunction(pm, np.abs(rng.normal(size=pm.size)))

    def src(t, X):
        return np.ones(X.shape[0])

    traj = solve_forward(grid, coeffs, src, TimeGrid(1.0, 64), y_ini=y0,
                         scheme="backward-euler")
    assert traj.values.min() >= -1e-10 * np.max(np.abs(traj.values))


def test_unknown_scheme_rejected():
    with pytest.raises(GridError):
        solve_forward(GRID, CoefficientFields.constant(1),
                      lambda t, X: np.zeros(X.shape[0]), TimeGrid(1.0, 4),
                      scheme="leapfrog")


def test_nan_detection_aborts():
    class ExplodingSource:
        def __call__(self, t, X):
            return np.full(X.shape[0], np.nan if t > 0.5 else 0.0)

    with pytest.raises(SolverError):
        solve_forward(GRID, CoefficientFields.constant(1), ExplodingSource(),
                      TimeGrid(1.0, 8))


def test_central_time_derivative_quadratic_exact():
    t = np.linspace(0.0, 1.0, 9)[:, None]
    vals = 3.0 * t ** 2 + 2.0 * t + 1.0
    d = central_time_derivative(vals, 0.125)
    assert np.allclose(d, 6.0 * t + 2.0, rtol=0, atol=1e-12)


def test_z_system_time_independent_bh_vanishes(rng):
    coeffs = random_smooth_coefficients(rng, 1, 1.0, time_dependent=False)
    pm = g.primal(GRID)
    u = g.MeshFunction(pm, rng.normal(size=pm.size))
    assert np.all(apply_bh(GRID, coeffs, 0.3, u).values == 0.0)


def test_z_system_cross_check_small():
    rng = np.random.default_rng(7)
    coeffs = random_smooth_coefficients(rng, 1, 1.0, time_dependent=True)

    def src(t, X):
        return np.sin(np.pi * X[:, 0]) * (1.0 + 0.5 * math.sin(2 * math.pi * t))

    def dsrc(t, X):
        return np.sin(np.pi * X[:, 0]) * (math.pi * math.cos(2 * math.pi * t))

    tg = TimeGrid(1.0, 2048)
    traj = solve_forward(GRID, coeffs, src, tg)
    z = solve_z_system(traj, coeffs, src, dsrc, mode="hybrid")
    assert z.diagnostics["cross_check_rel"] <= 1e-3


def test_z_system_steady_state_decay():
    coeffs = CoefficientFields.constant(1, gamma=1.0, c=0.5)

    def src(t, X):
        return np.sin(np.pi * X[:, 0])

    def zsrc(t, X):
        return np.zeros(X.shape[0])

    tg = TimeGrid(2.0, 256)
    traj = solve_forward(GRID, coeffs, src, tg)
    z = solve_z_system(traj, coeffs, src, zsrc)
    cell = GRID.h
    norms = np.sqrt(cell * np.sum(z.values ** 2, axis=1))
    assert norms[-1] <= 1e-3 * norms[128 + 8]


def test_z_system_reverse_mode_runs_finite():
    # experimental path: needs dt * |lambda_max| << 1 to avoid the backward
    # resonance 1 + dt*lambda ~ 0, hence the short horizon
    coeffs = CoefficientFields.constant(1)
    grid = g.GridSpec(1, 7)

    def src(t, X):
        return np.sin(np.pi * X[:, 0])

    def zsrc(t, X):
        return np.zeros(X.shape[0])

    traj = solve_forward(grid, coeffs, src, TimeGrid(0.02, 64))
    z = solve_z_system(traj, coeffs, src, zsrc, mode="reverse")
    assert z.meta["mode"] == "reverse"
    assert np.all(np.isfinite(z.values))


def test_z_system_requires_even_steps():
    coeffs = CoefficientFields.constant(1)
    traj = solve_forward(GRID, coeffs, lambda t, X: np.zeros(X.shape[0]), TimeGrid(1.0, 8))
    odd = Trajectory(GRID, TimeGrid(1.0, 9), np.zeros((10, 15)))
    with pytest.raises(GridError):
        solve_z_system(odd, coeffs, lambda t, X: np.zeros(X.shape[0]),
                       lambda t, X: np.zeros(X.shape[0]))


def test_energy_trivial_and_reduced_constant():
    coeffs = CoefficientFields.constant(1, gamma=1.0, c=0.75)

    def src(t, X):
        return np.zeros(X.shape[0])

    traj = solve_forward(GRID, coeffs, src, TimeGrid(1.0, 32))
    rep = energy_check(traj, coeffs, src, 0.0, 1.0)
    assert rep.holds and rep.lhs == 0.0
    # b absent: C~ collapses to ||c||_inf + 1/2
    assert rep.c_tilde == pytest.approx(0.75 + 0.5, rel=1e-12)


def test_energy_randomized_small(rng):
    violations = 0
    for k in range(10):
        r = np.random.default_rng(1000 + k)
        d = int(r.integers(1, 3))
        grid = g.GridSpec(d, int(r.integers(5, 9)))
        coeffs = random_smooth_coefficients(r, d, 1.0, time_dependent=True,
                                            b_amp=0.5, c_amp=1.0)
        pm = g.primal(grid)
        y0 = g.MeshFunction(pm, r.normal(size=pm.size))

        def src(t, X, a=r.normal(size=2)):
            return a[0] * np.prod(np.sin(np.pi * X), axis=1) * (1 + a[1] * math.sin(t))

        traj = solve_forward(grid, coeffs, src, TimeGrid(1.0, 64), y_ini=y0)
        for t0, t1 in ((0.0, 1.0), (0.25, 0.75)):
            violations += int(not energy_check(traj, coeffs, src, t0, t1).holds)
    assert violations == 0


def test_trajectory_round_trip_bit_exact(tmp_path, rng):
    tg = TimeGrid(1.0, 6)
    vals = rng.normal(size=(7, 15)) * np.pi
    traj = Trajectory(GRID, tg, vals, system="y", scheme="trapezoid",
                      meta={"note": "round-trip"})
    path = tmp_path / "traj.txt"
    traj.save(path)
    back = Trajectory.load(path)
    assert back.grid == GRID
    assert back.time_grid == tg
    assert back.meta["note"] == "round-trip"
    assert np.array_equal(back.values, traj.values)


def test_linear_solver_residual_contract(rng):
    coeffs = random_smooth_coefficients(rng, 1, 1.0, b_amp=0.9, time_dependent=True)
    tg = TimeGrid(0.5, 64)

    def src(t, X):
        return np.sin(np.pi * X[:, 0])

    traj = solve_forward(GRID, coeffs, src, tg)
    assert traj.diagnostics["max_linear_residual"] <= 1e-10


def test_trajectory_load_rejects_foreign_file(tmp_path):
    path = tmp_path / "not_a_traj.txt"
    path.write_text("something else entirely\n1 2 3\n")
    with pytest.raises(GridError, match="header"):
        Trajectory.load(path)


def test_solve_forward_rejects_wrong_initial_mesh():
    other = g.MeshFunction(g.dual_star(GRID, 0), np.zeros(16))
    with pytest.raises(Exception):
        solve_forward(GRID, CoefficientFields.constant(1),
                      lambda t, X: np.zeros(X.shape[0]), TimeGrid(1.0, 4), y_ini=other)


def test_coefficient_sampler_shape_validated():
    class BadSampler:
        def __call__(self, t, X):
            return np.zeros(3)  # wrong length

    bad = CoefficientFields(gamma=(BadSampler(),), b=None, c=ConstantField(0.0))
    with pytest.raises(GridError, match="shape"):
        assemble_ah(GRID, bad, 0.0)
