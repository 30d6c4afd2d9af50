import math

import numpy as np
import pytest

from carlstab import grid as g
from carlstab import operators as ops
from carlstab.coefficients import CoefficientFields, random_smooth_coefficients
from carlstab.errors import (AdmissibilityError, CertificationError, EmptyMaskError,
                             GridError)
from carlstab.inverse import (AdmissibleSource, SeparableSource, SineTimeProfile,
                              _ForwardMap, add_observation_noise, certify_separable,
                              generate_admissible, observe, random_bump,
                              reconstruct_source, recover_coefficient, stability_quotient)
from carlstab.solver import TimeGrid, Trajectory, solve_forward, solve_z_system
from carlstab.weights import Box, CarlemanWeight, WeightParams

GRID = g.GridSpec(1, 15)
OMEGA = Box.cube(0.2, 0.8, 1)
OMEGA0 = Box.cube(0.35, 0.65, 1)


def make_weight(tau=3.0, delta=0.5):
    return CarlemanWeight(GRID, WeightParams(T=1.0, tau=tau, delta=delta), OMEGA0, OMEGA)


def solved_pair(seed=11, steps=256, y_ini=None):
    rng = np.random.default_rng(seed)
    coeffs = random_smooth_coefficients(rng, 1, 1.0, time_dependent=False)
    tg = TimeGrid(1.0, steps)
    adm = generate_admissible(rng, GRID, tg)
    traj = solve_forward(GRID, coeffs, adm.g, tg, y_ini=y_ini)
    z = solve_z_system(traj, coeffs, adm.g, adm.dt_g)
    return coeffs, adm, traj, z


def test_certificate_r_constant_gives_zero():
    profile = random_bump(np.random.default_rng(0), 1)
    src = SeparableSource(profile, SineTimeProfile(1.0, 0.0, 0.0, 1.0))
    adm = certify_separable(src, GRID, TimeGrid(1.0, 64))
    assert adm.c_g == 0.0


def test_certificate_matches_dense_sampling():
    rng = np.random.default_rng(1)
    tg = TimeGrid(1.0, 256)
    adm = generate_admissible(rng, GRID, tg)
    on_grid = np.max(np.abs(adm.r.dt(tg.times))) / abs(float(adm.r(0.5)))
    assert adm.c_g == pytest.approx(on_grid, rel=1e-12)
    # dense oracle agrees up to the grid's sampling resolution
    dense = np.linspace(0, 1, 20001)
    expected = np.max(np.abs(adm.r.dt(dense))) / abs(float(adm.r(0.5)))
    assert adm.c_g == pytest.approx(expected, rel=1e-4)


def test_zero_crossing_profile_rejected():
    profile = random_bump(np.random.default_rng(2), 1)
    src = SeparableSource(profile, SineTimeProfile(0.2, 0.5, 0.0, 1.0))
    with pytest.raises(CertificationError):
        certify_separable(src, GRID, TimeGrid(1.0, 64))


def test_general_mode_certifies_or_rejects():
    tg = TimeGrid(1.0, 64)

    def g_fn(t, X):
        return np.cos(np.pi * X[:, 0] / 4.0) * (1.5 + math.sin(2 * math.pi * t) / 2.0)

    def dt_fn(t, X):
        return np.cos(np.pi * X[:, 0] / 4.0) * (math.pi * math.cos(2 * math.pi * t))

    adm = generate_admissible(np.random.default_rng(0), GRID, tg, mode="general",
                              g_fn=g_fn, dt_fn=dt_fn)
    assert adm.c_g > 0

    def bad_g(t, X):
        return np.maximum(X[:, 0] - 0.5, 0.0)  # vanishes at vartheta on half the grid

    def bad_dt(t, X):
        return np.ones(X.shape[0])

    with pytest.raises(CertificationError):
        generate_admissible(np.random.default_rng(0), GRID, tg, mode="general",
                            g_fn=bad_g, dt_fn=bad_dt)


def test_observation_zero_run():
    coeffs = CoefficientFields.constant(1)
    tg = TimeGrid(1.0, 64)
    traj = solve_forward(GRID, coeffs, lambda t, X: np.zeros(X.shape[0]), tg)
    z = Trajectory(GRID, tg, np.zeros_like(traj.values), system="z")
    obs = observe(traj, z, make_weight(), OMEGA)
    assert obs.snapshot_h2 == 0.0
    assert obs.weighted_y.value == 0.0 and obs.weighted_dt.value == 0.0


def test_observation_norms_match_direct_sum():
    coeffs, adm, traj, z = solved_pair(seed=21, steps=64)
    w = make_weight()
    obs = observe(traj, z, w, OMEGA)
    pm = g.primal(GRID)
    mask = OMEGA.mask(pm.physical)
    phi = w.phi(pm.physical[mask])
    tg = traj.time_grid
    total = 0.0
    for m, t in enumerate(tg.times):
        tw = tg.dt if 0 < m < tg.steps else tg.dt / 2
        st = w.params.tau * float(w.theta(float(t)))
        total += tw * GRID.h * sum(v * v * math.exp(2 * st * p)
                                   for v, p in zip(traj.values[m][mask], phi))
    assert obs.weighted_y.value == pytest.approx(total, rel=1e-10)


def test_observation_requires_frame_time():
    coeffs, adm, traj, z = solved_pair(seed=22, steps=64)
    w = CarlemanWeight(GRID, WeightParams(T=1.0, tau=3.0, vartheta=1 / 3), OMEGA0, OMEGA)
    with pytest.raises(GridError):
        observe(traj, z, w, OMEGA)


def test_omega_monotonicity_of_observation():
    coeffs, adm, traj, z = solved_pair(seed=23, steps=64)
    w = make_weight()
    small = observe(traj, z, w, Box.cube(0.3, 0.7, 1))
    large = observe(traj, z, w, OMEGA)
    assert small.weighted_y.value <= large.weighted_y.value
    assert small.weighted_dt.value <= large.weighted_dt.value


def test_stability_quotient_zero_source():
    coeffs = CoefficientFields.constant(1)
    tg = TimeGrid(1.0, 64)
    traj = solve_forward(GRID, coeffs, lambda t, X: np.zeros(X.shape[0]), tg)
    z = Trajectory(GRID, tg, np.zeros_like(traj.values), system="z")
    zero_profile = SeparableSource(
        random_bump(np.random.default_rng(0), 1), SineTimeProfile(1.0, 0.0, 0.0, 1.0))
    adm = AdmissibleSource(g=lambda t, X: np.zeros(X.shape[0]),
                           dt_g=lambda t, X: np.zeros(X.shape[0]),
                           c_g=0.0, alpha=0.5, vartheta=0.5)
    res = stability_quotient(traj, z, adm, make_weight(), OMEGA)
    assert res.lhs == 0.0 and res.quotient == 0.0


def test_stability_quotient_zero_initial_data():
    coeffs, adm, traj, z = solved_pair(seed=31)
    res = stability_quotient(traj, z, adm, make_weight(), OMEGA)
    # y(0) = 0 kills the y-part; z(0) = g(0) != 0 but the prefactor crushes it
    assert res.initial_norm == 0.0
    assert res.rhs_error_term <= 1e-50 * res.rhs_observed
    assert math.isfinite(res.quotient) and res.quotient > 0
    assert res.reduced_quotient > 0


def test_stability_quotient_scale_invariance():
    rng = np.random.default_rng(41)
    coeffs = random_smooth_coefficients(rng, 1, 1.0, time_dependent=False)
    tg = TimeGrid(1.0, 128)
    adm = generate_admissible(rng, GRID, tg)
    traj = solve_forward(GRID, coeffs, adm.g, tg)
    z = solve_z_system(traj, coeffs, adm.g, adm.dt_g)
    res1 = stability_quotient(traj, z, adm, make_weight(), OMEGA)

    class Scaled:
        def __init__(self, fn):
            self.fn = fn

        def __call__(self, t, X):
            return 3.0 * self.fn(t, X)

    adm3 = AdmissibleSource(g=Scaled(adm.g), dt_g=Scaled(adm.dt_g), c_g=adm.c_g,
                            alpha=adm.alpha, vartheta=adm.vartheta)
    traj3 = Trajectory(GRID, tg, 3.0 * traj.values)
    z3 = Trajectory(GRID, tg, 3.0 * z.values, system="z")
    res3 = stability_quotient(traj3, z3, adm3, make_weight(), OMEGA)
    assert res3.lhs == pytest.approx(3.0 * res1.lhs, rel=1e-12)
    assert res3.quotient == pytest.approx(res1.quotient, rel=1e-10)


def test_stability_quotient_omega_shrink_monotone():
    coeffs, adm, traj, z = solved_pair(seed=43)
    w = make_weight()
    q_small = stability_quotient(traj, z, adm, w, Box.cube(0.3, 0.7, 1)).quotient
    q_large = stability_quotient(traj, z, adm, w, OMEGA).quotient
    assert q_small >= q_large


def test_stability_quotient_rejects_inadmissible():
    coeffs, adm, traj, z = solved_pair(seed=44, steps=64)
    with pytest.raises(AdmissibilityError):
        stability_quotient(traj, z, adm, make_weight(tau=20.0), OMEGA)


def test_error_term_refinement_decay():
    rng = np.random.default_rng(51)
    y_prof = random_bump(rng, 1)
    src = SeparableSource(random_bump(rng, 1), SineTimeProfile(1.0, 0.5, 0.7, 1.0))
    coeffs = random_smooth_coefficients(rng, 1, 1.0, time_dependent=False)
    logs = []
    for n in (15, 31):
        grid = g.GridSpec(1, n)
        tg = TimeGrid(1.0, 128)
        adm = certify_separable(src, grid, tg)
        pm = g.primal(grid)
        y0 = g.MeshFunction(pm, y_prof(pm.physical))
        traj = solve_forward(grid, coeffs, adm.g, tg, y_ini=y0)
        z = solve_z_system(traj, coeffs, adm.g, adm.dt_g)
        params = WeightParams(T=1.0, tau=2.5, delta=2.5 * grid.h / 0.5)
        w = CarlemanWeight(grid, params, OMEGA0, OMEGA)
        res = stability_quotient(traj, z, adm, w, OMEGA)
        logs.append(res.log_error_term)
    assert logs[1] < logs[0]


def test_forward_map_adjoint_identity(rng):
    coeffs = random_smooth_coefficients(rng, 1, 1.0, time_dependent=False)
    r = SineTimeProfile(1.0, 0.5, 0.2, 1.0)
    fwd = _ForwardMap(GRID, coeffs, r, TimeGrid(1.0, 24), OMEGA.mask(g.primal(GRID).physical), 0.5)
    for _ in range(3):
        f = rng.normal(size=fwd.size)
        v = rng.normal(size=fwd.n_obs)
        lhs = float(fwd.apply(f) @ v)
        rhs = float(f @ fwd.apply_adjoint(v))
        assert lhs == pytest.approx(rhs, rel=1e-9)


def test_reconstruction_zero_truth():
    coeffs, adm, traj, z = solved_pair(seed=61, steps=96)
    w = make_weight()
    tg = traj.time_grid
    zeros = Trajectory(GRID, tg, np.zeros_like(traj.values))
    zeros_z = Trajectory(GRID, tg, np.zeros_like(traj.values), system="z")
    obs = observe(zeros, zeros_z, w, OMEGA)
    rec = reconstruct_source(GRID, coeffs, adm.r, tg, obs, beta=1e-10)
    assert ops.l2_norm(rec.f_estimate) <= 1e-10


def test_reconstruction_noiseless_twin():
    coeffs, adm, traj, z = solved_pair(seed=63, steps=128)
    obs = observe(traj, z, make_weight(), OMEGA)
    rec = reconstruct_source(GRID, coeffs, adm.r, traj.time_grid, obs, beta=1e-12,
                             truth=adm.f)
    assert rec.relative_error <= 5e-3


def test_reconstruction_noise_sweep_reports():
    coeffs, adm, traj, z = solved_pair(seed=65, steps=96)
    obs = observe(traj, z, make_weight(), OMEGA)
    noisy = add_observation_noise(obs, 0.01, np.random.default_rng(1))
    errs = []
    for beta in (1e-10, 1e-6, 1e-2):
        rec = reconstruct_source(GRID, coeffs, adm.r, traj.time_grid, noisy, beta=beta,
                                 truth=adm.f)
        errs.append(rec.relative_error)
    assert all(math.isfinite(e) for e in errs)


def test_coefficient_recovery_zero_truth():
    grid = g.GridSpec(1, 15)
    pm = g.primal(grid)
    coeffs = CoefficientFields.constant(1)
    y0 = g.sample(pm, lambda X: np.sin(np.pi * X[:, 0]))
    tg = TimeGrid(0.2, 512)
    traj = solve_forward(grid, coeffs, lambda t, X: np.zeros(X.shape[0]), tg, y_ini=y0)
    z = solve_z_system(traj, coeffs, lambda t, X: np.zeros(X.shape[0]),
                       lambda t, X: np.zeros(X.shape[0]), mode="difference")
    rec = recover_coefficient(traj, z, coeffs, alpha=0.02,
                              truth=g.MeshFunction(pm, np.zeros(pm.size)))
    assert np.nanmax(np.abs(rec.p_estimate.values)) <= 1e-3


def test_coefficient_recovery_empty_mask():
    grid = g.GridSpec(1, 7)
    pm = g.primal(grid)
    tg = TimeGrid(0.2, 16)
    traj = Trajectory(grid, tg, np.full((17, 7), 1e-6))
    z = Trajectory(grid, tg, np.zeros((17, 7)), system="z")
    with pytest.raises(EmptyMaskError):
        recover_coefficient(traj, z, CoefficientFields.constant(1), alpha=5.0)


def test_observation_linearity_superposition():
    # zero initial data: the map source -> (snapshot, local frames) is linear
    rng = np.random.default_rng(71)
    coeffs = random_smooth_coefficients(rng, 1, 1.0, time_dependent=False)
    tg = TimeGrid(1.0, 64)
    s1 = SeparableSource(random_bump(rng, 1), SineTimeProfile(1.0, 0.5, 0.1, 1.0))
    s2 = SeparableSource(random_bump(rng, 1), SineTimeProfile(1.0, 0.5, 1.7, 1.0))

    def s_sum(t, X):
        return s1(t, X) + s2(t, X)

    t1 = solve_forward(GRID, coeffs, s1, tg)
    t2 = solve_forward(GRID, coeffs, s2, tg)
    t12 = solve_forward(GRID, coeffs, s_sum, tg)
    gap = np.max(np.abs(t12.values - t1.values - t2.values))
    assert gap <= 1e-9 * max(1.0, np.max(np.abs(t12.values)))


def test_unknown_source_mode_rejected():
    with pytest.raises(CertificationError):
        generate_admissible(np.random.default_rng(0), GRID, TimeGrid(1.0, 8),
                            mode="bespoke")


def test_outside_proof_regime_flagged():
    coeffs, adm, traj, z = solved_pair(seed=81, steps=256)
    w = CarlemanWeight(GRID, WeightParams(T=1.0, tau=3.0, vartheta=0.25), OMEGA0, OMEGA)
    obs = observe(traj, z, w, OMEGA)
    assert obs.outside_proof_regime
    w_mid = CarlemanWeight(GRID, WeightParams(T=1.0, tau=3.0), OMEGA0, OMEGA)
    assert not observe(traj, z, w_mid, OMEGA).outside_proof_regime


def test_cg_normal_stagnation_guard():
    from carlstab.errors import SolverError
    from carlstab.inverse import _cg_normal
    # a 1e16 condition number stalls float64 CG well before the tolerance
    diag = np.logspace(0, -16, 300)
    b = np.ones(300)
    with pytest.raises(SolverError, match="stagnat"):
        _cg_normal(lambda v: diag * v, b, tol=1e-14, max_iter=5000)
