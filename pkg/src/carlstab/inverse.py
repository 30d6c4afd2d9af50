"""Observation operator, admissible sources, stability quotients, recovery.

The observation of a run is the pair (full-domain snapshot at the mid time,
trajectory restricted to the observation box), together with the weighted
norms entering the stability estimate:

    rhs_observed = ||y(vt)||_{H^2_h} + ||e^{s phi} dt y||_{L^2_h(Q_omega)}
                 + ||e^{s phi} y||_{L^2_h(Q_omega)}
    rhs_error    = e^{2 tau theta(0) sup(phi)} * (||y(0)|| + ||dt y(0)||)

The error-term prefactor is the sharp uniform bound on the endpoint weight,
exp(-2 tau theta(0) mu0); with delta coupled to the mesh it decays like
exp(-c/h), which the refinement studies measure through the exact log value.

A source is admissible when |dt g(t,x)| <= C |g(vt,x)| holds on the whole
space-time grid; separable sources f(x) R(t) with R bounded away from zero
get certified with C = max|R'| / |R(vt)|.

The reconstruction is Tikhonov-regularised least squares on the observation
misfit, solved matrix-free by conjugate gradients on the normal equations;
each application of the forward map is one implicit solve of the system and
each adjoint application one transposed sweep.  The estimate exists to
exhibit the stability constant operationally, not as a production inversion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import grid as g
from . import operators as ops
from .coefficients import CoefficientFields
from .errors import CertificationError, EmptyMaskError, GridError, SolverError
from .quadrature import Term, TermAccumulator
from .solver import TimeGrid, Trajectory, apply_ah, assemble_ah, _linear_solve
from .weights import Box, CarlemanWeight


@dataclass
class Observation:
    """Snapshot plus locally observed frames and their weighted norms."""

    vartheta: float
    snapshot: g.MeshFunction
    snapshot_h2: float
    omega: Box
    mask: np.ndarray
    local_y: np.ndarray          # (steps+1, |omega|)
    local_dt: np.ndarray
    weighted_y: Term
    weighted_dt: Term
    outside_proof_regime: bool


def observe(traj: Trajectory, z_traj: Trajectory, weight: CarlemanWeight,
            omega: Box) -> Observation:
    """Measure one run: mid-time snapshot and the omega-restricted histories."""
    tg = traj.time_grid
    vt = weight.params.obs_time
    idx = tg.index_of(vt)
    pm = g.primal(traj.grid)
    snapshot = traj.frame(idx)
    mask = omega.mask(pm.physical)
    if not np.any(mask):
        raise GridError("observation box contains no primal points on this grid")
    local_y = traj.values[:, mask]
    local_dt = z_traj.values[:, mask]
    phi_omega = weight.phi(pm.physical[mask])
    cell = traj.grid.h ** traj.grid.d
    times, trapw = tg.times, tg.trap
    acc_y, acc_dt = TermAccumulator(cell), TermAccumulator(cell)
    for m, t in enumerate(times):
        logw = weight.log_weight(float(t), phi_omega)
        acc_y.add_frame(local_y[m], logw, float(trapw[m]))
        acc_dt.add_frame(local_dt[m], logw, float(trapw[m]))
    return Observation(
        vartheta=vt,
        snapshot=snapshot,
        snapshot_h2=ops.h2_norm(snapshot),
        omega=omega,
        mask=mask,
        local_y=local_y,
        local_dt=local_dt,
        weighted_y=acc_y.result(),
        weighted_dt=acc_dt.result(),
        outside_proof_regime=bool(abs(vt - weight.params.T / 2.0) > 1e-12),
    )


@dataclass(frozen=True)
class SineTimeProfile:
    """R(t) = base + amp * sin(2 pi t / T + phase)."""

    base: float = 1.0
    amp: float = 0.5
    phase: float = 0.0
    T: float = 1.0

    def __call__(self, t):
        return self.base + self.amp * np.sin(2.0 * math.pi * np.asarray(t) / self.T + self.phase)

    def dt(self, t):
        return self.amp * (2.0 * math.pi / self.T) * np.cos(2.0 * math.pi * np.asarray(t) / self.T + self.phase)


@dataclass(frozen=True)
class FourierBump:
    """Random low-mode sine combination, identically zero on the box faces."""

    amps: tuple[float, ...]
    modes: tuple[tuple[int, ...], ...]

    def __call__(self, X):
        X = np.atleast_2d(X)
        out = np.zeros(X.shape[0])
        for a, ks in zip(self.amps, self.modes):
            term = np.ones(X.shape[0]) * a
            for i, k in enumerate(ks):
                term = term * np.sin(math.pi * k * X[:, i])
            out += term
        return out


def random_bump(rng: np.random.Generator, d: int, max_mode: int = 3) -> FourierBump:
    modes, amps = [], []
    for ks in np.ndindex(*((max_mode,) * d)):
        k = tuple(int(v) + 1 for v in ks)
        modes.append(k)
        amps.append(float(rng.normal() / (1.0 + sum(v * v for v in k))))
    return FourierBump(tuple(amps), tuple(modes))


@dataclass(frozen=True)
class SeparableSource:
    """g(t, x) = f(x) R(t) with the spatial profile frozen on construction."""

    profile: FourierBump
    r: SineTimeProfile

    def __call__(self, t, X):
        return self.profile(X) * float(self.r(t))

    def dt(self, t, X):
        return self.profile(X) * float(self.r.dt(t))


@dataclass
class AdmissibleSource:
    """A certified source: |dt g| <= c_g |g(vt, .)| on the space-time grid."""

    g: object
    dt_g: object
    c_g: float
    alpha: float
    vartheta: float
    f: g.MeshFunction | None = None
    r: object | None = None

    def g_at(self, t, X):
        return np.asarray(self.g(t, X), dtype=np.float64)

    def dt_g_at(self, t, X):
        return np.asarray(self.dt_g(t, X), dtype=np.float64)


def certify_source(g_fn, dt_fn, grid: g.GridSpec, time_grid: TimeGrid,
                   vartheta: float) -> float:
    """Smallest constant with |dt g| <= C |g(vt, x)| on the sampled grid."""
    X = g.primal(grid).physical
    ref = np.abs(np.asarray(g_fn(vartheta, X), dtype=np.float64))
    c_g = 0.0
    for t in time_grid.times:
        dtv = np.abs(np.asarray(dt_fn(float(t), X), dtype=np.float64))
        dead = ref <= 0.0
        if np.any(dtv[dead] > 1e-14 * max(1.0, float(np.max(dtv)))):
            k = int(np.argmax(np.where(dead, dtv, -np.inf)))
            raise CertificationError(
                f"|dt g| > 0 where g(vartheta, x) = 0 at t={float(t)}, x={X[k]}")
        live = ~dead
        if np.any(live):
            c_g = max(c_g, float(np.max(dtv[live] / ref[live])))
    return c_g


def certify_separable(src: SeparableSource, grid: g.GridSpec, time_grid: TimeGrid,
                      vartheta: float | None = None, alpha: float = 0.5) -> AdmissibleSource:
    """Certify a separable source on a given grid; rejects |R| dipping below alpha."""
    vt = time_grid.T / 2.0 if vartheta is None else vartheta
    time_grid.index_of(vt)
    r_vals = np.asarray(src.r(time_grid.times), dtype=np.float64)
    if float(np.min(np.abs(r_vals))) < alpha:
        raise CertificationError(
            f"time profile dips below alpha={alpha}: min |R| = {np.min(np.abs(r_vals)):.4g}")
    c_g = certify_source(src, src.dt, grid, time_grid, vt)
    f_mf = g.MeshFunction(g.primal(grid), src.profile(g.primal(grid).physical))
    return AdmissibleSource(g=src, dt_g=src.dt, c_g=c_g, alpha=alpha, vartheta=vt,
                            f=f_mf, r=src.r)


def generate_admissible(rng: np.random.Generator, grid: g.GridSpec,
                        time_grid: TimeGrid, vartheta: float | None = None,
                        mode: str = "separable", alpha: float = 0.5,
                        g_fn=None, dt_fn=None) -> AdmissibleSource:
    """Draw (or certify) a source satisfying the derivative-domination bound.

    Separable mode: random smooth bump profile times R(t) = 1 + amp sin(...)
    with min |R| >= alpha enforced; general mode certifies a caller-supplied
    (g, dt g) pair and rejects it on failure.
    """
    vt = time_grid.T / 2.0 if vartheta is None else vartheta
    if mode == "separable":
        profile = random_bump(rng, grid.d)
        r = SineTimeProfile(base=1.0, amp=0.5, phase=float(rng.uniform(0, 2 * math.pi)),
                            T=time_grid.T)
        return certify_separable(SeparableSource(profile, r), grid, time_grid, vt, alpha)
    if mode == "general":
        if g_fn is None or dt_fn is None:
            raise CertificationError("general mode needs explicit g and dt g samplers")
        time_grid.index_of(vt)
        c_g = certify_source(g_fn, dt_fn, grid, time_grid, vt)
        return AdmissibleSource(g=g_fn, dt_g=dt_fn, c_g=c_g, alpha=alpha, vartheta=vt)
    raise CertificationError(f"unknown source mode {mode!r}")


@dataclass
class StabilityResult:
    """Both sides of the stability inequality and the empirical quotient."""

    lhs: float
    rhs_observed: float
    rhs_error_term: float
    log_error_term: float
    quotient: float
    reduced_rhs: float
    reduced_quotient: float
    snapshot_h2: float
    weighted_dt_norm: float
    weighted_y_norm: float
    initial_norm: float
    initial_dt_norm: float


def stability_quotient(traj: Trajectory, z_traj: Trajectory, source: AdmissibleSource,
                       weight: CarlemanWeight, omega: Box) -> StabilityResult:
    """Measure ||g(vt)|| against the observed norms plus the mesh error term.

    The reduced variant (time-independent coefficients) drops the weighted
    zero-order observation and keeps only the initial time-derivative norm in
    the error term.
    """
    weight.require_admissible()
    obs = observe(traj, z_traj, weight, omega)
    pm = g.primal(traj.grid)
    lhs = ops.l2_norm(g.MeshFunction(pm, source.g_at(obs.vartheta, pm.physical)))
    w_dt = math.sqrt(max(obs.weighted_dt.value, 0.0))
    w_y = math.sqrt(max(obs.weighted_y.value, 0.0))
    rhs_observed = obs.snapshot_h2 + w_dt + w_y
    y0 = ops.l2_norm(traj.frame(0))
    z0 = ops.l2_norm(z_traj.frame(0))
    log_pref = -2.0 * weight.params.tau * float(weight.theta(0.0)) * weight.mu0
    err = math.exp(log_pref) * (y0 + z0) if log_pref > -745.0 else 0.0
    log_err = log_pref + math.log(y0 + z0) if y0 + z0 > 0 else -math.inf
    denom = rhs_observed + err
    quotient = lhs / denom if denom > 0 else 0.0
    err_red = math.exp(log_pref) * z0 if log_pref > -745.0 else 0.0
    reduced_rhs = obs.snapshot_h2 + w_dt + err_red
    reduced_quotient = lhs / reduced_rhs if reduced_rhs > 0 else 0.0
    return StabilityResult(
        lhs=lhs, rhs_observed=rhs_observed, rhs_error_term=err, log_error_term=log_err,
        quotient=quotient, reduced_rhs=reduced_rhs, reduced_quotient=reduced_quotient,
        snapshot_h2=obs.snapshot_h2, weighted_dt_norm=w_dt, weighted_y_norm=w_y,
        initial_norm=y0, initial_dt_norm=z0,
    )


# reconstruction -----------------------------------------------------------


class _ForwardMap:
    """Linear map f -> stacked weighted observation of the zero-initial run.

    Steps are y_{m+1} = L_m^{-1} (R_m y_m + s_m f) with L_m = I - dt/2 A(t_{m+1}),
    R_m = I + dt/2 A(t_m), s_m = dt/2 (R(t_m) + R(t_{m+1})); the adjoint runs the
    transposed recursion backwards and accumulates s_m lambda_{m+1}.
    """

    def __init__(self, grid: g.GridSpec, coeffs: CoefficientFields, r: SineTimeProfile,
                 time_grid: TimeGrid, mask: np.ndarray, obs_time: float):
        self.grid = grid
        self.time_grid = time_grid
        self.mask = mask
        self.obs_index = time_grid.index_of(obs_time)
        pm = g.primal(grid)
        self.size = pm.size
        dt = time_grid.dt
        times = time_grid.times
        eye = sp.identity(self.size, format="csr")
        self.lhs_mats, self.lhs_mats_t, self.rhs_mats, self.src_coef = [], [], [], []
        r_vals = np.asarray(r(times), dtype=np.float64)
        for m in range(time_grid.steps):
            if coeffs.time_independent and m > 0:
                self.lhs_mats.append(self.lhs_mats[0])
                self.lhs_mats_t.append(self.lhs_mats_t[0])
                self.rhs_mats.append(self.rhs_mats[0])
            else:
                a0 = assemble_ah(grid, coeffs, float(times[m]))
                a1 = assemble_ah(grid, coeffs, float(times[m + 1]))
                self.lhs_mats.append((eye - 0.5 * dt * a1).tocsr())
                self.lhs_mats_t.append(self.lhs_mats[-1].T.tocsr())
                self.rhs_mats.append((eye + 0.5 * dt * a0).tocsr())
            self.src_coef.append(0.5 * dt * (r_vals[m] + r_vals[m + 1]))
        cell = grid.h ** grid.d
        self.w_snap = math.sqrt(cell)
        self.w_frames = np.sqrt(time_grid.trap * cell)
        self.n_obs = self.size + (time_grid.steps + 1) * int(mask.sum())
        self.symmetric = coeffs.symmetric
        self.solves = 0

    def stack(self, snapshot: np.ndarray, frames_local: np.ndarray) -> np.ndarray:
        parts = [self.w_snap * snapshot]
        for m in range(self.time_grid.steps + 1):
            parts.append(self.w_frames[m] * frames_local[m])
        return np.concatenate(parts)

    def apply(self, f: np.ndarray) -> np.ndarray:
        y = np.zeros(self.size)
        frames_local = np.empty((self.time_grid.steps + 1, int(self.mask.sum())))
        frames_local[0] = 0.0
        snapshot = np.zeros(self.size)
        for m in range(self.time_grid.steps):
            rhs = self.rhs_mats[m] @ y + self.src_coef[m] * f
            y = _linear_solve(self.lhs_mats[m], rhs, self.symmetric)
            self.solves += 1
            frames_local[m + 1] = y[self.mask]
            if m + 1 == self.obs_index:
                snapshot = y.copy()
        return self.stack(snapshot, frames_local)

    def apply_adjoint(self, resid: np.ndarray) -> np.ndarray:
        r_snap = resid[: self.size]
        locals_ = resid[self.size:].reshape(self.time_grid.steps + 1, -1)
        out = np.zeros(self.size)
        lam = np.zeros(self.size)
        for m in range(self.time_grid.steps, 0, -1):
            q = np.zeros(self.size)
            q[self.mask] = self.w_frames[m] * locals_[m]
            if m == self.obs_index:
                q += self.w_snap * r_snap
            if m < self.time_grid.steps:
                q += self.rhs_mats[m].T @ lam
            lam = _linear_solve(self.lhs_mats_t[m - 1], q, self.symmetric)
            self.solves += 1
            out += self.src_coef[m - 1] * lam
        return out


@dataclass
class ReconstructionResult:
    f_estimate: g.MeshFunction
    beta: float
    iterations: int
    residual_history: list
    relative_error: float | None
    forward_solves: int


def _cg_normal(normal_op, b: np.ndarray, tol: float, max_iter: int):
    """Conjugate gradients on SPD normal equations with a progress guard.

    Raises when the residual norm drops by less than one percent over twenty
    consecutive iterations before reaching the tolerance.
    """
    x = np.zeros_like(b)
    rvec = b.copy()
    p = rvec.copy()
    rs = float(rvec @ rvec)
    rs0 = rs
    history = [math.sqrt(rs)]
    it = 0
    while it < max_iter and rs > tol * tol * rs0:
        ap = normal_op(p)
        alpha = rs / float(p @ ap)
        x += alpha * p
        rvec -= alpha * ap
        rs_new = float(rvec @ rvec)
        history.append(math.sqrt(rs_new))
        if len(history) > 21:
            drop = history[-21] - history[-1]
            if drop < 1e-2 * history[-21]:
                raise SolverError(
                    f"reconstruction stagnated: residual decrease {drop:.3e} over 20 iterations")
        p = rvec + (rs_new / rs) * p
        rs = rs_new
        it += 1
    return x, it, history


def reconstruct_source(grid: g.GridSpec, coeffs: CoefficientFields, r: SineTimeProfile,
                       time_grid: TimeGrid, observation: Observation, beta: float,
                       truth: g.MeshFunction | None = None, tol: float = 1e-12,
                       max_iter: int = 500) -> ReconstructionResult:
    """Tikhonov least squares for the spatial profile of a separable source.

    Minimises ||F f - data||^2 + beta ||f||^2 by conjugate gradients on the
    normal equations; stagnation (relative residual decrease below 1e-2 over
    20 iterations) raises.  Relative L2 error against the truth is reported
    when the truth is supplied.
    """
    fwd = _ForwardMap(grid, coeffs, r, time_grid, observation.mask, observation.vartheta)
    data = fwd.stack(observation.snapshot.values, observation.local_y)
    cell = grid.h ** grid.d
    b = fwd.apply_adjoint(data)

    def normal_op(v):
        return fwd.apply_adjoint(fwd.apply(v)) + beta * cell * v

    x, it, history = _cg_normal(normal_op, b, tol, max_iter)
    est = g.MeshFunction(g.primal(grid), x)
    rel = None
    if truth is not None:
        diff = g.MeshFunction(est.mesh, est.values - truth.values)
        denom = ops.l2_norm(truth)
        rel = ops.l2_norm(diff) / denom if denom > 0 else ops.l2_norm(diff)
    return ReconstructionResult(f_estimate=est, beta=beta, iterations=it,
                                residual_history=history, relative_error=rel,
                                forward_solves=fwd.solves)


def add_observation_noise(obs: Observation, level: float,
                          rng: np.random.Generator) -> Observation:
    """Multiplicative Gaussian noise on every observed entry, seed-controlled."""
    if level <= 0:
        return obs
    snap = obs.snapshot.values * (1.0 + level * rng.standard_normal(obs.snapshot.values.shape))
    loc = obs.local_y * (1.0 + level * rng.standard_normal(obs.local_y.shape))
    out = Observation(
        vartheta=obs.vartheta,
        snapshot=g.MeshFunction(obs.snapshot.mesh, snap),
        snapshot_h2=obs.snapshot_h2, omega=obs.omega, mask=obs.mask,
        local_y=loc, local_dt=obs.local_dt,
        weighted_y=obs.weighted_y, weighted_dt=obs.weighted_dt,
        outside_proof_regime=obs.outside_proof_regime,
    )
    return out


@dataclass
class CoefficientRecovery:
    p_estimate: g.MeshFunction
    mask: np.ndarray
    relative_error: float | None
    mask_fraction: float


def recover_coefficient(traj: Trajectory, z_traj: Trajectory,
                        base_coeffs: CoefficientFields, alpha: float,
                        truth: g.MeshFunction | None = None) -> CoefficientRecovery:
    """Pointwise zero-order coefficient from the mid-time snapshot.

    On points where |y(vt)| >= alpha,

        p(x) = (dt y(vt, x) - A~_h y(vt, x)) / y(vt, x),

    with A~_h the operator without the sought zero-order part; masked (NaN)
    elsewhere.  Raises when the mask is empty.
    """
    tg = traj.time_grid
    idx = tg.index_of(tg.T / 2.0)
    pm = g.primal(traj.grid)
    y_vt = traj.frame(idx)
    z_vt = z_traj.values[idx]
    mask = np.abs(y_vt.values) >= alpha
    if not np.any(mask):
        raise EmptyMaskError(
            f"no snapshot values reach alpha={alpha} (max |y| = {np.max(np.abs(y_vt.values)):.4g})")
    a_y = apply_ah(traj.grid, base_coeffs, float(tg.times[idx]), y_vt).values
    est = np.full(pm.size, np.nan)
    est[mask] = (z_vt[mask] - a_y[mask]) / y_vt.values[mask]
    rel = None
    if truth is not None:
        diff = est[mask] - truth.values[mask]
        denom = math.sqrt(float(np.sum(truth.values[mask] ** 2)))
        rel = math.sqrt(float(np.sum(diff ** 2))) / denom if denom > 0 else None
    return CoefficientRecovery(
        p_estimate=g.MeshFunction(pm, np.where(mask, est, np.nan)),
        mask=mask,
        relative_error=rel,
        mask_fraction=float(mask.mean()),
    )
