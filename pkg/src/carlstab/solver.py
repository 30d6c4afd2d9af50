"""Semi-discrete parabolic operator assembly and implicit time stepping.

The spatial operator on primal unknowns (homogeneous Dirichlet data) is

    A_h y = sum_i D_i(gamma_i D_i y) - sum_i b_i D_i A_i y - c y,

assembled both as a sparse matrix (per-axis three-point stencils) and as a
matrix-free application through the difference/average operators; the two
routes agree to rounding and are cross-checked in the tests.

Time integration is ours: backward Euler or the trapezoidal rule, each step
solving (I - dt * zeta * A_h) y_{m+1} = rhs.  Linear solves use diagonally
preconditioned CG when the operator is symmetric (no advection) and BiCGStab
otherwise, and must reach relative residual 1e-10 or the step raises.

The differentiated system for z ~ dt y carries the data at the mid time

    z(T/2) = C_h y(T/2) + g(T/2),      C_h = A_h frozen at T/2,

and the forcing B_h y + dt g, where B_h collects the time derivatives of the
coefficients.  Integrating forward of T/2 is well posed; on [0, T/2) the
default is the second-order differencing of the y frames (the reversed-time
integration is available but experimental: the backward heat flow amplifies
high frequencies and implicit stepping merely damps them inaccurately).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import grid as g
from . import operators as ops
from .coefficients import CoefficientFields
from .errors import GridError, SolverError
from .quadrature import exact_sum, trapezoid_weights

LINEAR_RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class TimeGrid:
    T: float
    steps: int

    def __post_init__(self):
        if self.T <= 0 or self.steps < 1:
            raise GridError(f"invalid time grid T={self.T}, steps={self.steps}")

    @property
    def dt(self) -> float:
        return self.T / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.steps + 1)

    @property
    def trap(self) -> np.ndarray:
        return trapezoid_weights(self.steps + 1, self.dt)

    def index_of(self, t: float) -> int:
        i = int(round(t / self.dt))
        if not 0 <= i <= self.steps or abs(i * self.dt - t) > 1e-9 * max(self.T, 1.0):
            raise GridError(f"time {t} is not a frame of the grid (dt={self.dt})")
        return i


@dataclass
class Trajectory:
    """Frames of a primal field over a time grid, plus solve metadata."""

    grid: g.GridSpec
    time_grid: TimeGrid
    values: np.ndarray          # shape (steps+1, primal size)
    system: str = "y"
    scheme: str = "trapezoid"
    meta: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = (self.time_grid.steps + 1, g.primal(self.grid).size)
        if self.values.shape != expected:
            raise GridError(f"trajectory shape {self.values.shape}, expected {expected}")

    @property
    def mesh(self) -> g.Mesh:
        return g.primal(self.grid)

    def frame(self, i: int) -> g.MeshFunction:
        return g.MeshFunction(self.mesh, self.values[i])

    def frame_at(self, t: float) -> g.MeshFunction:
        return self.frame(self.time_grid.index_of(t))

    def dt_frames(self) -> np.ndarray:
        return central_time_derivative(self.values, self.time_grid.dt)

    def save(self, path):
        with open(path, "w") as f:
            f.write("carlstab-trajectory 1\n")
            f.write(f"system {self.system}\n")
            f.write(f"scheme {self.scheme}\n")
            f.write(f"d {self.grid.d}\n")
            f.write(f"n {self.grid.n}\n")
            f.write(f"T {float(self.time_grid.T).hex()}\n")
            f.write(f"steps {self.time_grid.steps}\n")
            for key, val in sorted(self.meta.items()):
                f.write(f"meta.{key} {val}\n")
            f.write("frames\n")
            for row in self.values:
                f.write(" ".join(v.hex() for v in row.tolist()))
                f.write("\n")

    @staticmethod
    def load(path) -> "Trajectory":
        with open(path) as f:
            magic = f.readline().strip()
            if magic != "carlstab-trajectory 1":
                raise GridError(f"unrecognised trajectory header: {magic!r}")
            header, meta = {}, {}
            for line in f:
                line = line.rstrip("\n")
                if line == "frames":
                    break
                key, _, val = line.partition(" ")
                if key.startswith("meta."):
                    meta[key[5:]] = val
                else:
                    header[key] = val
            rows = [[float.fromhex(tok) for tok in line.split()] for line in f if line.strip()]
        grid = g.GridSpec(int(header["d"]), int(header["n"]))
        tg = TimeGrid(float.fromhex(header["T"]), int(header["steps"]))
        return Trajectory(grid, tg, np.asarray(rows), system=header["system"],
                          scheme=header["scheme"], meta=meta)


def central_time_derivative(values: np.ndarray, dt: float) -> np.ndarray:
    """Second-order time derivative of frames; one-sided at the endpoints."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] < 3:
        raise GridError("need at least three frames for second-order differencing")
    out = np.empty_like(values)
    out[1:-1] = (values[2:] - values[:-2]) / (2.0 * dt)
    out[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dt)
    out[-1] = (3.0 * values[-1] - 4.0 * values[-2] + values[-3]) / (2.0 * dt)
    return out


def _sample_coefficient(fn, t: float, X: np.ndarray) -> np.ndarray:
    vals = np.asarray(fn(t, X), dtype=np.float64)
    if vals.shape != (X.shape[0],):
        raise GridError(f"coefficient sampler returned shape {vals.shape}, expected ({X.shape[0]},)")
    return vals


def assemble_ah(grid: g.GridSpec, coeffs: CoefficientFields, t: float) -> sp.csr_matrix:
    """Sparse matrix of A_h on primal unknowns at time t.

    Per axis: the divergence-form part contributes the three-point stencil
    [gamma_-, -(gamma_+ + gamma_-), gamma_+]/h^2 with face-sampled diffusion,
    the advection part the wide difference -b (y_+ - y_-)/(2h); the zero-order
    part is diagonal.  Rejects non-positive diffusion with its location.
    """
    if coeffs.d != grid.d:
        raise GridError(f"coefficients for d={coeffs.d} used with grid d={grid.d}")
    pm = g.primal(grid)
    n, d, h = grid.n, grid.d, grid.h
    shape = pm.shape
    size = pm.size
    idx = np.arange(size).reshape(shape)
    Xp = pm.physical
    rows, cols, data = [], [], []
    diag = np.zeros(size)
    for ax in range(d):
        star = g.dual_star(grid, ax)
        gam = _sample_coefficient(coeffs.gamma[ax], t, star.physical)
        if np.any(gam <= 0.0):
            k = int(np.argmin(gam))
            raise GridError(
                f"non-positive diffusion gamma_{ax}={gam[k]:.4g} at x={star.physical[k]}, t={t}")
        gam = gam.reshape(star.shape)
        sl_lo = [slice(None)] * d
        sl_hi = [slice(None)] * d
        sl_lo[ax] = slice(None, -1)
        sl_hi[ax] = slice(1, None)
        g_minus = gam[tuple(sl_lo)]
        g_plus = gam[tuple(sl_hi)]
        diag += (-(g_plus + g_minus) / (h * h)).ravel()
        # neighbour couplings within the interior
        rows_up = idx[tuple(sl_lo)].ravel()
        cols_up = idx[tuple(sl_hi)].ravel()
        coeff_up = (g_plus[tuple(sl_lo)] / (h * h)).ravel()
        coeff_dn = (g_minus[tuple(sl_hi)] / (h * h)).ravel()
        rows.extend([rows_up, cols_up])
        cols.extend([cols_up, rows_up])
        data.extend([coeff_up, coeff_dn])
        if coeffs.b is not None:
            bvals = _sample_coefficient(coeffs.b[ax], t, Xp).reshape(shape)
            adv_up = (-bvals[tuple(sl_lo)] / (2.0 * h)).ravel()
            adv_dn = (bvals[tuple(sl_hi)] / (2.0 * h)).ravel()
            rows.extend([rows_up, cols_up])
            cols.extend([cols_up, rows_up])
            data.extend([adv_up, adv_dn])
    diag -= _sample_coefficient(coeffs.c, t, Xp)
    rows.append(np.arange(size))
    cols.append(np.arange(size))
    data.append(diag)
    A = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(size, size),
    )
    return A.tocsr()


def apply_ah(grid: g.GridSpec, coeffs: CoefficientFields, t: float,
             u: g.MeshFunction) -> g.MeshFunction:
    """Matrix-free A_h through the difference/average operators (oracle route)."""
    pm = g.primal(grid)
    g.require_mesh(u, pm, "apply_ah argument")
    out = np.zeros(pm.size)
    for ax in range(grid.d):
        du = ops.diff(u, ax)
        gam = _sample_coefficient(coeffs.gamma[ax], t, du.mesh.physical)
        if np.any(gam <= 0.0):
            k = int(np.argmin(gam))
            raise GridError(
                f"non-positive diffusion gamma_{ax}={gam[k]:.4g} at x={du.mesh.physical[k]}, t={t}")
        flux = g.MeshFunction(du.mesh, gam * du.values)
        out += ops.diff(flux, ax).values
        if coeffs.b is not None:
            b = _sample_coefficient(coeffs.b[ax], t, pm.physical)
            out -= b * ops.avg_diff(u, ax).values
    out -= _sample_coefficient(coeffs.c, t, pm.physical) * u.values
    return g.MeshFunction(pm, out)


def apply_bh(grid: g.GridSpec, coeffs: CoefficientFields, t: float,
             u: g.MeshFunction) -> g.MeshFunction:
    """The coefficient-derivative operator feeding the differentiated system.

    B_h u = sum_i D_i(dt(gamma_i) D_i u) - sum_i dt(b_i) D_i A_i u - dt(c) u;
    identically zero for time-independent coefficients.
    """
    pm = g.primal(grid)
    g.require_mesh(u, pm, "apply_bh argument")
    if coeffs.time_independent:
        return g.MeshFunction(pm, np.zeros(pm.size))
    out = np.zeros(pm.size)
    for ax in range(grid.d):
        if coeffs.dt_gamma is not None:
            du = ops.diff(u, ax)
            dgam = _sample_coefficient(coeffs.dt_gamma[ax], t, du.mesh.physical)
            out += ops.diff(g.MeshFunction(du.mesh, dgam * du.values), ax).values
        if coeffs.dt_b is not None:
            dbv = _sample_coefficient(coeffs.dt_b[ax], t, pm.physical)
            out -= dbv * ops.avg_diff(u, ax).values
    if coeffs.dt_c is not None:
        out -= _sample_coefficient(coeffs.dt_c, t, pm.physical) * u.values
    return g.MeshFunction(pm, out)


def _linear_solve(A: sp.csr_matrix, rhs: np.ndarray, symmetric: bool) -> np.ndarray:
    """Krylov solve with diagonal preconditioning and a hard residual contract."""
    nb = float(np.linalg.norm(rhs))
    if nb == 0.0:
        return np.zeros_like(rhs)
    dinv = 1.0 / A.diagonal()
    M = spla.LinearOperator(A.shape, matvec=lambda x: dinv * x)
    method = spla.cg if symmetric else spla.bicgstab
    x, info = method(A, rhs, rtol=1e-13, atol=0.0, maxiter=10 * A.shape[0] + 100, M=M)
    res = float(np.linalg.norm(rhs - A @ x)) / nb
    if info != 0 or res > LINEAR_RESIDUAL_TOL:
        raise SolverError(f"linear solve failed: info={info}, relative residual {res:.3e}")
    return x


_SCHEMES = ("trapezoid", "backward-euler")


def solve_forward(grid: g.GridSpec, coeffs: CoefficientFields, source,
                  time_grid: TimeGrid, y_ini: g.MeshFunction | None = None,
                  scheme: str = "trapezoid") -> Trajectory:
    """March the semi-discrete system dt y = A_h y + g from its initial frame.

    `source` maps (t, X) to primal values in enumeration order.  Every step
    enforces the linear residual contract and aborts on non-finite values.
    """
    if scheme not in _SCHEMES:
        raise GridError(f"unknown scheme {scheme!r}; use one of {_SCHEMES}")
    pm = g.primal(grid)
    X = pm.physical
    if y_ini is None:
        y = np.zeros(pm.size)
    else:
        g.require_mesh(y_ini, pm, "initial frame")
        y = y_ini.values.copy()
    dt = time_grid.dt
    times = time_grid.times
    eye = sp.identity(pm.size, format="csr")
    frames = np.empty((time_grid.steps + 1, pm.size))
    frames[0] = y
    cache_t, cache_A = None, None

    def matrix_at(t):
        nonlocal cache_t, cache_A
        if coeffs.time_independent:
            t = 0.0
        if cache_t != t:
            cache_A = assemble_ah(grid, coeffs, t)
            cache_t = t
        return cache_A

    g_now = np.asarray(source(float(times[0]), X), dtype=np.float64)
    max_res = 0.0
    for m in range(time_grid.steps):
        t0, t1 = float(times[m]), float(times[m + 1])
        g_next = np.asarray(source(t1, X), dtype=np.float64)
        if scheme == "trapezoid":
            A0 = matrix_at(t0)
            rhs = y + 0.5 * dt * (A0 @ y) + 0.5 * dt * (g_now + g_next)
            A1 = matrix_at(t1)
            lhs = (eye - 0.5 * dt * A1).tocsr()
        else:
            A1 = matrix_at(t1)
            rhs = y + dt * g_next
            lhs = (eye - dt * A1).tocsr()
        y = _linear_solve(lhs, rhs, coeffs.symmetric)
        if not np.all(np.isfinite(y)):
            raise SolverError(f"non-finite state at step {m + 1} (t={t1})")
        nb = float(np.linalg.norm(rhs))
        if nb > 0:
            max_res = max(max_res, float(np.linalg.norm(rhs - lhs @ y)) / nb)
        frames[m + 1] = y
        g_now = g_next
    return Trajectory(grid, time_grid, frames, system="y", scheme=scheme,
                      diagnostics={"max_linear_residual": max_res})


Z_MODES = ("hybrid", "difference", "reverse")


def solve_z_system(y_traj: Trajectory, coeffs: CoefficientFields, source, dt_source,
                   mode: str = "hybrid") -> Trajectory:
    """Trajectory of z ~ dt y with data imposed at the mid time.

    Above T/2 the system is integrated forward with forcing B_h y + dt g;
    below T/2 the default is the differencing fallback (mode 'hybrid').
    Mode 'reverse' integrates the reversed-time substitution instead and is
    experimental.  The per-frame gap to the differenced y frames is always
    recorded in diagnostics['cross_check'].
    """
    if mode not in Z_MODES:
        raise GridError(f"unknown z mode {mode!r}; use one of {Z_MODES}")
    tg = y_traj.time_grid
    if tg.steps % 2 != 0:
        raise GridError("mid-time data needs an even number of steps")
    grid = y_traj.grid
    pm = g.primal(grid)
    X = pm.physical
    dt = tg.dt
    times = tg.times
    half = tg.steps // 2
    zc = central_time_derivative(y_traj.values, dt)
    frames = np.empty_like(y_traj.values)

    t_half = float(times[half])
    z_half = apply_ah(grid, coeffs, t_half, y_traj.frame(half)).values \
        + np.asarray(source(t_half, X), dtype=np.float64)
    frames[half] = z_half

    def forcing(m):
        t = float(times[m])
        out = np.asarray(dt_source(t, X), dtype=np.float64)
        if not coeffs.time_independent:
            out = out + apply_bh(grid, coeffs, t, g.MeshFunction(pm, y_traj.values[m])).values
        return out

    eye = sp.identity(pm.size, format="csr")
    cache = {}

    def matrix_at(t):
        key = 0.0 if coeffs.time_independent else t
        if key not in cache:
            cache[key] = assemble_ah(grid, coeffs, key)
        return cache[key]

    z = z_half.copy()
    f_now = forcing(half)
    for m in range(half, tg.steps):
        t1 = float(times[m + 1])
        f_next = forcing(m + 1)
        A0 = matrix_at(float(times[m]))
        A1 = matrix_at(t1)
        rhs = z + 0.5 * dt * (A0 @ z) + 0.5 * dt * (f_now + f_next)
        z = _linear_solve((eye - 0.5 * dt * A1).tocsr(), rhs, coeffs.symmetric)
        if not np.all(np.isfinite(z)):
            raise SolverError(f"non-finite z state at step {m + 1}")
        frames[m + 1] = z
        f_now = f_next

    if mode in ("hybrid", "difference"):
        frames[:half] = zc[:half]
        if mode == "difference":
            frames[half:] = zc[half:]
    else:
        # Experimental: backward-in-time continuation below T/2 by direct
        # solves of the reversed substitution; accuracy degrades with 1/h^2.
        w = z_half.copy()
        for m in range(half, 0, -1):
            t0 = float(times[m - 1])
            A0 = matrix_at(t0)
            lhs = (eye + dt * A0).tocsr()
            rhs = w - dt * forcing(m - 1)
            w = spla.spsolve(lhs.tocsc(), rhs)
            if not np.all(np.isfinite(w)):
                raise SolverError(f"reverse continuation diverged at step {m - 1}")
            frames[m - 1] = w
    cell = grid.h ** grid.d
    gap = np.sqrt(np.sum((frames - zc) ** 2, axis=1) * cell)
    z_scale = float(np.max(np.sqrt(np.sum(zc ** 2, axis=1) * cell)))
    return Trajectory(grid, tg, frames, system="z", scheme=y_traj.scheme,
                      meta={"mode": mode},
                      diagnostics={"cross_check": gap,
                                   "cross_check_rel": float(np.max(gap) / max(z_scale, 1e-300))})


@dataclass
class EnergyReport:
    t0: float
    t1: float
    lhs: float
    rhs: float
    c_tilde: float
    holds: bool


def energy_check(traj: Trajectory, coeffs: CoefficientFields, source,
                 t0: float, t1: float) -> EnergyReport:
    """Exponential energy bound between two frames.

    Checks  int |y(t1)|^2 <= exp(C~ (t1-t0)) (int |y(t0)|^2 + int_t0^t1 int |g|^2)
    with C~ = (d/2) reg(Gamma) ||b||_inf^2 + ||c||_inf + 1/2, where ||b||_inf
    is the largest sup norm among the advection components.
    """
    tg = traj.time_grid
    i0, i1 = tg.index_of(t0), tg.index_of(t1)
    if not i0 < i1:
        raise GridError(f"need t0 < t1 on the grid, got {t0}, {t1}")
    grid = traj.grid
    pm = g.primal(grid)
    X = pm.physical
    cell = grid.h ** grid.d
    lhs = cell * exact_sum(traj.values[i1] ** 2)
    y0_sq = cell * exact_sum(traj.values[i0] ** 2)
    times = tg.times
    sub = times[i0:i1 + 1]
    g_sq = np.array([cell * exact_sum(np.asarray(source(float(t), X)) ** 2) for t in sub])
    tw = trapezoid_weights(len(sub), tg.dt)
    g_int = exact_sum(g_sq * tw)
    sample_times = times[:: max(1, len(times) // 16)]
    regrep = coeffs.regularity(grid, sample_times)
    c_tilde = 0.5 * grid.d * regrep.reg * regrep.b_sup ** 2 + regrep.c_sup + 0.5
    rhs = np.exp(c_tilde * (times[i1] - times[i0])) * (y0_sq + g_int)
    return EnergyReport(float(times[i0]), float(times[i1]), lhs, rhs, c_tilde,
                        holds=bool(lhs <= rhs * (1.0 + 1e-8)))
