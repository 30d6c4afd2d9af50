"""Coefficient fields of the parabolic operator and their regularity bound.

A coefficient sampler maps (t, X) with X of shape (npts, d) to an array of
npts values.  Samplers are small frozen dataclasses so whole problem setups
pickle cleanly across worker processes.

The regularity functional collects, per diffusion component,

    gamma + 1/gamma + |grad_x gamma| + |dt gamma|

and takes the essential sup, estimated on the grid: spatial derivatives use
the grid's own difference operators on the fully closed lattice, time
derivatives use the analytic samplers when present (fields without analytic
time derivatives are treated as time independent).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import grid as g
from . import operators as ops
from .errors import GridError


@dataclass(frozen=True)
class ConstantField:
    value: float

    def __call__(self, t, X):
        return np.full(np.atleast_2d(X).shape[0], self.value)


@dataclass(frozen=True)
class SmoothField:
    """base + amp * sin(pi w.x + phase) * (1 + tamp * sin(2 pi t / T + tphase))."""

    base: float
    amp: float
    w: tuple[float, ...]
    phase: float = 0.0
    tamp: float = 0.0
    tphase: float = 0.0
    T: float = 1.0

    def _space(self, X):
        X = np.atleast_2d(X)
        return np.sin(math.pi * (X @ np.asarray(self.w)) + self.phase)

    def _rho(self, t):
        return 1.0 + self.tamp * math.sin(2.0 * math.pi * t / self.T + self.tphase)

    def __call__(self, t, X):
        return self.base + self.amp * self._space(X) * self._rho(t)

    def dt(self, t, X):
        rho_p = self.tamp * (2.0 * math.pi / self.T) * math.cos(2.0 * math.pi * t / self.T + self.tphase)
        return self.amp * self._space(X) * rho_p


@dataclass(frozen=True)
class FieldTimeDerivative:
    field: SmoothField

    def __call__(self, t, X):
        return self.field.dt(t, X)


@dataclass
class RegularityReport:
    reg: float
    gamma_min: float
    b_sup: float
    c_sup: float


@dataclass(frozen=True)
class CoefficientFields:
    """Diffusion, advection, and zero-order samplers with optional dt's.

    `b` may be None for operators without an advection part, which keeps the
    assembled matrix symmetric.  Time-derivative samplers must be supplied
    whenever the corresponding field actually depends on t; their absence
    declares the field time independent.
    """

    gamma: tuple
    b: tuple | None
    c: object
    dt_gamma: tuple | None = None
    dt_b: tuple | None = None
    dt_c: object | None = None

    @property
    def d(self) -> int:
        return len(self.gamma)

    @property
    def time_independent(self) -> bool:
        return self.dt_gamma is None and self.dt_b is None and self.dt_c is None

    @property
    def symmetric(self) -> bool:
        return self.b is None

    @staticmethod
    def constant(d: int, gamma: float = 1.0, b: float | None = None, c: float = 0.0) -> "CoefficientFields":
        if gamma <= 0:
            raise GridError(f"diffusion coefficient must be positive, got {gamma}")
        bs = None if b is None else tuple(ConstantField(b) for _ in range(d))
        return CoefficientFields(
            gamma=tuple(ConstantField(gamma) for _ in range(d)),
            b=bs,
            c=ConstantField(c),
        )

    def regularity(self, grid: g.GridSpec, times) -> RegularityReport:
        """Grid-estimated regularity bound and sup norms of b and c."""
        mesh = g.full_closure(grid)
        X = mesh.physical
        times = np.atleast_1d(np.asarray(times, dtype=np.float64))
        reg = 0.0
        gamma_min = np.inf
        for i, gam in enumerate(self.gamma):
            for t in times:
                vals = np.asarray(gam(float(t), X), dtype=np.float64)
                gamma_min = min(gamma_min, float(np.min(vals)))
                gmf = g.MeshFunction(mesh, vals)
                grad_max_sq = 0.0
                for ax in range(grid.d):
                    dg = ops.diff(gmf, ax)
                    grad_max_sq += float(np.max(np.abs(dg.values))) ** 2
                if self.dt_gamma is not None:
                    dt_val = float(np.max(np.abs(self.dt_gamma[i](float(t), X))))
                else:
                    dt_val = 0.0
                local = float(np.max(vals + 1.0 / vals)) + math.sqrt(grad_max_sq) + dt_val
                reg = max(reg, local)
        b_sup = 0.0
        if self.b is not None:
            for bi in self.b:
                for t in times:
                    b_sup = max(b_sup, float(np.max(np.abs(bi(float(t), X)))))
        c_sup = 0.0
        for t in times:
            c_sup = max(c_sup, float(np.max(np.abs(self.c(float(t), X)))))
        return RegularityReport(reg=reg, gamma_min=gamma_min, b_sup=b_sup, c_sup=c_sup)


def random_smooth_coefficients(rng: np.random.Generator, d: int, T: float,
                               time_dependent: bool = False,
                               gamma_amp: float = 0.4, b_amp: float = 0.0,
                               c_amp: float = 1.0) -> CoefficientFields:
    """Random smooth coefficient set with gamma bounded away from zero."""

    def draw(base, amp, with_time):
        w = tuple(rng.uniform(0.5, 1.5, size=d))
        return SmoothField(
            base=base,
            amp=amp * rng.uniform(0.5, 1.0),
            w=w,
            phase=rng.uniform(0.0, 2.0 * math.pi),
            tamp=rng.uniform(0.15, 0.3) if with_time else 0.0,
            tphase=rng.uniform(0.0, 2.0 * math.pi) if with_time else 0.0,
            T=T,
        )

    gammas = tuple(draw(1.0, gamma_amp, time_dependent) for _ in range(d))
    c = draw(0.0, c_amp, time_dependent)
    bs = tuple(draw(0.0, b_amp, time_dependent) for _ in range(d)) if b_amp > 0 else None
    if time_dependent:
        return CoefficientFields(
            gamma=gammas, b=bs, c=c,
            dt_gamma=tuple(FieldTimeDerivative(gm) for gm in gammas),
            dt_b=tuple(FieldTimeDerivative(bi) for bi in bs) if bs else None,
            dt_c=FieldTimeDerivative(c),
        )
    return CoefficientFields(gamma=gammas, b=bs, c=c)
