"""Experiment suites behind the CLI: identity corpus, convergence orders,
energy corpus, weighted-inequality corpus with feasibility map, stability
corpus with refinement decay, and the twin reconstructions.

Randomness is counter-based: the generator of run k in suite s is
default_rng(SeedSequence([global_seed, s, k])), so corpora are reproducible
run by run, independent of worker count.  Per-run draws happen before any
grid-dependent sampling, so refinement comparisons see the same continuous
problem on every grid.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import grid as g
from . import operators as ops
from .carleman import LHS_KEYS, compute_rhs, feasibility_map, verify_inequality
from .coefficients import CoefficientFields, random_smooth_coefficients
from .config import Config
from .errors import AdmissibilityError
from .inverse import (SeparableSource, SineTimeProfile, add_observation_noise,
                      certify_separable, observe, random_bump, reconstruct_source,
                      recover_coefficient, stability_quotient)
from .solver import TimeGrid, apply_ah, energy_check, solve_forward, solve_z_system
from .weights import Box, CarlemanWeight, WeightParams, coupled_delta

SUITE_IDS = {"verify_ops": 1, "converge": 2, "energy": 3, "carleman": 4,
             "stability": 5, "reconstruct": 6, "decay": 7, "feasibility": 8}


def run_rng(seed: int, suite: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, suite, index]))


@dataclass
class Assertion:
    name: str
    value: float
    bound: float
    passed: bool


@dataclass
class SuiteResult:
    suite: str
    assertions: list
    tables: dict = field(default_factory=dict)   # name -> (header, rows)
    extras: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)


def _le(name, value, bound) -> Assertion:
    return Assertion(name, float(value), float(bound), bool(value <= bound))


def _ge(name, value, bound) -> Assertion:
    return Assertion(name, float(value), float(bound), bool(value >= bound))


def _boxes(cfg: Config, d: int) -> tuple[Box, Box]:
    lo, hi = cfg.get("domain", "omega")
    lo0, hi0 = cfg.get("domain", "omega0")
    return Box.cube(lo0, hi0, d), Box.cube(lo, hi, d)


def _weight_params(cfg: Config, **over) -> WeightParams:
    w = cfg["weights"]
    base = dict(T=cfg.get("time", "t_final"), tau=w["tau"], lam=w["lambda"],
                delta=w["delta"], c0=w["c0"], kappa=w["kappa"], epsilon=w["epsilon"],
                tau0=w["tau0"], hat_margin=w["hat_margin"])
    base.update(over)
    return WeightParams(**base)


# identities ---------------------------------------------------------------


def run_verify_ops(cfg: Config) -> SuiteResult:
    """Randomized corpus over d in [1,3], n in [n_min, n_max]: product rules,
    their squared consequences, and both integration-by-parts identities."""
    seed = cfg.get("run", "seed")
    vo = cfg["verify_ops"]
    worst = {k: 0.0 for k in ("leibniz_diff", "leibniz_avg", "avg_square",
                              "diff_square", "ibp_diff", "ibp_avg")}
    avg_dominance_violations = 0
    for k in range(vo["fields"]):
        rng = run_rng(seed, SUITE_IDS["verify_ops"], k)
        d = int(rng.integers(1, 4))
        n = int(rng.integers(vo["n_min"], vo["n_max"] + 1))
        grid = g.GridSpec(d, n)
        fc = g.full_closure(grid)
        u = g.MeshFunction(fc, rng.normal(size=fc.size))
        v = g.MeshFunction(fc, rng.normal(size=fc.size))
        axis = int(rng.integers(0, d))
        scale_uv = max(1.0, ops.linf_norm(u)) * max(1.0, ops.linf_norm(v))
        scale_uu = max(1.0, ops.linf_norm(u)) ** 2
        leib = ops.leibniz_residuals(u, v, axis)
        worst["leibniz_diff"] = max(worst["leibniz_diff"], leib["diff_rule"] / scale_uv)
        worst["leibniz_avg"] = max(worst["leibniz_avg"], leib["avg_rule"] / scale_uv)
        du, au = ops.diff(u, axis), ops.avg(u, axis)
        u_sq = g.MeshFunction(fc, u.values ** 2)
        a_sq = ops.avg(u_sq, axis).values
        d_sq = ops.diff(u_sq, axis).values
        h = grid.h
        r_avg_sq = np.max(np.abs(a_sq - (au.values ** 2 + 0.25 * h * h * du.values ** 2)))
        r_diff_sq = np.max(np.abs(d_sq - 2.0 * du.values * au.values))
        worst["avg_square"] = max(worst["avg_square"], r_avg_sq / scale_uu)
        worst["diff_square"] = max(worst["diff_square"], r_diff_sq / (scale_uu / h))
        avg_dominance_violations += int(np.any(a_sq - au.values ** 2 < -1e-12 * scale_uu))
        uc = g.MeshFunction(g.closure(grid, axis), rng.normal(size=g.closure(grid, axis).size))
        vs = g.MeshFunction(g.dual_star(grid, axis), rng.normal(size=g.dual_star(grid, axis).size))
        scale_ibp = max(1.0, ops.linf_norm(uc)) * max(1.0, ops.linf_norm(vs))
        worst["ibp_diff"] = max(worst["ibp_diff"], abs(ops.ibp_diff_residual(uc, vs, axis)) / scale_ibp)
        worst["ibp_avg"] = max(worst["ibp_avg"], abs(ops.ibp_avg_residual(uc, vs, axis)) / scale_ibp)
    assertions = [_le(f"{k}_residual", v, 1e-12) for k, v in sorted(worst.items())]
    assertions.append(_le("avg_dominance_violations", avg_dominance_violations, 0))
    header = ["identity", "max_normalized_residual"]
    rows = [[k, v] for k, v in sorted(worst.items())]
    return SuiteResult("verify_ops", assertions, {"identities": (header, rows)})


# convergence ---------------------------------------------------------------


def _product_sine(X: np.ndarray) -> np.ndarray:
    return np.prod(np.sin(np.pi * X), axis=1)


def run_converge(cfg: Config) -> SuiteResult:
    """Manufactured-solution checks: exact discrete source reproduction,
    spatial order on the continuous source, temporal order of the trapezoid."""
    cc = cfg["converge"]
    d = cfg.get("grid", "d")
    T = cc["t_final"]
    rows = []

    grid = g.GridSpec(d, cfg.get("grid", "n"))
    pm = g.primal(grid)
    u0 = g.sample(pm, _product_sine)
    coeffs = CoefficientFields.constant(d)
    a_u0 = apply_ah(grid, coeffs, 0.0, u0).values

    def discrete_src(t, X):
        return -math.exp(-t) * (u0.values + a_u0)

    tg = TimeGrid(T, cc["manufactured_steps"])
    traj = solve_forward(grid, coeffs, discrete_src, tg, y_ini=u0)
    scale = np.max(np.abs(u0.values))
    rel_discrete = max(
        float(np.max(np.abs(traj.values[m] - math.exp(-t) * u0.values))) / scale
        for m, t in enumerate(tg.times)
    )

    lam_c = d * math.pi ** 2

    def continuous_src_factory(vals):
        def src(t, X):
            return (lam_c - 1.0) * math.exp(-t) * vals
        return src

    errs = []
    for n in cc["spatial_grids"]:
        gn = g.GridSpec(d, int(n))
        pn = g.primal(gn)
        un = g.sample(pn, _product_sine)
        tgn = TimeGrid(T, cc["spatial_steps"])
        trn = solve_forward(gn, CoefficientFields.constant(d),
                            continuous_src_factory(un.values), tgn, y_ini=un)
        exact = math.exp(-T) * un.values
        err = math.sqrt(gn.h ** d * float(np.sum((trn.values[-1] - exact) ** 2)))
        err /= math.sqrt(gn.h ** d * float(np.sum(exact ** 2)))
        errs.append(err)
        rows.append(["spatial", int(n), tgn.steps, err])
    spatial_orders = [math.log2(a / b) for a, b in zip(errs[:-1], errs[1:])]

    terrs = []
    for steps in cc["temporal_steps"]:
        tgt = TimeGrid(T, int(steps))
        trt = solve_forward(grid, coeffs, discrete_src, tgt, y_ini=u0)
        exact = math.exp(-T) * u0.values
        err = float(np.max(np.abs(trt.values[-1] - exact))) / scale
        terrs.append(err)
        rows.append(["temporal", grid.n, int(steps), err])
    temporal_orders = [math.log2(a / b) for a, b in zip(terrs[:-1], terrs[1:])]

    assertions = [_le("discrete_manufactured_rel_error", rel_discrete, 1e-9)]
    for i, o in enumerate(spatial_orders):
        assertions.append(_ge(f"spatial_order_{i}", o, 1.9))
    for i, o in enumerate(temporal_orders):
        assertions.append(_ge(f"temporal_order_{i}", o, 1.9))
    return SuiteResult("converge", assertions,
                       {"converge": (["study", "n", "steps", "rel_error"], rows)},
                       extras={"spatial_orders": spatial_orders,
                               "temporal_orders": temporal_orders})


# energy ---------------------------------------------------------------------


def run_energy(cfg: Config) -> SuiteResult:
    """Randomized corpus for the exponential energy bound; zero violations."""
    seed = cfg.get("run", "seed")
    en = cfg["energy"]
    violations = 0
    margins = []
    rows = []
    for k in range(en["runs"]):
        rng = run_rng(seed, SUITE_IDS["energy"], k)
        d = int(rng.integers(1, 3))
        n = int(rng.integers(5, 13))
        grid = g.GridSpec(d, n)
        coeffs = random_smooth_coefficients(rng, d, 1.0, time_dependent=True,
                                            b_amp=en["b_amp"], c_amp=1.0)
        pm = g.primal(grid)
        y0 = g.MeshFunction(pm, rng.normal(size=pm.size))
        src = SeparableSource(random_bump(rng, d),
                              SineTimeProfile(1.0, 0.5, float(rng.uniform(0, 2 * math.pi)), 1.0))
        tg = TimeGrid(1.0, en["steps"])
        traj = solve_forward(grid, coeffs, src, tg, y_ini=y0)
        for t0, t1 in ((0.0, 1.0), (0.25, 0.75), (0.5, 0.9375)):
            rep = energy_check(traj, coeffs, src, t0, t1)
            violations += int(not rep.holds)
            margin = rep.rhs / rep.lhs if rep.lhs > 0 else math.inf
            margins.append(margin)
            rows.append([k, d, n, t0, t1, rep.lhs, rep.rhs, rep.c_tilde, rep.holds])
    assertions = [_le("energy_violations", violations, 0)]
    header = ["run_id", "d", "n", "t0", "t1", "lhs", "rhs", "c_tilde", "holds"]
    return SuiteResult("energy", assertions, {"energy": (header, rows)},
                       extras={"min_margin": min(margins)})


# weighted-inequality corpus --------------------------------------------------


def _draw_corpus_run(rng: np.random.Generator, cfg: Config, time_dependent: bool,
                     b_amp: float, tau_range: tuple[float, float]):
    d = cfg.get("grid", "d")
    T = cfg.get("time", "t_final")
    tau = float(rng.uniform(*tau_range))
    coeffs = random_smooth_coefficients(rng, d, T, time_dependent=time_dependent,
                                        b_amp=b_amp, c_amp=1.0)
    y_prof = random_bump(rng, d)
    src = SeparableSource(random_bump(rng, d),
                          SineTimeProfile(1.0, 0.5, float(rng.uniform(0, 2 * math.pi)), T))
    return tau, coeffs, y_prof, src


def _carleman_worker(payload) -> list:
    cfg_values, run_index = payload
    cfg = Config(cfg_values)
    seed = cfg.get("run", "seed")
    ca = cfg["carleman"]
    d = cfg.get("grid", "d")
    T = cfg.get("time", "t_final")
    rng = run_rng(seed, SUITE_IDS["carleman"], run_index)
    tau, coeffs, y_prof, src = _draw_corpus_run(
        rng, cfg, time_dependent=True, b_amp=ca["b_amp"],
        tau_range=(ca["tau_min"], ca["tau_max"]))
    rows = []
    for n in ca["grids"]:
        grid = g.GridSpec(d, int(n))
        pm = g.primal(grid)
        y0 = g.MeshFunction(pm, y_prof(pm.physical))
        tg = TimeGrid(T, ca["steps"])
        traj = solve_forward(grid, coeffs, src, tg, y_ini=y0)
        omega0, omega = _boxes(cfg, d)
        weight = CarlemanWeight(grid, _weight_params(cfg, tau=tau), omega0, omega)
        for p in (0, 1):
            rep = verify_inequality(traj, src, coeffs, weight, p, omega)
            rows.append({
                "run_id": run_index, "N": int(n), "h": grid.h, "p": p,
                "tau": tau, "delta": weight.params.delta, "lambda": weight.params.lam,
                "I_p": rep.terms["I_p"].value,
                "J_p": sum(rep.terms[k].value for k in LHS_KEYS[1:]),
                "rhs_source": rep.terms["rhs_source"].value,
                "rhs_local": rep.terms["rhs_local_omega"].value,
                "rhs_endpoint": rep.terms["rhs_time_endpoints"].value,
                "ratio": rep.ratio, "admissible": rep.admissible,
                "residual": rep.residual_rel,
            })
    return rows


def _map_runs(worker, payloads, workers: int):
    if workers <= 1:
        results = [worker(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(worker, payloads))
    return results


def run_carleman(cfg: Config) -> SuiteResult:
    """Corpus of randomized admissible runs for p in {0, 1}, plus the
    feasibility table over (h, tau, delta) with a mesh-coupled delta cell."""
    ca = cfg["carleman"]
    workers = cfg.get("run", "workers")
    payloads = [(cfg.values, k) for k in range(ca["runs"])]
    rows = [row for batch in _map_runs(_carleman_worker, payloads, workers) for row in batch]
    rows.sort(key=lambda r: (r["run_id"], r["N"], r["p"]))

    assertions = []
    grids = list(ca["grids"])
    for p in (0, 1):
        per_grid_max = {}
        for n in grids:
            ratios = [r["ratio"] for r in rows
                      if r["p"] == p and r["N"] == n and r["admissible"] and r["ratio"] is not None]
            per_grid_max[n] = max(ratios) if ratios else math.nan
        vals = list(per_grid_max.values())
        finite = all(math.isfinite(v) for v in vals)
        assertions.append(Assertion(f"p{p}_max_ratio_finite",
                                    max(vals) if finite else math.inf, math.inf, finite))
        if len(vals) >= 2 and finite:
            r = vals[0] / vals[1]
            assertions.append(_le(f"p{p}_grid_stability", max(r, 1.0 / r), 2.0))

    d = cfg.get("grid", "d")
    T = cfg.get("time", "t_final")
    seed = cfg.get("run", "seed")

    def run_factory(grid):
        out = []
        for i in range(ca["feasibility_runs"]):
            rng = run_rng(seed, SUITE_IDS["feasibility"], i)
            tau, coeffs, y_prof, src = _draw_corpus_run(
                rng, cfg, time_dependent=True, b_amp=ca["b_amp"],
                tau_range=(ca["tau_min"], ca["tau_max"]))
            pm = g.primal(grid)
            y0 = g.MeshFunction(pm, y_prof(pm.physical))
            traj = solve_forward(grid, coeffs, src, TimeGrid(T, ca["steps"]), y_ini=y0)
            out.append((traj, src, coeffs))
        return out

    def make_weight(grid, tau, delta):
        omega0, omega = _boxes(cfg, d)
        return CarlemanWeight(grid, _weight_params(cfg, tau=tau, delta=delta), omega0, omega)

    taus = list(ca["feasibility_taus"])
    deltas = list(ca["feasibility_deltas"])
    fea_rows = []
    for n in ca["feasibility_grids"]:
        grid = g.GridSpec(d, int(n))
        base = _weight_params(cfg)
        cell_deltas = list(deltas)
        try:
            coupled = coupled_delta(base, grid.h, ca["feasibility_tau1"],
                                    ca["feasibility_eps0"])
            cell_deltas.append(coupled.delta)
        except AdmissibilityError:
            pass  # coupling lands outside (0, 1/2] on this grid; plain cells remain
        fea_rows.extend(feasibility_map(run_factory, [grid],
                                        [ca["feasibility_tau1"]] + taus, cell_deltas, 0,
                                        make_weight))
    for n in ca["feasibility_grids"]:
        h = g.GridSpec(d, int(n)).h
        n_adm = sum(1 for r in fea_rows if r["h"] == h and r["admissible"])
        assertions.append(_ge(f"feasibility_admissible_n{n}", n_adm, 1))
    ratios = [r["ratio"] for r in fea_rows if r["ratio"] != ""]
    assertions.append(Assertion("feasibility_ratios_finite",
                                max(ratios) if ratios else math.nan, math.inf,
                                bool(ratios) and all(math.isfinite(v) for v in ratios)))

    corpus_header = ["run_id", "N", "h", "p", "tau", "delta", "lambda", "I_p", "J_p",
                     "rhs_source", "rhs_local", "rhs_endpoint", "ratio", "admissible",
                     "residual"]
    fea_header = ["h", "tau", "delta", "lambda", "p", "I_p", "J_p", "rhs_source",
                  "rhs_local", "rhs_endpoint", "ratio", "admissible"]
    tables = {
        "carleman_corpus": (corpus_header, [[r[k] for k in corpus_header] for r in rows]),
        "feasibility": (fea_header, [[r[k] for k in fea_header] for r in fea_rows]),
    }
    return SuiteResult("carleman", assertions, tables)


# stability corpus and decay ---------------------------------------------------


def _stability_worker(payload) -> list:
    cfg_values, run_index = payload
    cfg = Config(cfg_values)
    seed = cfg.get("run", "seed")
    st = cfg["stability"]
    d = cfg.get("grid", "d")
    T = cfg.get("time", "t_final")
    rng = run_rng(seed, SUITE_IDS["stability"], run_index)
    tau, coeffs, _, src = _draw_corpus_run(rng, cfg, time_dependent=False, b_amp=0.0,
                                           tau_range=(cfg.get("carleman", "tau_min"),
                                                      cfg.get("carleman", "tau_max")))
    rows = []
    for n in st["grids"]:
        grid = g.GridSpec(d, int(n))
        tg = TimeGrid(T, st["steps"])
        adm = certify_separable(src, grid, tg)
        traj = solve_forward(grid, coeffs, adm.g, tg)
        z = solve_z_system(traj, coeffs, adm.g, adm.dt_g)
        omega0, omega = _boxes(cfg, d)
        weight = CarlemanWeight(grid, _weight_params(cfg, tau=tau), omega0, omega)
        res = stability_quotient(traj, z, adm, weight, omega)
        rows.append({
            "run_id": run_index, "h": grid.h, "N": int(n), "d": d, "tau": tau,
            "delta": weight.params.delta, "lambda": weight.params.lam,
            "lhs": res.lhs, "rhs_observed": res.rhs_observed,
            "rhs_error_term": res.rhs_error_term, "quotient": res.quotient,
            "seed": f"{seed}.{run_index}",
            "reduced_quotient": res.reduced_quotient,
            "c_g": adm.c_g,
        })
    return rows


def run_stability(cfg: Config, decay_grids=None) -> SuiteResult:
    """Stability-quotient corpus on two grids plus the coupled-delta decay study."""
    st = cfg["stability"]
    workers = cfg.get("run", "workers")
    payloads = [(cfg.values, k) for k in range(st["runs"])]
    rows = [row for batch in _map_runs(_stability_worker, payloads, workers) for row in batch]
    rows.sort(key=lambda r: (r["run_id"], r["N"]))

    assertions = []
    grids = list(st["grids"])
    for key, label in (("quotient", "quotient"), ("reduced_quotient", "reduced_quotient")):
        per_grid_max = {n: max(r[key] for r in rows if r["N"] == n) for n in grids}
        vals = list(per_grid_max.values())
        finite = all(math.isfinite(v) and v > 0 for v in vals)
        assertions.append(Assertion(f"{label}_finite", max(vals) if finite else math.inf,
                                    math.inf, finite))
        if len(vals) >= 2 and finite:
            r = vals[0] / vals[1]
            assertions.append(_le(f"{label}_grid_stability", max(r, 1.0 / r), 2.0))

    decay_rows, decay_assertions = _decay_study(cfg, decay_grids or st["decay_grids"])
    assertions.extend(decay_assertions)

    header = ["run_id", "h", "N", "d", "tau", "delta", "lambda", "lhs", "rhs_observed",
              "rhs_error_term", "quotient", "seed"]
    extra_header = ["run_id", "N", "reduced_quotient", "c_g"]
    decay_header = ["N", "h", "inv_h", "tau", "delta", "lambda", "endpoint_term",
                    "log_endpoint_term", "error_term", "log_error_term"]
    tables = {
        "stability": (header, [[r[k] for k in header] for r in rows]),
        "stability_extra": (extra_header, [[r[k] for k in extra_header] for r in rows]),
        "decay": (decay_header, decay_rows),
    }
    return SuiteResult("stability", assertions, tables)


def _decay_study(cfg: Config, grids) -> tuple[list, list]:
    """Mesh-coupled delta: endpoint and error terms vs 1/h, fitted in log space."""
    st = cfg["stability"]
    d = cfg.get("grid", "d")
    T = cfg.get("time", "t_final")
    seed = cfg.get("run", "seed")
    rng = run_rng(seed, SUITE_IDS["decay"], 0)
    y_prof = random_bump(rng, d)
    src = SeparableSource(random_bump(rng, d),
                          SineTimeProfile(1.0, 0.5, float(rng.uniform(0, 2 * math.pi)), T))
    coeffs = random_smooth_coefficients(run_rng(seed, SUITE_IDS["decay"], 1), d, T,
                                        time_dependent=False)
    rows = []
    log_end, log_err, inv_h = [], [], []
    for n in grids:
        grid = g.GridSpec(d, int(n))
        base = _weight_params(cfg, tau=st["tau1"], lam=st["decay_lambda"])
        params = coupled_delta(base, grid.h, st["tau1"], st["eps0"])
        omega0, omega = _boxes(cfg, d)
        weight = CarlemanWeight(grid, params, omega0, omega)
        tg = TimeGrid(T, st["decay_steps"])
        pm = g.primal(grid)
        y0 = g.MeshFunction(pm, y_prof(pm.physical))
        adm = certify_separable(src, grid, tg)
        traj = solve_forward(grid, coeffs, adm.g, tg, y_ini=y0)
        z = solve_z_system(traj, coeffs, adm.g, adm.dt_g)
        rhs_terms = compute_rhs(traj, adm.g, weight, 0, omega)
        endpoint = rhs_terms["rhs_time_endpoints"]
        res = stability_quotient(traj, z, adm, weight, omega)
        rows.append([int(n), grid.h, 1.0 / grid.h, params.tau, params.delta, params.lam,
                     endpoint.value, endpoint.log_value, res.rhs_error_term,
                     res.log_error_term])
        log_end.append(endpoint.log_value)
        log_err.append(res.log_error_term)
        inv_h.append(1.0 / grid.h)
    assertions = []
    assertions.append(_le("decay_endpoint_monotone",
                          max(b - a for a, b in zip(log_end[:-1], log_end[1:])), 0.0))
    assertions.append(_le("decay_error_monotone",
                          max(b - a for a, b in zip(log_err[:-1], log_err[1:])), 0.0))
    for name, logs in (("endpoint", log_end), ("error", log_err)):
        slopes = [(lb - la) / (xb - xa) for (la, lb, xa, xb)
                  in zip(logs[:-1], logs[1:], inv_h[:-1], inv_h[1:])]
        assertions.append(_le(f"decay_{name}_slope_negative", max(slopes), 0.0))
        spread = max(abs(s - slopes[0]) for s in slopes) / abs(slopes[0])
        assertions.append(_le(f"decay_{name}_slope_spread", spread, 0.2))
    return rows, assertions


# reconstruction ----------------------------------------------------------------


def run_reconstruct(cfg: Config) -> SuiteResult:
    """Twin experiments: separable-source recovery and zero-order coefficient
    recovery, with an optional noise/regularisation sweep (reported only)."""
    rc = cfg["reconstruct"]
    seed = cfg.get("run", "seed")
    d = cfg.get("grid", "d")
    T = cfg.get("time", "t_final")
    rng = run_rng(seed, SUITE_IDS["reconstruct"], 0)
    rows = []

    grid = g.GridSpec(d, rc["n"])
    tg = TimeGrid(T, rc["steps"])
    src = SeparableSource(random_bump(rng, d),
                          SineTimeProfile(1.0, 0.5, float(rng.uniform(0, 2 * math.pi)), T))
    adm = certify_separable(src, grid, tg)
    coeffs = random_smooth_coefficients(rng, d, T, time_dependent=False)
    traj = solve_forward(grid, coeffs, adm.g, tg)
    z = solve_z_system(traj, coeffs, adm.g, adm.dt_g)
    omega0, omega = _boxes(cfg, d)
    weight = CarlemanWeight(grid, _weight_params(cfg), omega0, omega)
    obs = observe(traj, z, weight, omega)
    rec = reconstruct_source(grid, coeffs, adm.r, tg, obs, beta=rc["beta"], truth=adm.f)
    rows.append(["source", grid.n, rc["beta"], 0.0, rec.relative_error, rec.iterations])

    if rc["noise"] > 0:
        noisy = add_observation_noise(obs, rc["noise"], run_rng(seed, SUITE_IDS["reconstruct"], 1))
        betas = np.logspace(math.log10(rc["beta"]), math.log10(rc["beta"]) + rc["beta_sweep_decades"],
                            rc["beta_sweep_decades"] + 1)
        for b in betas:
            rec_n = reconstruct_source(grid, coeffs, adm.r, tg, noisy, beta=float(b), truth=adm.f)
            rows.append(["source_noisy", grid.n, float(b), rc["noise"],
                         rec_n.relative_error, rec_n.iterations])

    cgrid = g.GridSpec(d, rc["coeff_n"])
    cpm = g.primal(cgrid)
    p_true = g.sample(cpm, lambda X: 1.0 + X[:, 0])
    base = CoefficientFields.constant(d)
    shifted = CoefficientFields(gamma=base.gamma, b=None, c=_ShiftedPotential())
    ctg = TimeGrid(rc["coeff_t_final"], rc["coeff_steps"])
    y0 = g.sample(cpm, _product_sine)
    ctraj = solve_forward(cgrid, shifted, _zero_source, ctg, y_ini=y0)
    cz = solve_z_system(ctraj, shifted, _zero_source, _zero_source, mode="difference")
    recov = recover_coefficient(ctraj, cz, base, alpha=rc["coeff_alpha"], truth=p_true)
    rows.append(["coefficient", cgrid.n, 0.0, 0.0, recov.relative_error,
                 int(recov.mask_fraction * cpm.size)])

    assertions = [
        _le("source_recovery_rel_error", rec.relative_error, 5e-3),
        _le("coefficient_recovery_rel_error", recov.relative_error, 1e-2),
        _ge("coefficient_mask_fraction", recov.mask_fraction, 0.5),
    ]
    header = ["kind", "n", "beta", "noise", "rel_error", "iterations"]
    return SuiteResult("reconstruct", assertions, {"reconstruct": (header, rows)})


def _zero_source(t, X):
    return np.zeros(np.atleast_2d(X).shape[0])


class _ShiftedPotential:
    """c(t,x) = -(1 + x_0): turns the sought zero-order coefficient into
    operator data for the synthetic truth run."""

    def __call__(self, t, X):
        X = np.atleast_2d(X)
        return -(1.0 + X[:, 0])
