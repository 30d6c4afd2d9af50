"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines as they complete.  Criteria with shared heavy computations (the
weighted-inequality corpus, the stability corpus with its decay study) reuse
module-scoped results.
"""

import numpy as np
import pytest

from carlstab import grid as g
from carlstab.cli import main
from carlstab.config import parse_config
from carlstab.experiments import (run_carleman, run_converge, run_energy,
                                  run_reconstruct, run_stability, run_verify_ops)
from carlstab.weights import (Box, CarlemanWeight, WeightParams,
                              gauss_scaling_slope)


def report(num: int, ok: bool, detail: str):
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {num}: {detail}")
    assert ok, f"criterion {num}: {detail}"


def by_name(result, name):
    return next(a for a in result.assertions if a.name == name)


@pytest.fixture(scope="module")
def cfg():
    return parse_config(None)


@pytest.fixture(scope="module")
def carleman_result(cfg):
    return run_carleman(cfg)


@pytest.fixture(scope="module")
def stability_result(cfg):
    return run_stability(cfg)


def test_criterion_1_exact_identities(cfg):
    """Product rules, squared consequences, integration by parts:
    residual <= 1e-12 * field scale on 200 randomized fields, d in 1..3."""
    result = run_verify_ops(cfg)
    worst = max(a.value for a in result.assertions if a.name.endswith("_residual"))
    report(1, result.passed,
           f"max normalized identity residual {worst:.3e} <= 1e-12 over "
           f"{cfg.get('verify_ops', 'fields')} fields")


def test_criterion_2_forward_solver(cfg):
    """Discrete manufactured solution to 1e-9; spatial and temporal order >= 1.9."""
    result = run_converge(cfg)
    disc = by_name(result, "discrete_manufactured_rel_error").value
    sor = result.extras["spatial_orders"]
    tor = result.extras["temporal_orders"]
    report(2, result.passed,
           f"discrete reproduction {disc:.2e} <= 1e-9; spatial orders "
           f"{[f'{o:.3f}' for o in sor]}; temporal orders {[f'{o:.3f}' for o in tor]} >= 1.9")


def test_criterion_3_energy_estimate(cfg):
    """Exponential energy bound holds on 100 randomized runs, zero violations."""
    result = run_energy(cfg)
    viol = by_name(result, "energy_violations").value
    report(3, result.passed,
           f"{int(viol)} violations over {cfg.get('energy', 'runs')} runs "
           f"x 3 intervals (min rhs/lhs margin {result.extras['min_margin']:.3g})")


def test_criterion_4_weight_bounds():
    """Endpoint/mid values of the time envelope exactly; curvature bound;
    mid-time integral scaling slope p - 1/2 within +-0.15 for p in {0, 1}."""
    grid = g.GridSpec(1, 15)
    omega0, omega = Box.cube(0.35, 0.65, 1), Box.cube(0.2, 0.8, 1)
    ok = True
    details = []
    for T, delta in ((1.0, 0.5), (1.0, 0.25)):
        w = CarlemanWeight(grid, WeightParams(T=T, tau=3.0, delta=delta), omega0, omega)
        end_exact = float(w.theta(0.0)) == 1.0 / ((delta * T) * (T + delta * T)) \
            and float(w.theta(T)) == float(w.theta(0.0)) \
            and abs(float(w.theta(0.0)) - 1.0 / (T * T * delta * (1 + delta))) \
            <= 1e-14 / (T * T * delta)
        mid_exact = abs(float(w.theta(T / 2)) - 4.0 / (T * T * (1 + 2 * delta) ** 2)) \
            <= 1e-14 * float(w.theta(T / 2))
        t = np.linspace(0, T, 801)
        th = w.theta(t)
        curv = np.all(2 * th ** 2 + 8 * (t - T / 2) ** 2 * th ** 3 >= 2 / T ** 2 - 1e-12)
        ok = ok and end_exact and mid_exact and bool(curv)
    params = WeightParams(T=1.0, tau=50.0, delta=0.25)
    x = np.array([[0.4375]])
    for p in (0.0, 1.0):
        slope, _ = gauss_scaling_slope(grid, params, omega0, omega, p, x,
                                       [50, 100, 200, 400, 800])
        ok = ok and abs(slope - (p - 0.5)) <= 0.15
        details.append(f"p={p:g} slope {slope:.3f} (target {p - 0.5:+.1f})")
    report(4, ok, "theta endpoint/mid values exact, curvature bound sampled; "
                  + "; ".join(details))


def test_criterion_5_carleman_inequality(carleman_result, cfg):
    """Weighted inequality for p in {0,1}: max corpus ratio finite and within
    2x between the two grids inside the admissible window."""
    r = carleman_result
    det = []
    ok = True
    for p in (0, 1):
        fin = by_name(r, f"p{p}_max_ratio_finite")
        stab = by_name(r, f"p{p}_grid_stability")
        ok = ok and fin.passed and stab.passed
        det.append(f"p={p}: max ratio {fin.value:.3g}, grid spread {stab.value:.3f}x")
    report(5, ok, f"{cfg.get('carleman', 'runs')}-run corpus on N="
                  f"{list(cfg.get('carleman', 'grids'))}: " + "; ".join(det))


def test_criterion_6_endpoint_decay(stability_result):
    """Coupled delta: endpoint and error terms decay monotonically in h with
    log-slope vs 1/h negative and stable within 20 percent."""
    r = stability_result
    names = ["decay_endpoint_monotone", "decay_error_monotone",
             "decay_endpoint_slope_negative", "decay_endpoint_slope_spread",
             "decay_error_slope_negative", "decay_error_slope_spread"]
    ok = all(by_name(r, n).passed for n in names)
    spread_e = by_name(r, "decay_endpoint_slope_spread").value
    spread_r = by_name(r, "decay_error_slope_spread").value
    report(6, ok, f"monotone decay over three grids; slope spreads "
                  f"endpoint {spread_e:.3f}, error term {spread_r:.3f} <= 0.2")


def test_criterion_7_stability_quotient(stability_result, cfg):
    """Stability quotient bounded, within 2x under refinement; the reduced
    right-hand side (time-independent coefficients) suffices as well."""
    r = stability_result
    names = ["quotient_finite", "quotient_grid_stability",
             "reduced_quotient_finite", "reduced_quotient_grid_stability"]
    ok = all(by_name(r, n).passed for n in names)
    report(7, ok,
           f"{cfg.get('stability', 'runs')}-run corpus: max quotient "
           f"{by_name(r, 'quotient_finite').value:.3g}, spread "
           f"{by_name(r, 'quotient_grid_stability').value:.3f}x; reduced spread "
           f"{by_name(r, 'reduced_quotient_grid_stability').value:.3f}x")


def test_criterion_8_reconstruction_twins(cfg):
    """Noiseless separable-source recovery <= 5e-3; coefficient recovery on
    the mask <= 1e-2."""
    result = run_reconstruct(cfg)
    src = by_name(result, "source_recovery_rel_error").value
    coef = by_name(result, "coefficient_recovery_rel_error").value
    report(8, result.passed,
           f"source twin rel error {src:.2e} <= 5e-3 (n={cfg.get('reconstruct', 'n')}); "
           f"coefficient twin rel error {coef:.2e} <= 1e-2 (n={cfg.get('reconstruct', 'coeff_n')})")


def test_criterion_9_reproducibility(tmp_path):
    """Identical config and seed give bit-identical CSV artifacts."""
    args = ["stability", "--set", "stability.runs=3", "--set", "stability.steps=64",
            "--set", "stability.decay_grids=15,31", "--set", "stability.decay_steps=64"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    files = ["stability.csv", "stability_extra.csv", "decay.csv"]
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
               for f in files)
    cargs = ["carleman", "--set", "carleman.runs=2", "--set", "carleman.steps=64",
             "--set", "carleman.feasibility_grids=15", "--set", "carleman.feasibility_runs=1"]
    assert main(cargs + ["--out", str(tmp_path / "c")]) == 0
    assert main(cargs + ["--out", str(tmp_path / "d")]) == 0
    same = same and all(
        (tmp_path / "c" / f).read_bytes() == (tmp_path / "d" / f).read_bytes()
        for f in ["carleman_corpus.csv", "feasibility.csv"])
    report(9, same, "stability and carleman CSVs byte-identical across reruns")
