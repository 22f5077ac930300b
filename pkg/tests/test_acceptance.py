"""End-to-end acceptance criteria.

Each test prints one ``C<k> PASS|FAIL|SKIPPED`` line (also collected in the
terminal summary) and asserts the criterion at its stated tolerance.  The
benchmark inversions are cached per module, so the whole file takes on the
order of ten minutes on one core.

Set ``MSDCIE_FRESNEL_FILE`` to a measured-data file (converted to the
package schema) holding the FoamDielInt TM blocks at 6, 7, 8 and 9 GHz to
run criterion 9 on real data.
"""

import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from msdcie import metrics
from msdcie.formulation import Mode, modified_contrast, recover_contrast, state_residual
from msdcie.forward import NoiseSpec, add_noise, cylinder_series, solve_on_support, synthesize_dataset
from msdcie.geometry import RoiState, build_uniform_grid
from msdcie.inversion import truncation_index
from msdcie.io import export_measured, load_measured_dataset
from msdcie.multiscale import run_method
from msdcie.scenario import CircularRing, Scenario, circular_ring_benchmark, square_benchmark

pytestmark = pytest.mark.slow

SNR, SEED, FINE_N = 20.0, 1, 80
METHODS = ("MS-DCIE", "DCIE", "MS-DLSIE", "DLSIE")
FINE = build_uniform_grid(3.0, FINE_N)


def report(key, ok, detail):
    line = f"{key} {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


_datasets, _runs = {}, {}


def dataset(name, scenario, delta=0.0):
    key = (name, delta)
    if key not in _datasets:
        if delta == 0:
            _datasets[key] = synthesize_dataset(scenario, scenario.setup(), FINE_N,
                                                NoiseSpec(SNR, SEED))
        else:
            base = dataset(name, scenario)
            _datasets[key] = base.with_assumed_host(scenario.perturbed(delta).host)
    return _datasets[key]


def run(name, scenario, method, delta=0.0):
    """Cached inversion: (result, error indexes on the reference grid, seconds)."""
    key = (name, method, delta)
    if key not in _runs:
        ds = dataset(name, scenario, delta)
        t0 = time.perf_counter()
        res = run_method(method, ds, truth=scenario)
        dt = time.perf_counter() - t0
        support = scenario.tau_delta(FINE) != 0
        xi = metrics.error_indexes(scenario.tau(FINE), res.tau_on(FINE), support)
        _runs[key] = (res, xi, dt)
    return _runs[key]


def fmt(xi):
    return "/".join(f"{xi[k]:.4f}" for k in ("tot", "int", "ext"))


# --- C1 ------------------------------------------------------------------

def test_c1_forward_cylinder_oracle():
    t0 = time.perf_counter()
    sc = Scenario(obj=CircularRing(0.0, 0.5, (0.0, 0.0), 1.0 + 0j), domain_side=1.0)
    setup = sc.setup()
    grid = build_uniform_grid(1.0, 80)
    sca, _, _ = solve_on_support(grid, sc.tau(grid), setup)
    ref = cylinder_series(setup, 0.5, 1.0)
    err = float(np.sqrt(np.mean(np.abs(sca - ref) ** 2) / np.mean(np.abs(ref) ** 2)))
    dt = time.perf_counter() - t0
    ok = err < 0.02 and dt < 30
    report("C1", ok, f"relative RMS {err:.4%} (< 2%), {dt:.1f} s (< 30 s)")
    assert ok


# --- C2 ------------------------------------------------------------------

def test_c2_gradient_finite_differences():
    from test_formulation import _toy
    from msdcie.formulation import cost, cost_gradient

    t0 = time.perf_counter()
    worst = 0.0
    for mode in Mode:
        ops, _ = _toy(mode)
        rng = np.random.default_rng(11)
        n, v, t = ops.g_int.shape[0], ops.n_views, ops.basis.n_tail
        assert n == 36
        for _ in range(20):
            x = 0.3 * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
            c = 0.1 * (rng.standard_normal((t, v)) + 1j * rng.standard_normal((t, v)))
            gc, gx = cost_gradient(ops, x, c)
            dc = rng.standard_normal((t, v)) + 1j * rng.standard_normal((t, v))
            dx = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            h = 1e-6
            fd = (cost(ops, x + h * dx, c + h * dc).total
                  - cost(ops, x - h * dx, c - h * dc).total) / (2 * h)
            an = 2 * (np.vdot(gc, dc).real + np.vdot(gx, dx).real)
            worst = max(worst, abs(fd - an) / abs(an))
    dt = time.perf_counter() - t0
    ok = worst < 1e-6 and dt < 10
    report("C2", ok, f"max relative FD error {worst:.2e} (< 1e-6), {dt:.2f} s (< 10 s)")
    assert ok


# --- C3 ------------------------------------------------------------------

def test_c3_svd_threshold_exhaustive():
    rng = np.random.default_rng(3)
    mismatches = 0
    for _ in range(100):
        n = int(rng.integers(1, 900))
        sigma = np.sort(rng.lognormal(0, 2, n))[::-1]
        cum = np.cumsum(sigma) / np.sum(sigma)
        for alpha in np.round(np.arange(0.1, 1.01, 0.1), 10):
            dist = [abs(cum[k] - alpha) for k in range(n)]
            best = min(range(n), key=lambda k: (dist[k], k)) + 1
            mismatches += truncation_index(sigma, alpha) != best
    ok = mismatches == 0
    report("C3", ok, f"{mismatches} mismatches in 1000 (spectrum, alpha) pairs")
    assert ok


# --- benchmark runs ----------------------------------------------------------

SQUARE = square_benchmark()
RING = circular_ring_benchmark()


def test_c5_square_benchmark():
    res, xi, dt = run("square", SQUARE, "MS-DCIE")
    (cx, cy), side = res.final_roi
    lo_x, hi_x = 0.3 - 0.35, 0.3 + 0.35
    lo_y, hi_y = 0.15 - 0.35, 0.15 + 0.35
    tol = 1e-9
    contains = (cx - side / 2 <= lo_x + tol and cx + side / 2 >= hi_x - tol
                and cy - side / 2 <= lo_y + tol and cy + side / 2 >= hi_y - tol)
    s = len(res.steps)
    ok = res.stop_reason == "eta" and s in (3, 4, 5) and contains and dt < 600
    report("C5", ok, f"stop={res.stop_reason} at s={s} (eta, 3..5); final RoI center "
                     f"({cx:.3f}, {cy:.3f}) side {side:.3f} contains object: {contains}; "
                     f"{dt:.0f} s (< 600 s)")
    assert ok


def _ordering(name, scenario):
    xi = {m: run(name, scenario, m)[1] for m in METHODS}
    checks = [xi["MS-DCIE"]["tot"] < xi["DCIE"]["tot"],
              xi["MS-DLSIE"]["tot"] < xi["DLSIE"]["tot"],
              xi["MS-DCIE"]["tot"] < xi["MS-DLSIE"]["tot"]]
    detail = ", ".join(f"{m} {fmt(xi[m])}" for m in METHODS)
    return all(checks), xi, detail


def test_c6_method_ordering():
    ok_sq, xi_sq, d_sq = _ordering("square", SQUARE)
    ok_ring, _, d_ring = _ordering("ring", RING)
    gap = metrics.error_gap(xi_sq["DCIE"]["int"], xi_sq["MS-DCIE"]["int"])
    ok = ok_sq and ok_ring and gap >= 0.40
    report("C6", ok, f"Square [{d_sq}]; Ring [{d_ring}]; Square int gap {gap:.1%} (>= 40%) "
                     f"(tot/int/ext)")
    assert ok


def test_c7_contrast_sweep():
    gaps = []
    for tau in (2.0, 3.0, 4.0):
        sc = circular_ring_benchmark(tau)
        name = f"ring-tau{tau:g}"
        a = run(name, sc, "MS-DCIE")[1]
        b = run(name, sc, "DCIE")[1]
        gaps.append(metrics.error_gap(b["int"], a["int"]))
    ok = gaps[0] < gaps[1] < gaps[2]
    report("C7", ok, "Circular-Ring internal gap at tau_delta 2/3/4: "
                     + " -> ".join(f"{g:.1%}" for g in gaps) + " (strictly increasing)")
    assert ok


def test_c8_host_uncertainty():
    deltas = (0.0, 0.05, 0.2, 0.8)
    ms = [run("square", SQUARE, "MS-DCIE", d)[1] for d in deltas]
    base = [run("square", SQUARE, "DCIE", d)[1] for d in deltas]
    monotone = all(ms[i + 1][k] >= ms[i][k] for i in range(3) for k in ("tot", "int", "ext"))
    gaps = [metrics.error_gap(b["tot"], a["tot"]) for a, b in zip(ms, base)]
    ok = monotone and min(gaps) >= 0.25
    report("C8", ok, "MS-DCIE tot/int/ext at delta 0/0.05/0.2/0.8: "
                     + "; ".join(fmt(x) for x in ms)
                     + f" (non-decreasing: {monotone}); tot gap "
                     + "/".join(f"{g:.0%}" for g in gaps) + " (>= 25%)")
    assert ok


def test_c4_monotone_descent():
    # every benchmark inversion of this module (runs are cached; missing ones are computed)
    for m in METHODS:
        run("square", SQUARE, m)
        run("ring", RING, m)
    som_ok, worst_som, step_fail = True, 0.0, []
    for (name, method, delta), (res, _, _) in sorted(_runs.items(), key=str):
        for s in res.steps:
            psi = np.array([h[0] for h in s.history])
            inc = np.max(np.diff(psi), initial=-np.inf)
            worst_som = max(worst_som, inc)
            som_ok &= bool(inc <= 1e-12)
        psis = [s.psi for s in res.steps]
        for a, b in zip(psis, psis[1:]):
            if b > 1.05 * a:
                step_fail.append(f"{method}/{name}/d={delta:g}: "
                                 + "->".join(f"{p:.3g}" for p in psis))
                break
    ok = som_ok and not step_fail
    report("C4", ok, f"SOM histories non-increasing: {som_ok} (max step {worst_som:.2e}); "
                     f"per-step Psi within +5%: {not step_fail}"
                     + (" [violations: " + "; ".join(step_fail) + "]" if step_fail else ""))
    assert ok


# --- C9 ------------------------------------------------------------------

FRESNEL_FREQS = (6e9, 7e9, 8e9, 9e9)
FRESNEL_PAPER_XI = (4.57e-3, 5.01e-3, 4.69e-3, 4.39e-3)


def test_c9_experimental_data(tmp_path):
    path = os.environ.get("MSDCIE_FRESNEL_FILE")
    if not path:
        # replacement: synthetic round trip through the measured-data loader
        sc = square_benchmark()
        ds = dataset("square", sc)
        p = tmp_path / "synthetic.txt"
        export_measured(ds, p)
        back = load_measured_dataset(p, 299792458.0 / ds.setup.wavelength, sc, FINE_N, 30,
                                     source_angles=ds.setup.angles)
        err = np.max(np.abs(back.data - ds.data)) / np.max(np.abs(ds.data))
        ok = err < 1e-12
        line = (f"C9 SKIPPED: no Fresnel file (MSDCIE_FRESNEL_FILE unset); replacement "
                f"load_measured_dataset round trip {'PASS' if ok else 'FAIL'} "
                f"(max relative deviation {err:.1e})")
        print(line)
        ACCEPTANCE_LINES.append(line)
        assert ok
        return
    from pathlib import Path
    sc = Scenario.load(Path(__file__).resolve().parents[1] / "scenarios" / "fresnel_foamdielint.json")
    grid = build_uniform_grid(sc.domain_side, FINE_N, sc.domain_center)
    support = sc.tau_delta(grid) != 0
    rows, ok = [], True
    for f, paper in zip(FRESNEL_FREQS, FRESNEL_PAPER_XI):
        ds = load_measured_dataset(path, f, sc, FINE_N, 30)
        xi = {m: metrics.error_indexes(sc.tau(grid), run_method(m, ds).tau_on(grid),
                                       support)["tot"] for m in METHODS}
        best = min(xi, key=xi.get) == "MS-DCIE"
        close = paper / 2 <= xi["MS-DCIE"] <= paper * 2
        ok &= best and close
        rows.append(f"{f / 1e9:g} GHz MS-DCIE {xi['MS-DCIE']:.2e} (paper {paper:.2e}), "
                    f"best={best}")
    report("C9", ok, "; ".join(rows))
    assert ok


# --- C10 -----------------------------------------------------------------

def test_c10_property_suites():
    from test_formulation import _toy

    rng = np.random.default_rng(10)
    # support union against brute force
    union_ok = True
    for _ in range(200):
        a = rng.integers(0, 100, rng.integers(0, 30))
        b = rng.integers(0, 100, rng.integers(0, 30))
        roi = RoiState((0, 0), 1.0, a, b)
        union_ok &= roi.s_dj.tolist() == [i for i in range(100) if i in set(a) | set(b)]
    # chi <-> tau round trip
    tau = rng.uniform(-0.5, 5, 2000) + 1j * rng.uniform(-2, 0, 2000)
    beta = rng.uniform(0.5, 10, 2000)
    back = recover_contrast(modified_contrast(tau, beta), beta)
    rt = float(np.max(np.abs(back - tau) / np.abs(tau)))
    # state residual on forward-constructed exact solutions
    res = 0.0
    for mode in Mode:
        ops, ex = _toy(mode, n_side=8)
        if mode is Mode.DCIE:
            x = modified_contrast(ex["tau"], 2.0) - modified_contrast(ex["tau_h"], 2.0)
        else:
            x = ex["tau"] - ex["tau_h"]
        res = max(res, float(np.max(np.abs(state_residual(ops, x, ex["j"])))))
    # noise SNR Monte Carlo
    f = rng.standard_normal((27, 27)) + 1j * rng.standard_normal((27, 27))
    snr_err = 0.0
    for snr in (5.0, 20.0, 30.0):
        p = np.mean([np.mean(np.abs(add_noise(f, NoiseSpec(snr, s)) - f) ** 2)
                     for s in range(300)])
        snr_err = max(snr_err, abs(10 * np.log10(np.mean(np.abs(f) ** 2) / p) - snr))
    ok = union_ok and rt < 1e-12 and res < 1e-9 and snr_err < 0.2
    report("C10", ok, f"support union {union_ok}; chi/tau round trip {rt:.1e} (< 1e-12); "
                      f"state residual {res:.1e} (< 1e-9); SNR deviation {snr_err:.3f} dB "
                      f"(< 0.2)")
    assert ok
