import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msdcie.errors import NormalizationError, NumericalPoleError, ValidationError
from msdcie.formulation import (Mode, Operators, compute_beta, cost, cost_from_current,
                                cost_gradient, current_from_coefficients, modified_contrast,
                                optimal_contrast, recover_contrast, state_residual)
from msdcie.forward import host_solution, plane_wave, scattered_at_probes, solve_total_field
from msdcie.geometry import ScatteringSetup, build_uniform_grid
from msdcie.greens import external_matrix, internal_matrix
from msdcie.inversion import deterministic_current, svd_split
from msdcie.scenario import CircularRing, Scenario, SquareObject, SquareRing


def test_contraction_example():
    assert modified_contrast(2.0, 2.0) == pytest.approx(0.8)
    assert recover_contrast(0.8, 2.0) == pytest.approx(2.0)
    assert modified_contrast(0.0, 3.0) == 0


finite = st.floats(-5, 5, allow_nan=False)


@settings(max_examples=200)
@given(finite, finite, st.floats(0.05, 20))
def test_chi_tau_round_trip(re, im, beta):
    tau = complex(re, im)
    if abs(beta * tau + 1) < 1e-3:
        return
    back = recover_contrast(modified_contrast(tau, beta), beta)
    assert abs(back - tau) <= 1e-12 * max(abs(tau), 1.0) * max(1.0, 1 / abs(beta * tau + 1))


def test_poles():
    with pytest.raises(NumericalPoleError):
        modified_contrast(-0.5, 2.0)
    with pytest.raises(NumericalPoleError):
        recover_contrast(1.0, 2.0)


def test_compute_beta():
    g = np.array([[1 + 1j, 2.0], [-3.0, 0.5j]])
    p = compute_beta(g, 1.4)
    # row sums: 3+1j (|.| = 3.1623) and -3+0.5j (|.| = 3.0414)
    assert p.beta == pytest.approx(1.4 * np.sqrt(10))
    assert compute_beta(g, 2.8).beta == pytest.approx(2 * p.beta)
    assert np.all(p.vector(3) == p.beta)
    with pytest.raises(ValidationError):
        compute_beta(np.zeros((0, 0)), 1.0)


def _toy(mode, n_side=6, views=3, probes=8, alpha=0.5, beta=2.0, scenario=None, seed=0):
    """Operators on a small grid with data from the same discretization."""
    setup = ScatteringSetup.circular(1.0, views, probes, 2.0)
    side = 1.2
    cells = build_uniform_grid(side, n_side)
    if scenario is None:
        scenario = Scenario(host=SquareRing(0.2, 0.5 + 0j),
                            obj=SquareObject(0.4, (0.1, 0.0), 1.0 + 0.2j), domain_side=side)
    g = internal_matrix(cells, setup.k)
    g_ext = external_matrix(cells, setup.probes, setup.k)
    inc = plane_wave(setup, cells)
    tau, tau_h = scenario.tau(cells), scenario.tau_h(cells)
    hs = host_solution(g, g_ext, tau_h, inc)
    xi = solve_total_field(g, tau, inc)
    data = scattered_at_probes(g_ext, tau, xi) - hs.sca_h
    bvec = np.full(len(cells), beta, complex)
    host = modified_contrast(tau_h, beta) if mode is Mode.DCIE else tau_h
    basis = svd_split(g_ext, alpha)
    n = len(cells)
    ops = Operators(mode, g, g_ext, bvec, host, hs.xi_h, hs.j_h, inc, data,
                    np.ones(n, bool), np.ones(n, bool), basis, deterministic_current(basis, data))
    exact = {"tau": tau, "tau_h": tau_h, "xi": xi, "j": tau[:, None] * xi - hs.j_h}
    return ops, exact


@pytest.mark.parametrize("mode", list(Mode))
def test_residual_vanishes_on_exact_solution(mode):
    ops, ex = _toy(mode)
    if mode is Mode.DCIE:
        x = modified_contrast(ex["tau"], 2.0) - modified_contrast(ex["tau_h"], 2.0)
    else:
        x = ex["tau"] - ex["tau_h"]
    r = state_residual(ops, x, ex["j"])
    assert np.max(np.abs(r)) < 1e-9
    assert cost_from_current(ops, x, ex["j"]).total < 1e-18
    np.testing.assert_allclose(optimal_contrast(ops, ex["j"])[x != 0], x[x != 0], atol=1e-9)


@pytest.mark.parametrize("mode", list(Mode))
def test_residual_vanishes_for_lossy_ring_object(mode):
    sc = Scenario(host=SquareRing(0.2, 0.5 - 0.1j),
                  obj=CircularRing(0.1, 0.35, (0.0, 0.05), 2.0 - 0.5j), domain_side=1.2)
    ops, ex = _toy(mode, n_side=8, scenario=sc, beta=3.1)
    if mode is Mode.DCIE:
        x = modified_contrast(ex["tau"], 3.1) - modified_contrast(ex["tau_h"], 3.1)
    else:
        x = ex["tau"] - ex["tau_h"]
    assert np.max(np.abs(state_residual(ops, x, ex["j"]))) < 1e-9


@pytest.mark.parametrize("mode", list(Mode))
def test_zero_problem_has_zero_residual(mode):
    ops, _ = _toy(mode)
    n, v = ops.g_int.shape[0], ops.n_views
    r = state_residual(ops, np.zeros(n), np.zeros((n, v), complex))
    assert not r.any()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(-2, 2), st.floats(-2, 2))
def test_residual_affine_in_current_and_contrast(seed, a, b):
    ops, _ = _toy(Mode.DCIE)
    rng = np.random.default_rng(seed)
    n, v = ops.g_int.shape[0], ops.n_views
    rnd = lambda *s: rng.standard_normal(s) + 1j * rng.standard_normal(s)
    x, j1, j2 = rnd(n), rnd(n, v), rnd(n, v)
    r0 = state_residual(ops, x, np.zeros((n, v), complex))
    lin = lambda j: state_residual(ops, x, j) - r0
    np.testing.assert_allclose(lin(a * j1 + b * j2), a * lin(j1) + b * lin(j2), atol=1e-9)
    x2 = rnd(n)
    j = rnd(n, v)
    mid = state_residual(ops, (x + x2) / 2, j)
    np.testing.assert_allclose(mid, (state_residual(ops, x, j) + state_residual(ops, x2, j)) / 2,
                               atol=1e-9)


@pytest.mark.parametrize("mode", list(Mode))
def test_gradient_matches_finite_differences(mode):
    ops, _ = _toy(mode)
    assert ops.g_int.shape[0] == 36
    rng = np.random.default_rng(7)
    n, v, t = 36, ops.n_views, ops.basis.n_tail
    worst = 0.0
    for _ in range(20):
        x = 0.3 * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        c = 0.1 * (rng.standard_normal((t, v)) + 1j * rng.standard_normal((t, v)))
        gc, gx = cost_gradient(ops, x, c)
        # directional derivative along a random complex direction
        dc = rng.standard_normal((t, v)) + 1j * rng.standard_normal((t, v))
        dx = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        h = 1e-6
        fd = (cost(ops, x + h * dx, c + h * dc).total
              - cost(ops, x - h * dx, c - h * dc).total) / (2 * h)
        an = 2 * (np.vdot(gc, dc).real + np.vdot(gx, dx).real)
        worst = max(worst, abs(fd - an) / abs(an))
    assert worst < 1e-6


def test_cost_decomposition():
    ops, ex = _toy(Mode.DCIE)
    n, v = ops.g_int.shape[0], ops.n_views
    rng = np.random.default_rng(3)
    x = rng.standard_normal(n) + 0j
    j = rng.standard_normal((n, v)) + 0j
    terms = cost_from_current(ops, x, j)
    rd = ops.g_ext @ j - ops.data
    rs = state_residual(ops, x, j)
    ref_d = np.sum(np.abs(rd) ** 2, 0) / np.sum(np.abs(ops.data) ** 2, 0)
    ref_s = np.sum(np.abs(rs) ** 2, 0) / np.sum(np.abs(ops.xi_inc) ** 2, 0)
    np.testing.assert_allclose(terms.data, ref_d)
    np.testing.assert_allclose(terms.state, ref_s)
    assert terms.total == pytest.approx(terms.data_total + terms.state_total)


def test_tail_energy_at_zero_coefficients():
    ops, _ = _toy(Mode.DLSIE)
    c = np.zeros((ops.basis.n_tail, ops.n_views), complex)
    j = current_from_coefficients(ops, c)
    np.testing.assert_allclose(j, ops.j_dp)
    # the deterministic current reproduces the head projection of the data exactly
    u_head = ops.basis.u[:, :ops.basis.n_th]
    np.testing.assert_allclose(ops.g_ext @ j, u_head @ (u_head.conj().T @ ops.data), atol=1e-12)
    # by Parseval, the data misfit equals the energy of the discarded data modes
    tail = np.sum(np.abs(ops.data) ** 2, 0) - np.sum(np.abs(u_head.conj().T @ ops.data) ** 2, 0)
    terms = cost(ops, np.zeros(36), c)
    np.testing.assert_allclose(terms.data, tail / np.sum(np.abs(ops.data) ** 2, 0), atol=1e-12)


def test_gradient_vanishes_at_exact_solution():
    ops, ex = _toy(Mode.DCIE, alpha=1.0)
    # alpha = 1 keeps every radiating mode in the head, so the exact current is reachable
    c = ops.basis.tail.conj().T @ (ex["j"] - ops.j_dp)
    x = modified_contrast(ex["tau"], 2.0) - modified_contrast(ex["tau_h"], 2.0)
    np.testing.assert_allclose(current_from_coefficients(ops, c), ex["j"], atol=1e-8)
    gc, gx = cost_gradient(ops, x, c)
    assert np.max(np.abs(gc)) < 1e-8 and np.max(np.abs(gx)) < 1e-8


def test_zero_data_view_rejected():
    ops, _ = _toy(Mode.DCIE)
    ops.data[:, 1] = 0
    ops.__post_init__()
    with pytest.raises(NormalizationError):
        cost(ops, np.zeros(36), np.zeros((ops.basis.n_tail, ops.n_views)))


def test_operator_shape_validation():
    ops, _ = _toy(Mode.DCIE)
    with pytest.raises(ValidationError):
        Operators(Mode.DCIE, ops.g_int, ops.g_ext, ops.beta[:-1], ops.host, ops.xi_h, ops.j_h,
                  ops.xi_inc, ops.data, ops.chi_mask, ops.current_mask)
    with pytest.raises(ValidationError):
        state_residual(ops, np.zeros(5), np.zeros((36, 3)))


def test_masks_confine_gradient():
    ops, _ = _toy(Mode.DCIE)
    ops.chi_mask[:18] = False
    rng = np.random.default_rng(1)
    x = rng.standard_normal(36) * ops.chi_mask + 0j
    c = rng.standard_normal((ops.basis.n_tail, ops.n_views)) + 0j
    _, gx = cost_gradient(ops, x, c)
    assert not gx[:18].any()
    assert not optimal_contrast(ops, current_from_coefficients(ops, c))[:18].any()
