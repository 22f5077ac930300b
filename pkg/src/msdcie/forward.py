"""Method-of-moments forward solver and synthetic dataset generation.

Fields are plain complex arrays with one row per location (cell or probe)
and one column per view.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy import special

from .errors import InverseCrimeError, SolverError, ValidationError
from .geometry import CellSet, ScatteringSetup, build_uniform_grid
from .greens import external_matrix, internal_matrix

log = logging.getLogger(__name__)

COND_LIMIT = 1e12


def incident_field(setup: ScatteringSetup, points) -> np.ndarray:
    """Unit plane waves exp(-j k (x cos phi + y sin phi)) at ``points``."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    phase = np.outer(p[:, 0], np.cos(setup.angles)) + np.outer(p[:, 1], np.sin(setup.angles))
    return np.exp(-1j * setup.k * phase)


def plane_wave(setup: ScatteringSetup, cells: CellSet) -> np.ndarray:
    return incident_field(setup, cells.centers)


def _factor(matrix):
    with warnings.catch_warnings():
        # singularity is reported through the condition estimate instead
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(matrix, check_finite=True)
    anorm = np.linalg.norm(matrix, 1)
    rcond, info = sla.lapack.zgecon(lu, anorm, norm="1")
    return (lu, piv), (1.0 / rcond if rcond > 0 else np.inf)


def solve_total_field(g_int, tau, xi_inc, *, check=True) -> np.ndarray:
    """Solve (I - G_int diag(tau)) xi = xi_inc for every view.

    Cells with zero contrast do not radiate, so the dense factorization is
    carried out on the support of ``tau`` only and the remaining rows follow
    by substitution; the result is the solution of the full system.
    """
    tau = np.asarray(tau, dtype=complex)
    xi_inc = np.asarray(xi_inc, dtype=complex)
    squeeze = xi_inc.ndim == 1
    if squeeze:
        xi_inc = xi_inc[:, None]
    n = len(tau)
    if g_int.shape != (n, n) or xi_inc.shape[0] != n:
        raise ValidationError("G_int, tau and xi_inc sizes are inconsistent")
    support = np.flatnonzero(tau != 0)
    xi = xi_inc.copy()
    if len(support):
        a = -g_int[np.ix_(support, support)] * tau[support][None, :]
        a[np.diag_indices_from(a)] += 1.0
        factors, cond = _factor(a)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise SolverError(f"state equation is numerically singular (cond ~ {cond:.3g}) "
                              f"at view 0", view=0)
        xi_s = sla.lu_solve(factors, xi_inc[support])
        if not np.all(np.isfinite(xi_s)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(xi_s), axis=0))[0])
            raise SolverError(f"non-finite field in view {bad}", view=bad)
        xi[support] = xi_s
        rest = np.setdiff1d(np.arange(n), support)
        if len(rest):
            xi[rest] = xi_inc[rest] + g_int[np.ix_(rest, support)] @ (tau[support][:, None] * xi_s)
        if check:
            res = state_residual_norm(g_int, tau, xi, xi_inc, support)
            if np.any(res > 1e-10):
                v = int(np.argmax(res))
                raise SolverError(f"state-equation residual {res[v]:.3g} in view {v}", view=v)
    return xi[:, 0] if squeeze else xi


def state_residual_norm(g_int, tau, xi, xi_inc, support=None):
    """Per-view ||(I - G diag(tau)) xi - xi_inc|| / ||xi_inc||."""
    if support is None:
        support = np.flatnonzero(tau != 0)
    r = xi - xi_inc - g_int[:, support] @ (tau[support][:, None] * xi[support])
    return np.linalg.norm(r, axis=0) / np.linalg.norm(xi_inc, axis=0)


def scattered_at_probes(g_ext, tau, xi) -> np.ndarray:
    tau = np.asarray(tau)
    return g_ext @ (tau[:, None] * xi) if np.ndim(xi) == 2 else g_ext @ (tau * xi)


@dataclass(frozen=True, eq=False)
class HostSolution:
    xi_h: np.ndarray
    j_h: np.ndarray
    sca_h: np.ndarray


def host_solution(g_int, g_ext, tau_h, xi_inc) -> HostSolution:
    """Field, equivalent current and probe field of the host without object."""
    xi_h = solve_total_field(g_int, tau_h, xi_inc)
    j_h = np.asarray(tau_h)[:, None] * xi_h
    return HostSolution(xi_h, j_h, g_ext @ j_h)


def differential_data(sca, sca_h) -> np.ndarray:
    return np.asarray(sca) - np.asarray(sca_h)


def solve_on_support(cells: CellSet, tau, setup: ScatteringSetup):
    """Probe scattered field and support-only fields for a contrast on ``cells``.

    Only the cells with non-zero contrast are assembled, which keeps the
    80 x 80 reference grid affordable.  Returns (sca_at_probes, support, xi_support).
    """
    tau = np.asarray(tau, dtype=complex)
    support = np.flatnonzero(tau != 0)
    if len(support) == 0:
        return np.zeros((setup.n_probes, setup.n_views), complex), support, None
    sub = cells.subset(support)
    g = internal_matrix(sub, setup.k)
    xi = solve_total_field(g, tau[support], plane_wave(setup, sub))
    sca = external_matrix(sub, setup.probes, setup.k) @ (tau[support][:, None] * xi)
    return sca, support, xi


class HostCache:
    """Host fields per (host, cell set, setup), computed once and reused."""

    def __init__(self):
        self._store = {}

    def get(self, host_key, cells: CellSet, setup: ScatteringSetup, tau_h, g_int=None, g_ext=None):
        key = (host_key, cells.fingerprint(), setup.wavelength, setup.angles.tobytes(),
               setup.probes.tobytes())
        if key not in self._store:
            if g_int is None:
                g_int = internal_matrix(cells, setup.k)
            if g_ext is None:
                g_ext = external_matrix(cells, setup.probes, setup.k)
            self._store[key] = host_solution(g_int, g_ext, tau_h, plane_wave(setup, cells))
        return self._store[key]

    def __len__(self):
        return len(self._store)


HOST_CACHE = HostCache()


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    snr_db: float = float("inf")
    seed: int = 0

    @property
    def noiseless(self) -> bool:
        return np.isinf(self.snr_db) and self.snr_db > 0


def noise_std(fields, snr_db) -> float:
    """Per-component standard deviation for a global SNR in dB."""
    fields = np.asarray(fields)
    signal_power = np.mean(np.abs(fields) ** 2)
    return float(np.sqrt(signal_power / 10 ** (snr_db / 10) / 2))


def add_noise(fields, spec: NoiseSpec) -> np.ndarray:
    """Add circular complex white Gaussian noise at the requested global SNR.

    The SNR is the ratio of total signal power to expected total noise power
    over all M x V samples.
    """
    fields = np.asarray(fields, dtype=complex)
    if fields.size == 0:
        raise ValidationError("fields must be non-empty")
    if spec.noiseless:
        return fields.copy()
    std = noise_std(fields, spec.snr_db)
    rng = np.random.default_rng(spec.seed)
    noise = rng.standard_normal(fields.shape) + 1j * rng.standard_normal(fields.shape)
    return fields + std * noise


def cylinder_series(setup: ScatteringSetup, radius, tau, n_terms=None) -> np.ndarray:
    """Analytic TM scattered field of a homogeneous circular cylinder at the probes.

    The cylinder is centered at the origin; the field is expanded in
    cylindrical harmonics and the coefficients follow from continuity of the
    field and its radial derivative.
    """
    k = setup.k
    k1 = k * np.sqrt(1 + tau)
    if n_terms is None:
        n_terms = int(np.ceil(abs(k1) * radius + 4 * (abs(k1) * radius) ** (1 / 3) + 10))
    r = np.hypot(setup.probes[:, 0], setup.probes[:, 1])
    phi = np.arctan2(setup.probes[:, 1], setup.probes[:, 0])
    ka, k1a = k * radius, k1 * radius
    out = np.zeros((setup.n_probes, setup.n_views), dtype=complex)
    for n in range(-n_terms, n_terms + 1):
        jn_in, djn_in = special.jv(n, k1a), special.jvp(n, k1a)
        jn, djn = special.jv(n, ka), special.jvp(n, ka)
        hn, dhn = special.hankel2(n, ka), special.h2vp(n, ka)
        # a J_n(k1 a) - b H_n(k a) = j^-n J_n(k a); same for k-scaled derivatives
        amp = (1j) ** (-n)
        m = np.array([[jn_in, -hn], [k1 * djn_in, -k * dhn]])
        a_n, b_n = np.linalg.solve(m, amp * np.array([jn, k * djn]))
        radial = special.hankel2(n, k * r)
        out += b_n * radial[:, None] * np.exp(1j * n * (phi[:, None] - setup.angles[None, :]))
    return out


@dataclass(eq=False)
class Dataset:
    """Differential scattering data plus everything needed to invert it.

    ``data`` holds the (noisy) differential scattered field at the probes and
    ``sca_h`` the host-only probe field that was subtracted from the
    measurement.  ``xi_h``/``j_h`` are the host field and current on
    ``cells`` (the base inversion grid).
    """

    setup: ScatteringSetup
    scenario: object
    data: np.ndarray
    sca_h: np.ndarray
    cells: CellSet
    xi_h: np.ndarray
    j_h: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def measured(self) -> np.ndarray:
        """Total scattered field at the probes (differential + host)."""
        return self.data + self.sca_h

    def with_assumed_host(self, host) -> "Dataset":
        """Re-reference the measurement to a (possibly wrong) host model.

        The measured field is kept, the host response is re-simulated on the
        reference grid with ``host`` and subtracted again.
        """
        scenario = self.scenario.with_host(host)
        fine = build_uniform_grid(self.scenario.domain_side, self.meta.get("fine_n", 80),
                                  self.scenario.domain_center)
        sca_h_new, _, _ = solve_on_support(fine, scenario.tau_h(fine), self.setup)
        data = self.measured - sca_h_new
        hs = host_solution(internal_matrix(self.cells, self.setup.k),
                           external_matrix(self.cells, self.setup.probes, self.setup.k),
                           scenario.tau_h(self.cells), plane_wave(self.setup, self.cells))
        meta = dict(self.meta, assumed_host=repr(host))
        return Dataset(self.setup, scenario, data, sca_h_new, self.cells, hs.xi_h, hs.j_h, meta)


def synthesize_dataset(scenario, setup: ScatteringSetup, fine_n=80, noise: NoiseSpec = NoiseSpec(),
                       inversion_n=30, allow_inverse_crime=False) -> Dataset:
    """Simulate differential data on a reference grid and add noise.

    Raises :class:`InverseCrimeError` when the reference grid is not finer
    than the inversion grid unless ``allow_inverse_crime`` is set.
    """
    if fine_n <= inversion_n and not allow_inverse_crime:
        raise InverseCrimeError(
            f"reference grid {fine_n}x{fine_n} is not finer than inversion grid "
            f"{inversion_n}x{inversion_n}; pass allow_inverse_crime=True to override")
    fine = build_uniform_grid(scenario.domain_side, fine_n, scenario.domain_center)
    sca, _, _ = solve_on_support(fine, scenario.tau(fine), setup)
    sca_h, _, _ = solve_on_support(fine, scenario.tau_h(fine), setup)
    data = add_noise(differential_data(sca, sca_h), noise)

    cells = build_uniform_grid(scenario.domain_side, inversion_n, scenario.domain_center)
    hs = host_solution(internal_matrix(cells, setup.k),
                       external_matrix(cells, setup.probes, setup.k),
                       scenario.tau_h(cells), plane_wave(setup, cells))
    meta = {"fine_n": int(fine_n), "inversion_n": int(inversion_n),
            "snr_db": noise.snr_db, "seed": int(noise.seed)}
    return Dataset(setup, scenario, data, sca_h, cells, hs.xi_h, hs.j_h, meta)
