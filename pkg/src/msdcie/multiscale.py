"""Iterative zooming loop around the SOM inversion.

At every step the region of interest (RoI) is re-tiled at the inversion
resolution, host cells outside it stay at the base resolution, the problem
is solved and the RoI is re-estimated from the retrieved contrast.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .errors import MsdcieError, RoiCollapseError, ValidationError
from .formulation import (Mode, Operators, compute_beta, current_from_coefficients,
                          modified_contrast, recover_contrast)
from .forward import HOST_CACHE, Dataset, plane_wave
from .geometry import (CellSet, RoiState, Tag, build_ms_cellset, build_uniform_grid, clip_square,
                       refined_square)
from .greens import assemble
from .inversion import deterministic_current, initial_state, som_minimize, svd_split

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MSConfig:
    steps: int = 6
    iterations: int = 200
    alpha: float = 0.4
    gamma: float = 1.4
    eta_min: float = 0.2
    filter_fraction: float = 0.25
    n_per_side: int = 30
    beta: float | None = None
    remap_currents: bool = True

    def __post_init__(self):
        if self.steps < 1 or self.iterations < 1 or self.n_per_side < 1:
            raise ValidationError("steps, iterations and n_per_side must be >= 1")
        if not 0 < self.alpha <= 1:
            raise ValidationError("alpha must lie in (0, 1]")
        if not self.gamma > 0 or self.eta_min < 0 or not 0 <= self.filter_fraction < 1:
            raise ValidationError("gamma > 0, eta_min >= 0 and 0 <= filter_fraction < 1 required")
        if self.beta is not None and self.beta == 0:
            raise ValidationError("a fixed beta must be non-zero")


def current_support(s_dchi, s_chih) -> np.ndarray:
    return np.union1d(np.asarray(s_dchi, dtype=np.intp), np.asarray(s_chih, dtype=np.intp))


def update_roi(cells: CellSet, estimate, filter_fraction=0.25):
    """Barycenter and twice the mean weighted distance of |estimate|.

    Weights below ``filter_fraction`` of the maximum are discarded first.
    Returns ((x, y), side).
    """
    w = np.abs(np.asarray(estimate))
    if w.size == 0 or not np.any(w > 0):
        raise RoiCollapseError("contrast estimate is identically zero")
    w = np.where(w >= filter_fraction * w.max(), w, 0.0)
    total = w.sum()
    center = (cells.centers * w[:, None]).sum(axis=0) / total
    dist = np.hypot(cells.x - center[0], cells.y - center[1])
    side = 2 * float(np.sum(dist * w) / total)
    return (float(center[0]), float(center[1])), side


def zoom_factor(l_new, l_old) -> float:
    if not l_new > 0:
        raise ValidationError("new RoI side must be positive")
    return abs(l_new - l_old) / l_new


def map_solution(old_cells: CellSet, values, new_cells: CellSet) -> np.ndarray:
    """Nearest-center transfer of per-cell values; uncovered cells get zero."""
    values = np.asarray(values)
    idx = old_cells.nearest(new_cells.centers)
    covered = old_cells.locate(new_cells.centers) >= 0
    out = values[idx]
    mask = covered[:, None] if out.ndim == 2 else covered
    return np.where(mask, out, 0)


@dataclass
class StepReport:
    step: int
    psi: float
    psi_data: float
    psi_state: float
    center: tuple
    side: float
    refined_center: tuple
    refined_side: float
    n_cells: int
    n_th: int
    beta: float
    eta: float = float("nan")
    next_side: float = float("nan")
    xi_tot: float = float("nan")
    history: list = field(default_factory=list, repr=False)


@dataclass(eq=False)
class MSResult:
    mode: Mode
    cells: CellSet
    tau_opt: np.ndarray
    tau_h: np.ndarray
    unknown: np.ndarray
    current: np.ndarray
    beta: float
    steps: list
    stop_reason: str
    scenario: object = None
    error: Exception | None = None

    @property
    def tau_delta(self):
        return self.tau_opt - self.tau_h

    @property
    def final_roi(self):
        return refined_square(self.cells)

    def tau_on(self, target: CellSet) -> np.ndarray:
        """Reconstruction on another grid: assumed host plus remapped differential part."""
        return self.scenario.tau_h(target) + map_solution(self.cells, self.tau_delta, target)

    def write_diagnostics(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["s", "psi", "eta", "center_x", "center_y", "L", "N_th", "beta", "xi_tot"])
            for r in self.steps:
                w.writerow([r.step, repr(r.psi), repr(r.eta), repr(r.center[0]),
                            repr(r.center[1]), repr(r.side), r.n_th, repr(r.beta),
                            repr(r.xi_tot)])

    def write_iterations(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["s", "i", "psi", "psi_data", "psi_state"])
            for r in self.steps:
                for i, (p, pd, ps) in enumerate(r.history):
                    w.writerow([r.step, i, repr(p), repr(pd), repr(ps)])


@dataclass(eq=False)
class _Step:
    cells: CellSet
    ops: Operators
    beta: float
    tau_h: np.ndarray
    chi: np.ndarray
    current: np.ndarray

    def tau_delta(self):
        if self.ops.mode is Mode.DCIE:
            return recover_contrast(self.chi + self.ops.host, self.beta) - self.tau_h
        return self.chi.copy()

    def tau_opt(self):
        if self.ops.mode is Mode.DCIE:
            return recover_contrast(self.chi + self.ops.host, self.beta)
        return self.tau_h + self.chi


def _prepare(mode, dataset: Dataset, cells: CellSet, roi: RoiState, config: MSConfig):
    setup = dataset.setup
    greens = assemble(cells, setup)
    tau_h = dataset.scenario.tau_h(cells)
    hs = HOST_CACHE.get(dataset.scenario.host, cells, setup, tau_h, greens.g_int, greens.g_ext)
    s_dchi = cells.indices(Tag.ROI_REFINED)
    roi = roi.with_supports(s_dchi, np.flatnonzero(tau_h != 0))
    s_dj = roi.s_dj
    if config.beta is not None:
        beta = float(config.beta)
    else:
        beta = compute_beta(greens.g_int[np.ix_(s_dj, s_dj)], config.gamma).beta
    host = modified_contrast(tau_h, beta) if mode is Mode.DCIE else tau_h
    chi_mask = np.zeros(len(cells), bool)
    chi_mask[s_dchi] = True
    current_mask = np.zeros(len(cells), bool)
    current_mask[s_dj] = True
    basis = svd_split(greens.g_ext, config.alpha)
    ops = Operators(mode, greens.g_int, greens.g_ext, np.full(len(cells), beta, complex), host,
                    hs.xi_h, hs.j_h, plane_wave(setup, cells), dataset.data, chi_mask,
                    current_mask, basis, deterministic_current(basis, dataset.data))
    return ops, beta, tau_h, roi


def _initial_unknowns(mode, prev: _Step, cells, ops, beta, tau_h, remap_currents):
    """Map the previous step's contrast and current onto the new cells.

    The contrast is transferred in the physical (tau) domain and converted
    with the new beta so that a change of beta does not distort it.
    """
    tau_d = map_solution(prev.cells, prev.tau_delta(), cells) * ops.chi_mask
    if mode is Mode.DCIE:
        chi = modified_contrast(tau_h + tau_d, beta) - ops.host
    else:
        chi = tau_d
    current = map_solution(prev.cells, prev.current, cells) if remap_currents else None
    return initial_state(ops, chi * ops.chi_mask, current)


def _xi_tot(step: _Step, scenario, truth, truth_cells):
    if truth is None or truth.obj is None:
        return float("nan")
    tau_opt = scenario.tau_h(truth_cells) + map_solution(step.cells, step.tau_delta(), truth_cells)
    e = metrics.local_error(truth.tau(truth_cells), tau_opt)
    return metrics.global_error(e, metrics.Region.TOTAL)


def run_ms(mode, dataset: Dataset, config: MSConfig = MSConfig(), truth=None,
           truth_n=80) -> MSResult:
    """Run the zooming loop; ``config.steps == 1`` gives the single-resolution method.

    With a ``truth`` scenario the total error on a ``truth_n`` grid is
    reported after every step.  Errors raised after the first step are
    returned in ``MSResult.error`` together with the last good solution.
    """
    mode = Mode(mode)
    sc = dataset.scenario
    base = build_uniform_grid(sc.domain_side, config.n_per_side, sc.domain_center)
    host_support = np.flatnonzero(sc.tau_h(base) != 0)
    h_base = sc.domain_side / config.n_per_side
    truth_cells = build_uniform_grid(sc.domain_side, truth_n, sc.domain_center) if truth else None

    roi = RoiState(sc.domain_center, sc.domain_side)
    steps, prev, error, reason = [], None, None, "max_steps"
    zero_data = not np.any(dataset.data)
    for s in range(1, config.steps + 1):
        try:
            cells = build_ms_cellset(base, roi, host_support, config.n_per_side)
            ops, beta, tau_h, roi = _prepare(mode, dataset, cells, roi, config)
            if zero_data:
                # nothing scattered: the trivial solution is exact
                state = initial_state(ops)
                state.history.append((0.0, 0.0, 0.0))
            else:
                state = (initial_state(ops) if prev is None else
                         _initial_unknowns(mode, prev, cells, ops, beta, tau_h,
                                           config.remap_currents))
                state = som_minimize(state, ops, config.iterations)
        except MsdcieError as exc:
            if prev is None:
                raise
            error, reason = exc, "error"
            log.warning("step %d failed (%s); keeping step %d", s, exc, s - 1)
            break
        current = current_from_coefficients(ops, state.c)
        step = _Step(cells, ops, beta, tau_h, state.chi, current)
        psi, psi_d, psi_s = state.history[-1]
        rc, rside = refined_square(cells)
        report = StepReport(s, psi, psi_d, psi_s, roi.center, roi.side, rc, rside, len(cells),
                            ops.basis.n_th, beta, history=state.history,
                            xi_tot=_xi_tot(step, sc, truth, truth_cells))
        steps.append(report)
        prev = step
        log.info("step %d: psi=%.4g N=%d N_th=%d beta=%.4g L=%.4g", s, psi, len(cells),
                 ops.basis.n_th, beta, roi.side)
        if s == config.steps:
            break
        try:
            center, side = update_roi(cells, state.chi, config.filter_fraction)
        except RoiCollapseError as exc:
            error, reason = exc, "collapse"
            break
        side = max(side, 2 * h_base)
        center, side = clip_square(center, side, sc.domain_side, sc.domain_center)
        report.next_side = side
        report.eta = zoom_factor(side, roi.side)
        if report.eta <= config.eta_min:
            reason = "eta"
            break
        roi = RoiState(center, side)

    return MSResult(mode, prev.cells, prev.tau_opt(), prev.tau_h, prev.chi, prev.current,
                    prev.beta, steps, reason, sc, error)


def single_resolution_config(mode, n_per_side=46, iterations=200, alpha=0.4, beta=2.0):
    """Settings of the single-step baselines (DCIE with a fixed beta)."""
    mode = Mode(mode)
    return MSConfig(steps=1, iterations=iterations, alpha=alpha, n_per_side=n_per_side,
                    beta=beta if mode is Mode.DCIE else None)


METHODS = {
    "MS-DCIE": (Mode.DCIE, lambda **kw: MSConfig(**kw)),
    "MS-DLSIE": (Mode.DLSIE, lambda **kw: MSConfig(**kw)),
    "DCIE": (Mode.DCIE, lambda **kw: single_resolution_config(Mode.DCIE, **kw)),
    "DLSIE": (Mode.DLSIE, lambda **kw: single_resolution_config(Mode.DLSIE, **kw)),
}


def run_method(method, dataset, truth=None, **overrides) -> MSResult:
    """Run one of MS-DCIE, DCIE, MS-DLSIE, DLSIE with optional overrides."""
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}; expected one of {sorted(METHODS)}")
    mode, make = METHODS[method]
    return run_ms(mode, dataset, make(**overrides), truth=truth)


def side_bound_holds(result: MSResult) -> bool:
    """Each RoI side from the barycenter rule is at most sqrt(2) times the region it came from."""
    for r in result.steps:
        if np.isfinite(r.next_side) and r.next_side > math.sqrt(2) * r.refined_side * (1 + 1e-9):
            return False
    return True
