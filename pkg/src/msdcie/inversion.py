"""Subspace-based optimization: SVD current split and Polak-Ribiere minimization."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, IllConditionedError, ValidationError
from .formulation import (Operators, cost_from_current, cost_gradient, current_from_coefficients,
                          optimal_contrast, state_linear, state_residual)

log = logging.getLogger(__name__)


def truncation_index(sigma, alpha) -> int:
    """Smallest N' minimizing |sum(sigma[:N']) / sum(sigma) - alpha|."""
    if not 0 < alpha <= 1:
        raise ValidationError(f"alpha must lie in (0, 1], got {alpha}")
    cum = np.cumsum(np.asarray(sigma, dtype=float))
    frac = cum / cum[-1]
    return int(np.argmin(np.abs(frac - alpha))) + 1


@dataclass(frozen=True, eq=False)
class SvdBasis:
    """Singular system of G_ext; ``w`` holds right vectors as columns.

    ``sigma`` has length N (zero-padded past the rank of the M x N matrix).
    """

    sigma: np.ndarray
    u: np.ndarray
    w: np.ndarray
    n_th: int

    @property
    def head(self):
        return self.w[:, :self.n_th]

    @property
    def tail(self):
        return self.w[:, self.n_th:]

    @property
    def n_tail(self):
        return self.w.shape[1] - self.n_th


def svd_split(g_ext, alpha) -> SvdBasis:
    if not 0 < alpha <= 1:
        raise ValidationError(f"alpha must lie in (0, 1], got {alpha}")
    m, n = g_ext.shape
    u, s, vh = np.linalg.svd(g_ext, full_matrices=True)
    sigma = np.zeros(n)
    sigma[:len(s)] = s
    return SvdBasis(sigma, u, vh.conj().T, truncation_index(sigma, alpha))


def deterministic_current(basis: SvdBasis, data) -> np.ndarray:
    """Minimum-norm current radiating the data projected on the first N_th modes."""
    s = basis.sigma[:basis.n_th]
    if s[-1] < 1e-14 * basis.sigma[0]:
        raise IllConditionedError(
            f"sigma_{basis.n_th} = {s[-1]:.3g} is below 1e-14 sigma_1; lower alpha")
    data = np.asarray(data)
    coeff = basis.u[:, :basis.n_th].conj().T @ data
    coeff = coeff / (s[:, None] if coeff.ndim == 2 else s)
    return basis.head @ coeff


def ambiguous_current(basis: SvdBasis, c) -> np.ndarray:
    c = np.asarray(c)
    if c.shape[0] != basis.n_tail:
        raise ValidationError(f"expected {basis.n_tail} coefficients, got {c.shape[0]}")
    return basis.tail @ c


def restrict_current_to_support(current, support) -> np.ndarray:
    """Zero a current (N or N x V) outside the given index set or mask."""
    current = np.asarray(current)
    mask = np.zeros(current.shape[0], bool)
    mask[support] = True
    return current * (mask[:, None] if current.ndim == 2 else mask)


def coefficients_for(basis: SvdBasis, current, j_dp) -> np.ndarray:
    """Least-squares tail coefficients of ``current - j_dp`` (orthonormal basis)."""
    return basis.tail.conj().T @ (current - j_dp)


@dataclass
class InversionState:
    chi: np.ndarray
    c: np.ndarray
    iteration: int = 0
    history: list = field(default_factory=list)


def initial_state(ops: Operators, chi=None, current=None) -> InversionState:
    n, v = ops.g_int.shape[0], ops.n_views
    chi = np.zeros(n, complex) if chi is None else np.asarray(chi, complex) * ops.chi_mask
    if current is None:
        c = np.zeros((ops.basis.n_tail, v), complex)
    else:
        c = coefficients_for(ops.basis, current, ops.j_dp)
    return InversionState(chi, c)


def som_minimize(state: InversionState, ops: Operators, max_iters=200, tol=1e-12,
                 callback=None) -> InversionState:
    """Alternate one Polak-Ribiere step on ``c`` with the exact contrast update.

    The cost is quadratic in ``c`` for fixed contrast, so the step length is
    the exact line minimizer; the contrast update is the exact per-cell
    minimizer for fixed currents.  The cost history is therefore
    non-increasing.  The direction restarts on a negative PR coefficient.
    """
    if max_iters < 1:
        raise ValidationError("max_iters must be >= 1")
    x = np.asarray(state.chi, complex) * ops.chi_mask
    c = np.array(state.c, dtype=complex)
    j = current_from_coefficients(ops, c)
    gj = ops.g_int @ j
    history = list(state.history)
    terms = cost_from_current(ops, x, j, gj)
    history.append((terms.total, terms.data_total, terms.state_total))
    grad_old = p = None
    it = state.iteration
    for _ in range(max_iters):
        grad, _ = cost_gradient(ops, x, c, j, gj)
        gnorm2 = np.vdot(grad, grad).real
        if np.sqrt(gnorm2) < tol:
            break
        if p is None:
            p = -grad
        else:
            pr = np.vdot(grad, grad - grad_old).real / np.vdot(grad_old, grad_old).real
            p = -grad + max(pr, 0.0) * p
        grad_old = grad

        dj = (ops.basis.tail @ p) * ops.current_mask[:, None]
        g_dj = ops.g_int @ dj
        rd = ops.g_ext @ j - ops.data
        dd = ops.g_ext @ dj
        rs = state_residual(ops, x, j, gj)
        ds = state_linear(ops, x, dj, g_dj)
        num = np.sum(ops.w_data * np.sum(np.conj(dd) * rd, axis=0)).real \
            + np.sum(ops.w_state * np.sum(np.conj(ds) * rs, axis=0)).real
        den = np.sum(ops.w_data * np.sum(np.abs(dd) ** 2, axis=0)) \
            + np.sum(ops.w_state * np.sum(np.abs(ds) ** 2, axis=0))
        t = -num / den if den > 0 else 0.0
        c = c + t * p
        j = j + t * dj
        gj = gj + t * g_dj

        x = optimal_contrast(ops, j, gj)
        it += 1
        terms = cost_from_current(ops, x, j, gj)
        if not np.isfinite(terms.total):
            raise DivergenceError(f"non-finite cost at iteration {it}", iteration=it)
        history.append((terms.total, terms.data_total, terms.state_total))
        if callback is not None:
            callback(it, terms)
    return InversionState(x, c, it, history)
