"""Differential contraction (DCIE) and differential Lippmann-Schwinger (DLSIE) operators.

Both state equations are affine in the contrast unknown ``x`` for a fixed
differential current ``J``::

    r = e(J) - x * f(J)

with, for DCIE (x = chi_delta, h = chi_H, b = beta)::

    e = b J - h (G J + b J)          f = G J + b J + xi_H + b J_H

and for DLSIE (x = tau_delta, h = tau_H)::

    e = J - h G J                    f = G J + xi_H

Gradients are Wirtinger derivatives with respect to the conjugated
unknowns; for a real cost Psi(z), dPsi/dconj(z) = (dPsi/dRe z + j dPsi/dIm z) / 2.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np

from .errors import NormalizationError, NumericalPoleError, ValidationError

if TYPE_CHECKING:
    from .inversion import SvdBasis

POLE_TOL = 1e-12


class Mode(str, Enum):
    DCIE = "DCIE"
    DLSIE = "DLSIE"


@dataclass(frozen=True)
class ContractionParams:
    beta: float
    gamma: float = float("nan")

    def vector(self, n):
        return np.full(n, self.beta, dtype=complex)


def compute_beta(g_int_support, gamma) -> ContractionParams:
    """beta = gamma * max_n |sum_q G[n, q]| over the current support."""
    g = np.asarray(g_int_support)
    if g.size == 0:
        raise ValidationError("current support is empty")
    return ContractionParams(float(gamma * np.max(np.abs(g.sum(axis=1)))), float(gamma))


def modified_contrast(tau, beta) -> np.ndarray:
    """chi = beta tau / (beta tau + 1)."""
    bt = np.asarray(beta) * np.asarray(tau, dtype=complex)
    if np.any(np.abs(bt + 1) < POLE_TOL):
        raise NumericalPoleError("beta * tau is numerically -1")
    return bt / (bt + 1)


def recover_contrast(chi, beta) -> np.ndarray:
    """tau = chi / (beta (1 - chi))."""
    chi = np.asarray(chi, dtype=complex)
    if np.any(np.abs(1 - chi) < POLE_TOL):
        raise NumericalPoleError("modified contrast is numerically 1")
    return chi / (np.asarray(beta) * (1 - chi))


@dataclass(eq=False)
class Operators:
    """Everything the cost needs for one inversion on a fixed cell set.

    ``host`` is chi_H in DCIE mode and tau_H in DLSIE mode; ``beta`` is a
    per-cell vector (ignored by DLSIE).  ``chi_mask``/``current_mask`` are the
    boolean supports of the contrast and current unknowns.
    """

    mode: Mode
    g_int: np.ndarray
    g_ext: np.ndarray
    beta: np.ndarray
    host: np.ndarray
    xi_h: np.ndarray
    j_h: np.ndarray
    xi_inc: np.ndarray
    data: np.ndarray
    chi_mask: np.ndarray
    current_mask: np.ndarray
    basis: "SvdBasis" = None
    j_dp: np.ndarray = None

    def __post_init__(self):
        self.mode = Mode(self.mode)
        n = self.g_int.shape[0]
        if self.g_int.shape != (n, n) or self.g_ext.shape[1] != n:
            raise ValidationError("Green's matrices do not match the cell count")
        for name in ("beta", "host", "chi_mask", "current_mask"):
            if np.shape(getattr(self, name)) != (n,):
                raise ValidationError(f"{name} must have length {n}")
        for name in ("xi_h", "j_h", "xi_inc"):
            if np.shape(getattr(self, name))[0] != n:
                raise ValidationError(f"{name} must have {n} rows")
        self.chi_mask = np.asarray(self.chi_mask, bool)
        self.current_mask = np.asarray(self.current_mask, bool)
        self.w_state = 1.0 / np.sum(np.abs(self.xi_inc) ** 2, axis=0)
        norm_d = np.sum(np.abs(self.data) ** 2, axis=0)
        self.w_data = np.divide(1.0, norm_d, out=np.full_like(norm_d, np.nan), where=norm_d > 0)

    @property
    def n_views(self):
        return self.data.shape[1]


def state_split(ops: Operators, current, g_current=None):
    """(e, f) with state residual r = e - x f for a given current."""
    gj = ops.g_int @ current if g_current is None else g_current
    b = ops.beta[:, None]
    h = ops.host[:, None]
    if ops.mode is Mode.DCIE:
        bj = b * current
        e = bj - h * (gj + bj)
        f = gj + bj + ops.xi_h + b * ops.j_h
    else:
        e = current - h * gj
        f = gj + ops.xi_h
    return e, f


def state_residual(ops: Operators, x, current, g_current=None) -> np.ndarray:
    """LHS - RHS of the discretized state equation, one column per view."""
    x = np.asarray(x)
    if x.shape != (ops.g_int.shape[0],) or current.shape[0] != x.shape[0]:
        raise ValidationError("contrast and current shapes do not match the operators")
    e, f = state_split(ops, current, g_current)
    return e - x[:, None] * f


def state_adjoint(ops: Operators, x, u) -> np.ndarray:
    """Adjoint of the J -> r linear map applied to u (per view)."""
    g = (x + ops.host)[:, None]
    if ops.mode is Mode.DCIE:
        b = ops.beta[:, None]
        gu = np.conj(g) * u
        return np.conj(b) * u - ops.g_int.conj().T @ gu - np.conj(b) * gu
    return u - ops.g_int.conj().T @ (np.conj(g) * u)


def state_linear(ops: Operators, x, dj, g_dj=None) -> np.ndarray:
    """Linear part of the state residual applied to a current increment."""
    g_dj = ops.g_int @ dj if g_dj is None else g_dj
    g = (x + ops.host)[:, None]
    if ops.mode is Mode.DCIE:
        b = ops.beta[:, None]
        return b * dj - g * (g_dj + b * dj)
    return dj - g * g_dj


@dataclass(frozen=True)
class CostTerms:
    total: float
    data: np.ndarray
    state: np.ndarray

    @property
    def data_total(self):
        return float(np.sum(self.data))

    @property
    def state_total(self):
        return float(np.sum(self.state))


def _check_norms(ops):
    if np.any(~np.isfinite(ops.w_data)):
        v = int(np.flatnonzero(~np.isfinite(ops.w_data))[0])
        raise NormalizationError(f"differential data of view {v} has zero norm")


def cost_from_current(ops: Operators, x, current, g_current=None) -> CostTerms:
    """Normalized data and state mismatch for an explicit current."""
    _check_norms(ops)
    rd = ops.g_ext @ current - ops.data
    rs = state_residual(ops, x, current, g_current)
    pd = ops.w_data * np.sum(np.abs(rd) ** 2, axis=0)
    ps = ops.w_state * np.sum(np.abs(rs) ** 2, axis=0)
    return CostTerms(float(np.sum(pd) + np.sum(ps)), pd, ps)


def current_from_coefficients(ops: Operators, c) -> np.ndarray:
    """J = mask * (J_DP + sum_n c_n W_n) with the tail basis of ``ops.basis``."""
    j = ops.j_dp + ops.basis.tail @ c
    return j * ops.current_mask[:, None]


def cost(ops: Operators, x, c) -> CostTerms:
    return cost_from_current(ops, x, current_from_coefficients(ops, c))


def cost_gradient(ops: Operators, x, c, current=None, g_current=None):
    """(dPsi/dconj(c), dPsi/dconj(x)); the x-gradient is zero off the contrast support."""
    _check_norms(ops)
    j = current_from_coefficients(ops, c) if current is None else current
    gj = ops.g_int @ j if g_current is None else g_current
    rd = ops.g_ext @ j - ops.data
    e, f = state_split(ops, j, gj)
    rs = e - x[:, None] * f
    back = ops.w_data * (ops.g_ext.conj().T @ rd) + ops.w_state * state_adjoint(ops, x, rs)
    grad_c = ops.basis.tail.conj().T @ (back * ops.current_mask[:, None])
    grad_x = -np.sum(ops.w_state * np.conj(f) * rs, axis=1) * ops.chi_mask
    return grad_c, grad_x


def optimal_contrast(ops: Operators, current, g_current=None) -> np.ndarray:
    """Per-cell least-squares contrast minimizing the state mismatch for fixed J."""
    e, f = state_split(ops, current, g_current)
    num = np.sum(ops.w_state * np.conj(f) * e, axis=1)
    den = np.sum(ops.w_state * np.abs(f) ** 2, axis=1)
    x = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return x * ops.chi_mask
