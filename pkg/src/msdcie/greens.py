"""Hankel-kernel cell integrals and the internal/external Green's matrices.

Time dependence is exp(+jwt), so outgoing cylindrical waves are H0^(2).  The
scattered field radiated by an equivalent current J on a cell of area A is

    xi_sca(r) = -(j k^2 / 4) * integral_A H0^(2)(k |r - r'|) J(r') dr'

and each square cell is replaced by the circle of equal area (Richmond).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import AssemblyError, DomainError, ValidationError
from .geometry import CellSet, ScatteringSetup


def hankel0_2(x):
    """Zeroth-order Hankel function of the second kind, J0(x) - j Y0(x)."""
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError("hankel0_2 requires x > 0 (Y0 is singular at the origin)")
    out = special.j0(x) - 1j * special.y0(x)
    return out[()] if out.ndim == 0 else out


def hankel1_2(x):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError("hankel1_2 requires x > 0")
    out = special.j1(x) - 1j * special.y1(x)
    return out[()] if out.ndim == 0 else out


def equivalent_radius(side):
    return np.asarray(side, dtype=float) / math.sqrt(math.pi)


def cell_integral(k, cell_side, distance):
    """Field at ``distance`` from the center of a unit-current square cell.

    Outside the equivalent circle (radius a = side / sqrt(pi))::

        -j (pi k a / 2) J1(k a) H0^(2)(k d)

    and inside it (d < a, including the self term d = 0)::

        -(j / 2) [pi k a H1^(2)(k a) J0(k d) - 2j]
    """
    side = np.asarray(cell_side, dtype=float)
    d = np.asarray(distance, dtype=float)
    if np.any(side <= 0):
        raise ValidationError("cell side must be positive")
    if np.any(d < 0):
        raise ValidationError("distance must be non-negative")
    side, d = np.broadcast_arrays(side, d)
    ka = k * equivalent_radius(side)
    kd = k * d
    out = np.empty(side.shape, dtype=complex)
    outside = d >= equivalent_radius(side)
    if np.any(outside):
        kao, kdo = ka[outside], kd[outside]
        out[outside] = -0.5j * np.pi * kao * special.j1(kao) * (
            special.j0(kdo) - 1j * special.y0(kdo))
    inside = ~outside
    if np.any(inside):
        kai, kdi = ka[inside], kd[inside]
        out[inside] = -0.5j * (np.pi * kai * hankel1_2(kai) * special.j0(kdi) - 2j)
    return out[()] if out.ndim == 0 else out


def _lattice(cells: CellSet):
    """Integer lattice coordinates when the cells form a regular grid."""
    if not cells.is_uniform():
        return None
    h = cells.sides[0]
    origin = cells.centers.min(axis=0)
    ij = (cells.centers - origin) / h
    rij = np.rint(ij)
    if np.max(np.abs(ij - rij), initial=0.0) > 1e-9:
        return None
    return rij.astype(np.int64), h


def internal_matrix(cells: CellSet, k, rows=None) -> np.ndarray:
    """N x N (or len(rows) x N) matrix coupling every source cell to cell centers.

    Entry (p, q) uses the side of the source cell q.
    """
    rows = np.arange(len(cells)) if rows is None else np.asarray(rows)
    lat = _lattice(cells)
    if lat is not None:
        # regular grid: the kernel depends on the squared integer offset only
        ij, h = lat
        di = ij[rows, 0][:, None] - ij[None, :, 0]
        dj = ij[rows, 1][:, None] - ij[None, :, 1]
        s2 = di * di + dj * dj
        table_keys = np.arange(int(s2.max()) + 1)
        table = cell_integral(k, h, h * np.sqrt(table_keys))
        return table[s2]
    c = cells.centers
    d = np.hypot(c[rows, 0][:, None] - c[None, :, 0], c[rows, 1][:, None] - c[None, :, 1])
    return cell_integral(k, cells.sides[None, :], d)


def external_matrix(cells: CellSet, points, k) -> np.ndarray:
    """M x N matrix from every cell to observation points outside the cells."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    inside = cells.locate(points, tol=0.0)
    if np.any(inside >= 0):
        m = int(np.flatnonzero(inside >= 0)[0])
        raise AssemblyError(f"probe {m} at {points[m].tolist()} lies inside cell {inside[m]}")
    c = cells.centers
    d = np.hypot(points[:, 0][:, None] - c[None, :, 0], points[:, 1][:, None] - c[None, :, 1])
    return cell_integral(k, cells.sides[None, :], d)


@dataclass(frozen=True, eq=False)
class GreensPair:
    g_int: np.ndarray
    g_ext: np.ndarray
    k: float


def assemble(cells: CellSet, setup: ScatteringSetup) -> GreensPair:
    return GreensPair(internal_matrix(cells, setup.k),
                      external_matrix(cells, setup.probes, setup.k), setup.k)


def dump_matrix_csv(matrix, path):
    """Debug dump: one ``row,col,re,im`` line per entry."""
    matrix = np.asarray(matrix)
    with open(path, "w") as fh:
        fh.write("row,col,re,im\n")
        for (r, c), v in np.ndenumerate(matrix):
            fh.write(f"{r},{c},{v.real!r},{v.imag!r}\n")
