"""Cell sets, probe/illumination geometry and region-of-interest bookkeeping."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import RoiCollapseError, ValidationError


class Tag(IntEnum):
    ROI_REFINED = 0
    HOST_BASE = 1
    BACKGROUND = 2


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ScatteringSetup:
    """Background wavelength, incidence directions and probe positions.

    Angles are in radians; ``probes`` is an (M, 2) array of probe coordinates.
    """

    wavelength: float
    angles: np.ndarray
    probes: np.ndarray

    def __post_init__(self):
        if not self.wavelength > 0:
            raise ValidationError("wavelength must be positive")
        angles = _frozen(np.atleast_1d(self.angles))
        probes = _frozen(np.atleast_2d(self.probes))
        if angles.ndim != 1 or len(angles) < 1:
            raise ValidationError("at least one incidence angle is required")
        if probes.ndim != 2 or probes.shape[1] != 2 or len(probes) < 1:
            raise ValidationError("probes must be an (M, 2) array with M >= 1")
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "probes", probes)

    @property
    def k(self) -> float:
        return 2 * math.pi / self.wavelength

    @property
    def n_views(self) -> int:
        return len(self.angles)

    @property
    def n_probes(self) -> int:
        return len(self.probes)

    @classmethod
    def circular(cls, wavelength, n_views, n_probes, radius, center=(0.0, 0.0)):
        """Uniformly spaced views and probes on a circle of the given radius."""
        if n_views < 1 or n_probes < 1:
            raise ValidationError("n_views and n_probes must be >= 1")
        if not radius > 0:
            raise ValidationError("probe radius must be positive")
        angles = 2 * np.pi * np.arange(n_views) / n_views
        theta = 2 * np.pi * np.arange(n_probes) / n_probes
        probes = np.column_stack(
            [center[0] + radius * np.cos(theta), center[1] + radius * np.sin(theta)]
        )
        return cls(wavelength, angles, probes)

    def to_dict(self):
        return {
            "wavelength": self.wavelength,
            "angles": self.angles.tolist(),
            "probes": self.probes.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["wavelength"]), np.asarray(d["angles"]), np.asarray(d["probes"]))


@dataclass(frozen=True, eq=False)
class CellSet:
    """Axis-aligned square cells covering (part of) a square domain."""

    centers: np.ndarray
    sides: np.ndarray
    tags: np.ndarray
    domain_side: float
    domain_center: tuple = (0.0, 0.0)

    def __post_init__(self):
        centers = _frozen(np.asarray(self.centers, dtype=float).reshape(-1, 2))
        sides = _frozen(np.broadcast_to(np.asarray(self.sides, dtype=float), (len(centers),)))
        tags = _frozen(np.broadcast_to(np.asarray(self.tags, dtype=np.int8), (len(centers),)),
                       dtype=np.int8)
        if np.any(sides <= 0):
            raise ValidationError("every cell side must be positive")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "sides", sides)
        object.__setattr__(self, "tags", tags)
        object.__setattr__(self, "domain_center", tuple(float(c) for c in self.domain_center))

    def __len__(self):
        return len(self.centers)

    @property
    def x(self):
        return self.centers[:, 0]

    @property
    def y(self):
        return self.centers[:, 1]

    @property
    def areas(self):
        return self.sides**2

    def subset(self, index) -> "CellSet":
        index = np.asarray(index)
        return CellSet(self.centers[index], self.sides[index], self.tags[index],
                       self.domain_side, self.domain_center)

    def indices(self, tag: Tag):
        return np.flatnonzero(self.tags == tag)

    def is_uniform(self) -> bool:
        return len(self) > 0 and bool(np.all(self.sides == self.sides[0]))

    def fingerprint(self) -> bytes:
        """Byte string identifying the geometry, used as a cache key."""
        return (self.centers.tobytes() + self.sides.tobytes()
                + np.float64(self.domain_side).tobytes())

    def locate(self, points, tol=1e-9):
        """Index of the cell containing each point, -1 where none does."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.full(len(points), -1, dtype=np.intp)
        if len(self) == 0:
            return out
        # cells of equal size are processed together to keep memory bounded
        for side in np.unique(self.sides):
            idx = np.flatnonzero(self.sides == side)
            half = side / 2 * (1 + tol)
            for start in range(0, len(points), 2048):
                p = points[start:start + 2048]
                inside = ((np.abs(p[:, None, 0] - self.centers[None, idx, 0]) <= half)
                          & (np.abs(p[:, None, 1] - self.centers[None, idx, 1]) <= half))
                hit = inside.any(axis=1)
                first = idx[inside.argmax(axis=1)]
                block = out[start:start + 2048]
                block[hit & (block < 0)] = first[hit & (block < 0)]
        return out

    def nearest(self, points):
        """Index of the cell whose center is nearest to each point."""
        from scipy.spatial import cKDTree

        return cKDTree(self.centers).query(np.atleast_2d(points))[1]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "x", "y", "side", "tag"])
            for i, ((x, y), s, t) in enumerate(zip(self.centers, self.sides, self.tags)):
                w.writerow([i, repr(float(x)), repr(float(y)), repr(float(s)), Tag(t).name])

    @classmethod
    def from_csv(cls, path, domain_side, domain_center=(0.0, 0.0)):
        rows = list(csv.DictReader(open(path, newline="")))
        centers = [(float(r["x"]), float(r["y"])) for r in rows]
        sides = [float(r["side"]) for r in rows]
        tags = [Tag[r["tag"]] for r in rows]
        return cls(np.array(centers).reshape(-1, 2), sides, tags, domain_side, domain_center)


def build_uniform_grid(domain_side, n_per_side, center=(0.0, 0.0), tag=Tag.BACKGROUND) -> CellSet:
    """Tile a square domain with ``n_per_side**2`` equal cells.

    Cells are ordered row-major: index ``iy * n + ix`` with x varying fastest.
    """
    if not domain_side > 0:
        raise ValidationError(f"domain_side must be positive, got {domain_side}")
    if int(n_per_side) != n_per_side or n_per_side < 1:
        raise ValidationError(f"n_per_side must be a positive integer, got {n_per_side}")
    n = int(n_per_side)
    h = domain_side / n
    offsets = -domain_side / 2 + h * (np.arange(n) + 0.5)
    xx, yy = np.meshgrid(center[0] + offsets, center[1] + offsets)
    centers = np.column_stack([xx.ravel(), yy.ravel()])
    return CellSet(centers, h, tag, domain_side, center)


def cells_in_square(cells: CellSet, center, side) -> np.ndarray:
    """Indices of cells whose centers lie inside the closed square."""
    if side < 0:
        raise ValidationError("side must be non-negative")
    half = side / 2
    # a small relative slack keeps boundary centers inside despite rounding
    eps = 1e-12 * max(cells.domain_side, 1.0)
    inside = ((np.abs(cells.x - center[0]) <= half + eps)
              & (np.abs(cells.y - center[1]) <= half + eps))
    return np.flatnonzero(inside)


def clip_square(center, side, domain_side, domain_center=(0.0, 0.0)):
    """Translate (then shrink if needed) a square so it lies in the domain."""
    side = min(float(side), float(domain_side))
    lo = np.asarray(domain_center, dtype=float) - domain_side / 2 + side / 2
    hi = np.asarray(domain_center, dtype=float) + domain_side / 2 - side / 2
    c = np.clip(np.asarray(center, dtype=float), lo, hi)
    return (float(c[0]), float(c[1])), side


@dataclass(frozen=True, eq=False)
class RoiState:
    """Square region of interest plus the index sets it induces on a cell set.

    ``s_dchi`` is the support allowed for the differential contrast,
    ``s_chih`` the support of the known host, ``s_dj = s_dchi | s_chih``.
    """

    center: tuple
    side: float
    s_dchi: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    s_chih: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    s_dj: np.ndarray = field(init=False)

    def __post_init__(self):
        if not self.side > 0:
            raise ValidationError("RoI side must be positive")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        s_dchi = _frozen(np.unique(np.asarray(self.s_dchi, dtype=np.intp)), dtype=np.intp)
        s_chih = _frozen(np.unique(np.asarray(self.s_chih, dtype=np.intp)), dtype=np.intp)
        object.__setattr__(self, "s_dchi", s_dchi)
        object.__setattr__(self, "s_chih", s_chih)
        object.__setattr__(self, "s_dj", _frozen(np.union1d(s_dchi, s_chih), dtype=np.intp))

    @classmethod
    def clipped(cls, center, side, domain_side, domain_center=(0.0, 0.0)):
        center, side = clip_square(center, side, domain_side, domain_center)
        return cls(center, side)

    def with_supports(self, s_dchi, s_chih) -> "RoiState":
        return RoiState(self.center, self.side, s_dchi, s_chih)

    def bounds(self):
        h = self.side / 2
        return (self.center[0] - h, self.center[0] + h, self.center[1] - h, self.center[1] + h)


def snap_roi(base: CellSet, roi: RoiState):
    """Base-grid aligned square covering ``roi``: (ix0, iy0, count, n_base).

    The count of base cells per side is the smallest one whose span is at
    least the RoI side; the block is centered on the RoI and kept inside the
    domain, so each edge moves by less than one base cell.
    """
    h = float(base.sides[0])
    n = int(round(base.domain_side / h))
    count = min(n, max(1, math.ceil(roi.side / h - 1e-9)))
    x0 = base.domain_center[0] - base.domain_side / 2
    y0 = base.domain_center[1] - base.domain_side / 2
    ix = int(round((roi.center[0] - count * h / 2 - x0) / h))
    iy = int(round((roi.center[1] - count * h / 2 - y0) / h))
    ix = min(max(ix, 0), n - count)
    iy = min(max(iy, 0), n - count)
    return ix, iy, count, n


def build_ms_cellset(base_grid: CellSet, roi: RoiState, host_support, n_roi_per_side) -> CellSet:
    """Mixed-resolution cells for one zooming step.

    The RoI (snapped to the nearest base-grid lines) is tiled with
    ``n_roi_per_side**2`` ROI_REFINED cells; base cells listed in
    ``host_support`` that fall outside it are kept as HOST_BASE cells and every
    other base cell is dropped.  Refined cells come first in the ordering.
    """
    if int(n_roi_per_side) != n_roi_per_side or n_roi_per_side < 1:
        raise ValidationError("n_roi_per_side must be a positive integer")
    if not base_grid.is_uniform():
        raise ValidationError("base grid must be uniform")
    h = float(base_grid.sides[0])
    if roi.side < h:
        raise RoiCollapseError(
            f"RoI side {roi.side:.4g} below one base-cell width {h:.4g}; stop zooming")
    ix, iy, count, n = snap_roi(base_grid, roi)
    x0 = base_grid.domain_center[0] - base_grid.domain_side / 2
    y0 = base_grid.domain_center[1] - base_grid.domain_side / 2
    side = count * h
    center = (x0 + (ix + count / 2) * h, y0 + (iy + count / 2) * h)
    fine = build_uniform_grid(side, n_roi_per_side, center, tag=Tag.ROI_REFINED)

    host_support = np.asarray(host_support, dtype=np.intp)
    bix = np.rint((base_grid.x[host_support] - x0) / h - 0.5).astype(int)
    biy = np.rint((base_grid.y[host_support] - y0) / h - 0.5).astype(int)
    outside = (bix < ix) | (bix >= ix + count) | (biy < iy) | (biy >= iy + count)
    keep = np.sort(host_support[outside])

    centers = np.vstack([fine.centers, base_grid.centers[keep]])
    sides = np.concatenate([fine.sides, np.full(len(keep), h)])
    tags = np.concatenate([fine.tags, np.full(len(keep), Tag.HOST_BASE, dtype=np.int8)])
    return CellSet(centers, sides, tags, base_grid.domain_side, base_grid.domain_center)


def refined_square(cells: CellSet):
    """(center, side) of the square covered by the ROI_REFINED cells."""
    idx = cells.indices(Tag.ROI_REFINED)
    if len(idx) == 0:
        raise ValidationError("cell set has no refined cells")
    c, s = cells.centers[idx], cells.sides[idx]
    xmin, xmax = np.min(c[:, 0] - s / 2), np.max(c[:, 0] + s / 2)
    ymin, ymax = np.min(c[:, 1] - s / 2), np.max(c[:, 1] + s / 2)
    return ((xmin + xmax) / 2, (ymin + ymax) / 2), max(xmax - xmin, ymax - ymin)


def squares_overlap(cells: CellSet, tol=1e-12) -> bool:
    """True when any two cells share interior area (exhaustive pairwise check)."""
    c, h = cells.centers, cells.sides / 2
    for i in range(len(cells)):
        dx = np.abs(c[i + 1:, 0] - c[i, 0]) < (h[i + 1:] + h[i]) - tol
        dy = np.abs(c[i + 1:, 1] - c[i, 1]) < (h[i + 1:] + h[i]) - tol
        if np.any(dx & dy):
            return True
    return False

