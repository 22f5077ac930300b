"""Reconstruction error maps, region averages and method gaps."""

from __future__ import annotations

import csv
from enum import Enum

import numpy as np

from .errors import NumericalPoleError, ValidationError
from .geometry import CellSet

POLE_TOL = 1e-12


class Region(str, Enum):
    TOTAL = "TOTAL"
    INTERNAL = "INTERNAL"
    EXTERNAL = "EXTERNAL"


def local_error(tau_true, tau_opt) -> np.ndarray:
    """E = (tau - tau_opt) / (tau + 1), cell by cell."""
    tau_true = np.asarray(tau_true, dtype=complex)
    tau_opt = np.asarray(tau_opt, dtype=complex)
    if tau_true.shape != tau_opt.shape:
        raise ValidationError(f"shape mismatch {tau_true.shape} vs {tau_opt.shape}")
    if np.any(np.abs(tau_true + 1) < POLE_TOL):
        raise NumericalPoleError("true contrast equals -1; relative error undefined")
    return (tau_true - tau_opt) / (tau_true + 1)


def global_error(error_map, region=Region.TOTAL, support=None) -> float:
    """Mean |E| over all cells, the object support, or its complement.

    ``support`` is a boolean mask or index array of the object cells and is
    required for INTERNAL/EXTERNAL.
    """
    e = np.abs(np.asarray(error_map))
    region = Region(region)
    if region is Region.TOTAL:
        sel = np.ones(e.shape, bool)
    else:
        if support is None:
            raise ValidationError(f"{region.value} error needs the object support")
        mask = np.zeros(e.shape, bool)
        mask[np.asarray(support)] = True
        sel = mask if region is Region.INTERNAL else ~mask
    if not sel.any():
        raise ValidationError(f"{region.value} region is empty")
    return float(e[sel].mean())


def error_gap(xi_baseline, xi_method) -> float:
    """Relative improvement of ``xi_method`` over ``xi_baseline``."""
    if xi_baseline == 0:
        raise ValidationError("baseline error is zero; gap undefined")
    return (xi_baseline - xi_method) / xi_baseline


def resample(values, source: CellSet, target: CellSet) -> np.ndarray:
    """Nearest-center resampling of a per-cell map onto ``target``."""
    values = np.asarray(values)
    if len(values) != len(source):
        raise ValidationError("map length does not match its cell set")
    return values[source.nearest(target.centers)]


def error_indexes(tau_true, tau_opt, support) -> dict:
    """Total, internal and external mean errors on a common grid."""
    e = local_error(tau_true, tau_opt)
    out = {"tot": global_error(e, Region.TOTAL)}
    support = np.asarray(support)
    has_in = support.any() if support.dtype == bool else support.size > 0
    has_out = (~support).any() if support.dtype == bool else support.size < e.size
    out["int"] = global_error(e, Region.INTERNAL, support) if has_in else float("nan")
    out["ext"] = global_error(e, Region.EXTERNAL, support) if has_out else float("nan")
    return out


def write_map_csv(cells: CellSet, values, path):
    """index,x,y,re,im per cell."""
    values = np.asarray(values, dtype=complex)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "x", "y", "re", "im"])
        for i, ((x, y), v) in enumerate(zip(cells.centers, values)):
            w.writerow([i, repr(float(x)), repr(float(y)), repr(float(v.real) + 0.0),
                        repr(float(v.imag) + 0.0)])


def read_map_csv(path):
    """Inverse of :func:`write_map_csv`: returns (centers, values)."""
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return arr[:, 1:3], arr[:, 3] + 1j * arr[:, 4]


def write_pgm(image, path, vmin=None, vmax=None):
    """8-bit binary PGM with linear scaling; returns the (vmin, vmax) used.

    ``image`` is a 2D real array with row 0 at the top.
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValidationError("PGM export needs a 2D array")
    vmin = float(np.nanmin(img)) if vmin is None else float(vmin)
    vmax = float(np.nanmax(img)) if vmax is None else float(vmax)
    span = vmax - vmin
    scaled = np.zeros_like(img) if span <= 0 else (img - vmin) / span
    pix = np.clip(np.round(np.nan_to_num(scaled) * 255), 0, 255).astype(np.uint8)
    h, w = pix.shape
    header = f"P5\n# min {vmin!r} max {vmax!r}\n{w} {h}\n255\n".encode()
    with open(path, "wb") as fh:
        fh.write(header + pix.tobytes())
    return vmin, vmax


def read_pgm(path):
    """Returns (pixels, vmin, vmax) from a file written by :func:`write_pgm`."""
    raw = open(path, "rb").read()
    lines = raw.split(b"\n", 4)
    if lines[0] != b"P5":
        raise ValidationError(f"{path}: not a binary PGM")
    _, lo, _, hi = lines[1].decode().lstrip("# ").split()
    w, h = map(int, lines[2].split())
    pix = np.frombuffer(lines[4], dtype=np.uint8, count=w * h).reshape(h, w)
    return pix, float(lo), float(hi)


def grid_image(cells: CellSet, values, n_per_side) -> np.ndarray:
    """Arrange a map on a row-major uniform grid as an image (top row = max y)."""
    values = np.asarray(values)
    if len(values) != n_per_side ** 2:
        raise ValidationError("map is not on an n x n grid")
    return values.reshape(n_per_side, n_per_side)[::-1]
