"""Benchmark contrast profiles, host perturbation and scenario files.

Contrast maps are complex arrays aligned with a :class:`CellSet`; membership
of a cell in a shape is decided by its center.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .geometry import CellSet, ScatteringSetup

EPS0 = 8.8541878128e-12


def _slack(cells: CellSet):
    return 1e-12 * max(cells.domain_side, 1.0)


def square_ring_host(grid: CellSet, thickness, tau_ring) -> np.ndarray:
    """Centered square annulus whose outer edge is the domain boundary."""
    half = grid.domain_side / 2
    if not 0 < thickness <= half:
        raise ValidationError(f"ring thickness must lie in (0, L/2], got {thickness}")
    cx, cy = grid.domain_center
    cheb = np.maximum(np.abs(grid.x - cx), np.abs(grid.y - cy))
    inner = half - thickness
    member = (cheb >= inner - _slack(grid)) & (cheb <= half + _slack(grid))
    return np.where(member, complex(tau_ring), 0j)


def square_object(grid: CellSet, side, center, tau_delta) -> np.ndarray:
    if side < 0:
        raise ValidationError("object side must be non-negative")
    if side == 0:
        return np.zeros(len(grid), complex)
    half = side / 2 + _slack(grid)
    member = (np.abs(grid.x - center[0]) <= half) & (np.abs(grid.y - center[1]) <= half)
    return np.where(member, complex(tau_delta), 0j)


def circular_ring_object(grid: CellSet, r_inner, r_outer, center, tau_delta) -> np.ndarray:
    if not 0 <= r_inner < r_outer:
        raise ValidationError(f"need 0 <= r_inner < r_outer, got {r_inner}, {r_outer}")
    r = np.hypot(grid.x - center[0], grid.y - center[1])
    lo = r_inner - _slack(grid) if r_inner > 0 else -np.inf
    member = (r >= lo) & (r <= r_outer + _slack(grid))
    return np.where(member, complex(tau_delta), 0j)


def perturb_host(tau_h, delta) -> np.ndarray:
    """Host contrast known up to a relative error: tau_h * (1 + delta)."""
    if delta < -1:
        raise ValidationError("delta must be >= -1")
    return np.asarray(tau_h) * (1 + delta)


def lossy_contrast(tau_real, sigma, frequency, eps_background=EPS0) -> complex:
    """Complex contrast with conductivity: Im(tau) = -sigma / (omega eps_B)."""
    return complex(tau_real, -sigma / (2 * math.pi * frequency * eps_background))


@dataclass(frozen=True)
class SquareRing:
    thickness: float
    tau: complex

    def contrast(self, cells):
        return square_ring_host(cells, self.thickness, self.tau)


@dataclass(frozen=True)
class SquareObject:
    side: float
    center: tuple
    tau: complex

    def contrast(self, cells):
        return square_object(cells, self.side, self.center, self.tau)


@dataclass(frozen=True)
class CircularRing:
    r_inner: float
    r_outer: float
    center: tuple
    tau: complex

    def contrast(self, cells):
        return circular_ring_object(cells, self.r_inner, self.r_outer, self.center, self.tau)


@dataclass(frozen=True)
class Scaled:
    """A shape whose contrast is multiplied by (1 + delta)."""

    base: object
    delta: float

    def contrast(self, cells):
        return perturb_host(self.base.contrast(cells), self.delta)


SHAPES = {"square_ring": SquareRing, "square": SquareObject, "circular_ring": CircularRing}


def _shape_from_dict(d):
    if d is None:
        return None
    d = dict(d)
    kind = d.pop("type")
    if kind not in SHAPES:
        raise ValidationError(f"unknown shape type {kind!r}; expected one of {sorted(SHAPES)}")
    delta = d.pop("delta", 0.0)
    sigma = d.pop("sigma", None)
    frequency = d.pop("frequency", None)
    tau = d.pop("tau")
    tau = complex(tau[0], tau[1]) if isinstance(tau, (list, tuple)) else complex(tau)
    if sigma is not None:
        if frequency is None:
            raise ValidationError("'sigma' needs a 'frequency' entry")
        tau = lossy_contrast(tau.real, sigma, frequency)
    if "center" in d:
        d["center"] = tuple(float(c) for c in d["center"])
    try:
        shape = SHAPES[kind](tau=tau, **d)
    except TypeError as exc:
        raise ValidationError(f"bad parameters for {kind}: {exc}") from None
    return Scaled(shape, delta) if delta else shape


def _shape_to_dict(shape):
    if shape is None:
        return None
    delta = 0.0
    if isinstance(shape, Scaled):
        shape, delta = shape.base, shape.delta
    kind = {v: k for k, v in SHAPES.items()}[type(shape)]
    d = {"type": kind}
    for k, v in shape.__dict__.items():
        if k == "tau":
            v = [v.real, v.imag]
        elif isinstance(v, tuple):
            v = list(v)
        d[k] = v
    if delta:
        d["delta"] = delta
    return d


@dataclass(frozen=True)
class Scenario:
    """Known host plus (optionally) the object to be retrieved.

    The true contrast is ``tau_h + tau_delta``; lengths are in the same unit
    as the wavelength.
    """

    host: object = None
    obj: object = None
    domain_side: float = 3.0
    domain_center: tuple = (0.0, 0.0)
    wavelength: float = 1.0
    n_views: int = 27
    n_probes: int = 27
    probe_radius: float = 2.2
    frequency: float = 300e6
    name: str = ""

    def tau_h(self, cells) -> np.ndarray:
        return self.host.contrast(cells) if self.host is not None else np.zeros(len(cells), complex)

    def tau_delta(self, cells) -> np.ndarray:
        return self.obj.contrast(cells) if self.obj is not None else np.zeros(len(cells), complex)

    def tau(self, cells) -> np.ndarray:
        return self.tau_h(cells) + self.tau_delta(cells)

    def with_host(self, host) -> "Scenario":
        return replace(self, host=host)

    def with_object(self, obj) -> "Scenario":
        return replace(self, obj=obj)

    def perturbed(self, delta) -> "Scenario":
        """Same scenario with the host contrast scaled by (1 + delta)."""
        if delta < -1:
            raise ValidationError("delta must be >= -1")
        if self.host is None or delta == 0:
            return self
        return self.with_host(Scaled(self.host, delta))

    def setup(self) -> ScatteringSetup:
        return ScatteringSetup.circular(self.wavelength, self.n_views, self.n_probes,
                                        self.probe_radius, self.domain_center)

    def to_dict(self):
        return {
            "name": self.name,
            "domain_side": self.domain_side,
            "domain_center": list(self.domain_center),
            "wavelength": self.wavelength,
            "frequency": self.frequency,
            "n_views": self.n_views,
            "n_probes": self.n_probes,
            "probe_radius": self.probe_radius,
            "host": _shape_to_dict(self.host),
            "object": _shape_to_dict(self.obj),
        }

    @classmethod
    def from_dict(cls, d):
        known = {"name", "domain_side", "domain_center", "wavelength", "frequency", "n_views",
                 "n_probes", "probe_radius", "host", "object"}
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown scenario keys: {sorted(extra)}")
        kwargs = {k: d[k] for k in known - {"host", "object"} if k in d}
        if "domain_center" in kwargs:
            kwargs["domain_center"] = tuple(kwargs["domain_center"])
        if kwargs.get("domain_side", 1.0) <= 0 or kwargs.get("wavelength", 1.0) <= 0:
            raise ValidationError("domain_side and wavelength must be positive")
        return cls(host=_shape_from_dict(d.get("host")), obj=_shape_from_dict(d.get("object")),
                   **kwargs)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path):
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(d)


# Benchmark geometry in wavelengths.
RING_HOST = SquareRing(thickness=0.3, tau=0.5 + 0j)
CIRCULAR_RING_RADII = (0.3, 0.6)


def square_benchmark(tau_delta=2.0, delta_host=0.0) -> Scenario:
    """Off-centered 0.7-sided square inside the square-ring host."""
    s = Scenario(host=RING_HOST, obj=SquareObject(0.7, (0.3, 0.15), complex(tau_delta)),
                 name="square")
    return s.perturbed(delta_host) if delta_host else s


def circular_ring_benchmark(tau_delta=2.0, r_inner=CIRCULAR_RING_RADII[0],
                            r_outer=CIRCULAR_RING_RADII[1], center=(0.0, 0.0)) -> Scenario:
    return Scenario(host=RING_HOST, obj=CircularRing(r_inner, r_outer, center, complex(tau_delta)),
                    name="circular_ring")
