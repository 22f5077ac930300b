"""Dataset bundles, the measured-data text schema and run configuration files.

Dataset bundle (a directory)::

    setup.json            wavelength, angles, probes, scenario, metadata
    data_sca_delta.csv    m,v,re,im   differential scattered field at the probes
    data_sca_host.csv     m,v,re,im   host-only scattered field at the probes
    xi_h.csv, j_h.csv     n,v,re,im   host field / current on the base cells
    cells.csv             index,x,y,side,tag

Measured-data text file: ``#`` starts a comment, header lines are
``key value`` pairs (``views``, ``probes``, ``radius``) and every other line
is a whitespace separated record::

    freq_hz view probe probe_angle_deg tot_re tot_im inc_re inc_im

with 1-based view/probe indices, one record per (view, probe) and frequency.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .forward import Dataset, host_solution, incident_field, plane_wave, solve_on_support
from .geometry import CellSet, ScatteringSetup, build_uniform_grid
from .greens import external_matrix, internal_matrix
from .scenario import Scenario

C0 = 299792458.0
SCHEMA_TAG = "msdcie-measured v1"


def _write_field(path, values, index_name):
    values = np.asarray(values, dtype=complex)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([index_name, "v", "re", "im"])
        for i in range(values.shape[0]):
            for v in range(values.shape[1]):
                z = values[i, v]
                # + 0.0 folds negative zeros so that files survive a read/write cycle
                w.writerow([i, v, repr(float(z.real) + 0.0), repr(float(z.imag) + 0.0)])


def _read_field(path, shape):
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if rows.shape[0] != shape[0] * shape[1]:
        raise ParseError(f"{path}: expected {shape[0] * shape[1]} records, got {rows.shape[0]}")
    out = np.zeros(shape, complex)
    out[rows[:, 0].astype(int), rows[:, 1].astype(int)] = rows[:, 2] + 1j * rows[:, 3]
    return out


def write_dataset(ds: Dataset, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {"setup": ds.setup.to_dict(), "scenario": ds.scenario.to_dict(), "meta": ds.meta,
            "domain_side": ds.cells.domain_side, "domain_center": list(ds.cells.domain_center)}
    (d / "setup.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    _write_field(d / "data_sca_delta.csv", ds.data, "m")
    _write_field(d / "data_sca_host.csv", ds.sca_h, "m")
    _write_field(d / "xi_h.csv", ds.xi_h, "n")
    _write_field(d / "j_h.csv", ds.j_h, "n")
    ds.cells.to_csv(d / "cells.csv")
    return d


def read_dataset(directory) -> Dataset:
    d = Path(directory)
    if not (d / "setup.json").exists():
        raise ValidationError(f"{d} is not a dataset bundle (setup.json missing)")
    meta = json.loads((d / "setup.json").read_text())
    setup = ScatteringSetup.from_dict(meta["setup"])
    scenario = Scenario.from_dict(meta["scenario"])
    cells = CellSet.from_csv(d / "cells.csv", meta["domain_side"], tuple(meta["domain_center"]))
    m, v, n = setup.n_probes, setup.n_views, len(cells)
    return Dataset(setup, scenario, _read_field(d / "data_sca_delta.csv", (m, v)),
                   _read_field(d / "data_sca_host.csv", (m, v)), cells,
                   _read_field(d / "xi_h.csv", (n, v)), _read_field(d / "j_h.csv", (n, v)),
                   meta["meta"])


# --- measured data -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MeasuredRecords:
    """All records of one frequency, arranged as (M, V) arrays."""

    frequency: float
    radius: float
    probe_angles: np.ndarray
    total: np.ndarray
    incident: np.ndarray

    @property
    def n_probes(self):
        return self.total.shape[0]

    @property
    def n_views(self):
        return self.total.shape[1]


def write_measured(path, blocks, radius):
    """Write one or more :class:`MeasuredRecords` to the text schema."""
    blocks = list(blocks)
    m, v = blocks[0].n_probes, blocks[0].n_views
    lines = [f"# {SCHEMA_TAG}", f"views {v}", f"probes {m}", f"radius {radius!r}"]
    for b in blocks:
        if (b.n_probes, b.n_views) != (m, v):
            raise ValidationError("all frequency blocks must share the acquisition geometry")
        for iv in range(v):
            for im in range(m):
                t, i = b.total[im, iv], b.incident[im, iv]
                lines.append(" ".join([repr(float(b.frequency)), str(iv + 1), str(im + 1),
                                       repr(float(b.probe_angles[im])), repr(float(t.real)),
                                       repr(float(t.imag)), repr(float(i.real)),
                                       repr(float(i.imag))]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_measured(path, frequency, rel_tol=1e-9) -> MeasuredRecords:
    """Parse the block of ``frequency`` (Hz) from a measured-data file."""
    header, recs, freqs = {}, {}, set()
    for ln, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] in ("views", "probes", "radius"):
            if len(parts) != 2:
                raise ParseError(f"header '{parts[0]}' needs exactly one value", ln)
            try:
                header[parts[0]] = float(parts[1]) if parts[0] == "radius" else int(parts[1])
            except ValueError:
                raise ParseError(f"bad value for '{parts[0]}': {parts[1]!r}", ln) from None
            continue
        if len(parts) != 8:
            raise ParseError(f"expected 8 fields per record, got {len(parts)}", ln)
        try:
            f = float(parts[0])
            view, probe = int(parts[1]), int(parts[2])
            nums = [float(p) for p in parts[3:]]
        except ValueError as exc:
            raise ParseError(f"malformed number ({exc})", ln) from None
        if "views" not in header or "probes" not in header or "radius" not in header:
            raise ParseError("records before the views/probes/radius header", ln)
        if not (1 <= view <= header["views"] and 1 <= probe <= header["probes"]):
            raise ParseError(f"view {view} / probe {probe} out of range", ln)
        freqs.add(f)
        if abs(f - frequency) <= rel_tol * abs(frequency):
            if (view, probe) in recs:
                raise ParseError(f"duplicate record for view {view}, probe {probe}", ln)
            recs[(view, probe)] = nums
    if not recs:
        avail = ", ".join(f"{f:g}" for f in sorted(freqs)) or "none"
        raise ValidationError(f"frequency {frequency:g} Hz not in {path} (available: {avail})")
    m, v = header["probes"], header["views"]
    if len(recs) != m * v:
        raise ParseError(f"{len(recs)} records for {frequency:g} Hz, expected M x V = {m * v}")
    angles = np.zeros(m)
    tot = np.zeros((m, v), complex)
    inc = np.zeros((m, v), complex)
    for (iv, im), (ang, tr, ti, ir, ii) in recs.items():
        angles[im - 1] = ang
        tot[im - 1, iv - 1] = complex(tr, ti)
        inc[im - 1, iv - 1] = complex(ir, ii)
    return MeasuredRecords(frequency, header["radius"], angles, tot, inc)


def calibrate(records: MeasuredRecords, setup: ScatteringSetup) -> np.ndarray:
    """Calibrated scattered field (M, V).

    Each view is scaled by the complex factor that maps the measured
    incident field onto the plane-wave model at the probe opposite the source.
    """
    sim = incident_field(setup, setup.probes)
    sca = records.total - records.incident
    out = np.empty_like(sca)
    probe_phi = np.arctan2(setup.probes[:, 1], setup.probes[:, 0])
    for v, phi in enumerate(setup.angles):
        # a plane wave travelling along phi comes from phi + pi
        opposite = np.angle(np.exp(1j * (probe_phi - phi)))
        m = int(np.argmin(np.abs(opposite)))
        if records.incident[m, v] == 0:
            raise ValidationError(f"zero incident field at the reference probe of view {v}")
        out[:, v] = sca[:, v] * (sim[m, v] / records.incident[m, v])
    return out


def measured_setup(records: MeasuredRecords, source_angles=None) -> ScatteringSetup:
    """Plane-wave setup: view v propagates along 2 pi v / V unless angles are given (rad)."""
    phi = np.deg2rad(records.probe_angles)
    probes = records.radius * np.column_stack([np.cos(phi), np.sin(phi)])
    if source_angles is None:
        source_angles = 2 * np.pi * np.arange(records.n_views) / records.n_views
    return ScatteringSetup(C0 / records.frequency, np.asarray(source_angles, float), probes)


def load_measured_dataset(path, frequency, scenario: Scenario, fine_n=80, inversion_n=30,
                          source_angles=None) -> Dataset:
    """Differential dataset from measured total/incident fields.

    ``scenario`` supplies the domain (in metres) and the declared host; its
    object, if any, is kept as ground truth for error evaluation only.
    """
    if frequency is None:
        raise ValidationError("a frequency is required to select the measured block")
    rec = read_measured(path, float(frequency))
    setup = measured_setup(rec, source_angles)
    sca = calibrate(rec, setup)
    fine = build_uniform_grid(scenario.domain_side, fine_n, scenario.domain_center)
    sca_h, _, _ = solve_on_support(fine, scenario.tau_h(fine), setup)
    cells = build_uniform_grid(scenario.domain_side, inversion_n, scenario.domain_center)
    hs = host_solution(internal_matrix(cells, setup.k), external_matrix(cells, setup.probes, setup.k),
                       scenario.tau_h(cells), plane_wave(setup, cells))
    meta = {"fine_n": int(fine_n), "inversion_n": int(inversion_n), "source": str(path),
            "frequency": float(frequency)}
    return Dataset(setup, scenario, sca - sca_h, sca_h, cells, hs.xi_h, hs.j_h, meta)


def export_measured(ds: Dataset, path, frequency=None):
    """Write a synthetic dataset in the measured-data schema (plane-wave incident field)."""
    setup = ds.setup
    radius = float(np.hypot(*setup.probes[0]))
    angles = np.rad2deg(np.arctan2(setup.probes[:, 1], setup.probes[:, 0]))
    inc = incident_field(setup, setup.probes)
    f = frequency if frequency is not None else C0 / setup.wavelength
    write_measured(path, [MeasuredRecords(f, radius, angles, ds.measured + inc, inc)], radius)


def convert_fresnel(src, dst, frequencies, radius=1.67, n_views=8, n_probes=241):
    """Thin converter from a whitespace table of Fresnel-style columns.

    Expected columns per line: freq_GHz, source_index, probe_angle_deg,
    Re(E_tot), Im(E_tot), Re(E_inc), Im(E_inc), one line per (source,
    probe), sources and probes numbered from 1 in acquisition order.  The
    raw distribution formats vary between releases; anything else needs a
    custom pre-processing step.  The data are conjugated to the exp(+j w t)
    convention used here.
    """
    table = np.loadtxt(src, ndmin=2)
    if table.shape[1] != 7:
        raise ParseError(f"{src}: expected 7 columns, got {table.shape[1]}")
    blocks = []
    for f_ghz in frequencies:
        rows = table[np.isclose(table[:, 0], f_ghz)]
        if len(rows) != n_views * n_probes:
            raise ParseError(f"{src}: {len(rows)} rows at {f_ghz} GHz, expected {n_views * n_probes}")
        tot = (rows[:, 3] - 1j * rows[:, 4]).reshape(n_views, n_probes).T
        inc = (rows[:, 5] - 1j * rows[:, 6]).reshape(n_views, n_probes).T
        blocks.append(MeasuredRecords(f_ghz * 1e9, radius, rows[:n_probes, 2], tot, inc))
    write_measured(dst, blocks, radius)


# --- run configuration ---------------------------------------------------

METHOD_NAMES = ("MS-DCIE", "DCIE", "MS-DLSIE", "DLSIE")


@dataclass(frozen=True)
class RunConfig:
    """One inversion run.  Exactly one of ``scenario``/``dataset``/``measured`` is set.

    ``scenario`` is a path to a scenario file or an inline mapping,
    ``dataset`` a bundle directory and ``measured`` a measured-data file
    (which also needs ``scenario`` for the host and ``frequency``).
    """

    mode: str = "MS-DCIE"
    alpha: float = 0.4
    gamma: float = 1.4
    eta_min: float = 0.2
    steps: int = 6
    iterations: int = 200
    filter_fraction: float = 0.25
    n: int = 30
    n_fw: int = 80
    n_single: int = 46
    beta_single: float = 2.0
    snr_db: float = 20.0
    seed: int = 0
    delta: float = 0.0
    scenario: object = None
    dataset: str | None = None
    measured: str | None = None
    frequency: float | None = None
    output: str = "out"

    def __post_init__(self):
        if self.mode not in METHOD_NAMES:
            raise ValidationError(f"mode must be one of {METHOD_NAMES}, got {self.mode!r}")
        if not 0 < self.alpha <= 1:
            raise ValidationError("alpha must lie in (0, 1]")
        if not self.gamma > 0:
            raise ValidationError("gamma must be positive")
        for name in ("steps", "iterations", "n", "n_fw", "n_single"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 1:
                raise ValidationError(f"{name} must be a positive integer")
        if not 0 <= self.filter_fraction < 1 or self.eta_min < 0:
            raise ValidationError("filter_fraction in [0, 1) and eta_min >= 0 required")
        if self.delta < -1:
            raise ValidationError("delta must be >= -1")
        sources = [self.dataset is not None, self.measured is not None]
        if self.scenario is None and not any(sources):
            raise ValidationError("one of scenario, dataset or measured is required")
        if all(sources):
            raise ValidationError("dataset and measured are mutually exclusive")
        if self.measured is not None and (self.scenario is None or self.frequency is None):
            raise ValidationError("measured data need a scenario (host) and a frequency")

    @classmethod
    def from_dict(cls, d, base_dir=None):
        if not isinstance(d, dict):
            raise ValidationError("configuration must be a mapping")
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown configuration keys: {sorted(extra)}")
        d = dict(d)
        for key in ("scenario", "dataset", "measured"):
            if isinstance(d.get(key), str) and base_dir is not None:
                d[key] = str((Path(base_dir) / d[key]).resolve())
        for key, typ in (("alpha", float), ("gamma", float), ("eta_min", float),
                         ("filter_fraction", float), ("snr_db", float), ("delta", float),
                         ("beta_single", float)):
            if key in d and not isinstance(d[key], (int, float)):
                raise ValidationError(f"{key} must be a number")
        return cls(**d)

    @classmethod
    def load(cls, path):
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from None
        except OSError as exc:
            raise ValidationError(f"cannot read {path}: {exc.strerror}") from None
        return cls.from_dict(d, base_dir=Path(path).parent)

    def to_dict(self):
        return asdict(self)

    def load_scenario(self) -> Scenario:
        if isinstance(self.scenario, dict):
            return Scenario.from_dict(self.scenario)
        return Scenario.load(self.scenario)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


DEFAULTS_TABLE = [(f.name, f.default) for f in fields(RunConfig)]


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(directory, config: dict, seed, outputs, extra=None):
    """manifest.json with config hash, seed, library versions and output digests."""
    import platform

    import scipy

    from . import __version__

    d = Path(directory)
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    manifest = {
        "config": config,
        "config_sha256": hashlib.sha256(blob).hexdigest(),
        "seed": seed,
        "versions": {"msdcie": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "outputs": {str(Path(p).relative_to(d)): file_sha256(p) for p in sorted(outputs)},
    }
    if extra:
        manifest.update(extra)
    path = d / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def parse_range(text) -> list:
    """'a:b:step' (inclusive, tolerant to rounding) or 'a,b,c'."""
    try:
        if ":" in text:
            a, b, step = (float(t) for t in text.split(":"))
            if step <= 0 or b < a:
                raise ValidationError(f"bad range {text!r}")
            count = int(math.floor((b - a) / step + 1e-9)) + 1
            return [round(a + i * step, 12) for i in range(count)]
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ValidationError(f"cannot parse values {text!r}") from None
