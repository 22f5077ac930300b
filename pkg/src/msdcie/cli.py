"""Command-line entry point: ``msdcie {forward,invert,sweep,metrics,export-figures}``.

Exit status is 0 on success, 2 for usage/configuration errors and 1 for
any other failure; failures also print one JSON line ``{"error": category,
"message": ...}`` on stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import metrics
from .errors import MsdcieError, ValidationError
from .formulation import Mode
from .forward import NoiseSpec, synthesize_dataset
from .geometry import build_uniform_grid
from .io import (RunConfig, load_measured_dataset, parse_range, read_dataset, write_dataset,
                 write_manifest)
from .multiscale import MSConfig, run_ms, single_resolution_config
from .scenario import Scenario, lossy_contrast

log = logging.getLogger("msdcie")

WORKERS_ENV = "MSDCIE_WORKERS"
SWEEP_PARAMS = ("alpha", "gamma", "snr", "tau_delta", "sigma_delta", "delta")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _report(category, message):
    print(json.dumps({"error": category, "message": str(message)}), file=sys.stderr)


# --- building blocks shared by the subcommands ---------------------------

def build_dataset(cfg: RunConfig):
    """(dataset, truth scenario) for a run configuration."""
    if cfg.dataset is not None:
        ds = read_dataset(cfg.dataset)
        truth = ds.scenario
    elif cfg.measured is not None:
        truth = cfg.load_scenario()
        ds = load_measured_dataset(cfg.measured, cfg.frequency, truth, cfg.n_fw, cfg.n)
    else:
        truth = cfg.load_scenario()
        ds = synthesize_dataset(truth, truth.setup(), cfg.n_fw, NoiseSpec(cfg.snr_db, cfg.seed),
                                inversion_n=cfg.n)
    if cfg.delta:
        if truth.host is None:
            raise ValidationError("delta needs a scenario with a host")
        ds = ds.with_assumed_host(truth.perturbed(cfg.delta).host)
    return ds, truth


def ms_config(cfg: RunConfig) -> tuple:
    mode = Mode.DLSIE if "DLSIE" in cfg.mode else Mode.DCIE
    if cfg.mode.startswith("MS-"):
        return mode, MSConfig(cfg.steps, cfg.iterations, cfg.alpha, cfg.gamma, cfg.eta_min,
                              cfg.filter_fraction, cfg.n)
    return mode, single_resolution_config(mode, cfg.n_single, cfg.iterations, cfg.alpha,
                                          cfg.beta_single)


def run_config(cfg: RunConfig, out_dir=None) -> dict:
    """Run one inversion, write its outputs and return the error indexes."""
    ds, truth = build_dataset(cfg)
    mode, msc = ms_config(cfg)
    result = run_ms(mode, ds, msc, truth=truth, truth_n=cfg.n_fw)
    grid = build_uniform_grid(truth.domain_side, cfg.n_fw, truth.domain_center)
    tau_opt = result.tau_on(grid)
    summary = {"mode": cfg.mode, "steps": len(result.steps), "stop_reason": result.stop_reason,
               "error": None if result.error is None else result.error.category}
    if truth.obj is not None:
        support = truth.tau_delta(grid) != 0
        summary.update(metrics.error_indexes(truth.tau(grid), tau_opt, support))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "tau_opt.csv", out / "tau_cells.csv", out / "cells.csv",
                 out / "diagnostics.csv", out / "iterations.csv", out / "summary.json"]
        metrics.write_map_csv(grid, tau_opt, paths[0])
        metrics.write_map_csv(result.cells, result.tau_opt, paths[1])
        result.cells.to_csv(paths[2])
        result.write_diagnostics(paths[3])
        result.write_iterations(paths[4])
        paths[5].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        cfg_dict = cfg.to_dict()
        if not isinstance(cfg.scenario, dict) and cfg.scenario is not None:
            cfg_dict["scenario_content"] = truth.to_dict()
        write_manifest(out, cfg_dict, cfg.seed, paths)
    return summary


def _sweep_point(args):
    cfg, out_dir = args
    try:
        return run_config(cfg, out_dir)
    except MsdcieError as exc:
        return {"mode": cfg.mode, "error": exc.category, "message": str(exc)}


def with_object_tau(scenario: Scenario, tau) -> Scenario:
    if scenario.obj is None:
        raise ValidationError("scenario has no object to modify")
    return scenario.with_object(dataclasses.replace(scenario.obj, tau=complex(tau)))


def sweep_configs(base: RunConfig, param, values, snrs):
    """Cartesian product of ``values`` for ``param`` and the SNR list."""
    if param not in SWEEP_PARAMS:
        raise ValidationError(f"--param must be one of {SWEEP_PARAMS}")
    out = []
    for value in values:
        for snr in snrs:
            cfg = dataclasses.replace(base, snr_db=snr)
            if param == "snr":
                cfg = dataclasses.replace(cfg, snr_db=value)
            elif param in ("alpha", "gamma", "delta"):
                cfg = dataclasses.replace(cfg, **{param: value})
            else:
                sc = base.load_scenario()
                tau = sc.obj.tau
                if param == "tau_delta":
                    tau = complex(value, tau.imag)
                else:
                    tau = lossy_contrast(tau.real, value, sc.frequency)
                cfg = dataclasses.replace(cfg, scenario=with_object_tau(sc, tau).to_dict())
            out.append((value, cfg.snr_db, cfg))
    return out


def worker_count():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValidationError(f"{WORKERS_ENV} must be >= 1")
    return n


# --- subcommands ---------------------------------------------------------

def cmd_forward(args):
    sc = Scenario.load(args.scenario)
    ds = synthesize_dataset(sc, sc.setup(), args.fine_n, NoiseSpec(args.snr, args.seed),
                            inversion_n=args.n, allow_inverse_crime=args.allow_inverse_crime)
    out = write_dataset(ds, args.out)
    files = sorted(p for p in out.iterdir() if p.name != "manifest.json")
    cfg = {"scenario": sc.to_dict(), "snr_db": args.snr, "seed": args.seed,
           "fine_n": args.fine_n, "n": args.n}
    write_manifest(out, cfg, args.seed, files)
    print(out)


def cmd_invert(args):
    cfg = RunConfig.load(args.config)
    if args.out:
        cfg = dataclasses.replace(cfg, output=args.out)
    summary = run_config(cfg, cfg.output)
    print(json.dumps(summary, sort_keys=True))


def cmd_sweep(args):
    base = RunConfig.load(args.config)
    if args.mode:
        base = dataclasses.replace(base, mode=args.mode)
    values = parse_range(args.values)
    snrs = parse_range(args.snr) if args.snr else [base.snr_db]
    points = sweep_configs(base, args.param, values, snrs)
    out = Path(args.out or base.output)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, out / f"point_{i:03d}") for i, (_, _, cfg) in enumerate(points)]
    n_workers = worker_count()
    if n_workers == 1:
        results = [_sweep_point(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_sweep_point, jobs))
    table = out / "sweep.csv"
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point", args.param, "snr_db", "mode", "xi_tot", "xi_int", "xi_ext",
                    "steps", "error"])
        for i, ((value, snr, _), res) in enumerate(zip(points, results)):
            w.writerow([i, repr(value), repr(snr), res["mode"], repr(res.get("tot", float("nan"))),
                        repr(res.get("int", float("nan"))), repr(res.get("ext", float("nan"))),
                        res.get("steps", 0), res.get("error") or ""])
    write_manifest(out, {"base": base.to_dict(), "param": args.param, "values": values,
                         "snr": snrs}, base.seed, [table])
    print(table)


def _load_reconstruction(path):
    centers, values = metrics.read_map_csv(path)
    n = int(round(np.sqrt(len(values))))
    if n * n != len(values):
        raise ValidationError(f"{path} is not a square comparison grid")
    return n, values


def cmd_metrics(args):
    n, tau_opt = _load_reconstruction(args.reconstruction)
    sc = Scenario.load(args.scenario)
    grid = build_uniform_grid(sc.domain_side, n, sc.domain_center)
    if sc.obj is None:
        raise ValidationError("scenario has no object; nothing to compare with")
    res = metrics.error_indexes(sc.tau(grid), tau_opt, sc.tau_delta(grid) != 0)
    if args.baseline:
        _, base = _load_reconstruction(args.baseline)
        ref = metrics.error_indexes(sc.tau(grid), base, sc.tau_delta(grid) != 0)
        res["gap"] = {k: metrics.error_gap(ref[k], res[k]) for k in ("tot", "int", "ext")}
    print(json.dumps(res, sort_keys=True))


def cmd_export_figures(args):
    run = Path(args.run)
    manifest = json.loads((run / "manifest.json").read_text())
    cfg = manifest["config"]
    sc = Scenario.from_dict(cfg.get("scenario_content") or cfg["scenario"])
    n, tau_opt = _load_reconstruction(run / "tau_opt.csv")
    grid = build_uniform_grid(sc.domain_side, n, sc.domain_center)
    maps = {"tau_opt_re": tau_opt.real, "tau_opt_im": tau_opt.imag,
            "tau_delta_re": (tau_opt - sc.tau_h(grid)).real}
    if sc.obj is not None:
        truth = sc.tau(grid)
        e = metrics.local_error(truth, tau_opt)
        maps.update(truth_re=truth.real, error_abs=np.abs(e), error_re=e.real, error_im=e.imag)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ranges, files = {}, []
    for name, values in maps.items():
        img = metrics.grid_image(grid, values, n)
        np.savetxt(out / f"{name}.csv", img, delimiter=",", fmt="%.17g")
        ranges[name] = metrics.write_pgm(img, out / f"{name}.pgm")
        files += [out / f"{name}.csv", out / f"{name}.pgm"]
    diag = run / "diagnostics.csv"
    if diag.exists():
        (out / "convergence.csv").write_bytes(diag.read_bytes())
        files.append(out / "convergence.csv")
    (out / "ranges.json").write_text(json.dumps(ranges, indent=2, sort_keys=True) + "\n")
    files.append(out / "ranges.json")
    write_manifest(out, {"run": str(run)}, manifest.get("seed"), files)
    print(out)


def build_parser():
    p = _Parser(prog="msdcie", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("forward", help="synthesize a differential dataset")
    f.add_argument("--scenario", required=True)
    f.add_argument("--snr", type=float, default=float("inf"), help="dB; default noiseless")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--fine-n", type=int, default=80)
    f.add_argument("--n", type=int, default=30)
    f.add_argument("--allow-inverse-crime", action="store_true")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_forward)

    i = sub.add_parser("invert", help="run one inversion configuration")
    i.add_argument("--config", required=True)
    i.add_argument("--out")
    i.set_defaults(func=cmd_invert)

    s = sub.add_parser("sweep", help="parameter sweep (cartesian with --snr)")
    s.add_argument("--config", required=True)
    s.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    s.add_argument("--values", required=True, help="a:b:step or comma list")
    s.add_argument("--snr", help="comma list or a:b:step of SNR values in dB")
    s.add_argument("--mode", choices=("MS-DCIE", "DCIE", "MS-DLSIE", "DLSIE"))
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    m = sub.add_parser("metrics", help="error indexes of a reconstruction")
    m.add_argument("--reconstruction", required=True, help="tau_opt.csv from invert")
    m.add_argument("--scenario", required=True)
    m.add_argument("--baseline", help="second tau_opt.csv; adds the error gap")
    m.set_defaults(func=cmd_metrics)

    e = sub.add_parser("export-figures", help="CSV/PGM maps of an inversion run")
    e.add_argument("--run", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_export_figures)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        _report("usage", exc)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ValidationError as exc:
        _report(exc.category, exc)
        return 2
    except MsdcieError as exc:
        _report(exc.category, exc)
        return 1
    except OSError as exc:
        _report("io", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
