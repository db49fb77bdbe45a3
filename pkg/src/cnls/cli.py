"""Command-line entry point, run orchestration and report output.

    cnls <command> --config <path> [--out <dir>] [--threads <k>]

Exit status: 0 on success, 2 on a configuration error, 3 on a solver failure,
1 when the outputs cannot be written.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import COMMANDS, ConfigError, RunSpec, parse_config
from .grid import field_to_bytes
from .ground_state import explore_basins, pohozaev_residual, reference_profile
from .model import FrozenParams, local_thresholds
from .semiclassical import continuation, matched_reference_grid
from .sigma import ReducedCache, sigma_map
from .system import ConvergenceError
from .validate import run_validation

log = logging.getLogger("cnls")


class SolverFailure(RuntimeError):
    """A solve failed; carries the partial report when one exists."""

    def __init__(self, message: str, report: "Report | None" = None):
        super().__init__(message)
        self.report = report


@dataclass
class Report:
    spec: RunSpec
    payload: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    fingerprints: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    ok: bool = True

    def to_dict(self) -> dict:
        return {
            "tool": "cnls",
            "version": __version__,
            "command": self.spec.command,
            "ok": self.ok,
            "spec": self.spec.to_dict(),
            "payload": self.payload,
            "timings": self.timings,
            "fingerprints": self.fingerprints,
        }


def _num(x):
    """JSON-safe float: non-finite values become strings."""
    x = float(x)
    return x if math.isfinite(x) else repr(x)


def _make_cache(spec: RunSpec, grid) -> ReducedCache:
    c = spec.cache
    kw = dict(omega2_knots=c.omega2_knots, interpolate=c.interpolate, opts=spec.solver, refine_tol=c.refine_tol,
              b_knots=(spec.b,) if spec.b is not None else ())
    if c.mode == "disk":
        return ReducedCache.on_disk(grid, c.directory, **kw)
    return ReducedCache(grid, **kw)


@contextmanager
def _executor(threads: int):
    if threads <= 1:
        yield None
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            yield ex


# --- commands ----------------------------------------------------------------


def _gs_rows(basins):
    e0 = basins[0].energy
    for g in basins:
        nu, nv = g.norms()
        yield [g.seed_id, str(g.classification), g.energy, g.nehari_residual, g.el_residual, g.sup_u, g.sup_v,
               nu, nv, "true" if g.energy - e0 <= 1e-7 * abs(e0) else "false"]


GS_HEADER = ["seed_id", "classification", "energy", "nehari_residual", "el_residual", "sup_u", "sup_v",
             "norm2_u", "norm2_v", "least_energy"]


def _ground_state(spec: RunSpec, report: Report, ex):
    basins, failures = explore_basins(spec.params, spec.grid, spec.seeds, spec.solver, ex)
    best = basins[0]
    report.payload = {
        "ground_state": {k: (_num(v) if isinstance(v, float) else v) for k, v in best.summary().items()},
        "pohozaev_residual": _num(pohozaev_residual(best.state, spec.params)),
        "basins": [b.summary() for b in basins],
        "seed_failures": failures,
        "thresholds": local_thresholds(spec.params.kappa1, spec.params.kappa2).__dict__,
    }
    report.tables["ground_state.csv"] = (GS_HEADER, list(_gs_rows(basins)))
    report.artifacts = [("ground_state", best)]


SWEEP_HEADER = ["b", "classification", "regime", "energy", "sup_u", "sup_v", "b_z", "b0", "b1", "consistent"]


def _threshold_sweep(spec: RunSpec, report: Report, ex):
    th = local_thresholds(spec.params.kappa1, spec.params.kappa2)
    k1, k2 = spec.params.kappa1, spec.params.kappa2

    def one(b):
        # seeds run serially inside each b so the outer fan-out stays flat
        return explore_basins(FrozenParams(k1, k2, b), spec.grid, spec.seeds, spec.solver)[0][0]

    results = list(ex.map(one, spec.b_values)) if ex is not None else [one(b) for b in spec.b_values]
    rows = []
    for b, gs in zip(spec.b_values, results):
        cls = "Scalar" if gs.classification.is_scalar else "Vector"
        regime = th.regime(b)
        consistent = regime == "Indeterminate" or regime == cls
        rows.append([b, cls, regime, gs.energy, gs.sup_u, gs.sup_v, th.b_z, th.b0, th.b1,
                     "true" if consistent else "false"])
    report.tables["threshold_sweep.csv"] = (SWEEP_HEADER, rows)
    report.payload = {"rows": [dict(zip(SWEEP_HEADER, r)) for r in rows], "thresholds": th.__dict__}


def _sigma_map(spec: RunSpec, report: Report, ex):
    cache = _make_cache(spec, spec.reference_grid)
    flag = None if spec.flag == "none" else spec.flag
    m = sigma_map(spec.V, spec.W, spec.b, spec.region, spec.resolution, cache, flag=flag, executor=ex)
    cache.save()
    rows = list(m.rows())
    report.tables["sigma_map.csv"] = (m.header(), rows)
    z = m.argmin()
    report.payload = {"argmin": [float(c) for c in z], "min_sigma": float(min(s.sigma for s in m.samples)),
                      "gamma": cache.gamma, "n_samples": len(m.samples),
                      "note": "gradient candidates cover only the converged seed basins"}
    report.fingerprints["cache"] = cache.fingerprint()


def _semiclassical(spec: RunSpec, report: Report, ex):
    p = spec.model()
    ref = spec.reference_grid or matched_reference_grid(spec.grid, spec.schedule.smallest)
    cache = _make_cache(spec, ref) if spec.b else None
    rep = continuation(p, spec.z_ref, spec.schedule, spec.grid, ref_grid=ref, opts=spec.solver, cache=cache)
    if cache is not None:
        cache.save()
    report.tables["concentration.csv"] = (rep.header(spec.grid.dim), list(rep.csv_rows()))
    report.payload = {
        "verdict": rep.verdict,
        "failure": rep.failure,
        "z_ref": [float(c) for c in rep.z_ref],
        "z_profile": [float(c) for c in rep.z_profile],
        "sigma_ref": rep.sigma_ref,
        "rows": [dict(zip(rep.header(spec.grid.dim), [_num(v) if isinstance(v, float) else v for v in row]))
                 for row in rep.csv_rows()],
        "distance_to_z_ref": [float(np.linalg.norm(r.x_eps - rep.z_ref)) for r in rep.rows],
        "tied_maxima": [[list(map(float, o)) for o in r.others] for r in rep.rows],
    }
    if rep.failure is not None:
        report.ok = False
        raise SolverFailure(rep.failure, report)


VALIDATE_HEADER = ["property", "result", "detail"]


def _validate(spec: RunSpec, report: Report, ex):
    checks = run_validation(spec.grid, spec.solver, ex)
    report.tables["validate.csv"] = (VALIDATE_HEADER, [c.row() for c in checks])
    report.payload = {"checks": [dict(zip(VALIDATE_HEADER, c.row())) for c in checks],
                      "all_passed": all(c.passed for c in checks)}
    report.ok = all(c.passed for c in checks)


DISPATCH = {
    "ground-state": _ground_state,
    "threshold-sweep": _threshold_sweep,
    "sigma-map": _sigma_map,
    "semiclassical": _semiclassical,
    "validate": _validate,
}


def run(spec: RunSpec, threads: int = 1) -> Report:
    report = Report(spec=spec)
    report.fingerprints["grid"] = spec.grid.fingerprint()
    t0 = time.perf_counter()
    # the U0 profile is shared read-only state; build it before any fan-out
    reference_profile(spec.grid.dim)
    report.timings["profile_s"] = time.perf_counter() - t0
    t1 = time.perf_counter()
    try:
        with _executor(threads) as ex:
            DISPATCH[spec.command](spec, report, ex)
    except SolverFailure:
        report.timings["run_s"] = time.perf_counter() - t1
        raise
    except ConvergenceError as exc:
        report.ok = False
        report.timings["run_s"] = time.perf_counter() - t1
        raise SolverFailure(f"{spec.command}: {exc}", report) from exc
    report.timings["run_s"] = time.perf_counter() - t1
    report.timings["threads"] = threads
    return report


# --- output ------------------------------------------------------------------


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(c) for c in r])
    return buf.getvalue()


def _atomic_write(path: Path, data: bytes) -> Path:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_outputs(report: Report, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, (header, rows) in report.tables.items():
        written.append(_atomic_write(directory / name, csv_text(header, rows).encode()))
    for stem, gs in report.artifacts:
        written.append(_atomic_write(directory / f"{stem}_u.bin", field_to_bytes(gs.state.u)))
        written.append(_atomic_write(directory / f"{stem}_v.bin", field_to_bytes(gs.state.v)))
        written.append(_atomic_write(directory / f"{stem}.json", json.dumps(gs.summary(), indent=2).encode()))
    body = json.dumps(report.to_dict(), indent=2, default=_json_default)
    written.append(_atomic_write(directory / "report.json", body.encode()))
    return written


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    return str(o)


# --- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cnls", description="Coupled cubic Schroedinger system solver")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="path to a JSON run configuration")
    ap.add_argument("--out", help="output directory (overrides output_dir in the config)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for independent solves")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        text = Path(args.config).read_text(encoding="utf-8")
        spec = parse_config(text)
        if spec.command != args.command:
            raise ConfigError(f"command: config declares {spec.command!r} but {args.command!r} was requested")
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        if args.out:
            spec = replace(spec, output_dir=args.out)
    except (ConfigError, OSError, UnicodeDecodeError) as exc:
        print(f"cnls: configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        report = run(spec, threads=args.threads)
    except SolverFailure as exc:
        print(f"cnls: solver failure: {exc}", file=sys.stderr)
        if exc.report is not None:
            try:
                write_outputs(exc.report, spec.output_dir)
            except OSError as err:
                print(f"cnls: could not write partial outputs: {err}", file=sys.stderr)
        return 3
    try:
        paths = write_outputs(report, spec.output_dir)
    except OSError as exc:
        print(f"cnls: output error: {exc}", file=sys.stderr)
        return 1
    for p in paths:
        log.info("wrote %s", p)
    if spec.command == "validate" and not report.ok:
        print("cnls: some invariants failed; see validate.csv", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
