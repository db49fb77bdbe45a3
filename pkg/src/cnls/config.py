"""Run configuration: JSON parsing, validation and a fully expanded echo."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields

from .grid import Grid
from .ground_state import DEFAULT_SEEDS, SeedSpec, SolverOptions
from .model import FrozenParams, ModelParams, Potential, potential_from_dict, potential_to_dict
from .semiclassical import EpsSchedule, resolution_floor
from .sigma import DEFAULT_OMEGA2_KNOTS

COMMANDS = ("ground-state", "sigma-map", "threshold-sweep", "semiclassical", "validate")


class ConfigError(ValueError):
    """Malformed or semantically invalid configuration."""


def _need(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"{where}: missing required field '{key}'")
    return d[key]


def _number(x, where: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
        raise ConfigError(f"{where}: expected a finite number, got {x!r}")
    return float(x)


def _integer(x, where: str) -> int:
    if isinstance(x, bool) or not isinstance(x, int):
        raise ConfigError(f"{where}: expected an integer, got {x!r}")
    return x


def _vector(x, dim: int, where: str) -> tuple:
    if not isinstance(x, list) or len(x) != dim:
        raise ConfigError(f"{where}: expected a list of {dim} numbers, got {x!r}")
    return tuple(_number(c, f"{where}[{i}]") for i, c in enumerate(x))


def _object(x, where: str, allowed) -> dict:
    if not isinstance(x, dict):
        raise ConfigError(f"{where}: expected an object, got {type(x).__name__}")
    extra = sorted(set(x) - set(allowed))
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(extra)}; allowed: {', '.join(sorted(allowed))}")
    return x


def _guard(where: str, fn, *args):
    try:
        return fn(*args)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class CachePolicy:
    mode: str = "memory"
    directory: str | None = None
    interpolate: bool = True
    omega2_knots: tuple = DEFAULT_OMEGA2_KNOTS
    refine_tol: float | None = 1e-4

    def to_dict(self) -> dict:
        return {"mode": self.mode, "directory": self.directory, "interpolate": self.interpolate,
                "omega2_knots": list(self.omega2_knots), "refine_tol": self.refine_tol}


@dataclass(frozen=True)
class RunSpec:
    command: str
    grid: Grid
    params: FrozenParams | None = None
    b_values: tuple = ()
    V: Potential | None = None
    W: Potential | None = None
    b: float | None = None
    alpha: float | None = None
    region: tuple | None = None
    resolution: int = 21
    flag: object = "minima"
    reference_grid: Grid | None = None
    z_ref: tuple | None = None
    schedule: EpsSchedule | None = None
    seeds: tuple = DEFAULT_SEEDS
    solver: SolverOptions = field(default_factory=SolverOptions)
    cache: CachePolicy = field(default_factory=CachePolicy)
    output_dir: str = "cnls-out"

    def model(self, eps: float = 1.0) -> ModelParams:
        return ModelParams(self.V, self.W, self.b, eps, self.alpha)

    def to_dict(self) -> dict:
        """Echo with every default made explicit; parsing it yields an equal spec."""
        g = self.grid
        out = {"command": self.command, "grid": g.to_dict()}
        if self.params is not None:
            out["params"] = {"kappa1": self.params.kappa1, "kappa2": self.params.kappa2, "b": self.params.b}
        if self.command == "threshold-sweep":
            out["b_values"] = list(self.b_values)
        if self.V is not None:
            out["potentials"] = {"V": potential_to_dict(self.V), "W": potential_to_dict(self.W)}
            out["b"] = self.b
            out["alpha"] = self.alpha
        if self.command == "sigma-map":
            out["region"] = {"lo": list(self.region[0]), "hi": list(self.region[1])}
            out["resolution"] = self.resolution
            out["flag"] = self.flag if isinstance(self.flag, str) else [list(z) for z in self.flag]
            out["reference_grid"] = self.reference_grid.to_dict()
        if self.command == "semiclassical":
            out["z_ref"] = list(self.z_ref)
            out["schedule"] = {"values": list(self.schedule.values)}
            out["reference_grid"] = None if self.reference_grid is None else self.reference_grid.to_dict()
        out["seeds"] = [s.to_dict() for s in self.seeds]
        out["solver"] = self.solver.to_dict()
        out["cache"] = self.cache.to_dict()
        out["output_dir"] = self.output_dir
        return out


_TOP = {"command", "grid", "params", "b_values", "potentials", "b", "alpha", "region", "resolution", "flag",
        "reference_grid", "z_ref", "schedule", "seeds", "solver", "cache", "output_dir"}


def _parse_grid(d, where) -> Grid:
    d = _object(d, where, {"d", "L", "n"})
    return _guard(where, Grid, _integer(_need(d, "d", where), f"{where}.d"),
                  _number(_need(d, "L", where), f"{where}.L"), _integer(_need(d, "n", where), f"{where}.n"))


def _parse_seeds(lst) -> tuple:
    if not isinstance(lst, list) or not lst:
        raise ConfigError("seeds: expected a non-empty list")
    out = []
    for i, s in enumerate(lst):
        w = f"seeds[{i}]"
        s = _object(s, w, {"kind", "amplitude", "ratio"})
        kw = {"kind": _need(s, "kind", w)}
        if "amplitude" in s:
            kw["amplitude"] = _number(s["amplitude"], f"{w}.amplitude")
        if "ratio" in s:
            kw["ratio"] = _number(s["ratio"], f"{w}.ratio")
        out.append(_guard(w, lambda: SeedSpec(**kw)))
    return tuple(out)


def _parse_solver(d) -> SolverOptions:
    names = {f.name: f for f in fields(SolverOptions)}
    d = _object(d, "solver", names)
    kw = {}
    for k, v in d.items():
        default = getattr(SolverOptions(), k)
        kw[k] = _integer(v, f"solver.{k}") if isinstance(default, int) else _number(v, f"solver.{k}")
        if not kw[k] > 0:
            raise ConfigError(f"solver.{k}: must be positive, got {v}")
    return SolverOptions(**kw)


def _parse_cache(d) -> CachePolicy:
    d = _object(d, "cache", {"mode", "directory", "interpolate", "omega2_knots", "refine_tol"})
    mode = d.get("mode", "memory")
    if mode not in ("memory", "disk"):
        raise ConfigError(f"cache.mode: expected 'memory' or 'disk', got {mode!r}")
    directory = d.get("directory")
    if directory is not None and not isinstance(directory, str):
        raise ConfigError("cache.directory: expected a string or null")
    interp = d.get("interpolate", True)
    if not isinstance(interp, bool):
        raise ConfigError("cache.interpolate: expected true or false")
    knots = d.get("omega2_knots", list(DEFAULT_OMEGA2_KNOTS))
    if not isinstance(knots, list) or len(knots) < 2:
        raise ConfigError("cache.omega2_knots: expected a list of at least two numbers")
    knots = tuple(_number(k, f"cache.omega2_knots[{i}]") for i, k in enumerate(knots))
    if any(not 0 < k <= 1 for k in knots) or list(knots) != sorted(set(knots)):
        raise ConfigError("cache.omega2_knots: values must be strictly increasing within (0, 1]")
    tol = d.get("refine_tol", 1e-4)
    if tol is not None:
        tol = _number(tol, "cache.refine_tol")
        if not tol > 0:
            raise ConfigError("cache.refine_tol: must be positive or null")
    return CachePolicy(mode, directory, interp, knots, tol)


def _parse_schedule(d) -> EpsSchedule:
    d = _object(d, "schedule", {"values", "start", "stop", "ratio"})
    if "values" in d:
        if set(d) != {"values"}:
            raise ConfigError("schedule: give either 'values' or 'start'/'stop'/'ratio', not both")
        vals = d["values"]
        if not isinstance(vals, list):
            raise ConfigError("schedule.values: expected a list")
        return _guard("schedule", EpsSchedule, tuple(_number(v, "schedule.values") for v in vals))
    start = _number(_need(d, "start", "schedule"), "schedule.start")
    stop = _number(_need(d, "stop", "schedule"), "schedule.stop")
    ratio = _number(d.get("ratio", 0.8), "schedule.ratio")
    return _guard("schedule", EpsSchedule.geometric, start, stop, ratio)


def parse_config(text: str) -> RunSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return spec_from_dict(doc)


def spec_from_dict(doc) -> RunSpec:
    doc = _object(doc, "config", _TOP)
    cmd = _need(doc, "command", "config")
    if cmd not in COMMANDS:
        raise ConfigError(f"command: unknown command {cmd!r}; valid commands: {', '.join(COMMANDS)}")
    grid = _parse_grid(_need(doc, "grid", "config"), "grid")
    kw: dict = {"command": cmd, "grid": grid}

    if cmd in ("ground-state", "threshold-sweep") or "params" in doc:
        pd = _object(_need(doc, "params", "config"), "params", {"kappa1", "kappa2", "b"})
        k1 = _number(_need(pd, "kappa1", "params"), "params.kappa1")
        k2 = _number(_need(pd, "kappa2", "params"), "params.kappa2")
        # a sweep supplies its couplings separately
        b = pd.get("b", 0.0) if cmd == "threshold-sweep" else _need(pd, "b", "params")
        kw["params"] = _guard("params", FrozenParams, k1, k2, _number(b, "params.b"))
    if cmd == "threshold-sweep":
        bl = _need(doc, "b_values", "config")
        if not isinstance(bl, list) or not bl:
            raise ConfigError("b_values: expected a non-empty list")
        kw["b_values"] = tuple(_number(b, f"b_values[{i}]") for i, b in enumerate(bl))
        if any(b < 0 for b in kw["b_values"]):
            raise ConfigError("b_values: coupling values must be non-negative")

    if cmd in ("sigma-map", "semiclassical"):
        pots = _object(_need(doc, "potentials", "config"), "potentials", {"V", "W"})
        kw["V"] = _guard("potentials.V", potential_from_dict, _need(pots, "V", "potentials"))
        kw["W"] = _guard("potentials.W", potential_from_dict, _need(pots, "W", "potentials"))
        kw["b"] = _number(_need(doc, "b", "config"), "b")
        alpha = doc.get("alpha")
        kw["alpha"] = min(kw["V"].inf(), kw["W"].inf()) if alpha is None else _number(alpha, "alpha")
        _guard("model", ModelParams, kw["V"], kw["W"], kw["b"], 1.0, kw["alpha"])
        for name in ("V", "W"):
            c = getattr(kw[name], "center", None)
            if c is not None and len(c) not in (1, grid.dim):
                raise ConfigError(f"potentials.{name}.center: length {len(c)} does not match d={grid.dim}")

    if cmd == "sigma-map":
        reg = _object(_need(doc, "region", "config"), "region", {"lo", "hi"})
        lo = _vector(_need(reg, "lo", "region"), grid.dim, "region.lo")
        hi = _vector(_need(reg, "hi", "region"), grid.dim, "region.hi")
        if any(a >= c for a, c in zip(lo, hi)):
            raise ConfigError("region: need lo < hi in every coordinate")
        kw["region"] = (lo, hi)
        res = _integer(doc.get("resolution", 21), "resolution")
        if res < 2:
            raise ConfigError("resolution: must be at least 2")
        kw["resolution"] = res
        flag = doc.get("flag", "minima")
        if isinstance(flag, str):
            if flag not in ("minima", "none"):
                raise ConfigError("flag: expected 'minima', 'none' or a list of points")
        elif isinstance(flag, list):
            flag = tuple(_vector(z, grid.dim, f"flag[{i}]") for i, z in enumerate(flag))
        else:
            raise ConfigError("flag: expected 'minima', 'none' or a list of points")
        kw["flag"] = flag
        rg = doc.get("reference_grid")
        kw["reference_grid"] = grid if rg is None else _parse_grid(rg, "reference_grid")
        if kw["reference_grid"].dim != grid.dim:
            raise ConfigError("reference_grid.d: must equal grid.d")

    if cmd == "semiclassical":
        kw["z_ref"] = _vector(_need(doc, "z_ref", "config"), grid.dim, "z_ref")
        if any(abs(c) >= grid.half_width for c in kw["z_ref"]):
            raise ConfigError("z_ref: must lie inside the box")
        kw["schedule"] = _parse_schedule(_need(doc, "schedule", "config"))
        floor = resolution_floor(ModelParams(kw["V"], kw["W"], kw["b"], 1.0, kw["alpha"]), grid)
        if kw["schedule"].smallest < floor:
            raise ConfigError(f"schedule: smallest eps {kw['schedule'].smallest} is below the resolution floor "
                              f"4*h*sqrt(sup(V, W)) = {floor!r}")
        rg = doc.get("reference_grid")
        if rg is not None:
            kw["reference_grid"] = _parse_grid(rg, "reference_grid")
            if kw["reference_grid"].dim != grid.dim:
                raise ConfigError("reference_grid.d: must equal grid.d")

    if "seeds" in doc:
        kw["seeds"] = _parse_seeds(doc["seeds"])
    if "solver" in doc:
        kw["solver"] = _parse_solver(doc["solver"])
    if "cache" in doc:
        kw["cache"] = _parse_cache(doc["cache"])
    if "output_dir" in doc:
        if not isinstance(doc["output_dir"], str) or not doc["output_dir"]:
            raise ConfigError("output_dir: expected a non-empty string")
        kw["output_dir"] = doc["output_dir"]
    return RunSpec(**kw)


def echo(spec: RunSpec) -> str:
    return json.dumps(spec.to_dict(), indent=2, sort_keys=True)
