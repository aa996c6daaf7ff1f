"""Command line interface: configuration, orchestration and report emission.

Exit codes: 0 converged, 2 stalled, 3 invalid configuration.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import scipy

from . import __version__
from .deformation import AugmentedPoint, FlowConfig, ScalarProblem, flow_integrate, project_pi
from .minimax import (
    default_bbar,
    degree_intersection,
    initial_surface,
    mountain_pass_single,
    surface_minimax,
    surface_values,
    sweep_grid_for,
)
from .radial import gn_ratio, load_profile_csv, make_grid, scale
from .scalar import (
    GrowthConditionError,
    PowerNonlinearity,
    SphereConstraint,
    critical_point_report,
    fiber_maximize,
    gaussian_seed,
    validate_growth,
)
from .system import (
    ParameterError,
    SystemParams,
    SystemState,
    energy_Istar,
    ground_state_omega,
    scalar_b_i,
    system_gradient,
    validate_solution,
)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_STALLED, EXIT_INVALID = 0, 2, 3
COMMANDS = ("ground-state", "solve-single", "solve-system", "minimax-surface", "validate", "gn-scan", "flow-trace")


class ConfigError(ValueError):
    """Unreadable or invalid run configuration."""


# --------------------------------------------------------------------------
# deterministic serialisation


def _fmt(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def dumps(obj: Any, indent: int = 2, _level: int = 0) -> str:
    """JSON with sorted keys and 17-significant-digit floats."""
    pad, inner = " " * (indent * _level), " " * (indent * (_level + 1))
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in sorted(obj.items())]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(inner + dumps(v, indent, _level + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt(float(obj))
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def write_json(path: Path, obj: Any) -> None:
    path.write_text(dumps(obj) + "\n")


def write_csv(path: Path, header: list[str], columns: list) -> None:
    rows = [",".join(header)]
    for vals in zip(*columns):
        rows.append(",".join(_fmt(float(v)) for v in vals))
    path.write_text("\n".join(rows) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# --------------------------------------------------------------------------
# configuration


@dataclass
class GridSettings:
    n: int = 4096
    r_max: float = 20.0
    grading: float = 1.0


@dataclass
class FlowSettings:
    tol: float = 1e-6
    rho: float = 0.1
    max_step: float = 1.0
    flow_budget: int = 4
    max_sweeps: int = 400
    n_nodes: int = 17


@dataclass
class RunConfig:
    """Validated run description; ``terms``/``m`` for scalar, ``system`` for system runs."""

    problem: str = "scalar"
    dimension: int = 3
    grid: GridSettings = field(default_factory=GridSettings)
    terms: tuple[tuple[float, float], ...] = ((1.0, 4.0),)
    positive_part: bool = False
    m: float | None = None
    system: dict | None = None
    flow: FlowSettings = field(default_factory=FlowSettings)
    seed: int = 0
    out: str = "out"
    profile: str | None = None

    def spec(self) -> PowerNonlinearity:
        return PowerNonlinearity(self.terms, self.dimension, self.positive_part)

    def params(self) -> SystemParams:
        s = self.system or {}
        return SystemParams(s["mu1"], s["mu2"], s["beta"], s["m1"], s["m2"])

    def make_grid(self):
        return make_grid(self.dimension, self.grid.r_max, self.grid.n, self.grid.grading)

    def flow_config(self) -> FlowConfig:
        return FlowConfig(level=1.0, rho=self.flow.rho, max_step=self.flow.max_step, tol_grad=self.flow.tol,
                          tol_pohozaev=self.flow.tol)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["terms"] = [{"a": a, "p": p} for a, p in self.terms]
        return d

    def canonical(self) -> dict:
        """Configuration without the output location, for hashing and archiving."""
        d = self.to_dict()
        d.pop("out", None)
        return d

    def digest(self) -> str:
        return hashlib.sha256(dumps(self.canonical()).encode()).hexdigest()


_TOP_KEYS = {"problem", "dimension", "grid", "terms", "positive_part", "m", "system", "flow", "seed", "out", "profile"}


def _number(d: dict, key: str, where: str, kind=float) -> Any:
    if key not in d:
        raise ConfigError(f"{where}.{key}: missing")
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {v!r}")
    if kind is int and int(v) != v:
        raise ConfigError(f"{where}.{key}: expected an integer, got {v!r}")
    return kind(v)


def config_from_dict(raw: dict) -> RunConfig:
    """Build and eagerly validate a :class:`RunConfig` from parsed JSON."""
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a JSON object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"config: unknown field(s) {sorted(unknown)}")
    problem = raw.get("problem", "scalar")
    if problem not in ("scalar", "system"):
        raise ConfigError(f"problem: must be 'scalar' or 'system', got {problem!r}")
    dim = _number(raw, "dimension", "config", int) if "dimension" in raw else 3
    if dim not in (2, 3):
        raise ConfigError(f"dimension: must be 2 or 3, got {dim}")
    g = raw.get("grid", {})
    grid = GridSettings(
        n=_number(g, "n", "grid", int) if "n" in g else 4096,
        r_max=_number(g, "r_max", "grid") if "r_max" in g else 20.0,
        grading=_number(g, "grading", "grid") if "grading" in g else 1.0,
    )
    f = raw.get("flow", {})
    flow = FlowSettings(**{k: _number(f, k, "flow", type(getattr(FlowSettings, k))) for k in f
                           if k in FlowSettings.__dataclass_fields__})
    if set(f) - set(FlowSettings.__dataclass_fields__):
        raise ConfigError(f"flow: unknown field(s) {sorted(set(f) - set(FlowSettings.__dataclass_fields__))}")
    cfg = RunConfig(problem=problem, dimension=dim, grid=grid, flow=flow,
                    seed=_number(raw, "seed", "config", int) if "seed" in raw else 0,
                    out=str(raw.get("out", "out")), profile=raw.get("profile"),
                    positive_part=bool(raw.get("positive_part", False)))
    if problem == "scalar":
        terms = raw.get("terms", [{"a": 1.0, "p": 4.0}])
        if not isinstance(terms, list) or not terms:
            raise ConfigError("terms: expected a non-empty list of {a, p} objects")
        cfg.terms = tuple((_number(t, "a", f"terms[{k}]"), _number(t, "p", f"terms[{k}]")) for k, t in enumerate(terms))
        cfg.m = _number(raw, "m", "config") if "m" in raw else None
        if cfg.m is not None and not cfg.m > 0:
            raise ConfigError(f"m: mass must be positive, got {cfg.m}")
    else:
        s = raw.get("system")
        if not isinstance(s, dict):
            raise ConfigError("system: expected an object with mu1, mu2, beta, m1, m2")
        cfg.system = {k: _number(s, k, "system") for k in ("mu1", "mu2", "beta", "m1", "m2")}
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    """Run every module-level validation eagerly; errors name the field."""
    try:
        make_grid(cfg.dimension, cfg.grid.r_max, cfg.grid.n, cfg.grid.grading)
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from exc
    if cfg.problem == "scalar":
        try:
            validate_growth(cfg.spec())
        except GrowthConditionError as exc:
            raise ConfigError(f"terms: {exc}") from exc
    else:
        if cfg.dimension != 3:
            raise ConfigError("dimension: the cubic system is three-dimensional")
        try:
            cfg.params()
        except ParameterError as exc:
            raise ConfigError(f"system: {exc}") from exc
    for name in ("tol", "rho", "max_step"):
        if not getattr(cfg.flow, name) > 0:
            raise ConfigError(f"flow.{name}: must be positive")
    if cfg.flow.n_nodes < 17:
        raise ConfigError("flow.n_nodes: at least 17 nodes are required")


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate a JSON configuration file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{p}: cannot read ({exc.strerror})") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return config_from_dict(raw)


# --------------------------------------------------------------------------
# running


@dataclass
class RunManifest:
    command: str
    config_hash: str
    versions: dict
    wall_times: dict
    files: dict
    status: str

    def to_dict(self) -> dict:
        return asdict(self)


class _Run:
    def __init__(self, cfg: RunConfig, command: str, emit_plot_data: bool):
        self.cfg, self.command, self.plot = cfg, command, emit_plot_data
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.times: dict[str, float] = {}
        self.status = "Converged"

    def phase(self, name: str):
        run = self

        class _T:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                run.times[name] = time.perf_counter() - self.t

        return _T()

    def json(self, name: str, obj) -> None:
        write_json(self.out / name, obj)
        self.files.append(name)

    def csv(self, name: str, header, columns) -> None:
        write_csv(self.out / name, header, columns)
        self.files.append(name)


def _scalar_mass(cfg: RunConfig) -> float:
    if cfg.m is not None:
        return cfg.m
    return ground_state_omega(make_grid(cfg.dimension, 20.0, 4096)).mass


def _cmd_ground_state(run: _Run) -> None:
    cfg = run.cfg
    with run.phase("shooting"):
        gs = ground_state_omega(cfg.make_grid())
    g = gs.omega.grid
    run.csv("omega.csv", ["r", "omega"], [g.nodes, gs.omega.values])
    ident = {
        "center_value": gs.center_value,
        "mass": gs.mass,
        "dimension": cfg.dimension,
        "grad_over_mass": gs.identities[0],
        "quartic_over_mass": gs.identities[1],
    }
    run.json("identities.json", ident)


def _cmd_solve_single(run: _Run) -> None:
    cfg = run.cfg
    spec, grid = cfg.spec(), cfg.make_grid()
    c = SphereConstraint(_scalar_mass(cfg))
    with run.phase("minimax"):
        rep = mountain_pass_single(c, spec, cfg.flow_config(), grid=grid, seed=cfg.seed, n_nodes=cfg.flow.n_nodes,
                                   max_sweeps=cfg.flow.max_sweeps, flow_budget=cfg.flow.flow_budget)
    run.status = rep.status
    run.json("minimax_report.json", _minimax_dict(rep, rep.report.summary()))
    run.csv("history.csv", ["iteration", "level"], list(zip(*rep.history)))
    run.csv("profile.csv", ["r", "u"], [grid.nodes, rep.report.u.values])
    if run.plot:
        pj, pp = rep.details["path_J"], rep.details["path_P"]
        run.csv("plot_path_energy.csv", ["node", "J", "P"], [range(len(pj)), pj, pp])


def _minimax_dict(rep, summary: dict) -> dict:
    return {
        "level": rep.level,
        "max_index": list(rep.max_index) if isinstance(rep.max_index, tuple) else rep.max_index,
        "status": rep.status,
        "history": [[i, v] for i, v in rep.history],
        "report": summary,
        "details": {k: v for k, v in rep.details.items() if k not in ("path_J", "path_P", "surface_J")},
    }


def _cmd_solve_system(run: _Run) -> None:
    cfg = run.cfg
    p, grid = cfg.params(), cfg.make_grid()
    with run.phase("minimax"):
        rep = surface_minimax(p, cfg.flow_config(), grid=grid, n_nodes=cfg.flow.n_nodes,
                              max_sweeps=cfg.flow.max_sweeps, flow_budget=cfg.flow.flow_budget)
    run.status = rep.status
    summary = rep.report.summary()
    summary["b1_plus_b2"] = rep.details["b1"] + rep.details["b2"]
    summary["lower_bound_ok"] = rep.details["lower_bound_ok"]
    run.json("system_report.json", summary)
    run.json("minimax_report.json", _minimax_dict(rep, summary))
    run.csv("history.csv", ["iteration", "level"], list(zip(*rep.history)))
    st = rep.report.state
    run.csv("profile.csv", ["r", "u1", "u2"], [grid.nodes, st.u1.values, st.u2.values])
    if run.plot:
        sj = np.asarray(rep.details["surface_J"])
        lin = np.linspace(0.0, 1.0, sj.shape[0])
        ss, tt = np.meshgrid(lin, lin, indexing="ij")
        run.csv("plot_surface_heatmap.csv", ["s", "t", "J"], [ss.ravel(), tt.ravel(), sj.ravel()])


def _cmd_minimax_surface(run: _Run) -> None:
    cfg = run.cfg
    p = cfg.params()
    sg = sweep_grid_for(p)
    with run.phase("surface"):
        gs = ground_state_omega(sg)
        surf = initial_surface(p, gs, n_nodes=cfg.flow.n_nodes)
    with run.phase("degree"):
        s0, t0 = degree_intersection(surf)
    q = surf.at(s0, t0)
    (_, b1), (_, b2) = (scalar_b_i(p.m(i), p.mu(i), gs) for i in (1, 2))
    j, _ = q.J()
    run.json("intersection.json", {"s0": s0, "t0": t0, "energy": j, "b1": b1, "b2": b2, "bbar": default_bbar(b1, b2),
                                   "above_lower_bound": bool(j >= b1 + b2 - 1e-3)})
    vals = surface_values(surf)
    n = surf.n
    lin = np.linspace(0.0, 1.0, n)
    ss, tt = np.meshgrid(lin, lin, indexing="ij")
    run.csv("surface_grid.csv", ["s", "t", "J", "P1", "P2"],
            [ss.ravel(), tt.ravel(), vals["J"].ravel(), vals["P1"].ravel(), vals["P2"].ravel()])


def _cmd_validate(run: _Run) -> None:
    cfg = run.cfg
    if not cfg.profile:
        raise ConfigError("profile: validate needs a profile CSV path")
    funcs = load_profile_csv(cfg.profile, cfg.dimension, cfg.grid.grading)
    if cfg.problem == "scalar":
        if len(funcs) != 1:
            raise ConfigError("profile: scalar validation expects one value column")
        u = funcs[0]
        m = float(u.grid.weights @ u.values**2)
        rep = critical_point_report(u, cfg.spec(), SphereConstraint(m), cfg.flow.tol, cfg.flow.tol)
        summary = rep.summary()
        run.status = "Converged" if rep.converged else "Stalled"
    else:
        if len(funcs) != 2:
            raise ConfigError("profile: system validation expects two value columns")
        p = cfg.params()
        st = SystemState.normalized(funcs[0].values, funcs[1].values, funcs[0].grid, p)
        g = system_gradient(st, check=False)
        rep = validate_solution(st, g.lambda1, g.lambda2, energy_Istar(st), cfg.flow.tol, cfg.flow.tol)
        summary = rep.summary()
        run.status = "Converged" if rep.converged else "Stalled"
    run.json("validation.json", summary)


def _cmd_gn_scan(run: _Run) -> None:
    cfg = run.cfg
    grid = cfg.make_grid()
    n = cfg.dimension
    lo, hi = 2.0, (2.0 * n / (n - 2) if n > 2 else 10.0)
    ps = np.linspace(lo, hi, 26)[1:-1]
    rng = np.random.default_rng(cfg.seed)
    u = gaussian_seed(grid, SphereConstraint(1.0), rng)
    ts = (0.5, 1.0, 2.0)
    cols = [[], [], []]
    for p in ps:
        vals = [gn_ratio(scale(u, t), p) for t in ts]
        cols[0].append(p)
        cols[1].append(vals[1])
        cols[2].append((max(vals) - min(vals)) / vals[1])
    run.csv("gn_scan.csv", ["p", "ratio", "dilation_spread"], cols)


def _cmd_flow_trace(run: _Run) -> None:
    cfg = run.cfg
    spec, grid = cfg.spec(), cfg.make_grid()
    c = SphereConstraint(_scalar_mass(cfg))
    u = gaussian_seed(grid, c, np.random.default_rng(cfg.seed))
    fm = fiber_maximize(u, spec)
    prob = ScalarProblem(spec, c)
    start = AugmentedPoint(fm.theta, u, prob)
    conf = cfg.flow_config().at_level(fm.value, 0.5 * abs(fm.value))
    with run.phase("flow"):
        tr = flow_integrate(start, conf, cfg.flow.max_sweeps)
    recs = tr.records
    run.csv("flow_trace.csv", ["t", "J", "P", "grad_norm", "theta", "step", "cutoff"],
            [[getattr(r, k) for r in recs] for k in ("t", "J", "P", "grad_norm", "theta", "step", "cutoff")])
    end = project_pi(tr.final)
    run.csv("flow_final.csv", ["r", "u"], [grid.nodes, end.values])
    run.status = "Converged" if tr.complete else "Stalled"


_HANDLERS = {
    "ground-state": _cmd_ground_state,
    "solve-single": _cmd_solve_single,
    "solve-system": _cmd_solve_system,
    "minimax-surface": _cmd_minimax_surface,
    "validate": _cmd_validate,
    "gn-scan": _cmd_gn_scan,
    "flow-trace": _cmd_flow_trace,
}


def run(config: RunConfig, command: str = "solve-single", emit_plot_data: bool = False) -> RunManifest:
    """Execute ``command`` and write its artifacts plus ``manifest.json`` to ``config.out``."""
    if command not in _HANDLERS:
        raise ConfigError(f"unknown command {command!r}")
    r = _Run(config, command, emit_plot_data)
    t0 = time.perf_counter()
    _HANDLERS[command](r)
    r.times["total"] = time.perf_counter() - t0
    r.json("config.json", config.canonical())
    man = RunManifest(
        command=command,
        config_hash=config.digest(),
        versions={"normdeform": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                  "python": platform.python_version()},
        wall_times=r.times,
        files={name: _sha256(r.out / name) for name in sorted(set(r.files))},
        status=r.status,
    )
    write_json(r.out / "manifest.json", man.to_dict())
    return man


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--grid-n", type=int, help="number of grid nodes")
    common.add_argument("--r-max", type=float, help="outer radius")
    common.add_argument("--tol", type=float, help="gradient and Pohozaev tolerance")
    common.add_argument("--profile", help="profile CSV for validate")
    common.add_argument("--emit-plot-data", action="store_true", help="also write CSVs used for figures")
    common.add_argument("-v", "--verbose", action="store_true")
    ap = argparse.ArgumentParser(prog="normdeform", description="Normalized solutions by deformation minimax.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return ap


def _default_system() -> dict:
    m = ground_state_omega(make_grid(3, 20.0, 4096)).mass
    return {"mu1": 1.0, "mu2": 1.0, "beta": -0.5, "m1": m, "m2": m}


def _resolve(args) -> RunConfig:
    """Merge the optional config file with command line overrides."""
    raw: dict = load_config(args.config).to_dict() if args.config else {}
    if args.command in ("solve-system", "minimax-surface"):
        raw["problem"] = "system"
        if not raw.get("system"):
            raw["system"] = _default_system()
        raw.pop("terms", None)
        raw.pop("m", None)
    else:
        raw.pop("system", None)
    if raw.get("m") is None:
        raw.pop("m", None)
    if raw.get("profile") is None:
        raw.pop("profile", None)
    grid = dict(raw.get("grid", {}))
    if args.grid_n is not None:
        grid["n"] = args.grid_n
    if args.r_max is not None:
        grid["r_max"] = args.r_max
    raw["grid"] = grid
    if args.tol is not None:
        raw["flow"] = dict(raw.get("flow", {}), tol=args.tol)
    for key in ("seed", "out", "profile"):
        if getattr(args, key) is not None:
            raw[key] = getattr(args, key)
    return config_from_dict(raw)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _resolve(args)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        man = run(cfg, args.command, args.emit_plot_data)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # solver failure: write diagnostics and exit as stalled
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "diagnostics.json", {"command": args.command, "error": type(exc).__name__, "message": str(exc)})
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        return EXIT_STALLED
    print(f"{args.command}: {man.status}; wrote {len(man.files)} files to {cfg.out}")
    return EXIT_OK if man.status == "Converged" else EXIT_STALLED


if __name__ == "__main__":
    sys.exit(main())
