"""Configuration-driven batch runner for gap maps and observable tables.

A sweep visits every ``(t, y, z)`` grid point on every ``(L1, L2)``
geometry and runs the requested tasks there.  Results are emitted in long
format: one record per quantity, so a task producing a single number gives
exactly one record per grid point.  Failures are recorded with the error
class and never dropped.

Config schema (YAML)::

    grid:                    # each axis: a scalar, a list, or {start, stop, num}
      t: 1.0
      y: {start: 0.0, stop: 3.0, num: 31}
      z: [1.5]
    geometry: {L1: 4, L2: [11]}
    tasks: [gap, wilson_table]
    output: {dir: out, format: csv}
    solver: {tol: 1.0e-8, max_iter: 2000, workers: 1}
    boundary_flux: 0
    options:                 # all optional
      loops: {l1: [1, 2], l2: [1, 2, 3]}
      thooft_q: [0.5, 1.3, 3.141592653589793]
      meson_lengths: [1, 3, 5]
      horseshoe_l: [1, 3, 5]
      horseshoe_width: 2
      separations: [0, 1, 2, 3]
      chern_grid: 64
    validate: {points: 5, seed: 7, L1: 2, L2: 2, corrupt: false}
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path

import click
import numpy as np
import scipy
import yaml

from .errors import FpepsError
from .fpeps_global import PepsParameters, chern_number, classify_phase
from .gauge_peps import (
    MAX_L1,
    Cylinder,
    CylinderEnvironment,
    FieldOp,
    build_transfer,
    dominant_spectrum,
)
from .observables import (
    area_perimeter_fit,
    averaged,
    creutz_chi,
    default_anchors,
    horseshoe_rho,
    meson_spec,
    nc_wilson_spec,
    thooft_loop_spec,
    wilson_loop_spec,
    wilson_table,
    wilson_wilson_correlation,
)

TASKS = ("gap", "chern", "phase_classify", "wilson_table", "thooft", "meson_scan", "horseshoe", "correlators")
FORMATS = ("csv", "json")
FIELDS = ("index", "t", "y", "z", "L1", "L2", "task", "quantity", "value", "value_imag", "label",
          "status", "error")
MAP_FIELDS = ("index", "t", "y", "z", "L1", "L2", "gap", "phase", "status", "error")
VALIDATION_TOL = 1e-8

EXIT_OK, EXIT_CONFIG, EXIT_VALIDATION, EXIT_PARTIAL = 0, 1, 2, 3


class ConfigError(FpepsError):
    """Malformed or out-of-range sweep configuration."""


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class SweepConfig:
    t: tuple
    y: tuple
    z: tuple
    L1: tuple
    L2: tuple
    tasks: tuple
    out_dir: str = "out"
    fmt: str = "csv"
    tol: float = 1e-8
    max_iter: int = 2000
    workers: int = 1
    boundary_flux: int = 0
    max_l1: int = MAX_L1
    options: dict = field(default_factory=dict)
    validate: dict = field(default_factory=dict)

    def points(self) -> list:
        return [(t, y, z) for t in self.t for y in self.y for z in self.z]

    def geometries(self) -> list:
        return [(a, b) for a in self.L1 for b in self.L2]

    def canonical(self) -> str:
        # where and how fast the sweep runs does not change its results
        d = {k: v for k, v in asdict(self).items() if k not in ("out_dir", "workers")}
        return json.dumps(d, sort_keys=True, default=str)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _axis(raw, name: str) -> tuple:
    if isinstance(raw, dict):
        try:
            start, stop, num = float(raw["start"]), float(raw["stop"]), int(raw["num"])
        except (KeyError, TypeError, ValueError) as err:
            raise ConfigError(f"grid.{name}: a range needs numeric start, stop and num") from err
        if num < 1:
            raise ConfigError(f"grid.{name}: num must be positive")
        return tuple(float(v) for v in np.linspace(start, stop, num))
    vals = raw if isinstance(raw, list) else [raw]
    try:
        vals = tuple(float(v) for v in vals)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"grid.{name}: values must be numbers") from err
    if not vals:
        raise ConfigError(f"grid.{name}: empty range")
    return vals


def _ints(raw, name: str) -> tuple:
    vals = raw if isinstance(raw, list) else [raw]
    if not vals or not all(isinstance(v, int) and not isinstance(v, bool) for v in vals):
        raise ConfigError(f"{name}: expected an integer or a nonempty list of integers")
    return tuple(vals)


def parse_config(text: str, source: str = "<config>", **overrides) -> SweepConfig:
    """Parse and validate a YAML config; ``overrides`` are CLI flags (``None`` = unset)."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        where = f" line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{source}:{where} {getattr(err, 'problem', err)}") from err
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    unknown = set(raw) - {"grid", "geometry", "tasks", "output", "solver", "boundary_flux", "options", "validate"}
    if unknown:
        raise ConfigError(f"{source}: unknown field(s) {sorted(unknown)}")

    grid = raw.get("grid") or {}
    for k in ("y", "z"):
        if grid.get(k) is None:
            raise ConfigError(f"grid.{k}: required")
    t, y, z = _axis(grid.get("t", 0.0), "t"), _axis(grid["y"], "y"), _axis(grid["z"], "z")
    if any(v < 0 for v in t):
        raise ConfigError("grid.t: t must be non-negative")
    geo = raw.get("geometry") or {}
    L1 = _ints(geo.get("L1", 4), "geometry.L1")
    L2 = _ints(geo.get("L2", 8), "geometry.L2")
    tasks = raw.get("tasks", ["gap"])
    tasks = [tasks] if isinstance(tasks, str) else tasks
    bad = [k for k in tasks if k not in TASKS]
    if bad or not tasks:
        raise ConfigError(f"tasks: unknown task(s) {bad}; choose from {list(TASKS)}")
    out = raw.get("output") or {}
    solver = raw.get("solver") or {}

    def pick(flag, value):
        return value if flag is None else flag

    fmt = pick(overrides.get("fmt"), out.get("format", "csv"))
    if fmt not in FORMATS:
        raise ConfigError(f"output.format: {fmt!r} is not one of {list(FORMATS)}")
    max_l1 = int(pick(overrides.get("max_l1"), MAX_L1))
    if any(a < 2 for a in L1) or any(b < 1 for b in L2):
        raise ConfigError("geometry: need L1 >= 2 and L2 >= 1")
    if any(a > max_l1 for a in L1):
        raise ConfigError(f"geometry.L1: {max(L1)} exceeds the cap {max_l1}")
    workers = int(pick(overrides.get("workers"), solver.get("workers", 1)))
    if workers < 1:
        raise ConfigError("solver.workers must be positive")
    try:
        flux = int(raw.get("boundary_flux", 0))
        tol, max_iter = float(solver.get("tol", 1e-8)), int(solver.get("max_iter", 2000))
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{source}: {err}") from err
    out_dir = str(pick(overrides.get("out"), out.get("dir", "out")))
    return SweepConfig(t, y, z, L1, L2, tuple(dict.fromkeys(tasks)), out_dir, fmt, tol, max_iter, workers, flux,
                       max_l1, dict(raw.get("options") or {}), dict(raw.get("validate") or {}))


def load_config(path, **overrides) -> SweepConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err.strerror}") from err
    return parse_config(text, str(path), **overrides)


# ------------------------------------------------------------------- tasks


def _rec(task, quantity, value=None, label="", status="ok", error=""):
    if value is None:
        re_, im = None, None
    elif isinstance(value, (int, np.integer)):
        re_, im = float(value), 0.0
    else:
        c = complex(value)
        re_, im = c.real, c.imag
    return {"task": task, "quantity": quantity, "value": re_, "value_imag": im, "label": label,
            "status": status, "error": error}


def _task_gap(ctx):
    p, L1, cfg = ctx["params"], ctx["L1"], ctx["cfg"]
    sector = cfg.boundary_flux if p.t == 0 else None
    sp = dominant_spectrum(build_transfer(p, L1, max_l1=cfg.max_l1), sector=sector, tol=cfg.tol,
                           maxiter=cfg.max_iter)
    return [_rec("gap", "gap", sp.gap)]


def _task_chern(ctx):
    p = ctx["params"]
    p.require_fermionic()
    return [_rec("chern", "chern", chern_number(p, n_grid=int(ctx["cfg"].options.get("chern_grid", 64))))]


def _task_phase(ctx):
    p = ctx["params"]
    return [_rec("phase_classify", "phase", label=classify_phase(p.y, p.z).value)]


def _loop_sizes(ctx):
    loops = ctx["cfg"].options.get("loops") or {}
    l1s = loops.get("l1", list(range(1, ctx["L1"] // 2 + 1)))
    l2s = loops.get("l2", [1, 2, 3])
    return l1s, l2s


def _task_wilson(ctx):
    l1s, l2s = _loop_sizes(ctx)
    stats = wilson_table(ctx["params"], ctx["geometry"], l1s, l2s, env=ctx["env"])
    out = [_rec("wilson_table", f"W({a},{b})", v) for (a, b), v in sorted(stats.table.items())]
    for a in l1s:
        for b in l2s:
            if a - 1 in l1s and b - 1 in l2s:
                try:
                    out.append(_rec("wilson_table", f"chi({a},{b})", creutz_chi(stats, a, b)))
                except FpepsError as err:
                    out.append(_rec("wilson_table", f"chi({a},{b})", status="failed", error=type(err).__name__))
    try:
        fit = area_perimeter_fit(stats)
        out += [_rec("wilson_table", "area_coeff", fit.kappa_area, label=fit.law),
                _rec("wilson_table", "perimeter_coeff", fit.kappa_perimeter, label=fit.law),
                _rec("wilson_table", "fit_residual", fit.residual, label=fit.law)]
    except FpepsError as err:
        out.append(_rec("wilson_table", "fit", status="failed", error=type(err).__name__))
    return out


def _mid_row(geometry, height=1):
    return max(0, (geometry.L2 - height) // 2)


def _task_thooft(ctx):
    g, env = ctx["geometry"], ctx["env"]
    qs = ctx["cfg"].options.get("thooft_q", [0.5, 1.3, math.pi])
    y0 = _mid_row(g)
    out = []
    for q in qs:
        out.append(_rec("thooft", f"G({q:g})", env.expectation(thooft_loop_spec(q, (0, y0, 1, 1), L1=g.L1))))
        out.append(_rec("thooft", f"GNC({q:g})", env.expectation(thooft_loop_spec(q, winding=y0, L1=g.L1))))
    out.append(_rec("thooft", "WNC", env.expectation(nc_wilson_spec(y0, g.L1))))
    return out


def _task_meson(ctx):
    g, env, p = ctx["geometry"], ctx["env"], ctx["params"]
    out = []
    for l in ctx["cfg"].options.get("meson_lengths", [1, 3, 5]):
        if l + 1 > g.L2:
            out.append(_rec("meson_scan", f"M({l})", status="failed", error="GeometryError"))
            continue
        y0 = _mid_row(g, l + 1)
        x0 = y0 % 2  # even start site
        v, _ = averaged(env, meson_spec((x0, y0), "U" * l), default_anchors(p, g) if p.t else (0,))
        out.append(_rec("meson_scan", f"M({l})", v))
    return out


def _task_horseshoe(ctx):
    g, env, p = ctx["geometry"], ctx["env"], ctx["params"]
    width = int(ctx["cfg"].options.get("horseshoe_width", 2))
    out = []
    for l in ctx["cfg"].options.get("horseshoe_l", [1, 3, 5]):
        try:
            out.append(_rec("horseshoe", f"rho({l})", horseshoe_rho(p, l, g, width=width, env=env)))
        except FpepsError as err:
            out.append(_rec("horseshoe", f"rho({l})", status="failed", error=type(err).__name__))
    return out


def _task_correlators(ctx):
    g, p = ctx["geometry"], ctx["params"]
    x2 = 2
    out = []
    for d in ctx["cfg"].options.get("separations", [0, 1, 2, 3]):
        try:
            v = wilson_wilson_correlation(p, x2, d, L1=g.L1, L2=g.L2, env=ctx["env"])
            out.append(_rec("correlators", f"WW({d})", v))
        except FpepsError as err:
            out.append(_rec("correlators", f"WW({d})", status="failed", error=type(err).__name__))
    return out


_RUNNERS = {"gap": _task_gap, "chern": _task_chern, "phase_classify": _task_phase,
            "wilson_table": _task_wilson, "thooft": _task_thooft, "meson_scan": _task_meson,
            "horseshoe": _task_horseshoe, "correlators": _task_correlators}
_NEEDS_ENV = {"wilson_table", "thooft", "meson_scan", "horseshoe", "correlators"}


def run_point(cfg: SweepConfig, index: int, point, geometry) -> list:
    """All tasks at one grid point; each task's failure is quarantined."""
    t, y, z = point
    L1, L2 = geometry
    base = {"index": index, "t": t, "y": y, "z": z, "L1": L1, "L2": L2}
    params = PepsParameters(t, y, z, L1, L2)
    ctx = {"params": params, "L1": L1, "cfg": cfg, "geometry": Cylinder(L1, L2, cfg.boundary_flux), "env": None}
    records = []
    for task in cfg.tasks:
        try:
            if task in _NEEDS_ENV and ctx["env"] is None:
                ctx["env"] = CylinderEnvironment(params, ctx["geometry"], cfg.max_l1)
            rows = _RUNNERS[task](ctx)
        except (FpepsError, ArithmeticError, np.linalg.LinAlgError, MemoryError) as err:
            rows = [_rec(task, "", status="failed", error=f"{type(err).__name__}: {err}")]
        records += [{**base, **r} for r in rows]
    return records


def _job(args):
    return run_point(*args)


def run_sweep(cfg: SweepConfig) -> list:
    """Records in grid order (geometry-major, then t, y, z); independent of ``workers``."""
    jobs = [(cfg, i, pt, geo) for i, (geo, pt) in enumerate((g, p) for g in cfg.geometries() for p in cfg.points())]
    if cfg.workers == 1 or len(jobs) == 1:
        chunks = [_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(_job, jobs))
    return [r for chunk in chunks for r in chunk]


# ------------------------------------------------------------------ output


def versions() -> dict:
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"artifact": own, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def header(cfg: SweepConfig | None, kind: str) -> dict:
    return {"kind": kind, "config_sha256": cfg.digest() if cfg else "", **versions()}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _json_value(v):
    if isinstance(v, float):
        if not math.isfinite(v):
            return None if math.isnan(v) else str(v)
        return float(format(v, ".17g"))
    return v


def render(records, head: dict, fmt: str, fields=FIELDS) -> str:
    if fmt == "json":
        body = [{k: _json_value(r.get(k)) for k in fields} for r in records]
        return json.dumps({"header": head, "fields": list(fields), "records": body}, indent=1) + "\n"
    buf = io.StringIO()
    for k, v in head.items():
        buf.write(f"# {k}: {v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in records:
        w.writerow([_fmt(r.get(k)) for k in fields])
    return buf.getvalue()


def _parse_cell(name: str, cell: str):
    if cell == "":
        return None
    if name in ("index", "L1", "L2"):
        return int(cell)
    if name in ("t", "y", "z", "value", "value_imag", "gap"):
        return float(cell)
    return cell


def read_records(text: str, fmt: str) -> tuple:
    """Inverse of ``render``: ``(header, records)``."""
    if fmt == "json":
        doc = json.loads(text)
        return doc["header"], doc["records"]
    head, lines = {}, []
    for line in text.splitlines():
        if line.startswith("# "):
            k, _, v = line[2:].partition(": ")
            head[k] = v
        else:
            lines.append(line)
    rows = list(csv.DictReader(lines))
    return head, [{k: _parse_cell(k, v) for k, v in row.items()} for row in rows]


def write_output(records, cfg: SweepConfig | None, kind: str, out_dir, fmt: str, fields=FIELDS) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{kind}.{fmt}"
    path.write_text(render(records, header(cfg, kind), fmt, fields))
    return path


def emit_phase_map(records, out_dir, fmt: str = "csv", cfg: SweepConfig | None = None) -> Path:
    """One row per grid point with its gap and fermionic phase label."""
    rows = {}
    for r in records:
        key = r["index"]
        row = rows.setdefault(key, {k: r[k] for k in ("index", "t", "y", "z", "L1", "L2")}
                              | {"gap": None, "phase": "", "status": "ok", "error": ""})
        if r["status"] != "ok":
            row["status"], row["error"] = "failed", r["error"]
        elif r["task"] == "gap":
            row["gap"] = r["value"]
        elif r["task"] == "phase_classify":
            row["phase"] = r["label"]
    return write_output([rows[k] for k in sorted(rows)], cfg, "phase_map", out_dir, fmt, MAP_FIELDS)


# --------------------------------------------------------------- validation


def validation_observables(L1: int, L2: int, t: float) -> list:
    """Field products, plaquettes, a meson and (at ``t = 0``) 't Hooft loops."""
    obs = []
    for x1 in range(L1):
        for x2 in range(L2):
            obs.append((f"Sz_s{(x1, x2)}", [FieldOp((x1, x2), "Sz", "s")]))
            obs.append((f"SzSz{(x1, x2)}", [FieldOp((x1, x2), "Sz", "t"), FieldOp((x1, x2), "Sz", "s")]))
            obs.append((f"n{(x1, x2)}", [FieldOp((x1, x2), "n")]))
    for x1 in range(L1):
        for x2 in range(L2 - 1):
            obs.append((f"W11{(x1, x2)}", list(wilson_loop_spec(1, 1, (x1, x2)).path)))
    if L2 > 1:
        obs.append(("M(U)", list(meson_spec((0, 0), "U").path)))
    if t == 0:
        for q in (0.5, 1.3, math.pi):
            obs.append((f"G({q:g})", list(thooft_loop_spec(q, (0, 0, 1, 1), L1=L1).path)))
    return obs


def validate_against_oracle(cfg: SweepConfig) -> tuple:
    """Transfer-matrix vs brute-force expectations; returns ``(rows, max_diff)``."""
    from .oracle import exact_gauged_state, to_oracle_ops

    v = cfg.validate
    L1, L2 = int(v.get("L1", 2)), int(v.get("L2", 2))
    n, corrupt = int(v.get("points", 5)), bool(v.get("corrupt", False))
    rng = np.random.default_rng(int(v.get("seed", 7)))
    rows, worst = [], 0.0
    for i in range(n):
        t = 0.0 if i == 0 else float(rng.uniform(0.2, 1.5))
        y, z = (float(a) for a in rng.uniform(-2, 2, size=2))
        p = PepsParameters(t, y, z, L1, L2)
        state = exact_gauged_state(p, L1, L2, corrupt=corrupt)
        env = CylinderEnvironment(p, Cylinder(L1, L2))
        for name, ops in validation_observables(L1, L2, t):
            a = env.expectation(ops)
            b = state.expectation(to_oracle_ops(ops, L1))
            d = abs(a - b)
            worst = max(worst, d)
            rows.append({"index": i, "t": t, "y": y, "z": z, "L1": L1, "L2": L2, "task": "validate",
                         "quantity": name, "value": a.real, "value_imag": a.imag,
                         "label": _fmt(b.real) + ("+" if b.imag >= 0 else "") + _fmt(b.imag) + "j",
                         "status": "ok" if d <= VALIDATION_TOL else "mismatch", "error": _fmt(d)})
    return rows, worst


# --------------------------------------------------------------------- CLI


def _common(f):
    f = click.option("--max-l1", type=int, default=None, help="Cap on the circumference.")(f)
    f = click.option("--format", "fmt", type=click.Choice(FORMATS), default=None, help="Output format.")(f)
    f = click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")(f)
    f = click.option("--workers", type=int, default=None, help="Worker processes.")(f)
    return click.argument("config", type=click.Path(dir_okay=False))(f)


def _load(config, **flags) -> SweepConfig:
    try:
        return load_config(config, **flags)
    except ConfigError as err:
        click.echo(f"config error: {err}", err=True)
        sys.exit(EXIT_CONFIG)


def _summary(records) -> int:
    failed = sum(r["status"] != "ok" for r in records)
    click.echo(f"{len(records)} records, {failed} failed")
    return EXIT_PARTIAL if failed else EXIT_OK


@click.group()
def main():
    """Parameter sweeps over the gauged and ungauged fPEPS families."""


@main.command()
@_common
def sweep(config, workers, out, fmt, max_l1):
    """Run every task of CONFIG over its grid."""
    cfg = _load(config, workers=workers, out=out, fmt=fmt, max_l1=max_l1)
    records = run_sweep(cfg)
    path = write_output(records, cfg, "sweep", cfg.out_dir, cfg.fmt)
    click.echo(f"wrote {path}")
    sys.exit(_summary(records))


@main.command("phase-map")
@_common
def phase_map(config, workers, out, fmt, max_l1):
    """Gap and phase label per grid point (tasks other than gap and phase_classify are ignored)."""
    cfg = _load(config, workers=workers, out=out, fmt=fmt, max_l1=max_l1)
    tasks = tuple(k for k in cfg.tasks if k in ("gap", "phase_classify")) or ("gap", "phase_classify")
    cfg = SweepConfig(**{**asdict(cfg), "tasks": tasks})
    records = run_sweep(cfg)
    path = emit_phase_map(records, cfg.out_dir, cfg.fmt, cfg)
    click.echo(f"wrote {path}")
    sys.exit(_summary(records))


@main.command()
@_common
def validate(config, workers, out, fmt, max_l1):
    """Compare transfer-matrix and brute-force expectations."""
    cfg = _load(config, workers=workers, out=out, fmt=fmt, max_l1=max_l1)
    try:
        rows, worst = validate_against_oracle(cfg)
    except FpepsError as err:
        click.echo(f"validation error: {type(err).__name__}: {err}", err=True)
        sys.exit(EXIT_VALIDATION)
    path = write_output(rows, cfg, "validate", cfg.out_dir, cfg.fmt)
    click.echo(f"wrote {path}; max |diff| = {worst:.3e} over {len(rows)} observables")
    sys.exit(EXIT_OK if worst <= VALIDATION_TOL else EXIT_VALIDATION)


if __name__ == "__main__":
    main()
