"""Benchmark scenario runner.

Each subcommand builds a macro-mesh scenario, runs a solver mode and appends
rows to a CSV report; figure-style subcommands also emit a standalone
matplotlib script that reads only the CSV.  Configuration comes from an
INI-style file (section ``[scenario]``) with every key overridable on the
command line.  Exit codes: 0 success, 2 configuration error, 3 solver
failure.

Vertex permutations are written in the reference-table convention: the label
``p1 p2 p3 p4`` assigns number ``p_i`` to vertex ``i`` of the shape's base
ordering.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import math
import sys
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import geometry, lfa
from .assembly import CoefficientField, kappa_poly
from .geometry import MacroMesh
from .ilu import factorize_tet
from .multigrid import Hierarchy, SmootherConfig, pcg_solve
from .schur import SchurComplement
from .surrogate import build_surrogate_ilu

__all__ = ["ScenarioConfig", "build_scenario", "main"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

SHAPES = ("regular", "spindle", "cap", "spade", "trirect", "shell", "cube")


class ConfigError(ValueError):
    pass


class SolverError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# scenario configuration
# ---------------------------------------------------------------------------

@dataclass
class ScenarioConfig:
    shape: str = "regular"
    mesh_file: str = ""
    height: float = 0.1            # trirect apex height
    aperture: float = geometry.SHELL_APERTURE
    h_lower: float = 0.5           # cube split height
    kappa_upper: float = 10.0
    lmin: int = 2
    lmax: int = 6
    coeff: str = "constant"        # constant | kappa0..kappa3
    coeff_value: float = 1.0
    smoother: str = "ilu"          # gs | sgs | ilu | surrogate_ilu
    variant: str = "v1"
    degrees: tuple = (3, 3, 3)
    sample_level: int = 0          # 0: automatic (two below each level)
    a_mode: str = "assembled"
    a_degrees: tuple = (3, 3, 3)
    reorder: bool = False
    perm: str = ""                 # explicit label, e.g. "2341"
    seed: int = 42
    power_steps: int = 20
    tol: float = 1e-3
    max_iter: int = 10000
    precond: str = "smoother"      # smoother | vcycle | jacobi | none
    rhs: str = "load"              # load | random
    rhs_scale: float = 1e3
    direction: str = "dc"
    mode: str = "factors"          # dump-stencils: factors | surrogate | coeffs
    line: tuple = (0.1, 0.1)
    level_slice: int = -1          # dump a full z-slice instead of a line
    output: str = ""
    plot_script: str = ""
    timings: bool = False

    def validate(self):
        if self.shape not in SHAPES and not self.mesh_file:
            raise ConfigError(f"unknown shape {self.shape!r}")
        if not (2 <= self.lmin <= self.lmax <= 8):
            raise ConfigError("level range must satisfy 2 <= lmin <= lmax <= 8")
        if self.smoother not in ("gs", "sgs", "ilu", "surrogate_ilu"):
            raise ConfigError(f"unknown smoother {self.smoother!r}")
        if any(d < 0 for d in self.degrees):
            raise ConfigError("degrees must be nonnegative")
        if self.coeff not in ("constant", "kappa0", "kappa1", "kappa2", "kappa3"):
            raise ConfigError(f"unknown coefficient {self.coeff!r}")
        if self.perm:
            p = _parse_perm(self.perm)
            if sorted(p) != [1, 2, 3, 4]:
                raise ConfigError(f"{self.perm!r} is not a permutation of 1..4")

    def smoother_config(self) -> SmootherConfig:
        return SmootherConfig(
            kind=self.smoother, degrees=tuple(self.degrees), variant=self.variant,
            sample_level=self.sample_level or None, a_mode=self.a_mode,
            a_degrees=tuple(self.a_degrees))


def _parse_perm(text: str) -> list[int]:
    digits = [c for c in text if not c.isspace()]
    return [int(c) for c in digits]


def _perm_label_to_order(label: list[int]) -> list[int]:
    """Table convention (vertex i gets number p_i) to a vertex-list order."""
    order = [0] * 4
    for i, p in enumerate(label):
        order[p - 1] = i
    return order


def _order_to_perm_label(order) -> str:
    label = [0] * 4
    for slot, src in enumerate(order):
        label[src] = slot + 1
    return "".join(str(p) for p in label)


# ---------------------------------------------------------------------------
# scenario assembly
# ---------------------------------------------------------------------------

def _coefficient(cfg: ScenarioConfig) -> CoefficientField:
    if cfg.shape == "cube":
        hl, ku = cfg.h_lower, cfg.kappa_upper

        def fn(pts):
            pts = np.atleast_2d(pts)
            return np.where(pts[:, 2] > hl, ku, 1.0)

        return CoefficientField.scalar(fn, name=f"jump({ku:g})")
    if cfg.coeff == "constant":
        return CoefficientField.constant(cfg.coeff_value)
    return kappa_poly(int(cfg.coeff[-1]))


def build_scenario(cfg: ScenarioConfig):
    """Mesh, geometry map, coefficient and applied permutation labels."""
    cfg.validate()
    if cfg.mesh_file:
        mesh = geometry.read_mesh(cfg.mesh_file)
    elif cfg.shape == "cube":
        mesh = geometry.cube_mesh(cfg.h_lower)
    else:
        verts = {
            "regular": geometry.regular_tet,
            "spindle": geometry.spindle_tet,
            "cap": geometry.cap_tet,
            "spade": geometry.spade_tet,
            "trirect": lambda: geometry.trirect_tet(cfg.height),
            "shell": lambda: geometry.shell_tet(cfg.aperture),
        }[cfg.shape]()
        mesh = geometry.single_tet_mesh(verts)

    labels = ["1234"] * mesh.num_cells
    if cfg.perm:
        order = _perm_label_to_order(_parse_perm(cfg.perm))
        for ci in range(mesh.num_cells):
            mesh.permute_cell(ci, order)
        labels = [cfg.perm.replace(" ", "")] * mesh.num_cells
    elif cfg.reorder:
        perms = lfa.reorder_mesh(mesh)
        labels = [_order_to_perm_label(p) for p in perms]

    geometry_map = None
    if cfg.shape == "shell":
        geometry_map = geometry.shell_blending_map(mesh.cell_tet(0))
    return mesh, geometry_map, _coefficient(cfg), labels


def _hierarchy(cfg: ScenarioConfig, mesh, geometry_map, coeff,
               lmin: int | None = None) -> Hierarchy:
    return Hierarchy(mesh, cfg.lmin if lmin is None else lmin, cfg.lmax,
                     coeff=coeff, geometry_map=geometry_map,
                     smoother=cfg.smoother_config())


def _rhs_vector(cfg: ScenarioConfig, hier: Hierarchy, geometry_map) -> np.ndarray:
    sp = hier.space(hier.top)
    if cfg.rhs == "load":
        b = sp.assemble_load(None, geometry_map)
    elif cfg.rhs == "random":
        rng = np.random.default_rng(cfg.seed)
        b = np.where(sp.free, rng.standard_normal(sp.ndof), 0.0)
    else:
        raise ConfigError(f"unknown rhs {cfg.rhs!r}")
    norm = np.linalg.norm(b)
    if norm == 0.0:
        raise SolverError("zero right-hand side")
    return b * (cfg.rhs_scale / norm)


def _iters_estimate(rho: float) -> int:
    if not 0.0 < rho < 1.0:
        return -1
    return math.ceil(-6.0 / math.log10(rho))


# ---------------------------------------------------------------------------
# solver modes
# ---------------------------------------------------------------------------

def run_rate(cfg: ScenarioConfig) -> list[dict]:
    mesh, gmap, coeff, labels = build_scenario(cfg)
    t0 = time.perf_counter()
    hier = _hierarchy(cfg, mesh, gmap, coeff)
    rho = hier.convergence_factor(steps=cfg.power_steps, seed=cfg.seed)
    row = _base_row(cfg, labels)
    row.update(rho=_fmt(rho), iters_est=_iters_estimate(rho))
    if cfg.timings:
        row["wall_time"] = f"{time.perf_counter() - t0:.3f}"
    return [row]


def run_pcg(cfg: ScenarioConfig) -> list[dict]:
    mesh, gmap, coeff, labels = build_scenario(cfg)
    t0 = time.perf_counter()
    needs_hierarchy = cfg.precond == "vcycle"
    hier = _hierarchy(cfg, mesh, gmap, coeff,
                      lmin=None if needs_hierarchy else cfg.lmax)
    if cfg.precond == "smoother":
        M = hier.smoother_preconditioner()
    elif cfg.precond == "vcycle":
        M = hier.vcycle_preconditioner()
    elif cfg.precond == "jacobi":
        diag = hier.A[hier.top].diagonal()
        M = lambda r: r / diag
    elif cfg.precond == "none":
        M = None
    else:
        raise ConfigError(f"unknown preconditioner {cfg.precond!r}")
    b = _rhs_vector(cfg, hier, gmap)
    A = hier.A[hier.top]
    _, iters, resids = pcg_solve(lambda v: A @ v, b, preconditioner=M,
                                 tol=cfg.tol, max_iter=cfg.max_iter)
    if resids[-1] >= cfg.tol:
        raise SolverError(f"PCG did not reach tolerance in {cfg.max_iter} iterations")
    row = _base_row(cfg, labels)
    row.update(iterations=iters, final_residual=_fmt(resids[-1]))
    if cfg.timings:
        row["wall_time"] = f"{time.perf_counter() - t0:.3f}"
    return [row]


def run_schur(cfg: ScenarioConfig) -> list[dict]:
    mesh, gmap, coeff, labels = build_scenario(cfg)
    sc = SchurComplement(mesh, cfg.lmax, coeff=coeff, geometry_map=gmap,
                         inner_smoother=cfg.smoother_config()
                         if cfg.smoother == "surrogate_ilu" else None)
    hier_rhs = sc.space.assemble_load(None, gmap) if cfg.rhs == "load" else None
    if hier_rhs is None:
        rng = np.random.default_rng(cfg.seed)
        hier_rhs = np.where(sc.space.free, rng.standard_normal(sc.space.ndof), 0.0)
    norm = np.linalg.norm(hier_rhs)
    hier_rhs *= cfg.rhs_scale / norm
    _, iters, resids = sc.solve(hier_rhs, tol=cfg.tol)
    rows = []
    for k, r in enumerate(resids):
        row = _base_row(cfg, labels)
        row.update(iteration=k, residual=_fmt(r))
        rows.append(row)
    return rows


def run_reorder(cfg: ScenarioConfig) -> list[dict]:
    mesh, _, _, _ = build_scenario(replace(cfg, reorder=False, perm=""))
    rows = []
    for ci in range(mesh.num_cells):
        perm, report = lfa.best_permutation(mesh.cell_tet(ci))
        for p, mu in zip(report.permutations, report.mus):
            rows.append({
                "scenario": "reorder", "shape": cfg.shape, "cell": ci,
                "perm": _order_to_perm_label(p), "mu": _fmt(float(mu)),
                "selected": int(p == perm),
            })
    return rows


_DUMP_DIRECTIONS = {name: i for i, name in enumerate(geometry.DIRECTION_NAMES[:7])}


def run_dump(cfg: ScenarioConfig) -> list[dict]:
    mesh, gmap, coeff, labels = build_scenario(cfg)
    from .assembly import stencil_source

    level = cfg.lmax
    source = stencil_source(mesh.cell_tet(0), level, coeff, gmap)
    names = list(_DUMP_DIRECTIONS) + ["dc"] if cfg.direction == "all" else [cfg.direction]
    for name in names:
        if name not in _DUMP_DIRECTIONS and name != "dc":
            raise ConfigError(f"unknown dump direction {name!r}")

    if cfg.mode == "coeffs":
        sur = build_surrogate_ilu(source, level, tuple(cfg.degrees),
                                  variant=cfg.variant,
                                  sample_level=cfg.sample_level or None)
        rows = []
        for name in names:
            poly = sur.polys["inv_dc" if name == "dc" else name]
            for idx, c in np.ndenumerate(poly.coef):
                rows.append({"scenario": "dump-coeffs", "shape": cfg.shape,
                             "direction": name, "i": idx[0], "j": idx[1],
                             "k": idx[2], "coef": _fmt(float(c))})
        return rows

    n = 2 ** level
    if cfg.level_slice >= 0:
        coords = geometry.enumerate_grid(level, "interior")
        coords = coords[coords[:, 2] == cfg.level_slice]
    else:
        fx, fy = cfg.line
        x0, y0 = int(fx * n), int(fy * n)
        zmax = n - 1 - x0 - y0
        if zmax < 1:
            raise ConfigError("line start lies outside the interior")
        coords = np.array([(x0, y0, z) for z in range(1, zmax + 1)])
    ranks = geometry.lattice_rank(coords, level)

    if cfg.mode == "factors":
        order = np.argsort(ranks)
        collect = np.sort(ranks)
        result = factorize_tet(source, level, full_store=False, collect_ranks=collect)
        values = np.empty((len(ranks), 9))
        values[order] = result.collected
    elif cfg.mode == "surrogate":
        sur = build_surrogate_ilu(source, level, tuple(cfg.degrees),
                                  variant=cfg.variant,
                                  sample_level=cfg.sample_level or None)
        values = np.zeros((len(ranks), 9))
        for slot, name in enumerate(list(_DUMP_DIRECTIONS)):
            values[:, slot] = sur.polys[name].evaluate_logical(coords)
        values[:, 8] = sur.polys["inv_dc"].evaluate_logical(coords)
        with np.errstate(divide="ignore"):
            values[:, 7] = 1.0 / values[:, 8]
    else:
        raise ConfigError(f"unknown dump mode {cfg.mode!r}")

    rows = []
    for (x, y, z), vals in zip(coords, values):
        for name in names:
            col = 7 if name == "dc" else _DUMP_DIRECTIONS[name]
            rows.append({"scenario": f"dump-{cfg.mode}", "shape": cfg.shape,
                         "level": level, "direction": name,
                         "x": int(x), "y": int(y), "z": int(z),
                         "value": _fmt(float(vals[col]))})
    return rows


def _base_row(cfg: ScenarioConfig, labels) -> dict:
    return {
        "scenario": cfg.shape if not cfg.mesh_file else cfg.mesh_file,
        "coeff": cfg.coeff if cfg.shape != "cube" else f"jump({cfg.kappa_upper:g})",
        "smoother": cfg.smoother,
        "variant": cfg.variant if cfg.smoother == "surrogate_ilu" else "",
        "dgx": cfg.degrees[0], "dgy": cfg.degrees[1], "dgz": cfg.degrees[2],
        "lmin": cfg.lmin, "lmax": cfg.lmax,
        "perm": "+".join(labels),
        "seed": cfg.seed,
    }


def _fmt(v: float) -> str:
    return f"{v:.12g}"


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def write_rows(rows: list[dict], path: str):
    keys = []
    for row in rows:
        for k in row:
            if k not in keys:
                keys.append(k)
    out = open(path, "w", newline="") if path else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=keys, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    finally:
        if path:
            out.close()


_PLOT_TEMPLATE = """\
#!/usr/bin/env python3
\"\"\"Plot {what} from {csv!r} (generated alongside the CSV).\"\"\"
import csv
import matplotlib.pyplot as plt

rows = list(csv.DictReader(open({csv!r})))
fig, ax = plt.subplots()
{body}
ax.set_xlabel({xlabel!r})
ax.set_ylabel({ylabel!r})
ax.legend()
fig.savefig({png!r}, dpi=150, bbox_inches="tight")
print("wrote", {png!r})
"""

_PLOT_BODIES = {
    "rate": (
        "groups = {}\n"
        "for r in rows:\n"
        "    key = (r['smoother'], r.get('variant', ''))\n"
        "    groups.setdefault(key, []).append((float(r['dgz']), float(r['rho'])))\n"
        "for key, pts in sorted(groups.items()):\n"
        "    pts.sort()\n"
        "    ax.semilogy([p[0] for p in pts], [p[1] for p in pts], 'o-', label='/'.join(k for k in key if k))\n",
        "surrogate degree (z)", "asymptotic convergence factor"),
    "pcg": (
        "groups = {}\n"
        "for r in rows:\n"
        "    key = (r['smoother'], r.get('variant', ''))\n"
        "    groups.setdefault(key, []).append((float(r['dgz']), float(r['iterations'])))\n"
        "for key, pts in sorted(groups.items()):\n"
        "    pts.sort()\n"
        "    ax.plot([p[0] for p in pts], [p[1] for p in pts], 'o-', label='/'.join(k for k in key if k))\n",
        "surrogate degree (z)", "iterations"),
    "schur": (
        "ax.semilogy([int(r['iteration']) for r in rows], [float(r['residual']) for r in rows],\n"
        "            'o-', label='interface residual')\n",
        "iteration", "residual"),
    "dump-stencils": (
        "groups = {}\n"
        "for r in rows:\n"
        "    groups.setdefault((r['direction'], r['level']), []).append((int(r['z']), float(r['value'])))\n"
        "for key, pts in sorted(groups.items()):\n"
        "    pts.sort()\n"
        "    ax.plot([p[0] for p in pts], [p[1] for p in pts], '-', label=f'{key[0]} L{key[1]}')\n",
        "z (lattice units)", "stencil value"),
}


def write_plot_script(kind: str, csv_path: str, script_path: str):
    body, xlabel, ylabel = _PLOT_BODIES[kind]
    png = script_path.rsplit(".", 1)[0] + ".png"
    with open(script_path, "w") as fh:
        fh.write(_PLOT_TEMPLATE.format(what=kind, csv=csv_path, body=body,
                                       xlabel=xlabel, ylabel=ylabel, png=png))


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_scenario_args(p: argparse.ArgumentParser):
    p.add_argument("--config", default="", help="INI config file, section [scenario]")
    p.add_argument("--shape", choices=SHAPES)
    p.add_argument("--mesh", dest="mesh_file", help="mesh description file")
    p.add_argument("--height", type=float, help="trirect apex height")
    p.add_argument("--aperture", type=float, help="shell outer triangle colatitude")
    p.add_argument("--h-lower", dest="h_lower", type=float)
    p.add_argument("--kappa-upper", dest="kappa_upper", type=float)
    p.add_argument("--levels", nargs=2, type=int, metavar=("LMIN", "LMAX"))
    p.add_argument("--coeff", choices=("constant", "kappa0", "kappa1", "kappa2", "kappa3"))
    p.add_argument("--coeff-value", dest="coeff_value", type=float)
    p.add_argument("--smoother", choices=("gs", "sgs", "ilu", "surrogate_ilu"))
    p.add_argument("--variant", choices=("v1", "v2"))
    p.add_argument("--deg", dest="degrees", nargs=3, type=int, metavar=("DX", "DY", "DZ"))
    p.add_argument("--sample-level", dest="sample_level", type=int)
    p.add_argument("--a-mode", dest="a_mode", choices=("assembled", "surrogate"))
    p.add_argument("--a-deg", dest="a_degrees", nargs=3, type=int)
    p.add_argument("--reorder", action="store_true", default=None)
    p.add_argument("--no-reorder", dest="reorder", action="store_false")
    p.add_argument("--perm", help="vertex numbering label, e.g. 2341")
    p.add_argument("--seed", type=int)
    p.add_argument("--power-steps", dest="power_steps", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--precond", choices=("smoother", "vcycle", "jacobi", "none"))
    p.add_argument("--rhs", choices=("load", "random"))
    p.add_argument("--rhs-scale", dest="rhs_scale", type=float)
    p.add_argument("--output", "-o", help="CSV output path (default stdout)")
    p.add_argument("--plot-script", dest="plot_script", help="emit a matplotlib script")
    p.add_argument("--timings", action="store_true", default=None)


_TUPLE_KEYS = {"degrees", "a_degrees", "line"}
_INT_KEYS = {"lmin", "lmax", "seed", "power_steps", "max_iter", "sample_level",
             "level_slice"}
_FLOAT_KEYS = {"height", "aperture", "h_lower", "kappa_upper", "coeff_value",
               "tol", "rhs_scale"}
_BOOL_KEYS = {"reorder", "timings"}


def _config_from_file(path: str) -> dict:
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ConfigError(f"cannot read config file {path!r}")
    if "scenario" not in parser:
        raise ConfigError("config file needs a [scenario] section")
    out = {}
    valid = {f.name for f in fields(ScenarioConfig)}
    for key, value in parser["scenario"].items():
        if key not in valid:
            raise ConfigError(f"unknown config key {key!r}")
        if key in _TUPLE_KEYS:
            out[key] = tuple(float(v) if key == "line" else int(v)
                             for v in value.replace(",", " ").split())
        elif key in _INT_KEYS:
            out[key] = int(value)
        elif key in _FLOAT_KEYS:
            out[key] = float(value)
        elif key in _BOOL_KEYS:
            out[key] = value.strip().lower() in ("1", "true", "yes", "on")
        else:
            out[key] = value
    return out


def _merge_config(args: argparse.Namespace) -> ScenarioConfig:
    data = {}
    if getattr(args, "config", ""):
        data.update(_config_from_file(args.config))
    for f in fields(ScenarioConfig):
        val = getattr(args, f.name, None)
        if val is not None:
            data[f.name] = tuple(val) if f.name in _TUPLE_KEYS else val
    if getattr(args, "levels", None):
        data["lmin"], data["lmax"] = args.levels
    cfg = ScenarioConfig(**data)
    cfg.validate()
    return cfg


def _expand_sweep(cfg: ScenarioConfig, vary: list[str]) -> list[ScenarioConfig]:
    configs = [cfg]
    valid = {f.name for f in fields(ScenarioConfig)}
    for spec in vary:
        if "=" not in spec:
            raise ConfigError(f"--vary expects key=v1,v2,..., got {spec!r}")
        key, _, values = spec.partition("=")
        key = key.replace("-", "_")
        if key == "deg":
            key = "degrees"
        if key not in valid:
            raise ConfigError(f"unknown sweep key {key!r}")
        parsed = []
        for v in values.split(","):
            if key in _TUPLE_KEYS:
                parsed.append(tuple(int(x) for x in v.split(":")))
            elif key in _INT_KEYS:
                parsed.append(int(v))
            elif key in _FLOAT_KEYS:
                parsed.append(float(v))
            elif key in _BOOL_KEYS:
                parsed.append(v.lower() in ("1", "true", "yes", "on"))
            else:
                parsed.append(v)
        configs = [replace(c, **{key: v}) for c in configs for v in parsed]
    return configs


_RUNNERS = {
    "rate": run_rate,
    "pcg": run_pcg,
    "schur": run_schur,
    "hybrid": run_rate,
    "reorder": run_reorder,
    "dump-stencils": run_dump,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tetilu",
        description="Multigrid and ILU smoother benchmarks on structured "
                    "tetrahedral grids")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("rate", "asymptotic multigrid convergence factor"),
        ("pcg", "preconditioned conjugate gradient iteration counts"),
        ("schur", "interface-reduced solve with inner multigrid"),
        ("hybrid", "hybrid-smoother rate on the split-cube benchmark"),
        ("reorder", "smoothing factors of all vertex permutations"),
        ("dump-stencils", "factor or surrogate stencil fields as CSV"),
        ("sweep", "cartesian sweep of another subcommand"),
    ]:
        p = sub.add_parser(name, help=helptext)
        if name == "sweep":
            p.add_argument("mode", choices=sorted(_RUNNERS))
            p.add_argument("--vary", action="append", default=[],
                           help="key=v1,v2,... (degrees as dx:dy:dz)")
        if name == "dump-stencils":
            p.add_argument("--direction", help="w s se bnw bn bc be dc or all")
            p.add_argument("--mode", choices=("factors", "surrogate", "coeffs"))
            p.add_argument("--line", nargs=2, type=float, metavar=("FX", "FY"))
            p.add_argument("--slice", dest="level_slice", type=int)
        _add_scenario_args(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _merge_config(args)
    except (ConfigError, TypeError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    command = args.command
    if command == "hybrid":
        if not cfg.mesh_file and "shape" not in vars(args) or args.shape is None:
            cfg = replace(cfg, shape="cube", reorder=True)
        if cfg.smoother == "gs":
            print("configuration error: the hybrid benchmark needs a "
                  "symmetric smoother", file=sys.stderr)
            return EXIT_CONFIG
    mode = args.mode if command == "sweep" else command
    try:
        configs = (_expand_sweep(cfg, args.vary) if command == "sweep" else [cfg])
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    rows = []
    try:
        for c in configs:
            rows.extend(_RUNNERS[mode](c))
    except (ConfigError,) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    write_rows(rows, cfg.output)
    if cfg.plot_script:
        kind = mode if mode in _PLOT_BODIES else "rate"
        write_plot_script(kind, cfg.output or "report.csv", cfg.plot_script)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
