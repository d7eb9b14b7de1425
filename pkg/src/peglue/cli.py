"""Command-line front end.

Subcommands wrap one experiment each and emit plain CSV artifacts plus a
status.json with the machine-readable outcome.  Configuration comes from an
optional YAML file; command-line flags override file values.  Exit codes:
0 success, 2 invalid argument, 3 missing input, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import glue, indicial, models, solve, weights
from .gauge import GaugeContext
from .grid import (
    Grid,
    GridError,
    ScalarField,
    make_boundary_grid,
    make_grid,
    save_field,
)
from .indicial import IndicialError
from .models import ManifestError
from .solve import SolveError
from .tensor_calculus import (
    MarchingError,
    MetricError,
    normal_form,
    scalar_curvature,
)
from .weights import WeightError

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_MISSING = 3
EXIT_NUMERICAL = 4

DEFAULTS = {
    "n": 2,
    "eps": [0.2, 0.1, 0.05, 0.025],
    "mu": 0.5,
    "grid": [32, 32, 32],
    "x_min": 0.02,
    "extent": 2.75,
    "grade": 1.1,
    "chart1": "poincare_ball_chart",
    "chart2": "poincare_ball_chart",
    "tol": 5e-5,
    "max_iter": 20,
    "threshold": 1e-6,
    "out": ".",
}


@dataclass
class RunConfig:
    command: str
    values: dict = field(default_factory=dict)

    def __getattr__(self, key):
        if key in self.values:
            return self.values[key]
        if key in DEFAULTS:
            return DEFAULTS[key]
        raise AttributeError(key)

    @property
    def out_dir(self) -> str:
        return str(self.values.get("out", DEFAULTS["out"]))


def _load_config(path) -> dict:
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    if not isinstance(doc, dict):
        raise ManifestError("config %s is not a mapping" % path)
    return doc


def _parse_counts(text: str):
    try:
        counts = tuple(int(c) for c in text.split(","))
    except ValueError:
        raise GridError("grid counts must be comma-separated integers")
    if len(counts) not in (2, 3, 4):
        raise GridError("expected NX,NY or NX,NY,NZ grid counts")
    return counts


def build_config(args) -> RunConfig:
    values = {}
    if args.config:
        values.update(_load_config(args.config))
    for key in ("n", "mu", "xmin", "out", "tol"):
        v = getattr(args, key, None)
        if v is not None:
            values["x_min" if key == "xmin" else key] = v
    if getattr(args, "eps", None):
        values["eps"] = list(args.eps)
    if getattr(args, "grid", None):
        values["grid"] = list(_parse_counts(args.grid))
    return RunConfig(args.command, values)


def _resolve_chart(ref, n: int):
    """Chart name from the built-in registry, or a path to a metric
    manifest (sampled by interpolation)."""
    ref = str(ref)
    if ref in models._CHARTS:
        return models.chart_from_name(ref, n)
    if not os.path.exists(ref):
        raise FileNotFoundError("chart manifest %r not found" % ref)
    return models.load_metric_manifest(ref)


def _out_path(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return os.path.join(cfg.out_dir, name)


def _write_status(cfg: RunConfig, code: int, summary: str):
    try:
        with open(_out_path(cfg, "status.json"), "w") as fh:
            json.dump({"command": cfg.command, "exit_code": code,
                       "summary": summary}, fh, indent=2)
            fh.write("\n")
    except OSError:
        pass
    print(summary)


def _neck_grid(cfg: RunConfig) -> Grid:
    counts = tuple(cfg.grid)
    if len(counts) != cfg.n + 1:
        raise GridError("need %d grid counts for n=%d" % (cfg.n + 1, cfg.n))
    return make_grid(cfg.n, counts, (cfg.x_min, cfg.extent), cfg.extent,
                     grade=cfg.grade)


# -- commands --------------------------------------------------------------

def cmd_indicial(cfg: RunConfig) -> int:
    spec = indicial.indicial_roots(int(cfg.n))
    path = _out_path(cfg, "indicial.csv")
    window = "(%.17g,%.17g)" % spec.window
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "zeta_plus", "zeta_minus", "window"])
        for label, zp, zm in spec.rows():
            w.writerow([label, "%.17e" % zp, "%.17e" % zm, window])
    _write_status(cfg, EXIT_OK,
                  "indicial: n=%d zeta1+=%.6f window=%s -> %s"
                  % (spec.n, spec.zeta1[0], window, path))
    return EXIT_OK


def cmd_residual(cfg: RunConfig) -> int:
    n = int(cfg.n)
    chart1 = _resolve_chart(cfg.chart1, n)
    chart2 = _resolve_chart(cfg.chart2, n)
    study = glue.residual_study(chart1, chart2, [float(e) for e in cfg.eps],
                                grid=_neck_grid(cfg))
    path = _out_path(cfg, "residual_study.csv")
    study.to_csv(path)
    slope = "n/a" if study.slope is None else "%.4f" % study.slope
    _write_status(cfg, EXIT_OK,
                  "residual: %d eps values, sup %.3e..%.3e, slope %s -> %s"
                  % (len(study.eps_values), study.sup_in_annulus[0],
                     study.sup_in_annulus[-1], slope, path))
    return EXIT_OK


def cmd_solve(cfg: RunConfig) -> int:
    n = int(cfg.n)
    eps = float(cfg.eps[0] if isinstance(cfg.eps, (list, tuple)) else cfg.eps)
    atlas = glue.glue_metrics(_resolve_chart(cfg.chart1, n),
                              _resolve_chart(cfg.chart2, n),
                              eps, grid=_neck_grid(cfg))
    spec = weights.WeightSpec(mu=float(cfg.mu), nu=float(cfg.mu), eps=eps)
    k, report = solve.fixed_point(atlas, spec, tol=float(cfg.tol),
                                  max_iter=int(cfg.max_iter))
    report.to_csv(_out_path(cfg, "residual_history.csv"))
    with open(_out_path(cfg, "solve_report.txt"), "w") as fh:
        fh.write(report.to_text() + "\n")
    save_field(k, _out_path(cfg, "correction.csv"))
    if report.failure:
        _write_status(cfg, EXIT_NUMERICAL,
                      "solve: FAILED (%s) after %d iterations"
                      % (report.failure, report.iterations))
        return EXIT_NUMERICAL
    _write_status(cfg, EXIT_OK,
                  "solve: eps=%g converged=%s iterations=%d residual=%.3e "
                  "bianchi=%.3e" % (eps, report.converged, report.iterations,
                                    report.residuals[-1], report.bianchi_norm))
    return EXIT_OK


def cmd_boundary(cfg: RunConfig) -> int:
    n = int(cfg.n)
    eps = float(cfg.eps[0] if isinstance(cfg.eps, (list, tuple)) else cfg.eps)
    chart1 = _resolve_chart(cfg.chart1, n)
    chart2 = _resolve_chart(cfg.chart2, n)
    counts = tuple(cfg.grid)[:n]
    counts = tuple(c + (c % 2) for c in counts)  # keep the origin off-grid
    grid = make_boundary_grid(n, counts, float(cfg.extent))
    h = glue.glue_boundary(chart1, chart2, eps, grid)
    r_field = scalar_curvature(h)
    y = np.stack(grid.meshgrid(), axis=-1).reshape(-1, n)
    radius = np.linalg.norm(y, axis=-1)
    valid = radius >= 0.8  # inside that, this chart defers to the other one
    path = _out_path(cfg, "boundary_scalar_curvature.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y%d" % a for a in range(n)] + ["scalar_curvature", "valid"])
        flat = r_field.values.reshape(-1)
        for row, rc, ok in zip(y, flat, valid):
            w.writerow(["%.17e" % v for v in row] + ["%.17e" % rc, int(ok)])
    rmin = float(r_field.values.reshape(-1)[valid].min())
    _write_status(cfg, EXIT_OK,
                  "boundary: eps=%g min scalar curvature %.6f on the chart's "
                  "valid region -> %s" % (eps, rmin, path))
    return EXIT_OK


def cmd_normform(cfg: RunConfig) -> int:
    if "metric" not in cfg.values:
        raise ManifestError("normform needs a 'metric' manifest in the config")
    doc = cfg.values["metric"]
    if isinstance(doc, str):
        if not os.path.exists(doc):
            raise FileNotFoundError("metric manifest %r not found" % doc)
        cc = models.load_metric_manifest(doc)
    else:
        cc = models.metric_from_manifest(doc)
    grid = cc.grid
    rho = ScalarField(grid, np.broadcast_to(grid.x, grid.shape).copy())
    result = normal_form(cc, rho)
    save_field(result.metric.gbar, _out_path(cfg, "normal_form_metric.csv"))
    save_field(result.x_hat, _out_path(cfg, "normal_form_xhat.csv"))
    defect = float(np.abs(result.eikonal_defect.values).max())
    _write_status(cfg, EXIT_OK,
                  "normform: eikonal defect %.3e on %s grid"
                  % (defect, "x".join(str(s) for s in grid.shape)))
    return EXIT_OK


def cmd_linprobe(cfg: RunConfig) -> int:
    n = int(cfg.n)
    counts = tuple(cfg.grid)
    if len(counts) != n + 1:
        raise GridError("need %d grid counts for n=%d" % (n + 1, n))
    grid = make_grid(n, counts, (cfg.x_min, 1.0), 1.0)
    ref = str(cfg.values.get("chart1", "hyperbolic_half_space"))
    chart = _resolve_chart(ref, n)
    if isinstance(chart, models.ModelChart):
        pts = np.stack(grid.meshgrid(), axis=-1)
        from .grid import SymTensor2Field
        from .tensor_calculus import CCMetric
        cc = CCMetric(SymTensor2Field.from_matrix(grid, chart.gbar(pts)))
    else:
        cc = chart
    ctx = GaugeContext(cc)
    spec = weights.WeightSpec(mu=float(cfg.mu), nu=float(cfg.mu), eps=0.1)
    system = solve.assemble(ctx, spec)
    probe = solve.kernel_probe(system, threshold=float(cfg.threshold))
    path = _out_path(cfg, "kernel_probe.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sigma_min", "threshold", "flagged", "iterations"])
        w.writerow(["%.17e" % probe.sigma_min, "%.17e" % probe.threshold,
                    int(probe.flagged), probe.iterations])
    _write_status(cfg, EXIT_OK,
                  "linprobe: sigma_min=%.6e flagged=%s -> %s"
                  % (probe.sigma_min, probe.flagged, path))
    return EXIT_OK


COMMANDS = {
    "indicial": cmd_indicial,
    "residual": cmd_residual,
    "solve": cmd_solve,
    "boundary": cmd_boundary,
    "normform": cmd_normform,
    "linprobe": cmd_linprobe,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="peglue",
                                     description="gluing experiments for "
                                                 "Poincare-Einstein metrics")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML config file; flags override")
        p.add_argument("--out", help="output directory")
        p.add_argument("--n", type=int, help="boundary dimension")
        p.add_argument("--eps", type=float, action="append",
                       help="gluing parameter (repeatable)")
        p.add_argument("--mu", type=float, help="weight exponent")
        p.add_argument("--grid", help="grid counts NX,NY[,NZ]")
        p.add_argument("--xmin", type=float, help="inner x truncation")
        p.add_argument("--tol", type=float, help="solver tolerance")
    return parser


def _thread_limit():
    val = os.environ.get("PEGLUE_THREADS")
    if not val:
        return None
    try:
        k = max(1, int(val))
    except ValueError:
        return None
    try:
        from threadpoolctl import threadpool_limits
        return threadpool_limits(limits=k)
    except ImportError:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(k))
        return None


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    limiter = _thread_limit()
    try:
        cfg = build_config(args)
        try:
            return COMMANDS[args.command](cfg)
        except (FileNotFoundError, ManifestError) as exc:
            _write_status(cfg, EXIT_MISSING, "%s: missing input: %s" % (args.command, exc))
            return EXIT_MISSING
        except (GridError, IndicialError, WeightError) as exc:
            _write_status(cfg, EXIT_INVALID, "%s: invalid argument: %s" % (args.command, exc))
            return EXIT_INVALID
        except (SolveError, MarchingError, MetricError, glue.GlueError) as exc:
            _write_status(cfg, EXIT_NUMERICAL, "%s: numerical failure: %s" % (args.command, exc))
            return EXIT_NUMERICAL
    except (ManifestError, FileNotFoundError) as exc:
        print("missing input: %s" % exc, file=sys.stderr)
        return EXIT_MISSING
    except GridError as exc:
        print("invalid argument: %s" % exc, file=sys.stderr)
        return EXIT_INVALID
    finally:
        if limiter is not None:
            getattr(limiter, "restore_original_limits", lambda: None)()


if __name__ == "__main__":
    sys.exit(main())
