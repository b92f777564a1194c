"""Command-line interface: ``stamp <command> [options]``.

Every command reads and writes plain files under ``--out-dir``; tables are
comma-separated with a header row and figures are standalone SVG files.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import shotgrid as sg
from .errors import StampError
from .lgm.config import CORE_FLAGS, EXTENDED_FLAGS, ModelConfig

log = logging.getLogger("stamp")

BUNDLE_NAME = "fit.zip"
ALL_FLAGS = tuple(f[4:] for f in CORE_FLAGS + EXTENDED_FLAGS)


# -- helpers -------------------------------------------------------------------------------


def _out(args, name: str) -> Path:
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def _write_text(path: Path, text: str):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    log.info("wrote %s", path)


def _config_from_args(args) -> ModelConfig:
    kv = {}
    if getattr(args, "config", None):
        kv.update(ModelConfig.from_text(Path(args.config).read_text()).as_dict())
    if getattr(args, "use", None) is not None:
        on = {t.strip() for t in args.use.split(",") if t.strip()}
        unknown = on - set(ALL_FLAGS) - {"none"}
        if unknown:
            raise StampError(f"unknown component(s) {sorted(unknown)}; choose from {', '.join(ALL_FLAGS)}")
        kv.update({f"use_{f}": f in on for f in ALL_FLAGS})
    if getattr(args, "U_sd", None) is not None:
        kv["U_sd"] = args.U_sd
    if getattr(args, "U_slope", None) is not None:
        kv["U_slope"] = args.U_slope
    return ModelConfig(**kv)


def _read_data(path) -> tuple[sg.CountsAndExposure, sg.CountsAndExposure | None]:
    phases = sg.read_cells(path)
    if "regular" not in phases:
        raise StampError(f"{path} has no regular-season rows")
    return phases["regular"], phases.get("post")


def _csv(header, rows) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return out.getvalue()


def hyper_table(f) -> str:
    rows = [(k, repr(v["mean"]), repr(v["sd"])) for k, v in f.hyper_summary().items()]
    return _csv(("parameter", "mean", "sd"), rows)


def fixed_table(f) -> str:
    lay = f.layout()[0]
    b = lay.block("fixed")
    x = f.samples[:, b.start : b.stop]
    q = np.quantile(x, [0.025, 0.975], axis=0)
    rows = [(lab, repr(float(m)), repr(float(s)), repr(float(lo)), repr(float(hi)))
            for lab, m, s, lo, hi in zip(lay.fixed_labels, x.mean(axis=0), x.std(axis=0, ddof=1) if f.J > 1
                                         else np.zeros(b.size), q[0], q[1])]
    return _csv(("parameter", "mean", "sd", "q2.5", "q97.5"), rows)


def _slug(text: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in str(text))


# -- commands ------------------------------------------------------------------------------


def cmd_synth(args):
    from .synth import GroundTruth, realize

    if args.truth:
        truth = GroundTruth.from_text(Path(args.truth).read_text())
    else:
        truth = GroundTruth(n_teams=args.teams, n_seasons=args.seasons)
    r = realize(truth, args.seed, args.count_seed)
    path = _out(args, "cells.csv")
    sg.write_cells(path, r.regular, r.post)
    log.info("wrote %s", path)
    _write_text(_out(args, "truth.txt"), truth.to_text())
    _write_text(_out(args, "latent.csv"), _csv(("index", "value"), ((j, repr(float(v))) for j, v in enumerate(r.x))))


def cmd_fit(args):
    from .inference import fit
    from .report import lr_bias, lr_to_csv, render_lr_svg

    reg, _ = _read_data(args.data)
    cfg = _config_from_args(args)
    f = fit(cfg, reg, J=args.J, seed=args.seed, strategy=args.strategy)
    f.save(_out(args, BUNDLE_NAME))
    log.info("wrote %s", _out(args, BUNDLE_NAME))
    _write_text(_out(args, "hyper.csv"), hyper_table(f))
    _write_text(_out(args, "fixed.csv"), fixed_table(f))
    if cfg.use_ts:
        rows = lr_bias(f)
        _write_text(_out(args, "lr.csv"), lr_to_csv(rows))
        _write_text(_out(args, "lr.svg"), render_lr_svg(rows))
    t = f.timing
    print(f"fit {cfg.label()}: {f.n_evals} evaluations, {len(f.weights)} integration points, "
          f"{t.get('total', 0.0):.1f} s", file=sys.stderr)


def _compare(args, kind: str):
    from .evaluation import compare_core, compare_extended

    reg, post = _read_data(args.data)
    if post is None:
        raise StampError(f"{args.data} has no post-season rows to score")
    fn = compare_core if kind == "core" else compare_extended
    table = fn(reg, post, U_sd=args.U_sd, U_slope=args.U_slope, seed=args.seed, J=args.J, threads=args.threads)
    name = f"compare_{kind}"
    _write_text(_out(args, name + ".csv"), table.to_csv())
    text = table.to_text()
    _write_text(_out(args, name + ".txt"), text)
    print(text, end="")


def cmd_compare_core(args):
    _compare(args, "core")


def cmd_compare_extended(args):
    _compare(args, "extended")


def cmd_ppc_grid(args):
    from .ppc import grid_search, reports_to_csv, reports_to_text

    reg, _ = _read_data(args.data)
    cfg = _config_from_args(args)
    reports = grid_search(reg, args.seed, R=args.R, config=cfg, fixed_mode=args.fixed_mode)
    _write_text(_out(args, "ppc_grid.csv"), reports_to_csv(reports))
    text = reports_to_text(reports)
    _write_text(_out(args, "ppc_grid.txt"), text)
    print(text, end="")


def cmd_report_map(args):
    from .inference import PosteriorFit
    from .report import maps_to_csv, percentile_map, render_map_svg

    f = PosteriorFit.load(args.fit)
    teams = f.index.teams if args.team is None else (args.team,)
    seasons = f.index.seasons if args.season is None else (args.season,)
    maps = []
    for s in seasons:
        for t in teams:
            m = percentile_map(f, t, s, args.shot_type, side_scaling=args.side_scaling)
            maps.append(m)
            _write_text(_out(args, f"map_{_slug(t)}_{_slug(s)}_{args.shot_type}.svg"), render_map_svg(m))
    _write_text(_out(args, f"maps_{args.shot_type}.csv"), maps_to_csv(maps))


def cmd_report_lr(args):
    from .inference import PosteriorFit
    from .report import lr_bias, lr_to_csv, render_lr_svg

    rows = lr_bias(PosteriorFit.load(args.fit))
    _write_text(_out(args, "lr.csv"), lr_to_csv(rows))
    _write_text(_out(args, "lr.svg"), render_lr_svg(rows))


def cmd_report_tables(args):
    from .evaluation import ComparisonTable

    for path in args.tables:
        table = ComparisonTable.from_csv(Path(path).read_text())
        text = table.to_text(args.top)
        _write_text(_out(args, Path(path).stem + ".txt"), text)
        print(text, end="")


# -- parser --------------------------------------------------------------------------------


GLOBAL_DEFAULTS = {"seed": 0, "threads": 1, "out_dir": ".", "verbose": False}


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the command name
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, help="random seed (default 0)")
    common.add_argument("--threads", type=int, help="worker processes for multi-fit commands (default 1)")
    common.add_argument("--out-dir", dest="out_dir", help="output directory (default .)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="stamp", parents=[common],
                                description="Shot-type-aware areal multilevel Poisson models for shot charts.")
    sub = p.add_subparsers(dest="command", required=True)

    def model_opts(q, use_default=None):
        q.add_argument("--config", help="key=value model configuration file")
        q.add_argument("--use", default=use_default,
                       help=f"comma-separated components to switch on ({', '.join(ALL_FLAGS)}); 'none' for none")
        q.add_argument("--U-sd", dest="U_sd", type=float, help="PC-prior scale for standard deviations")
        q.add_argument("--U-slope", dest="U_slope", type=float, help="PC-prior scale for slope standard deviations")

    q = sub.add_parser("synth", parents=[common], help="generate a synthetic league")
    q.add_argument("--truth", help="ground-truth key=value file (default: calibrated defaults)")
    q.add_argument("--teams", type=int, default=20)
    q.add_argument("--seasons", type=int, default=2)
    q.add_argument("--count-seed", dest="count_seed", type=int, help="separate seed for the Poisson counts")
    q.set_defaults(func=cmd_synth)

    q = sub.add_parser("fit", parents=[common], help="fit one configuration to regular-season data")
    q.add_argument("--data", required=True, help="aggregated-cell CSV")
    model_opts(q)
    q.add_argument("--J", type=int, default=400, help="posterior samples")
    q.add_argument("--strategy", choices=("ccd", "grid"), default="ccd")
    q.set_defaults(func=cmd_fit)

    for kind, fn in (("core", cmd_compare_core), ("extended", cmd_compare_extended)):
        q = sub.add_parser(f"compare-{kind}", parents=[common], help=f"fit and score the {kind} structures")
        q.add_argument("--data", required=True, help="aggregated-cell CSV with regular and post phases")
        q.add_argument("--U-sd", dest="U_sd", type=float, default=1.5)
        q.add_argument("--U-slope", dest="U_slope", type=float, default=1.0)
        q.add_argument("--J", type=int, default=400)
        q.set_defaults(func=fn)

    q = sub.add_parser("ppc-grid", parents=[common], help="prior predictive checks over the U grid")
    q.add_argument("--data", required=True, help="aggregated-cell CSV (regular phase is used)")
    model_opts(q)
    q.add_argument("--R", type=int, default=800, help="replicates per grid point")
    q.add_argument("--fixed-mode", dest="fixed_mode", choices=("prior", "plugin"), default="prior")
    q.set_defaults(func=cmd_ppc_grid)

    q = sub.add_parser("report", parents=[common], help="maps, left/right bias and tables")
    rsub = q.add_subparsers(dest="report", required=True)
    r = rsub.add_parser("map", parents=[common], help="percentile maps as SVG and CSV")
    r.add_argument("--fit", required=True, help="fit bundle")
    r.add_argument("--team", help="team id (default: every team)")
    r.add_argument("--season", help="season id (default: every season)")
    r.add_argument("--shot-type", dest="shot_type", default="jump_shot", choices=sg.SHOT_TYPES)
    r.add_argument("--side-scaling", dest="side_scaling", action=argparse.BooleanOptionalAction, default=None,
                   help="include team-by-side effects (default: when the fit has them)")
    r.set_defaults(func=cmd_report_map)
    r = rsub.add_parser("lr", parents=[common], help="left/right bias caterpillar as SVG and CSV")
    r.add_argument("--fit", required=True, help="fit bundle")
    r.set_defaults(func=cmd_report_lr)
    r = rsub.add_parser("tables", parents=[common], help="render comparison CSVs as aligned text")
    r.add_argument("tables", nargs="+", help="compare_core.csv / compare_extended.csv files")
    r.add_argument("--top", type=int, help="show only the best rows")
    r.set_defaults(func=cmd_report_tables)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    # set here rather than with set_defaults, which would also reset the shared subcommand actions
    for key, value in GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s",
                        stream=sys.stderr)
    try:
        args.func(args)
    except (StampError, OSError, ValueError, KeyError) as exc:
        print(f"stamp: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
