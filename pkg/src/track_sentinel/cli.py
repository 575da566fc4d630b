"""Command line interface.

Exit codes: 0 ok, 1 configuration error, 2 runtime or numerical error,
3 detection refused (calibration asked for on a damaged track).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__, pipeline
from .config import ConfigError, PRESETS, load_config
from .detect import MIN_BASELINE_RUNS, BaselineStats, DetectionError
from .dynamics import DynamicsError
from .plotting import KINDS, PlotError, emit_plot_data
from .track import TrackError
from .wavelet import WaveletError

logger = logging.getLogger("track_sentinel")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_REFUSED = 3


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1), not argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    p.add_argument("--out", type=Path, default=None, help="output directory (overrides the config)")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel runs; 0 = all cores (TRACK_SENTINEL_JOBS overrides)")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="track-sentinel",
        description="Simulate train passages over a bridge and detect local track irregularities "
                    "from multi-sensor accelerations.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    cfg_help = f"scenario YAML file or preset name ({', '.join(PRESETS)})"
    p = sub.add_parser("simulate", help="simulate the configured runs and write per-run artifacts")
    p.add_argument("config", help=cfg_help)
    _common(p)

    p = sub.add_parser("calibrate", help="baseline thresholds from bump-free runs")
    p.add_argument("config", help=cfg_help)
    p.add_argument("--runs", type=int, default=None, help="number of baseline runs (default: baseline.runs)")
    _common(p)

    p = sub.add_parser("detect", help="run detection on existing run directories")
    p.add_argument("run_dir", type=Path, help="a run directory or a scenario directory of runs")
    p.add_argument("--baseline", type=Path, required=True, help="stats.json written by calibrate")
    _common(p)

    p = sub.add_parser("sweep", help="full pipeline over the speed sample, with a summary")
    p.add_argument("config", help=cfg_help)
    p.add_argument("--baseline", type=Path, default=None, help="stats.json (default: calibrate first)")
    p.add_argument("--count", type=int, default=None, help="number of speeds (overrides speed.count)")
    _common(p)

    p = sub.add_parser("plot", help="plot bundle (CSV + JSON + PNG) for a run directory")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--kind", required=True, choices=KINDS + ("all",))
    _common(p)
    return parser


def _setup_logging(level: int) -> None:
    lvl = logging.WARNING if level <= 0 else logging.INFO if level == 1 else logging.DEBUG
    logging.basicConfig(level=lvl, format="%(levelname)s %(name)s: %(message)s")


def _config(args):
    cfg = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["output"] = str(args.out)
    count = getattr(args, "count", None)
    if count is not None:
        if count < 1:
            raise ConfigError(f"--count: must be at least 1, got {count}")
        changes["speed"] = dataclasses.replace(cfg.speed, count=count)
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _out(cfg) -> Path:
    out = Path(cfg.output)
    return out if out.is_absolute() else Path.cwd() / out


def _cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _out(cfg)
    ids = pipeline.simulate(cfg, out, jobs=pipeline.resolve_jobs(args.jobs))
    print(f"wrote {len(ids)} run(s) to {out}")
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    cfg = _config(args)
    if args.runs is not None and args.runs < MIN_BASELINE_RUNS:
        raise ConfigError(f"--runs: at least {MIN_BASELINE_RUNS} baseline runs are required, got {args.runs}")
    out = _out(cfg)
    stats = pipeline.calibrate(cfg, args.runs, jobs=pipeline.resolve_jobs(args.jobs), out=out)
    print(f"wrote {out / 'stats.json'} ({stats.n_runs} runs, F = "
          + ", ".join(f"{f:.4g}" for f in stats.threshold) + ")")
    return EXIT_OK


def _cmd_detect(args) -> int:
    try:
        stats = BaselineStats.read_json(args.baseline)
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"--baseline: cannot read {args.baseline}: {exc}") from None
    if not args.run_dir.exists():
        raise ConfigError(f"run_dir: {args.run_dir} does not exist")
    reports = pipeline.detect_directory(args.run_dir, stats)
    for rid, rep in sorted(reports.items()):
        pos = ", ".join(f"{p:.2f} m" for p in rep.positions) or "-"
        print(f"{rid}: {rep.status}; selected {rep.selected}; estimates {pos}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = _config(args)
    stats = None
    if args.baseline is not None:
        try:
            stats = BaselineStats.read_json(args.baseline)
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"--baseline: cannot read {args.baseline}: {exc}") from None
    out = _out(cfg)
    summary = pipeline.sweep(cfg, out, jobs=pipeline.resolve_jobs(args.jobs), stats=stats)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_plot(args) -> int:
    kinds = KINDS if args.kind == "all" else (args.kind,)
    for kind in kinds:
        for p in emit_plot_data(args.run_dir, kind):
            print(p)
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "calibrate": _cmd_calibrate,
    "detect": _cmd_detect,
    "sweep": _cmd_sweep,
    "plot": _cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except pipeline.ContaminatedBaselineError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except (PlotError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DynamicsError, TrackError, WaveletError, DetectionError, FloatingPointError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
