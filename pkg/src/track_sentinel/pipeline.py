"""End-to-end runs: track -> dynamics -> spatial resampling -> index-1 -> detection.

Run directory layout (one per sampled speed)::

    run-0007/
        run.json              scenario, seed, speed, status, config snapshot
        profile.csv (+.json)  track elevation
        accel.csv (+.json)    sensor accelerations vs. time
        accel_spatial.csv     accelerations vs. train-head position
        index1.csv (+.json)   coefficient sums per sensor
        report.json           detection report (when thresholds are available)

The scenario directory additionally holds ``config.yaml``, ``stats.json``
(when calibrated here), ``summary.json`` and ``summary.csv``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml
from scipy import stats as sps

from .config import CALIBRATION_STREAM, DETECTION_STREAM, ScenarioConfig, run_seed
from .detect import BaselineStats, DetectionReport, analyze, calibrate_baseline
from .dynamics import AccelerationRecord, SpatialSeries, resample_spatial, simulate_train_passage
from .track import TrackProfile, harmonic_profile, random_profile, superpose, write_profile_csv
from .wavelet import IndexSeries, cwt, index_series, make_scale_grid, write_scalogram

logger = logging.getLogger(__name__)

__all__ = [
    "ContaminatedBaselineError",
    "RunResult",
    "build_profile",
    "position_range",
    "execute_run",
    "calibrate",
    "simulate",
    "sweep",
    "detect_directory",
    "summarize",
    "resolve_jobs",
]

JOBS_ENV = "TRACK_SENTINEL_JOBS"


class ContaminatedBaselineError(RuntimeError):
    """Calibration refused: the scenario contains local irregularities."""


@dataclass
class RunResult:
    run_id: str
    index: int
    seed: int
    speed_kmh: float
    record: AccelerationRecord
    spatial: SpatialSeries
    index1: IndexSeries
    report: DetectionReport | None = None


def resolve_jobs(jobs: int | None) -> int:
    """Worker count: TRACK_SENTINEL_JOBS wins over ``jobs``; 0 or None means all cores."""
    env = os.environ.get(JOBS_ENV)
    if env:
        try:
            jobs = int(env)
        except ValueError:
            raise ValueError(f"{JOBS_ENV} must be an integer, got {env!r}") from None
    if not jobs or jobs < 1:
        jobs = os.cpu_count() or 1
    return jobs


def build_profile(cfg: ScenarioConfig, seed: int) -> TrackProfile:
    """Random irregularity plus the scenario's bumps on the configured grid.

    The random part uses ``track.random.seed`` when set (one fixed initial
    track for every run) and the run seed otherwise.
    """
    tr = cfg.track
    parts = []
    if tr.random.enabled:
        track_seed = tr.random.seed if tr.random.seed is not None else seed
        parts.append(random_profile(tr.random.spec(track_seed, tr.grid_step, cfg.base_dir), tr.domain))
    for bump in tr.bumps:
        parts.append(harmonic_profile(bump.build(), tr.grid_step, tr.domain))
    if not parts:
        n = int(round((tr.domain[1] - tr.domain[0]) / tr.grid_step)) + 1
        return TrackProfile(tr.grid_step, np.zeros(n), tr.domain[0])
    return superpose(parts)


def position_range(cfg: ScenarioConfig) -> tuple[float, float]:
    """Head positions while any axle is on the bridge."""
    train = cfg.train.build(1.0)
    return 0.0, float(train.length + cfg.beam.span_L)


def _scale_grid(cfg: ScenarioConfig):
    a = cfg.analysis
    return make_scale_grid(a.spatial_step, a.band, a.n_scales, a.wavelet)


def _run_id(index: int) -> str:
    return f"run-{index:04d}"


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def execute_run(cfg: ScenarioConfig, index: int, speed_kmh: float, *, stream: int = DETECTION_STREAM,
                run_dir: Path | None = None, stats: BaselineStats | None = None) -> RunResult:
    """Simulate one passage and compute its index-1 (and report, given ``stats``)."""
    seed = run_seed(cfg.seed, index, stream)
    run_id = _run_id(index)
    meta = {
        "scenario": cfg.scenario,
        "run_id": run_id,
        "index": index,
        "stream": stream,
        "master_seed": cfg.seed,
        "run_seed": seed,
        "speed_kmh": speed_kmh,
        "status": "incomplete",
        "config": cfg.to_dict(),
    }
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        _write_json(run_dir / "run.json", meta)

    v = speed_kmh / 3.6
    beam = cfg.beam.build()
    train = cfg.train.build(v)
    sensors = cfg.sensor_layout()
    profile = build_profile(cfg, seed)
    s = cfg.sampling
    record = simulate_train_passage(beam, train, profile, sensors, s.fs, oversample=s.oversample,
                                    run_in=s.run_in, tail=s.tail)
    spatial = resample_spatial(record, spatial_step=cfg.analysis.spatial_step, position_range=position_range(cfg))
    grid = _scale_grid(cfg)
    sensor_ids = tuple(range(1, len(sensors) + 1))
    index1 = index_series(spatial.positions, spatial.acc, grid, sensor_ids, run_id)
    index1.metadata.update(speed_kmh=speed_kmh, scenario=cfg.scenario)

    report = None
    if stats is not None:
        report = analyze(index1, stats, carriage_length=cfg.train.carriage_length, span=cfg.beam.span_L,
                         params=cfg.detection, axle_offsets=train.offsets, scenario=cfg.scenario,
                         speed_kmh=speed_kmh)

    if run_dir is not None:
        write_profile_csv(profile, run_dir / "profile.csv")
        _write_json(run_dir / "profile.json", {
            "grid_step_m": profile.grid_step,
            "origin_m": profile.origin,
            "bumps": [b.to_dict() for b in profile.bumps],
            "random_seed": cfg.track.random.seed if cfg.track.random.seed is not None else seed,
        })
        record.metadata = {"run_id": run_id, "speed_kmh": speed_kmh}
        record.write_csv(run_dir / "accel.csv")
        spatial.write_csv(run_dir / "accel_spatial.csv")
        index1.write_csv(run_dir / "index1.csv")
        _write_json(run_dir / "index1.json", {
            "run_id": run_id,
            "speed_kmh": speed_kmh,
            "band_per_m": list(cfg.analysis.band),
            "n_scales": cfg.analysis.n_scales,
            "wavelet": cfg.analysis.wavelet,
            "spatial_step_m": cfg.analysis.spatial_step,
        })
        if cfg.analysis.save_scalogram:
            for sid, row in zip(sensor_ids, spatial.acc):
                write_scalogram(cwt(row, grid, origin=float(spatial.positions[0])), run_dir / f"scalogram_s{sid}.bin")
        if report is not None:
            write_report(report, stats, run_dir / "report.json")
        meta["status"] = "complete"
        _write_json(run_dir / "run.json", meta)
    return RunResult(run_id, index, seed, speed_kmh, record, spatial, index1, report)


def write_report(report: DetectionReport, stats: BaselineStats, path: Path) -> None:
    data = report.to_dict()
    data["baseline"] = stats.to_dict()
    _write_json(path, data)


def _worker(args):
    cfg, index, speed, stream, run_dir, stats = args
    res = execute_run(cfg, index, speed, stream=stream, run_dir=run_dir, stats=stats)
    # the parent only needs the light parts
    return res.index, res.index1, res.report


def _run_many(cfg: ScenarioConfig, speeds, *, stream: int, out: Path | None, stats, jobs: int):
    tasks = [(cfg, k, sp, stream, None if out is None else out / _run_id(k), stats) for k, sp in enumerate(speeds)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            results = list(pool.map(_worker, tasks))
    else:
        results = [_worker(t) for t in tasks]
    results.sort(key=lambda r: r[0])
    return results


def calibrate(cfg: ScenarioConfig, n_runs: int | None = None, *, jobs: int = 1,
              out: Path | None = None) -> BaselineStats:
    """Baseline thresholds from ``n_runs`` bump-free passages."""
    if cfg.has_bumps:
        raise ContaminatedBaselineError(
            f"scenario {cfg.scenario!r} has {len(cfg.track.bumps)} local irregularities; "
            "a baseline must be calibrated on an undamaged track"
        )
    n = cfg.baseline.runs if n_runs is None else n_runs
    speeds = cfg.speed.speeds(cfg.seed, n, stream=CALIBRATION_STREAM)
    logger.info("calibrating %s on %d baseline runs", cfg.scenario, n)
    results = _run_many(cfg, speeds, stream=CALIBRATION_STREAM, out=None, stats=None, jobs=jobs)
    stats = calibrate_baseline([r[1] for r in results])
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        stats.write_json(out / "stats.json")
    return stats


def _snapshot(cfg: ScenarioConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))


def _load_stats(cfg: ScenarioConfig) -> BaselineStats | None:
    if cfg.baseline.stats is None:
        return None
    return BaselineStats.read_json(cfg.base_dir / cfg.baseline.stats)


def simulate(cfg: ScenarioConfig, out: Path, *, jobs: int = 1) -> list[str]:
    """Write run directories for the configured speeds; detection only if a
    stats file is configured.  Returns the run ids."""
    _snapshot(cfg, out)
    speeds = cfg.speed.speeds(cfg.seed, None if cfg.speed.policy == "sweep" else 1)
    results = _run_many(cfg, speeds, stream=DETECTION_STREAM, out=out, stats=_load_stats(cfg), jobs=jobs)
    return [_run_id(r[0]) for r in results]


def sweep(cfg: ScenarioConfig, out: Path, *, jobs: int = 1, stats: BaselineStats | None = None) -> dict:
    """Full pipeline over the speed sample, with a summary on disk.

    Thresholds come from ``stats``, else ``baseline.stats``, else a
    calibration of the same scenario without bumps.
    """
    _snapshot(cfg, out)
    stats = stats or _load_stats(cfg)
    if stats is None:
        stats = calibrate(cfg.without_bumps(), jobs=jobs, out=out)
    speeds = cfg.speed.speeds(cfg.seed, None if cfg.speed.policy == "sweep" else 1)
    results = _run_many(cfg, speeds, stream=DETECTION_STREAM, out=out, stats=stats, jobs=jobs)
    reports = {_run_id(k): rep for k, _, rep in results}
    summary = summarize(cfg, reports)
    _write_json(out / "summary.json", summary)
    _write_summary_csv(cfg, reports, out / "summary.csv")
    return summary


def _errors(cfg: ScenarioConfig, report: DetectionReport) -> list[float]:
    """Signed error of the nearest estimate for every true bump (nan if none)."""
    out = []
    for b in cfg.track.bumps:
        if report.estimates:
            est = min(report.positions, key=lambda p: (abs(p - b.position), p))
            out.append(est - b.position)
        else:
            out.append(math.nan)
    return out


def summarize(cfg: ScenarioConfig, reports: dict[str, DetectionReport]) -> dict:
    """Detection rate, localization error statistics and the speed sample check."""
    ids = sorted(reports)
    reps = [reports[i] for i in ids]
    n = len(reps)
    speeds = np.array([r.speed_kmh for r in reps], dtype=float)
    tol = cfg.detection.tol
    truth = [b.position for b in cfg.track.bumps]
    summary = {
        "scenario": cfg.scenario,
        "master_seed": cfg.seed,
        "n_runs": n,
        "truth_positions_m": truth,
        "detection_rate": sum(r.detected for r in reps) / n if n else math.nan,
        "localized_rate": sum(r.status == "localized" for r in reps) / n if n else math.nan,
        "speed_kmh": {
            "min": float(speeds.min()) if n else math.nan,
            "max": float(speeds.max()) if n else math.nan,
            "mean": float(speeds.mean()) if n else math.nan,
        },
    }
    sp = cfg.speed
    if sp.policy == "sweep" and sp.distribution == "uniform" and n >= 2:
        ks = sps.kstest(speeds, "uniform", args=(sp.min_kmh, sp.max_kmh - sp.min_kmh))
        summary["speed_kmh"]["ks_pvalue_uniform"] = float(ks.pvalue)

    selection = {str(row["id"]): 0 for row in reps[0].sensors} if n else {}
    for r in reps:
        for s in r.selected:
            selection[str(s)] = selection.get(str(s), 0) + 1
    summary["selection_rate"] = {k: v / n for k, v in selection.items()} if n else {}

    if truth:
        errs = np.array([_errors(cfg, r) for r in reps], dtype=float).reshape(n, len(truth))
        per_bump = []
        for j, pos in enumerate(truth):
            e = errs[:, j]
            ok = np.isfinite(e)
            per_bump.append({
                "truth_m": pos,
                "within_tol_rate": float(np.mean(np.abs(np.where(ok, e, np.inf)) <= tol)),
                "mean_error_m": float(e[ok].mean()) if ok.any() else math.nan,
                "std_error_m": float(e[ok].std(ddof=1)) if ok.sum() > 1 else math.nan,
                "max_abs_error_m": float(np.abs(e[ok]).max()) if ok.any() else math.nan,
            })
        summary["localization"] = per_bump
        summary["exact_count_rate"] = sum(len(r.estimates) == len(truth) for r in reps) / n
        spurious = [sum(all(abs(p - t) > tol for t in truth) for p in r.positions) for r in reps]
        summary["spurious_estimates_mean"] = float(np.mean(spurious))
    return _finite(summary)


def _finite(obj):
    """JSON has no NaN: map non-finite floats to None."""
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _write_summary_csv(cfg: ScenarioConfig, reports: dict[str, DetectionReport], path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run_id", "speed_kmh", "status", "selected", "n_estimates", "estimates_m", "errors_m"])
        for rid in sorted(reports):
            r = reports[rid]
            w.writerow([
                rid,
                repr(float(r.speed_kmh)),
                r.status,
                " ".join(str(s) for s in r.selected),
                len(r.estimates),
                " ".join(repr(float(p)) for p in r.positions),
                " ".join(repr(float(e)) for e in _errors(cfg, r)),
            ])


def _run_dirs(path: Path) -> list[Path]:
    if (path / "index1.csv").is_file():
        return [path]
    dirs = sorted(p for p in path.iterdir() if p.is_dir() and (p / "index1.csv").is_file())
    if not dirs:
        raise FileNotFoundError(f"no run artifacts (index1.csv) under {path}")
    return dirs


def detect_directory(path: Path, stats: BaselineStats) -> dict[str, DetectionReport]:
    """Re-run detection on existing run directories (a run or a scenario dir)."""
    reports = {}
    for run_dir in _run_dirs(Path(path)):
        meta = json.loads((run_dir / "run.json").read_text())
        if meta.get("status") != "complete":
            logger.warning("%s is flagged incomplete; skipped", run_dir)
            continue
        cfg = ScenarioConfig.from_dict(meta["config"])
        index1 = IndexSeries.read_csv(run_dir / "index1.csv", run_id=meta["run_id"])
        train = cfg.train.build(meta["speed_kmh"] / 3.6)
        report = analyze(index1, stats, carriage_length=cfg.train.carriage_length, span=cfg.beam.span_L,
                         params=cfg.detection, axle_offsets=train.offsets, scenario=cfg.scenario,
                         speed_kmh=meta["speed_kmh"])
        write_report(report, stats, run_dir / "report.json")
        reports[meta["run_id"]] = report
    return reports
