"""Thresholding, sensor screening and periodicity-based localization.

The index-1 curve of each sensor is compared with a baseline threshold
F = mu + 3 sigma.  Sensors that exceed it are ranked by their mutation
degree max(S) / F, the weakest are dropped, and the local peaks of the
survivors (index-2) are chained at the carriage period.  The start of a
chain marks the head position at which the leading wheelset met the
defect.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.signal import find_peaks

from .wavelet import IndexSeries

logger = logging.getLogger(__name__)

MIN_BASELINE_RUNS = 10
SIGMA_FACTOR = 3.0


class DetectionError(ValueError):
    pass


class NoDetectionError(DetectionError):
    """No sensor exceeded its threshold."""


@dataclass(frozen=True, eq=False)
class BaselineStats:
    sensor_ids: tuple[int, ...]
    mu: np.ndarray
    sigma: np.ndarray
    n_runs: int = 0
    n_samples: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sensor_ids", tuple(int(s) for s in self.sensor_ids))
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float))
        if np.any(self.sigma < 0):
            raise DetectionError("sigma must be non-negative")

    @property
    def threshold(self) -> np.ndarray:
        return self.mu + SIGMA_FACTOR * self.sigma

    def index_of(self, sensor_id: int) -> int:
        return self.sensor_ids.index(sensor_id)

    def to_dict(self) -> dict:
        return {
            "sensor_ids": list(self.sensor_ids),
            "mu": [float(m) for m in self.mu],
            "sigma": [float(s) for s in self.sigma],
            "threshold": [float(f) for f in self.threshold],
            "sigma_factor": SIGMA_FACTOR,
            "n_runs": self.n_runs,
            "n_samples": self.n_samples,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read_json(cls, path) -> BaselineStats:
        d = json.loads(Path(path).read_text())
        return cls(tuple(d["sensor_ids"]), np.array(d["mu"]), np.array(d["sigma"]),
                   d.get("n_runs", 0), d.get("n_samples", 0))


def calibrate_baseline(baseline_runs: Sequence[IndexSeries], min_runs: int = MIN_BASELINE_RUNS) -> BaselineStats:
    """Pool the interior index-1 samples of all runs, per sensor.

    Runs are keyed by ``run_id``: a repeated id contributes once, and the
    pooling order is the sorted id order, so the result does not depend on
    how the runs arrive.
    """
    unique: dict[str, IndexSeries] = {}
    for run in baseline_runs:
        prev = unique.get(run.run_id)
        if prev is not None and not (prev.values.shape == run.values.shape
                                     and np.array_equal(prev.values, run.values)):
            raise DetectionError(f"two different baseline runs share the id {run.run_id!r}")
        unique.setdefault(run.run_id, run)
    if len(unique) < min_runs:
        raise DetectionError(f"{len(unique)} baseline runs given, at least {min_runs} are required")
    runs = [unique[k] for k in sorted(unique)]
    ids = runs[0].sensor_ids
    if any(r.sensor_ids != ids for r in runs):
        raise DetectionError("baseline runs do not share the same sensor set")
    pooled = np.hstack([r.values[:, r.interior] for r in runs])
    if pooled.shape[1] < 2:
        raise DetectionError("not enough interior samples to estimate a spread")
    mu = pooled.mean(axis=1)
    sigma = pooled.std(axis=1, ddof=1)
    return BaselineStats(ids, mu, sigma, len(runs), int(pooled.shape[1]))


def _interior_values(index: IndexSeries, sensor_id: int) -> np.ndarray:
    values = index.sensor(sensor_id).copy()
    values[index.mask] = 0.0
    return values


def _check_sensors(index: IndexSeries, stats: BaselineStats) -> None:
    if index.sensor_ids != stats.sensor_ids:
        raise DetectionError(f"index sensors {index.sensor_ids} differ from baseline {stats.sensor_ids}")


def longest_exceedance(index: IndexSeries, stats: BaselineStats) -> dict[int, int]:
    """Longest run of consecutive interior samples above F, per sensor."""
    _check_sensors(index, stats)
    out = {}
    for sid, f in zip(stats.sensor_ids, stats.threshold):
        above = (_interior_values(index, sid) > f).astype(np.int8)
        if not above.any():
            out[sid] = 0
            continue
        edges = np.diff(np.concatenate(([0], above, [0])))
        starts, ends = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
        out[sid] = int((ends - starts).max())
    return out


def detect(index: IndexSeries, stats: BaselineStats, debounce: int = 3) -> dict[int, bool]:
    """Flag a sensor once ``debounce`` consecutive interior samples exceed F."""
    if debounce < 1:
        raise DetectionError("debounce must be at least 1")
    return {sid: run >= debounce for sid, run in longest_exceedance(index, stats).items()}


def mutation_degrees(index: IndexSeries, stats: BaselineStats) -> dict[int, float]:
    """max S / F over interior positions, per sensor."""
    _check_sensors(index, stats)
    return {
        sid: float(_interior_values(index, sid).max() / f) if f > 0 else math.inf
        for sid, f in zip(stats.sensor_ids, stats.threshold)
    }


def screen_sensors(degrees: Mapping[int, float], flags: Mapping[int, bool], keep_ratio: float = 0.5) -> list[int]:
    """Flagged sensors whose mutation degree reaches ``keep_ratio`` of the largest."""
    flagged = [sid for sid, f in flags.items() if f]
    if not flagged:
        raise NoDetectionError("no irregularity detected: no sensor exceeds its threshold")
    top = max(degrees[sid] for sid in flagged)
    return sorted(sid for sid in flagged if degrees[sid] >= keep_ratio * top)


@dataclass(frozen=True)
class Peak:
    position: float
    value: float
    ratio: float


def _parabolic_apex(y: np.ndarray, i: int) -> tuple[float, float]:
    if i <= 0 or i >= y.size - 1:
        return 0.0, float(y[i])
    a, b, c = y[i - 1], y[i], y[i + 1]
    denom = a - 2.0 * b + c
    if denom >= 0:
        return 0.0, float(b)
    delta = 0.5 * (a - c) / denom
    return float(delta), float(b - 0.25 * (a - c) * delta)


def extract_peaks(index: IndexSeries, stats: BaselineStats, sensor_id: int,
                  min_separation: float = 1.0) -> list[Peak]:
    """Local maxima of S above F with prominence >= sigma, at least
    ``min_separation`` apart (the larger one wins), refined to the apex of
    a parabola through the three top samples."""
    _check_sensors(index, stats)
    k = stats.index_of(sensor_id)
    f, sigma = float(stats.threshold[k]), float(stats.sigma[k])
    y = _interior_values(index, sensor_id)
    distance = max(1, int(round(min_separation / index.step)))
    idx, _ = find_peaks(y, height=f if f > 0 else None, prominence=sigma if sigma > 0 else None,
                        distance=distance)
    peaks = []
    for i in idx:
        if y[i] <= f:
            continue
        delta, apex = _parabolic_apex(y, int(i))
        peaks.append(Peak(float(index.positions[i] + delta * index.step), apex, apex / f if f > 0 else math.inf))
    return peaks


@dataclass(frozen=True)
class Chain:
    peaks: tuple[Peak, ...]

    @property
    def origin(self) -> float:
        return self.peaks[0].position

    @property
    def positions(self) -> list[float]:
        return [p.position for p in self.peaks]

    @property
    def mean_ratio(self) -> float:
        return float(np.mean([p.ratio for p in self.peaks]))

    def __len__(self):
        return len(self.peaks)


def _as_peaks(peaks: Iterable) -> list[Peak]:
    out = [p if isinstance(p, Peak) else Peak(float(p), math.nan, math.nan) for p in peaks]
    return sorted(out, key=lambda p: p.position)


def match_periodicity(peaks, carriage_length: float, tol: float = 1.5, min_chain: int = 3) -> list[Chain]:
    """Greedy chains of peaks spaced by the carriage length.

    From every peak, successive members are taken at origin + k C within
    ``tol`` (nearest first, ties to the smaller position) until one is
    missing.  Chains shorter than ``min_chain`` are dropped; a chain sharing
    more than half of its members with a chain of earlier origin is folded
    into that one.  Plain floats are accepted in place of ``Peak`` objects.
    """
    if carriage_length <= 0:
        raise DetectionError("carriage length must be positive")
    if not 0 <= tol < carriage_length / 4:
        raise DetectionError("tolerance must be below a quarter of the carriage length")
    peaks = _as_peaks(peaks)
    positions = np.array([p.position for p in peaks])
    candidates = []
    for start in range(len(peaks)):
        members = [start]
        k = 1
        while True:
            target = positions[start] + k * carriage_length
            near = np.flatnonzero(np.abs(positions - target) <= tol)
            near = [j for j in near if j not in members]
            if not near:
                break
            members.append(min(near, key=lambda j: (abs(positions[j] - target), positions[j])))
            k += 1
        if len(members) >= min_chain:
            candidates.append(members)
    kept: list[list[int]] = []
    for members in candidates:
        if any(len(set(members) & set(other)) > 0.5 * min(len(members), len(other)) for other in kept):
            continue
        kept.append(members)
    return [Chain(tuple(peaks[j] for j in members)) for members in kept]


def screen_peaks(peaks: Sequence[Peak], keep_ratio: float = 0.5) -> list[Peak]:
    """Keep peaks whose exceedance ratio is at least ``keep_ratio`` times the
    sensor's strongest peak.  Side lobes of the wheelset peaks repeat with
    the same period but sit barely above F, and would otherwise form
    chains of their own."""
    if not peaks or keep_ratio <= 0:
        return list(peaks)
    best = max(p.ratio for p in peaks)
    if not np.isfinite(best):
        return list(peaks)
    return [p for p in peaks if p.ratio >= keep_ratio * best]


@dataclass(frozen=True)
class Estimate:
    position_m: float
    sensors: tuple[int, ...]
    chain_len: int
    confidence: float
    supporting_peaks: tuple[float, ...] = ()


@dataclass
class DetectionReport:
    status: str
    sensors: list[dict]
    selected: list[int]
    estimates: list[Estimate]
    periodicity_interval: float
    scenario: str = ""
    speed_kmh: float = float("nan")
    params: dict = field(default_factory=dict)
    peaks: dict = field(default_factory=dict)
    chains: dict = field(default_factory=dict)
    rejected: list[float] = field(default_factory=list)

    @property
    def detected(self) -> bool:
        return self.status != "no-detection"

    @property
    def positions(self) -> list[float]:
        return [e.position_m for e in self.estimates]

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "speed_kmh": self.speed_kmh,
            "status": self.status,
            "sensors": self.sensors,
            "selected": self.selected,
            "estimates": [
                {
                    "position_m": e.position_m,
                    "sensors": list(e.sensors),
                    "chain_len": e.chain_len,
                    "confidence": e.confidence,
                    "supporting_peaks_m": list(e.supporting_peaks),
                }
                for e in self.estimates
            ],
            "periodicity_interval_m": self.periodicity_interval,
            "rejected_positions_m": self.rejected,
            "peaks": {str(k): [asdict(p) for p in v] for k, v in self.peaks.items()},
            "chains": {str(k): [c.positions for c in v] for k, v in self.chains.items()},
            "params": self.params,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _layout_steps(axle_offsets, carriage_length: float) -> list[float]:
    """Distances from the leading wheelset to the others inside one carriage."""
    if axle_offsets is None:
        return []
    offsets = np.asarray(axle_offsets, dtype=float)
    rel = offsets - offsets[0]
    return sorted({float(r) for r in rel if 0 < r < carriage_length})


def localize(
    chains: Mapping[int, Sequence[Chain]],
    selected: Sequence[int],
    *,
    span: float,
    tol: float = 1.5,
    offset: float = 0.0,
    axle_offsets=None,
    carriage_length: float | None = None,
    layout_tol: float = 0.5,
) -> tuple[list[Estimate], list[float]]:
    """Turn chain origins of the selected sensors into irregularity positions.

    When the wheelset layout is known, a chain whose origin trails an
    earlier chain by an intra-carriage axle distance (within
    ``layout_tol``) is the same defect met by a later wheelset and is folded
    into it.  Origins are head positions, the same for every sensor, so the
    earlier chain may come from any selected sensor.  Origins minus
    ``offset`` closer than ``tol`` then merge into one exceedance-weighted
    estimate.  Returns the estimates inside (0, span) and the rejected
    positions.
    """
    steps = _layout_steps(axle_offsets, carriage_length or math.inf)
    ordered = sorted(((chain.origin, sid, chain) for sid in selected for chain in chains.get(sid, ())),
                     key=lambda item: (item[0], item[1]))
    kept: list[list] = []  # origin, weight, sensors, chain_len, peaks
    for origin, sid, chain in ordered:
        host = next((k for k in kept if any(abs(origin - k[0] - d) <= layout_tol for d in steps)), None)
        if host is not None:
            host[2].add(sid)
            host[3] += len(chain)
            continue
        kept.append([origin, chain.mean_ratio, {sid}, len(chain), tuple(chain.positions)])
    found = [(origin - offset, weight, sensors, n, positions) for origin, weight, sensors, n, positions in kept]

    found.sort(key=lambda f: (f[0], min(f[2])))
    clusters: list[list] = []
    for item in found:
        if clusters and item[0] - clusters[-1][0][0] <= tol:
            clusters[-1].append(item)
        else:
            clusters.append([item])

    n_selected = max(1, len(selected))
    estimates, rejected = [], []
    for cl in clusters:
        w = np.array([c[1] for c in cl])
        w = np.where(np.isfinite(w) & (w > 0), w, 1.0)
        pos = float(np.sum(w * np.array([c[0] for c in cl])) / w.sum())
        if not 0.0 < pos < span:
            rejected.append(pos)
            continue
        sensors = tuple(sorted(set().union(*(c[2] for c in cl))))
        estimates.append(Estimate(
            position_m=pos,
            sensors=sensors,
            chain_len=max(c[3] for c in cl),
            confidence=len(sensors) / n_selected,
            supporting_peaks=tuple(sorted({p for c in cl for p in c[4]})),
        ))
    return estimates, rejected


@dataclass(frozen=True)
class DetectionParams:
    debounce: int = 6
    keep_ratio: float = 0.5
    min_separation: float = 1.0
    tol: float = 1.5
    min_chain: int = 3
    offset: float = 0.0
    layout_tol: float = 0.5
    peak_keep_ratio: float = 0.5


def analyze(
    index: IndexSeries,
    stats: BaselineStats,
    *,
    carriage_length: float,
    span: float,
    params: DetectionParams = DetectionParams(),
    axle_offsets=None,
    scenario: str = "",
    speed_kmh: float = float("nan"),
) -> DetectionReport:
    """Detection, screening, index-2 extraction, chaining and localization."""
    flags = detect(index, stats, params.debounce)
    degrees = mutation_degrees(index, stats)
    sensor_rows = [
        {"id": sid, "flagged": bool(flags[sid]), "mutation_degree": degrees[sid]}
        for sid in stats.sensor_ids
    ]
    common = dict(
        sensors=sensor_rows,
        periodicity_interval=carriage_length,
        scenario=scenario,
        speed_kmh=speed_kmh,
        params=asdict(params),
    )
    try:
        selected = screen_sensors(degrees, flags, params.keep_ratio)
    except NoDetectionError:
        return DetectionReport(status="no-detection", selected=[], estimates=[], **common)

    peaks = {sid: extract_peaks(index, stats, sid, params.min_separation) for sid in selected}
    peaks = {sid: screen_peaks(p, params.peak_keep_ratio) for sid, p in peaks.items()}
    chains = {sid: match_periodicity(peaks[sid], carriage_length, params.tol, params.min_chain)
              for sid in selected}
    estimates, rejected = localize(
        chains, selected, span=span, tol=params.tol, offset=params.offset,
        axle_offsets=axle_offsets, carriage_length=carriage_length, layout_tol=params.layout_tol,
    )
    status = "localized" if estimates else "detected-unlocalized"
    if not estimates:
        logger.warning("irregularity detected on sensors %s but no periodic peak chain found", selected)
    return DetectionReport(status=status, selected=selected, estimates=estimates,
                           peaks=peaks, chains=chains, rejected=rejected, **common)
