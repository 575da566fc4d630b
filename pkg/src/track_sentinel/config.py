"""Scenario configuration files.

A scenario is one YAML document.  Every section is optional and falls back
to the defaults below; unknown keys are rejected so typos do not silently
revert to a default.  Validation errors carry the dotted path of the
offending field, e.g. ``beam.span_L: must be positive``.

Seeds
-----
Each run ``k`` of a scenario draws everything random (its speed, and its
track when ``track.random.seed`` is null) from
``numpy.random.SeedSequence([master_seed, stream, k])``, where ``stream``
is 0 for detection runs and 1 for baseline calibration runs.  A single run
can therefore be regenerated from the master seed and its index alone.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from . import dynamics
from .detect import DetectionParams
from .track import HarmonicBump, RandomProfileSpec, TrackError, default_psd_table, read_psd_csv

__all__ = [
    "ConfigError",
    "BeamSection",
    "TrainSection",
    "RandomSection",
    "BumpSection",
    "TrackSection",
    "SpeedSection",
    "SamplingSection",
    "AnalysisSection",
    "BaselineSection",
    "ScenarioConfig",
    "load_config",
    "run_seed",
    "preset_path",
    "PRESETS",
]

DETECTION_STREAM = 0
CALIBRATION_STREAM = 1
PRESETS = ("baseline", "single-1", "single-2", "single-3", "multiple-1", "multiple-2", "multiple-3")


class ConfigError(ValueError):
    """Invalid scenario configuration; the message starts with the field path."""


def run_seed(master_seed: int, index: int, stream: int = DETECTION_STREAM) -> int:
    """Seed of run ``index`` derived from the master seed (counter scheme)."""
    seq = np.random.SeedSequence([int(master_seed), int(stream), int(index)])
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def preset_path(name: str) -> Path:
    if name not in PRESETS:
        raise ConfigError(f"preset: unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return Path(__file__).parent / "presets" / f"{name}.yaml"


def _fail(path: str, msg: str):
    raise ConfigError(f"{path}: {msg}")


def _positive(path: str, value) -> float:
    value = _number(path, value)
    if not value > 0:
        _fail(path, f"must be positive, got {value}")
    return value


def _number(path: str, value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(path, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        _fail(path, "must be finite")
    return float(value)


def _integer(path: str, value, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(path, f"expected an integer, got {value!r}")
    if value < minimum:
        _fail(path, f"must be at least {minimum}, got {value}")
    return int(value)


def _pair(path: str, value) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        _fail(path, f"expected a two-element list, got {value!r}")
    lo, hi = _number(f"{path}[0]", value[0]), _number(f"{path}[1]", value[1])
    if not lo < hi:
        _fail(path, f"must be ordered low < high, got {list(value)}")
    return lo, hi


def _section(cls, data, path: str, convert):
    """Build dataclass ``cls`` from mapping ``data`` after per-field checks."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        _fail(path, f"expected a mapping, got {type(data).__name__}")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        _fail(f"{path}.{unknown[0]}", "unknown field")
    kwargs = {}
    for key, value in data.items():
        check = convert.get(key)
        kwargs[key] = check(f"{path}.{key}", value) if check else value
    return cls(**kwargs)


@dataclass(frozen=True)
class BeamSection:
    span_L: float = dynamics.DEFAULT_SPAN
    mass_per_length: float = dynamics.DEFAULT_MASS_PER_LENGTH
    first_frequency: float = dynamics.DEFAULT_FIRST_FREQUENCY
    damping_ratio: float = dynamics.DEFAULT_DAMPING
    damping_model: str = "stiffness"
    n_modes: int = dynamics.DEFAULT_N_MODES

    def build(self) -> dynamics.BeamModel:
        ei = dynamics.rigidity_for_frequency(self.first_frequency, self.span_L, self.mass_per_length)
        return dynamics.BeamModel(self.span_L, self.mass_per_length, ei, self.damping_ratio,
                                  self.n_modes, self.damping_model)


def _damping_model(path, value):
    if value not in dynamics.DAMPING_MODELS:
        _fail(path, f"must be one of {list(dynamics.DAMPING_MODELS)}, got {value!r}")
    return value


def _ratio(path, value):
    value = _number(path, value)
    if not 0 <= value < 1:
        _fail(path, f"must lie in [0, 1), got {value}")
    return value


_BEAM = {
    "span_L": _positive,
    "mass_per_length": _positive,
    "first_frequency": _positive,
    "damping_ratio": _ratio,
    "damping_model": _damping_model,
    "n_modes": lambda p, v: _integer(p, v, 1),
}


@dataclass(frozen=True)
class TrainSection:
    n_cars: int = 8
    carriage_length: float = 25.0
    bogie_half_distance: float = 8.75
    axle_spacing: float = 2.5
    static_load: float = 1.4e5
    unsprung_mass: float = 1200.0

    def build(self, speed: float) -> dynamics.TrainConfig:
        return dynamics.default_train(
            speed,
            n_cars=self.n_cars,
            carriage_length=self.carriage_length,
            bogie_half_distance=self.bogie_half_distance,
            axle_spacing=self.axle_spacing,
            static_load=self.static_load,
            unsprung_mass=self.unsprung_mass,
        )


_TRAIN = {
    "n_cars": lambda p, v: _integer(p, v, 1),
    "carriage_length": _positive,
    "bogie_half_distance": _positive,
    "axle_spacing": _positive,
    "static_load": lambda p, v: _number(p, v),
    "unsprung_mass": lambda p, v: _number(p, v),
}


@dataclass(frozen=True)
class RandomSection:
    """Random irregularity.  ``psd`` is "default" (power law scaled to
    ``rms``) or a path to a two-column PSD CSV, relative to the config."""

    enabled: bool = True
    psd: str = "default"
    rms: float = 1e-3
    wavelength_band: tuple[float, float] = (1.0, 120.0)
    seed: int | None = 42

    def spec(self, seed: int, grid_step: float, base_dir: Path) -> RandomProfileSpec:
        if self.psd == "default":
            table = default_psd_table(self.rms, self.wavelength_band)
        else:
            table = read_psd_csv(base_dir / self.psd)
        return RandomProfileSpec(table, self.wavelength_band, seed, grid_step)


def _seed_or_none(path, value):
    return None if value is None else _integer(path, value, 0)


def _boolean(path, value):
    if not isinstance(value, bool):
        _fail(path, f"expected true or false, got {value!r}")
    return value


_RANDOM = {
    "enabled": _boolean,
    "psd": lambda p, v: v if isinstance(v, str) else _fail(p, f"expected 'default' or a file path, got {v!r}"),
    "rms": _positive,
    "wavelength_band": _pair,
    "seed": _seed_or_none,
}


@dataclass(frozen=True)
class BumpSection:
    position: float
    amplitude: float = 1e-3
    wavelength: float = 0.5
    periods: int = 1

    def build(self) -> HarmonicBump:
        return HarmonicBump(self.amplitude, self.wavelength, self.position,
                            self.position + self.periods * self.wavelength)


_BUMP = {
    "position": lambda p, v: _number(p, v),
    "amplitude": _positive,
    "wavelength": _positive,
    "periods": lambda p, v: _integer(p, v, 1),
}


@dataclass(frozen=True)
class TrackSection:
    domain: tuple[float, float] = (-15.0, 50.0)
    grid_step: float = 0.01
    random: RandomSection = field(default_factory=RandomSection)
    bumps: tuple[BumpSection, ...] = ()


@dataclass(frozen=True)
class SpeedSection:
    """Either a fixed speed or a sweep drawn per run from the run seed."""

    policy: str = "fixed"
    value_kmh: float = 200.0
    min_kmh: float = 200.0
    max_kmh: float = 250.0
    count: int = 100
    distribution: str = "uniform"

    def speeds(self, master_seed: int, count: int | None = None,
               stream: int = DETECTION_STREAM) -> list[float]:
        """Speeds (km/h) of runs 0..count-1."""
        n = self.count if count is None else count
        if self.policy == "fixed":
            return [self.value_kmh] * n
        if self.distribution == "grid":
            return [float(v) for v in np.linspace(self.min_kmh, self.max_kmh, n)]
        out = []
        for k in range(n):
            rng = np.random.default_rng(run_seed(master_seed, k, stream))
            out.append(float(rng.uniform(self.min_kmh, self.max_kmh)))
        return out


def _choice(options):
    def check(path, value):
        if value not in options:
            _fail(path, f"must be one of {list(options)}, got {value!r}")
        return value
    return check


_SPEED = {
    "policy": _choice(("fixed", "sweep")),
    "value_kmh": _positive,
    "min_kmh": _positive,
    "max_kmh": _positive,
    "count": lambda p, v: _integer(p, v, 1),
    "distribution": _choice(("uniform", "grid")),
}


@dataclass(frozen=True)
class SamplingSection:
    fs: float = dynamics.DEFAULT_FS
    oversample: int = dynamics.DEFAULT_OVERSAMPLE
    run_in: float = dynamics.DEFAULT_RUN_IN
    tail: float = dynamics.DEFAULT_TAIL
    sensors: tuple[float, ...] | None = None


def _sensors(path, value):
    if value is None:
        return None
    if not isinstance(value, (list, tuple)) or not value:
        _fail(path, "expected a non-empty list of positions (m)")
    return tuple(_number(f"{path}[{i}]", v) for i, v in enumerate(value))


_SAMPLING = {
    "fs": _positive,
    "oversample": lambda p, v: _integer(p, v, 1),
    "run_in": lambda p, v: _number(p, v),
    "tail": lambda p, v: _number(p, v),
    "sensors": _sensors,
}


@dataclass(frozen=True)
class AnalysisSection:
    spatial_step: float = 0.15
    band: tuple[float, float] = (1.0, 3.0)
    n_scales: int = 48
    wavelet: str = "dog1"
    save_scalogram: bool = False


_ANALYSIS = {
    "spatial_step": _positive,
    "band": _pair,
    "n_scales": lambda p, v: _integer(p, v, 8),
    "wavelet": lambda p, v: v if isinstance(v, str) and v.startswith("dog") else _fail(p, f"expected 'dog<order>', got {v!r}"),
    "save_scalogram": _boolean,
}


@dataclass(frozen=True)
class BaselineSection:
    """Where a sweep gets its thresholds: a stats file, or a calibration of
    ``runs`` bump-free runs of this same scenario."""

    stats: str | None = None
    runs: int = 20


_BASELINE = {
    "stats": lambda p, v: v if v is None or isinstance(v, str) else _fail(p, f"expected a file path, got {v!r}"),
    "runs": lambda p, v: _integer(p, v, 1),
}


_DETECTION = {
    "debounce": lambda p, v: _integer(p, v, 1),
    "keep_ratio": lambda p, v: _number(p, v),
    "peak_keep_ratio": lambda p, v: _number(p, v),
    "min_separation": _positive,
    "tol": _positive,
    "min_chain": lambda p, v: _integer(p, v, 1),
    "offset": lambda p, v: _number(p, v),
    "layout_tol": _positive,
}


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "scenario"
    seed: int = 0
    output: str = "runs"
    beam: BeamSection = field(default_factory=BeamSection)
    train: TrainSection = field(default_factory=TrainSection)
    track: TrackSection = field(default_factory=TrackSection)
    speed: SpeedSection = field(default_factory=SpeedSection)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    detection: DetectionParams = field(default_factory=DetectionParams)
    baseline: BaselineSection = field(default_factory=BaselineSection)
    source: str = ""

    @property
    def base_dir(self) -> Path:
        return Path(self.source).parent if self.source else Path.cwd()

    @property
    def has_bumps(self) -> bool:
        return bool(self.track.bumps)

    def without_bumps(self) -> ScenarioConfig:
        return replace(self, track=replace(self.track, bumps=()))

    def sensor_layout(self) -> dynamics.SensorLayout:
        if self.sampling.sensors is None:
            return dynamics.default_sensors(self.beam.span_L)
        return dynamics.SensorLayout(self.sampling.sensors)

    def to_dict(self) -> dict:
        """Plain mapping; file references become absolute so the snapshot
        can be reloaded from anywhere."""
        d = asdict(self)
        d.pop("source")
        if d["track"]["random"]["psd"] != "default":
            d["track"]["random"]["psd"] = str((self.base_dir / self.track.random.psd).resolve())
        if d["baseline"]["stats"] is not None:
            d["baseline"]["stats"] = str((self.base_dir / self.baseline.stats).resolve())
        return _plain(d)

    @classmethod
    def from_dict(cls, data: dict, source: str = "") -> ScenarioConfig:
        if not isinstance(data, dict):
            raise ConfigError(f"<root>: expected a mapping, got {type(data).__name__}")
        data = copy.deepcopy(data)
        known = {f.name for f in fields(cls)} - {"source"}
        unknown = sorted(set(data) - known)
        if unknown:
            _fail(unknown[0], "unknown field")
        kw = {}
        if "scenario" in data:
            if not isinstance(data["scenario"], str) or not data["scenario"]:
                _fail("scenario", "expected a non-empty name")
            kw["scenario"] = data["scenario"]
        if "seed" in data:
            kw["seed"] = _integer("seed", data["seed"], 0)
        if "output" in data:
            if not isinstance(data["output"], str):
                _fail("output", "expected a directory path")
            kw["output"] = data["output"]
        kw["beam"] = _section(BeamSection, data.get("beam"), "beam", _BEAM)
        kw["train"] = _section(TrainSection, data.get("train"), "train", _TRAIN)
        kw["track"] = _track(data.get("track"))
        kw["speed"] = _section(SpeedSection, data.get("speed"), "speed", _SPEED)
        kw["sampling"] = _section(SamplingSection, data.get("sampling"), "sampling", _SAMPLING)
        kw["analysis"] = _section(AnalysisSection, data.get("analysis"), "analysis", _ANALYSIS)
        kw["detection"] = _section(DetectionParams, data.get("detection"), "detection", _DETECTION)
        kw["baseline"] = _section(BaselineSection, data.get("baseline"), "baseline", _BASELINE)
        cfg = cls(source=source, **kw)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        """Cross-field checks that need more than one section."""
        sp = self.speed
        if sp.policy == "sweep" and not sp.min_kmh < sp.max_kmh:
            _fail("speed", f"min_kmh must be below max_kmh, got {sp.min_kmh} and {sp.max_kmh}")
        span = self.beam.span_L
        for i, b in enumerate(self.track.bumps):
            if not 0 < b.position < span:
                _fail(f"track.bumps[{i}].position", f"must lie on the bridge (0, {span}), got {b.position}")
            lo, hi = self.track.domain
            if not (lo <= b.position and b.position + b.periods * b.wavelength <= hi):
                _fail(f"track.bumps[{i}]", f"outside track.domain {list(self.track.domain)}")
            if self.track.grid_step > b.wavelength / 10:
                _fail("track.grid_step", f"needs at least 10 samples per bump wavelength ({b.wavelength} m)")
        lo, hi = self.track.domain
        if lo > -self.sampling.run_in or hi < span:
            _fail("track.domain", f"must cover the run-in and the span [{-self.sampling.run_in}, {span}]")
        if self.sampling.fs < dynamics.DEFAULT_FS:
            _fail("sampling.fs", f"must be at least {dynamics.DEFAULT_FS} Hz")
        if self.sampling.sensors is not None:
            for i, x in enumerate(self.sampling.sensors):
                if not 0 < x < span:
                    _fail(f"sampling.sensors[{i}]", f"must lie inside (0, {span}), got {x}")
        nyquist = 0.5 / self.analysis.spatial_step
        if self.analysis.band[1] >= nyquist:
            _fail("analysis.band", f"upper edge must stay below the spatial Nyquist {nyquist:.3f} 1/m")
        v_max = (sp.max_kmh if sp.policy == "sweep" else sp.value_kmh) / 3.6
        if self.analysis.spatial_step < v_max / self.sampling.fs:
            _fail("analysis.spatial_step", f"finer than one sample at the top speed ({v_max / self.sampling.fs:.3f} m)")
        if not 0 < self.detection.keep_ratio <= 1:
            _fail("detection.keep_ratio", "must lie in (0, 1]")
        if not 0 <= self.detection.peak_keep_ratio <= 1:
            _fail("detection.peak_keep_ratio", "must lie in [0, 1]")
        if not self.detection.tol < self.train.carriage_length / 4:
            _fail("detection.tol", "must be below a quarter of the carriage length")
        rnd = self.track.random
        if rnd.enabled and rnd.psd != "default" and not (self.base_dir / rnd.psd).is_file():
            _fail("track.random.psd", f"file not found: {self.base_dir / rnd.psd}")
        if self.baseline.stats is not None and not (self.base_dir / self.baseline.stats).is_file():
            _fail("baseline.stats", f"file not found: {self.base_dir / self.baseline.stats}")


def _track(data) -> TrackSection:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        _fail("track", f"expected a mapping, got {type(data).__name__}")
    unknown = sorted(set(data) - {"domain", "grid_step", "random", "bumps"})
    if unknown:
        _fail(f"track.{unknown[0]}", "unknown field")
    kw = {}
    if "domain" in data:
        kw["domain"] = _pair("track.domain", data["domain"])
    if "grid_step" in data:
        kw["grid_step"] = _positive("track.grid_step", data["grid_step"])
    if "random" in data:
        kw["random"] = _section(RandomSection, data["random"], "track.random", _RANDOM)
    bumps = data.get("bumps") or []
    if not isinstance(bumps, list):
        _fail("track.bumps", "expected a list")
    out = []
    for i, b in enumerate(bumps):
        path = f"track.bumps[{i}]"
        if not isinstance(b, dict) or "position" not in b:
            _fail(path, "each bump needs at least a position (m)")
        out.append(_section(BumpSection, b, path, _BUMP))
    kw["bumps"] = tuple(out)
    return TrackSection(**kw)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def load_config(path) -> ScenarioConfig:
    """Read and validate a scenario file, or a preset name such as "single-1"."""
    p = Path(path)
    if not p.exists() and str(path) in PRESETS:
        p = preset_path(str(path))
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"<file>: cannot read {p}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"<file>: not valid YAML ({exc})") from None
    try:
        return ScenarioConfig.from_dict(data or {}, source=str(p.resolve()))
    except (TrackError, dynamics.DynamicsError) as exc:
        raise ConfigError(f"<model>: {exc}") from None
