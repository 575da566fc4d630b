"""Moving-train response of a simply supported beam.

Two routes to the sensor accelerations:

* a closed form for one wheel crossing one raised-cosine bump, where the
  bump acts as a moving harmonic load and each modal coordinate follows
  from the Duhamel integral evaluated exactly;
* a numerical modal time-stepper for a whole train over an arbitrary
  profile, using constant-average-acceleration Newmark integration.

Both produce records sampled at ``fs`` after the same zero-phase
anti-alias stage, so they can be compared sample by sample.  Forces and
displacements are positive downward.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, signal

from .track import HarmonicBump, TrackProfile, mean_curvature

logger = logging.getLogger(__name__)

GRAVITY = 9.81

DEFAULT_SPAN = 32.6
DEFAULT_MASS_PER_LENGTH = 3.0e4
DEFAULT_FIRST_FREQUENCY = 4.6
DEFAULT_DAMPING = 0.02
DEFAULT_N_MODES = 16
DEFAULT_FS = 500.0
DEFAULT_OVERSAMPLE = 32
DEFAULT_RUN_IN = 10.0
DEFAULT_TAIL = 0.5
ANTIALIAS_FRACTION = 0.45
ANTIALIAS_ORDER = 8
MAX_DAMPING = 0.9
RESONANCE_RTOL = 1e-9
DAMPING_MODELS = ("stiffness", "constant")


class DynamicsError(ValueError):
    """Invalid model input."""


class NumericalError(RuntimeError):
    """Integration produced a non-physical result."""


class ResonanceError(NumericalError):
    """Undamped excitation exactly at a natural frequency."""


@dataclass(frozen=True)
class BeamModel:
    span_L: float = DEFAULT_SPAN
    mass_per_length: float = DEFAULT_MASS_PER_LENGTH
    flexural_rigidity: float = 0.0
    damping_ratio: float | tuple[float, ...] = DEFAULT_DAMPING
    n_modes: int = DEFAULT_N_MODES
    damping_model: str = "stiffness"

    def __post_init__(self):
        if self.damping_model not in DAMPING_MODELS:
            raise DynamicsError(f"damping_model must be one of {DAMPING_MODELS}, got {self.damping_model!r}")
        if not np.isscalar(self.damping_ratio):
            ratios = tuple(float(z) for z in self.damping_ratio)
            if len(ratios) != self.n_modes:
                raise DynamicsError(f"{len(ratios)} damping ratios given for {self.n_modes} modes")
            object.__setattr__(self, "damping_ratio", ratios)
        if self.flexural_rigidity == 0.0:
            object.__setattr__(
                self,
                "flexural_rigidity",
                rigidity_for_frequency(DEFAULT_FIRST_FREQUENCY, self.span_L, self.mass_per_length),
            )
        for name in ("span_L", "mass_per_length", "flexural_rigidity"):
            if not getattr(self, name) > 0:
                raise DynamicsError(f"beam {name} must be positive, got {getattr(self, name)}")
        if not np.all((np.asarray(self.damping_ratio) >= 0.0) & (np.asarray(self.damping_ratio) < 1.0)):
            raise DynamicsError(f"damping ratio must lie in [0, 1), got {self.damping_ratio}")
        if int(self.n_modes) != self.n_modes or self.n_modes < 1:
            raise DynamicsError(f"n_modes must be a positive integer, got {self.n_modes}")

    @property
    def mode_numbers(self) -> np.ndarray:
        return np.arange(1, self.n_modes + 1)

    def omega(self, n=None):
        """Undamped natural circular frequency (n pi / L)^2 sqrt(EI / m)."""
        n = self.mode_numbers if n is None else np.asarray(n)
        return (n * np.pi / self.span_L) ** 2 * math.sqrt(self.flexural_rigidity / self.mass_per_length)

    def xi(self, n=None):
        """Damping ratio of mode(s) ``n``.

        A scalar ratio applies to the first mode; under the "stiffness"
        model it grows as omega_n / omega_1 (capped at MAX_DAMPING), under
        "constant" it is shared by all modes.  A tuple gives every mode
        explicitly.
        """
        n = self.mode_numbers if n is None else np.asarray(n)
        if np.isscalar(self.damping_ratio):
            z = float(self.damping_ratio)
            if self.damping_model == "stiffness":
                return np.minimum(z * np.asarray(n, dtype=float) ** 2, MAX_DAMPING)[()]
            return np.full(np.shape(n), z)[()]
        return np.asarray(self.damping_ratio)[n - 1]

    def omega_b(self, n=None):
        return self.xi(n) * self.omega(n)

    def omega_d(self, n=None):
        return self.omega(n) * np.sqrt(1.0 - self.xi(n) ** 2)

    def mode_shape(self, n, x):
        return np.sin(np.asarray(n) * np.pi * np.asarray(x) / self.span_L)

    def static_midspan_deflection(self, load: float) -> float:
        return load * self.span_L**3 / (48.0 * self.flexural_rigidity)


def rigidity_for_frequency(f1: float, span: float, mass_per_length: float) -> float:
    """EI giving a first natural frequency of ``f1`` Hz."""
    return mass_per_length * (2.0 * math.pi * f1) ** 2 * (span / math.pi) ** 4


@dataclass(frozen=True)
class Axle:
    offset: float
    static_load: float
    unsprung_mass: float


@dataclass(frozen=True)
class TrainConfig:
    axles: tuple[Axle, ...]
    speed: float
    carriage_length: float = 25.0

    def __post_init__(self):
        axles = tuple(a if isinstance(a, Axle) else Axle(*a) for a in self.axles)
        object.__setattr__(self, "axles", axles)
        if not axles:
            raise DynamicsError("train has no axles")
        offsets = np.array([a.offset for a in axles])
        if offsets[0] < 0 or np.any(np.diff(offsets) <= 0):
            raise DynamicsError("axle offsets must start at >= 0 and increase strictly")
        if any(a.static_load < 0 or a.unsprung_mass < 0 for a in axles):
            raise DynamicsError("axle loads and masses must be non-negative")
        if not self.speed > 0:
            raise DynamicsError(f"speed must be positive, got {self.speed}")
        if not self.carriage_length > 0:
            raise DynamicsError("carriage length must be positive")

    @property
    def offsets(self) -> np.ndarray:
        return np.array([a.offset for a in self.axles])

    @property
    def loads(self) -> np.ndarray:
        return np.array([a.static_load for a in self.axles])

    @property
    def masses(self) -> np.ndarray:
        return np.array([a.unsprung_mass for a in self.axles])

    @property
    def length(self) -> float:
        return float(self.offsets[-1])

    @property
    def speed_kmh(self) -> float:
        return self.speed * 3.6

    def with_speed(self, speed: float) -> TrainConfig:
        return TrainConfig(self.axles, speed, self.carriage_length)


def default_train(
    speed: float = 200 / 3.6,
    n_cars: int = 8,
    carriage_length: float = 25.0,
    bogie_half_distance: float = 8.75,
    axle_spacing: float = 2.5,
    static_load: float = 1.4e5,
    unsprung_mass: float = 1200.0,
    first_axle_offset: float = 0.0,
) -> TrainConfig:
    """Eight identical four-axle cars.

    Offsets are measured from the leading axle unless ``first_axle_offset``
    says otherwise.
    """
    center = carriage_length / 2.0
    local = np.array([
        center - bogie_half_distance - axle_spacing / 2,
        center - bogie_half_distance + axle_spacing / 2,
        center + bogie_half_distance - axle_spacing / 2,
        center + bogie_half_distance + axle_spacing / 2,
    ])
    local = local - local[0] + first_axle_offset
    axles = [
        Axle(float(car * carriage_length + off), static_load, unsprung_mass)
        for car in range(n_cars)
        for off in local
    ]
    return TrainConfig(tuple(axles), speed, carriage_length)


@dataclass(frozen=True)
class SensorLayout:
    positions: tuple[float, ...]

    def __post_init__(self):
        pos = tuple(float(p) for p in self.positions)
        object.__setattr__(self, "positions", pos)
        if not pos:
            raise DynamicsError("at least one sensor is required")
        if any(b <= a for a, b in zip(pos, pos[1:])):
            raise DynamicsError("sensor positions must be sorted and distinct")

    def validate(self, span: float) -> None:
        if any(not 0.0 < p < span for p in self.positions):
            raise DynamicsError(f"sensors must lie strictly inside the span (0, {span})")

    def __len__(self):
        return len(self.positions)


def default_sensors(span: float = DEFAULT_SPAN, end_distance: float = 1.0) -> SensorLayout:
    return SensorLayout((end_distance, span / 4, span / 2, 3 * span / 4, span - end_distance))


@dataclass(eq=False)
class AccelerationRecord:
    """Sensor accelerations sampled at ``fs``; ``acc`` has shape (n_sensors, n_samples)."""

    fs: float
    acc: np.ndarray
    sensors: SensorLayout
    speed: float
    run_in: float = DEFAULT_RUN_IN
    t0: float = 0.0
    displacement: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.acc = np.atleast_2d(np.asarray(self.acc, dtype=float))
        if self.acc.shape[0] != len(self.sensors):
            raise DynamicsError("one acceleration series per sensor is required")

    @property
    def n_samples(self) -> int:
        return self.acc.shape[1]

    @property
    def time(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_samples) / self.fs

    @property
    def head_position(self) -> np.ndarray:
        return self.speed * self.time - self.run_in

    def write_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_s", "head_pos_m"] + [f"acc_s{i + 1}" for i in range(len(self.sensors))])
            for t, h, row in zip(self.time, self.head_position, self.acc.T):
                writer.writerow([repr(float(t)), repr(float(h))] + [repr(float(a)) for a in row])
        sidecar = {
            "fs_hz": self.fs,
            "t0_s": self.t0,
            "speed_m_s": self.speed,
            "run_in_m": self.run_in,
            "sensor_positions_m": list(self.sensors.positions),
            **self.metadata,
        }
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))

    @classmethod
    def read_csv(cls, path) -> AccelerationRecord:
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        extra = {k: v for k, v in meta.items()
                 if k not in ("fs_hz", "t0_s", "speed_m_s", "run_in_m", "sensor_positions_m")}
        return cls(
            fs=meta["fs_hz"],
            acc=data[:, 2:].T,
            sensors=SensorLayout(tuple(meta["sensor_positions_m"])),
            speed=meta["speed_m_s"],
            run_in=meta["run_in_m"],
            t0=meta["t0_s"],
            metadata=extra,
        )


@dataclass(eq=False)
class SpatialSeries:
    """Sensor accelerations against train-head position on a uniform grid."""

    spatial_step: float
    positions: np.ndarray
    acc: np.ndarray
    sensors: SensorLayout
    speed: float = float("nan")

    @property
    def n_samples(self) -> int:
        return self.positions.size

    def write_csv(self, path) -> None:
        """Columns position_m, acc_s1 ...; step, speed and sensors go to a .json sidecar."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["position_m"] + [f"acc_s{i + 1}" for i in range(len(self.sensors))])
            for x, row in zip(self.positions, self.acc.T):
                writer.writerow([repr(float(x))] + [repr(float(a)) for a in row])
        sidecar = {
            "spatial_step_m": self.spatial_step,
            "speed_m_s": self.speed,
            "sensor_positions_m": list(self.sensors.positions),
        }
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))

    @classmethod
    def read_csv(cls, path) -> SpatialSeries:
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(meta["spatial_step_m"], data[:, 0], data[:, 1:].T,
                   SensorLayout(tuple(meta["sensor_positions_m"])), meta["speed_m_s"])


# ----------------------------------------------------------------------
# Closed form: one wheel over one harmonic bump
# ----------------------------------------------------------------------

def harmonic_force(bump: HarmonicBump, M1: float, v: float, t):
    """Irregularity force M1 d^2w/dt^2 for a wheel at x = v t.

    The cosine phase is measured from wheel entry at x = a, so the force is
    P cos(2 pi (v t - a) / l) with P = 2 pi^2 v^2 M1 A / l^2, and zero
    outside [a/v, b/v].
    """
    t = np.asarray(t, dtype=float)
    if v <= 0:
        return np.zeros_like(t) if t.ndim else 0.0
    amplitude = M1 * v**2 * bump.curvature_amplitude
    t_a, t_b = bump.start_a / v, bump.end_b / v
    inside = (t >= t_a) & (t <= t_b)
    force = np.where(inside, amplitude * np.cos(2.0 * np.pi * (v * t - bump.start_a) / bump.wavelength_l), 0.0)
    return float(force) if force.ndim == 0 else force


def _window_integral(gamma: complex, s1, s2):
    """Integral of exp(-gamma s) over [s1, s2], vectorized over s1 <= s2."""
    if gamma == 0:
        return (s2 - s1).astype(complex)
    return np.exp(-gamma * s1) * (-np.expm1(-gamma * (s2 - s1))) / gamma


def _damped_sine_convolution(lam, phase, omega_b, omega_d, t, t_a, t_b):
    """Integral of sin(lam tau - phase) e^{-omega_b (t - tau)} sin(omega_d (t - tau))
    over tau in [t_a, min(t, t_b)]; zero for t < t_a."""
    t = np.asarray(t, dtype=float)
    active = t >= t_a
    t_end = np.minimum(t, t_b)
    s1 = np.where(active, t - t_end, 0.0)
    s2 = np.where(active, t - t_a, 0.0)
    gp = complex(omega_b, lam - omega_d)
    gm = complex(omega_b, lam + omega_d)
    if omega_b == 0.0 and min(abs(lam - omega_d), abs(lam + omega_d)) <= RESONANCE_RTOL * omega_d:
        raise ResonanceError("undamped resonance: excitation coincides with a natural frequency")
    k = np.exp(1j * lam * t) * (_window_integral(gp, s1, s2) - _window_integral(gm, s1, s2)) / 2j
    return np.where(active, np.imag(np.exp(-1j * phase) * k), 0.0)


def modal_response_closed_form(beam: BeamModel, bump: HarmonicBump, M1: float, v: float, mode_n: int, t):
    """Generalized coordinate q_n(t) of a wheel crossing one bump.

    The modal load P cos(w_bar (tau - t_a)) sin(n w tau) splits into two
    harmonics at r1 = w_bar + n w and r2 = w_bar - n w (w = pi v / L,
    w_bar = 2 pi v / l); each is convolved analytically with the damped
    impulse response.  The terms share the denominators
    (w_n^2 - r^2)^2 + 4 w_b^2 r^2, which vanish only for undamped
    resonance; that case raises ``ResonanceError``.
    """
    t = np.asarray(t, dtype=float)
    omega_bar = 2.0 * np.pi * v / bump.wavelength_l
    omega_v = np.pi * v / beam.span_L
    r1 = omega_bar + mode_n * omega_v
    r2 = omega_bar - mode_n * omega_v
    t_a, t_b = bump.start_a / v, bump.end_b / v
    phase = omega_bar * t_a
    wb = float(beam.omega_b(mode_n))
    wd = float(beam.omega_d(mode_n))
    amplitude = M1 * v**2 * bump.curvature_amplitude
    j1 = _damped_sine_convolution(r1, phase, wb, wd, t, t_a, t_b)
    j2 = _damped_sine_convolution(r2, phase, wb, wd, t, t_a, t_b)
    q = amplitude / (beam.mass_per_length * beam.span_L * wd) * (j1 - j2)
    return float(q) if q.ndim == 0 else q


class QuadratureError(ValueError):
    pass


def duhamel_quadrature(
    beam: BeamModel,
    forcing: Callable,
    mode_n: int,
    t_grid,
    *,
    position: Callable | None = None,
    speed: float | None = None,
    support=(0.0, math.inf),
    forcing_frequency: float = 0.0,
    step: float | None = None,
):
    """Numerical Duhamel integral for one modal coordinate.

    q_n(t) = 2/(m L w_D) * int P(tau) phi_n(x(tau)) e^{-w_b (t - tau)} sin(w_D (t - tau)) dtau

    ``position`` maps time to load position; pass ``speed`` instead for a
    load entering at x = 0.  The composite Simpson step defaults to 1/20
    of the shortest period among the forcing and the mode, and a coarser
    explicit ``step`` is refused.
    """
    if position is None:
        if speed is None:
            raise QuadratureError("either position or speed is required")
        position = lambda tau: speed * tau  # noqa: E731
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) < 0):
        raise QuadratureError("t_grid must be sorted")
    wn = float(beam.omega(mode_n))
    wb = float(beam.omega_b(mode_n))
    wd = float(beam.omega_d(mode_n))
    max_step = 2.0 * np.pi / (20.0 * max(forcing_frequency, wn))
    if step is None:
        step = max_step
    elif step > max_step * (1 + 1e-12):
        raise QuadratureError(f"step {step:g} s exceeds the resolution limit {max_step:g} s")
    t_lo, t_hi = support
    scale = 2.0 / (beam.mass_per_length * beam.span_L * wd)
    out = np.zeros_like(t_grid)
    for i, t in enumerate(t_grid):
        upper = min(t, t_hi)
        if upper <= t_lo:
            continue
        n_int = max(2, int(math.ceil((upper - t_lo) / step)))
        n_int += n_int % 2
        tau = np.linspace(t_lo, upper, n_int + 1)
        s = t - tau
        integrand = (np.asarray(forcing(tau), dtype=float)
                     * beam.mode_shape(mode_n, position(tau))
                     * np.exp(-wb * s) * np.sin(wd * s))
        out[i] = scale * integrate.simpson(integrand, x=tau)
    return out


def decimate_zero_phase(series: np.ndarray, factor: int, fs_out: float) -> np.ndarray:
    """Zero-phase low-pass at 0.45 fs_out, then keep every ``factor``-th sample."""
    series = np.asarray(series, dtype=float)
    if factor == 1:
        return series.copy()
    sos = signal.butter(ANTIALIAS_ORDER, ANTIALIAS_FRACTION * fs_out, fs=factor * fs_out, output="sos")
    return signal.sosfiltfilt(sos, series, axis=-1)[..., ::factor]


def _fourth_order_second_difference(q: np.ndarray, h: float) -> np.ndarray:
    return (-q[..., 4:] + 16 * q[..., 3:-1] - 30 * q[..., 2:-2] + 16 * q[..., 1:-3] - q[..., :-4]) / (12 * h * h)


def bridge_acceleration_closed_form(
    beam: BeamModel,
    bump: HarmonicBump,
    M1: float,
    v: float,
    sensor_x: float,
    t_grid,
    *,
    refine: int = 8,
    antialias: bool = True,
):
    """Sensor acceleration sum_n q_n''(t) sin(n pi x / L) for one wheel and one bump.

    ``q_n''`` comes from fourth-order central differences of the exact
    ``q_n`` on a grid ``refine`` times finer than ``t_grid``.  With
    ``antialias`` the fine series passes the same zero-phase low-pass as
    the time-stepper before being sampled at ``t_grid``; ``t_grid`` must
    then be uniform.
    """
    if not 0.0 < sensor_x < beam.span_L:
        raise DynamicsError(f"sensor position {sensor_x} outside (0, {beam.span_L})")
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size < 2:
        raise DynamicsError("t_grid needs at least two samples")
    dt = t_grid[1] - t_grid[0]
    if antialias and not np.allclose(np.diff(t_grid), dt, rtol=1e-9, atol=1e-15):
        raise DynamicsError("antialiasing needs a uniform t_grid")
    h = dt / refine
    fine = t_grid[0] + h * np.arange(-2, (t_grid.size - 1) * refine + 3)
    acc = np.zeros(fine.size - 4)
    for n in beam.mode_numbers:
        shape = beam.mode_shape(n, sensor_x)
        if abs(shape) < 1e-14:
            continue
        q = modal_response_closed_form(beam, bump, M1, v, int(n), fine)
        acc += shape * _fourth_order_second_difference(q, h)
    if antialias:
        return decimate_zero_phase(acc, refine, 1.0 / dt)
    return acc[::refine]


# ----------------------------------------------------------------------
# Numerical route: whole train over an arbitrary profile
# ----------------------------------------------------------------------

def newmark_filters(omega: float, zeta: float, dt: float):
    """IIR coefficients of the average-acceleration Newmark scheme for
    q'' + 2 zeta omega q' + omega^2 q = f.

    The scheme is the trapezoidal rule, i.e. the bilinear map of the
    continuous transfer functions; returned as (b, a) pairs for
    displacement, velocity and acceleration.
    """
    den = [1.0, 2.0 * zeta * omega, omega**2]
    fs = 1.0 / dt
    disp = signal.bilinear([1.0], den, fs=fs)
    vel = signal.bilinear([1.0, 0.0], den, fs=fs)
    acc = signal.bilinear([1.0, 0.0, 0.0], den, fs=fs)
    return disp, vel, acc


def _integrate_modes(beam: BeamModel, modal_force: np.ndarray, dt: float):
    """Integrate every modal equation; modal_force has shape (n_modes, n_steps)."""
    q = np.empty_like(modal_force)
    qd = np.empty_like(modal_force)
    qdd = np.empty_like(modal_force)
    for i, n in enumerate(beam.mode_numbers):
        (bd, ad), (bv, av), (ba, aa) = newmark_filters(float(beam.omega(n)), float(beam.xi(n)), dt)
        q[i] = signal.lfilter(bd, ad, modal_force[i])
        qd[i] = signal.lfilter(bv, av, modal_force[i])
        qdd[i] = signal.lfilter(ba, aa, modal_force[i])
    return q, qd, qdd


def _check_energy(beam: BeamModel, q, qd, exit_index: int) -> None:
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
        raise NumericalError("non-finite modal response")
    if np.any(beam.xi() <= 0) or exit_index >= q.shape[1] - 1:
        return
    w = beam.omega()[:, None]
    energy = 0.5 * (qd[:, exit_index:] ** 2 + (w * q[:, exit_index:]) ** 2)
    total = energy.sum(axis=0)
    if total[-1] > total[0] * (1.0 + 1e-6) + 1e-300:
        raise NumericalError("modal energy grows after the train has left the span")


def simulate_train_passage(
    beam: BeamModel,
    train: TrainConfig,
    profile: TrackProfile | None,
    sensors: SensorLayout,
    fs: float = DEFAULT_FS,
    *,
    oversample: int = DEFAULT_OVERSAMPLE,
    run_in: float = DEFAULT_RUN_IN,
    tail: float = DEFAULT_TAIL,
    feedback_iterations: int = 0,
    keep_displacement: bool = False,
) -> AccelerationRecord:
    """Bridge accelerations under a train of moving forces.

    Axle j sits at x_j(t) = v t - run_in - offset_j and, while on the span,
    pushes down with W_j + M1_j v^2 w''(x_j), the curvature averaged over
    the distance travelled in one step so bump edges deliver the right
    impulse.  Each modal equation is integrated at dt = 1/(oversample fs)
    and the sensor sums are low-passed and decimated to ``fs``.  ``feedback_iterations`` > 0 re-evaluates the
    forces with the wheel riding the accelerating beam (-M1 y'').
    """
    if fs < 500.0:
        raise DynamicsError(f"fs must be at least 500 Hz, got {fs}")
    sensors.validate(beam.span_L)
    L = beam.span_L
    v = train.speed
    offsets = train.offsets
    exit_time = (run_in + L + offsets[-1]) / v
    n_out = int(math.ceil((exit_time + tail) * fs)) + 1
    n_steps = (n_out - 1) * oversample + 1
    dt = 1.0 / (fs * oversample)
    t = np.arange(n_steps) * dt

    x = v * t[:, None] - run_in - offsets[None, :]
    on_span = (x >= 0.0) & (x <= L)
    if not on_span.any():
        raise DynamicsError("no axle ever reaches the span")
    x_on = np.where(on_span, x, 0.0)

    loads = np.where(on_span, train.loads[None, :], 0.0)
    if profile is not None and np.any(train.masses > 0):
        half = 0.5 * v * dt
        lo = profile.origin + profile.grid_step + half
        hi = profile.end - profile.grid_step - half
        if lo > 0.0 or hi < L:
            raise DynamicsError(f"profile [{profile.origin}, {profile.end}] m does not cover the span")
        curvature = np.zeros_like(x)
        curvature[on_span] = mean_curvature(profile, x[on_span], v * dt)
        loads = loads + np.where(on_span, train.masses[None, :] * v**2 * curvature, 0.0)

    modes = beam.mode_numbers
    modal_scale = 2.0 / (beam.mass_per_length * L)
    sensor_shapes = beam.mode_shape(modes[:, None], np.array(sensors.positions)[None, :])  # (modes, sensors)

    def axle_shapes(n):
        return np.where(on_span, np.sin(n * np.pi * x_on / L), 0.0)

    axle_force = loads
    for iteration in range(feedback_iterations + 1):
        modal_force = np.stack([modal_scale * np.sum(axle_shapes(n) * axle_force, axis=1) for n in modes])
        q, qd, qdd = _integrate_modes(beam, modal_force, dt)
        if iteration == feedback_iterations:
            break
        beam_acc = sum(axle_shapes(n) * qdd[i][:, None] for i, n in enumerate(modes))
        axle_force = loads - np.where(on_span, train.masses[None, :] * beam_acc, 0.0)

    exit_index = int(min(n_steps - 1, math.ceil(exit_time / dt)))
    _check_energy(beam, q, qd, exit_index)

    acc_fine = sensor_shapes.T @ qdd
    acc = decimate_zero_phase(acc_fine, oversample, fs)
    disp = (sensor_shapes.T @ q)[:, ::oversample] if keep_displacement else None
    meta = {
        "beam": asdict(beam),
        "train": {
            "speed_m_s": v,
            "carriage_length_m": train.carriage_length,
            "axles": [asdict(a) for a in train.axles],
        },
        "oversample": oversample,
        "feedback_iterations": feedback_iterations,
    }
    logger.debug("simulated %d steps at dt=%.3g s, v=%.2f m/s", n_steps, dt, v)
    return AccelerationRecord(fs, acc, sensors, v, run_in, 0.0, disp, meta)


def resample_spatial(
    record: AccelerationRecord,
    v: float | None = None,
    spatial_step: float = 0.15,
    position_range: tuple[float, float] | None = None,
) -> SpatialSeries:
    """Linear interpolation of each sensor series onto head positions k * step.

    With a fixed ``position_range`` records at different speeds come out
    with identical lengths.
    """
    v = record.speed if v is None else v
    if spatial_step < v / record.fs * (1 - 1e-9):
        raise DynamicsError(f"spatial step {spatial_step} m is finer than v/fs = {v / record.fs:.4g} m")
    head = v * record.time - record.run_in
    if position_range is None:
        position_range = (0.0, float(head[-1]))
    lo, hi = position_range
    if lo < head[0] - 1e-9 or hi > head[-1] + 1e-9 or hi <= lo:
        raise DynamicsError(
            f"position range {position_range} outside the record [{head[0]:.3f}, {head[-1]:.3f}] m"
        )
    k0 = int(math.ceil(lo / spatial_step - 1e-9))
    k1 = int(math.floor(hi / spatial_step + 1e-9))
    positions = spatial_step * np.arange(k0, k1 + 1)
    acc = np.vstack([np.interp(positions, head, series) for series in record.acc])
    return SpatialSeries(spatial_step, positions, acc, record.sensors, v)
