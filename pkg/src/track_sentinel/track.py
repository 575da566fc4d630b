"""Vertical track irregularity profiles.

A profile is a uniformly sampled elevation w(x) along the rail.  Local
defects are raised-cosine bumps,

    w(x) = (A/2) * (1 - cos(2*pi*(x - a)/l)),   a <= x <= b,

and the background is a random realization drawn from a one-sided spatial
PSD.  Profiles add pointwise, and the bump parameters travel with the
samples so that curvature can be evaluated analytically where possible.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "HarmonicBump",
    "RandomProfileSpec",
    "TrackProfile",
    "TrackError",
    "harmonic_profile",
    "random_profile",
    "superpose",
    "second_derivative",
    "mean_curvature",
    "default_psd_table",
    "read_profile_csv",
    "write_profile_csv",
    "read_psd_csv",
    "write_psd_csv",
]

DEFAULT_GRID_STEP = 0.01
MIN_SAMPLES_PER_WAVELENGTH = 10


class TrackError(ValueError):
    """Invalid track geometry or sampling request."""


@dataclass(frozen=True)
class HarmonicBump:
    """Raised-cosine local irregularity.

    ``end_b`` defaults to one full period after ``start_a``.
    """

    amplitude_A: float
    wavelength_l: float
    start_a: float
    end_b: float | None = None

    def __post_init__(self):
        if self.end_b is None:
            object.__setattr__(self, "end_b", self.start_a + self.wavelength_l)
        if not self.amplitude_A > 0:
            raise TrackError(f"bump amplitude must be positive, got {self.amplitude_A}")
        if not self.wavelength_l > 0:
            raise TrackError(f"bump wavelength must be positive, got {self.wavelength_l}")
        if not self.end_b > self.start_a:
            raise TrackError("bump end must lie after its start")
        periods = (self.end_b - self.start_a) / self.wavelength_l
        if abs(periods - round(periods)) > 1e-9 * max(1.0, periods):
            raise TrackError(
                f"bump support {self.end_b - self.start_a} m is not a whole number "
                f"of wavelengths ({self.wavelength_l} m)"
            )

    @property
    def curvature_amplitude(self) -> float:
        """Peak |w''| = 2 pi^2 A / l^2."""
        return 2.0 * math.pi**2 * self.amplitude_A / self.wavelength_l**2

    def elevation(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.start_a) & (x <= self.end_b)
        phase = 2.0 * np.pi * (x - self.start_a) / self.wavelength_l
        return np.where(inside, 0.5 * self.amplitude_A * (1.0 - np.cos(phase)), 0.0)

    def curvature(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.start_a) & (x <= self.end_b)
        phase = 2.0 * np.pi * (x - self.start_a) / self.wavelength_l
        return np.where(inside, self.curvature_amplitude * np.cos(phase), 0.0)

    def slope(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.start_a) & (x <= self.end_b)
        phase = 2.0 * np.pi * (x - self.start_a) / self.wavelength_l
        return np.where(inside, np.pi * self.amplitude_A / self.wavelength_l * np.sin(phase), 0.0)

    def to_dict(self) -> dict:
        return {
            "amplitude_A": self.amplitude_A,
            "wavelength_l": self.wavelength_l,
            "start_a": self.start_a,
            "end_b": self.end_b,
        }


@dataclass(frozen=True)
class RandomProfileSpec:
    """Recipe for a random irregularity realization.

    ``psd_table`` holds rows of (spatial frequency [1/m], one-sided PSD
    [m^2 m]).  A single row is treated as a spectral line placed on the
    nearest synthesis bin.
    """

    psd_table: tuple[tuple[float, float], ...]
    wavelength_band: tuple[float, float] = (1.0, 120.0)
    seed: int = 0
    grid_step: float = DEFAULT_GRID_STEP

    def __post_init__(self):
        table = tuple((float(f), float(s)) for f, s in self.psd_table)
        object.__setattr__(self, "psd_table", table)
        if not table:
            raise TrackError("PSD table is empty")
        if any(s < 0 for _, s in table):
            raise TrackError("PSD densities must be non-negative")
        if any(f <= 0 for f, _ in table):
            raise TrackError("PSD frequencies must be positive")
        lo, hi = self.wavelength_band
        if not 0 < lo < hi:
            raise TrackError(f"wavelength band must be positive and ordered, got {self.wavelength_band}")
        if not self.grid_step > 0:
            raise TrackError("grid_step must be positive")


@dataclass(frozen=True, eq=False)
class TrackProfile:
    grid_step: float
    samples: np.ndarray
    origin: float = 0.0
    bumps: tuple[HarmonicBump, ...] = field(default_factory=tuple)

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "bumps", tuple(self.bumps))
        if samples.ndim != 1 or samples.size < 3:
            raise TrackError("a profile needs at least 3 samples")
        if not np.all(np.isfinite(samples)):
            raise TrackError("profile elevations must be finite")
        if not self.grid_step > 0:
            raise TrackError("grid_step must be positive")

    @property
    def positions(self) -> np.ndarray:
        return self.origin + self.grid_step * np.arange(self.samples.size)

    @property
    def end(self) -> float:
        return self.origin + self.grid_step * (self.samples.size - 1)

    def __len__(self):
        return self.samples.size

    def __neg__(self) -> TrackProfile:
        # Bump metadata cannot carry a sign, so the negated profile is purely sampled.
        return TrackProfile(self.grid_step, -self.samples, self.origin, ())

    @cached_property
    def _residual_curvature(self) -> np.ndarray:
        """Central-difference curvature of whatever the bumps do not explain."""
        residual = self.samples.copy()
        x = self.positions
        for bump in self.bumps:
            residual -= bump.elevation(x)
        curv = np.zeros_like(residual)
        curv[1:-1] = (residual[2:] - 2.0 * residual[1:-1] + residual[:-2]) / self.grid_step**2
        curv[0], curv[-1] = curv[1], curv[-2]
        return curv

    @cached_property
    def _residual_slope(self) -> np.ndarray:
        residual = self.samples.copy()
        for bump in self.bumps:
            residual -= bump.elevation(self.positions)
        return np.gradient(residual, self.grid_step)


def _check_domain(domain) -> tuple[float, float]:
    lo, hi = float(domain[0]), float(domain[1])
    if not hi > lo:
        raise TrackError(f"domain must be ordered, got {domain}")
    return lo, hi


def _grid(domain: tuple[float, float], grid_step: float) -> np.ndarray:
    lo, hi = domain
    n = int(math.floor((hi - lo) / grid_step + 1e-9)) + 1
    return lo + grid_step * np.arange(n)


def harmonic_profile(
    bump: HarmonicBump, grid_step: float = DEFAULT_GRID_STEP, domain=(0.0, 40.0)
) -> TrackProfile:
    """Sample a single raised-cosine bump on a uniform grid."""
    lo, hi = _check_domain(domain)
    if grid_step > bump.wavelength_l / MIN_SAMPLES_PER_WAVELENGTH:
        raise TrackError(
            f"grid step {grid_step} m gives fewer than {MIN_SAMPLES_PER_WAVELENGTH} "
            f"samples per {bump.wavelength_l} m wavelength"
        )
    if bump.start_a < lo or bump.end_b > hi:
        raise TrackError(f"domain {domain} does not contain bump [{bump.start_a}, {bump.end_b}]")
    x = _grid((lo, hi), grid_step)
    return TrackProfile(grid_step, bump.elevation(x), lo, (bump,))


def default_psd_table(rms: float = 1e-3, band=(1.0, 120.0), n_rows: int = 256):
    """Power-law stand-in spectrum S(f) = c f^-3, scaled to the requested RMS.

    This is a generic shape, not any published track-grade spectrum.
    """
    lam_min, lam_max = band
    f_lo, f_hi = 1.0 / lam_max, 1.0 / lam_min
    c = 2.0 * rms**2 / (f_lo**-2 - f_hi**-2)
    f = np.geomspace(f_lo, f_hi, n_rows)
    return tuple((float(fk), float(c * fk**-3)) for fk in f)


def random_profile(spec: RandomProfileSpec, domain=(0.0, 300.0)) -> TrackProfile:
    """Zero-mean random profile by spectral representation.

    Cosines sit on the harmonic bins k/(N dx) of an FFT grid covering the
    domain, with amplitudes sqrt(2 S(f_k) df) and uniform random phases.
    """
    lo, hi = _check_domain(domain)
    dx = spec.grid_step
    lam_min, lam_max = spec.wavelength_band
    if lam_min < 2.0 * dx:
        raise TrackError(
            f"shortest wavelength {lam_min} m is unresolvable on a {dx} m grid"
        )
    x = _grid((lo, hi), dx)
    n = x.size
    n_fft = 1 << max(2, (n - 1).bit_length())
    df = 1.0 / (n_fft * dx)
    freqs = np.arange(n_fft // 2 + 1) * df
    in_band = (freqs >= 1.0 / lam_max) & (freqs <= 1.0 / lam_min)

    density = np.zeros_like(freqs)
    table = np.array(sorted(spec.psd_table))
    if len(table) == 1:
        f0, s0 = table[0]
        k = int(round(f0 / df))
        if 0 < k < freqs.size:
            density[k] = s0
    else:
        density = np.interp(freqs, table[:, 0], table[:, 1], left=0.0, right=0.0)
    density = np.where(in_band, density, 0.0)
    density[0] = 0.0
    density[-1] = 0.0  # Nyquist bin has no independent phase

    rng = np.random.default_rng(spec.seed)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=freqs.size)
    amplitude = np.sqrt(2.0 * density * df)
    # irfft(Z)[m] = (1/N) sum_k c_k Re(Z_k e^{2 pi i k m / N}) with c_k = 2 off the edges
    spectrum = amplitude * np.exp(1j * phases) * (n_fft / 2.0)
    series = np.fft.irfft(spectrum, n=n_fft)[:n]
    return TrackProfile(dx, series, lo, ())


def _resample(profile: TrackProfile, x: np.ndarray) -> np.ndarray:
    return np.interp(x, profile.positions, profile.samples)


def superpose(parts: Sequence[TrackProfile]) -> TrackProfile:
    """Pointwise sum of profiles.

    Mismatched grids are linearly interpolated onto the finest step over
    the common covered range, which smooths any sub-grid content.
    """
    parts = list(parts)
    if not parts:
        raise TrackError("superpose needs at least one profile")
    first = parts[0]
    same_grid = all(
        p.grid_step == first.grid_step and p.origin == first.origin and len(p) == len(first)
        for p in parts
    )
    bumps = tuple(b for p in parts for b in p.bumps)
    if same_grid:
        total = np.zeros(len(first))
        for p in parts:
            total = total + p.samples
        return TrackProfile(first.grid_step, total, first.origin, bumps)

    step = min(p.grid_step for p in parts)
    lo = max(p.origin for p in parts)
    hi = min(p.end for p in parts)
    if hi - lo < 2 * step:
        raise TrackError("profiles do not share a common range")
    x = _grid((lo, hi), step)
    total = np.zeros(x.size)
    for p in parts:
        total += _resample(p, x)
    return TrackProfile(step, total, lo, bumps)


def second_derivative(profile: TrackProfile, x):
    """Curvature w''(x) of a profile.

    Bumps contribute their analytic curvature; everything else is taken
    from central differences of the sampled residual, interpolated
    linearly between grid nodes.  Accepts scalars or arrays.
    """
    xa = np.asarray(x, dtype=float)
    lo = profile.origin + profile.grid_step
    hi = profile.end - profile.grid_step
    tol = 1e-9 * profile.grid_step
    if np.any(xa < lo - tol) or np.any(xa > hi + tol):
        raise TrackError(f"curvature requested outside [{lo}, {hi}] m")
    curv = np.interp(xa, profile.positions, profile._residual_curvature)
    for bump in profile.bumps:
        curv = curv + bump.curvature(xa)
    return float(curv) if np.ndim(x) == 0 else curv


def mean_curvature(profile: TrackProfile, x, width: float):
    """Average of w'' over [x - width/2, x + width/2], i.e. the slope
    increment divided by ``width``.

    Unlike point samples, cell averages carry the correct impulse across
    the curvature jumps at bump edges.
    """
    xa = np.asarray(x, dtype=float)
    if width <= 0:
        return second_derivative(profile, xa)
    lo = profile.origin + profile.grid_step
    hi = profile.end - profile.grid_step
    tol = 1e-9 * profile.grid_step
    if np.any(xa - width / 2 < lo - tol) or np.any(xa + width / 2 > hi + tol):
        raise TrackError(f"curvature requested outside [{lo}, {hi}] m")
    left, right = xa - width / 2, xa + width / 2
    grid = profile.positions
    rate = profile._residual_slope
    total = np.interp(right, grid, rate) - np.interp(left, grid, rate)
    for bump in profile.bumps:
        total = total + bump.slope(right) - bump.slope(left)
    return total / width


def write_profile_csv(profile: TrackProfile, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["position_m", "elevation_m"])
        for xi, wi in zip(profile.positions, profile.samples):
            writer.writerow([repr(float(xi)), repr(float(wi))])


def read_profile_csv(path) -> TrackProfile:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    x, w = data[:, 0], data[:, 1]
    steps = np.diff(x)
    step = float(np.mean(steps))
    if not np.allclose(steps, step, rtol=1e-6, atol=1e-9):
        raise TrackError(f"{path}: positions are not uniformly spaced")
    return TrackProfile(step, w, float(x[0]), ())


def write_psd_csv(table, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["spatial_frequency_per_m", "psd_m2m"])
        for f, s in table:
            writer.writerow([repr(float(f)), repr(float(s))])


def read_psd_csv(path) -> tuple[tuple[float, float], ...]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return tuple((float(f), float(s)) for f, s in data)
