"""Continuous wavelet transform and the coefficient-sum index.

The mother wavelets are derivatives of a Gaussian smoothing kernel,
psi = d^m theta / dt^m with theta the unit normal density, so order 1 is
the gradient of a smoothed signal.  Scaled wavelets use L1 normalization,
psi_a(t) = psi(t / a) / a, which makes a matched sinusoid produce the same
coefficient magnitude at every scale.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial import hermite_e
from scipy import signal

__all__ = [
    "WaveletError",
    "ScaleGrid",
    "Scalogram",
    "IndexSeries",
    "make_scale_grid",
    "wavelet_kernel",
    "cwt",
    "coefficient_sum",
    "index_series",
    "write_scalogram",
    "read_scalogram",
]

TRUNCATION = 5.0
MIN_SCALES = 8


class WaveletError(ValueError):
    pass


def _order(kind: str) -> int:
    if not kind.startswith("dog"):
        raise WaveletError(f"unknown wavelet {kind!r}; expected 'dog1', 'dog2', ...")
    try:
        order = int(kind[3:] or 1)
    except ValueError:
        raise WaveletError(f"unknown wavelet {kind!r}") from None
    if order < 1:
        raise WaveletError("derivative order must be at least 1")
    return order


@dataclass(frozen=True, eq=False)
class ScaleGrid:
    """Scales in axis units (seconds or metres), ascending."""

    scales: np.ndarray
    sample_step: float
    wavelet: str = "dog1"

    def __post_init__(self):
        scales = np.asarray(self.scales, dtype=float)
        object.__setattr__(self, "scales", scales)
        if scales.size < MIN_SCALES:
            raise WaveletError(f"need at least {MIN_SCALES} scales, got {scales.size}")
        if np.any(np.diff(scales) <= 0) or scales[0] <= 0:
            raise WaveletError("scales must be positive and strictly increasing")

    @property
    def pseudo_frequencies(self) -> np.ndarray:
        """Peak frequency of |psi_hat| at each scale (Hz or 1/m)."""
        return math.sqrt(_order(self.wavelet)) / (2.0 * np.pi * self.scales)

    def __len__(self):
        return self.scales.size


def make_scale_grid(sample_step: float, band, n_scales: int = 48, wavelet: str = "dog1") -> ScaleGrid:
    """Log-spaced scales whose pseudo-frequencies span ``band``.

    Pseudo-frequencies are those of the continuous wavelet.  Scales below
    ``sample_step`` (pseudo-frequency above 1 / (2 pi step) for dog1) are
    under-resolved, and their sampled kernels respond at lower frequencies
    than nominal.
    """
    f_lo, f_hi = float(band[0]), float(band[1])
    nyquist = 0.5 / sample_step
    if not 0 < f_lo < f_hi:
        raise WaveletError(f"band must be positive and ordered, got {band}")
    if f_hi >= nyquist:
        raise WaveletError(f"band upper edge {f_hi} reaches Nyquist {nyquist}")
    if n_scales < MIN_SCALES:
        raise WaveletError(f"need at least {MIN_SCALES} scales, got {n_scales}")
    c = math.sqrt(_order(wavelet)) / (2.0 * np.pi)
    scales = np.geomspace(c / f_hi, c / f_lo, n_scales)
    return ScaleGrid(scales, sample_step, wavelet)


def _half_width(scale: float, step: float) -> int:
    return max(2, int(math.ceil(TRUNCATION * scale / step)))


def wavelet_kernel(scale: float, step: float, wavelet: str = "dog1") -> np.ndarray:
    """Sampled psi_a times the sample step, ready for discrete convolution."""
    m = _order(wavelet)
    h = _half_width(scale, step)
    u = np.arange(-h, h + 1) * step / scale
    coeffs = np.zeros(m + 1)
    coeffs[m] = 1.0
    theta = np.exp(-0.5 * u**2) / math.sqrt(2.0 * np.pi)
    psi = (-1) ** m * hermite_e.hermeval(u, coeffs) * theta
    kernel = psi * step / scale
    if m % 2 == 0:
        kernel -= kernel.mean()
    return kernel


@dataclass(eq=False)
class Scalogram:
    coefficients: np.ndarray
    grid: ScaleGrid
    mask: np.ndarray
    axis: str = "space"
    origin: float = 0.0

    @property
    def positions(self) -> np.ndarray:
        return self.origin + self.grid.sample_step * np.arange(self.coefficients.shape[1])


def _edge_mask(n: int, grid: ScaleGrid) -> np.ndarray:
    mask = np.zeros((len(grid), n), dtype=bool)
    idx = np.arange(n)
    for j, a in enumerate(grid.scales):
        h = _half_width(a, grid.sample_step)
        mask[j] = (idx < h) | (idx >= n - h)
    return mask


def cwt(series, grid: ScaleGrid, wavelet: str | None = None, *, method: str = "fft",
        axis: str = "space", origin: float = 0.0) -> Scalogram:
    """W(a, b) = (x * psi_a)(b) with symmetric padding at the ends.

    The mask flags cells whose kernel support reaches into the padding.
    ``method`` is "fft" (transform-domain) or "direct".
    """
    wavelet = wavelet or grid.wavelet
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise WaveletError("cwt expects a 1-D series")
    widths = [_half_width(a, grid.sample_step) for a in grid.scales]
    pad = max(widths)
    if x.size < 4 * (2 * pad + 1):
        raise WaveletError(f"series of {x.size} samples is shorter than 4 wavelet supports ({2 * pad + 1})")
    padded = np.pad(x, pad, mode="symmetric")
    out = np.empty((len(grid), x.size))
    for j, a in enumerate(grid.scales):
        kernel = wavelet_kernel(a, grid.sample_step, wavelet)
        h = widths[j]
        if method == "fft":
            full = signal.fftconvolve(padded, kernel, mode="valid")
        elif method == "direct":
            full = np.convolve(padded, kernel, mode="valid")
        else:
            raise WaveletError(f"unknown method {method!r}")
        start = pad - h
        out[j] = full[start:start + x.size]
    return Scalogram(out, grid, _edge_mask(x.size, grid), axis, origin)


@dataclass(eq=False)
class IndexSeries:
    """Coefficient sums S(b) of one run; ``values`` has shape (n_sensors, n)."""

    positions: np.ndarray
    values: np.ndarray
    mask: np.ndarray
    sensor_ids: tuple[int, ...] = (1,)
    run_id: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        self.mask = np.asarray(self.mask, dtype=bool)
        self.sensor_ids = tuple(int(s) for s in self.sensor_ids)
        if self.values.shape != (len(self.sensor_ids), self.positions.size):
            raise WaveletError("values must have shape (n_sensors, n_positions)")

    @property
    def interior(self) -> np.ndarray:
        return ~self.mask

    @property
    def step(self) -> float:
        return float(self.positions[1] - self.positions[0])

    def sensor(self, sensor_id: int) -> np.ndarray:
        return self.values[self.sensor_ids.index(sensor_id)]

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["position_m"] + [f"S_sensor{s}" for s in self.sensor_ids] + ["edge_masked"])
            for i, x in enumerate(self.positions):
                writer.writerow([repr(float(x))] + [repr(float(v)) for v in self.values[:, i]]
                                + [int(self.mask[i])])

    @classmethod
    def read_csv(cls, path, run_id: str = "") -> IndexSeries:
        with Path(path).open() as fh:
            header = next(csv.reader(fh))
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        ids = tuple(int(h.removeprefix("S_sensor")) for h in header[1:-1])
        return cls(data[:, 0], data[:, 1:-1].T, data[:, -1].astype(bool), ids, run_id or Path(path).stem)


def coefficient_sum(scalogram: Scalogram, sensor_id: int = 1) -> IndexSeries:
    """S(b) = sum over scales of |W(a_j, b)|; edge cells stay in the sum and
    the union of their mask is carried along."""
    values = np.abs(scalogram.coefficients).sum(axis=0)
    mask = scalogram.mask.any(axis=0)
    return IndexSeries(scalogram.positions, values[None, :], mask, (sensor_id,))


def index_series(positions, acc, grid: ScaleGrid, sensor_ids=None, run_id: str = "",
                 method: str = "fft") -> IndexSeries:
    """Index-1 curves for every sensor row of ``acc``."""
    acc = np.atleast_2d(acc)
    positions = np.asarray(positions, dtype=float)
    sensor_ids = tuple(sensor_ids or range(1, acc.shape[0] + 1))
    rows, mask = [], None
    for row in acc:
        scal = cwt(row, grid, method=method, origin=float(positions[0]))
        s = coefficient_sum(scal)
        rows.append(s.values[0])
        mask = s.mask
    return IndexSeries(positions, np.vstack(rows), mask, sensor_ids, run_id)


def _run_lengths(mask_row: np.ndarray) -> list[int]:
    """Alternating run lengths starting with a False run."""
    runs, current, count = [], False, 0
    for v in mask_row:
        if bool(v) == current:
            count += 1
        else:
            runs.append(count)
            current, count = bool(v), 1
    runs.append(count)
    return runs


def write_scalogram(scalogram: Scalogram, path) -> None:
    """Binary dump: 8-byte little-endian header length, JSON header, float64 matrix."""
    header = {
        "shape": list(scalogram.coefficients.shape),
        "axis": scalogram.axis,
        "origin": scalogram.origin,
        "sample_step": scalogram.grid.sample_step,
        "wavelet": scalogram.grid.wavelet,
        "scales": scalogram.grid.scales.tolist(),
        "pseudo_frequencies": scalogram.grid.pseudo_frequencies.tolist(),
        "mask_run_lengths": [_run_lengths(row) for row in scalogram.mask],
        "dtype": "<f8",
    }
    blob = json.dumps(header).encode()
    with Path(path).open("wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(scalogram.coefficients, dtype="<f8").tobytes())


def read_scalogram(path) -> Scalogram:
    raw = Path(path).read_bytes()
    (n,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8:8 + n])
    coeffs = np.frombuffer(raw[8 + n:], dtype="<f8").reshape(header["shape"]).copy()
    mask = np.zeros(coeffs.shape, dtype=bool)
    for j, runs in enumerate(header["mask_run_lengths"]):
        pos, value = 0, False
        for r in runs:
            mask[j, pos:pos + r] = value
            pos += r
            value = not value
    grid = ScaleGrid(np.array(header["scales"]), header["sample_step"], header["wavelet"])
    return Scalogram(coeffs, grid, mask, header["axis"], header["origin"])
