"""Plot bundles for a run directory.

Every kind writes ``plots/<kind>.csv`` (or one CSV per sensor for the
scalogram), a ``plots/<kind>.json`` sidecar describing columns and
provenance, and a rendered ``plots/<kind>.png``.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .dynamics import AccelerationRecord, SpatialSeries  # noqa: E402
from .track import read_profile_csv  # noqa: E402
from .wavelet import IndexSeries, cwt, make_scale_grid, read_scalogram  # noqa: E402

__all__ = ["KINDS", "PlotError", "emit_plot_data", "band_energy"]

KINDS = ("profile", "accel-spatial", "spectrum", "scalogram", "index1", "peaks")
SPECTRUM_BAND = (60.0, 130.0)


class PlotError(ValueError):
    pass


def _need(path: Path) -> Path:
    if not path.is_file():
        raise PlotError(f"missing artifact {path}")
    return path


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _sidecar(path: Path, kind: str, run_dir: Path, columns, **extra) -> None:
    meta = {"kind": kind, "run_dir": str(run_dir.resolve()), "columns": list(columns), **extra}
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _run_meta(run_dir: Path) -> dict:
    p = run_dir / "run.json"
    return json.loads(p.read_text()) if p.is_file() else {}


def _title(run_dir: Path, what: str) -> str:
    meta = _run_meta(run_dir)
    if not meta:
        return what
    return f"{what}: {meta.get('scenario', '')} {meta.get('run_id', '')} at {meta.get('speed_kmh', float('nan')):.1f} km/h"


def _report(run_dir: Path) -> dict | None:
    p = run_dir / "report.json"
    return json.loads(p.read_text()) if p.is_file() else None


def _profile(run_dir: Path, out: Path) -> list[Path]:
    prof = read_profile_csv(_need(run_dir / "profile.csv"))
    x, w = prof.positions, prof.samples * 1e3
    csv_path = out / "profile.csv"
    _write_rows(csv_path, ["position_m", "elevation_mm"], zip(x, w))
    _sidecar(out / "profile.json", "profile", run_dir, ["position_m", "elevation_mm"],
             grid_step_m=prof.grid_step)
    fig, ax = plt.subplots(figsize=(10, 3.2))
    ax.plot(x, w, lw=0.7)
    ax.set_xlabel("position (m)")
    ax.set_ylabel("irregularity (mm)")
    ax.set_title(_title(run_dir, "track irregularity"))
    return [csv_path, out / "profile.json", _save(fig, out / "profile.png")]


def _accel_spatial(run_dir: Path, out: Path) -> list[Path]:
    sp = SpatialSeries.read_csv(_need(run_dir / "accel_spatial.csv"))
    cols = ["position_m"] + [f"acc_s{i + 1}" for i in range(sp.acc.shape[0])]
    csv_path = out / "accel-spatial.csv"
    _write_rows(csv_path, cols, np.column_stack([sp.positions, sp.acc.T]))
    _sidecar(out / "accel-spatial.json", "accel-spatial", run_dir, cols,
             units="m/s^2", sensor_positions_m=list(sp.sensors.positions))
    n = sp.acc.shape[0]
    fig, axes = plt.subplots(n, 1, figsize=(10, 1.6 * n + 0.6), sharex=True)
    for i, ax in enumerate(np.atleast_1d(axes)):
        ax.plot(sp.positions, sp.acc[i], lw=0.5)
        ax.set_ylabel(f"s{i + 1} (m/s²)")
    np.atleast_1d(axes)[-1].set_xlabel("train-head position (m)")
    np.atleast_1d(axes)[0].set_title(_title(run_dir, "bridge acceleration"))
    return [csv_path, out / "accel-spatial.json", _save(fig, out / "accel-spatial.png")]


def band_energy(freqs: np.ndarray, amplitude: np.ndarray, band=SPECTRUM_BAND) -> np.ndarray:
    """Sum of squared spectral amplitudes inside ``band`` (Hz), per row."""
    sel = (freqs >= band[0]) & (freqs <= band[1])
    return (np.atleast_2d(amplitude)[:, sel] ** 2).sum(axis=1)


def _spectrum(run_dir: Path, out: Path) -> list[Path]:
    rec = AccelerationRecord.read_csv(_need(run_dir / "accel.csv"))
    n = rec.n_samples
    freqs = np.fft.rfftfreq(n, 1.0 / rec.fs)
    amp = 2.0 * np.abs(np.fft.rfft(rec.acc, axis=1)) / n
    cols = ["frequency_hz"] + [f"amp_s{i + 1}" for i in range(amp.shape[0])]
    csv_path = out / "spectrum.csv"
    _write_rows(csv_path, cols, np.column_stack([freqs, amp.T]))
    energy = band_energy(freqs, amp)
    _sidecar(out / "spectrum.json", "spectrum", run_dir, cols, units="m/s^2 (one-sided amplitude)",
             band_hz=list(SPECTRUM_BAND), band_energy=[float(e) for e in energy])
    fig, axes = plt.subplots(amp.shape[0], 1, figsize=(10, 1.6 * amp.shape[0] + 0.6), sharex=True)
    for i, ax in enumerate(np.atleast_1d(axes)):
        ax.plot(freqs, amp[i], lw=0.6)
        ax.axvspan(*SPECTRUM_BAND, color="0.9", zorder=0)
        ax.set_ylabel(f"s{i + 1}")
    np.atleast_1d(axes)[-1].set_xlabel("frequency (Hz)")
    np.atleast_1d(axes)[0].set_title(_title(run_dir, "acceleration amplitude spectrum"))
    return [csv_path, out / "spectrum.json", _save(fig, out / "spectrum.png")]


def _scalograms(run_dir: Path):
    saved = sorted(run_dir.glob("scalogram_s*.bin"))
    if saved:
        return [read_scalogram(p) for p in saved]
    sp = SpatialSeries.read_csv(_need(run_dir / "accel_spatial.csv"))
    meta = json.loads(_need(run_dir / "index1.json").read_text())
    grid = make_scale_grid(meta["spatial_step_m"], meta["band_per_m"], meta["n_scales"], meta["wavelet"])
    return [cwt(row, grid, origin=float(sp.positions[0])) for row in sp.acc]


def _scalogram(run_dir: Path, out: Path) -> list[Path]:
    scals = _scalograms(run_dir)
    paths = []
    for i, sc in enumerate(scals):
        freqs = sc.grid.pseudo_frequencies
        cols = ["position_m"] + [f"abs_W_f{f:.4f}" for f in freqs]
        p = out / f"scalogram_s{i + 1}.csv"
        _write_rows(p, cols, np.column_stack([sc.positions, np.abs(sc.coefficients).T]))
        paths.append(p)
    first = scals[0]
    _sidecar(out / "scalogram.json", "scalogram", run_dir, ["position_m", "abs_W_f<pseudo-frequency 1/m>..."],
             files=[p.name for p in paths], scales=first.grid.scales.tolist(),
             pseudo_frequencies_per_m=first.grid.pseudo_frequencies.tolist(), wavelet=first.grid.wavelet)
    fig, axes = plt.subplots(len(scals), 1, figsize=(10, 1.8 * len(scals) + 0.6), sharex=True)
    for i, (ax, sc) in enumerate(zip(np.atleast_1d(axes), scals)):
        f = sc.grid.pseudo_frequencies
        ax.pcolormesh(sc.positions, f, np.abs(sc.coefficients), shading="auto", cmap="viridis")
        ax.set_yscale("log")
        ax.set_ylabel(f"s{i + 1} (1/m)")
    np.atleast_1d(axes)[-1].set_xlabel("train-head position (m)")
    np.atleast_1d(axes)[0].set_title(_title(run_dir, "|CWT coefficients|"))
    return paths + [out / "scalogram.json", _save(fig, out / "scalogram.png")]


def _index1(run_dir: Path, out: Path) -> list[Path]:
    idx = IndexSeries.read_csv(_need(run_dir / "index1.csv"))
    rep = _report(run_dir)
    thresholds = rep["baseline"]["threshold"] if rep else None
    cols = ["position_m"] + [f"S_sensor{s}" for s in idx.sensor_ids] + ["edge_masked"]
    csv_path = out / "index1.csv"
    _write_rows(csv_path, cols, [[float(x)] + [float(v) for v in idx.values[:, i]] + [int(idx.mask[i])]
                                 for i, x in enumerate(idx.positions)])
    _sidecar(out / "index1.json", "index1", run_dir, cols, threshold_F=thresholds)
    n = len(idx.sensor_ids)
    fig, axes = plt.subplots(n, 1, figsize=(10, 1.6 * n + 0.6), sharex=True)
    for i, ax in enumerate(np.atleast_1d(axes)):
        ax.plot(idx.positions, idx.values[i], lw=0.6)
        if thresholds:
            ax.axhline(thresholds[i], color="tab:red", lw=0.8, ls="--")
        ax.set_ylabel(f"S s{idx.sensor_ids[i]}")
    np.atleast_1d(axes)[-1].set_xlabel("train-head position (m)")
    np.atleast_1d(axes)[0].set_title(_title(run_dir, "index-1 (sum of |W| over scales)"))
    return [csv_path, out / "index1.json", _save(fig, out / "index1.png")]


def _peaks(run_dir: Path, out: Path) -> list[Path]:
    rep = _report(run_dir)
    if rep is None:
        raise PlotError(f"missing artifact {run_dir / 'report.json'} (run detect first)")
    idx = IndexSeries.read_csv(_need(run_dir / "index1.csv"))
    rows = []
    for sid, peaks in sorted(rep["peaks"].items(), key=lambda kv: int(kv[0])):
        chains = rep["chains"].get(sid, [])
        for p in peaks:
            chain = next((k for k, c in enumerate(chains) if p["position"] in c), -1)
            rows.append([int(sid), p["position"], p["value"], p["ratio"], chain])
    cols = ["sensor", "position_m", "S_value", "ratio_S_over_F", "chain"]
    csv_path = out / "peaks.csv"
    _write_rows(csv_path, cols, rows)
    _sidecar(out / "peaks.json", "peaks", run_dir, cols, status=rep["status"], selected=rep["selected"],
             estimates_m=[e["position_m"] for e in rep["estimates"]],
             periodicity_interval_m=rep["periodicity_interval_m"])
    selected = rep["selected"] or [s["id"] for s in rep["sensors"]]
    fig, axes = plt.subplots(len(selected), 1, figsize=(10, 1.8 * len(selected) + 0.6), sharex=True)
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for ax, sid in zip(np.atleast_1d(axes), selected):
        k = idx.sensor_ids.index(sid)
        ax.plot(idx.positions, idx.values[k], lw=0.5, color="0.5")
        ax.axhline(rep["baseline"]["threshold"][k], color="tab:red", lw=0.8, ls="--")
        for r in rows:
            if r[0] == sid:
                c = colors[r[4] % len(colors)] if r[4] >= 0 else "k"
                ax.plot(r[1], r[2], "o", ms=3.5, color=c, mfc="none" if r[4] < 0 else c)
        for e in rep["estimates"]:
            ax.axvline(e["position_m"], color="tab:green", lw=0.8)
        ax.set_ylabel(f"S s{sid}")
    np.atleast_1d(axes)[-1].set_xlabel("train-head position (m)")
    np.atleast_1d(axes)[0].set_title(_title(run_dir, "index-2 peaks and chains"))
    return [csv_path, out / "peaks.json", _save(fig, out / "peaks.png")]


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


_EMITTERS = {
    "profile": _profile,
    "accel-spatial": _accel_spatial,
    "spectrum": _spectrum,
    "scalogram": _scalogram,
    "index1": _index1,
    "peaks": _peaks,
}


def emit_plot_data(run_dir, kind: str) -> list[Path]:
    """Write the CSV/JSON/PNG bundle of ``kind`` under ``run_dir/plots``."""
    if kind not in _EMITTERS:
        raise PlotError(f"unknown plot kind {kind!r}; choose from {', '.join(KINDS)}")
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise PlotError(f"missing run directory {run_dir}")
    out = run_dir / "plots"
    out.mkdir(exist_ok=True)
    return _EMITTERS[kind](run_dir, out)
