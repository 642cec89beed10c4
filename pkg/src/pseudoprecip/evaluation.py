"""Validation metrics: temporal PSD, Q-Q data, extreme-day counts.

All metrics are pure functions of their inputs; report emission writes
CSV tables plus deterministic SVG charts.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import charts
from .blend import empirical_quantiles
from .errors import (
    EmptySample,
    IoFailure,
    MalformedInput,
    MisalignedSeries,
    SeriesTooShort,
)
from .grid import FieldKind, STEP_SECONDS

STEPS_PER_DAY = 86400 // STEP_SECONDS  # 8 three-hour accumulations
SAMPLES_PER_DAY = float(STEPS_PER_DAY)  # sampling rate in cycles/day terms

EXTREME_THRESHOLD_MM = 20.0  # default daily total defining an extreme day


@dataclass(frozen=True)
class PsdCurve:
    freqs: np.ndarray  # cycles per day
    power: np.ndarray
    segments: int


@dataclass(frozen=True)
class QqData:
    probs: np.ndarray
    q_candidate: np.ndarray
    q_reference: np.ndarray


@dataclass(frozen=True)
class ExtremeCount:
    counts: np.ndarray  # (nlat, nlon) int, days above threshold per cell
    threshold: float
    ndays: int
    lat: np.ndarray | None = None
    lon: np.ndarray | None = None


@dataclass(frozen=True)
class GibbsReportView:
    """Gibbs metrics re-read from a report table."""

    negative_cell_fraction: float
    max_overshoot_ratio: float
    dry_region_ringing_energy: float


def temporal_psd(series, cell, segment_length=256):
    """Mean periodogram at one cell over non-overlapping segments.

    Per-segment means are removed, so the integral of the curve over
    frequency equals the mean segment variance (Parseval).  Frequencies
    are in cycles/day for the 3-hourly sampling (Nyquist 4).
    """
    ilat, ilon = cell
    if not series.mask[ilat, ilon]:
        raise MalformedInput(f"cell ({ilat}, {ilon}) is masked")
    n = series.nsteps
    ell = int(segment_length)
    if n < ell:
        raise SeriesTooShort(f"{n} steps < segment length {ell}")
    x = series.values[:, ilat, ilon].astype(np.float64)
    nseg = n // ell
    segs = x[:nseg * ell].reshape(nseg, ell)
    segs = segs - segs.mean(axis=1, keepdims=True)
    spec = np.fft.rfft(segs, axis=1)
    # one-sided density: sum(power) * df == mean segment variance
    power = (np.abs(spec) ** 2) / (SAMPLES_PER_DAY * ell)
    power[:, 1:] *= 2.0
    if ell % 2 == 0:
        power[:, -1] /= 2.0
    freqs = np.fft.rfftfreq(ell, d=1.0 / SAMPLES_PER_DAY)
    return PsdCurve(freqs=freqs, power=power.mean(axis=0), segments=nseg)


def qq_data(candidate, reference, probs):
    """Paired empirical quantiles of two samples at shared probabilities."""
    cand = np.asarray(candidate, dtype=np.float64).ravel()
    ref = np.asarray(reference, dtype=np.float64).ravel()
    if cand.size == 0 or ref.size == 0:
        raise EmptySample("qq_data needs nonempty candidate and reference samples")
    probs = np.asarray(probs, dtype=np.float64)
    return QqData(probs=probs,
                  q_candidate=empirical_quantiles(cand, probs),
                  q_reference=empirical_quantiles(ref, probs))


def extreme_day_count(tp, threshold=EXTREME_THRESHOLD_MM):
    """Days whose 8-step total strictly exceeds the threshold, per cell."""
    if tp.kind != FieldKind.TP:
        raise MalformedInput(f"extreme_day_count expects TP, got {tp.kind.name}")
    if tp.t0 % 86400:
        raise MisalignedSeries(f"series starts at t0={tp.t0}, not on a day boundary")
    if tp.nsteps % STEPS_PER_DAY:
        raise MisalignedSeries(
            f"{tp.nsteps} steps is not a whole number of {STEPS_PER_DAY}-step days")
    ndays = tp.nsteps // STEPS_PER_DAY
    daily = tp.values.astype(np.float64).reshape(
        ndays, STEPS_PER_DAY, tp.nlat, tp.nlon).sum(axis=1)
    counts = (daily > threshold).sum(axis=0).astype(np.int64)
    counts[~tp.mask] = 0
    return ExtremeCount(counts=counts, threshold=float(threshold), ndays=ndays,
                        lat=tp.lat, lon=tp.lon)


def _write_csv(path, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def emit_report(out_dir, psd=None, qq=None, extremes=None, gibbs=None, summary=None,
                tables=True, charts=True):
    """Write CSV tables and/or SVG charts; returns the emitted paths.

    Each metric argument is a {label: metric} mapping; at least one must
    be nonempty.  Output is byte-deterministic in the inputs.  The two
    pipeline stages split the work: `evaluate` emits tables, `report`
    re-reads them and emits charts plus the file index.
    """
    out_dir = Path(out_dir)
    psd = psd or {}
    qq = qq or {}
    extremes = extremes or {}
    gibbs = gibbs or {}
    summary = summary or {}
    if not (psd or qq or extremes or gibbs or summary):
        raise MalformedInput("emit_report called with no metrics")

    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(name, header, rows):
        path = out_dir / name
        _write_csv(path, header, rows)
        written.append(path)

    if tables:
        for label in sorted(psd):
            c = psd[label]
            emit(f"psd_{label}.csv", ["freq", "power", "segments"],
                 [[repr(float(f)), repr(float(p)), c.segments]
                  for f, p in zip(c.freqs, c.power)])
        for label in sorted(qq):
            q = qq[label]
            emit(f"qq_{label}.csv", ["prob", "q_cand", "q_ref"],
                 [[repr(float(p)), repr(float(a)), repr(float(b))]
                  for p, a, b in zip(q.probs, q.q_candidate, q.q_reference)])
        for label in sorted(extremes):
            e = extremes[label]
            lat = e.lat if e.lat is not None else np.arange(e.counts.shape[0], dtype=float)
            lon = e.lon if e.lon is not None else np.arange(e.counts.shape[1], dtype=float)
            emit(f"extremes_{label}.csv", ["lat", "lon", "count"],
                 [[repr(float(lat[i])), repr(float(lon[j])), int(e.counts[i, j])]
                  for i in range(e.counts.shape[0]) for j in range(e.counts.shape[1])])
        if gibbs:
            rows = []
            for label in sorted(gibbs):
                g = gibbs[label]
                rows += [["negative_cell_fraction", label, repr(g.negative_cell_fraction)],
                         ["max_overshoot_ratio", label, repr(g.max_overshoot_ratio)],
                         ["dry_region_ringing_energy", label, repr(g.dry_region_ringing_energy)]]
            emit("gibbs.csv", ["metric", "route", "value"], rows)
        if summary:
            emit("summary.csv", ["metric", "value"],
                 [[k, repr(float(v))] for k, v in sorted(summary.items())])

    if charts:
        written += _emit_charts(out_dir, psd, qq, extremes, gibbs)
        index = out_dir / "index.txt"
        names = sorted({p.name for p in written}
                       | {p.name for p in out_dir.glob("*.csv")})
        with open(index, "w", newline="\n") as fh:
            for name in names:
                fh.write(name + "\n")
        written.append(index)
    return written


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def read_report_tables(report_dir):
    """Parse metric CSVs back into their dataclasses (inverse of tables)."""
    report_dir = Path(report_dir)
    psd = {}
    qq = {}
    extremes = {}
    gibbs = {}
    summary = {}
    for path in sorted(report_dir.glob("psd_*.csv")):
        _, rows = _read_csv(path)
        label = path.stem[len("psd_"):]
        psd[label] = PsdCurve(freqs=np.array([float(r[0]) for r in rows]),
                              power=np.array([float(r[1]) for r in rows]),
                              segments=int(rows[0][2]) if rows else 0)
    for path in sorted(report_dir.glob("qq_*.csv")):
        _, rows = _read_csv(path)
        label = path.stem[len("qq_"):]
        qq[label] = QqData(probs=np.array([float(r[0]) for r in rows]),
                           q_candidate=np.array([float(r[1]) for r in rows]),
                           q_reference=np.array([float(r[2]) for r in rows]))
    for path in sorted(report_dir.glob("extremes_*.csv")):
        _, rows = _read_csv(path)
        label = path.stem[len("extremes_"):]
        lat = sorted({float(r[0]) for r in rows}, reverse=True)
        lon = sorted({float(r[1]) for r in rows})
        counts = np.zeros((len(lat), len(lon)), dtype=np.int64)
        lat_ix = {v: i for i, v in enumerate(lat)}
        lon_ix = {v: j for j, v in enumerate(lon)}
        for r in rows:
            counts[lat_ix[float(r[0])], lon_ix[float(r[1])]] = int(r[2])
        extremes[label] = ExtremeCount(counts=counts, threshold=float("nan"), ndays=0,
                                       lat=np.array(lat), lon=np.array(lon))
    gibbs_path = report_dir / "gibbs.csv"
    if gibbs_path.exists():
        _, rows = _read_csv(gibbs_path)
        by_route = {}
        for metric, route, value in rows:
            by_route.setdefault(route, {})[metric] = float(value)
        for route, vals in by_route.items():
            gibbs[route] = GibbsReportView(
                negative_cell_fraction=vals.get("negative_cell_fraction", 0.0),
                max_overshoot_ratio=vals.get("max_overshoot_ratio", 0.0),
                dry_region_ringing_energy=vals.get("dry_region_ringing_energy", 0.0))
    summary_path = report_dir / "summary.csv"
    if summary_path.exists():
        _, rows = _read_csv(summary_path)
        summary = {r[0]: float(r[1]) for r in rows}
    return {"psd": psd, "qq": qq, "extremes": extremes, "gibbs": gibbs, "summary": summary}


def _emit_charts(out_dir, psd, qq, extremes, gibbs):
    written = []
    if psd:
        path = out_dir / "psd.svg"
        charts.line_chart(path, [(label, psd[label].freqs, psd[label].power)
                                 for label in sorted(psd)],
                          "Temporal power spectral density",
                          "frequency (cycles/day)", "power", logx=True, logy=True)
        written.append(path)
    if qq:
        path = out_dir / "qq.svg"
        curves = []
        for label in sorted(qq):
            q = qq[label]
            curves.append((label, q.q_reference, q.q_candidate))
        ref = qq[sorted(qq)[0]].q_reference
        lo, hi = float(np.min(ref)), float(np.max(ref))
        curves.append(("diagonal", np.array([lo, hi]), np.array([lo, hi])))
        charts.line_chart(path, curves, "Quantile-quantile",
                          "reference quantile", "candidate quantile")
        written.append(path)
    if extremes:
        path = out_dir / "extremes.svg"
        charts.bar_chart(path, [(label, int(extremes[label].counts.sum()))
                                for label in sorted(extremes)],
                         "Total extreme days (all cells)", "days")
        written.append(path)
    if gibbs:
        path = out_dir / "gibbs.svg"
        charts.bar_chart(path, [(label, gibbs[label].dry_region_ringing_energy)
                                for label in sorted(gibbs)],
                         "Dry-region ringing energy", "mean squared value")
        written.append(path)
    return written
