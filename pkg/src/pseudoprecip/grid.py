"""Raster data model and PPG binary container.

A :class:`GridSeries` is a time-ordered stack of lat-lon rasters of one
physical field on a fixed geometry.  Values are held as 32-bit floats
(matching on-disk storage); numerical modules promote to float64 before
computing.  Latitude runs north to south (descending) by convention,
rows are stored row-major.

PPG layout (all little-endian)::

    "PPG1" | kind:u8 | nlat:u32 | nlon:u32 | nsteps:u32
    | lat:f64 x nlat | lon:f64 x nlon | t0:i64 | dt:i64
    | values:f32 x (nlat*nlon) per step, nsteps blocks
    | mask: packed bits (big bit order), one shared block
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyIntersection,
    IoFailure,
    MalformedHeader,
    MalformedInput,
    NegativeTP,
    NonFiniteValue,
)

MAGIC = b"PPG1"
STEP_SECONDS = 10800  # 3-hourly accumulation interval
CSV_MAX_CELLS = 10_000


class FieldKind(IntEnum):
    """Physical field identity.

    TP is non-negative accumulated precipitation (mm per 3 h), VIMD is a
    signed moisture divergence (positive = drying), PP is the learned
    dimensionless blend.
    """

    TP = 0
    VIMD = 1
    PP = 2


def _check_axis(name, arr, uniform):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise DimensionMismatch(f"{name} must be a 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"{name} axis contains non-finite entries")
    d = np.diff(arr)
    if arr.size > 1 and not (np.all(d > 0) or np.all(d < 0)):
        raise MalformedInput(f"{name} axis is not strictly monotone")
    if uniform and arr.size > 2 and not np.allclose(d, d[0], rtol=1e-9, atol=1e-12):
        raise MalformedInput(f"{name} axis spacing is not uniform")
    return arr


def _check_values(values, mask, nlat, nlon, nsteps=None):
    """Validate a (nsteps,nlat,nlon) or (nlat,nlon) value block against mask."""
    expect = (nlat, nlon) if nsteps is None else (nsteps, nlat, nlon)
    if values.shape != expect:
        raise DimensionMismatch(f"values shape {values.shape}, expected {expect}")
    if mask.shape != (nlat, nlon):
        raise DimensionMismatch(f"mask shape {mask.shape}, expected {(nlat, nlon)}")
    valid = values[..., mask] if nsteps is not None else values[mask]
    finite = np.isfinite(valid)
    if not finite.all():
        bad = np.argwhere(~finite)
        where = f"step {bad[0][0]}" if nsteps is not None else "cell"
        raise NonFiniteValue(f"non-finite unmasked value at {where}")


def check_physical(obj):
    """Enforce the physical-range invariant (TP >= 0).

    Applied at the persistence boundary (PPG read/write, CSV) and by
    producers of physical fields.  In-memory analysis intermediates are
    exempt: band-limited or regressed precipitation legitimately carries
    negative artifact values, which is the phenomenon under study.
    """
    if obj.kind != FieldKind.TP:
        return
    valid = obj.values[..., obj.mask] if obj.values.ndim == 3 else obj.values[obj.mask]
    if valid.size and valid.min() < 0:
        if obj.values.ndim == 3:
            step = int(np.argwhere((obj.values[:, obj.mask] < 0).any(axis=1))[0][0])
            raise NegativeTP(f"negative TP value at step {step}")
        raise NegativeTP("negative TP value")


@dataclass(frozen=True)
class GeoGrid:
    """One raster of a single field. Immutable after construction."""

    kind: FieldKind
    lat: np.ndarray
    lon: np.ndarray
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        lat = _check_axis("lat", self.lat, uniform=False)
        lon = _check_axis("lon", self.lon, uniform=True)
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        mask = np.ascontiguousarray(self.mask, dtype=bool)
        _check_values(values, mask, lat.size, lon.size)
        for name, arr in (("lat", lat), ("lon", lon), ("values", values), ("mask", mask)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "kind", FieldKind(self.kind))

    @property
    def nlat(self):
        return self.lat.size

    @property
    def nlon(self):
        return self.lon.size


@dataclass(frozen=True)
class GridSeries:
    """Time-ordered rasters on shared geometry, 3-hourly steps."""

    kind: FieldKind
    lat: np.ndarray
    lon: np.ndarray
    values: np.ndarray  # (nsteps, nlat, nlon) float32
    mask: np.ndarray  # (nlat, nlon) bool, shared by all steps
    t0: int
    dt: int = STEP_SECONDS

    def __post_init__(self):
        lat = _check_axis("lat", self.lat, uniform=False)
        lon = _check_axis("lon", self.lon, uniform=True)
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        mask = np.ascontiguousarray(self.mask, dtype=bool)
        if values.ndim != 3 or values.shape[0] < 1:
            raise MalformedInput(f"series needs >= 1 step, got values shape {values.shape}")
        if self.dt != STEP_SECONDS:
            raise MalformedInput(f"step spacing must be {STEP_SECONDS} s, got {self.dt}")
        _check_values(values, mask, lat.size, lon.size, values.shape[0])
        for name, arr in (("lat", lat), ("lon", lon), ("values", values), ("mask", mask)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "kind", FieldKind(self.kind))
        object.__setattr__(self, "t0", int(self.t0))
        object.__setattr__(self, "dt", int(self.dt))

    @property
    def nlat(self):
        return self.lat.size

    @property
    def nlon(self):
        return self.lon.size

    @property
    def nsteps(self):
        return self.values.shape[0]

    @property
    def timestamps(self):
        return self.t0 + self.dt * np.arange(self.nsteps, dtype=np.int64)

    def step(self, i):
        """Single step as a GeoGrid (shares geometry arrays)."""
        return GeoGrid(self.kind, self.lat, self.lon, self.values[i], self.mask)

    def with_values(self, values, kind=None):
        """Same geometry and time axis, new value stack."""
        return GridSeries(self.kind if kind is None else kind,
                          self.lat, self.lon, values, self.mask, self.t0, self.dt)

    def same_geometry(self, other):
        return (self.values.shape == other.values.shape
                and np.array_equal(self.lat, other.lat)
                and np.array_equal(self.lon, other.lon)
                and np.array_equal(self.mask, other.mask)
                and self.t0 == other.t0 and self.dt == other.dt)


@dataclass(frozen=True)
class FieldStats:
    mean: float
    std: float
    min: float
    max: float
    wet_fraction: float | None  # TP only: share of unmasked cells > 0


def field_stats(series):
    """Summary statistics over unmasked cells of all steps."""
    vals = series.values[:, series.mask].astype(np.float64)
    if vals.size == 0:
        raise MalformedInput("series has no unmasked cells")
    wet = None
    if series.kind == FieldKind.TP:
        wet = float(np.count_nonzero(vals > 0) / vals.size)
    return FieldStats(float(vals.mean()), float(vals.std()),
                      float(vals.min()), float(vals.max()), wet)


def slice_steps(series, start, stop):
    """Contiguous step range [start, stop) as a new series."""
    nsteps = series.nsteps
    start, stop, _ = slice(start, stop).indices(nsteps)
    if stop <= start:
        raise MalformedInput(f"empty step slice [{start}, {stop}) of {nsteps}")
    return GridSeries(series.kind, series.lat, series.lon,
                      series.values[start:stop], series.mask,
                      series.t0 + series.dt * start, series.dt)


def crop(series, lat_range, lon_range):
    """Sub-series covering cells inside the closed lat/lon ranges.

    Ranges are (lo, hi) in degrees regardless of axis direction.
    """
    lat_lo, lat_hi = sorted(float(v) for v in lat_range)
    lon_lo, lon_hi = sorted(float(v) for v in lon_range)
    ilat = np.nonzero((series.lat >= lat_lo) & (series.lat <= lat_hi))[0]
    ilon = np.nonzero((series.lon >= lon_lo) & (series.lon <= lon_hi))[0]
    if ilat.size == 0 or ilon.size == 0:
        raise EmptyIntersection(
            f"crop lat {lat_range} lon {lon_range} misses grid "
            f"(lat {series.lat[0]}..{series.lat[-1]}, lon {series.lon[0]}..{series.lon[-1]})")
    sl_lat = slice(ilat[0], ilat[-1] + 1)
    sl_lon = slice(ilon[0], ilon[-1] + 1)
    return GridSeries(series.kind, series.lat[sl_lat], series.lon[sl_lon],
                      series.values[:, sl_lat, sl_lon], series.mask[sl_lat, sl_lon],
                      series.t0, series.dt)


# --- PPG binary I/O ---

_HEAD = struct.Struct("<4sBIII")
_TIME = struct.Struct("<qq")


def write_grid_series(series, path):
    """Serialize to PPG. Round-trips bit-exactly through read_grid_series."""
    if not isinstance(series, GridSeries):
        raise MalformedInput("write_grid_series expects a GridSeries")
    check_physical(series)
    nlat, nlon, nsteps = series.nlat, series.nlon, series.nsteps
    try:
        with open(path, "wb") as fh:
            fh.write(_HEAD.pack(MAGIC, int(series.kind), nlat, nlon, nsteps))
            fh.write(series.lat.astype("<f8").tobytes())
            fh.write(series.lon.astype("<f8").tobytes())
            fh.write(_TIME.pack(series.t0, series.dt))
            fh.write(series.values.astype("<f4").tobytes())
            fh.write(np.packbits(series.mask.ravel()).tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_grid_series(path):
    """Parse and validate a PPG file."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc

    if len(raw) < _HEAD.size or raw[:4] != MAGIC:
        raise MalformedHeader(f"{path}: missing PPG1 magic at offset 0")
    magic, kind_code, nlat, nlon, nsteps = _HEAD.unpack_from(raw, 0)
    try:
        kind = FieldKind(kind_code)
    except ValueError:
        raise MalformedHeader(f"{path}: unknown field kind code {kind_code} at offset 4")
    if nlat < 1 or nlon < 1:
        raise MalformedHeader(f"{path}: empty grid dimensions {nlat}x{nlon}")
    if nsteps < 1:
        raise MalformedHeader(f"{path}: zero-step series disallowed (offset 13)")

    ncell = nlat * nlon
    off = _HEAD.size
    need = off + 8 * (nlat + nlon) + _TIME.size + 4 * ncell * nsteps + (ncell + 7) // 8
    if len(raw) != need:
        raise DimensionMismatch(
            f"{path}: file length {len(raw)} != {need} expected for "
            f"{nlat}x{nlon}x{nsteps} (truncated or padded)")

    lat = np.frombuffer(raw, "<f8", nlat, off)
    off += 8 * nlat
    lon = np.frombuffer(raw, "<f8", nlon, off)
    off += 8 * nlon
    t0, dt = _TIME.unpack_from(raw, off)
    off += _TIME.size
    values = np.frombuffer(raw, "<f4", ncell * nsteps, off).reshape(nsteps, nlat, nlon)
    off += 4 * ncell * nsteps
    bits = np.frombuffer(raw, np.uint8, (ncell + 7) // 8, off)
    mask = np.unpackbits(bits, count=ncell).astype(bool).reshape(nlat, nlon)
    series = GridSeries(kind, lat, lon, values, mask, t0, dt)
    check_physical(series)
    return series


# --- CSV import/export for small single grids ---

def export_grid_csv(grid, path):
    """Write one grid as lat,lon,value rows (masked cells -> nan)."""
    if grid.nlat * grid.nlon > CSV_MAX_CELLS:
        raise MalformedInput(
            f"CSV export limited to {CSV_MAX_CELLS} cells, grid has {grid.nlat * grid.nlon}")
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lat", "lon", "value"])
            for i in range(grid.nlat):
                for j in range(grid.nlon):
                    v = float(grid.values[i, j]) if grid.mask[i, j] else float("nan")
                    w.writerow([repr(float(grid.lat[i])), repr(float(grid.lon[j])), repr(v)])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def import_grid_csv(path, kind):
    """Read a grid written by export_grid_csv."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not rows or rows[0] != ["lat", "lon", "value"]:
        raise MalformedHeader(f"{path}: expected 'lat,lon,value' header row")
    body = rows[1:]
    if not body:
        raise MalformedInput(f"{path}: no data rows")
    try:
        lat_col = np.array([float(r[0]) for r in body])
        lon_col = np.array([float(r[1]) for r in body])
        val_col = np.array([float(r[2]) for r in body])
    except (ValueError, IndexError) as exc:
        raise MalformedInput(f"{path}: bad csv row: {exc}") from exc
    # row-major: lon cycles fastest
    nlon = int(np.count_nonzero(lat_col == lat_col[0]))
    if nlon < 1 or len(body) % nlon:
        raise DimensionMismatch(f"{path}: rows ({len(body)}) not a multiple of nlon ({nlon})")
    nlat = len(body) // nlon
    lat = lat_col.reshape(nlat, nlon)[:, 0]
    lon = lon_col[:nlon]
    if not np.array_equal(lon_col.reshape(nlat, nlon), np.broadcast_to(lon, (nlat, nlon))):
        raise DimensionMismatch(f"{path}: lon values do not repeat row-major")
    values = val_col.reshape(nlat, nlon)
    mask = np.isfinite(values)
    values = np.where(mask, values, 0.0)
    grid = GeoGrid(kind, lat, lon, values, mask)
    check_physical(grid)
    return grid
