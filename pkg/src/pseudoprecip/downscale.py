"""Patch-ridge super-resolver and the two-route comparison.

A deliberately simple learned upsampler: for each of the f^2 sub-pixel
offsets, one closed-form ridge regression maps the surrounding
(2r+1)^2 low-resolution patch (plus bias) to the high-resolution value.
Being closed form it is deterministic, which keeps the route comparison
(direct precipitation vs. encode-downscale-decode) free of training
variance.

PPD checkpoint layout (little-endian)::

    "PPD1" | factor:u32 | radius:u32 | lambda:f64
    | f*f coefficient blocks, each ((2r+1)^2 + 1) f64
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import blend
from .errors import (
    BadFactor,
    GeometryMismatch,
    InsufficientData,
    MalformedCheckpoint,
    SingularSystem,
    VersionMismatch,
)
from .grid import GridSeries, slice_steps
from .spectral import LowpassSpec, make_pairs

PPD_MAGIC = b"PPD1"


@dataclass(frozen=True)
class DSModel:
    factor: int
    radius: int
    lam: float
    coeffs: np.ndarray  # (factor^2, (2*radius+1)^2 + 1) float64

    def __post_init__(self):
        d = (2 * self.radius + 1) ** 2 + 1
        if self.coeffs.shape != (self.factor ** 2, d):
            raise BadFactor(
                f"coefficients {self.coeffs.shape} inconsistent with "
                f"factor {self.factor}, radius {self.radius}")


def _patch_features(field, radius):
    """(ncells, (2r+1)^2 + 1) design rows from a reflect-padded field."""
    padded = np.pad(field, radius, mode="reflect")
    k = 2 * radius + 1
    patches = sliding_window_view(padded, (k, k)).reshape(field.size, k * k)
    return np.column_stack([patches, np.ones(field.size)])


def train_downscaler(pairs, radius=2, lam=1e-3):
    """Per-offset ridge regressions solved from accumulated normal equations."""
    f = pairs.factor
    hr, lr = pairs.hr, pairs.lr
    n_samples = lr.nlat * lr.nlon * lr.nsteps
    if n_samples < 1000:
        raise InsufficientData(f"{n_samples} cells per offset, need >= 1000")
    d = (2 * radius + 1) ** 2 + 1
    gram = np.zeros((d, d))
    rhs = np.zeros((f * f, d))
    for t in range(lr.nsteps):
        a = _patch_features(lr.values[t].astype(np.float64), radius)
        gram += a.T @ a
        hrt = hr.values[t].astype(np.float64)
        for dy in range(f):
            for dx in range(f):
                y = hrt[dy::f, dx::f].reshape(-1)
                rhs[dy * f + dx] += a.T @ y
    if lam == 0.0 and np.linalg.matrix_rank(gram, hermitian=True) < d:
        raise SingularSystem("normal equations are rank deficient and lambda = 0")
    system = gram + lam * np.eye(d)
    coeffs = np.linalg.solve(system, rhs.T).T
    return DSModel(factor=f, radius=radius, lam=lam, coeffs=coeffs)


def apply_downscaler(model, lr, hr_like=None):
    """Predict the HR series; edges come from reflection padding.

    `hr_like` supplies the target geometry (axes/mask); without it the
    HR axes are reconstructed assuming uniform spacing.
    """
    f = model.factor
    if hr_like is not None:
        if (hr_like.nlat, hr_like.nlon) != (lr.nlat * f, lr.nlon * f):
            raise GeometryMismatch(
                f"hr template {hr_like.nlat}x{hr_like.nlon} is not "
                f"{f}x the lr grid {lr.nlat}x{lr.nlon}")
        lat, lon, mask = hr_like.lat, hr_like.lon, hr_like.mask
    else:
        lat = _refine_axis(lr.lat, f)
        lon = _refine_axis(lr.lon, f)
        mask = np.repeat(np.repeat(lr.mask, f, axis=0), f, axis=1)
    out = np.empty((lr.nsteps, lr.nlat * f, lr.nlon * f), dtype=np.float32)
    for t in range(lr.nsteps):
        a = _patch_features(lr.values[t].astype(np.float64), model.radius)
        for dy in range(f):
            for dx in range(f):
                pred = a @ model.coeffs[dy * f + dx]
                out[t, dy::f, dx::f] = pred.reshape(lr.nlat, lr.nlon)
    return GridSeries(lr.kind, lat, lon, out, mask, lr.t0, lr.dt)


def _refine_axis(axis, f):
    if axis.size < 2:
        raise GeometryMismatch("cannot refine a single-point axis")
    step = (axis[1] - axis[0]) / f
    return axis[0] + step * np.arange(axis.size * f)


@dataclass(frozen=True)
class RouteResult:
    """Held-out HR reconstructions of both routes plus the reference.

    `direct` regresses precipitation itself (may carry negative artifact
    cells); `via_pp` downscales the proxy field and decodes, so it is
    non-negative by construction.  All three share geometry/timestamps.
    """

    reference: GridSeries
    direct: GridSeries
    via_pp: GridSeries
    pp_reference: GridSeries  # encoded proxy on the held-out steps
    factor: int
    train_steps: int


def route_compare(tp_hr, vimd_hr, pp_model, spec=None, factor=4,
                  radius=2, lam=1e-3, train_fraction=0.75):
    """Train both downscaling routes and reconstruct the held-out steps.

    Steps are split train/test on a whole-day boundary (8 steps) so the
    held-out block supports extreme-day counting.
    """
    spec = spec or LowpassSpec()
    nsteps = tp_hr.nsteps
    n_train = max(8, int(nsteps * train_fraction) // 8 * 8)
    if n_train >= nsteps:
        raise InsufficientData(
            f"{nsteps} steps leave no held-out block after a {n_train}-step training split")

    pp_hr = blend.encode(pp_model, tp_hr, vimd_hr)
    tp_train, tp_test = slice_steps(tp_hr, 0, n_train), slice_steps(tp_hr, n_train, nsteps)
    pp_train, pp_test = slice_steps(pp_hr, 0, n_train), slice_steps(pp_hr, n_train, nsteps)

    ds_direct = train_downscaler(make_pairs(tp_train, factor, spec), radius, lam)
    lr_direct = make_pairs(tp_test, factor, spec).lr
    direct = apply_downscaler(ds_direct, lr_direct, hr_like=tp_test)

    ds_pp = train_downscaler(make_pairs(pp_train, factor, spec), radius, lam)
    lr_pp = make_pairs(pp_test, factor, spec).lr
    pp_pred = apply_downscaler(ds_pp, lr_pp, hr_like=pp_test)
    via_pp = blend.decode(pp_model, pp_pred)

    return RouteResult(reference=tp_test, direct=direct, via_pp=via_pp,
                       pp_reference=pp_test, factor=factor, train_steps=n_train)


def save_ds_model(model, path):
    with open(path, "wb") as fh:
        fh.write(PPD_MAGIC)
        fh.write(struct.pack("<IId", model.factor, model.radius, model.lam))
        fh.write(model.coeffs.astype("<f8").tobytes())


def load_ds_model(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != PPD_MAGIC:
        raise VersionMismatch(f"{path}: magic {raw[:4]!r} is not {PPD_MAGIC!r}")
    head = struct.Struct("<IId")
    if len(raw) < 4 + head.size:
        raise MalformedCheckpoint(f"{path}: truncated header")
    factor, radius, lam = head.unpack_from(raw, 4)
    d = (2 * radius + 1) ** 2 + 1
    body = raw[4 + head.size:]
    if len(body) != 8 * factor * factor * d:
        raise MalformedCheckpoint(
            f"{path}: expected {factor * factor}x{d} coefficients, got {len(body)} bytes")
    coeffs = np.frombuffer(body, "<f8").reshape(factor * factor, d).copy()
    return DSModel(factor=factor, radius=radius, lam=lam, coeffs=coeffs)
