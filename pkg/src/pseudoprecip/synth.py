"""Seeded synthetic TP/VIMD generator.

Stands in for reanalysis data at desk scale: a latent Gaussian random
field evolves as AR(1) in time; precipitation is an exponential
transform of its thresholded excess (intermittent, heavy-tailed, exact
zeros), and moisture divergence is a correlated signed Gaussian field
that is negative on average where rain occurs.

Each step's innovations are drawn from an RNG stream keyed on
(seed, field, step), so generation is order-independent and bit
reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, TooSmallGrid
from .grid import FieldKind, GridSeries


@dataclass(frozen=True)
class SynthConfig:
    nlat: int = 96
    nlon: int = 96
    nsteps: int = 64
    seed: int = 0
    spectral_slope: float = 3.0  # alpha: isotropic PSD ~ k^-alpha at high k
    correlation_length: float = 6.0  # k0 in cycles per domain
    wet_threshold: float = 1.0  # tau on the latent field
    tail_scale: float = 1.2  # b in exp(b * excess)
    amplitude: float = 1.0  # a, mm per 3 h
    vimd_mean: float = 0.0
    vimd_std: float = 1.0
    tp_vimd_coupling: float = 0.8  # rho
    temporal_ar1: float = 0.8  # phi

    def __post_init__(self):
        if not (0.0 <= self.tp_vimd_coupling <= 1.0):
            raise ConfigError(f"coupling rho must be in [0,1], got {self.tp_vimd_coupling}")
        if not (0.0 <= self.temporal_ar1 < 1.0):
            raise ConfigError(f"AR(1) phi must be in [0,1), got {self.temporal_ar1}")
        if self.spectral_slope <= 1.0:
            raise ConfigError(f"spectral slope must exceed 1, got {self.spectral_slope}")
        if self.correlation_length <= 0 or self.tail_scale <= 0 or self.amplitude <= 0:
            raise ConfigError("k0, tail scale and amplitude must be positive")
        if min(self.nlat, self.nlon, self.nsteps) < 1:
            raise ConfigError("grid dimensions and step count must be positive")


def _spectral_amplitude(nlat, nlon, alpha, k0):
    ky = np.fft.fftfreq(nlat) * nlat
    kx = np.fft.fftfreq(nlon) * nlon
    k2 = ky[:, None] ** 2 + kx[None, :] ** 2
    amp = (1.0 + k2 / (k0 * k0)) ** (-alpha / 4.0)
    amp[0, 0] = 0.0  # zero-mean field
    return amp


def gaussian_random_field(nlat, nlon, alpha=3.0, k0=6.0, seed=0):
    """Unit-variance zero-mean field with PSD ~ (1 + (k/k0)^2)^(-alpha/2).

    Synthesized by spectral filtering of white noise; deterministic in
    seed (ints and SeedSequence both accepted).
    """
    if nlat < 8 or nlon < 8:
        raise TooSmallGrid(f"need >= 8 cells per axis, got {nlat}x{nlon}")
    rng = np.random.default_rng(seed)
    amp = _spectral_amplitude(nlat, nlon, alpha, k0)
    white = rng.standard_normal((nlat, nlon))
    field = np.fft.ifft2(np.fft.fft2(white) * amp).real
    field -= field.mean()
    return field / field.std()


def _step_stream(seed, field_id, step):
    return np.random.SeedSequence(entropy=seed, spawn_key=(field_id, step))


def synth_tp_vimd(config=None):
    """Generate aligned (TP, VIMD) series from a SynthConfig."""
    cfg = config or SynthConfig()
    if cfg.nlat < 8 or cfg.nlon < 8:
        raise TooSmallGrid(f"need >= 8 cells per axis, got {cfg.nlat}x{cfg.nlon}")

    phi = cfg.temporal_ar1
    rho = cfg.tp_vimd_coupling
    innov_scale = np.sqrt(1.0 - phi * phi)
    cross = np.sqrt(1.0 - rho * rho)

    tp = np.empty((cfg.nsteps, cfg.nlat, cfg.nlon), dtype=np.float32)
    vimd = np.empty_like(tp)
    zw = None
    z2 = None
    for t in range(cfg.nsteps):
        ew = gaussian_random_field(cfg.nlat, cfg.nlon, cfg.spectral_slope,
                                   cfg.correlation_length, _step_stream(cfg.seed, 1, t))
        e2 = gaussian_random_field(cfg.nlat, cfg.nlon, cfg.spectral_slope,
                                   cfg.correlation_length, _step_stream(cfg.seed, 2, t))
        zw = ew if zw is None else phi * zw + innov_scale * ew
        z2 = e2 if z2 is None else phi * z2 + innov_scale * e2

        excess = zw - cfg.wet_threshold
        tp[t] = np.where(excess > 0,
                         cfg.amplitude * np.expm1(cfg.tail_scale * excess), 0.0)
        vimd[t] = cfg.vimd_mean + cfg.vimd_std * (-rho * zw + cross * z2)

    lat = 70.0 - 0.25 * np.arange(cfg.nlat)  # north to south
    lon = -12.0 + 0.25 * np.arange(cfg.nlon)
    mask = np.ones((cfg.nlat, cfg.nlon), dtype=bool)
    tp_series = GridSeries(FieldKind.TP, lat, lon, tp, mask, t0=0)
    vimd_series = GridSeries(FieldKind.VIMD, lat, lon, vimd, mask, t0=0)
    return tp_series, vimd_series
