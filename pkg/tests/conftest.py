import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pseudoprecip.grid import FieldKind, GridSeries

settings.register_profile(
    "ci", deadline=None, max_examples=50,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


def make_series(values, kind=FieldKind.TP, mask=None, t0=0):
    """GridSeries around a (nsteps, nlat, nlon) stack with synthetic axes."""
    values = np.asarray(values)
    _, nlat, nlon = values.shape
    lat = 60.0 - 0.5 * np.arange(nlat)
    lon = -10.0 + 0.5 * np.arange(nlon)
    if mask is None:
        mask = np.ones((nlat, nlon), dtype=bool)
    return GridSeries(kind, lat, lon, values, mask, t0=t0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_tp(rng):
    vals = np.maximum(rng.standard_normal((16, 12, 10)) - 0.5, 0.0)
    return make_series(vals)
