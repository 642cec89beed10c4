"""Backend parity: the compiled kernels must match the numpy reference."""

import numpy as np
import pytest

from pseudoprecip import _kernels
from pseudoprecip._kernels import pykernels

try:
    from pseudoprecip._kernels import _core
    BACKENDS = [pykernels, _core]
except ImportError:
    _core = None
    BACKENDS = [pykernels]

ids = [b.name for b in BACKENDS]


@pytest.fixture
def rng():
    return np.random.default_rng(99)


def test_active_backend_is_exported():
    assert _kernels.name in ("python", "cython")
    assert callable(_kernels.affine_forward)


@pytest.mark.skipif(_core is None, reason="compiled backend not built")
class TestParity:
    def test_affine_forward(self, rng):
        x = rng.standard_normal((64, 5))
        w = rng.standard_normal((7, 5))
        b = rng.standard_normal(7)
        np.testing.assert_allclose(_core.affine_forward(x, w, b),
                                   pykernels.affine_forward(x, w, b),
                                   rtol=1e-13, atol=1e-13)

    def test_affine_backward(self, rng):
        x = rng.standard_normal((64, 5))
        w = rng.standard_normal((7, 5))
        dy = rng.standard_normal((64, 7))
        for got, ref in zip(_core.affine_backward(x, w, dy),
                            pykernels.affine_backward(x, w, dy)):
            np.testing.assert_allclose(got, ref, rtol=1e-13, atol=1e-13)

    def test_tanh(self, rng):
        z = rng.standard_normal((30, 4)) * 3
        np.testing.assert_allclose(_core.tanh_forward(z), pykernels.tanh_forward(z),
                                   rtol=0, atol=1e-15)
        a = pykernels.tanh_forward(z)
        da = rng.standard_normal(a.shape)
        np.testing.assert_allclose(_core.tanh_backward(a, da),
                                   pykernels.tanh_backward(a, da), rtol=1e-14, atol=1e-15)

    def test_adam(self, rng):
        g = rng.standard_normal(40)
        states = []
        for backend in (_core, pykernels):
            p = np.linspace(-1, 1, 40)
            m = np.zeros(40)
            v = np.zeros(40)
            for t in range(1, 6):
                backend.adam_update(p, g, m, v, t, 1e-2, 0.9, 0.999, 1e-8)
            states.append((p, m, v))
        for a, b in zip(*states):
            np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-15)

    def test_quantiles(self, rng):
        sx = np.sort(rng.standard_normal(1000))
        probs = np.linspace(1e-6, 1 - 1e-6, 333)
        np.testing.assert_allclose(_core.sorted_quantiles(sx, probs),
                                   pykernels.sorted_quantiles(sx, probs),
                                   rtol=0, atol=1e-14)
        targets = rng.standard_normal(333)
        l1, g1 = _core.quantile_loss_grad(sx, probs, targets)
        l2, g2 = pykernels.quantile_loss_grad(sx, probs, targets)
        assert l1 == pytest.approx(l2, rel=1e-13)
        np.testing.assert_allclose(g1, g2, rtol=1e-12, atol=1e-16)

    def test_readonly_inputs_accepted(self, rng):
        sx = np.sort(rng.standard_normal(100))
        sx.flags.writeable = False
        probs = np.linspace(0.1, 0.9, 10)
        probs.flags.writeable = False
        _core.sorted_quantiles(sx, probs)


@pytest.mark.parametrize("backend", BACKENDS, ids=ids)
class TestKernelSemantics:
    def test_affine_identity(self, backend):
        x = np.array([[2.0, 3.0]])
        w = np.array([[1.0, 1.0]])
        b = np.array([0.0])
        assert backend.affine_forward(x, w, b)[0, 0] == 5.0

    def test_adam_zero_gradient_no_move(self, backend):
        p = np.ones(5)
        m = np.zeros(5)
        v = np.zeros(5)
        backend.adam_update(p, np.zeros(5), m, v, 1, 1e-2, 0.9, 0.999, 1e-8)
        np.testing.assert_array_equal(p, np.ones(5))

    def test_sorted_quantiles_interp(self, backend):
        # sample [0, 10], p = 0.25 -> 2.5 (linear interpolation)
        q = backend.sorted_quantiles(np.array([0.0, 10.0]), np.array([0.25]))
        assert q[0] == pytest.approx(2.5)

    def test_median_odd_sample(self, backend):
        q = backend.sorted_quantiles(np.arange(1.0, 6.0), np.array([0.5]))
        assert q[0] == pytest.approx(3.0)
