import numpy as np
import pytest

from pseudoprecip import netcore
from pseudoprecip.errors import (
    BadWidths,
    MalformedCheckpoint,
    ShapeMismatch,
    VersionMismatch,
)
from pseudoprecip.netcore import (
    Activation,
    AdamState,
    DenseLayer,
    MLP,
    NormParams,
    PPModel,
    adam_step,
    backward,
    forward,
    init_mlp,
    load_model,
    save_model,
)


def fd_gradient(fun, theta, h=1e-5):
    """Central finite differences of a scalar function, the gradient oracle."""
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        tp = theta.copy()
        tm = theta.copy()
        tp.flat[i] += h
        tm.flat[i] -= h
        grad.flat[i] = (fun(tp) - fun(tm)) / (2 * h)
    return grad


class TestInit:
    def test_single_layer_shape(self):
        mlp = init_mlp([2, 1], seed=3)
        assert len(mlp.layers) == 1
        assert mlp.layers[0].weights.shape == (1, 2)
        assert mlp.layers[0].bias.shape == (1,)

    def test_deterministic(self):
        a = init_mlp([2, 8, 1], seed=5)
        b = init_mlp([2, 8, 1], seed=5)
        for la, lb in zip(a.layers, b.layers):
            np.testing.assert_array_equal(la.weights, lb.weights)

    def test_seed_changes_weights(self):
        a = init_mlp([2, 8, 1], seed=5)
        b = init_mlp([2, 8, 1], seed=6)
        assert not np.array_equal(a.layers[0].weights, b.layers[0].weights)

    def test_too_few_widths(self):
        with pytest.raises(BadWidths):
            init_mlp([2])

    def test_glorot_bound(self):
        mlp = init_mlp([30, 20], seed=0)
        limit = np.sqrt(6.0 / 50)
        assert np.all(np.abs(mlp.layers[0].weights) <= limit)
        assert np.all(mlp.layers[0].bias == 0)

    def test_default_activation_plan(self):
        mlp = init_mlp([2, 4, 4, 1], seed=0)
        acts = [lay.activation for lay in mlp.layers]
        assert acts == [Activation.TANH, Activation.TANH, Activation.IDENTITY]

    def test_chain_mismatch_rejected(self):
        l1 = DenseLayer(np.zeros((3, 2)), np.zeros(3), Activation.TANH)
        l2 = DenseLayer(np.zeros((1, 4)), np.zeros(1), Activation.IDENTITY)
        with pytest.raises(ShapeMismatch):
            MLP([l1, l2])


class TestForward:
    def test_zero_net_zero_output(self):
        mlp = MLP([DenseLayer(np.zeros((1, 2)), np.zeros(1), Activation.IDENTITY)])
        y, _ = forward(mlp, np.array([[4.0, -7.0]]))
        assert y[0, 0] == 0.0

    def test_affine_arithmetic(self):
        mlp = MLP([DenseLayer(np.array([[1.0, 1.0]]), np.array([0.0]), Activation.IDENTITY)])
        y, _ = forward(mlp, np.array([[2.0, 3.0]]))
        assert y[0, 0] == 5.0

    def test_tanh_saturation(self):
        mlp = MLP([DenseLayer(np.array([[1.0]]), np.array([0.0]), Activation.TANH)])
        y, _ = forward(mlp, np.array([[50.0]]))
        assert abs(y[0, 0] - 1.0) < 1e-12

    def test_pure(self):
        mlp = init_mlp([3, 5, 2], seed=1)
        x = np.random.default_rng(0).standard_normal((10, 3))
        y1, _ = forward(mlp, x)
        y2, _ = forward(mlp, x)
        np.testing.assert_array_equal(y1, y2)

    def test_shape_mismatch(self):
        mlp = init_mlp([3, 2], seed=1)
        with pytest.raises(ShapeMismatch):
            forward(mlp, np.zeros((4, 5)))


class TestBackward:
    def test_bias_gradient_identity(self):
        mlp = MLP([DenseLayer(np.array([[2.0]]), np.array([0.5]), Activation.IDENTITY)])
        _, cache = forward(mlp, np.array([[3.0]]))
        grads, _ = backward(mlp, cache, np.array([[1.0]]))
        assert grads[0][1][0] == 1.0  # d(out)/d(bias) = 1

    def test_zero_upstream_zero_grads(self):
        mlp = init_mlp([2, 4, 1], seed=2)
        x = np.random.default_rng(3).standard_normal((6, 2))
        _, cache = forward(mlp, x)
        grads, dx = backward(mlp, cache, np.zeros((6, 1)))
        for dw, db in grads:
            assert np.all(dw == 0) and np.all(db == 0)
        assert np.all(dx == 0)

    @pytest.mark.parametrize("widths,acts", [
        ([2, 3, 1], None),
        ([2, 5, 4, 1], None),
        ([3, 4, 4, 4, 2], None),
        ([2, 6, 1], [Activation.IDENTITY, Activation.IDENTITY]),
        ([2, 6, 1], [Activation.TANH, Activation.TANH]),
    ])
    def test_gradients_match_finite_differences(self, widths, acts):
        # exact reverse-mode gradients vs. the central-difference oracle
        rng = np.random.default_rng(hash(tuple(widths)) % 2**32)
        mlp = init_mlp(widths, activations=acts, seed=11)
        x = rng.standard_normal((7, widths[0]))
        proj = rng.standard_normal((7, widths[-1]))  # scalarizes the output

        _, cache = forward(mlp, x)
        grads, dx = backward(mlp, cache, proj)

        def loss_with(layer_idx, which, theta):
            saved = mlp.layers[layer_idx]
            w = theta.reshape(saved.weights.shape) if which == "w" else saved.weights
            b = theta if which == "b" else saved.bias
            mlp.layers[layer_idx] = DenseLayer(w, b, saved.activation)
            y, _ = forward(mlp, x)
            mlp.layers[layer_idx] = saved
            return float((y * proj).sum())

        for li, (dw, db) in enumerate(grads):
            fd_w = fd_gradient(lambda t: loss_with(li, "w", t),
                               mlp.layers[li].weights.ravel().copy())
            fd_b = fd_gradient(lambda t: loss_with(li, "b", t),
                               mlp.layers[li].bias.copy())
            scale = max(np.abs(fd_w).max(), 1e-8)
            assert np.abs(dw.ravel() - fd_w).max() / scale < 1e-6
            scale = max(np.abs(fd_b).max(), 1e-8)
            assert np.abs(db - fd_b).max() / scale < 1e-6

        def loss_x(xt):
            y, _ = forward(mlp, xt.reshape(x.shape))
            return float((y * proj).sum())

        fd_x = fd_gradient(loss_x, x.ravel().copy()).reshape(x.shape)
        assert np.abs(dx - fd_x).max() / max(np.abs(fd_x).max(), 1e-8) < 1e-6

    def test_many_random_probes(self):
        # >= 100 random parameter probes across depths and activations
        rng = np.random.default_rng(42)
        checked = 0
        for depth_widths in ([2, 4, 1], [2, 4, 3, 1], [2, 3, 3, 3, 1]):
            mlp = init_mlp(depth_widths, seed=rng.integers(1 << 30))
            x = rng.standard_normal((5, depth_widths[0]))
            proj = rng.standard_normal((5, depth_widths[-1]))
            _, cache = forward(mlp, x)
            grads, _ = backward(mlp, cache, proj)
            params = mlp.parameters()
            analytic = [g for pair in grads for g in pair]
            for _ in range(40):
                pi = rng.integers(len(params))
                idx = rng.integers(params[pi].size)
                theta = params[pi]
                h = 1e-5
                orig = theta.flat[idx]
                theta.flat[idx] = orig + h
                yp, _ = forward(mlp, x)
                theta.flat[idx] = orig - h
                ym, _ = forward(mlp, x)
                theta.flat[idx] = orig
                fd = float(((yp - ym) * proj).sum()) / (2 * h)
                got = analytic[pi].flat[idx]
                assert abs(got - fd) <= 1e-6 * max(abs(fd), 1e-6)
                checked += 1
        assert checked >= 100


class TestAdam:
    def test_zero_gradient_fixed_point(self):
        mlp = init_mlp([2, 3, 1], seed=7)
        params = mlp.parameters()
        before = [p.copy() for p in params]
        state = AdamState.for_params(params)
        adam_step(params, [np.zeros_like(p) for p in params], state)
        for p, b in zip(params, before):
            np.testing.assert_array_equal(p, b)

    def test_first_step_magnitude(self):
        # hand-evaluated: bias correction makes mhat = g and vhat = g^2
        # after one step from zero state, so the move is lr * g/(|g|+eps)
        lr = 1e-3
        p = np.array([0.0])
        state = AdamState.for_params([p], lr=lr)
        adam_step([p], [np.array([2.5])], state)
        expect = -lr * 2.5 / (2.5 + 1e-8)
        assert p[0] == pytest.approx(expect, rel=1e-12)
        assert abs(abs(p[0]) - lr) < 1e-6 * lr

    def test_deterministic_trajectory(self):
        runs = []
        for _ in range(2):
            mlp = init_mlp([2, 4, 1], seed=3)
            params = mlp.parameters()
            state = AdamState.for_params(params, lr=1e-2)
            rng = np.random.default_rng(5)
            for _ in range(10):
                grads = [rng.standard_normal(p.shape) for p in params]
                adam_step(params, grads, state)
            runs.append([p.copy() for p in params])
        for a, b in zip(*runs):
            np.testing.assert_array_equal(a, b)

    def test_shape_mismatch(self):
        p = np.zeros(3)
        state = AdamState.for_params([p])
        with pytest.raises(ShapeMismatch):
            adam_step([p], [np.zeros(4)], state)


class TestCheckpoint:
    def make_model(self, seed=0):
        return PPModel(init_mlp([2, 8, 1], seed=seed),
                       init_mlp([1, 8, 1], seed=seed + 1),
                       NormParams(1.5, -0.25, 2.0))

    def test_round_trip_bit_exact(self, tmp_path):
        model = self.make_model()
        path = tmp_path / "m.ppm"
        save_model(model, path)
        back = load_model(path)
        probe = np.random.default_rng(0).standard_normal((32, 2))
        y1, _ = forward(model.encoder, probe)
        y2, _ = forward(back.encoder, probe)
        np.testing.assert_array_equal(y1, y2)
        z1, _ = forward(model.decoder, y1)
        z2, _ = forward(back.decoder, y2)
        np.testing.assert_array_equal(z1, z2)
        assert back.norm == model.norm

    def test_all_parameters_exact(self, tmp_path):
        model = self.make_model(seed=9)
        path = tmp_path / "m.ppm"
        save_model(model, path)
        back = load_model(path)
        for a, b in zip(model.encoder.parameters() + model.decoder.parameters(),
                        back.encoder.parameters() + back.decoder.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_truncated(self, tmp_path):
        model = self.make_model()
        path = tmp_path / "m.ppm"
        save_model(model, path)
        path.write_bytes(path.read_bytes()[:-20])
        with pytest.raises(MalformedCheckpoint):
            load_model(path)

    def test_wrong_magic(self, tmp_path):
        model = self.make_model()
        path = tmp_path / "m.ppm"
        save_model(model, path)
        raw = path.read_bytes()
        path.write_bytes(b"XXXX" + raw[4:])
        with pytest.raises(VersionMismatch):
            load_model(path)

    def test_trailing_garbage(self, tmp_path):
        model = self.make_model()
        path = tmp_path / "m.ppm"
        save_model(model, path)
        path.write_bytes(path.read_bytes() + b"\x00" * 8)
        with pytest.raises(MalformedCheckpoint):
            load_model(path)


class TestPPModelShape:
    def test_bad_encoder_width(self):
        with pytest.raises(ShapeMismatch):
            PPModel(init_mlp([3, 1], seed=0), init_mlp([1, 1], seed=0),
                    NormParams(1.0, 0.0, 1.0))
