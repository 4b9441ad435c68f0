import math

import numpy as np
import pytest

from sampleflow.neural import (Adam, BatchNorm1d, Conv1d, DegenerateBatchError,
                               Dense, Flatten, IncompatibleTrunkError,
                               MaxPool1d, Network, ReLU, ShapeError,
                               build_classifier, build_regressor,
                               cross_entropy_loss, init_params,
                               load_checkpoint, mse_loss, save_checkpoint,
                               softmax, transfer_trunk)
from sampleflow.neural.gradcheck import run_all
from sampleflow.neural.network import flatten_width


class TestConv1d:
    def test_identity_kernel(self):
        layer = Conv1d(1, 1, 1)
        layer.weight.value[...] = 1.0
        x = np.arange(6, dtype=float).reshape(1, 1, 6)
        np.testing.assert_array_equal(layer.forward(x, True), x)

    def test_shift_kernel_with_zero_pad(self):
        layer = Conv1d(1, 1, 3)
        layer.weight.value[0, 0] = [0, 0, 1]  # picks the right neighbor
        x = np.array([[[1.0, 2.0, 3.0]]])
        np.testing.assert_array_equal(layer.forward(x, True),
                                      [[[2.0, 3.0, 0.0]]])

    def test_width_preserved(self):
        layer = Conv1d(2, 8, 5)
        y = layer.forward(np.zeros((3, 2, 45)), True)
        assert y.shape == (3, 8, 45)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            Conv1d(2, 4, 3).forward(np.zeros((1, 3, 10)), True)

    def test_backward_before_forward(self):
        with pytest.raises(RuntimeError):
            Conv1d(1, 1, 3).backward(np.zeros((1, 1, 4)))

    def test_zero_upstream_gives_zero_grads(self):
        layer = Conv1d(2, 3, 3)
        layer.weight.value[...] = np.random.default_rng(0).standard_normal(
            layer.weight.value.shape)
        layer.forward(np.ones((2, 2, 7)), True)
        dx = layer.backward(np.zeros((2, 3, 7)))
        assert not np.any(dx)
        assert not np.any(layer.weight.grad)
        assert not np.any(layer.bias.grad)

    def test_scalar_chain_rule(self):
        layer = Conv1d(1, 1, 1)
        layer.weight.value[...] = 2.0
        x = np.array([[[1.0, 2.0, 3.0]]])
        layer.forward(x, True)
        dy = np.array([[[0.5, 1.0, 1.5]]])
        layer.backward(dy)
        assert layer.weight.grad[0, 0, 0] == pytest.approx(float(
            np.sum(x * dy)))
        assert layer.bias.grad[0] == pytest.approx(3.0)


class TestBatchNorm:
    def test_train_mode_normalizes(self):
        layer = BatchNorm1d(3)
        x = np.random.default_rng(1).normal(5.0, 2.0, (8, 3, 7))
        y = layer.forward(x, True)
        np.testing.assert_allclose(y.mean(axis=(0, 2)), 0.0, atol=1e-6)
        np.testing.assert_allclose(y.var(axis=(0, 2)), 1.0, atol=1e-3)

    def test_eval_identity_stats(self):
        layer = BatchNorm1d(2)
        x = np.random.default_rng(2).standard_normal((4, 2, 5))
        y = layer.forward(x, False)
        np.testing.assert_allclose(y, x, atol=1e-4)

    def test_degenerate_batch(self):
        with pytest.raises(DegenerateBatchError):
            BatchNorm1d(2).forward(np.zeros((1, 2, 1)), True)

    def test_2d_input(self):
        layer = BatchNorm1d(4)
        x = np.random.default_rng(3).standard_normal((10, 4))
        y = layer.forward(x, True)
        assert y.shape == (10, 4)
        np.testing.assert_allclose(y.mean(axis=0), 0.0, atol=1e-6)

    def test_running_stats_updated_in_train_only(self):
        layer = BatchNorm1d(1)
        x = np.full((4, 1, 2), 10.0) + np.random.default_rng(0).normal(
            0, 1, (4, 1, 2))
        layer.forward(x, True)
        after_train = layer.running_mean.copy()
        assert after_train[0] != 0.0
        layer.forward(x, False)
        np.testing.assert_array_equal(layer.running_mean, after_train)


class TestMaxPool:
    def test_hand_example_remainder_dropped(self):
        x = np.array([[[1.0, 3, 2, 5, 4, 6, 9]]])
        y = MaxPool1d(3).forward(x, True)
        np.testing.assert_array_equal(y, [[[3.0, 6.0]]])

    def test_tie_gradient_to_first_index(self):
        layer = MaxPool1d(3)
        x = np.ones((1, 1, 6))
        y = layer.forward(x, True)
        np.testing.assert_array_equal(y, [[[1.0, 1.0]]])
        dx = layer.backward(np.array([[[1.0, 2.0]]]))
        np.testing.assert_array_equal(dx, [[[1, 0, 0, 2, 0, 0]]])

    def test_too_narrow(self):
        with pytest.raises(ShapeError):
            MaxPool1d(3).forward(np.zeros((1, 1, 2)), True)


class TestDenseRelu:
    def test_dense_identity(self):
        layer = Dense(4, 4)
        layer.weight.value[...] = np.eye(4)
        x = np.random.default_rng(4).standard_normal((3, 4))
        np.testing.assert_array_equal(layer.forward(x, True), x)

    def test_relu_clamps_negatives(self):
        y = ReLU().forward(np.array([[-2.0, -0.5, 0.0, 0.5]]), True)
        np.testing.assert_array_equal(y, [[0, 0, 0, 0.5]])

    def test_flatten_roundtrip(self):
        layer = Flatten()
        x = np.arange(24, dtype=float).reshape(2, 3, 4)
        y = layer.forward(x, True)
        assert y.shape == (2, 12)
        np.testing.assert_array_equal(layer.backward(y), x)


class TestLosses:
    def test_mse_zero_at_match(self):
        x = np.random.default_rng(0).standard_normal((2, 24))
        loss, grad = mse_loss(x, x.copy())
        assert loss == 0.0
        assert not np.any(grad)

    def test_mse_single_coordinate(self):
        pred = np.zeros((1, 24))
        target = np.zeros((1, 24))
        pred[0, 0] = 1.0
        loss, _ = mse_loss(pred, target)
        assert loss == pytest.approx(1 / 24)

    def test_cross_entropy_uniform(self):
        loss, _ = cross_entropy_loss(np.zeros((3, 5)), np.array([0, 2, 4]))
        assert loss == pytest.approx(math.log(5), rel=1e-12)

    def test_cross_entropy_huge_logit_stable(self):
        logits = np.zeros((1, 4))
        logits[0, 1] = 1000.0
        loss, grad = cross_entropy_loss(logits, np.array([1]))
        assert math.isfinite(loss) and loss == pytest.approx(0.0, abs=1e-12)
        assert np.all(np.isfinite(grad))

    def test_softmax_rows_sum_to_one(self):
        logits = np.random.default_rng(1).uniform(-1e4, 1e4, (5, 7))
        s = softmax(logits)
        np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)


class ScalarAdamOracle:
    """Textbook Adam on a scalar, written independently of the optimizer."""

    def __init__(self, theta, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.theta, self.lr, self.b1, self.b2, self.eps = theta, lr, b1, b2, eps
        self.m = self.v = 0.0
        self.t = 0

    def step(self, grad):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        m_hat = self.m / (1 - self.b1 ** self.t)
        v_hat = self.v / (1 - self.b2 ** self.t)
        self.theta -= self.lr * m_hat / (math.sqrt(v_hat) + self.eps)


class TestAdam:
    def test_zero_gradient_no_update(self):
        from sampleflow.neural.layers import Param
        p = Param(np.array([1.0, -2.0]))
        opt = Adam([p], lr=0.1)
        opt.step()
        np.testing.assert_array_equal(p.value, [1.0, -2.0])

    def test_first_step_approximates_signed_lr(self):
        from sampleflow.neural.layers import Param
        p = Param(np.array([0.0]))
        opt = Adam([p], lr=0.05)
        p.grad[...] = 3.0
        opt.step()
        # bias-corrected first step: lr * g / (|g| + eps)
        expected = 0.05 * 3.0 / (3.0 + 1e-8)
        assert p.value[0] == pytest.approx(-expected, rel=1e-9)

    def test_matches_scalar_oracle_on_quadratic(self):
        from sampleflow.neural.layers import Param
        p = Param(np.array([1.0]))
        opt = Adam([p], lr=0.1)
        oracle = ScalarAdamOracle(1.0, lr=0.1)
        for _ in range(10):
            p.zero_grad()
            p.grad[...] = 2.0 * p.value  # d/dx x^2
            opt.step()
            oracle.step(2.0 * oracle.theta)
            assert p.value[0] == pytest.approx(oracle.theta, abs=1e-12)


class TestNetworkConstruction:
    def test_shape_ledger_window_45(self):
        assert flatten_width(45) == 320
        net = build_regressor(45)
        dense_sizes = [l.out_features for l in net.head
                       if isinstance(l, Dense)]
        assert dense_sizes == [256, 128, 128, 24]
        first_dense = next(l for l in net.head if isinstance(l, Dense))
        assert first_dense.in_features == 320

    def test_classifier_head_output(self):
        net = build_classifier(45, 7)
        assert [l.out_features for l in net.head
                if isinstance(l, Dense)] == [256, 128, 128, 7]

    def test_deviant_geometry_fails_construction(self):
        from sampleflow.neural.network import (_assert_shapes, _make_head,
                                               _make_trunk)
        trunk = _make_trunk()
        trunk[6] = MaxPool1d(5)  # wrong pool: flatten width no longer 320
        net = Network(trunk + _make_head(320, 24), trunk_len=len(trunk))
        with pytest.raises(ShapeError):
            _assert_shapes(net, 45, 24)

    def test_init_deterministic(self):
        a = init_params(build_regressor(45), 9)
        b = init_params(build_regressor(45), 9)
        for pa, pb in zip(a.params(), b.params()):
            np.testing.assert_array_equal(pa.value, pb.value)
        c = init_params(build_regressor(45), 10)
        assert any(not np.array_equal(pa.value, pc.value)
                   for pa, pc in zip(a.params(), c.params()))

    def test_init_activation_scale(self):
        net = init_params(build_regressor(45), 0)
        net.eval()
        x = np.random.default_rng(0).standard_normal((64, 2, 45))
        y = net.forward(x)
        # glorot keeps activations from exploding or collapsing to zero
        assert np.all(np.isfinite(y))
        assert 1e-6 < y.var() < 100

    def test_eval_forward_pure(self):
        net = init_params(build_regressor(45), 1)
        net.eval()
        x = np.random.default_rng(2).standard_normal((2, 2, 45))
        np.testing.assert_array_equal(net.forward(x), net.forward(x))


class TestTransferTrunk:
    def test_copy_semantics(self):
        src = init_params(build_regressor(45), 1)
        # give the source nontrivial running stats
        src.train()
        src.forward(np.random.default_rng(0).standard_normal((8, 2, 45)))
        dst = init_params(build_classifier(45, 3), 2)
        transfer_trunk(src, dst)
        x = np.random.default_rng(1).standard_normal((4, 2, 45))
        src.eval(), dst.eval()

        def trunk_out(net):
            h = x
            for layer in net.trunk:
                h = layer.forward(h, False)
            return h

        np.testing.assert_array_equal(trunk_out(src), trunk_out(dst))

    def test_freeze_keeps_trunk_bit_identical(self):
        src = init_params(build_regressor(45), 1)
        dst = init_params(build_classifier(45, 3), 2)
        transfer_trunk(src, dst, freeze=True)
        snapshot = [p.value.copy() for l in dst.trunk for p in l.params()]
        opt = Adam(dst.params(trainable_only=True), lr=1e-2)
        rng = np.random.default_rng(3)
        dst.train()
        for _ in range(10):
            opt.zero_grad()
            logits = dst.forward(rng.standard_normal((4, 2, 45)))
            _, d = cross_entropy_loss(logits, rng.integers(0, 3, 4))
            dst.backward(d)
            opt.step()
        after = [p.value for l in dst.trunk for p in l.params()]
        for a, b in zip(snapshot, after):
            np.testing.assert_array_equal(a, b)

    def test_unfrozen_trunk_trains(self):
        src = init_params(build_regressor(45), 1)
        dst = init_params(build_classifier(45, 3), 2)
        transfer_trunk(src, dst, freeze=False)
        snapshot = [p.value.copy() for l in dst.trunk for p in l.params()]
        opt = Adam(dst.params(trainable_only=True), lr=1e-2)
        dst.train()
        rng = np.random.default_rng(3)
        opt.zero_grad()
        logits = dst.forward(rng.standard_normal((4, 2, 45)))
        _, d = cross_entropy_loss(logits, np.array([0, 1, 2, 0]))
        dst.backward(d)
        opt.step()
        after = [p.value for l in dst.trunk for p in l.params()]
        assert any(not np.array_equal(a, b) for a, b in zip(snapshot, after))

    def test_incompatible_trunk(self):
        src = init_params(build_regressor(45), 1)
        dst = init_params(build_classifier(45, 3), 2)
        dst.layers[0] = Conv1d(2, 16, 5)
        with pytest.raises(IncompatibleTrunkError):
            transfer_trunk(src, dst)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        net = init_params(build_classifier(45, 4), 5)
        net.train()
        net.forward(np.random.default_rng(0).standard_normal((8, 2, 45)))
        net.meta["classes"] = ["a", "b", "c", "d"]
        path = tmp_path / "model.ckpt"
        save_checkpoint(net, path, extra_meta={"classes": ["a", "b", "c", "d"]})
        loaded, meta = load_checkpoint(path)
        assert meta["classes"] == ["a", "b", "c", "d"]
        x = np.random.default_rng(1).standard_normal((2, 2, 45))
        net.eval(), loaded.eval()
        np.testing.assert_array_equal(net.forward(x), loaded.forward(x))

    def test_version_rejected(self, tmp_path):
        import json
        import zipfile
        net = init_params(build_regressor(45), 0)
        path = tmp_path / "m.ckpt"
        save_checkpoint(net, path)
        # tamper with the embedded version
        with zipfile.ZipFile(path) as zf:
            names = {n: zf.read(n) for n in zf.namelist()}
        meta_npy = names["meta.npy"]
        header_end = meta_npy.index(b"\n") + 1
        meta = json.loads(meta_npy[header_end:].decode())
        meta["checkpoint_version"] = 99
        body = json.dumps(meta).encode()
        import io as _io
        buf = _io.BytesIO()
        np.save(buf, np.frombuffer(body, dtype=np.uint8))
        names["meta.npy"] = buf.getvalue()
        with zipfile.ZipFile(path, "w") as zf:
            for n, b in names.items():
                zf.writestr(n, b)
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(path)

    def test_deterministic_bytes(self, tmp_path):
        import hashlib
        import time
        net = init_params(build_regressor(45), 3)
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(net, a)
        time.sleep(1.1)  # would change zip timestamps if they were live
        save_checkpoint(net, b)
        assert hashlib.sha256(a.read_bytes()).digest() == \
            hashlib.sha256(b.read_bytes()).digest()


class TestTrainingSanity:
    def test_single_step_decreases_loss(self):
        failures = 0
        for seed in range(50):
            rng = np.random.default_rng(seed)
            net = init_params(build_regressor(45), seed)
            x = rng.standard_normal((8, 2, 45))
            y = rng.standard_normal((8, 24))
            opt = Adam(net.params(), lr=1e-3)
            net.train()
            opt.zero_grad()
            before, d = mse_loss(net.forward(x), y)
            net.backward(d)
            opt.step()
            after, _ = mse_loss(net.forward(x), y)
            failures += after >= before
        assert failures <= 2


def test_gradcheck_quick():
    results = run_all(num_seeds=2)
    assert all(r.passed for r in results), results
