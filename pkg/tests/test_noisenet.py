import logging
import struct

import numpy as np
import pytest

from gms.errors import NumericalError, TrainingDivergedError
from gms.mixture import MixtureDistribution, oracle_noise_moments, toy1d
from gms.noisenet import (
    MAGIC,
    NetProvider,
    OracleProvider,
    TrainHyper,
    backbone_loss_and_grad,
    head_loss_and_grad,
    head_target,
    init_net,
    load,
    oracle_mse,
    predict,
    save,
    time_embedding,
    train_heads,
    train_stage1,
    validation_batch,
)
from gms.schedule import make_schedule

from _tiny import TINY, numeric_grad, rel_error, tiny_batch, tiny_net  # noqa: E402


def dirac_at_zero():
    return MixtureDistribution(weights=[1.0], means=[[0.0]], vars=[[0.0]])


class TestLayers:
    def test_time_embedding(self):
        e = time_embedding(np.array([0, 7]), 8)
        assert e.shape == (2, 8)
        np.testing.assert_allclose(e[0], [0, 0, 0, 0, 1, 1, 1, 1])
        np.testing.assert_allclose(np.sum(e[:, :4] ** 2 + e[:, 4:] ** 2, axis=1), 4.0)

    def test_head_target(self):
        eps = np.array([[-1.5, 0.2]])
        np.testing.assert_array_equal(head_target(eps, 3), eps * eps * eps)
        np.testing.assert_array_equal(head_target(eps, 2), eps * eps)


class TestGradients:
    @pytest.mark.parametrize("order", [2, 3])
    def test_head_gradient(self, order):
        net = tiny_net()
        x, t, eps = tiny_batch(net)
        loss, grads = head_loss_and_grad(net, order, x, t, eps)
        flat = [a for layer in grads for a in layer]
        params = [a for layer in net.heads[order] for a in layer]
        num = numeric_grad(lambda: head_loss_and_grad(net, order, x, t, eps)[0], params)
        assert rel_error(flat, num) < 1e-4

    def test_backbone_gradient(self):
        net = tiny_net(orders=())
        x, t, eps = tiny_batch(net)
        _, grads = backbone_loss_and_grad(net, x, t, eps)
        flat = [a for layer in grads for a in layer]
        params = [a for layer in net.backbone for a in layer]
        num = numeric_grad(lambda: backbone_loss_and_grad(net, x, t, eps)[0], params)
        assert rel_error(flat, num) < 1e-4


class TestPredict:
    def test_deterministic_untrained(self):
        sch = make_schedule("linear", 100)
        a, b = init_net(1, sch, TINY), init_net(1, sch, TINY)
        x = np.linspace(-1, 1, 5)[:, None]
        np.testing.assert_array_equal(predict(a, x, 10).m1, predict(b, x, 10).m1)

    def test_order_validation(self):
        net = tiny_net(orders=(2,))
        with pytest.raises(ValueError):
            predict(net, np.zeros((1, 2)), 5, order=4)
        with pytest.raises(ValueError):
            predict(net, np.zeros((1, 2)), 5, order=3)
        with pytest.raises(ValueError):
            predict(net, np.zeros((1, 2)), 0, order=1)

    def test_second_order_clamp(self, caplog):
        net = tiny_net()
        net.heads[2][-1][1][:] = -10.0  # force raw order-2 output far below m1^2
        x = np.random.default_rng(0).normal(size=(20, 2))
        with caplog.at_level(logging.DEBUG, logger="gms.noisenet"):
            nm = predict(net, x, 17, order=3)
        assert np.all(nm.m2 >= nm.m1**2)
        assert any("clamp" in r.message for r in caplog.records)

    def test_vector_input(self):
        net = tiny_net()
        nm = predict(net, np.zeros(2), 3, order=3)
        assert nm.m1.shape == (2,) and nm.order == 3

    def test_non_finite_raises(self):
        net = tiny_net()
        net.backbone[-1][1][:] = np.inf
        with pytest.raises(NumericalError):
            predict(net, np.zeros((1, 2)), 3)


class TestTraining:
    def test_dirac_prior(self):
        sch = make_schedule("linear", 1000)
        net = train_stage1(dirac_at_zero(), sch, TrainHyper(width=32, depth=2, iterations=3000))
        ts = np.repeat(np.linspace(1, 1000, 25).astype(int), 21)
        z = np.tile(np.linspace(-2, 2, 21), 25)
        pred = predict(net, (sch.sigma[ts] * z)[:, None], ts).m1[:, 0]
        assert np.max(np.abs(pred - z)) < 0.05

    def test_loss_decreases_and_repeatable(self):
        sch = make_schedule("linear", 200)
        hyper = TrainHyper(width=16, depth=2, iterations=300, seed=5)
        x, t, eps = validation_batch(toy1d(), sch, 1024)
        before = backbone_loss_and_grad(init_net(1, sch, hyper, toy1d().variance()), x, t, eps)[0]
        a = train_stage1(toy1d(), sch, hyper)
        b = train_stage1(toy1d(), sch, hyper)
        assert backbone_loss_and_grad(a, x, t, eps)[0] < before
        for p, q in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(p, q)

    def test_heads_keep_backbone(self):
        sch = make_schedule("linear", 200)
        hyper = TrainHyper(width=16, depth=2, head_width=8, iterations=50)
        net = train_stage1(toy1d(), sch, hyper)
        digest = net.backbone_digest()
        out = train_heads(train_heads(net, 3, toy1d(), sch, hyper), 2, toy1d(), sch, hyper)
        assert out.backbone_digest() == digest == net.backbone_digest()
        assert out.orders == (1, 2, 3) and net.orders == (1,)
        with pytest.raises(ValueError):
            train_heads(net, 4, toy1d(), sch, hyper)

    def test_divergence_detected(self):
        sch = make_schedule("linear", 100)
        # a step this large overflows the second layer on the next forward pass
        with np.errstate(all="ignore"), pytest.raises(TrainingDivergedError):
            train_stage1(toy1d(), sch, TrainHyper(width=8, depth=2, iterations=50, lr=1e120))

    def test_toy_accuracy(self, toy_net, toy):
        assert oracle_mse(toy_net, toy, order=1) < 0.01
        assert oracle_mse(toy_net, toy, order=2) < 0.02


class TestPersistence:
    def test_round_trip(self, tmp_path):
        net = tiny_net()
        path = tmp_path / "net.bin"
        save(net, path)
        back = load(path)
        assert back.orders == net.orders and back.sched.T == net.sched.T and back.sched.kind == "linear"
        for p, q in zip(net.parameters(), back.parameters()):
            np.testing.assert_array_equal(p, q)
        x = np.random.default_rng(2).normal(size=(4, 2))
        np.testing.assert_array_equal(predict(net, x, 9, 3).m3, predict(back, x, 9, 3).m3)

    def test_layout(self, tmp_path):
        net = tiny_net(orders=(3,))
        path = tmp_path / "net.bin"
        save(net, path)
        raw = path.read_bytes()
        header = struct.Struct("<8sIIIIIIIBB")
        fields = header.unpack_from(raw)
        assert fields[0] == MAGIC and fields[2] == 2 and fields[-1] == 0b101
        n_values = sum(a.size for a in net.parameters())
        assert len(raw) == header.size + 8 * n_values
        np.testing.assert_array_equal(np.frombuffer(raw, "<f8", count=2, offset=header.size), net.data_var)

    def test_corrupt_files(self, tmp_path):
        net = tiny_net()
        path = tmp_path / "net.bin"
        save(net, path)
        raw = path.read_bytes()
        for name, blob in [("short", raw[:10]), ("magic", b"X" * 8 + raw[8:]), ("trunc", raw[:-8]),
                           ("trail", raw + b"\0" * 8)]:
            bad = tmp_path / name
            bad.write_bytes(blob)
            with pytest.raises(ValueError):
                load(bad)


class TestProviders:
    def test_oracle_provider(self, linear, toy):
        p = OracleProvider(toy, linear)
        x = np.array([[0.1], [0.4]])
        np.testing.assert_array_equal(p(x, 40, 3).m3, oracle_noise_moments(toy, linear, x, 40).m3)
        assert p.max_order == 3 and p.cache_key() == OracleProvider(toy, linear).cache_key()

    def test_net_provider(self, toy_net, toy, linear):
        p = NetProvider(toy_net)
        assert p.max_order == 3 and p.sched is toy_net.sched
        x = np.linspace(-1, 1, 7)[:, None]
        # trained estimates track the exact moments
        np.testing.assert_allclose(p(x, 300, 1).m1, OracleProvider(toy, linear)(x, 300, 1).m1, atol=0.3)
