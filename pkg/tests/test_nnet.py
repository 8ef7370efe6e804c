import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nclab import nnet
from nclab.nnet import Architecture, ModelState, TrainHyper


def tiny_model(seed=0, arch=Architecture(2, (16,), 2)):
    return nnet.init_model(arch, seed)


def jitter_biases(model, seed):
    # zero biases put a pre-activation exactly on the ReLU kink whenever a
    # sample's whole previous layer is dead, where the difference quotient is one-sided
    rng = np.random.default_rng(seed + 100)
    for b in model.biases:
        b[:] = rng.uniform(0.05, 0.2, size=b.shape)
    return model


def central_difference(model, x, y, eps=1e-6):
    grads = []
    for group in (model.weights, model.biases):
        out = []
        for p in group:
            g = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + eps
                up = nnet.cross_entropy(model, x, y)
                p[idx] = old - eps
                down = nnet.cross_entropy(model, x, y)
                p[idx] = old
                g[idx] = (up - down) / (2 * eps)
            out.append(g)
        grads.append(out)
    return grads


class TestGradients:
    @pytest.mark.parametrize("seed", range(3))
    def test_finite_difference(self, seed):
        rng = np.random.default_rng(seed)
        model = jitter_biases(tiny_model(seed), seed)
        x = rng.normal(size=(8, 2))
        y = rng.integers(0, 2, 8)
        _, analytic = nnet.loss_and_gradients(model, x, y)
        numeric_w, numeric_b = central_difference(model, x, y)
        for a, n in zip(analytic.weights + analytic.biases, numeric_w + numeric_b):
            np.testing.assert_allclose(a, n, rtol=1e-4, atol=1e-5)

    def test_deep_finite_difference(self):
        rng = np.random.default_rng(11)
        model = jitter_biases(nnet.init_model(Architecture(3, (5, 4), 3), 2), 2)
        x = rng.normal(size=(6, 3))
        y = np.array([0, 1, 2, 0, 1, 2])
        _, analytic = nnet.loss_and_gradients(model, x, y)
        numeric_w, numeric_b = central_difference(model, x, y)
        for a, n in zip(analytic.weights + analytic.biases, numeric_w + numeric_b):
            np.testing.assert_allclose(a, n, rtol=1e-4, atol=1e-5)

    def test_uniform_logits_loss(self):
        model = tiny_model()
        model.weights[-1][:] = 0.0
        loss = nnet.cross_entropy(model, np.ones((4, 2)), [0, 1, 1, 0])
        assert loss == pytest.approx(math.log(2), abs=1e-15)

    def test_duplicated_batch_same_loss_and_grad(self):
        rng = np.random.default_rng(1)
        model = tiny_model()
        x = rng.normal(size=(5, 2))
        y = rng.integers(0, 2, 5)
        l1, g1 = nnet.loss_and_gradients(model, x, y)
        l2, g2 = nnet.loss_and_gradients(model, np.vstack([x, x]), np.r_[y, y])
        assert l1 == pytest.approx(l2, abs=1e-15)
        for a, b in zip(g1.params(), g2.params()):
            np.testing.assert_allclose(a, b, atol=1e-15)

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            nnet.loss_and_gradients(tiny_model(), np.zeros((0, 2)), np.zeros(0, dtype=int))

    def test_nonfinite_input(self):
        with pytest.raises(nnet.NumericError):
            nnet.forward(tiny_model(), np.array([[np.nan, 0.0]]))

    def test_log_softmax_stable(self):
        out = nnet.log_softmax(np.array([[1000.0, 0.0], [-1000.0, -1000.0]]))
        assert np.isfinite(out).all()
        np.testing.assert_allclose(out[1], [-math.log(2)] * 2)


def single_param_model(w):
    return ModelState([np.array([[w]], dtype=float)], [np.zeros(1)])


class TestSgd:
    def test_plain_step(self):
        hyper = TrainHyper(learning_rate=0.1, momentum=0.0)
        new, _ = nnet.sgd_step(single_param_model(1.0), single_param_model(2.0), hyper)
        assert new.weights[0][0, 0] == pytest.approx(0.8, abs=1e-15)

    def test_weight_decay_step(self):
        hyper = TrainHyper(learning_rate=0.1, momentum=0.0, weight_decay=0.5)
        new, _ = nnet.sgd_step(single_param_model(1.0), single_param_model(2.0), hyper)
        assert new.weights[0][0, 0] == pytest.approx(0.75, abs=1e-15)

    def test_zero_gradient_no_decay_is_fixed_point(self):
        hyper = TrainHyper(learning_rate=0.1, momentum=0.9)
        model = tiny_model()
        new, _ = nnet.sgd_step(model, model.zeros_like(), hyper)
        for a, b in zip(model.params(), new.params()):
            np.testing.assert_array_equal(a, b)

    def test_momentum_unroll(self):
        # v1 = g = 1, w1 = 1 - 0.1 = 0.9; v2 = 0.9*1 + 1 = 1.9, w2 = 0.9 - 0.19 = 0.71
        hyper = TrainHyper(learning_rate=0.1, momentum=0.9)
        grad = single_param_model(1.0)
        m, v = nnet.sgd_step(single_param_model(1.0), grad, hyper)
        assert m.weights[0][0, 0] == pytest.approx(0.9, abs=1e-15)
        m, v = nnet.sgd_step(m, grad, hyper, v)
        assert v.weights[0][0, 0] == pytest.approx(1.9, abs=1e-15)
        assert m.weights[0][0, 0] == pytest.approx(0.71, abs=1e-15)

    def test_biases_not_decayed(self):
        hyper = TrainHyper(learning_rate=0.1, momentum=0.0, weight_decay=1.0)
        model = ModelState([np.zeros((1, 1))], [np.ones(1)])
        new, _ = nnet.sgd_step(model, model.zeros_like(), hyper)
        assert new.biases[0][0] == 1.0

    @pytest.mark.parametrize("kw", [dict(learning_rate=0), dict(momentum=1.0), dict(batch_size=0),
                                    dict(weight_decay=-1), dict(early_stop_patience=0)])
    def test_invalid_hyper(self, kw):
        with pytest.raises(ValueError):
            TrainHyper(**kw)

    def test_schedule(self):
        h = TrainHyper(learning_rate=1.0, lr_milestones=(10, 20), lr_gamma=0.1, warmup_epochs=4)
        assert [h.lr_at(e) for e in (1, 4, 10)] == [0.25, 1.0, 1.0]
        assert h.lr_at(11) == pytest.approx(0.1)
        assert h.lr_at(21) == pytest.approx(0.01)


class TestInit:
    def test_shapes(self):
        arch = Architecture(7, (64, 32), 2)
        model = nnet.init_model(arch)
        assert [w.shape for w in model.weights] == [(64, 7), (32, 64), (2, 32)]
        assert all(np.all(b == 0) for b in model.biases)
        assert model.architecture == arch
        feats, logits = nnet.forward(model, np.zeros((3, 7)))
        assert feats.shape == (3, 32) and logits.shape == (3, 2)

    def test_he_variance(self):
        model = nnet.init_model(Architecture(4096, (512,), 2), seed=1)
        for w in model.weights:
            assert np.var(w) == pytest.approx(2.0 / w.shape[1], rel=0.2)

    def test_seed_determinism(self):
        a, b, c = tiny_model(3), tiny_model(3), tiny_model(4)
        assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))
        assert not np.array_equal(a.weights[0], c.weights[0])

    def test_features_nonnegative(self):
        feats, _ = nnet.forward(tiny_model(), np.random.default_rng(0).normal(size=(20, 2)))
        assert (feats >= 0).all()

    @pytest.mark.parametrize("kw", [dict(input_dim=0), dict(hidden_widths=()), dict(num_classes=1)])
    def test_invalid_architecture(self, kw):
        with pytest.raises(ValueError):
            Architecture(**kw)


def blobs(seed=0, n=100, sep=6.0):
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    x = rng.normal(size=(n, 2)) + np.c_[(y - 0.5) * sep, np.zeros(n)]
    return x, y


class TestTraining:
    def test_separable_reaches_full_accuracy(self):
        x, y = blobs()
        hyper = TrainHyper(learning_rate=0.05, batch_size=16, max_epochs=60)
        res = nnet.train(tiny_model(), x, y, x, y, hyper)
        assert nnet.accuracy(res.final, x, y) == 1.0
        assert res.history[-1].train_loss < res.history[0].train_loss

    def test_early_stop_invariants(self):
        x, y = blobs(1, sep=1.0)
        xv, yv = blobs(2, sep=1.0)
        hyper = TrainHyper(learning_rate=0.2, batch_size=8, max_epochs=80, early_stop_patience=5)
        res = nnet.train(tiny_model(), x, y, xv, yv, hyper)
        assert len(res.history) == 80
        assert 1 <= res.early_stop_epoch <= 80
        vals = [h.val_loss for h in res.history]
        best = res.history[res.early_stop_epoch - 1].val_loss
        assert nnet.cross_entropy(res.early_stopped, xv, yv) == pytest.approx(best, abs=1e-12)
        # it is the minimum over every epoch up to the patience trigger
        trigger = min(len(vals), res.early_stop_epoch + hyper.early_stop_patience)
        assert best <= min(vals[:trigger]) + hyper.early_stop_min_delta

    def test_callback_extras(self):
        x, y = blobs()
        seen = []
        hyper = TrainHyper(max_epochs=3, batch_size=50)
        res = nnet.train(tiny_model(), x, y, x, y, hyper, lambda e, m: seen.append(e) or {"e": e})
        assert seen == [1, 2, 3]
        assert [h.extra["e"] for h in res.history] == [1, 2, 3]

    def test_training_deterministic(self):
        x, y = blobs()
        hyper = TrainHyper(max_epochs=5, batch_size=10, seed=2)
        a = nnet.train(tiny_model(), x, y, x, y, hyper)
        b = nnet.train(tiny_model(), x, y, x, y, hyper)
        for p, q in zip(a.final.params(), b.final.params()):
            np.testing.assert_array_equal(p, q)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reported(self):
        x, y = blobs()
        x = x * 1e150
        with pytest.raises(nnet.TrainingDiverged):
            nnet.train(tiny_model(), x, y, x, y, TrainHyper(learning_rate=1e3, max_epochs=5))

    def test_empty_validation(self):
        x, y = blobs()
        with pytest.raises(ValueError):
            nnet.train(tiny_model(), x, y, x[:0], y[:0], TrainHyper(max_epochs=1))


class TestPredict:
    def test_tie_goes_to_class_zero(self):
        model = tiny_model()
        model.weights[-1][:] = 0.0
        pred, prob = nnet.predict(model, np.ones((3, 2)))
        np.testing.assert_array_equal(pred, 0)
        np.testing.assert_allclose(prob, 0.5)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 1000))
    def test_probabilities_in_range(self, seed):
        x = np.random.default_rng(seed).normal(size=(10, 2)) * 10
        pred, prob = nnet.predict(tiny_model(seed % 7), x)
        assert ((prob >= 0) & (prob <= 1)).all()
        np.testing.assert_array_equal(pred, (prob > 0.5).astype(int))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        model = nnet.init_model(Architecture(5, (7, 3), 2), 9)
        nnet.save_checkpoint(model, tmp_path / "m.json", {"epoch": 4})
        back = nnet.load_checkpoint(tmp_path / "m.json")
        for p, q in zip(model.params(), back.params()):
            np.testing.assert_array_equal(p, q)
        x = np.random.default_rng(0).normal(size=(4, 5))
        np.testing.assert_array_equal(nnet.forward(model, x)[1], nnet.forward(back, x)[1])

    def test_wrong_format(self, tmp_path):
        (tmp_path / "x.json").write_text('{"format": "other", "version": 1}')
        with pytest.raises(ValueError):
            nnet.load_checkpoint(tmp_path / "x.json")
