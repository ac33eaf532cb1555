import math
from dataclasses import dataclass

import numpy as np
import pytest

from dsrcnn import oracles
from dsrcnn.gradcheck import check_model
from dsrcnn.model import ForwardResult, build_model, forward
from dsrcnn.synthetic import make_corpus
from dsrcnn.tensor import ShapeError, Tensor, backward
from dsrcnn.training import (
    SgdConfig,
    TrainingAborted,
    balanced_bce,
    class_balance_alpha,
    compute_gradients,
    sgd_step,
    total_loss,
    train,
)

LN2 = math.log(2)


def as_map(a):
    return Tensor(np.asarray(a, dtype=float)[None, None])


@pytest.fixture
def mask12():
    gt = np.zeros((3, 4))
    gt[0, :3] = 1
    return gt


def constant_result(value, shape):
    m = Tensor(np.full((1, 1, *shape), value))
    return ForwardResult([m] * 5, m, [], m)


@dataclass
class OneParam:
    """Just enough of a model for ``sgd_step``."""

    theta: Tensor

    def named_parameters(self):
        return [("theta", self.theta)]


class TestAlpha:
    def test_quarter_salient(self, mask12):
        assert class_balance_alpha(mask12) == 0.75

    def test_half(self):
        assert class_balance_alpha(np.array([[1, 0], [0, 1]])) == 0.5

    def test_all_background(self):
        assert class_balance_alpha(np.zeros((4, 4))) == 1.0

    def test_all_salient(self):
        assert class_balance_alpha(np.ones((4, 4))) == 0.0

    def test_empty(self):
        with pytest.raises(ValueError):
            class_balance_alpha(np.zeros((0,)))


class TestBalancedBce:
    def test_constant_half(self, mask12):
        loss = balanced_bce(as_map(np.full((3, 4), 0.5)), mask12).data.item()
        assert abs(loss - 4.5 * LN2) < 1e-12

    def test_perfect_prediction_near_zero(self, mask12):
        assert balanced_bce(as_map(mask12), mask12).data.item() < 1e-7

    def test_matches_loop_oracle(self, rng):
        for _ in range(10):
            pred = rng.uniform(0.01, 0.99, (4, 4))
            gt = (rng.random((4, 4)) < 0.3).astype(float)
            got = balanced_bce(as_map(pred), gt).data.item()
            assert abs(got - oracles.balanced_bce_loop(pred, gt)) < 1e-12

    def test_equal_classes_is_half_plain_ce(self, rng):
        gt = np.zeros((4, 4))
        gt[:2] = 1
        pred = rng.uniform(0.05, 0.95, (4, 4))
        plain = -(gt * np.log(pred) + (1 - gt) * np.log(1 - pred)).sum()
        assert abs(balanced_bce(as_map(pred), gt).data.item() - 0.5 * plain) < 1e-12

    def test_non_negative(self, rng):
        for _ in range(20):
            gt = (rng.random((5, 5)) < rng.random()).astype(float)
            assert balanced_bce(as_map(rng.random((5, 5))), gt).data.item() >= 0

    def test_shape_mismatch(self, mask12):
        with pytest.raises(ShapeError):
            balanced_bce(as_map(np.full((4, 3), 0.5)), mask12)

    def test_clamped_extremes_are_finite(self, mask12):
        pred = as_map(1 - mask12)  # confidently wrong everywhere
        pred.requires_grad = True
        loss = balanced_bce(pred, mask12)
        backward(loss)
        assert np.isfinite(loss.data.item()) and np.all(np.isfinite(pred.grad))

    def test_all_background_gradient(self, rng):
        gt = np.zeros((4, 4))
        pred = as_map(rng.uniform(0.1, 0.9, (4, 4)))
        pred.requires_grad = True
        loss = balanced_bce(pred, gt)
        backward(loss)
        # alpha = 1: the background term carries weight 1 - alpha = 0
        assert loss.data.item() == 0.0
        np.testing.assert_array_equal(pred.grad, 0.0)


class TestTotalLoss:
    def test_six_halves(self, mask12):
        _, breakdown = total_loss(constant_result(0.5, (3, 4)), mask12)
        assert abs(breakdown.total - 6 * 4.5 * LN2) < 1e-9
        assert abs(breakdown.total - 18.715) < 1e-3

    def test_total_is_sum_of_parts(self, tiny_model, rng, blob_mask):
        _, b = total_loss(forward(tiny_model, rng.random((1, 3, 16, 16))), blob_mask)
        assert abs(b.total - (sum(b.side_losses) + b.fuse_loss)) < 1e-12
        assert min(b.as_row()) >= 0

    def test_background_near_zero(self):
        _, b = total_loss(constant_result(1e-12, (4, 4)), np.zeros((4, 4)))
        assert b.total < 1e-6

    def test_model_gradients(self, tiny_model, rng, blob_mask):
        errors = check_model(tiny_model, rng.random((1, 3, 16, 16)), blob_mask)
        groups = {"ff.kernel", "ff.bias", "rec.kernel", "score.kernel", "score.bias", "upsample.kernel",
                  "upsample.bias", "fusion.kernel", "fusion.bias"}
        assert {g for g in groups if any(name.endswith(g) for name in errors)} == groups
        worst = max(errors, key=errors.get)
        assert errors[worst] < 1e-4, worst

    def test_small_step_does_not_increase_loss(self, tiny_model, rng, blob_mask):
        image = rng.random((1, 3, 16, 16))
        grads, before = compute_gradients(tiny_model, image, blob_mask)
        sgd_step(tiny_model, grads, SgdConfig(learning_rate=1e-6, momentum=0.0))
        _, after = total_loss(forward(tiny_model, image), blob_mask)
        assert after.total <= before.total


class TestSgdStep:
    def test_plain_descent(self):
        model = OneParam(Tensor(np.ones((1, 1, 1, 1))))
        sgd_step(model, {"theta": np.full((1, 1, 1, 1), 2.0)}, SgdConfig(learning_rate=0.1, momentum=0.0))
        assert abs(model.theta.data.item() - 0.8) < 1e-15

    def test_zero_gradient(self):
        model = OneParam(Tensor(np.full((1, 1, 1, 1), 3.0)))
        sgd_step(model, {"theta": np.zeros((1, 1, 1, 1))}, SgdConfig(learning_rate=0.1))
        assert model.theta.data.item() == 3.0

    def test_two_momentum_steps(self):
        lr, g = 0.01, 2.0
        model = OneParam(Tensor(np.zeros((1, 1, 1, 1))))
        cfg = SgdConfig(learning_rate=lr, momentum=0.9)
        v = sgd_step(model, {"theta": np.full((1, 1, 1, 1), g)}, cfg)
        sgd_step(model, {"theta": np.full((1, 1, 1, 1), g)}, cfg, v)
        assert abs(model.theta.data.item() - (-lr * g * 2.9)) < 1e-15

    def test_weight_decay(self):
        model = OneParam(Tensor(np.full((1, 1, 1, 1), 2.0)))
        sgd_step(model, {"theta": np.zeros((1, 1, 1, 1))}, SgdConfig(learning_rate=0.1, momentum=0, weight_decay=0.5))
        assert abs(model.theta.data.item() - 1.9) < 1e-15

    def test_non_finite_names_parameter(self):
        model = OneParam(Tensor(np.ones((1, 1, 1, 1))))
        with pytest.raises(TrainingAborted, match="theta"):
            sgd_step(model, {"theta": np.full((1, 1, 1, 1), np.nan)}, SgdConfig())
        assert model.theta.data.item() == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            sgd_step(OneParam(Tensor(np.ones((1, 1, 1, 1)))), {"theta": np.ones((1, 1, 2, 1))}, SgdConfig())

    @pytest.mark.parametrize("bad", [{"learning_rate": 0}, {"momentum": 1.0}, {"weight_decay": -1},
                                     {"iterations": -1}])
    def test_config_validation(self, bad):
        with pytest.raises(ValueError):
            SgdConfig(**bad)


class TestTrain:
    @pytest.fixture
    def corpus(self):
        return make_corpus(3, 16, 16, seed=2)

    def test_zero_iterations(self, tiny_config, corpus):
        model = build_model(tiny_config)
        before = model.state()
        _, history = train(model, corpus, SgdConfig(iterations=0))
        assert history == []
        for name, value in model.state().items():
            np.testing.assert_array_equal(value, before[name])

    def test_deterministic(self, tiny_config, corpus):
        runs = []
        for _ in range(2):
            _, history = train(build_model(tiny_config), corpus, SgdConfig(iterations=6, seed=4))
            runs.append([b.as_row() for b in history])
        assert runs[0] == runs[1]

    def test_seed_changes_order(self, tiny_config, corpus):
        a = train(build_model(tiny_config), corpus, SgdConfig(iterations=3, seed=0))[1]
        b = train(build_model(tiny_config), corpus, SgdConfig(iterations=3, seed=1))[1]
        assert [x.total for x in a] != [x.total for x in b]

    def test_empty_corpus(self, tiny_model):
        with pytest.raises(ValueError):
            train(tiny_model, [], SgdConfig(iterations=1))

    def test_non_binary_gt(self, tiny_model, rng):
        with pytest.raises(ValueError, match="binary"):
            train(tiny_model, [(rng.random((1, 3, 16, 16)), np.full((16, 16), 0.5))], SgdConfig(iterations=1))

    def test_abort_keeps_history(self, tiny_model, corpus):
        bad = np.full((1, 3, 16, 16), np.nan)
        with pytest.raises(TrainingAborted) as info:
            train(tiny_model, [corpus[0], (bad, corpus[1][1])], SgdConfig(iterations=4, seed=0))
        assert all(np.isfinite(b.total) for b in info.value.history)

    def test_all_background_no_nan(self, tiny_model, rng):
        corpus = [(rng.random((1, 3, 16, 16)), np.zeros((16, 16)))]
        _, history = train(tiny_model, corpus, SgdConfig(iterations=5))
        assert all(np.isfinite(b.total) for b in history)
        assert all(np.all(np.isfinite(p.data)) for p in tiny_model.parameters())

    def test_overfits_single_image(self):
        from dsrcnn.model import ModelConfig

        # dropout off: memorizing one image is exactly what dropout resists
        model = build_model(ModelConfig(block_channels=[4, 4, 8, 8, 8], dropout_ratio=0.0, seed=0))
        corpus = make_corpus(1, 32, 32, seed=0)
        _, history = train(model, corpus, SgdConfig(iterations=300, learning_rate=1e-4))
        assert np.mean([b.total for b in history[-10:]]) <= 0.1 * history[0].total


def test_check_model_reports_switches(tiny_model, blob_mask, rng):
    image = rng.random((1, 3, 16, 16))
    switched = []
    check_model(tiny_model, image, blob_mask, eps=1e-5, names={"block1.rcl1.ff.bias"}, switched=switched)
    assert switched == []
    # a huge step is certain to cross a relu switch somewhere
    check_model(tiny_model, image, blob_mask, eps=10.0, names={"block1.rcl1.ff.bias"}, switched=switched)
    assert switched == ["block1.rcl1.ff.bias"]
