import numpy as np
import pytest

from gradcheck import draw_checkable_case, finite_diff_max_rel_error, mean_loss_gradients
from kneemri.errors import ConfigError, OptimizerError, ShapeError
from kneemri.nn import (
    Adam,
    ModelConfig,
    init_model,
    load_checkpoint,
    predict_multi,
    predict_volume_max,
    save_checkpoint,
    sigmoid,
    weighted_bce,
)

GRAD_CHECK_CONFIG = ModelConfig(in_channels=1, out_tasks=1, stem_filters=4,
                                stage_blocks=1, input_size=16, dtype="float64")


class TestInit:
    def test_same_seed_bitwise_identical(self):
        cfg = ModelConfig()
        a = init_model(cfg, np.random.default_rng(11))
        b = init_model(cfg, np.random.default_rng(11))
        for pa, pb in zip(a.params(), b.params()):
            assert np.array_equal(pa.value, pb.value)

    def test_stem_parameter_count(self):
        cfg = ModelConfig(in_channels=1, stem_filters=16)
        model = init_model(cfg, np.random.default_rng(0))
        assert model.stem.weight.value.size == 144
        assert model.stem.bias.value.size == 16
        assert np.all(model.stem.bias.value == 0)

    def test_he_variance_on_large_block(self):
        model = init_model(ModelConfig(), np.random.default_rng(5))
        # stage 3 second block, first conv: 64 -> 64 channels, 36864 weights
        block = model.blocks[-1].conv1.weight.value
        assert block.size >= 10_000
        fan_in = block.shape[0] * block.shape[1] * block.shape[2]
        target = 2.0 / fan_in
        assert abs(block.var() - target) / target < 0.10

    def test_bn_init(self):
        model = init_model(GRAD_CHECK_CONFIG, np.random.default_rng(0))
        bn = model.stem_bn
        assert np.all(bn.gamma.value == 1.0)
        assert np.all(bn.beta.value == 0.0)
        assert np.all(bn.running_mean == 0.0)
        assert np.all(bn.running_var == 1.0)


class TestForward:
    def test_zero_parameters_give_half_probability(self):
        model = init_model(GRAD_CHECK_CONFIG, np.random.default_rng(0))
        for p in model.params():
            p.value[...] = 0.0
        x = np.random.default_rng(1).random((3, 1, 16, 16))
        for train in (False, True):
            logits = model.forward(x, train=train)
            assert np.allclose(logits, 0.0, atol=1e-12)
            assert np.allclose(sigmoid(logits), 0.5, atol=1e-12)

    def test_duplicate_rows_duplicate_logits(self):
        model = init_model(GRAD_CHECK_CONFIG, np.random.default_rng(2))
        row = np.random.default_rng(3).random((1, 1, 16, 16))
        x = np.concatenate([row, row], axis=0)
        logits = model.forward(x, train=False)
        assert np.array_equal(logits[0], logits[1])

    def test_batch_permutation_permutes_logits(self):
        model = init_model(GRAD_CHECK_CONFIG, np.random.default_rng(4))
        x = np.random.default_rng(5).random((6, 1, 16, 16))
        perm = np.array([3, 0, 5, 1, 4, 2])
        logits = model.forward(x, train=False)
        permuted = model.forward(x[perm], train=False)
        assert np.array_equal(permuted, logits[perm])

    def test_eval_forward_is_pure(self):
        model = init_model(GRAD_CHECK_CONFIG, np.random.default_rng(6))
        x = np.random.default_rng(7).random((4, 1, 16, 16))
        a = model.forward(x, train=False)
        b = model.forward(x, train=False)
        assert np.array_equal(a, b)

    def test_shape_mismatch(self):
        model = init_model(GRAD_CHECK_CONFIG, np.random.default_rng(8))
        with pytest.raises(ShapeError):
            model.forward(np.zeros((2, 3, 16, 16)), train=False)


class TestWeightedBce:
    def test_half_probability_positive(self):
        loss, grad = weighted_bce(0.0, 1, 1.0)
        assert loss == pytest.approx(np.log(2.0), abs=1e-12)
        assert grad == pytest.approx(-0.5, abs=1e-12)

    def test_half_probability_negative_weighted(self):
        loss, grad = weighted_bce(0.0, 0, 2.0)
        assert loss == pytest.approx(2.0 * np.log(2.0), abs=1e-12)
        assert grad == pytest.approx(1.0, abs=1e-12)

    def test_extreme_logits_stay_finite(self):
        loss, grad = weighted_bce(np.array([500.0, -500.0]),
                                  np.array([0, 1]), 1.0)
        assert np.all(np.isfinite(loss))
        assert np.all(np.isfinite(grad))

    def test_matches_naive_formula_in_safe_range(self):
        rng = np.random.default_rng(0)
        z = rng.uniform(-5, 5, 50)
        y = rng.integers(0, 2, 50)
        w = rng.uniform(0.5, 2.5, 50)
        p = 1 / (1 + np.exp(-z))
        naive = -w * (y * np.log(p) + (1 - y) * np.log(1 - p))
        loss, grad = weighted_bce(z, y, w)
        assert np.allclose(loss, naive, atol=1e-10)
        assert np.allclose(grad, w * (p - y), atol=1e-10)


class TestBackward:
    def test_zero_loss_gradient_zero_param_gradients(self):
        model = init_model(GRAD_CHECK_CONFIG, np.random.default_rng(0))
        x = np.random.default_rng(1).random((4, 1, 16, 16))
        model.forward(x, train=True)
        model.zero_grads()
        model.backward(np.zeros((4, 1)))
        for p in model.params():
            assert np.all(p.grad == 0.0)

    def test_backward_linear_in_loss_gradient(self):
        model = init_model(GRAD_CHECK_CONFIG, np.random.default_rng(2))
        x = np.random.default_rng(3).random((4, 1, 16, 16))
        d = np.random.default_rng(4).random((4, 1))
        model.forward(x, train=True)
        model.zero_grads()
        model.backward(d)
        g1 = [p.grad.copy() for p in model.params()]
        model.forward(x, train=True)
        model.zero_grads()
        model.backward(3.0 * d)
        for p, g in zip(model.params(), g1):
            assert np.allclose(p.grad, 3.0 * g, rtol=1e-10, atol=1e-12)

    def test_gradients_match_finite_differences(self):
        model, x, y, w = draw_checkable_case(GRAD_CHECK_CONFIG, seed=100)
        assert finite_diff_max_rel_error(model, x, y, w) < 1e-4

    def test_multi_task_gradients_match_finite_differences(self):
        cfg = ModelConfig(in_channels=1, out_tasks=3, stem_filters=4,
                          stage_blocks=1, input_size=16, dtype="float64",
                          aggregation="max_over_slices")
        model, x, y, w = draw_checkable_case(cfg, seed=200)
        assert finite_diff_max_rel_error(model, x, y, w) < 1e-4


class TestAdam:
    class _P:
        def __init__(self, value):
            self.name = "p"
            self.value = np.asarray(value, dtype=np.float64)
            self.grad = np.zeros_like(self.value)

    def test_first_step_magnitude(self):
        p = self._P([1.0])
        opt = Adam([p], lr=1e-3, weight_decay=0.0)
        p.grad[...] = 0.37
        opt.step()
        expected = 1e-3 * 0.37 / (0.37 + 1e-8)
        assert abs(1.0 - p.value[0]) == pytest.approx(expected, rel=1e-9)

    def test_zero_gradient_no_motion(self):
        p = self._P([0.5, -0.25])
        opt = Adam([p], lr=1e-2, weight_decay=0.0)
        opt.step()
        assert np.array_equal(p.value, [0.5, -0.25])

    def test_deterministic_from_snapshot(self):
        def run():
            p = self._P(np.linspace(-1, 1, 7))
            opt = Adam([p], lr=1e-3, weight_decay=0.01)
            for t in range(5):
                p.grad[...] = np.sin(np.arange(7) + t)
                opt.step()
            return p.value.copy()

        assert np.array_equal(run(), run())

    def test_non_finite_gradient_refused(self):
        p = self._P([1.0, 2.0])
        opt = Adam([p])
        p.grad[...] = [np.nan, 0.0]
        with pytest.raises(OptimizerError):
            opt.step()
        assert np.array_equal(p.value, [1.0, 2.0])
        assert opt.t == 0

    def test_decoupled_weight_decay(self):
        p = self._P([2.0])
        opt = Adam([p], lr=1e-2, weight_decay=0.1)
        p.grad[...] = 0.0
        opt.step()
        # zero gradient: the only motion is -lr * wd * theta
        assert p.value[0] == pytest.approx(2.0 - 1e-2 * 0.1 * 2.0, rel=1e-12)


class TestLossDecreases:
    def test_fifty_steps_halve_loss(self):
        cfg = ModelConfig(in_channels=1, out_tasks=1, stem_filters=4,
                          stage_blocks=1, input_size=16, dtype="float64")
        rng = np.random.default_rng(0)
        model = init_model(cfg, rng)
        opt = Adam(model.params(), lr=1e-2, weight_decay=0.0)
        x = rng.random((8, 1, 16, 16))
        y = np.array([1, 0, 1, 0, 1, 0, 1, 0], dtype=float)[:, None]
        w = np.ones_like(y)
        initial = mean_loss_gradients(model, x, y, w)
        for _ in range(50):
            mean_loss_gradients(model, x, y, w)
            opt.step()
        logits = model.forward(x, train=True)
        final = float(weighted_bce(logits, y, w)[0].mean())
        assert final < 0.5 * initial


class TestVolumeMax:
    def test_matches_per_slice_oracle_exactly(self):
        rng = np.random.default_rng(0)
        for dtype in ("float64", "float32"):
            cfg = ModelConfig(in_channels=3, out_tasks=1, stem_filters=4,
                              stage_blocks=1, input_size=16, dtype=dtype)
            model = init_model(cfg, rng)
            for _ in range(10):
                s = int(rng.integers(1, 9))
                vol = rng.random((s, 3, 16, 16))
                per_slice = [float(sigmoid(model.forward(vol[i:i + 1],
                                                         train=False)[0, 0]))
                             for i in range(s)]
                assert predict_volume_max(model, vol) == max(per_slice)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(1)
        cfg = ModelConfig(in_channels=1, out_tasks=1, stem_filters=4,
                          stage_blocks=1, input_size=16)
        model = init_model(cfg, rng)
        vol = rng.random((7, 1, 16, 16))
        perm = rng.permutation(7)
        assert predict_volume_max(model, vol) == predict_volume_max(model, vol[perm])

    def test_single_slice(self):
        rng = np.random.default_rng(2)
        cfg = ModelConfig(in_channels=1, out_tasks=1, stem_filters=4,
                          stage_blocks=1, input_size=16)
        model = init_model(cfg, rng)
        vol = rng.random((1, 1, 16, 16))
        z = model.forward(vol, train=False)[0, 0]
        assert predict_volume_max(model, vol) == float(sigmoid(z))

    def test_empty_volume_rejected(self):
        cfg = ModelConfig(in_channels=1, out_tasks=1, stem_filters=4,
                          stage_blocks=1, input_size=16)
        model = init_model(cfg, np.random.default_rng(3))
        with pytest.raises(ValueError):
            predict_volume_max(model, np.zeros((0, 1, 16, 16)))

    def test_multi_task_head_rejected(self):
        cfg = ModelConfig(in_channels=1, out_tasks=3, stem_filters=4,
                          stage_blocks=1, input_size=16)
        model = init_model(cfg, np.random.default_rng(4))
        with pytest.raises(ConfigError):
            predict_volume_max(model, np.zeros((2, 1, 16, 16)))


class TestPredictMulti:
    def test_zero_network_gives_half_everywhere(self):
        cfg = ModelConfig(in_channels=45, out_tasks=3, stem_filters=4,
                          stage_blocks=1, input_size=16,
                          aggregation="stacked_channels")
        model = init_model(cfg, np.random.default_rng(0))
        for p in model.params():
            p.value[...] = 0.0
        probs = predict_multi(model, np.random.default_rng(1).random((1, 45, 16, 16)))
        assert probs.shape == (3,)
        assert np.allclose(probs, 0.5, atol=1e-12)

    def test_single_task_head_gives_length_one(self):
        cfg = ModelConfig(in_channels=45, out_tasks=1, stem_filters=4,
                          stage_blocks=1, input_size=16,
                          aggregation="stacked_channels")
        model = init_model(cfg, np.random.default_rng(2))
        probs = predict_multi(model, np.random.default_rng(3).random((1, 45, 16, 16)))
        assert probs.shape == (1,)

    def test_probabilities_not_a_simplex(self):
        # Train briefly on all-positive labels: every task probability
        # rises above 0.5, so the three cannot sum to one.
        cfg = ModelConfig(in_channels=45, out_tasks=3, stem_filters=4,
                          stage_blocks=1, input_size=16, dtype="float64",
                          aggregation="stacked_channels")
        rng = np.random.default_rng(5)
        model = init_model(cfg, rng)
        opt = Adam(model.params(), lr=5e-2, weight_decay=0.0)
        x = rng.random((4, 45, 16, 16))
        y = np.ones((4, 3))
        w = np.ones((4, 3))
        for _ in range(30):
            logits = model.forward(x, train=True)
            _, dz = weighted_bce(logits, y, w)
            model.zero_grads()
            model.backward(dz / dz.size)
            opt.step()
        probs = predict_multi(model, x[:1])
        assert np.all(probs > 0.5)
        assert probs.sum() > 1.0


class TestCheckpoint:
    def test_round_trip_bitwise_for_float32(self, tmp_path):
        cfg = ModelConfig(in_channels=3, out_tasks=1, stem_filters=8,
                          stage_blocks=2, input_size=32, dtype="float32")
        model = init_model(cfg, np.random.default_rng(0))
        # give running stats non-default values
        x = np.random.default_rng(1).random((4, 3, 32, 32))
        model.forward(x, train=True)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model, {"note": "test"})
        again, meta = load_checkpoint(path)
        assert meta == {"note": "test"}
        assert again.config == cfg
        for a, b in zip(model.state_arrays(), again.state_arrays()):
            assert np.array_equal(a, b)
        probe = np.random.default_rng(2).random((2, 3, 32, 32))
        assert np.array_equal(model.forward(probe, train=False),
                              again.forward(probe, train=False))

    def test_save_load_save_identical_bytes(self, tmp_path):
        cfg = ModelConfig(in_channels=1, out_tasks=1, stem_filters=4,
                          stage_blocks=1, input_size=16)
        model = init_model(cfg, np.random.default_rng(3))
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, model, {})
        again, _ = load_checkpoint(p1)
        save_checkpoint(p2, again, {})
        assert p1.read_bytes() == p2.read_bytes()

    def test_corrupt_files_rejected(self, tmp_path):
        from kneemri.errors import FormatError
        cfg = ModelConfig(in_channels=1, out_tasks=1, stem_filters=4,
                          stage_blocks=1, input_size=16)
        model = init_model(cfg, np.random.default_rng(4))
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, {})
        raw = path.read_bytes()
        bad_version = tmp_path / "v.ckpt"
        bad_version.write_bytes(bytes([99]) + raw[1:])
        with pytest.raises(FormatError):
            load_checkpoint(bad_version)
        truncated = tmp_path / "t.ckpt"
        truncated.write_bytes(raw[:-100])
        with pytest.raises(FormatError):
            load_checkpoint(truncated)
