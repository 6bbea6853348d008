import numpy as np
import pytest

from stressfuse import nnengine as nn
from stressfuse.errors import NumericError, ShapeError


def _small_mlp(seed=0, in_dim=4):
    return nn.ModelSpec.sequential((in_dim,), [nn.dense(5), nn.relu(),
                                               nn.softmax_head()], seed=seed)


def oracle_forward(model, x):
    """Plain matrix-math forward for a dense-relu-softmax model."""
    W0, b0, W1, b1 = model.params
    h = np.maximum(x @ W0 + b0, 0.0)
    logits = h @ W1 + b1
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


class TestForward:
    def test_zero_weight_model_gives_uniform(self):
        model = nn.build_model(_small_mlp())
        model.set_params([np.zeros_like(p) for p in model.params])
        probs = model.forward(np.random.default_rng(0).normal(size=(7, 4)))
        np.testing.assert_allclose(probs, 1.0 / 3.0, atol=1e-12)

    def test_equal_logits_give_uniform(self):
        spec = nn.ModelSpec.sequential((3,), [nn.softmax_head()], seed=1)
        model = nn.build_model(spec)
        W, b = model.params
        model.set_params([np.ones_like(W), np.zeros_like(b)])
        probs = model.forward(np.array([[0.2, 0.4, 0.4]]))
        np.testing.assert_allclose(probs, 1.0 / 3.0, atol=1e-12)

    def test_matches_independent_matrix_oracle(self):
        rng = np.random.default_rng(3)
        model = nn.build_model(_small_mlp(seed=11))
        x = rng.normal(size=(9, 4))
        np.testing.assert_allclose(model.forward(x), oracle_forward(model, x),
                                   atol=1e-10)

    def test_rows_sum_to_one_and_shift_invariant(self):
        rng = np.random.default_rng(4)
        model = nn.build_model(_small_mlp(seed=2))
        x = rng.normal(size=(20, 4)) * 50
        probs = model.forward(x)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
        head = model._head_layer()
        shifted = head.logits + 123.456
        e = np.exp(shifted - shifted.max(axis=1, keepdims=True))
        np.testing.assert_allclose(e / e.sum(axis=1, keepdims=True), probs, atol=1e-12)

    def test_shape_mismatch_rejected(self):
        model = nn.build_model(_small_mlp())
        with pytest.raises(ShapeError):
            model.forward(np.zeros((2, 5)))

    def test_conv1d_averaging_kernel_hand_computed(self):
        spec = nn.ModelSpec.sequential(
            (5, 1), [nn.conv1d(1, 3), nn.flatten(), nn.softmax_head()], seed=0)
        model = nn.build_model(spec)
        conv = model.branches[0][0]
        conv.W[...] = 1.0 / 3.0
        conv.b[...] = 0.0
        x = np.arange(5.0).reshape(1, 5, 1)
        out = conv.forward(x)
        np.testing.assert_allclose(out[0, :, 0], [1.0, 2.0, 3.0], atol=1e-12)


class TestLossAndGrads:
    def test_perfect_predictions_drive_loss_to_zero(self):
        spec = nn.ModelSpec.sequential((3,), [nn.softmax_head()], seed=0)
        model = nn.build_model(spec)
        W, b = model.params
        model.set_params([np.eye(3) * 50.0, np.zeros_like(b)])
        x = np.eye(3)
        loss, _ = model.loss_and_grads(x, np.array([0, 1, 2]))
        assert loss < 1e-9

    def test_uniform_predictions_give_log3(self):
        model = nn.build_model(_small_mlp())
        model.set_params([np.zeros_like(p) for p in model.params])
        loss, _ = model.loss_and_grads(np.ones((6, 4)), np.array([0, 1, 2, 0, 1, 2]))
        assert loss == pytest.approx(np.log(3.0), abs=1e-12)

    def test_nonfinite_activation_names_layer(self):
        model = nn.build_model(_small_mlp())
        params = model.get_params()
        params[0][0, 0] = np.inf
        model.set_params(params)
        with pytest.raises(NumericError, match="branch 0 layer"):
            model.loss_and_grads(np.ones((2, 4)), np.array([0, 1]))

    def test_gradients_match_finite_differences_dense(self):
        rng = np.random.default_rng(5)
        model = nn.build_model(_small_mlp(seed=7))
        x = rng.normal(size=(6, 4))
        y = rng.integers(0, 3, size=6)
        assert nn.gradient_check(model, x, y) < 1e-4

    def test_gradients_match_finite_differences_all_layer_kinds(self):
        rng = np.random.default_rng(6)
        spec1d = nn.ModelSpec.sequential(
            (8, 2), [nn.conv1d(3, 3), nn.relu(), nn.maxpool1d(2), nn.flatten(),
                     nn.dense(5), nn.relu(), nn.softmax_head()], seed=3)
        m1 = nn.build_model(spec1d)
        x1 = rng.normal(size=(4, 8, 2))
        assert nn.gradient_check(m1, x1, rng.integers(0, 3, size=4)) < 1e-4

        spec2d = nn.ModelSpec.sequential(
            (5, 5, 1), [nn.conv2d(2, 2, 3), nn.relu(), nn.maxpool2d(2),
                        nn.flatten(), nn.softmax_head()], seed=4)
        m2 = nn.build_model(spec2d)
        x2 = rng.normal(size=(3, 5, 5, 1))
        assert nn.gradient_check(m2, x2, rng.integers(0, 3, size=3)) < 1e-4


class TestTrain:
    def _blobs(self, n_per=40, seed=0):
        rng = np.random.default_rng(seed)
        centers = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]])
        X = np.concatenate([rng.normal(size=(n_per, 2)) * 0.3 + c for c in centers])
        y = np.repeat([0, 1, 2], n_per)
        return X, y

    def test_separable_blobs_reach_99_percent(self):
        X, y = self._blobs()
        spec = nn.ModelSpec.sequential((2,), [nn.dense(16), nn.relu(),
                                              nn.softmax_head()], seed=1)
        trained = nn.train(spec, X, y, nn.TrainConfig(epochs=60, lr=0.01, seed=2))
        acc = (trained.predict(X) == y).mean()
        assert acc >= 0.99

    def test_zero_learning_rate_is_identity(self):
        X, y = self._blobs(n_per=10)
        spec = _small_mlp(seed=5, in_dim=2)
        before = nn.build_model(spec).get_params()
        trained = nn.train(spec, X, y, nn.TrainConfig(epochs=3, lr=0.0, seed=0))
        for a, b in zip(before, trained.model.params):
            np.testing.assert_array_equal(a, b)

    def test_same_seed_bitwise_identical(self):
        X, y = self._blobs(n_per=15, seed=3)
        spec = _small_mlp(seed=9, in_dim=2)
        cfg = nn.TrainConfig(epochs=8, seed=4)
        a = nn.train(spec, X, y, cfg)
        b = nn.train(spec, X, y, cfg)
        for pa, pb in zip(a.model.params, b.model.params):
            np.testing.assert_array_equal(pa, pb)
        np.testing.assert_array_equal(a.loss_curve, b.loss_curve)

    def test_loss_nonincreasing_on_noiseless_data_most_seeds(self):
        # full-batch steps on zero-variance blobs: the optimizer should
        # descend every epoch in at least 19 of 20 seeded runs
        centers = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]])
        X = np.repeat(centers, 12, axis=0)
        y = np.repeat([0, 1, 2], 12)
        ok = 0
        for seed in range(20):
            spec = nn.ModelSpec.sequential((2,), [nn.dense(8), nn.relu(),
                                                  nn.softmax_head()], seed=seed)
            trained = nn.train(spec, X, y,
                               nn.TrainConfig(epochs=12, seed=seed, batch_size=36))
            if np.all(np.diff(trained.loss_curve) <= 1e-12):
                ok += 1
        assert ok >= 19  # >= 95% of seeded runs

    def test_early_stopping_stops_before_epoch_budget(self):
        X, y = self._blobs(n_per=10, seed=1)
        spec = nn.ModelSpec.sequential((2,), [nn.softmax_head()], seed=0)
        trained = nn.train(spec, X, y, nn.TrainConfig(epochs=500, lr=0.0, seed=0,
                                                      patience=10))
        assert len(trained.loss_curve) <= 12


class TestParamCount:
    def test_dense_formula(self):
        spec = nn.ModelSpec.sequential((100,), [nn.dense(64), nn.relu(),
                                                nn.softmax_head()], seed=0)
        assert nn.param_count(spec) == 100 * 64 + 64 + 64 * 3 + 3

    def test_conv1d_formula(self):
        spec = nn.ModelSpec.sequential((10, 1), [nn.conv1d(32, 3), nn.flatten(),
                                                 nn.softmax_head()], seed=0)
        # conv: 3*1*32 + 32 = 128; head: 8*32*3 + 3
        assert nn.param_count(spec) == 128 + 8 * 32 * 3 + 3

    def test_full_default_early_fusion_spec_matches_recount(self):
        spec = nn.ModelSpec.sequential(
            (100, 1), [nn.conv1d(32, 3), nn.relu(), nn.maxpool1d(2), nn.flatten(),
                       nn.dense(64), nn.relu(), nn.softmax_head()], seed=0)
        model = nn.build_model(spec)
        assert nn.param_count(spec) == model.n_params
        assert nn.param_count(spec) == sum(p.size for p in model.params)

    def test_inconsistent_spec_rejected(self):
        spec = nn.ModelSpec.sequential((4,), [nn.conv1d(8, 3), nn.softmax_head()])
        with pytest.raises(ShapeError):
            nn.param_count(spec)

    def test_random_small_specs_param_count_matches_built_model(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            length = int(rng.integers(6, 12))
            spec = nn.ModelSpec.sequential(
                (length, 2), [nn.conv1d(int(rng.integers(1, 4)), 3), nn.relu(),
                              nn.flatten(), nn.dense(int(rng.integers(3, 9))),
                              nn.softmax_head()], seed=int(rng.integers(0, 100)))
            assert nn.param_count(spec) == nn.build_model(spec).n_params


class TestSerialization:
    def test_roundtrip_preserves_params_and_outputs(self, tmp_path):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(30, 4))
        y = rng.integers(0, 3, size=30)
        trained = nn.train(_small_mlp(seed=13), X, y, nn.TrainConfig(epochs=5, seed=6))
        path = str(tmp_path / "model.sfnn")
        nn.save_model(trained, path)
        back = nn.load_model(path)
        for a, b in zip(trained.model.params, back.model.params):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(back.loss_curve, trained.loss_curve)
        np.testing.assert_allclose(back.forward(X), trained.forward(X), atol=1e-15)

    def test_multibranch_roundtrip(self, tmp_path):
        spec = nn.ModelSpec(
            branches=(nn.BranchSpec((6, 1), (nn.conv1d(2, 3), nn.relu(), nn.flatten())),
                      nn.BranchSpec((4,), (nn.dense(3), nn.relu()))),
            head=(nn.dense(5), nn.relu(), nn.softmax_head()), seed=21)
        model = nn.build_model(spec)
        trained = nn.TrainedModel(spec, model, np.array([1.0]))
        path = str(tmp_path / "mb.sfnn")
        nn.save_model(trained, path)
        back = nn.load_model(path)
        rng = np.random.default_rng(10)
        batch = [rng.normal(size=(5, 6, 1)), rng.normal(size=(5, 4))]
        np.testing.assert_allclose(back.forward(batch), trained.forward(batch),
                                   atol=1e-15)


class TestMultiBranch:
    def test_gradients_flow_into_both_branches(self):
        spec = nn.ModelSpec(
            branches=(nn.BranchSpec((5, 1), (nn.conv1d(2, 2), nn.relu(), nn.flatten())),
                      nn.BranchSpec((3, 3, 1), (nn.conv2d(2, 2, 2), nn.relu(),
                                                nn.flatten()))),
            head=(nn.dense(4), nn.relu(), nn.softmax_head()), seed=2)
        model = nn.build_model(spec)
        rng = np.random.default_rng(11)
        batch = [rng.normal(size=(4, 5, 1)), rng.normal(size=(4, 3, 3, 1))]
        y = rng.integers(0, 3, size=4)
        assert nn.gradient_check(model, batch, y) < 1e-4

    def test_missing_head_rejected(self):
        spec = nn.ModelSpec(
            branches=(nn.BranchSpec((4,), (nn.dense(3),)),
                      nn.BranchSpec((4,), (nn.dense(3),))))
        with pytest.raises(ShapeError):
            nn.build_model(spec)
