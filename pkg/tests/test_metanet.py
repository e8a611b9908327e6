import math
import os
import tempfile
import unittest

import numpy as np
import numpy.testing as npt

from app.models.metanet import ENCODER_WEIGHTS, HEAD_WEIGHTS, FeatureScaler, MetaNetDims, MetaNetParams, TrainingSample
from app.services import network
from app.services.metanet_service import MetaNetService
from app.utils.errors import ConfigurationError, ShapeMismatchError
from tests.factories import (
    SMALL_DIMS as SMALL, TINY_DIMS as TINY, credit_monotone_params, random_features, random_samples
)

metanet_service = MetaNetService()


def fitted_scaler(samples, log_speed_mean=None, log_speed_std=None) -> FeatureScaler:
    raw = network.raw_features([s.features for s in samples], 16)
    speeds = np.array([s.label for s in samples], dtype=np.float64)
    scaler = FeatureScaler.fit(raw.rows, raw.workers, raw.candidates, speeds)
    update = {}
    if log_speed_mean is not None:
        update["log_speed_mean"] = log_speed_mean
    if log_speed_std is not None:
        update["log_speed_std"] = log_speed_std
    return scaler.model_copy(update=update)


class TestGradients(unittest.TestCase):
    def test_backward_matches_central_differences(self):
        eps = 1e-5
        for seed in range(20):
            rng = np.random.default_rng(seed)
            samples = random_samples(rng, 6, n_layers=3, n_workers=2)
            params = MetaNetParams(dims=TINY, scaler=fitted_scaler(samples),
                                   weights=network.init_weights(TINY, seed))
            sample = samples[0]
            grads = metanet_service.backward(params, sample)
            for name, array in params.weights.items():
                flat = array.reshape(-1)
                for position in rng.choice(flat.size, size=min(3, flat.size), replace=False):
                    original = flat[position]
                    flat[position] = original + eps
                    upper = metanet_service.sample_objective(params, sample)
                    flat[position] = original - eps
                    lower = metanet_service.sample_objective(params, sample)
                    flat[position] = original
                    numeric = (upper - lower) / (2 * eps)
                    analytic = grads[name].reshape(-1)[position]
                    error = abs(analytic - numeric) / max(1e-5, abs(analytic) + abs(numeric))
                    self.assertLess(error, 1e-4, f"{name}[{position}] seed {seed}: {analytic} vs {numeric}")

    def test_zero_residual_gives_zero_gradient(self):
        rng = np.random.default_rng(3)
        features = random_features(rng)
        scaler = FeatureScaler(log_speed_mean=math.log(500.0), log_speed_std=0.1)
        params = MetaNetParams(dims=TINY, scaler=scaler, weights=network.init_weights(TINY, 3))
        predicted = metanet_service.forward(params, features)
        sample = TrainingSample(features=features, label=tuple(float(v) for v in predicted))
        for name, grad in metanet_service.backward(params, sample).items():
            npt.assert_allclose(grad, 0.0, atol=1e-10, err_msg=name)

    def test_head_only_backward_leaves_encoder_gradients_zero(self):
        rng = np.random.default_rng(4)
        samples = random_samples(rng, 3)
        params = MetaNetParams(dims=TINY, scaler=fitted_scaler(samples), weights=network.init_weights(TINY, 4))
        batch = network.encode_features([s.features for s in samples], params.scaler)
        labels = np.array([s.label for s in samples])
        _, dy, cache = network.objective(params.weights, TINY, params.scaler, batch, labels)
        full = network.backward(params.weights, TINY, cache, dy)
        head = network.backward(params.weights, TINY, cache, dy, HEAD_WEIGHTS)
        for name in HEAD_WEIGHTS:
            npt.assert_allclose(head[name], full[name])
        for name in ENCODER_WEIGHTS:
            self.assertFalse(np.any(head[name]))


class TestForward(unittest.TestCase):
    def test_worker_permutation_is_equivariant(self):
        rng = np.random.default_rng(5)
        scaler = FeatureScaler(log_speed_mean=math.log(400.0), log_speed_std=0.2)
        params = MetaNetParams(dims=TINY, scaler=scaler, weights=network.init_weights(TINY, 5))
        features = random_features(rng, n_layers=4, n_workers=3)
        order = [2, 0, 1]
        permuted = features.model_copy(update={
            "t_seq": tuple(tuple(row[w] for w in order) for row in features.t_seq),
            "b_down": tuple(features.b_down[w] for w in order),
            "b_up": tuple(features.b_up[w] for w in order),
        })
        npt.assert_allclose(metanet_service.forward(params, permuted),
                            metanet_service.forward(params, features)[order], rtol=1e-12)

    def test_prediction_shape_and_batching(self):
        rng = np.random.default_rng(6)
        params = metanet_service.init_params(TINY, seed=6)
        features = [random_features(rng, 3, 2), random_features(rng, 5, 4), random_features(rng, 3, 2)]
        many = metanet_service.predict_many(params, features)
        self.assertEqual([p.shape for p in many], [(2,), (4,), (2,)])
        for single, batched in zip(features, many):
            npt.assert_allclose(metanet_service.forward(params, single), batched, rtol=1e-12)

    def test_feature_shape_mismatch(self):
        wide = MetaNetDims(embed_dim=4, hidden_dim=4, dense_dim=5, type_embed_dim=2, n_models=5)
        params = metanet_service.init_params(wide)
        with self.assertRaises(ShapeMismatchError):
            metanet_service.forward(params, random_features(np.random.default_rng(0)))

    def test_zero_network_predicts_the_scaler_speed(self):
        params = MetaNetParams(dims=TINY, scaler=FeatureScaler(log_speed_mean=math.log(300.0), log_speed_std=0.4),
                               weights=network.zero_weights(TINY))
        features = random_features(np.random.default_rng(14), n_layers=2, n_workers=3)
        npt.assert_allclose(metanet_service.forward(params, features), [300.0] * 3, rtol=1e-12)

    def test_more_workers_than_n_max_rejected(self):
        params = metanet_service.init_params(TINY, scaler=FeatureScaler.identity(n_max=2))
        with self.assertRaises(ShapeMismatchError):
            metanet_service.forward(params, random_features(np.random.default_rng(15), n_workers=3))

    def test_loss_is_euclidean(self):
        self.assertEqual(metanet_service.loss([3.0, 0.0], [0.0, 4.0]), 5.0)
        with self.assertRaises(ShapeMismatchError):
            metanet_service.loss([1.0], [1.0, 2.0])


class TestTraining(unittest.TestCase):
    def test_memorizes_a_repeated_sample(self):
        sample = random_samples(np.random.default_rng(7), 1)[0]
        params = metanet_service.train_offline([sample] * 8, epochs=200, lr=3e-3, seed=7, dims=SMALL)
        self.assertEqual(len(params.loss_history), 201)
        self.assertLess(params.loss_history[-1], 0.1 * params.loss_history[0])

    def test_training_is_deterministic(self):
        samples = random_samples(np.random.default_rng(8), 12)
        a = metanet_service.train_offline(samples, epochs=3, lr=1e-3, seed=1, dims=TINY, batch_size=4)
        b = metanet_service.train_offline(samples, epochs=3, lr=1e-3, seed=1, dims=TINY, batch_size=4)
        self.assertEqual(a.loss_history, b.loss_history)
        for name in a.weights:
            npt.assert_array_equal(a.weights[name], b.weights[name])

    def test_learns_a_linear_speed_law(self):
        rng = np.random.default_rng(13)
        samples = []
        for _ in range(2000):
            features = random_features(rng)
            speed = 400.0 + 10.0 * features.credit_multiplier + 5.0 * math.log2(features.partition_bytes)
            samples.append(TrainingSample(features=features, label=(speed,) * features.n_workers))
        params = metanet_service.train_offline(samples[:1800], epochs=60, lr=5e-3, seed=13, dims=SMALL,
                                               batch_size=32)
        report = metanet_service.evaluate(params, samples[1800:])
        self.assertLess(report["mean_relative_error"], 0.02)

    def test_empty_dataset_rejected(self):
        with self.assertRaises(ConfigurationError):
            metanet_service.train_offline([])


class TestAdaptation(unittest.TestCase):
    def setUp(self):
        scaler = FeatureScaler(log_speed_mean=math.log(500.0), log_speed_std=0.3)
        self.params = MetaNetParams(dims=SMALL, scaler=scaler, weights=network.init_weights(SMALL, 9))
        rng = np.random.default_rng(9)
        self.features = [random_features(rng) for _ in range(4)]

    def _samples(self, scale: float):
        return [TrainingSample(features=f,
                               label=tuple(float(v) * scale for v in metanet_service.forward(self.params, f)))
                for f in self.features]

    def test_zero_steps_is_identity(self):
        adapted = metanet_service.adapt_online(self.params, self._samples(0.5), steps=0)
        for name in self.params.weights:
            npt.assert_array_equal(adapted.weights[name], self.params.weights[name])
        self.assertIsNot(adapted.weights["dense2_b"], self.params.weights["dense2_b"])

    def test_fitted_samples_leave_weights_alone(self):
        adapted = metanet_service.adapt_online(self.params, self._samples(1.0), steps=20, lr=1e-2)
        for name in self.params.weights:
            npt.assert_array_equal(adapted.weights[name], self.params.weights[name])

    def test_head_adaptation_tracks_a_slowdown(self):
        samples = self._samples(0.5)
        before = metanet_service.evaluate(self.params, samples)["mean_relative_error"]
        adapted = metanet_service.adapt_online(self.params, samples, steps=300, lr=1e-2, scope="head")
        after = metanet_service.evaluate(adapted, samples)["mean_relative_error"]
        self.assertGreater(before, 0.5)
        self.assertLess(after, 0.1)
        for name in ENCODER_WEIGHTS:
            npt.assert_array_equal(adapted.weights[name], self.params.weights[name])

    def test_invalid_scope(self):
        with self.assertRaises(ConfigurationError):
            metanet_service.adapt_online(self.params, self._samples(1.0), scope="encoder")
        with self.assertRaises(ConfigurationError):
            metanet_service.adapt_online(self.params, [])


class TestCheckpoints(unittest.TestCase):
    def test_round_trip_is_exact(self):
        samples = random_samples(np.random.default_rng(10), 6)
        params = metanet_service.train_offline(samples, epochs=1, lr=1e-3, seed=2, dims=TINY)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "metanet.ckpt")
            metanet_service.save_checkpoint(path, params)
            loaded = metanet_service.load_checkpoint(path)
        self.assertEqual(loaded.dims, params.dims)
        self.assertEqual(loaded.scaler, params.scaler)
        self.assertEqual(loaded.loss_history, params.loss_history)
        for name in params.weights:
            npt.assert_array_equal(loaded.weights[name], params.weights[name])


class TestEnvironmentSplit(unittest.TestCase):
    def _environments(self, count: int, descending: bool = False):
        rng = np.random.default_rng(11)
        samples = []
        for _ in range(count):
            base = random_features(rng).model_copy(update={"partition_bytes": 65536})
            for credit in (1, 4, 8):
                speed = 1000.0 - 50 * credit if descending else 100.0 + 50 * credit
                features = base.model_copy(update={"credit_multiplier": credit})
                samples.append(TrainingSample(features=features, label=(speed,) * features.n_workers))
        return samples

    def test_split_keeps_environments_together(self):
        samples = self._environments(10)
        train, test = metanet_service.split_by_environment(samples, 0.3, seed=1)
        self.assertEqual(len(train) + len(test), 30)
        self.assertEqual(len(test), 9)
        train_keys = {metanet_service.environment_key(s.features) for s in train}
        test_keys = {metanet_service.environment_key(s.features) for s in test}
        self.assertFalse(train_keys & test_keys)

    def test_selection_agreement(self):
        params = credit_monotone_params()
        self.assertEqual(metanet_service.selection_agreement(params, self._environments(4)), 1.0)
        self.assertEqual(metanet_service.selection_agreement(params, self._environments(4, descending=True)), 0.0)
        singles = random_samples(np.random.default_rng(12), 3)
        self.assertTrue(math.isnan(metanet_service.selection_agreement(params, singles)))

    def test_agreement_tolerance(self):
        params = credit_monotone_params()
        base = random_features(np.random.default_rng(16)).model_copy(update={"partition_bytes": 65536})
        samples = []
        for credit, speed in ((1, 1000.0), (4, 999.0), (8, 995.0)):
            features = base.model_copy(update={"credit_multiplier": credit})
            samples.append(TrainingSample(features=features, label=(speed,) * features.n_workers))
        self.assertEqual(metanet_service.selection_agreement(params, samples), 1.0)
        self.assertEqual(metanet_service.selection_agreement(params, samples, tolerance=0.0), 0.0)
        with self.assertRaises(ConfigurationError):
            metanet_service.selection_agreement(params, samples, tolerance=1.0)


if __name__ == "__main__":
    unittest.main()
