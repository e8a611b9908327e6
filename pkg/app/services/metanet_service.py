"""
Meta-network service.
Prediction, loss, gradients, offline training and online adaptation of the speed predictor.
"""

from collections import OrderedDict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from app.models.metanet import (
    ALL_WEIGHTS, HEAD_WEIGHTS, FeatureScaler, FeatureVector, MetaNetDims, MetaNetParams, TrainingSample
)
from app.services import network
from app.storage.repositories.checkpoint_repo import CheckpointRepository
from app.utils.errors import ConfigurationError, TrainingDivergedError
from config.settings import settings

logger = structlog.get_logger(__name__)


def _group_by_shape(features: Sequence[FeatureVector]) -> "OrderedDict[Tuple[int, int], List[int]]":
    groups: "OrderedDict[Tuple[int, int], List[int]]" = OrderedDict()
    for position, feature in enumerate(features):
        groups.setdefault(feature.shape_key, []).append(position)
    return groups


class _Prepared:
    """Dataset pre-encoded into one array block per (n_layers, n_workers)."""

    def __init__(self, samples: Sequence[TrainingSample], scaler: Optional[FeatureScaler], n_max: int):
        features = [sample.features for sample in samples]
        self.blocks: List[Tuple[network.RawBatch, np.ndarray]] = []
        for positions in _group_by_shape(features).values():
            raw = network.raw_features([features[p] for p in positions], n_max)
            labels = np.asarray([samples[p].label for p in positions], dtype=np.float64)
            self.blocks.append((raw, labels))
        self.scaler = scaler or self._fit(n_max)
        self.encoded = [(network.encode(raw, self.scaler), labels) for raw, labels in self.blocks]
        self.size = len(samples)

    def _fit(self, n_max: int) -> FeatureScaler:
        rows = np.concatenate([raw.rows.reshape(-1, raw.rows.shape[-1]) for raw, _ in self.blocks])
        workers = np.concatenate([raw.workers.reshape(-1, raw.workers.shape[-1]) for raw, _ in self.blocks])
        candidates = np.concatenate([raw.candidates for raw, _ in self.blocks])
        speeds = np.concatenate([labels.reshape(-1) for _, labels in self.blocks])
        return FeatureScaler.fit(rows, workers, candidates, speeds, n_max=n_max)

    def batches(self, batch_size: int, rng: np.random.Generator) -> List[Tuple[network.EncodedBatch, np.ndarray]]:
        batches = []
        for encoded, labels in self.encoded:
            order = rng.permutation(len(encoded))
            for start in range(0, len(order), batch_size):
                index = order[start:start + batch_size]
                batches.append((encoded.take(index), labels[index]))
        return [batches[i] for i in rng.permutation(len(batches))]

    def full(self) -> List[Tuple[network.EncodedBatch, np.ndarray]]:
        return list(self.encoded)


def _mean_l2(params: MetaNetParams, blocks: Iterable[Tuple[network.EncodedBatch, np.ndarray]]) -> float:
    total, count = 0.0, 0
    for encoded, labels in blocks:
        predicted = network.predict_encoded(params, encoded)
        total += float(np.sqrt(np.sum((predicted - labels) ** 2, axis=1)).sum())
        count += len(encoded)
    return total / count


class MetaNetService:
    def __init__(self):
        self.checkpoint_repo = CheckpointRepository()

    def load_checkpoint(self, path: Union[str, Path]) -> MetaNetParams:
        return self.checkpoint_repo.load(path)

    def save_checkpoint(self, path: Union[str, Path], params: MetaNetParams) -> Path:
        return self.checkpoint_repo.save(path, params)

    def default_dims(self) -> MetaNetDims:
        return MetaNetDims(embed_dim=settings.EMBED_DIM, hidden_dim=settings.HIDDEN_DIM,
                           dense_dim=settings.DENSE_DIM, type_embed_dim=settings.TYPE_EMBED_DIM)

    def init_params(self, dims: Optional[MetaNetDims] = None, seed: int = 0,
                    scaler: Optional[FeatureScaler] = None) -> MetaNetParams:
        """Freshly initialized parameters (identity scaler unless one is given)."""
        dims = dims or self.default_dims()
        return MetaNetParams(dims=dims, scaler=scaler or FeatureScaler.identity(settings.N_MAX),
                             weights=network.init_weights(dims, seed))

    def forward(self, params: MetaNetParams, features: FeatureVector) -> np.ndarray:
        """Predicted per-worker speed (samples/s) for one feature vector."""
        return self.predict_many(params, [features])[0]

    def predict_many(self, params: MetaNetParams, features: Sequence[FeatureVector]) -> List[np.ndarray]:
        """Predictions for many feature vectors, batched per (n_layers, n_workers); order preserved."""
        results: List[Optional[np.ndarray]] = [None] * len(features)
        for positions in _group_by_shape(features).values():
            batch = network.encode_features([features[p] for p in positions], params.scaler)
            predicted = network.predict_encoded(params, batch)
            for row, position in enumerate(positions):
                results[position] = predicted[row]
        return results

    def loss(self, predicted: Sequence[float], observed: Sequence[float]) -> float:
        """Euclidean norm between predicted and observed per-worker speeds."""
        return network.l2_loss(predicted, observed)

    def backward(self, params: MetaNetParams, sample: TrainingSample) -> Dict[str, np.ndarray]:
        """Gradient of the standardized log-speed objective for one sample w.r.t. every weight tensor."""
        batch = network.encode_features([sample.features], params.scaler)
        labels = np.asarray([sample.label], dtype=np.float64)
        _, dy, cache = network.objective(params.weights, params.dims, params.scaler, batch, labels)
        return network.backward(params.weights, params.dims, cache, dy)

    def sample_objective(self, params: MetaNetParams, sample: TrainingSample) -> float:
        """The scalar that backward differentiates."""
        batch = network.encode_features([sample.features], params.scaler)
        value, _, _ = network.objective(params.weights, params.dims, params.scaler, batch,
                                        np.asarray([sample.label], dtype=np.float64))
        return value

    def train_offline(self, dataset: Sequence[TrainingSample], epochs: Optional[int] = None,
                      lr: Optional[float] = None, seed: int = 0, batch_size: Optional[int] = None,
                      dims: Optional[MetaNetDims] = None, scaler: Optional[FeatureScaler] = None) -> MetaNetParams:
        """
        Mini-batch Adam on the squared error of standardized log speed.
        The scaler is fitted on the dataset unless one is given; loss_history holds the mean L2 loss
        (samples/s) before training followed by one value per epoch.
        """
        if not dataset:
            raise ConfigurationError("training dataset is empty")
        epochs = settings.OFFLINE_EPOCHS if epochs is None else epochs
        lr = settings.OFFLINE_LR if lr is None else lr
        batch_size = batch_size or settings.BATCH_SIZE
        if epochs < 0 or lr <= 0 or batch_size < 1:
            raise ConfigurationError("epochs must be >= 0, lr > 0 and batch_size >= 1")

        dims = dims or self.default_dims()
        prepared = _Prepared(dataset, scaler, settings.N_MAX if scaler is None else scaler.n_max)
        params = MetaNetParams(dims=dims, scaler=prepared.scaler, weights=network.init_weights(dims, seed))
        rng = np.random.default_rng(seed)
        optimizer = network.Adam(ALL_WEIGHTS, lr=lr)
        history = [_mean_l2(params, prepared.full())]
        logger.info("offline_training_started", samples=prepared.size, epochs=epochs, lr=lr,
                    batch_size=batch_size, initial_loss=round(history[0], 6))

        for epoch in range(epochs):
            for step, (encoded, labels) in enumerate(prepared.batches(batch_size, rng)):
                value, dy, cache = network.objective(params.weights, dims, params.scaler, encoded, labels)
                if not np.isfinite(value):
                    logger.error("training_diverged", epoch=epoch, step=step)
                    raise TrainingDivergedError(f"loss became non-finite at epoch {epoch}, step {step}", epoch, step)
                grads = network.backward(params.weights, dims, cache, dy)
                optimizer.step(params.weights, grads)
            epoch_loss = _mean_l2(params, prepared.full())
            if not np.isfinite(epoch_loss):
                raise TrainingDivergedError(f"loss became non-finite after epoch {epoch}", epoch)
            history.append(epoch_loss)
            logger.info("offline_epoch", epoch=epoch + 1, loss=round(epoch_loss, 6))

        return params.copy(loss_history=tuple(history))

    def adapt_online(self, params: MetaNetParams, recent_samples: Sequence[TrainingSample],
                     steps: Optional[int] = None, lr: Optional[float] = None,
                     scope: Optional[str] = None) -> MetaNetParams:
        """
        Fine-tune on the recent samples with full-batch Adam steps.
        scope 'head' updates only the dense layers; 'full' updates everything. The weights with the
        lowest loss seen (including the starting point) are returned, so adaptation never makes the
        fit on recent_samples worse.
        """
        if not recent_samples:
            raise ConfigurationError("online adaptation needs at least one sample")
        steps = settings.ADAPT_STEPS if steps is None else steps
        lr = settings.ADAPT_LR if lr is None else lr
        scope = scope or settings.ADAPT_SCOPE
        if scope not in ("head", "full"):
            raise ConfigurationError(f"unknown adaptation scope {scope!r}")
        names = HEAD_WEIGHTS if scope == "head" else ALL_WEIGHTS

        adapted = params.copy()
        if steps <= 0:
            return adapted
        prepared = _Prepared(recent_samples, params.scaler, params.scaler.n_max)
        blocks = prepared.full()
        optimizer = network.Adam(names, lr=lr)

        def total_objective() -> Tuple[float, List[Tuple[np.ndarray, dict]]]:
            value, parts = 0.0, []
            for encoded, labels in blocks:
                part, dy, cache = network.objective(adapted.weights, adapted.dims, adapted.scaler, encoded, labels)
                weight = len(encoded) / prepared.size
                value += part * weight
                parts.append((dy * weight, cache))
            return value, parts

        best_value, parts = total_objective()
        initial_value = best_value
        best_weights = {name: adapted.weights[name].copy() for name in names}
        for step in range(steps):
            grads: Dict[str, np.ndarray] = {}
            for dy, cache in parts:
                for name, grad in network.backward(adapted.weights, adapted.dims, cache, dy, names).items():
                    grads[name] = grads[name] + grad if name in grads else grad
            optimizer.step(adapted.weights, grads)
            value, parts = total_objective()
            if not np.isfinite(value):
                raise TrainingDivergedError(f"online adaptation diverged at step {step}", step=step)
            if value < best_value:
                best_value = value
                best_weights = {name: adapted.weights[name].copy() for name in names}

        for name in names:
            adapted.weights[name] = best_weights[name]
        logger.info("online_adaptation", samples=prepared.size, steps=steps, scope=scope,
                    objective_before=round(initial_value, 6), objective_after=round(best_value, 6))
        return adapted

    def evaluate(self, params: MetaNetParams, samples: Sequence[TrainingSample]) -> Dict[str, float]:
        """Mean L2 loss and relative error statistics of mean predicted vs mean observed speed."""
        if not samples:
            raise ValueError("no samples to evaluate")
        predictions = self.predict_many(params, [sample.features for sample in samples])
        losses, relative = [], []
        for predicted, sample in zip(predictions, samples):
            observed = np.asarray(sample.label)
            losses.append(self.loss(predicted, observed))
            relative.append(abs(float(predicted.mean()) - float(observed.mean())) / float(observed.mean()))
        return {
            "mean_loss": float(np.mean(losses)),
            "mean_relative_error": float(np.mean(relative)),
            "median_relative_error": float(np.median(relative)),
        }

    def environment_key(self, features: FeatureVector) -> tuple:
        """Everything but the candidate configuration."""
        return (features.t_seq, features.layer_bytes, features.b_down, features.b_up,
                features.model_embedding, features.arch_embedding)

    def _by_environment(self, samples: Sequence[TrainingSample]) -> "OrderedDict[tuple, List[TrainingSample]]":
        groups: "OrderedDict[tuple, List[TrainingSample]]" = OrderedDict()
        for sample in samples:
            groups.setdefault(self.environment_key(sample.features), []).append(sample)
        return groups

    def split_by_environment(self, samples: Sequence[TrainingSample], holdout: float,
                             seed: int = 0) -> Tuple[List[TrainingSample], List[TrainingSample]]:
        """(train, held-out) split that keeps every candidate of an environment on the same side."""
        if not 0.0 <= holdout < 1.0:
            raise ConfigurationError("holdout fraction must be in [0, 1)")
        groups = self._by_environment(samples)
        keys = list(groups)
        order = np.random.default_rng(seed).permutation(len(keys))
        n_held = int(round(holdout * len(keys)))
        held = {keys[i] for i in order[:n_held]}
        train = [s for key in keys if key not in held for s in groups[key]]
        test = [s for key in keys if key in held for s in groups[key]]
        logger.debug("environment_split", environments=len(keys), held_out=n_held)
        return train, test

    def selection_agreement(self, params: MetaNetParams, samples: Sequence[TrainingSample],
                            tolerance: Optional[float] = None) -> float:
        """
        Share of environments (with at least two candidates) where the predicted best candidate is
        observed to be within `tolerance` (relative) of the observed best speed. With tolerance 0
        only the exact argmax counts; ties go to the smaller (S_p, S_c) on both sides.
        """
        tolerance = settings.AGREEMENT_TOLERANCE if tolerance is None else tolerance
        if not 0.0 <= tolerance < 1.0:
            raise ConfigurationError("agreement tolerance must be in [0, 1)")
        hits, total = 0, 0
        for members in self._by_environment(samples).values():
            if len(members) < 2:
                continue
            members = sorted(members, key=lambda s: (s.features.partition_bytes, s.features.credit_multiplier))
            predicted = [float(np.mean(p)) for p in self.predict_many(params, [s.features for s in members])]
            observed = np.array([float(np.mean(s.label)) for s in members])
            chosen = int(np.argmax(predicted))
            if tolerance == 0.0:
                hits += int(chosen == int(np.argmax(observed)))
            else:
                hits += int(observed[chosen] >= observed.max() * (1.0 - tolerance))
            total += 1
        return hits / total if total else float("nan")
