"""Scikit-learn style wrapper around the diffusion GZSL pipeline.

``fit(X, y)`` trains the conditional denoiser on seen-class rows only;
``predict(X)`` samples a semantic estimate per row and assigns the nearest
class prototype under cosine distance. Class attributes must be supplied
at construction since unseen classes have no training rows.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import GzslDataset
from .evaluation import ClassPrototypes, nn_classify
from .model import Denoiser, DenoiserConfig
from .rng import RngState
from .sampling import GuidanceConfig, sample
from .schedule import build_linear_schedule
from .training import TrainConfig, train


class RevCDClassifier(BaseEstimator, ClassifierMixin):
    """Generative zero-shot classifier over semantic attribute vectors.

    Parameters
    ----------
    attributes : array of shape [n_classes, d_s]
        Per-class attribute vectors in [0, 1]; row index is the class id.
    seen_classes : sequence of int
        Class ids with training rows; the rest are treated as unseen.
    """

    def __init__(self, attributes=None, seen_classes=None, hidden=(48, 24, 12),
                 d_t=32, d_c=32, n_heads=2, n_tokens=1, dropout=0.18,
                 timesteps=200, beta_start=1e-4, beta_end=0.02, epochs=100,
                 batch_size=64, learning_rate=1e-3, guidance=1.0,
                 lambda3=0.01, mode="gzsl", seed=0):
        self.attributes = attributes
        self.seen_classes = seen_classes
        self.hidden = hidden
        self.d_t = d_t
        self.d_c = d_c
        self.n_heads = n_heads
        self.n_tokens = n_tokens
        self.dropout = dropout
        self.timesteps = timesteps
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.guidance = guidance
        self.lambda3 = lambda3
        self.mode = mode
        self.seed = seed

    def _dataset_from_arrays(self, X, y) -> GzslDataset:
        attributes = np.asarray(self.attributes, dtype=np.float32)
        seen = np.asarray(sorted(int(c) for c in self.seen_classes),
                          dtype=np.int64)
        unseen = np.asarray(
            [c for c in range(attributes.shape[0]) if c not in set(seen.tolist())],
            dtype=np.int64)
        rows = np.arange(len(y), dtype=np.int64)
        ds = GzslDataset(
            name="estimator", features=np.asarray(X, dtype=np.float32),
            labels=np.asarray(y, dtype=np.int64), attributes=attributes,
            train_seen=rows, test_seen=np.empty(0, dtype=np.int64),
            test_unseen=np.empty(0, dtype=np.int64),
            seen_classes=seen, unseen_classes=unseen)
        ds.validate()
        return ds

    def fit(self, X, y):
        if self.attributes is None or self.seen_classes is None:
            raise ValueError("attributes and seen_classes are required")
        X, y = check_X_y(X, y, dtype=np.float32)
        seen = set(int(c) for c in self.seen_classes)
        if set(np.unique(y).tolist()) - seen:
            raise ValueError("fit received labels outside seen_classes")

        dataset = self._dataset_from_arrays(X, y)
        from .diffusion import LossWeights
        config = TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weights=LossWeights(lambda3=self.lambda3), seed=self.seed)
        self.schedule_ = build_linear_schedule(self.timesteps,
                                               self.beta_start, self.beta_end)
        rng = RngState(self.seed)
        model = Denoiser(DenoiserConfig(
            d_s=dataset.d_s, d_x=dataset.d_x, n_seen_classes=len(seen),
            hidden=tuple(self.hidden), d_t=self.d_t, d_c=self.d_c,
            n_heads=self.n_heads, n_tokens=self.n_tokens,
            dropout=self.dropout), rng=rng.spawn(1))
        self.model_, self.history_ = train(dataset, config, self.schedule_,
                                           model=model, rng=rng)
        self.prototypes_ = ClassPrototypes.from_dataset(dataset)
        self.classes_ = np.asarray(
            sorted(int(c) for c in self.prototypes_.class_ids))
        return self

    def sample_semantics(self, X) -> np.ndarray:
        """Sampled [0, 1] semantic estimates, one row per input row."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float32)
        guidance = GuidanceConfig(g=self.guidance, seed=self.seed)
        return sample(X, self.model_, self.schedule_, guidance,
                      rng=RngState(self.seed))

    def predict(self, X) -> np.ndarray:
        semantics = self.sample_semantics(X)
        return nn_classify(semantics, self.prototypes_, mode=self.mode)
