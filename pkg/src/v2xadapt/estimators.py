"""scikit-learn style wrappers around the toy planner and the composite scorer."""
from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import DimensionError
from .harness.config import RunConfig, SyntheticConfig
from .harness.data import SyntheticDataset
from .harness.train import evaluate_gen_loss, train
from .gmsaa import GmsaaConfig
from .objectives import ObjectiveConfig
from .scoring import METRICS, MetricRecord, WeightProfile, composite_score, default_profiles
from .validation import check_labels, check_matrix, check_tokens, check_unit_interval


class ScenarioAwarePlanner(BaseEstimator, TransformerMixin):
    """Toy trajectory-token planner with scenario-adaptive attention.

    ``X`` is a ``(n, tokens, dim)`` array of dual-view visual tokens (first half
    vehicle view, second half infrastructure view).  ``fit`` also needs the
    description features and scenario labels; ``y`` holds the target token
    sequences ``(n, steps)`` over a 16-token vocabulary.
    """

    def __init__(self, epochs=60, learning_rate=0.005, momentum=0.9, batch_size=4, hidden=32,
                 teacher_hidden=64, teacher_epochs=60, alpha=0.2, beta=0.5, ablation="full",
                 random_state=0):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.hidden = hidden
        self.teacher_hidden = teacher_hidden
        self.teacher_epochs = teacher_epochs
        self.alpha = alpha
        self.beta = beta
        self.ablation = ablation
        self.random_state = random_state

    def _run_config(self, n, tokens, dim, steps):
        syn = SyntheticConfig(feature_dim=dim, tokens=tokens, num_samples=n, horizon_steps=steps,
                              seed=self.random_state)
        base = RunConfig(epochs=self.epochs, learning_rate=self.learning_rate, momentum=self.momentum,
                         batch_size=self.batch_size, hidden=self.hidden,
                         teacher_hidden=self.teacher_hidden, teacher_epochs=self.teacher_epochs,
                         seed=self.random_state, synthetic=syn, gmsaa=GmsaaConfig(feature_dim=dim),
                         objective=replace(ObjectiveConfig(), alpha=self.alpha, beta=self.beta))
        return base.with_ablation(self.ablation)

    def _dataset(self, X, descriptions, labels, y=None):
        n, T, D = X.shape
        descriptions = check_matrix(descriptions, n_rows=n, n_cols=D, name="descriptions")
        labels = check_labels(labels, n)
        if y is None:
            y = np.zeros((n, self.n_steps_), dtype=int)
        ids = [f"sample-{i:06d}" for i in range(n)]
        return SyntheticDataset(ids, labels, X, descriptions, np.zeros(n, dtype=int), y,
                                self.run_config_.synthetic)

    def fit(self, X, y, descriptions=None, labels=None):
        X = check_tokens(X)
        y = np.asarray(y)
        if y.ndim != 2 or y.shape[0] != X.shape[0]:
            raise DimensionError(f"targets must be (n, steps) with n={X.shape[0]}, got {y.shape}")
        if y.size and (y.min() < 0 or y.max() >= 16):
            raise IndexError("target tokens must lie in [0, 16)")
        if descriptions is None or labels is None:
            raise TypeError("fit needs descriptions= and labels=")
        self.n_steps_ = y.shape[1]
        self.n_features_in_ = X.shape[2]
        self.run_config_ = self._run_config(X.shape[0], X.shape[1], X.shape[2], y.shape[1])
        data = self._dataset(X, descriptions, labels, y.astype(int))
        art = train(self.run_config_, data, holdout=0.0)
        self.model_ = art.model
        self.teacher_ = art.teacher
        self.history_ = art.epochs
        return self

    def _forward(self, X, descriptions, labels):
        check_is_fitted(self, "model_")
        X = check_tokens(X, self.n_features_in_)
        data = self._dataset(X, descriptions, labels)
        return self.model_.forward(data.tokens, data.descriptions, data.labels)

    def predict(self, X, descriptions, labels):
        """Greedy per-step token choice, shape ``(n, steps)``."""
        return self._forward(X, descriptions, labels).logits.data.argmax(axis=-1)

    def transform(self, X, descriptions, labels):
        """Pooled scenario-adapted embeddings, shape ``(n, dim)``."""
        return self._forward(X, descriptions, labels).z_tilde.data.mean(axis=1)

    def score(self, X, y, descriptions, labels):
        """Fraction of target tokens predicted exactly."""
        return float(np.mean(self.predict(X, descriptions, labels) == np.asarray(y)))

    def generation_loss(self, X, y, descriptions, labels):
        """Mean per-sample summed cross-entropy on ``(X, y)``."""
        check_is_fitted(self, "model_")
        data = self._dataset(check_tokens(X, self.n_features_in_), descriptions, labels,
                             np.asarray(y, dtype=int))
        return evaluate_gen_loss(self.model_, data)


class CompositeScorer(BaseEstimator, TransformerMixin):
    """Weather-aware composite quality score as a transformer.

    Input rows are metric records (dicts or ``MetricRecord``); ``transform``
    returns the composite per row and ``predict`` the acceptance decision.
    """

    def __init__(self, threshold=0.5, profiles=None):
        self.threshold = threshold
        self.profiles = profiles

    def fit(self, X=None, y=None):
        check_unit_interval(self.threshold, "threshold")
        profiles = self.profiles or default_profiles()
        self.profiles_ = {w: p if isinstance(p, WeightProfile) else WeightProfile(w, dict(p))
                          for w, p in profiles.items()}
        self.feature_names_out_ = np.array(["composite"])
        return self

    def _scored(self, X):
        check_is_fitted(self, "profiles_")
        recs = [r if isinstance(r, MetricRecord) else MetricRecord.from_dict(r) for r in X]
        return [composite_score(r, self.profiles_, self.threshold) for r in recs]

    def transform(self, X):
        return np.array([s.composite for s in self._scored(X)]).reshape(-1, 1)

    def predict(self, X):
        return np.array([s.accepted for s in self._scored(X)])

    def normalized(self, X):
        """Per-metric normalized scores, columns ordered as ``METRICS``."""
        return np.array([s.scores for s in self._scored(X)]).reshape(-1, len(METRICS))

    def get_feature_names_out(self, input_features=None):
        return np.array(["composite"])
