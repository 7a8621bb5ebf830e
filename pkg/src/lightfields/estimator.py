"""scikit-learn style facade over the core model: fit a relightable surface
light field from plain sample arrays and predict colors for new queries.

The feature matrix packs one query per row:

    X[:, 0:3]   surface point p
    X[:, 3:6]   unit view direction v
    X[:, 6:9]   point-light position
    X[:, 9:12]  light RGB color in [0, 1]

and y holds the supervised sRGB color per row. This composes with pipelines,
grid search and cross-validation; the dataset/encoder machinery in
``training`` is the heavy-duty path for full multi-object experiments.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import autodiff as ad
from .autodiff import AdamConfig, Tensor, adam_step
from .nets import DEFAULT_LIGHT_RADIUS, ModelConfig, SurfaceLightFieldModel
from .training import photometric_l1

N_FEATURES = 12


def validate_queries(X, light_radius=DEFAULT_LIGHT_RADIUS, tol=1e-6):
    """Check and split a query matrix into (p, v, light rows)."""
    X = check_array(X, dtype=np.float64)
    if X.shape[1] != N_FEATURES:
        raise ValueError(f"X must have {N_FEATURES} columns "
                         "(p, v, light position, light color), got "
                         f"{X.shape[1]}")
    v = X[:, 3:6]
    norms = np.linalg.norm(v, axis=1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise ValueError("columns 3:6 must hold unit view directions")
    color = X[:, 9:12]
    if np.any(color < 0.0) or np.any(color > 1.0):
        raise ValueError("columns 9:12 must hold light colors in [0, 1]")
    light_rows = np.concatenate([X[:, 6:9] / light_radius, color], axis=1)
    return X[:, 0:3], v, light_rows


def samples_to_xy(batch, light):
    """Pack a dataset SampleBatch plus a light into (X, y)."""
    n = len(batch)
    light_cols = np.tile(np.concatenate([light.position, light.color]), (n, 1))
    return np.concatenate([batch.p, batch.v, light_cols], axis=1), batch.rgb


class SurfaceLightFieldRegressor(BaseEstimator, RegressorMixin):
    """Relightable color field as a regressor: (p, v, light) -> sRGB."""

    def __init__(self, kind="two_step", hidden_dim=128, feature_dim=32,
                 appearance_blocks=6, lighting_blocks=5, one_step_blocks=10,
                 samples_per_step=2048, learning_rate=1e-3, steps=500,
                 seed=0, light_radius=DEFAULT_LIGHT_RADIUS):
        self.kind = kind
        self.hidden_dim = hidden_dim
        self.feature_dim = feature_dim
        self.appearance_blocks = appearance_blocks
        self.lighting_blocks = lighting_blocks
        self.one_step_blocks = one_step_blocks
        self.samples_per_step = samples_per_step
        self.learning_rate = learning_rate
        self.steps = steps
        self.seed = seed
        self.light_radius = light_radius

    def _forward(self, model, p, v, light_rows, n_rows):
        cond = Tensor(light_rows)
        if model.config.kind == "one_step":
            return model.one_step_t(Tensor(np.concatenate([p, v], axis=1)), cond)
        feats = model.appearance_t(Tensor(p), None)
        return model.lighting_t(ad.concat([feats, Tensor(v)]), cond)

    def fit(self, X, y):
        p, v, light_rows = validate_queries(X, self.light_radius)
        y = check_array(y, dtype=np.float64)
        if y.shape != (len(p), 3):
            raise ValueError(f"y must be (n, 3) RGB targets, got {y.shape}")

        config = ModelConfig(
            kind=self.kind, conditioning="none", hidden_dim=self.hidden_dim,
            feature_dim=self.feature_dim, appearance_blocks=self.appearance_blocks,
            lighting_blocks=self.lighting_blocks, one_step_blocks=self.one_step_blocks,
            light_radius=self.light_radius)
        model = SurfaceLightFieldModel(config, seed=self.seed)
        adam = AdamConfig(learning_rate=self.learning_rate)
        rng = np.random.default_rng(self.seed)
        n = len(p)
        history = []
        for _ in range(self.steps):
            sel = rng.choice(n, size=min(self.samples_per_step, n), replace=False)
            model.store.zero_grad()
            pred = self._forward(model, p[sel], v[sel], light_rows[sel], len(sel))
            loss = photometric_l1(pred, Tensor(y[sel]))
            ad.backward(loss)
            adam_step(model.store, adam)
            history.append(loss.item())

        self.model_ = model
        self.history_ = history
        self.n_features_in_ = N_FEATURES
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        p, v, light_rows = validate_queries(X, self.light_radius)
        with ad.no_grad():
            pred = self._forward(self.model_, p, v, light_rows, len(p))
        return pred.data

    def score(self, X, y, sample_weight=None):
        """Negative photometric L1 (higher is better)."""
        y = check_array(y, dtype=np.float64)
        return -float(np.abs(self.predict(X) - y).mean())
