"""Input-validation helpers shared by the estimators and the CLI."""
from __future__ import annotations

import math

import numpy as np
from sklearn.utils.validation import check_array

from .errors import ConfigError, ContractError, DimensionError


def check_tokens(X, feature_dim=None):
    """Coerce a ``(n, T, D)`` token array to finite float64."""
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_all_finite=True)
    if X.ndim != 3:
        raise DimensionError(f"expected (n, tokens, dim) array, got shape {X.shape}")
    if feature_dim is not None and X.shape[2] != feature_dim:
        raise DimensionError(f"token dim {X.shape[2]} != {feature_dim}")
    return X


def check_matrix(X, n_rows=None, n_cols=None, name="X"):
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    if n_rows is not None and X.shape[0] != n_rows:
        raise DimensionError(f"{name} has {X.shape[0]} rows, expected {n_rows}")
    if n_cols is not None and X.shape[1] != n_cols:
        raise DimensionError(f"{name} has {X.shape[1]} columns, expected {n_cols}")
    return X


def check_labels(y, n=None, num_classes=3):
    y = np.asarray(y)
    if y.ndim != 1:
        raise DimensionError("labels must be one-dimensional")
    if n is not None and y.shape[0] != n:
        raise DimensionError(f"{y.shape[0]} labels for {n} samples")
    if y.size and (not np.all(np.equal(np.mod(y, 1), 0)) or y.min() < 0 or y.max() >= num_classes):
        raise ContractError(f"labels must be integers in [0, {num_classes})")
    return y.astype(int)


def check_unit_rows(X, tol=1e-9, name="embeddings"):
    X = np.asarray(X, dtype=float)
    norms = np.linalg.norm(X, axis=-1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise ContractError(f"{name} rows must be L2-normalized (max deviation "
                            f"{float(np.max(np.abs(norms - 1.0))):.3g})")
    return X


def check_positive(value, name):
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise ConfigError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_unit_interval(value, name):
    if not (isinstance(value, (int, float)) and 0.0 <= value <= 1.0):
        raise ConfigError(f"{name} must lie in [0, 1], got {value!r}")
    return float(value)


def parse_footprint(text):
    """``"w,l"`` -> ``(w, l)`` with both strictly positive."""
    parts = str(text).split(",")
    if len(parts) != 2:
        raise ConfigError(f"footprint must be 'width,length', got {text!r}")
    try:
        w, l = (float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"footprint must be numeric, got {text!r}") from None
    return check_positive(w, "footprint width"), check_positive(l, "footprint length")
