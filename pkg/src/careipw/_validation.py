"""Input validation helpers shared by the estimators and the GLM code."""
from collections.abc import Mapping

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import EmptyArm, MissingColumn


def get_column(data, name):
    """Return column `name` from a table-like object as a float array.

    Accepts objects exposing ``column(name)`` (ClusterDataset), mappings,
    pandas DataFrames and sequences of record objects with attributes.
    """
    if hasattr(data, "column"):
        return data.column(name)
    if isinstance(data, Mapping) or hasattr(data, "columns"):
        try:
            values = data[name]
        except KeyError:
            raise MissingColumn(f"missing column {name!r}") from None
        return np.asarray(values, dtype=float)
    if isinstance(data, (list, tuple)) and data and not np.isscalar(data[0]):
        try:
            return np.array([getattr(r, name) for r in data], dtype=float)
        except AttributeError:
            raise MissingColumn(f"missing column {name!r}") from None
    raise TypeError(f"cannot read named columns from {type(data).__name__}")


def n_rows(data):
    if hasattr(data, "n"):
        return data.n
    if isinstance(data, Mapping):
        return len(next(iter(data.values())))
    return len(data)


def check_matrix(X):
    X = check_array(X, dtype=float, ensure_2d=False, ensure_min_samples=1,
                    ensure_all_finite=True)
    if X.ndim == 1:
        X = X[:, None]
    return X


def check_vector(v, name, length=None):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        v = v.ravel()
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite values")
    if length is not None and v.shape[0] != length:
        raise ValueError(f"{name} has {v.shape[0]} entries, expected {length}")
    return v


def check_exposure(a, length=None, require_both_arms=True):
    """Validate a binary exposure vector, by default with both arms present."""
    a = check_vector(a, "exposure", length)
    if not np.all((a == 0) | (a == 1)):
        raise ValueError("exposure must be coded 0/1")
    if not require_both_arms:
        return a
    n1 = int(a.sum())
    if n1 == 0 or n1 == a.shape[0]:
        raise EmptyArm(f"exposure arm {'1' if n1 == 0 else '0'} has no units")
    return a
