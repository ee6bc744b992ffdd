"""PCA for 2-D latent-space views of kept vs. discarded spectra."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cube_io import SpectraTable
from .errors import DimensionMismatchError, InsufficientDataError, InvariantError


@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # d x K'
    explained_variance: np.ndarray
    total_variance: float

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        if self.total_variance == 0:
            return np.zeros_like(self.explained_variance)
        return self.explained_variance / self.total_variance


def _as_matrix(data) -> np.ndarray:
    if isinstance(data, SpectraTable):
        return data.spectra
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2:
        raise InvariantError("PCA input must be 2-D")
    return X


def pca_fit(data, d: int) -> PcaModel:
    """Top-``d`` principal directions via SVD of the centered data.

    Each component's largest-magnitude coordinate is made positive. ``d``
    may equal K' (the full basis) but not exceed K' or the row count.
    """
    X = _as_matrix(data)
    n, k = X.shape
    if n <= 1:
        raise InsufficientDataError("PCA needs at least 2 rows")
    if d < 1 or d > k:
        raise InvariantError(f"d must be in [1, {k}], got {d}")
    if d > n:
        raise InsufficientDataError(f"PCA with d={d} needs at least {d} rows, got {n}")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    var = s**2 / (n - 1)
    comps = vt[:d].copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    total = float((Xc**2).sum() / (n - 1))
    return PcaModel(mean, comps, var[:d].copy(), total)


def pca_transform(model: PcaModel, data) -> np.ndarray:
    X = _as_matrix(data)
    if X.shape[1] != model.mean.size:
        raise DimensionMismatchError(
            f"model expects {model.mean.size} channels, data has {X.shape[1]}"
        )
    return (X - model.mean) @ model.components.T
