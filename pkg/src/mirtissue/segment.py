"""Tissue/background separation with 2-cluster K-means (Lloyd + k-means++)."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cube_io import Mode, PixelMask, SpectralCube
from .errors import InsufficientDataError, InvariantError

log = logging.getLogger(__name__)

TISSUE, BACKGROUND = 0, 1


@dataclass(frozen=True, eq=False)
class KMeansModel:
    k: int
    centroids: np.ndarray
    inertia: float
    iterations: int
    seed: int
    inertia_history: tuple[float, ...] = ()

    def predict(self, X) -> np.ndarray:
        return _assign(np.asarray(X, dtype=np.float64), self.centroids)[0]


def _sq_dist(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # exact differences; N x k
    return np.stack([((X - c) ** 2).sum(axis=1) for c in centroids], axis=1)


def _assign(X, centroids):
    d = _sq_dist(X, centroids)
    labels = d.argmin(axis=1)
    return labels, d[np.arange(X.shape[0]), labels]


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    closest = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        else:
            idx = int(rng.integers(n))
        centers.append(X[idx])
        closest = np.minimum(closest, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers, dtype=np.float64)


def kmeans_fit(
    X,
    k: int = 2,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-6,
) -> tuple[KMeansModel, np.ndarray]:
    """Lloyd's algorithm with k-means++ seeding.

    Stops when every centroid moves less than ``tol`` (Euclidean) or after
    ``max_iter`` iterations. An emptied cluster is re-seeded at the point
    farthest from its nearest centroid.

    Returns the fitted model and the cluster index of every row.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[1] < 1:
        raise InvariantError("kmeans input must be an N x K' array with K' >= 1")
    if k < 1:
        raise InvariantError("k must be >= 1")
    if X.shape[0] < k:
        raise InsufficientDataError(f"need at least k={k} points, got {X.shape[0]}")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(X, k, rng)
    history = []
    iterations = 0
    for iterations in range(1, max_iter + 1):
        labels, dmin = _assign(X, centroids)
        history.append(float(dmin.sum()))
        new = np.empty_like(centroids)
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = X[members].mean(axis=0)
            else:
                far = int(dmin.argmax())
                log.debug("cluster %d emptied; re-seeding at point %d", j, far)
                new[j] = X[far]
                dmin[far] = 0.0
        shift = np.sqrt(((new - centroids) ** 2).sum(axis=1)).max()
        centroids = new
        if shift < tol:
            break
    labels, dmin = _assign(X, centroids)
    inertia = float(dmin.sum())
    history.append(inertia)
    steps = np.diff(history)
    if np.any(steps > 1e-9 * max(history[0], 1.0)):
        raise InvariantError(f"Lloyd inertia increased: {history}")
    model = KMeansModel(k, centroids, inertia, iterations, seed, tuple(history))
    return model, labels


def segment_tissue(cube: SpectralCube, seed: int = 0, max_iter: int = 300, tol: float = 1e-6) -> PixelMask:
    """K-means (k=2) over every pixel of one core; keep the tissue cluster.

    Tissue is the cluster whose centroid has the larger mean absorbance.
    """
    if cube.mode != Mode.ABSORBANCE:
        raise InvariantError("segment_tissue expects an absorbance cube")
    X = cube.spectra().astype(np.float64)
    if np.all(X == X[0]):
        raise InvariantError(f"core {cube.meta.core_id}: all spectra are identical")
    model, labels = kmeans_fit(X, k=2, seed=seed, max_iter=max_iter, tol=tol)
    tissue_cluster = int(np.argmax(model.centroids.mean(axis=1)))
    keep = (labels == tissue_cluster).reshape(cube.height, cube.width)

    # weak separation: clusters overlap along the axis joining the centroids
    diff = model.centroids[1] - model.centroids[0]
    gap = float(np.sqrt(diff @ diff))
    proj = X @ (diff / gap) if gap > 0 else np.zeros(X.shape[0])
    spread = max(float(proj[labels == j].std()) for j in (0, 1) if np.any(labels == j))
    frac = keep.mean()
    if gap < 5.0 * spread or frac < 0.02 or frac > 0.98:
        log.warning(
            "core %s: weak tissue/background separation (centroid gap %.3g, spread %.3g, "
            "tissue fraction %.3f)",
            cube.meta.core_id, gap, spread, frac,
        )
    return PixelMask(keep, "KMEANS")


def tissue_labels(mask: PixelMask) -> np.ndarray:
    """Per-pixel label, 0 for tissue and 1 for background."""
    return np.where(mask.keep, TISSUE, BACKGROUND).astype(np.uint8)


# --------------------------------------------------------------------------- PGM


def write_pgm(mask: PixelMask, destination) -> None:
    """Binary PGM (P5), 8-bit, 255 = keep."""
    h, w = mask.keep.shape
    payload = f"P5\n{w} {h}\n255\n".encode("ascii") + (mask.keep.astype(np.uint8) * 255).tobytes()
    Path(destination).write_bytes(payload)


def read_pgm(source) -> PixelMask:
    raw = Path(source).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    pos += 1
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise InvariantError("only 8-bit binary PGM (P5, maxval 255) is supported")
    w, h = int(tokens[1]), int(tokens[2])
    pix = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)
    return PixelMask(pix >= 128, "FILE")
