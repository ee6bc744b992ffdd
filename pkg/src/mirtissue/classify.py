"""Binary classifiers scoring CRC (positive, label 1) against NC.

Every trained model exposes ``predict_score(X) -> [0, 1]`` and
``predict(X) = score >= 0.5``. New kinds plug in through
:func:`register_classifier`.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import expit

from .cube_io import SpectraTable, TissueClass
from .errors import (
    DimensionMismatchError,
    InvariantError,
    SingleClassError,
    SingularCovarianceError,
)

MODEL_FORMAT = "mirtissue-model"
MODEL_VERSION = 1


class Kind(str, Enum):
    LDA = "lda"
    RANDOM_FOREST = "random_forest"
    MLP3 = "mlp3"


DEFAULT_NAMES = {Kind.LDA.value: "LDA", Kind.RANDOM_FOREST.value: "RFC", Kind.MLP3.value: "3Dense"}

DEFAULTS = {
    Kind.LDA.value: {"ridge_factor": 1e-6, "priors": None},
    Kind.RANDOM_FOREST.value: {
        "n_trees": 100,
        "max_depth": None,
        "max_features": "sqrt",
        "min_samples_split": 2,
        "bootstrap": True,
    },
    Kind.MLP3.value: {
        "hidden": [64, 32],
        "batch_size": 128,
        "learning_rate": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "epsilon": 1e-8,
        "epochs": 20,
    },
}


@dataclass(frozen=True)
class ClassifierSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    name: str | None = None

    def __post_init__(self):
        kind = self.kind.value if isinstance(self.kind, Kind) else str(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind not in _REGISTRY:
            raise InvariantError(f"unknown classifier kind {kind!r}")
        unknown = set(self.params) - set(DEFAULTS.get(kind, self.params))
        if unknown:
            raise InvariantError(f"unknown {kind} hyperparameters: {sorted(unknown)}")
        _check_ranges(kind, self.hyperparameters)

    @property
    def label(self) -> str:
        return self.name or DEFAULT_NAMES.get(self.kind, self.kind)

    @property
    def hyperparameters(self) -> dict:
        return {**DEFAULTS.get(self.kind, {}), **self.params}

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "seed": self.seed, "name": self.label}

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierSpec":
        return cls(d["kind"], dict(d.get("params", {})), int(d.get("seed", 0)), d.get("name"))


def _check_ranges(kind: str, hp: dict) -> None:
    def need(cond, msg):
        if not cond:
            raise InvariantError(f"{kind}: {msg}")

    if kind == Kind.LDA.value:
        need(hp["ridge_factor"] >= 0, "ridge_factor must be >= 0")
        if hp["priors"] is not None:
            p = hp["priors"]
            need(len(p) == 2 and min(p) > 0 and abs(sum(p) - 1) < 1e-9, "priors must be 2 positive values summing to 1")
    elif kind == Kind.RANDOM_FOREST.value:
        need(int(hp["n_trees"]) >= 1, "n_trees must be >= 1")
        need(hp["max_depth"] is None or int(hp["max_depth"]) >= 0, "max_depth must be >= 0 or null")
        need(int(hp["min_samples_split"]) >= 2, "min_samples_split must be >= 2")
        mf = hp["max_features"]
        need(mf in ("sqrt", "log2", None) or (isinstance(mf, int) and mf >= 1), "bad max_features")
    elif kind == Kind.MLP3.value:
        need(len(hp["hidden"]) == 2 and min(hp["hidden"]) >= 1, "hidden must be two positive widths")
        need(int(hp["batch_size"]) >= 1 and int(hp["epochs"]) >= 0, "bad batch_size/epochs")
        need(hp["learning_rate"] > 0 and hp["epsilon"] > 0, "learning_rate and epsilon must be > 0")
        need(0 <= hp["beta1"] < 1 and 0 <= hp["beta2"] < 1, "Adam betas must lie in [0, 1)")


# --------------------------------------------------------------------------- base


class TrainedModel:
    spec: ClassifierSpec
    input_dim: int

    def _check(self, X) -> np.ndarray:
        X = _features(X)
        if X.shape[1] != self.input_dim:
            raise DimensionMismatchError(
                f"{self.spec.label} expects {self.input_dim} features, got {X.shape[1]}"
            )
        return X

    def predict_score(self, X) -> np.ndarray:
        raise NotImplementedError

    def predict(self, X) -> np.ndarray:
        return (self.predict_score(X) >= 0.5).astype(np.int64)

    def parameters(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kind": self.spec.kind,
            "name": self.spec.label,
            "hyperparameters": self.spec.hyperparameters,
            "params": dict(self.spec.params),
            "seed": self.spec.seed,
            "input_dim": self.input_dim,
            "parameters": self.parameters(),
        }


def _features(X) -> np.ndarray:
    if isinstance(X, SpectraTable):
        X = X.spectra
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return X


def _training_arrays(data, y=None) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, SpectraTable):
        if np.any(data.label == int(TissueClass.UNLABELED)):
            raise InvariantError("training table contains UNLABELED rows")
        X, y = data.spectra, (data.label == int(TissueClass.CRC)).astype(np.int64)
    else:
        X = _features(data)
        y = np.asarray(y, dtype=np.int64)
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatchError("feature and label counts differ")
    if not np.all(np.isfinite(X)):
        raise InvariantError("training features contain NaN or infinite values")
    if not set(np.unique(y).tolist()) <= {0, 1}:
        raise InvariantError("labels must be 0 (NC) or 1 (CRC)")
    if np.unique(y).size < 2:
        raise SingleClassError("training data contains a single class")
    return X, y


# --------------------------------------------------------------------------- LDA


class LdaModel(TrainedModel):
    """Two Gaussians with a shared (pooled, ridge-regularized) covariance.

    The posterior of the positive class reduces to ``sigmoid(w @ x + b)``.
    """

    def __init__(self, spec, means, priors, ridge, coef, intercept):
        self.spec = spec
        self.means = np.asarray(means, dtype=np.float64)
        self.priors = np.asarray(priors, dtype=np.float64)
        self.ridge = float(ridge)
        self.coef = np.asarray(coef, dtype=np.float64)
        self.intercept = float(intercept)
        self.input_dim = self.coef.size

    def decision_function(self, X) -> np.ndarray:
        return np.einsum("ij,j->i", self._check(X), self.coef) + self.intercept

    def predict_score(self, X) -> np.ndarray:
        return expit(self.decision_function(X))

    def parameters(self):
        return {
            "means": self.means.tolist(),
            "priors": self.priors.tolist(),
            "ridge": self.ridge,
            "coef": self.coef.tolist(),
            "intercept": self.intercept,
        }


def fit_lda(spec: ClassifierSpec, X, y) -> LdaModel:
    hp = spec.hyperparameters
    n, k = X.shape
    means = np.stack([X[y == c].mean(axis=0) for c in (0, 1)])
    centered = X - means[y]
    cov = centered.T @ centered / max(n - 2, 1)
    ridge = hp["ridge_factor"] * np.trace(cov) / k
    if hp["priors"] is None:
        priors = np.array([(y == 0).mean(), (y == 1).mean()])
    else:
        priors = np.asarray(hp["priors"], dtype=np.float64)
    try:
        if not ridge > 0 and np.trace(cov) == 0:
            raise LinAlgError("zero covariance")
        factor = cho_factor(cov + ridge * np.eye(k), lower=True)
        sol = cho_solve(factor, means.T)  # k x 2: Sigma^-1 mu_c
    except LinAlgError as exc:
        raise SingularCovarianceError(
            f"pooled covariance is singular even with ridge {ridge:.3g} "
            f"(ridge_factor {hp['ridge_factor']:.3g} * trace/K)"
        ) from exc
    coef = sol[:, 1] - sol[:, 0]
    quad = np.einsum("ij,ji->i", means, sol)  # mu_c^T Sigma^-1 mu_c
    intercept = -0.5 * (quad[1] - quad[0]) + math.log(priors[1] / priors[0])
    return LdaModel(spec, means, priors, ridge, coef, intercept)


# --------------------------------------------------------------------------- forest


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat binary tree; ``feature == -1`` marks a leaf. Left branch takes ``x <= threshold``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # positive fraction of training samples at the node

    def leaf_index(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            active = f >= 0
            if not active.any():
                return node
            r, n_act, f_act = rows[active], node[active], f[active]
            go_left = X[r, f_act] <= self.threshold[n_act]
            node[r] = np.where(go_left, self.left[n_act], self.right[n_act])

    def vote(self, X: np.ndarray) -> np.ndarray:
        return (self.value[self.leaf_index(X)] > 0.5).astype(np.int64)

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=np.float64),
        )


def _n_features(max_features, k: int) -> int:
    if max_features == "sqrt":
        return max(1, int(math.sqrt(k)))
    if max_features == "log2":
        return max(1, int(math.log2(k)))
    if max_features is None:
        return k
    return min(int(max_features), k)


def _best_split(Xt: np.ndarray, idx: np.ndarray, yn: np.ndarray, feats: np.ndarray):
    """Lowest weighted Gini split of rows ``idx`` among ``feats``; None when all are constant.

    ``Xt`` is the feature-major (K, n) copy of the design matrix.
    """
    n = yn.size
    V = Xt[feats][:, idx]
    # order within runs of equal values is irrelevant: splits sit only between distinct values
    order = np.argsort(V, axis=1)
    vs = np.take_along_axis(V, order, axis=1)
    pos_l = np.cumsum(yn[order], axis=1)[:, :-1].astype(np.float64)
    n_l = np.arange(1, n, dtype=np.float64)
    n_r = n - n_l
    pos_r = yn.sum() - pos_l
    # minimizing weighted Gini == maximizing sum over children of (p^2 + q^2) / n_child
    purity = (pos_l**2 + (n_l - pos_l) ** 2) / n_l + (pos_r**2 + (n_r - pos_r) ** 2) / n_r
    valid = vs[:, :-1] < vs[:, 1:]
    if not valid.any():
        return None
    purity = np.where(valid, purity, -np.inf)  # feature-major for deterministic ties
    flat = int(np.argmax(purity))
    j, i = divmod(flat, n - 1)
    lo, hi = vs[j, i], vs[j, i + 1]
    thr = lo + (hi - lo) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return int(feats[j]), float(thr)


def build_tree(X, y, rng, max_features="sqrt", max_depth=None, min_samples_split=2) -> Tree:
    n_total, k = X.shape
    m = _n_features(max_features, k)
    Xt = np.ascontiguousarray(X.T)
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        return len(feature) - 1

    root = new_node(np.arange(n_total))
    stack = [(root, np.arange(n_total), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yn = y[idx]
        pos = int(yn.sum())
        if pos == 0 or pos == idx.size or idx.size < min_samples_split:
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        perm = rng.permutation(k)
        split = _best_split(Xt, idx, yn, perm[:m])
        if split is None and m < k:
            # keep drawing features until a non-constant one turns up
            split = _best_split(Xt, idx, yn, perm[m:])
        if split is None:
            continue
        f, thr = split
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        lnode, rnode = new_node(li), new_node(ri)
        feature[node], threshold[node], left[node], right[node] = f, thr, lnode, rnode
        stack.append((rnode, ri, depth + 1))
        stack.append((lnode, li, depth + 1))
    return Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=np.float64),
    )


class ForestModel(TrainedModel):
    """Bagged Gini trees; the score is the fraction of trees voting CRC."""

    def __init__(self, spec, trees, input_dim):
        self.spec = spec
        self.trees = list(trees)
        self.input_dim = int(input_dim)

    def tree_votes(self, X) -> np.ndarray:
        X = self._check(X)
        return np.stack([t.vote(X) for t in self.trees])

    def predict_score(self, X) -> np.ndarray:
        return self.tree_votes(X).sum(axis=0) / len(self.trees)

    def parameters(self):
        return {"trees": [t.to_dict() for t in self.trees]}


def fit_forest(spec: ClassifierSpec, X, y, threads: int = 1) -> ForestModel:
    hp = spec.hyperparameters
    n = X.shape[0]
    streams = np.random.SeedSequence(spec.seed).spawn(int(hp["n_trees"]))

    def grow(ss):
        rng = np.random.default_rng(ss)
        idx = rng.integers(0, n, size=n) if hp["bootstrap"] else np.arange(n)
        return build_tree(
            X[idx], y[idx], rng, hp["max_features"], hp["max_depth"], int(hp["min_samples_split"])
        )

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            trees = list(pool.map(grow, streams))
    else:
        trees = [grow(ss) for ss in streams]
    return ForestModel(spec, trees, X.shape[1])


# --------------------------------------------------------------------------- MLP

_PARAM_ORDER = ("W1", "b1", "W2", "b2", "W3", "b3")


class MlpModel(TrainedModel):
    """Dense K -> h1 -> h2 -> 1 network, ReLU hidden layers, sigmoid output."""

    def __init__(self, spec, params: dict, loss_history=()):
        self.spec = spec
        self.params = {k: np.array(params[k], dtype=np.float64) for k in _PARAM_ORDER}
        self.input_dim = self.params["W1"].shape[0]
        self.loss_history = list(loss_history)

    @classmethod
    def zeros(cls, input_dim: int, spec: ClassifierSpec | None = None) -> "MlpModel":
        spec = spec or ClassifierSpec(Kind.MLP3)
        h1, h2 = spec.hyperparameters["hidden"]
        shapes = _shapes(input_dim, h1, h2)
        return cls(spec, {k: np.zeros(s) for k, s in shapes.items()})

    def _forward(self, X, row_exact: bool = False):
        # BLAS blocking can make a row's result depend on its neighbours;
        # einsum computes each row on its own, so scoring uses it
        mm = (lambda A, B: np.einsum("ij,jk->ik", A, B)) if row_exact else np.matmul
        p = self.params
        a1 = mm(X, p["W1"]) + p["b1"]
        h1 = np.maximum(a1, 0.0)
        a2 = mm(h1, p["W2"]) + p["b2"]
        h2 = np.maximum(a2, 0.0)
        z = (mm(h2, p["W3"]) + p["b3"])[:, 0]
        return a1, h1, a2, h2, z

    def logits(self, X) -> np.ndarray:
        return self._forward(self._check(X), row_exact=True)[-1]

    def predict_score(self, X) -> np.ndarray:
        return expit(self.logits(X))

    def parameters(self):
        return {k: v.tolist() for k, v in self.params.items()}


def _shapes(k, h1, h2):
    return {"W1": (k, h1), "b1": (h1,), "W2": (h1, h2), "b2": (h2,), "W3": (h2, 1), "b3": (1,)}


def bce_loss(model: MlpModel, X, y) -> float:
    """Mean binary cross-entropy, evaluated from logits for stability."""
    z = model._forward(model._check(X))[-1]
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def mlp_gradient(model: MlpModel, X, y) -> dict[str, np.ndarray]:
    """Backpropagated gradient of the mean BCE over the batch ``(X, y)``."""
    X = model._check(X)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] == 0:
        raise InvariantError("gradient batch is empty")
    p = model.params
    a1, h1, a2, h2, z = model._forward(X)
    dz = ((expit(z) - y) / X.shape[0])[:, None]
    g = {"W3": h2.T @ dz, "b3": dz.sum(axis=0)}
    da2 = (dz @ p["W3"].T) * (a2 > 0)
    g["W2"] = h1.T @ da2
    g["b2"] = da2.sum(axis=0)
    da1 = (da2 @ p["W2"].T) * (a1 > 0)
    g["W1"] = X.T @ da1
    g["b1"] = da1.sum(axis=0)
    return g


def init_mlp(spec: ClassifierSpec, input_dim: int, rng: np.random.Generator) -> MlpModel:
    """He-normal weights, zero biases."""
    h1, h2 = spec.hyperparameters["hidden"]
    params = {}
    for name, shape in _shapes(input_dim, h1, h2).items():
        if name.startswith("W"):
            params[name] = rng.standard_normal(shape) * math.sqrt(2.0 / shape[0])
        else:
            params[name] = np.zeros(shape)
    return MlpModel(spec, params)


def fit_mlp(spec: ClassifierSpec, X, y, init: MlpModel | None = None) -> MlpModel:
    hp = spec.hyperparameters
    rng = np.random.default_rng(spec.seed)
    model = MlpModel(spec, init.params) if init is not None else init_mlp(spec, X.shape[1], rng)
    lr, b1, b2, eps = hp["learning_rate"], hp["beta1"], hp["beta2"], hp["epsilon"]
    m = {k: np.zeros_like(v) for k, v in model.params.items()}
    v = {k: np.zeros_like(v_) for k, v_ in model.params.items()}
    n, bs = X.shape[0], int(hp["batch_size"])
    step = 0
    history = [bce_loss(model, X, y)]
    for _ in range(int(hp["epochs"])):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            batch = order[start : start + bs]
            grads = mlp_gradient(model, X[batch], y[batch])
            step += 1
            for k in _PARAM_ORDER:
                m[k] = b1 * m[k] + (1 - b1) * grads[k]
                v[k] = b2 * v[k] + (1 - b2) * grads[k] ** 2
                mhat = m[k] / (1 - b1**step)
                vhat = v[k] / (1 - b2**step)
                model.params[k] -= lr * mhat / (np.sqrt(vhat) + eps)
        history.append(bce_loss(model, X, y))
    model.loss_history = history
    return model


# --------------------------------------------------------------------------- registry / API

FitFn = Callable[..., TrainedModel]
_REGISTRY: dict[str, FitFn] = {}


def register_classifier(kind: str, fit_fn: FitFn, default_name: str | None = None) -> None:
    """Add a classifier kind. ``fit_fn(spec, X, y, threads=1)`` must return a TrainedModel."""
    _REGISTRY[kind] = fit_fn
    if default_name:
        DEFAULT_NAMES[kind] = default_name


register_classifier(Kind.LDA.value, lambda spec, X, y, threads=1: fit_lda(spec, X, y))
register_classifier(Kind.RANDOM_FOREST.value, fit_forest)
register_classifier(Kind.MLP3.value, lambda spec, X, y, threads=1: fit_mlp(spec, X, y))


def fit(spec: ClassifierSpec, train, y=None, threads: int = 1) -> TrainedModel:
    """Train ``spec`` on a SpectraTable (or on ``X, y`` arrays)."""
    X, y = _training_arrays(train, y)
    return _REGISTRY[spec.kind](spec, X, y, threads=threads)


def predict_score(model: TrainedModel, data) -> np.ndarray:
    return model.predict_score(data)


def model_to_json(model: TrainedModel) -> str:
    return json.dumps(model.to_dict(), sort_keys=True)


def model_from_json(text: str) -> TrainedModel:
    d = json.loads(text)
    if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
        raise InvariantError("not a version-1 mirtissue model document")
    spec = ClassifierSpec(d["kind"], d.get("params", {}), d["seed"], d.get("name"))
    p = d["parameters"]
    if spec.kind == Kind.LDA.value:
        return LdaModel(spec, p["means"], p["priors"], p["ridge"], p["coef"], p["intercept"])
    if spec.kind == Kind.RANDOM_FOREST.value:
        return ForestModel(spec, [Tree.from_dict(t) for t in p["trees"]], d["input_dim"])
    if spec.kind == Kind.MLP3.value:
        return MlpModel(spec, p)
    raise InvariantError(f"cannot deserialize classifier kind {spec.kind!r}")
