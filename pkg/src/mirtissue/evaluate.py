"""Confusion matrices, accuracy/sensitivity/specificity, ROC/AUC and the repeated-split protocol."""

from __future__ import annotations

import csv
import io
import json
import logging
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .classify import ClassifierSpec, fit
from .cube_io import SpectraTable, TissueClass
from .dataset import SplitPlan, SplitResult, make_splits
from .errors import InvariantError, MirTissueError, SingleClassError

if TYPE_CHECKING:
    from .rank import ScoreMatrix

log = logging.getLogger(__name__)

METRICS = ("ACC", "AUC", "Sensitivity", "Specificity")


@dataclass(frozen=True)
class ConfusionMatrix:
    TP: int
    FP: int
    TN: int
    FN: int

    def __post_init__(self):
        if min(self.TP, self.FP, self.TN, self.FN) < 0:
            raise InvariantError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.TP + self.FP + self.TN + self.FN

    @classmethod
    def from_predictions(cls, predicted, labels) -> "ConfusionMatrix":
        p = np.asarray(predicted).astype(bool)
        t = np.asarray(labels).astype(bool)
        return cls(
            TP=int((p & t).sum()),
            FP=int((p & ~t).sum()),
            TN=int((~p & ~t).sum()),
            FN=int((~p & t).sum()),
        )


def _ratio(num: int, den: int) -> float | None:
    return num / den if den > 0 else None


def metrics(cm: ConfusionMatrix) -> dict[str, float | None]:
    """ACC, sensitivity, specificity; a zero denominator gives ``None``."""
    return {
        "ACC": _ratio(cm.TP + cm.TN, cm.total),
        "Sensitivity": _ratio(cm.TP, cm.TP + cm.FN),
        "Specificity": _ratio(cm.TN, cm.TN + cm.FP),
    }


def _split_scores(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise InvariantError("scores and labels must be 1-D and equally long")
    pos, neg = s[y], s[~y]
    if pos.size == 0 or neg.size == 0:
        raise SingleClassError("AUC/ROC need both classes present")
    return pos, neg


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) with ties counting one half."""
    pos, neg = _split_scores(scores, labels)
    neg_sorted = np.sort(neg)
    below = np.searchsorted(neg_sorted, pos, side="left")
    not_above = np.searchsorted(neg_sorted, pos, side="right")
    # twice the concordance count keeps everything an exact integer
    twice = int((below + not_above).sum())
    return twice / (2 * pos.size * neg.size)


def roc_curve(scores, labels) -> list[tuple[float, float]]:
    """(FPR, TPR) vertices for thresholds at the distinct scores, high to low."""
    pos, neg = _split_scores(scores, labels)
    thresholds = np.unique(np.concatenate([pos, neg]))[::-1]
    pos_sorted, neg_sorted = np.sort(pos), np.sort(neg)
    tp = pos.size - np.searchsorted(pos_sorted, thresholds, side="left")
    fp = neg.size - np.searchsorted(neg_sorted, thresholds, side="left")
    points = [(0.0, 0.0)]
    points += [(f / neg.size, t / pos.size) for f, t in zip(fp.tolist(), tp.tolist())]
    return points


_trapezoid = getattr(np, "trapezoid", None) or np.trapz


def roc_area(points) -> float:
    pts = np.asarray(points, dtype=np.float64)
    return float(_trapezoid(pts[:, 1], pts[:, 0]))


# --------------------------------------------------------------------------- protocol


@dataclass
class RepeatOutcome:
    method: str
    repeat: int
    values: dict[str, float | None]
    confusion: ConfusionMatrix
    scores: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)


def _summary(values: list) -> dict:
    defined = [v for v in values if v is not None]
    mean = statistics.fmean(defined) if defined else None
    std = statistics.stdev(defined) if len(defined) >= 2 else None
    return {"mean": mean, "std": std, "n": len(defined)}


@dataclass
class EvalReport:
    repeats: int
    methods: list[str]
    per_repeat: dict[str, dict[str, list]]
    failures: dict[str, str]
    outcomes: dict[str, list[RepeatOutcome]] = field(repr=False, default_factory=dict)

    def summary(self) -> dict[str, dict[str, dict]]:
        return {
            m: {k: _summary(self.per_repeat[m][k]) for k in METRICS}
            for m in self.methods
            if m not in self.failures
        }

    def to_dict(self) -> dict:
        return {
            "repeats": self.repeats,
            "methods": self.methods,
            "summary": self.summary(),
            "per_repeat": self.per_repeat,
            "failures": self.failures,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        """``Methods,ACC,AUC,Sensitivity,Specificity`` with ``mean ± std`` cells."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["Methods", *METRICS])
        summ = self.summary()
        for m in self.methods:
            if m in self.failures:
                w.writerow([m] + ["failed"] * len(METRICS))
                continue
            row = [m]
            for k in METRICS:
                s = summ[m][k]
                if s["mean"] is None:
                    row.append("-")
                elif s["std"] is None:
                    row.append(f"{s['mean']:.3f}")
                else:
                    row.append(f"{s['mean']:.3f} ± {s['std']:.3f}")
            w.writerow(row)
        return buf.getvalue()


def evaluate_scores(scores, labels, threshold: float = 0.5) -> tuple[dict, ConfusionMatrix]:
    labels = np.asarray(labels).astype(bool)
    cm = ConfusionMatrix.from_predictions(np.asarray(scores) >= threshold, labels)
    values = metrics(cm)
    try:
        values["AUC"] = auc(scores, labels)
    except SingleClassError:
        values["AUC"] = None
    return {k: values[k] for k in METRICS}, cm


def _subsample_train(table: SpectraTable, rows: np.ndarray, per_core: int | None, seed) -> np.ndarray:
    if per_core is None:
        return rows
    rng = np.random.default_rng(seed)
    cores = table.core_id[rows]
    keep = []
    for cid in dict.fromkeys(cores.tolist()):
        idx = np.flatnonzero(cores == cid)
        if idx.size > per_core:
            idx = np.sort(rng.choice(idx, size=per_core, replace=False))
        keep.append(idx)
    picked = np.sort(np.concatenate(keep))
    return rows[picked]


def run_protocol(
    table: SpectraTable,
    plan: SplitPlan | SplitResult,
    specs: Sequence,
    threads: int = 1,
    max_train_rows_per_core: int | None = None,
) -> "tuple[EvalReport, ScoreMatrix | None]":
    """Fit every spec on every repeat's train cores and score its test cores.

    ``specs`` holds ClassifierSpec objects, or any object with ``label`` and
    ``fit(X, y) -> model`` where ``model.predict_score(X)`` returns [0, 1].
    A method whose fit fails in any repeat is recorded in ``failures`` and
    left out of the ACC score matrix (repeats x methods), which is ``None``
    when fewer than two repeats or two methods remain.
    """
    from .rank import ScoreMatrix

    present = set(np.unique(table.label).tolist())
    if len(present & {int(TissueClass.NC), int(TissueClass.CRC)}) < 2:
        raise SingleClassError(f"table holds a single class {sorted(present)}; need NC and CRC")
    splits = plan if isinstance(plan, SplitResult) else make_splits(table, plan)
    names = [s.label for s in specs]
    if len(set(names)) != len(names):
        raise InvariantError(f"method names must be unique, got {names}")
    y_all = (table.label == int(TissueClass.CRC)).astype(np.int64)

    def task(args):
        r, spec = args
        rep = splits.repeats[r]
        train_rows = _subsample_train(
            table, rep.train_rows, max_train_rows_per_core, [splits.plan.seed, r, 7]
        )
        X_tr, y_tr = table.spectra[train_rows], y_all[train_rows]
        X_te, y_te = table.spectra[rep.test_rows], y_all[rep.test_rows]
        try:
            if isinstance(spec, ClassifierSpec):
                seeded = ClassifierSpec(spec.kind, spec.params, _repeat_seed(spec.seed, r), spec.name)
                model = fit(seeded, X_tr, y_tr)
            else:
                model = spec.fit(X_tr, y_tr)
            scores = np.asarray(model.predict_score(X_te), dtype=np.float64)
        except (MirTissueError, np.linalg.LinAlgError, ValueError) as exc:
            return spec.label, r, exc
        values, cm = evaluate_scores(scores, y_te)
        return spec.label, r, RepeatOutcome(spec.label, r, values, cm, scores, y_te)

    jobs = [(r, s) for s in specs for r in range(len(splits.repeats))]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(task, jobs))
    else:
        results = [task(j) for j in jobs]

    failures: dict[str, str] = {}
    outcomes: dict[str, list[RepeatOutcome]] = {n: [] for n in names}
    for name, r, res in results:
        if isinstance(res, Exception):
            if name not in failures:
                code = getattr(res, "code", type(res).__name__)
                failures[name] = f"repeat {r}: {code}: {res}"
                log.error("method %s failed in repeat %d: %s", name, r, res)
        else:
            outcomes[name].append(res)
    per_repeat = {
        n: {k: [o.values[k] for o in outcomes[n]] for k in METRICS}
        for n in names
        if n not in failures
    }
    report = EvalReport(len(splits.repeats), names, per_repeat, failures, outcomes)
    ok = [n for n in names if n not in failures]
    matrix = None
    if len(ok) >= 2 and len(splits.repeats) >= 2:
        acc = np.array([[o.values["ACC"] for o in outcomes[n]] for n in ok]).T
        matrix = ScoreMatrix(acc, ok, [f"repeat{r}" for r in range(len(splits.repeats))])
    return report, matrix


def _repeat_seed(seed: int, repeat: int) -> int:
    return int(np.random.SeedSequence([seed, repeat]).generate_state(1)[0])
