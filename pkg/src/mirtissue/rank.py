"""Sum of ranking differences (SRD) against the row-wise maximum, its random
reference distribution (CRRN), leave-fold-out SRD, and the Wilcoxon
signed-rank test for paired method scores.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import permutations
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import InsufficientDataError, InvariantError

EXACT_CRRN_MAX_N = 9
EXACT_WILCOXON_MAX_N = 20
MC_CHUNK = 50_000


@dataclass(eq=False)
class ScoreMatrix:
    """Rows are evaluation cases, columns are methods."""

    values: np.ndarray
    methods: list[str]
    cases: list[str] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.methods = [str(m) for m in self.methods]
        if self.values.ndim != 2:
            raise InvariantError("score matrix must be 2-D")
        n, m = self.values.shape
        if n < 2 or m < 2:
            raise InvariantError(f"score matrix needs >= 2 rows and >= 2 columns, got {n}x{m}")
        if len(self.methods) != m or len(set(self.methods)) != m:
            raise InvariantError("one unique method name per column required")
        if self.cases is not None and len(self.cases) != n:
            raise InvariantError("one case label per row required")
        if not np.all(np.isfinite(self.values)):
            raise InvariantError("score matrix contains non-finite values")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def column(self, method: str) -> np.ndarray:
        return self.values[:, self.methods.index(method)]

    def take_rows(self, rows) -> "ScoreMatrix":
        rows = np.asarray(rows)
        cases = None if self.cases is None else [self.cases[i] for i in rows]
        return ScoreMatrix(self.values[rows], list(self.methods), cases)

    @classmethod
    def vstack(cls, parts: Sequence["ScoreMatrix"]) -> "ScoreMatrix":
        methods = parts[0].methods
        for p in parts[1:]:
            if p.methods != methods:
                raise InvariantError("cannot stack matrices with different methods")
        cases = None
        if all(p.cases is not None for p in parts):
            cases = [c for p in parts for c in p.cases]
        return cls(np.vstack([p.values for p in parts]), list(methods), cases)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.methods)
        for row in self.values:
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, source) -> "ScoreMatrix":
        text = Path(source).read_text() if not hasattr(source, "read") else source.read()
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        if not rows:
            raise InvariantError("empty score matrix CSV")
        header, body = rows[0], rows[1:]
        try:
            values = [[float(v) for v in r] for r in body]
        except ValueError as exc:
            raise InvariantError(f"unparsable score: {exc}") from None
        if any(len(r) != len(header) for r in values):
            raise InvariantError("ragged score matrix CSV")
        return cls(np.array(values).reshape(len(values), len(header)), header)


# --------------------------------------------------------------------------- SRD


def max_srd(n: int) -> int:
    """Largest possible sum of |rank differences| between two permutations of n items."""
    return n * n // 2 if n % 2 == 0 else (n * n - 1) // 2


@dataclass(frozen=True, eq=False)
class SrdResult:
    methods: list[str]
    srd: np.ndarray
    srd_pct: np.ndarray
    reference: np.ndarray
    reference_ranks: np.ndarray
    degeneracy_groups: list[list[str]]
    n_rows: int

    def ordering(self) -> list[str]:
        """Methods from best (smallest SRD) to worst; ties keep column order."""
        order = np.argsort(self.srd, kind="stable")
        return [self.methods[i] for i in order]

    def to_dict(self) -> dict:
        return {
            "n_rows": self.n_rows,
            "max_srd": max_srd(self.n_rows),
            "methods": self.methods,
            "srd": self.srd.tolist(),
            "srd_pct": self.srd_pct.tolist(),
            "ordering": self.ordering(),
            "reference_ranks": self.reference_ranks.tolist(),
            "degeneracy_groups": self.degeneracy_groups,
        }


def srd_compute(m: ScoreMatrix, reference: str = "max") -> SrdResult:
    """SRD of every column against the row-wise reference (``max`` or ``min``).

    Columns and the reference are ranked across rows (ascending, average
    ranks for ties); SRD is the L1 distance between rank vectors.
    """
    if m.n_rows < 2:
        raise InsufficientDataError("SRD needs at least 2 rows")
    if reference == "max":
        ref = m.values.max(axis=1)
    elif reference == "min":
        ref = m.values.min(axis=1)
    else:
        raise InvariantError(f"reference must be 'max' or 'min', got {reference!r}")
    ref_ranks = rankdata(ref, method="average")
    col_ranks = rankdata(m.values, method="average", axis=0)
    srd = np.abs(col_ranks - ref_ranks[:, None]).sum(axis=0)
    pct = 100.0 * srd / max_srd(m.n_rows)

    groups: dict[float, list[str]] = {}
    for name, value in zip(m.methods, srd.tolist()):
        groups.setdefault(value, []).append(name)
    degenerate = [g for _, g in sorted(groups.items()) if len(g) > 1]
    return SrdResult(list(m.methods), srd, pct, ref, ref_ranks, degenerate, m.n_rows)


# --------------------------------------------------------------------------- CRRN


@dataclass(frozen=True, eq=False)
class CrrnDistribution:
    """Null distribution of SRD for a uniformly random ranking of ``n_rows`` cases."""

    n_rows: int
    support: np.ndarray
    probabilities: np.ndarray
    mode: str
    samples: int | None = None

    @property
    def support_pct(self) -> np.ndarray:
        return 100.0 * self.support / max_srd(self.n_rows)

    def mean(self) -> float:
        return float((self.support * self.probabilities).sum())

    def cdf(self, srd: float) -> float:
        """P(random SRD <= srd)."""
        return float(self.probabilities[self.support <= srd + 1e-9].sum())

    def quantile(self, q: float) -> float:
        cum = np.cumsum(self.probabilities)
        return float(self.support[min(int(np.searchsorted(cum, q - 1e-12)), self.support.size - 1)])

    def to_dict(self) -> dict:
        return {
            "n_rows": self.n_rows,
            "mode": self.mode,
            "samples": self.samples,
            "support": self.support.tolist(),
            "probabilities": self.probabilities.tolist(),
            "mean": self.mean(),
        }


def crrn_expected_srd(n: int) -> float:
    """E[SRD] of a random permutation: n * E|i - j| with i, j uniform = (n^2 - 1) / 3."""
    return (n * n - 1) / 3.0


def _mc_chunk(args) -> np.ndarray:
    ss, size, n = args
    rng = np.random.default_rng(ss)
    perms = rng.permuted(np.tile(np.arange(n), (size, 1)), axis=1)
    srd = np.abs(perms - np.arange(n)).sum(axis=1)
    return np.bincount(srd, minlength=max_srd(n) + 1)


def crrn(
    n_rows: int,
    mode: str | None = None,
    mc_samples: int = 1_000_000,
    seed: int = 0,
    threads: int = 1,
) -> CrrnDistribution:
    """SRD distribution of random permutations against the identity ranking.

    ``mode`` is ``EXACT`` (all n! permutations, n <= 9) or ``MONTE_CARLO``;
    by default EXACT is used whenever it is allowed. Monte-Carlo draws come
    in fixed-size chunks with their own derived streams, so the result only
    depends on ``seed`` and ``mc_samples``.
    """
    if n_rows < 2:
        raise InsufficientDataError("CRRN needs n_rows >= 2")
    if mode is None:
        mode = "EXACT" if n_rows <= EXACT_CRRN_MAX_N else "MONTE_CARLO"
    mode = mode.upper()
    if mode == "EXACT":
        if n_rows > EXACT_CRRN_MAX_N:
            raise InvariantError(f"EXACT CRRN limited to n <= {EXACT_CRRN_MAX_N}, got {n_rows}")
        perms = np.array(list(permutations(range(n_rows))), dtype=np.int64)
        counts = np.bincount(np.abs(perms - np.arange(n_rows)).sum(axis=1))
        total, samples = math.factorial(n_rows), None
    elif mode == "MONTE_CARLO":
        if mc_samples < 1:
            raise InvariantError("mc_samples must be >= 1")
        sizes = [MC_CHUNK] * (mc_samples // MC_CHUNK)
        if mc_samples % MC_CHUNK:
            sizes.append(mc_samples % MC_CHUNK)
        streams = np.random.SeedSequence(seed).spawn(len(sizes))
        jobs = [(ss, size, n_rows) for ss, size in zip(streams, sizes)]
        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                parts = list(pool.map(_mc_chunk, jobs))
        else:
            parts = [_mc_chunk(j) for j in jobs]
        counts = np.sum(parts, axis=0)
        total, samples = mc_samples, mc_samples
    else:
        raise InvariantError(f"unknown CRRN mode {mode!r}")
    support = np.flatnonzero(counts)
    return CrrnDistribution(n_rows, support.astype(np.float64), counts[support] / total, mode, samples)


# --------------------------------------------------------------------------- cross-validation


@dataclass(frozen=True)
class BoxSummary:
    """Tukey box: whisker ends are the most extreme points within 1.5 IQR of the box."""

    min: float
    q1: float
    median: float
    q3: float
    max: float
    outliers: tuple[float, ...]


def box_summary(values) -> BoxSummary:
    v = np.asarray(values, dtype=np.float64)
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = v[(v >= lo) & (v <= hi)]
    outliers = tuple(sorted(v[(v < lo) | (v > hi)].tolist()))
    return BoxSummary(float(inside.min()), float(q1), float(med), float(q3), float(inside.max()), outliers)


@dataclass(frozen=True, eq=False)
class CrossvalResult:
    methods: list[str]
    folds: list[np.ndarray]
    srd_pct: np.ndarray  # folds x methods
    boxes: dict[str, BoxSummary]

    def wins(self) -> np.ndarray:
        """``wins[i, j]`` = folds in which method i has strictly smaller SRD than j."""
        s = self.srd_pct
        return (s[:, :, None] < s[:, None, :]).sum(axis=0)

    def to_dict(self) -> dict:
        return {
            "methods": self.methods,
            "folds": [f.tolist() for f in self.folds],
            "srd_pct": self.srd_pct.tolist(),
            "boxes": {m: vars(b) | {"outliers": list(b.outliers)} for m, b in self.boxes.items()},
            "wins": self.wins().tolist(),
        }


def srd_crossval(m: ScoreMatrix, folds: int = 10, seed: int = 0) -> CrossvalResult:
    """Recompute SRD with each of ``folds`` random row blocks left out."""
    n = m.n_rows
    if folds < 2:
        raise InvariantError("folds must be >= 2")
    if n < folds:
        raise InsufficientDataError(f"{n} rows cannot be split into {folds} folds")
    rng = np.random.default_rng(seed)
    parts = np.array_split(rng.permutation(n), folds)
    if n - max(p.size for p in parts) < 2:
        raise InsufficientDataError("leave-fold-out matrices would have fewer than 2 rows")
    srd = []
    for part in parts:
        keep = np.setdiff1d(np.arange(n), part)
        srd.append(srd_compute(m.take_rows(keep)).srd_pct)
    srd = np.array(srd)
    boxes = {name: box_summary(srd[:, j]) for j, name in enumerate(m.methods)}
    return CrossvalResult(list(m.methods), [np.sort(p) for p in parts], srd, boxes)


# --------------------------------------------------------------------------- Wilcoxon


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    w_plus: float
    w_minus: float
    n_effective: int
    p_two_sided: float
    mode: str

    def significant(self, alpha: float = 0.05) -> bool:
        return self.p_two_sided < alpha


def _exact_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    """Number of sign assignments giving each doubled positive-rank sum."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks.tolist():
        counts[r:] = counts[r:] + counts[: total + 1 - r].copy()
    return counts


def wilcoxon_signed_rank(x, y, exact_max_n: int = EXACT_WILCOXON_MAX_N) -> WilcoxonResult:
    """Paired two-sided signed-rank test; zero differences are dropped.

    Exact when at most ``exact_max_n`` nonzero differences remain (the null
    distribution counts all 2^n sign assignments, tied ranks included);
    otherwise a normal approximation with tie-corrected variance.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InvariantError("paired samples must be 1-D and equally long")
    if x.size < 2:
        raise InsufficientDataError("need at least 2 pairs")
    d = x - y
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise InsufficientDataError("all paired differences are zero")
    ranks = rankdata(np.abs(d), method="average")
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)

    if n <= exact_max_n:
        doubled = np.rint(2 * ranks).astype(np.int64)
        counts = _exact_counts(doubled)
        total = int(doubled.sum())
        s = np.arange(total + 1)
        extreme = np.minimum(s, total - s) <= int(round(2 * w))
        p = float(counts[extreme].sum()) / float(2**n)
        mode = "EXACT"
    else:
        _, ties = np.unique(np.abs(d), return_counts=True)
        mean = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0 - float((ties**3 - ties).sum()) / 48.0
        z = (w - mean) / math.sqrt(var) if var > 0 else 0.0
        p = math.erfc(abs(z) / math.sqrt(2.0))
        mode = "NORMAL_APPROX"
    return WilcoxonResult(w, w_plus, w_minus, n, min(1.0, p), mode)


def wilcoxon_table(m: ScoreMatrix, pairs: Sequence[tuple[str, str]] | None = None) -> list[dict]:
    """Signed-rank test for each method pair (all pairs by default)."""
    if pairs is None:
        pairs = [(a, b) for i, a in enumerate(m.methods) for b in m.methods[i + 1 :]]
    out = []
    for a, b in pairs:
        try:
            r = wilcoxon_signed_rank(m.column(a), m.column(b))
            out.append(
                {
                    "pair": f"{a}-{b}",
                    "statistic": r.statistic,
                    "n_effective": r.n_effective,
                    "p_value": r.p_two_sided,
                    "mode": r.mode,
                    "significant": r.significant(),
                }
            )
        except InsufficientDataError as exc:
            out.append({"pair": f"{a}-{b}", "error": str(exc)})
    return out
