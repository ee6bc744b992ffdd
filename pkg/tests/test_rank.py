import io
import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import wilcoxon as scipy_wilcoxon

from mirtissue.errors import InsufficientDataError, InvariantError
from mirtissue.rank import (
    ScoreMatrix,
    box_summary,
    crrn,
    crrn_expected_srd,
    max_srd,
    srd_compute,
    srd_crossval,
    wilcoxon_signed_rank,
    wilcoxon_table,
)


# --------------------------------------------------------------------------- oracles


def average_ranks(values):
    """Plain-Python average ranks, 1-based, ascending."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        for t in range(i, j + 1):
            ranks[order[t]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def brute_srd(rows):
    ref = [max(r) for r in rows]
    rr = average_ranks(ref)
    out = []
    for j in range(len(rows[0])):
        cr = average_ranks([r[j] for r in rows])
        out.append(sum(abs(a - b) for a, b in zip(cr, rr)))
    return out


def brute_max_srd(n):
    return max(sum(abs(i - p) for i, p in enumerate(perm)) for perm in itertools.permutations(range(n)))


def brute_crrn(n):
    counts = {}
    for perm in itertools.permutations(range(n)):
        s = sum(abs(i - p) for i, p in enumerate(perm))
        counts[s] = counts.get(s, 0) + 1
    total = math.factorial(n)
    return {s: Fraction(c, total) for s, c in counts.items()}


def brute_wilcoxon_p(d):
    """Two-sided p by listing all 2^n sign vectors over the average ranks of |d|."""
    d = [v for v in d if v != 0]
    ranks = average_ranks([abs(v) for v in d])
    w_plus = sum(r for r, v in zip(ranks, d) if v > 0)
    total = sum(ranks)
    w = min(w_plus, total - w_plus)
    hits = 0
    for signs in itertools.product([0, 1], repeat=len(d)):
        s = sum(r for r, b in zip(ranks, signs) if b)
        if min(s, total - s) <= w + 1e-9:
            hits += 1
    return hits / 2 ** len(d)


# --------------------------------------------------------------------------- ScoreMatrix


def test_score_matrix_validation_and_csv():
    with pytest.raises(InvariantError):
        ScoreMatrix(np.ones((1, 3)), ["a", "b", "c"])
    with pytest.raises(InvariantError):
        ScoreMatrix(np.ones((3, 1)), ["a"])
    with pytest.raises(InvariantError):
        ScoreMatrix(np.ones((2, 2)), ["a", "a"])
    m = ScoreMatrix(np.array([[0.1, 0.2], [1 / 3, 0.4]]), ["A", "B"])
    back = ScoreMatrix.read_csv(io.StringIO(m.to_csv()))
    assert back.methods == ["A", "B"] and np.array_equal(back.values, m.values)
    with pytest.raises(InvariantError):
        ScoreMatrix.read_csv(io.StringIO("A,B\n1,2\n3\n"))


# --------------------------------------------------------------------------- SRD


def test_srd_reference_column_is_zero():
    m = ScoreMatrix(np.array([[0.9, 0.1], [0.8, 0.2], [0.95, 0.3]]), ["best", "other"])
    r = srd_compute(m)
    assert r.srd[0] == 0 and r.srd_pct[0] == 0


def test_srd_hand_example():
    m = ScoreMatrix(np.array([[0.5, 0.9], [0.7, 0.6], [0.9, 0.4]]), ["M1", "M2"])
    r = srd_compute(m)
    assert r.reference.tolist() == [0.9, 0.7, 0.9]
    assert r.reference_ranks.tolist() == [2.5, 1.0, 2.5]
    assert r.srd.tolist() == [3.0, 3.0]
    assert r.srd_pct.tolist() == [75.0, 75.0]
    assert r.degeneracy_groups == [["M1", "M2"]]


@pytest.mark.parametrize("n", range(1, 9))
def test_max_srd_brute_force(n):
    assert max_srd(n) == brute_max_srd(n)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 8), st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_srd_matches_brute_force(n, k, seed):
    rng = np.random.default_rng(seed)
    values = rng.integers(0, 5, size=(n, k)) / 4.0  # deliberate ties
    r = srd_compute(ScoreMatrix(values, [f"m{j}" for j in range(k)]))
    assert r.srd.tolist() == pytest.approx(brute_srd(values.tolist()), abs=1e-12)
    assert np.all((r.srd_pct >= 0) & (r.srd_pct <= 100))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_srd_monotone_column_transform(seed):
    rng = np.random.default_rng(seed)
    values = rng.random((10, 4))
    base = srd_compute(ScoreMatrix(values, list("abcd")))
    warped = values.copy()
    # strictly increasing map on one column; the row max must not change, so
    # warp a column that is never the row max
    j = int(np.argmin(values.max(axis=0)))
    if np.any(values.argmax(axis=1) == j):
        return
    lo = values[:, j].min()
    warped[:, j] = lo + (values[:, j] - lo) ** 3 * 1e-3
    if np.any(warped.argmax(axis=1) != values.argmax(axis=1)):
        return
    assert srd_compute(ScoreMatrix(warped, list("abcd"))).srd[j] == base.srd[j]


def test_srd_min_reference():
    m = ScoreMatrix(np.array([[1.0, 2.0], [3.0, 1.0], [0.0, 5.0]]), ["a", "b"])
    r = srd_compute(m, reference="min")
    assert r.reference.tolist() == [1.0, 1.0, 0.0]
    with pytest.raises(InvariantError):
        srd_compute(m, reference="median")


# --------------------------------------------------------------------------- CRRN


def test_crrn_small_exact():
    d3 = crrn(3, "EXACT")
    assert dict(zip(d3.support.tolist(), d3.probabilities.tolist())) == pytest.approx(
        {0.0: 1 / 6, 2.0: 1 / 3, 4.0: 1 / 2}, abs=1e-15
    )
    d2 = crrn(2)
    assert d2.mode == "EXACT"
    assert dict(zip(d2.support.tolist(), d2.probabilities.tolist())) == {0.0: 0.5, 2.0: 0.5}


@pytest.mark.parametrize("n", range(2, 7))
def test_crrn_exact_matches_enumerator(n):
    d = crrn(n, "EXACT")
    oracle = brute_crrn(n)
    assert set(d.support.tolist()) == set(float(s) for s in oracle)
    for s, p in zip(d.support.tolist(), d.probabilities.tolist()):
        assert p == pytest.approx(float(oracle[int(s)]), abs=1e-15)
    assert d.probabilities.sum() == pytest.approx(1.0, abs=1e-9)


def test_crrn_modes_and_errors():
    assert crrn(9).mode == "EXACT"
    assert crrn(10, mc_samples=1000).mode == "MONTE_CARLO"
    with pytest.raises(InvariantError):
        crrn(10, "EXACT")
    with pytest.raises(InsufficientDataError):
        crrn(1)


def test_crrn_monte_carlo_mean_and_determinism():
    n = 36
    # pairwise-expectation oracle: sum over positions i of E|i - sigma(i)|
    oracle = sum(sum(abs(i - j) for j in range(n)) / n for i in range(n))
    assert oracle == pytest.approx(crrn_expected_srd(n))
    d = crrn(n, mc_samples=1_000_000, seed=3)
    assert abs(d.mean() - oracle) / oracle < 0.01
    assert d.probabilities.sum() == pytest.approx(1.0, abs=1e-9)
    a = crrn(n, mc_samples=120_001, seed=5, threads=1)
    b = crrn(n, mc_samples=120_001, seed=5, threads=4)
    assert np.array_equal(a.probabilities, b.probabilities)
    assert np.array_equal(a.support, b.support)


def test_crrn_cdf_quantile():
    d = crrn(3)
    assert d.cdf(0) == pytest.approx(1 / 6)
    assert d.cdf(4) == pytest.approx(1.0)
    assert d.quantile(0.05) == 0.0
    assert d.quantile(0.6) == 4.0


# --------------------------------------------------------------------------- cross-validation


def test_crossval_dominance():
    rng = np.random.default_rng(0)
    others = rng.random((30, 3)) * 0.5
    best = np.linspace(0.6, 0.9, 30)
    m = ScoreMatrix(np.column_stack([best, others]), ["A", "B", "C", "D"])
    cv = srd_crossval(m, folds=10, seed=1)
    assert cv.srd_pct.shape == (10, 4)
    assert np.all(cv.srd_pct[:, 0] == 0)
    assert np.all(cv.wins()[0, 1:] == 10)


def test_crossval_demo_matrix_shape():
    from mirtissue.synth import generate_score_matrix

    m = generate_score_matrix(seed=0)
    cv = srd_crossval(m, folds=10, seed=0)
    assert cv.srd_pct.shape == (10, 7)
    assert sum(f.size for f in cv.folds) == 36
    assert sorted(np.concatenate(cv.folds).tolist()) == list(range(36))
    w = cv.wins()
    assert np.all(w + w.T <= 10) and np.all(np.diag(w) == 0)


def test_crossval_leave_one_out():
    rng = np.random.default_rng(2)
    m = ScoreMatrix(rng.random((6, 3)), ["a", "b", "c"])
    cv = srd_crossval(m, folds=6)
    assert all(f.size == 1 for f in cv.folds)
    for f, row in zip(cv.folds, cv.srd_pct):
        keep = [i for i in range(6) if i not in f]
        sub = srd_compute(m.take_rows(keep))
        assert np.array_equal(row, sub.srd_pct)
        assert 100 * sub.srd[0] / max_srd(5) == row[0]
    with pytest.raises(InsufficientDataError):
        srd_crossval(m, folds=7)
    with pytest.raises(InvariantError):
        srd_crossval(m, folds=1)


def test_box_summary_tukey():
    b = box_summary([1, 2, 3, 4, 100])
    assert (b.q1, b.median, b.q3) == (2.0, 3.0, 4.0)
    assert b.outliers == (100.0,)
    assert b.min == 1.0 and b.max == 4.0


# --------------------------------------------------------------------------- Wilcoxon


def test_wilcoxon_all_positive():
    r5 = wilcoxon_signed_rank(np.arange(1, 6) + 0.5, np.zeros(5))
    assert r5.statistic == 0 and r5.p_two_sided == 0.0625 and r5.mode == "EXACT"
    r6 = wilcoxon_signed_rank(np.arange(1, 7) + 0.5, np.zeros(6))
    assert r6.statistic == 0 and r6.p_two_sided == 0.03125
    assert r6.significant() and not r5.significant()


def test_wilcoxon_zero_differences():
    with pytest.raises(InsufficientDataError):
        wilcoxon_signed_rank([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    r = wilcoxon_signed_rank([1.0, 2.0, 5.0, 7.0], [1.0, 1.0, 1.0, 1.0])
    assert r.n_effective == 3


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**32 - 1))
def test_wilcoxon_exact_enumeration_tie_free(n, seed):
    rng = np.random.default_rng(seed)
    d = rng.permutation(np.arange(1, n + 1)) * rng.choice([-1.0, 1.0], n) + rng.random(n) * 0.1
    r = wilcoxon_signed_rank(d, np.zeros(n))
    assert r.p_two_sided == pytest.approx(brute_wilcoxon_p(d.tolist()), abs=1e-12)
    assert r.w_plus + r.w_minus == n * (n + 1) / 2


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-3, 3), min_size=2, max_size=12))
def test_wilcoxon_exact_enumeration_with_ties(d):
    if all(v == 0 for v in d):
        return
    r = wilcoxon_signed_rank(np.array(d, float), np.zeros(len(d)))
    assert r.p_two_sided == pytest.approx(brute_wilcoxon_p(d), abs=1e-12)
    assert 0 <= r.p_two_sided <= 1


def test_wilcoxon_normal_approximation():
    rng = np.random.default_rng(7)
    x = rng.normal(0.2, 1.0, 40)
    y = rng.normal(0.0, 1.0, 40)
    r = wilcoxon_signed_rank(x, y)
    assert r.mode == "NORMAL_APPROX"
    ref = scipy_wilcoxon(x, y, method="approx", correction=False)
    assert r.p_two_sided == pytest.approx(ref.pvalue, rel=1e-9)
    # exact path agrees with scipy's exact distribution for tie-free n <= 20
    r_small = wilcoxon_signed_rank(x[:15], y[:15])
    assert r_small.p_two_sided == pytest.approx(scipy_wilcoxon(x[:15], y[:15], method="exact").pvalue, rel=1e-9)


def test_wilcoxon_table():
    m = ScoreMatrix(np.column_stack([np.arange(8.0), np.arange(8.0) + 1, np.arange(8.0)]), ["a", "b", "c"])
    table = wilcoxon_table(m)
    assert [t["pair"] for t in table] == ["a-b", "a-c", "b-c"]
    assert "error" in table[1]
    assert table[0]["p_value"] == pytest.approx(2 / 2**8)
    assert [t["pair"] for t in wilcoxon_table(m, [("b", "a")])] == ["b-a"]
