import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mirtissue.cube_io import (
    Mode,
    PixelMask,
    SpectraTable,
    TissueClass,
)
from mirtissue.dataset import PreprocessChain, SplitPlan, assemble, cube_rows, make_splits
from mirtissue.errors import DimensionMismatchError, InsufficientDataError, InvariantError
from mirtissue.preprocess import default_blanking, slice_rectangle, snv_rows
from mirtissue.synth import generate_cohort, default_layout

from conftest import make_cube


def _core_table(layout):
    """One row per core; ``layout`` is a list of (core_id, patient_id, class)."""
    n = len(layout)
    return SpectraTable(
        axis=np.array([2.0, 1.0]),
        spectra=np.tile([1.0, 2.0], (n, 1)),
        x_um=np.zeros(n),
        y_um=np.zeros(n),
        core_id=np.array([c for c, _, _ in layout], dtype=object),
        patient_id=np.array([p for _, p, _ in layout], dtype=object),
        label=np.array([int(k) for _, _, k in layout], dtype=np.int64),
    )


def _default_cores():
    out = []
    for pid, classes in default_layout():
        for j, cls in enumerate(classes):
            out.append((f"{pid}-C{j + 1}", pid, cls))
    return out


def test_cube_rows_single_pixel():
    cube = make_cube(h=3, w=4, k=2)
    keep = np.zeros((3, 4), bool)
    keep[2, 1] = True
    t = cube_rows(cube, PixelMask(keep, "SLICE"))
    assert t.n_rows == 1
    x, y = cube.pixel_coordinates()
    assert (t.x_um[0], t.y_um[0]) == (x[2, 1], y[2, 1])
    assert np.array_equal(t.spectra[0], cube.data[2, 1].astype(np.float64))


def test_cube_rows_shape_mismatch():
    with pytest.raises(DimensionMismatchError):
        cube_rows(make_cube(h=3, w=4), PixelMask(np.ones((4, 3), bool), "ALL"))


def test_assemble_chain_order():
    cubes = [make_cube(seed=s, core_id=f"c{s}") for s in range(3)]
    table = assemble(cubes, PixelMask.all_true, PreprocessChain(snv=True))
    assert table.n_rows == 36 and table.mode == Mode.ABSORBANCE
    # oracle: absorbance in float64 then SNV, row-major pixel order
    a = 2.0 - np.log10(cubes[1].spectra().astype(np.float64))
    expected, _ = snv_rows(a)
    assert np.allclose(table.spectra[12:24], expected, atol=1e-12)
    assert list(table.core_id[:12]) == ["c0"] * 12


def test_assemble_masks_and_blanking(small_spec):
    cores = generate_cohort(small_spec, None, n_patients=1, cores_per_patient=2)
    cubes = [c.cube for c in cores]
    masks = [slice_rectangle(c, 750.0) for c in cubes]
    t = assemble(cubes, masks, PreprocessChain(snv=True, blanking=default_blanking()))
    assert t.n_channels == 509
    assert t.n_rows == sum(m.count for m in masks)
    with pytest.raises(DimensionMismatchError):
        assemble(cubes, masks[:1])


def test_assemble_threads_identical(small_spec):
    cubes = [c.cube for c in generate_cohort(small_spec, None, n_patients=2, cores_per_patient=2)]
    a = assemble(cubes, PixelMask.all_true, threads=1)
    b = assemble(cubes, PixelMask.all_true, threads=4)
    assert a == b


def test_assemble_all_dropped():
    cube = make_cube(h=2, w=2)
    with pytest.raises(InsufficientDataError):
        assemble([cube], [PixelMask(np.zeros((2, 2), bool), "SLICE")])


def test_default_plan_shape():
    table = _core_table(_default_cores())
    res = make_splits(table, SplitPlan(12, 2, "CORE", seed=0))
    assert len(res.repeats) == 12
    seen = set()
    for rep in res.repeats:
        assert len(rep.train_cores) == 58 and len(rep.test_cores) == 4
        assert not set(rep.train_cores) & set(rep.test_cores)
        classes = [res.core_class[c] for c in rep.test_cores]
        assert classes.count(TissueClass.NC) == 2 and classes.count(TissueClass.CRC) == 2
        key = frozenset(rep.test_cores)
        assert key not in seen
        seen.add(key)


def test_tiny_plan():
    table = _core_table([("a", "p", 0), ("b", "p", 0), ("c", "q", 1), ("d", "q", 1)])
    res = make_splits(table, SplitPlan(1, 1, "CORE", seed=3))
    rep = res.repeats[0]
    assert len(rep.train_cores) == 2 and len(rep.test_cores) == 2
    assert sorted(res.core_class[c] for c in rep.test_cores) == [0, 1]
    assert sorted(res.core_class[c] for c in rep.train_cores) == [0, 1]


def test_exhausting_all_pairs_and_too_many():
    table = _core_table([("a", "p", 0), ("b", "p", 0), ("c", "q", 1), ("d", "q", 1)])
    res = make_splits(table, SplitPlan(4, 1, seed=0))
    assert len({r.test_cores for r in res.repeats}) == 4
    with pytest.raises(InsufficientDataError):
        make_splits(table, SplitPlan(5, 1))
    with pytest.raises(InsufficientDataError):
        make_splits(table, SplitPlan(1, 3))


def test_determinism_and_manifest():
    table = _core_table(_default_cores())
    a = make_splits(table, SplitPlan(12, 2, seed=9))
    b = make_splits(table, SplitPlan(12, 2, seed=9))
    c = make_splits(table, SplitPlan(12, 2, seed=10))
    assert a == b
    assert a != c
    doc = json.loads(a.manifest_json())
    assert doc["plan"]["repeats"] == 12
    r0 = doc["repeats"][0]
    assert len(r0["test"]["NC"]) == 2 and len(r0["test"]["CRC"]) == 2
    assert r0["train_cores_per_class"] == {"NC": 30, "CRC": 28}


def test_rows_shuffled_within_partition():
    layout = [("a", "p", 0), ("b", "p", 0), ("c", "q", 1), ("d", "q", 1)] * 1
    rows = [x for x in layout for _ in range(25)]
    table = _core_table(rows)
    rep = make_splits(table, SplitPlan(1, 1, seed=0)).repeats[0]
    assert sorted(rep.train_rows.tolist() + rep.test_rows.tolist()) == list(range(100))
    assert rep.test_rows.tolist() != sorted(rep.test_rows.tolist())
    assert set(table.core_id[rep.test_rows]) == set(rep.test_cores)


def test_patient_level_excludes_same_patient():
    table = _core_table(_default_cores())
    res = make_splits(table, SplitPlan(12, 2, "PATIENT", seed=0))
    patient = dict(zip(table.core_id, table.patient_id))
    for rep in res.repeats:
        blocked = {patient[c] for c in rep.test_cores}
        assert not any(patient[c] in blocked for c in rep.train_cores)


def test_plan_validation():
    with pytest.raises(InvariantError):
        SplitPlan(0, 2)
    with pytest.raises(InvariantError):
        SplitPlan(1, 0)
    with pytest.raises(InvariantError):
        SplitPlan(1, 1, "PIXEL")


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.integers(2, 8), st.integers(1, 2), st.integers(1, 20), st.integers(0, 10**6))
def test_split_invariants(n_nc, n_crc, k, repeats, seed):
    layout = [(f"n{i}", f"p{i // 2}", 0) for i in range(n_nc)] + [
        (f"t{i}", f"p{i // 2}", 1) for i in range(n_crc)
    ]
    table = _core_table(layout)
    plan = SplitPlan(repeats, k, seed=seed)
    total = math.comb(n_nc, k) * math.comb(n_crc, k) if n_nc >= k and n_crc >= k else 0
    if repeats > total:
        with pytest.raises(InsufficientDataError):
            make_splits(table, plan)
        return
    res = make_splits(table, plan)
    assert len({frozenset(r.test_cores) for r in res.repeats}) == repeats
    for rep in res.repeats:
        assert not set(rep.train_cores) & set(rep.test_cores)
        assert len(rep.train_cores) + len(rep.test_cores) == n_nc + n_crc
        assert [res.core_class[c] for c in rep.test_cores].count(1) == k
