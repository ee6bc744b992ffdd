import io

import numpy as np
import pytest

from mirtissue.classify import ClassifierSpec
from mirtissue.cube_io import Mode, TissueClass, canonical_axis, write_scube
from mirtissue.dataset import PreprocessChain, SplitPlan, assemble
from mirtissue.errors import InvariantError
from mirtissue.evaluate import run_protocol
from mirtissue.preprocess import to_absorbance
from mirtissue.segment import segment_tissue
from mirtissue.synth import (
    DEFAULT_PEAKS,
    Hole,
    Peak,
    SynthSpec,
    absorbance_profile,
    generate_cohort,
    generate_cube,
    generate_score_matrix,
    ground_truth_mask,
    iter_cohort,
)


def test_noiseless_single_peak_is_exact():
    peak = Peak(1652.0, 40.0, 0.7)
    spec = SynthSpec(
        grid=12, pixel_size=200.0, class_peaks={TissueClass.NC: (peak,)},
        noise_std=0.0, thickness_jitter=0.0, amplitude_jitter=0.0,
    )
    core = generate_cube(spec, TissueClass.NC)
    a = to_absorbance(core.cube)
    k = int(np.flatnonzero(canonical_axis() == 1652.0)[0])
    tissue = core.truth.keep
    assert tissue.any() and (~tissue).any()
    # float32 storage of transmittance bounds the round trip
    assert np.allclose(a.data[tissue][:, k], 0.7, atol=1e-6)
    assert np.allclose(a.data[~tissue], 0.0, atol=1e-6)
    # the float64 profile itself is exact at the center
    assert absorbance_profile([peak])[k] == 0.7


def test_ground_truth_geometry():
    spec = SynthSpec(grid=88, pixel_size=25.0, holes=(Hole(200.0, -150.0, 150.0),))
    m = ground_truth_mask(spec).keep
    coords = (np.arange(88) - 43.5) * 25.0
    x, y = np.meshgrid(coords, coords)
    inside = x**2 + y**2 <= 1000.0**2
    hole = (x - 200.0) ** 2 + (y + 150.0) ** 2 <= 150.0**2
    assert np.array_equal(m, inside & ~hole)
    assert hole.sum() > 0


def test_spec_validation():
    with pytest.raises(InvariantError):
        SynthSpec(noise_std=-1.0)
    with pytest.raises(InvariantError):
        SynthSpec(disk_radius_um=0.0)
    with pytest.raises(InvariantError):
        SynthSpec(class_peaks={TissueClass.NC: (Peak(5000.0, 10.0, 1.0),)})
    with pytest.raises(InvariantError):
        generate_cube(SynthSpec(class_peaks={TissueClass.NC: DEFAULT_PEAKS[TissueClass.NC]}), TissueClass.CRC)


def test_default_spec_segmentation_agreement():
    core = generate_cube(SynthSpec(), TissueClass.CRC, seed=11)
    mask = segment_tissue(to_absorbance(core.cube), seed=0)
    assert (mask.keep == core.truth.keep).mean() >= 0.99


def test_five_sigma_band_difference_is_separable():
    noise = 0.01
    nc = (Peak(1650, 40, 0.8), Peak(1080, 60, 0.5))
    crc = (Peak(1650, 40, 0.8), Peak(1080, 60, 0.5 + 5 * noise))
    base = dict(grid=22, pixel_size=100.0, noise_std=noise, amplitude_jitter=0.0)
    spec_nc = SynthSpec(class_peaks={TissueClass.NC: nc}, **base)
    spec_crc = SynthSpec(class_peaks={TissueClass.CRC: crc}, **base)
    cores = generate_cohort(spec_nc, spec_crc, n_patients=6, cores_per_patient=2, seed=4)
    table = assemble([c.cube for c in cores], [c.truth for c in cores], PreprocessChain(snv=True))
    report, _ = run_protocol(table, SplitPlan(repeats=4, test_cores_per_class=2), [ClassifierSpec("lda")])
    accs = report.per_repeat["LDA"]["ACC"]
    assert min(accs) >= 0.95


def test_default_cohort_layout():
    cores = list(iter_cohort(SynthSpec(grid=4, pixel_size=550.0)))
    assert len(cores) == 62
    classes = [c.cube.meta.tissue_class for c in cores]
    assert classes.count(TissueClass.NC) == 32 and classes.count(TissueClass.CRC) == 30
    patients = {c.cube.meta.patient_id for c in cores}
    assert len(patients) == 17
    per_patient = sorted(sum(c.cube.meta.patient_id == p for c in cores) for p in patients)
    assert per_patient == [3] * 6 + [4] * 11
    assert len({c.cube.meta.core_id for c in cores}) == 62


def test_one_patient_two_cores():
    cores = generate_cohort(SynthSpec(grid=4, pixel_size=550.0), n_patients=1, cores_per_patient=2)
    assert [c.cube.meta.tissue_class for c in cores] == [TissueClass.NC, TissueClass.CRC]
    assert all(c.cube.mode == Mode.TRANSMITTANCE_PERCENT for c in cores)


def _cohort_bytes(seed, threads):
    out = []
    for c in generate_cohort(SynthSpec(grid=10, pixel_size=220.0), seed=seed, threads=threads):
        buf = io.BytesIO()
        write_scube(c.cube, buf)
        out.append(buf.getvalue())
    return out


def test_cohort_is_deterministic():
    a = _cohort_bytes(3, 1)
    assert a == _cohort_bytes(3, 1)
    assert a == _cohort_bytes(3, 4)
    assert a != _cohort_bytes(4, 1)


def test_score_matrix_generator():
    m = generate_score_matrix(seed=0)
    assert m.values.shape == (36, 7)
    assert np.all((m.values >= 0) & (m.values <= 1))
    assert np.array_equal(m.values, generate_score_matrix(seed=0).values)
    with pytest.raises(InvariantError):
        generate_score_matrix(methods=["a", "b"], skill=[0.5])
