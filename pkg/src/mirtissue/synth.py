"""Seeded synthetic tissue cores and score matrices with known ground truth.

Tissue pixels carry a sum of Gaussian absorbance bands (amide / carbohydrate
positions), background pixels are bare slide (absorbance ~ 0). Values are
written in transmittance % so the full conversion path is exercised.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .cube_io import (
    CANONICAL_GRID,
    CANONICAL_PIXEL_SIZE_UM,
    CoreMetadata,
    Mode,
    PixelMask,
    SpectralCube,
    TissueClass,
    canonical_axis,
)
from .errors import InvariantError


@dataclass(frozen=True)
class Peak:
    center: float  # cm^-1
    width: float  # Gaussian sigma, cm^-1
    amplitude: float  # absorbance units


def _peaks(*triples) -> tuple[Peak, ...]:
    return tuple(Peak(*t) for t in triples)


DEFAULT_PEAKS = {
    TissueClass.NC: _peaks((1650, 40, 0.8), (1080, 60, 0.5)),
    TissueClass.CRC: _peaks((1650, 40, 0.8), (1080, 60, 0.9), (1550, 30, 0.4)),
}


@dataclass(frozen=True)
class Hole:
    x_um: float
    y_um: float
    radius_um: float


@dataclass(frozen=True)
class SynthSpec:
    grid: int = CANONICAL_GRID
    pixel_size: float = CANONICAL_PIXEL_SIZE_UM
    class_peaks: dict = field(default_factory=lambda: dict(DEFAULT_PEAKS))
    disk_radius_um: float = 1000.0
    holes: tuple[Hole, ...] = (Hole(200.0, -150.0, 150.0),)
    noise_std: float = 0.01
    # per-pixel multiplicative thickness variation (what SNV removes)
    thickness_jitter: float = 0.1
    # per-core relative variation of every band amplitude
    amplitude_jitter: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.grid < 1:
            raise InvariantError("grid must be >= 1")
        if not self.pixel_size > 0:
            raise InvariantError("pixel_size must be > 0")
        if not self.disk_radius_um > 0:
            raise InvariantError("disk radius must be > 0")
        if self.noise_std < 0 or self.thickness_jitter < 0 or self.amplitude_jitter < 0:
            raise InvariantError("noise and jitter levels must be >= 0")
        axis = canonical_axis()
        for cls, peaks in self.class_peaks.items():
            for p in peaks:
                if not axis[-1] <= p.center <= axis[0]:
                    raise InvariantError(f"peak center {p.center} outside the axis range")
                if not p.width > 0:
                    raise InvariantError("peak width must be > 0")
        for h in self.holes:
            if not h.radius_um > 0:
                raise InvariantError("hole radius must be > 0")


class SynthCore(NamedTuple):
    cube: SpectralCube
    truth: PixelMask


def absorbance_profile(peaks: Sequence[Peak], axis=None) -> np.ndarray:
    axis = canonical_axis() if axis is None else np.asarray(axis, dtype=np.float64)
    out = np.zeros_like(axis)
    for p in peaks:
        out += p.amplitude * np.exp(-0.5 * ((axis - p.center) / p.width) ** 2)
    return out


def ground_truth_mask(spec: SynthSpec) -> PixelMask:
    n = spec.grid
    coords = (np.arange(n) - (n - 1) / 2.0) * spec.pixel_size
    x, y = np.meshgrid(coords, coords)
    tissue = x**2 + y**2 <= spec.disk_radius_um**2
    for h in spec.holes:
        tissue &= (x - h.x_um) ** 2 + (y - h.y_um) ** 2 > h.radius_um**2
    return PixelMask(tissue, "GROUND_TRUTH")


def generate_cube(
    spec: SynthSpec,
    tissue_class: TissueClass,
    core_id: str = "core",
    patient_id: str = "patient",
    seed=None,
) -> SynthCore:
    """One transmittance-% core plus its ground-truth tissue mask."""
    tissue_class = TissueClass(tissue_class)
    if tissue_class not in spec.class_peaks:
        raise InvariantError(f"no peak model for class {tissue_class.name}")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    axis = canonical_axis()
    truth = ground_truth_mask(spec)
    peaks = spec.class_peaks[tissue_class]
    if spec.amplitude_jitter > 0:
        factors = 1.0 + spec.amplitude_jitter * rng.standard_normal(len(peaks))
        peaks = tuple(replace(p, amplitude=p.amplitude * f) for p, f in zip(peaks, factors))
    profile = absorbance_profile(peaks, axis)

    n = spec.grid
    scale = np.ones((n, n))
    if spec.thickness_jitter > 0:
        scale = np.clip(1.0 + spec.thickness_jitter * rng.standard_normal((n, n)), 0.2, None)
    absorb = (truth.keep * scale)[:, :, None] * profile[None, None, :]
    if spec.noise_std > 0:
        absorb = absorb + spec.noise_std * rng.standard_normal(absorb.shape)
    data = 100.0 * np.power(10.0, -absorb)
    meta = CoreMetadata(core_id, patient_id, tissue_class, spec.pixel_size)
    cube = SpectralCube(data=data, axis=axis, meta=meta, mode=Mode.TRANSMITTANCE_PERCENT)
    return SynthCore(cube, truth)


def default_layout() -> list[tuple[str, list[TissueClass]]]:
    """17 patients: 11 x (2 NC + 2 CRC), 4 x (2 NC + 1 CRC), 2 x (1 NC + 2 CRC).

    Totals 62 cores, 32 NC and 30 CRC.
    """
    NC, CRC = TissueClass.NC, TissueClass.CRC
    layout = []
    for i in range(11):
        layout.append([NC, NC, CRC, CRC])
    for i in range(4):
        layout.append([NC, NC, CRC])
    for i in range(2):
        layout.append([NC, CRC, CRC])
    return [(f"P{i + 1:02d}", classes) for i, classes in enumerate(layout)]


def cohort_layout(n_patients=None, cores_per_patient=None) -> list[tuple[str, list[TissueClass]]]:
    if n_patients is None and cores_per_patient is None:
        return default_layout()
    n_patients = 1 if n_patients is None else n_patients
    cores_per_patient = 2 if cores_per_patient is None else cores_per_patient
    if n_patients < 1 or cores_per_patient < 1:
        raise InvariantError("patient and core counts must be >= 1")
    cycle = [TissueClass.NC, TissueClass.CRC]
    return [
        (f"P{i + 1:02d}", [cycle[j % 2] for j in range(cores_per_patient)])
        for i in range(n_patients)
    ]


def iter_cohort(
    spec_nc: SynthSpec | None = None,
    spec_crc: SynthSpec | None = None,
    n_patients: int | None = None,
    cores_per_patient: int | None = None,
    seed: int = 0,
) -> Iterator[SynthCore]:
    """Lazily generate cores; each core draws from its own derived RNG stream."""
    for job in _cohort_jobs(spec_nc, spec_crc, n_patients, cores_per_patient, seed):
        yield _run_job(job)


def generate_cohort(
    spec_nc: SynthSpec | None = None,
    spec_crc: SynthSpec | None = None,
    n_patients: int | None = None,
    cores_per_patient: int | None = None,
    seed: int = 0,
    threads: int = 1,
) -> list[SynthCore]:
    """All cores of a cohort; the default layout is the 62-core / 17-patient one."""
    jobs = _cohort_jobs(spec_nc, spec_crc, n_patients, cores_per_patient, seed)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(_run_job, jobs))
    return [_run_job(j) for j in jobs]


def _cohort_jobs(spec_nc, spec_crc, n_patients, cores_per_patient, seed):
    spec_nc = spec_nc or SynthSpec()
    spec_crc = spec_crc or spec_nc
    jobs = []
    index = 0
    for patient, classes in cohort_layout(n_patients, cores_per_patient):
        for j, cls in enumerate(classes):
            spec = spec_nc if cls == TissueClass.NC else spec_crc
            core_id = f"{patient}-C{j + 1}"
            jobs.append((spec, cls, core_id, patient, np.random.SeedSequence([seed, index])))
            index += 1
    return jobs


def _run_job(job) -> SynthCore:
    spec, cls, core_id, patient, ss = job
    return generate_cube(spec, cls, core_id, patient, seed=ss)


# --------------------------------------------------------------------------- score matrices

DEMO_METHODS = ("RFC", "XGBC", "LDA", "SVC", "3Dense", "1Conv", "1DUNet")
_DEMO_SKILL = (0.74, 0.76, 0.77, 0.78, 0.80, 0.81, 0.82)


def generate_score_matrix(
    n_rows: int = 36,
    methods: Sequence[str] = DEMO_METHODS,
    skill: Sequence[float] | None = None,
    case_spread: float = 0.08,
    noise: float = 0.05,
    seed: int = 0,
):
    """Accuracy-like matrix: shared per-case difficulty plus method skill plus noise."""
    from .rank import ScoreMatrix

    skill = _DEMO_SKILL if skill is None and tuple(methods) == DEMO_METHODS else skill
    if skill is None:
        skill = np.linspace(0.7, 0.85, len(methods))
    if len(skill) != len(methods):
        raise InvariantError("one skill level per method required")
    rng = np.random.default_rng(seed)
    case = case_spread * rng.standard_normal((n_rows, 1))
    values = np.asarray(skill)[None, :] + case + noise * rng.standard_normal((n_rows, len(methods)))
    return ScoreMatrix(np.round(np.clip(values, 0.0, 1.0), 4), list(methods))
