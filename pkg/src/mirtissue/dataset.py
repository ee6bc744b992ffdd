"""Build labeled spectra tables from cubes and masks; repeated core-level splits."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Callable, Iterable, Sequence, Union

import numpy as np

from .cube_io import Mode, PixelMask, SpectraTable, SpectralCube, TissueClass
from .errors import DimensionMismatchError, InsufficientDataError, InvariantError
from .preprocess import BlankingSpec, apply_channel_mask, build_blanking_mask, snv_table, to_absorbance

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PreprocessChain:
    """Fixed order: absorbance -> pixel mask -> SNV -> blanking."""

    snv: bool = True
    blanking: BlankingSpec | None = None


MaskSource = Union[Sequence[PixelMask], Callable[[SpectralCube], PixelMask]]


def cube_rows(cube: SpectralCube, mask: PixelMask) -> SpectraTable:
    """Kept pixels of one cube as table rows, in row-major pixel order."""
    if mask.keep.shape != (cube.height, cube.width):
        raise DimensionMismatchError(
            f"mask shape {mask.keep.shape} != cube grid {(cube.height, cube.width)} "
            f"for core {cube.meta.core_id}"
        )
    idx = np.flatnonzero(mask.keep.ravel())
    x, y = cube.pixel_coordinates()
    m = cube.meta
    n = idx.size
    return SpectraTable(
        axis=cube.axis,
        spectra=cube.spectra()[idx].astype(np.float64),
        x_um=x.ravel()[idx],
        y_um=y.ravel()[idx],
        core_id=np.full(n, m.core_id, dtype=object),
        patient_id=np.full(n, m.patient_id, dtype=object),
        label=np.full(n, int(m.tissue_class), dtype=np.int64),
        mode=cube.mode,
    )


def _process_one(cube: SpectralCube, mask: PixelMask, chain: PreprocessChain) -> SpectraTable:
    table = cube_rows(cube, mask)
    if table.mode == Mode.TRANSMITTANCE_PERCENT:
        table = to_absorbance(table)
    if chain.snv and table.n_rows:
        table = snv_table(table)
    if chain.blanking is not None:
        table = apply_channel_mask(table, build_blanking_mask(table.axis, chain.blanking))
    return table


def assemble(
    cubes: Iterable[SpectralCube],
    masks: MaskSource,
    chain: PreprocessChain = PreprocessChain(),
    threads: int = 1,
) -> SpectraTable:
    """Kept pixels of every cube, preprocessed and concatenated in cube order.

    ``masks`` is either one mask per cube or a callable producing the mask
    for a given (transmittance or absorbance) cube.
    """
    cubes = list(cubes)
    if callable(masks):
        mask_fn = masks
    else:
        masks = list(masks)
        if len(masks) != len(cubes):
            raise DimensionMismatchError(f"{len(cubes)} cubes but {len(masks)} masks")
        lookup = {id(c): m for c, m in zip(cubes, masks)}
        mask_fn = lambda c: lookup[id(c)]  # noqa: E731

    def work(cube):
        return _process_one(cube, mask_fn(cube), chain)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, cubes))
    else:
        parts = [work(c) for c in cubes]
    table = SpectraTable.concat(parts)
    if table.n_rows == 0:
        raise InsufficientDataError("every row was dropped during assembly")
    return table


# --------------------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitPlan:
    repeats: int = 12
    test_cores_per_class: int = 2
    level: str = "CORE"
    seed: int = 0

    def __post_init__(self):
        if self.repeats < 1 or self.test_cores_per_class < 1:
            raise InvariantError("repeats and test_cores_per_class must be >= 1")
        if self.level not in ("CORE", "PATIENT"):
            raise InvariantError(f"split level must be CORE or PATIENT, got {self.level!r}")


@dataclass(frozen=True, eq=False)
class SplitRepeat:
    train_cores: tuple[str, ...]
    test_cores: tuple[str, ...]
    train_rows: np.ndarray
    test_rows: np.ndarray


@dataclass(frozen=True, eq=False)
class SplitResult:
    plan: SplitPlan
    repeats: tuple[SplitRepeat, ...]
    core_class: dict = field(default_factory=dict)

    def manifest(self) -> dict:
        out = []
        for i, rep in enumerate(self.repeats):
            out.append(
                {
                    "repeat": i,
                    "train": list(rep.train_cores),
                    "test": {
                        cls.name: [c for c in rep.test_cores if self.core_class[c] == cls]
                        for cls in (TissueClass.NC, TissueClass.CRC)
                    },
                    "train_cores_per_class": {
                        cls.name: sum(self.core_class[c] == cls for c in rep.train_cores)
                        for cls in (TissueClass.NC, TissueClass.CRC)
                    },
                    "n_train_rows": int(rep.train_rows.size),
                    "n_test_rows": int(rep.test_rows.size),
                }
            )
        return {"plan": asdict(self.plan), "repeats": out}

    def manifest_json(self) -> str:
        return json.dumps(self.manifest(), indent=2, sort_keys=True)

    def __eq__(self, other):
        if not isinstance(other, SplitResult) or self.plan != other.plan:
            return NotImplemented if not isinstance(other, SplitResult) else False
        return len(self.repeats) == len(other.repeats) and all(
            a.train_cores == b.train_cores
            and a.test_cores == b.test_cores
            and np.array_equal(a.train_rows, b.train_rows)
            and np.array_equal(a.test_rows, b.test_rows)
            for a, b in zip(self.repeats, other.repeats)
        )


def _draw_pairs(n_nc: int, n_crc: int, k: int, repeats: int, rng) -> list[tuple[tuple, tuple]]:
    total = math.comb(n_nc, k) * math.comb(n_crc, k)
    if repeats > total:
        raise InsufficientDataError(
            f"{repeats} distinct test sets requested but only {total} exist"
        )
    if 2 * repeats > total:
        pool = [(a, b) for a in combinations(range(n_nc), k) for b in combinations(range(n_crc), k)]
        picks = rng.choice(len(pool), size=repeats, replace=False)
        return [pool[i] for i in picks]
    seen, out = set(), []
    while len(out) < repeats:
        a = tuple(sorted(rng.choice(n_nc, size=k, replace=False).tolist()))
        b = tuple(sorted(rng.choice(n_crc, size=k, replace=False).tolist()))
        if (a, b) not in seen:
            seen.add((a, b))
            out.append((a, b))
    return out


def make_splits(table: SpectraTable, plan: SplitPlan) -> SplitResult:
    """Draw ``plan.repeats`` distinct balanced test sets of whole cores.

    Rows are shuffled within train and within test after splitting. With
    ``level="PATIENT"`` cores sharing a patient with any test core are
    removed from that repeat's training set.
    """
    cores = table.cores()
    k = plan.test_cores_per_class
    nc = sorted(c for c, cls in cores.items() if cls == TissueClass.NC)
    crc = sorted(c for c, cls in cores.items() if cls == TissueClass.CRC)
    if len(nc) < k or len(crc) < k:
        raise InsufficientDataError(
            f"need >= {k} cores per class, have {len(nc)} NC and {len(crc)} CRC"
        )
    rng = np.random.default_rng(plan.seed)
    pairs = _draw_pairs(len(nc), len(crc), k, plan.repeats, rng)

    patient_of = {}
    for cid, pid in zip(table.core_id, table.patient_id):
        patient_of.setdefault(cid, pid)
    rows_of: dict[str, list[int]] = {}
    for i, cid in enumerate(table.core_id):
        rows_of.setdefault(cid, []).append(i)
    labelled = [c for c in cores if cores[c] != TissueClass.UNLABELED]

    repeats = []
    for a, b in pairs:
        test = tuple([nc[i] for i in a] + [crc[i] for i in b])
        test_set = set(test)
        if plan.level == "PATIENT":
            blocked = {patient_of[c] for c in test}
            train = tuple(c for c in labelled if c not in test_set and patient_of[c] not in blocked)
        else:
            train = tuple(c for c in labelled if c not in test_set)
        if test_set & set(train):
            raise AssertionError("train/test core leakage")
        train_rows = np.array([r for c in train for r in rows_of[c]], dtype=np.int64)
        test_rows = np.array([r for c in test for r in rows_of[c]], dtype=np.int64)
        train_rows = train_rows[rng.permutation(train_rows.size)]
        test_rows = test_rows[rng.permutation(test_rows.size)]
        repeats.append(SplitRepeat(train, test, train_rows, test_rows))

    n_pos = [sum(cores[c] == TissueClass.CRC for c in r.train_cores) for r in repeats]
    log.debug("train CRC core counts per repeat: %s", n_pos)
    return SplitResult(plan, tuple(repeats), dict(cores))
