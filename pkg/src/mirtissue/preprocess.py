"""Absorbance conversion, SNV normalization, blanking filters and rectangular slicing."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .cube_io import Mode, PixelMask, SpectraTable, SpectralCube, validate_axis
from .errors import (
    DegenerateSpectrumError,
    DimensionMismatchError,
    DomainError,
    EmptyMaskError,
    InvariantError,
)

log = logging.getLogger(__name__)

SNV_EPS = 1e-12


# --------------------------------------------------------------------------- absorbance


def _absorbance(values: np.ndarray) -> np.ndarray:
    return 2.0 - np.log10(values)


def to_absorbance(obj):
    """Convert a transmittance-% cube or table to absorbance, ``a = 2 - log10(t)``.

    Cubes stay float32 (the on-disk precision); tables are converted in float64.
    """
    if obj.mode != Mode.TRANSMITTANCE_PERCENT:
        raise InvariantError(f"expected a transmittance container, got mode {obj.mode.name}")
    if isinstance(obj, SpectralCube):
        bad = np.argwhere(obj.data <= 0)
        if bad.size:
            r, c, k = bad[0]
            raise DomainError(
                f"transmittance {obj.data[r, c, k]} <= 0 at pixel (row={r}, col={c}), "
                f"channel {k} ({obj.axis[k]:g} cm^-1)"
            )
        data = _absorbance(obj.data.astype(np.float64)).astype(np.float32)
        return SpectralCube(data=data, axis=obj.axis, meta=obj.meta, mode=Mode.ABSORBANCE)
    if isinstance(obj, SpectraTable):
        bad = np.argwhere(obj.spectra <= 0)
        if bad.size:
            i, k = bad[0]
            raise DomainError(
                f"transmittance {obj.spectra[i, k]} <= 0 at row {i} (core {obj.core_id[i]}), "
                f"channel {k} ({obj.axis[k]:g} cm^-1)"
            )
        return obj.with_spectra(_absorbance(obj.spectra), mode=Mode.ABSORBANCE)
    raise TypeError(f"cannot convert {type(obj).__name__}")


def to_transmittance(obj):
    """Inverse of :func:`to_absorbance`: ``t = 100 * 10**(-a)``."""
    if obj.mode != Mode.ABSORBANCE:
        raise InvariantError(f"expected an absorbance container, got mode {obj.mode.name}")
    if isinstance(obj, SpectralCube):
        data = (100.0 * np.power(10.0, -obj.data.astype(np.float64))).astype(np.float32)
        return SpectralCube(
            data=data, axis=obj.axis, meta=obj.meta, mode=Mode.TRANSMITTANCE_PERCENT
        )
    return obj.with_spectra(
        100.0 * np.power(10.0, -obj.spectra), mode=Mode.TRANSMITTANCE_PERCENT
    )


# --------------------------------------------------------------------------- SNV


def snv_normalize(spectrum) -> np.ndarray:
    """Center to mean 0 and scale to unit sample (N-1) standard deviation."""
    x = np.asarray(spectrum, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise InvariantError("SNV needs a 1-D spectrum with at least 2 values")
    s = x.std(ddof=1)
    if not s > SNV_EPS:
        raise DegenerateSpectrumError(f"spectrum has sample std {s:.3g} <= {SNV_EPS}")
    return (x - x.mean()) / s


def snv_rows(spectra: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise SNV. Returns ``(normalized, ok)``; degenerate rows are dropped."""
    x = np.asarray(spectra, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 2:
        raise InvariantError("SNV needs at least 2 channels per spectrum")
    mean = x.mean(axis=1, keepdims=True)
    std = x.std(axis=1, ddof=1, keepdims=True)
    ok = std[:, 0] > SNV_EPS
    out = (x[ok] - mean[ok]) / std[ok]
    return out, ok


def snv_table(table: SpectraTable) -> SpectraTable:
    normalized, ok = snv_rows(table.spectra)
    dropped = int((~ok).sum())
    if dropped:
        log.warning("SNV dropped %d degenerate (constant) spectra", dropped)
    kept = table.take(np.flatnonzero(ok))
    return kept.with_spectra(normalized)


# --------------------------------------------------------------------------- blanking

@dataclass(frozen=True)
class BlankingSpec:
    """Closed wavenumber intervals ``[low, high]`` (cm^-1) to remove."""

    intervals: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        ivs = tuple((float(lo), float(hi)) for lo, hi in self.intervals)
        for lo, hi in ivs:
            if not lo < hi:
                raise InvariantError(f"blanking interval [{lo}, {hi}] must have low < high")
        object.__setattr__(self, "intervals", ivs)

    @classmethod
    def from_json(cls, source) -> "BlankingSpec":
        if isinstance(source, (str, Path)) and Path(source).exists():
            doc = json.loads(Path(source).read_text())
        elif isinstance(source, dict):
            doc = source
        else:
            doc = json.loads(source)
        return cls(tuple(tuple(iv) for iv in doc["intervals"]))

    def to_json(self) -> dict:
        return {"intervals": [list(iv) for iv in self.intervals]}


def default_blanking() -> BlankingSpec:
    """CO2 (2280-2390) and H2O (3500-4000, 1300-1900) bands."""
    text = resources.files("mirtissue").joinpath("data/blanking_default.json").read_text()
    return BlankingSpec.from_json(json.loads(text))


@dataclass(frozen=True, eq=False)
class ChannelMask:
    keep: np.ndarray
    removed: tuple[tuple[float, float], ...] = field(default=())

    def __post_init__(self):
        keep = np.asarray(self.keep, dtype=bool)
        if keep.ndim != 1:
            raise InvariantError("channel mask must be 1-D")
        if not keep.any():
            raise EmptyMaskError("channel mask removes every channel")
        object.__setattr__(self, "keep", keep)

    @property
    def n_kept(self) -> int:
        return int(self.keep.sum())

    def __len__(self):
        return self.keep.size


def build_blanking_mask(axis, spec: BlankingSpec) -> ChannelMask:
    axis = validate_axis(axis)
    removed = np.zeros(axis.size, dtype=bool)
    for lo, hi in spec.intervals:
        removed |= (axis >= lo) & (axis <= hi)
    if removed.all():
        raise EmptyMaskError(f"blanking spec {spec.intervals} removes all {axis.size} channels")
    return ChannelMask(~removed, spec.intervals)


def apply_channel_mask(table: SpectraTable, mask: ChannelMask) -> SpectraTable:
    if len(mask) != table.n_channels:
        raise DimensionMismatchError(
            f"mask covers {len(mask)} channels, table has {table.n_channels}"
        )
    return table.with_spectra(table.spectra[:, mask.keep], axis=table.axis[mask.keep])


# --------------------------------------------------------------------------- slicing


def slice_rectangle(cube: SpectralCube, half_width_um: float, half_height_um: float | None = None) -> PixelMask:
    """Keep pixels with ``|x| < half_width_um`` and ``|y| < half_height_um``.

    Pixel (r, c) sits at ``((c - (W-1)/2) * ps, (r - (H-1)/2) * ps)``.
    """
    if half_height_um is None:
        half_height_um = half_width_um
    if not (half_width_um > 0 and half_height_um > 0):
        raise InvariantError("slice half-extents must be positive")
    x, y = cube.pixel_coordinates()
    return PixelMask((np.abs(x) < half_width_um) & (np.abs(y) < half_height_um), "SLICE")
