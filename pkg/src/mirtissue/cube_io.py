"""Spectral cube and spectra table containers, SCUBE v1 binary I/O and CSV interchange.

SCUBE v1 layout (little-endian throughout)::

    magic      4s   b"SCUB"
    version    u16  1
    width      u32
    height     u32
    K          u32  number of channels
    pixel_size f64  micrometers
    mode       u8   0 = transmittance %, 1 = absorbance
    class      u8   0 = NC, 1 = CRC, 255 = unlabeled
    core_id    u16 length + UTF-8
    patient_id u16 length + UTF-8
    axis       K x f64
    data       height x width x K x f32, row-major [row][col][channel]
"""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass, replace
from enum import IntEnum
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence, Union

import numpy as np

from .errors import (
    BadMagicError,
    CsvSchemaError,
    InvariantError,
    LengthMismatchError,
    ScubeFormatError,
    UnsupportedVersionError,
)

__all__ = [
    "CANONICAL_GRID",
    "CANONICAL_PIXEL_SIZE_UM",
    "CoreMetadata",
    "Mode",
    "PixelMask",
    "SpectraTable",
    "SpectralCube",
    "TissueClass",
    "canonical_axis",
    "export_csv",
    "import_csv",
    "read_scube",
    "validate_axis",
    "write_scube",
]

MAGIC = b"SCUB"
VERSION = 1
_HEADER = struct.Struct("<4sHIIIdBB")

CANONICAL_GRID = 88
CANONICAL_PIXEL_SIZE_UM = 25.0

PathOrFile = Union[str, os.PathLike, BinaryIO]


class TissueClass(IntEnum):
    NC = 0
    CRC = 1
    UNLABELED = 255


class Mode(IntEnum):
    TRANSMITTANCE_PERCENT = 0
    ABSORBANCE = 1


def canonical_axis() -> np.ndarray:
    """The acquisition grid: 4000, 3996, ..., 748 cm^-1 (814 channels)."""
    return np.arange(4000.0, 747.0, -4.0)


def validate_axis(axis) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    if axis.ndim != 1 or axis.size == 0:
        raise InvariantError("wavenumber axis must be a non-empty 1-D array")
    if not np.all(np.isfinite(axis)) or np.any(axis <= 0):
        raise InvariantError("wavenumbers must be finite and positive")
    if axis.size > 1 and np.any(np.diff(axis) >= 0):
        raise InvariantError("wavenumber axis must be strictly decreasing")
    return axis


@dataclass(frozen=True)
class CoreMetadata:
    core_id: str
    patient_id: str = ""
    tissue_class: TissueClass = TissueClass.UNLABELED
    pixel_size: float = CANONICAL_PIXEL_SIZE_UM

    def __post_init__(self):
        if not self.core_id:
            raise InvariantError("core_id must be non-empty")
        if not (self.pixel_size > 0 and np.isfinite(self.pixel_size)):
            raise InvariantError(f"pixel_size must be > 0, got {self.pixel_size}")
        object.__setattr__(self, "tissue_class", TissueClass(self.tissue_class))


@dataclass(eq=False)
class SpectralCube:
    """A height x width grid of spectra sharing one wavenumber axis.

    ``data`` has shape ``(height, width, K)`` and is stored as float32.
    """

    data: np.ndarray
    axis: np.ndarray
    meta: CoreMetadata
    mode: Mode = Mode.TRANSMITTANCE_PERCENT

    def __post_init__(self):
        self.axis = validate_axis(self.axis)
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        self.mode = Mode(self.mode)
        self.validate()

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def n_channels(self) -> int:
        return self.axis.size

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    def validate(self) -> None:
        if self.data.ndim != 3:
            raise InvariantError(f"cube data must be 3-D (height, width, K), got {self.data.ndim}-D")
        if self.data.shape[2] != self.axis.size:
            raise InvariantError(
                f"cube has {self.data.shape[2]} channels but axis has {self.axis.size}"
            )
        if self.height < 1 or self.width < 1:
            raise InvariantError("cube must contain at least one pixel")
        if not np.all(np.isfinite(self.data)):
            raise InvariantError("cube data contains non-finite values")
        if self.mode == Mode.TRANSMITTANCE_PERCENT and np.any(self.data <= 0):
            raise InvariantError("transmittance cube contains values <= 0")

    def pixel_coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Micrometer (x, y) of every pixel center, origin at the grid center, shape (H, W)."""
        ps = self.meta.pixel_size
        cols = (np.arange(self.width) - (self.width - 1) / 2.0) * ps
        rows = (np.arange(self.height) - (self.height - 1) / 2.0) * ps
        x, y = np.meshgrid(cols, rows)
        return x, y

    def spectra(self) -> np.ndarray:
        """All pixel spectra as an (H*W, K) view, row-major."""
        return self.data.reshape(-1, self.n_channels)

    def __eq__(self, other):
        if not isinstance(other, SpectralCube):
            return NotImplemented
        return (
            self.meta == other.meta
            and self.mode == other.mode
            and self.data.shape == other.data.shape
            and np.array_equal(self.axis, other.axis)
            and np.array_equal(self.data, other.data)
        )


@dataclass(eq=False)
class PixelMask:
    """Boolean keep-flag per pixel, shape (height, width)."""

    keep: np.ndarray
    source: str = "SLICE"

    def __post_init__(self):
        self.keep = np.asarray(self.keep, dtype=bool)
        if self.keep.ndim != 2:
            raise InvariantError("pixel mask must be 2-D (height, width)")
        if self.source not in ("SLICE", "KMEANS", "ALL", "GROUND_TRUTH", "FILE"):
            raise InvariantError(f"unknown mask source {self.source!r}")

    @classmethod
    def all_true(cls, cube: SpectralCube) -> "PixelMask":
        return cls(np.ones((cube.height, cube.width), dtype=bool), "ALL")

    @property
    def count(self) -> int:
        return int(self.keep.sum())

    def __eq__(self, other):
        if not isinstance(other, PixelMask):
            return NotImplemented
        return self.source == other.source and np.array_equal(self.keep, other.keep)


@dataclass(eq=False)
class SpectraTable:
    """Flat labeled table of spectra; one row per kept pixel."""

    axis: np.ndarray
    spectra: np.ndarray
    x_um: np.ndarray
    y_um: np.ndarray
    core_id: np.ndarray
    patient_id: np.ndarray
    label: np.ndarray
    mode: Mode = Mode.ABSORBANCE

    def __post_init__(self):
        self.axis = validate_axis(self.axis)
        self.spectra = np.asarray(self.spectra, dtype=np.float64)
        if self.spectra.ndim == 1 and self.spectra.size == 0:
            self.spectra = self.spectra.reshape(0, self.axis.size)
        self.x_um = np.asarray(self.x_um, dtype=np.float64)
        self.y_um = np.asarray(self.y_um, dtype=np.float64)
        self.core_id = np.asarray(self.core_id, dtype=object)
        self.patient_id = np.asarray(self.patient_id, dtype=object)
        self.label = np.asarray(self.label, dtype=np.int64)
        self.mode = Mode(self.mode)
        n = self.spectra.shape[0]
        if self.spectra.ndim != 2 or self.spectra.shape[1] != self.axis.size:
            raise InvariantError(
                f"spectra shape {self.spectra.shape} does not match axis length {self.axis.size}"
            )
        for name in ("x_um", "y_um", "core_id", "patient_id", "label"):
            if getattr(self, name).shape != (n,):
                raise InvariantError(f"column {name} must have {n} entries")
        valid = {int(c) for c in TissueClass}
        if not set(np.unique(self.label).tolist()) <= valid:
            raise InvariantError("labels must be NC (0), CRC (1) or UNLABELED (255)")

    @property
    def n_rows(self) -> int:
        return self.spectra.shape[0]

    @property
    def n_channels(self) -> int:
        return self.axis.size

    def take(self, rows) -> "SpectraTable":
        rows = np.asarray(rows)
        return replace(
            self,
            spectra=self.spectra[rows],
            x_um=self.x_um[rows],
            y_um=self.y_um[rows],
            core_id=self.core_id[rows],
            patient_id=self.patient_id[rows],
            label=self.label[rows],
        )

    def with_spectra(self, spectra, axis=None, mode=None) -> "SpectraTable":
        return replace(
            self,
            spectra=spectra,
            axis=self.axis if axis is None else axis,
            mode=self.mode if mode is None else mode,
        )

    def cores(self) -> dict[str, TissueClass]:
        """Core id -> class, in first-appearance order."""
        out: dict[str, TissueClass] = {}
        for cid, lab in zip(self.core_id, self.label):
            if cid not in out:
                out[cid] = TissueClass(int(lab))
        return out

    @classmethod
    def concat(cls, tables: Sequence["SpectraTable"]) -> "SpectraTable":
        if not tables:
            raise InvariantError("nothing to concatenate")
        first = tables[0]
        for t in tables[1:]:
            if not np.array_equal(t.axis, first.axis) or t.mode != first.mode:
                raise InvariantError("tables differ in axis or mode")
        return cls(
            axis=first.axis,
            spectra=np.concatenate([t.spectra for t in tables]),
            x_um=np.concatenate([t.x_um for t in tables]),
            y_um=np.concatenate([t.y_um for t in tables]),
            core_id=np.concatenate([t.core_id for t in tables]),
            patient_id=np.concatenate([t.patient_id for t in tables]),
            label=np.concatenate([t.label for t in tables]),
            mode=first.mode,
        )

    def __eq__(self, other):
        if not isinstance(other, SpectraTable):
            return NotImplemented
        return (
            self.mode == other.mode
            and np.array_equal(self.axis, other.axis)
            and np.array_equal(self.spectra, other.spectra)
            and np.array_equal(self.x_um, other.x_um)
            and np.array_equal(self.y_um, other.y_um)
            and list(self.core_id) == list(other.core_id)
            and list(self.patient_id) == list(other.patient_id)
            and np.array_equal(self.label, other.label)
        )


# --------------------------------------------------------------------------- SCUBE


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise InvariantError("identifier longer than 65535 bytes")
    return struct.pack("<H", len(raw)) + raw


def encode_scube(cube: SpectralCube) -> bytes:
    cube.validate()
    m = cube.meta
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        cube.width,
        cube.height,
        cube.n_channels,
        float(m.pixel_size),
        int(cube.mode),
        int(m.tissue_class),
    )
    return b"".join(
        [
            header,
            _pack_str(m.core_id),
            _pack_str(m.patient_id),
            cube.axis.astype("<f8").tobytes(),
            cube.data.astype("<f4").tobytes(),
        ]
    )


def write_scube(cube: SpectralCube, destination: PathOrFile) -> int:
    """Serialize ``cube``; returns the number of bytes written."""
    payload = encode_scube(cube)
    if hasattr(destination, "write"):
        destination.write(payload)
    else:
        Path(destination).write_bytes(payload)
    return len(payload)


def _read_str(buf: memoryview, offset: int, what: str) -> tuple[str, int]:
    if offset + 2 > len(buf):
        raise LengthMismatchError(f"file truncated before {what} length")
    (n,) = struct.unpack_from("<H", buf, offset)
    offset += 2
    if offset + n > len(buf):
        raise LengthMismatchError(f"file truncated inside {what}")
    try:
        s = bytes(buf[offset : offset + n]).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ScubeFormatError(f"{what} is not valid UTF-8") from exc
    return s, offset + n


def decode_scube(raw: bytes) -> SpectralCube:
    buf = memoryview(raw)
    if len(buf) < 4 or bytes(buf[:4]) != MAGIC:
        raise BadMagicError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}")
    if len(buf) < _HEADER.size:
        raise LengthMismatchError("file shorter than the SCUBE header")
    _, version, width, height, k, pixel_size, mode, tclass = _HEADER.unpack_from(buf, 0)
    if version != VERSION:
        raise UnsupportedVersionError(f"SCUBE version {version} is not supported")
    offset = _HEADER.size
    core_id, offset = _read_str(buf, offset, "core_id")
    patient_id, offset = _read_str(buf, offset, "patient_id")
    expected = offset + 8 * k + 4 * width * height * k
    if len(buf) != expected:
        raise LengthMismatchError(
            f"header declares {width}x{height}x{k} but payload is {len(buf) - offset} bytes "
            f"(expected {expected - offset})"
        )
    if mode not in (0, 1):
        raise ScubeFormatError(f"unknown mode byte {mode}")
    if tclass not in (0, 1, 255):
        raise ScubeFormatError(f"unknown tissue class byte {tclass}")
    axis = np.frombuffer(buf, dtype="<f8", count=k, offset=offset).astype(np.float64)
    offset += 8 * k
    data = (
        np.frombuffer(buf, dtype="<f4", count=width * height * k, offset=offset)
        .astype(np.float32)
        .reshape(height, width, k)
    )
    try:
        meta = CoreMetadata(core_id, patient_id, TissueClass(tclass), pixel_size)
        return SpectralCube(data=data, axis=axis, meta=meta, mode=Mode(mode))
    except InvariantError as exc:
        raise ScubeFormatError(str(exc)) from exc


def read_scube(source: PathOrFile | bytes) -> SpectralCube:
    if isinstance(source, (bytes, bytearray, memoryview)):
        raw = bytes(source)
    elif hasattr(source, "read"):
        raw = source.read()
    else:
        raw = Path(source).read_bytes()
    return decode_scube(raw)


# --------------------------------------------------------------------------- CSV

_FIXED_COLUMNS = ["x_um", "y_um", "core_id", "patient_id", "label"]


def _channel_name(nu: float) -> str:
    return f"w{nu:.10g}"


def export_csv(table: SpectraTable, destination) -> None:
    """Write ``table`` with 9 significant digits per spectral value."""
    own = not hasattr(destination, "write")
    fh = open(destination, "w", newline="", encoding="utf-8") if own else destination
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_FIXED_COLUMNS + [_channel_name(v) for v in table.axis])
        for i in range(table.n_rows):
            writer.writerow(
                [
                    repr(float(table.x_um[i])),
                    repr(float(table.y_um[i])),
                    table.core_id[i],
                    table.patient_id[i],
                    TissueClass(int(table.label[i])).name,
                ]
                + [f"{v:.9g}" for v in table.spectra[i]]
            )
    finally:
        if own:
            fh.close()


def import_csv(source, mode: Mode = Mode.ABSORBANCE) -> SpectraTable:
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="", encoding="utf-8") as fh:
            return _parse_csv(fh, mode)
    return _parse_csv(source, mode)


def _parse_csv(fh, mode) -> SpectraTable:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise CsvSchemaError("empty CSV") from None
    if header[: len(_FIXED_COLUMNS)] != _FIXED_COLUMNS:
        missing = [c for c in _FIXED_COLUMNS if c not in header]
        raise CsvSchemaError(
            f"CSV header must start with {','.join(_FIXED_COLUMNS)}; missing {missing or 'order'}"
        )
    channel_cols = header[len(_FIXED_COLUMNS) :]
    if not channel_cols:
        raise CsvSchemaError("CSV has no spectral columns")
    try:
        axis = [float(c[1:]) for c in channel_cols if c.startswith("w")]
    except ValueError as exc:
        raise CsvSchemaError(f"unparsable channel column: {exc}") from None
    if len(axis) != len(channel_cols):
        raise CsvSchemaError("spectral columns must be named w<wavenumber>")
    width = len(header)
    xs, ys, cores, patients, labels, rows = [], [], [], [], [], []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != width:
            raise CsvSchemaError(f"line {lineno}: expected {width} fields, got {len(rec)}")
        try:
            xs.append(float(rec[0]))
            ys.append(float(rec[1]))
            rows.append([float(v) for v in rec[5:]])
        except ValueError as exc:
            raise CsvSchemaError(f"line {lineno}: {exc}") from None
        cores.append(rec[2])
        patients.append(rec[3])
        try:
            labels.append(int(TissueClass[rec[4].strip().upper()]))
        except KeyError:
            raise CsvSchemaError(f"line {lineno}: unknown label {rec[4]!r}") from None
    try:
        return SpectraTable(
            axis=axis,
            spectra=np.array(rows, dtype=np.float64).reshape(len(rows), len(axis)),
            x_um=xs,
            y_um=ys,
            core_id=cores,
            patient_id=patients,
            label=labels,
            mode=mode,
        )
    except InvariantError as exc:
        raise CsvSchemaError(str(exc)) from exc


def iter_scube_dir(directory) -> Iterable[Path]:
    return sorted(Path(directory).glob("*.scube"))
