"""Mid-infrared tissue spectra: cube I/O, preprocessing, segmentation,
classification, evaluation and SRD-based model ranking."""

from .cube_io import (
    CoreMetadata,
    Mode,
    PixelMask,
    SpectraTable,
    SpectralCube,
    TissueClass,
    canonical_axis,
    export_csv,
    import_csv,
    read_scube,
    write_scube,
)
from .errors import MirTissueError

__all__ = [
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
    "write_scube",
    "MirTissueError",
]
__version__ = "0.1.0"
