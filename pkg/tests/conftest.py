import numpy as np
import pytest

from mirtissue.cube_io import CoreMetadata, Mode, SpectralCube, TissueClass
from mirtissue.synth import SynthSpec


def make_cube(h=3, w=4, k=5, seed=0, mode=Mode.TRANSMITTANCE_PERCENT, core_id="c1", cls=TissueClass.NC):
    rng = np.random.default_rng(seed)
    axis = 4000.0 - 4.0 * np.arange(k)
    data = rng.uniform(1.0, 100.0, size=(h, w, k)).astype(np.float32)
    meta = CoreMetadata(core_id, "p1", cls, 25.0)
    return SpectralCube(data, axis, meta, mode)


@pytest.fixture
def small_spec():
    """Coarse 22x22 grid at 100 um: same 2.2 mm field as the canonical core."""
    return SynthSpec(grid=22, pixel_size=100.0)


@pytest.fixture(scope="session")
def desk_cohort():
    """62 coarse synthetic cores (default 17-patient layout) with their ground-truth masks."""
    from mirtissue.synth import generate_cohort

    return generate_cohort(SynthSpec(grid=22, pixel_size=100.0), None, seed=0)


@pytest.fixture(scope="session")
def desk_table(desk_cohort):
    """Ground-truth tissue pixels, absorbance + SNV + default blanking."""
    from mirtissue.dataset import PreprocessChain, assemble
    from mirtissue.preprocess import default_blanking

    cubes = [c.cube for c in desk_cohort]
    masks = [c.truth for c in desk_cohort]
    return assemble(cubes, masks, PreprocessChain(snv=True, blanking=default_blanking()))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[1][1:])):
            terminalreporter.write_line(line)
