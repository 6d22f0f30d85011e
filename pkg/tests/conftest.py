import numpy as np
import pytest
import torch

from mfviton import synthworld as sw
from mfviton.garmentnet import Topology
from mfviton.tryonnet import MFVitonModel

torch.set_num_threads(1)

PERSON = sw.PersonSpec(
    body_seed=3, skin_tone=(0.8, 0.64, 0.52), hair_color=(0.2, 0.1, 0.05), arm_angles=(0.4, -0.1), torso_scale=1.0
)
RED = sw.GarmentSpec(base_color=(1.0, 0.0, 0.0), pattern="solid", sleeve="short")
BLUE_STRIPES = sw.GarmentSpec(
    base_color=(0.0, 0.2, 0.8), pattern="stripes", pattern_color=(1.0, 1.0, 0.0), pattern_period=4, sleeve="long"
)
STUDIO = sw.BackgroundSpec()


@pytest.fixture
def person():
    return PERSON


@pytest.fixture
def scene():
    return sw.render_scene(PERSON, RED, STUDIO)


def tiny_topology(**kw):
    base = dict(widths=(8, 16, 16), ctx_dim=8, temb_dim=16, n_sem=2, trunk_channels=(4, 4, 8))
    base.update(kw)
    return Topology(**base)


@pytest.fixture
def tiny_model():
    torch.manual_seed(0)
    return MFVitonModel(tiny_topology()).eval()


def random_image(rng, shape=(64, 48, 3)):
    return sw.quantize(rng.random(shape))



def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
