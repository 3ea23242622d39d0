import hypothesis
import numpy as np
import pytest

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=25)
hypothesis.settings.register_profile("thorough", max_examples=200)
hypothesis.settings.load_profile("fast")


@pytest.fixture
def unit_grid():
    from occmesh import GridSpec

    def make(resolution):
        return GridSpec((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), resolution)

    return make
