from __future__ import annotations

import numpy as np
import pytest

from effdf.experiments import gaussian_design


@pytest.fixture(scope="session")
def design_50x15():
    return gaussian_design(50, 15, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
