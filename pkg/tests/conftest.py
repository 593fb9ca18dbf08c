import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    """Run the test body in 64-bit mode (gradient checks)."""
    from advectant.tensor import precision

    with precision("float64"):
        yield
