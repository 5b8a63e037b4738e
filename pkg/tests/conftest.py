import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gmlnbts import conv_engine


@pytest.fixture(params=["never", "auto", "always"])
def native_mode(request):
    """Run engine-level tests over every execution path."""
    if request.param != "never" and not conv_engine.native_available():
        pytest.skip("native kernels unavailable")
    conv_engine.set_native_mode(request.param)
    yield request.param
    conv_engine.set_native_mode("auto")


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
