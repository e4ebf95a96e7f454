import os
import sys

# pin BLAS to one thread before numpy loads: faster at these tensor sizes and
# keeps golden tests bit-reproducible regardless of machine defaults
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

sys.path.insert(0, os.path.dirname(__file__))

import numpy as np  # noqa: E402
import pytest  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(0)
