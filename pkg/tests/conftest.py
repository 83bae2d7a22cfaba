import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pseudoct.emission import GaussianComponent
from pseudoct.hmm import HmmParams, forward_backward


@pytest.fixture(scope="session", autouse=True)
def compiled_kernels():
    """Pay the one-time JIT compile cost before any timed assertion runs."""
    comps = [
        GaussianComponent(mu=np.array([0.0, 0.0]), sigma=np.eye(2)),
        GaussianComponent(mu=np.array([1.0, 1.0]), sigma=np.eye(2)),
    ]
    params = HmmParams(pi=np.full(2, 0.5), trans=np.full((2, 2), 0.5), components=comps)
    forward_backward(params, np.zeros((4, 2)))
