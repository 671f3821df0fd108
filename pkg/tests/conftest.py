import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from diffcast import ConvArchitecture, ConvDenoiser, cosine_schedule


@pytest.fixture
def tiny_sched():
    return cosine_schedule(20)


@pytest.fixture
def tiny_arch(tiny_sched):
    return ConvArchitecture(target_frames=2, context_frames=2, channels=1,
                            height=8, width=8, hidden=4, total_steps=tiny_sched.T)


@pytest.fixture
def tiny_model(tiny_arch):
    rng = np.random.default_rng(42)
    return ConvDenoiser.initialize(tiny_arch, rng)


class ScriptedDenoiser:
    """Test double returning fixed fields for the two guidance branches.

    The conditional branch is recognized by identity with the context tensor
    handed to the constructor; any other condition gets the free-branch field.
    """

    def __init__(self, context, eps_cond, eps_free):
        self.context = np.asarray(context)
        self.eps_cond = np.asarray(eps_cond, dtype=np.float64)
        self.eps_free = np.asarray(eps_free, dtype=np.float64)
        self.calls = []

    def predict(self, x_t, cond=None, t=0, rng=None):
        self.calls.append(t)
        if cond is not None and np.shape(cond) == self.context.shape \
                and np.array_equal(cond, self.context):
            return self.eps_cond.copy()
        return self.eps_free.copy()


@pytest.fixture
def scripted_denoiser_cls():
    return ScriptedDenoiser
