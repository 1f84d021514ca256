import numpy as np
import pytest

from tasks import DlInstance, LieInstance, SynthSpec, build_dl_problem, build_lie_problem, synth_dl_data
from toys import quadratic_problem


@pytest.fixture
def toy():
    return quadratic_problem([1.0, -2.0, 0.5])


@pytest.fixture
def small_dl():
    """A noisy 4×6×20 dictionary learning instance with its ground truth."""
    Y, D_true, W_true = synth_dl_data(SynthSpec(n=4, m=6, p=20, sparsity=2, noise_sigma=0.01, seed=5))
    inst = DlInstance(Y, 0.05, 6)
    return inst, build_dl_problem(inst), D_true, W_true


@pytest.fixture
def small_lie():
    rng = np.random.default_rng(11)
    inst = LieInstance(rng.uniform(0.05, 0.9, size=(8, 8)), 0.2)
    return inst, build_lie_problem(inst)
