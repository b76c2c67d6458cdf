import os

# single-core box: OpenBLAS thread fan-out only adds contention
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from adaptnav import value_net  # noqa: E402


TINY_HYPER = dict(hidden_dim=8, gate_hidden=10, model_dim=12, n_heads=2,
                  head_hidden=[10, 7, 5])


@pytest.fixture
def tiny_net():
    return value_net.ValueNetwork(hyper=value_net.default_hyper(**TINY_HYPER),
                                  seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
