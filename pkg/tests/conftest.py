import numpy as np
import pytest

from qapbench._heap import reduce_heap_trimming
from qapbench.graph import gen_uniform
from qapbench.problem import ProblemInstance

reduce_heap_trimming()


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def uniform_instance(m: int, n: int, seed: int, caps=None, desired=None) -> ProblemInstance:
    """Dense random instance with loose capacities unless given."""
    caps = np.full(n, m, dtype=np.int64) if caps is None else np.asarray(caps)
    desired = np.full(n, 1.0 / n) if desired is None else np.asarray(desired, dtype=float)
    return ProblemInstance(graph=gen_uniform(m, seed), n=n,
                           capacities=caps, desired_dist=desired)
