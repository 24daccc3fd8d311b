"""
Small configurations shared by the test scripts: a coarse 12 x 6 torus,
30 neurons and short ensembles so the full pipeline runs in seconds.
"""

from functools import lru_cache

from sgnn.architecture import build_context
from sgnn.config import build_config
from sgnn.data_io import generate_synthetic

SMALL = {
    "n_u": 12,
    "n_v": 6,
    "m": 20,
    "n_neurons": 30,
    "n_in": 4,
    "n_out": 6,
    "tau_prc": 50,
    "n_sim": 8,
    "grid_points": 2,
    "max_iters": 2,
    "master_seed": 7,
}


def small_config(**overrides):
    values = dict(SMALL)
    values.update(overrides)
    return build_config(values)


@lru_cache(maxsize=4)
def small_context(germ_policy: str = "crn"):
    return build_context(small_config(germ_policy=germ_policy))


@lru_cache(maxsize=1)
def small_data():
    return generate_synthetic(n_d=10, n_test=4, n_in=SMALL["n_in"], n_out=SMALL["n_out"], seed=3)
