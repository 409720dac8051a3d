"""Small builders shared by the tests."""
import copy

from fnfront.config import build_config

BASE = {
    "grid": {"dim": 1, "nx": 17, "nt": 65, "T": 0.25},
    "operator": {"form": "pucci_minus", "lambda": 1.0, "Lambda": 2.0},
    "problem": {
        "reaction": {"profile": "default", "amplitude": 1.0},
        "forcing": {"expr": "10", "c0": 10.0, "c1": 10.0, "grad_bound": 0.0},
        "dirichlet": {"expr": "4*t*x"},
        "eps": 0.1,
    },
    "solver": {"l_guess": 1.0},
    "sweep": {"eps": [0.2, 0.1]},
}


def merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def make_config(**over):
    return build_config(merge(BASE, over))


def make_problem(**over):
    return make_config(**over).problem
