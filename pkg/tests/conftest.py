import numpy as np
import pytest

from podlab.model import builtin_case, load_case
from podlab.simulation import Simulator


def two_bus_case(x_line=0.5, with_tcsc=False):
    """Classical machine behind a line to an infinite bus; smallest dynamic case."""
    case = {
        "name": "twobus",
        "f_hz": 50.0,
        "base_mva": 100.0,
        "buses": [["B1", 20.0], ["B2", 20.0]],
        "branches": [["L1", "B1", "B2", 0.0, x_line, 0.0]],
        "machines": [
            {"id": "G1", "bus": "B1", "model": "classical",
             "h": 3.0, "d": 0.0, "xd_t": 0.3, "p": 0.5, "v": 1.02}
        ],
        "infinite_bus": {"bus": "B2", "v": 1.0, "angle_deg": 0.0},
    }
    if with_tcsc:
        case["tcsc"] = [{"id": "TCSC1", "branch": "L1", "x_ref": 0.1,
                         "x_min": 0.01, "x_max": 0.5, "t": 0.1}]
    return case


@pytest.fixture(scope="session")
def smib_model():
    return load_case("smib")


@pytest.fixture(scope="session")
def smib_sim(smib_model):
    return Simulator(smib_model)


@pytest.fixture(scope="session")
def ieee39_model():
    return load_case("ieee39")


@pytest.fixture(scope="session")
def ieee39_case():
    return builtin_case("ieee39")


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
