import json
from importlib import resources

import pytest

from fdmc.scenario import parse_scenario


@pytest.fixture(scope="session")
def replica_text():
    return resources.files("fdmc.data").joinpath("paper_s5.json").read_text()


@pytest.fixture(scope="session")
def replica(replica_text):
    return parse_scenario(replica_text)


@pytest.fixture
def minimal_doc():
    return {
        "horizon_s": 5.0,
        "vehicle_radius_m": 0.5,
        "channels": [{"kd": 3.0, "kp": 2.0, "c": 1.0, "G": 0.2, "sigma_x": 0.1}],
        "obstacles": [{"center0": [2.0], "radius": 0.25}],
    }


def dump(doc) -> str:
    return json.dumps(doc, indent=2)
