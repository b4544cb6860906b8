import numpy as np
import pytest

from drivesim.scenarios import build_scenario
from drivesim.vehicle import VehicleParams
from drivesim.world import compile_world


@pytest.fixture(scope="session")
def params():
    return VehicleParams()


@pytest.fixture(scope="session")
def straight_scenario():
    return build_scenario("straight_highway", seed=1, traffic_count=0)


@pytest.fixture(scope="session")
def straight_spec(straight_scenario):
    return compile_world(straight_scenario)


@pytest.fixture(scope="session")
def traffic_scenario():
    return build_scenario("straight_highway", seed=1, traffic_count=3)


@pytest.fixture(scope="session")
def traffic_spec(traffic_scenario):
    return compile_world(traffic_scenario)
