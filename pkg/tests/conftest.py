import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hubplatoon.config import sweden_config
from hubplatoon.model import ArrivalPmf, CorridorConfig, HubParams, RewardParams

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def poisson_corridor(horizon=120, rates=(0.3, 0.2, 0.25), travel=(1, 15, 20),
                     benefits=(65.5, 68.0, 131.5), c=3.33, l=0.5, cap=60):
    hubs = []
    for i, (lam, tau, b) in enumerate(zip(rates, travel, benefits), start=1):
        r = np.full(horizon + 1, float(lam))
        hubs.append(HubParams(i, tau, l, RewardParams(b, c), ArrivalPmf.poisson(r, cap), r))
    return CorridorConfig(horizon, tuple(hubs), cap)


@pytest.fixture
def small_corridor():
    return poisson_corridor()


@pytest.fixture(scope="session")
def sweden():
    return sweden_config()
