import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def nominal_system():
    from epilab.passivity import ClosedLoop
    from epilab.model import C_STANDARD
    return ClosedLoop.at(-0.8, 1.0, C_STANDARD)


@pytest.fixture(scope="session")
def summed_system():
    from epilab.passivity import ClosedLoop
    from epilab.model import C_SUM
    return ClosedLoop.at(-2.0, 0.0, C_SUM)
