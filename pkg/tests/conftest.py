import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def pytest_collection_modifyitems(config, items):
    if os.environ.get("KBUNDLE_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set KBUNDLE_SLOW=1 to run large-scale tests")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)
