import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "deterministic",
    derandomize=True,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("deterministic")

from packlib import make_blob_pack, make_quadrant_pack  # noqa: E402


@pytest.fixture(scope="session")
def blob_pack(tmp_path_factory):
    return make_blob_pack(tmp_path_factory.mktemp("blob_pack"))


@pytest.fixture(scope="session")
def quadrant_pack(tmp_path_factory):
    return make_quadrant_pack(tmp_path_factory.mktemp("quadrant_pack"))
