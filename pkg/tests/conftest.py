import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gex.kinematics import builtin_model


@pytest.fixture(scope="session")
def gx11():
    return builtin_model("gx11")


@pytest.fixture(scope="session")
def ex12():
    return builtin_model("ex12")
