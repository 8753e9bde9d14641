import numpy as np
import pytest

from tendon_jae.harness import prepare_demo
from tendon_jae.model import JointDef, KinematicModel, MuscleDef


@pytest.fixture(scope="session")
def elbow1_demo():
    return prepare_demo("elbow1")


@pytest.fixture(scope="session")
def planar2_demo():
    return prepare_demo("planar2")


@pytest.fixture(scope="session")
def upper6_demo():
    return prepare_demo("upper6")


def hinge(name, parent, child, xyz=(0, 0, 0), lo=-np.pi, hi=np.pi, axis=(0, 0, 1)):
    return JointDef(name, parent, child, np.array(axis, float), np.array(xyz, float),
                    np.array([0.0, 0.0, 0.0, 1.0]), lo, hi)


def elbow_model(a, b):
    """Hinge at the origin; via points at distance a on the parent (-x) and b on the child (+x)."""
    j = hinge("elbow", "upper", "fore", lo=-0.1, hi=np.pi - 0.1)
    m = MuscleDef("m", (("upper", np.array([-a, 0.0, 0.0])), ("fore", np.array([b, 0.0, 0.0]))))
    return KinematicModel(("upper", "fore"), (j,), (m,), "elbow_test")


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
