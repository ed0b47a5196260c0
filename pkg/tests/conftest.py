import pytest

from beurlab.numcore import PrecisionContext
from beurlab.systems import build_system


@pytest.fixture(scope="session")
def system2():
    """Two-level system at a desk-scale floor; shared by most modules."""
    sys_, report = build_system(2, 2000, relaxed=True,
                                ctx=PrecisionContext(bits=256))
    assert report.ok(), report.failures
    return sys_


@pytest.fixture(scope="session")
def system1_small():
    """Single level at the smallest admissible floor."""
    sys_, report = build_system(1, 3, relaxed=True,
                                ctx=PrecisionContext(bits=256))
    return sys_, report


@pytest.fixture(scope="session")
def system14():
    """Single level at tau >= 1e14: log tau ~ 36 is large enough for the
    asymptotic path bounds (tangent margin, Sigma' smallness) to hold."""
    sys_, report = build_system(1, 1e14, relaxed=True,
                                ctx=PrecisionContext(bits=256))
    assert report.ok(), report.failures
    return sys_


@pytest.fixture(scope="session")
def system50():
    """Single level at floor 50: small enough that the descent geometry
    degenerates (used for the failure-path tests)."""
    sys_, report = build_system(1, 50, relaxed=True,
                                ctx=PrecisionContext(bits=256))
    assert report.ok(), report.failures
    return sys_
