from fractions import Fraction as F

import pytest

from quenchedcp import BranchMap, MapFamily, NoiseModel, TargetSpec, times_map

HALF = F(1, 2)


def slope2_fixing_half():
    """Three full branches with slope 2 at the interior fixed point 1/2."""
    return BranchMap.from_table(
        [("0", "1/4", "4", "0"), ("1/4", "3/4", "2", "-1/2"), ("3/4", "1", "4", "-3")],
        name="slope-2 map fixing 1/2",
    )


@pytest.fixture(scope="session")
def doubling():
    return MapFamily((times_map(2),))


@pytest.fixture(scope="session")
def two_three():
    return MapFamily((times_map(2), times_map(3)))


@pytest.fixture(scope="session")
def both_fix_half():
    return MapFamily((slope2_fixing_half(), times_map(3)))


@pytest.fixture(scope="session")
def periodic2():
    return MapFamily((slope2_fixing_half(),))


@pytest.fixture(scope="session")
def fair():
    return NoiseModel.bernoulli([HALF, HALF])


@pytest.fixture(scope="session")
def target_half():
    return TargetSpec(HALF, HALF)


@pytest.fixture(scope="session")
def target_sixth():
    return TargetSpec(F(1, 6), F(1, 6))


_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    """Record acceptance outcomes keyed by criterion (``test_a7_...`` -> ``A7``)."""
    name = report.nodeid.split("::")[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_a"):
        return
    crit = "A" + name[len("test_a"):].split("_")[0]
    failed = report.failed or (report.when == "call" and report.skipped)
    if report.when == "call" or failed:
        _ACCEPTANCE[crit] = _ACCEPTANCE.get(crit, True) and not failed


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_ACCEPTANCE, key=lambda c: int(c[1:])):
        terminalreporter.write_line(f"{crit} {'PASS' if _ACCEPTANCE[crit] else 'FAIL'}")
