import itertools

import numpy as np
import pytest

from fpeps.gauge_peps import FieldOp

_CRITERIA = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_antisymmetric(rng, n, complex_=False):
    m = rng.standard_normal((n, n))
    if complex_:
        m = m + 1j * rng.standard_normal((n, n))
    return m - m.T


def field_products(L1, L2):
    """Single-site, two-site and plaquette products covering every operator kind."""
    out = []
    for x, y in itertools.product(range(L1), range(L2)):
        xr = (x + 1) % L1
        out += [[FieldOp((x, y), "Sz", "s")], [FieldOp((x, y), "Sz", "t"), FieldOp((x, y), "Sz", "s")],
                [FieldOp((x, y), "n")], [FieldOp((x, y), "phase", "s", 0.7)],
                [FieldOp((x, y), "proj", "t", -1)],
                [FieldOp((x, y), "psidag"), FieldOp((x, y), "S+", "s"), FieldOp((xr, y), "psi")],
                [FieldOp((x, y), "psidag"), FieldOp((x, y), "S-", "s"), FieldOp((xr, y), "psidag")]]
        if y + 1 < L2:
            out += [
                [FieldOp((x, y), "S+", "s"), FieldOp((xr, y), "S+", "t"),
                 FieldOp((x, y + 1), "S-", "s"), FieldOp((x, y), "S-", "t")],
                [FieldOp((x, y), "S-", "s"), FieldOp((xr, y), "S-", "t"),
                 FieldOp((x, y + 1), "S+", "s"), FieldOp((x, y), "S+", "t")],
                [FieldOp((x, y + 1), "psidag"), FieldOp((x, y), "S+", "t"), FieldOp((x, y), "psidag")],
                [FieldOp((x, y), "psi"), FieldOp((x, y), "S-", "t"), FieldOp((x, y + 1), "psi")],
                [FieldOp((x, y), "psidag"), FieldOp((x, y), "psi"), FieldOp((xr, y + 1), "n")],
            ]
    return out


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` logs a PASS/FAIL line and asserts ``ok``."""

    def check(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        request.config.stash.setdefault(_CRITERIA, []).append(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
