import itertools

import numpy as np
import pytest

from conftest import field_products

from fpeps.errors import ResourceError
from fpeps.fpeps_global import PepsParameters, alpha_beta
from fpeps.gauge_peps import Cylinder, CylinderEnvironment
from fpeps.oracle import (
    FockState,
    Op,
    exact_gauged_state,
    exact_global_state,
    gauss_violation,
    momentum_occupations,
    to_oracle_ops,
)

GEOMETRIES = [(2, 2), (4, 2)]


def full_state(rng, n):
    keys = np.arange(2**n, dtype=np.int64)
    amps = rng.standard_normal(2**n) + 1j * rng.standard_normal(2**n)
    return FockState(keys, amps, n)


def difference(a: FockState, b: FockState) -> float:
    keys = np.union1d(a.keys, b.keys)
    va, vb = np.zeros(len(keys), complex), np.zeros(len(keys), complex)
    va[np.searchsorted(keys, a.keys)] = a.amplitudes
    vb[np.searchsorted(keys, b.keys)] = b.amplitudes
    return float(np.max(np.abs(va - vb), initial=0.0))


def _sum(a, b):
    keys = np.union1d(a.keys, b.keys)
    amps = np.zeros(len(keys), complex)
    np.add.at(amps, np.searchsorted(keys, a.keys), a.amplitudes)
    np.add.at(amps, np.searchsorted(keys, b.keys), b.amplitudes)
    return keys, amps


# ------------------------------------------------------------ Fock algebra


def test_canonical_anticommutation(rng):
    st = full_state(rng, 3)
    for i, j in itertools.product(range(3), repeat=2):
        ab = st.apply_product([Op("c", i), Op("cdag", j)])
        ba = st.apply_product([Op("cdag", j), Op("c", i)])
        total = FockState(*_sum(ab, ba), 3)
        expected = st if i == j else st.with_amplitudes(0 * st.amplitudes)
        assert difference(total, expected) < 1e-12
        cc = st.apply_product([Op("c", i), Op("c", j)])
        cc2 = st.apply_product([Op("c", j), Op("c", i)])
        assert difference(FockState(*_sum(cc, cc2), 3), st.with_amplitudes(0 * st.amplitudes)) < 1e-12


def test_number_operator_and_links():
    st = exact_gauged_state(PepsParameters(0.8, 0.3, 0.5), 2, 2)
    n = st.expectation([Op("n", 1)])
    assert n == pytest.approx(st.expectation([Op("cdag", 1), Op("c", 1)]))
    total = sum(st.expectation([Op("proj", 0, v)]) for v in (-1, 0, 1))
    assert total == pytest.approx(1.0)
    assert st.expectation([Op("Sz", 0)]) == pytest.approx(
        st.expectation([Op("proj", 0, 1)]) - st.expectation([Op("proj", 0, -1)]))


def test_oracle_size_limits():
    with pytest.raises(ResourceError):
        exact_gauged_state(PepsParameters(0.5, 0.3, 0.5), 4, 4)
    with pytest.raises(ResourceError):
        exact_global_state(PepsParameters(0.5, 0.3, 0.5), 4, 4)


# ------------------------------------------------------------- Gauss law


@pytest.mark.parametrize("shape", GEOMETRIES)
def test_gauss_law_random_points(rng, shape):
    ts = [0.0] + list(rng.uniform(0.2, 1.5, 9))
    for t in ts:
        p = PepsParameters(t, *rng.uniform(-3, 3, 2))
        assert gauss_violation(exact_gauged_state(p, *shape)) < 1e-10


def test_gauss_law_detects_corruption():
    st = exact_gauged_state(PepsParameters(0.8, 0.3, 0.5), 2, 2, corrupt=True)
    assert gauss_violation(st) > 1e-2


# ---------------------------------------------------- transfer equivalence


@pytest.mark.parametrize("shape", GEOMETRIES)
def test_transfer_matches_oracle(rng, shape):
    L1, L2 = shape
    for t in (0.0, 1.0, 0.7):
        p = PepsParameters(t, *rng.uniform(-2, 2, 2))
        st = exact_gauged_state(p, L1, L2)
        env = CylinderEnvironment(p, Cylinder(L1, L2))
        for ops in field_products(L1, L2):
            a = env.expectation(ops)
            b = st.expectation(to_oracle_ops(ops, L1))
            assert abs(a - b) < 1e-9, ops


# ---------------------------------------------------------- global state


def test_global_state_momentum_occupations():
    p = PepsParameters(0.8, 0.6, 1.3)
    occ = momentum_occupations(exact_global_state(p, 4, 2))
    for (m1, m2), v in occ.items():
        a, b = alpha_beta(p, (2 * np.pi * m1 / 4, np.pi * m2))
        assert v == pytest.approx(abs(b) ** 2 / (abs(a) ** 2 + abs(b) ** 2), abs=1e-10)


def test_global_state_is_parity_even():
    st = exact_global_state(PepsParameters(0.9, 0.4, 1.1), 2, 2)
    parity = np.array([bin(int(k)).count("1") % 2 for k in st.keys])
    assert np.all(parity[np.abs(st.amplitudes) > 1e-14] == 0)
