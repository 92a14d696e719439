import numpy as np
import pytest

from fpeps import fock
from fpeps.errors import ParameterError
from fpeps.fpeps_global import (
    ETA,
    UNPAIRED_MOMENTA,
    PepsParameters,
    PhaseLabel,
    alpha_beta,
    alpha_beta_det,
    bcs_state,
    bdg_vector,
    build_t_matrix,
    chern_number,
    classify_phase,
    correlators,
    dispersion,
    fiducial_covariance,
    fiducial_pairing_matrix,
    gapless_scan,
    momentum_block,
    parent_hamiltonian,
    unpaired_amplitudes,
    unpaired_amplitudes_pfaffian,
)
from fpeps.gaussian_core import dirac_blocks

MAGIC = (1.0, np.sqrt(2))
X_MODES = [0, 1, 2, 5, 6]  # first-role modes in fiducial order
Y_MODES = [3, 4, 7, 8]


def rot(k):
    return (-k[1], k[0])


# ------------------------------------------------------------------ T matrix


def test_t_matrix_trivial_point():
    tm = build_t_matrix(PepsParameters(1.0, 0.0, 0.0))
    assert np.allclose(tm.row0, [1, 1j, ETA, ETA**3])
    assert np.allclose(tm.tau, 0)


def test_t_matrix_tau_antisymmetric(rng):
    for _ in range(5):
        y, z = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        tau = build_t_matrix(PepsParameters(0.7, y, z)).tau
        assert np.array_equal(tau, -tau.T)


def test_t_matrix_z_normalisation():
    tau = build_t_matrix(PepsParameters(1.0, 1.0, np.sqrt(2))).tau
    assert np.isclose(abs(tau[0, 2]), 1.0)


@pytest.mark.parametrize("t", [0.0, -0.5])
def test_t_matrix_rejects_nonpositive_t(t):
    with pytest.raises(ParameterError):
        build_t_matrix(PepsParameters(t, 0.3, 0.2))


# ---------------------------------------------------------- fiducial state


def test_fiducial_covariance_matches_fock(rng):
    p = PepsParameters(0.8, *rng.uniform(-1.5, 1.5, 2))
    tm = build_t_matrix(p)
    Z = fiducial_pairing_matrix(tm)
    f = fock.annihilators(9)
    K = sum(0.5 * Z[i, j] * (f[i].T @ f[j].T) for i in range(9) for j in range(9) if Z[i, j])
    psi = fock.exp_nilpotent(K, fock.vacuum(9))
    assert np.allclose(fiducial_covariance(tm).assembled(), fock.covariance_of(psi, 9), atol=1e-10)


def test_fiducial_decouples_at_small_t():
    blocks = fiducial_covariance(build_t_matrix(PepsParameters(1e-7, 0.0, 0.0)))
    assert np.max(np.abs(blocks.B)) < 1e-6


def test_fiducial_block_structure(rng):
    p = PepsParameters(0.9, *rng.uniform(-2, 2, 2))
    d = dirac_blocks(fiducial_covariance(build_t_matrix(p)).assembled())
    R, Q = d.Rmat, d.Qmat
    assert np.max(np.abs(R[np.ix_(X_MODES, Y_MODES)])) < 1e-10
    assert np.max(np.abs(Q[np.ix_(X_MODES, X_MODES)])) < 1e-10
    assert np.max(np.abs(Q[np.ix_(Y_MODES, Y_MODES)])) < 1e-10
    # every pair holds one mode of each role
    trace_gap = np.trace(R[np.ix_(Y_MODES, Y_MODES)]) - np.trace(R[np.ix_(X_MODES, X_MODES)])
    assert trace_gap == pytest.approx(0.5j * (len(Y_MODES) - len(X_MODES)), abs=1e-10)


# -------------------------------------------------------------- momentum


def test_momentum_block_normalisation_and_dnorm(rng):
    p = PepsParameters(0.7, 0.4, 1.3)
    for k in rng.uniform(-np.pi, np.pi, (5, 2)):
        b = momentum_block(p, k)
        assert b.P**2 + b.R**2 + b.I**2 == pytest.approx(1.0, abs=1e-8)
        assert b.Dnorm == pytest.approx(np.sqrt(b.R0**2 + b.P0**2 + b.I0**2), abs=1e-8)


def test_momentum_block_parity_and_rotation(rng):
    p = PepsParameters(0.6, 0.9, -0.4)
    for k in rng.uniform(-np.pi, np.pi, (4, 2)):
        b, bm, br = momentum_block(p, k), momentum_block(p, -k), momentum_block(p, rot(k))
        assert (bm.P, bm.R, bm.I) == pytest.approx((-b.P, b.R, -b.I), abs=1e-10)
        assert (br.R, br.P, br.I) == pytest.approx((b.R, -b.I, b.P), abs=1e-10)


def test_momentum_block_at_origin():
    b = momentum_block(PepsParameters(0.8, 0.3, 0.5), (0.0, 0.0))
    assert b.R == pytest.approx(1.0)
    assert abs(b.P) < 1e-12 and abs(b.I) < 1e-12


@pytest.mark.parametrize("case", ["magic", "trivial"])
def test_momentum_block_closed_forms(case):
    t = 0.8
    if case == "magic":
        c = 2 - np.sqrt(2)
        p = PepsParameters(t, *MAGIC)

        def forms(k):
            return (1 - c**2 * t**4 + c**2 / 2 * t**4 * (np.cos(2 * k[0]) + np.cos(2 * k[1])),
                    2 * c * t**2 * np.sin(k[0]), 2 * c * t**2 * np.sin(k[1]))
    else:
        p = PepsParameters(t, 0.0, 0.0)

        def forms(k):
            return (1 - 4 * t**4 + 2 * t**4 * (np.cos(2 * k[0]) + np.cos(2 * k[1])),
                    4 * t**2 * np.sin(k[0]), 4 * t**2 * np.sin(k[1]))
    gamma = None
    for k in [(0.7, -1.1), (2.0, 0.3), (-2.5, 1.9)]:
        b = momentum_block(p, k)
        ref = np.array(forms(k))
        got = np.array([b.R0, b.P0, b.I0])
        gamma = gamma or float(np.dot(got, ref) / np.dot(ref, ref))
        assert gamma > 0
        assert np.allclose(got, gamma * ref, atol=1e-10 * gamma)


def test_channel_matches_closed_form_amplitudes(rng):
    for _ in range(5):
        p = PepsParameters(rng.uniform(0.2, 1.5), *rng.uniform(-3, 3, 2))
        for k in rng.uniform(-np.pi, np.pi, (4, 2)):
            b = momentum_block(p, k)
            a, be = alpha_beta(p, k)
            E = abs(a) ** 2 + abs(be) ** 2
            delta = 2 * np.conj(a) * be / E
            assert (b.R, b.P, b.I) == pytest.approx(((abs(a) ** 2 - abs(be) ** 2) / E, delta.real, -delta.imag),
                                                    abs=1e-8)


def test_harmonic_content():
    p = PepsParameters(0.9, 0.7, 1.6)
    n = 16
    k = 2 * np.pi * np.arange(n) / n
    K1, K2 = np.meshgrid(k, k, indexing="ij")
    P0, I0, R0 = np.moveaxis(bdg_vector(p, K1, K2), -1, 0)
    m = np.add.outer(np.arange(n), np.arange(n)) % 2
    assert np.max(np.abs(np.fft.fft2(R0)[m == 1])) < 1e-9 * n * n
    for f in (P0, I0):
        assert np.max(np.abs(np.fft.fft2(f)[m == 0])) < 1e-9 * n * n


# -------------------------------------------------------------- amplitudes


def test_alpha_beta_matches_determinant_identity(rng):
    for _ in range(20):
        p = PepsParameters(rng.uniform(0.1, 2), *(rng.standard_normal(2) + 1j * rng.standard_normal(2)))
        for k in rng.uniform(-np.pi, np.pi, (20, 2)):
            a, b = alpha_beta(p, k)
            ad, bd = alpha_beta_det(p, k)
            scale = max(1.0, abs(a), abs(b))
            assert abs(a - ad) < 1e-9 * scale and abs(b - bd) < 1e-9 * scale


def test_alpha_beta_rotation(rng):
    p = PepsParameters(0.8, 0.5 + 0.2j, 1.1)
    for k in rng.uniform(-np.pi, np.pi, (10, 2)):
        a, b = alpha_beta(p, k)
        ar, br = alpha_beta(p, rot(k))
        assert ar == pytest.approx(a, abs=1e-10)
        assert br == pytest.approx(-1j * b, abs=1e-10)


def test_alpha_beta_special_points():
    t = 0.9
    for k in [(0.3, 1.2), (-2.0, 0.4)]:
        s = np.sin(k[0]) - 1j * np.sin(k[1])
        a, b = alpha_beta(PepsParameters(t, *MAGIC), k)
        assert a == pytest.approx(16, abs=1e-12)
        assert b == pytest.approx(16 * (2 - np.sqrt(2)) * t**2 * s, abs=1e-10)
        a, b = alpha_beta(PepsParameters(t, 0.0, 0.0), k)
        assert (a, b) == pytest.approx((1, 2 * t**2 * s))
        a, _ = alpha_beta(PepsParameters(t, 1.0, 0.0), k)
        assert a == pytest.approx(16 * np.sin(k[0]) ** 2 * np.sin(k[1]) ** 2, abs=1e-10)


def test_beta_scales_with_t_squared():
    k = (0.4, 1.0)
    b1 = alpha_beta(PepsParameters(0.5, 0.3, 0.7), k)[1]
    b2 = alpha_beta(PepsParameters(1.0, 0.3, 0.7), k)[1]
    assert b2 == pytest.approx(4 * b1)


def test_unpaired_amplitudes_examples():
    assert unpaired_amplitudes(PepsParameters(1, 0, 0)) == pytest.approx((1, 1, 1, 1))
    assert unpaired_amplitudes(PepsParameters(1, 1, 0))[0] == pytest.approx(0)
    a = unpaired_amplitudes(PepsParameters(1, 0, 1))
    assert a[0] == pytest.approx(0) and a[2] == pytest.approx(4)


def test_unpaired_amplitudes_square_to_alpha(rng):
    for _ in range(10):
        p = PepsParameters(0.7, *rng.uniform(-3, 3, 2))
        for k0, at in zip(UNPAIRED_MOMENTA, unpaired_amplitudes(p)):
            a, b = alpha_beta(p, k0)
            assert at**2 == pytest.approx(a.real, abs=1e-10 * max(1, abs(a)))
            assert abs(b) < 1e-10 * max(1, abs(a))


def test_unpaired_amplitudes_pfaffian_route(rng):
    for _ in range(5):
        p = PepsParameters(0.7, *rng.uniform(-2, 2, 2))
        assert unpaired_amplitudes_pfaffian(p) == pytest.approx(unpaired_amplitudes(p), abs=1e-10)


def test_bcs_state_invariants():
    st = bcs_state(PepsParameters(0.8, 0.5, 0.9, 6, 6))
    assert len(st.grid) == 36 - 4
    for k in st.grid:
        assert (abs(k[0]), abs(k[1])) not in {(0.0, 0.0), (np.pi, np.pi), (np.pi, 0.0), (0.0, np.pi)}
    g = st.pairing_function
    k = next(iter(g))
    assert g[k] == pytest.approx(st.grid[k].beta / st.grid[k].alpha)


# -------------------------------------------------------------- dispersion


def test_dispersion_trivial_point(rng):
    t = 0.7
    for k in rng.uniform(-np.pi, np.pi, (5, 2)):
        quoted = 1 + 4 * t**4 - 2 * t**4 * (np.cos(2 * k[0]) + np.cos(2 * k[1]))
        assert dispersion(PepsParameters(t, 0, 0), k) == pytest.approx(quoted)


def test_dispersion_special_values():
    assert dispersion(PepsParameters(1, *MAGIC), (0, 0)) == pytest.approx(256)
    assert dispersion(PepsParameters(1, 0.3, 1.3), (0, 0)) < 1e-10


def test_dispersion_at_unpaired_momenta(rng):
    p = PepsParameters(0.5, *rng.uniform(-2, 2, 2))
    for k0, at in zip(UNPAIRED_MOMENTA, unpaired_amplitudes(p)):
        assert dispersion(p, k0) == pytest.approx(at**4, abs=1e-10)


def test_gapless_scan_small_grid():
    ys = zs = np.linspace(-2, 2, 9)
    E, mask = gapless_scan(ys, zs)
    for i, y in enumerate(ys):
        for j, z in enumerate(zs):
            on = min(abs(abs(z) - abs(1 + s * y)) for s in (1, -1)) < 1e-12 or abs(y * y - z * z - 1) < 1e-12
            assert mask[i, j] == on


# ------------------------------------------------------------ phases, Chern


@pytest.mark.parametrize("yz, label", [
    ((0, 1), PhaseLabel.D), ((1, 0), PhaseLabel.E), (MAGIC, PhaseLabel.GAPPED),
    ((0.3, 1.3), PhaseLabel.A), ((0.4, 0.6), PhaseLabel.B), ((np.sqrt(2), 1), PhaseLabel.C),
])
def test_classify_phase(yz, label):
    assert classify_phase(*yz) is label


@pytest.mark.parametrize("yz, c", [
    (MAGIC, 0), ((0.0, 0.0), 0), ((2.0, 0.5), 0), ((0.4, 0.3), 0), ((0.5, 3.0), 0),
    ((0.4, 0.6), -2), ((np.sqrt(2), 1.0), 2),
])
def test_chern_numbers(yz, c):
    assert chern_number(PepsParameters(1.0, *yz)) == c


def test_chern_rejects_complex():
    with pytest.raises(ParameterError):
        chern_number(PepsParameters(1.0, 0.3j, 0.5))


# -------------------------------------------------------- real-space data


def test_parent_hamiltonian_trivial_point():
    t = 0.6
    h = parent_hamiltonian(PepsParameters(t, 0, 0, 12, 12))
    assert h.hopping[(0, 0)] == pytest.approx(1 - 4 * t**4)
    for x in [(2, 0), (-2, 0), (0, 2), (0, -2)]:
        assert h.hopping[x] == pytest.approx(t**4)
    nn = [(1, 0), (-1, 0), (0, 1), (0, -1)]
    for x in nn:
        assert abs(h.pairing[x]) == pytest.approx(2 * t**2)
    assert h.pairing[(1, 0)] == pytest.approx(-h.pairing[(-1, 0)])
    assert h.pairing[(0, 1)] == pytest.approx(-1j * h.pairing[(1, 0)])
    others = [v for x, v in h.pairing.items() if x not in nn]
    assert max(abs(v) for v in others) < 1e-12


def test_parent_hamiltonian_support_and_sublattices(rng):
    p = PepsParameters(0.8, *rng.uniform(-2, 2, 2), 12, 12)
    h = parent_hamiltonian(p)
    assert h.support_radius() <= 4
    for (x1, x2), v in h.hopping.items():
        if (x1 + x2) % 2:
            assert abs(v) < 1e-10
    for (x1, x2), v in h.pairing.items():
        if (x1 + x2) % 2 == 0:
            assert abs(v) < 1e-10
        lam = ((-x2 + 6) % 12 - 6, (x1 + 6) % 12 - 6)
        assert h.pairing[lam] == pytest.approx(-1j * v, abs=1e-10)
        assert h.hopping[lam] == pytest.approx(h.hopping[(x1, x2)], abs=1e-10)


def test_parent_hamiltonian_magic_point_is_nearest_neighbour():
    h = parent_hamiltonian(PepsParameters(0.7, *MAGIC, 10, 10))
    assert h.support_radius() == 2  # hopping reaches two sites, pairing only one
    assert all(abs(v) < 1e-10 for x, v in h.pairing.items() if abs(x[0]) + abs(x[1]) != 1)


def test_parent_hamiltonian_needs_large_grid():
    with pytest.raises(ParameterError):
        parent_hamiltonian(PepsParameters(0.7, 0.2, 0.3, 6, 6))


def test_correlators_sublattices_and_diagonal():
    p = PepsParameters(0.8, 0.6, 1.7, 10, 10)
    hop, pair = correlators(p)
    for (x1, x2), v in hop.items():
        if (x1 + x2) % 2:
            assert abs(v) < 1e-10
    for (x1, x2), v in pair.items():
        if (x1 + x2) % 2 == 0:
            assert abs(v) < 1e-10
    assert 0 <= hop[(0, 0)] <= 1


def test_correlators_decay_at_magic_point():
    hop, pair = correlators(PepsParameters(0.6324, *MAGIC, 40, 40))
    near = max(abs(pair[(1, 0)]), abs(hop[(2, 0)]))
    far = max(abs(pair[(7, 0)]), abs(hop[(6, 0)]))
    assert far < 1e-2 * near

