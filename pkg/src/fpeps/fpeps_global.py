"""Globally U(1)-invariant Gaussian fermionic PEPS with two virtual fermions
per bond: parametrisation, momentum-space covariance, BCS amplitudes,
parent Hamiltonian, correlators and phase classification.

Geometry
--------
Sites ``x = (x1, x2)``; a site is even when ``x1 + x2`` is even.  Each site
carries a physical mode ``psi`` and virtual modes ``l+ l- r+ r- u+ u- d+ d-``.
On even sites the "first-role" modes are ``psi, l+, r-, u-, d+`` and the
second-role modes ``l-, r+, u+, d-``; on odd sites ``+`` and ``-`` swap.
The fiducial operator is ``exp(sum_ij T_ij X_i^dag Y_j^dag)`` with ``X`` the
first-role and ``Y`` the second-role list.

Fiducial mode order (used for covariance matrices) is
``[X0, X1, X2, Y1, Y2, X3, X4, Y3, Y4]``, i.e. on even sites
``psi, l+, r-, l-, r+, u-, d+, u+, d-``.  With this order the fiducial
covariance is the same on both sublattices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ParameterError, SingularChannelError, NondeterminateChern
from .gaussian_core import (
    ChannelBlocks,
    MajoranaCovariance,
    channel_determinant,
    det_identity_F,
    gaussian_channel,
    pairing_state_covariance,
    pfaffian,
)

ETA = np.exp(1j * np.pi / 4)
SQRT2 = math.sqrt(2.0)
GAPLESS_TOL = 1e-9

FIRST_ROLE = {
    0: ("psi", "l+", "r-", "u-", "d+"),
    1: ("psi", "l-", "r+", "u+", "d-"),
}
SECOND_ROLE = {
    0: ("l-", "r+", "u+", "d-"),
    1: ("l+", "r-", "u-", "d+"),
}
VIRTUAL_LABELS = ("l+", "l-", "r+", "r-", "u+", "u-", "d+", "d-")


def fiducial_mode_order(parity: int) -> tuple:
    X, Y = FIRST_ROLE[parity % 2], SECOND_ROLE[parity % 2]
    return (X[0], X[1], X[2], Y[0], Y[1], X[3], X[4], Y[2], Y[3])


@dataclass(frozen=True)
class PepsParameters:
    """Variational triple plus lattice extents."""

    t: float
    y: complex
    z: complex
    L1: int = 8
    L2: int = 8

    def __post_init__(self):
        if self.L1 < 1 or self.L2 < 1:
            raise ParameterError("lattice extents must be positive")

    @property
    def is_real(self) -> bool:
        return complex(self.y).imag == 0 and complex(self.z).imag == 0

    def require_fermionic(self):
        if not self.t > 0:
            raise ParameterError("the fermionic state needs t > 0")


@dataclass(frozen=True)
class TMatrix:
    entries: np.ndarray
    parity: int = 0

    @property
    def tau(self) -> np.ndarray:
        return self.entries[1:, :]

    @property
    def row0(self) -> np.ndarray:
        return self.entries[0, :]


def t_matrix_entries(t: float, y: complex, z: complex) -> np.ndarray:
    w = z / SQRT2
    return np.array(
        [
            [t, ETA**2 * t, ETA * t, ETA**3 * t],
            [0, y, w, w],
            [-y, 0, -w, w],
            [-w, w, 0, y],
            [-w, -w, -y, 0],
        ],
        dtype=complex,
    )


def build_t_matrix(params: PepsParameters, parity: int = 0, allow_zero_t: bool = False) -> TMatrix:
    if params.t < 0 or (params.t == 0 and not allow_zero_t):
        raise ParameterError(f"t must be positive, got {params.t}")
    return TMatrix(t_matrix_entries(params.t, params.y, params.z), parity % 2)


def fiducial_pairing_matrix(tm: TMatrix) -> np.ndarray:
    """Antisymmetric ``Z`` with ``A|0> = exp(1/2 f^dag Z f^dag)|0>`` in fiducial order."""
    X = [0, 1, 2, 5, 6]
    Y = [3, 4, 7, 8]
    Z = np.zeros((9, 9), dtype=complex)
    for i, xi in enumerate(X):
        for j, yj in enumerate(Y):
            Z[xi, yj] = tm.entries[i, j]
            Z[yj, xi] = -tm.entries[i, j]
    return Z


def fiducial_covariance(tm: TMatrix) -> ChannelBlocks:
    """Covariance ``M = [[A, B], [-B^T, D]]`` of ``A|Omega>`` (A is 2x2)."""
    gamma = pairing_state_covariance(fiducial_pairing_matrix(tm))
    cov = MajoranaCovariance(gamma, fiducial_mode_order(tm.parity))
    return ChannelBlocks.from_matrix(cov.matrix, 2, cov.mode_order)


# bonds in fiducial positions: (position at x, position at x+e, direction, sign c)
# the bond state is exp(c q^dag p^dag)|0> with p at x and q at x+e
_BONDS = ((2, 1, 0, 1.0), (4, 3, 0, 1.0), (5, 6, 1, -1.0), (7, 8, 1, -1.0))


def _bond_projection_blocks(c: float) -> np.ndarray:
    Z = np.array([[0, -c], [c, 0]], dtype=complex)
    return -pairing_state_covariance(Z)


def input_covariance(k) -> np.ndarray:
    """``G_in(k)`` (16x16) for the virtual modes in fiducial positions 1..8.

    Real-space bond projections enter as minus the bond-state covariance;
    the Fourier symbol is ``G(k) = sum_r g(r) exp(-i k.r)`` with
    ``g_ab(r) = g[(x+r, a), (x, b)]``.
    """
    k = np.asarray(k, dtype=float)
    G = np.zeros((16, 16), dtype=complex)
    for p, q, direction, c in _BONDS:
        g = _bond_projection_blocks(c)
        ph = np.exp(1j * k[direction])
        ip = slice(2 * (p - 1), 2 * p)
        iq = slice(2 * (q - 1), 2 * q)
        G[ip, iq] += g[0:2, 2:4] * ph
        G[iq, ip] += g[2:4, 0:2] / ph
    return G


@dataclass(frozen=True)
class MomentumBlock:
    k: tuple
    P: float
    R: float
    I: float
    P0: float
    R0: float
    I0: float
    Dnorm: float
    alpha: complex
    beta: complex


def channel_output(params: PepsParameters, k) -> tuple[np.ndarray, complex]:
    """Unnormalised-free output ``G_out(k)`` and ``det(D - G_in(k))``."""
    blocks = fiducial_covariance(build_t_matrix(params, 0))
    g_in = input_covariance(k)
    return gaussian_channel(blocks, g_in), channel_determinant(blocks, g_in)



def momentum_block(params: PepsParameters, k) -> MomentumBlock:
    """Channel-side covariance at ``k`` plus the closed-form amplitudes.

    The 2x2 output symbol has the form ``[[iP, R+iI], [-R+iI, -iP]]``; the
    unnormalised ``P0, R0, I0`` are rescaled by ``Dnorm = |det(D - G_in)|``.
    """
    k = (float(k[0]), float(k[1]))
    try:
        G, det = channel_output(params, k)
    except SingularChannelError as exc:
        raise SingularChannelError(f"{exc} at k={k}", exc.cond) from None
    P = float(G[0, 0].imag)
    R = float(G[0, 1].real)
    I = float(G[0, 1].imag)
    dnorm = float(abs(det))
    a, b = alpha_beta(params, k)
    return MomentumBlock(k, P, R, I, P * dnorm, R * dnorm, I * dnorm, dnorm, a, b)


def _coefficients(y, z):
    A0 = (1 + y**4) ** 2 - 4 * y**6 * z**2 + 3 * (1 + 2 * y**4) * z**4 - 4 * y**2 * z**6 + z**8
    A1 = -2 * z**2 * (1 + y**4 + z**4 - 2 * y**2 * (1 + z**2))
    A2 = 4 * y**4 * z**2 - 2 * y**2 * (z**4 + 1) + z**4 - 2 * y**6
    A3 = 0.5 * (z**2 - 2 * y**2) ** 2
    B1 = ((1 + z**2) * (1 + z**4 - 2 * y * z**3) + y**2 * (1 + 2 * z**2 - z**4)
          + 2 * z * y**3 * (2 * z**2 - 1) - y**4 * (z**2 - 1) + y**5 * (y - 2 * z))
    re = y * (z - y) * (1 + y**2 - z**2)
    im = 0.5 * z * (-2 * y + 2 * y**3 + z - 3 * y**2 * z + z**3)
    # B2 and B2* are two distinct polynomials; "*" is a label, not conjugation
    return (A0, A1, A2, A3), (B1, re + 1j * im, re - 1j * im)


def alpha_beta(params: PepsParameters, k) -> tuple[complex, complex]:
    """Closed-form BCS amplitudes ``alpha(k)``, ``beta(k)``.

    Evaluated in extended precision: near the gapless curves ``alpha`` is a
    small difference of degree-8 polynomials.
    """
    y, z = np.clongdouble(params.y), np.clongdouble(params.z)
    (A0, A1, A2, A3), (B1, B2, B2s) = _coefficients(y, z)
    k1, k2 = np.longdouble(k[0]), np.longdouble(k[1])
    c = np.cos
    s = np.sin
    alpha = (A0 + A1 * (c(k1 + k2) + c(k1 - k2)) + A2 * (c(2 * k1) + c(2 * k2))
             + A3 * (c(2 * k1 + 2 * k2) + c(2 * k1 - 2 * k2)))
    t2 = 2 * params.t**2
    beta = (t2 * B1 * (s(k1) - 1j * s(k2))
            + t2 * B2 * (s(k1 + 2 * k2) - 1j * s(k2 - 2 * k1))
            - t2 * B2s * (s(2 * k2 - k1) + 1j * s(k2 + 2 * k1)))
    return complex(alpha), complex(beta)


def shift_matrix(k) -> np.ndarray:
    """Momentum-space bond contraction ``S(k)`` on the virtual index order (l-, r+, u+, d-)."""
    a, b = np.exp(1j * k[0]), np.exp(1j * k[1])
    return np.array([[0, -1 / a, 0, 0], [a, 0, 0, 0], [0, 0, 0, -1 / b], [0, 0, b, 0]], dtype=complex)


def _raw_det_amplitudes(T: np.ndarray, k) -> tuple[complex, complex]:
    S = shift_matrix(k)
    alpha = det_identity_F(S, S, T[1:], T[1:])

    def with_x(x):
        m = np.zeros((5, 5), dtype=complex)
        m[0, 0] = -x
        m[1:, 1:] = S
        return m

    # F(S_X, S, T, T) is affine in X: two evaluations give the exact slope
    beta = det_identity_F(with_x(1.0), S, T, T) - det_identity_F(with_x(0.0), S, T, T)
    return alpha, beta


def alpha_beta_det(params: PepsParameters, k) -> tuple[complex, complex]:
    """Amplitudes from the determinant identity, in the closed-form convention.

    The literal identity yields the complex conjugate amplitudes of the
    conjugated couplings; undoing both conjugations matches ``alpha_beta``.
    """
    T = t_matrix_entries(params.t, np.conj(params.y), np.conj(params.z))
    a, b = _raw_det_amplitudes(T, k)
    return complex(np.conj(a)), complex(np.conj(b))


UNPAIRED_MOMENTA = ((0.0, 0.0), (math.pi, math.pi), (math.pi, 0.0), (0.0, math.pi))


def unpaired_amplitudes(params: PepsParameters) -> tuple:
    """``alpha~`` at (0,0), (pi,pi), (pi,0), (0,pi)."""
    y, z = complex(params.y), complex(params.z)
    a0 = (1 - (y + z) ** 2) * (1 - (y - z) ** 2)
    api = (1 - (y**2 - z**2)) ** 2
    return tuple(_real_if_close(v) for v in (a0, a0, api, api))


def unpaired_amplitudes_pfaffian(params: PepsParameters) -> tuple:
    """Independent route: ``Pf(S^-1 + tau) Pf(S^-1 - tau)`` with real ``S(k0)``."""
    tau = t_matrix_entries(params.t, params.y, params.z)[1:]
    out = []
    for k0 in UNPAIRED_MOMENTA:
        Sinv = np.linalg.inv(shift_matrix(k0).real)
        out.append(_real_if_close(pfaffian(Sinv + tau) * pfaffian(Sinv - tau)))
    return tuple(out)


def _real_if_close(v, tol=1e-12):
    v = complex(v)
    return v.real if abs(v.imag) <= tol * max(1.0, abs(v)) else v


def dispersion(params: PepsParameters, k) -> float:
    a, b = alpha_beta(params, k)
    return abs(a) ** 2 + abs(b) ** 2


def brillouin_zone(L1: int, L2: int) -> np.ndarray:
    """Momenta ``2 pi n / L`` folded into (-pi, pi], shape (L1, L2, 2)."""
    def axis(L):
        k = 2 * np.pi * np.arange(L) / L
        return np.where(k > np.pi + 1e-12, k - 2 * np.pi, k)

    K1, K2 = np.meshgrid(axis(L1), axis(L2), indexing="ij")
    return np.stack([K1, K2], axis=-1)


def alpha_beta_grid(params: PepsParameters, k1: np.ndarray, k2: np.ndarray):
    """Vectorised ``alpha_beta`` over arrays of momenta."""
    (A0, A1, A2, A3), (B1, B2, B2s) = _coefficients(complex(params.y), complex(params.z))
    c, s = np.cos, np.sin
    alpha = (A0 + A1 * (c(k1 + k2) + c(k1 - k2)) + A2 * (c(2 * k1) + c(2 * k2))
             + A3 * (c(2 * k1 + 2 * k2) + c(2 * k1 - 2 * k2)))
    t2 = 2 * params.t**2
    beta = (t2 * B1 * (s(k1) - 1j * s(k2))
            + t2 * B2 * (s(k1 + 2 * k2) - 1j * s(k2 - 2 * k1))
            - t2 * B2s * (s(2 * k2 - k1) + 1j * s(k2 + 2 * k1)))
    return alpha + 0j * k1, beta + 0j * k1


def bdg_vector(params: PepsParameters, k1, k2):
    """Unnormalised ``(P0, I0, R0)`` with ``R0 = |a|^2 - |b|^2`` and ``P0 - i I0 = 2 conj(a) b``."""
    a, b = alpha_beta_grid(params, np.asarray(k1, float), np.asarray(k2, float))
    delta = 2 * np.conj(a) * b
    return np.stack([delta.real, -delta.imag, np.abs(a) ** 2 - np.abs(b) ** 2], axis=-1)


def min_dispersion(params: PepsParameters, n_k: int = 16) -> float:
    """``min_k E(k)`` over an ``n_k x n_k`` grid that contains the unpaired momenta."""
    if n_k % 2:
        raise ParameterError("n_k must be even so the grid contains k = 0 and pi")
    k = 2 * np.pi * np.arange(n_k) / n_k
    K1, K2 = np.meshgrid(k, k, indexing="ij")
    a, b = alpha_beta_grid(params, K1, K2)
    return float(np.min(np.abs(a) ** 2 + np.abs(b) ** 2))


def gapless_scan(ys, zs, t: float = 1.0, n_k: int = 16, tol: float = GAPLESS_TOL):
    """``(E_min, mask)`` over the ``(y, z)`` grid; ``mask`` flags ``E_min < tol``."""
    E = np.array([[min_dispersion(PepsParameters(t, y, z), n_k) for z in zs] for y in ys])
    return E, E < tol


class PhaseLabel(str, Enum):
    GAPPED = "gapped"
    A = "A"
    B = "B"
    C = "C"
    D = "D"
    E = "E"


def classify_phase(y: complex, z: complex, tol: float = GAPLESS_TOL) -> PhaseLabel:
    """Gapped unless ``alpha~(0,0)`` or ``alpha~(pi,0)`` vanishes; then the line tag."""
    y, z = complex(y), complex(z)
    a0 = (1 - (y + z) ** 2) * (1 - (y - z) ** 2)
    api = 1 - (y**2 - z**2)
    if abs(a0) >= tol and abs(api) >= tol:
        return PhaseLabel.GAPPED
    if abs(y) < tol and abs(z * z - 1) < tol:
        return PhaseLabel.D
    if abs(z) < tol and abs(y * y - 1) < tol:
        return PhaseLabel.E
    if abs((z - y) ** 2 - 1) < tol:
        return PhaseLabel.A
    if abs((z + y) ** 2 - 1) < tol:
        return PhaseLabel.B
    return PhaseLabel.C


def _solid_angles(n: np.ndarray) -> np.ndarray:
    """Signed solid angle of each plaquette, split into two triangles."""
    a = n
    b = np.roll(n, -1, axis=0)
    c = np.roll(b, -1, axis=1)
    d = np.roll(n, -1, axis=1)

    def tri(x, y, w):
        num = np.einsum("...i,...i", x, np.cross(y, w))
        den = 1 + np.einsum("...i,...i", x, y) + np.einsum("...i,...i", y, w) + np.einsum("...i,...i", w, x)
        return 2 * np.arctan2(num, den)

    return tri(a, b, c) + tri(a, c, d)


def chern_number(params: PepsParameters, n_grid: int = 64, max_grid: int = 1024) -> int:
    """Winding of the unit vector along ``(P0, I0, R0)`` over the Brillouin zone.

    The grid is offset by half a step so none of the four touching momenta is
    a sample point; those singular points then sit inside plaquettes and drop
    out of the field-strength sum.  The grid is refined until every plaquette
    subtends well under a hemisphere.
    """
    if not params.is_real:
        raise ParameterError("Chern numbers are defined here for real (y, z) only")
    N = n_grid
    while True:
        k = 2 * np.pi * (np.arange(N) + 0.5) / N - np.pi
        K1, K2 = np.meshgrid(k, k, indexing="ij")
        v = bdg_vector(params, K1, K2)
        norm = np.linalg.norm(v, axis=-1, keepdims=True)
        if np.any(norm == 0):
            raise NondeterminateChern("BdG vector vanishes on a sample point")
        F = _solid_angles(v / norm)
        fmax = float(np.max(np.abs(F)))
        if fmax < 1.0 or N >= max_grid:
            break
        N *= 2
    if abs(fmax - np.pi) < 1e-6:
        raise NondeterminateChern(f"plaquette field strength {fmax} at the branch cut")
    c = F.sum() / (4 * np.pi)
    if abs(c - round(c)) > 1e-6:
        raise NondeterminateChern(f"non-integer winding {c}")
    return int(round(c))


@dataclass(frozen=True)
class ParentHamiltonianCoeffs:
    """Real-space hopping ``R0^(x)`` and pairing ``Delta0^(x)`` keyed by displacement."""

    hopping: dict
    pairing: dict
    L1: int
    L2: int

    def support_radius(self, tol: float = 1e-9) -> int:
        r = 0
        for table in (self.hopping, self.pairing):
            for (x1, x2), v in table.items():
                if abs(v) > tol:
                    r = max(r, abs(x1), abs(x2))
        return r


def _centred(L):
    return [(i + L // 2) % L - L // 2 for i in range(L)]


def _real_space(values: np.ndarray, L1: int, L2: int) -> dict:
    """``f^(x) = (1/N) sum_k exp(i k.x) f(k)`` with the grid from ``brillouin_zone``."""
    # numpy's ifft uses exp(+2 pi i n x / L) / L, which is exactly this transform
    arr = np.fft.ifft2(values)
    out = {}
    for i, x1 in enumerate(_centred(L1)):
        for j, x2 in enumerate(_centred(L2)):
            out[(x1, x2)] = arr[x1 % L1, x2 % L2]
    return out


def _grid_fields(params: PepsParameters, L1: int, L2: int):
    k = 2 * np.pi * np.arange(L1) / L1, 2 * np.pi * np.arange(L2) / L2
    K1, K2 = np.meshgrid(*k, indexing="ij")
    return alpha_beta_grid(params, K1, K2)


def parent_hamiltonian(params: PepsParameters, L1: int | None = None, L2: int | None = None) -> ParentHamiltonianCoeffs:
    """Coefficients of the real-space parent Hamiltonian.

    Uses ``R0 = |alpha|^2 - |beta|^2`` and ``Delta0 = 2 conj(alpha) beta``,
    rescaled so that the largest ``|alpha(k)|`` equals one.
    """
    L1 = params.L1 if L1 is None else L1
    L2 = params.L2 if L2 is None else L2
    if min(L1, L2) < 8:
        raise ParameterError("the range-4 parent Hamiltonian needs L1, L2 >= 8")
    a, b = _grid_fields(params, L1, L2)
    scale = float(np.max(np.abs(a))) or 1.0
    a, b = a / scale, b / scale
    R0 = np.abs(a) ** 2 - np.abs(b) ** 2
    D0 = 2 * np.conj(a) * b
    hop = {x: float(v.real) for x, v in _real_space(R0, L1, L2).items()}
    pair = {x: complex(v) for x, v in _real_space(D0, L1, L2).items()}
    return ParentHamiltonianCoeffs(hop, pair, L1, L2)


def correlators(params: PepsParameters, L1: int | None = None, L2: int | None = None):
    """``<psi_x^dag psi_x'>`` and ``<psi_x^dag psi_x'^dag>`` keyed by ``x' - x``.

    Uses the normalised ``R`` and ``Delta``; the four unpaired momenta carry
    ``R = 1`` and ``Delta = 0`` (they stay empty).
    """
    L1 = params.L1 if L1 is None else L1
    L2 = params.L2 if L2 is None else L2
    a, b = _grid_fields(params, L1, L2)
    E = np.abs(a) ** 2 + np.abs(b) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        R = np.where(E > 0, (np.abs(a) ** 2 - np.abs(b) ** 2) / E, 1.0)
        D = np.where(E > 0, 2 * np.conj(a) * b / E, 0.0)
    Rh = _real_space(R, L1, L2)
    Dh = _real_space(D, L1, L2)
    hop = {x: 0.5 * ((1.0 if x == (0, 0) else 0.0) - Rh[x].real) for x in Rh}
    pair = {x: complex(-0.5 * Dh[x]) for x in Dh}
    return hop, pair


@dataclass(frozen=True)
class BcsState:
    params: PepsParameters
    grid: dict
    unpaired: tuple

    @property
    def pairing_function(self) -> dict:
        """``g(k) = beta / alpha`` on the paired momenta."""
        return {k: blk.beta / blk.alpha for k, blk in self.grid.items() if blk.alpha != 0}


def bcs_state(params: PepsParameters) -> BcsState:
    """Momentum blocks over the discrete zone; unpaired momenta stay off the channel path."""
    unpaired = {(round(a, 12), round(b, 12)) for a, b in UNPAIRED_MOMENTA}
    unpaired |= {(round(-a, 12), round(-b, 12)) for a, b in UNPAIRED_MOMENTA}
    grid = {}
    for k in brillouin_zone(params.L1, params.L2).reshape(-1, 2):
        key = (float(k[0]), float(k[1]))
        if (round(abs(key[0]), 12), round(abs(key[1]), 12)) in unpaired:
            continue
        grid[key] = momentum_block(params, key)
    return BcsState(params, grid, unpaired_amplitudes(params))
