"""Gaussian-state algebra: Majorana covariance matrices, Pfaffians, the
Gaussian projection channel and the determinant identity used for the
momentum-space amplitudes.

Majorana convention (0-based, interleaved per Dirac mode ``f_k``)::

    c[2k]   = f_k + f_k^dagger
    c[2k+1] = i (f_k - f_k^dagger)

and the covariance matrix is ``Gamma[l, m] = (i/2) <[c_l, c_m]>``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionError, ShapeError, SingularChannelError

ANTISYM_TOL = 1e-12
SINGULAR_COND = 1e12


def _check_antisymmetric(m: np.ndarray, tol: float = ANTISYM_TOL) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if m.size and np.max(np.abs(m + m.T)) > tol * scale:
        raise ShapeError("matrix is not antisymmetric")
    return m


@dataclass(frozen=True)
class MajoranaCovariance:
    """Real antisymmetric covariance matrix with mode labels.

    ``mode_order`` lists the Dirac modes; Majorana ``2k`` and ``2k+1``
    belong to ``mode_order[k]``.
    """

    matrix: np.ndarray
    mode_order: tuple = field(default_factory=tuple)

    def __post_init__(self):
        m = _check_antisymmetric(np.asarray(self.matrix, dtype=float))
        if m.shape[0] % 2:
            raise DimensionError("covariance matrix must be even-dimensional")
        if self.mode_order and len(self.mode_order) * 2 != m.shape[0]:
            raise ShapeError("mode_order length does not match the matrix")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "mode_order", tuple(self.mode_order))

    @property
    def n_modes(self) -> int:
        return self.matrix.shape[0] // 2

    def is_physical(self, tol: float = 1e-10) -> bool:
        return bool(np.linalg.norm(self.matrix, 2) <= 1 + tol)

    def is_pure(self, tol: float = 1e-10) -> bool:
        m = self.matrix
        return bool(np.max(np.abs(m @ m + np.eye(len(m)))) < tol)

    def to_dirac(self) -> "DiracCovarianceBlocks":
        return dirac_blocks(self.matrix)


@dataclass(frozen=True)
class ChannelBlocks:
    """Split ``M = [[A, B], [-B^T, D]]`` of a fiducial covariance matrix."""

    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    mode_order: tuple = field(default_factory=tuple)

    def __post_init__(self):
        A = _check_antisymmetric(np.asarray(self.A, dtype=float), 1e-10)
        D = _check_antisymmetric(np.asarray(self.D, dtype=float), 1e-10)
        B = np.asarray(self.B, dtype=float)
        if B.shape != (A.shape[0], D.shape[0]):
            raise ShapeError(f"B has shape {B.shape}, expected {(A.shape[0], D.shape[0])}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "D", D)

    @classmethod
    def from_matrix(cls, m: np.ndarray, n_physical_majoranas: int, mode_order=()):
        p = n_physical_majoranas
        return cls(m[:p, :p], m[:p, p:], m[p:, p:], tuple(mode_order))

    def assembled(self) -> np.ndarray:
        return np.block([[self.A, self.B], [-self.B.T, self.D]])


@dataclass(frozen=True)
class DiracCovarianceBlocks:
    """``R[k,l] = (i/2)<[f_k, f_l^dagger]>`` and ``Q[k,l] = (i/2)<[f_k, f_l]>``."""

    Rmat: np.ndarray
    Qmat: np.ndarray

    def gamma(self) -> np.ndarray:
        """Full Dirac covariance in the ``(f, f^dagger)`` basis."""
        R, Q = self.Rmat, self.Qmat
        return np.block([[R, Q], [Q.conj(), R.conj()]])

    def is_pure(self, tol: float = 1e-10) -> bool:
        g = self.gamma()
        return bool(np.max(np.abs(g @ g.conj().T - 0.25 * np.eye(len(g)))) < tol)


def majorana_to_dirac_matrix(n: int) -> np.ndarray:
    """The ``n x 2n`` matrix ``U`` with ``f = U c``."""
    U = np.zeros((n, 2 * n), dtype=complex)
    for k in range(n):
        U[k, 2 * k] = 0.5
        U[k, 2 * k + 1] = -0.5j
    return U


def dirac_blocks(gamma: np.ndarray) -> DiracCovarianceBlocks:
    gamma = np.asarray(gamma)
    U = majorana_to_dirac_matrix(gamma.shape[0] // 2)
    return DiracCovarianceBlocks(U @ gamma @ U.conj().T, U @ gamma @ U.T)


def pairing_state_covariance(Z: np.ndarray) -> np.ndarray:
    """Covariance of ``exp(1/2 sum Z_mn f_m^dag f_n^dag)|0>`` for antisymmetric ``Z``.

    The state is annihilated by ``f_m - sum_n Z_mn f_n^dag``; ``i Gamma`` is
    +1 on the span of those annihilators and -1 on its complement.
    """
    Z = np.asarray(Z, dtype=complex)
    n = Z.shape[0]
    eye = np.eye(n)
    W = np.zeros((n, 2 * n), dtype=complex)
    W[:, 0::2] = 0.5 * (eye - Z)
    W[:, 1::2] = -0.5j * (eye + Z)
    V = W.T
    P = V @ np.linalg.solve(V.conj().T @ V, V.conj().T)
    gamma = -1j * (2 * P - np.eye(2 * n))
    if np.max(np.abs(gamma.imag)) < 1e-9:
        return gamma.real
    return gamma


def pfaffian(m: np.ndarray) -> complex | float:
    """Pfaffian by Parlett-Reid tridiagonalisation with partial pivoting."""
    A = np.array(_check_antisymmetric(m), dtype=complex if np.iscomplexobj(m) else float)
    n = A.shape[0]
    if n % 2:
        raise DimensionError("Pfaffian needs an even-dimensional matrix")
    pf = 1.0
    for k in range(0, n - 1, 2):
        kp = k + 1 + int(np.argmax(np.abs(A[k + 1:, k])))
        if kp != k + 1:
            A[[k + 1, kp], :] = A[[kp, k + 1], :]
            A[:, [k + 1, kp]] = A[:, [kp, k + 1]]
            pf = -pf
        if A[k + 1, k] == 0:
            return 0.0 * pf
        pf = pf * A[k, k + 1]
        if k + 2 < n:
            tau = A[k, k + 2:] / A[k, k + 1]
            col = A[k + 2:, k + 1].copy()
            A[k + 2:, k + 2:] += np.outer(tau, col) - np.outer(col, tau)
    return pf


def gaussian_channel(blocks: ChannelBlocks, g_in: np.ndarray) -> np.ndarray:
    """Output covariance ``A + B (D - G_in)^{-1} B^T`` of the projected state."""
    g_in = np.asarray(g_in)
    if g_in.shape != blocks.D.shape:
        raise ShapeError(f"g_in has shape {g_in.shape}, expected {blocks.D.shape}")
    X = blocks.D - g_in
    cond = float(np.linalg.cond(X))
    if not np.isfinite(cond) or cond > SINGULAR_COND:
        raise SingularChannelError(f"D - G_in is singular (cond={cond:.3g})", cond)
    out = blocks.A + blocks.B @ np.linalg.solve(X, blocks.B.T)
    return out


def channel_determinant(blocks: ChannelBlocks, g_in: np.ndarray) -> complex:
    g_in = np.asarray(g_in)
    if g_in.shape != blocks.D.shape:
        raise ShapeError(f"g_in has shape {g_in.shape}, expected {blocks.D.shape}")
    return np.linalg.det(blocks.D - g_in)


def det_identity_F(Am, Bm, Cm, Dm) -> complex:
    """``det(A D B C^T + 1)``."""
    mats = [np.asarray(x, dtype=complex) for x in (Am, Bm, Cm, Dm)]
    Am, Bm, Cm, Dm = mats
    try:
        prod = Am @ Dm @ Bm @ Cm.T
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    if prod.shape[0] != prod.shape[1]:
        raise ShapeError(f"product has non-square shape {prod.shape}")
    return np.linalg.det(prod + np.eye(prod.shape[0]))


def covariance_from_blocks(blocks: Sequence[np.ndarray]) -> np.ndarray:
    """Block-diagonal direct sum, used for assembling bond covariances."""
    from scipy.linalg import block_diag

    return block_diag(*blocks)
