"""Jordan-Wigner encodings of fermionic Fock spaces.

Two encodings live here.

* Dense (small systems): basis index bits are most-significant-first, so
  mode ``j`` of ``n`` sits at bit ``n-1-j`` and ``np.kron`` follows mode order.
  The basis vector with occupations ``n_0 .. n_{n-1}`` is
  ``(f_0^dag)^{n_0} ... (f_{n-1}^dag)^{n_{n-1}} |0>``.
* Sparse (lattice builds): a state is a pair of arrays ``(keys, amps)``;
  mode at position ``p`` is bit ``p`` of the key, positions are ordered
  low to high, with the same monomial convention as above.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sp

_A = sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))
_Z = sp.csr_matrix(np.diag([1.0, -1.0]))
_I = sp.identity(2, format="csr")


@lru_cache(maxsize=32)
def annihilators(n: int) -> tuple:
    """Sparse matrices ``f_0 .. f_{n-1}`` on ``2**n`` dimensions."""
    ops = []
    for j in range(n):
        m = sp.identity(1, format="csr")
        for i in range(n):
            m = sp.kron(m, _Z if i < j else (_A if i == j else _I), format="csr")
        ops.append(m)
    return tuple(ops)


def majoranas(n: int) -> list:
    out = []
    for f in annihilators(n):
        fd = f.T.tocsr()
        out.append((f + fd).tocsr())
        out.append((1j * (f - fd)).tocsr())
    return out


def vacuum(n: int) -> np.ndarray:
    v = np.zeros(2**n, dtype=complex)
    v[0] = 1.0
    return v


def exp_nilpotent(K: sp.spmatrix, vec: np.ndarray, max_order: int = 64) -> np.ndarray:
    """``exp(K) vec`` for nilpotent ``K`` by summing the terminating series."""
    out = vec.astype(complex).copy()
    term = out.copy()
    for order in range(1, max_order + 1):
        term = K @ term / order
        if not np.any(term):
            return out
        out = out + term
    raise ValueError("operator is not nilpotent within max_order")


def covariance_of(psi: np.ndarray, n: int) -> np.ndarray:
    """``Gamma[l,m] = (i/2) <[c_l, c_m]>`` of a normalised-or-not dense state."""
    psi = np.asarray(psi, dtype=complex)
    norm = np.vdot(psi, psi).real
    cs = majoranas(n)
    cpsi = [c @ psi for c in cs]
    g = np.zeros((2 * n, 2 * n))
    for l in range(2 * n):
        for m in range(l + 1, 2 * n):
            # <c_l c_m> - <c_m c_l> = 2i Im<c_l c_m> because c's are Hermitian
            val = np.vdot(cpsi[l], cpsi[m]) / norm
            g[l, m] = (0.5j * (val - np.conj(val))).real
            g[m, l] = -g[l, m]
    return g


def occupations(index: int, n: int) -> tuple:
    """Dense-basis occupation tuple (mode 0 first)."""
    return tuple((index >> (n - 1 - j)) & 1 for j in range(n))


def dense_to_sparse(vec: np.ndarray, n: int, tol: float = 0.0):
    """Convert a dense vector to ``(keys, amps)`` with mode ``j`` at bit ``j``."""
    idx = np.nonzero(np.abs(vec) > tol)[0]
    keys = np.zeros(len(idx), dtype=np.int64)
    for j in range(n):
        keys |= ((idx >> (n - 1 - j)) & 1).astype(np.int64) << j
    return keys, vec[idx].astype(complex)


def popcount(x: np.ndarray) -> np.ndarray:
    return np.bitwise_count(np.asarray(x, dtype=np.int64).view(np.uint64)).astype(np.int64)


def jw_sign(keys: np.ndarray, pos: int) -> np.ndarray:
    """``(-1)**(occupied modes before position pos)``."""
    below = keys & np.int64((1 << pos) - 1)
    return 1 - 2 * (popcount(below) & 1)
