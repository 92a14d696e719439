"""Locally U(1)-invariant PEPS with l=1 gauge bosons.

Each vertex hosts the physical fermion ``psi``, eight virtual fermions and
two bosonic links: ``s`` on the link to the right and ``t`` on the link
above.  Link states are ordered ``(|+1>, |0>, |-1>)``.

The gauged fiducial operator replaces ``r+^dag -> S+^s r+^dag``,
``r-^dag -> S-^s r-^dag`` and likewise ``u+-`` with the ``t`` link.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fock
from .errors import ConvergenceError, GeometryError, ParameterError, ResourceError, StaggeringError
from .fpeps_global import (
    FIRST_ROLE,
    SECOND_ROLE,
    PepsParameters,
    TMatrix,
    build_t_matrix,
    fiducial_mode_order,
)

LINK_VALUES = (1, 0, -1)


@dataclass(frozen=True)
class LinkSpace:
    """Truncated link Hilbert space with ``l = 1``."""

    dimension: int = 3
    Sigma: np.ndarray = field(default_factory=lambda: np.diag([1.0, 0.0, -1.0]))
    SigmaPlus: np.ndarray = field(
        default_factory=lambda: np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
    )
    SigmaMinus: np.ndarray = field(
        default_factory=lambda: np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    )

    def phase(self, q: float) -> np.ndarray:
        """``exp(i q Sigma)``."""
        return np.diag(np.exp(1j * q * np.diag(self.Sigma)))

    @staticmethod
    def index(value: int) -> int:
        return LINK_VALUES.index(value)


LINK = LinkSpace()


@dataclass(frozen=True)
class GradedOperator:
    """Sparse operator on ``fermions (x) bosons`` with a fermion-parity grading.

    ``fermions`` lists the fermionic mode labels in Jordan-Wigner order and
    ``bosons`` the link labels; the basis index is
    ``fermion_index * 3**n_bosons + boson_index`` with both parts
    most-significant-first.  Because the Jordan-Wigner strings are built
    into the fermionic factors, composition is the plain matrix product and
    the grading signs come out automatically.
    """

    action: sp.csr_matrix
    parity: int
    fermions: tuple
    bosons: tuple = ()

    @property
    def support(self) -> tuple:
        return self.fermions + self.bosons

    @property
    def dim(self) -> int:
        return 2 ** len(self.fermions) * 3 ** len(self.bosons)

    def __matmul__(self, other: "GradedOperator") -> "GradedOperator":
        self._check_same_space(other)
        return GradedOperator((self.action @ other.action).tocsr(), (self.parity + other.parity) % 2,
                              self.fermions, self.bosons)

    def __add__(self, other: "GradedOperator") -> "GradedOperator":
        self._check_same_space(other)
        if self.parity != other.parity:
            raise ParameterError("cannot add operators of different parity")
        return GradedOperator((self.action + other.action).tocsr(), self.parity, self.fermions, self.bosons)

    def scale(self, c: complex) -> "GradedOperator":
        return GradedOperator((c * self.action).tocsr(), self.parity, self.fermions, self.bosons)

    def dagger(self) -> "GradedOperator":
        return GradedOperator(self.action.conj().T.tocsr(), self.parity, self.fermions, self.bosons)

    def conjugate_by(self, U) -> "GradedOperator":
        """``U O U^dag`` for a unitary given as a sparse or dense matrix."""
        U = sp.csr_matrix(U)
        return GradedOperator((U @ self.action @ U.conj().T).tocsr(), self.parity, self.fermions, self.bosons)

    def _check_same_space(self, other):
        if self.fermions != other.fermions or self.bosons != other.bosons:
            raise ParameterError("operators act on different local spaces")

    def check_parity(self, tol: float = 1e-12) -> bool:
        """True when the operator only connects states of the declared relative parity."""
        nf, nb = len(self.fermions), len(self.bosons)
        fp = np.array([bin(i).count("1") & 1 for i in range(2**nf)])
        par = np.repeat(fp, 3**nb)
        coo = self.action.tocoo()
        bad = (par[coo.row] + par[coo.col] + self.parity) % 2 == 1
        return bool(np.all(np.abs(coo.data[bad]) < tol))


@lru_cache(maxsize=4)
def _local_ops(n_fermions: int, n_bosons: int):
    fs = fock.annihilators(n_fermions)
    eye_b = sp.identity(3**n_bosons, format="csr")
    ferm = [sp.kron(f, eye_b, format="csr") for f in fs]
    bos = {}
    for j in range(n_bosons):
        for name, m in (("+", LINK.SigmaPlus), ("-", LINK.SigmaMinus), ("z", LINK.Sigma)):
            op = sp.identity(2**n_fermions, format="csr")
            for i in range(n_bosons):
                op = sp.kron(op, sp.csr_matrix(m) if i == j else sp.identity(3, format="csr"), format="csr")
            bos[(j, name)] = op
    return ferm, bos


def fiducial_labels(parity: int) -> tuple:
    return fiducial_mode_order(parity)


def _substitution(label: str):
    """Boson factor attached to ``label^dag``: (link index, '+' or '-') or None."""
    if label in ("r+", "r-"):
        return 0, label[1]
    if label in ("u+", "u-"):
        return 1, label[1]
    return None


def build_k_operator(tm: TMatrix, gauged: bool = True, flip_s: bool = False) -> GradedOperator:
    """Exponent ``K = sum_ij T_ij X_i^dag Y_j^dag`` with the link substitutions.

    ``flip_s`` attaches the wrong raising/lowering operator to the ``r``
    modes; it exists only as a negative control for the Gauss-law checks.
    """
    labels = fiducial_mode_order(tm.parity)
    nb = 2 if gauged else 0
    ferm, bos = _local_ops(9, nb)
    pos = {lab: i for i, lab in enumerate(labels)}
    X, Y = FIRST_ROLE[tm.parity], SECOND_ROLE[tm.parity]
    dim = 2**9 * 3**nb
    K = sp.csr_matrix((dim, dim), dtype=complex)
    for i, xl in enumerate(X):
        for j, yl in enumerate(Y):
            c = tm.entries[i, j]
            if c == 0:
                continue
            term = ferm[pos[xl]].T @ ferm[pos[yl]].T
            if gauged:
                for lab in (xl, yl):
                    sub = _substitution(lab)
                    if sub is not None:
                        if flip_s and sub[0] == 0:
                            sub = (0, "-" if sub[1] == "+" else "+")
                        term = bos[sub] @ term
            K = K + c * term
    return GradedOperator(K.tocsr(), 0, labels, ("s", "t") if gauged else ())


def exp_graded(K: GradedOperator) -> GradedOperator:
    """``exp(K)`` for a nilpotent even operator by the terminating series."""
    out = sp.identity(K.dim, dtype=complex, format="csr")
    term = out
    for order in range(1, 64):
        term = (term @ K.action) / order
        term.eliminate_zeros()
        if term.nnz == 0:
            return GradedOperator(out.tocsr(), 0, K.fermions, K.bosons)
        out = out + term
    raise ParameterError("exponent is not nilpotent")


def build_ab_operator(params: PepsParameters, parity: int, gauged: bool = True) -> GradedOperator:
    """The gauged fiducial operator ``A_b`` on ``psi``, eight virtual modes and ``s, t``.

    ``t = 0`` is allowed here: it is the pure gauge theory.
    """
    tm = build_t_matrix(params, parity, allow_zero_t=True)
    return exp_graded(build_k_operator(tm, gauged))


def fiducial_vector(params: PepsParameters, parity: int, gauged: bool = True) -> np.ndarray:
    """``A_b |Omega>`` as a dense vector on ``2**9 * 3**2`` (or ``2**9``) dimensions."""
    A = build_ab_operator(params, parity, gauged)
    vac = np.zeros(A.dim, dtype=complex)
    vac[LINK.index(0) * 3 + LINK.index(0) if gauged else 0] = 1.0
    return A.action @ vac


def number_operator(op: GradedOperator, label: str) -> sp.csr_matrix:
    ferm, _ = _local_ops(len(op.fermions), len(op.bosons))
    f = ferm[op.fermions.index(label)]
    return (f.T @ f).tocsr()


def link_field(op: GradedOperator, link: str) -> sp.csr_matrix:
    _, bos = _local_ops(len(op.fermions), len(op.bosons))
    return bos[(op.bosons.index(link), "z")]


def _expi(phi: float, diag_op: sp.spmatrix) -> sp.csr_matrix:
    return sp.diags(np.exp(1j * phi * diag_op.diagonal())).tocsr()


def gauge_conditions_residual(params: PepsParameters, parity: int, phi: float) -> dict:
    """Residuals of the three local-invariance identities for ``A_b``.

    i.   ``U_d U_l A U_l^dag U_d^dag = U_t U_s U_psi^dag A U_psi U_s^dag U_t^dag``
    ii.  ``U_r A U_r^dag = U_s A U_s^dag``
    iii. ``U_u A U_u^dag = U_t A U_t^dag``
    """
    A = build_ab_operator(params, parity, gauged=True)
    n = {lab: number_operator(A, lab) for lab in A.fermions}

    def E(side):
        return n[side + "+"] - n[side + "-"]

    s_x = 1 - 2 * (parity % 2)
    U = {side: _expi(phi, E(side)) for side in "lrud"}
    Us = _expi(phi, link_field(A, "s"))
    Ut = _expi(phi, link_field(A, "t"))
    Upsi = _expi(phi * s_x, n["psi"])
    Upsi_d = Upsi.conj().T

    def res(left, right):
        return float(abs(left.action - right.action).max()) if (left.action - right.action).nnz else 0.0

    return {
        "i": res(A.conjugate_by(U["d"] @ U["l"]), A.conjugate_by(Ut @ Us @ Upsi_d)),
        "ii": res(A.conjugate_by(U["r"]), A.conjugate_by(Us)),
        "iii": res(A.conjugate_by(U["u"]), A.conjugate_by(Ut)),
    }


# =====================================================================
# Transfer operator
#
# A virtual leg carries two fermionic modes (+, -).  Its configuration is
# encoded as ``c = n_+ + 2 n_-`` so that E(c) = n_+ - n_- and the leg
# parity is odd exactly for c in {1, 2}.  One row is contracted site by
# site around the ring.  In a single layer, after all bond and reordering
# signs are collected, the only non-local factors are
#   (-1)^{sum_{x<x'} p(u_x) p(psi_x')}   and   (-1)^{p(wrap) * P_in},
# with P_in the parity of the incoming d legs.  Ket and bra parities agree
# except at insertion sites, so in the double layer both reduce to local
# factors once the (static) parity offsets of the insertion are known.
# =====================================================================

LEG_E = np.array([0, 1, -1, 0])
LEG_P = np.array([0, 1, 1, 0])
_LINK_IDX = 1 - LEG_E  # index into (|+1>, |0>, |-1>)
# <0|(1 + a b)(1 + a' b')|...> for the three bond blocks, b acting first
_H_INTERNAL = np.array([1.0, -1.0, -1.0, -1.0])  # (r)(l) block
_H_WRAP = np.array([1.0, 1.0, 1.0, -1.0])  # (l)(r) block
_H_VERTICAL = np.array([1.0, 1.0, 1.0, -1.0])  # (u)(d) block
_LOCAL_ORDER = ("d+", "d-", "l+", "l-", "psi", "u+", "u-", "r+", "r-")

MAX_L1 = 6
_BYTES = 16


@lru_cache(maxsize=8)
def column_pairs(offset: int) -> np.ndarray:
    """(ket, bra) leg configurations with ``E_ket - E_bra = offset``."""
    return np.array([(k, b) for k in range(4) for b in range(4) if LEG_E[k] - LEG_E[b] == offset],
                    dtype=np.int64).reshape(-1, 2)


@lru_cache(maxsize=32)
def _site_tensor_cached(t: float, y: complex, z: complex, parity: int) -> np.ndarray:
    v = fiducial_vector(PepsParameters(t, y, z), parity, gauged=True)
    labels = fiducial_mode_order(parity)
    where = [labels.index(lab) for lab in _LOCAL_ORDER]
    a = np.zeros((4, 4, 2, 4, 4), dtype=complex)
    for idx in np.nonzero(np.abs(v) > 0)[0]:
        f, b = divmod(int(idx), 9)
        occ = [(f >> (8 - j)) & 1 for j in range(9)]
        loc = [occ[w] for w in where]
        # sign of moving the occupied modes from fiducial into local order
        sign = 1
        for i in range(9):
            for j in range(i + 1, 9):
                if loc[i] and loc[j] and where[i] > where[j]:
                    sign = -sign
        d, l, ps, u, r = loc[0] + 2 * loc[1], loc[2] + 2 * loc[3], loc[4], loc[5] + 2 * loc[6], loc[7] + 2 * loc[8]
        if LINK_VALUES[b // 3] != LEG_E[r] or LINK_VALUES[b % 3] != LEG_E[u]:
            raise ParameterError("link bosons are not slaved to the virtual flux")
        a[d, l, ps, u, r] += sign * v[idx]
    a.setflags(write=False)
    return a


def site_tensor(params: PepsParameters, parity: int) -> np.ndarray:
    """Fiducial amplitudes ``a[d, l, psi, u, r]`` in the order ``d l psi u r``.

    The ``s`` and ``t`` bosons are implied by ``E(r)`` and ``E(u)``.
    """
    return _site_tensor_cached(float(params.t), complex(params.y), complex(params.z), parity % 2)


@dataclass(frozen=True)
class SiteInsertion:
    """Operators acting on one site of a row, as ``<bra|O|ket>`` matrices."""

    psi: np.ndarray = field(default_factory=lambda: np.eye(2))
    s: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.eye(3))
    n_fermion_ops: int = 0


def _shift(mat: np.ndarray) -> int:
    """``E_bra - E_ket`` for a link matrix with a definite shift."""
    nz = np.argwhere(np.abs(mat) > 0)
    if len(nz) == 0:
        return 0
    shifts = {LINK_VALUES[i] - LINK_VALUES[j] for i, j in nz}
    if len(shifts) != 1:
        raise ParameterError("link operator does not change the field by a fixed amount")
    return shifts.pop()


@dataclass(frozen=True)
class RowInsertion:
    """Static description of the operators inserted on one row.

    ``jw_before`` holds, per site, the parity of fermionic operators of this
    row lying to its right; ``n_row_ops`` counts the row's fermionic
    operators (they all see the flux entering the row).
    """

    sites: dict
    L1: int

    def at(self, x: int) -> SiteInsertion:
        return self.sites.get(x, _IDENTITY_SITE)

    @property
    def out_offsets(self) -> tuple:
        return tuple(-_shift(self.at(x).t) for x in range(self.L1))

    @property
    def bond_offsets(self) -> tuple:
        return tuple(-_shift(self.at(x).s) for x in range(self.L1))

    @property
    def psi_parity(self) -> tuple:
        return tuple(self.at(x).n_fermion_ops % 2 for x in range(self.L1))

    @property
    def n_row_ops(self) -> int:
        return sum(self.at(x).n_fermion_ops for x in range(self.L1))


_IDENTITY_SITE = SiteInsertion()


def _double_site(a: np.ndarray, offs: tuple, ins: SiteInsertion, exps: dict, wrap_left: bool) -> np.ndarray:
    """Double-layer site tensor ``W[in, left, right, out]`` over allowed pairs."""
    od, ol, orr, ou = offs
    Pd, Pl, Pr, Pu = (column_pairs(o) for o in offs)
    dk, db = Pd[:, 0], Pd[:, 1]
    lk, lb = Pl[:, 0], Pl[:, 1]
    rk, rb = Pr[:, 0], Pr[:, 1]
    uk, ub = Pu[:, 0], Pu[:, 1]
    # ket and bra layers with axes (d, l, psi, u, r) restricted to pair lists
    K = a[dk][:, lk][:, :, :, uk][:, :, :, :, rk]
    B = np.conj(a[db][:, lb][:, :, :, ub][:, :, :, :, rb])
    sk = (-1.0) ** (np.arange(2) * exps["psik"])
    sb = (-1.0) ** (np.arange(2) * exps["psib"])
    M = ins.psi * sb[:, None] * sk[None, :]  # [psi_b, psi_k]
    W = np.einsum("ilpor,ilqor,qp->ilro", K, B, M, optimize=True)
    h = _H_WRAP if wrap_left else _H_INTERNAL
    fd = _H_VERTICAL[dk] * _H_VERTICAL[db] * (-1.0) ** (exps["db"] * LEG_P[db] + exps["dk"] * LEG_P[dk])
    fl = h[lk] * h[lb] * (-1.0) ** (exps["lb"] * LEG_P[lb])
    fr = ins.s[_LINK_IDX[rb], _LINK_IDX[rk]]
    fu = ins.t[_LINK_IDX[ub], _LINK_IDX[uk]] * (-1.0) ** (exps["ub"] * LEG_P[ub])
    return W * fd[:, None, None, None] * fl[None, :, None, None] * fr[None, None, :, None] * fu[None, None, None, :]


@dataclass(frozen=True)
class SectorState:
    """Virtual-row density operator in the compressed column-pair basis.

    Column ``x`` carries a (ket, bra) pair of d-leg configurations with
    ``E_ket - E_bra = offsets[x]``; ``data`` has one axis per column.
    Flux blocks are views selected by the ket and bra totals.
    """

    data: np.ndarray
    offsets: tuple

    @property
    def L1(self) -> int:
        return len(self.offsets)

    def fluxes(self) -> tuple:
        """Arrays of ket and bra flux for every entry of ``data``."""
        fk = np.zeros(self.data.shape, dtype=np.int64)
        fb = np.zeros(self.data.shape, dtype=np.int64)
        for x, o in enumerate(self.offsets):
            pr = column_pairs(o)
            shape = [1] * self.L1
            shape[x] = len(pr)
            fk = fk + LEG_E[pr[:, 0]].reshape(shape)
            fb = fb + LEG_E[pr[:, 1]].reshape(shape)
        return fk, fb

    @property
    def blocks(self) -> dict:
        fk, fb = self.fluxes()
        out = {}
        for key in sorted(set(zip(fk.ravel().tolist(), fb.ravel().tolist()))):
            mask = (fk == key[0]) & (fb == key[1])
            if np.any(self.data[mask] != 0):
                out[key] = self.data[mask]
        return out

    def restricted(self, flux_ket: int, flux_bra: int) -> "SectorState":
        fk, fb = self.fluxes()
        return SectorState(np.where((fk == flux_ket) & (fb == flux_bra), self.data, 0), self.offsets)

    def dagger(self) -> "SectorState":
        """Hermitian conjugate: swap ket and bra on every column."""
        data = np.conj(self.data)
        offs = tuple(-o for o in self.offsets)
        for x, o in enumerate(self.offsets):
            src, dst = column_pairs(o), column_pairs(-o)
            perm = [next(i for i, p in enumerate(src) if p[0] == q[1] and p[1] == q[0]) for q in dst]
            data = np.take(data, perm, axis=x)
        return SectorState(data, offs)

    @staticmethod
    def boundary(L1: int, flux: int = 0) -> "SectorState":
        """Fixed-configuration boundary: the first ``|flux|`` legs carry ``E = sign(flux)``."""
        if abs(flux) > L1:
            raise GeometryError("boundary flux exceeds the row width")
        pr = column_pairs(0)
        data = np.zeros((len(pr),) * L1, dtype=complex)
        data[_pair_index(boundary_configuration(L1, flux))] = 1.0
        return SectorState(data, (0,) * L1)


def boundary_configuration(L1: int, flux: int) -> tuple:
    c = 1 if flux > 0 else 2
    return tuple(c if x < abs(flux) else 0 for x in range(L1))


def _memory_estimate(L1: int) -> int:
    return 36 * 6**L1 * _BYTES * 3


class TransferOperator:
    """Double-layer row map ``rho -> T(rho)`` with an optional insertion.

    ``row_parity`` is the parity of ``x2``; site ``x1`` of the row has
    sublattice parity ``(x1 + x2) % 2``.  ``dtype=np.clongdouble`` runs
    the contraction in extended precision, which is useful for checking
    very small expectation values.
    """

    def __init__(self, params: PepsParameters, L1: int, row_parity: int = 0,
                 insertion: RowInsertion | None = None, max_l1: int = MAX_L1, dtype=complex):
        if L1 < 2:
            raise GeometryError("the periodic direction needs at least two sites")
        if L1 > max_l1:
            raise ResourceError(f"L1={L1} exceeds the configured width cap {max_l1}", _memory_estimate(L1))
        if L1 % 2 and params.t != 0:
            raise StaggeringError("odd L1 breaks the sublattice staggering unless t = 0")
        self.params = params
        self.L1 = L1
        self.row_parity = row_parity % 2
        self.insertion = insertion if insertion is not None else RowInsertion({}, L1)
        self.dtype = np.dtype(dtype)
        self._cache: dict = {}

    @property
    def out_offsets(self) -> tuple:
        return self.insertion.out_offsets

    def _site_tensors(self, in_offsets: tuple) -> list:
        if in_offsets in self._cache:
            return self._cache[in_offsets]
        L1, ins = self.L1, self.insertion
        out_o, bond_o, dpsi = ins.out_offsets, ins.bond_offsets, ins.psi_parity
        du = [o % 2 for o in out_o]
        dd = [o % 2 for o in in_offsets]
        dw = bond_o[-1] % 2
        d_pin = sum(dd) % 2
        n_ops = ins.n_row_ops
        tensors = []
        for x in range(L1):
            a = site_tensor(self.params, x + self.row_parity)
            exps = {
                "psib": sum(du[:x]) % 2,
                "ub": sum(dpsi[x + 1:]) % 2,
                "db": dw,
                "lb": d_pin if x == 0 else 0,
                # Jordan-Wigner strings of the row's own fermionic operators
                "psik": sum(ins.at(j).n_fermion_ops for j in range(x + 1, L1)) % 2,
                "dk": n_ops % 2,
            }
            offs = (in_offsets[x], bond_o[x - 1], bond_o[x], out_o[x])
            tensors.append(_double_site(a, offs, ins.at(x), exps, wrap_left=(x == 0)).astype(self.dtype))
        const = sum(du[x] * dpsi[xp] for x in range(L1) for xp in range(x + 1, L1)) + dw * d_pin
        if const % 2:
            tensors[0] = -tensors[0]
        self._cache[in_offsets] = tensors
        return tensors

    def apply(self, state: SectorState) -> SectorState:
        if state.L1 != self.L1:
            raise GeometryError("state width does not match the transfer operator")
        Ws = self._site_tensors(tuple(state.offsets))
        return SectorState(_ring(Ws, state.data.astype(self.dtype, copy=False)), self.out_offsets)

    __call__ = apply

    def apply_transpose(self, functional: SectorState) -> SectorState:
        """Pull a linear functional on output states back to input states.

        Only defined for insertions that leave the column offsets at zero.
        """
        if any(self.out_offsets) or any(functional.offsets):
            raise ParameterError("transpose application needs zero column offsets")
        Ws = [W.transpose(3, 1, 2, 0) for W in self._site_tensors((0,) * self.L1)]
        return SectorState(_ring(Ws, functional.data.astype(self.dtype, copy=False)), (0,) * self.L1)

    def dense(self, in_offsets: tuple | None = None) -> np.ndarray:
        """Explicit matrix (small widths only)."""
        in_offsets = tuple(in_offsets or (0,) * self.L1)
        shape = tuple(len(column_pairs(o)) for o in in_offsets)
        n = int(np.prod(shape))
        if n > 5000:
            raise ResourceError("dense transfer matrix too large", n * n * _BYTES)
        cols = []
        for i in range(n):
            e = np.zeros(n, dtype=complex)
            e[i] = 1.0
            cols.append(self.apply(SectorState(e.reshape(shape), in_offsets)).data.ravel())
        return np.stack(cols, axis=1)


def _ring(Ws: list, data: np.ndarray) -> np.ndarray:
    """Contract site tensors ``W[in, left, right, out]`` around the periodic row."""
    L1 = len(Ws)
    t = np.tensordot(Ws[0], data, axes=([0], [0]))
    for x in range(1, L1):
        t = np.tensordot(t, Ws[x], axes=([1, 2 + x], [1, 0]))
        t = np.moveaxis(t, [-2, -1], [1, 2 + x])
    return np.einsum("ii...->...", t)


def build_transfer(params: PepsParameters, L1: int, insertion: RowInsertion | None = None,
                   row_parity: int = 0, max_l1: int = MAX_L1) -> TransferOperator:
    return TransferOperator(params, L1, row_parity, insertion, max_l1)


# ------------------------------------------------------------ observables

_CDAG = np.array([[0.0, 0.0], [1.0, 0.0]])  # <bra|psi^dag|ket>
_C = _CDAG.T
FERMION_TAGS = ("psi", "psidag", "n")
LINK_TAGS = ("S+", "S-", "Sz", "phase", "proj")


@dataclass(frozen=True)
class FieldOp:
    """One factor of a product observable.

    ``site`` is ``(x1, x2)``.  Link tags act on the ``s`` (rightward) or
    ``t`` (upward) link of that site.  ``q`` is the angle of ``phase`` and
    the field value selected by ``proj``.
    """

    site: tuple
    tag: str
    link: str | None = None
    q: float = 0.0

    def matrix(self) -> np.ndarray:
        if self.tag == "S+":
            return LINK.SigmaPlus
        if self.tag == "S-":
            return LINK.SigmaMinus
        if self.tag == "Sz":
            return LINK.Sigma
        if self.tag == "phase":
            return LINK.phase(self.q)
        if self.tag == "proj":
            out = np.zeros((3, 3))
            out[LINK.index(int(self.q)), LINK.index(int(self.q))] = 1.0
            return out
        raise ParameterError(f"{self.tag} is not a link operator")


@dataclass(frozen=True)
class Cylinder:
    """Open in ``x2``, periodic in ``x1``; ``boundary_flux`` fixes X_i and X_f."""

    L1: int
    L2: int
    boundary_flux: int = 0

    def __post_init__(self):
        if self.L1 < 2 or self.L2 < 1:
            raise GeometryError("cylinder needs L1 >= 2 and L2 >= 1")


def _elementary(ops) -> list:
    out = []
    for op in ops:
        if op.tag == "n":
            out += [FieldOp(op.site, "psidag"), FieldOp(op.site, "psi")]
        else:
            out.append(op)
    return out


def compile_insertions(ops, geometry: Cylinder) -> tuple:
    """Group a product ``ops[0] ops[1] ...`` (last factor acts first) by row.

    Returns ``(rows, sign)`` with ``rows[x2]`` a ``RowInsertion`` and
    ``sign`` the constant Jordan-Wigner factor of the fermionic operators.
    """
    L1, L2 = geometry.L1, geometry.L2
    ops = _elementary(ops)
    mats: dict = {}
    nferm: dict = {}
    for op in ops:
        x1, x2 = op.site
        if not (0 <= x2 < L2):
            raise GeometryError(f"row {x2} lies outside the cylinder")
        op = FieldOp((x1 % L1, x2), op.tag, op.link, op.q)
        key = op.site
        cur = mats.setdefault(key, {"psi": np.eye(2), "s": np.eye(3), "t": np.eye(3)})
        if op.tag in ("psi", "psidag"):
            cur["psi"] = cur["psi"] @ (_C if op.tag == "psi" else _CDAG)
            nferm[key] = nferm.get(key, 0) + 1
        elif op.tag in LINK_TAGS:
            if op.link not in ("s", "t"):
                raise ParameterError("link operators need link='s' or link='t'")
            cur[op.link] = cur[op.link] @ op.matrix()
        else:
            raise ParameterError(f"unknown operator tag {op.tag}")
    rows: dict = {}
    for (x1, x2), m in mats.items():
        rows.setdefault(x2, {})[x1] = SiteInsertion(m["psi"], m["s"], m["t"], nferm.get((x1, x2), 0))
    # constant part of the Jordan-Wigner strings
    changed = np.zeros(L1 * L2, dtype=np.int64)
    sign = 0
    for op in reversed(ops):
        if op.tag not in ("psi", "psidag"):
            continue
        pos = op.site[0] % L1 + L1 * op.site[1]
        sign += int(changed[:pos].sum()) + abs(geometry.boundary_flux)
        changed[pos] ^= 1
    return {y: RowInsertion(sites, L1) for y, sites in rows.items()}, (-1) ** (sign % 2)


def _normalise(state: SectorState) -> tuple:
    m = float(np.max(np.abs(state.data))) if state.data.size else 0.0
    if m == 0.0:
        return state, -np.inf
    return SectorState(state.data / m, state.offsets), float(np.log(m))


def _pair_index(conf: tuple) -> tuple:
    pr = column_pairs(0)
    return tuple(int(np.nonzero((pr[:, 0] == c) & (pr[:, 1] == c))[0][0]) for c in conf)


class CylinderEnvironment:
    """Bottom states and top functionals of the plain network, row by row.

    ``bottom[y]`` is the (normalised) state entering row ``y`` and
    ``top[y]`` the functional closing rows ``y .. L2-1`` with X_f.  An
    observable supported on rows ``y0 .. y1`` then costs ``y1 - y0 + 1``
    row applications.
    """

    def __init__(self, params: PepsParameters, geometry: Cylinder, max_l1: int = MAX_L1, dtype=complex):
        self.params, self.geometry = params, geometry
        L1, L2 = geometry.L1, geometry.L2
        self.plain = {p: TransferOperator(params, L1, p, None, max_l1, dtype) for p in (0, 1)}
        self.max_l1, self.dtype = max_l1, dtype
        st = SectorState.boundary(L1, geometry.boundary_flux)
        self.bottom, self.log_bottom = [st], [0.0]
        for y in range(L2):
            st, ln = _normalise(self.plain[y % 2](st))
            if not np.isfinite(ln):
                raise ParameterError("the boundary configuration has zero norm")
            self.bottom.append(st)
            self.log_bottom.append(self.log_bottom[-1] + ln)
        top = SectorState.boundary(L1, geometry.boundary_flux)
        self.top = [None] * (L2 + 1)
        self.top[L2] = top
        for y in range(L2 - 1, -1, -1):
            top, _ = _normalise(self.plain[y % 2].apply_transpose(top))
            self.top[y] = top

    def _close(self, y: int, state: SectorState) -> complex:
        if any(state.offsets):
            return 0j
        return complex(np.vdot(np.conj(self.top[y].data).ravel(), state.data.ravel()))

    def expectation(self, ops) -> complex:
        ops = list(getattr(ops, "path", ops))
        rows, sign = compile_insertions(ops, self.geometry)
        if not rows:
            return complex(sign)
        y0, y1 = min(rows), max(rows)
        st, log_num = self.bottom[y0], self.log_bottom[y0]
        for y in range(y0, y1 + 1):
            T = (TransferOperator(self.params, self.geometry.L1, y % 2, rows[y], self.max_l1, self.dtype)
                 if y in rows else self.plain[y % 2])
            st, ln = _normalise(T(st))
            if not np.isfinite(ln):
                return 0j
            log_num += ln
        den = self._close(y1 + 1, self.bottom[y1 + 1])
        num = self._close(y1 + 1, st)
        return complex(sign * num / den * np.exp(log_num - self.log_bottom[y1 + 1]))


def expectation(params: PepsParameters, geometry: Cylinder, observable, max_l1: int = MAX_L1,
                env: CylinderEnvironment | None = None) -> complex:
    """Normalised expectation value of a product observable on a cylinder.

    ``observable`` is a sequence of ``FieldOp`` or any object with a
    ``path`` attribute holding one.  Pass ``env`` to reuse the boundary
    environments across many observables.
    """
    if env is None:
        env = CylinderEnvironment(params, geometry, max_l1)
    return env.expectation(observable)


# -------------------------------------------------------------- spectrum

EIGS_TOL = 1e-8
EIGS_MAXITER = 2000
_EIGS_SEED = 20240917
_DENSE_LIMIT = 400


@dataclass(frozen=True)
class Spectrum:
    """Leading eigenvalues of the period map, largest magnitude first.

    ``period`` is 1 at ``t = 0`` and 2 otherwise (the sublattice pattern
    repeats every second row); ``gap`` is per row.
    """

    eigenvalues: np.ndarray
    period: int
    sector: int | None

    @property
    def normalized(self) -> np.ndarray:
        return self.eigenvalues / self.eigenvalues[0]

    @property
    def leading(self) -> float:
        """Per-row magnitude of the dominant eigenvalue."""
        return float(abs(self.eigenvalues[0]) ** (1.0 / self.period))

    @property
    def gap(self) -> float:
        ratio = abs(self.eigenvalues[1]) / abs(self.eigenvalues[0])
        return float(1.0 - ratio ** (1.0 / self.period))


def _sector_mask(L1: int, sector: int | None) -> np.ndarray:
    st = SectorState(np.zeros((6,) * L1, dtype=complex), (0,) * L1)
    fk, fb = st.fluxes()
    if sector is None:
        return np.ones(fk.shape, dtype=bool)
    return (fk == sector) & (fb == sector)


def period_map(tm: TransferOperator):
    """The row map repeated over one sublattice period, as a callable on states."""
    if tm.params.t == 0:
        return tm, 1
    other = TransferOperator(tm.params, tm.L1, 1 - tm.row_parity, tm.insertion, max(tm.L1, MAX_L1))
    return (lambda s: other(tm(s))), 2


def dominant_spectrum(tm: TransferOperator, sector: int | None = None, n_eigs: int = 2,
                      tol: float = EIGS_TOL, maxiter: int = EIGS_MAXITER) -> Spectrum:
    """Leading eigenvalues by magnitude, on one flux sector or on their union.

    Flux sectors are conserved only at ``t = 0``.  Small problems are
    diagonalised densely; larger ones use restarted Arnoldi from a fixed
    pseudo-random start vector.
    """
    if n_eigs < 2:
        raise ParameterError("n_eigs must be at least 2")
    if not (0 < tol <= 1e-4):
        raise ParameterError("tol must lie in (0, 1e-4]")
    if sector is not None and tm.params.t != 0:
        raise ParameterError("flux sectors are only conserved at t = 0")
    if any(tm.out_offsets):
        raise ParameterError("spectra are defined for the plain transfer operator")
    L1 = tm.L1
    fmap, period = period_map(tm)
    mask = _sector_mask(L1, sector)
    idx = np.nonzero(mask.ravel())[0]
    n = len(idx)
    shape = (6,) * L1

    def matvec(v):
        full = np.zeros(6**L1, dtype=complex)
        full[idx] = np.ravel(v)
        out = fmap(SectorState(full.reshape(shape), (0,) * L1)).data.ravel()
        return out[idx]

    if n <= _DENSE_LIMIT:
        M = np.stack([matvec(e) for e in np.eye(n, dtype=complex)], axis=1)
        ev = np.linalg.eigvals(M)
    else:
        k = min(n_eigs, n - 2)
        op = spla.LinearOperator((n, n), matvec=matvec, dtype=complex)
        v0 = np.random.default_rng(_EIGS_SEED).standard_normal(n) + 0j
        try:
            ev = spla.eigs(op, k=k, which="LM", v0=v0, tol=tol, maxiter=maxiter, return_eigenvectors=False)
        except spla.ArpackNoConvergence as err:
            res = float(np.max(np.abs(err.eigenvalues))) if len(err.eigenvalues) else None
            raise ConvergenceError(f"Arnoldi did not converge in {maxiter} iterations", res) from err
    order = np.lexsort((np.round(np.angle(ev), 12), -np.round(np.abs(ev), 12)))
    ev = ev[order][:n_eigs]
    if abs(ev[0]) == 0:
        raise ConvergenceError("transfer operator is nilpotent on this sector", 0.0)
    return Spectrum(ev, period, sector)


def verify_gauss_law(params: PepsParameters, Lx: int = 2, Ly: int = 2, corrupt: bool = False) -> float:
    """Maximal relative Gauss-law violation of the brute-force cylinder state."""
    from .oracle import exact_gauged_state, gauss_violation

    if Lx * Ly > 12:
        raise ResourceError("oracle lattice limited to 12 sites", None)
    return gauss_violation(exact_gauged_state(params, Lx, Ly, corrupt=corrupt))
