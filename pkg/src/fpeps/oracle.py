"""Brute-force reference states by explicit Fock-space contraction.

States are stored sparsely as sorted ``int64`` keys with complex amplitudes.
A final key packs the physical fermions in its low bits (site ``i`` at bit
``i``; sites enumerated row-major, ``i = x1 + L1 * x2``) and, above them, two
bits per link holding ``E + 1``.  Link ``2 i`` is the ``s`` link to the right
of site ``i`` and link ``2 i + 1`` the ``t`` link above it.  The fermionic
basis state with occupations ``n_i`` is ``prod_i (psi_i^dag)^{n_i} |0>`` in
increasing ``i``.

Bonds are contracted literally with
``<H| = 1/2 <0|(1 + r+ l+)(1 + r- l-)`` and
``<V| = 1/2 <0|(1 + d+ u+)(1 + d- u-)`` (the 1/2 factors are dropped).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fock
from .errors import GeometryError, ParameterError, ResourceError, StaggeringError
from .fpeps_global import PepsParameters, TMatrix, build_t_matrix, fiducial_mode_order
from .gauge_peps import LINK_VALUES, build_k_operator, exp_graded

DEFAULT_CAP = 2**24
_BYTES_PER_ENTRY = 32


# ---------------------------------------------------------------- fiducials


@dataclass(frozen=True)
class FockState:
    """Sparse state on an explicit occupation basis.

    ``keys`` are sorted and unique.  ``n_fermions`` modes sit in the low
    bits; ``n_links`` three-level links follow, two bits each.
    """

    keys: np.ndarray
    amplitudes: np.ndarray
    n_fermions: int
    n_links: int = 0
    shape: tuple = ()
    periodic: tuple = ()

    @property
    def basis_order(self) -> str:
        return "fermions low bits (site order), then 2 bits per link holding E+1"

    def norm2(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def normalized(self) -> "FockState":
        return self.with_amplitudes(self.amplitudes / np.sqrt(self.norm2()))

    def with_amplitudes(self, amps) -> "FockState":
        return FockState(self.keys, np.asarray(amps, dtype=complex), self.n_fermions, self.n_links,
                         self.shape, self.periodic)

    def to_dense(self) -> np.ndarray:
        """Dense vector (fermions MSB-first, then links MSB-first with index ``1 - E``)."""
        nf, nl = self.n_fermions, self.n_links
        dim = 2**nf * 3**nl
        if dim > DEFAULT_CAP:
            raise ResourceError("dense vector too large", dim * 16)
        out = np.zeros(dim, dtype=complex)
        f = self.keys & ((1 << nf) - 1)
        fidx = np.zeros_like(f)
        for j in range(nf):
            fidx |= ((f >> j) & 1) << (nf - 1 - j)
        bidx = np.zeros_like(f)
        for l in range(nl):
            code = (self.keys >> (nf + 2 * l)) & 3
            bidx = bidx * 3 + (2 - code)
        out[fidx * 3**nl + bidx] = self.amplitudes
        return out

    # ------------------------------------------------------------ operators
    def link_values(self, link: int) -> np.ndarray:
        return ((self.keys >> (self.n_fermions + 2 * link)) & 3) - 1

    def occupation(self, site: int) -> np.ndarray:
        return (self.keys >> site) & 1

    def inner(self, other: "FockState") -> complex:
        idx = np.searchsorted(self.keys, other.keys)
        idx = np.minimum(idx, len(self.keys) - 1)
        hit = self.keys[idx] == other.keys
        return complex(np.vdot(self.amplitudes[idx[hit]], other.amplitudes[hit]))

    def apply(self, op) -> "FockState":
        """Apply one elementary operator (see ``Op``)."""
        keys, amps = self.keys.copy(), self.amplitudes.copy()
        kind, where = op.kind, op.where
        if kind in ("c", "cdag"):
            occ = (keys >> where) & 1
            keep = occ == (1 if kind == "c" else 0)
            amps = amps * fock.jw_sign(keys, where)
            keys = keys ^ np.int64(1 << where)
        elif kind == "n":
            keep = np.ones(len(keys), bool)
            amps = amps * ((keys >> where) & 1)
        else:
            shift = self.n_fermions + 2 * where
            code = (keys >> shift) & 3
            E = code - 1
            if kind == "S+":
                keep = E < 1
                keys = keys + np.int64(1 << shift)
            elif kind == "S-":
                keep = E > -1
                keys = keys - np.int64(1 << shift)
            elif kind == "Sz":
                keep = np.ones(len(keys), bool)
                amps = amps * E
            elif kind == "phase":
                keep = np.ones(len(keys), bool)
                amps = amps * np.exp(1j * op.q * E)
            elif kind == "proj":
                keep = E == int(round(op.q))
            else:
                raise ParameterError(f"unknown operator kind {kind}")
        keys, amps = keys[keep], amps[keep]
        order = np.argsort(keys, kind="stable")
        return FockState(keys[order], amps[order], self.n_fermions, self.n_links, self.shape, self.periodic)

    def apply_product(self, ops) -> "FockState":
        """``ops[0] ops[1] ... ops[-1] |psi>``: the last factor acts first."""
        st = self
        for op in reversed(list(ops)):
            st = st.apply(op)
        return st

    def expectation(self, ops) -> complex:
        return self.inner(self.apply_product(ops)) / self.norm2()

    def expectation_diagonal(self, values: np.ndarray) -> complex:
        w = np.abs(self.amplitudes) ** 2
        return complex(np.sum(w * values) / np.sum(w))


@dataclass(frozen=True)
class Op:
    """Elementary operator: fermion ``c``/``cdag``/``n`` on a site, or link
    ``S+``/``S-``/``Sz``/``phase``/``proj`` (with ``q``) on a link index."""

    kind: str
    where: int
    q: float = 0.0


def exact_fiducial(tm: TMatrix, gauged: bool = False, corrupt: bool = False) -> np.ndarray:
    """``A|Omega>`` as a dense vector: fermions in fiducial order (MSB-first),
    then the ``s`` and ``t`` links when ``gauged``."""
    A = exp_graded(build_k_operator(tm, gauged, flip_s=corrupt))
    vac = np.zeros(A.dim, dtype=complex)
    vac[4 if gauged else 0] = 1.0  # both links in |0>, index 1 each
    return A.action @ vac


def _sparse_fiducial(tm: TMatrix, gauged: bool, corrupt: bool = False):
    """Fiducial as ``(keys over 9 modes, amps, E_s, E_t)``; link values are read off
    the dense vector and must be slaved to the virtual fluxes."""
    v = exact_fiducial(tm, gauged, corrupt)
    nz = np.nonzero(np.abs(v) > 0)[0]
    nb = 9 if gauged else 1
    fidx, bidx = nz // nb, nz % nb
    keys = np.zeros(len(nz), dtype=np.int64)
    for j in range(9):
        keys |= ((fidx >> (8 - j)) & 1).astype(np.int64) << j
    if gauged:
        Es = np.array([LINK_VALUES[i] for i in bidx // 3])
        Et = np.array([LINK_VALUES[i] for i in bidx % 3])
    else:
        Es = Et = np.zeros(len(nz), dtype=int)
    return keys, v[nz], Es, Et


# ---------------------------------------------------------- lattice builder


class _Builder:
    """Incremental contraction; open fermion modes are kept in a list."""

    def __init__(self, cap: int):
        self.modes: list = []
        self.keys = np.zeros(1, dtype=np.int64)
        self.amps = np.ones(1, dtype=complex)
        self.links = np.zeros((1, 0), dtype=np.int8)
        self.cap = cap

    def add_site(self, site, labels, fkeys, famps, flinks, vacuum_labels, bonds):
        """Append a site's modes, project ``vacuum_labels`` to the vacuum and
        contract ``bonds``, a list of ``(old_label, new_label)`` pairs."""
        keep_mask = np.ones(len(fkeys), bool)
        kept = []
        for j, lab in enumerate(labels):
            if lab in vacuum_labels:
                keep_mask &= ((fkeys >> j) & 1) == 0
            else:
                kept.append(j)
        fkeys, famps, flinks = fkeys[keep_mask], famps[keep_mask], flinks[keep_mask]
        compact = np.zeros_like(fkeys)
        for newpos, j in enumerate(kept):
            compact |= ((fkeys >> j) & 1) << newpos
        new_labels = [(site, labels[j]) for j in kept]

        n_old = len(self.modes)
        old_pos = [self.modes.index(a) for a, _ in bonds]
        new_pos = [[l for _, l in new_labels].index(b) for _, b in bonds]
        # join on matching occupations of the paired modes
        opat = np.zeros(len(self.keys), dtype=np.int64)
        for i, p in enumerate(old_pos):
            opat |= ((self.keys >> p) & 1) << i
        npat = np.zeros(len(compact), dtype=np.int64)
        for i, p in enumerate(new_pos):
            npat |= ((compact >> p) & 1) << i
        pieces_k, pieces_a, pieces_l = [], [], []
        total = 0
        for pat in np.intersect1d(np.unique(opat), np.unique(npat)):
            io = np.nonzero(opat == pat)[0]
            inew = np.nonzero(npat == pat)[0]
            total += len(io) * len(inew)
            if total > self.cap:
                raise ResourceError(f"intermediate state exceeds {self.cap} amplitudes",
                                    total * _BYTES_PER_ENTRY)
            k = (self.keys[io][:, None] | (compact[inew][None, :] << n_old)).ravel()
            a = (self.amps[io][:, None] * famps[inew][None, :]).ravel()
            lk = np.concatenate([np.repeat(self.links[io], len(inew), axis=0),
                                 np.tile(flinks[inew], (len(io), 1))], axis=1)
            pieces_k.append(k)
            pieces_a.append(a)
            pieces_l.append(lk)
        self.modes = self.modes + new_labels
        if not pieces_k:
            self.keys = np.zeros(0, dtype=np.int64)
            self.amps = np.zeros(0, dtype=complex)
            self.links = np.zeros((0, self.links.shape[1] + flinks.shape[1]), dtype=np.int8)
            return
        keys = np.concatenate(pieces_k)
        amps = np.concatenate(pieces_a)
        links = np.concatenate(pieces_l)
        for (olab, nlab), po, pn in zip(bonds, old_pos, new_pos):
            pn = pn + n_old
            occ = ((keys >> po) & 1).astype(bool)
            # <0|(1 + a b): b is the l or u mode and is annihilated first
            first, second = (pn, po) if nlab[0] in "lu" else (po, pn)
            sgn = fock.jw_sign(keys, first)
            k1 = keys ^ np.int64(1 << first)
            sgn = sgn * fock.jw_sign(k1, second)
            amps = np.where(occ, amps * sgn, amps)
            keys = np.where(occ, k1 ^ np.int64(1 << second), keys)
        drop = sorted({p for p in old_pos} | {p + n_old for p in new_pos})
        keys = _remove_bits(keys, drop)
        self.modes = [m for i, m in enumerate(self.modes) if i not in set(drop)]
        self.keys, self.amps, self.links = _merge(keys, amps, links)

    def physical_state(self, n_sites, shape, periodic):
        order = [self.modes.index((i, "psi")) for i in range(n_sites)]
        if len(self.modes) != n_sites:
            raise GeometryError("virtual modes left uncontracted")
        # permute fermion modes into site order; modes are all psi, reorder with signs
        keys, amps = _permute_modes(self.keys, self.amps, order)
        n_links = self.links.shape[1]
        for l in range(n_links):
            keys = keys | ((self.links[:, l].astype(np.int64) + 1) << (n_sites + 2 * l))
        idx = np.argsort(keys)
        keep = np.abs(amps[idx]) > 0
        return FockState(keys[idx][keep], amps[idx][keep], n_sites, n_links, shape, periodic)


def _remove_bits(keys, positions):
    for p in sorted(positions, reverse=True):
        low = keys & np.int64((1 << p) - 1)
        keys = ((keys >> (p + 1)) << p) | low
    return keys


def _merge(keys, amps, links):
    if len(keys) == 0:
        return keys, amps, links
    lkey = np.zeros(len(keys), dtype=np.int64)
    for c in range(links.shape[1]):
        lkey = lkey * 3 + (links[:, c].astype(np.int64) + 1)
    comb = np.stack([keys, lkey], axis=1)
    uniq, inv = np.unique(comb, axis=0, return_inverse=True)
    inv = inv.ravel()
    out = np.zeros(len(uniq), dtype=complex)
    np.add.at(out, inv, amps)
    first = np.zeros(len(uniq), dtype=np.int64)
    first[inv[::-1]] = np.arange(len(inv))[::-1]
    nz = np.abs(out) > 1e-300
    return uniq[nz, 0], out[nz], links[first][nz]


def _permute_modes(keys, amps, order):
    """Reorder modes so that old position ``order[i]`` becomes position ``i``."""
    n = len(order)
    sign = np.ones(len(keys))
    # sign of the permutation restricted to occupied modes: count inversions
    for i in range(n):
        for j in range(i + 1, n):
            if order[i] > order[j]:
                both = ((keys >> order[i]) & 1) & ((keys >> order[j]) & 1)
                sign = np.where(both == 1, -sign, sign)
    new = np.zeros_like(keys)
    for i, p in enumerate(order):
        new |= ((keys >> p) & 1) << i
    return new, amps * sign


def _build(params: PepsParameters, L1: int, L2: int, periodic_2: bool, gauged: bool, cap: int,
           corrupt: bool = False) -> FockState:
    if L1 < 1 or L2 < 1:
        raise GeometryError("lattice extents must be positive")
    if L1 % 2 and params.t != 0:
        raise StaggeringError("odd L1 breaks the sublattice staggering unless t = 0")
    if periodic_2 and L2 % 2:
        raise StaggeringError("a periodic vertical direction needs even L2")
    if L1 == 1 or (periodic_2 and L2 == 1):
        raise GeometryError("periodic extents must be at least 2")
    fid = {}
    for parity in (0, 1):
        tm = build_t_matrix(params, parity, allow_zero_t=gauged)
        fk, fa, Es, Et = _sparse_fiducial(tm, gauged, corrupt and parity == 0)
        fid[parity] = (fiducial_mode_order(parity), fk, fa, np.stack([Es, Et], axis=1).astype(np.int8))
    b = _Builder(cap)
    n_sites = L1 * L2
    for x2 in range(L2):
        for x1 in range(L1):
            site = x1 + L1 * x2
            labels, fk, fa, fl = fid[(x1 + x2) % 2]
            vac = set()
            if not periodic_2 and x2 == 0:
                vac |= {"d+", "d-"}
            if not periodic_2 and x2 == L2 - 1:
                vac |= {"u+", "u-"}
            bonds = []
            if x1 > 0:
                bonds += [((site - 1, "r+"), "l+"), ((site - 1, "r-"), "l-")]
            if x1 == L1 - 1:
                left = L1 * x2
                bonds += [((left, "l+"), "r+"), ((left, "l-"), "r-")]
            if x2 > 0:
                below = site - L1
                bonds += [((below, "u+"), "d+"), ((below, "u-"), "d-")]
            if periodic_2 and x2 == L2 - 1:
                top = x1
                bonds += [((top, "d+"), "u+"), ((top, "d-"), "u-")]
            b.add_site(site, labels, fk, fa, fl if gauged else fl[:, :0], vac, bonds)
    return b.physical_state(n_sites, (L1, L2), (True, periodic_2))


def exact_global_state(params: PepsParameters, L1: int = 4, L2: int = 2, cap: int = DEFAULT_CAP) -> FockState:
    """Globally invariant state on an ``L1 x L2`` torus."""
    params.require_fermionic()
    if L1 * L2 > 8:
        raise ResourceError("torus oracle limited to 8 sites", None)
    return _build(params, L1, L2, True, False, cap)


def exact_gauged_state(params: PepsParameters, L1: int = 2, L2: int = 2, cap: int = DEFAULT_CAP,
                       corrupt: bool = False) -> FockState:
    """Gauged state on a cylinder: periodic in ``x1``, open in ``x2`` with the
    bottom ``d`` and top ``u`` virtual modes fixed to the vacuum."""
    if L1 * L2 > 12:
        raise ResourceError("cylinder oracle limited to 12 sites", None)
    return _build(params, L1, L2, False, True, cap, corrupt)


# --------------------------------------------------------------- generators


def staggering(L1: int, L2: int) -> np.ndarray:
    """``s_x = (-1)^(x1+x2)`` in site order."""
    return np.array([1 - 2 * ((i % L1 + i // L1) % 2) for i in range(L1 * L2)])


def gauss_values(state: FockState, site: int) -> np.ndarray:
    """Eigenvalue of ``G_x`` on every stored basis state."""
    L1, L2 = state.shape
    x1, x2 = site % L1, site // L1
    left = ((x1 - 1) % L1) + L1 * x2
    G = state.link_values(2 * site) + state.link_values(2 * site + 1) - state.link_values(2 * left)
    if x2 > 0:
        G = G - state.link_values(2 * (site - L1) + 1)
    elif state.periodic[1]:
        G = G - state.link_values(2 * (x1 + L1 * (L2 - 1)) + 1)
    G = G - staggering(L1, L2)[site] * state.occupation(site)
    return G


def gauss_violation(state: FockState, phis=(0.7, 1.9)) -> float:
    """``max_x,phi || exp(i phi G_x) psi - psi || / || psi ||``."""
    worst = 0.0
    w = np.abs(state.amplitudes) ** 2
    tot = w.sum()
    for site in range(state.n_fermions):
        G = gauss_values(state, site)
        for phi in phis:
            worst = max(worst, float(np.sqrt(np.sum(w * np.abs(np.exp(1j * phi * G) - 1) ** 2) / tot)))
    return worst


def global_charge(state: FockState) -> np.ndarray:
    L1, L2 = state.shape
    s = staggering(L1, L2)
    q = np.zeros(len(state.keys), dtype=np.int64)
    for i in range(state.n_fermions):
        q += s[i] * state.occupation(i)
    return q


def momentum_occupations(state: FockState) -> dict:
    """``<psi_k^dag psi_k>`` with ``psi_k = N^-1/2 sum_x exp(-i k.x) psi_x``."""
    L1, L2 = state.shape
    n = L1 * L2
    C = np.zeros((n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            C[i, j] = state.expectation([Op("cdag", i), Op("c", j)])
    xs = np.array([(i % L1, i // L1) for i in range(n)])
    out = {}
    for m1 in range(L1):
        for m2 in range(L2):
            k = np.array([2 * np.pi * m1 / L1, 2 * np.pi * m2 / L2])
            ph = np.exp(-1j * xs @ k) / np.sqrt(n)
            out[(m1, m2)] = complex(np.conj(ph) @ C @ ph)
    return out


_FERMION_KINDS = {"psi": "c", "psidag": "cdag", "n": "n"}


def to_oracle_ops(field_ops, L1: int) -> list:
    """Translate cylinder ``FieldOp``s (or a spec with ``path``) into ``Op``s."""
    out = []
    for f in getattr(field_ops, "path", field_ops):
        x1, x2 = f.site
        i = x1 % L1 + L1 * x2
        if f.tag in _FERMION_KINDS:
            out.append(Op(_FERMION_KINDS[f.tag], i))
        else:
            out.append(Op(f.tag, 2 * i + (f.link == "t"), f.q))
    return out
