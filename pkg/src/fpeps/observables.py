"""Gauge-invariant observables on the gauged cylinder and quantities derived from them."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import GeometryError, NumericalFloorError, ParameterError, StaggeringError
from .fpeps_global import PepsParameters
from .gauge_peps import Cylinder, CylinderEnvironment, FieldOp

FLOOR = 1e-13
_STEPS = {"R": (1, 0), "L": (-1, 0), "U": (0, 1), "D": (0, -1)}


class ObservableKind(str, Enum):
    WILSON_LOOP = "WilsonLoop"
    NC_WILSON = "NonContractibleWilson"
    THOOFT_LOOP = "ThooftLoop"
    NC_THOOFT = "NonContractibleThooft"
    MESON = "MesonString"
    TUNNEL = "TunnelString"
    FIELD_PRODUCT = "FieldProduct"


@dataclass(frozen=True)
class ObservableSpec:
    """A product of local operators; ``path[0]`` is the leftmost factor."""

    kind: ObservableKind
    path: tuple
    label: str = ""

    @property
    def rows(self) -> frozenset:
        return frozenset(op.site[1] for op in self.path)

    def shifted(self, dx1: int = 0, dx2: int = 0) -> "ObservableSpec":
        moved = tuple(FieldOp((op.site[0] + dx1, op.site[1] + dx2), op.tag, op.link, op.q) for op in self.path)
        return ObservableSpec(self.kind, moved, self.label)


def staggering_sign(site) -> int:
    return 1 - 2 * ((site[0] + site[1]) % 2)


def gauss_imbalance(spec: ObservableSpec, L1: int) -> dict:
    """Net change of every Gauss generator produced by the operator.

    A gauge-invariant product leaves every entry at zero.
    """
    out: dict = {}

    def bump(site, v):
        key = (site[0] % L1, site[1])
        out[key] = out.get(key, 0) + v

    for op in spec.path:
        x1, x2 = op.site
        if op.tag in ("S+", "S-"):
            d = 1 if op.tag == "S+" else -1
            nb = (x1 + 1, x2) if op.link == "s" else (x1, x2 + 1)
            bump((x1, x2), d)
            bump(nb, -d)
        elif op.tag == "psidag":
            bump((x1, x2), -staggering_sign(op.site))
        elif op.tag == "psi":
            bump((x1, x2), staggering_sign(op.site))
    return {k: v for k, v in out.items() if v}


def validate_spec(spec: ObservableSpec, L1: int, L2: int | None = None) -> ObservableSpec:
    """Raise ``GeometryError`` unless the operator commutes with every Gauss law."""
    imbalance = gauss_imbalance(spec, L1)
    if L2 is not None:
        # links leaving the top row end on the fixed boundary
        imbalance = {k: v for k, v in imbalance.items() if 0 <= k[1] < L2}
    if imbalance:
        raise GeometryError(f"operator violates the Gauss law at {sorted(imbalance)}")
    return spec


# ---------------------------------------------------------- constructors


def wilson_loop_spec(l1: int, l2: int, anchor=(0, 0), L1: int | None = None,
                     allow_wide: bool = False) -> ObservableSpec:
    """Clockwise ``l1 x l2`` loop with lower-left corner ``anchor``.

    Links traversed upward or rightward carry ``S+``, the others ``S-``.
    ``allow_wide`` admits any contractible width ``l1 < L1``.
    """
    if l1 < 1 or l2 < 1:
        raise GeometryError("loop sides must be positive")
    if L1 is not None and allow_wide and l1 >= L1:
        raise GeometryError(f"loop width {l1} wraps the circumference {L1}")
    if L1 is not None and not allow_wide and l1 > L1 // 2:
        raise GeometryError(f"loop width {l1} exceeds half the circumference {L1}")
    x0, y0 = anchor
    path = [FieldOp((x0, y0 + j), "S+", "t") for j in range(l2)]
    path += [FieldOp((x0 + i, y0 + l2), "S+", "s") for i in range(l1)]
    path += [FieldOp((x0 + l1, y0 + j), "S-", "t") for j in reversed(range(l2))]
    path += [FieldOp((x0 + i, y0), "S-", "s") for i in reversed(range(l1))]
    return ObservableSpec(ObservableKind.WILSON_LOOP, tuple(path), f"W({l1},{l2})")


def nc_wilson_spec(x2: int, L1: int, dagger: bool = False) -> ObservableSpec:
    """Horizontal loop around the cylinder, ``prod_x1 S+^s(x1, x2)``."""
    tag = "S-" if dagger else "S+"
    path = tuple(FieldOp((x1, x2), tag, "s") for x1 in range(L1))
    return ObservableSpec(ObservableKind.NC_WILSON, path, f"WNC({x2})")


def thooft_loop_spec(q: float, region=None, winding: int | None = None, L1: int | None = None) -> ObservableSpec:
    """'t Hooft loop around a rectangle or around the cylinder.

    ``region = (x0, y0, a, b)`` encloses sites ``x0 <= x1 < x0 + a`` and
    ``y0 <= x2 < y0 + b``; crossing links pointing out of the region get
    ``exp(+iq E)``, those pointing in get ``exp(-iq E)``.  ``winding = x2``
    gives the loop crossing the vertical links above row ``x2``.
    """
    if (region is None) == (winding is None):
        raise GeometryError("give exactly one of region or winding")
    if winding is not None:
        if L1 is None:
            raise GeometryError("a winding loop needs the circumference")
        path = () if q == 0 else tuple(FieldOp((x1, winding), "phase", "t", q) for x1 in range(L1))
        return ObservableSpec(ObservableKind.NC_THOOFT, path, f"GNC({winding})")
    try:
        x0, y0, a, b = (int(v) for v in region)
    except (TypeError, ValueError) as err:
        raise GeometryError("region must be (x0, y0, width, height)") from err
    if a < 1 or b < 1 or (L1 is not None and a >= L1):
        raise GeometryError("the dual path does not close around a contractible region")
    if q == 0:
        return ObservableSpec(ObservableKind.THOOFT_LOOP, (), "G(q=0)")
    path = []
    for j in range(y0, y0 + b):
        path.append(FieldOp((x0 + a - 1, j), "phase", "s", q))
        path.append(FieldOp((x0 - 1, j), "phase", "s", -q))
    for i in range(x0, x0 + a):
        path.append(FieldOp((i, y0 + b - 1), "phase", "t", q))
        if y0 > 0:
            path.append(FieldOp((i, y0 - 1), "phase", "t", -q))
    return ObservableSpec(ObservableKind.THOOFT_LOOP, tuple(path), f"G({a}x{b})")


def _walk(start, moves: str, forward_plus: bool) -> tuple:
    """Link operators along ``moves``; forward (up/right) steps get ``S+`` if ``forward_plus``."""
    x1, x2 = start
    ops = []
    for m in moves:
        if m not in _STEPS:
            raise GeometryError(f"unknown step {m!r}")
        dx, dy = _STEPS[m]
        fwd = dx + dy > 0
        tag = "S+" if fwd == forward_plus else "S-"
        link = "s" if dx else "t"
        base = (x1, x2) if fwd else (x1 + dx, x2 + dy)
        ops.append(FieldOp(base, tag, link))
        x1, x2 = x1 + dx, x2 + dy
    return tuple(ops), (x1, x2)


def _check_end(end, reached, L1):
    if end is None:
        return reached
    same = end[1] == reached[1] and (L1 is None and end[0] == reached[0]
                                     or L1 is not None and (end[0] - reached[0]) % L1 == 0)
    if not same:
        raise GeometryError(f"path ends at {reached}, not at {end}")
    return end


def meson_spec(start, moves: str, end=None, L1: int | None = None) -> ObservableSpec:
    """``psi^dag(end) [Wilson line] psi^dag(start)`` from an even to an odd site."""
    if staggering_sign(start) != 1:
        raise StaggeringError("a meson starts on an even site")
    links, reached = _walk(start, moves, forward_plus=True)
    end = _check_end(end, reached, L1)
    if staggering_sign(end) != -1:
        raise StaggeringError("a meson ends on an odd site")
    path = (FieldOp(tuple(end), "psidag"),) + links + (FieldOp(tuple(start), "psidag"),)
    return ObservableSpec(ObservableKind.MESON, path, f"M({moves})")


def tunnel_spec(start, moves: str, end=None, L1: int | None = None) -> ObservableSpec:
    """``psi^dag(end) [Wilson line] psi(start)`` between sites of equal parity."""
    links, reached = _walk(start, moves, forward_plus=staggering_sign(start) == -1)
    end = _check_end(end, reached, L1)
    if staggering_sign(end) != staggering_sign(start):
        raise StaggeringError("tunnelling connects sites of the same sublattice")
    path = (FieldOp(tuple(end), "psidag"),) + links + (FieldOp(tuple(start), "psi"),)
    return ObservableSpec(ObservableKind.TUNNEL, path, f"J({moves})")


def field_product_spec(ops) -> ObservableSpec:
    return ObservableSpec(ObservableKind.FIELD_PRODUCT, tuple(ops), "fields")


def horseshoe_meson_spec(width: int, l: int, anchor=(0, 0)) -> ObservableSpec:
    """Meson along half of the ``width x l`` rectangle anchored at ``anchor``.

    The pair sits at the midpoints of the two horizontal edges; the string
    runs along the left half.  Whichever midpoint is even starts the meson.
    """
    if width % 2 or width < 2:
        raise GeometryError("the horseshoe needs an even width")
    if l % 2 == 0:
        raise StaggeringError("the horseshoe needs an odd height so the endpoints differ in parity")
    x0, y0 = anchor
    half = width // 2
    bottom, top = (x0 + half, y0), (x0 + half, y0 + l)
    if staggering_sign(bottom) == 1:
        return meson_spec(bottom, "L" * half + "U" * l + "R" * half, top)
    return meson_spec(top, "L" * half + "D" * l + "R" * half, bottom)


# -------------------------------------------------------------- evaluation


def default_anchors(params: PepsParameters, geometry: Cylinder) -> tuple:
    """Horizontal anchors that are inequivalent under the cylinder's translations."""
    if geometry.boundary_flux:
        return tuple(range(geometry.L1))
    return (0,) if params.t == 0 else (0, 1)


def averaged(env: CylinderEnvironment, spec: ObservableSpec, anchors) -> tuple:
    raw = tuple(env.expectation(spec.shifted(dx1=a)) for a in anchors)
    return complex(np.mean(raw)), raw


@dataclass
class LoopStats:
    """Wilson-loop table keyed by ``(l1, l2)`` plus per-anchor raw values."""

    table: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def chi(self, l1: int, l2: int, floor: float = FLOOR) -> float:
        return creutz_chi(self, l1, l2, floor)

    def fit(self) -> "AreaPerimeterFit":
        return area_perimeter_fit(self)


def wilson_table(params: PepsParameters, geometry: Cylinder, l1s, l2s, anchors=None,
                 env: CylinderEnvironment | None = None) -> LoopStats:
    """Translation-averaged loops, vertically centred on the cylinder."""
    env = env or CylinderEnvironment(params, geometry)
    anchors = default_anchors(params, geometry) if anchors is None else tuple(anchors)
    stats = LoopStats()
    for l1 in l1s:
        for l2 in l2s:
            if l2 + 1 > geometry.L2:
                raise GeometryError(f"a loop of height {l2} does not fit in L2={geometry.L2}")
            y0 = (geometry.L2 - 1 - l2) // 2
            spec = wilson_loop_spec(l1, l2, (0, y0), geometry.L1)
            stats.table[(l1, l2)], stats.raw[(l1, l2)] = averaged(env, spec, anchors)
    return stats


def creutz_chi(stats: LoopStats, l1: int, l2: int, floor: float = FLOOR) -> float:
    """``-ln[W(l1,l2) W(l1-1,l2-1) / (W(l1-1,l2) W(l1,l2-1))]``."""
    keys = [(l1, l2), (l1 - 1, l2 - 1), (l1 - 1, l2), (l1, l2 - 1)]
    try:
        vals = [stats.table[k] for k in keys]
    except KeyError as err:
        raise ParameterError(f"loop {err.args[0]} missing from the table") from err
    if any(abs(v) <= floor for v in vals):
        raise NumericalFloorError(f"a loop value is below the floor {floor:g}")
    ratio = vals[0] * vals[1] / (vals[2] * vals[3])
    return float(-np.log(abs(ratio)))


@dataclass(frozen=True)
class AreaPerimeterFit:
    kappa_area: float
    kappa_perimeter: float
    constant: float
    residual: float
    law: str


def area_perimeter_fit(stats: LoopStats, floor: float = FLOOR, ratio: float = 3.0) -> AreaPerimeterFit:
    """Least squares of ``log|W|`` on ``(l1 l2, 2 (l1 + l2), 1)``."""
    rows, rhs = [], []
    for (l1, l2), v in sorted(stats.table.items()):
        if abs(v) > floor:
            rows.append((l1 * l2, 2 * (l1 + l2), 1.0))
            rhs.append(np.log(abs(v)))
    if len(rows) < 3:
        raise NumericalFloorError("fewer than three loops above the floor")
    A, b = np.array(rows, dtype=float), np.array(rhs)
    coef, *_ = np.linalg.lstsq(A, b, rcond=None)
    res = float(np.sqrt(np.mean((A @ coef - b) ** 2)))
    ka, kp = -coef[0], -coef[1]
    if ka > ratio * abs(kp):
        law = "area"
    elif kp > ratio * abs(ka):
        law = "perimeter"
    else:
        law = "mixed"
    return AreaPerimeterFit(float(ka), float(kp), float(coef[2]), res, law)


def horseshoe_rho(params: PepsParameters, l: int, geometry: Cylinder | None = None, width: int = 2,
                  anchors=None, env: CylinderEnvironment | None = None, floor: float = FLOOR) -> float:
    """``|<M^dag>| / sqrt(<W(width, l)>)`` with the meson on half of the loop.

    The default width 2 keeps the rectangle inside half the circumference
    for ``L1 = 4`` and ``6``.
    """
    if geometry is None:
        geometry = Cylinder(max(4, 2 * width), l + 7)
    if width > geometry.L1 // 2:
        raise GeometryError("the horseshoe rectangle does not fit in half the circumference")
    if l + 1 > geometry.L2:
        raise GeometryError("the horseshoe does not fit vertically")
    env = env or CylinderEnvironment(params, geometry)
    anchors = default_anchors(params, geometry) if anchors is None else tuple(anchors)
    y0 = (geometry.L2 - 1 - l) // 2
    num = den = 0.0
    for a in anchors:
        num += abs(env.expectation(horseshoe_meson_spec(width, l, (a, y0))))
        den += env.expectation(wilson_loop_spec(width, l, (a, y0), geometry.L1)).real
    num, den = num / len(anchors), den / len(anchors)
    if den <= floor:
        raise NumericalFloorError("the Wilson loop in the denominator is not positive")
    return float(num / np.sqrt(den))


def wilson_wilson_correlation(params: PepsParameters, x2: int, separation: int, L1: int = 4,
                              L2: int | None = None, buffer: int = 2,
                              env: CylinderEnvironment | None = None) -> float:
    """``<W^dag(x2) W(x2 + d)> - conj<W(x2)> <W(x2 + d)>`` for horizontal loops.

    At zero separation this is the (non-negative) variance of the loop.
    """
    if L2 is None:
        L2 = x2 + separation + buffer + 1
    if x2 < buffer or x2 + separation > L2 - 1 - buffer:
        raise GeometryError("both loops need the buffer rows to the boundaries")
    geometry = Cylinder(L1, L2)
    env = env or CylinderEnvironment(params, geometry)
    a = nc_wilson_spec(x2, L1, dagger=True)
    b = nc_wilson_spec(x2 + separation, L1)
    joint = env.expectation(ObservableSpec(ObservableKind.FIELD_PRODUCT, a.path + b.path))
    wa = env.expectation(nc_wilson_spec(x2, L1))
    wb = env.expectation(b)
    return float((joint - np.conj(wa) * wb).real)


@dataclass(frozen=True)
class CorrelationFit:
    separations: tuple
    values: tuple
    slope: float
    intercept: float
    r2: float
    reliable: bool
    truncated_at: int | None


def correlation_decay(params: PepsParameters, separations, x2: int = 2, L1: int = 4, buffer: int = 2,
                      floor: float = FLOOR) -> CorrelationFit:
    """Exponential fit of ``log|corr|`` against separation.

    Points from the first one below ``floor`` onwards are dropped; the fit is
    flagged unreliable when it is poor, not decaying, or when its decay length
    exceeds the separations probed.
    """
    seps = sorted(int(s) for s in separations)
    L2 = x2 + seps[-1] + buffer + 1
    env = CylinderEnvironment(params, Cylinder(L1, L2))
    vals, truncated = [], None
    for s in seps:
        v = wilson_wilson_correlation(params, x2, s, L1, L2, buffer, env)
        if abs(v) <= floor:
            truncated = s
            break
        vals.append(v)
    used = seps[: len(vals)]
    if len(used) < 2:
        return CorrelationFit(tuple(used), tuple(vals), float("nan"), float("nan"), float("nan"), False, truncated)
    xs, ys = np.array(used, float), np.log(np.abs(vals))
    slope, intercept = np.polyfit(xs, ys, 1)
    pred = slope * xs + intercept
    ss = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - float(np.sum((ys - pred) ** 2)) / ss if ss > 0 else 1.0
    span = xs[-1] - xs[0]
    reliable = bool(slope < 0 and r2 > 0.98 and -1.0 / slope < span)
    return CorrelationFit(tuple(used), tuple(vals), float(slope), float(intercept), float(r2), reliable, truncated)
