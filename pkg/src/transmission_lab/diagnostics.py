"""Free-boundary diagnostics on grid functions.

All suprema are node maxima.  The zero set is the band ``{|u| <= delta}``
and the negative phase is ``{u < -delta}``.  Hessian-based checks skip
nodes whose Chebyshev index distance to the free boundary is below
``collar`` (default 2), where central differences straddle the kink.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.ndimage import binary_dilation

from . import elliptic_ops as eo
from .discretization import (
    Grid,
    GridFunction,
    StencilSet,
    central_gradient_field,
    central_hessian_field,
    second_difference_field,
)
from .errors import InvalidInputError, OutOfDomainError, ResolutionError
from .geometry import min_diameter
from .solver import ZERO, PartitionState, update_partition

DEFAULT_C0 = 0.1


class Measurement(NamedTuple):
    """A scalar diagnostic with an optional flag (``"low_resolution"``, ``"empty_set"``)."""

    value: float
    flag: str | None = None


def _pts(u: GridFunction) -> np.ndarray:
    return u.grid.points().reshape(-1, u.grid.d)


def _ball(u: GridFunction, x, r: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (u.grid.d,):
        raise InvalidInputError(f"center must have {u.grid.d} coordinates")
    if not r > 0:
        raise InvalidInputError("radius must be positive")
    dist = np.linalg.norm(_pts(u) - x, axis=1)
    return (dist <= r * (1 + 1e-12)).reshape(u.grid.shape)


def _scale(u: GridFunction) -> float:
    return max(1.0, float(np.max(np.abs(u.values))))


def volume_density(u: GridFunction, x, r: float, delta: float = 0.0) -> Measurement:
    """Negative-phase volume in ``B_r(x)`` divided by ``r^d``, counted by nodes."""
    ball = _ball(u, x, r)
    g = u.grid
    val = float(np.count_nonzero(ball & (u.values < -delta))) * g.h ** g.d / r ** g.d
    return Measurement(val, "low_resolution" if r < 2 * g.h else None)


def zero_set_points(u: GridFunction, x, r: float, delta: float = 0.0) -> np.ndarray:
    mask = _ball(u, x, r) & (np.abs(u.values) <= delta)
    return u.grid.points()[mask]


def thickness(u: GridFunction, x, r: float, delta: float = 0.0) -> Measurement:
    """Minimal slab width of the zero set inside ``B_r(x)``, divided by ``r``."""
    P = zero_set_points(u, x, r, delta)
    if len(P) == 0:
        return Measurement(0.0, "empty_set")
    flag = "low_resolution" if r < 2 * u.grid.h else None
    return Measurement(min_diameter(P) / r, flag)


@dataclass
class GrowthProfile:
    center: tuple
    j: np.ndarray
    radii: np.ndarray
    S: np.ndarray
    in_M: np.ndarray
    exponent: float
    constant: float
    degenerate: bool = False

    @property
    def ratio(self) -> np.ndarray:
        """``S_j 2^{2j}``."""
        return self.S * 4.0 ** self.j

    def rows(self) -> list:
        return [(int(j), float(r), float(s), float(q), bool(m))
                for j, r, s, q, m in zip(self.j, self.radii, self.S, self.ratio, self.in_M)]


def _sup_abs(u: GridFunction, x, r: float) -> float:
    ball = _ball(u, x, r)
    if not ball.any():
        raise ResolutionError(f"ball of radius {r} around {tuple(x)} contains no nodes")
    return float(np.max(np.abs(u.values[ball])))


def growth_profile(u: GridFunction, x, j0: int, j1: int) -> GrowthProfile:
    """Dyadic suprema ``S_j = sup_{B_{2^-j}(x)} |u|`` for ``j = j0..j1``.

    ``j`` belongs to the mask when ``S_{j+1} >= S_j / 16`` (so ``S_{j1+1}`` is
    also measured).  The exponent is the least-squares slope of ``log S``
    against ``log r`` over radii with ``S > 0``.
    """
    if j1 < j0:
        raise InvalidInputError("need j0 <= j1")
    g = u.grid
    if 2.0 ** -j1 < 2 * g.h * (1 - 1e-12):
        raise ResolutionError(f"2^-{j1} is below two grid spacings")
    x = np.asarray(x, dtype=float)
    if np.any(x < np.asarray(g.lower)) or np.any(x > np.asarray(g.upper)):
        raise OutOfDomainError("center lies outside the grid")
    js = np.arange(j0, j1 + 2)
    S_all = np.array([_sup_abs(u, x, 2.0 ** -int(j)) for j in js])
    S = S_all[:-1]
    in_M = S_all[1:] >= S / 16.0
    j = js[:-1]
    radii = 2.0 ** -j.astype(float)
    pos = S > 0
    degenerate = not pos.any()
    if pos.sum() >= 2:
        slope, icpt = np.polyfit(np.log(radii[pos]), np.log(S[pos]), 1)
        exponent, constant = float(slope), float(np.exp(icpt))
    else:
        exponent, constant = math.nan, math.nan
    return GrowthProfile(tuple(map(float, x)), j, radii, S, in_M & pos, exponent, constant,
                         degenerate)


@dataclass
class NondegeneracyTable:
    center: tuple
    radii: np.ndarray
    N: np.ndarray

    @property
    def constant(self) -> float:
        return float(np.min(self.N))

    @property
    def failed(self) -> bool:
        return not self.constant > 0


def nondegeneracy_profile(u: GridFunction, x, radii) -> NondegeneracyTable:
    """``N(r) = sup u / r^2`` over the node annulus ``| |y - x| - r | <= h``."""
    x = np.asarray(x, dtype=float)
    dist = np.linalg.norm(_pts(u) - x, axis=1).reshape(u.grid.shape)
    h = u.grid.h
    out = []
    radii = np.asarray(radii, dtype=float)
    for r in radii:
        if not r > 0:
            raise InvalidInputError("radii must be positive")
        ring = np.abs(dist - r) <= h * (1 + 1e-12)
        if not ring.any():
            raise ResolutionError(f"annulus of radius {r} contains no nodes")
        out.append(float(np.max(u.values[ring])) / r ** 2)
    return NondegeneracyTable(tuple(map(float, x)), radii, np.array(out))


def unit_grid(d: int, r: float, h: float) -> Grid:
    """Grid on ``[-1, 1]^d`` whose spacing is ``h / r`` (rounded to fit)."""
    n = 2 * max(1, int(round(r / h))) + 1
    return Grid.square(d, -1.0, 1.0, n)


def blow_up(u: GridFunction, x0, r: float, target: Grid | None = None) -> GridFunction:
    """Rescaling ``y -> u(x0 + r y) / r^2`` sampled on ``target`` by multilinear interpolation.

    The default target is :func:`unit_grid`, which maps onto source nodes
    whenever ``x0`` is a node and ``r`` a multiple of ``h``.
    """
    g = u.grid
    x0 = np.asarray(x0, dtype=float)
    if not r > 0:
        raise InvalidInputError("radius must be positive")
    target = target or unit_grid(g.d, r, g.h)
    if target.d != g.d:
        raise InvalidInputError("target grid dimension differs from source")
    Y = x0 + r * target.points()
    tol = 1e-12 * max(1.0, float(np.max(np.abs(g.upper))))
    if np.any(Y < np.asarray(g.lower) - tol) or np.any(Y > np.asarray(g.upper) + tol):
        raise OutOfDomainError("rescaled target grid leaves the source domain")
    Y = np.clip(Y, g.lower, g.upper)
    interp = RegularGridInterpolator(tuple(g.axes()), np.asarray(u.values), method="linear")
    vals = interp(Y.reshape(-1, g.d)).reshape(target.shape) / r ** 2
    return GridFunction(target, vals)


def checked_nodes(u: GridFunction, partition: PartitionState | None = None,
                  delta: float = 0.0, collar: int = 2) -> np.ndarray:
    """Interior nodes at Chebyshev index distance ``>= collar`` from the free boundary."""
    part = partition or update_partition(u, delta)
    mask = u.grid.interior_mask()
    if collar > 0 and part.free_boundary.any():
        near = binary_dilation(part.free_boundary,
                               structure=np.ones((2 * collar - 1,) * u.grid.d, dtype=bool))
        mask &= ~near
    return mask


def _hessians(u: GridFunction, mask: np.ndarray) -> np.ndarray:
    return central_hessian_field(u)[mask]


@dataclass
class ViscosityPairReport:
    violations: int
    checked: int
    worst_min_margin: float
    worst_max_margin: float
    tol: float


def check_viscosity_pair(u: GridFunction, F1, F2, delta: float = 0.0, rhs: float = 1.0,
                         tol: float | None = None, collar: int = 2) -> ViscosityPairReport:
    """Count nodes with ``min(F1, F2) > rhs + tol`` or ``max(F1, F2) < -rhs - tol``.

    Margins are ``rhs - min(F1, F2)`` and ``max(F1, F2) + rhs``; negative
    margins beyond ``-tol`` are violations.
    """
    tol = 10 * u.grid.h ** 2 * _scale(u) if tol is None else tol
    mask = checked_nodes(u, None, delta, collar)
    H = _hessians(u, mask)
    if len(H) == 0:
        return ViscosityPairReport(0, 0, math.inf, math.inf, tol)
    a, b = eo.evaluate_many(F1, H), eo.evaluate_many(F2, H)
    mn, mx = np.minimum(a, b), np.maximum(a, b)
    m1, m2 = rhs - mn, mx + rhs
    bad = (m1 < -tol) | (m2 < -tol)
    return ViscosityPairReport(int(bad.sum()), int(len(H)), float(m1.min()), float(m2.min()), tol)


def class_membership(u: GridFunction, b: "eo.EllipticityBounds", f: float = 1.0,
                     delta: float = 0.0, tol: float | None = None, collar: int = 2) -> dict:
    """Pointwise Pucci-class flags on checked nodes.

    ``S_bar``: ``M^-(D^2u) <= f``; ``S_under``: ``M^+(D^2u) >= f``;
    ``S`` both; ``S_star``: ``M^-(D^2u) <= |f|`` and ``M^+(D^2u) >= -|f|``.
    """
    tol = 10 * u.grid.h ** 2 * _scale(u) if tol is None else tol
    H = _hessians(u, checked_nodes(u, None, delta, collar))
    lo = eo.evaluate_many(eo.PucciMinus(b), H)
    hi = eo.evaluate_many(eo.PucciPlus(b), H)
    s_bar = bool(np.all(lo <= f + tol))
    s_under = bool(np.all(hi >= f - tol))
    s_star = bool(np.all(lo <= abs(f) + tol) and np.all(hi >= -abs(f) - tol))
    return {"S_bar": s_bar, "S_under": s_under, "S": s_bar and s_under, "S_star": s_star,
            "checked": int(len(H))}


def central_half(grid: Grid) -> np.ndarray:
    lo, hi = np.asarray(grid.lower), np.asarray(grid.upper)
    c, q = (lo + hi) / 2, (hi - lo) / 4
    return np.all(np.abs(grid.points() - c) <= q * (1 + 1e-12), axis=-1)


def c11_seminorm(u: GridFunction, stencil: StencilSet | None = None) -> float:
    """Max ``|second difference|`` over stencil directions in the central half of the box."""
    stencil = stencil or StencilSet.default(u.grid.d)
    mask = central_half(u.grid) & u.grid.interior_mask()
    best = 0.0
    for e in stencil.directions:
        D = second_difference_field(u, e)[mask]
        D = D[np.isfinite(D)]
        if D.size:
            best = max(best, float(np.max(np.abs(D))))
    return best


def convexity_gap(u: GridFunction, delta: float = 0.0, collar: int = 2) -> float:
    """``max(0, -min eigenvalue)`` of the central Hessian over checked nodes.

    ``collar=0`` includes the free-boundary collar.
    """
    H = _hessians(u, checked_nodes(u, None, delta, collar))
    if len(H) == 0:
        return 0.0
    return max(0.0, -float(np.linalg.eigvalsh(H)[:, 0].min()))


def gradient_support_check(u: GridFunction, partition: PartitionState | None = None,
                           delta: float = 0.0, tol: float | None = None) -> int:
    """Zero-labelled interior nodes whose central gradient exceeds ``10 h scale``."""
    part = partition or update_partition(u, delta)
    tol = 10 * u.grid.h * _scale(u) if tol is None else tol
    G = np.linalg.norm(central_gradient_field(u), axis=-1)
    mask = (part.labels == ZERO) & np.isfinite(G)
    return int(np.count_nonzero(G[mask] > tol))


def fb_cell_fraction(partition: PartitionState, grid: Grid) -> float:
    return float(partition.free_boundary.sum()) * grid.h ** grid.d / grid.volume


@dataclass
class DiagnosticsReport:
    """Everything requested from a diagnostics run; unset entries stay ``None``."""

    grid: dict
    delta: float
    C0: float = DEFAULT_C0
    growth: list = field(default_factory=list)
    density: list = field(default_factory=list)
    thickness: list = field(default_factory=list)
    nondegeneracy: list = field(default_factory=list)
    nondegeneracy_constant: float | None = None
    a4_holds: bool | None = None
    c11_seminorm: float | None = None
    viscosity_pair: dict | None = None
    convexity_gap: float | None = None
    fb_cell_fraction: float | None = None
    gradient_support_violations: int | None = None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["growth"] = [
            {"center": list(g.center), "exponent": g.exponent, "constant": g.constant,
             "degenerate": g.degenerate,
             "rows": [dict(zip(("j", "r", "S", "ratio", "in_M"), row)) for row in g.rows()]}
            for g in self.growth]
        for key in ("density", "thickness", "nondegeneracy"):
            out[key] = [{"center": list(c), "r": r, "value": v} for c, r, v in getattr(self, key)]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True)

    def write(self, directory, prefix: str = "diagnostics") -> list:
        """Write JSON plus CSV tables into ``directory``; returns emitted file names."""
        from pathlib import Path

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = [f"{prefix}.json"]
        (directory / files[0]).write_text(self.to_json() + "\n")
        for key in ("density", "thickness", "nondegeneracy"):
            rows = getattr(self, key)
            if rows:
                name = f"{prefix}_{key}.csv"
                with open(directory / name, "w", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(["center", "r", "value"])
                    for c, r, v in rows:
                        w.writerow([";".join(_f(t) for t in c), _f(r), _f(v)])
                files.append(name)
        for k, g in enumerate(self.growth):
            name = f"{prefix}_growth_{k}.csv"
            with open(directory / name, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["j", "r", "S", "ratio", "in_M"])
                for j, r, s, q, m in g.rows():
                    w.writerow([j, _f(r), _f(s), _f(q), int(m)])
            files.append(name)
        return files


def _f(x: float) -> str:
    return "%.17g" % x


DIAGNOSTIC_KEYS = {"centers", "radii", "j_range", "nondeg_radii", "C0", "checks", "delta"}
CHECKS = ("c11", "viscosity_pair", "convexity", "fb_fraction", "gradient_support")


def run_diagnostics(u: GridFunction, request: dict | None, F1=None, F2=None,
                    delta: float = 0.0) -> DiagnosticsReport:
    """Evaluate a diagnostics request.

    ``request`` keys: ``centers`` (list of points), ``radii`` (density and
    thickness radii), ``j_range`` (``[j0, j1]``), ``nondeg_radii``, ``C0``,
    ``checks`` (subset of :data:`CHECKS`) and ``delta``.  An empty request
    yields a report with metadata only.
    """
    request = dict(request or {})
    unknown = set(request) - DIAGNOSTIC_KEYS
    if unknown:
        raise InvalidInputError(f"unknown diagnostics keys: {sorted(unknown)}")
    delta = float(request.get("delta", delta))
    C0 = float(request.get("C0", DEFAULT_C0))
    rep = DiagnosticsReport(u.grid.to_config(), delta, C0)
    centers = [tuple(map(float, c)) for c in request.get("centers", [])]
    for c in centers:
        for r in request.get("radii", []):
            rep.density.append((c, float(r), volume_density(u, c, r, delta).value))
            rep.thickness.append((c, float(r), thickness(u, c, r, delta).value))
        if "j_range" in request:
            j0, j1 = request["j_range"]
            rep.growth.append(growth_profile(u, c, int(j0), int(j1)))
        radii = request.get("nondeg_radii", [])
        if radii:
            tab = nondegeneracy_profile(u, c, radii)
            rep.nondegeneracy.extend((c, float(r), float(n)) for r, n in zip(tab.radii, tab.N))
    if rep.nondegeneracy:
        rep.nondegeneracy_constant = min(v for _, _, v in rep.nondegeneracy)
    if rep.density:
        rep.a4_holds = all(v <= C0 for _, _, v in rep.density)
    checks = request.get("checks", [])
    bad = set(checks) - set(CHECKS)
    if bad:
        raise InvalidInputError(f"unknown checks: {sorted(bad)}")
    part = update_partition(u, delta) if checks else None
    if "c11" in checks:
        rep.c11_seminorm = c11_seminorm(u)
    if "viscosity_pair" in checks:
        if F1 is None or F2 is None:
            raise InvalidInputError("viscosity_pair check needs F1 and F2")
        rep.viscosity_pair = asdict(check_viscosity_pair(u, F1, F2, delta))
    if "convexity" in checks:
        rep.convexity_gap = convexity_gap(u, delta)
    if "fb_fraction" in checks:
        rep.fb_cell_fraction = fb_cell_fraction(part, u.grid)
    if "gradient_support" in checks:
        rep.gradient_support_violations = gradient_support_check(u, part, delta)
    return rep
