"""Uniform Cartesian grids and monotone wide-stencil finite differences.

A diffusion matrix ``A`` is split as ``A ~ sum_k beta_k e_k e_k^T`` with
``beta_k >= 0`` over stencil directions ``e_k = v_k/|v_k|``; the operator
``tr(A D^2 u)`` is then discretized as ``sum_k beta_k Delta_{v_k} u``, where
``Delta_v u(x) = (u(x+hv) - 2u(x) + u(x-hv)) / (h|v|)^2``.  Nonnegative weights
make the scheme monotone.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.optimize
import scipy.sparse as sp

from .elliptic_ops import as_sym_matrix, eigenvalues
from .errors import InvalidInputError, OutOfDomainError

_H_RTOL = 1e-9


@dataclass(frozen=True)
class Grid:
    """Box ``[lower, upper]`` with ``n[i]`` nodes on axis ``i`` and equal spacing."""

    lower: tuple
    upper: tuple
    n: tuple

    def __post_init__(self):
        lower = tuple(float(x) for x in np.atleast_1d(self.lower))
        upper = tuple(float(x) for x in np.atleast_1d(self.upper))
        n = np.atleast_1d(self.n)
        if n.size == 1 and len(lower) > 1:
            n = np.repeat(n, len(lower))
        n = tuple(int(k) for k in n)
        if not (len(lower) == len(upper) == len(n)) or len(n) < 1:
            raise InvalidInputError("lower, upper and n must have the same length")
        if len(n) > 3:
            raise InvalidInputError("grids are limited to d <= 3")
        if any(k < 3 for k in n):
            raise InvalidInputError("need at least 3 nodes per axis")
        if any(not (b > a) for a, b in zip(lower, upper)):
            raise InvalidInputError("upper corner must exceed lower corner on every axis")
        hs = [(b - a) / (k - 1) for a, b, k in zip(lower, upper, n)]
        if max(hs) - min(hs) > _H_RTOL * max(hs):
            raise InvalidInputError(f"spacing must agree across axes, got {hs}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "n", n)

    @classmethod
    def square(cls, d: int, lower: float, upper: float, n: int) -> "Grid":
        return cls((lower,) * d, (upper,) * d, (n,) * d)

    @classmethod
    def from_config(cls, cfg: dict) -> "Grid":
        allowed = {"dimension", "lower", "upper", "nodes_per_axis"}
        unknown = set(cfg) - allowed
        if unknown:
            raise InvalidInputError(f"unknown grid keys: {sorted(unknown)}")
        d = int(cfg.get("dimension", 2))
        lower = np.broadcast_to(np.asarray(cfg.get("lower", -1.0), float), (d,))
        upper = np.broadcast_to(np.asarray(cfg.get("upper", 1.0), float), (d,))
        n = np.broadcast_to(np.asarray(cfg.get("nodes_per_axis", 65), int), (d,))
        return cls(tuple(lower), tuple(upper), tuple(n))

    def to_config(self) -> dict:
        return {
            "dimension": self.d,
            "lower": list(self.lower),
            "upper": list(self.upper),
            "nodes_per_axis": list(self.n),
        }

    @property
    def d(self) -> int:
        return len(self.n)

    @property
    def h(self) -> float:
        return (self.upper[0] - self.lower[0]) / (self.n[0] - 1)

    @property
    def shape(self) -> tuple:
        return self.n

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @property
    def volume(self) -> float:
        return float(np.prod([b - a for a, b in zip(self.lower, self.upper)]))

    def axes(self) -> list[np.ndarray]:
        return [a + self.h * np.arange(k) for a, k in zip(self.lower, self.n)]

    def points(self) -> np.ndarray:
        """Node coordinates as ``shape + (d,)``, row-major node order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def coordinate(self, node) -> np.ndarray:
        node = self._check_node(node)
        return np.array([a + self.h * i for a, i in zip(self.lower, node)])

    def nearest_node(self, x) -> tuple:
        x = np.asarray(x, float)
        idx = np.rint((x - np.asarray(self.lower)) / self.h).astype(int)
        if np.any(idx < 0) or np.any(idx >= np.asarray(self.n)):
            raise OutOfDomainError(f"point {x.tolist()} is outside the grid")
        return tuple(int(i) for i in idx)

    def flat_index(self, node) -> int:
        return int(np.ravel_multi_index(self._check_node(node), self.n))

    def _check_node(self, node) -> tuple:
        node = tuple(int(i) for i in node)
        if len(node) != self.d or any(i < 0 or i >= k for i, k in zip(node, self.n)):
            raise OutOfDomainError(f"node {node} is outside the grid {self.n}")
        return node

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        for ax in range(self.d):
            sl = [slice(None)] * self.d
            sl[ax] = 0
            mask[tuple(sl)] = True
            sl[ax] = -1
            mask[tuple(sl)] = True
        return mask

    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask()

    def index_distance_to_boundary(self) -> np.ndarray:
        """Per node, ``min_i min(idx_i, n_i - 1 - idx_i)``."""
        idx = np.indices(self.n)
        dist = [np.minimum(idx[a], k - 1 - idx[a]) for a, k in enumerate(self.n)]
        return np.min(dist, axis=0)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Finite values of a scalar function at every node of ``grid``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.size != self.grid.size:
            raise InvalidInputError(f"expected {self.grid.size} values, got {v.size}")
        v = v.reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("grid function has non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def sample(cls, grid: Grid, f: Callable) -> "GridFunction":
        """Evaluate ``f`` on the node coordinates (array of shape ``(..., d)``)."""
        return cls(grid, np.asarray(f(grid.points()), dtype=float))

    def at(self, node) -> float:
        return float(self.values[self.grid._check_node(node)])

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


# ----------------------------------------------------------------- stencils


def _canonical(v):
    for c in v:
        if c != 0:
            return v if c > 0 else tuple(-x for x in v)
    return v


def _primitive_directions(d: int, radius: int):
    out = set()
    for v in itertools.product(range(-radius, radius + 1), repeat=d):
        if any(v) and math.gcd(*[abs(c) for c in v]) == 1:
            out.add(_canonical(v))
    # shells of increasing length; inside a shell, sort by angle for determinism
    return sorted(out, key=lambda v: (sum(c * c for c in v), max(abs(c) for c in v),
                                      tuple(-abs(c) for c in v), tuple(-c for c in v)))


@dataclass(frozen=True)
class StencilSet:
    """Pairwise non-parallel integer offsets, axes first."""

    directions: tuple

    def __post_init__(self):
        dirs = tuple(tuple(int(c) for c in v) for v in self.directions)
        if not dirs:
            raise InvalidInputError("stencil must contain at least one direction")
        d = len(dirs[0])
        if any(len(v) != d or not any(v) for v in dirs):
            raise InvalidInputError("directions must be nonzero and of equal dimension")
        canon = [_canonical(tuple(c // math.gcd(*[abs(x) for x in v]) for c in v)) for v in dirs]
        if len(set(canon)) != len(canon):
            raise InvalidInputError("stencil directions must be pairwise non-parallel")
        for ax in range(d):
            e = tuple(1 if i == ax else 0 for i in range(d))
            if e not in canon:
                raise InvalidInputError("stencil must contain the coordinate axes")
        object.__setattr__(self, "directions", dirs)

    @classmethod
    def default(cls, d: int = 2, K: int | None = None) -> "StencilSet":
        """First ``K`` primitive directions by length (2-D default ``K=8``:
        axes, diagonals and knight moves)."""
        if K is None:
            K = {1: 1, 2: 8, 3: 13}[d]
        if K < d:
            raise InvalidInputError(f"K must be at least d={d}")
        radius = 1
        while True:
            cands = _primitive_directions(d, radius)
            # every direction shorter than the current radius is present
            complete = [v for v in cands if sum(c * c for c in v) <= radius * radius]
            if len(complete) >= K:
                return cls(tuple(complete[:K]))
            radius += 1

    @classmethod
    def axes(cls, d: int) -> "StencilSet":
        return cls(tuple(tuple(1 if i == a else 0 for i in range(d)) for a in range(d)))

    @property
    def d(self) -> int:
        return len(self.directions[0])

    @property
    def K(self) -> int:
        return len(self.directions)

    def offsets(self) -> np.ndarray:
        return np.array(self.directions, dtype=int)

    def unit_vectors(self) -> np.ndarray:
        V = self.offsets().astype(float)
        return V / np.linalg.norm(V, axis=1, keepdims=True)

    def widths(self) -> np.ndarray:
        return np.abs(self.offsets()).max(axis=1)

    def shells(self) -> list[int]:
        """End index of each group of equal-length directions."""
        sq = (self.offsets() ** 2).sum(axis=1)
        return [i + 1 for i in range(self.K) if i + 1 == self.K or sq[i + 1] != sq[i]]


@dataclass(frozen=True, eq=False)
class DirectionalDecomposition:
    """``target ~ sum_k weights[k] e_k e_k^T`` with nonnegative weights."""

    stencil: StencilSet
    weights: np.ndarray
    residual: float
    target: np.ndarray = field(repr=False)

    def matrix(self) -> np.ndarray:
        E = self.stencil.unit_vectors()
        return np.einsum("k,ki,kj->ij", self.weights, E, E)

    def active(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)


def _sym_vector_map(d: int):
    pairs = [(i, j) for i in range(d) for j in range(i, d)]
    w = np.array([1.0 if i == j else math.sqrt(2.0) for i, j in pairs])
    return pairs, w


def decompose_positive(A, S: StencilSet, tol: float = 1e-12) -> DirectionalDecomposition:
    """Nonnegative least-squares split of a PSD matrix over stencil directions.

    Shells of increasing stencil length are added one at a time and the first
    exact fit is kept, so ``A`` uses the narrowest stencil that represents it.
    The residual is the Frobenius norm of ``A - sum_k beta_k e_k e_k^T``.
    """
    A = as_sym_matrix(A, S.d)
    e = eigenvalues(A)
    scale = max(1.0, float(np.abs(e).max()))
    if e[0] < -1e-12 * scale:
        raise InvalidInputError(f"matrix is not positive semidefinite (min eigenvalue {e[0]})")
    pairs, w = _sym_vector_map(S.d)
    E = S.unit_vectors()
    cols = np.array([[w[p] * E[k, i] * E[k, j] for p, (i, j) in enumerate(pairs)]
                     for k in range(S.K)]).T
    b = np.array([w[p] * A[i, j] for p, (i, j) in enumerate(pairs)])
    norm_a = float(np.linalg.norm(A))
    beta = np.zeros(S.K)
    res = norm_a
    for end in S.shells():
        sol, r = scipy.optimize.nnls(cols[:, :end], b)
        beta = np.zeros(S.K)
        beta[:end] = sol
        res = float(r)
        if res <= tol * max(1.0, norm_a):
            break
    beta[beta < 1e-14 * scale] = 0.0
    res = float(np.linalg.norm(A - np.einsum("k,ki,kj->ij", beta, E, E)))
    return DirectionalDecomposition(S, beta, res, A)


# ------------------------------------------------------- difference operators


def second_difference(u: GridFunction, node, direction) -> float:
    """``(u(x+hv) - 2u(x) + u(x-hv)) / (h|v|)^2`` at ``node``."""
    g = u.grid
    node = np.array(g._check_node(node))
    v = np.asarray(direction, dtype=int)
    if v.shape != (g.d,) or not v.any():
        raise InvalidInputError(f"invalid offset {direction}")
    plus, minus = node + v, node - v
    n = np.asarray(g.n)
    if np.any(plus < 0) or np.any(plus >= n) or np.any(minus < 0) or np.any(minus >= n):
        raise OutOfDomainError(f"offset {tuple(v)} leaves the grid at node {tuple(node)}")
    vals = u.values
    step2 = g.h * g.h * float(v @ v)
    return float((vals[tuple(plus)] - 2.0 * vals[tuple(node)] + vals[tuple(minus)]) / step2)


def second_difference_field(u: GridFunction, direction) -> np.ndarray:
    """Second difference along ``direction`` at every node; NaN where it leaves the grid."""
    g = u.grid
    v = np.asarray(direction, dtype=int)
    out = np.full(g.shape, np.nan)
    centre, plus, minus = [], [], []
    for ax, c in enumerate(v):
        k = g.n[ax]
        c = abs(int(c))
        centre.append(slice(c, k - c))
    sl_c = tuple(centre)
    sl_p = tuple(slice(s.start + int(c), s.stop + int(c)) for s, c in zip(centre, v))
    sl_m = tuple(slice(s.start - int(c), s.stop - int(c)) for s, c in zip(centre, v))
    vals = u.values
    out[sl_c] = (vals[sl_p] - 2.0 * vals[sl_c] + vals[sl_m]) / (g.h * g.h * float(v @ v))
    return out


def central_hessian(u: GridFunction, node) -> np.ndarray:
    """Second-order central difference Hessian at an interior node."""
    g = u.grid
    node = g._check_node(node)
    if any(i < 1 or i > k - 2 for i, k in zip(node, g.n)):
        raise OutOfDomainError(f"node {node} is on the boundary")
    vals, h2, d = u.values, g.h * g.h, g.d
    H = np.empty((d, d))
    x = np.array(node)
    E = np.eye(d, dtype=int)
    for i in range(d):
        H[i, i] = (vals[tuple(x + E[i])] - 2.0 * vals[node] + vals[tuple(x - E[i])]) / h2
        for j in range(i + 1, d):
            H[i, j] = H[j, i] = (
                vals[tuple(x + E[i] + E[j])] - vals[tuple(x + E[i] - E[j])]
                - vals[tuple(x - E[i] + E[j])] + vals[tuple(x - E[i] - E[j])]
            ) / (4.0 * h2)
    return H


def central_hessian_field(u: GridFunction) -> np.ndarray:
    """Central Hessians at all nodes, shape ``grid.shape + (d, d)``; NaN on the boundary."""
    g = u.grid
    d, h2, vals = g.d, g.h * g.h, u.values
    H = np.full(g.shape + (d, d), np.nan)
    inner = tuple(slice(1, k - 1) for k in g.n)

    def shifted(off):
        return vals[tuple(slice(1 + o, k - 1 + o) for o, k in zip(off, g.n))]

    E = np.eye(d, dtype=int)
    c = vals[inner]
    for i in range(d):
        H[inner + (i, i)] = (shifted(E[i]) - 2.0 * c + shifted(-E[i])) / h2
        for j in range(i + 1, d):
            mixed = (shifted(E[i] + E[j]) - shifted(E[i] - E[j])
                     - shifted(-E[i] + E[j]) + shifted(-E[i] - E[j])) / (4.0 * h2)
            H[inner + (i, j)] = mixed
            H[inner + (j, i)] = mixed
    return H


def central_gradient_field(u: GridFunction) -> np.ndarray:
    """Central-difference gradient, shape ``grid.shape + (d,)``; NaN on the boundary."""
    g = u.grid
    G = np.full(g.shape + (g.d,), np.nan)
    inner = tuple(slice(1, k - 1) for k in g.n)
    for ax in range(g.d):
        up = tuple(slice(2, k) if a == ax else slice(1, k - 1) for a, k in enumerate(g.n))
        dn = tuple(slice(0, k - 2) if a == ax else slice(1, k - 1) for a, k in enumerate(g.n))
        G[inner + (ax,)] = (u.values[up] - u.values[dn]) / (2.0 * g.h)
    return G


def _fits(grid: Grid, offsets: np.ndarray) -> np.ndarray:
    """Mask of nodes where every offset in ``offsets`` stays inside the grid."""
    idx = np.indices(grid.n)
    ok = np.ones(grid.shape, dtype=bool)
    for v in offsets:
        for ax, c in enumerate(v):
            c = abs(int(c))
            ok &= (idx[ax] >= c) & (idx[ax] <= grid.n[ax] - 1 - c)
    return ok


def _axis_fallback(dec: DirectionalDecomposition) -> DirectionalDecomposition:
    # PSD-ness of the target guarantees a nonnegative diagonal
    return decompose_positive(dec.target, StencilSet.axes(dec.stencil.d))


def operator_matrix(dec: DirectionalDecomposition, grid: Grid) -> tuple[sp.csr_matrix, np.ndarray]:
    """Sparse matrix of ``u -> sum_k beta_k Delta_{v_k} u`` on interior nodes.

    Boundary rows are empty.  Interior nodes where an active wide offset leaves
    the grid use the axis-only split of the same target instead; their mask is
    returned alongside the matrix.
    """
    if dec.stencil.d != grid.d:
        raise InvalidInputError("decomposition and grid dimensions differ")
    interior = grid.interior_mask()
    act = dec.active()
    offs = dec.stencil.offsets()
    wide_ok = _fits(grid, offs[act]) if act.size else np.ones(grid.shape, bool)
    fallback = interior & ~wide_ok
    flat = np.arange(grid.size).reshape(grid.shape)
    rows, cols, vals = [], [], []

    def add(d: DirectionalDecomposition, mask: np.ndarray):
        nodes = np.argwhere(mask)
        if nodes.size == 0:
            return
        centre = flat[tuple(nodes.T)]
        V = d.stencil.offsets()
        for k in d.active():
            v = V[k]
            c = d.weights[k] / (grid.h * grid.h * float(v @ v))
            p = flat[tuple((nodes + v).T)]
            m = flat[tuple((nodes - v).T)]
            rows.extend((centre, centre, centre))
            cols.extend((p, m, centre))
            vals.extend((np.full(centre.size, c), np.full(centre.size, c),
                         np.full(centre.size, -2.0 * c)))

    add(dec, interior & wide_ok)
    if fallback.any():
        add(_axis_fallback(dec), fallback)
    if rows:
        L = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(grid.size, grid.size)).tocsr()
    else:
        L = sp.csr_matrix((grid.size, grid.size))
    L.sum_duplicates()
    return L, fallback


def apply_linear_operator(dec: DirectionalDecomposition, u: GridFunction,
                          return_fallback: bool = False):
    """Node-wise ``sum_k beta_k Delta_{v_k} u`` (zero on boundary nodes)."""
    L, fallback = operator_matrix(dec, u.grid)
    out = GridFunction(u.grid, L @ u.values.ravel())
    return (out, fallback) if return_fallback else out


# --------------------------------------------------------------------- I/O


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_field_csv(u: GridFunction, path) -> None:
    """CSV with header ``x1,...,xd,u``; one row per node in row-major order."""
    g = u.grid
    pts = g.points().reshape(-1, g.d)
    vals = u.values.ravel()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(g.d)] + ["u"])
        for p, v in zip(pts, vals):
            w.writerow([_fmt(c) for c in p] + [_fmt(v)])


def read_field_csv(path, grid: Grid) -> GridFunction:
    """Load a field dump and check it matches ``grid`` node for node."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidInputError("empty field CSV")
    header = rows[0]
    expected = [f"x{i + 1}" for i in range(grid.d)] + ["u"]
    if header != expected:
        raise InvalidInputError(f"CSV header {header} does not match {expected}")
    body = rows[1:]
    if len(body) != grid.size:
        raise InvalidInputError(f"CSV has {len(body)} nodes, grid has {grid.size}")
    try:
        data = np.array([[float(c) for c in r] for r in body])
    except ValueError as exc:
        raise InvalidInputError(f"malformed CSV value: {exc}") from exc
    if data.shape[1] != grid.d + 1:
        raise InvalidInputError("CSV rows have the wrong number of columns")
    pts = grid.points().reshape(-1, grid.d)
    if np.abs(data[:, :-1] - pts).max() > 1e-9 * max(1.0, np.abs(pts).max()):
        raise InvalidInputError("CSV coordinates do not match the grid")
    return GridFunction(grid, data[:, -1])


__all__ = [
    "Grid",
    "GridFunction",
    "StencilSet",
    "DirectionalDecomposition",
    "decompose_positive",
    "second_difference",
    "second_difference_field",
    "central_hessian",
    "central_hessian_field",
    "central_gradient_field",
    "operator_matrix",
    "apply_linear_operator",
    "write_field_csv",
    "read_field_csv",
]

