"""Discrete solver for ``F1(D^2u) 1{u>0} + F2(D^2u) 1{u<0} = c``.

The outer loop freezes a sign partition and solves the resulting convex
Bellman equation by Howard policy iteration.  Nodes in the zero band
``|u| <= delta`` use the blended closure

    s F1(D^2u) + (1 - s) F2(D^2u) = c |u| / delta,   s = (u + delta) / (2 delta),

which reduces to ``D^2u = 0``-compatible behaviour on fat zero sets.  With
``delta = 0`` nodes are labelled by sign and exact zeros take the ``F1`` branch.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from .discretization import (
    Grid,
    GridFunction,
    StencilSet,
    decompose_positive,
    operator_matrix,
)
from .elliptic_ops import (
    EllipticityBounds,
    EllipticOperatorSpec,
    linear_members,
    operator_bounds,
    same_operator,
)
from .errors import InvalidInputError, NonConvergenceError, SingularSystemError

log = logging.getLogger(__name__)

PLUS, ZERO, MINUS, BOUNDARY = 1, 0, -1, 2
INITIAL_GUESSES = ("f1", "oracle")


@dataclass
class ProblemSpec:
    """Grid, operators, boundary data, right-hand side level and zero-band width.

    ``dirichlet`` is either a callable on coordinate arrays ``(..., d)`` or an
    array / :class:`GridFunction` of nodal values (only boundary nodes are
    read).  ``delta=None`` selects the default band ``rhs * h**2``.
    """

    grid: Grid
    F1: EllipticOperatorSpec
    F2: EllipticOperatorSpec
    dirichlet: Callable | np.ndarray | GridFunction
    rhs: float = 1.0
    delta: float | None = None

    def __post_init__(self):
        if not np.isfinite(self.rhs):
            raise InvalidInputError("rhs must be finite")
        if self.delta is not None and not (np.isfinite(self.delta) and self.delta >= 0):
            raise InvalidInputError("delta must be a finite number >= 0")
        g = self.boundary_values()
        if not np.all(np.isfinite(g[self.grid.boundary_mask()])):
            raise InvalidInputError("boundary data must be finite")

    @property
    def zero_band(self) -> float:
        if self.delta is None:
            return abs(self.rhs) * self.grid.h ** 2
        return float(self.delta)

    @property
    def bounds(self) -> EllipticityBounds:
        """Common ellipticity envelope of ``F1`` and ``F2``."""
        b1, b2 = operator_bounds(self.F1), operator_bounds(self.F2)
        return EllipticityBounds(min(b1.lam, b2.lam), max(b1.Lam, b2.Lam))

    def boundary_values(self) -> np.ndarray:
        g = self.dirichlet
        if callable(g) and not isinstance(g, (np.ndarray, GridFunction)):
            return np.asarray(g(self.grid.points()), dtype=float)
        vals = np.asarray(g.values if isinstance(g, GridFunction) else g, dtype=float)
        if vals.shape != self.grid.shape:
            raise InvalidInputError(
                f"boundary table has shape {vals.shape}, grid expects {self.grid.shape}")
        return vals


@dataclass
class SolverConfig:
    outer_max_iters: int = 50
    inner_max_iters: int = 100
    linear_tol: float = 1e-10
    residual_tol: float = 1e-8
    damping: float = 0.5
    stencil_K: int | None = None
    initial_guess: str = "f1"

    def __post_init__(self):
        if self.outer_max_iters < 1 or self.inner_max_iters < 1:
            raise InvalidInputError("iteration caps must be >= 1")
        if not (self.linear_tol > 0 and self.residual_tol > 0):
            raise InvalidInputError("tolerances must be positive")
        if not 0 < self.damping <= 1:
            raise InvalidInputError("damping must lie in (0, 1]")
        if self.initial_guess not in INITIAL_GUESSES:
            raise InvalidInputError(f"initial_guess must be one of {INITIAL_GUESSES}")


@dataclass
class PartitionState:
    """Per-node labels in ``{PLUS, MINUS, ZERO, BOUNDARY}`` plus free-boundary mask."""

    labels: np.ndarray
    free_boundary: np.ndarray
    sign_labels: np.ndarray
    delta: float = 0.0

    @property
    def plus(self) -> np.ndarray:
        return self.sign_labels == PLUS

    @property
    def minus(self) -> np.ndarray:
        return self.sign_labels == MINUS

    @property
    def zero(self) -> np.ndarray:
        return self.sign_labels == ZERO

    def free_boundary_nodes(self) -> np.ndarray:
        """Integer node indices of the free boundary, shape ``(m, d)``."""
        return np.argwhere(self.free_boundary)

    def counts(self) -> dict:
        return {
            "omega_plus_cells": int(self.plus.sum()),
            "omega_minus_cells": int(self.minus.sum()),
            "fb_cells": int(self.free_boundary.sum()),
        }


@dataclass
class SolveResult:
    u: GridFunction
    partition: PartitionState
    outer_iterations: int
    inner_iterations: list
    residual: float
    converged: bool
    residual_history: list = field(default_factory=list)
    initial_guess: str = "f1"
    delta: float = 0.0

    def summary(self) -> dict:
        out = {
            "converged": bool(self.converged),
            "outer_iters": int(self.outer_iterations),
            "residual": float(self.residual),
        }
        out.update(self.partition.counts())
        out["initial_guess"] = self.initial_guess
        out["delta"] = float(self.delta)
        return out


def _sign_labels(u: np.ndarray, delta: float) -> np.ndarray:
    lab = np.zeros(u.shape, dtype=np.int8)
    lab[u > delta] = PLUS
    lab[u < -delta] = MINUS
    return lab


def update_partition(u: GridFunction, delta: float = 0.0) -> PartitionState:
    """Label nodes against the band ``|u| <= delta`` and extract the free boundary.

    Free-boundary nodes are interior nodes with a differently labelled
    axis neighbour (boundary nodes take part through their sign label).
    """
    if delta < 0:
        raise InvalidInputError("delta must be >= 0")
    grid = u.grid
    sign = _sign_labels(np.asarray(u.values), delta)
    interior = grid.interior_mask()
    labels = np.where(interior, sign, BOUNDARY).astype(np.int8)
    fb = np.zeros(grid.shape, dtype=bool)
    core = tuple(slice(1, -1) for _ in range(grid.d))
    centre = sign[core]
    for ax in range(grid.d):
        for shift in (-1, 1):
            sl = list(core)
            sl[ax] = slice(1 + shift, grid.shape[ax] - 1 + shift)
            fb[core] |= sign[tuple(sl)] != centre
    return PartitionState(labels, fb, sign, float(delta))


class DiscreteOperator:
    """Wide-stencil realization of an operator as a max (or min) of linear ones."""

    def __init__(self, op: EllipticOperatorSpec, grid: Grid, K: int | None = None):
        mats, self.sense = linear_members(op, grid.d)
        stencil = StencilSet.default(grid.d, K)
        self.grid = grid
        self.matrices = []
        self.fallback = np.zeros(grid.shape, dtype=bool)
        self.decomposition_residual = 0.0
        for A in mats:
            dec = decompose_positive(A, stencil)
            L, fb = operator_matrix(dec, grid)
            self.matrices.append(L.tocsr())
            self.fallback |= fb
            self.decomposition_residual = max(self.decomposition_residual, dec.residual)

    def __len__(self):
        return len(self.matrices)

    def values(self, u: np.ndarray) -> np.ndarray:
        """Member values ``L_a u``, shape ``(m, N)``."""
        return np.stack([L @ u for L in self.matrices])

    def best(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        vals = self.values(u)
        idx = vals.argmax(axis=0) if self.sense == "max" else vals.argmin(axis=0)
        return np.take_along_axis(vals, idx[None], axis=0)[0], idx

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return self.best(u)[0]

    def assemble(self, policy: np.ndarray, weight: np.ndarray) -> sp.csr_matrix:
        """Rows ``weight_i * L_{policy_i}`` stacked into one sparse matrix."""
        N = self.grid.size
        out = sp.csr_matrix((N, N))
        for a, L in enumerate(self.matrices):
            w = np.where(policy == a, weight, 0.0)
            if np.any(w):
                out = out + sp.diags(w) @ L
        return out


def _spsolve(A: sp.spmatrix, b: np.ndarray) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("error", MatrixRankWarning)
        try:
            x = spsolve(A.tocsc(), b)
        except (MatrixRankWarning, RuntimeError) as exc:
            raise SingularSystemError(f"linear solve failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("linear solve returned non-finite values")
    return x


@dataclass
class HowardTrace:
    iterations: int
    residuals: list
    policy_fixed: bool


def _howard(D1, D2, w1, w2, kappa, f0, g, interior, u0, cfg):
    """Policy iteration for ``w1 F1(u) + w2 F2(u) - kappa u = f0`` on interior nodes.

    All arrays are flat.  With ``w1, w2, kappa >= 0`` every frozen system is
    an M-matrix.  Band rows with ``u < 0`` carry ``kappa = -c/delta``, which
    erodes the diagonal by ``c/delta`` (``1/h^2`` for the default band); a
    system that loses invertibility raises :class:`SingularSystemError`.
    """
    bnd = ~interior
    need2 = D2 is not None and np.any(w2 > 0)

    def policies_and_residual(u):
        v1, p1 = D1.best(u)
        r = w1 * v1 - kappa * u - f0
        p2 = None
        if need2:
            v2, p2 = D2.best(u)
            r = r + w2 * v2
        return p1, p2, float(np.max(np.abs(r[interior]), initial=0.0))

    u = u0.copy()
    u[bnd] = g[bnd]
    p1, p2, res = policies_and_residual(u)
    residuals = [res]
    fixed = False
    w1i = np.where(interior, w1, 0.0)
    w2i = np.where(interior, w2, 0.0)
    idx = np.flatnonzero(interior)
    gb = np.where(bnd, g, 0.0)
    for it in range(1, cfg.inner_max_iters + 1):
        A = D1.assemble(p1, w1i)
        if need2:
            A = A + D2.assemble(p2, w2i)
        A = (A - sp.diags(np.where(interior, kappa, 0.0))).tocsr()
        # boundary unknowns are eliminated so the system keeps its 1/h^2 scaling
        rows = A[idx]
        u = g.copy()
        u[idx] = _spsolve(rows[:, idx], f0[idx] - rows @ gb)
        q1, q2, res = policies_and_residual(u)
        residuals.append(res)
        same = np.array_equal(q1, p1) and (not need2 or np.array_equal(q2, p2))
        p1, p2 = q1, q2
        if same or res <= cfg.linear_tol:
            fixed = True
            break
    return u, HowardTrace(it, residuals, fixed)


def howard_solve(F: EllipticOperatorSpec, f, dirichlet, grid: Grid,
                 cfg: SolverConfig | None = None) -> GridFunction:
    """Solve ``F(D^2u) = f`` with ``u = dirichlet`` on the boundary.

    ``f`` may be a scalar, an array of nodal values or a :class:`GridFunction`.
    Pucci operators are replaced by their rotated-frame Bellman families.
    """
    cfg = cfg or SolverConfig()
    D = DiscreteOperator(F, grid, cfg.stencil_K)
    g = ProblemSpec(grid, F, F, dirichlet).boundary_values().ravel()
    fv = np.broadcast_to(np.asarray(f.values if isinstance(f, GridFunction) else f,
                                    dtype=float), grid.shape).ravel()
    interior = grid.interior_mask().ravel()
    one = np.ones(grid.size)
    u, _ = _howard(D, None, one, 0 * one, 0 * one, fv, g, interior, g.copy(), cfg)
    return GridFunction(grid, u.reshape(grid.shape))


class _Context:
    """Discrete operators and flat arrays shared by the outer iterations."""

    def __init__(self, p: ProblemSpec, cfg: SolverConfig):
        self.p, self.cfg = p, cfg
        grid = p.grid
        self.D1 = DiscreteOperator(p.F1, grid, cfg.stencil_K)
        self.D2 = self.D1 if same_operator(p.F1, p.F2) else DiscreteOperator(p.F2, grid, cfg.stencil_K)
        self.g = p.boundary_values().ravel()
        self.interior = grid.interior_mask().ravel()
        self.delta = p.zero_band
        self.c = float(p.rhs)

    def rows(self, labels: np.ndarray, u: np.ndarray):
        """Frozen coefficients ``(w1, w2, kappa, f0)`` for a label array and iterate."""
        N = u.size
        w1, w2, kappa, f0 = (np.zeros(N) for _ in range(4))
        plus, minus, zero = labels == PLUS, labels == MINUS, labels == ZERO
        w1[plus], f0[plus] = 1.0, self.c
        w2[minus], f0[minus] = 1.0, self.c
        if self.delta > 0:
            s = np.clip((u + self.delta) / (2 * self.delta), 0.0, 1.0)
            sigma = np.where(u >= 0, 1.0, -1.0)
            w1[zero], w2[zero] = s[zero], 1.0 - s[zero]
            kappa[zero] = self.c * sigma[zero] / self.delta
        else:
            w1[zero], f0[zero] = 1.0, self.c
        return w1, w2, kappa, f0

    def residual(self, u: np.ndarray) -> np.ndarray:
        d = self.delta
        F1u = self.D1(u)
        F2u = F1u if self.D2 is self.D1 else self.D2(u)
        if d > 0:
            s = np.clip((u + d) / (2 * d), 0.0, 1.0)
            r = np.where(u > d, F1u - self.c,
                         np.where(u < -d, F2u - self.c,
                                  s * F1u + (1 - s) * F2u - self.c * np.abs(u) / d))
        else:
            r = np.where(u < 0, F2u, F1u) - self.c
        return np.where(self.interior, r, 0.0)

    def howard(self, labels, u):
        w1, w2, kappa, f0 = self.rows(labels, u)
        return _howard(self.D1, self.D2, w1, w2, kappa, f0, self.g, self.interior, u, self.cfg)

    def seed(self):
        """Pure ``F1`` solve; with ``delta > 0`` the band closure keeps the seed one-signed."""
        N = self.g.size
        one, zero = np.ones(N), np.zeros(N)
        u, tr = _howard(self.D1, None, one, zero, zero, np.full(N, self.c), self.g,
                        self.interior, self.g.copy(), self.cfg)
        traces = [tr.iterations]
        if self.delta > 0 and self.c > 0:
            u = np.maximum(u, 0.0)
            # branches: u > delta -> F1 = c, 0 <= u <= delta -> F1 = c u / delta, u < 0 -> F1 = 0
            for _ in range(self.cfg.inner_max_iters):
                hi, band = u > self.delta, (u >= 0) & (u <= self.delta)
                kappa = np.where(band, self.c / self.delta, 0.0)
                f0 = np.where(hi, self.c, 0.0)
                u_new, tr = _howard(self.D1, None, one, zero, kappa, f0, self.g,
                                    self.interior, u, self.cfg)
                traces.append(tr.iterations)
                stable = (np.array_equal(u_new > self.delta, hi)
                          and np.array_equal((u_new >= 0) & (u_new <= self.delta), band))
                u = u_new
                if stable:
                    break
        return u, traces


def residual(u: GridFunction, p: ProblemSpec, cfg: SolverConfig | None = None) -> GridFunction:
    """Nodal residual of the transmission equation (zero on boundary nodes)."""
    ctx = _Context(p, cfg or SolverConfig())
    r = ctx.residual(np.asarray(u.values, dtype=float).ravel())
    return GridFunction(p.grid, r.reshape(p.grid.shape))


RELAX_FLOOR = 0.25
RELAX_GROWTH = 1.25


def _damp(old: np.ndarray, new: np.ndarray, u: np.ndarray, theta: float) -> np.ndarray:
    changed = np.flatnonzero(old != new)
    k = max(1, int(np.ceil(theta * changed.size)))
    order = changed[np.argsort(-np.abs(u[changed]), kind="stable")]
    out = old.copy()
    out[order[:k]] = new[order[:k]]
    return out


def solve_with_labels(p: ProblemSpec, labels: np.ndarray, cfg: SolverConfig | None = None,
                      u0: np.ndarray | None = None) -> GridFunction:
    """One inner solve with a frozen label array (``PLUS``/``MINUS``/``ZERO`` per node)."""
    cfg = cfg or SolverConfig()
    ctx = _Context(p, cfg)
    lab = np.asarray(labels).ravel()
    start = ctx.g.copy() if u0 is None else np.asarray(u0, dtype=float).ravel()
    u, _ = ctx.howard(lab, start)
    return GridFunction(p.grid, u.reshape(p.grid.shape))


def solve(p: ProblemSpec, cfg: SolverConfig | None = None) -> SolveResult:
    """Outer partition iteration around Howard inner solves.

    The seed solve counts as the first outer iteration.  Each new iterate is
    relaxed towards the inner solve by ``omega``, which halves (down to
    ``RELAX_FLOOR``) whenever the residual rises and recovers by
    ``RELAX_GROWTH`` otherwise.  Convergence requires
    both a fixed partition and ``max |residual| <= cfg.residual_tol``.

    Raises
    ------
    NonConvergenceError
        When ``cfg.outer_max_iters`` is reached first; carries the last
        iterate as ``.result`` and the residual history.
    """
    cfg = cfg or SolverConfig()
    ctx = _Context(p, cfg)
    grid, shape = p.grid, p.grid.shape
    inner_counts: list[int] = []
    if cfg.initial_guess == "f1":
        u, counts = ctx.seed()
        inner_counts.extend(counts)
        used = np.full(grid.size, PLUS, dtype=np.int8)
        iters = 1
    else:
        if not callable(p.dirichlet):
            raise InvalidInputError("initial_guess='oracle' needs callable boundary data")
        u = ctx.g.copy()
        used = None
        iters = 0
    history: list[float] = []
    label_log: list[np.ndarray] = []
    omega = 1.0

    def result(converged: bool, res: float, part: PartitionState) -> SolveResult:
        return SolveResult(GridFunction(grid, u.reshape(shape)), part, iters, inner_counts,
                           res, converged, list(history), cfg.initial_guess, ctx.delta)

    while True:
        part = update_partition(GridFunction(grid, u.reshape(shape)), ctx.delta)
        res = float(np.max(np.abs(ctx.residual(u)), initial=0.0))
        history.append(res)
        new = part.sign_labels.ravel()
        fixed = used is not None and np.array_equal(new[ctx.interior], used[ctx.interior])
        log.debug("outer %d: residual %.3e, partition fixed %s", iters, res, fixed)
        if fixed and res <= cfg.residual_tol:
            return result(True, res, part)
        if iters >= cfg.outer_max_iters:
            raise NonConvergenceError(
                f"no stable partition after {iters} outer iterations (residual {res:.3e})",
                result(False, res, part), history)
        if len(history) >= 2:
            omega = (max(omega / 2, RELAX_FLOOR) if res > history[-2]
                     else min(1.0, RELAX_GROWTH * omega))
        if (used is not None and len(label_log) >= 2 and not fixed
                and np.array_equal(new, label_log[-2])):
            new = _damp(used, new, u, cfg.damping)
        label_log.append(new.copy())
        u_new, tr = ctx.howard(new, u)
        u = u_new if omega == 1.0 else u + omega * (u_new - u)
        inner_counts.append(tr.iterations)
        used = new
        iters += 1
