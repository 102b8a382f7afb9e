"""Closed-form solutions used as exact boundary data and as test oracles.

Every oracle is a callable on coordinate arrays of shape ``(..., d)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elliptic_ops import EllipticOperatorSpec, evaluate, half_space_gamma
from .errors import InvalidInputError


@dataclass(frozen=True)
class RadialSolution:
    """``|x|^2/(2d) - 1/(8d)``: negative inside ``|x| < 1/2``, positive outside.

    Solves the equation with both operators equal to the
    Laplacian; its zero set is the sphere of radius 1/2.
    """

    d: int = 2
    kind = "radial"
    free_boundary_radius = 0.5

    def __post_init__(self):
        if self.d < 1:
            raise InvalidInputError("dimension must be >= 1")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        r2 = (x * x).sum(axis=-1)
        return r2 / (2 * self.d) - 1.0 / (8 * self.d)

    def hessian(self) -> np.ndarray:
        return np.eye(self.d) / self.d

    def gradient(self, x):
        return np.asarray(x, dtype=float) / self.d

    def distance_to_free_boundary(self, x):
        x = np.asarray(x, dtype=float)
        return np.abs(np.linalg.norm(x, axis=-1) - self.free_boundary_radius)

    def interface_sup(self, r: float) -> float:
        """``sup |v|`` over a ball of radius ``r <= 1/2`` centred on the interface."""
        return ((0.5 + r) ** 2 - 0.25) / (2 * self.d)


@dataclass(frozen=True)
class HalfSpaceSolution:
    """``gamma * ((x . e)_+)^2 / 2 + C`` with ``e`` a unit normal.

    Only ``C = 0`` solves the equation: for ``C > 0`` the flat part is positive
    with vanishing Hessian, which contradicts ``F(0) = 0 != 1``.
    """

    gamma: float = 1.0
    C: float = 0.0
    normal: tuple = (1.0, 0.0)
    kind = "half_space"

    def __post_init__(self):
        if not self.gamma > 0:
            raise InvalidInputError("gamma must be positive")
        e = np.asarray(self.normal, dtype=float)
        if e.ndim != 1 or not np.linalg.norm(e) > 0:
            raise InvalidInputError("normal must be a nonzero vector")
        object.__setattr__(self, "normal", tuple(e / np.linalg.norm(e)))

    @classmethod
    def rotated(cls, gamma: float, angle: float, C: float = 0.0) -> "HalfSpaceSolution":
        return cls(gamma, C, (float(np.cos(angle)), float(np.sin(angle))))

    @property
    def d(self) -> int:
        return len(self.normal)

    @property
    def is_solution(self) -> bool:
        return self.C == 0.0

    def __call__(self, x):
        t = np.asarray(x, dtype=float) @ np.asarray(self.normal)
        return 0.5 * self.gamma * np.maximum(t, 0.0) ** 2 + self.C

    def hessian_positive_side(self) -> np.ndarray:
        e = np.asarray(self.normal)
        return self.gamma * np.outer(e, e)

    def gradient(self, x):
        t = np.asarray(x, dtype=float) @ np.asarray(self.normal)
        return self.gamma * np.maximum(t, 0.0)[..., None] * np.asarray(self.normal)

    def signed_distance(self, x):
        """Distance to the hyperplane, positive on the side where ``u > C``."""
        return np.asarray(x, dtype=float) @ np.asarray(self.normal)


@dataclass(frozen=True)
class QuadraticP2:
    """``sum_j a_j x_j^2``; ``valid`` records whether ``F(2 diag(a)) = 1``."""

    a: tuple
    valid: bool = True
    kind = "quadratic_p2"

    @property
    def d(self) -> int:
        return len(self.a)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return (np.asarray(self.a) * x * x).sum(axis=-1)

    def hessian(self) -> np.ndarray:
        return 2.0 * np.diag(self.a)


@dataclass(frozen=True, eq=False)
class CustomQuadratic:
    """``x^T A x / 2 + c``."""

    A: np.ndarray
    c: float = 0.0
    kind = "custom_quadratic"

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise InvalidInputError("A must be square")
        object.__setattr__(self, "A", 0.5 * (A + A.T))

    @property
    def d(self) -> int:
        return self.A.shape[0]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", x, self.A, x) + self.c

    def hessian(self) -> np.ndarray:
        return self.A.copy()


def radial_solution(d: int = 2) -> RadialSolution:
    return RadialSolution(d)


def half_space_solution(gamma: float, C: float = 0.0, d: int = 2) -> HalfSpaceSolution:
    normal = tuple(1.0 if i == 0 else 0.0 for i in range(d))
    return HalfSpaceSolution(gamma, C, normal)


def quadratic_p2(a, op: EllipticOperatorSpec) -> QuadraticP2:
    """Diagonal quadratic with its validity flag for ``op`` (flagged, never rejected)."""
    a = tuple(float(x) for x in np.atleast_1d(a))
    valid = abs(evaluate(op, 2.0 * np.diag(a)) - 1.0) <= 1e-12
    return QuadraticP2(a, valid)


def oracle_from_config(cfg: dict, F1: EllipticOperatorSpec | None = None, d: int = 2):
    """Build an oracle from ``{"kind", "gamma", "C", "a", "A", "angle"}``.

    ``"gamma": "auto"`` (the default for half-space oracles) takes the root of
    ``F1(gamma e1 e1^T) = 1``.
    """
    allowed = {"kind", "gamma", "C", "a", "A", "angle", "c"}
    unknown = set(cfg) - allowed
    if unknown:
        raise InvalidInputError(f"unknown oracle keys: {sorted(unknown)}")
    kind = cfg.get("kind")
    if kind == "radial":
        return RadialSolution(d)
    if kind == "half_space":
        gamma = cfg.get("gamma", "auto")
        if gamma == "auto":
            if F1 is None:
                raise InvalidInputError("gamma='auto' needs the operator F1")
            gamma = half_space_gamma(F1, d)
        C = float(cfg.get("C", 0.0))
        if "angle" in cfg:
            if d != 2:
                raise InvalidInputError("'angle' is only meaningful in 2-D")
            return HalfSpaceSolution.rotated(float(gamma), float(cfg["angle"]), C)
        return half_space_solution(float(gamma), C, d)
    if kind == "quadratic_p2":
        if F1 is None:
            raise InvalidInputError("quadratic_p2 validity needs the operator F1")
        a = cfg.get("a")
        if a is None or len(a) != d:
            raise InvalidInputError(f"quadratic_p2 needs {d} coefficients 'a'")
        return quadratic_p2(a, F1)
    if kind == "custom_quadratic":
        A = np.asarray(cfg.get("A"), dtype=float)
        if A.shape != (d, d):
            raise InvalidInputError(f"custom_quadratic needs a {d}x{d} matrix 'A'")
        return CustomQuadratic(A, float(cfg.get("c", 0.0)))
    raise InvalidInputError(f"unknown oracle kind {kind!r}")
