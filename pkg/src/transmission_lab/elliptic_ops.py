"""Uniformly elliptic operators acting on symmetric matrices.

Four operator kinds are supported: the two Pucci extremal operators, finite
Bellman families (maximum of linear trace maps) and a single linear map.  All of
them vanish at the zero matrix and are positively homogeneous of degree one.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Union

import numpy as np

from .errors import InvalidInputError, NoRootError, UnsupportedDimensionError

_SYM_RTOL = 1e-12


def as_sym_matrix(M, d: int | None = None) -> np.ndarray:
    """Validate and return ``M`` as a float symmetric ``(d, d)`` array."""
    A = np.asarray(M, dtype=float)
    if A.ndim == 0 and d == 1:
        A = A.reshape(1, 1)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {A.shape}")
    if d is not None and A.shape[0] != d:
        raise InvalidInputError(f"dimension mismatch: matrix is {A.shape[0]}x{A.shape[0]}, expected {d}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError("matrix has non-finite entries")
    scale = max(1.0, float(np.abs(A).max(initial=0.0)))
    if np.abs(A - A.T).max(initial=0.0) > _SYM_RTOL * scale:
        raise InvalidInputError("matrix is not symmetric")
    return 0.5 * (A + A.T)


def eigenvalues(M) -> np.ndarray:
    """Real eigenvalues of a symmetric matrix, sorted ascending."""
    A = as_sym_matrix(M)
    try:
        return np.linalg.eigvalsh(A)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - eigvalsh on finite input
        raise InvalidInputError(str(exc)) from exc


@dataclass(frozen=True)
class EllipticityBounds:
    """Ellipticity constants ``0 < lam <= Lam``."""

    lam: float
    Lam: float

    def __post_init__(self):
        lam, Lam = float(self.lam), float(self.Lam)
        if not (np.isfinite(lam) and np.isfinite(Lam)) or lam <= 0 or lam > Lam:
            raise InvalidInputError(f"need 0 < lambda <= Lambda, got ({lam}, {Lam})")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "Lam", Lam)

    def admits(self, A, tol: float = 1e-12) -> bool:
        """True if the spectrum of ``A`` lies in ``[lam, Lam]``."""
        e = eigenvalues(A)
        slack = tol * max(1.0, self.Lam)
        return bool(e[0] >= self.lam - slack and e[-1] <= self.Lam + slack)


@dataclass(frozen=True)
class BellmanFamily:
    """Finite family of diffusion matrices with spectra in ``[lam, Lam]``.

    ``check=False`` skips the spectrum validation; it exists so that tests can
    build deliberately non-elliptic families.
    """

    bounds: EllipticityBounds
    matrices: tuple
    check: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        mats = tuple(as_sym_matrix(A) for A in self.matrices)
        if not mats:
            raise InvalidInputError("Bellman family must be non-empty")
        d = mats[0].shape[0]
        if any(A.shape != (d, d) for A in mats):
            raise InvalidInputError("Bellman family members have mixed dimensions")
        if self.check:
            for A in mats:
                if not self.bounds.admits(A):
                    raise InvalidInputError(
                        f"member spectrum {eigenvalues(A)} outside "
                        f"[{self.bounds.lam}, {self.bounds.Lam}]"
                    )
        object.__setattr__(self, "matrices", mats)

    @property
    def dimension(self) -> int:
        return self.matrices[0].shape[0]

    def __len__(self):
        return len(self.matrices)


@dataclass(frozen=True)
class PucciPlus:
    bounds: EllipticityBounds
    frames: int = 16  # rotated frames used when the operator is discretized


@dataclass(frozen=True)
class PucciMinus:
    bounds: EllipticityBounds
    frames: int = 16


@dataclass(frozen=True)
class Bellman:
    family: BellmanFamily


@dataclass(frozen=True)
class Linear:
    matrix: np.ndarray
    bounds: EllipticityBounds | None = None

    def __post_init__(self):
        object.__setattr__(self, "matrix", as_sym_matrix(self.matrix))
        if self.bounds is not None and not self.bounds.admits(self.matrix):
            raise InvalidInputError("matrix spectrum lies outside the declared bounds")

    def __eq__(self, other):
        return (
            isinstance(other, Linear)
            and self.bounds == other.bounds
            and np.array_equal(self.matrix, other.matrix)
        )

    def __hash__(self):
        return hash((self.matrix.tobytes(), self.bounds))


EllipticOperatorSpec = Union[PucciPlus, PucciMinus, Bellman, Linear]


def laplacian(d: int = 2) -> Linear:
    return Linear(np.eye(d), EllipticityBounds(1.0, 1.0))


# ---------------------------------------------------------------- evaluation


def pucci_plus(M, b: EllipticityBounds) -> float:
    """``Lam * sum(positive eigenvalues) + lam * sum(negative eigenvalues)``."""
    e = eigenvalues(M)
    return float(b.Lam * e[e > 0].sum() + b.lam * e[e < 0].sum())


def pucci_minus(M, b: EllipticityBounds) -> float:
    """``lam * sum(positive eigenvalues) + Lam * sum(negative eigenvalues)``."""
    e = eigenvalues(M)
    return float(b.lam * e[e > 0].sum() + b.Lam * e[e < 0].sum())


def _family_values(matrices, M) -> np.ndarray:
    return np.array([np.tensordot(A, M) for A in matrices])


def evaluate(op: EllipticOperatorSpec, M) -> float:
    """Value of ``op`` at the symmetric matrix ``M``."""
    if isinstance(op, PucciPlus):
        return pucci_plus(M, op.bounds)
    if isinstance(op, PucciMinus):
        return pucci_minus(M, op.bounds)
    if isinstance(op, Bellman):
        X = as_sym_matrix(M, op.family.dimension)
        return float(_family_values(op.family.matrices, X).max())
    if isinstance(op, Linear):
        X = as_sym_matrix(M, op.matrix.shape[0])
        return float(np.tensordot(op.matrix, X))
    raise InvalidInputError(f"unknown operator kind {type(op).__name__}")


def evaluate_many(op: EllipticOperatorSpec, H: np.ndarray) -> np.ndarray:
    """Vectorized :func:`evaluate` over a stack of matrices ``(..., d, d)``."""
    H = np.asarray(H, dtype=float)
    if H.ndim < 2 or H.shape[-1] != H.shape[-2]:
        raise InvalidInputError("expected a stack of square matrices")
    if isinstance(op, (PucciPlus, PucciMinus)):
        e = np.linalg.eigvalsh(0.5 * (H + np.swapaxes(H, -1, -2)))
        pos = np.where(e > 0, e, 0.0).sum(axis=-1)
        neg = np.where(e < 0, e, 0.0).sum(axis=-1)
        b = op.bounds
        if isinstance(op, PucciPlus):
            return b.Lam * pos + b.lam * neg
        return b.lam * pos + b.Lam * neg
    d = operator_dimension(op)
    if H.shape[-1] != d:
        raise InvalidInputError(f"dimension mismatch: expected {d}x{d} matrices")
    if isinstance(op, Bellman):
        vals = np.stack([np.einsum("ij,...ij->...", A, H) for A in op.family.matrices])
        return vals.max(axis=0)
    return np.einsum("ij,...ij->...", op.matrix, H)


def _dual_value(op: EllipticOperatorSpec, M) -> float:
    """Value of the min/max counterpart of ``op`` (itself for linear maps)."""
    if isinstance(op, PucciPlus):
        return pucci_minus(M, op.bounds)
    if isinstance(op, PucciMinus):
        return pucci_plus(M, op.bounds)
    if isinstance(op, Bellman):
        X = as_sym_matrix(M, op.family.dimension)
        return float(_family_values(op.family.matrices, X).min())
    return evaluate(op, M)


def operator_bounds(op: EllipticOperatorSpec) -> EllipticityBounds:
    """Ellipticity constants attached to ``op``.

    A linear map without explicit bounds gets the extremes of its spectrum.
    """
    if isinstance(op, (PucciPlus, PucciMinus)):
        return op.bounds
    if isinstance(op, Bellman):
        return op.family.bounds
    if isinstance(op, Linear):
        if op.bounds is not None:
            return op.bounds
        e = eigenvalues(op.matrix)
        if e[0] <= 0:
            raise InvalidInputError("linear operator is not uniformly elliptic")
        return EllipticityBounds(e[0], e[-1])
    raise InvalidInputError(f"unknown operator kind {type(op).__name__}")


def operator_dimension(op: EllipticOperatorSpec) -> int | None:
    """Matrix dimension fixed by ``op``, or None for dimension-free Pucci."""
    if isinstance(op, Bellman):
        return op.family.dimension
    if isinstance(op, Linear):
        return op.matrix.shape[0]
    return None


# ---------------------------------------------------------- Bellman families


def _rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _dedupe(mats, tol=1e-13):
    out = []
    for A in mats:
        if not any(np.abs(A - B).max() <= tol for B in out):
            out.append(A)
    return out


def pucci_bellman_family(b: EllipticityBounds, K: int, d: int = 2) -> BellmanFamily:
    """Finite inner approximation of the Pucci maximal operator.

    Members are ``R_k^T diag(s) R_k`` for ``s`` in ``{lam, Lam}^2`` and frames
    rotated by ``k*pi/(2K)``, ``k = 0..K-1``.  Frame sets are nested under
    doubling of ``K``, so the family maximum increases monotonically with ``K``.
    Exact duplicates (the isotropic members) are kept once.
    """
    if d != 2:
        raise UnsupportedDimensionError(
            f"rotated frame families are only implemented for d=2 (got d={d}); "
            "use axis_aligned_family"
        )
    K = int(K)
    if K < 1:
        raise InvalidInputError("frame count K must be >= 1")
    mats = []
    for k in range(K):
        R = _rotation(k * np.pi / (2 * K))
        for s in itertools.product((b.lam, b.Lam), repeat=2):
            A = R.T @ np.diag(s) @ R
            mats.append(0.5 * (A + A.T))
    return BellmanFamily(b, tuple(_dedupe(mats)))


def axis_aligned_family(b: EllipticityBounds, d: int) -> BellmanFamily:
    """Diagonal members ``diag(s)``, ``s`` in ``{lam, Lam}^d``.

    Exact for Pucci on diagonal matrices only; off-axis Hessians are
    underestimated.
    """
    mats = [np.diag(s) for s in itertools.product((b.lam, b.Lam), repeat=d)]
    return BellmanFamily(b, tuple(_dedupe(mats)))


def linear_members(op: EllipticOperatorSpec, d: int) -> tuple[tuple, str]:
    """Linear diffusion matrices realizing ``op`` and the selection sense.

    Returns ``(matrices, sense)`` with ``sense`` in ``{"max", "min"}``.  Pucci
    operators are replaced by their rotated-frame family in 2-D and by the
    axis-aligned family otherwise (with a warning, since the latter is coarse).
    """
    if isinstance(op, (PucciPlus, PucciMinus)):
        if d == 2:
            fam = pucci_bellman_family(op.bounds, op.frames, d)
        else:
            warnings.warn(
                f"Pucci operator in d={d} discretized with axis-aligned frames; "
                "values on rotated Hessians are underestimated",
                stacklevel=2,
            )
            fam = axis_aligned_family(op.bounds, d)
        return fam.matrices, "max" if isinstance(op, PucciPlus) else "min"
    if isinstance(op, Bellman):
        if op.family.dimension != d:
            raise InvalidInputError("Bellman family dimension does not match grid")
        return op.family.matrices, "max"
    if isinstance(op, Linear):
        if op.matrix.shape[0] != d:
            raise InvalidInputError("linear operator dimension does not match grid")
        return (op.matrix,), "max"
    raise InvalidInputError(f"unknown operator kind {type(op).__name__}")


# ---------------------------------------------------------- assumption checks


def _random_sym(rng, d):
    G = rng.standard_normal((d, d))
    return 0.5 * (G + G.T)


class EllipticityCheck(NamedTuple):
    passed: bool
    worst_lower_margin: float  # min of F(M+N)-F(M) - lam*tr(N)
    worst_upper_margin: float  # min of Lam*tr(N) - (F(M+N)-F(M))


def check_uniform_ellipticity(
    op: EllipticOperatorSpec,
    n: int = 1000,
    bounds: EllipticityBounds | None = None,
    d: int | None = None,
    seed: int = 0,
) -> EllipticityCheck:
    """Sample ``lam tr(N) <= F(M+N) - F(M) <= Lam tr(N)`` for ``N >= 0``."""
    if n < 1:
        raise InvalidInputError("sample count must be >= 1")
    b = bounds if bounds is not None else operator_bounds(op)
    d = d or operator_dimension(op) or 2
    rng = np.random.default_rng(seed)
    lo = hi = np.inf
    passed = True
    for _ in range(n):
        M = _random_sym(rng, d)
        G = rng.standard_normal((d, d))
        N = G @ G.T
        inc = evaluate(op, M + N) - evaluate(op, M)
        tr = np.trace(N)
        tol = 1e-12 * (1.0 + abs(inc) + b.Lam * tr + np.abs(M).max())
        lo = min(lo, inc - b.lam * tr)
        hi = min(hi, b.Lam * tr - inc)
        if inc < b.lam * tr - tol or inc > b.Lam * tr + tol:
            passed = False
    return EllipticityCheck(passed, float(lo), float(hi))


class HomogeneityCheck(NamedTuple):
    passed: bool
    worst_error: float
    negative_tau_consistent: bool  # F(tau M) == tau * dual(M) for tau < 0
    negative_tau_worst: float


def check_homogeneity(
    op: EllipticOperatorSpec, n: int = 200, d: int | None = None, seed: int = 0
) -> HomogeneityCheck:
    """Check ``F(tau M) = tau F(M)`` for ``tau >= 0``.

    For ``tau < 0`` a max-form operator maps to its min-form counterpart, so the
    negative branch is reported separately and does not affect ``passed``.
    """
    d = d or operator_dimension(op) or 2
    rng = np.random.default_rng(seed)
    worst = worst_neg = 0.0
    passed = neg_ok = True
    for i in range(n):
        M = _random_sym(rng, d)
        FM = evaluate(op, M)
        tau = 0.0 if i == 0 else float(rng.uniform(0.0, 10.0))
        err = abs(evaluate(op, tau * M) - tau * FM)
        worst = max(worst, err)
        if err > 1e-12 * (1.0 + abs(tau * FM)):
            passed = False
        tau_n = -float(rng.uniform(1e-3, 10.0))
        target = tau_n * _dual_value(op, M)
        err_n = abs(evaluate(op, tau_n * M) - target)
        worst_neg = max(worst_neg, err_n)
        if err_n > 1e-12 * (1.0 + abs(target)):
            neg_ok = False
    return HomogeneityCheck(passed, float(worst), neg_ok, float(worst_neg))


def half_space_gamma(op: EllipticOperatorSpec, d: int | None = None) -> float:
    """Root of ``gamma -> F(gamma e1 e1^T) = 1`` by bisection.

    The bracket ``[1/(2 Lam), 2/lam]`` strictly contains ``[1/Lam, 1/lam]`` so
    that Pucci operators, which sit at the endpoints, are found as well.
    """
    b = operator_bounds(op)
    d = d or operator_dimension(op) or 2
    E = np.zeros((d, d))
    E[0, 0] = 1.0

    def g(gamma):
        return evaluate(op, gamma * E) - 1.0

    lo, hi = 0.5 / b.Lam, 2.0 / b.lam
    glo, ghi = g(lo), g(hi)
    if not (glo <= 0.0 <= ghi):
        raise NoRootError(f"no sign change on [{lo}, {hi}]: g = ({glo}, {ghi})")
    best, best_err = (lo, abs(glo)) if abs(glo) < abs(ghi) else (hi, abs(ghi))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if abs(gm) < best_err:
            best, best_err = mid, abs(gm)
        if gm == 0.0 or not (lo < mid < hi):
            break
        if gm < 0:
            lo = mid
        else:
            hi = mid
    return float(best)


def gamma_at_endpoint(op: EllipticOperatorSpec, gamma: float, tol: float = 1e-10) -> bool:
    """True when ``gamma`` sits on ``1/Lam`` or ``1/lam`` (Pucci-type operators)."""
    b = operator_bounds(op)
    return bool(abs(gamma - 1.0 / b.Lam) <= tol or abs(gamma - 1.0 / b.lam) <= tol)


def operator_from_config(cfg: dict, d: int = 2) -> EllipticOperatorSpec:
    """Build an operator from ``{"kind", "lambda", "Lambda", "matrices", ...}``.

    Kinds: ``pucci_plus``, ``pucci_minus``, ``bellman``, ``linear`` and
    ``laplacian``.  Bellman families without explicit bounds take the envelope of their spectra.
    """
    allowed = {"kind", "lambda", "Lambda", "matrices", "matrix", "frames"}
    unknown = set(cfg) - allowed
    if unknown:
        raise InvalidInputError(f"unknown operator keys: {sorted(unknown)}")
    kind = cfg.get("kind")

    def bounds(required=True):
        if "lambda" in cfg or "Lambda" in cfg:
            return EllipticityBounds(cfg["lambda"], cfg["Lambda"])
        if required:
            raise InvalidInputError(f"operator kind {kind!r} needs 'lambda' and 'Lambda'")
        return None

    if kind == "pucci_plus":
        return PucciPlus(bounds(), int(cfg.get("frames", 16)))
    if kind == "pucci_minus":
        return PucciMinus(bounds(), int(cfg.get("frames", 16)))
    if kind == "bellman":
        mats = cfg.get("matrices")
        if not mats:
            raise InvalidInputError("bellman operator needs a non-empty 'matrices' list")
        mats = tuple(as_sym_matrix(m, d) for m in mats)
        b = bounds(required=False)
        if b is None:
            # tightest envelope of the family spectra
            spectra = np.concatenate([eigenvalues(m) for m in mats])
            b = EllipticityBounds(float(spectra.min()), float(spectra.max()))
        return Bellman(BellmanFamily(b, mats))
    if kind == "laplacian":
        return laplacian(d)
    if kind == "linear":
        if "matrix" in cfg:
            A = cfg["matrix"]
        elif cfg.get("matrices") and len(cfg["matrices"]) == 1:
            A = cfg["matrices"][0]
        else:
            A = np.eye(d)
        return Linear(np.asarray(A, float), bounds(required=False))
    raise InvalidInputError(f"unknown operator kind {kind!r}")


def same_operator(a: EllipticOperatorSpec, b: EllipticOperatorSpec) -> bool:
    """Structural equality (dataclass ``==`` is ambiguous on array fields)."""
    return a is b or operator_to_config(a) == operator_to_config(b)


def operator_to_config(op: EllipticOperatorSpec) -> dict:
    if isinstance(op, (PucciPlus, PucciMinus)):
        kind = "pucci_plus" if isinstance(op, PucciPlus) else "pucci_minus"
        return {"kind": kind, "lambda": op.bounds.lam, "Lambda": op.bounds.Lam, "frames": op.frames}
    if isinstance(op, Bellman):
        return {
            "kind": "bellman",
            "lambda": op.family.bounds.lam,
            "Lambda": op.family.bounds.Lam,
            "matrices": [A.tolist() for A in op.family.matrices],
        }
    out = {"kind": "linear", "matrix": op.matrix.tolist()}
    if op.bounds is not None:
        out.update({"lambda": op.bounds.lam, "Lambda": op.bounds.Lam})
    return out


__all__ = [
    "EllipticityBounds",
    "BellmanFamily",
    "PucciPlus",
    "PucciMinus",
    "Bellman",
    "Linear",
    "EllipticOperatorSpec",
    "laplacian",
    "as_sym_matrix",
    "eigenvalues",
    "pucci_plus",
    "pucci_minus",
    "evaluate",
    "evaluate_many",
    "operator_bounds",
    "operator_dimension",
    "pucci_bellman_family",
    "axis_aligned_family",
    "linear_members",
    "check_uniform_ellipticity",
    "check_homogeneity",
    "half_space_gamma",
    "gamma_at_endpoint",
    "operator_from_config",
    "operator_to_config",
    "same_operator",
]

