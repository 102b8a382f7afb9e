"""Minimal slab width of finite point sets.

In 2-D the width is exact: Andrew's monotone chain hull followed by rotating
calipers over hull edges.  In higher dimensions the width is minimized over
a Fibonacci sphere of directions and then refined locally.
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidInputError


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull_2d(points) -> np.ndarray:
    """Counter-clockwise hull vertices without collinear points."""
    P = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(P) <= 2:
        return P
    P = P[np.lexsort((P[:, 1], P[:, 0]))]
    lower: list = []
    for p in P:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in P[::-1]:
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def hull_width_2d(hull: np.ndarray) -> float:
    """Rotating calipers: min over hull edges of the farthest vertex distance."""
    m = len(hull)
    if m <= 2:
        return 0.0
    best = np.inf
    j = 1
    for i in range(m):
        a, b = hull[i], hull[(i + 1) % m]
        edge = np.linalg.norm(b - a)
        # advance the antipodal pointer while the area keeps growing
        while abs(_cross(a, b, hull[(j + 1) % m])) > abs(_cross(a, b, hull[j])):
            j = (j + 1) % m
        best = min(best, abs(_cross(a, b, hull[j])) / edge)
    return float(best)


def fibonacci_sphere(n: int, d: int = 3) -> np.ndarray:
    """``n`` nearly uniform unit vectors on the upper half of the 2-sphere."""
    if d != 3:
        raise InvalidInputError("Fibonacci directions are defined for d = 3")
    k = np.arange(n) + 0.5
    z = k / n  # widths are symmetric under e -> -e, so a hemisphere suffices
    phi = np.pi * (1 + 5 ** 0.5) * k
    r = np.sqrt(1 - z * z)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def _widths(P: np.ndarray, E: np.ndarray) -> np.ndarray:
    proj = P @ E.T
    return proj.max(axis=0) - proj.min(axis=0)


def min_diameter(points, n_directions: int = 1024) -> float:
    """Smallest distance between two parallel hyperplanes enclosing ``points``.

    Parameters
    ----------
    points : array_like, shape (m, d)
    n_directions : int
        Direction samples for ``d >= 3``.

    Raises
    ------
    InvalidInputError
        For an empty point set.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if P.size == 0 or len(P) == 0:
        raise InvalidInputError("min_diameter of an empty set is undefined")
    if len(P) == 1:
        return 0.0
    d = P.shape[1]
    P = P - P.mean(axis=0)
    if d == 1:
        return float(P.max() - P.min())
    if d == 2:
        return hull_width_2d(convex_hull_2d(P))
    if d != 3:
        raise InvalidInputError("min_diameter supports d <= 3")
    E = fibonacci_sphere(n_directions)
    w = _widths(P, E)
    e = E[np.argmin(w)]
    best = float(w.min())
    # local refinement: shrinking pattern search around the best direction
    step = 2.0 / np.sqrt(n_directions)
    basis = np.linalg.svd(e[None, :])[2][1:]
    for _ in range(40):
        cand = [e + step * s * b for b in basis for s in (-1.0, 1.0)]
        cand = np.array(cand)
        cand /= np.linalg.norm(cand, axis=1, keepdims=True)
        wc = _widths(P, cand)
        k = int(np.argmin(wc))
        if wc[k] < best:
            best, e = float(wc[k]), cand[k]
            basis = np.linalg.svd(e[None, :])[2][1:]
        else:
            step *= 0.5
    return best
