"""Named verification suites with machine-readable pass/fail rows.

Suites only record measured values and verdicts (no timings), so repeated
runs produce identical artifacts.  Operator calls go through the module
attribute ``eo.pucci_minus`` and friends so that patched implementations
are exercised.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import elliptic_ops as eo
from .diagnostics import (
    blow_up,
    c11_seminorm,
    check_viscosity_pair,
    convexity_gap,
    growth_profile,
    nondegeneracy_profile,
    thickness,
    volume_density,
)
from .discretization import Grid, GridFunction
from .oracles import half_space_solution, quadratic_p2, radial_solution
from .solver import ProblemSpec, SolverConfig, solve


@dataclass
class CheckResult:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}"


def _clean(x):
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    return x


BELLMAN_PAIR = [np.diag([2.0, 1.0]), np.diag([1.0, 2.0])]


def _bellman_pair():
    return eo.Bellman(eo.BellmanFamily(eo.EllipticityBounds(1, 2), BELLMAN_PAIR))


def operator_algebra() -> CheckResult:
    b = eo.EllipticityBounds(1, 2)
    M = np.diag([1.0, -1.0])
    plus, minus = eo.pucci_plus(M, b), eo.pucci_minus(M, b)
    hand = abs(plus - 1) <= 1e-12 and abs(minus + 1) <= 1e-12
    rng = np.random.default_rng(0)
    worst_dual = 0.0
    sandwich = True
    ops = [eo.laplacian(2), _bellman_pair(), eo.Linear(np.array([[1.5, 0.3], [0.3, 1.2]]))]
    for _ in range(1000):
        A = rng.normal(size=(2, 2))
        A = A + A.T
        worst_dual = max(worst_dual, abs(eo.pucci_minus(A, b) + eo.pucci_plus(-A, b)))
        lo, hi = eo.pucci_minus(A, b), eo.pucci_plus(A, b)
        for op in ops:
            v = eo.evaluate(op, A)
            sandwich &= lo - 1e-12 <= v <= hi + 1e-12
    ok = hand and worst_dual <= 1e-12 and sandwich
    return CheckResult("AC1 operator algebra", bool(ok), {
        "pucci_plus_hand": plus, "pucci_minus_hand": minus,
        "worst_duality_error": worst_dual, "sandwich": bool(sandwich)})


def gamma_solver() -> CheckResult:
    g_lap = eo.half_space_gamma(eo.laplacian(2))
    g_bel = eo.half_space_gamma(_bellman_pair())
    ok = abs(g_lap - 1) <= 1e-12 and abs(g_bel - 0.5) <= 1e-12
    in_range = True
    rng = np.random.default_rng(1)
    for _ in range(50):
        lam = float(rng.uniform(0.2, 2.0))
        Lam = lam * float(rng.uniform(1.0, 5.0))
        bnd = eo.EllipticityBounds(lam, Lam)
        for op in (eo.PucciPlus(bnd), eo.PucciMinus(bnd)):
            g = eo.half_space_gamma(op)
            in_range &= 1 / Lam - 1e-10 <= g <= 1 / lam + 1e-10
    return CheckResult("AC2 half-space gamma", bool(ok and in_range),
                       {"laplacian": g_lap, "bellman": g_bel, "in_range": bool(in_range)})


def _grid(n=257):
    return Grid.square(2, -1.0, 1.0, n)


def growth_check() -> CheckResult:
    u = GridFunction.sample(_grid(), half_space_solution(1.0))
    gp = growth_profile(u, (0.0, 0.0), 2, 6)
    ratio = gp.ratio
    spread = float(np.max(np.abs(ratio / ratio.mean() - 1)))
    ok = abs(gp.exponent - 2) <= 0.05 and bool(gp.in_M.all()) and spread <= 0.05
    return CheckResult("AC5 quadratic growth", bool(ok),
                       {"exponent": gp.exponent, "ratio": ratio, "in_M": gp.in_M})


def density_control() -> CheckResult:
    # fine local window: node counting carries an O(h/r) bias, the disk an O(r) bias
    g = Grid((0.375, -0.125), (0.625, 0.125), (257, 257))
    u = GridFunction.sample(g, radial_solution(2))
    V = volume_density(u, (0.5, 0.0), 1 / 32).value
    gp = growth_profile(u, (0.5, 0.0), 3, 6)
    ok = abs(V - math.pi / 2) <= 0.05 and V > 0.1 and abs(gp.exponent - 1) <= 0.1
    return CheckResult("AC6 density hypothesis control", bool(ok),
                       {"V_r": V, "r": 1 / 32, "h": g.h, "exponent": gp.exponent})


def nondegeneracy_check() -> CheckResult:
    g = _grid()
    u = GridFunction.sample(g, half_space_solution(1.0))
    radii = [1 / 16, 1 / 8, 1 / 4]
    tab = nondegeneracy_profile(u, (0.0, 0.0), radii)
    ok = all(abs(N - 0.5) <= 10 * g.h / r for N, r in zip(tab.N, radii)) and tab.constant > 0
    return CheckResult("AC7 non-degeneracy", bool(ok), {"N": tab.N, "constant": tab.constant})


def thickness_check() -> CheckResult:
    g = _grid()
    u = GridFunction.sample(g, half_space_solution(1.0))
    p2 = GridFunction.sample(g, quadratic_p2([0.25, 0.25], eo.laplacian(2)))
    rows = {}
    ok = True
    for r in (1 / 8, 1 / 4):
        t = thickness(u, (0.0, 0.0), r).value
        t1 = thickness(blow_up(u, (0.0, 0.0), r), (0.0, 0.0), 1.0).value
        tp = thickness(p2, (0.0, 0.0), r).value
        ok &= abs(t1 - t) <= 4 * g.h / r and tp <= 2 * g.h / r and abs(t - 1) <= 4 * g.h / r
        rows[str(r)] = {"delta_r": t, "delta_1_blowup": t1, "p2": tp}
    return CheckResult("AC8 thickness and blow-up", bool(ok), rows)


def viscosity_oracles() -> CheckResult:
    lap = eo.laplacian(2)
    out = {}
    for name, orc in (("radial", radial_solution(2)), ("half_space", half_space_solution(1.0))):
        u = GridFunction.sample(_grid(129), orc)
        out[name] = check_viscosity_pair(u, lap, lap).violations
    return CheckResult("AC10 viscosity pair on oracles", all(v == 0 for v in out.values()), out)


def convexity_control() -> CheckResult:
    u = GridFunction.sample(_grid(129), lambda x: -(x ** 2).sum(axis=-1))
    gap = convexity_gap(u)
    return CheckResult("AC11 convexity control", abs(gap - 2) <= 1e-10, {"gap": gap})


@lru_cache(maxsize=None)
def _half_space_solve(n: int):
    g = _grid(n)
    lap = eo.laplacian(2)
    orc = half_space_solution(1.0)
    res = solve(ProblemSpec(g, lap, lap, orc), SolverConfig())
    return g, orc, res


def radial_solve() -> CheckResult:
    g = _grid(129)
    lap = eo.laplacian(2)
    v = radial_solution(2)
    res = solve(ProblemSpec(g, lap, lap, v, delta=0.0), SolverConfig())
    err = float(np.abs(res.u.values - v(g.points())).max())
    fb = g.points()[res.partition.free_boundary]
    fb_dist = float(np.abs(np.linalg.norm(fb, axis=1) - 0.5).max()) if len(fb) else math.inf
    visc = check_viscosity_pair(res.u, lap, lap).violations
    ok = (res.converged and err <= 1e-8 and fb_dist <= g.h * (1 + 1e-9)
          and res.residual <= 1e-8 and visc == 0)
    return CheckResult("AC3 radial solve", bool(ok), {
        "max_error": err, "fb_distance_over_h": fb_dist / g.h, "residual": res.residual,
        "viscosity_violations": visc})


def half_space_solve() -> CheckResult:
    errs, hs = [], []
    layer_ok = True
    for n in (33, 65, 129):
        g, orc, res = _half_space_solve(n)
        errs.append(float(np.abs(res.u.values - orc(g.points())).max()))
        hs.append(g.h)
        if n == 129:
            wrong = res.partition.plus != (g.points()[..., 0] > 0)
            x1 = g.points()[..., 0][wrong]
            layer_ok = bool(np.all(np.abs(x1) <= g.h * (1 + 1e-9)))
    orders = [math.log(errs[i] / errs[i + 1]) / math.log(hs[i] / hs[i + 1]) for i in range(2)]
    ok = (errs[-1] <= 5e-3 and layer_ok and all(a > b for a, b in zip(errs, errs[1:]))
          and min(orders) >= 1)
    return CheckResult("AC4 half-space solve", bool(ok),
                       {"h": hs, "max_error": errs, "orders": orders, "one_layer": layer_ok})


def c11_check() -> CheckResult:
    vals = [c11_seminorm(_half_space_solve(n)[2].u) for n in (33, 65, 129)]
    ok = all(0.9 <= v <= 1.5 for v in vals) and vals[-1] <= vals[0] * 1.1
    return CheckResult("AC9 C11 seminorm", bool(ok), {"seminorm": vals})


def viscosity_solver() -> CheckResult:
    lap = eo.laplacian(2)
    out = {}
    for n in (33, 65, 129):
        g, _, res = _half_space_solve(n)
        out[str(n)] = check_viscosity_pair(res.u, lap, lap, res.delta).violations
    return CheckResult("AC10 viscosity pair on solver outputs",
                       all(v == 0 for v in out.values()), out)


def convexity_solver() -> CheckResult:
    g, _, res = _half_space_solve(129)
    gap = convexity_gap(res.u, res.delta)
    return CheckResult("AC11 convexity of half-space output", gap <= 10 * g.h, {"gap": gap})


SUITES = {
    "oracles": [operator_algebra, gamma_solver, growth_check, density_control,
                nondegeneracy_check, thickness_check, viscosity_oracles, convexity_control],
    "solver": [radial_solve, half_space_solve, c11_check, viscosity_solver, convexity_solver],
}
SUITES["all"] = SUITES["oracles"] + SUITES["solver"]
_NAMES = {
    operator_algebra: "AC1 operator algebra", gamma_solver: "AC2 half-space gamma",
    radial_solve: "AC3 radial solve", half_space_solve: "AC4 half-space solve",
    growth_check: "AC5 quadratic growth", density_control: "AC6 density hypothesis control",
    nondegeneracy_check: "AC7 non-degeneracy", thickness_check: "AC8 thickness and blow-up",
    c11_check: "AC9 C11 seminorm", viscosity_oracles: "AC10 viscosity pair on oracles",
    viscosity_solver: "AC10 viscosity pair on solver outputs",
    convexity_control: "AC11 convexity control",
    convexity_solver: "AC11 convexity of half-space output",
}


def run_suite(name: str) -> list[CheckResult]:
    if name not in SUITES:
        raise KeyError(name)
    _half_space_solve.cache_clear()
    out = []
    for check in SUITES[name]:
        try:
            r = check()
        except Exception as exc:  # a crashing check is a failed check
            r = CheckResult(_NAMES[check], False, {"error": f"{type(exc).__name__}: {exc}"})
        r.details = _clean(r.details)
        out.append(r)
    return out


def write_results(results: list[CheckResult], directory) -> list[str]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    payload = [{"name": r.name, "passed": r.passed, "details": r.details} for r in results]
    (directory / "results.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    with open(directory / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "passed"])
        for r in results:
            w.writerow([r.name, int(r.passed)])
    return ["results.json", "results.csv"]
