"""The twelve acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line that pytest prints in an
"acceptance criteria" section at the end of the run.  The measurements are
made here directly from the library, independently of ``transmission_lab.verify``.
"""
import math
import time

import numpy as np
import pytest

from transmission_lab import cli
from transmission_lab import elliptic_ops as eo
from transmission_lab.diagnostics import (
    blow_up,
    c11_seminorm,
    check_viscosity_pair,
    convexity_gap,
    growth_profile,
    nondegeneracy_profile,
    thickness,
    volume_density,
)
from transmission_lab.discretization import Grid, GridFunction
from transmission_lab.oracles import half_space_solution, quadratic_p2, radial_solution
from transmission_lab.solver import ProblemSpec, solve

B12 = eo.EllipticityBounds(1, 2)
LAP = eo.laplacian(2)
PAIR = eo.Bellman(eo.BellmanFamily(B12, [np.diag([2.0, 1.0]), np.diag([1.0, 2.0])]))
REFINEMENT = (1 / 16, 1 / 32, 1 / 64)


def box(h):
    return Grid.square(2, -1.0, 1.0, int(round(2 / h)) + 1)


@pytest.fixture(scope="module")
def half_space_runs():
    orc = half_space_solution(1.0)
    runs = {}
    for h in REFINEMENT:
        g = box(h)
        runs[h] = (g, solve(ProblemSpec(g, LAP, LAP, orc)))
    return orc, runs


@pytest.fixture(scope="module")
def radial_run():
    g = box(1 / 64)
    t0 = time.perf_counter()
    res = solve(ProblemSpec(g, LAP, LAP, radial_solution(2), delta=0.0))
    return g, res, time.perf_counter() - t0


@pytest.fixture(scope="module")
def oracle_fields():
    g = box(1 / 128)
    return (g, GridFunction.sample(g, half_space_solution(1.0)),
            GridFunction.sample(g, radial_solution(2)))


def test_ac01_operator_algebra(acceptance):
    t0 = time.perf_counter()
    M = np.diag([1.0, -1.0])
    hand = (abs(eo.pucci_plus(M, B12) - 1) <= 1e-12 and abs(eo.pucci_minus(M, B12) + 1) <= 1e-12)
    rng = np.random.default_rng(12345)
    G = rng.standard_normal((1000, 2, 2))
    mats = G + np.swapaxes(G, 1, 2)
    dual = max(abs(eo.pucci_minus(A, B12) + eo.pucci_plus(-A, B12)) for A in mats)
    ops = (LAP, PAIR, eo.Linear(np.array([[1.8, -0.2], [-0.2, 1.1]])))
    sandwich = all(eo.pucci_minus(A, B12) - 1e-12 <= eo.evaluate(op, A)
                   <= eo.pucci_plus(A, B12) + 1e-12 for A in mats for op in ops)
    elapsed = time.perf_counter() - t0
    ok = hand and dual <= 1e-12 and sandwich and elapsed < 1.0
    assert acceptance(1, "operator algebra", ok, f"duality {dual:.1e}, {elapsed:.2f}s")


def test_ac02_gamma(acceptance):
    g_lap, g_pair = eo.half_space_gamma(LAP), eo.half_space_gamma(PAIR)
    rng = np.random.default_rng(2)
    inside = True
    for _ in range(100):
        lam = rng.uniform(0.1, 3.0)
        b = eo.EllipticityBounds(lam, lam * rng.uniform(1.0, 6.0))
        ops = [eo.PucciPlus(b), eo.PucciMinus(b)]
        # random Bellman family inside the same bounds
        mats = []
        for _ in range(3):
            t = rng.uniform(0, np.pi)
            R = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
            mats.append(R @ np.diag(rng.uniform(b.lam, b.Lam, 2)) @ R.T)
        ops.append(eo.Bellman(eo.BellmanFamily(b, mats)))
        for op in ops:
            g = eo.half_space_gamma(op)
            inside &= 1 / b.Lam - 1e-10 <= g <= 1 / b.lam + 1e-10
    ok = abs(g_lap - 1) <= 1e-12 and abs(g_pair - 0.5) <= 1e-12 and inside
    assert acceptance(2, "half-space gamma", ok, f"laplacian {g_lap!r}, pair {g_pair!r}")


def test_ac03_radial_solve(acceptance, radial_run):
    g, res, elapsed = radial_run
    v = radial_solution(2)
    err = float(np.abs(res.u.values - v(g.points())).max())
    fb = g.points()[res.partition.free_boundary]
    near = len(fb) > 0 and bool(np.all(np.abs(np.linalg.norm(fb, axis=1) - 0.5) <= g.h))
    visc = check_viscosity_pair(res.u, LAP, LAP).violations
    ok = (res.converged and err <= 1e-8 and near and res.residual <= 1e-8 and visc == 0
          and elapsed < 30)
    assert acceptance(3, "radial oracle solve", ok,
                      f"error {err:.1e}, residual {res.residual:.1e}, {elapsed:.1f}s")


def test_ac04_half_space_solve(acceptance, half_space_runs):
    orc, runs = half_space_runs
    errs = [float(np.abs(runs[h][1].u.values - orc(runs[h][0].points())).max())
            for h in REFINEMENT]
    orders = [math.log(errs[k] / errs[k + 1]) / math.log(2) for k in range(2)]
    g, res = runs[1 / 64]
    x1 = g.points()[..., 0]
    mismatch = res.partition.plus != (x1 > 0)
    layer = bool(np.all(np.abs(x1[mismatch]) <= g.h * (1 + 1e-9)))
    ok = (errs[-1] <= 5e-3 and layer and errs[0] > errs[1] > errs[2] and min(orders) >= 1)
    assert acceptance(4, "half-space oracle solve", ok,
                      f"errors {[f'{e:.1e}' for e in errs]}, orders {[f'{o:.2f}' for o in orders]}")


def test_ac05_quadratic_growth(acceptance, oracle_fields):
    _, half, _ = oracle_fields
    gp = growth_profile(half, (0.0, 0.0), 2, 6)
    steps = gp.S[1:] / gp.S[:-1]
    table = gp.S * 4.0 ** gp.j
    spread = float(np.max(np.abs(table / table.mean() - 1)))
    ok = (abs(gp.exponent - 2) <= 0.05 and bool(gp.in_M.all())
          and np.allclose(steps, 0.25, rtol=0, atol=1e-12) and spread <= 0.05)
    assert acceptance(5, "quadratic growth", ok, f"exponent {gp.exponent:.4f}")


def test_ac06_density_negative_control(acceptance):
    # a fine window around x* keeps both the node-count and curvature biases small
    g = Grid((0.375, -0.125), (0.625, 0.125), (257, 257))
    u = GridFunction.sample(g, radial_solution(2))
    V = volume_density(u, (0.5, 0.0), 1 / 32).value
    gp = growth_profile(u, (0.5, 0.0), 3, 6)
    ok = abs(V - math.pi / 2) <= 0.05 and V > 0.1 and abs(gp.exponent - 1) <= 0.1
    assert acceptance(6, "density hypothesis negative control", ok,
                      f"V_r {V:.4f}, exponent {gp.exponent:.4f}")


def test_ac07_nondegeneracy(acceptance, oracle_fields):
    g, half, _ = oracle_fields
    radii = (1 / 16, 1 / 8, 1 / 4)
    tab = nondegeneracy_profile(half, (0.0, 0.0), radii)
    ok = all(abs(N - 0.5) <= 10 * g.h / r for N, r in zip(tab.N, radii)) and tab.constant > 0
    assert acceptance(7, "non-degeneracy", ok, f"N {np.round(tab.N, 4).tolist()}")


def test_ac08_thickness_blow_up(acceptance, oracle_fields):
    g, half, _ = oracle_fields
    p2 = GridFunction.sample(g, quadratic_p2([0.25, 0.25], LAP))
    ok = True
    for r in (1 / 8, 1 / 4):
        t = thickness(half, (0.0, 0.0), r).value
        t1 = thickness(blow_up(half, (0.0, 0.0), r), (0.0, 0.0), 1.0).value
        ok &= abs(t1 - t) <= 4 * g.h / r
        ok &= thickness(p2, (0.0, 0.0), r).value <= 2 * g.h / r
        ok &= abs(t - 1) <= 4 * g.h / r
    assert acceptance(8, "thickness and blow-up", bool(ok))


def test_ac09_c11_seminorm(acceptance, half_space_runs):
    _, runs = half_space_runs
    gamma = 1.0
    vals = [c11_seminorm(runs[h][1].u) for h in REFINEMENT]
    bounded = all(0.9 * gamma <= v <= 1.5 * gamma for v in vals)
    steady = all(b <= a * 1.1 for a, b in zip(vals, vals[1:]))
    assert acceptance(9, "C11 seminorm", bounded and steady,
                      f"{[round(v, 4) for v in vals]}")


def test_ac10_viscosity_pair(acceptance, oracle_fields, half_space_runs, radial_run):
    _, half, radial = oracle_fields
    counts = {"half-space oracle": check_viscosity_pair(half, LAP, LAP).violations,
              "radial oracle": check_viscosity_pair(radial, LAP, LAP).violations}
    _, runs = half_space_runs
    for h in REFINEMENT:
        res = runs[h][1]
        counts[f"half-space h={h}"] = check_viscosity_pair(res.u, LAP, LAP, res.delta).violations
    g, res, _ = radial_run
    counts["radial solve"] = check_viscosity_pair(res.u, LAP, LAP).violations
    gb = box(1 / 64)
    bel = solve(ProblemSpec(gb, PAIR, PAIR, half_space_solution(0.5)))
    counts["bellman half-space"] = check_viscosity_pair(bel.u, PAIR, PAIR, bel.delta).violations
    ok = all(v == 0 for v in counts.values())
    assert acceptance(10, "viscosity pair", ok, f"{sum(counts.values())} violations "
                      f"over {len(counts)} fields")


def test_ac11_convexity(acceptance, half_space_runs):
    _, runs = half_space_runs
    g, res = runs[1 / 64]
    gap = convexity_gap(res.u, res.delta)
    ctrl_grid = box(1 / 64)
    ctrl = convexity_gap(GridFunction.sample(ctrl_grid, lambda x: -(x ** 2).sum(-1)))
    ok = gap <= 10 * g.h and abs(ctrl - 2) <= 1e-10
    assert acceptance(11, "convexity", ok, f"solver gap {gap:.1e}, control {ctrl!r}")


def test_ac12_determinism(acceptance, tmp_path, capsys):
    outputs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        code = cli.main(["verify", "all", str(d)])
        outputs.append((code, capsys.readouterr().out,
                        (d / "results.json").read_bytes(), (d / "results.csv").read_bytes()))
    ok = outputs[0] == outputs[1] and outputs[0][0] == 0
    assert acceptance(12, "determinism", ok, "verify all run twice, artifacts compared bytewise")
