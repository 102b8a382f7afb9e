import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transmission_lab import elliptic_ops as eo
from transmission_lab.discretization import (
    Grid,
    GridFunction,
    StencilSet,
    decompose_positive,
    operator_matrix,
)
from transmission_lab.errors import InvalidInputError, NonConvergenceError
from transmission_lab.oracles import half_space_solution, radial_solution
from transmission_lab.solver import (
    MINUS,
    PLUS,
    ZERO,
    DiscreteOperator,
    ProblemSpec,
    SolverConfig,
    _howard,
    howard_solve,
    residual,
    solve,
    solve_with_labels,
    update_partition,
)

B12 = eo.EllipticityBounds(1, 2)
LAP = eo.laplacian(2)
PAIR = eo.Bellman(eo.BellmanFamily(B12, [np.diag([2.0, 1.0]), np.diag([1.0, 2.0])]))


def square(n):
    return Grid.square(2, -1.0, 1.0, n)


def sin_data(x):
    return np.sin(3 * x[..., 0]) * np.cos(2 * x[..., 1])


@pytest.fixture(scope="module")
def half_space_129():
    g = square(129)
    orc = half_space_solution(1.0)
    return g, orc, solve(ProblemSpec(g, LAP, LAP, orc))


class TestExamples:
    def test_radial_exact(self):
        g = square(129)
        v = radial_solution(2)
        res = solve(ProblemSpec(g, LAP, LAP, v, delta=0.0))
        assert res.converged
        assert np.abs(res.u.values - v(g.points())).max() <= 1e-8
        fb = g.points()[res.partition.free_boundary]
        assert len(fb) and np.all(np.abs(np.linalg.norm(fb, axis=1) - 0.5) <= g.h)

    def test_half_space_laplacian(self, half_space_129):
        g, orc, res = half_space_129
        assert np.abs(res.u.values - orc(g.points())).max() <= 5e-3
        wrong = res.partition.plus != (g.points()[..., 0] > 0)
        assert np.all(np.abs(g.points()[..., 0][wrong]) <= g.h * (1 + 1e-9))

    def test_half_space_bellman(self):
        g = square(129)
        orc = half_space_solution(eo.half_space_gamma(PAIR))
        assert orc.gamma == pytest.approx(0.5)
        res = solve(ProblemSpec(g, PAIR, PAIR, orc))
        assert np.abs(res.u.values - orc(g.points())).max() <= 5e-3

    def test_summary_keys(self, half_space_129):
        s = half_space_129[2].summary()
        assert {"converged", "outer_iters", "residual", "omega_plus_cells",
                "omega_minus_cells", "fb_cells"} <= set(s)


class TestHoward:
    def test_single_member_is_direct_solve(self):
        g = square(17)
        A = np.array([[1.5, 0.3], [0.3, 1.2]])
        u = howard_solve(eo.Linear(A), 1.0, lambda x: x[..., 0] ** 2, g)
        L, _ = operator_matrix(decompose_positive(A, StencilSet.default(2)), g)
        inner = g.interior_mask()
        Lu = (L @ u.values.ravel()).reshape(g.shape)
        np.testing.assert_allclose(Lu[inner], 1.0, atol=1e-9)

    def test_zero_data(self):
        g = square(17)
        u = howard_solve(PAIR, 0.0, lambda x: 0 * x[..., 0], g)
        assert np.abs(u.values).max() <= 1e-14

    def test_two_member_quadratic(self):
        g = square(33)
        M = np.diag([0.2, 0.6])  # tr(A1 M) = 1.0, tr(A2 M) = 1.4
        q = lambda x: 0.5 * np.einsum("...i,ij,...j->...", x, M, x)  # noqa: E731
        u = howard_solve(PAIR, 1.4, q, g)
        np.testing.assert_allclose(u.values, q(g.points()), atol=1e-10)

    @pytest.mark.parametrize("op", [eo.PucciPlus(B12), eo.PucciMinus(B12), PAIR])
    def test_residual_non_increasing(self, op):
        g = square(33)
        rng = np.random.default_rng(0)
        D = DiscreteOperator(op, g)
        one = np.ones(g.size)
        bnd = rng.normal(size=g.size)
        f = rng.uniform(-1, 2, g.size)
        _, tr = _howard(D, None, one, 0 * one, 0 * one, f, bnd, g.interior_mask().ravel(),
                        bnd.copy(), SolverConfig())
        assert tr.policy_fixed
        assert np.all(np.diff(tr.residuals) <= 1e-12)


class TestResidual:
    def test_radial_zero(self):
        g = square(33)
        p = ProblemSpec(g, LAP, LAP, radial_solution(2), delta=0.0)
        r = residual(GridFunction.sample(g, radial_solution(2)), p)
        assert np.abs(r.values).max() <= 1e-12

    def test_half_space_sides(self):
        g = square(65)
        orc = half_space_solution(1.0)
        p = ProblemSpec(g, LAP, LAP, orc)
        r = residual(GridFunction.sample(g, orc), p).values
        x1 = g.points()[..., 0]
        inner = g.interior_mask()
        assert np.abs(r[inner & (x1 < -2 * g.h)]).max() == 0.0
        assert np.abs(r[inner & (x1 > 2 * g.h)]).max() <= 10 * g.h ** 2

    def test_boundary_rows_vanish(self):
        g = square(17)
        p = ProblemSpec(g, LAP, LAP, lambda x: 0 * x[..., 0])
        r = residual(GridFunction(g, np.ones(g.shape)), p).values
        assert np.all(r[g.boundary_mask()] == 0)


class TestPartition:
    def test_half_space(self):
        g = square(33)
        part = update_partition(GridFunction.sample(g, half_space_solution(1.0)), 0.0)
        x1 = g.points()[..., 0]
        np.testing.assert_array_equal(part.plus, x1 > 1e-12)
        assert not part.minus.any()
        fb = g.points()[part.free_boundary]
        assert np.all(np.abs(fb[:, 0]) <= g.h * (1 + 1e-9))

    def test_constant(self):
        g = square(17)
        part = update_partition(GridFunction(g, np.ones(g.shape)))
        assert part.plus.all() and not part.free_boundary.any()

    def test_radial(self):
        g = square(65)
        part = update_partition(GridFunction.sample(g, radial_solution(2)))
        fb = g.points()[part.free_boundary]
        assert np.all(np.abs(np.linalg.norm(fb, axis=1) - 0.5) <= g.h * (1 + 1e-9))

    def test_band(self):
        g = square(17)
        u = GridFunction(g, np.full(g.shape, 0.01))
        assert update_partition(u, 0.02).zero.all()

    def test_negative_delta(self):
        with pytest.raises(InvalidInputError):
            update_partition(GridFunction(square(9), np.zeros((9, 9))), -1.0)


class TestInvariants:
    def test_self_consistency(self):
        g = square(33)
        p = ProblemSpec(g, LAP, PAIR, sin_data)
        res = solve(p)
        again = update_partition(res.u, res.delta)
        np.testing.assert_array_equal(again.sign_labels, res.partition.sign_labels)
        redo = solve_with_labels(p, res.partition.sign_labels, u0=res.u.values)
        assert np.abs(redo.values - res.u.values).max() <= 1e-6

    def test_equal_operators_label_independent(self):
        g = square(65)
        v = radial_solution(2)
        p = ProblemSpec(g, PAIR, PAIR, v, delta=0.0)
        res = solve(p)
        forced = solve_with_labels(p, np.full(g.shape, PLUS))
        assert np.abs(forced.values - res.u.values).max() <= 1e-10

    def test_boundary_reproduced(self, half_space_129):
        g, orc, res = half_space_129
        bnd = g.boundary_mask()
        np.testing.assert_array_equal(res.u.values[bnd], orc(g.points())[bnd])

    @settings(max_examples=10, deadline=None)
    @given(st.floats(0.1, 10.0))
    def test_scaling_covariance(self, c):
        g = square(17)
        base = solve(ProblemSpec(g, LAP, PAIR, sin_data))
        scaled = solve(ProblemSpec(g, LAP, PAIR, lambda x: c * sin_data(x), rhs=c))
        assert np.abs(scaled.u.values - c * base.u.values).max() <= 1e-7 * c


class TestOuterLoop:
    def test_iteration_cap(self):
        g = square(33)
        p = ProblemSpec(g, LAP, LAP, radial_solution(2), delta=0.0)
        with pytest.raises(NonConvergenceError) as info:
            solve(p, SolverConfig(outer_max_iters=1))
        err = info.value
        assert not err.result.converged and err.result.outer_iterations == 1
        assert len(err.history) == 1

    def test_sign_changing_converges(self):
        # needs the adaptive relaxation; plain A/B/A damping cycles at n = 65
        res = solve(ProblemSpec(square(65), LAP, PAIR, sin_data))
        assert res.converged and res.residual <= 1e-8
        assert res.partition.plus.any() and res.partition.minus.any()

    def test_sharp_labels_can_fail(self):
        p = ProblemSpec(square(33), LAP, PAIR, sin_data, delta=0.0)
        with pytest.raises(NonConvergenceError) as info:
            solve(p, SolverConfig(outer_max_iters=20))
        assert len(info.value.history) == 20

    def test_oracle_initial_guess(self):
        g = square(65)
        orc = half_space_solution(1.0)
        res = solve(ProblemSpec(g, LAP, LAP, orc), SolverConfig(initial_guess="oracle"))
        assert res.converged and res.initial_guess == "oracle"
        assert np.abs(res.u.values - orc(g.points())).max() <= 5e-3

    def test_oracle_guess_needs_callable(self):
        g = square(17)
        p = ProblemSpec(g, LAP, LAP, np.zeros(g.shape))
        with pytest.raises(InvalidInputError):
            solve(p, SolverConfig(initial_guess="oracle"))

    def test_negative_phase_only(self):
        g = square(33)
        res = solve(ProblemSpec(g, LAP, PAIR, lambda x: -1 + 0 * x[..., 0]))
        assert res.converged and res.partition.minus[g.interior_mask()].all()


class TestValidation:
    @pytest.mark.parametrize("kw", [{"damping": 0.0}, {"damping": 1.5}, {"residual_tol": 0},
                                    {"outer_max_iters": 0}, {"initial_guess": "zero"}])
    def test_config(self, kw):
        with pytest.raises(InvalidInputError):
            SolverConfig(**kw)

    def test_problem(self):
        g = square(9)
        with pytest.raises(InvalidInputError):
            ProblemSpec(g, LAP, LAP, lambda x: 0 * x[..., 0], delta=-1.0)
        with pytest.raises(InvalidInputError):
            ProblemSpec(g, LAP, LAP, np.zeros((3, 3)))
        with pytest.raises(InvalidInputError):
            ProblemSpec(g, LAP, LAP, lambda x: np.inf + 0 * x[..., 0])

    def test_default_band(self):
        g = square(33)
        assert ProblemSpec(g, LAP, LAP, np.zeros(g.shape), rhs=2.0).zero_band == 2 * g.h ** 2

    def test_bounds_envelope(self):
        F = eo.PucciPlus(eo.EllipticityBounds(0.5, 1.5))
        p = ProblemSpec(square(9), F, PAIR, np.zeros((9, 9)))
        assert p.bounds == eo.EllipticityBounds(0.5, 2.0)


def test_label_constants_distinct():
    assert len({PLUS, MINUS, ZERO}) == 3
