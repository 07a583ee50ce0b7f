import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypokinetic import operators as ops
from hypokinetic.phase_space import Field, build_grid, inner_product, mass, norm, project_pi, sawtooth_mode


@pytest.fixture(scope="module")
def setup():
    grid = build_grid(16, 2 * np.pi, 8)
    T = ops.build_transport(grid)
    L = ops.build_bgk(grid)
    La = ops.build_anisotropic(grid, ops.default_kernel(grid))
    return grid, T, L, La


class TestDerivative:
    @pytest.mark.parametrize("rule", ["spectral", "central2"])
    def test_skew(self, rule):
        D = ops.derivative_matrix(12, 3.0, rule)
        np.testing.assert_allclose(D, -D.T, atol=1e-14)

    def test_spectral_exact_on_trig(self):
        nx, lx = 16, 2 * np.pi
        x = lx * np.arange(nx) / nx
        D = ops.derivative_matrix(nx, lx)
        for k in range(1, nx // 2):
            np.testing.assert_allclose(D @ np.sin(k * x), k * np.cos(k * x), atol=1e-11)

    def test_central_second_order(self):
        errs = []
        for nx in (32, 64):
            x = 2 * np.pi * np.arange(nx) / nx
            errs.append(np.max(np.abs(ops.derivative_matrix(nx, 2 * np.pi, "central2") @ np.sin(x) - np.cos(x))))
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.02)

    @pytest.mark.parametrize("rule", ["spectral", "central2"])
    def test_sawtooth_in_kernel(self, rule):
        D = ops.derivative_matrix(10, 1.0, rule)
        assert np.max(np.abs(D @ sawtooth_mode(build_grid(10, 1.0, 4)))) < 1e-12

    def test_unknown_rule(self):
        with pytest.raises(ValueError):
            ops.derivative_matrix(8, 1.0, "upwind")


class TestStructure:
    def test_assumptions_hold(self, setup):
        grid, T, L, La = setup
        for op in (L, La):
            rep = ops.check_assumptions(T, op)
            assert rep.ok, rep.lines()
            assert rep.transport_skew <= 1e-10
            assert rep.collision_symmetry <= 1e-10
            assert rep.orthogonality <= 1e-11

    def test_shifted_grid_breaks_orthogonality(self):
        grid = build_grid(8, 2 * np.pi, 8, v_shift=0.4)
        rep = ops.check_assumptions(ops.build_transport(grid), ops.build_bgk(grid))
        assert "ΠTΠ ≠ 0" in rep.failures

    def test_adjoint_matches_inner_product(self, setup, rng):
        grid, T, L, La = setup
        f, g = grid.random_field(rng), grid.random_field(rng)
        for op in (T, La):
            adj = Field((op.adjoint @ g.flat).reshape(grid.shape), grid)
            assert inner_product(op(f), g) == pytest.approx(inner_product(f, adj), rel=1e-10)

    def test_collision_kills_equilibria(self, setup, rng):
        grid, T, L, La = setup
        rho = rng.standard_normal(grid.nx)
        eq = Field(rho[:, None] * grid.maxwellian[None, :], grid)
        for op in (L, La):
            assert norm(op(eq)) < 1e-12

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31))
    def test_collision_dissipative_and_conservative(self, setup, seed):
        grid, T, L, La = setup
        f = grid.random_field(np.random.default_rng(seed))
        for op in (L, La):
            assert inner_product(op(f), f) <= 1e-12
            assert mass(op(f)) == pytest.approx(0.0, abs=1e-12)

    def test_unit_kernel_is_bgk(self, setup):
        grid, T, L, La = setup
        np.testing.assert_allclose(ops.build_anisotropic(grid, np.ones((grid.nv, grid.nv))).matrix, L.matrix, atol=1e-14)

    def test_kernel_validation(self, setup):
        grid = setup[0]
        k = ops.default_kernel(grid)
        k[0, 1] += 0.1
        with pytest.raises(ValueError, match="symmetric"):
            ops.build_anisotropic(grid, k)
        with pytest.raises(ValueError, match="positive"):
            ops.build_anisotropic(grid, -np.ones((grid.nv, grid.nv)))
        with pytest.raises(ValueError):
            ops.build_bgk(grid, 0.0)

    def test_shape_mismatch(self, setup):
        with pytest.raises(ValueError):
            ops.KineticOperator(np.eye(3), "collision", setup[0])


class TestConstants:
    def test_bgk_gap_is_sigma(self, setup):
        grid = setup[0]
        assert ops.estimate_alpha(ops.build_bgk(grid, 2.5)) == pytest.approx(2.5, rel=1e-10)

    def test_beta_oracle(self, setup):
        # slowest admissible mode is k = 1 and <v^2> = 1 on the Gauss-Hermite grid
        grid, T, _, _ = setup
        assert ops.estimate_beta(T) == pytest.approx(1.0, rel=1e-10)

    def test_beta_with_sawtooth_fails(self, setup):
        with pytest.raises(ops.CoercivityError):
            ops.estimate_beta(setup[1], exclude_sawtooth=False)

    def test_gamma_sum_dominates_product(self, setup):
        grid, T, L, La = setup
        A = ops.build_auxiliary_A(T)
        prod = ops.estimate_gamma(A, T, La)
        assert 0 < prod <= ops.estimate_gamma(A, T, La, "sum") + 1e-12
        with pytest.raises(ValueError):
            ops.estimate_gamma(A, T, La, "max")

    def test_no_gap_raises(self, setup):
        grid = setup[0]
        zero = ops.KineticOperator(np.zeros((grid.size, grid.size)), "collision", grid)
        with pytest.raises(ops.CoercivityError):
            ops.estimate_alpha(zero)


class TestAuxiliary:
    def test_factors_reproduce_matrix(self, setup):
        grid, T, _, _ = setup
        A = ops.build_auxiliary_A(T)
        U, R = A.factors
        np.testing.assert_allclose(A.euclidean, U @ R, atol=1e-13)

    def test_matches_dense_formula(self, setup):
        grid, T, _, _ = setup
        A = ops.build_auxiliary_A(T)
        P = ops.projection_operator(grid)
        TP = T.euclidean @ P.euclidean
        dense = np.linalg.solve(np.eye(grid.size) + TP.T @ TP, TP.T)
        np.testing.assert_allclose(A.euclidean, dense, atol=1e-12)

    def test_norm_bounds(self, setup):
        # ||A|| <= 1/2 and ||A T Pi|| <= 1 hold for any skew T
        grid, T, _, _ = setup
        A = ops.build_auxiliary_A(T)
        P = ops.projection_operator(grid)
        assert A.operator_norm() <= 0.5 + 1e-12
        assert np.linalg.norm(A.euclidean @ T.euclidean @ P.euclidean, 2) <= 1 + 1e-12

    def test_range_in_equilibria(self, setup, rng):
        grid, T, _, _ = setup
        A = ops.build_auxiliary_A(T)
        f = A(grid.random_field(rng))
        np.testing.assert_allclose(project_pi(f).values, f.values, atol=1e-13)
