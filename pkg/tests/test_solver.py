import numpy as np
import pytest
import scipy.sparse as sp

from overlapfem import (
    DeconstructedDomain,
    QuadratureSpec,
    SolverError,
    assemble_global,
    constrained_modes,
    generate_annulus,
    generate_segment,
    implicit_step,
    solve_bilaplace,
    solve_bilaplace_convex,
    solve_kkt,
    solve_poisson,
)
from overlapfem.solver import coupling_for_mode

QUAD = QuadratureSpec.corner_average()


class TestSolveKkt:
    def test_hand_computed_qp(self):
        # min u1^2 + u2^2 - 2 u1 - 4 u2  s.t. u1 + u2 = 1  ->  u = (0, 1)
        Q = sp.diags([2.0, 2.0])
        b = np.array([2.0, 4.0])
        A = sp.csr_matrix(np.array([[1.0, 1.0]]))
        rep = solve_kkt(Q, b, A, np.array([1.0]))
        np.testing.assert_allclose(rep.u, [0.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(rep.multipliers, [2.0], atol=1e-12)
        assert rep.constraint_residual < 1e-12
        assert rep.stationarity_residual < 1e-10

    def test_fixed_values_are_substituted(self):
        Q = sp.diags([2.0, 2.0, 2.0])
        rep = solve_kkt(Q, np.array([0.0, 0.0, 6.0]), fixed=[(0, 5.0)])
        np.testing.assert_allclose(rep.u, [5.0, 0.0, 3.0], atol=1e-12)

    def test_duplicate_fixed_index_rejected(self):
        with pytest.raises(SolverError):
            solve_kkt(sp.eye(2), fixed=[(0, 1.0), (0, 2.0)])

    def test_redundant_consistent_rows_are_tolerated(self):
        Q = sp.diags([2.0, 2.0])
        b = np.array([2.0, 4.0])
        A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0], [2.0, 2.0]]))
        rep = solve_kkt(Q, b, A, np.array([1.0, 1.0, 2.0]))
        np.testing.assert_allclose(rep.u, [0.0, 1.0], atol=1e-9)

    def test_inconsistent_rows_rejected(self):
        Q = sp.diags([2.0, 2.0])
        A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
        with pytest.raises(SolverError):
            solve_kkt(Q, None, A, np.array([1.0, 2.0]))

    def test_infeasible_fixed_and_constraint(self):
        Q = sp.diags([2.0, 2.0])
        A = sp.csr_matrix(np.array([[1.0, 0.0]]))
        with pytest.raises(SolverError):
            solve_kkt(Q, None, A, np.array([3.0]), fixed=[(0, 1.0)])


class TestPoisson:
    def test_single_segment_is_nodally_exact(self):
        n = 21
        dom = DeconstructedDomain(
            [generate_segment(0.0, 1.0, n)], [(0, 0, 0.0), (0, n - 1, 0.0)]
        )
        rep = solve_poisson(dom, QUAD, mode="none", rhs=1.0)
        s = dom.stacked_vertices()[:, 0]
        np.testing.assert_allclose(rep.u, s * (1 - s) / 2, atol=1e-13)

    def test_two_segments_boundary_only(self):
        n = 41
        a = generate_segment(0.0, 2.0 / 3.0, n)
        b = generate_segment(1.0 / 3.0, 1.0, n)
        dom = DeconstructedDomain([a, b], [(0, 0, 0.0), (1, n - 1, 0.0)])
        rep = solve_poisson(dom, QUAD, mode="boundary_only", rhs=1.0)
        s = dom.stacked_vertices()[:, 0]
        assert np.abs(rep.u - s * (1 - s) / 2).max() < 2e-4
        assert rep.constraint_residual < 1e-10

    def test_unknown_mode_rejected(self):
        dom = DeconstructedDomain([generate_segment(0.0, 1.0, 5)])
        with pytest.raises(ValueError):
            solve_poisson(dom, QUAD, mode="sideways")


class TestImplicitStep:
    def test_conserves_lumped_mass_without_dirichlet(self):
        a = generate_segment(0.0, 0.7, 15)
        b = generate_segment(0.3, 1.0, 14)
        dom = DeconstructedDomain([a, b])
        L, M, _ = assemble_global(dom, QUAD)
        rng = np.random.default_rng(2)
        u0 = rng.normal(size=dom.total_vertices)
        rep = implicit_step(dom, QUAD, "none", 0.05, u0)
        before = float(np.ones(dom.total_vertices) @ (M @ u0))
        after = float(np.ones(dom.total_vertices) @ (M @ rep.u))
        assert after == pytest.approx(before, rel=1e-10)

    def test_nonpositive_alpha_rejected(self):
        dom = DeconstructedDomain([generate_segment(0.0, 1.0, 5)])
        with pytest.raises(ValueError):
            implicit_step(dom, QUAD, "none", 0.0, np.zeros(5))


class TestBilaplace:
    def quartic_domain(self, n):
        a = generate_segment(0.0, 2.0 / 3.0, n)
        b = generate_segment(1.0 / 3.0, 1.0, n)
        dom = DeconstructedDomain(
            [a, b], [(0, 0, 0.0), (1, n - 1, 0.0)]
        )
        return dom, ((0, 0, 0.0), (1, n - 1, 0.0))

    def test_high_order_matches_quartic(self):
        n = 80
        dom, z_pins = self.quartic_domain(n)
        rep = solve_bilaplace(dom, QUAD, "high_order", z_pins, load=24.0)
        s = dom.stacked_vertices()[:, 0]
        exact = s**4 - 2 * s**3 + s
        assert np.abs(rep.u - exact).max() < 1e-3

    def test_low_order_needs_1d(self):
        dom = DeconstructedDomain(
            [generate_annulus(1.0, 1.6, 2, 9), generate_annulus(1.4, 2.0, 2, 9)]
        )
        with pytest.raises(SolverError):
            solve_bilaplace(dom, QUAD, "low_order")

    def test_unknown_coupling_rejected(self):
        dom, _ = self.quartic_domain(10)
        with pytest.raises(SolverError):
            solve_bilaplace(dom, QUAD, "medium_order")

    def test_convex_solver_agrees(self):
        dom, z_pins = self.quartic_domain(30)
        kkt = solve_bilaplace(dom, QUAD, "high_order", z_pins, load=24.0)
        convex = solve_bilaplace_convex(dom, QUAD, z_pins, load=24.0)
        scale = np.abs(kkt.u).max()
        assert np.abs(kkt.u - convex.u).max() <= 1e-8 * scale
        np.testing.assert_allclose(convex.z, kkt.z, atol=1e-6 * scale)


class TestConstrainedModes:
    def test_segment_neumann_spectrum(self):
        n = 61
        dom = DeconstructedDomain([generate_segment(0.0, 1.0, n)])
        L, M, _ = assemble_global(dom, QUAD)
        pairs = constrained_modes(L, M, None, 4)
        values = np.array([v for v, _ in pairs])
        exact = (np.pi * np.arange(4)) ** 2
        assert abs(values[0]) < 1e-8
        np.testing.assert_allclose(values[1:], exact[1:], rtol=1e-2)
        # eigenvectors satisfy L v = lambda M v
        for val, vec in pairs:
            assert np.abs(L @ vec - val * (M @ vec)).max() < 1e-8

    def test_constraints_remove_nullspace(self):
        n = 31
        dom = DeconstructedDomain([generate_segment(0.0, 1.0, n)])
        L, M, _ = assemble_global(dom, QUAD)
        A = sp.csr_matrix((np.ones(1), ([0], [0])), shape=(1, n))
        values = [v for v, _ in constrained_modes(L, M, A, 3)]
        assert values[0] > 1.0  # constant mode suppressed

    def test_no_freedom_left(self):
        dom = DeconstructedDomain([generate_segment(0.0, 1.0, 4)])
        L, M, _ = assemble_global(dom, QUAD)
        with pytest.raises(SolverError):
            constrained_modes(L, M, sp.eye(4, format="csr"), 2)


class TestCouplingForMode:
    def test_none_mode_is_empty(self):
        dom = DeconstructedDomain([generate_segment(0.0, 1.0, 5)])
        cs, A = coupling_for_mode(dom, "none")
        assert cs is None and A.shape == (0, 5)

    def test_unknown_mode(self):
        dom = DeconstructedDomain([generate_segment(0.0, 1.0, 5)])
        with pytest.raises(ValueError):
            coupling_for_mode(dom, "psychic")
