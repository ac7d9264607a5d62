import numpy as np
import pytest

from overlapfem import (
    DeconstructedDomain,
    all_vertex_constraints,
    boundary_only_constraints,
    constraint_matrix,
    constraints_to_csv,
    generate_annulus,
    generate_disk,
    generate_segment,
    thin_constraints,
)


def segment_pair(n=9):
    a = generate_segment(0.0, 0.7, n)
    b = generate_segment(0.3, 1.0, n)
    return DeconstructedDomain([a, b])


def matrix_of(dom, cs):
    return constraint_matrix(cs, dom.offsets, dom.total_vertices)


class TestConstraintConstruction:
    def test_boundary_only_targets_boundary_vertices(self):
        dom = segment_pair(9)
        cs = boundary_only_constraints(dom)
        # one overlapped boundary vertex per mesh: 0.7 in B and 0.3 in A
        assert sorted(r.target for r in cs.rows) == [(0, 8), (1, 0)]

    def test_all_vertices_covers_overlap(self):
        dom = segment_pair(9)
        cs = all_vertex_constraints(dom)
        for a, mesh in enumerate(dom.subdomains):
            lo, hi = 0.3, 0.7
            inside = {
                v
                for v in range(mesh.num_vertices)
                if lo - 1e-12 <= mesh.vertices[v, 0] <= hi + 1e-12
            }
            assert {r.target[1] for r in cs.rows if r.target[0] == a} == inside

    def test_pinned_targets_are_skipped(self):
        a = generate_segment(0.0, 0.7, 9)
        b = generate_segment(0.3, 1.0, 9)
        dom = DeconstructedDomain([a, b], [(0, 8, 1.0)])
        cs = boundary_only_constraints(dom)
        assert sorted(r.target for r in cs.rows) == [(1, 0)]

    def test_coefficients_sum_to_one_exactly(self):
        dom = DeconstructedDomain(
            [generate_annulus(1.0, 1.6, 2, 13), generate_annulus(1.4, 2.0, 2, 15, 0.1)]
        )
        cs = all_vertex_constraints(dom)
        assert cs.rows
        for row in cs.rows:
            total = 0.0
            for c in row.coefficients:
                total += c
            assert total == 1.0


class TestPrecision:
    @pytest.mark.parametrize("builder", [all_vertex_constraints, boundary_only_constraints])
    def test_constant_and_linear_precision(self, builder):
        dom = DeconstructedDomain(
            [generate_annulus(1.0, 1.6, 2, 13), generate_annulus(1.4, 2.0, 2, 15, 0.1)]
        )
        C = matrix_of(dom, builder(dom))
        X = dom.stacked_vertices()
        assert np.abs(C @ np.ones(dom.total_vertices)).max() == 0.0
        for d in range(dom.dim):
            assert np.abs(C @ X[:, d]).max() <= 1e-10


class TestThinning:
    def test_requires_boundary_only_mode(self):
        dom = segment_pair()
        with pytest.raises(ValueError):
            thin_constraints(all_vertex_constraints(dom))

    def test_one_row_per_target(self):
        meshes = [
            generate_segment(0.0, 0.6, 13),
            generate_segment(0.2, 0.8, 13),
            generate_segment(0.4, 1.0, 13),
        ]
        dom = DeconstructedDomain(meshes)
        cs = boundary_only_constraints(dom)
        thin = thin_constraints(cs)
        targets = {r.target for r in cs.rows}
        assert sorted(r.target for r in thin.rows) == sorted(targets)
        assert len(thin.rows) < len(cs.rows)
        assert all(any(r is s for s in cs.rows) for r in thin.rows)

    def test_two_subdomains_unchanged_count(self):
        dom = segment_pair()
        cs = boundary_only_constraints(dom)
        thin = thin_constraints(cs)
        assert len(thin.rows) == len(cs.rows)


class TestCsv:
    def test_header_and_rows(self):
        dom = segment_pair()
        cs = boundary_only_constraints(dom)
        text = constraints_to_csv(cs)
        lines = text.strip().split("\n")
        assert lines[0] == (
            "target_subdomain,target_vertex,anchor_subdomain,anchor_simplex,c0,c1"
        )
        assert len(lines) == 1 + len(cs.rows)
        fields = lines[1].split(",")
        assert len(fields) == 6
        assert float(fields[4]) + float(fields[5]) == pytest.approx(1.0)
