import numpy as np
import pytest

from overlapfem import (
    AabbTree,
    DeconstructedDomain,
    barycentric_coordinates,
    build_trees,
    coverage_count,
    generate_annulus,
    generate_disk,
    generate_segment,
    locate_point,
)
from overlapfem.geometry import (
    GeometryError,
    batch_coordinates,
    brute_force_locate,
    containment_tolerance,
    coverage_counts,
    locate_points,
)


class TestBarycentricCoordinates:
    def test_corners_and_centroid(self):
        tri = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]])
        np.testing.assert_allclose(
            barycentric_coordinates(tri, [0.0, 0.0]), [1, 0, 0], atol=1e-14
        )
        np.testing.assert_allclose(
            barycentric_coordinates(tri, tri.mean(axis=0)),
            [1 / 3, 1 / 3, 1 / 3],
            atol=1e-14,
        )

    def test_reconstructs_point_and_sums_to_one(self):
        rng = np.random.default_rng(7)
        tri = rng.normal(size=(4, 3))
        for p in rng.normal(size=(20, 3)):
            c = barycentric_coordinates(tri, p)
            assert c.sum() == pytest.approx(1.0, abs=1e-12)
            np.testing.assert_allclose(c @ tri, p, atol=1e-12)

    def test_degenerate_simplex(self):
        tri = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        with pytest.raises(GeometryError):
            barycentric_coordinates(tri, [0.5, 0.0])


def random_points(mesh, count, seed):
    rng = np.random.default_rng(seed)
    lo = mesh.vertices.min(axis=0) - 0.2
    hi = mesh.vertices.max(axis=0) + 0.2
    return lo + (hi - lo) * rng.random((count, mesh.dim))


@pytest.mark.parametrize(
    "mesh",
    [
        generate_annulus(1.0, 2.0, 3, 17),
        generate_disk(1.3, 4, 11, 0.3),
        generate_segment(-0.5, 2.0, 23),
    ],
    ids=["annulus", "disk", "segment"],
)
class TestPointLocation:
    def test_tree_matches_brute_force(self, mesh):
        tree = AabbTree(mesh)
        pts = random_points(mesh, 10000, 11)
        found = locate_points(tree, mesh, pts)
        for p, t in zip(pts[::37], found[::37]):
            ref = brute_force_locate(mesh, p)
            loc = locate_point(tree, mesh, p)
            if ref is None:
                assert loc is None
            else:
                assert loc.simplex == ref.simplex
                np.testing.assert_allclose(loc.coords, ref.coords, atol=1e-12)
        # full vectorized-vs-brute sweep on simplex ids
        ref_ids = np.array(
            [
                -1 if brute_force_locate(mesh, p) is None else brute_force_locate(mesh, p).simplex
                for p in pts[:500]
            ]
        )
        np.testing.assert_array_equal(found[:500], ref_ids)

    def test_vertices_are_located(self, mesh):
        tree = AabbTree(mesh)
        found = locate_points(tree, mesh, mesh.vertices)
        assert (found >= 0).all()

    def test_batch_coordinates_match_scalar(self, mesh):
        tree = AabbTree(mesh)
        pts = random_points(mesh, 2000, 3)
        found = locate_points(tree, mesh, pts)
        hit = found >= 0
        coords = batch_coordinates(tree, mesh, pts[hit], found[hit])
        for p, t, c in list(zip(pts[hit], found[hit], coords))[::29]:
            expected = barycentric_coordinates(mesh.vertices[mesh.simplices[t]], p)
            np.testing.assert_allclose(c, expected, atol=1e-10)


class TestContainmentTolerance:
    def test_slightly_outside_point_is_kept(self):
        mesh = generate_segment(0.0, 1.0, 5)
        tree = AabbTree(mesh)
        tol = containment_tolerance(mesh)
        # the tolerance acts on barycentric coordinates: physical slack on the
        # first element (length 1/4) is tol / 4
        assert locate_point(tree, mesh, np.array([-tol / 8])) is not None
        assert locate_point(tree, mesh, np.array([-1e-3])) is None


class TestCoverage:
    def test_duplicated_mesh_counts_two(self):
        mesh = generate_disk(1.0, 3, 10)
        dom = DeconstructedDomain([mesh, generate_disk(1.0, 3, 10)])
        trees = build_trees(dom)
        inner = 0.5 * mesh.vertices[mesh.simplices].mean(axis=1)
        counts = coverage_counts(dom, trees, inner)
        assert (counts == 2).all()

    def test_vector_matches_scalar(self):
        a = generate_segment(0.0, 0.7, 9)
        b = generate_segment(0.3, 1.0, 8)
        dom = DeconstructedDomain([a, b])
        trees = build_trees(dom)
        pts = np.linspace(-0.1, 1.1, 101)[:, None]
        counts = coverage_counts(dom, trees, pts)
        for p, c in zip(pts, counts):
            assert coverage_count(dom, trees, p) == c
