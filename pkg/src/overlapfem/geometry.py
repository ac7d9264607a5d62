"""Point location and barycentric coordinates over simplicial meshes."""

from dataclasses import dataclass

import numpy as np

from .mesh import simplex_measures

__all__ = [
    "GeometryError",
    "PointLocation",
    "AabbTree",
    "barycentric_coordinates",
    "locate_point",
    "locate_points",
    "batch_coordinates",
    "brute_force_locate",
    "coverage_count",
    "coverage_counts",
    "containment_tolerance",
    "build_trees",
]

# Barycentric containment slack, as a fraction of the mesh bbox diagonal.
CONTAINMENT_TOL_FACTOR = 1e-10

_LEAF_SIZE = 8


class GeometryError(ValueError):
    pass


@dataclass
class PointLocation:
    """A containing simplex plus the point's barycentric coordinates in it."""

    simplex: int
    coords: np.ndarray


def barycentric_coordinates(simplex_vertices, p):
    """Barycentric coordinates of ``p`` with respect to d+1 simplex corners.

    Coordinates always sum to one; they are negative for exterior points.
    """
    X = np.asarray(simplex_vertices, dtype=float)
    p = np.asarray(p, dtype=float)
    d = X.shape[1]
    A = np.vstack([np.ones(d + 1), X.T])
    rhs = np.concatenate([[1.0], p])
    try:
        return np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        raise GeometryError("degenerate simplex in barycentric_coordinates") from None


def containment_tolerance(mesh):
    """Closed-containment slack used by :func:`locate_point` for this mesh."""
    return CONTAINMENT_TOL_FACTOR * mesh.bbox_diagonal()


class AabbTree:
    """Static axis-aligned bounding box tree over one mesh's simplices.

    Queries return exactly the candidates a brute-force box scan would; the
    tree only accelerates the scan.
    """

    def __init__(self, mesh):
        self.mesh = mesh
        corners = mesh.vertices[mesh.simplices]
        self._lo = corners.min(axis=1)
        self._hi = corners.max(axis=1)
        order = np.arange(mesh.num_simplices)
        # Nodes: (lo, hi, left, right, start, end); leaves store slices of _index.
        self._nodes = []
        self._index = order.copy()
        self._build(0, mesh.num_simplices)
        # Inverted gradients are not needed here; cache measures for validity checks.
        self._measures = simplex_measures(mesh)

    def _build(self, start, end):
        idx = self._index[start:end]
        lo = self._lo[idx].min(axis=0)
        hi = self._hi[idx].max(axis=0)
        node = len(self._nodes)
        self._nodes.append([lo, hi, -1, -1, start, end])
        if end - start > _LEAF_SIZE:
            centers = 0.5 * (self._lo[idx] + self._hi[idx])
            axis = int(np.argmax(hi - lo))
            mid = (end - start) // 2
            part = np.argpartition(centers[:, axis], mid)
            self._index[start:end] = idx[part]
            left = self._build(start, start + mid)
            right = self._build(start + mid, end)
            self._nodes[node][2] = left
            self._nodes[node][3] = right
        return node

    def candidates(self, p, tol):
        """Indices of simplices whose tol-expanded bounding box contains p."""
        p = np.asarray(p, dtype=float)
        out = []
        stack = [0]
        while stack:
            lo, hi, left, right, start, end = self._nodes[stack.pop()]
            if ((p < lo - tol) | (p > hi + tol)).any():
                continue
            if left < 0:
                for t in self._index[start:end]:
                    if ((p >= self._lo[t] - tol) & (p <= self._hi[t] + tol)).all():
                        out.append(int(t))
            else:
                stack.append(left)
                stack.append(right)
        return out


def _best_containing(mesh, candidate_ids, p, tol):
    best = None
    for t in sorted(candidate_ids):
        coords = barycentric_coordinates(mesh.vertices[mesh.simplices[t]], p)
        if coords.min() >= -tol:
            best = PointLocation(int(t), coords)
            break
    return best


def locate_point(tree, mesh, p, tol=None):
    """Find a simplex containing ``p`` (closed containment, lowest index wins).

    Returns None when no simplex contains the point within tolerance.
    """
    if tol is None:
        tol = containment_tolerance(mesh)
    return _best_containing(mesh, tree.candidates(p, tol), p, tol)


def _candidate_pairs(tree, points, tol):
    """(point index, simplex index) pairs whose expanded boxes contain the point."""
    pi_out, si_out = [], []
    stack = [(0, np.arange(len(points)))]
    while stack:
        node, idx = stack.pop()
        lo, hi, left, right, start, end = tree._nodes[node]
        P = points[idx]
        inside = ((P >= lo - tol) & (P <= hi + tol)).all(axis=1)
        idx = idx[inside]
        if len(idx) == 0:
            continue
        if left < 0:
            P = points[idx]
            for t in tree._index[start:end]:
                hit = ((P >= tree._lo[t] - tol) & (P <= tree._hi[t] + tol)).all(axis=1)
                sel = idx[hit]
                if len(sel):
                    pi_out.append(sel)
                    si_out.append(np.full(len(sel), t, dtype=np.int64))
        else:
            stack.append((left, idx))
            stack.append((right, idx))
    if not pi_out:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(pi_out), np.concatenate(si_out)


def locate_points(tree, mesh, points, tol=None):
    """Vectorized :func:`locate_point` over many points.

    Returns an int array of containing simplex indices (-1 where none), with
    the same lowest-index tie-break as the scalar version.
    """
    points = np.asarray(points, dtype=float)
    if tol is None:
        tol = containment_tolerance(mesh)
    pi, si = _candidate_pairs(tree, points, tol)
    sentinel = np.iinfo(np.int64).max
    found = np.full(len(points), sentinel, dtype=np.int64)
    if len(pi) == 0:
        return np.full(len(points), -1, dtype=np.int64)
    # Barycentric check for all candidate pairs at once.
    corners = mesh.vertices[mesh.simplices[si]]  # (m, d+1, d)
    if not hasattr(tree, "_edge_inv"):
        allc = mesh.vertices[mesh.simplices]
        tree._edge_inv = np.linalg.inv(
            np.swapaxes(allc[:, 1:, :] - allc[:, :1, :], 1, 2)
        )
    xi = np.einsum("mij,mj->mi", tree._edge_inv[si], points[pi] - corners[:, 0, :])
    cmin = np.minimum(xi.min(axis=1), 1.0 - xi.sum(axis=1))
    ok = cmin >= -tol
    np.minimum.at(found, pi[ok], si[ok])
    found[found == sentinel] = -1
    return found


def batch_coordinates(tree, mesh, points, simplices):
    """Barycentric coordinates of each point in its paired simplex."""
    points = np.asarray(points, dtype=float)
    simplices = np.asarray(simplices, dtype=np.int64)
    if not hasattr(tree, "_edge_inv"):
        allc = mesh.vertices[mesh.simplices]
        tree._edge_inv = np.linalg.inv(
            np.swapaxes(allc[:, 1:, :] - allc[:, :1, :], 1, 2)
        )
    first = mesh.vertices[mesh.simplices[simplices, 0]]
    xi = np.einsum("mij,mj->mi", tree._edge_inv[simplices], points - first)
    return np.column_stack([1.0 - xi.sum(axis=1), xi])


def brute_force_locate(mesh, p, tol=None):
    """Reference implementation of :func:`locate_point` scanning all simplices."""
    if tol is None:
        tol = containment_tolerance(mesh)
    return _best_containing(mesh, range(mesh.num_simplices), p, tol)


def coverage_count(domain, trees, p):
    """Number of subdomains whose mesh contains ``p`` (closed containment)."""
    count = 0
    for mesh, tree in zip(domain.subdomains, trees):
        if locate_point(tree, mesh, p) is not None:
            count += 1
    return count


def coverage_counts(domain, trees, points):
    """Vector of coverage counts for many points."""
    points = np.asarray(points, dtype=float)
    counts = np.zeros(len(points), dtype=np.int64)
    for mesh, tree in zip(domain.subdomains, trees):
        counts += locate_points(tree, mesh, points) >= 0
    return counts


def build_trees(domain):
    """One AABB tree per subdomain, in subdomain order."""
    return [AabbTree(mesh) for mesh in domain.subdomains]
