"""Per-subdomain FEM assembly: gradients, overlap-adjusted volumes, stiffness and mass."""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import build_trees, coverage_counts
from .mesh import MeshError, simplex_measures

__all__ = [
    "QuadratureSpec",
    "quadrature_rule",
    "gradient_matrix",
    "adjusted_volumes",
    "stiffness_matrix",
    "lumped_mass_matrix",
    "assemble_global",
]

# Quadrature points are pulled this far toward the element centroid before
# coverage is sampled, so samples on an element facet see the element's
# interior side of any coverage discontinuity.
_INWARD_NUDGE = 1e-6


@dataclass(frozen=True)
class QuadratureSpec:
    """Scheme used to sample subdomain coverage when adjusting element volumes."""

    scheme: str = "corner_average"
    n_points: int = 10
    samples_per_element: int = 100
    seed: int = 0

    _SCHEMES = ("corner_average", "barycenter", "symmetric_fixed_order", "monte_carlo")

    def __post_init__(self):
        if self.scheme not in self._SCHEMES:
            raise ValueError("unknown quadrature scheme %r" % (self.scheme,))
        if self.scheme == "symmetric_fixed_order" and self.n_points not in (1, 4, 10):
            raise ValueError("symmetric rule supports 1, 4 or 10 points")

    @classmethod
    def corner_average(cls):
        return cls("corner_average")

    @classmethod
    def barycenter(cls):
        return cls("barycenter")

    @classmethod
    def symmetric(cls, n_points):
        return cls("symmetric_fixed_order", n_points=n_points)

    @classmethod
    def monte_carlo(cls, samples_per_element=100, seed=0):
        return cls("monte_carlo", samples_per_element=samples_per_element, seed=seed)


def _orbit(base):
    seen = []
    from itertools import permutations

    for p in permutations(base):
        if p not in seen:
            seen.append(p)
    return seen


def _symmetric_rule(dim, n_points):
    """Positive symmetric barycentric rules; weights sum to 1."""
    if n_points == 1:
        pts = np.full((1, dim + 1), 1.0 / (dim + 1))
        return np.ones(1), pts
    if dim == 1:
        x, w = np.polynomial.legendre.leggauss(n_points)
        lam = 0.5 * (x + 1.0)
        return w / 2.0, np.column_stack([1.0 - lam, lam])
    if dim == 2:
        if n_points == 4:
            # centroid + 3-point orbit, degree 2, all weights positive
            a, b = 4.0 / 5.0, 1.0 / 10.0
            pts = [(1 / 3, 1 / 3, 1 / 3)] + _orbit((a, b, b))
            w = [24.0 / 49.0] + [25.0 / 147.0] * 3
            return np.array(w), np.array(pts)
        # 10-point cubic-lattice rule (interpolatory, degree 3, positive)
        pts, w = [], []
        for i in range(4):
            for j in range(4 - i):
                k = 3 - i - j
                pts.append((i / 3.0, j / 3.0, k / 3.0))
                if 3 in (i, j, k):
                    w.append(1.0 / 30.0)
                elif 0 in (i, j, k):
                    w.append(3.0 / 40.0)
                else:
                    w.append(9.0 / 20.0)
        return np.array(w), np.array(pts)
    # dim == 3
    if n_points == 4:
        a = (5.0 - np.sqrt(5.0)) / 20.0
        pts = _orbit((a, a, a, 1.0 - 3.0 * a))
        return np.full(4, 0.25), np.array(pts)
    # 10-point: 4-orbit + 6-orbit, degree 3, all weights positive
    a = 0.11391579759060863
    b = 0.09258985734480704
    wa = 0.10333457055008857
    wb = 0.09777695296660763
    pts = _orbit((a, a, a, 1.0 - 3.0 * a)) + _orbit((b, b, 0.5 - b, 0.5 - b))
    return np.array([wa] * 4 + [wb] * 6), np.array(pts)


def quadrature_rule(spec, dim):
    """Barycentric (weights, points) for the fixed-point schemes."""
    if spec.scheme == "corner_average":
        return np.full(dim + 1, 1.0 / (dim + 1)), np.eye(dim + 1)
    if spec.scheme == "barycenter":
        return _symmetric_rule(dim, 1)
    if spec.scheme == "symmetric_fixed_order":
        return _symmetric_rule(dim, spec.n_points)
    raise ValueError("monte_carlo has no fixed rule; points are drawn per element")


def gradient_matrix(mesh):
    """Sparse per-element gradient operator, shape (d*t, n).

    Rows d*k .. d*k+d-1 hold the constant gradient of the piecewise-linear
    interpolant on simplex k.
    """
    d = mesh.dim
    t = mesh.num_simplices
    corners = mesh.vertices[mesh.simplices]
    edges = np.swapaxes(corners[:, 1:, :] - corners[:, :1, :], 1, 2)  # (t, d, d)
    try:
        inv = np.linalg.inv(edges)
    except np.linalg.LinAlgError:
        raise MeshError("degenerate simplex during gradient assembly") from None
    grads = inv  # (t, d, d): row j is the gradient of hat function j+1
    g0 = -grads.sum(axis=1, keepdims=True)
    allg = np.concatenate([g0, grads], axis=1)  # (t, d+1, d)
    rows = np.broadcast_to(
        (d * np.arange(t))[:, None, None] + np.arange(d)[None, None, :], (t, d + 1, d)
    )
    cols = np.broadcast_to(mesh.simplices[:, :, None], (t, d + 1, d))
    return sp.csr_matrix(
        (allg.ravel(), (rows.ravel(), cols.ravel())), shape=(d * t, mesh.num_vertices)
    )


def _element_points(mesh, weights, bary):
    """Physical quadrature points per element, nudged toward the centroid."""
    corners = mesh.vertices[mesh.simplices]  # (t, d+1, d)
    pts = np.einsum("qj,tjd->tqd", bary, corners)
    centroid = corners.mean(axis=1, keepdims=True)
    return pts + _INWARD_NUDGE * (centroid - pts)


def adjusted_volumes(domain, k, quad, trees=None):
    """Element measures of subdomain ``k`` scaled by quadrature of 1/coverage."""
    if trees is None:
        trees = build_trees(domain)
    mesh = domain.subdomains[k]
    measures = simplex_measures(mesh)
    t = mesh.num_simplices
    d = mesh.dim
    if quad.scheme == "monte_carlo":
        rng = np.random.default_rng(quad.seed)
        s = quad.samples_per_element
        bary = rng.dirichlet(np.ones(d + 1), size=(t, s))  # (t, s, d+1)
        pts = np.einsum("tsj,tjd->tsd", bary, mesh.vertices[mesh.simplices])
        cov = coverage_counts(domain, trees, pts.reshape(t * s, d)).reshape(t, s)
        if (cov == 0).any():
            e = int(np.argmax((cov == 0).any(axis=1)))
            raise MeshError(
                "quadrature point of subdomain %d element %d not covered" % (k, e)
            )
        return measures * (1.0 / cov).mean(axis=1)
    weights, bary = quadrature_rule(quad, d)
    pts = _element_points(mesh, weights, bary)  # (t, q, d)
    q = len(weights)
    cov = coverage_counts(domain, trees, pts.reshape(t * q, d)).reshape(t, q)
    if (cov == 0).any():
        e = int(np.argmax((cov == 0).any(axis=1)))
        raise MeshError("quadrature point of subdomain %d element %d not covered" % (k, e))
    return measures * ((1.0 / cov) @ weights)


def stiffness_matrix(mesh, a):
    """Discrete Laplacian G^T diag(a) G using element weights ``a``; PSD, L @ 1 = 0."""
    a = np.asarray(a, dtype=float)
    if a.shape != (mesh.num_simplices,):
        raise ValueError("adjusted volumes have wrong length")
    if (a < 0).any():
        raise ValueError("negative adjusted volume at element %d" % int(np.argmax(a < 0)))
    G = gradient_matrix(mesh)
    W = sp.diags(np.repeat(a, mesh.dim))
    return (G.T @ W @ G).tocsr()


def lumped_mass_matrix(mesh, a):
    """Diagonal mass matrix distributing each element weight over its d+1 corners."""
    a = np.asarray(a, dtype=float)
    if a.shape != (mesh.num_simplices,):
        raise ValueError("adjusted volumes have wrong length")
    diag = np.zeros(mesh.num_vertices)
    np.add.at(diag, mesh.simplices.ravel(), np.repeat(a / (mesh.dim + 1), mesh.dim + 1))
    return sp.diags(diag).tocsr()


def assemble_global(domain, quad, trees=None):
    """Block-diagonal stiffness and mass over all subdomains.

    Returns (L, M, offsets) where offsets[i] is the global row of subdomain
    i's vertex 0 (length K+1; offsets[-1] is the total vertex count).
    """
    if trees is None:
        trees = build_trees(domain)
    Ls, Ms = [], []
    for k, mesh in enumerate(domain.subdomains):
        a = adjusted_volumes(domain, k, quad, trees)
        Ls.append(stiffness_matrix(mesh, a))
        Ms.append(lumped_mass_matrix(mesh, a))
    L = sp.block_diag(Ls, format="csr")
    M = sp.block_diag(Ms, format="csr")
    return L, M, domain.offsets
