"""Equality-constrained quadratic solves: Poisson, implicit steps, bi-Laplace, modes."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coupling import (
    ALL_VERTICES,
    BOUNDARY_ONLY,
    BOUNDARY_ONLY_THINNED,
    all_vertex_constraints,
    boundary_only_constraints,
    constraint_matrix,
    thin_constraints,
)
from .fem import assemble_global
from .geometry import build_trees

__all__ = [
    "SolverError",
    "SolveReport",
    "solve_kkt",
    "solve_poisson",
    "implicit_step",
    "solve_bilaplace",
    "solve_bilaplace_convex",
    "constrained_modes",
    "coupling_for_mode",
]

FEASIBILITY_TOL = 1e-9
STATIONARITY_TOL = 1e-8

COUPLING_MODES = ("none", ALL_VERTICES, BOUNDARY_ONLY, BOUNDARY_ONLY_THINNED)
BILAPLACE_COUPLINGS = ("value_only", "low_order", "high_order")


class SolverError(RuntimeError):
    pass


@dataclass
class SolveReport:
    """Solution of one constrained solve, with residual diagnostics."""

    u: np.ndarray
    offsets: np.ndarray = None
    multipliers: np.ndarray = None
    multipliers_z: np.ndarray = None
    z: np.ndarray = None
    constraint_residual: float = 0.0
    stationarity_residual: float = 0.0
    energy: float = 0.0
    constraints: object = None
    dropped_rows: int = 0

    def subdomain_values(self, i):
        return self.u[int(self.offsets[i]) : int(self.offsets[i + 1])]

    def subdomain_z(self, i):
        return self.z[int(self.offsets[i]) : int(self.offsets[i + 1])]


def _independent_rows(A):
    """Indices of a maximal linearly independent subset of rows (dense QR)."""
    m = A.shape[0]
    if m == 0:
        return np.arange(0)
    At = np.asarray(A.todense() if sp.issparse(A) else A, dtype=float).T
    _, R, piv = scipy.linalg.qr(At, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        return np.arange(0)
    tol = max(At.shape) * np.finfo(float).eps * diag[0]
    rank = int((diag > tol).sum())
    return np.sort(piv[:rank])


# Dense least-squares rescue is only attempted below this system size.
_DENSE_FALLBACK_LIMIT = 6000


def _solve_linear(K, rhs):
    """Direct sparse solve with one refinement step; dense fallback on failure."""
    K = sp.csc_matrix(K)
    try:
        lu = spla.splu(K)
        x = lu.solve(rhs)
        x += lu.solve(rhs - K @ x)
    except RuntimeError:
        x = None
    scale = max(1.0, float(np.abs(rhs).max(initial=0.0)))
    if x is None or not np.isfinite(x).all() or np.abs(K @ x - rhs).max() > 1e-7 * scale:
        if K.shape[0] > _DENSE_FALLBACK_LIMIT:
            raise SolverError("singular KKT system of order %d" % K.shape[0])
        dense = K.toarray()
        x, _, rank, _ = np.linalg.lstsq(dense, rhs, rcond=None)
        if np.abs(dense @ x - rhs).max() > 1e-7 * scale:
            raise SolverError(
                "singular KKT system (rank %d of %d)" % (rank, K.shape[0])
            )
    return x


def _as_fixed_arrays(fixed, N):
    idx = np.array([int(i) for i, _ in fixed], dtype=np.int64)
    vals = np.array([float(v) for _, v in fixed], dtype=float)
    if len(np.unique(idx)) != len(idx):
        raise SolverError("duplicate fixed index")
    if idx.size and (idx.min() < 0 or idx.max() >= N):
        raise SolverError("fixed index out of range")
    return idx, vals


def solve_kkt(Q, b=None, A=None, c=None, fixed=(), reduce_constraints=True):
    """Minimize 1/2 u^T Q u - b^T u subject to A u = c and fixed values.

    Fixed indices are eliminated by substitution; dependent constraint rows
    are dropped by rank-revealing reduction before the saddle solve (their
    consistency is verified on the reported residual).
    """
    Q = sp.csr_matrix(Q)
    N = Q.shape[0]
    b = np.zeros(N) if b is None else np.asarray(b, dtype=float)
    if A is None:
        A = sp.csr_matrix((0, N))
        c = np.zeros(0)
    else:
        A = sp.csr_matrix(A)
        c = np.zeros(A.shape[0]) if c is None else np.asarray(c, dtype=float)
    fixed_idx, fixed_vals = _as_fixed_arrays(fixed, N)

    free = np.ones(N, dtype=bool)
    free[fixed_idx] = False
    u = np.zeros(N)
    u[fixed_idx] = fixed_vals

    A_free = A[:, free]
    c_shift = c - (A[:, fixed_idx] @ fixed_vals if fixed_idx.size else 0.0)

    Qff = Q[free][:, free]
    bf = b[free] - (Q[free][:, fixed_idx] @ fixed_vals if fixed_idx.size else 0.0)
    nf = Qff.shape[0]

    def attempt(kept, eps=0.0):
        Ak = A_free[kept]
        if Ak.shape[0]:
            D = -eps * sp.identity(Ak.shape[0]) if eps else None
            K = sp.bmat([[Qff, Ak.T], [Ak, D]], format="csc")
            rhs = np.concatenate([bf, c_shift[kept]])
        else:
            K = Qff.tocsc()
            rhs = bf
        return _solve_linear(K, rhs)

    # Redundant rows make the saddle matrix singular. First retry with a tiny
    # multiplier regularization (exact for consistent duplicates, and the only
    # rescue that scales); reduce rows by dense rank revelation as a last
    # resort on small systems.
    kept = np.arange(A.shape[0])
    try:
        x = attempt(kept)
    except SolverError:
        if not reduce_constraints:
            raise
        qscale = float(np.abs(Qff.diagonal()).max(initial=0.0)) or 1.0
        try:
            x = attempt(kept, eps=1e-10 * qscale)
        except SolverError:
            kept = _independent_rows(A_free)
            x = attempt(kept)
    u[free] = x[:nf]
    lam = np.zeros(A.shape[0])
    lam[kept] = x[nf:]

    scale = max(1.0, float(np.abs(u).max(initial=0.0)))
    feas = float(np.abs(A @ u - c).max(initial=0.0))
    if feas > FEASIBILITY_TOL * scale:
        raise SolverError(
            "infeasible fixed/constraint combination (residual %.3g)" % feas
        )
    grad = Q @ u - b + A.T @ lam
    stat_scale = float(np.abs(b).max(initial=0.0) + np.abs(Q @ u).max(initial=0.0))
    stat = float(np.abs(grad[free]).max(initial=0.0))
    return SolveReport(
        u=u,
        multipliers=lam,
        constraint_residual=feas,
        stationarity_residual=stat / max(stat_scale, 1e-300),
        energy=float(0.5 * u @ (Q @ u) - b @ u),
        dropped_rows=int(A.shape[0] - len(kept)),
    )


def coupling_for_mode(domain, mode, trees=None):
    """Constraint set and materialized matrix for a coupling mode."""
    if mode not in COUPLING_MODES:
        raise ValueError("unknown coupling mode %r" % (mode,))
    if trees is None:
        trees = build_trees(domain)
    N = domain.total_vertices
    if mode == "none":
        cs = None
        Amat = sp.csr_matrix((0, N))
    elif mode == ALL_VERTICES:
        cs = all_vertex_constraints(domain, trees)
        Amat = constraint_matrix(cs, domain.offsets, N)
    else:
        cs = boundary_only_constraints(domain, trees)
        if mode == BOUNDARY_ONLY_THINNED:
            cs = thin_constraints(cs)
        Amat = constraint_matrix(cs, domain.offsets, N)
    return cs, Amat


def _load_vector(domain, rhs):
    N = domain.total_vertices
    if np.isscalar(rhs):
        return np.full(N, float(rhs))
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (N,):
        raise ValueError("per-vertex load must have length %d" % N)
    return rhs


def _dirichlet_fixed(domain):
    return [(domain.global_index(s, v), val) for s, v, val in domain.dirichlet]


def solve_poisson(domain, quad, mode="boundary_only", rhs=1.0, trees=None):
    """Dirichlet-energy minimization -laplace(u) = rhs with the given coupling mode."""
    if trees is None:
        trees = build_trees(domain)
    L, M, offsets = assemble_global(domain, quad, trees)
    cs, Amat = coupling_for_mode(domain, mode, trees)
    f = _load_vector(domain, rhs)
    report = solve_kkt(L, M @ f, Amat, fixed=_dirichlet_fixed(domain))
    report.offsets = offsets
    report.constraints = cs
    return report


def implicit_step(domain, quad, mode, alpha, u0, rhs=None, trees=None):
    """One implicit step (M + alpha L) u = M rhs with coupling and Dirichlet data.

    alpha is dt for a heat step; for a wave step pass alpha = dt**2 and
    rhs = u0 + dt * du0.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if trees is None:
        trees = build_trees(domain)
    L, M, offsets = assemble_global(domain, quad, trees)
    cs, Amat = coupling_for_mode(domain, mode, trees)
    if rhs is None:
        rhs = u0
    f = _load_vector(domain, rhs)
    report = solve_kkt(M + alpha * L, M @ f, Amat, fixed=_dirichlet_fixed(domain))
    report.offsets = offsets
    report.constraints = cs
    return report


def _one_sided_gradient_row(mesh, vertex, offset):
    """1D only: sparse coefficients of the interpolant slope on the element at a boundary vertex."""
    incident = np.nonzero((mesh.simplices == vertex).any(axis=1))[0]
    e = int(incident[0])
    i0, i1 = mesh.simplices[e]
    h = float(mesh.vertices[i1, 0] - mesh.vertices[i0, 0])
    return {offset + int(i0): -1.0 / h, offset + int(i1): 1.0 / h}


def _low_order_rows(domain, cs):
    """Derivative-matching rows for 1D low-order coupling, one per value row."""
    if domain.dim != 1:
        raise SolverError("low_order coupling is only discretized for d=1")
    N = domain.total_vertices
    offsets = domain.offsets
    rows = []
    for row in cs.rows:
        a, i = row.target
        b, t = row.anchor
        coeffs = _one_sided_gradient_row(domain.subdomains[a], i, int(offsets[a]))
        mesh_b = domain.subdomains[b]
        j0, j1 = mesh_b.simplices[t]
        h = float(mesh_b.vertices[j1, 0] - mesh_b.vertices[j0, 0])
        for col, val in ((int(offsets[b]) + int(j0), 1.0 / h), (int(offsets[b]) + int(j1), -1.0 / h)):
            coeffs[col] = coeffs.get(col, 0.0) + val
        rows.append(coeffs)
    data, ri, ci = [], [], []
    for r, coeffs in enumerate(rows):
        for col, val in coeffs.items():
            ri.append(r)
            ci.append(col)
            data.append(val)
    return sp.csr_matrix((data, (ri, ci)), shape=(len(rows), N))


def solve_bilaplace(
    domain,
    quad,
    coupling="high_order",
    dirichlet_laplacians=None,
    load=0.0,
    trees=None,
):
    """Mixed-FEM squared-Laplacian solve with auxiliary z = laplace(u).

    Coupling across subdomains uses boundary-only rows on u alone
    (``value_only``), on u plus one-sided derivatives (``low_order``, 1D), or
    on u and z (``high_order``). Dirichlet values come from the domain;
    ``dirichlet_laplacians`` optionally pins z as (subdomain, vertex, value)
    triples. Unpinned boundaries get natural conditions (boundary terms are
    dropped).
    """
    if coupling not in BILAPLACE_COUPLINGS:
        raise SolverError("unknown bi-Laplace coupling %r" % (coupling,))
    if trees is None:
        trees = build_trees(domain)
    L, M, offsets = assemble_global(domain, quad, trees)
    N = domain.total_vertices
    Lp = (-L).tocsr()
    f = _load_vector(domain, load)

    cs, Avalue = coupling_for_mode(domain, "boundary_only", trees)
    keep = _independent_rows(Avalue)
    Avalue = Avalue[keep]
    cs_rows = [cs.rows[i] for i in keep]
    dropped = len(cs.rows) - len(keep)
    if coupling == "low_order":
        from .coupling import ConstraintSet

        Alo = _low_order_rows(domain, ConstraintSet(cs_rows, cs.mode))
        Au = sp.vstack([Avalue, Alo], format="csr")
        Az = sp.csr_matrix((0, N))
    elif coupling == "high_order":
        Au = Avalue
        Az = Avalue.copy()
    else:
        Au = Avalue
        Az = sp.csr_matrix((0, N))
    mu, mz = Au.shape[0], Az.shape[0]

    core = sp.bmat([[None, Lp.T], [Lp, -M]])
    coupling_rows = sp.vstack(
        [
            sp.hstack([Au, sp.csr_matrix((mu, N))]),
            sp.hstack([sp.csr_matrix((mz, N)), Az]),
        ],
        format="csr",
    )
    if mu + mz:
        K = sp.bmat([[core, coupling_rows.T], [coupling_rows, None]], format="csc")
    else:
        K = core.tocsc()
    total = K.shape[0]
    rhs = np.zeros(total)
    rhs[:N] = M @ f

    fixed = _dirichlet_fixed(domain)
    if dirichlet_laplacians:
        fixed = fixed + [
            (N + domain.global_index(s, v), val) for s, v, val in dirichlet_laplacians
        ]
    fixed_idx, fixed_vals = _as_fixed_arrays(fixed, total)
    freem = np.ones(total, dtype=bool)
    freem[fixed_idx] = False
    x = np.zeros(total)
    x[fixed_idx] = fixed_vals
    Kff = K[freem][:, freem]
    rhs_f = rhs[freem] - (K[freem][:, fixed_idx] @ fixed_vals if fixed_idx.size else 0.0)
    x[freem] = _solve_linear(Kff, rhs_f)

    u = x[:N]
    z = x[N : 2 * N]
    lam_u = x[2 * N : 2 * N + mu]
    lam_z = x[2 * N + mu :]
    resid = 0.0
    if mu:
        resid = max(resid, float(np.abs(Au @ u).max()))
    if mz:
        resid = max(resid, float(np.abs(Az @ z).max()))
    scale = max(1.0, float(np.abs(u).max(initial=0.0)))
    if resid > FEASIBILITY_TOL * scale:
        raise SolverError("coupling constraints violated (residual %.3g)" % resid)
    return SolveReport(
        u=u,
        offsets=offsets,
        multipliers=lam_u,
        multipliers_z=lam_z,
        z=z,
        constraint_residual=resid,
        energy=float(z @ (M @ z) - 2.0 * (u @ (M @ f))),
        constraints=cs,
        dropped_rows=dropped,
    )


def solve_bilaplace_convex(domain, quad, dirichlet_laplacians=None, load=0.0, trees=None):
    """High-order-coupled bi-Laplace as a convex QP min ||y||^2 over (u, lam_z, y).

    Equality constraints: A u = 0 and L u + A^T lam_z = sqrt(M) y, with the
    mass square root taken entrywise on the lumped diagonal. Pinned auxiliary
    values drop their defining rows and shift the load, mirroring the
    elimination done by :func:`solve_bilaplace`, so the two solvers agree on
    shared configurations.
    """
    if trees is None:
        trees = build_trees(domain)
    L, M, offsets = assemble_global(domain, quad, trees)
    N = domain.total_vertices
    Lp = (-L).tocsr()
    f = _load_vector(domain, load)

    cs, Avalue = coupling_for_mode(domain, "boundary_only", trees)
    keep = _independent_rows(Avalue)
    Avalue = Avalue[keep]
    m = Avalue.shape[0]

    mdiag = M.diagonal()
    if (mdiag <= 0).any():
        raise SolverError(
            "zero mass entry at vertex %d (isolated vertex)" % int(np.argmin(mdiag))
        )

    z_fixed = np.zeros(N)
    z_free = np.ones(N, dtype=bool)
    for s, v, val in dirichlet_laplacians or ():
        g = domain.global_index(s, v)
        z_fixed[g] = val
        z_free[g] = False
    nu = int(z_free.sum())
    Msqrt_u = sp.diags(np.sqrt(mdiag[z_free]))

    # Variables: (u, lam_z, y over free-z rows).
    # Objective ||y||^2 - 2 (M f - Lp^T[:, pinned] z_pinned)^T u up to a constant.
    b_u = 2.0 * (M @ f - Lp.T[:, ~z_free] @ z_fixed[~z_free])
    Q = sp.block_diag(
        [sp.csr_matrix((N, N)), sp.csr_matrix((m, m)), 2.0 * sp.eye(nu)], format="csr"
    )
    b = np.concatenate([b_u, np.zeros(m), np.zeros(nu)])
    top = sp.hstack([Avalue, sp.csr_matrix((m, m + nu))])
    bottom = sp.hstack(
        [Lp[z_free], Avalue.T[z_free], -Msqrt_u]
    )
    A = sp.vstack([top, bottom], format="csr")
    c = np.zeros(m + nu)
    fixed = _dirichlet_fixed(domain)
    inner = solve_kkt(Q, b, A, c, fixed=fixed, reduce_constraints=False)

    u = inner.u[:N]
    lam_z = inner.u[N : N + m]
    y = inner.u[N + m :]
    z = z_fixed.copy()
    z[z_free] = y / np.sqrt(mdiag[z_free])
    lam_u = inner.multipliers[:m] / 2.0
    return SolveReport(
        u=u,
        offsets=offsets,
        multipliers=lam_u,
        multipliers_z=lam_z,
        z=z,
        constraint_residual=inner.constraint_residual,
        stationarity_residual=inner.stationarity_residual,
        energy=float(y @ y - 2.0 * (u @ (M @ f))),
        constraints=cs,
    )


def constrained_modes(L, M, A, k):
    """Smallest k generalized eigenpairs of (L, M) restricted to null(A).

    Dense null-space reduction; intended for desk-scale problems. Returns a
    list of (eigenvalue, eigenvector) with eigenvectors mapped back to the
    full space, eigenvalues nondecreasing.
    """
    L = sp.csr_matrix(L)
    M = sp.csr_matrix(M)
    N = L.shape[0]
    if A is None or A.shape[0] == 0:
        NB = np.eye(N)
    else:
        Ad = A.todense() if sp.issparse(A) else np.asarray(A)
        NB = scipy.linalg.null_space(np.asarray(Ad, dtype=float))
    if NB.shape[1] == 0:
        raise SolverError("constraints leave no degrees of freedom")
    Lr = NB.T @ (L @ NB)
    Mr = NB.T @ (M @ NB)
    Lr = 0.5 * (Lr + Lr.T)
    Mr = 0.5 * (Mr + Mr.T)
    try:
        vals, vecs = scipy.linalg.eigh(Lr, Mr)
    except scipy.linalg.LinAlgError as exc:
        raise SolverError("reduced mass matrix is rank deficient: %s" % exc) from None
    k = min(k, len(vals))
    return [(float(vals[i]), NB @ vecs[:, i]) for i in range(k)]
