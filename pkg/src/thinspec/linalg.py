"""Operator assembly and symmetric solvers on cut Cartesian grids.

Operators are linear finite elements on the cut-cell triangulation of the
grid (see :func:`thinspec.geometry.elements`): interior grid nodes and the
boundary points of cut links are the vertices.  On a boundary-aligned grid
with ``A = I`` the stiffness is the 5-point stencil; cross terms give the
symmetric 9-point stencil.  Mass is lumped.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import IncompatibleRHS, NoConvergence
from .geometry import elements

DENSE_LIMIT = 500
WEIGHT_DROP = 1e-12


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Assembled symmetric operator.

    For Dirichlet assembly ``matrix`` acts on the ``n`` interior unknowns and
    ``boundary`` couples them to the boundary-point values.  For free
    assembly ``matrix`` acts on all ``n + n_cut`` vertices and ``active``
    marks the vertices that carry stiffness.
    """

    matrix: sp.csr_matrix
    boundary: sp.csr_matrix | None = None
    active: np.ndarray | None = None
    symmetric: bool = True
    degenerate: bool = False

    @property
    def n(self):
        return self.matrix.shape[0]

    def __matmul__(self, x):
        return self.matrix @ x

    def diagonal(self):
        return self.matrix.diagonal()

    def energy(self, u, v=None, ub=None, vb=None):
        """``u^T K v`` plus the boundary couplings when values are given."""
        v = u if v is None else v
        out = u @ (self.matrix @ v)
        if self.boundary is not None:
            if vb is not None:
                out += u @ (self.boundary @ vb)
            if ub is not None:
                out += v @ (self.boundary @ ub)
        return float(out)


def _vertex_weight(el, weight):
    if weight is None:
        return None
    w = np.asarray(weight, dtype=float)
    if len(w) == el.n:
        w = np.concatenate([w, np.zeros(el.n_cut)])
    if len(w) != el.size:
        raise ValueError("weight length matches neither interior nor all vertices")
    return w


def element_coefficients(mesh, A, check=True):
    """``(a11, a12, a22)`` at the triangle centroids."""
    el = elements(mesh.grid)
    c = el.centroid
    args = mesh.coeff_args(c[:, 0], c[:, 1])
    if check:
        A.check_elliptic(*args)
    return A.entries(*args)


def element_matrices(mesh, A, weight=None, check=True):
    """Per-triangle ``3 x 3`` stiffness blocks (weighted by the mean of the
    vertex weights when ``weight`` is given)."""
    el = elements(mesh.grid)
    a11, a12, a22 = element_coefficients(mesh, A, check)
    G = el.grads
    gx, gy = G[..., 0], G[..., 1]
    ke = (a11[:, None, None] * gx[:, :, None] * gx[:, None, :]
          + a12[:, None, None] * (gx[:, :, None] * gy[:, None, :] + gy[:, :, None] * gx[:, None, :])
          + a22[:, None, None] * gy[:, :, None] * gy[:, None, :])
    scale = el.measure
    w = _vertex_weight(el, weight)
    if w is not None:
        scale = scale * w[el.dofs].mean(axis=1)
    return ke * scale[:, None, None]


def _global(el, ke):
    rows = np.repeat(el.dofs, 3, axis=1).ravel()
    cols = np.tile(el.dofs, (1, 3)).ravel()
    K = sp.csr_matrix((ke.ravel(), (rows, cols)), shape=(el.size, el.size))
    K.sum_duplicates()
    K = ((K + K.T) * 0.5).tocsr()
    K.eliminate_zeros()
    return K


def assemble_stiffness(mesh, A, weight=None, mode="dirichlet", check=True):
    """Discrete ``-div(w A grad .)`` on ``mesh``.

    Parameters
    ----------
    mesh : CellMesh or ThinMesh
    A : CoefficientMatrix
    weight : array, optional
        Vertex weight such as ``psi**2`` (interior values, or all vertices);
        boundary points default to weight 0.
    mode : {"dirichlet", "free"}
        ``"dirichlet"`` eliminates the boundary points (value 0);
        ``"free"`` keeps every vertex, giving the natural boundary condition.
        Vertices whose stiffness row falls below ``1e-12 * max`` are marked
        inactive.
    check : bool
        Verify ellipticity at every quadrature point.
    """
    el = elements(mesh.grid)
    K = _global(el, element_matrices(mesh, A, weight, check))
    n = el.n
    if mode == "dirichlet":
        B = K[:n, n:].tocsr() if el.n_cut else None
        return SparseOperator(K[:n, :n].tocsr(), B)
    if mode != "free":
        raise ValueError(f"unknown assembly mode {mode!r}")
    d = K.diagonal()
    active = d > WEIGHT_DROP * (d.max() if d.size else 0.0)
    return SparseOperator(K, None, active)


def assemble_mass(mesh, weight=None, mode="dirichlet"):
    """Lumped P1 mass times the vertex weight."""
    el = elements(mesh.grid)
    w = _vertex_weight(el, weight)
    m = el.lumped_mass()
    if w is not None:
        m = m * w
    if mode == "dirichlet":
        m = m[:el.n]
    return SparseOperator(sp.diags(m, format="csr"), degenerate=not np.any(m))


def laplacian_1d(n, length=1.0):
    """Dirichlet second-difference matrix and lumped mass on ``n`` interior
    nodes of an interval, as a pair of operators."""
    h = length / (n + 1)
    K = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1],
                 format="csr") / h
    M = sp.diags(np.full(n, h), format="csr")
    return SparseOperator(K), SparseOperator(M)


# --------------------------------------------------------------------------
# eigenpairs

@dataclass(frozen=True, eq=False)
class EigenPair:
    value: float
    vector: np.ndarray
    residual_norm: float
    normalization: str = "L2-cell"

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


def _as_matrix(K):
    return K.matrix if isinstance(K, SparseOperator) else sp.csr_matrix(K)


def _start_vector(n):
    # deterministic, generic start: no symmetry of the grid is shared by it
    k = np.arange(n, dtype=float)
    return 1.0 + 0.5 * np.sin(0.7 * k + 0.3) + 0.25 * np.cos(1.9 * k)


def smallest_eigenpairs(K, M, k=1, tol=1e-8, normalization="L2-cell", v0=None):
    """The ``k`` smallest eigenpairs of ``K u = lam M u``, ascending.

    ``M`` must be diagonal and positive.  Vectors are ``M``-orthonormal;
    each pair carries its relative residual
    ``|K u - lam M u|_{M^-1} / (|lam| |u|_M)``.
    """
    Km = _as_matrix(K)
    Mm = _as_matrix(M)
    md = Mm.diagonal()
    n = Km.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"k={k} outside 1..{n}")
    if np.any(md <= 0):
        raise ValueError("mass must be positive on the active set")
    if n <= DENSE_LIMIT:
        vals, vecs = sla.eigh(Km.toarray(), np.diag(md), subset_by_index=[0, k - 1])
    else:
        try:
            vals, vecs = spla.eigsh(Km.tocsc(), k=k, M=Mm.tocsc(), sigma=0.0, which="LM",
                                    v0=_start_vector(n) if v0 is None else np.asarray(v0, float), tol=0.0, maxiter=5000)
        except spla.ArpackNoConvergence as exc:
            raise NoConvergence(f"eigsh did not converge for k={k}",
                                iterations=5000, residual=np.nan) from exc
    order = np.argsort(vals)
    vals = vals[order]
    vecs = vecs[:, order]
    # M-orthonormalize (Cholesky of the Gram matrix)
    G = vecs.T @ (md[:, None] * vecs)
    Lc = np.linalg.cholesky(0.5 * (G + G.T))
    vecs = np.linalg.solve(Lc, vecs.T).T
    out = []
    for j in range(k):
        u = vecs[:, j]
        lam = float(u @ (Km @ u))
        r = Km @ u - lam * md * u
        res = float(np.sqrt(r @ (r / md)) / max(abs(lam), 1e-300))
        if res > tol:
            raise NoConvergence(f"eigenpair {j + 1}: residual {res:.3e} > {tol:.1e}",
                                iterations=None, residual=res)
        out.append(EigenPair(lam, u, res, normalization))
    return out


# --------------------------------------------------------------------------
# conjugate gradients

def solve_cg(K, rhs, tol=1e-10, constraint=None, maxiter=None, x0=None,
             active=None, return_iterations=False, check_rhs=True):
    """Jacobi-preconditioned conjugate gradients for a symmetric PSD system.

    For a singular ``K`` whose kernel is the constant vector (on ``active``),
    the right-hand side must be orthogonal to it and the solution is fixed
    by ``constraint . x = 0``; both the residual and the iterate are
    projected every iteration.

    Parameters
    ----------
    K : SparseOperator or sparse matrix
    rhs : array
    tol : float
        Relative residual target ``|r| <= tol |rhs|``.
    constraint : array, optional
        Weights of the zero-mean gauge.  Its presence declares ``K`` singular.
    active : bool array, optional
        Unknowns taking part; others are returned as 0.
    """
    Km = _as_matrix(K)
    if active is None and isinstance(K, SparseOperator) and K.active is not None:
        active = K.active
    b = np.asarray(rhs, dtype=float)
    n = len(b)
    if active is not None:
        idx = np.flatnonzero(active)
        Km = Km[idx][:, idx]
        b = b[idx]
        c = None if constraint is None else np.asarray(constraint, float)[idx]
    else:
        idx = None
        c = None if constraint is None else np.asarray(constraint, float)
    m = len(b)
    bnorm = float(np.linalg.norm(b))
    singular = c is not None
    ones = np.ones(m)
    if singular and check_rhs:
        s = float(b.sum())
        # allow for the rounding of a sum of m terms
        floor = 4.0 * np.finfo(float).eps * np.sqrt(m) * float(np.abs(b).sum())
        if abs(s) > max(1e-8 * bnorm, floor):
            raise IncompatibleRHS(f"rhs has mean component {s:.3e} (|rhs| = {bnorm:.3e})")
    if bnorm == 0.0:
        x = np.zeros(n)
        return (x, 0) if return_iterations else x
    if singular:
        b = b - b.mean()

    def gauge(v):
        return v - (c @ v) / c.sum() * ones if singular else v

    diag = Km.diagonal()
    inv = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
    x = np.zeros(m) if x0 is None else gauge(np.asarray(x0, float)[idx] if idx is not None else np.asarray(x0, float))
    r = b - Km @ x
    if singular:
        r -= r.mean()
    z = inv * r
    p = z.copy()
    rz = r @ z
    maxiter = maxiter or max(1000, 10 * m)
    target = tol * bnorm
    it = 0
    rn = float(np.linalg.norm(r))
    while rn > target:
        if it >= maxiter:
            raise NoConvergence(f"CG stopped after {it} iterations, |r|/|b| = {rn / bnorm:.3e}",
                                iterations=it, residual=rn / bnorm)
        Kp = Km @ p
        pKp = p @ Kp
        if pKp <= 0:
            raise NoConvergence(f"CG breakdown (p.Kp = {pKp:.3e})", iterations=it,
                                residual=rn / bnorm)
        alpha = rz / pKp
        x += alpha * p
        r -= alpha * Kp
        if singular:
            r -= r.mean()
            x = gauge(x)
        z = inv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        rn = float(np.linalg.norm(r))
        it += 1
    x = gauge(x)
    if idx is not None:
        full = np.zeros(n)
        full[idx] = x
        x = full
    return (x, it) if return_iterations else x
