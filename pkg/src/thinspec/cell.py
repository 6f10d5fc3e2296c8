"""First eigenpair of the periodicity cell and its slow-variable derivative."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .coefficients import CoefficientMatrix
from .errors import SolveFailure, StepTooLarge
from .geometry import (AXIS, OPPOSITE, SIGN, build_cell_mesh, extended_rows,
                       interpolate, nodal_gradient, normal_velocity,
                       velocity_field)
from .linalg import assemble_mass, assemble_stiffness, smallest_eigenpairs

GAP_ABORT = 1e-6
GOOD_INCIDENCE = 0.4


@dataclass(frozen=True)
class CellGrid:
    """Resolution of the cell problem."""

    n1: int = 128
    n2: int = 128
    y2_box: tuple = (-2.0, 2.0)

    def halved(self):
        return dataclasses.replace(self, n1=max(8, self.n1 // 2), n2=max(8, self.n2 // 2))


def unit_scale(A):
    """Split ``A`` into its unscaled form and the scalar factor.

    Cell quantities are computed for the unscaled matrix and multiplied by
    the factor afterwards, so scaling ``A`` scales every derived number by
    exactly one floating-point product.
    """
    return dataclasses.replace(A, scale=1.0), float(A.scale)


@dataclass(frozen=True, eq=False)
class CellEigen:
    """First cell eigenpair at the slow coordinate ``x1``.

    ``psi1`` is normalized to unit lumped L2 norm and is positive at its
    largest-magnitude node.  ``mu_unit`` is the eigenvalue for ``A`` with
    unit scale; ``mu1 = scale * mu_unit``.
    """

    x1: float
    mu1: float
    psi1: np.ndarray
    mesh: object
    A: CoefficientMatrix
    mu2: float
    residual: float
    norm: float
    scale: float = 1.0
    mu_unit: float = np.nan
    sign_convention: str = "max-positive"
    stats: dict = field(default_factory=dict)

    @property
    def gap(self):
        return self.mu2 - self.mu1

    @property
    def relative_gap(self):
        return self.gap / abs(self.mu1)

    @property
    def grad_psi1(self):
        return nodal_gradient(self.mesh, self.psi1)

    @property
    def min_psi(self):
        return float(np.min(self.psi1))

    def weight(self):
        return self.psi1 ** 2


def solve_cell(mesh, A, k=2):
    """First eigenpair on a prebuilt cell mesh (``A`` used as given)."""
    Au, scale = unit_scale(A)
    K = assemble_stiffness(mesh, Au)
    M = assemble_mass(mesh)
    k = min(k, mesh.grid.n)
    pairs = smallest_eigenpairs(K, M, k=k)
    psi = pairs[0].vector
    j = int(np.argmax(np.abs(psi)))
    if psi[j] < 0:
        psi = -psi
    mu = pairs[0].value
    mu2 = pairs[1].value if k > 1 else np.inf
    if k > 1 and (mu2 - mu) < GAP_ABORT * abs(mu):
        raise SolveFailure(
            f"first cell eigenvalue is not simple at x1={mesh.x1}: "
            f"mu1={mu:.12g}, mu2={mu2:.12g}")
    norm = float(np.sum(M.diagonal() * psi ** 2))
    return CellEigen(float(mesh.x1), scale * mu, psi, mesh, A, scale * mu2,
                     pairs[0].residual_norm, norm, scale, mu,
                     stats={"nodes": mesh.grid.n, "K": K})


def first_eigenpair(F, A, x1, grid=CellGrid(), rows=None):
    """Solve ``-div_y(A grad_y psi) = mu psi`` on the cell at ``x1``.

    Parameters
    ----------
    F : CoefficientExpr
        Level set; the cell is ``{F(x1, .) > 0}``.
    A : CoefficientMatrix
    x1 : float
    grid : CellGrid
    rows : array, optional
        Explicit transverse node coordinates.

    Returns
    -------
    CellEigen
    """
    mesh = build_cell_mesh(F, x1, grid.n1, grid.n2, grid.y2_box, rows=rows)
    return solve_cell(mesh, A)


# --------------------------------------------------------------------------
# boundary derivatives

def _quadratic_slope(f1, f2, s1, s2):
    """Derivative at 0 of the parabola through (0, 0), (s1, f1), (s2, f2)."""
    return (f1 * (-s2) / (s1 * (s1 - s2))) + (f2 * (-s1) / (s2 * (s2 - s1)))


def link_slopes(mesh, u, boundary_values=None):
    """Outward one-sided derivative of ``u`` along every cut link, at its
    boundary point, from a quadratic through the two nodes behind it."""
    grid = mesh.grid
    b = mesh.boundary
    p = b.dof
    d = b.direction
    L = grid.link_length
    ub = np.zeros(len(p)) if boundary_values is None else np.asarray(boundary_values, float)
    l1 = L[p, d]
    q = grid.nbr[p, OPPOSITE[d]]
    l2 = L[p, OPPOSITE[d]]
    fp = u[p] - ub
    s1 = -l1
    slope = -fp / s1
    back = q >= 0
    if np.any(back):
        fq = u[q[back]] - ub[back]
        slope[back] = _quadratic_slope(fp[back], fq, s1[back], s1[back] - l2[back])
    return slope


def normal_derivative(mesh, u, boundary_values=None):
    """``d u / d nu`` at every boundary sample.

    For a field vanishing on the boundary, ``grad u = (du/dnu) nu`` there,
    so the slope along a cut link divided by ``nu . e`` gives the normal
    derivative.  Links nearly tangent to the boundary
    (``|nu . e| < 0.4``) take the value of the nearest well-aligned sample.
    """
    b = mesh.boundary
    slope = link_slopes(mesh, u, boundary_values)
    ax = AXIS[b.direction]
    cosine = b.normal[np.arange(len(b)), ax] * SIGN[b.direction]
    good = np.abs(cosine) >= GOOD_INCIDENCE
    dn = np.full(len(b), np.nan)
    dn[good] = slope[good] / cosine[good]
    bad = np.flatnonzero(~good)
    if bad.size:
        gi = np.flatnonzero(good)
        if not gi.size:
            raise SolveFailure("no boundary link is transversal to the boundary")
        pts = b.points[gi]
        if mesh.periodic:
            pts = np.concatenate([pts, pts + [1.0, 0.0], pts - [1.0, 0.0]])
            gi = np.concatenate([gi, gi, gi])
        _, nearest = cKDTree(pts).query(b.points[bad])
        dn[bad] = dn[gi[nearest]]
    return dn


@dataclass(frozen=True)
class BoundaryCheck:
    min_value: float        # min over samples of -grad psi . nu
    passed: bool
    samples: int


def boundary_point_check(ce, threshold=1e-6):
    """Check ``grad psi1 . nu < 0`` at every boundary sample."""
    dn = normal_derivative(ce.mesh, ce.psi1)
    m = float(np.min(-dn))
    return BoundaryCheck(m, bool(np.all(dn < -threshold)), len(dn))


# --------------------------------------------------------------------------
# slow-variable derivative

@dataclass(frozen=True, eq=False)
class Transport:
    """``d psi1 / d x1`` on the nodes of ``ce.mesh`` plus the boundary trace
    ``d psi1 / dx1 = (d psi / d nu) V_n`` that follows from ``psi1 = 0``."""

    dpsi: np.ndarray
    boundary: np.ndarray
    delta: float
    velocity: object
    plus: CellEigen
    minus: CellEigen
    sensitivity: float = np.nan
    excluded_mass: float = 0.0


def shared_rows(F, ce, delta, max_extra=64):
    """Transverse rows of ``ce.mesh`` padded until the end rows stay outside
    the cells at ``x1 +- delta``."""
    x1 = ce.x1
    c1 = ce.mesh.grid.c1
    for extra in range(1, max_extra + 1):
        rows = extended_rows(ce.mesh, extra)
        ok = True
        for x in (x1 - delta, x1 + delta):
            vals = F.evaluate(x, c1[:, None], rows[None, [0, -1]])
            ok &= not np.any(np.asarray(vals) > 0)
        if ok:
            return rows
    raise StepTooLarge(f"delta={delta} moves the boundary beyond {max_extra} grid rows")


def dpsi_dx1(F, A, x1=None, delta=1e-3, grid=CellGrid(), ce=None, velocity=None,
             sensitivity=False):
    """``d psi1 / d x1`` at the nodes of the cell mesh at ``x1``.

    The eigenfunctions at ``x1 +- delta`` are solved on the same node rows
    and transported along the boundary-following flow of the velocity
    field ``V`` (one explicit Euler step).  With the material derivative
    ``psi_dot``, ``d psi / d x1 = psi_dot + grad psi . V``.
    """
    if ce is None:
        ce = first_eigenpair(F, A, x1, grid)
    mesh = ce.mesh
    if velocity is None:
        vn = normal_velocity(F, mesh)
        velocity = velocity_field(mesh, vn)
    n1 = mesh.grid.shape[0]
    n2 = len(mesh.grid.c2) - 1

    def _at(step):
        rows = shared_rows(F, ce, step)
        plus = solve_cell(build_cell_mesh(F, ce.x1 + step, n1, n2, grid.y2_box, rows=rows), ce.A)
        minus = solve_cell(build_cell_mesh(F, ce.x1 - step, n1, n2, grid.y2_box, rows=rows), ce.A)
        y1, y2 = mesh.grid.coords
        V = velocity.V
        up = interpolate(plus.mesh, plus.psi1, y1 - step * V[:, 0], y2 - step * V[:, 1])
        um = interpolate(minus.mesh, minus.psi1, y1 + step * V[:, 0], y2 + step * V[:, 1])
        w = mesh.grid.volume
        for u in (up, um):
            if np.sum(w * u * ce.psi1) <= 0:
                raise StepTooLarge(f"sign alignment failed at x1={ce.x1} +- {step}")
        dot = (up - um) / (2 * step)
        grad = nodal_gradient(mesh, ce.psi1)
        return dot + np.einsum("ij,ij->i", grad, V), plus, minus

    d, plus, minus = _at(delta)
    sens = np.nan
    if sensitivity:
        d2, _, _ = _at(delta / 2)
        w = mesh.grid.volume
        sens = float(np.sqrt(np.sum(w * (d - d2) ** 2)))
    dn = normal_derivative(mesh, ce.psi1)
    vb = dn * velocity.vn
    return Transport(d, vb, delta, velocity, plus, minus, sens, 0.0)
