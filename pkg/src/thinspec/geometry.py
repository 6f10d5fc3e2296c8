"""Structured-grid discretization of the periodicity cell and the thin domain.

Both domains are level-set domains ``{F > 0}`` on a Cartesian grid.  Nodes
with ``F > 0`` are unknowns; every link from an interior node to an
exterior node is cut where the level set crosses it (bisection), which
gives Shortley-Weller link lengths ``theta * h``.

The cell lives in ``(y1, y2)`` with ``y1`` periodic of period 1; the thin
domain lives in ``(x1, x2)`` with ``x1 in [-1/2, 1/2]`` and Dirichlet bases.
The transverse extent of either grid is fitted to the support of the
domain so that straight boundaries fall onto grid rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (DegenerateLevelSet, DomainEmpty, DomainUnbounded,
                     MeshTooLarge, SolveFailure)

E, W, N, S = 0, 1, 2, 3
AXIS = np.array([0, 0, 1, 1])
SIGN = np.array([1, -1, 1, -1])
OPPOSITE = np.array([W, E, S, N])

BISECTION_STEPS = 48
THETA_MIN = 1e-8
DEFAULT_Y2_BOX = (-2.0, 2.0)
DEFAULT_NODE_CAP = 20_000_000


@dataclass(frozen=True, eq=False)
class BoundarySamples:
    """Points where grid links cross ``{F = 0}``.

    One sample per cut link, in the order of ``np.nonzero(grid.nbr < 0)``.
    ``weight`` is the trapezoidal arclength weight on the polygonal boundary
    that joins consecutive cut points.
    """

    dof: np.ndarray
    direction: np.ndarray
    theta: np.ndarray
    points: np.ndarray      # (m, 2) grid coordinates
    normal: np.ndarray      # (m, 2) outward unit normal
    weight: np.ndarray

    def __len__(self):
        return len(self.dof)

    @property
    def measure(self):
        return float(self.weight.sum())


@dataclass(frozen=True, eq=False)
class Grid:
    c1: np.ndarray
    c2: np.ndarray
    periodic: bool
    inside: np.ndarray      # (N1, N2) bool
    dof: np.ndarray         # (N1, N2) int, -1 outside
    ij: np.ndarray          # (n, 2) node indices per dof
    nbr: np.ndarray         # (n, 4) neighbour dof or -1 for a cut link
    theta: np.ndarray       # (n, 4) inside fraction of each link

    @property
    def h1(self):
        return float(self.c1[1] - self.c1[0])

    @property
    def h2(self):
        return float(self.c2[1] - self.c2[0])

    @property
    def n(self):
        return len(self.ij)

    @property
    def shape(self):
        return self.inside.shape

    @cached_property
    def link_length(self):
        h = np.array([self.h1, self.h1, self.h2, self.h2])
        return self.theta * h

    @cached_property
    def dual_widths(self):
        L = self.link_length
        return 0.5 * (L[:, E] + L[:, W]), 0.5 * (L[:, N] + L[:, S])

    @cached_property
    def volume(self):
        """Lumped P1 mass of the interior nodes."""
        return elements(self).lumped_mass()[:self.n]

    @property
    def coords(self):
        return self.c1[self.ij[:, 0]], self.c2[self.ij[:, 1]]

    def to_array(self, u, fill=0.0):
        out = np.full(self.shape, fill, dtype=float)
        out[self.ij[:, 0], self.ij[:, 1]] = u
        return out


def _bisect(fun, a, b, fa_positive=True, steps=BISECTION_STEPS):
    """Vectorized bisection for the crossing on segments ``a + t (b - a)``.

    ``fun`` is positive at ``t = 0`` and non-positive at ``t = 1``.
    """
    lo = np.zeros(a.shape[0])
    hi = np.ones(a.shape[0])
    d = b - a
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        val = fun(a[:, 0] + mid * d[:, 0], a[:, 1] + mid * d[:, 1])
        pos = val > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    return 0.5 * (lo + hi)


def build_grid(c1, c2, level, periodic, chunk=2_000_000):
    """Classify nodes of ``c1 x c2`` and cut the boundary links.

    ``level(c1, c2)`` is the vectorized level-set function.  The first and
    last rows (and, if not periodic, columns) are always exterior: a link
    into them whose far node still has ``level > 0`` is cut at ``theta=1``.
    """
    c1 = np.asarray(c1, dtype=float)
    c2 = np.asarray(c2, dtype=float)
    N1, N2 = len(c1), len(c2)
    values = np.empty((N1, N2))
    step = max(1, chunk // N2)
    for i0 in range(0, N1, step):
        values[i0:i0 + step] = level(c1[i0:i0 + step, None], c2[None, :])
    inside = values > 0
    inside[:, 0] = inside[:, -1] = False
    if not periodic:
        inside[0, :] = inside[-1, :] = False

    dof = np.full((N1, N2), -1, dtype=np.int64)
    ii, jj = np.nonzero(inside)
    n = len(ii)
    if n == 0:
        raise DomainEmpty("no grid node satisfies F > 0")
    dof[ii, jj] = np.arange(n)
    ij = np.stack([ii, jj], axis=1)

    nbr = np.empty((n, 4), dtype=np.int64)
    theta = np.ones((n, 4))
    shifts = {E: (1, 0), W: (-1, 0), N: (0, 1), S: (0, -1)}
    for d, (di, dj) in shifts.items():
        ni = ii + di
        nj = jj + dj
        if periodic:
            ni = ni % N1
        nbr[:, d] = dof[ni, nj]
        cut = np.flatnonzero(nbr[:, d] < 0)
        if not cut.size:
            continue
        far_val = values[ni[cut], nj[cut]]
        need = cut[far_val <= 0]
        if need.size:
            a = np.stack([c1[ii[need]], c2[jj[need]]], axis=1)
            b = a.copy()
            h = (c1[1] - c1[0]) if d in (E, W) else (c2[1] - c2[0])
            b[:, 0 if d in (E, W) else 1] += (di + dj) * h
            theta[need, d] = np.maximum(_bisect(level, a, b), THETA_MIN)
    return Grid(c1, c2, periodic, inside, dof, ij, nbr, theta)


def _cut_points(grid):
    dofs, dirs = np.nonzero(grid.nbr < 0)
    th = grid.theta[dofs, dirs]
    y1, y2 = grid.coords
    pts = np.stack([y1[dofs], y2[dofs]], axis=1)
    h = np.array([grid.h1, grid.h2])
    pts[:, 0] += (AXIS[dirs] == 0) * SIGN[dirs] * th * h[0]
    pts[:, 1] += (AXIS[dirs] == 1) * SIGN[dirs] * th * h[1]
    return dofs, dirs, th, pts


# --------------------------------------------------------------------------
# cut-cell triangulation

# Corners of a grid cell, counter-clockwise, as (di, dj) offsets; edge k
# joins corner k to corner k+1.  DIR_ALONG[k] is the link direction from
# corner k toward corner k+1.
CORNERS = ((0, 0), (1, 0), (1, 1), (0, 1))
DIR_ALONG = (E, N, W, S)


def _templates():
    """Triangles and boundary segments for each inside-corner pattern.

    Vertex references: ``("c", k)`` is corner ``k``; ``("x", k)`` is the cut
    point on edge ``k``.  Quadrilaterals are split along both diagonals with
    weight 1/2 each so aligned cells give the symmetric stencil.
    """
    out = {}
    for code in range(16):
        ins = [bool(code >> k & 1) for k in range(4)]
        tris, segs = [], []
        c = lambda k: ("c", k % 4)  # noqa: E731
        x = lambda k: ("x", k % 4)  # noqa: E731
        count = sum(ins)
        if count == 4:
            tris = [((c(0), c(1), c(2)), .5), ((c(0), c(2), c(3)), .5),
                    ((c(0), c(1), c(3)), .5), ((c(1), c(2), c(3)), .5)]
        elif count == 1:
            k = ins.index(True)
            tris = [((c(k), x(k), x(k - 1)), 1.0)]
            segs = [(x(k), x(k - 1))]
        elif count == 2:
            k = [i for i in range(4) if ins[i]]
            if k == [0, 2] or k == [1, 3]:
                for m in k:
                    tris.append(((c(m), x(m), x(m - 1)), 1.0))
                    segs.append((x(m), x(m - 1)))
            else:
                a = k[0] if k != [0, 3] else 3
                b = a + 1
                q = (c(a), c(b), x(b), x(a - 1))
                tris = [((q[0], q[1], q[2]), .5), ((q[0], q[2], q[3]), .5),
                        ((q[0], q[1], q[3]), .5), ((q[1], q[2], q[3]), .5)]
                segs = [(x(b), x(a - 1))]
        elif count == 3:
            m = ins.index(False)
            poly = (c(m + 1), c(m + 2), c(m + 3), x(m - 1), x(m))
            root = poly[1]
            tris = [((root, poly[2], poly[3]), 1.0), ((root, poly[3], poly[4]), 1.0),
                    ((root, poly[4], poly[0]), 1.0)]
            segs = [(x(m - 1), x(m))]
        out[code] = (tris, segs)
    return out


TEMPLATES = _templates()


@dataclass(frozen=True, eq=False)
class Elements:
    """Weighted P1 triangles of the cut-cell triangulation.

    Unknowns ``0..n-1`` are interior grid nodes, ``n + k`` is the boundary
    point of the ``k``-th cut link.  Coordinates are local to each cell, so
    the periodic wrap never splits a triangle.
    """

    dofs: np.ndarray        # (T, 3)
    xy: np.ndarray          # (T, 3, 2)
    factor: np.ndarray      # (T,) multiplicity weight
    seg: np.ndarray         # (S, 2) boundary dofs
    seg_length: np.ndarray
    n: int
    n_cut: int

    @cached_property
    def area(self):
        a = self.xy[:, 1] - self.xy[:, 0]
        b = self.xy[:, 2] - self.xy[:, 0]
        return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])

    @cached_property
    def grads(self):
        """Basis gradients, ``(T, 3, 2)``."""
        x, y = self.xy[..., 0], self.xy[..., 1]
        tw = 2.0 * self.area
        g = np.empty(self.xy.shape)
        for k in range(3):
            i, j = (k + 1) % 3, (k + 2) % 3
            g[:, k, 0] = (y[:, i] - y[:, j]) / tw
            g[:, k, 1] = (x[:, j] - x[:, i]) / tw
        return g

    @cached_property
    def centroid(self):
        return self.xy.mean(axis=1)

    @property
    def size(self):
        return self.n + self.n_cut

    @cached_property
    def measure(self):
        """``factor * area`` per triangle."""
        return self.factor * self.area

    def lumped_mass(self, weight=None):
        m = np.zeros(self.size)
        per = self.measure / 3.0
        if weight is not None:
            per = per * weight[self.dofs].mean(axis=1)
        np.add.at(m, self.dofs.ravel(), np.repeat(per, 3))
        return m

    def boundary_weights(self):
        w = np.zeros(self.n_cut)
        half = 0.5 * self.seg_length
        np.add.at(w, self.seg[:, 0] - self.n, half)
        np.add.at(w, self.seg[:, 1] - self.n, half)
        return w

    def gradient(self, u):
        """Per-triangle gradient of the P1 field with nodal values ``u``."""
        return np.einsum("tk,tkd->td", u[self.dofs], self.grads)

    def integrate(self, values):
        """Sum of per-triangle ``values * factor * area``."""
        return float(np.sum(values * self.measure))


def elements(grid: Grid) -> Elements:
    cache = grid.__dict__.get("_elements")
    if cache is not None:
        return cache
    N1, N2 = grid.shape
    n = grid.n
    cut_nodes, cut_dirs = np.nonzero(grid.nbr < 0)
    bdof = np.full((n, 4), -1, dtype=np.int64)
    bdof[cut_nodes, cut_dirs] = n + np.arange(len(cut_nodes))
    L = grid.link_length
    ci = np.arange(N1 if grid.periodic else N1 - 1)
    cj = np.arange(N2 - 1)
    I, J = np.meshgrid(ci, cj, indexing="ij")
    I = I.ravel()
    J = J.ravel()
    cdof = np.empty((len(I), 4), dtype=np.int64)
    cxy = np.empty((len(I), 4, 2))
    for k, (di, dj) in enumerate(CORNERS):
        ii = I + di
        cxy[:, k, 0] = grid.c1[0] + ii * grid.h1 if grid.periodic else grid.c1[np.minimum(ii, N1 - 1)]
        if grid.periodic:
            ii = ii % N1
        cdof[:, k] = grid.dof[ii, J + dj]
        cxy[:, k, 1] = grid.c2[J + dj]
    code = np.zeros(len(I), dtype=np.int64)
    for k in range(4):
        code |= (cdof[:, k] >= 0).astype(np.int64) << k

    def cut_ref(rows, k):
        """Boundary dof and coordinates of the cut point on edge k."""
        a, b = k, (k + 1) % 4
        pa = cdof[rows, a]
        from_a = pa >= 0
        p = np.where(from_a, pa, cdof[rows, b])
        d = np.where(from_a, DIR_ALONG[k], OPPOSITE[DIR_ALONG[k]])
        dof = bdof[p, d]
        base = np.where(from_a[:, None], cxy[rows, a], cxy[rows, b])
        ell = L[p, d]
        xy = base.copy()
        xy[:, 0] += (AXIS[d] == 0) * SIGN[d] * ell
        xy[:, 1] += (AXIS[d] == 1) * SIGN[d] * ell
        return dof, xy

    tri_dofs, tri_xy, tri_f, seg_list, seg_len = [], [], [], [], []
    for c, (tris, segs) in TEMPLATES.items():
        rows = np.flatnonzero(code == c)
        if not rows.size or not tris:
            continue
        refs = {}

        def ref(r):
            if r not in refs:
                kind, k = r
                if kind == "c":
                    refs[r] = (cdof[rows, k], cxy[rows, k])
                else:
                    refs[r] = cut_ref(rows, k)
            return refs[r]

        for verts, f in tris:
            tri_dofs.append(np.stack([ref(v)[0] for v in verts], axis=1))
            tri_xy.append(np.stack([ref(v)[1] for v in verts], axis=1))
            tri_f.append(np.full(len(rows), f))
        for a, b in segs:
            da, xa = ref(a)
            db, xb = ref(b)
            seg_list.append(np.stack([da, db], axis=1))
            seg_len.append(np.hypot(*(xb - xa).T))
    dofs = np.concatenate(tri_dofs)
    xy = np.concatenate(tri_xy)
    factor = np.concatenate(tri_f)
    seg = np.concatenate(seg_list) if seg_list else np.zeros((0, 2), np.int64)
    slen = np.concatenate(seg_len) if seg_len else np.zeros(0)
    el = Elements(dofs, xy, factor, seg, slen, n, len(cut_nodes))
    # degenerate slivers (theta at its floor) carry no stiffness
    keep = el.area > 1e-14 * grid.h1 * grid.h2
    if not np.all(keep):
        el = Elements(dofs[keep], xy[keep], factor[keep], seg, slen, n, len(cut_nodes))
    grid.__dict__["_elements"] = el
    return el


def _support(level, c1, lo, hi, samples):
    """Per column, the lowest and highest crossing of ``level`` along c2.

    Returns ``(bottom, top)`` arrays (NaN for empty columns).
    """
    ys = np.linspace(lo, hi, samples)
    vals = level(c1[:, None], ys[None, :])
    pos = vals > 0
    if np.any(pos[:, 0]) or np.any(pos[:, -1]):
        raise DomainUnbounded(
            f"F > 0 on the y2 bounding box ({lo}, {hi}); enlarge geometry.y2_box")
    has = pos.any(axis=1)
    first = np.argmax(pos, axis=1)
    last = samples - 1 - np.argmax(pos[:, ::-1], axis=1)
    bottom = np.full(len(c1), np.nan)
    top = np.full(len(c1), np.nan)
    cols = np.flatnonzero(has)
    if cols.size:
        inner = np.stack([c1[cols], ys[first[cols]]], axis=1)
        outer = np.stack([c1[cols], ys[first[cols] - 1]], axis=1)
        t = _bisect(level, inner, outer, steps=60)
        bottom[cols] = inner[:, 1] + t * (outer[:, 1] - inner[:, 1])
        inner = np.stack([c1[cols], ys[last[cols]]], axis=1)
        outer = np.stack([c1[cols], ys[last[cols] + 1]], axis=1)
        t = _bisect(level, inner, outer, steps=60)
        top[cols] = inner[:, 1] + t * (outer[:, 1] - inner[:, 1])
    return bottom, top


# --------------------------------------------------------------------------
# periodicity cell

@dataclass(frozen=True, eq=False)
class CellMesh:
    """Discretized cell at a fixed slow variable ``x1``."""

    F: object
    x1: float
    grid: Grid
    boundary: BoundarySamples
    y2_box: tuple = DEFAULT_Y2_BOX
    extent: tuple = (0.0, 1.0)
    stats: dict = field(default_factory=dict)

    periodic = True

    @property
    def n1(self):
        return len(self.grid.c1)

    @property
    def n2(self):
        return len(self.grid.c2) - 1

    @property
    def h1(self):
        return self.grid.h1

    @property
    def h2(self):
        return self.grid.h2

    @property
    def node_class(self):
        """``(N1, N2)`` int array: 0 exterior, 1 interior, 2 near-boundary."""
        cls = self.grid.inside.astype(np.int8)
        near = (self.grid.nbr < 0).any(axis=1)
        cls[self.grid.ij[near, 0], self.grid.ij[near, 1]] = 2
        return cls

    def coeff_args(self, c1, c2):
        return self.x1, c1, c2

    def level(self, c1, c2):
        return self.F.evaluate(self.x1, c1, c2)

    @property
    def area(self):
        return float(elements(self.grid).measure.sum())


def build_cell_mesh(F, x1, n1, n2, y2_box=DEFAULT_Y2_BOX, search=2048, rows=None):
    """Mesh the cell ``{y : F(x1, y) > 0}`` with ``n1`` periodic columns and
    ``n2`` intervals across the fitted transverse support.

    ``rows`` overrides the fitted transverse node coordinates (used to put
    neighbouring slices on one common grid); its end rows must lie outside
    the cell.
    """
    if n1 < 8 or n2 < 8:
        raise ValueError("grid counts must be at least 8")
    x1 = float(x1)
    level = lambda a, b: F.evaluate(x1, a, b)  # noqa: E731
    c1 = np.arange(n1) / n1
    lo, hi = map(float, y2_box)
    if rows is None:
        bottom, top = _support(level, c1, lo, hi, max(search, 8 * n2))
        if np.all(np.isnan(bottom)):
            raise DomainEmpty(f"cell at x1={x1} is empty: F <= 0 on the search box")
        ymin, ymax = float(np.nanmin(bottom)), float(np.nanmax(top))
        c2 = np.linspace(ymin, ymax, n2 + 1)
        empty = int(np.isnan(bottom).sum())
    else:
        c2 = np.asarray(rows, dtype=float)
        edge = level(c1[:, None], c2[None, [0, -1]])
        if np.any(edge > 0):
            raise DomainUnbounded(f"cell at x1={x1} reaches the end rows of the given grid")
        ymin, ymax = float(c2[0]), float(c2[-1])
        empty = 0
    grid = build_grid(c1, c2, level, periodic=True)
    samples = _samples(F, x1, grid, lambda p: (x1, p[:, 0], p[:, 1]))
    stats = {"nodes": grid.n, "empty_columns": empty, "h1": grid.h1, "h2": grid.h2}
    return CellMesh(F, x1, grid, samples, (lo, hi), (ymin, ymax), stats)


def extended_rows(mesh, extra):
    """Transverse node rows of ``mesh`` padded by ``extra`` rows each side."""
    c2 = mesh.grid.c2
    h = mesh.grid.h2
    pad = h * np.arange(1, extra + 1)
    return np.concatenate([c2[0] - pad[::-1], c2, c2[-1] + pad])


def _grad_y(F, args):
    """``(dF/dy1, dF/dy2)`` at the given argument tuple."""
    return F.diff("y1").evaluate(*args), F.diff("y2").evaluate(*args)


def _samples(F, x1, grid, args_of):
    dofs, dirs, th, pts = _cut_points(grid)
    args = args_of(pts)
    g1, g2 = _grad_y(F, args)
    g1 = np.broadcast_to(g1, th.shape).astype(float)
    g2 = np.broadcast_to(g2, th.shape).astype(float)
    gn = np.hypot(g1, g2)
    # samples forced at theta=1 on the box edge can sit where grad F = 0 only
    # if the level set is degenerate; guard the division here, report later
    safe = np.where(gn > 0, gn, 1.0)
    normal = np.stack([-g1 / safe, -g2 / safe], axis=1)
    weight = elements(grid).boundary_weights()
    return BoundarySamples(dofs, dirs, th, pts, normal, weight)


# --------------------------------------------------------------------------
# thin domain

@dataclass(frozen=True, eq=False)
class ThinMesh:
    F: object
    epsilon: float
    grid: Grid
    extent: tuple
    stats: dict = field(default_factory=dict)

    periodic = False

    def coeff_args(self, c1, c2):
        return c1, c1 / self.epsilon, c2 / self.epsilon

    def level(self, c1, c2):
        return self.F.evaluate(c1, c1 / self.epsilon, c2 / self.epsilon)


def thin_node_count(eps, nodes_per_period, n2):
    n1 = math.ceil(nodes_per_period / eps)
    return (n1 + 1) * (n2 + 1)


def build_thin_mesh(F, eps, nodes_per_period, n2=128, y2_box=DEFAULT_Y2_BOX,
                    node_cap=DEFAULT_NODE_CAP, search=512):
    """Mesh ``Omega_eps = {x1 in I, F(x1, x1/eps, x2/eps) > 0}``."""
    eps = float(eps)
    if not 0.0 < eps <= 0.5:
        raise ValueError("eps must lie in (0, 1/2]")
    if nodes_per_period < 16:
        raise ValueError("nodes_per_period must be at least 16")
    total = thin_node_count(eps, nodes_per_period, n2)
    if total > node_cap:
        raise MeshTooLarge(
            f"thin mesh needs {total} nodes (eps={eps}, nodes_per_period="
            f"{nodes_per_period}, n2={n2}); cap is {node_cap}")
    n1 = math.ceil(nodes_per_period / eps)
    c1 = np.linspace(-0.5, 0.5, n1 + 1)
    cell_level = lambda a, b: F.evaluate(a, a / eps, b)  # noqa: E731
    lo, hi = map(float, y2_box)
    bottom = np.empty(n1 + 1)
    top = np.empty(n1 + 1)
    step = max(1, 4_000_000 // search)
    for i0 in range(0, n1 + 1, step):
        b, t = _support(cell_level, c1[i0:i0 + step], lo, hi, search)
        bottom[i0:i0 + step] = b
        top[i0:i0 + step] = t
    if np.all(np.isnan(bottom)):
        raise DomainEmpty(f"thin domain at eps={eps} is empty")
    ymin, ymax = float(np.nanmin(bottom)), float(np.nanmax(top))
    c2 = np.linspace(eps * ymin, eps * ymax, n2 + 1)
    level = lambda a, b: F.evaluate(a, a / eps, b / eps)  # noqa: E731
    grid = build_grid(c1, c2, level, periodic=False)
    stats = {"nodes": grid.n, "h1": grid.h1, "h2": grid.h2}
    return ThinMesh(F, eps, grid, (eps * ymin, eps * ymax), stats)


# --------------------------------------------------------------------------
# normal velocity and interior velocity field

def normal_velocity(F, mesh, min_gradient=1e-8):
    """``V_n = -dF/dx1 / |grad_y F|`` at every boundary sample of ``mesh``."""
    pts = mesh.boundary.points
    args = (mesh.x1, pts[:, 0], pts[:, 1])
    g1, g2 = _grad_y(F, args)
    gn = np.broadcast_to(np.hypot(g1, g2), (len(pts),))
    if len(pts) and np.min(gn) < min_gradient:
        k = int(np.argmin(gn))
        raise DegenerateLevelSet(
            f"|grad_y F| = {gn[k]:.3e} at y = {tuple(pts[k])}, x1 = {mesh.x1}")
    dx = np.broadcast_to(F.diff("x1").evaluate(*args), (len(pts),))
    return -dx / gn


@dataclass(frozen=True, eq=False)
class VelocityField:
    """``V = grad phi`` on interior nodes plus the boundary normal speeds."""

    V: np.ndarray            # (n, 2)
    vn: np.ndarray           # per boundary sample
    phi: np.ndarray
    projection: float        # mean boundary flux compensated by the source
    source: float            # uniform interior source density
    iterations: int = 0

    def normal_component(self, mesh):
        """``V . nu`` at each boundary sample, from the interior node of its
        cut link (first order)."""
        b = mesh.boundary
        return np.einsum("ij,ij->i", self.V[b.dof], b.normal)


def velocity_field(mesh, vn, tol=1e-12, maxiter=None):
    """Extend boundary speeds ``vn`` to a gradient field on the cell.

    Solves ``-Lap phi = f`` with ``d phi / d nu = vn`` on the triangulated
    cell, where the uniform source ``f = -int(vn) / |cell|`` makes the
    Neumann problem compatible, and returns ``V = grad phi`` at the interior
    nodes.
    """
    from .coefficients import CoefficientMatrix
    from .errors import NoConvergence
    from .linalg import assemble_mass, assemble_stiffness, solve_cg

    grid = mesh.grid
    vn = np.asarray(vn, dtype=float)
    b = mesh.boundary
    total = float(np.sum(b.weight * vn))
    measure = b.measure
    projection = total / measure if measure > 0 else 0.0
    if not np.any(vn):
        return VelocityField(np.zeros((grid.n, 2)), vn, np.zeros(grid.n), 0.0, 0.0, 0)
    K = assemble_stiffness(mesh, CoefficientMatrix.identity(), mode="free")
    Mdiag = assemble_mass(mesh, mode="free").diagonal()
    source = -total / float(Mdiag.sum())
    rhs = source * Mdiag
    rhs[grid.n:] += b.weight * vn
    try:
        phi, its = solve_cg(K, rhs, tol=tol, constraint=Mdiag, maxiter=maxiter,
                            return_iterations=True)
    except NoConvergence as exc:
        raise SolveFailure(f"velocity potential solve stagnated: {exc}") from exc
    V = nodal_gradient(mesh, phi[:grid.n], boundary_values=phi[grid.n:])
    return VelocityField(V, vn, phi, projection, source, its)


# --------------------------------------------------------------------------
# nodal differential operators

def nodal_gradient(mesh, u, mode="dirichlet", boundary_values=None):
    """Second-order nodal gradient on the (cut) grid.

    ``mode="dirichlet"`` uses the boundary points of cut links with value 0
    (or ``boundary_values`` per boundary sample); ``mode="free"`` falls back
    to one-sided differences where a link is cut.
    """
    grid = mesh.grid
    u = np.asarray(u, dtype=float)
    L = grid.link_length
    nb = grid.nbr
    bval = np.zeros(grid.nbr.shape)
    if boundary_values is not None:
        b = mesh.boundary
        bval[b.dof, b.direction] = boundary_values
    out = np.zeros((grid.n, 2))
    for axis, (dp, dm) in enumerate(((E, W), (N, S))):
        up = np.where(nb[:, dp] >= 0, u[np.maximum(nb[:, dp], 0)], bval[:, dp])
        um = np.where(nb[:, dm] >= 0, u[np.maximum(nb[:, dm], 0)], bval[:, dm])
        hp = L[:, dp]
        hm = L[:, dm]
        if mode == "dirichlet":
            g = (hm ** 2 * (up - u) + hp ** 2 * (u - um)) / (hp * hm * (hp + hm))
        else:
            cp = nb[:, dp] >= 0
            cm = nb[:, dm] >= 0
            both = cp & cm
            g = np.zeros(grid.n)
            g[both] = ((hm ** 2 * (up - u) + hp ** 2 * (u - um)) / (hp * hm * (hp + hm)))[both]
            only_p = cp & ~cm
            only_m = cm & ~cp
            g[only_p] = ((up - u) / hp)[only_p]
            g[only_m] = ((u - um) / hm)[only_m]
        out[:, axis] = g
    return out


def ghost_extended(mesh, u):
    """Grid array of ``u`` with exterior neighbours filled by the linear
    extrapolation through the boundary zero (averaged over links)."""
    grid = mesh.grid
    arr = grid.to_array(u)
    acc = np.zeros(grid.shape)
    cnt = np.zeros(grid.shape)
    dofs, dirs = np.nonzero(grid.nbr < 0)
    th = grid.theta[dofs, dirs]
    i = grid.ij[dofs, 0].copy()
    j = grid.ij[dofs, 1].copy()
    i += (AXIS[dirs] == 0) * SIGN[dirs]
    j += (AXIS[dirs] == 1) * SIGN[dirs]
    if grid.periodic:
        i %= grid.shape[0]
    ghost = -u[dofs] * (1.0 - th) / th
    np.add.at(acc, (i, j), ghost)
    np.add.at(cnt, (i, j), 1.0)
    ext = cnt > 0
    arr[ext] = acc[ext] / cnt[ext]
    return arr


def interpolate(mesh, u, c1, c2, extended=None):
    """Bilinear interpolation of the nodal field ``u`` at points ``(c1, c2)``.

    Uses the ghost-extended field near the boundary; points outside the
    node box or outside ``{F > 0}`` evaluate to zero.
    """
    grid = mesh.grid
    arr = ghost_extended(mesh, u) if extended is None else extended
    c1 = np.asarray(c1, dtype=float)
    c2 = np.asarray(c2, dtype=float)
    N1, N2 = grid.shape
    s = (c1 - grid.c1[0]) / grid.h1
    t = (c2 - grid.c2[0]) / grid.h2
    if grid.periodic:
        s = np.mod(s, N1)
        i0 = np.floor(s).astype(np.int64) % N1
        i1 = (i0 + 1) % N1
    else:
        s = np.clip(s, 0, N1 - 1 - 1e-12)
        i0 = np.floor(s).astype(np.int64)
        i1 = np.minimum(i0 + 1, N1 - 1)
    outside = (t < 0) | (t > N2 - 1)
    t = np.clip(t, 0, N2 - 1 - 1e-12)
    j0 = np.floor(t).astype(np.int64)
    j1 = np.minimum(j0 + 1, N2 - 1)
    fs = s - np.floor(s)
    ft = t - j0
    val = ((1 - fs) * (1 - ft) * arr[i0, j0] + fs * (1 - ft) * arr[i1, j0]
           + (1 - fs) * ft * arr[i0, j1] + fs * ft * arr[i1, j1])
    inside = mesh.level(c1, c2) > 0
    return np.where(outside | ~inside, 0.0, val)
