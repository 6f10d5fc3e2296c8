"""The eigenvalue profile ``x1 -> mu1(x1)``: sampling, derivatives, minimum."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cell import CellGrid, first_eigenpair, normal_derivative, unit_scale
from .errors import (HypothesisViolation, MinOnBoundary, NegativeCurvature,
                     NoBracket)
from .geometry import nodal_gradient, normal_velocity, velocity_field
from .linalg import assemble_mass, assemble_stiffness

RICHARDSON_STEPS = (4e-2, 2e-2, 1e-2)
NEWTON_FD_STEP = 1e-2
GOLDEN = (3.0 - math.sqrt(5.0)) / 2.0
NEIGHBOURHOOD = 0.1


def worker_count():
    env = os.environ.get("THINSPEC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def pmap(fn, items):
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def chebyshev_points(m):
    """Chebyshev-Lobatto points of ``[-1/2, 1/2]``, ascending."""
    if m < 2:
        raise ValueError("need at least two points")
    x = 0.5 * np.cos(np.pi * np.arange(m) / (m - 1))[::-1]
    if m % 2:
        x[m // 2] = 0.0
    x[0], x[-1] = -0.5, 0.5
    return x


# --------------------------------------------------------------------------
# first derivative

@dataclass(frozen=True)
class ShapeDerivative:
    """Three parts of ``mu1'``: coefficient variation, boundary term, and the
    interior transport term."""

    coefficient: float
    boundary: float
    transport: float
    x1: float = np.nan

    @property
    def value(self):
        return self.coefficient + self.boundary + self.transport


def shape_derivative(F, ce, velocity=None):
    """``mu1'`` at ``ce.x1`` from the shape-derivative formula.

    ``coefficient = int d_x1 A grad psi . grad psi``,
    ``boundary = -int_boundary (A grad psi . grad psi) V.nu``,
    ``transport = 2 int (A grad psi . grad w - mu psi w)`` with
    ``w = grad psi . V``.
    """
    mesh = ce.mesh
    Au, scale = unit_scale(ce.A)
    psi = ce.psi1
    mu = ce.mu_unit
    if velocity is None:
        velocity = velocity_field(mesh, normal_velocity(F, mesh))
    vn = velocity.vn

    t1 = 0.0
    if Au.depends_on_x1():
        dA = Au.diff("x1")
        K1 = assemble_stiffness(mesh, dA, check=False)
        t1 = K1.energy(psi)

    b = mesh.boundary
    dn = normal_derivative(mesh, psi)
    a11, a12, a22 = Au.entries(mesh.x1, b.points[:, 0], b.points[:, 1])
    nu = b.normal
    ann = a11 * nu[:, 0] ** 2 + 2 * a12 * nu[:, 0] * nu[:, 1] + a22 * nu[:, 1] ** 2
    t2 = -float(np.sum(b.weight * dn ** 2 * ann * vn))

    K = ce.stats.get("K") or assemble_stiffness(mesh, Au)
    grad = nodal_gradient(mesh, psi)
    w = np.einsum("ij,ij->i", grad, velocity.V)
    wb = dn * vn
    Md = assemble_mass(mesh).diagonal()
    t3 = psi @ (K.matrix @ w) - mu * float(np.sum(Md * psi * w))
    if K.boundary is not None:
        t3 += psi @ (K.boundary @ wb)
    t3 = 2.0 * float(t3)
    return ShapeDerivative(scale * t1, scale * t2, scale * t3, ce.x1)


def mu1_prime(F, A, x1, grid=CellGrid(), ce=None):
    """``mu1'(x1)`` by the shape-derivative formula."""
    if ce is None:
        ce = first_eigenpair(F, A, x1, grid)
    return shape_derivative(F, ce).value


def discretization_floor(F, A, x1, grid=CellGrid()):
    """``|mu1'(n) - mu1'(n/2)|``: the change of the formula value when the
    cell grid is coarsened by two."""
    return abs(mu1_prime(F, A, x1, grid) - mu1_prime(F, A, x1, grid.halved()))


# --------------------------------------------------------------------------
# profile

@dataclass(frozen=True)
class Verdict:
    satisfied: bool
    reason: str = ""

    def __str__(self):
        return "satisfied" if self.satisfied else f"violated({self.reason})"


@dataclass
class MuProfile:
    """Samples of ``mu1`` on ``[-1/2, 1/2]`` and, once minimized, the
    minimizer ``x_star``, ``mu0 = mu1(x_star)`` and ``kappa = mu1''(x_star)``."""

    x: np.ndarray
    mu: np.ndarray
    mu_prime: np.ndarray | None = None
    x_star: float = np.nan
    mu0: float = np.nan
    kappa: float = np.nan
    kappa_error: float = np.nan
    verdict: Verdict | None = None
    history: list = field(default_factory=list)     # (x1, mu1, mu1', source)
    gaps: np.ndarray | None = None
    boundary_min: np.ndarray | None = None

    @property
    def argmin(self):
        return int(np.argmin(self.mu))

    @property
    def range(self):
        return float(np.max(self.mu) - np.min(self.mu))

    @property
    def is_flat(self):
        return self.range <= 1e-8 * max(1.0, float(np.max(np.abs(self.mu))))

    def rows(self):
        out = []
        mp = self.mu_prime if self.mu_prime is not None else np.full(len(self.x), np.nan)
        for x, m, d in zip(self.x, self.mu, mp):
            out.append((float(x), float(m), float(d), "sample"))
        out.extend(self.history)
        return out


def sample_profile(F, A, m=17, grid=CellGrid(), derivatives=True):
    """Solve the cell problem at ``m`` Chebyshev-Lobatto points of ``I``."""
    if m < 9:
        raise ValueError("profile needs at least 9 samples")
    xs = chebyshev_points(m)

    def one(x):
        from .cell import boundary_point_check
        ce = first_eigenpair(F, A, x, grid)
        d = shape_derivative(F, ce).value if derivatives else np.nan
        return ce.mu1, d, ce.gap, boundary_point_check(ce).min_value

    res = pmap(one, xs)
    mu = np.array([r[0] for r in res])
    mp = np.array([r[1] for r in res])
    return MuProfile(xs, mu, mp if derivatives else None,
                     gaps=np.array([r[2] for r in res]),
                     boundary_min=np.array([r[3] for r in res]))


def _mu(F, A, x, grid):
    return first_eigenpair(F, A, x, grid).mu_unit


def _newton_curvature(F, A, x, grid, mu_x=None, eta=NEWTON_FD_STEP):
    a = max(-0.5, x - eta)
    b = min(0.5, x + eta)
    if mu_x is None:
        mu_x = _mu(F, A, x, grid)
    fa, fb = _mu(F, A, a, grid), _mu(F, A, b, grid)
    ha, hb = x - a, b - x
    return 2.0 * (hb * fa - (ha + hb) * mu_x + ha * fb) / (ha * hb * (ha + hb))


def refine_minimum(F, A, x0, lo, hi, grid, tol=1e-8, maxiter=60, history=None):
    """Safeguarded Newton on ``mu1'`` inside ``[lo, hi]``.

    The bracket must carry a sign change of ``mu1'``.  Newton steps use the
    formula derivative and a finite-difference second derivative; a step
    that leaves the bracket or faces negative curvature is replaced by a
    golden-section step toward the smaller ``|mu1'|`` end.
    """
    Au, scale = unit_scale(A)

    def d1(x):
        ce = first_eigenpair(F, Au, x, grid)
        return ce.mu_unit, shape_derivative(F, ce).value

    _, dlo = d1(lo)
    _, dhi = d1(hi)
    if not (dlo < 0 < dhi):
        raise NoBracket(f"mu1' does not change sign on [{lo:.6g}, {hi:.6g}] "
                        f"(mu1'={dlo:.3e}, {dhi:.3e})")
    x = float(np.clip(x0, lo, hi))
    for _ in range(maxiter):
        mx, dx = d1(x)
        if history is not None:
            history.append((x, scale * mx, scale * dx, "newton"))
        if abs(dx) <= tol * max(1.0, abs(mx)):
            return x, scale * mx
        if dx < 0:
            lo, dlo = x, dx
        else:
            hi, dhi = x, dx
        c = _newton_curvature(F, Au, x, grid, mx)
        step = -dx / c if c > 0 else np.inf
        xn = x + step
        if not (lo < xn < hi):
            xn = lo + GOLDEN * (hi - lo) if abs(dlo) < abs(dhi) else hi - GOLDEN * (hi - lo)
        if abs(xn - x) < 1e-10:
            mx, dx = d1(xn)
            if history is not None:
                history.append((xn, scale * mx, scale * dx, "newton"))
            return xn, scale * mx
        x = xn
    raise NoBracket(f"Newton iteration did not settle in {maxiter} steps (last x={x})")


def minimize(profile, F, A, grid=CellGrid(), tol=1e-8):
    """Refine the coarse argmin of ``profile`` to the minimizer of ``mu1``.

    Returns ``(x_star, mu0)`` and records them (and the Newton history) on
    ``profile``.
    """
    k = profile.argmin
    if k == 0 or k == len(profile.x) - 1:
        raise MinOnBoundary(
            f"coarse minimum of mu1 at x1 = {profile.x[k]:+.3f} lies on the boundary of I")
    lo, hi = float(profile.x[k - 1]), float(profile.x[k + 1])
    x_star, mu0 = refine_minimum(F, A, float(profile.x[k]), lo, hi, grid, tol,
                                 history=profile.history)
    profile.x_star = x_star
    profile.mu0 = mu0
    return x_star, mu0


def second_difference(F, A, x, delta, grid, mu_x=None):
    if mu_x is None:
        mu_x = _mu(F, A, x, grid)
    return (_mu(F, A, x + delta, grid) - 2.0 * mu_x + _mu(F, A, x - delta, grid)) / delta ** 2


def mu1_second(F, A, x_star, grid=CellGrid(), steps=RICHARDSON_STEPS):
    """``mu1''(x_star)`` by Richardson extrapolation of central second
    differences.

    Returns
    -------
    kappa, error : float
        Extrapolated value and the change from the last first-level
        extrapolation.
    """
    Au, scale = unit_scale(A)
    m0 = _mu(F, Au, x_star, grid)
    d = pmap(lambda s: second_difference(F, Au, x_star, s, grid, m0), steps)
    r1a = (4.0 * d[1] - d[0]) / 3.0
    r1b = (4.0 * d[2] - d[1]) / 3.0
    r2 = (16.0 * r1b - r1a) / 15.0
    kappa = scale * r2
    err = scale * abs(r2 - r1b)
    if not kappa > 1e-6 * abs(scale * m0):
        raise NegativeCurvature(
            f"mu1''({x_star:.6g}) = {kappa:.3e} is not positive")
    return kappa, err


# --------------------------------------------------------------------------
# hypothesis

def _local_minima(mu):
    k = []
    for i in range(len(mu)):
        left = mu[i - 1] if i > 0 else np.inf
        right = mu[i + 1] if i + 1 < len(mu) else np.inf
        if mu[i] <= left and mu[i] <= right:
            k.append(i)
    return k


def check_hypothesis(profile, F=None, A=None, grid=CellGrid(), rel=1e-6):
    """Verdict on the unique-interior-minimum hypothesis.

    Violated when the samples are flat, the minimum sits on the boundary,
    the curvature is not positive, or another sample (or a refined local
    minimum, when ``F`` and ``A`` are given) outside a 0.1-neighbourhood of
    ``x_star`` comes within ``rel * range`` of ``mu0``.
    """
    if profile.is_flat:
        return Verdict(False, "flat")
    k = profile.argmin
    if k == 0 or k == len(profile.x) - 1:
        return Verdict(False, "boundary")
    if not np.isfinite(profile.x_star):
        return Verdict(False, "not-minimized")
    if not (np.isfinite(profile.kappa) and profile.kappa > 0):
        return Verdict(False, "negative-curvature")
    span = profile.range
    far = np.abs(profile.x - profile.x_star) > NEIGHBOURHOOD
    if np.any(far & (profile.mu - profile.mu0 <= rel * span)):
        return Verdict(False, "non-unique")
    if F is not None and A is not None:
        for i in _local_minima(profile.mu):
            if not far[i] or i == 0 or i == len(profile.x) - 1:
                continue
            try:
                _, m = refine_minimum(F, A, profile.x[i], profile.x[i - 1],
                                      profile.x[i + 1], grid)
            except HypothesisViolation:
                continue
            if m - profile.mu0 <= rel * span:
                return Verdict(False, "non-unique")
    return Verdict(True)


def settle_profile(prof, F, A, grid=CellGrid()):
    """Minimize a sampled profile, take the curvature and store the verdict
    on ``prof`` (nothing is raised for a violated hypothesis)."""
    if prof.is_flat:
        prof.verdict = Verdict(False, "flat")
        return prof
    try:
        minimize(prof, F, A, grid)
        prof.kappa, prof.kappa_error = mu1_second(F, A, prof.x_star, grid)
    except MinOnBoundary:
        prof.verdict = Verdict(False, "boundary")
        return prof
    except NegativeCurvature:
        prof.verdict = Verdict(False, "negative-curvature")
        return prof
    except NoBracket:
        prof.verdict = Verdict(False, "no-bracket")
        return prof
    prof.verdict = check_hypothesis(prof, F, A, grid)
    return prof


def analyse_profile(F, A, m=17, grid=CellGrid()):
    """Sample, minimize, and take the curvature; the verdict is stored on
    the returned profile instead of raising."""
    return settle_profile(sample_profile(F, A, m, grid), F, A, grid)
