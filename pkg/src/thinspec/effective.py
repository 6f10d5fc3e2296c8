"""Weighted correctors, effective coefficients and the oscillator limit."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .cell import CellGrid, dpsi_dx1, first_eigenpair, unit_scale
from .errors import (DomainTooSmall, FormMismatch, HypothesisViolation,
                     IncompatibleRHS, NotPositive)
from .geometry import elements, nodal_gradient
from .linalg import (assemble_mass, assemble_stiffness, element_coefficients,
                     solve_cg)
from .profile import analyse_profile

OSCILLATOR_N = 4096


# --------------------------------------------------------------------------
# correctors

@dataclass(frozen=True, eq=False)
class Corrector:
    """Corrector ``N_k`` on all vertices of the cell at ``x_star``.

    ``N_k`` solves ``-div(psi^2 A (e_k + grad N_k)) = 0`` weakly, gauged by
    ``int N_k psi^2 = 0``.
    """

    k: int
    N: np.ndarray
    weighted_mean: float
    compatibility_residual: float
    iterations: int = 0


def _weight(ce):
    el = elements(ce.mesh.grid)
    return np.concatenate([ce.psi1 ** 2, np.zeros(el.n_cut)])


def corrector_rhs(ce, A, k, with_scale=False):
    """``-int psi^2 A e_k . grad phi_i`` for every vertex ``i``.

    With ``with_scale`` also return the sum of the absolute element
    contributions, the magnitude that sets the rounding level of the sum.
    """
    el = elements(ce.mesh.grid)
    w = _weight(ce)
    a11, a12, a22 = element_coefficients(ce.mesh, A, check=False)
    col = (a11, a12) if k == 1 else (a12, a22)
    flux = np.stack(col, axis=1) * (el.measure * w[el.dofs].mean(axis=1))[:, None]
    per = -np.einsum("tkd,td->tk", el.grads, flux)
    rhs = np.zeros(el.size)
    np.add.at(rhs, el.dofs.ravel(), per.ravel())
    if with_scale:
        return rhs, float(np.abs(per).sum())
    return rhs


def solve_corrector(ce, A=None, k=1, tol=1e-11):
    """Solve the weighted cell problem for ``N_k``, ``k in {1, 2}``."""
    if k not in (1, 2):
        raise ValueError("k must be 1 or 2")
    A = ce.A if A is None else A
    Au, _ = unit_scale(A)
    w = _weight(ce)
    K = assemble_stiffness(ce.mesh, Au, weight=w, mode="free", check=False)
    rhs, magnitude = corrector_rhs(ce, Au, k, with_scale=True)
    gauge = assemble_mass(ce.mesh, weight=w, mode="free").diagonal()
    act = rhs[K.active]
    rn = float(np.linalg.norm(act))
    floor = 1e-13 * magnitude
    total = abs(float(act.sum()))
    residual = total / rn if rn > 0 else 0.0
    if total > max(1e-8 * rn, floor):
        raise IncompatibleRHS(f"corrector right-hand side has mean {residual:.3e} (relative)")
    if rn <= floor:
        return Corrector(k, np.zeros_like(rhs), 0.0, residual, 0)
    N, its = solve_cg(K, rhs, tol=tol, constraint=gauge, return_iterations=True,
                      check_rhs=False)
    mean = float(gauge @ N) / float(gauge.sum())
    return Corrector(k, N, mean, residual, its)


def effective_matrix(ce, correctors, A=None):
    """``A_eff[i][j] = int psi^2 (e_i + grad N_i) . A (e_j + grad N_j)``."""
    A = ce.A if A is None else A
    el = elements(ce.mesh.grid)
    wt = el.measure * _weight(ce)[el.dofs].mean(axis=1)
    a11, a12, a22 = element_coefficients(ce.mesh, A, check=False)
    cols = []
    for c in correctors:
        g = el.gradient(c.N)
        g[:, c.k - 1] += 1.0
        cols.append(g)
    out = np.zeros((len(cols), len(cols)))
    for i, gi in enumerate(cols):
        agi = np.stack([a11 * gi[:, 0] + a12 * gi[:, 1], a12 * gi[:, 0] + a22 * gi[:, 1]], axis=1)
        for j, gj in enumerate(cols):
            out[i, j] = float(np.sum(wt * np.einsum("td,td->t", agi, gj)))
    return out


@dataclass(frozen=True)
class EffectiveCoefficient:
    value: float            # energy form
    flux_form: float
    upper_bound: float      # int psi^2 a11
    full: np.ndarray


def a_eff(ce, A=None, N1=None, N2=None):
    """Effective coefficient ``a_eff`` with its flux-form twin, the
    no-corrector upper bound and the full 2x2 effective matrix."""
    A = ce.A if A is None else A
    N1 = solve_corrector(ce, A, 1) if N1 is None else N1
    N2 = solve_corrector(ce, A, 2) if N2 is None else N2
    full = effective_matrix(ce, (N1, N2), A)
    el = elements(ce.mesh.grid)
    wt = el.measure * _weight(ce)[el.dofs].mean(axis=1)
    a11, a12, _ = element_coefficients(ce.mesh, A, check=False)
    g = el.gradient(N1.N)
    flux = float(np.sum(wt * (a11 * (1.0 + g[:, 0]) + a12 * g[:, 1])))
    upper = float(np.sum(wt * a11))
    value = float(full[0, 0])
    if not value > 0:
        raise NotPositive(f"a_eff = {value:.3e} is not positive")
    return EffectiveCoefficient(value, flux, upper, full)


# --------------------------------------------------------------------------
# c_eff

@dataclass(frozen=True)
class CEff:
    value: float            # integrated-by-parts form
    direct: float
    estimate: float
    transport_part: float   # 2 int (A grad psi)_1 d_x1 psi
    drift_part: float       # -G'(x1),  G = int psi (A grad psi)_1


def _first_flux_integral(ce, A):
    """``G = int psi (A grad psi)_1`` on the cell of ``ce``."""
    el = elements(ce.mesh.grid)
    u = np.concatenate([ce.psi1, np.zeros(el.n_cut)])
    g = el.gradient(u)
    a11, a12, _ = element_coefficients(ce.mesh, A, check=False)
    return el.integrate(u[el.dofs].mean(axis=1) * (a11 * g[:, 0] + a12 * g[:, 1]))


def _transport_integral(ce, A, dx, dxb):
    el = elements(ce.mesh.grid)
    u = np.concatenate([ce.psi1, np.zeros(el.n_cut)])
    d = np.concatenate([dx, dxb])
    g = el.gradient(u)
    a11, a12, _ = element_coefficients(ce.mesh, A, check=False)
    return el.integrate(d[el.dofs].mean(axis=1) * (a11 * g[:, 0] + a12 * g[:, 1]))


def _direct_form(ce, A, tr):
    """``-int psi [div_y(A e1 d_x psi) + (d_x1 A grad psi)_1 + (A grad d_x psi)_1]``
    by nodal differences and lumped quadrature."""
    mesh = ce.mesh
    b = mesh.boundary
    y1, y2 = mesh.grid.coords
    x1 = mesh.x1
    a11, a12, a22 = A.entries(x1, y1, y2)
    b11, b12, b22 = A.entries(x1, b.points[:, 0], b.points[:, 1])
    dx, dxb = tr.dpsi, tr.boundary
    q1 = nodal_gradient(mesh, a11 * dx, boundary_values=b11 * dxb)[:, 0]
    q2 = nodal_gradient(mesh, a12 * dx, boundary_values=b12 * dxb)[:, 1]
    div = q1 + q2
    gpsi = nodal_gradient(mesh, ce.psi1)
    gdx = nodal_gradient(mesh, dx, boundary_values=dxb)
    term = div + a11 * gdx[:, 0] + a12 * gdx[:, 1]
    if A.depends_on_x1():
        d11, d12, _ = A.diff("x1").entries(x1, y1, y2)
        term = term + d11 * gpsi[:, 0] + d12 * gpsi[:, 1]
    M = mesh.grid.volume
    return -float(np.sum(M * ce.psi1 * term))


def c_eff(ce, F, A=None, transport=None, delta=1e-3, grid=None):
    """Potential shift ``c_eff`` at ``ce.x1``.

    Primary value: ``2 int (A grad psi)_1 d_x1 psi - G'(x1)`` with
    ``G(x1) = int psi (A grad psi)_1`` (central difference).  It is
    cross-checked against the direct form with second derivatives; a
    disagreement beyond ten times the discretization estimate raises
    :class:`FormMismatch`.
    """
    A = ce.A if A is None else A
    Au, scale = unit_scale(A)
    if transport is None:
        transport = dpsi_dx1(F, Au, ce=ce, delta=delta, grid=grid or CellGrid())

    def primary(tr):
        t = 2.0 * _transport_integral(ce, Au, tr.dpsi, tr.boundary)
        gp = _first_flux_integral(tr.plus, Au)
        gm = _first_flux_integral(tr.minus, Au)
        return t, -(gp - gm) / (2.0 * tr.delta)

    t, drift = primary(transport)
    value = t + drift
    direct = _direct_form(ce, Au, transport)
    half = dpsi_dx1(F, Au, ce=ce, delta=transport.delta / 2, velocity=transport.velocity)
    t2, drift2 = primary(half)
    el = elements(ce.mesh.grid)
    gpsi = el.gradient(np.concatenate([ce.psi1, np.zeros(el.n_cut)]))
    dfull = np.concatenate([transport.dpsi, transport.boundary])
    h = max(ce.mesh.grid.h1, ce.mesh.grid.h2)
    mag = el.integrate(np.hypot(*gpsi.T) * np.abs(dfull[el.dofs].mean(axis=1)))
    if Au.depends_on_x1():
        d11, d12, d22 = element_coefficients(ce.mesh, Au.diff("x1"), check=False)
        psic = np.concatenate([ce.psi1, np.zeros(el.n_cut)])[el.dofs].mean(axis=1)
        dnorm = np.abs(d11) + 2 * np.abs(d12) + np.abs(d22)
        mag += el.integrate(np.abs(psic) * dnorm * np.hypot(*gpsi.T))
    estimate = max(abs(t2 + drift2 - value), h * mag, 1e-8)
    if abs(direct - value) > 10.0 * estimate:
        raise FormMismatch(
            f"c_eff forms disagree: {value:.6e} vs direct {direct:.6e} "
            f"(estimate {estimate:.2e})")
    return CEff(scale * value, scale * direct, scale * estimate, scale * t, scale * drift)


# --------------------------------------------------------------------------
# oscillator

@dataclass(frozen=True, eq=False)
class Oscillator:
    nu: np.ndarray
    v: np.ndarray           # (J, n - 1) on the interior nodes z
    z: np.ndarray
    L: float
    reference: np.ndarray   # closed form c + sqrt(2 a kappa)(j - 1/2)

    @property
    def dz(self):
        return float(self.z[1] - self.z[0])

    def mode(self, j, points):
        """``v_j`` (1-based) interpolated at ``points``; zero outside."""
        zz = np.concatenate([[-self.L], self.z, [self.L]])
        vv = np.concatenate([[0.0], self.v[j - 1], [0.0]])
        return np.interp(points, zz, vv, left=0.0, right=0.0)


def length_scale(a, kappa):
    return (2.0 * a / kappa) ** 0.25


def oscillator(a, c, kappa, J=5, L=None, n=OSCILLATOR_N):
    """Eigenpairs of ``-a v'' + (c + kappa z^2 / 2) v = nu v`` on ``[-L, L]``.

    Dirichlet ends, second differences on ``n`` intervals.  ``v_j`` has unit
    L2 norm and a positive rightmost lobe.
    """
    if not a > 0:
        raise NotPositive(f"a_eff = {a} must be positive")
    if not kappa > 0:
        raise NotPositive(f"kappa = {kappa} must be positive")
    ell = length_scale(a, kappa)
    if L is None:
        L = ell * max(8.0, np.sqrt(2 * J - 1) + 7.0)
    z = np.linspace(-L, L, n + 1)[1:-1]
    dz = 2 * L / n
    diag = 2 * a / dz ** 2 + c + 0.5 * kappa * z ** 2
    off = np.full(n - 2, -a / dz ** 2)
    nu, vec = eigh_tridiagonal(diag, off, select="i", select_range=(0, J - 1))
    v = vec.T / np.sqrt(dz)
    for j in range(J):
        big = np.flatnonzero(np.abs(v[j]) > 1e-3 * np.max(np.abs(v[j])))
        if v[j, big[-1]] < 0:
            v[j] = -v[j]
    tail = np.abs(v[J - 1, [0, -1]]).max()
    if tail > 1e-10 * np.max(np.abs(v[J - 1])):
        raise DomainTooSmall(f"v_{J} is {tail:.2e} at z = +-L (L = {L:.4g}); enlarge L")
    ref = c + np.sqrt(2 * a * kappa) * (np.arange(1, J + 1) - 0.5)
    return Oscillator(nu, v, z, float(L), ref)


# --------------------------------------------------------------------------
# model

@dataclass(eq=False)
class EffectiveModel:
    a_eff: float
    A_eff_full: np.ndarray
    c_eff: float
    mu0: float
    kappa: float
    x_star: float
    osc: Oscillator
    diagnostics: dict = field(default_factory=dict)

    @property
    def nu(self):
        return self.osc.nu

    @property
    def L(self):
        return self.osc.L

    def predict(self, eps, i=1):
        return predict(self, eps, i)


def predict(model, eps, i=1):
    """Two-term eigenvalue ``mu0 / eps^2 + nu_i / eps``."""
    return model.mu0 / eps ** 2 + float(model.nu[i - 1]) / eps


def build_model(F, A, grid=CellGrid(), m=17, J=5, L=None, n=OSCILLATOR_N, delta=1e-3,
                profile=None):
    """Run profile, minimization, correctors, ``c_eff`` and the oscillator.

    Raises :class:`HypothesisViolation` if the profile verdict fails.
    """
    prof = analyse_profile(F, A, m, grid) if profile is None else profile
    if not prof.verdict.satisfied:
        raise HypothesisViolation(str(prof.verdict))
    ce = first_eigenpair(F, A, prof.x_star, grid)
    N1 = solve_corrector(ce, A, 1)
    N2 = solve_corrector(ce, A, 2)
    ae = a_eff(ce, A, N1, N2)
    ce_val = c_eff(ce, F, A, delta=delta, grid=grid)
    osc = oscillator(ae.value, ce_val.value, prof.kappa, J, L, n)
    diag = {
        "a_eff_flux": ae.flux_form, "a_eff_upper": ae.upper_bound,
        "c_eff_direct": ce_val.direct, "c_eff_estimate": ce_val.estimate,
        "kappa_error": prof.kappa_error, "gap": ce.gap, "corrector_mean_1": N1.weighted_mean,
        "corrector_mean_2": N2.weighted_mean, "cell_nodes": ce.mesh.grid.n,
        "verdict": str(prof.verdict),
    }
    model = EffectiveModel(ae.value, ae.full, ce_val.value, prof.mu0, prof.kappa,
                           prof.x_star, osc, diag)
    model.diagnostics["profile"] = prof
    model.diagnostics["cell_grid"] = grid
    model.diagnostics["cell"] = ce
    return model
