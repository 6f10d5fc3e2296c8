"""Direct eigensolve on the thin domain and comparison with the asymptotics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .geometry import DEFAULT_NODE_CAP, build_thin_mesh, interpolate
from .linalg import assemble_mass, assemble_stiffness, smallest_eigenpairs


@dataclass(frozen=True)
class ThinGrid:
    """Resolution of the thin-domain solve."""

    nodes_per_period: int = 32
    n2: int = 128
    y2_box: tuple = (-2.0, 2.0)
    node_cap: int = DEFAULT_NODE_CAP


@dataclass(frozen=True, eq=False)
class DirectSolveResult:
    """``k`` smallest Dirichlet eigenpairs on the thin domain.

    Eigenfunctions (columns of ``u``) satisfy
    ``sum M u_i u_j = eps^(3/2) delta_ij``.
    """

    epsilon: float
    lambdas: np.ndarray
    u: np.ndarray
    mesh: object
    residuals: np.ndarray
    mass: np.ndarray

    @property
    def k(self):
        return len(self.lambdas)


def solve_thin(F, A, eps, k=2, grid=ThinGrid(), v0=None):
    """Solve ``-div(A(x1, x/eps) grad u) = lambda u`` on the thin domain."""
    mesh = build_thin_mesh(F, eps, grid.nodes_per_period, grid.n2, grid.y2_box,
                           node_cap=grid.node_cap)
    K = assemble_stiffness(mesh, A)
    M = assemble_mass(mesh)
    pairs = smallest_eigenpairs(K, M, k=k, normalization="thin-domain", v0=v0)
    s = eps ** 0.75
    u = np.stack([p.vector * s for p in pairs], axis=1)
    lam = np.array([p.value for p in pairs])
    res = np.array([p.residual_norm for p in pairs])
    return DirectSolveResult(float(eps), lam, u, mesh, res, M.diagonal())


def nu_residual(result_or_lambdas, model, eps=None):
    """``r_i = eps lambda_i - mu0 / eps - nu_i`` for each available mode."""
    if isinstance(result_or_lambdas, DirectSolveResult):
        lam = result_or_lambdas.lambdas
        eps = result_or_lambdas.epsilon
    else:
        lam = np.atleast_1d(np.asarray(result_or_lambdas, dtype=float))
    nu = np.asarray(model.nu, dtype=float)[:len(lam)]
    return eps * lam - model.mu0 / eps - nu


def comparator(result, ce, osc, j, x_star=None):
    """``psi1(x_star, x1/eps mod 1, x2/eps) v_j((x1 - x_star)/sqrt(eps))`` on
    the thin-domain nodes."""
    eps = result.epsilon
    x_star = ce.x1 if x_star is None else x_star
    x1, x2 = result.mesh.grid.coords
    y1 = np.mod(x1 / eps, 1.0)
    psi = interpolate(ce.mesh, ce.psi1, y1, x2 / eps)
    return psi * osc.mode(j, (x1 - x_star) / np.sqrt(eps))


def localization_error(result, ce, osc, i=1, j=None):
    """``eps^(-3/2) int |u_i - psi1 v_j|^2`` after aligning the sign of
    ``u_i`` with the comparator (``j`` defaults to ``i``)."""
    j = i if j is None else j
    eps = result.epsilon
    u = result.u[:, i - 1]
    c = comparator(result, ce, osc, j)
    M = result.mass
    if np.sum(M * u * c) < 0:
        u = -u
    return float(np.sum(M * (u - c) ** 2) / eps ** 1.5)


@dataclass
class ValidationReport:
    rows: list = field(default_factory=list)        # dicts per (eps, i)
    negative_control: dict = field(default_factory=dict)    # eps -> value
    trend_residual: float = np.nan                  # slope of log|r_1| vs log eps
    trend_localization: float = np.nan
    verdict: str = "satisfied"
    results: dict = field(default_factory=dict)

    def column(self, name, i=1):
        return [r[name] for r in self.rows if r["i"] == i]


def _slope(x, y):
    x = np.log(np.asarray(x, float))
    y = np.log(np.abs(np.asarray(y, float)))
    ok = np.isfinite(y)
    if ok.sum() < 2:
        return np.nan
    return float(np.polyfit(x[ok], y[ok], 1)[0])


def check_eps_list(eps_list):
    eps = [float(e) for e in eps_list]
    if len(eps) < 3:
        raise ConfigError("validation needs at least three eps values")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigError("eps values must be strictly decreasing")
    return eps


def convergence_report(F, A, eps_list, k, model, grid=ThinGrid(), ce=None, results=None):
    """Direct solves for each ``eps`` and the asymptotic comparisons.

    ``model`` may be ``None`` (hypothesis violated): then only eigenvalues
    are reported.  ``results`` may carry precomputed solves keyed by eps.
    """
    from .cell import CellGrid, first_eigenpair

    eps_list = check_eps_list(eps_list)
    rep = ValidationReport()
    if model is None:
        rep.verdict = "violated"
    elif ce is None:
        ce = model.diagnostics.get("cell")
        if ce is None:
            cg = model.diagnostics.get("cell_grid", CellGrid())
            ce = first_eigenpair(F, A, model.x_star, cg)
    for eps in eps_list:
        res = (results or {}).get(eps) or solve_thin(F, A, eps, k, grid)
        rep.results[eps] = res
        for i in range(1, k + 1):
            row = {"eps": eps, "i": i, "lambda": float(res.lambdas[i - 1]),
                   "prediction": np.nan, "nu_residual": np.nan, "localization_error": np.nan}
            if model is not None and i <= len(model.nu):
                row["prediction"] = model.predict(eps, i)
                row["nu_residual"] = float(nu_residual(res, model)[i - 1])
                row["localization_error"] = localization_error(res, ce, model.osc, i)
            rep.rows.append(row)
        if model is not None and k >= 1 and len(model.nu) >= 2:
            rep.negative_control[eps] = localization_error(res, ce, model.osc, 1, 2)
    if model is not None:
        rep.trend_residual = _slope(eps_list, rep.column("nu_residual"))
        rep.trend_localization = _slope(eps_list, rep.column("localization_error"))
    return rep
