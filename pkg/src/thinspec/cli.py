"""Command-line pipeline: each subcommand runs one stage and writes its files.

Stage outputs (inside the output directory)::

    cell-eigen  cell_eigen.csv
    profile     profile.csv
    minimize    minimize.csv, minimum.txt        (needs profile.csv)
    effective   effective.csv, model.txt         (needs minimum.txt)
    oscillator  oscillator.csv, oscillator.txt   (needs model.txt)
    predict     predict.csv                      (needs model.txt, oscillator.txt)
    direct      direct.csv, direct/eps_*.{csv,npy}
    validate    validation.csv, report.txt       (needs model.txt, direct files)
    run         all of the above, in order

Exit status: 0 on success, 2 when the localization hypothesis fails, 1 on
any other error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .cell import boundary_point_check, first_eigenpair
from .config import format_real, read_keyvalues, write_keyvalues
from .direct import (DirectSolveResult, check_eps_list, convergence_report,
                     solve_thin)
from .effective import (EffectiveModel, a_eff, c_eff, oscillator, predict,
                        solve_corrector)
from .errors import (ConfigError, HypothesisViolation, MissingArtifact,
                     ThinspecError)
from .geometry import build_thin_mesh
from .linalg import assemble_mass
from .profile import MuProfile, sample_profile, settle_profile

STAGES = ("cell-eigen", "profile", "minimize", "effective", "oscillator", "predict",
          "direct", "validate")


# --------------------------------------------------------------------------
# file helpers

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_real(v)
    return str(v)


def write_csv(path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    Path(path).write_bytes(("\n".join(lines) + "\n").encode())


def read_csv(path):
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"missing stage output {path}")
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:] if line]


def read_kv(path):
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"missing stage output {path}")
    return read_keyvalues(path.read_text())


def _eps_tag(eps):
    # shortest round-trip text; file names only
    return "eps_" + repr(float(eps))


def _floats(s):
    return [float(x) for x in s.split(",")]


# --------------------------------------------------------------------------
# stages

def stage_cell_eigen(cfg, out, x1=None):
    x1 = 0.0 if x1 is None else float(x1)
    ce = first_eigenpair(cfg.F, cfg.A, x1, cfg.cell)
    bc = boundary_point_check(ce)
    write_csv(out / "cell_eigen.csv", ["x1", "mu1", "mu2", "gap", "boundary_min", "residual"],
              [(ce.x1, ce.mu1, ce.mu2, ce.gap, bc.min_value, ce.residual)])
    return ce


def stage_profile(cfg, out):
    prof = sample_profile(cfg.F, cfg.A, cfg.m, cfg.cell)
    rows = [(x, m, d, "sample", g, b) for x, m, d, g, b in
            zip(prof.x, prof.mu, prof.mu_prime, prof.gaps, prof.boundary_min)]
    write_csv(out / "profile.csv", ["x1", "mu1", "mu1_prime", "source", "gap", "boundary_min"],
              rows)
    return prof


def load_profile(out):
    rows = [r for r in read_csv(out / "profile.csv") if r["source"] == "sample"]
    col = lambda k: np.array([float(r[k]) for r in rows])    # noqa: E731
    return MuProfile(col("x1"), col("mu1"), col("mu1_prime"),
                     gaps=col("gap"), boundary_min=col("boundary_min"))


def stage_minimize(cfg, out):
    prof = settle_profile(load_profile(out), cfg.F, cfg.A, cfg.cell)
    write_csv(out / "minimize.csv", ["x1", "mu1", "mu1_prime", "source"], prof.rows())
    write_keyvalues(out / "minimum.txt", [
        ("verdict", str(prof.verdict)),
        ("x_star", float(prof.x_star)), ("mu0", float(prof.mu0)),
        ("kappa", float(prof.kappa)), ("kappa_error", float(prof.kappa_error)),
        ("samples", len(prof.x)), ("range", prof.range),
    ])
    if not prof.verdict.satisfied:
        raise HypothesisViolation(str(prof.verdict))
    return prof


def _require_satisfied(kv):
    if kv["verdict"] != "satisfied":
        raise HypothesisViolation(kv["verdict"])


def stage_effective(cfg, out):
    mn = read_kv(out / "minimum.txt")
    _require_satisfied(mn)
    x_star = float(mn["x_star"])
    F, A = cfg.F, cfg.A
    ce = first_eigenpair(F, A, x_star, cfg.cell)
    N1 = solve_corrector(ce, A, 1)
    N2 = solve_corrector(ce, A, 2)
    ae = a_eff(ce, A, N1, N2)
    ceff = c_eff(ce, F, A, delta=cfg.delta, grid=cfg.cell)
    full = [float(v) for v in np.asarray(ae.full).ravel()]
    write_keyvalues(out / "model.txt", [
        ("verdict", "satisfied"), ("x_star", x_star), ("mu0", float(mn["mu0"])),
        ("kappa", float(mn["kappa"])), ("a_eff", float(ae.value)),
        ("A_eff_full", full), ("a_eff_flux", float(ae.flux_form)),
        ("a_eff_upper", float(ae.upper_bound)), ("c_eff", float(ceff.value)),
        ("c_eff_direct", float(ceff.direct)), ("c_eff_estimate", float(ceff.estimate)),
    ])
    write_csv(out / "effective.csv",
              ["x_star", "a_eff", "A11", "A12", "A21", "A22", "a_eff_upper", "c_eff",
               "c_eff_direct"],
              [(x_star, ae.value, *full, ae.upper_bound, ceff.value, ceff.direct)])


def load_model(cfg, out, with_cell=False):
    kv = read_kv(out / "model.txt")
    _require_satisfied(kv)
    a, c, kappa = float(kv["a_eff"]), float(kv["c_eff"]), float(kv["kappa"])
    osc = oscillator(a, c, kappa, cfg.modes_J, cfg.oscillator_L, cfg.oscillator_n)
    model = EffectiveModel(a, np.array(_floats(kv["A_eff_full"])).reshape(2, 2), c,
                           float(kv["mu0"]), kappa, float(kv["x_star"]), osc, {})
    if with_cell:
        model.diagnostics["cell"] = first_eigenpair(cfg.F, cfg.A, model.x_star, cfg.cell)
    return model


def stage_oscillator(cfg, out):
    model = load_model(cfg, out)
    osc = model.osc
    write_csv(out / "oscillator.csv", ["j", "nu", "reference"],
              [(j + 1, osc.nu[j], osc.reference[j]) for j in range(len(osc.nu))])
    write_keyvalues(out / "oscillator.txt", [
        ("L", float(osc.L)), ("n", cfg.oscillator_n),
        ("nu", [float(v) for v in osc.nu]),
    ])
    return osc


def stage_predict(cfg, out, eps=None):
    model = load_model(cfg, out)
    read_kv(out / "oscillator.txt")
    eps_list = cfg.eps_list if eps is None else (float(eps),)
    rows = [(e, i, predict(model, e, i)) for e in eps_list for i in range(1, cfg.k + 1)]
    write_csv(out / "predict.csv", ["eps", "i", "prediction"], rows)


def stage_direct(cfg, out, eps=None):
    d = out / "direct"
    d.mkdir(exist_ok=True)
    eps_list = cfg.eps_list if eps is None else (float(eps),)
    for e in eps_list:
        res = solve_thin(cfg.F, cfg.A, e, cfg.k, cfg.thin)
        write_csv(d / f"{_eps_tag(e)}.csv", ["eps", "i", "lambda", "residual"],
                  [(e, i + 1, res.lambdas[i], res.residuals[i]) for i in range(res.k)])
        np.save(d / f"{_eps_tag(e)}.npy", res.u)
    rows = []
    for f in sorted(d.glob("eps_*.csv"), key=lambda p: -float(p.name[4:-4])):
        rows += [(float(r["eps"]), int(r["i"]), float(r["lambda"]), float(r["residual"]))
                 for r in read_csv(f)]
    write_csv(out / "direct.csv", ["eps", "i", "lambda", "residual"], rows)


def load_direct(cfg, out, eps):
    base = out / "direct" / _eps_tag(eps)
    rows = read_csv(f"{base}.csv")
    npy = Path(f"{base}.npy")
    if not npy.exists():
        raise MissingArtifact(f"missing stage output {npy}")
    u = np.load(npy)
    mesh = build_thin_mesh(cfg.F, eps, cfg.thin.nodes_per_period, cfg.thin.n2,
                           cfg.thin.y2_box, node_cap=cfg.thin.node_cap)
    if u.shape[0] != mesh.grid.n or u.shape[1] < cfg.k:
        raise MissingArtifact(f"{npy} does not match the configured thin mesh")
    M = assemble_mass(mesh).diagonal()
    lam = np.array([float(r["lambda"]) for r in rows])
    res = np.array([float(r["residual"]) for r in rows])
    return DirectSolveResult(float(eps), lam, u, mesh, res, M)


REPORT_COLUMNS = ["eps", "i", "lambda", "prediction", "nu_residual", "localization_error"]


def stage_validate(cfg, out):
    model = load_model(cfg, out, with_cell=True)
    eps_list = check_eps_list(cfg.eps_list)
    results = {e: load_direct(cfg, out, e) for e in eps_list}
    rep = convergence_report(cfg.F, cfg.A, eps_list, cfg.k, model, cfg.thin,
                             model.diagnostics["cell"], results)
    write_csv(out / "validation.csv", REPORT_COLUMNS,
              [[r[c] for c in REPORT_COLUMNS] for r in rep.rows])
    write_report(out, cfg, model, rep)
    return rep


def write_report(out, cfg, model, rep):
    r1 = rep.column("nu_residual")
    L1 = rep.column("localization_error")
    items = [("name", cfg.name), ("verdict", rep.verdict)]
    if model is not None:
        items += [("x_star", model.x_star), ("mu0", model.mu0), ("kappa", model.kappa),
                  ("a_eff", model.a_eff), ("c_eff", model.c_eff),
                  ("nu", [float(v) for v in model.nu])]
    items += [("eps", [float(e) for e in rep.results]),
              ("nu_residual_1", [float(v) for v in r1]),
              ("localization_error_1", [float(v) for v in L1]),
              ("negative_control", [float(v) for v in rep.negative_control.values()]),
              ("trend_nu_residual", float(rep.trend_residual)),
              ("trend_localization", float(rep.trend_localization))]
    if model is not None and len(r1) >= 2:
        items += [("residual_decreasing", int(all(abs(b) < abs(a) for a, b in zip(r1, r1[1:])))),
                  ("localization_decreasing", int(all(b < a for a, b in zip(L1, L1[1:]))))]
    write_keyvalues(out / "report.txt", items)


def write_violation_report(out, cfg, verdict):
    write_keyvalues(out / "report.txt", [("name", cfg.name), ("verdict", verdict)])


# --------------------------------------------------------------------------
# orchestration

def run_pipeline(cfg, out=None):
    """Run every stage in order; returns the :class:`ValidationReport`.

    A failed hypothesis writes a report carrying the verdict and raises
    :class:`HypothesisViolation` after it.
    """
    out = Path(cfg.out if out is None else out)
    out.mkdir(parents=True, exist_ok=True)
    stage_profile(cfg, out)
    try:
        stage_minimize(cfg, out)
    except HypothesisViolation as exc:
        write_violation_report(out, cfg, str(exc))
        raise
    stage_effective(cfg, out)
    stage_oscillator(cfg, out)
    stage_predict(cfg, out)
    stage_direct(cfg, out)
    return stage_validate(cfg, out)


def _dispatch(args, cfg, out):
    cmd = args.command
    if cmd == "run":
        return run_pipeline(cfg, out)
    if cmd == "cell-eigen":
        return stage_cell_eigen(cfg, out, args.x1)
    if cmd == "profile":
        return stage_profile(cfg, out)
    if cmd == "minimize":
        return stage_minimize(cfg, out)
    if cmd == "effective":
        return stage_effective(cfg, out)
    if cmd == "oscillator":
        return stage_oscillator(cfg, out)
    if cmd == "predict":
        return stage_predict(cfg, out, args.eps)
    if cmd == "direct":
        return stage_direct(cfg, out, args.eps)
    if cmd == "validate":
        return stage_validate(cfg, out)
    raise ConfigError(f"unknown subcommand {cmd!r}")


def build_parser():
    p = argparse.ArgumentParser(prog="thinspec",
                                description="Spectral asymptotics in thin periodic domains.")
    p.add_argument("command", choices=STAGES + ("run",))
    p.add_argument("--config", required=True,
                   help="config file, or a bundled name: " + ", ".join(cfgmod.bundled_names()))
    p.add_argument("--x1", type=float, default=None)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--out", default=None, help="output directory (overrides output.dir)")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load(args.config)
        out = Path(args.out) if args.out is not None else Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        _dispatch(args, cfg, out)
    except HypothesisViolation as exc:
        print(f"verdict: violated({exc})" if "(" not in str(exc) else f"verdict: {exc}")
        return 2
    except ThinspecError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
