"""Flat ``key = value`` configuration files and the validated run settings."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .cell import CellGrid
from .coefficients import CoefficientMatrix
from .direct import ThinGrid
from .errors import ConfigError, ThinspecError
from .expr import parse

BUNDLED = Path(__file__).with_name("configs")


def read_keyvalues(text):
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Later duplicates are an error rather than an override.
    """
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def format_real(v):
    return "%.17g" % float(v)


def write_keyvalues(path, items):
    """Write ``(key, value)`` pairs; floats at 17 significant digits."""
    lines = []
    for k, v in items:
        if isinstance(v, float):
            v = format_real(v)
        elif isinstance(v, (list, tuple)):
            v = ", ".join(format_real(x) if isinstance(x, float) else str(x) for x in v)
        lines.append(f"{k} = {v}")
    Path(path).write_bytes(("\n".join(lines) + "\n").encode())


@dataclass(frozen=True)
class RunConfig:
    """Validated settings of one pipeline run."""

    F_text: str
    A_texts: tuple          # (a11, a12, a21, a22)
    A_scale: float = 1.0
    y2_box: tuple = (-2.0, 2.0)
    cell: CellGrid = CellGrid()
    thin: ThinGrid = ThinGrid()
    oscillator_n: int = 4096
    oscillator_L: float | None = None
    modes_J: int = 5
    m: int = 17
    eps_list: tuple = (0.2, 0.1, 0.05)
    k: int = 2
    delta: float = 1e-3
    newton_tol: float = 1e-8
    out: str = "out"
    name: str = "run"

    @property
    def F(self):
        return parse(self.F_text)

    @property
    def A(self):
        A = CoefficientMatrix.from_entries(*self.A_texts)
        return A.scaled(self.A_scale) if self.A_scale != 1.0 else A

    def with_out(self, out):
        return dataclasses.replace(self, out=str(out))


def _real(s):
    try:
        return float(s)
    except ValueError:
        raise ConfigError(f"not a real number: {s!r}") from None


def _int(s):
    try:
        v = float(s)
    except ValueError:
        raise ConfigError(f"not an integer: {s!r}") from None
    if v != int(v):
        raise ConfigError(f"not an integer: {s!r}")
    return int(v)


def _reals(s):
    return tuple(_real(x) for x in s.split(",") if x.strip())


KEYS = {
    "name": str,
    "problem.F": str,
    "problem.A.a11": str, "problem.A.a12": str, "problem.A.a21": str, "problem.A.a22": str,
    "problem.A.scale": _real,
    "geometry.y2_box": _reals,
    "grid.cell.n1": _int, "grid.cell.n2": _int,
    "grid.thin.nodes_per_period": _int, "grid.thin.n2": _int, "grid.thin.node_cap": _int,
    "grid.oscillator.n": _int, "grid.oscillator.L": str,
    "profile.m": _int,
    "model.J": _int,
    "validate.eps_list": _reals, "validate.k": _int,
    "tolerances.delta": _real, "tolerances.newton": _real,
    "output.dir": str,
}
REQUIRED = ("problem.F", "problem.A.a11", "problem.A.a12", "problem.A.a22")


def config_from_dict(kv, base_dir=None):
    unknown = sorted(set(kv) - set(KEYS))
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(unknown)}")
    missing = [k for k in REQUIRED if k not in kv]
    if missing:
        raise ConfigError(f"missing keys: {', '.join(missing)}")
    v = {k: KEYS[k](s) for k, s in kv.items()}
    box = v.get("geometry.y2_box", (-2.0, 2.0))
    if len(box) != 2 or not box[0] < box[1]:
        raise ConfigError(f"geometry.y2_box must be 'lo, hi' with lo < hi, got {box}")
    cell = CellGrid(v.get("grid.cell.n1", 128), v.get("grid.cell.n2", 128), box)
    thin = ThinGrid(v.get("grid.thin.nodes_per_period", 32),
                    v.get("grid.thin.n2", cell.n2), box,
                    v.get("grid.thin.node_cap", ThinGrid.node_cap))
    L = v.get("grid.oscillator.L", "auto")
    L = None if L == "auto" else _real(L)
    a12 = v["problem.A.a12"]
    cfg = RunConfig(
        F_text=v["problem.F"],
        A_texts=(v["problem.A.a11"], a12, v.get("problem.A.a21", a12), v["problem.A.a22"]),
        A_scale=v.get("problem.A.scale", 1.0),
        y2_box=box, cell=cell, thin=thin,
        oscillator_n=v.get("grid.oscillator.n", 4096), oscillator_L=L,
        modes_J=v.get("model.J", 5), m=v.get("profile.m", 17),
        eps_list=v.get("validate.eps_list", (0.2, 0.1, 0.05)), k=v.get("validate.k", 2),
        delta=v.get("tolerances.delta", 1e-3), newton_tol=v.get("tolerances.newton", 1e-8),
        out=v.get("output.dir", "out"), name=v.get("name", "run"),
    )
    return validate(cfg, base_dir)


def validate(cfg, base_dir=None):
    """Check expressions, symmetry and ranges; returns ``cfg`` (with the
    output directory resolved against ``base_dir``)."""
    try:
        cfg.F
        A = cfg.A
    except ConfigError:
        raise
    except ThinspecError as exc:
        raise ConfigError(f"bad expression: {exc}") from exc
    if A.scale <= 0:
        raise ConfigError("problem.A.scale must be positive")
    _decreasing(cfg.eps_list)
    if any(not 0 < e <= 0.5 for e in cfg.eps_list):
        raise ConfigError("eps values must lie in (0, 1/2]")
    if cfg.k < 1 or cfg.modes_J < cfg.k:
        raise ConfigError("need 1 <= validate.k <= model.J")
    if cfg.m < 9:
        raise ConfigError("profile.m must be at least 9")
    if cfg.thin.nodes_per_period < 16:
        raise ConfigError("grid.thin.nodes_per_period must be at least 16")
    if base_dir is not None and not Path(cfg.out).is_absolute():
        cfg = cfg.with_out(Path(base_dir) / cfg.out)
    return cfg


def _decreasing(eps):
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigError("eps values must be strictly decreasing")


def load(path):
    """Read a config file, or a bundled config by name (``h-strip`` ...)."""
    p = Path(path)
    if not p.exists():
        bundled = BUNDLED / f"{path}.cfg"
        if not bundled.exists():
            raise ConfigError(f"no config file {path!r}")
        p = bundled
    return config_from_dict(read_keyvalues(p.read_text()), base_dir=Path.cwd())


def bundled_names():
    return sorted(p.stem for p in BUNDLED.glob("*.cfg"))
