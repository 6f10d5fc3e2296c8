"""Symmetric 2x2 coefficient matrices built from expressions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NotElliptic
from .expr import CoefficientExpr, parse


def _as_expr(e):
    if isinstance(e, CoefficientExpr):
        return e
    if isinstance(e, (int, float)):
        return parse(repr(float(e)))
    return parse(e)


@dataclass(frozen=True, eq=False)
class CoefficientMatrix:
    """``A(x1, y) = [[a11, a12], [a12, a22]]``."""

    a11: CoefficientExpr
    a12: CoefficientExpr
    a22: CoefficientExpr
    scale: float = 1.0

    @classmethod
    def from_entries(cls, a11, a12, a21, a22, probes=64, seed=0):
        """Build from four entries, rejecting a non-symmetric matrix.

        ``a12`` and ``a21`` must have equal text or agree on random probe
        points.
        """
        e11, e12, e21, e22 = (_as_expr(e) for e in (a11, a12, a21, a22))
        if str(e12) != str(e21):
            rng = np.random.default_rng(seed)
            pts = rng.uniform(-1.0, 1.0, size=(3, probes))
            v12 = e12.evaluate(*pts)
            v21 = e21.evaluate(*pts)
            if not np.allclose(v12, v21, rtol=1e-12, atol=1e-12):
                raise ConfigError(f"A is not symmetric: a12 = {e12.source!r}, a21 = {e21.source!r}")
        return cls(e11, e12, e22)

    @classmethod
    def identity(cls):
        return cls(parse("1"), parse("0"), parse("1"), 1.0)

    @classmethod
    def parse(cls, a11, a12, a22):
        return cls(_as_expr(a11), _as_expr(a12), _as_expr(a22))

    @property
    def has_cross(self):
        return not (self.a12.is_constant and self.a12.evaluate() == 0.0)

    def depends_on_x1(self):
        return any(e.depends_on("x1") for e in (self.a11, self.a12, self.a22))

    def scaled(self, t):
        return CoefficientMatrix(self.a11, self.a12, self.a22, self.scale * float(t))

    def diff(self, var="x1"):
        return CoefficientMatrix(self.a11.diff(var), self.a12.diff(var),
                                 self.a22.diff(var), self.scale)

    def entries(self, x1, y1, y2):
        """Return ``(a11, a12, a22)`` evaluated elementwise."""
        shape = np.broadcast(np.asarray(x1), np.asarray(y1), np.asarray(y2)).shape
        out = []
        for e in (self.a11, self.a12, self.a22):
            v = e.evaluate(x1, y1, y2)
            out.append(self.scale * np.broadcast_to(np.asarray(v, dtype=float), shape))
        return tuple(out)

    def check_elliptic(self, x1, y1, y2, alpha=1e-12):
        """Raise :class:`NotElliptic` at the first sampled point whose
        smallest eigenvalue is below ``alpha``."""
        a11, a12, a22 = self.entries(x1, y1, y2)
        tr = a11 + a22
        disc = np.sqrt(np.maximum(((a11 - a22) / 2.0) ** 2 + a12 ** 2, 0.0))
        lam_min = tr / 2.0 - disc
        bad = np.flatnonzero(np.ravel(lam_min) < alpha)
        if bad.size:
            k = bad[0]
            pts = [np.ravel(np.broadcast_to(np.asarray(v, dtype=float), np.shape(lam_min)))[k]
                   for v in (x1, y1, y2)]
            raise NotElliptic(
                f"A is not elliptic at (x1, y1, y2) = {tuple(pts)}: "
                f"min eigenvalue {np.ravel(lam_min)[k]:.3e}", point=tuple(pts))
        return float(np.min(lam_min)) if lam_min.size else np.inf

    def as_text(self):
        return (str(self.a11), str(self.a12), str(self.a22))
