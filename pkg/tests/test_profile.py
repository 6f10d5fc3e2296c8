import numpy as np
import pytest

from thinspec.cell import CellGrid, first_eigenpair
from thinspec.coefficients import CoefficientMatrix
from thinspec.errors import MinOnBoundary, NegativeCurvature
from thinspec.profile import (MuProfile, Verdict, analyse_profile, check_hypothesis,
                              chebyshev_points, minimize, mu1_prime, mu1_second,
                              sample_profile, worker_count)

from conftest import PI2, h, strip

G64 = CellGrid(64, 64)


def test_chebyshev_points():
    x = chebyshev_points(17)
    assert x[0] == -0.5 and x[-1] == 0.5 and x[8] == 0.0
    assert np.all(np.diff(x) > 0)
    np.testing.assert_allclose(x, -x[::-1], atol=1e-16)


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("THINSPEC_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("THINSPEC_THREADS", "0")
    assert worker_count() == 1


def test_prime_vanishes_without_x1_dependence(flat, identity):
    assert abs(mu1_prime(flat, identity, 0.2, G64)) <= 1e-6


def test_prime_h_strip_closed_form(hstrip, identity):
    x = 0.25
    exact = 2 * PI2 * x / h(x) ** 3
    assert exact == pytest.approx(5.428, abs=1e-3)
    assert mu1_prime(hstrip, identity, x, CellGrid(128, 128)) == pytest.approx(exact, rel=1e-2)


def test_prime_coefficient_term_only(flat):
    A = CoefficientMatrix.parse("1 + x1", "0", "1 + x1")
    # mu1 = (1 + x1) pi^2 up to the discretization of pi^2
    ce = first_eigenpair(flat, A, 0.3, G64)
    assert mu1_prime(flat, A, 0.3, G64, ce=ce) == pytest.approx(ce.mu1 / 1.3, rel=1e-10)
    assert ce.mu1 / 1.3 == pytest.approx(PI2, rel=1e-3)


def test_prime_matches_central_difference_on_wavy_cell():
    from thinspec.expr import parse
    F = parse("(y2 - 0.15*sin(2*pi*y1)*(1+x1))*(1 - x1^2/2 + 0.1*cos(2*pi*y1) - y2)")
    A = CoefficientMatrix.parse("1+0.3*x1+0.2*sin(2*pi*y1)", "0.1*cos(2*pi*y1)*(1+x1)",
                                "1+0.25*y2*x1^2")
    x, d = 0.1, 1e-3
    g = CellGrid(96, 96)
    fd = (first_eigenpair(F, A, x + d, g).mu1 - first_eigenpair(F, A, x - d, g).mu1) / (2 * d)
    p = mu1_prime(F, A, x, g)
    assert abs(p - fd) <= 1e-2 * (1 + abs(fd))


def test_h_strip_samples_and_minimum(h_model):
    prof = h_model.diagnostics["profile"]
    ref = PI2 / h(prof.x) ** 2
    assert np.max(np.abs(prof.mu - ref) / prof.mu) <= 1e-3
    assert abs(prof.x_star) <= 1e-6
    assert prof.mu0 == pytest.approx(PI2, rel=1e-3)
    assert prof.kappa == pytest.approx(2 * PI2, rel=1e-2)
    assert prof.verdict.satisfied and str(prof.verdict) == "satisfied"
    assert np.all(prof.mu0 <= prof.mu + 1e-12)
    assert prof.rows()[0][3] == "sample"


def test_translation_equivariance(identity):
    a = analyse_profile(strip("1-x1^2/2"), identity, 17, G64)
    b = analyse_profile(strip("1-(x1-0.1)^2/2"), identity, 17, G64)
    assert b.verdict.satisfied
    assert abs((b.x_star - a.x_star) - 0.1) <= 1e-6
    assert abs(b.x_star - 0.1) <= 1e-5


def test_monotone_minimum_on_boundary(identity):
    F = strip("1-x1/2")
    prof = sample_profile(F, identity, 9, CellGrid(32, 32), derivatives=False)
    with pytest.raises(MinOnBoundary):
        minimize(prof, F, identity, CellGrid(32, 32))


def test_second_derivative_oracles(flat):
    A = CoefficientMatrix.parse("1 + x1^2", "0", "1 + x1^2")
    k, err = mu1_second(flat, A, 0.0, G64)
    assert k == pytest.approx(2 * PI2, rel=1e-2)
    assert err < 1e-2 * k
    with pytest.raises(NegativeCurvature):
        mu1_second(flat, CoefficientMatrix.identity(), 0.0, G64)


def test_scaling_is_exact(hstrip):
    A = CoefficientMatrix.parse("1 + 0.2*sin(2*pi*y1)", "0", "1")
    t = 2.5
    g = CellGrid(32, 32)
    p1, p2 = mu1_prime(hstrip, A, 0.2, g), mu1_prime(hstrip, A.scaled(t), 0.2, g)
    assert abs(p2 - t * p1) <= 1e-12 * abs(t * p1)
    k1, _ = mu1_second(hstrip, A, 0.0, g)
    k2, _ = mu1_second(hstrip, A.scaled(t), 0.0, g)
    assert abs(k2 - t * k1) <= 1e-12 * abs(t * k1)


def _fake(mu, x_star=0.0, kappa=1.0):
    x = chebyshev_points(len(mu))
    mu = np.asarray(mu, float)
    return MuProfile(x, mu, x_star=x_star, mu0=float(mu.min()), kappa=kappa)


def test_check_hypothesis_logic():
    x = chebyshev_points(17)
    assert check_hypothesis(_fake(1 + x ** 2)) == Verdict(True)
    assert str(check_hypothesis(_fake(np.ones(17)))) == "violated(flat)"
    assert str(check_hypothesis(_fake(1 + (x - 0.5) ** 2, 0.5))) == "violated(boundary)"
    assert str(check_hypothesis(_fake(1 + x ** 2, kappa=-1.0))) == "violated(negative-curvature)"
    two = 1 + (x ** 2 - 0.09) ** 2
    k = int(np.argmin(two))
    two[16 - k] = two[k]                        # exact mirror minimum
    assert str(check_hypothesis(_fake(two, x[k]))) == "violated(non-unique)"


def test_two_bump_verdict_and_flat_verdict(flat, identity):
    F = strip("1-(x1^2-0.04)^2")
    prof = analyse_profile(F, identity, 17, G64)
    assert str(prof.verdict) == "violated(non-unique)"
    assert str(analyse_profile(flat, identity, 9, CellGrid(16, 16)).verdict) == "violated(flat)"
