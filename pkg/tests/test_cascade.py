import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfcascade import engine, verify
from rfcascade.cascade import (STIncrement, SpatialIncrement, cascade_spatial, cascade_st,
                               cascade_st_equal_v, cascade_timecausal, compose_check,
                               criterion_residuals, increment_joint_cov)
from rfcascade.params import CovMat2, SpatialParams, STParams, joint_cov, smoothing_key

I = CovMat2.identity()


def sp(C):
    return SpatialParams(1.0, C)


def test_cascade_spatial_examples():
    inc = cascade_spatial(sp(I), sp(CovMat2(2, 0, 2)))
    assert inc.feasible and inc.delta_prod == I
    inc = cascade_spatial(sp(CovMat2(2, 0, 1)), sp(CovMat2(1, 0, 2)))
    assert not inc.feasible
    np.testing.assert_allclose(inc.delta_prod.as_array(), np.diag([-1.0, 1.0]))
    inc = cascade_spatial(sp(CovMat2(2, 1, 2)), sp(CovMat2(3, 1, 3)))
    assert inc.feasible and inc.delta_prod == I


def test_cascade_st_worked_example():
    pi = STParams(1.0, I, 1.0, (0.0, 0.0))
    pj = STParams(1.0, CovMat2(4, 0, 2), 2.0, (1.0, 0.0))
    inc = cascade_st(pi, pj)
    assert inc.feasible and not inc.degenerate_tau
    assert inc.delta_tau == 1.0
    np.testing.assert_allclose(inc.delta_v, (2.0, 0.0))
    np.testing.assert_allclose(inc.delta_prod.as_array(), np.eye(2))
    # six criterion equations, e.g. Sigma_j11 s_j + tau_j v_j1^2 = 6 = 1 + 1*4 + 1 + 0
    assert np.max(criterion_residuals(inc, pi, pj)) <= 1e-15


def test_cascade_st_identity_and_decrease():
    p = STParams(1.3, CovMat2(1.0, 0.2, 0.7), 2.0, (0.4, -0.1))
    inc = cascade_st(p, p)
    assert inc.feasible and inc.degenerate_tau and inc.delta_tau == 0
    assert inc.delta_v == p.v
    np.testing.assert_allclose(inc.delta_prod.as_array(), 0, atol=1e-15)
    inc = cascade_st(STParams(1.0, I, 2.0), STParams(4.0, I, 1.0))
    assert inc.delta_tau == -1 and not inc.feasible


def test_cascade_st_equal_tau_branch():
    a = STParams(1.0, I, 2.0, (0.5, 0.0))
    assert not cascade_st(a, STParams(2.0, I, 2.0, (0.2, 0.0))).feasible
    inc = cascade_st(a, STParams(2.0, I, 2.0, (0.5, 0.0)))
    assert inc.feasible and inc.degenerate_tau
    with pytest.raises(ValueError):
        cascade_st(STParams(1.0, I, 1.0, c=2.0), STParams(1.0, I, 4.0, c=2.0))


def test_cascade_st_equal_v():
    v = (1.0, 1.0)
    inc = cascade_st_equal_v(STParams(1.0, I, 1.0, v), STParams(2.0, I, 2.0, v))
    assert inc.delta_tau == 1 and inc.feasible and inc.delta_prod == I
    inc = cascade_st_equal_v(STParams(1.0, I, 1.0, v), STParams(1.0, I, 3.0, v))
    assert inc.feasible and inc.delta_prod == CovMat2(0, 0, 0)
    pi = STParams(1.2, CovMat2(1.0, 0.1, 0.9), 1.5, (0.3, -0.2))
    pj = STParams(2.0, CovMat2(1.1, 0.0, 1.0), 2.5, (0.3, -0.2))
    a, b = cascade_st_equal_v(pi, pj), cascade_st(pi, pj)
    assert a.feasible == b.feasible
    assert math.isclose(a.delta_tau, b.delta_tau, rel_tol=1e-14)
    np.testing.assert_allclose(a.delta_v, b.delta_v, rtol=1e-14)
    np.testing.assert_allclose(a.delta_prod.as_array(), b.delta_prod.as_array(), atol=1e-14)
    with pytest.raises(ValueError):
        cascade_st_equal_v(pi, STParams(2.0, I, 2.5, (0.0, 0.0)))


def test_cascade_timecausal_examples():
    inc = cascade_timecausal(STParams(1.0, I, 1.0, c=2.0), STParams(1.0, I, 4.0, c=2.0))
    assert math.isclose(inc.mu, math.sqrt(3), rel_tol=1e-15)
    assert inc.feasible and inc.delta_prod == CovMat2(0, 0, 0)
    r2 = math.sqrt(2)
    inc = cascade_timecausal(STParams(1.0, I, 1.0, c=r2), STParams(1.0, I, 2.0 * (1 + 1e-14), c=r2))
    assert math.isclose(inc.mu, 1.0, rel_tol=1e-12)
    with pytest.raises(ValueError):
        cascade_timecausal(STParams(1.0, I, 1.0, c=2.0), STParams(1.0, I, 3.0, c=2.0))
    with pytest.raises(ValueError):
        cascade_timecausal(STParams(1.0, I, 1.0, (0.1, 0), c=2.0), STParams(1.0, I, 4.0, c=2.0))
    with pytest.raises(ValueError):
        cascade_timecausal(STParams(1.0, I, 1.0), STParams(1.0, I, 4.0))


def test_compose_check_examples():
    rng = np.random.default_rng(5)
    for _ in range(20):
        pi, pj = verify._feasible_st_pair(rng)
        inc = cascade_st(pi, pj)
        assert inc.feasible
        back = compose_check(inc, pi)
        np.testing.assert_allclose(smoothing_key(back), smoothing_key(pj), rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(joint_cov(back), increment_joint_cov(inc) + joint_cov(pi),
                                   atol=1e-12 * np.abs(joint_cov(back)).max())
    p = SpatialParams(2.0, CovMat2(1.0, 0.3, 0.5))
    assert compose_check(cascade_spatial(p, p), p) == p
    with pytest.raises(ValueError):
        compose_check(SpatialIncrement(CovMat2(-1, 0, 1), False), p)


def random_increment(rng):
    dC = verify.random_sigma(rng).scaled(rng.uniform(0.2, 2.0))
    return STIncrement(rng.uniform(0.2, 3.0), tuple(rng.uniform(-1, 1, 2)), dC, True)


@settings(max_examples=50)
@given(st.integers(0, 2 ** 31))
def test_transitivity_on_products(seed):
    # i -> j -> k composes to i -> k on (s Sigma, tau, tau v)
    rng = np.random.default_rng(seed)
    pi = verify.random_params("st_affine", rng)
    a, b = random_increment(rng), random_increment(rng)
    pj = compose_check(a, pi)
    pk = compose_check(b, pj)
    ik = cascade_st(pi, pk)
    assert ik.feasible
    np.testing.assert_allclose(joint_cov(pk), joint_cov(pi) + increment_joint_cov(a) + increment_joint_cov(b),
                               rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(increment_joint_cov(ik), increment_joint_cov(a) + increment_joint_cov(b),
                               rtol=1e-9, atol=1e-9)


def test_isotropic_degeneracy():
    rng = np.random.default_rng(9)
    for _ in range(20):
        ti = rng.uniform(0.5, 2)
        tj = ti + rng.uniform(0.5, 2)
        vi, vj = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
        pi = STParams(rng.uniform(0.5, 1), I, ti, tuple(vi))
        pj = STParams(rng.uniform(3, 5), I, tj, tuple(vj))
        D = cascade_st(pi, pj).delta_prod
        assert max(abs(D.s12), abs(D.s11 - D.s22)) > 1e-9


def test_spatial_convolution_realization():
    p1 = SpatialParams(1.0, CovMat2(1.0, 0.2, 0.8))
    p2 = SpatialParams(2.5, CovMat2(1.0, 0.3, 1.0))
    inc = cascade_spatial(p1, p2)
    h = 0.25
    k1 = engine.sample(p1, "spatial", h, truncation=6)
    kd = engine.sample_increment(inc, h, truncation=6)
    k2 = engine.sample(p2, "spatial", h, truncation=6)
    n = 2 * max(k2.values.shape) + 1
    delta = np.zeros((n, n))
    delta[n // 2, n // 2] = 1.0 / (h * h)
    a = engine.convolve(engine.convolve(delta, k1), kd)
    b = engine.convolve(delta, k2)
    assert engine.compare(a, b)["rel_l2"] <= 1e-3


def test_st_convolution_realization():
    pi = STParams(1.0, CovMat2(1.0, 0.1, 0.9), 1.0, (0.2, 0.0))
    pj = STParams(1.0, CovMat2(2.2, 0.3, 2.0), 2.2, (0.4, -0.2))
    inc = cascade_st(pi, pj)
    assert inc.feasible
    h = (0.5, 0.5, 0.5)
    ki, kd, kj = (engine.sample(pi, "st", h), engine.sample_increment(inc, h), engine.sample(pj, "st", h))
    n = [2 * s + 1 for s in kj.values.shape]
    delta = np.zeros(n)
    delta[tuple(m // 2 for m in n)] = 1.0 / 0.5 ** 3
    a = engine.convolve(engine.convolve(delta, ki), kd)
    b = engine.convolve(delta, kj)
    assert engine.compare(a, b)["rel_l2"] <= 1e-3


def test_timecausal_convolution_realization():
    pi = STParams(1.0, CovMat2(1.0, 0.0, 1.0), 1.0, (0.3, 0.0), 2.0)
    pj = STParams(1.0, CovMat2(2.0, 0.2, 1.5), 4.0, (0.3, 0.0), 2.0)
    inc = cascade_timecausal(pi, pj)
    h = (0.5, 0.5, 0.5)
    ki, kd, kj = (engine.sample(pi, "timecausal", h), engine.sample_increment(inc, h),
                  engine.sample(pj, "timecausal", h))
    nt = kj.values.shape[0]
    ny, nx = (2 * s + 1 for s in kj.values.shape[1:])
    delta = np.zeros((nt, ny, nx))
    delta[0, ny // 2, nx // 2] = 1.0 / 0.5 ** 3
    a = engine.convolve(engine.convolve(delta, ki), kd)
    b = engine.convolve(delta, kj)
    assert engine.compare(a, b)["rel_l2"] <= 1e-3


def test_increment_joint_cov_layout():
    inc = STIncrement(2.0, (1.0, -0.5), CovMat2(1.0, 0.1, 0.5), True)
    np.testing.assert_allclose(increment_joint_cov(inc),
                               [[3.0, -0.9, 2.0], [-0.9, 1.0, -1.0], [2.0, -1.0, 2.0]])
