import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfcascade import engine
from rfcascade.cascade import cascade_st, compose_check, increment_joint_cov
from rfcascade.params import (CovMat2, SpatialParams, STParams, cov_from_axes, eccentricity,
                              joint_cov, match_spatial, match_spatiotemporal, psd_check,
                              smoothing_equivalent)

pos = st.floats(0.2, 5.0)
angle = st.floats(0.0, 2 * math.pi)


def rot(a):
    return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])


def test_cov_from_axes_examples():
    np.testing.assert_allclose(cov_from_axes(2, 1, 0).as_array(), np.diag([4.0, 1.0]))
    np.testing.assert_allclose(cov_from_axes(2, 1, math.pi / 2).as_array(), np.diag([1.0, 4.0]), atol=1e-15)
    for phi in (0.0, 0.3, 2.0):
        np.testing.assert_allclose(cov_from_axes(1, 1, phi).as_array(), np.eye(2), atol=1e-15)


def test_cov_from_axes_matches_eigendecomposition():
    # independent route: R diag(l1, l2) R^T
    for s1, s2, phi in [(2.0, 0.5, 0.4), (1.3, 3.1, 2.2)]:
        R = rot(phi)
        want = R @ np.diag([s1 ** 2, s2 ** 2]) @ R.T
        np.testing.assert_allclose(cov_from_axes(s1, s2, phi).as_array(), want, rtol=1e-13, atol=1e-14)


def test_cov_from_axes_rejects_nonpositive():
    with pytest.raises(ValueError):
        cov_from_axes(0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        cov_from_axes(1.0, -1.0, 0.0)


@given(pos, pos, angle)
def test_cov_from_axes_pd_and_det(s1, s2, phi):
    C = cov_from_axes(s1, s2, phi)
    assert C.is_pd()
    assert math.isclose(C.det, s1 ** 2 * s2 ** 2, rel_tol=1e-12)


def test_eccentricity():
    assert eccentricity(4, 4) == 1
    assert eccentricity(2, 4) == 2
    assert eccentricity(1, 2) == 2
    with pytest.raises(ValueError):
        eccentricity(0, 1)


def test_joint_cov_examples():
    np.testing.assert_allclose(joint_cov(STParams(1, CovMat2.identity(), 1, (1, 0))),
                               [[2, 0, 1], [0, 1, 0], [1, 0, 1]])
    np.testing.assert_allclose(joint_cov(STParams(1, CovMat2.identity(), 1, (0, 0))), np.eye(3))
    np.testing.assert_allclose(joint_cov(STParams(2, CovMat2(1, 0, 2), 3, (0, 1))),
                               [[2, 0, 0], [0, 7, 3], [0, 3, 3]])
    with pytest.raises(NotImplementedError):
        joint_cov(STParams(1, CovMat2.identity(), 1, (0, 0), 2.0))


def empirical_moments(k):
    vals = k.values * k.cell
    t, x2, x1 = np.meshgrid(k.coords(0), k.coords(1), k.coords(2), indexing="ij")
    X = np.stack([x1, x2, t])
    m = np.array([(vals * a).sum() for a in X]) / vals.sum()
    d = X - m[:, None, None, None]
    return np.array([[(vals * a * b).sum() for b in d] for a in d]) / vals.sum()


@pytest.mark.parametrize("p", [STParams(1, CovMat2.identity(), 1, (1, 0)),
                               STParams(2, CovMat2(1, 0, 2), 3, (0, 1))])
def test_joint_cov_matches_sampled_moments(p):
    k = engine.sample(p, "st", (0.2, 0.25, 0.25), truncation=6)
    emp = empirical_moments(k)
    J = joint_cov(p)
    assert np.max(np.abs(emp - J)) <= 1e-3 * np.max(np.abs(J))


def test_match_spatial_examples():
    p = SpatialParams(1.0, CovMat2.identity())
    q = match_spatial(p, 2.0, np.eye(2))
    assert q.s == 4 and q.sigma == CovMat2.identity()
    q = match_spatial(p, 1.0, rot(0.7))
    np.testing.assert_allclose(q.sigma.as_array(), np.eye(2), atol=1e-15)
    q = match_spatial(SpatialParams(1.0, CovMat2(1, 0, 4)), 1.0, np.diag([2.0, 1.0]))
    np.testing.assert_allclose(q.sigma.as_array(), np.diag([4.0, 4.0]))
    with pytest.raises(ValueError):
        match_spatial(p, 1.0, np.zeros((2, 2)))


mats = st.tuples(st.floats(0.3, 3), st.floats(-1, 1), st.floats(-1, 1), st.floats(0.3, 3)).map(
    lambda a: np.array([[a[0], a[1]], [a[2], a[3]]])).filter(lambda A: abs(np.linalg.det(A)) > 0.05)


@given(pos, pos, mats, mats)
def test_match_spatial_group_law(S1, S2, A1, A2):
    p = SpatialParams(1.3, CovMat2(1.5, 0.2, 0.8))
    twice = match_spatial(match_spatial(p, S1, A1), S2, A2)
    once = match_spatial(p, S1 * S2, A2 @ A1)
    assert smoothing_equivalent(twice, once, rtol=1e-12)


def test_match_spatiotemporal_examples():
    p = STParams(1.0, CovMat2.identity(), 1.0, (0.0, 0.0))
    assert smoothing_equivalent(match_spatiotemporal(p, 1, np.eye(2), (0, 0), 1), p)
    q = match_spatiotemporal(p, 1, np.eye(2), (1, 0), 1)
    assert q.tau == 1 and q.v == (1.0, 0.0)
    q = match_spatiotemporal(STParams(1.0, CovMat2.identity(), 1.0, (1.0, 0.0)), 1, np.eye(2), (0, 0), 2)
    assert q.tau == 4 and q.v == (0.5, 0.0)


def test_psd_check_examples():
    assert psd_check(CovMat2(1, 0, 1))
    assert not psd_check(CovMat2(-1, 0, 1))
    assert not psd_check(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert psd_check(np.zeros((3, 3)))
    # round-off on the cone boundary still counts as feasible
    assert psd_check(CovMat2(1.0, 1.0, 1.0 - 1e-15))


def test_params_validation():
    with pytest.raises(ValueError):
        SpatialParams(0.0)
    with pytest.raises(ValueError):
        SpatialParams(1.0, CovMat2(1, 2, 1))
    with pytest.raises(ValueError):
        STParams(1.0, tau=0.0)
    with pytest.raises(ValueError):
        STParams(1.0, c=1.0)


def test_smoothing_equivalence_uses_products():
    a = SpatialParams(2.0, CovMat2(1, 0.5, 1))
    b = SpatialParams(1.0, CovMat2(2, 1.0, 2))
    assert smoothing_equivalent(a, b)
    assert not smoothing_equivalent(a, SpatialParams(1.0, CovMat2(2, 1.0, 2.1)))


@settings(max_examples=50)
@given(st.floats(0.5, 3), st.floats(0.5, 3), st.floats(-1, 1), st.floats(-1, 1),
       st.floats(0.2, 3), st.floats(-1, 1), st.floats(-1, 1), pos, pos, angle)
def test_joint_cov_additive_under_cascade(ti, dt, v1, v2, s, dv1, dv2, a, b, phi):
    pi = STParams(1.0, CovMat2(1.0, 0.2, 1.5), ti, (v1, v2))
    dC = cov_from_axes(a, b, phi).scaled(s)
    dv = np.array([dv1, dv2])
    tj = ti + dt
    vj = (ti * np.array([v1, v2]) + dt * dv) / tj
    Cj = (pi.prod.as_array() + dC.as_array() + dt * np.outer(dv, dv)
          + ti * np.outer(pi.v, pi.v) - tj * np.outer(vj, vj))
    pj = STParams(1.0, CovMat2.from_array(Cj), tj, tuple(vj))
    inc = cascade_st(pi, pj)
    assert inc.feasible
    J = joint_cov(compose_check(inc, pi))
    np.testing.assert_allclose(J, increment_joint_cov(inc) + joint_cov(pi),
                               rtol=0, atol=1e-12 * np.abs(J).max())
