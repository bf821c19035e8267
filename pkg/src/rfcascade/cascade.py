"""Cascade algebra: incremental kernels between two parameter settings.

Increments carry the product ds*dSigma only; the split into a scale and a
covariance is not determined by the target parameters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import CovMat2, SpatialParams, STParams, psd_check

REL_EQ = 1e-12


@dataclass(frozen=True)
class SpatialIncrement:
    delta_prod: CovMat2
    feasible: bool


@dataclass(frozen=True)
class STIncrement:
    delta_tau: float
    delta_v: tuple
    delta_prod: CovMat2
    feasible: bool
    degenerate_tau: bool = False


@dataclass(frozen=True)
class TimeCausalIncrement:
    mu: float
    delta_prod: CovMat2
    v: tuple
    feasible: bool
    c: float = 2.0


def cascade_spatial(p1, p2) -> SpatialIncrement:
    d = p2.prod - p1.prod
    return SpatialIncrement(d, psd_check(d))


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= REL_EQ * max(abs(a), abs(b))


def cascade_st(pi: STParams, pj: STParams) -> STIncrement:
    """Solve T(pj) = dT * T(pi) for the incremental non-causal kernel dT."""
    if pi.causal or pj.causal:
        raise ValueError("cascade_st needs non-causal parameters")
    vi, vj = np.asarray(pi.v), np.asarray(pj.v)
    ti, tj = pi.tau, pj.tau
    Ci, Cj = pi.prod.as_array(), pj.prod.as_array()
    if _close(ti, tj):
        # the closed forms divide by tau_j - tau_i; only a pure spatial step survives
        mi, mj = ti * vi, tj * vj
        same = all(_close(a, b) or abs(a - b) <= REL_EQ * max(ti, tj) for a, b in zip(mi, mj))
        d = CovMat2.from_array(Cj + tj * np.outer(vj, vj) - Ci - ti * np.outer(vi, vi))
        return STIncrement(0.0, tuple(vi), d, bool(same and psd_check(d)), True)
    dtau = tj - ti
    dv = (tj * vj - ti * vi) / dtau
    w = vi - vj
    d = CovMat2.from_array(Cj - Ci + ti * tj * np.outer(w, w) / (ti - tj))
    return STIncrement(dtau, tuple(dv), d, bool(dtau >= 0 and psd_check(d)), False)


def cascade_st_equal_v(pi: STParams, pj: STParams, v=None) -> STIncrement:
    if v is None:
        v = pi.v
    if tuple(map(float, pi.v)) != tuple(map(float, v)) or tuple(map(float, pj.v)) != tuple(map(float, v)):
        raise ValueError("velocities of both parameter sets must equal the shared velocity")
    dtau = pj.tau - pi.tau
    d = pj.prod - pi.prod
    deg = _close(pi.tau, pj.tau)
    if deg:
        dtau = 0.0
    return STIncrement(dtau, tuple(map(float, v)), d, bool(dtau >= 0 and psd_check(d)), deg)


def cascade_timecausal(pi: STParams, pj: STParams, v=None) -> TimeCausalIncrement:
    """Adjacent-scale time-causal cascade: one truncated exponential plus a spatial increment."""
    if not (pi.causal and pj.causal) or pi.c != pj.c:
        raise ValueError("both parameter sets must be time-causal with the same c")
    c = pi.c
    if abs(pi.tau - pj.tau / (c * c)) > REL_EQ * pi.tau:
        raise ValueError("time-causal cascade is only defined between adjacent scales tau_i = tau_j / c^2")
    if pi.v != pj.v or (v is not None and tuple(map(float, v)) != pi.v):
        raise ValueError("time-causal cascade needs equal velocities")
    d = pj.prod - pi.prod
    mu = math.sqrt(c * c - 1.0) * math.sqrt(pi.tau)
    return TimeCausalIncrement(mu, d, pi.v, psd_check(d), c)


def _positive_prod(C: np.ndarray) -> CovMat2:
    m = CovMat2.from_array(C)
    if not m.is_pd():
        raise ValueError("composed covariance is not positive definite")
    return m


def compose_check(increment, base):
    """Parameters reached by applying a feasible increment to base (s kept from base)."""
    if not increment.feasible:
        raise ValueError("cannot compose an infeasible increment")
    if isinstance(increment, SpatialIncrement):
        C = base.prod.as_array() + increment.delta_prod.as_array()
        return SpatialParams(base.s, CovMat2.from_array(C / base.s))
    if isinstance(increment, TimeCausalIncrement):
        C = base.prod.as_array() + increment.delta_prod.as_array()
        c = increment.c
        tau = base.tau * c * c
        return STParams(base.s, CovMat2.from_array(C / base.s), tau, base.v, base.c)
    ti, vi = base.tau, np.asarray(base.v)
    dt, dv = increment.delta_tau, np.asarray(increment.delta_v)
    tj = ti + dt
    mj = ti * vi + dt * dv
    vj = mj / tj
    C = (base.prod.as_array() + increment.delta_prod.as_array()
         + dt * np.outer(dv, dv) + ti * np.outer(vi, vi) - tj * np.outer(vj, vj))
    _positive_prod(C)
    return STParams(base.s, CovMat2.from_array(C / base.s), tj, tuple(vj), None)


def increment_joint_cov(inc: STIncrement) -> np.ndarray:
    """Joint (x1, x2, t) covariance of the incremental kernel."""
    v = np.asarray(inc.delta_v)
    m = np.empty((3, 3))
    m[:2, :2] = inc.delta_prod.as_array() + inc.delta_tau * np.outer(v, v)
    m[:2, 2] = m[2, :2] = inc.delta_tau * v
    m[2, 2] = inc.delta_tau
    return m


def criterion_residuals(inc: STIncrement, pi: STParams, pj: STParams) -> np.ndarray:
    """Residuals of the six addition-law equations (relative to their magnitude)."""
    vi, vj, dv = np.asarray(pi.v), np.asarray(pj.v), np.asarray(inc.delta_v)
    lhs_c = pj.prod.as_array() + pj.tau * np.outer(vj, vj)
    rhs_c = inc.delta_prod.as_array() + inc.delta_tau * np.outer(dv, dv) + pi.prod.as_array() + pi.tau * np.outer(vi, vi)
    lhs_m = pj.tau * vj
    rhs_m = inc.delta_tau * dv + pi.tau * vi
    lhs = np.array([lhs_c[0, 0], lhs_c[0, 1], lhs_c[1, 1], lhs_m[0], lhs_m[1], pj.tau])
    rhs = np.array([rhs_c[0, 0], rhs_c[0, 1], rhs_c[1, 1], rhs_m[0], rhs_m[1], inc.delta_tau + pi.tau])
    scale = np.maximum(np.abs(lhs).max(), 1e-300)
    return np.abs(lhs - rhs) / scale
