"""Closed-form derivative ratios (derivative of kernel) / (kernel).

Each family has a table of rational expressions, one per derivative index. Indices
are strings: coordinate orders such as ``"x1"``, ``"x1x2"``, ``"x1tbar"``,
``"tbartbar"`` and parameter tags ``"s"``, ``"S11"``, ``"S12"``, ``"S22"``,
``"tau"``, ``"v1"``, ``"v2"``. ``tbar`` is the velocity-adapted time derivative.
"""
from __future__ import annotations

import math

import numpy as np

from .kernels import affine_gauss, default_sampler, st_gauss, st_limit
from .params import SpatialParams, STParams

FAMILIES = ("spatial", "st_iso", "st_affine", "timecausal")

PARAM_TAGS = ("s", "S11", "S12", "S22", "tau", "v1", "v2")

TABLES = {
    "spatial": ("x1", "x2", "x1x1", "x1x2", "x2x2", "s", "S11", "S12", "S22"),
    "st_iso": ("x1", "x2", "t", "tbar", "x1x1", "x1x2", "x2x2", "x1t", "x2t", "x1tbar",
               "x2tbar", "tt", "tbartbar", "s", "tau", "v1", "v2"),
    "st_affine": ("x1", "x2", "t", "tbar", "x1x1", "x1x2", "x2x2", "x1tbar", "x2tbar",
                  "tbartbar", "s", "S11", "S12", "S22", "tau", "v1", "v2"),
    "timecausal": ("x1", "x2", "x1x1", "x1x2", "x2x2", "s", "S11", "S12", "S22", "v1", "v2"),
}


def supported(family: str, idx: str) -> bool:
    return idx in TABLES[family]


def hermite_he(m: int, x):
    """Probabilists' Hermite polynomial He_m by the three-term recurrence."""
    if m < 0:
        raise ValueError("order must be nonnegative")
    x = np.asarray(x, dtype=float)
    prev, cur = np.ones_like(x), x
    if m == 0:
        return prev
    for k in range(1, m):
        prev, cur = cur, x * cur - k * prev
    return cur


def gauss1d_deriv(m: int, x, s: float):
    """m-th derivative of the 1-D Gaussian with variance s."""
    x = np.asarray(x, dtype=float)
    g = np.exp(-x * x / (2 * s)) / math.sqrt(2 * math.pi * s)
    return (-1) ** m / math.sqrt(s) ** m * hermite_he(m, x / math.sqrt(s)) * g


def _refuse_singular(s, S11, S12, S22):
    det = s * s * (S11 * S22 - S12 * S12)
    tr = s * (S11 + S22)
    if not det >= 1e-10 * tr * tr:
        raise ValueError("covariance s*Sigma is (near-)singular")


def _unsupported(family, idx):
    raise KeyError(f"derivative index {idx!r} is not in the {family} table")


def _affine_ratio(idx, x1, x2, t, s, S11, S12, S22, v1, v2, tau):
    # entries shared by the affine tables, written in the displaced coordinates
    # of the velocity-adapted kernel; with t = 0 they reduce to the spatial table
    D = S12 ** 2 - S11 * S22
    a = t * v1 - x1
    b = t * v2 - x2
    if idx == "x1":
        return (S12 * t * v2 - S12 * x2 - S22 * t * v1 + S22 * x1) / (s * D)
    if idx == "x2":
        return (-S11 * t * v2 + S11 * x2 + S12 * t * v1 - S12 * x1) / (S12 ** 2 * s - S11 * S22 * s)
    if idx == "x1x1":
        return ((S22 ** 2 * (a ** 2 - S11 * s) + S12 ** 2 * (S22 * s + b ** 2) - 2 * S12 * S22 * a * b)
                / (s ** 2 * D ** 2))
    if idx == "x1x2":
        return ((S11 * S12 * S22 * s - S11 * S12 * b ** 2 + S11 * S22 * a * b - S12 ** 3 * s
                 + S12 ** 2 * a * b - S12 * S22 * a ** 2) / (s ** 2 * D ** 2))
    if idx == "x2x2":
        return ((S11 ** 2 * (b ** 2 - S22 * s) + S11 * S12 * (S12 * s - 2 * a * b) + S12 ** 2 * a ** 2)
                / (s ** 2 * D ** 2))
    if idx == "s":
        return -((S11 * (b ** 2 - 2 * S22 * s) + 2 * S12 ** 2 * s - 2 * S12 * a * b + S22 * a ** 2)
                 / (2 * s ** 2 * D))
    if idx == "S11":
        return ((S22 ** 2 * (a ** 2 - S11 * s) + S12 ** 2 * (S22 * s + b ** 2) - 2 * S12 * S22 * a * b)
                / (2 * s * D ** 2))
    if idx == "S12":
        return ((S11 * S12 * S22 * s - S11 * S12 * b ** 2 + S11 * S22 * a * b - S12 ** 3 * s
                 + S12 ** 2 * a * b - S12 * S22 * a ** 2) / (s * D ** 2))
    if idx == "S22":
        return ((S11 ** 2 * (b ** 2 - S22 * s) + S11 * S12 * (S12 * s - 2 * a * b) + S12 ** 2 * a ** 2)
                / (2 * s * D ** 2))
    if idx == "v1":
        return t * (-S12 * t * v2 + S12 * x2 + S22 * t * v1 - S22 * x1) / (s * D)
    if idx == "v2":
        return -t * (-S11 * t * v2 + S11 * x2 + S12 * t * v1 - S12 * x1) / (s * D)
    if idx == "t":
        return ((S11 * S22 * s * t + S11 * tau * v2 * (t * v2 - x2) - S12 ** 2 * s * t
                 + S12 * tau * (-2 * t * v1 * v2 + v1 * x2 + v2 * x1) + S22 * tau * v1 * (t * v1 - x1))
                / (s * tau * D))
    if idx == "tbar":
        return -t / tau
    if idx == "x1tbar":
        return t * (-S12 * t * v2 + S12 * x2 + S22 * t * v1 - S22 * x1) / (s * tau * D)
    if idx == "x2tbar":
        return t * (S11 * t * v2 - S11 * x2 - S12 * t * v1 + S12 * x1) / (s * tau * D)
    if idx == "tbartbar":
        return (t ** 2 - tau) / tau ** 2
    if idx == "tau":
        return (t ** 2 - tau) / (2 * tau ** 2)
    return None


def ratio_spatial(idx: str, x, p: SpatialParams):
    if idx not in TABLES["spatial"]:
        _unsupported("spatial", idx)
    S = p.sigma
    _refuse_singular(p.s, S.s11, S.s12, S.s22)
    x = np.asarray(x, dtype=float)
    return _affine_ratio(idx, x[..., 0], x[..., 1], 0.0, p.s, S.s11, S.s12, S.s22, 0.0, 0.0, 1.0)


def ratio_st_iso(idx: str, x, t, p: STParams):
    if idx not in TABLES["st_iso"]:
        _unsupported("st_iso", idx)
    S = p.sigma
    if not (S.s11 == 1 and S.s12 == 0 and S.s22 == 1):
        raise ValueError("isotropic table needs Sigma = I")
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    t = np.asarray(t, dtype=float)
    s, tau = p.s, p.tau
    v1, v2 = p.v
    vv = v1 ** 2 + v2 ** 2
    vx = v1 * x1 + v2 * x2
    if idx == "x1":
        return (t * v1 - x1) / s
    if idx == "x2":
        return (t * v2 - x2) / s
    if idx == "t":
        return (-t * vv + vx) / s - t / tau
    if idx == "tbar":
        return -t / tau
    if idx == "x1x1":
        return ((x1 - t * v1) ** 2 - s) / s ** 2
    if idx == "x1x2":
        return (t * v1 - x1) * (t * v2 - x2) / s ** 2
    if idx == "x2x2":
        return ((x2 - t * v2) ** 2 - s) / s ** 2
    if idx == "x1t":
        return (s * (-t ** 2 * v1 + t * x1 + tau * v1) - tau * (t * v1 - x1) * (t * vv - vx)) / (s ** 2 * tau)
    if idx == "x2t":
        return (s * (-t ** 2 * v2 + t * x2 + tau * v2) - tau * (t * v2 - x2) * (t * vv - vx)) / (s ** 2 * tau)
    if idx == "x1tbar":
        return t * (x1 - t * v1) / (s * tau)
    if idx == "x2tbar":
        return t * (x2 - t * v2) / (s * tau)
    if idx == "tt":
        return ((-t * vv + vx) ** 2 / s ** 2 - (-2 * t ** 2 * vv + 2 * t * vx + tau * vv) / (s * tau)
                + (t ** 2 - tau) / tau ** 2)
    if idx == "tbartbar":
        return (t ** 2 - tau) / tau ** 2
    if idx == "s":
        return (-2 * s + t ** 2 * vv - 2 * t * vx + x1 ** 2 + x2 ** 2) / (2 * s ** 2)
    if idx == "tau":
        return (t ** 2 - tau) / (2 * tau ** 2)
    if idx == "v1":
        return t * (x1 - t * v1) / s
    return t * (x2 - t * v2) / s


def ratio_st_affine(idx: str, x, t, p: STParams):
    if idx not in TABLES["st_affine"]:
        _unsupported("st_affine", idx)
    S = p.sigma
    _refuse_singular(p.s, S.s11, S.s12, S.s22)
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    return _affine_ratio(idx, x[..., 0], x[..., 1], t, p.s, S.s11, S.s12, S.s22,
                         p.v[0], p.v[1], p.tau)


def ratio_timecausal(idx: str, x, t, p: STParams):
    """Ratios of the time-causal kernel; the temporal factor cancels, so the forms are the affine ones."""
    if idx not in TABLES["timecausal"]:
        _unsupported("timecausal", idx)
    S = p.sigma
    _refuse_singular(p.s, S.s11, S.s12, S.s22)
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    return _affine_ratio(idx, x[..., 0], x[..., 1], t, p.s, S.s11, S.s12, S.s22,
                         p.v[0], p.v[1], p.tau)


def ratio(family: str, idx: str, point, params):
    point = np.asarray(point, dtype=float)
    if family == "spatial":
        return ratio_spatial(idx, point[..., :2], params)
    fn = {"st_iso": ratio_st_iso, "st_affine": ratio_st_affine, "timecausal": ratio_timecausal}[family]
    return fn(idx, point[..., :2], point[..., 2], params)


def kernel_value(family: str, point, params, sampler=None):
    point = np.asarray(point, dtype=float)
    if family == "spatial":
        return affine_gauss(point[..., :2], params)
    if family == "timecausal":
        if sampler is None:
            sampler = default_sampler(params.tau, params.c)
        return st_limit(point[..., :2], point[..., 2], params, sampler)
    return st_gauss(point[..., :2], point[..., 2], params)


def analytic_deriv(idx: str, point, params, family: str, sampler=None):
    """Derivative of the family's kernel: table ratio times kernel value."""
    return ratio(family, idx, point, params) * kernel_value(family, point, params, sampler)
