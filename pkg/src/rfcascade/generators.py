"""Infinitesimal generator identities: parameter derivatives as differential operators.

Each identity says d/dP L = sum_i coef_i(params) * D_i L, where the D_i are
coordinate derivatives. The identities hold for kernels and, by linearity, for
smoothed signals. Two checkers are provided: an exact one on kernel derivatives
and a discrete one on sampled signals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import engine
from .hermite import analytic_deriv
from .params import CovMat2, SpatialParams, STParams


@dataclass(frozen=True)
class GeneratorIdentity:
    family: str
    lhs: str
    rhs: Callable  # params -> {index: coefficient}
    directionality: str  # "forward_only" | "bidirectional"

    def coefficients(self, params) -> dict:
        return self.rhs(params)


def _spatial_four(family):
    return [
        GeneratorIdentity(family, "s", lambda p: {"x1x1": p.sigma.s11 / 2, "x1x2": p.sigma.s12,
                                                  "x2x2": p.sigma.s22 / 2}, "forward_only"),
        GeneratorIdentity(family, "S11", lambda p: {"x1x1": p.s / 2}, "forward_only"),
        # Sigma12 enters the quadratic form twice, hence s rather than s/2
        GeneratorIdentity(family, "S12", lambda p: {"x1x2": p.s}, "bidirectional"),
        GeneratorIdentity(family, "S22", lambda p: {"x2x2": p.s / 2}, "forward_only"),
    ]


def _temporal_three(family):
    return [
        GeneratorIdentity(family, "tau", lambda p: {"tbartbar": 0.5}, "forward_only"),
        GeneratorIdentity(family, "v1", lambda p: {"x1tbar": p.tau}, "bidirectional"),
        GeneratorIdentity(family, "v2", lambda p: {"x2tbar": p.tau}, "bidirectional"),
    ]


def list_identities(family: str) -> list:
    if family == "spatial":
        return _spatial_four("spatial")
    if family == "st_iso":
        return [GeneratorIdentity("st_iso", "s", lambda p: {"x1x1": 0.5, "x2x2": 0.5}, "forward_only")] \
            + _temporal_three("st_iso")
    if family == "st_affine":
        return _spatial_four("st_affine") + _temporal_three("st_affine")
    if family == "timecausal":
        return _spatial_four("timecausal")
    raise ValueError(f"unknown family {family!r}")


def find_identity(family: str, lhs: str) -> GeneratorIdentity:
    for ident in list_identities(family):
        if ident.lhs == lhs:
            return ident
    raise KeyError(f"no {lhs!r} identity in family {family!r}")


def step_allowed(identity: GeneratorIdentity, params, delta: float) -> bool:
    """Whether evolving the identity's parameter by delta is admissible.

    Parabolic (forward_only) directions only accept nonnegative steps; the
    hyperbolic ones accept either sign as long as the parameters stay valid.
    """
    if identity.directionality == "forward_only" and delta < 0:
        return False
    try:
        shift_param(params, identity.lhs, delta)
    except ValueError:
        return False
    return True


def kernel_residual(identity: GeneratorIdentity, params, points, sampler=None) -> float:
    """Max relative mismatch between lhs and rhs kernel derivatives at the given points."""
    fam = identity.family
    lhs = analytic_deriv(identity.lhs, points, params, fam, sampler)
    rhs = sum(c * analytic_deriv(idx, points, params, fam, sampler)
              for idx, c in identity.coefficients(params).items())
    scale = np.maximum(np.abs(lhs), np.abs(rhs))
    scale = np.maximum(scale, 1e-300)
    return float(np.max(np.abs(lhs - rhs) / scale))


# --- signal-level checks -------------------------------------------------------------

def expand_index(idx: str, v=(0.0, 0.0)) -> dict:
    """Write a coordinate index as a combination of axis derivatives {(a_t, a_x1, a_x2): coef}."""
    v1, v2 = v
    table = {
        "x1x1": {(0, 2, 0): 1.0},
        "x1x2": {(0, 1, 1): 1.0},
        "x2x2": {(0, 0, 2): 1.0},
        "x1tbar": {(1, 1, 0): 1.0, (0, 2, 0): v1, (0, 1, 1): v2},
        "x2tbar": {(1, 0, 1): 1.0, (0, 1, 1): v1, (0, 0, 2): v2},
        "tbartbar": {(2, 0, 0): 1.0, (1, 1, 0): 2 * v1, (1, 0, 1): 2 * v2,
                     (0, 2, 0): v1 * v1, (0, 1, 1): 2 * v1 * v2, (0, 0, 2): v2 * v2},
    }
    if idx not in table:
        raise KeyError(f"no axis expansion for {idx!r}")
    return table[idx]


def apply_rhs(identity: GeneratorIdentity, field: np.ndarray, spacing, params,
              accuracy: int = 8, drop_cross_terms: bool = False) -> np.ndarray:
    """Central-difference evaluation of the identity's right-hand side.

    Fields are (x2, x1) images or (t, x2, x1) volumes; spacing follows the array axes.
    Values within the stencil radius of the border are not meaningful.
    """
    field = np.asarray(field, dtype=float)
    radius = accuracy // 2
    if min(field.shape) <= 2 * radius:
        raise ValueError("field too small for the difference stencil")
    v = getattr(params, "v", (0.0, 0.0))
    out = np.zeros_like(field)
    for idx, coef in identity.coefficients(params).items():
        terms = expand_index(idx, v)
        if drop_cross_terms and idx == "tbartbar":
            terms = {(2, 0, 0): 1.0}
        for (at, a1, a2), w in terms.items():
            if w == 0:
                continue
            if field.ndim == 2:
                if at:
                    raise ValueError("temporal derivative requested on an image")
                orders = (a2, a1)
            else:
                orders = (at, a2, a1)
            out += coef * w * engine.diff_axes(field, orders, spacing, accuracy)
    return out


def shift_param(params, tag: str, delta: float):
    """Copy of params with one parameter moved by delta."""
    S = params.sigma
    if tag == "s":
        kw = {"s": params.s + delta}
    elif tag == "S11":
        kw = {"sigma": CovMat2(S.s11 + delta, S.s12, S.s22)}
    elif tag == "S12":
        kw = {"sigma": CovMat2(S.s11, S.s12 + delta, S.s22)}
    elif tag == "S22":
        kw = {"sigma": CovMat2(S.s11, S.s12, S.s22 + delta)}
    elif tag == "tau":
        kw = {"tau": params.tau + delta}
    elif tag in ("v1", "v2"):
        v = list(params.v)
        v[int(tag[1]) - 1] += delta
        kw = {"v": tuple(v)}
    else:
        raise KeyError(tag)
    fields = dict(s=params.s, sigma=params.sigma)
    if isinstance(params, STParams):
        fields.update(tau=params.tau, v=params.v, c=params.c)
        fields.update(kw)
        return STParams(**fields)
    fields.update(kw)
    return SpatialParams(**fields)


def kernel_std(params) -> float:
    """Largest standard deviation of the kernel along any axis (space with motion, or time)."""
    C = params.prod.as_array()
    if isinstance(params, STParams):
        v = np.asarray(params.v)
        C = C + params.tau * np.outer(v, v)
        return float(math.sqrt(max(np.linalg.eigvalsh(C).max(), params.tau)))
    return float(math.sqrt(np.linalg.eigvalsh(C).max()))


def natural_scale(params, tag: str) -> float:
    if tag == "s":
        return params.s
    if tag == "tau":
        return params.tau
    return 1.0


@dataclass(frozen=True)
class Report:
    family: str
    lhs: str
    max_rel_residual: float
    passed: bool


def verify_identity(identity: GeneratorIdentity, params, signal: np.ndarray, spacing,
                    tol: float = 1e-3, rel_step: float = 1e-3, margin: int | None = None,
                    accuracy: int = 10, drop_cross_terms: bool = False,
                    truncation: float = 5.0) -> Report:
    """Compare d/dP of the smoothed signal with the rhs operator applied to it.

    The lhs is a Richardson-extrapolated central difference over the parameter
    (steps h and h/2); the rhs uses central differences in space and time.
    """
    fam = identity.family
    family = "spatial" if fam == "spatial" else ("timecausal" if fam == "timecausal" else "st")
    signal = np.asarray(signal, dtype=float)

    def smooth(p):
        k = engine.sample(p, family, spacing, truncation)
        return engine.convolve(signal, k)

    h = rel_step * natural_scale(params, identity.lhs)

    def central(step):
        hi = smooth(shift_param(params, identity.lhs, step))
        lo = smooth(shift_param(params, identity.lhs, -step))
        return (hi - lo) / (2 * step)

    d1, d2 = central(h), central(h / 2)
    lhs = (4 * d2 - d1) / 3
    base = smooth(params)
    rhs = apply_rhs(identity, base, spacing, params, accuracy, drop_cross_terms)
    if margin is None:
        step = min(engine._spacing(spacing, signal.ndim))
        margin = accuracy // 2 + int(math.ceil(5.0 * kernel_std(params) / step))
    region = tuple(slice(margin, n - margin) for n in signal.shape)
    if any(sl.start >= sl.stop for sl in region):
        raise ValueError("signal too small for the interior margin")
    a, b = lhs[region], rhs[region]
    scale = np.max(np.abs(a))
    # both sides at round-off level of the smoothed signal: every derivative vanishes
    noise = 1e-9 * max(np.max(np.abs(base[region])), 1e-300) / h
    if scale <= noise and np.max(np.abs(b)) <= noise:
        return Report(fam, identity.lhs, 0.0, True)
    res = float(np.max(np.abs(a - b)) / scale)
    return Report(fam, identity.lhs, res, res <= tol)
