"""Sampled kernels, direct convolution, derivative stencils and cascade execution.

Array layout: images are (x2, x1), volumes are (t, x2, x1); spacings are given in
the same axis order. Kernels store density values; convolution weights are
values times the cell volume.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from itertools import product
from fractions import Fraction
from math import comb, factorial

import numpy as np
from scipy.ndimage import correlate1d

from . import _fallback
from .cascade import SpatialIncrement, STIncrement, TimeCausalIncrement
from .kernels import (MIN_MU_FRACTION, LimitKernelApprox, exp_stage_taps, gauss1d,
                      limit_kernel_samples)
from .params import CovMat2, SpatialParams, STParams

try:
    from . import _core
except ImportError:  # extension not built
    _core = None

_BACKENDS = {"numpy": _fallback.conv_taps}
if _core is not None:
    _BACKENDS["cython"] = _core.conv_taps

BACKEND = os.environ.get("RFCASCADE_BACKEND", "cython" if _core is not None else "numpy")
if BACKEND not in _BACKENDS:
    BACKEND = "numpy"
THREADS = int(os.environ.get("RFCASCADE_THREADS", os.cpu_count() or 1))
MAX_KERNEL_CELLS = 20_000_000


class ResourceLimit(RuntimeError):
    pass


def use_backend(name: str):
    global BACKEND
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(_BACKENDS)}")
    BACKEND = name


def set_threads(n: int):
    global THREADS
    THREADS = max(1, int(n))


class MacCounter:
    """Accumulates multiply-accumulate counts of convolutions."""

    def __init__(self):
        self.macs = 0

    def add(self, n: int):
        self.macs += int(n)


def _spacing(spacing, ndim):
    if np.isscalar(spacing):
        return (float(spacing),) * ndim
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != ndim:
        raise ValueError(f"expected {ndim} spacings, got {len(spacing)}")
    if min(spacing) <= 0:
        raise ValueError("spacings must be positive")
    return spacing


@dataclass
class SampledKernel:
    values: np.ndarray
    spacing: tuple
    origin: tuple
    axes: str  # "x1x2", "t" or "x1x2t"
    normalized: bool = False

    @property
    def cell(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def radius(self) -> tuple:
        return tuple(max(o, n - 1 - o) for o, n in zip(self.origin, self.values.shape))

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.values))

    def lag_range(self) -> tuple:
        """Per axis (min lag, max lag) over nonzero taps."""
        idx = np.nonzero(self.values)
        return tuple((int(i.min()) - o, int(i.max()) - o) for i, o in zip(idx, self.origin))

    def total(self) -> float:
        return float(self.values.sum() * self.cell)

    def coords(self, axis: int) -> np.ndarray:
        n = self.values.shape[axis]
        return (np.arange(n) - self.origin[axis]) * self.spacing[axis]


# --- kernel sampling ------------------------------------------------------------------

def _degenerate(C: CovMat2) -> str:
    tr = abs(C.trace)
    if tr == 0 or (abs(C.s11) <= 1e-12 * tr and abs(C.s22) <= 1e-12 * tr):
        return "point"
    if abs(C.s11) <= 1e-12 * tr and abs(C.s12) <= 1e-12 * tr:
        return "line_x2"  # no spread along x1
    if abs(C.s22) <= 1e-12 * tr and abs(C.s12) <= 1e-12 * tr:
        return "line_x1"
    if C.det <= 1e-12 * tr * tr:
        raise ValueError("rank-deficient covariance not aligned with the grid cannot be sampled")
    return "full"


def _on_grid(x: float, h: float) -> int:
    k = x / h
    if abs(k - round(k)) > 1e-9:
        raise ValueError("point-mass kernel centre falls between grid points")
    return int(round(k))


def _slices(C: CovMat2, centers, tw, dy, dx, trunc, mask_ellipse):
    """Spatial slices h_m * g(x - c_m; C) on a shared box; returns (values, origin_y, origin_x)."""
    kind = _degenerate(C)
    cx = np.array([c[0] for c in centers])
    cy = np.array([c[1] for c in centers])
    r1 = trunc * math.sqrt(max(C.s11, 0.0))
    r2 = trunc * math.sqrt(max(C.s22, 0.0))
    lo_x = int(math.floor((cx.min() - r1) / dx + 1e-9))
    hi_x = int(math.ceil((cx.max() + r1) / dx - 1e-9))
    lo_y = int(math.floor((cy.min() - r2) / dy + 1e-9))
    hi_y = int(math.ceil((cy.max() + r2) / dy - 1e-9))
    nx, ny = hi_x - lo_x + 1, hi_y - lo_y + 1
    if len(centers) * nx * ny > MAX_KERNEL_CELLS:
        raise ResourceLimit(f"kernel grid of {len(centers) * nx * ny} cells exceeds budget")
    X = (np.arange(lo_x, hi_x + 1) * dx)[None, :]
    Y = (np.arange(lo_y, hi_y + 1) * dy)[:, None]
    out = np.zeros((len(centers), ny, nx))
    for m, (w, x0, y0) in enumerate(zip(tw, cx, cy)):
        if w == 0:
            continue
        u, v = X - x0, Y - y0
        if kind == "full":
            q = (C.s22 * u * u - 2 * C.s12 * u * v + C.s11 * v * v) / C.det
            g = np.exp(-0.5 * q) / (2 * math.pi * math.sqrt(C.det))
            if mask_ellipse:
                g = np.where(q <= trunc * trunc, g, 0.0)
        elif kind == "point":
            g = np.zeros((ny, nx))
            g[_on_grid(y0, dy) - lo_y, _on_grid(x0, dx) - lo_x] = 1.0 / (dx * dy)
        elif kind == "line_x2":  # Gaussian along x2, point mass in x1
            g = np.zeros((ny, nx))
            g[:, _on_grid(x0, dx) - lo_x] = gauss1d(v[:, 0], C.s22) / dx
            if mask_ellipse:
                g[np.abs(v[:, 0]) > r2 + 1e-12, :] = 0.0
        else:
            g = np.zeros((ny, nx))
            g[_on_grid(y0, dy) - lo_y, :] = gauss1d(u[0], C.s11) / dy
            if mask_ellipse:
                g[:, np.abs(u[0]) > r1 + 1e-12] = 0.0
        out[m] = w * g
    return out, -lo_y, -lo_x


def spatial_kernel(C: CovMat2, spacing, truncation: float = 5.0, renormalize: bool = False) -> SampledKernel:
    dy, dx = _spacing(spacing, 2)
    vals, oy, ox = _slices(C, [(0.0, 0.0)], [1.0], dy, dx, truncation, mask_ellipse=False)
    k = SampledKernel(vals[0], (dy, dx), (oy, ox), "x1x2")
    return _renorm(k) if renormalize else k


def _renorm(k: SampledKernel) -> SampledKernel:
    return SampledKernel(k.values / k.total(), k.spacing, k.origin, k.axes, True)


def temporal_gauss(tau: float, dt: float, truncation: float = 5.0):
    """(values, origin) of a Gaussian in time; tau = 0 gives a unit impulse."""
    if tau == 0:
        return np.array([1.0 / dt]), 0
    R = int(math.ceil(truncation * math.sqrt(tau) / dt - 1e-9))
    t = np.arange(-R, R + 1) * dt
    return gauss1d(t, tau), R


def temporal_limit(tau: float, c: float, dt: float, eps_var: float = 1e-6):
    # stages down to a fixed fraction of the frame interval, see LimitKernelApprox.build
    approx = LimitKernelApprox.build(tau, c, eps_var, MIN_MU_FRACTION * dt)
    n = int(math.ceil(approx.support() / dt)) + 1
    return limit_kernel_samples(approx, dt, n), 0


def temporal_stage(mu: float, dt: float):
    return exp_stage_taps(mu, dt), 0


def spatiotemporal_kernel(C: CovMat2, v, tvals, t_origin: int, spacing, truncation: float = 5.0,
                          renormalize: bool = False) -> SampledKernel:
    """g(x - v t; C) h(t) with h given by samples; slices are cut to the truncation ellipse."""
    dt, dy, dx = _spacing(spacing, 3)
    t = (np.arange(len(tvals)) - t_origin) * dt
    centers = [(v[0] * tm, v[1] * tm) for tm in t]
    vals, oy, ox = _slices(C, centers, tvals, dy, dx, truncation, mask_ellipse=True)
    k = SampledKernel(vals, (dt, dy, dx), (t_origin, oy, ox), "x1x2t")
    return _renorm(k) if renormalize else k


def sample(params, family: str, spacing, truncation: float = 5.0, renormalize: bool = False,
           eps_var: float = 1e-6) -> SampledKernel:
    """Sample a kernel: family is "spatial", "st" (Gaussian in time) or "timecausal"."""
    if family == "spatial":
        return spatial_kernel(params.prod, spacing, truncation, renormalize)
    dt = _spacing(spacing, 3)[0]
    if family == "st":
        if params.causal:
            raise ValueError("time-causal parameters given for the Gaussian temporal family")
        h, o = temporal_gauss(params.tau, dt, truncation)
    elif family == "timecausal":
        if not params.causal:
            raise ValueError("time-causal family needs c")
        h, o = temporal_limit(params.tau, params.c, dt, eps_var)
    else:
        raise ValueError(f"unknown family {family!r}")
    return spatiotemporal_kernel(params.prod, params.v, h, o, spacing, truncation, renormalize)


def sample_increment(inc, spacing, truncation: float = 5.0, renormalize: bool = False) -> SampledKernel:
    if not inc.feasible:
        raise ValueError("infeasible increment")
    if isinstance(inc, SpatialIncrement):
        return spatial_kernel(inc.delta_prod, spacing, truncation, renormalize)
    dt = _spacing(spacing, 3)[0]
    if isinstance(inc, STIncrement):
        h, o = temporal_gauss(inc.delta_tau, dt, truncation)
        return spatiotemporal_kernel(inc.delta_prod, inc.delta_v, h, o, spacing, truncation, renormalize)
    if isinstance(inc, TimeCausalIncrement):
        h, o = temporal_stage(inc.mu, dt)
        return spatiotemporal_kernel(inc.delta_prod, inc.v, h, o, spacing, truncation, renormalize)
    raise TypeError(f"not an increment: {inc!r}")


# --- convolution ------------------------------------------------------------------------

def _lift(k: SampledKernel, ndim: int):
    """Kernel values/origin as 3-D arrays over (t, x2, x1)."""
    v = k.values
    if k.axes == "x1x2t":
        if ndim != 3:
            raise ValueError("spatio-temporal kernel needs a volume")
        return v, k.origin
    if k.axes == "x1x2":
        return v[None], (0,) + tuple(k.origin)
    if k.axes == "t":
        if ndim != 3:
            raise ValueError("temporal kernel needs a volume")
        return v[:, None, None], (k.origin[0], 0, 0)
    raise ValueError(k.axes)


def _check_spacing(f_spacing, k: SampledKernel, ndim):
    if f_spacing is None:
        return
    fs = _spacing(f_spacing, ndim)
    ks = k.spacing
    want = {"x1x2": fs[-2:], "t": fs[:1], "x1x2t": fs}[k.axes]
    if not np.allclose(want, ks, rtol=1e-12):
        raise ValueError(f"kernel spacing {ks} does not match field spacing {want}")


def convolve(f, k: SampledKernel, boundary: str = "zero_pad", spacing=None, threads: int | None = None,
             counter: MacCounter | None = None) -> np.ndarray:
    """Discrete convolution sum_j w_j f[n - lag_j] over the kernel's nonzero taps.

    zero_pad returns an array of the input shape (outside samples read as zero);
    interior_only returns only the outputs whose window lies inside the input.
    """
    f = np.asarray(f, dtype=float)
    if f.ndim not in (2, 3):
        raise ValueError("field must be an image or a volume")
    _check_spacing(spacing, k, f.ndim)
    vals, origin = _lift(k, f.ndim)
    f3 = f if f.ndim == 3 else f[None]
    idx = np.nonzero(vals)
    w = np.ascontiguousarray(vals[idx] * k.cell)
    lags = np.stack([i - o for i, o in zip(idx, origin)], axis=1) if w.size else np.zeros((0, 3), int)
    if w.size == 0:
        out = np.zeros_like(f3)
        return out if f.ndim == 3 else out[0]
    lmin, lmax = lags.min(axis=0), lags.max(axis=0)
    N = np.array(f3.shape)
    if boundary == "zero_pad":
        before = np.maximum(lmax, 0)
        after = np.maximum(-lmin, 0)
        src = np.pad(f3, list(zip(before, after)))
        out_shape = N
        offsets = before - lags
    elif boundary == "interior_only":
        out_shape = N - (lmax - lmin)
        if np.any(out_shape <= 0):
            raise ValueError("field smaller than kernel support")
        src = np.ascontiguousarray(f3)
        offsets = lmax - lags
    else:
        raise ValueError(f"unknown boundary {boundary!r}")
    out = np.zeros(tuple(out_shape))
    offsets = np.ascontiguousarray(offsets, dtype=np.intp)
    _BACKENDS[BACKEND](src, offsets, w, out, THREADS if threads is None else threads)
    if counter is not None:
        counter.add(w.size * out.size)
    return out if f.ndim == 3 else out[0]


def interior_slices(shape, kernels, extra: int = 0):
    """Region of outputs unaffected by zero padding after applying the kernels in sequence."""
    ndim = len(shape)
    lo, hi = [extra] * ndim, [extra] * ndim
    for k in kernels:
        vals, origin = _lift(k, 3)
        idx = np.nonzero(vals)
        for ax3, (i, o) in enumerate(zip(idx, origin)):
            ax = ax3 - (3 - ndim)
            if ax < 0:
                continue
            lo[ax] += max(int(i.max()) - o, 0)
            hi[ax] += max(o - int(i.min()), 0)
    return tuple(slice(a, n - b) for a, b, n in zip(lo, hi, shape))


# --- derivatives ----------------------------------------------------------------------

def _central_weights(order: int, r: int) -> np.ndarray:
    """Closed-form central weights on offsets -r..r for the first or second derivative."""
    w = np.zeros(2 * r + 1)
    for k in range(1, r + 1):
        base = (-1) ** (k + 1) * Fraction(factorial(r) ** 2, factorial(r - k) * factorial(r + k))
        if order == 1:
            w[r + k], w[r - k] = base / k, -base / k
        else:
            w[r + k] = w[r - k] = 2 * base / (k * k)
    if order == 2:
        w[r] = -2 * sum(Fraction(1, k * k) for k in range(1, r + 1))
    return w


def stencil(order: int, accuracy: int = 6) -> np.ndarray:
    """Central difference weights (offsets -r..r, unit spacing) for a derivative order.

    accuracy is the even truncation order of each first or second difference factor.
    """
    if accuracy < 2 or accuracy % 2:
        raise ValueError("accuracy must be a positive even integer")
    r = accuracy // 2
    w = np.array([1.0])
    for _ in range(order // 2):
        w = np.convolve(w, _central_weights(2, r))
    if order % 2:
        w = np.convolve(w, _central_weights(1, r))
    return w


def diff_axes(f, orders, spacing, accuracy: int = 6) -> np.ndarray:
    """Apply d^orders[i]/dx_i^orders[i] along each array axis (zero outside the field)."""
    f = np.asarray(f, dtype=float)
    spacing = _spacing(spacing, f.ndim)
    out = f
    for ax, (m, h) in enumerate(zip(orders, spacing)):
        if m == 0:
            continue
        w = stencil(m, accuracy) / h ** m
        if out.shape[ax] < len(w):
            raise ValueError("field too small for the difference stencil")
        out = correlate1d(out, w, axis=ax, mode="constant", cval=0.0)
    return out if out is not f else f.copy()


@dataclass(frozen=True)
class DerivOp:
    """Derivative operator; terms are over (t, x1, x2) orders.

    kind: identity, directional (order m, angle phi), gradient, hessian,
    tbar (velocity-adapted temporal order n with velocity v), or mixed
    (directional spatial part times a velocity-adapted temporal part).
    """

    kind: str = "identity"
    m: int = 0
    phi: float = 0.0
    n: int = 0
    v: tuple = (0.0, 0.0)

    @classmethod
    def directional(cls, m, phi=0.0):
        return cls("directional", m=m, phi=phi)

    @classmethod
    def gradient(cls):
        return cls("gradient", m=1)

    @classmethod
    def hessian(cls):
        return cls("hessian", m=2)

    @classmethod
    def tbar(cls, n, v=(0.0, 0.0)):
        return cls("tbar", n=n, v=tuple(v))

    @classmethod
    def mixed(cls, m, phi, n, v=(0.0, 0.0)):
        return cls("mixed", m=m, phi=phi, n=n, v=tuple(v))

    def __post_init__(self):
        if self.m < 0 or self.n < 0:
            raise ValueError("derivative orders must be nonnegative")

    @property
    def temporal(self) -> bool:
        return self.n > 0

    def _directional_terms(self):
        c, s = math.cos(self.phi), math.sin(self.phi)
        return {(0, k, self.m - k): comb(self.m, k) * c ** k * s ** (self.m - k) for k in range(self.m + 1)}

    def _tbar_terms(self):
        v1, v2 = self.v
        n = self.n
        out = {}
        for a in range(n + 1):
            for b in range(n - a + 1):
                c = n - a - b
                out[(a, b, c)] = factorial(n) / (factorial(a) * factorial(b) * factorial(c)) * v1 ** b * v2 ** c
        return out

    def components(self) -> list:
        """List of {(a_t, a_x1, a_x2): coef} dicts, one per output component."""
        if self.kind == "identity":
            return [{(0, 0, 0): 1.0}]
        if self.kind == "directional":
            return [self._directional_terms()]
        if self.kind == "gradient":
            return [{(0, 1, 0): 1.0}, {(0, 0, 1): 1.0}]
        if self.kind == "hessian":
            return [{(0, 2, 0): 1.0}, {(0, 1, 1): 1.0}, {(0, 0, 2): 1.0}]
        if self.kind == "tbar":
            return [self._tbar_terms()]
        if self.kind == "mixed":
            out = {}
            for (a0, b0, c0), w0 in self._directional_terms().items():
                for (a1, b1, c1), w1 in self._tbar_terms().items():
                    key = (a0 + a1, b0 + b1, c0 + c1)
                    out[key] = out.get(key, 0.0) + w0 * w1
            return [out]
        raise ValueError(f"unknown derivative kind {self.kind!r}")

    def stencil_radius(self, accuracy: int = 6) -> int:
        top = max(max(sum(k) for k in comp) for comp in self.components())
        return len(stencil(top, accuracy)) // 2 if top else 0


def apply_deriv(f, op: DerivOp, spacing, accuracy: int = 6) -> np.ndarray:
    """Central-difference derivative of a field; multi-component ops stack along axis 0."""
    f = np.asarray(f, dtype=float)
    comps = []
    for terms in op.components():
        acc = np.zeros_like(f)
        for (at, a1, a2), w in terms.items():
            if w == 0:
                continue
            if f.ndim == 2:
                if at:
                    raise ValueError("temporal derivative of an image")
                orders = (a2, a1)
            else:
                orders = (at, a2, a1)
            acc += w * diff_axes(f, orders, spacing, accuracy)
        comps.append(acc)
    return comps[0] if len(comps) == 1 else np.stack(comps)


def deriv_kernel(k: SampledKernel, op: DerivOp, accuracy: int = 6) -> SampledKernel:
    """Apply the difference operator to a sampled kernel (padded so nothing is cut)."""
    r = op.stencil_radius(accuracy)
    ndim = k.values.ndim
    pad = [(r, r)] * ndim
    if k.axes == "x1x2t" and not op.temporal:
        pad[0] = (0, 0)
    vals = np.pad(k.values, pad)
    d = apply_deriv(vals, op, k.spacing, accuracy)
    origin = tuple(o + p[0] for o, p in zip(k.origin, pad))
    if d.ndim > ndim:
        raise ValueError("deriv_kernel needs a single-component operator")
    return SampledKernel(d, k.spacing, origin, k.axes, False)


def rf_response(f, params, family: str, op: DerivOp, spacing, truncation: float = 5.0,
                renormalize: bool = False, accuracy: int = 6, counter=None) -> np.ndarray:
    k = sample(params, family, spacing, truncation, renormalize)
    L = convolve(f, k, counter=counter)
    return apply_deriv(L, op, spacing, accuracy)


# --- cascades -------------------------------------------------------------------------

def run_cascade(f, base_params, increments, family: str, spacing, truncation: float = 5.0,
                renormalize: bool = False, extend: bool = True, counter=None) -> np.ndarray:
    """Smooth with the base kernel, then with each increment in turn.

    With extend=True the input is zero-extended by the increments' reach before the
    first convolution, so intermediate results are exact out to where later kernels
    read them and the output equals the zero-padded direct convolution everywhere.
    """
    f = np.asarray(f, dtype=float)
    for inc in increments:
        if not inc.feasible:
            raise ValueError("infeasible increment in cascade")
    kernels = [sample(base_params, family, spacing, truncation, renormalize)]
    kernels += [sample_increment(inc, spacing, truncation, renormalize) for inc in increments]
    return convolve_chain(f, kernels, extend, counter)


def convolve_chain(f, kernels, extend: bool = True, counter=None) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    ndim = f.ndim
    if not extend or len(kernels) < 2:
        out = f
        for k in kernels:
            out = convolve(out, k, counter=counter)
        return out
    before, after = np.zeros(ndim, int), np.zeros(ndim, int)
    anticausal = np.zeros(ndim, bool)
    for j, k in enumerate(kernels):
        vals, origin = _lift(k, 3)
        idx = np.nonzero(vals)
        for ax3, (i, o) in enumerate(zip(idx, origin)):
            ax = ax3 - (3 - ndim)
            if ax < 0:
                continue
            lmin, lmax = int(i.min()) - o, int(i.max()) - o
            anticausal[ax] |= lmin < 0
            if j > 0:
                before[ax] += max(lmax, 0)
                after[ax] += max(-lmin, 0)
    # a purely causal axis needs no history: intermediate values before t = 0 vanish
    before = np.where(anticausal, before, 0)
    g = np.pad(f, list(zip(before, after)))
    for k in kernels:
        g = convolve(g, k, counter=counter)
    return g[tuple(slice(b, b + n) for b, n in zip(before, f.shape))]


def compare(a, b, margin=0) -> dict:
    """Relative L2 and Linf differences of a against reference b on an interior region.

    margin: int, per-axis ints, per-axis (before, after) pairs, or a tuple of slices.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("shapes differ")
    if isinstance(margin, tuple) and margin and isinstance(margin[0], slice):
        region = margin
    else:
        if np.isscalar(margin):
            margin = [margin] * a.ndim
        region = []
        for m, n in zip(margin, a.shape):
            lo, hi = (m, m) if np.isscalar(m) else m
            region.append(slice(lo, n - hi))
        region = tuple(region)
    d = a[region] - b[region]
    ref = b[region]
    nb = np.sqrt(np.sum(ref * ref))
    mb = np.max(np.abs(ref)) if ref.size else 0.0
    l2 = float(np.sqrt(np.sum(d * d)) / nb) if nb > 0 else float(np.sqrt(np.sum(d * d)))
    li = float(np.max(np.abs(d)) / mb) if mb > 0 else float(np.max(np.abs(d), initial=0.0))
    return {"rel_l2": l2, "rel_linf": li}
