"""Continuous smoothing kernels and the discrete time-causal limit kernel.

The limit kernel is built on a uniform time grid as the impulse response of K
cascaded first-order recursive filters. Each filter integrates a truncated
exponential exactly against a local quadratic interpolant of its input, so every
stage preserves unit mass, mean and variance of the continuous exponential.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import lfilter
from scipy.special import gammainc

from .params import CovMat2, SpatialParams, STParams

SQRT_2PI = math.sqrt(2.0 * math.pi)
TAIL_TOL = 1e-7
# sampled limit kernels keep every stage down to this fraction of the time step
MIN_MU_FRACTION = 1e-3


def gauss1d(x, s: float):
    if not s > 0:
        raise ValueError("variance s must be positive")
    x = np.asarray(x, dtype=float)
    return np.exp(-x * x / (2.0 * s)) / math.sqrt(2.0 * math.pi * s)


def gauss2(x1, x2, C: CovMat2):
    """Bivariate Gaussian density with covariance C (the product s*Sigma)."""
    det = C.det
    if not (det > 0 and C.s11 > 0):
        raise ValueError("covariance must be positive definite")
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    q = (C.s22 * x1 * x1 - 2.0 * C.s12 * x1 * x2 + C.s11 * x2 * x2) / det
    return np.exp(-0.5 * q) / (2.0 * math.pi * math.sqrt(det))


def _split(x):
    x = np.asarray(x, dtype=float)
    return x[..., 0], x[..., 1]


def affine_gauss(x, p: SpatialParams):
    x1, x2 = _split(x)
    return gauss2(x1, x2, p.prod)


def affine_gauss_axes(x, sigma1: float, sigma2: float, phi: float):
    """Affine Gaussian from axis lengths and orientation, via the explicit quadratic form."""
    if not (sigma1 > 0 and sigma2 > 0):
        raise ValueError("sigma1 and sigma2 must be positive")
    x1, x2 = _split(x)
    l1, l2 = sigma1 * sigma1, sigma2 * sigma2
    c, s = math.cos(phi), math.sin(phi)
    A = ((l2 * x1 * x1 + l1 * x2 * x2) * c * c + (l1 * x1 * x1 + l2 * x2 * x2) * s * s
         - 2.0 * (l1 - l2) * x1 * x2 * c * s)
    return np.exp(-A / (2.0 * l1 * l2)) / (2.0 * math.pi * sigma1 * sigma2)


def st_gauss(x, t, p: STParams):
    """Velocity-adapted affine Gaussian times a Gaussian in time with variance tau."""
    if p.causal:
        raise ValueError("time-causal parameters: use st_limit")
    x1, x2 = _split(x)
    t = np.asarray(t, dtype=float)
    return gauss2(x1 - p.v[0] * t, x2 - p.v[1] * t, p.prod) * gauss1d(t, p.tau)


def trunc_exp(t, mu: float):
    if not mu > 0:
        raise ValueError("time constant mu must be positive")
    t = np.asarray(t, dtype=float)
    return np.where(t >= 0, np.exp(-np.maximum(t, 0.0) / mu) / mu, 0.0)


# --- discrete truncated exponential stage -------------------------------------------

def exp_stage_coeffs(mu: float, dt: float):
    """Recursive filter (b, a) for one truncated exponential of time constant mu.

    y[n] = e^{-dt/mu} y[n-1] + w1 f[n] + w0 f[n-1] + wm1 f[n-2], where the w's are
    the exact exponential-weighted integrals of the quadratic Lagrange basis over the
    newest sampling interval.
    """
    if not mu > 0:
        raise ValueError("time constant mu must be positive")
    h = dt
    r = h / mu
    m0 = gammainc(1, r)
    m1 = mu * gammainc(2, r)
    m2 = 2.0 * mu * mu * gammainc(3, r)
    wm1 = (m2 - h * m1) / (2 * h * h)
    w0 = (2 * h * m1 - m2) / (h * h)
    w1 = (2 * h * h * m0 - 3 * h * m1 + m2) / (2 * h * h)
    return np.array([w1, w0, wm1]), np.array([1.0, -math.exp(-r)])


def exp_stage(f, mu: float, dt: float, axis: int = 0):
    """Apply one discrete truncated-exponential stage along an axis (causal, zero initial state)."""
    b, a = exp_stage_coeffs(mu, dt)
    return lfilter(b, a, f, axis=axis)


def exp_stage_taps(mu: float, dt: float, tol: float = TAIL_TOL) -> np.ndarray:
    """Sampled impulse response (density values, t = 0, dt, ...) of one stage, cut at tail mass tol."""
    n = int(math.ceil(mu * math.log(1.0 / tol) / dt)) + 3
    d = np.zeros(n)
    d[0] = 1.0 / dt
    return exp_stage(d, mu, dt)


# --- time-causal limit kernel -------------------------------------------------------

def stage_count(c: float, eps_var: float = 1e-6) -> int:
    if not c > 1:
        raise ValueError("distribution parameter c must exceed 1")
    if not 0 < eps_var < 1:
        raise ValueError("eps_var must lie in (0, 1)")
    return max(1, int(math.ceil(math.log(1.0 / eps_var) / (2.0 * math.log(c)) - 1e-12)))


@dataclass(frozen=True)
class LimitKernelApprox:
    tau: float
    c: float
    K: int
    mus: tuple

    @classmethod
    def build(cls, tau: float, c: float, eps_var: float = 1e-6,
              min_mu: float | None = None) -> "LimitKernelApprox":
        """Stages k = 1..K; K is the eps_var count, raised to keep every stage with mu_k >= min_mu.

        With an absolute min_mu the stage sets at tau and c^2 tau differ by exactly the
        one new leading stage, so the sampled family obeys the adjacent-scale recurrence.
        """
        if not tau > 0:
            raise ValueError("tau must be positive")
        K = stage_count(c, eps_var)
        base = math.sqrt(c * c - 1.0) * math.sqrt(tau)
        if min_mu is not None and min_mu > 0 and base / c > min_mu:
            K = max(K, int(math.floor(math.log(base / min_mu) / math.log(c) + 1e-9)))
        return cls(tau, c, K, tuple(base * c ** (-k) for k in range(1, K + 1)))

    @property
    def mean(self) -> float:
        return float(sum(self.mus))

    @property
    def variance(self) -> float:
        return float(sum(m * m for m in self.mus))

    @property
    def tail_constant(self) -> float:
        return float(np.prod([1.0 / (1.0 - self.c ** (-j)) for j in range(1, self.K)]))

    def support(self, tol: float = TAIL_TOL) -> float:
        """Time beyond which the kernel carries less than tol of its mass (and at least mean + 8 sqrt(tau))."""
        tail = self.mus[0] * math.log(self.tail_constant / tol)
        return max(self.mean + 8.0 * math.sqrt(self.tau), tail)

    def fourier(self, omega):
        omega = np.asarray(omega, dtype=float)
        out = np.ones(omega.shape, dtype=complex)
        for mu in self.mus:
            out = out / (1.0 + 1j * mu * omega)
        return out


def limit_kernel_samples(approx: LimitKernelApprox, dt: float, n: int) -> np.ndarray:
    """Discrete limit kernel at t = 0, dt, ..., (n-1) dt."""
    f = np.zeros(n)
    f[0] = 1.0 / dt
    for mu in approx.mus:
        f = exp_stage(f, mu, dt)
    # the smallest stages can ring slightly when dt is coarse compared to sqrt(tau)
    return np.maximum(f, 0.0)


def limit_kernel(t_grid, tau: float, c: float, eps_var: float = 1e-6, min_mu: float | None = None):
    """Limit kernel sampled on a uniform grid; returns (values, LimitKernelApprox).

    min_mu defaults to MIN_MU_FRACTION times the grid step.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise ValueError("t_grid must be a 1-D grid with at least two samples")
    dt = t[1] - t[0]
    if not dt > 0 or not np.allclose(np.diff(t), dt, rtol=1e-9, atol=0):
        raise ValueError("t_grid must be uniform and increasing")
    if min_mu is None:
        min_mu = MIN_MU_FRACTION * dt
    approx = LimitKernelApprox.build(tau, c, eps_var, min_mu)
    i0 = -t[0] / dt
    if abs(i0 - round(i0)) > 1e-6:
        raise ValueError("t_grid must contain t = 0")
    i0 = int(round(i0))
    out = np.zeros_like(t)
    n = t.size - i0
    if n > 0:
        vals = limit_kernel_samples(approx, dt, n)
        lo = max(i0, 0)
        out[lo:] = vals[lo - i0:]
    return out, approx


class LimitKernelSampler:
    """Limit kernel on a fine grid with linear interpolation in between."""

    def __init__(self, tau: float, c: float, eps_var: float = 1e-6, dt: float | None = None):
        self.dt = dt if dt is not None else math.sqrt(tau) / 64.0
        self.approx = LimitKernelApprox.build(tau, c, eps_var, MIN_MU_FRACTION * self.dt)
        self.tmax = self.approx.support()
        n = int(math.ceil(self.tmax / self.dt)) + 1
        self.t = self.dt * np.arange(n)
        self.values = limit_kernel_samples(self.approx, self.dt, n)
        self.tmax = self.t[-1]

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t > self.tmax):
            raise ValueError(f"time beyond sampled range {self.tmax}")
        return np.where(t < 0, 0.0, np.interp(t, self.t, self.values))

    def derivative(self, t):
        """Central difference of the interpolated kernel, step equal to the grid spacing."""
        h = self.dt
        t = np.asarray(t, dtype=float)
        return (self(t + h) - self(t - h)) / (2.0 * h)


@lru_cache(maxsize=64)
def default_sampler(tau: float, c: float) -> LimitKernelSampler:
    return LimitKernelSampler(tau, c)


def st_limit(x, t, p: STParams, sampler: LimitKernelSampler | None = None):
    """Velocity-adapted affine Gaussian times the time-causal limit kernel."""
    if not p.causal:
        raise ValueError("st_limit needs time-causal parameters (c set)")
    if sampler is None:
        sampler = default_sampler(p.tau, p.c)
    x1, x2 = _split(x)
    t = np.asarray(t, dtype=float)
    return gauss2(x1 - p.v[0] * t, x2 - p.v[1] * t, p.prod) * sampler(t)


def mixed_rf_1p1d(x, t, s: float, tau: float, v: float, causal: bool = False,
                  c: float = 2.0, sampler: LimitKernelSampler | None = None):
    """d/dx d/dtbar of g(x - v t; s) h(t; tau) in one spatial dimension."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    u = x - v * t
    gx = -u / s * gauss1d(u, s)
    # the velocity-adapted derivative leaves g(x - v t) untouched
    if causal:
        if sampler is None:
            sampler = default_sampler(tau, c)
        ht = sampler.derivative(t)
    else:
        ht = -t / tau * gauss1d(t, tau)
    return gx * ht
