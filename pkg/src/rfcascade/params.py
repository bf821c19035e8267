"""Filter parameters for affine Gaussian and spatio-temporal receptive fields.

Spatial smoothing is governed by a scale ``s`` and a 2x2 covariance ``Sigma``;
only the product ``s * Sigma`` affects the kernel. Spatio-temporal filters add a
temporal scale ``tau``, an image velocity ``v`` and, for time-causal smoothing,
the distribution parameter ``c`` of the limit kernel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EPS_PSD = 1e-12


@dataclass(frozen=True)
class CovMat2:
    """Symmetric 2x2 matrix stored as its three distinct elements."""

    s11: float
    s12: float
    s22: float

    @classmethod
    def from_array(cls, m) -> "CovMat2":
        m = np.asarray(m, dtype=float)
        return cls(float(m[0, 0]), float(0.5 * (m[0, 1] + m[1, 0])), float(m[1, 1]))

    @classmethod
    def identity(cls) -> "CovMat2":
        return cls(1.0, 0.0, 1.0)

    def as_array(self) -> np.ndarray:
        return np.array([[self.s11, self.s12], [self.s12, self.s22]])

    @property
    def det(self) -> float:
        return self.s11 * self.s22 - self.s12 * self.s12

    @property
    def trace(self) -> float:
        return self.s11 + self.s22

    def scaled(self, k: float) -> "CovMat2":
        return CovMat2(k * self.s11, k * self.s12, k * self.s22)

    def __add__(self, other: "CovMat2") -> "CovMat2":
        return CovMat2(self.s11 + other.s11, self.s12 + other.s12, self.s22 + other.s22)

    def __sub__(self, other: "CovMat2") -> "CovMat2":
        return CovMat2(self.s11 - other.s11, self.s12 - other.s12, self.s22 - other.s22)

    def is_psd(self) -> bool:
        return psd_check(self)

    def is_pd(self) -> bool:
        return self.s11 > 0 and self.s22 > 0 and self.det > 0


def _check_pd(sigma: CovMat2):
    if not sigma.is_pd():
        raise ValueError(f"covariance must be positive definite, got {sigma}")


@dataclass(frozen=True)
class SpatialParams:
    s: float
    sigma: CovMat2 = field(default_factory=CovMat2.identity)

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"scale s must be positive, got {self.s}")
        _check_pd(self.sigma)

    @property
    def prod(self) -> CovMat2:
        """Effective spatial covariance s * Sigma."""
        return self.sigma.scaled(self.s)


@dataclass(frozen=True)
class STParams:
    s: float
    sigma: CovMat2 = field(default_factory=CovMat2.identity)
    tau: float = 1.0
    v: tuple = (0.0, 0.0)
    c: float | None = None

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"scale s must be positive, got {self.s}")
        if not self.tau > 0:
            raise ValueError(f"temporal scale tau must be positive, got {self.tau}")
        _check_pd(self.sigma)
        if len(self.v) != 2:
            raise ValueError("velocity must have two components")
        object.__setattr__(self, "v", (float(self.v[0]), float(self.v[1])))
        if self.c is not None and not self.c > 1:
            raise ValueError(f"distribution parameter c must exceed 1, got {self.c}")

    @property
    def causal(self) -> bool:
        return self.c is not None

    @property
    def prod(self) -> CovMat2:
        return self.sigma.scaled(self.s)

    @property
    def spatial(self) -> SpatialParams:
        return SpatialParams(self.s, self.sigma)


def cov_from_axes(sigma1: float, sigma2: float, phi: float) -> CovMat2:
    """Covariance with standard deviations sigma1, sigma2 along axes rotated by phi."""
    if not (sigma1 > 0 and sigma2 > 0):
        raise ValueError("sigma1 and sigma2 must be positive")
    l1, l2 = sigma1 * sigma1, sigma2 * sigma2
    c, s = math.cos(phi), math.sin(phi)
    return CovMat2(l1 * c * c + l2 * s * s, (l1 - l2) * c * s, l1 * s * s + l2 * c * c)


def eccentricity(sigma1: float, sigma2: float) -> float:
    if not (sigma1 > 0 and sigma2 > 0):
        raise ValueError("sigma1 and sigma2 must be positive")
    return sigma2 / sigma1


def joint_cov(p: STParams) -> np.ndarray:
    """3x3 covariance over (x1, x2, t) of the non-causal spatio-temporal kernel."""
    if p.causal:
        raise NotImplementedError("joint covariance is only defined for the Gaussian temporal kernel")
    v = np.asarray(p.v)
    m = np.empty((3, 3))
    m[:2, :2] = p.prod.as_array() + p.tau * np.outer(v, v)
    m[:2, 2] = m[2, :2] = p.tau * v
    m[2, 2] = p.tau
    return m


def _check_affine(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.shape != (2, 2) or abs(np.linalg.det(A)) < 1e-300:
        raise ValueError("A must be a nonsingular 2x2 matrix")
    return A


def match_spatial(p: SpatialParams, S_x: float, A) -> SpatialParams:
    """Parameters that keep the receptive field matched under x' = S_x A x."""
    if not S_x > 0:
        raise ValueError("S_x must be positive")
    A = _check_affine(A)
    return SpatialParams(S_x * S_x * p.s, CovMat2.from_array(A @ p.sigma.as_array() @ A.T))


def match_spatiotemporal(p: STParams, S_x: float, A, u, S_t: float) -> STParams:
    """Parameters matched under x' = S_x (A x + u t), t' = S_t t."""
    if not S_t > 0:
        raise ValueError("S_t must be positive")
    sp = match_spatial(p.spatial, S_x, A)
    A = np.asarray(A, dtype=float)
    v = (S_x / S_t) * (A @ np.asarray(p.v) + np.asarray(u, dtype=float))
    return STParams(sp.s, sp.sigma, S_t * S_t * p.tau, tuple(v), p.c)


def psd_check(m) -> bool:
    """True iff all eigenvalues are >= -EPS_PSD * |trace|."""
    if isinstance(m, CovMat2):
        m = m.as_array()
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(m)):
        return False
    w = np.linalg.eigvalsh(0.5 * (m + m.T))
    return bool(w.min() >= -EPS_PSD * abs(np.trace(m)))


def smoothing_key(p) -> tuple:
    """Tuple identifying the smoothing a parameter set performs (products s*Sigma, tau, v, c)."""
    c = p.prod
    if isinstance(p, SpatialParams):
        return (c.s11, c.s12, c.s22)
    return (c.s11, c.s12, c.s22, p.tau, p.v[0], p.v[1], p.c or 0.0)


def smoothing_equivalent(p, q, rtol: float = 1e-12) -> bool:
    a, b = np.array(smoothing_key(p)), np.array(smoothing_key(q))
    return a.shape == b.shape and bool(np.allclose(a, b, rtol=rtol, atol=rtol * np.abs(a).max()))
