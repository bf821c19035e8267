"""Self-verification suites: Hermite tables, generator identities, semigroup, cascades, limit kernel.

Every check returns Row records; a suite passes when all of its rows pass.
"""
from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from unittest import mock

import numpy as np
from scipy.ndimage import gaussian_filter

from . import engine, generators, hermite
from .cascade import (cascade_spatial, cascade_st, cascade_timecausal, compose_check,
                      criterion_residuals)
from .kernels import exp_stage_taps, limit_kernel
from .params import CovMat2, SpatialParams, STParams, cov_from_axes, smoothing_key

SUITES = ("hermite", "generators", "semigroup", "cascade", "limit")
MUTATIONS = ("hermite-sign", "generator-sign")


@dataclass(frozen=True)
class Row:
    suite: str
    family: str
    check: str
    value: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.tol)


# --- random draws -----------------------------------------------------------------------

def random_sigma(rng, lo=0.6, hi=1.6) -> CovMat2:
    s1, s2 = rng.uniform(lo, hi, 2)
    return cov_from_axes(s1, s2, rng.uniform(0, math.pi))


def random_params(family: str, rng):
    s = rng.uniform(0.5, 2.5)
    if family == "spatial":
        return SpatialParams(s, random_sigma(rng))
    sigma = CovMat2.identity() if family == "st_iso" else random_sigma(rng)
    tau = rng.uniform(0.5, 3.0)
    v = tuple(rng.uniform(-1, 1, 2))
    c = float(rng.choice([math.sqrt(2), 2.0])) if family == "timecausal" else None
    return STParams(s, sigma, tau, v, c)


def random_point(family: str, p, rng) -> np.ndarray:
    C = p.prod.as_array()
    x = rng.multivariate_normal([0, 0], C) * 1.2
    if family == "spatial":
        return x
    if family == "timecausal":
        t = rng.uniform(0.3, 3.0) * math.sqrt(p.tau)
    else:
        t = rng.normal() * 1.2 * math.sqrt(p.tau)
    return np.array([x[0] + p.v[0] * t, x[1] + p.v[1] * t, t])


# --- finite-difference oracle for table entries ----------------------------------------

_COORD = ("x1", "x2", "tbar", "t")


def split_index(idx: str) -> list:
    """'x1tbar' -> ['x1', 'tbar']; parameter tags are returned whole."""
    if idx in hermite.PARAM_TAGS:
        return [idx]
    out = []
    rest = idx
    while rest:
        for tok in _COORD:
            if rest.startswith(tok):
                out.append(tok)
                rest = rest[len(tok):]
                break
        else:
            raise KeyError(idx)
    return out


def _direction(tok, p, dim):
    d = np.zeros(dim)
    if tok == "x1":
        d[0] = 1
    elif tok == "x2":
        d[1] = 1
    elif tok == "t":
        d[2] = 1
    else:  # tbar = d/dt + v . grad_x
        d[:] = [p.v[0], p.v[1], 1.0]
    return d


def fd_deriv(family: str, idx: str, point, p, sampler=None, rel_h: float = 1e-2) -> float:
    """Richardson-extrapolated central difference of the kernel for one table index."""
    point = np.asarray(point, dtype=float)

    def k(pt, q=p):
        return float(hermite.kernel_value(family, pt, q, sampler))

    if idx in hermite.PARAM_TAGS:
        h0 = rel_h * generators.natural_scale(p, idx)

        def d(h):
            return (k(point, generators.shift_param(p, idx, h))
                    - k(point, generators.shift_param(p, idx, -h))) / (2 * h)
    else:
        toks = split_index(idx)
        h0 = rel_h * math.sqrt(min(np.linalg.eigvalsh(p.prod.as_array()).min(),
                                   getattr(p, "tau", np.inf)))
        dirs = [_direction(t, p, point.size) for t in toks]
        if len(dirs) == 1:
            def d(h):
                return (k(point + h * dirs[0]) - k(point - h * dirs[0])) / (2 * h)
        else:
            a, b = dirs

            def d(h):
                return (k(point + h * a + h * b) - k(point + h * a - h * b)
                        - k(point - h * a + h * b) + k(point - h * a - h * b)) / (4 * h * h)
    return (4 * d(h0 / 2) - d(h0)) / 3


def hermite_suite(families=hermite.FAMILIES, n: int = 100, seed: int = 0) -> list:
    rows = []
    for fam in families:
        rng = np.random.default_rng(seed)
        draws = [random_params(fam, rng) for _ in range(n)]
        pts = [random_point(fam, p, rng) for p in draws]
        samplers = [None] * n
        if fam == "timecausal":
            samplers = [hermite.default_sampler(p.tau, p.c) for p in draws]
        for idx in hermite.TABLES[fam]:
            a = np.array([float(hermite.analytic_deriv(idx, x, p, fam, sm))
                          for x, p, sm in zip(pts, draws, samplers)])
            f = np.array([fd_deriv(fam, idx, x, p, sm) for x, p, sm in zip(pts, draws, samplers)])
            err = float(np.max(np.abs(a - f)) / np.max(np.abs(a)))
            tol = 1e-4 if fam == "timecausal" and idx in ("v1", "v2") else 1e-5
            rows.append(Row("hermite", fam, idx, err, tol))
    return rows


# --- generators -------------------------------------------------------------------------

def smooth_field(shape, sigma: float = 1.0, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    f = gaussian_filter(rng.standard_normal(shape), sigma)
    return f / f.std()


def generator_params(family: str, rng):
    """Parameters with every spatial and temporal std >= 2 cells at unit spacing."""
    s = rng.uniform(5.0, 6.5)
    if family == "spatial":
        return SpatialParams(s, random_sigma(rng, 0.9, 1.1))
    sigma = CovMat2.identity() if family == "st_iso" else random_sigma(rng, 0.9, 1.1)
    c = float(rng.choice([math.sqrt(2), 2.0])) if family == "timecausal" else None
    return STParams(s, sigma, rng.uniform(4.0, 6.0), tuple(rng.uniform(-0.3, 0.3, 2)), c)


def generator_suite(families=hermite.FAMILIES, n_points: int = 100, image: int = 128,
                    volume: tuple = (64, 64, 64), signal: bool = True, seed: int = 0) -> list:
    rows = []
    for fam in families:
        rng = np.random.default_rng(seed)
        for ident in generators.list_identities(fam):
            draws = [random_params(fam, rng) for _ in range(n_points)]
            worst = 0.0
            for p in draws:
                x = random_point(fam, p, rng)
                worst = max(worst, generators.kernel_residual(ident, p, x[None]))
            rows.append(Row("generators", fam, f"{ident.lhs}:algebra", worst, 1e-10))
        if not signal:
            continue
        f = smooth_field((image, image) if fam == "spatial" else volume, 1.0, seed)
        for ident in generators.list_identities(fam):
            p = generator_params(fam, rng)
            rep = generators.verify_identity(ident, p, f, 1.0)
            rows.append(Row("generators", fam, f"{ident.lhs}:signal", rep.max_rel_residual, 1e-3))
    return rows


# --- semigroup and cascades -------------------------------------------------------------

def _feasible_spatial_pair(rng):
    p1 = SpatialParams(rng.uniform(1.0, 2.0), random_sigma(rng))
    d = random_sigma(rng).scaled(rng.uniform(0.5, 3.0))
    C2 = p1.prod + d
    return p1, SpatialParams(1.0, C2)


def _feasible_st_pair(rng, causal=False):
    pi = STParams(rng.uniform(1.0, 2.0), random_sigma(rng), rng.uniform(1.0, 3.0),
                  tuple(rng.uniform(-0.5, 0.5, 2)))
    dt = rng.uniform(0.5, 3.0)
    dv = rng.uniform(-0.5, 0.5, 2)
    dC = random_sigma(rng).scaled(rng.uniform(0.5, 2.0))
    tj = pi.tau + dt
    vj = (pi.tau * np.asarray(pi.v) + dt * dv) / tj
    Cj = (pi.prod.as_array() + dC.as_array() + dt * np.outer(dv, dv)
          + pi.tau * np.outer(pi.v, pi.v) - tj * np.outer(vj, vj))
    return pi, STParams(1.0, CovMat2.from_array(Cj), tj, tuple(vj))


def semigroup_suite(n: int = 20, seed: int = 0) -> list:
    """Closed-form composition: increments reproduce the target parameters exactly."""
    rng = np.random.default_rng(seed)
    worst_sp = worst_st = worst_eq = worst_tc = 0.0
    for _ in range(n):
        p1, p2 = _feasible_spatial_pair(rng)
        q = compose_check(cascade_spatial(p1, p2), p1)
        worst_sp = max(worst_sp, _key_err(q, p2))
        pi, pj = _feasible_st_pair(rng)
        inc = cascade_st(pi, pj)
        worst_st = max(worst_st, _key_err(compose_check(inc, pi), pj))
        worst_eq = max(worst_eq, float(np.max(criterion_residuals(inc, pi, pj))))
        c = float(rng.choice([math.sqrt(2), 2.0]))
        a = STParams(1.0, random_sigma(rng), rng.uniform(1, 3), tuple(rng.uniform(-.5, .5, 2)), c)
        b = STParams(1.0, a.sigma + random_sigma(rng), a.tau * c * c, a.v, c)
        worst_tc = max(worst_tc, _key_err(compose_check(cascade_timecausal(a, b), a), b))
    return [Row("semigroup", "spatial", "compose", worst_sp, 1e-12),
            Row("semigroup", "st_affine", "compose", worst_st, 1e-12),
            Row("semigroup", "st_affine", "six_equations", worst_eq, 1e-12),
            Row("semigroup", "timecausal", "compose", worst_tc, 1e-12)]


def _key_err(p, q) -> float:
    a, b = np.array(smoothing_key(p)), np.array(smoothing_key(q))
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def cascade_suite(n: int = 3, image: int = 96, seed: int = 0, spacing: float = 0.35) -> list:
    """Direct vs cascaded smoothing on random smooth images, plus infeasibility flags.

    The default spacing keeps every kernel std of the random pairs at two cells or more.
    """
    rng = np.random.default_rng(seed)
    f = smooth_field((image, image), 1.0, seed)
    worst = 0.0
    flagged = 0
    for _ in range(n):
        p1 = SpatialParams(rng.uniform(1.0, 2.0), random_sigma(rng))
        p2 = SpatialParams(1.0, p1.prod + random_sigma(rng).scaled(rng.uniform(1.0, 3.0)))
        inc = cascade_spatial(p1, p2)
        k2 = engine.sample(p2, "spatial", spacing)
        d = engine.convolve(f, k2)
        c = engine.run_cascade(f, p1, [inc], "spatial", spacing)
        worst = max(worst, engine.compare(c, d, engine.interior_slices(f.shape, [k2]))["rel_l2"])
        flagged += not cascade_spatial(p2, p1).feasible
    return [Row("cascade", "spatial", "direct_vs_cascade", worst, 1e-3),
            Row("cascade", "spatial", "infeasible_missed", float(n - flagged), 0.0)]


def limit_suite(seed: int = 0) -> list:
    """Variance, unit mass and the adjacent-scale recurrence of the sampled limit kernel."""
    rows = []
    for c in (math.sqrt(2), 2.0):
        tau = 4.0
        dt = 0.5
        t = np.arange(0, 2400) * dt
        a, ap = limit_kernel(t, tau, c)
        b, bp = limit_kernel(t, tau * c * c, c)
        st = exp_stage_taps(math.sqrt(c * c - 1) * math.sqrt(tau), dt)
        rec = np.convolve(a, st)[:t.size] * dt
        name = f"c={c:.4g}"
        rows.append(Row("limit", name, "variance", abs(bp.variance - bp.tau) / bp.tau, 1e-6))
        m = (b * t).sum() * dt
        var = (b * t * t).sum() * dt - m * m
        rows.append(Row("limit", name, "sampled_variance", abs(var - bp.variance) / bp.tau, 1e-6))
        rows.append(Row("limit", name, "mass", abs(b.sum() * dt - 1.0), 1e-6))
        rows.append(Row("limit", name, "recurrence_l1", float(np.abs(rec - b).sum() * dt), 1e-4))
    return rows


# --- mutation self-test -----------------------------------------------------------------

@contextlib.contextmanager
def mutation(name: str | None):
    """Temporarily inject a wrong-sign error; the suites must notice it."""
    if name is None:
        yield
        return
    if name == "hermite-sign":
        orig = hermite.ratio

        def bad(family, idx, point, params):
            r = orig(family, idx, point, params)
            return -r if idx in ("x1", "S11") else r

        with mock.patch.object(hermite, "ratio", bad):
            yield
    elif name == "generator-sign":
        orig = generators.list_identities

        def bad_list(family):
            out = []
            for ident in orig(family):
                if ident.lhs == "S12":
                    rhs = ident.rhs
                    ident = generators.GeneratorIdentity(
                        ident.family, ident.lhs, lambda p, rhs=rhs: {k: -v for k, v in rhs(p).items()},
                        ident.directionality)
                out.append(ident)
            return out

        with mock.patch.object(generators, "list_identities", bad_list):
            yield
    else:
        raise ValueError(f"unknown mutation {name!r}; choose from {MUTATIONS}")


def run(suites=SUITES, families=None, quick: bool = True, seed: int = 0) -> list:
    """Run the selected suites; quick mode shrinks draws and grids for a fast self-check."""
    fams = tuple(families) if families else hermite.FAMILIES
    rows = []
    for s in suites:
        if s == "hermite":
            rows += hermite_suite(fams, 20 if quick else 100, seed)
        elif s == "generators":
            rows += generator_suite(fams, 20 if quick else 100, 96 if quick else 128,
                                    (56, 56, 56) if quick else (64, 64, 64), True, seed)
        elif s == "semigroup":
            rows += semigroup_suite(20, seed)
        elif s == "cascade":
            rows += cascade_suite(3 if quick else 20, 96 if quick else 128, seed)
        elif s == "limit":
            rows += limit_suite(seed)
        else:
            raise ValueError(f"unknown suite {s!r}; choose from {SUITES}")
    return rows
