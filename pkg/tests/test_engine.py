import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtr

from rfcascade import engine
from rfcascade.cascade import STIncrement, cascade_spatial, cascade_timecausal
from rfcascade.engine import DerivOp, MacCounter, apply_deriv, compare, convolve, rf_response, sample
from rfcascade.kernels import gauss1d
from rfcascade.params import CovMat2, SpatialParams, STParams

I = CovMat2.identity()


@pytest.fixture
def both_backends():
    names = sorted(engine._BACKENDS)
    saved = engine.BACKEND
    yield names
    engine.use_backend(saved)


def vandermonde_weights(order, r):
    """Finite difference weights from the moment conditions, solved exactly in rationals."""
    n = 2 * r + 1
    offs = list(range(-r, r + 1))
    A = [[Fraction(o) ** p for o in offs] for p in range(n)]
    b = [Fraction(math.factorial(order)) if p == order else Fraction(0) for p in range(n)]
    # Gauss-Jordan on the exact system
    M = [row + [rhs] for row, rhs in zip(A, b)]
    for c in range(n):
        piv = next(i for i in range(c, n) if M[i][c] != 0)
        M[c], M[piv] = M[piv], M[c]
        M[c] = [x / M[c][c] for x in M[c]]
        for i in range(n):
            if i != c and M[i][c] != 0:
                M[i] = [a - M[i][c] * b for a, b in zip(M[i], M[c])]
    return np.array([float(M[i][n]) for i in range(n)])


@pytest.mark.parametrize("order", [1, 2])
@pytest.mark.parametrize("accuracy", [2, 4, 6, 8, 10, 12])
def test_stencil_matches_moment_conditions(order, accuracy):
    np.testing.assert_allclose(engine.stencil(order, accuracy), vandermonde_weights(order, accuracy // 2),
                               rtol=1e-13, atol=1e-15)


def test_stencil_shapes_and_symmetry():
    np.testing.assert_allclose(engine.stencil(1, 2), [-0.5, 0, 0.5])
    np.testing.assert_allclose(engine.stencil(2, 2), [1, -2, 1])
    for m in range(1, 5):
        w = engine.stencil(m, 6)
        np.testing.assert_allclose(w, (-1) ** m * w[::-1], atol=1e-15)
    with pytest.raises(ValueError):
        engine.stencil(1, 5)


def test_sample_concentrates_for_small_scale():
    k = sample(SpatialParams(1e-3, I), "spatial", 1.0)
    c = k.values[k.origin]
    assert c * k.cell > 1 - 1e-12


def test_normalized_kernels_sum_to_one():
    for p, fam in [(SpatialParams(2.0, CovMat2(1.0, 0.3, 0.6)), "spatial"),
                   (STParams(1.0, I, 2.0, (0.3, 0.1)), "st"),
                   (STParams(1.0, I, 2.0, (0.3, 0.1), 2.0), "timecausal")]:
        k = sample(p, fam, 0.5, renormalize=True)
        assert k.normalized and abs(k.total() - 1.0) <= 1e-12


@pytest.mark.parametrize("p, fam", [(SpatialParams(3.0, CovMat2(1.0, -0.4, 0.7)), "spatial"),
                                    (STParams(1.5, I, 1.5, (0.4, 0.0)), "st")])
def test_kernel_mass_at_wide_truncation(p, fam):
    k = sample(p, fam, 0.5, truncation=6)
    assert abs(k.total() - 1.0) <= 1e-6


def test_timecausal_kernel_causal_and_normalized():
    k = sample(STParams(1.0, I, 4.0, (0.2, 0.0), math.sqrt(2)), "timecausal", 0.5)
    assert k.origin[0] == 0 and k.lag_range()[0][0] == 0
    assert np.all(k.values >= 0)
    assert abs(k.total() - 1.0) <= 1e-5


def test_resource_limit():
    with pytest.raises(engine.ResourceLimit):
        sample(STParams(400.0, I, 400.0), "st", 0.25)


def test_convolve_delta_returns_kernel():
    k = sample(SpatialParams(2.0, CovMat2(1.0, 0.4, 0.8)), "spatial", 1.0)
    n = 41
    f = np.zeros((n, n))
    f[n // 2, n // 2] = 1.0
    out = convolve(f, k)
    ry, rx = k.origin
    ny, nx = k.values.shape
    np.testing.assert_array_equal(out[n // 2 - ry:n // 2 - ry + ny, n // 2 - rx:n // 2 - rx + nx],
                                  k.values * k.cell)


def test_convolve_semigroup_1d():
    h = 0.25
    # zero spatial covariance samples as a point mass, leaving a 1-D temporal Gaussian
    k1 = engine.sample_increment(STIncrement(1.5, (0.0, 0.0), CovMat2(0, 0, 0), True), (h, 1.0, 1.0))
    k2 = engine.sample_increment(STIncrement(2.5, (0.0, 0.0), CovMat2(0, 0, 0), True), (h, 1.0, 1.0))
    n = 241
    f = np.zeros((n, 1, 1))
    f[n // 2] = 1.0 / h
    out = convolve(convolve(f, k1), k2)[:, 0, 0]
    t = (np.arange(n) - n // 2) * h
    assert np.max(np.abs(out - gauss1d(t, 4.0))) <= 1e-6


def test_convolve_constant_with_normalized_kernel():
    k = sample(SpatialParams(2.0, CovMat2(1.0, 0.4, 0.8)), "spatial", 1.0, renormalize=True)
    out = convolve(np.full((40, 40), 3.0), k, boundary="interior_only")
    np.testing.assert_allclose(out, 3.0, rtol=1e-14)


def test_convolve_interior_only_matches_zero_pad(rng):
    f = rng.standard_normal((30, 34))
    k = sample(SpatialParams(1.5, CovMat2(1.0, 0.2, 0.6)), "spatial", 1.0)
    full = convolve(f, k)
    inner = convolve(f, k, boundary="interior_only")
    (ly, hy), (lx, hx) = k.lag_range()
    np.testing.assert_array_equal(inner, full[hy:30 + ly, hx:34 + lx])


def test_convolve_rejects_bad_input(rng):
    k = sample(SpatialParams(1.0, I), "spatial", 0.5)
    with pytest.raises(ValueError):
        convolve(rng.standard_normal((20, 20)), k, spacing=1.0)
    with pytest.raises(ValueError):
        convolve(np.zeros(5), k)
    with pytest.raises(ValueError):
        convolve(np.zeros((20, 20)), k, boundary="wrap")
    kt = sample(STParams(1.0, I, 1.0), "st", 1.0)
    with pytest.raises(ValueError):
        convolve(np.zeros((20, 20)), kt)


def test_deriv_examples():
    y, x = np.mgrid[0:20, 0:20].astype(float)
    inner = (slice(4, -4),) * 2
    np.testing.assert_allclose(apply_deriv(x, DerivOp.directional(1, 0.0), 1.0)[inner], 1.0, atol=1e-12)
    H = apply_deriv(x * y, DerivOp.hessian(), 1.0)
    np.testing.assert_allclose(H[0][inner], 0, atol=1e-11)
    np.testing.assert_allclose(H[1][inner], 1, atol=1e-11)
    np.testing.assert_allclose(H[2][inner], 0, atol=1e-11)
    t, _, x3 = np.mgrid[0:16, 0:16, 0:16].astype(float)
    r = apply_deriv(x3 - t, DerivOp.tbar(1, (1.0, 0.0)), 1.0)
    np.testing.assert_allclose(r[(slice(4, -4),) * 3], 0, atol=1e-12)
    with pytest.raises(ValueError):
        apply_deriv(np.zeros((4, 4)), DerivOp.directional(2), 1.0)
    with pytest.raises(ValueError):
        apply_deriv(np.zeros((20, 20)), DerivOp.tbar(1), 1.0)
    with pytest.raises(ValueError):
        DerivOp.directional(-1)


def test_directional_derivative_of_plane():
    y, x = np.mgrid[0:20, 0:20].astype(float)
    phi = 0.7
    r = apply_deriv(2 * x - 3 * y, DerivOp.directional(1, phi), 1.0)
    np.testing.assert_allclose(r[5:-5, 5:-5], 2 * math.cos(phi) - 3 * math.sin(phi), atol=1e-12)


def test_rf_response_identity_and_even_ops_on_ramp():
    y, x = np.mgrid[0:64, 0:64].astype(float)
    p = SpatialParams(4.0, I)
    k = sample(p, "spatial", 1.0)
    np.testing.assert_array_equal(rf_response(x, p, "spatial", DerivOp(), 1.0), convolve(x, k))
    r = rf_response(0.3 * x - 0.2 * y, p, "spatial", DerivOp.directional(2, 0.4), 1.0)
    inner = (slice(16, -16),) * 2
    assert np.max(np.abs(r[inner])) <= 1e-9


def test_rf_response_step_edge_matches_erf_profile():
    # sums of point samples act like midpoint integrals: the edge sits half a cell early and
    # the end correction is ~ h^2 g'/24, so sample finely (std = 8 cells)
    h, n, x0, s = 0.25, 192, 96, 4.0
    f = np.zeros((100, n))
    f[:, x0:] = 1.0
    p = SpatialParams(s, I)
    L = convolve(f, sample(p, "spatial", h))[50]
    x = (np.arange(n) - x0 + 0.5) * h
    inner = slice(40, -40)
    np.testing.assert_allclose(L[inner], ndtr(x[inner] / 2.0), atol=3e-4)
    g = rf_response(f, p, "spatial", DerivOp.directional(1, 0.0), h)[50]
    assert np.argmax(g) in (x0 - 1, x0)
    np.testing.assert_allclose(g[inner], gauss1d(x[inner], s), atol=1e-3 * gauss1d(0, s))


def test_commutation_with_derivative_kernel(rng):
    f = rng.standard_normal((48, 48))
    k = sample(SpatialParams(3.0, CovMat2(1.0, 0.3, 0.7)), "spatial", 1.0)
    op = DerivOp.directional(2, 0.6)
    a = apply_deriv(convolve(f, k), op, 1.0)
    b = convolve(f, engine.deriv_kernel(k, op))
    inner = engine.interior_slices(f.shape, [k], extra=op.stencil_radius())
    assert np.max(np.abs(a[inner] - b[inner])) <= 1e-6 * np.max(np.abs(a[inner]))


@pytest.mark.parametrize("fam, c", [("st", None), ("timecausal", 2.0)])
def test_galilean_consistency_integer_velocity(rng, fam, c):
    T, n = 12, 48
    f = np.zeros((T, n, n))
    f[:, 16:32, 16:32] = rng.standard_normal((T, 16, 16))
    v = (1, -1)
    g = np.stack([np.roll(f[t], (v[1] * t, v[0] * t), axis=(0, 1)) for t in range(T)])
    L0 = convolve(f, sample(STParams(1.0, I, 1.0, (0.0, 0.0), c), fam, 1.0))
    Lv = convolve(g, sample(STParams(1.0, I, 1.0, (float(v[0]), float(v[1])), c), fam, 1.0))
    warped = np.stack([np.roll(L0[t], (v[1] * t, v[0] * t), axis=(0, 1)) for t in range(T)])
    inner = (slice(None), slice(6, -6), slice(6, -6))
    np.testing.assert_allclose(Lv[inner], warped[inner], atol=1e-12)


def test_determinism_across_threads_and_backends(rng, both_backends):
    f = rng.standard_normal((20, 40, 40))
    k = sample(STParams(2.0, CovMat2(1.0, 0.3, 0.8), 2.0, (0.4, -0.3)), "st", 1.0)
    outs = []
    for name in both_backends:
        engine.use_backend(name)
        for th in (1, 3, 8):
            outs.append(convolve(f, k, threads=th))
    for o in outs[1:]:
        np.testing.assert_array_equal(o, outs[0])


def test_unknown_backend():
    with pytest.raises(ValueError):
        engine.use_backend("fortran")


def test_run_cascade_empty_and_one_spatial_step(rng, field2):
    p1 = SpatialParams(2.0, CovMat2(1.0, 0.2, 0.8))
    p2 = SpatialParams(5.0, CovMat2(1.0, 0.3, 1.1))
    base = engine.run_cascade(field2, p1, [], "spatial", 1.0)
    np.testing.assert_array_equal(base, convolve(field2, sample(p1, "spatial", 1.0)))
    out = engine.run_cascade(field2, p1, [cascade_spatial(p1, p2)], "spatial", 1.0)
    direct = convolve(field2, sample(p2, "spatial", 1.0))
    assert compare(out, direct)["rel_l2"] <= 1e-3
    with pytest.raises(ValueError):
        engine.run_cascade(field2, p2, [cascade_spatial(p2, p1)], "spatial", 1.0)


def test_run_cascade_timecausal_three_levels(rng):
    f = rng.standard_normal((90, 24, 24))
    levels = [STParams(2.0, I, 1.0 * 4 ** k, (0.0, 0.0), 2.0) for k in range(3)]
    levels = [STParams(2.0 * (k + 1), I, p.tau, p.v, 2.0) for k, p in enumerate(levels)]
    incs = [cascade_timecausal(a, b) for a, b in zip(levels, levels[1:])]
    out = engine.run_cascade(f, levels[0], incs, "timecausal", 1.0)
    direct = convolve(f, sample(levels[-1], "timecausal", 1.0))
    region = (slice(None), slice(10, -10), slice(10, -10))
    assert compare(out, direct, region)["rel_l2"] <= 1e-3


def test_compare_examples():
    a = np.ones((5, 5))
    assert compare(a, a) == {"rel_l2": 0.0, "rel_linf": 0.0}
    b = a.copy()
    b[2, 2] += 1e-4
    r = compare(b, a)
    assert math.isclose(r["rel_linf"], 1e-4, rel_tol=1e-9)
    assert math.isclose(compare(b, a, margin=((3, 0), (0, 0)))["rel_linf"], 0.0)
    with pytest.raises(ValueError):
        compare(a, np.ones((4, 5)))


def test_mac_counter(field2):
    k = sample(SpatialParams(2.0, I), "spatial", 1.0)
    c = MacCounter()
    convolve(field2, k, counter=c)
    assert c.macs == k.nnz * field2.size


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.floats(0, math.pi), st.integers(0, 2))
def test_mixed_operator_terms_sum(m, phi, n):
    # the coefficients sum to the operator symbol at unit frequency: (cos + sin)^m (1 + v1 + v2)^n
    op = DerivOp.mixed(m, phi, n, (0.5, -0.25))
    total = sum(op.components()[0].values())
    assert math.isclose(total, (math.cos(phi) + math.sin(phi)) ** m * 1.25 ** n, rel_tol=1e-12, abs_tol=1e-12)
