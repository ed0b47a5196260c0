"""Tests for beurlab.numcore: root finding, angle reduction, path quadrature.

Frozen reference values in this file were computed once with independent
methods (plain bisection at double precision, mpmath at 512 bits) and are
asserted against, not recomputed.
"""

import math

import mpmath as mp
import numpy as np
import pytest

from beurlab.numcore import (
    InsufficientPrecision,
    LineSeg,
    LogComplex,
    NoConvergence,
    NonFinite,
    NoSignChange,
    ParamSeg,
    PrecisionContext,
    ToleranceNotMet,
    dist_to_multiples,
    find_root_bracketed,
    integrate_path,
    newton_complex,
    polyline,
    reduce_mod_2pi,
)

TWO_PI = 2.0 * math.pi

# Frozen: smallest positive root of sin(a)/(1 - (pi/80) cos(a)) = 1, found by
# 200 steps of interval-halving on [0, 1.55] (the bracket excludes the second
# root at pi/2).  Residual of the frozen value is < 1e-15.
ALPHA_EQUAL_WEIGHT = 1.4922968458964267

# Frozen: 1e20 reduced mod 2*pi, computed with mpmath.fmod at 512 bits.
REDUCED_1E20_STR = "5.581833149464241094730323202384703489318"


# ---------------- bracketed root finding ----------------


def test_root_sqrt2():
    f = lambda x: x * x - 2.0
    r = find_root_bracketed(f, 1.0, 2.0, tol=1e-13)
    assert abs(r - math.sqrt(2.0)) < 1e-12


def test_root_sin_pi():
    r = find_root_bracketed(math.sin, 3.0, 4.0, tol=1e-13)
    assert abs(r - math.pi) < 1e-12


def _arc_balance(a):
    # sin(a) / (1 - (pi/80) cos(a)) - 1: the equal-mass direction equation
    # for two unit spectral atoms spread over an arc of width pi/80.
    return math.sin(a) / (1.0 - (math.pi / 80.0) * math.cos(a)) - 1.0


def test_root_arc_balance_interior():
    # The equation has two roots in (0, pi/2]; the bracket [0, 1.55] isolates
    # the interior one.
    r = find_root_bracketed(_arc_balance, 0.0, 1.55, tol=1e-15)
    assert abs(r - ALPHA_EQUAL_WEIGHT) < 5e-15
    assert abs(_arc_balance(r)) < 1e-14


def test_root_arc_balance_endpoint():
    # On [0, pi/2] the right endpoint is itself a root in double arithmetic
    # (sin = 1 and the cosine term vanishes), and must be returned as such.
    r = find_root_bracketed(_arc_balance, 0.0, math.pi / 2.0, tol=1e-15)
    assert r == math.pi / 2.0


def test_root_mpf_path():
    # Same call with mpmath arguments stays in mpf arithmetic end to end.
    ctx = PrecisionContext(bits=192)
    with ctx.workprec():
        f = lambda x: mp.sin(x)
        r = find_root_bracketed(f, ctx.mpf(3), ctx.mpf(4), tol=mp.mpf("1e-40"))
        assert abs(r - mp.pi) < mp.mpf("1e-38")


def test_root_no_sign_change():
    with pytest.raises(NoSignChange):
        find_root_bracketed(lambda x: x * x + 1.0, -1.0, 1.0, tol=1e-10)


def test_root_nonfinite_endpoint():
    with pytest.raises(NonFinite):
        find_root_bracketed(lambda x: math.nan, 0.0, 1.0, tol=1e-10)


def test_root_bad_bracket_rejected():
    with pytest.raises(ValueError):
        find_root_bracketed(math.sin, 4.0, 3.0, tol=1e-10)
    with pytest.raises(ValueError):
        find_root_bracketed(math.sin, 3.0, 4.0, tol=0.0)


# ---------------- complex Newton ----------------


def test_newton_quadratic():
    res = newton_complex(lambda s: s * s + 1.0, lambda s: 2.0 * s,
                         0.9j, tol=1e-14)
    assert abs(res.root - 1.0j) < 1e-12
    assert res.residual <= 1e-14 * res.dfscale


def test_newton_exp():
    res = newton_complex(lambda s: np.exp(s) - 1.0, np.exp, 0.1 + 0.0j,
                         tol=1e-14)
    assert abs(res.root) < 1e-12
    assert res.iterations < 20


def test_newton_residual_contract():
    # Whatever the problem, a returned result must satisfy the advertised
    # stopping criterion |f| <= tol * |f'|.
    rng = np.random.default_rng(71)
    tol = 1e-12
    for _ in range(20):
        a = complex(*rng.uniform(-2, 2, size=2))
        b = complex(*rng.uniform(-2, 2, size=2))
        f = lambda s, a=a, b=b: (s - a) * (s - b)
        df = lambda s, a=a, b=b: 2.0 * s - a - b
        if abs(a - b) < 1e-3:
            continue
        s0 = a + 0.3 * (b - a)
        res = newton_complex(f, df, s0, tol=tol)
        assert res.residual <= tol * res.dfscale


def test_newton_derivative_vanished():
    from beurlab.numcore import DerivativeVanished
    with pytest.raises(DerivativeVanished):
        newton_complex(lambda s: s * s + 1.0, lambda s: 0.0 * s, 1.0 + 0j,
                       tol=1e-12)


def test_newton_no_convergence_carries_state():
    # cos has no zeros near the real axis origin-ward; force a stall.
    with pytest.raises(NoConvergence) as ei:
        newton_complex(lambda s: np.cos(s) + 2.0, lambda s: -np.sin(s),
                       0.2 + 0.0j, tol=1e-16, max_iter=5)
    assert ei.value.last is not None
    assert ei.value.residual > 0


# ---------------- argument reduction ----------------


def test_reduce_small_values():
    with mp.workprec(140):
        r, err = reduce_mod_2pi(mp.mpf(2), bits=128)
        assert abs(r - 2) < mp.mpf("1e-30")
        r, err = reduce_mod_2pi(4 * mp.pi, bits=128)
        # Lands at 0 or just under 2*pi depending on rounding; both are the
        # same point of the circle.
        assert min(r, abs(r - 2 * mp.pi)) < mp.mpf("1e-30")
        assert err < mp.mpf("1e-30")


def test_reduce_1e20_frozen():
    with mp.workprec(280):
        r, err = reduce_mod_2pi(mp.mpf("1e20"), bits=256)
        assert err < mp.mpf("1e-50")
        assert abs(r - mp.mpf(REDUCED_1E20_STR)) < mp.mpf("1e-38")


def test_reduce_insufficient_precision():
    with pytest.raises(InsufficientPrecision):
        reduce_mod_2pi(mp.mpf("1e20"), bits=80)


def test_reduce_shift_invariance():
    # reduce(x + 2*pi*n) == reduce(x) when the shift is formed exactly in
    # high precision.
    rng = np.random.default_rng(1105)
    with mp.workprec(320):
        for _ in range(12):
            x = mp.mpf(float(rng.uniform(0.0, 6.0)))
            n = int(rng.integers(1, 10 ** 8))
            shifted = x + 2 * mp.pi * n
            r0, e0 = reduce_mod_2pi(x, bits=320)
            r1, e1 = reduce_mod_2pi(shifted, bits=320)
            assert abs(r0 - r1) < mp.mpf("1e-60") + e0 + e1


def test_dist_to_multiples():
    with mp.workprec(128):
        d = dist_to_multiples(mp.mpf("0.3"), mp.mpf(0))
        assert abs(d - mp.mpf("0.3")) < 1e-30
        d = dist_to_multiples(2 * mp.pi - mp.mpf("0.2"), mp.mpf(0))
        assert abs(d - mp.mpf("0.2")) < 1e-30
        # Distance to pi + 2*pi*Z from just above pi.
        d = dist_to_multiples(mp.pi + mp.mpf("0.15"), mp.pi)
        assert abs(d - mp.mpf("0.15")) < 1e-30


# ---------------- path quadrature ----------------


def test_integrate_unit_circle():
    # Cauchy: integral of 1/s over the unit circle is 2*pi*i.
    circle = ParamSeg(lambda t: np.exp(2j * math.pi * t),
                      lambda t: 2j * math.pi * np.exp(2j * math.pi * t))
    val, err = integrate_path(lambda s: 1.0 / s, [circle], tol=1e-10)
    assert abs(val - 2j * math.pi) < 1e-10
    assert err < 1e-10 * (1 + abs(val))


def test_integrate_constant_segment():
    val, _ = integrate_path(lambda s: 1.0 + 0j, [LineSeg(0.0, 1.0 + 1.0j)],
                            tol=1e-12)
    assert abs(val - (1.0 + 1.0j)) < 1e-12


def test_integrate_polyline_additivity_and_reversal():
    # s^2 has primitive s^3/3, so any path 0 -> 2 gives 8/3; the split path
    # must agree with the direct one, and reversal flips the sign.
    g = lambda s: s * s
    path = polyline([0.0, 1.0 + 1.0j, 2.0 + 0.0j])
    v_split, _ = integrate_path(g, path, tol=1e-12)
    v_direct, _ = integrate_path(g, [LineSeg(0.0, 2.0)], tol=1e-12)
    assert abs(v_split - 8.0 / 3.0) < 1e-11
    assert abs(v_split - v_direct) < 1e-11
    back = [seg.reversed() for seg in reversed(path)]
    v_back, _ = integrate_path(g, back, tol=1e-12)
    assert abs(v_back + v_split) < 1e-11


def test_integrate_oscillatory_vs_trapezoid():
    # Cross-check the adaptive rule against a dense trapezoid sum on a
    # moderately oscillatory integrand.
    g = lambda s: np.cos(40.0 * s.real) * np.exp(s.real)
    val, _ = integrate_path(g, [LineSeg(0.0, 1.0)], tol=1e-12)
    ts = np.linspace(0.0, 1.0, 200001)
    ys = np.cos(40.0 * ts) * np.exp(ts)
    ref = np.trapezoid(ys, ts) if hasattr(np, "trapezoid") else np.trapz(ys, ts)
    assert abs(val - ref) < 1e-8


def test_integrate_tolerance_not_met():
    with pytest.raises(ToleranceNotMet) as ei:
        integrate_path(lambda s: np.cos(200.0 * s.real), [LineSeg(0.0, 1.0)],
                       tol=1e-13, depth_cap=3)
    # The exception still carries the best available value.
    assert ei.value.value is not None
    assert ei.value.error > 0


def test_integrate_tuple_segments():
    val, _ = integrate_path(lambda s: s, [(0.0, 1.0), (1.0, 1.0 + 1.0j)],
                            tol=1e-12)
    assert abs(val - 0.5 * (1.0 + 1.0j) ** 2) < 1e-11


# ---------------- split-exponent complex values ----------------


def test_logcomplex_roundtrip():
    rng = np.random.default_rng(9)
    for _ in range(25):
        z = complex(*rng.uniform(-3, 3, size=2))
        if abs(z) < 1e-6:
            continue
        w = LogComplex.from_complex(z).to_complex()
        assert abs(w - z) < 1e-12 * abs(z)


def test_logcomplex_arithmetic_matches_complex():
    rng = np.random.default_rng(10)
    for _ in range(25):
        z1 = complex(*rng.uniform(-3, 3, size=2))
        z2 = complex(*rng.uniform(-3, 3, size=2))
        if abs(z1) < 1e-6 or abs(z2) < 1e-6 or abs(z1 + z2) < 1e-6:
            continue
        a = LogComplex.from_complex(z1)
        b = LogComplex.from_complex(z2)
        assert abs(a.times(b).to_complex() - z1 * z2) < 1e-10 * abs(z1 * z2)
        assert abs(a.plus(b).to_complex() - (z1 + z2)) < 1e-10 * abs(z1 + z2)


def test_logcomplex_huge_magnitudes():
    # Magnitudes like e^800 overflow doubles; the split form must not.
    a = LogComplex(800.0, 0.0)
    b = LogComplex(799.0, math.pi)  # opposite sign, e times smaller
    s = a.plus(b)
    assert math.isfinite(s.logmag)
    # |e^800 - e^799| = e^800 (1 - 1/e)
    assert abs(s.logmag - (800.0 + math.log1p(-math.exp(-1.0)))) < 1e-12
    assert abs(s.phase) < 1e-12
    p = a.times(b)
    assert abs(p.logmag - 1599.0) < 1e-12
    assert abs(abs(p.phase) - math.pi) < 1e-12
    assert abs(a.log10_abs - 800.0 / math.log(10.0)) < 1e-9


def test_logcomplex_zero():
    z = LogComplex.zero()
    assert z.to_complex() == 0.0
    a = LogComplex.from_complex(2.0 + 0j)
    assert abs(a.plus(z).to_complex() - 2.0) < 1e-12
