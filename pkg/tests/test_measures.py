"""Tests for beurlab.measures.

Frozen reference numbers were computed with independent tools before the
module was written: scipy.integrate.quad / dblquad for masses and the
2D convolution value, and the beurlab.numcore path integrator for the
oscillating-chunk Mellin transform.
"""

import math
import os

import mpmath as mp
import numpy as np
import pytest
from scipy.integrate import quad

from beurlab.measures import (
    DEFAULT_GRID_H,
    RATIONAL_LOG,
    SINE_CHUNK_DERIVATIVE,
    DivergentTail,
    GridMeasure,
    GridMismatch,
    InvalidMeasure,
    MassAtOne,
    Measure,
    Overflow,
    Segment,
    atomic_measure,
    cdf,
    check_nonnegativity,
    density,
    discrete_integers,
    dp_measure,
    exp_star,
    export_cdf_csv,
    grid_delta_one,
    grid_mellin,
    mconvolve,
    mellin_stieltjes,
    read_bgm1,
    sine_chunk_measure,
    to_grid,
    write_bgm1,
)
from beurlab.numcore import ParamSeg, integrate_path

E = math.e

# Frozen oracle values (see module docstring):
P_AT_E = 1.3179021514544        # integral of (1-1/u)/log u over [1, e]
P_AT_E2 = 3.68387151054041      # ... over [1, e^2]
P_AT_E8 = 437.7232423282569     # ... over [1, e^8], scipy quad, err 1.2e-11
DPDP_AT_E = 0.7130194547194622  # (dP*dP)-cdf at e, scipy dblquad, err 4e-14

# A sine chunk with exactly phase-anchored endpoints, built the way a real
# system would be: (1+delta) tau log tau and nu tau log tau both in 2 pi Z.
CHUNK_TAU = 2000.0
CHUNK_M = 3795
CHUNK_N = 6049
# Frozen: quadrature value of the chunk Mellin transform at s = 1.5 + 10j
# (numcore GK15 over the log variable, tol 1e-11, abs err 5e-12).
CHUNK_MELLIN_ORACLE = -7.099823578327521e-13 + 8.651403842356498e-11j


def _chunk_bounds():
    ltau = math.log(CHUNK_TAU)
    one_plus_delta = 2 * math.pi * CHUNK_M / (CHUNK_TAU * ltau)
    nu = 2 * math.pi * CHUNK_N / (CHUNK_TAU * ltau)
    return math.exp(one_plus_delta * ltau), math.exp(nu * ltau)


def _pi_like_measure():
    """dP plus the anchored chunk: a toy of the combined counting measure."""
    a, b = _chunk_bounds()
    return Measure(segments=(
        Segment(1.0, math.inf, RATIONAL_LOG),
        Segment(a, b, SINE_CHUNK_DERIVATIVE, {"tau": CHUNK_TAU}),
    ))


# ---------------- cdf ----------------


def test_cdf_dp_at_one():
    assert cdf(dp_measure(), 1.0) == 0.0


def test_cdf_dp_frozen_masses():
    mu = dp_measure()
    assert abs(cdf(mu, E) - P_AT_E) < 1e-10
    assert abs(cdf(mu, E ** 2) - P_AT_E2) < 1e-10
    assert abs(cdf(mu, math.exp(8.0)) - P_AT_E8) / P_AT_E8 < 1e-12


def test_cdf_atomic_step():
    mu = atomic_measure([(2.0, 1.0), (3.0, 1.0), (4.0, 0.5)])
    # atoms at 2 and 3 are <= 3.5; the half-weight atom at 4 is not
    assert cdf(mu, 3.5) == 2.0
    assert cdf(mu, 4.0) == 2.5
    assert cdf(mu, 1.9) == 0.0
    assert cdf(mu, 100.0) == 2.5


def test_cdf_chunk_vanishes_at_anchored_endpoints():
    # The chunk's endpoints are phase anchors, so the oscillating term
    # contributes nothing at either end and the combined cdf equals the
    # smooth part there.
    mu = _pi_like_measure()
    a, b = _chunk_bounds()
    smooth = dp_measure()
    assert abs(cdf(mu, b) - cdf(smooth, b)) < 1e-9
    # mid-chunk the difference is exactly the sine term
    x = math.sqrt(a * b)
    want = math.sin(math.fmod(CHUNK_TAU * math.log(x), 2 * math.pi)) \
        - math.sin(math.fmod(CHUNK_TAU * math.log(a), 2 * math.pi))
    assert abs((cdf(mu, x) - cdf(smooth, x)) - want) < 1e-9


def test_cdf_dp_huge_argument_mpf():
    # The closed antiderivative keeps working far beyond float range.
    with mp.workprec(128):
        x = mp.exp(mp.mpf(546))
        val = cdf(dp_measure(), x)
        ratio = val / (x / mp.log(x))
        assert 1.0 < float(ratio) < 1.01


def test_cdf_partial_ratlog_segment():
    seg = Measure(segments=(Segment(E, E ** 3, RATIONAL_LOG),))
    want, _ = quad(lambda u: (1 - 1 / u) / math.log(u), E, E ** 3,
                   epsabs=1e-12)
    assert abs(cdf(seg, E ** 3) - want) < 1e-10
    assert cdf(seg, E) == 0.0


# ---------------- Mellin-Stieltjes ----------------


def test_mellin_atomic():
    mu = atomic_measure([(2.0, 1.0)])
    assert abs(mellin_stieltjes(mu, 1.0 + 0j) - 0.5) < 1e-15


def test_mellin_dp_closed_formula():
    mu = dp_measure()
    assert abs(mellin_stieltjes(mu, 2.0 + 0j) - math.log(2.0)) < 1e-12
    for s in (1.5 + 2.0j, 3.0 - 1.0j, 1.01 + 0j):
        want = np.log(s / (s - 1))
        got = mellin_stieltjes(mu, s)
        assert abs(got - want) < 1e-10 * abs(want)


def test_mellin_divergent_tail():
    mu = dp_measure()
    with pytest.raises(DivergentTail):
        mellin_stieltjes(mu, 1.0 + 0j)
    with pytest.raises(DivergentTail):
        mellin_stieltjes(mu, 0.5 + 3.0j)


def test_mellin_dp_below_one_finite_cut():
    # finite x_cut keeps Re s <= 1 legal; quadrature oracle
    mu = dp_measure()
    got = mellin_stieltjes(mu, 0.5 + 0j, x_cut=E)
    want, _ = quad(lambda u: u ** (-0.5) * (1 - 1 / u) / math.log(u)
                   if u > 1 else 0.0, 1.0, E, epsabs=1e-12)
    assert abs(got - want) < 1e-9


def test_mellin_chunk_frozen_and_quadrature():
    a, b = _chunk_bounds()
    mu = sine_chunk_measure(CHUNK_TAU, a, b)
    s = 1.5 + 10.0j
    got = mellin_stieltjes(mu, s)
    assert abs(got - CHUNK_MELLIN_ORACLE) / abs(CHUNK_MELLIN_ORACLE) < 2e-8
    # live independent oracle: adaptive quadrature in v = log u of
    # tau cos(tau v) e^{-s v}, conditioned by pulling out e^{-s la}
    la, lb = math.log(a), math.log(b)
    seg = ParamSeg(lambda t: la + (lb - la) * t, lambda t: (lb - la) + 0j)
    g = lambda z: CHUNK_TAU * math.cos(CHUNK_TAU * z.real) \
        * np.exp(-s * (z.real - la))
    scaled, _ = integrate_path(g, [seg], tol=1e-11, depth_cap=40,
                               max_panels=400_000)
    oracle = np.exp(-s * la) * scaled
    assert abs(got - oracle) / abs(oracle) < 1e-8


def test_mellin_partial_ratlog_matches_quadrature():
    seg = Measure(segments=(Segment(E, E ** 3, RATIONAL_LOG),))
    s = 2.0 + 1.0j
    got = mellin_stieltjes(seg, s)
    re, _ = quad(lambda u: (u ** (-2) * math.cos(math.log(u))
                            * (1 - 1 / u) / math.log(u)), E, E ** 3,
                 epsabs=1e-12)
    im, _ = quad(lambda u: (-u ** (-2) * math.sin(math.log(u))
                            * (1 - 1 / u) / math.log(u)), E, E ** 3,
                 epsabs=1e-12)
    assert abs(got - complex(re, im)) < 1e-9


# ---------------- grids and convolution ----------------


def test_grid_total_mass_matches_cdf():
    gm = to_grid(dp_measure(), log_max=8.0)
    # the grid stops at the last cell's upper edge, half a step under log_max
    top = math.exp(8.0 - gm.h / 2)
    assert abs(gm.total_mass() - cdf(dp_measure(), top)) < 1e-9 * P_AT_E8
    assert abs(gm.cdf(math.exp(4.0)) - cdf(dp_measure(), math.exp(4.0))) \
        < 2e-4 * cdf(dp_measure(), math.exp(4.0)) + 1e-6


def test_convolve_identity():
    gm = to_grid(dp_measure(), log_max=2.0)
    one = grid_delta_one(2.0)
    out = mconvolve(one, gm)
    assert np.allclose(out.cell_mass, gm.cell_mass, atol=1e-15)
    assert out.mass_at_one == 0.0


def test_convolve_atoms():
    two = to_grid(atomic_measure([(2.0, 1.0)]), log_max=2.0)
    three = to_grid(atomic_measure([(3.0, 1.0)]), log_max=2.0)
    out = mconvolve(two, three)
    # FFT roundoff leaves ~1e-17 dust; the real mass is a single spike
    nz = np.nonzero(np.abs(out.cell_mass) > 1e-12)[0]
    assert len(nz) == 1
    assert abs(out.cell_mass[nz[0]] - 1.0) < 1e-12
    assert abs(float(np.sum(out.cell_mass)) - 1.0) < 1e-12
    # lands within one cell of log 6
    assert abs(nz[0] * out.h - math.log(6.0)) < 2 * out.h


def test_convolve_mismatch():
    a = to_grid(dp_measure(), log_max=2.0)
    b = to_grid(dp_measure(), log_max=3.0)
    with pytest.raises(GridMismatch):
        mconvolve(a, b)


def test_dp_convolved_with_itself_against_dblquad():
    gm = to_grid(dp_measure(), log_max=1.2)
    out = mconvolve(gm, gm)
    got = out.cdf(E)
    assert abs(got - DPDP_AT_E) / DPDP_AT_E < 1e-4


# ---------------- exp_star ----------------


def test_exp_star_zero_measure():
    zero = GridMeasure(DEFAULT_GRID_H, np.zeros(1000))
    out = exp_star(zero)
    assert out.mass_at_one == 1.0
    assert np.all(out.cell_mass == 0.0)


def test_exp_star_single_atom():
    gm = to_grid(atomic_measure([(2.0, 1.0)]), log_max=2.2)
    out = exp_star(gm)
    # atoms at 2, 4, 8 with weights 1, 1/2, 1/6
    got = out.cdf(8.01)
    assert abs(got - (1.0 + 1.0 + 0.5 + 1.0 / 6.0)) < 1e-12


def test_exp_star_mass_at_one_rejected():
    with pytest.raises(MassAtOne):
        exp_star(grid_delta_one(2.0))


def test_exp_star_dp_gives_identity():
    # The counting measure generated by the smooth prime density is du:
    # its cdf is x itself.
    gm = to_grid(dp_measure(), log_max=8.0)
    out = exp_star(gm)
    for lx in np.linspace(0.5, 7.5, 15):
        x = math.exp(lx)
        got = out.cdf(x)
        assert abs(got - x) / x < 1e-3, (lx, got, x)


def test_exp_star_additivity():
    # exp*(mu + nu) = exp*(mu) * exp*(nu)
    log_max = 3.0
    mu = to_grid(dp_measure(), log_max=log_max)
    nu = to_grid(atomic_measure([(2.0, 0.7)]), log_max=log_max)
    both = GridMeasure(mu.h, mu.cell_mass + nu.cell_mass)
    lhs = exp_star(both)
    rhs = mconvolve(exp_star(mu), exp_star(nu))
    assert abs(lhs.mass_at_one - rhs.mass_at_one) < 1e-12
    assert np.allclose(lhs.cell_mass, rhs.cell_mass, atol=1e-9)


def test_exp_star_transform_exponentiates():
    # Transform of exp*(mu) is exp of the transform of mu, up to mass the
    # truncated grid drops (products escaping past log_max) and the
    # left-edge binning shift.
    mu = to_grid(atomic_measure([(2.0, 1.0), (3.0, 1.0)]), log_max=3.0)
    out = exp_star(mu)
    for s in (2.0 + 0j, 4.0 + 1.0j):
        lhs = grid_mellin(out, s)
        rhs = np.exp(grid_mellin(mu, s))
        assert abs(lhs - rhs) / abs(rhs) < 2e-3, s


def test_exp_star_matches_discrete_enumeration():
    # {2, 3}-semigroup: series exponential on the grid vs exact lattice walk
    dc = discrete_integers([2.0, 3.0], x_max=30.0)
    pi_atoms = []
    for p in (2.0, 3.0):
        j = 1
        while p ** j <= 30.0:
            pi_atoms.append((p ** j, 1.0 / j))
            j += 1
    gm = to_grid(atomic_measure(sorted(pi_atoms)), log_max=3.5)
    out = exp_star(gm)
    h = out.h
    for v in range(1, 31):
        got = out.cdf(v * math.exp(6 * h))  # clear the binning drift
        want = dc.N(v)
        assert abs(got - want) < 1e-9, (v, got, want)


# ---------------- discrete enumeration ----------------


def test_discrete_examples():
    dc = discrete_integers([2.0, 3.0], x_max=10.0)
    assert dc.N(10.0) == 7.0  # 1, 2, 3, 4, 6, 8, 9
    empty = discrete_integers([], x_max=100.0)
    assert empty.N(50.0) == 1.0
    two = discrete_integers([2.0], x_max=8.0)
    assert abs(two.Pi(8.0) - (1.0 + 0.5 + 1.0 / 3.0)) < 1e-15


def test_discrete_multiplicity():
    dc = discrete_integers([(2.0, 2)], x_max=8.0)
    # weights: 1 at 1; C(e+1, e) = e+1 at 2^e
    assert dc.N(8.0) == 1.0 + 2.0 + 3.0 + 4.0
    assert abs(dc.Pi(8.0) - (2.0 + 1.0 + 2.0 / 3.0)) < 1e-15


def test_discrete_overflow():
    with pytest.raises(Overflow):
        discrete_integers([1.5], x_max=1e6, cap=10)


# ---------------- validation and positivity ----------------


def test_unsigned_rejects_naked_chunk():
    a, b = _chunk_bounds()
    with pytest.raises(InvalidMeasure):
        sine_chunk_measure(CHUNK_TAU, a, b, signed=False)


def test_unsigned_rejects_weak_floor():
    # a chunk too close to its left end (small delta): amplitude tau^{-delta}
    # overwhelms the smooth floor
    tau = 2000.0
    ltau = math.log(tau)
    m = round(1.05 * tau * ltau / (2 * math.pi))
    n = round(2.5 * tau * ltau / (2 * math.pi))
    a = math.exp(2 * math.pi * m / tau)
    b = math.exp(2 * math.pi * n / tau)
    with pytest.raises(InvalidMeasure):
        Measure(segments=(
            Segment(1.0, math.inf, RATIONAL_LOG),
            Segment(a, b, SINE_CHUNK_DERIVATIVE, {"tau": tau}),
        ))


def test_unsigned_rejects_negative_atom():
    with pytest.raises(InvalidMeasure):
        Measure(atoms=((2.0, -1.0),))
    Measure(atoms=((2.0, -1.0),), signed=True)  # fine when flagged


def test_rejects_same_kind_overlap():
    with pytest.raises(InvalidMeasure):
        Measure(segments=(
            Segment(1.0, 10.0, RATIONAL_LOG),
            Segment(5.0, 20.0, RATIONAL_LOG),
        ))


def test_combined_density_stays_positive():
    mu = _pi_like_measure()
    worst = check_nonnegativity(mu, samples_per_chunk=2000)
    assert worst >= 0.0
    # while the chunk alone dips negative
    a, b = _chunk_bounds()
    alone = sine_chunk_measure(CHUNK_TAU, a, b, signed=True)
    assert check_nonnegativity(alone, samples_per_chunk=2000) < 0.0


def test_density_point_values():
    mu = dp_measure()
    assert abs(density(mu, 1.0) - 1.0) < 1e-12  # removable limit
    u = 7.0
    assert abs(density(mu, u) - (1 - 1 / u) / math.log(u)) < 1e-15


# ---------------- serialization ----------------


def test_bgm1_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    gm = GridMeasure(1e-3, rng.uniform(0, 2, size=500))
    p = os.path.join(tmp_path, "m.bgm1")
    write_bgm1(gm, p)
    back = read_bgm1(p)
    assert back.h == gm.h
    assert back.ncells == gm.ncells
    assert np.array_equal(back.cell_mass, gm.cell_mass)


def test_bgm1_folds_unit_atom(tmp_path):
    gm = GridMeasure(1e-3, np.arange(5, dtype=float), mass_at_one=2.0)
    p = os.path.join(tmp_path, "m.bgm1")
    write_bgm1(gm, p)
    back = read_bgm1(p)
    assert back.mass_at_one == 0.0
    assert back.cell_mass[0] == 2.0  # relocated
    assert abs(back.cdf(2.0) - gm.cdf(2.0)) < 1e-15


def test_csv_export(tmp_path):
    p = os.path.join(tmp_path, "dp.csv")
    xs = [1.0, E, E ** 2]
    export_cdf_csv(dp_measure(), p, xs)
    rows = [line.split(",") for line in
            open(p).read().strip().splitlines()]
    assert rows[0] == ["x", "cdf"]
    assert abs(float(rows[2][1]) - P_AT_E) < 1e-10
