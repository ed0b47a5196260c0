import dataclasses
import math

import mpmath as mp
import pytest

from beurlab.numcore import InsufficientPrecision, PrecisionContext, \
    dist_to_multiples, reduce_mod_2pi
from beurlab.systems import (
    ContinuousPrimeSystem,
    SearchFailed,
    alignment_denominator,
    build_system,
    epsilon_bound_check,
    integer_target,
    parity_phase,
    read_manifest,
    verify_properties,
    write_manifest,
)

# frozen from a 256-bit build at floor 3 (cross-checked at 512 bits)
TAU0_FLOOR3 = 22.600901413970869
LOGX0_FLOOR3 = 8.896190738014514
A0_FLOOR3 = 2.4169647660199310608
NU_INT_FLOOR3 = 23

# frozen floats for the shared floor-2000 system
TAU0_2000 = 13095.898
TAU1_2000 = 2.3149001e23
DELTA0_2000 = 0.479018
DELTA1_2000 = 0.116676


# ---------------------------------------------------------------------------
# build at the smallest floor
# ---------------------------------------------------------------------------


def test_small_floor_build_values(system1_small):
    sys_, report = system1_small
    assert sys_.K == 1
    assert float(sys_.tau[0]) > 3
    assert float(sys_.tau[0]) == pytest.approx(TAU0_FLOOR3, rel=1e-12)
    assert float(sys_.log_x[0]) == pytest.approx(LOGX0_FLOOR3, rel=1e-12)
    assert float(sys_.a[0]) == pytest.approx(A0_FLOOR3, rel=1e-12)
    assert sys_.nu_int[0] == NU_INT_FLOOR3
    assert 2 <= float(sys_.nu[0]) <= 3


def test_small_floor_four_residuals(system1_small):
    # the four exactly-solved alignments all land below 1e-30 at 256 bits
    sys_, report = system1_small
    r = report.records[0]
    for res in (r.res_b1, r.res_b2, r.res_c, r.res_d_xi):
        assert float(res) < 1e-30
    assert float(r.d_dist) < float(r.d_threshold)


def test_small_floor_residuals_recomputed_at_512(system1_small):
    # recompute the same distances from the stored values at doubled
    # precision: still < 1e-30, so they are not a rounding artifact
    sys_, _ = system1_small
    with mp.workprec(512):
        tau, ltau = sys_.tau[0], sys_.log_tau[0]
        a, nu, lx = sys_.a[0], sys_.nu[0], sys_.log_x[0]
        for value, target in (
                (tau * (ltau + mp.log(ltau) + a), mp.mpf(0)),
                (nu * tau * ltau, mp.mpf(0)),
                (tau * lx, mp.mpf(0))):
            r, _ = reduce_mod_2pi(value, bits=512)
            assert float(dist_to_multiples(r, target)) < 1e-30


def test_small_floor_delta_failure_is_the_only_one(system1_small):
    # tau_0 ~ 22.6 makes delta > 1: recorded, not raised, and nothing else
    sys_, report = system1_small
    assert float(sys_.delta[0]) > 1
    assert report.failures
    assert all("delta" in f for f in report.failures)


def test_residuals_shrink_when_bits_double():
    _, rep256 = build_system(1, 3, relaxed=True, ctx=PrecisionContext(bits=256))
    _, rep512 = build_system(1, 3, relaxed=True, ctx=PrecisionContext(bits=512))
    worst256 = max(float(rep256.records[0].res_b1),
                   float(rep256.records[0].res_b2),
                   float(rep256.records[0].res_c))
    worst512 = max(float(rep512.records[0].res_b1),
                   float(rep512.records[0].res_b2),
                   float(rep512.records[0].res_c))
    assert worst256 < 1e-30
    assert worst512 < 1e-100
    assert worst512 < worst256


# ---------------------------------------------------------------------------
# the integer-crossing search
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("floor", [3, 50, 2000, 12345])
def test_crossing_found_for_assorted_floors(floor):
    sys_, report = build_system(1, floor, relaxed=True,
                                ctx=PrecisionContext(bits=256))
    assert float(sys_.tau[0]) > floor
    assert float(report.records[0].res_d_xi) < 1e-30
    lo, hi = report.records[0].xi_window
    assert lo < float(sys_.log_xi[0]) < hi


def test_target_function_grows():
    # the scanned target keeps increasing well past each found crossing
    with mp.workprec(128):
        alpha = mp.log(6) + mp.mpf(1) / 2
        vals = [integer_target(mp.mpf(L), alpha) for L in (9, 30, 100, 1000)]
    assert all(vals[i] < vals[i + 1] for i in range(len(vals) - 1))


def test_tiny_window_reports_search_failure():
    with pytest.raises(SearchFailed) as exc:
        build_system(1, 3, relaxed=True, ctx=PrecisionContext(bits=256),
                     xi_window=1.0001)
    assert exc.value.window is not None
    lo, hi = exc.value.window
    assert hi < lo * 1.001


def test_literal_mode_feasible_only_at_tiny_floor():
    sys_, report = build_system(1, 3, relaxed=False,
                                ctx=PrecisionContext(bits=256))
    assert float(sys_.log_xi[0]) > 9  # starts above T^2
    assert float(report.records[0].res_c) < 1e-30
    with pytest.raises(SearchFailed):
        build_system(1, 1000, relaxed=False, ctx=PrecisionContext(bits=256))
    with pytest.raises(SearchFailed):
        # level 1 needs xi > e^{T^2} with T = (2 tau_0)^5: out of reach
        build_system(2, 3, relaxed=False, ctx=PrecisionContext(bits=320))


def test_insufficient_precision_raised():
    with pytest.raises(InsufficientPrecision):
        build_system(1, 10 ** 6, relaxed=True, ctx=PrecisionContext(bits=64))


def test_rejects_bad_arguments():
    with pytest.raises(ValueError):
        build_system(0, 3)
    with pytest.raises(ValueError):
        build_system(1, 2.5)


# ---------------------------------------------------------------------------
# the shared two-level system
# ---------------------------------------------------------------------------


def test_two_level_values(system2):
    assert float(system2.tau[0]) == pytest.approx(TAU0_2000, rel=1e-6)
    assert float(system2.tau[1]) == pytest.approx(TAU1_2000, rel=1e-6)
    assert float(system2.delta[0]) == pytest.approx(DELTA0_2000, rel=1e-4)
    assert float(system2.delta[1]) == pytest.approx(DELTA1_2000, rel=1e-4)


def test_separation_and_growth(system2):
    with mp.workprec(system2.bits):
        assert system2.tau[1] > (2 * system2.tau[0]) ** 5
    assert system2.log_x[1] > system2.log_x[0]


def test_verify_fresh_system_passes(system2):
    report = verify_properties(system2)
    assert report.ok(), report.failures
    assert len(report.records) == 2


def test_verify_perturbed_tau_fails(system2):
    with mp.workprec(system2.bits):
        bad_tau = (system2.tau[0] + mp.mpf("0.001"), system2.tau[1])
    perturbed = dataclasses.replace(system2, tau=bad_tau)
    report = verify_properties(perturbed)
    assert not report.ok()
    assert any("(b)" in f for f in report.failures)


def test_verify_empty_system_vacuous():
    with mp.workprec(256):
        empty = ContinuousPrimeSystem(K=0, bits=256,
                                      alpha=mp.log(6) + mp.mpf(1) / 2)
    report = verify_properties(empty)
    assert report.ok()
    assert report.records == []


def test_scale_identity_holds(system2):
    # log tau_k recomputed from log x_k agrees to <= 2 ulps
    with mp.workprec(system2.bits):
        for k in range(system2.K):
            lx, ltau = system2.log_x[k], system2.log_tau[k]
            s = mp.sqrt(lx * mp.log(lx) / 2)
            assert abs(s - ltau) <= 2 * abs(ltau) * mp.mpf(2) ** (-system2.bits)


def test_delta_exponent_identity(system2):
    # tau^delta = e^a log tau, an algebraic consequence of the definition
    with mp.workprec(system2.bits):
        for k in range(system2.K):
            lhs = mp.exp(system2.delta[k] * system2.log_tau[k])
            rhs = mp.exp(system2.a[k]) * system2.log_tau[k]
            assert abs(lhs - rhs) < abs(rhs) * mp.mpf(2) ** (-system2.bits + 8)


def test_denominator_grouping_identity(system2):
    # (1 + delta) log tau equals the alignment denominator at log x
    with mp.workprec(system2.bits):
        for k in range(system2.K):
            lhs = (1 + system2.delta[k]) * system2.log_tau[k]
            rhs = alignment_denominator(system2.log_x[k], system2.a[k])
            assert abs(lhs - rhs) < abs(rhs) * mp.mpf(2) ** (-system2.bits + 8)


def test_ranges_at_workable_floor(system2):
    with mp.workprec(system2.bits):
        log6 = mp.log(6)
        for k in range(system2.K):
            assert 0 < float(system2.delta[k]) < 1
            assert 2 <= float(system2.nu[k]) <= 3
            assert log6 <= system2.a[k] <= log6 + 1
            assert system2.a[k] >= mp.log(2 * system2.nu[k])


def test_nu_is_smallest_admissible(system2):
    # one lattice step down would fall below 2
    with mp.workprec(system2.bits):
        for k in range(system2.K):
            step = 2 * mp.pi / (system2.tau[k] * system2.log_tau[k])
            assert system2.nu[k] >= 2
            assert system2.nu[k] - step < 2


# ---------------------------------------------------------------------------
# perturbation envelopes
# ---------------------------------------------------------------------------


def test_epsilon_eta_envelopes(system2, system1_small):
    for sys_ in (system2, system1_small[0]):
        rep = epsilon_bound_check(sys_)
        for k in range(sys_.K):
            assert float(rep["eps"][k]) > 0
            assert float(rep["eta"][k]) > 0
            assert rep["eps_ok"][k], (k, float(rep["eps"][k] /
                                               rep["eps_envelope"][k]))
            assert rep["eta_ok"][k], (k, float(rep["eta"][k] /
                                               rep["eta_envelope"][k]))


def test_epsilon_eta_minimality(system2):
    # no admissible value on a refined grid strictly inside (0, found)
    rep = epsilon_bound_check(system2, minimality_grid=127)
    assert all(rep["eps_minimal"])
    assert all(rep["eta_minimal"])


# ---------------------------------------------------------------------------
# manifest round-trip
# ---------------------------------------------------------------------------


def test_manifest_roundtrip_exact(system2, tmp_path):
    path = str(tmp_path / "system.txt")
    write_manifest(system2, path)
    back = read_manifest(path)
    assert back.K == system2.K
    assert back.bits == system2.bits
    assert back.nu_int == system2.nu_int
    with mp.workprec(system2.bits + 16):
        assert back.alpha == system2.alpha
        for name in ("tau", "log_tau", "a", "delta", "nu", "log_x",
                     "log_xi", "eps", "eta"):
            for k in range(system2.K):
                assert getattr(back, name)[k] == getattr(system2, name)[k], \
                    (name, k)


def test_manifest_rejects_foreign_file(tmp_path):
    p = tmp_path / "junk.txt"
    p.write_text("hello\nworld\n")
    with pytest.raises(ValueError):
        read_manifest(str(p))


# ---------------------------------------------------------------------------
# handoff to the measure layer
# ---------------------------------------------------------------------------


def test_system_measure_is_admissible(system2):
    mu = system2.pi_measure()
    assert not mu.signed
    assert len(mu.segments) == 3  # smooth part + one chunk per level
    lo0 = math.exp(float(system2.chunk_log_lo(0)))
    hi0 = math.exp(float(system2.chunk_log_hi(0)))
    assert lo0 < hi0
    # oscillation endpoints anchored: phase is a multiple of 2 pi at both
    with mp.workprec(system2.bits):
        for k in range(system2.K):
            for endpoint in (system2.chunk_log_lo(k), system2.chunk_log_hi(k)):
                r, _ = reduce_mod_2pi(system2.tau[k] * endpoint,
                                      bits=system2.bits)
                assert float(dist_to_multiples(r, mp.mpf(0))) < 1e-40


def test_parity_phase_alternates(system2):
    # even level lands on 2 pi Z, odd level on pi + 2 pi Z
    with mp.workprec(system2.bits):
        r0, _ = reduce_mod_2pi(parity_phase(system2.log_x[0]),
                               bits=system2.bits)
        r1, _ = reduce_mod_2pi(parity_phase(system2.log_x[1]),
                               bits=system2.bits)
        assert float(dist_to_multiples(r0, mp.mpf(0))) < 1e-40
        assert float(dist_to_multiples(r1, mp.pi)) < 1e-40
