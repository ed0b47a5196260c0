"""systems.py -- build the frequency/scale sequences behind the oscillating measure.

For k = 0..K-1 this constructs tuples (tau_k, a_k, delta_k, nu_k, log x_k)
linked by

    log tau_k = sqrt(log x_k * loglog x_k / 2)          (eq-xk)
    delta_k   = (loglog tau_k + a_k) / log tau_k

and satisfying four arithmetic alignment properties:

  (a) tau_{k+1} > (2 tau_k)^5
  (b) (1+delta_k) tau_k log tau_k in 2 pi Z   and   nu_k tau_k log tau_k in 2 pi Z
  (c) tau_k log x_k in 2 pi Z (k even) or pi + 2 pi Z (k odd)
  (d) the ratio Q(log x_k, a_k) defined below sits within
      (1/32) (log tau_k)^{-3/4} of an integer.

The build scans xi for an exact integer hit of the property-(d) target, then
perturbs log xi by the smallest eps > 0 fixing the parity condition (c), and
perturbs alpha = log 6 + 1/2 by the smallest eta > 0 fixing the first half of
(b); nu_k is the smallest point of (2 pi / (tau log tau)) Z at or above 2.
All arithmetic runs at a configurable bit precision, with mod-2 pi residuals
tracked explicitly.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import mpmath as mp

from .numcore import (
    InsufficientPrecision,
    PrecisionContext,
    dist_to_multiples,
    find_root_bracketed,
    reduce_mod_2pi,
)


class SearchFailed(Exception):
    """No admissible xi found in the configured window."""

    def __init__(self, msg, window=None):
        super().__init__(msg)
        self.window = window


# ---------------------------------------------------------------------------
# The target functions of the construction (all arguments are logs)
# ---------------------------------------------------------------------------


def _loglog_parts(L):
    LL = mp.log(L)
    LLL = mp.log(LL)
    return LL, LLL


def log_tau_of_log_x(L):
    """log tau as a function of log x (eq-xk)."""
    return mp.sqrt(L * mp.log(L) / 2)


def alignment_denominator(L, a):
    """(1/sqrt2) sqrt(L log L) + (log L)/2 + (loglog L)/2 + a - (log 2)/2.

    Equals (1 + delta) log tau when a is the additive constant in delta;
    the exact identity  log log tau = (log L + log log L - log 2)/2  makes
    the two groupings interchangeable.
    """
    LL, LLL = _loglog_parts(L)
    return (mp.sqrt(L * LL) / mp.sqrt(2) + LL / 2 + LLL / 2 + a
            - mp.log(2) / 2)


def integer_target(L, a):
    """The property-(d) quantity: must be near an integer at log x_k."""
    D = alignment_denominator(L, a)
    LL, _ = _loglog_parts(L)
    return (L / D) * (1 - (1 + mp.sqrt(2) * mp.sqrt(LL / L)) / D)


def parity_phase(L):
    """tau(L) * L -- the property-(c) phase as a function of log x."""
    return L * mp.exp(log_tau_of_log_x(L))


def _parity_phase_derivative(L):
    # d/dL [L e^{g}] = e^{g} (1 + L g'), g = sqrt(L log L / 2)
    g = log_tau_of_log_x(L)
    gp = (mp.log(L) + 1) / (2 * mp.sqrt(2 * L * mp.log(L)))
    return mp.exp(g) * (1 + L * gp)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContinuousPrimeSystem:
    """Immutable bundle of K aligned frequency/scale tuples.

    x_k is stored as log x_k only (it overflows floats for k >= 1).
    The construction side-products (log xi_k, eps_k, eta_k) ride along for
    the envelope checks.
    """

    K: int
    bits: int
    alpha: object
    tau: tuple = ()
    log_tau: tuple = ()
    a: tuple = ()
    delta: tuple = ()
    nu: tuple = ()
    nu_int: tuple = ()
    log_x: tuple = ()
    log_xi: tuple = ()
    eps: tuple = ()
    eta: tuple = ()

    def parity(self, k: int) -> str:
        return "even" if k % 2 == 0 else "odd"

    def chunk_log_lo(self, k: int):
        """log of the k-th oscillation support's left endpoint tau^(1+delta)."""
        return (1 + self.delta[k]) * self.log_tau[k]

    def chunk_log_hi(self, k: int):
        """log of the right endpoint tau^nu."""
        return self.nu[k] * self.log_tau[k]

    def pi_measure(self):
        """The combined counting measure: smooth density plus all chunks."""
        from .measures import RATIONAL_LOG, SINE_CHUNK_DERIVATIVE, Measure, Segment
        segs = [Segment(1.0, math.inf, RATIONAL_LOG)]
        for k in range(self.K):
            lo, hi = self.chunk_log_lo(k), self.chunk_log_hi(k)
            if float(hi) > 700.0:
                raise OverflowError(
                    "chunk endpoints beyond float range; restrict K")
            with mp.workprec(self.bits):
                segs.append(Segment(mp.exp(lo), mp.exp(hi),
                                    SINE_CHUNK_DERIVATIVE,
                                    {"tau": self.tau[k]}))
        return Measure(segments=tuple(segs))


@dataclass
class KRecord:
    k: int
    parity: str
    res_b1: object
    res_b2: object
    res_c: object
    res_d_xi: object   # integer distance of the xi-stage target
    d_dist: object     # final property-(d) distance, after eps/eta shifts
    d_threshold: object
    eps: object
    eta: object
    xi_window: tuple
    bits: int


@dataclass
class BuildReport:
    bits: int
    records: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def ok(self) -> bool:
        return not self.failures


# ---------------------------------------------------------------------------
# Build
# ---------------------------------------------------------------------------


def _project_bits(K: int, tau_floor: float) -> int:
    """Float-level growth projection of ceil(log2(tau_k log x_k)) + 96."""
    logT = math.log(float(tau_floor))
    worst = 160
    for _ in range(K):
        lt = logT + 2.0
        rhs = max(2.0 * lt * lt, 8.0)
        lx = rhs
        for _ in range(50):
            lx = rhs / max(math.log(lx), 1e-9)
        bits_k = int(math.ceil((lt + math.log(max(lx, 2.0))) / math.log(2.0)))
        worst = max(worst, bits_k + 96)
        logT = 5.0 * (math.log(2.0) + lt)
    return worst


def _min_log_x_for_tau(logT):
    """Smallest L with sqrt(L log L / 2) = logT (monotone bisection)."""
    rhs = 2 * logT * logT
    lo = mp.mpf(math.e) + mp.mpf("0.01")
    hi = max(lo * 2, mp.mpf(4))
    while hi * mp.log(hi) <= rhs:
        hi *= 2
    if lo * mp.log(lo) >= rhs:
        return lo
    f = lambda L: L * mp.log(L) - rhs
    return find_root_bracketed(f, lo, hi, tol=lo * mp.mpf(2) ** (-mp.mp.prec + 8))


def _scan_integer_crossing(L0, alpha, window_factor, bits):
    """Walk the (d)-target upward from L0 until it crosses an integer; bisect.

    Returns (L_xi, crossing_residual, (window_lo, window_hi)).
    """
    L_hi_cap = L0 * window_factor
    step = mp.mpf("1.002")
    L_prev = L0 * (1 + mp.mpf(2) ** (-40))
    g_prev = integer_target(L_prev, alpha)
    L = L_prev
    while L < L_hi_cap:
        L = L * step
        g = integer_target(L, alpha)
        if mp.floor(g) > mp.floor(g_prev):
            m = mp.floor(g_prev) + 1
            f = lambda t: integer_target(t, alpha) - m
            root = find_root_bracketed(
                f, L_prev, L, tol=L * mp.mpf(2) ** (-bits + 8))
            res = abs(integer_target(root, alpha) - m)
            return root, res, (L0, L_hi_cap)
        L_prev, g_prev = L, g
    raise SearchFailed("no integer crossing of the alignment target",
                       window=(float(L0), float(L_hi_cap)))


def build_system(K: int, tau_floor, relaxed: bool = True,
                 ctx: PrecisionContext | None = None,
                 xi_window: float = 8.0):
    """Construct a K-level system; returns (system, BuildReport).

    relaxed=True starts each xi scan at the smallest xi making tau_k exceed
    the floor (2 tau_{k-1})^5; relaxed=False insists on the far stronger
    xi > e^{T^2} start, which is only computable for k = 0 at tiny floors.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if not (tau_floor >= 3):
        raise ValueError("tau_floor must be >= 3")
    bits = ctx.bits if ctx is not None else _project_bits(K, float(tau_floor))
    report = BuildReport(bits=bits)
    taus, ltaus, aa, deltas, nus, nu_ints = [], [], [], [], [], []
    lxs, lxis, epss, etas = [], [], [], []
    with mp.workprec(bits + 16):
        alpha = mp.log(6) + mp.mpf(1) / 2
        two_pi = 2 * mp.pi
        T = mp.mpf(tau_floor)
        for k in range(K):
            logT = mp.log(T)
            if relaxed:
                L0 = _min_log_x_for_tau(logT)
            else:
                if float(T) ** 2 > 2e5:
                    raise SearchFailed(
                        "literal-mode start xi > e^(T^2) is out of reach "
                        f"for T = {mp.nstr(T, 8)}",
                        window=(float(T) ** 2, math.inf))
                L0 = T ** 2
            L_xi, res_d_xi, window = _scan_integer_crossing(
                L0, alpha, mp.mpf(xi_window), bits)

            # eps: smallest positive shift of log x fixing the parity phase
            w0 = parity_phase(L_xi)
            if k % 2 == 0:
                n = mp.floor(w0 / two_pi) + 1
                t_star = two_pi * n
            else:
                n = mp.floor((w0 - mp.pi) / two_pi) + 1
                t_star = mp.pi + two_pi * n
            span = (t_star - w0) / _parity_phase_derivative(L_xi)
            hi = L_xi + 4 * span + mp.mpf(2) ** (-bits // 2)
            while parity_phase(hi) <= t_star:
                hi = L_xi + 2 * (hi - L_xi)
            L_x = find_root_bracketed(
                lambda t: parity_phase(t) - t_star, L_xi, hi,
                tol=L_xi * mp.mpf(2) ** (-bits + 6))
            # Newton polish: the bracket tolerance lives in log-x space, and
            # the phase derivative is ~ tau log tau, so a couple of corrector
            # steps are needed to push the phase residual itself to the floor
            for _ in range(3):
                L_x = L_x - ((parity_phase(L_x) - t_star)
                             / _parity_phase_derivative(L_x))
            eps_k = L_x - L_xi

            ltau = log_tau_of_log_x(L_x)
            tau = mp.exp(ltau)
            needed = int(mp.ceil(mp.log(tau * L_x, 2))) + 72
            if bits < needed:
                raise InsufficientPrecision(
                    f"level {k} needs >= {needed} bits, have {bits}")

            # eta: the first half of (b) is linear in the additive constant,
            # so the smallest positive shift is exact
            C = ltau + mp.log(L_x) / 2 + mp.log(mp.log(L_x)) / 2 \
                - mp.log(2) / 2 + alpha
            r, _ = reduce_mod_2pi(tau * C, bits=bits)
            eta_k = (two_pi - r) / tau if r != 0 else mp.mpf(0)
            a_k = alpha + eta_k
            delta_k = (mp.log(ltau) + a_k) / ltau

            # nu: smallest multiple of 2 pi / (tau log tau) at or above 2
            n_nu = int(mp.ceil(tau * ltau / mp.pi))
            nu_k = two_pi * n_nu / (tau * ltau)

            # residuals, computed from the stored values
            r_b1, _ = reduce_mod_2pi(tau * (ltau + mp.log(ltau) + a_k),
                                     bits=bits)
            res_b1 = dist_to_multiples(r_b1, mp.mpf(0))
            r_b2, _ = reduce_mod_2pi(nu_k * tau * ltau, bits=bits)
            res_b2 = dist_to_multiples(r_b2, mp.mpf(0))
            r_c, _ = reduce_mod_2pi(tau * L_x, bits=bits)
            target_c = mp.mpf(0) if k % 2 == 0 else mp.pi
            res_c = dist_to_multiples(r_c, target_c)
            q = integer_target(L_x, a_k)
            d_dist = abs(q - mp.nint(q))
            d_threshold = (mp.mpf(1) / 32) / ltau ** mp.mpf("0.75")

            report.records.append(KRecord(
                k=k, parity="even" if k % 2 == 0 else "odd",
                res_b1=res_b1, res_b2=res_b2, res_c=res_c,
                res_d_xi=res_d_xi, d_dist=d_dist, d_threshold=d_threshold,
                eps=eps_k, eta=eta_k,
                xi_window=(float(window[0]), float(window[1])), bits=bits))
            taus.append(tau)
            ltaus.append(ltau)
            aa.append(a_k)
            deltas.append(delta_k)
            nus.append(nu_k)
            nu_ints.append(n_nu)
            lxs.append(L_x)
            lxis.append(L_xi)
            epss.append(eps_k)
            etas.append(eta_k)
            T = (2 * tau) ** 5
    sys_ = ContinuousPrimeSystem(
        K=K, bits=bits, alpha=alpha,
        tau=tuple(taus), log_tau=tuple(ltaus), a=tuple(aa),
        delta=tuple(deltas), nu=tuple(nus), nu_int=tuple(nu_ints),
        log_x=tuple(lxs), log_xi=tuple(lxis), eps=tuple(epss),
        eta=tuple(etas))
    vr = verify_properties(sys_)
    report.failures = vr.failures
    return sys_, report


# ---------------------------------------------------------------------------
# Independent verification
# ---------------------------------------------------------------------------


def _residual_bound(value, bits):
    # allowed residual: 2^{-(bits - log2|value| - 8)}
    return abs(value) * mp.mpf(2) ** (-bits + 8)


def verify_properties(sys_: ContinuousPrimeSystem) -> BuildReport:
    """Recompute every residual with different groupings; failures are
    recorded in the report, never raised."""
    report = BuildReport(bits=sys_.bits)
    with mp.workprec(sys_.bits + 16):
        log6 = mp.log(6)
        for k in range(sys_.K):
            tau, ltau = sys_.tau[k], sys_.log_tau[k]
            a_k, delta_k, nu_k = sys_.a[k], sys_.delta[k], sys_.nu[k]
            L_x = sys_.log_x[k]
            # (b1) via the denominator form anchored at log x
            v1 = tau * alignment_denominator(L_x, a_k)
            r1, _ = reduce_mod_2pi(v1, bits=sys_.bits)
            res_b1 = dist_to_multiples(r1, mp.mpf(0))
            if res_b1 > _residual_bound(v1, sys_.bits):
                report.failures.append(f"k={k}: property (b) first part "
                                       f"residual {mp.nstr(res_b1, 5)}")
            # (b2) directly
            v2 = nu_k * tau * ltau
            r2, _ = reduce_mod_2pi(v2, bits=sys_.bits)
            res_b2 = dist_to_multiples(r2, mp.mpf(0))
            if res_b2 > _residual_bound(v2, sys_.bits):
                report.failures.append(f"k={k}: property (b) second part "
                                       f"residual {mp.nstr(res_b2, 5)}")
            # (c) via the parity-phase form (recomputes tau from log x)
            v3 = parity_phase(L_x)
            r3, _ = reduce_mod_2pi(v3, bits=sys_.bits)
            target = mp.mpf(0) if k % 2 == 0 else mp.pi
            res_c = dist_to_multiples(r3, target)
            if res_c > _residual_bound(v3, sys_.bits):
                report.failures.append(f"k={k}: property (c) residual "
                                       f"{mp.nstr(res_c, 5)} ({sys_.parity(k)})")
            # (d) with an expanded grouping
            D = (1 + delta_k) * ltau
            A = L_x / D
            LL = mp.log(L_x)
            B = 1 + mp.sqrt(2) * mp.sqrt(LL / L_x)
            q = A - A * B / D
            d_dist = abs(q - mp.nint(q))
            d_threshold = (mp.mpf(1) / 32) / ltau ** mp.mpf("0.75")
            if d_dist >= d_threshold:
                report.failures.append(
                    f"k={k}: property (d) distance {mp.nstr(d_dist, 5)} over "
                    f"threshold {mp.nstr(d_threshold, 5)}")
            # (a)
            if k + 1 < sys_.K:
                if not (sys_.tau[k + 1] > (2 * tau) ** 5):
                    report.failures.append(f"k={k}: property (a) violated")
                if not (sys_.log_x[k + 1] > L_x):
                    report.failures.append(f"k={k}: log x not increasing")
            # eq-xk to <= 2 ulps
            s = mp.sqrt(L_x * mp.log(L_x) / 2)
            if abs(s - ltau) > 2 * abs(ltau) * mp.mpf(2) ** (-sys_.bits):
                report.failures.append(f"k={k}: eq-xk off by more than 2 ulps")
            # delta identity tau^delta = e^a log tau
            lhs = mp.exp(delta_k * ltau)
            rhs = mp.exp(a_k) * ltau
            if abs(lhs - rhs) > abs(rhs) * mp.mpf(2) ** (-sys_.bits + 8):
                report.failures.append(f"k={k}: delta identity violated")
            # ranges
            if not (0 < delta_k < 1):
                report.failures.append(
                    f"k={k}: delta = {mp.nstr(delta_k, 5)} outside (0, 1)")
            if not (2 <= nu_k <= 3):
                report.failures.append(f"k={k}: nu outside [2, 3]")
            if not (log6 <= a_k <= log6 + 1):
                report.failures.append(f"k={k}: a outside [log 6, log 6 + 1]")
            if not (a_k >= mp.log(2 * nu_k)):
                report.failures.append(f"k={k}: a < log(2 nu)")
            report.records.append(KRecord(
                k=k, parity=sys_.parity(k), res_b1=res_b1, res_b2=res_b2,
                res_c=res_c, res_d_xi=None, d_dist=d_dist,
                d_threshold=d_threshold, eps=sys_.eps[k], eta=sys_.eta[k],
                xi_window=(), bits=sys_.bits))
    return report


# ---------------------------------------------------------------------------
# Envelope checks for the two perturbations
# ---------------------------------------------------------------------------


def epsilon_bound_check(sys_: ContinuousPrimeSystem, margin: float = 10.0,
                        minimality_grid: int = 63) -> dict:
    """Check eps_k and eta_k against their first-order envelopes and confirm
    minimality (no admissible value on a finer grid below the found one)."""
    out = {"k": [], "eps": [], "eps_envelope": [], "eps_ok": [],
           "eta": [], "eta_envelope": [], "eta_ok": [],
           "eps_minimal": [], "eta_minimal": []}
    with mp.workprec(sys_.bits + 16):
        two_pi = 2 * mp.pi
        for k in range(sys_.K):
            L_xi = sys_.log_xi[k]
            L_x = sys_.log_x[k]
            eps_k, eta_k = sys_.eps[k], sys_.eta[k]
            tau, ltau = sys_.tau[k], sys_.log_tau[k]
            a_k = sys_.a[k]
            LLxi = mp.log(L_xi)
            env_eps = 1 / (mp.sqrt(L_xi * LLxi)
                           * mp.exp(mp.sqrt(L_xi * LLxi / 2)))
            env_eta = mp.exp(-mp.sqrt(L_x * mp.log(L_x) / 2))  # = 1/tau
            target = mp.mpf(0) if k % 2 == 0 else mp.pi
            # minimality: no smaller positive shift comes near the target
            # class on a halved-step grid
            eps_min_ok = True
            for j in range(1, minimality_grid + 1):
                cand = eps_k * j / (minimality_grid + 1)
                r, _ = reduce_mod_2pi(parity_phase(L_xi + cand),
                                      bits=sys_.bits)
                if dist_to_multiples(r, target) < mp.mpf(2) ** (-40):
                    eps_min_ok = False
                    break
            C = ltau + mp.log(L_x) / 2 + mp.log(mp.log(L_x)) / 2 \
                - mp.log(2) / 2 + sys_.alpha
            eta_min_ok = True
            for j in range(1, minimality_grid + 1):
                cand = eta_k * j / (minimality_grid + 1)
                r, _ = reduce_mod_2pi(tau * (C + cand), bits=sys_.bits)
                if dist_to_multiples(r, mp.mpf(0)) < mp.mpf(2) ** (-40):
                    eta_min_ok = False
                    break
            out["k"].append(k)
            out["eps"].append(eps_k)
            out["eps_envelope"].append(env_eps)
            out["eps_ok"].append(bool(eps_k <= margin * env_eps))
            out["eta"].append(eta_k)
            out["eta_envelope"].append(env_eta)
            out["eta_ok"].append(bool(eta_k <= margin * env_eta))
            out["eps_minimal"].append(eps_min_ok and eps_k > 0)
            out["eta_minimal"].append(eta_min_ok and eta_k > 0)
    return out


# ---------------------------------------------------------------------------
# Manifest I/O
# ---------------------------------------------------------------------------

_MANIFEST_HEAD = "beurlab system manifest v1"
_FIELDS = ("tau", "log_tau", "a", "delta", "nu", "log_x", "log_xi",
           "eps", "eta")


def _dps_for_bits(bits: int) -> int:
    # values are stored with 16 guard bits over the nominal precision;
    # ceil(p * log10 2) + 2 digits make binary -> decimal -> binary exact
    return int(math.ceil((bits + 16) / 3.3219280948873626)) + 4


def write_manifest(sys_: ContinuousPrimeSystem, path: str) -> None:
    dps = _dps_for_bits(sys_.bits)
    lines = [_MANIFEST_HEAD, f"bits {sys_.bits}", f"K {sys_.K}"]
    with mp.workprec(sys_.bits + 16):
        lines.append(f"alpha {mp.nstr(sys_.alpha, dps)}")
        for k in range(sys_.K):
            lines.append(f"k {k}")
            lines.append(f"  parity {sys_.parity(k)}")
            lines.append(f"  nu_int {sys_.nu_int[k]}")
            for name in _FIELDS:
                val = getattr(sys_, name)[k]
                lines.append(f"  {name} {mp.nstr(val, dps)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path: str) -> ContinuousPrimeSystem:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if lines[0] != _MANIFEST_HEAD:
        raise ValueError("not a beurlab system manifest")
    bits = int(lines[1].split()[1])
    K = int(lines[2].split()[1])
    cols = {name: [] for name in _FIELDS}
    nu_ints = []
    with mp.workprec(bits + 16):
        alpha = mp.mpf(lines[3].split()[1])
        for ln in lines[4:]:
            parts = ln.split()
            key = parts[0]
            if key == "k" or key == "parity":
                continue
            if key == "nu_int":
                nu_ints.append(int(parts[1]))
            elif key in cols:
                cols[key].append(mp.mpf(parts[1]))
    if any(len(v) != K for v in cols.values()) or len(nu_ints) != K:
        raise ValueError("manifest record count does not match K")
    return ContinuousPrimeSystem(
        K=K, bits=bits, alpha=alpha,
        tau=tuple(cols["tau"]), log_tau=tuple(cols["log_tau"]),
        a=tuple(cols["a"]), delta=tuple(cols["delta"]), nu=tuple(cols["nu"]),
        nu_int=tuple(nu_ints), log_x=tuple(cols["log_x"]),
        log_xi=tuple(cols["log_xi"]), eps=tuple(cols["eps"]),
        eta=tuple(cols["eta"]))
