"""zeta.py -- closed-form evaluation of the system zeta function.

For a built system the transform of the counting measure has the closed form

    log zeta(s) = log(s/(s-1))
                + sum_k (1/2) (tau_k^{1-(1+delta_k)s} - tau_k^{1-nu_k s})
                          * (1/(s - i tau_k) + 1/(s + i tau_k)),

where the alignment property of each level removes the endpoint phases.
This module evaluates that sum (full, or with a chosen level's upper-pole
term removed), the residue of zeta at s = 1 by two independent numerical
routes, and empirical boundedness certificates for the two regions where
the sum must stay small: above the log log t / log t contour, and on the
sigma >= 1/2 strip tau_k^{1/5} <= t <= tau_k^5 once the k-th upper-pole
term is dropped.

Evaluation accepts plain complex (fast path; phases are carried through a
high-precision reduction once the product t * nu_k log tau_k leaves the
range where double products are phase-accurate) or an mpmath mpc built
from the system's stored values, which pins phases at heights like tau_k
where a double cannot represent t exactly enough.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import mpmath as mp

from .numcore import (
    NonFinite,
    ParamSeg,
    ToleranceNotMet,
    dist_to_multiples,
    integrate_path,
    reduce_mod_2pi,
)
from .systems import ContinuousPrimeSystem

TWO_PI = 2.0 * math.pi

# above this, the rounding of a double product t * coeff exceeds ~1e-4 rad
_PHASE_EXACT_LIMIT = 2.0 ** 40


class ZetaDomainError(Exception):
    pass


class PoleAt1(ZetaDomainError):
    pass


class BranchCut(ZetaDomainError):
    """log(s/(s-1)) is ambiguous for real s in (0, 1)."""


class MethodsDisagree(Exception):
    def __init__(self, msg, values=None):
        super().__init__(msg)
        self.values = values


@dataclass(frozen=True)
class ResidueValue:
    rho: float
    limit_value: float
    contour_value: float


@dataclass(frozen=True)
class CertificateReport:
    region: str
    level: int | None
    empirical_sup: float
    sup_at: tuple
    envelope: float
    margin: float
    samples: int
    passed: bool


def _phase_float(t: float, coeff_f: float, coeff_mp) -> float:
    """t * coeff mod 2 pi for a double t, exact for the given double."""
    x = t * coeff_f
    if abs(x) <= _PHASE_EXACT_LIMIT:
        return math.fmod(x, TWO_PI)
    bits = int(math.log2(abs(x))) + 96
    with mp.workprec(bits):
        r, _ = reduce_mod_2pi(mp.mpf(t) * coeff_mp, bits=bits)
    return float(r)


def _phase_mp(t, coeff_mp, bits: int):
    x = t * coeff_mp
    fx = abs(float(x))
    need = max(bits, (int(math.log2(fx)) if fx > 1 else 0) + 96)
    with mp.workprec(need):
        r, _ = reduce_mod_2pi(mp.mpf(t) * coeff_mp, bits=need)
    return r


@dataclass(frozen=True)
class ZetaEvaluator:
    """Pure evaluator over an immutable system.

    mode "full" sums every level; mode "primed" leaves out the whole
    upper-pole term of level `primed_k` (numerator pair over s - i tau_k),
    which is the combination whose boundedness the strip certificate
    checks.  The saddle-point machinery instead removes only the leading
    exponential piece of that term; `oscillator_sum` exposes that via
    drop="lead".
    """

    sys: ContinuousPrimeSystem
    mode: str = "full"
    primed_k: int | None = None
    truncate_at: int | None = None
    tail_tol: float = 1e-6

    def __post_init__(self):
        if self.mode not in ("full", "primed"):
            raise ValueError("mode must be 'full' or 'primed'")
        if self.mode == "primed":
            if self.primed_k is None or not (0 <= self.primed_k < self.sys.K):
                raise ValueError("primed mode needs a level index in range")
        if self.tail_bound() > self.tail_tol:
            raise ToleranceNotMet(
                "truncation tail certificate exceeds tolerance",
                value=None, error=self.tail_bound())

    # -- truncation ---------------------------------------------------------

    def _levels(self):
        top = self.sys.K if self.truncate_at is None \
            else min(self.truncate_at + 1, self.sys.K)
        return range(top)

    def tail_bound(self) -> float:
        """Certified bound on the dropped levels: sum of tau_j^{-1/2}."""
        top = self.sys.K if self.truncate_at is None \
            else min(self.truncate_at + 1, self.sys.K)
        return sum(math.exp(-0.5 * float(self.sys.log_tau[j]))
                   for j in range(top, self.sys.K))

    # -- the level terms ----------------------------------------------------

    def level_term(self, s, k: int, drop: str | None = None):
        """The k-th summand; drop="pole" removes its upper-pole part
        entirely, drop="lead" removes only the leading exponential piece."""
        if isinstance(s, (mp.mpc, mp.mpf)):
            return self._term_mp(mp.mpc(s), k, drop)
        return self._term_float(complex(s), k, drop)

    def _level_data(self, k: int):
        cache = self.__dict__.setdefault("_level_cache", {})
        if k not in cache:
            sys_ = self.sys
            with mp.workprec(sys_.bits):
                c1m = (1 + sys_.delta[k]) * sys_.log_tau[k]
                c2m = sys_.nu[k] * sys_.log_tau[k]
            cache[k] = (float(sys_.log_tau[k]), float(sys_.tau[k]),
                        float(c1m), float(c2m), c1m, c2m)
        return cache[k]

    def _term_float(self, s: complex, k: int, drop):
        ltau, tau, c1f, c2f, c1m, c2m = self._level_data(k)
        sigma, t = s.real, s.imag
        e1 = ltau - sigma * c1f
        e2 = ltau - sigma * c2f
        if max(e1, e2) > 700.0:
            raise NonFinite("term magnitude overflows double; "
                            "evaluate with an mpmath complex")
        ph1 = _phase_float(t, c1f, c1m)
        ph2 = _phase_float(t, c2f, c2m)
        a_val = math.exp(e1) * complex(math.cos(ph1), -math.sin(ph1))
        b_val = math.exp(e2) * complex(math.cos(ph2), -math.sin(ph2))
        num = a_val - b_val
        lower = num / (2.0 * (s + 1j * tau))
        if drop == "pole":
            return lower
        upper_den = 2.0 * (s - 1j * tau)
        if drop == "lead":
            return lower - b_val / upper_den
        return lower + num / upper_den

    def _term_mp(self, s, k: int, drop):
        sys_ = self.sys
        bits = sys_.bits
        with mp.workprec(bits):
            ltau = sys_.log_tau[k]
            tau = sys_.tau[k]
            c1 = (1 + sys_.delta[k]) * ltau
            c2 = sys_.nu[k] * ltau
            sigma, t = s.real, s.imag
            ph1 = _phase_mp(t, c1, bits)
            ph2 = _phase_mp(t, c2, bits)
            a_val = mp.exp(ltau - sigma * c1) * mp.expj(-ph1)
            b_val = mp.exp(ltau - sigma * c2) * mp.expj(-ph2)
            num = a_val - b_val
            lower = num / (2 * (s + mp.mpc(0, 1) * tau))
            if drop == "pole":
                return lower
            upper_den = 2 * (s - mp.mpc(0, 1) * tau)
            if drop == "lead":
                return lower - b_val / upper_den
            return lower + num / upper_den

    def oscillator_sum(self, s, drop_level: int | None = None,
                       drop: str | None = None):
        """Sum of level terms; (drop_level, drop) removes the stated part
        of one level on top of the evaluator's own mode."""
        if self.mode == "primed":
            drop_level, drop = self.primed_k, "pole"
        acc = mp.mpc(0) if isinstance(s, (mp.mpc, mp.mpf)) else 0j
        for k in self._levels():
            acc += self.level_term(s, k,
                                   drop if k == drop_level else None)
        return acc

    # -- zeta and its logarithm --------------------------------------------

    @staticmethod
    def _check_domain(s):
        if isinstance(s, (mp.mpc, mp.mpf)):
            s = mp.mpc(s)
            sigma, t = float(s.real), float(s.imag)
        else:
            sigma, t = complex(s).real, complex(s).imag
        if sigma <= 0:
            raise ValueError("evaluation needs Re s > 0")
        if sigma == 1.0 and t == 0.0:
            raise PoleAt1("s = 1 is the pole")
        return sigma, t

    def log_zeta(self, s):
        sigma, t = self._check_domain(s)
        if t == 0.0 and 0 < sigma < 1:
            raise BranchCut("real s in (0, 1) sits on the logarithm's cut")
        if isinstance(s, (mp.mpc, mp.mpf)):
            s = mp.mpc(s)
            with mp.workprec(self.sys.bits):
                base = mp.log(s) - mp.log(s - 1)
                return base + self.oscillator_sum(s)
        s = complex(s)
        return cmath.log(s) - cmath.log(s - 1) + self.oscillator_sum(s)

    def zeta(self, s):
        """exp of log_zeta, computed cut-free as s/(s-1) * exp(sum)."""
        sigma, t = self._check_domain(s)
        if isinstance(s, (mp.mpc, mp.mpf)):
            s = mp.mpc(s)
            with mp.workprec(self.sys.bits):
                return s / (s - 1) * mp.exp(self.oscillator_sum(s))
        s = complex(s)
        return s / (s - 1) * cmath.exp(self.oscillator_sum(s))

    # -- residue at the pole ------------------------------------------------

    def residue_at_1(self) -> ResidueValue:
        lim, circ = residue_routes(self.zeta)
        if abs(lim - circ) > 1e-8 * abs(lim):
            raise MethodsDisagree("residue routes disagree",
                                  values=(lim, circ))
        return ResidueValue(rho=lim, limit_value=lim, contour_value=circ)

    # -- region certificates -------------------------------------------------

    def ghl_bound_certificate(self, region: str = "HL",
                              k: int | None = None,
                              n_t: int = 300, sigma_step: float = 2.0 ** -8,
                              sigma_layers: int = 24,
                              margin: float = 1.05) -> CertificateReport:
        """Empirical sup of the (full / primed) sum over a sampled region
        versus the analytic envelope.  Report-only: the pass flag records
        whether sup <= margin * envelope."""
        sys_ = self.sys
        if region == "HL":
            envelope = 1.0 + sum(
                math.exp(-0.5 * (float(lt) + math.log(float(lt))))
                for lt in sys_.log_tau)
            drop_level, drop = None, None
            t_lo = math.exp(math.e) * (1 + 1e-9)
            t_hi = math.exp(5.0 * float(sys_.log_tau[-1])) if sys_.K else 1e6
        elif region == "strip":
            if k is None or not (0 <= k < sys_.K):
                raise ValueError("strip region needs a level index")
            envelope = sum(math.exp(-float(lt) / 3.0)
                           for lt in sys_.log_tau)
            drop_level, drop = k, "pole"
            t_lo = math.exp(float(sys_.log_tau[k]) / 5.0)
            t_hi = math.exp(5.0 * float(sys_.log_tau[k]))
        else:
            raise ValueError("region must be 'HL' or 'strip'")

        sup, sup_at, count = 0.0, (math.nan, math.nan), 0
        if sys_.K == 0:
            return CertificateReport(region=region, level=k,
                                     empirical_sup=0.0,
                                     sup_at=sup_at, envelope=envelope,
                                     margin=margin, samples=0, passed=True)
        log_lo, log_hi = math.log(t_lo), math.log(t_hi)
        for i in range(n_t):
            t = math.exp(log_lo + (log_hi - log_lo) * i / (n_t - 1))
            if region == "HL":
                sigma_b = 1.0 - math.log(math.log(t)) / math.log(t)
            else:
                sigma_b = 0.5
            sigmas = [sigma_b + j * sigma_step for j in range(sigma_layers)]
            sigmas += [sigma_b + 0.25, sigma_b + 0.5, sigma_b + 1.0]
            for sigma in sigmas:
                v = abs(self.oscillator_sum(complex(sigma, t),
                                            drop_level=drop_level, drop=drop))
                count += 1
                if v > sup:
                    sup, sup_at = v, (sigma, t)
        return CertificateReport(region=region, level=k, empirical_sup=sup,
                                 sup_at=sup_at, envelope=envelope,
                                 margin=margin, samples=count,
                                 passed=sup <= margin * envelope)


def residue_routes(zeta_fn, hs=(1e-3, 1e-4, 1e-5), radius: float = 1e-2):
    """Residue of a zeta-like function at s = 1 by (i) Richardson
    extrapolation of h * f(1 + h) and (ii) a circle integral."""
    f0, f1, f2 = (complex(h * zeta_fn(1.0 + h)).real for h in hs)
    a1 = (10.0 * f1 - f0) / 9.0
    a2 = (10.0 * f2 - f1) / 9.0
    lim = (100.0 * a2 - a1) / 99.0

    def gamma(u):
        return 1.0 + radius * cmath.exp(2j * math.pi * u)

    def dgamma(u):
        return radius * 2j * math.pi * cmath.exp(2j * math.pi * u)

    val, _ = integrate_path(lambda s: zeta_fn(s),
                            [ParamSeg(gamma, dgamma)], tol=1e-11)
    circ = (val / (2j * math.pi)).real
    return lim, circ


def export_log_zeta_csv(ev: ZetaEvaluator, points, path: str) -> None:
    """Write sigma, t, re/im of log zeta for an iterable of complex s."""
    with open(path, "w") as fh:
        fh.write("sigma,t,re_log_zeta,im_log_zeta\n")
        for s in points:
            val = ev.log_zeta(s)
            fh.write(f"{complex(s).real!r},{complex(s).imag!r},"
                     f"{complex(val).real!r},{complex(val).imag!r}\n")
