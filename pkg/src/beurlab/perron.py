"""Perron-formula integrators for the weighted count A(x) = int (x-u) dN(u).

By Mellin inversion A(x) is a vertical-line integral of
x^{s+1} zeta(s) / (s (s+1)) over Re s = kappa > 1.  Because the counting
measure is real the full line collapses onto its upper half,

    A(x) = [half residue at s = 1] + (1/pi) Im Z,

where Z is the integral over any upward contour running from the real
axis to +i oo that the vertical line can be deformed onto without
crossing the pole at s = 1.  (The base point moves along the real axis
THROUGH the pole, which is why exactly half the residue appears.)
Three contour families are implemented:

* `perron_vertical` -- the truncated line Re s = kappa itself, the tail
  above the cutoff evaluated by one integration by parts with a
  certified remainder bound (`TailTooLarge` when the certificate cannot
  meet the requested tolerance);
* `perron_hl` -- the boundary-hugging contour sigma = 1 - 1/e below
  t = e^e and sigma = 1 - log log t / log t above it (the "HL" region of
  the zeta evaluator's certificates);
* `perron_composite` -- the assembly around one oscillator level:
  steepest-descent boxes, connectors between them, and the bridge
  segments that step the contour back down to the hugging contour, with
  a per-segment ledger comparing every remainder piece against the
  central descent box.

Magnitudes like x^2 overflow doubles far below the sizes of interest, so
every segment value is accumulated as a (log-magnitude, phase) pair, and
every oscillatory phase t*c is either kept inside its floating-point
exactness budget (extended-precision fmod against a two-double c) or
anchored by a high-precision reduction mod 2 pi at the segment's frame
point.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import mpmath as mp
import numpy as np

from .measures import GridMeasure
from .numcore import (InsufficientPrecision, LogComplex, NonFinite,
                      dist_to_multiples, reduce_mod_2pi)
from .saddles import (PathLost, PhaseViolation, SaddleError, SaddleProblem,
                      WindingNot1, find_saddle, saddle_contribution,
                      trace_descent)
from .systems import ContinuousPrimeSystem
from .zeta import ZetaEvaluator

TWO_PI = 2.0 * math.pi
_TWO_PI_LD = np.longdouble("6.2831853071795864769252867665590057684")
E_E = math.exp(math.e)                    # the hugging contour's knee
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_PANEL_PHASE = 8.0                        # max phase swing for a GL-16 panel
_FILON_OMEGA_MIN = 20.0                   # below this a GL panel is cheaper
_DROP_AMP = 1e-12                         # oscillators below this are noise
_PHASE_GUARD_OSC = 2.0e17                 # |y*c| budget for fmod phases
_PHASE_GUARD_X = 1.0e12                   # stricter budget for the x phase
_SCALAR_PHASE_EXACT = 1.0e9               # plain fmod is exact enough here

# Chebyshev-Gauss nodes and the inverse of their power Vandermonde, used
# to fit the slow carrier on oscillatory panels with 8 samples.
_CHEB_N = 8
_CHEB_U = np.cos((2.0 * np.arange(1, _CHEB_N + 1) - 1.0) * np.pi
                 / (2.0 * _CHEB_N))
_CHEB_MINV = np.linalg.inv(np.vander(_CHEB_U, _CHEB_N, increasing=True))


class PerronError(Exception):
    """Base for contour-integration failures."""


class TailTooLarge(PerronError):
    """The certified bound beyond the cutoff exceeds the tolerance."""

    def __init__(self, msg, *, bound=None, scale=None, t_cut=None,
                 t_suggest=None):
        super().__init__(msg)
        self.bound = bound
        self.scale = scale
        self.t_cut = t_cut
        self.t_suggest = t_suggest


class SegmentDominates(PerronError):
    """A remainder segment is at least as large as the central box."""

    def __init__(self, msg, *, tag=None, gap_log=None):
        super().__init__(msg)
        self.tag = tag
        self.gap_log = gap_log


class ContourBroken(PerronError):
    """The assembled segments do not concatenate into one contour."""


# ---------------------------------------------------------------------------
# Phase helpers: exact-enough reductions of t*c mod 2 pi
# ---------------------------------------------------------------------------

def _split_mp(value_mp) -> tuple[float, float]:
    """High/low double pair of a high-precision coefficient."""
    hi = float(value_mp)
    with mp.workprec(120):
        lo = float(mp.mpf(value_mp) - hi)
    return hi, lo


def _phase_arr(y: np.ndarray, c_hi: float, c_lo: float,
               guard: float = _PHASE_GUARD_OSC) -> np.ndarray:
    """(y * c) mod 2 pi for a float offset array against a two-double c.

    Exactness comes from the 64-bit mantissa of np.longdouble; the guard
    keeps the quotient small enough that the representation error of
    2 pi itself stays below the callers' tolerance.
    """
    if y.size and float(np.max(np.abs(y))) * abs(c_hi) > guard:
        raise InsufficientPrecision(
            "phase product exceeds the extended-precision budget; "
            "re-anchor the frame closer to the evaluation window")
    p = np.fmod(y.astype(np.longdouble) * np.longdouble(c_hi), _TWO_PI_LD)
    p = p + y.astype(np.longdouble) * np.longdouble(c_lo)
    return p.astype(float)


def _phase_scalar(y: float, c_mp) -> float:
    """(y * c) mod 2 pi for one float offset, exact at any size."""
    prod = abs(y) * abs(float(c_mp))
    if prod < _SCALAR_PHASE_EXACT:
        return math.fmod(y * float(c_mp), TWO_PI)
    bits = max(128, int(math.log2(max(prod, 2.0))) + 96)
    with mp.workprec(bits):
        r, _err = reduce_mod_2pi(mp.mpf(y) * mp.mpf(c_mp), bits=bits)
        return float(r)


def _mod2pi_mp(v) -> float:
    """Reduce an mpmath real mod 2 pi to a float."""
    av = abs(float(v)) if math.isfinite(float(v)) else 0.0
    bits = max(128, int(math.log2(max(av, 2.0))) + 96)
    with mp.workprec(bits):
        r, _err = reduce_mod_2pi(mp.mpf(v), bits=bits)
        return float(r)


# ---------------------------------------------------------------------------
# Frames: re-anchored phase bookkeeping around a reference ordinate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Frame:
    """Phase anchors at a reference ordinate t0.

    Evaluations happen at t = t0 + y with y a plain double; each needed
    frequency c carries the exact value of (t0 * c) mod 2 pi, and each
    oscillator level carries t0 -+ tau_k so pole distances never suffer
    the cancellation of forming t - tau_k from rounded absolute
    ordinates.
    """

    t0f: float
    anchor_x: float
    osc_anchors: tuple            # per frequency, (t0 * c) mod 2 pi
    dist0: tuple                  # per level, t0 - tau_k
    sum0: tuple                   # per level, t0 + tau_k


# ---------------------------------------------------------------------------
# Integrands: the full Perron integrand in log form
# ---------------------------------------------------------------------------

class _IntegrandBase:
    """Shared quadrature protocol for the concrete integrands.

    Subclasses provide `eval_lam` (vectorized log-integrand split into a
    real part and a phase), `stiff` (an upper estimate of |d log I / ds|
    used to size resolved panels), `osc_rel` (total small-oscillator
    amplitude, for the carrier-fit crossover), scalar high-precision and
    derivative evaluations, and the tail certificates.
    """

    log_x: float
    log_x_mp: object
    lx_hi: float
    lx_lo: float
    den_shifts: tuple
    pole_ordinates: tuple

    def x_float(self) -> float:
        try:
            return math.exp(self.log_x)
        except OverflowError:
            return math.inf

    def frame_at(self, t0) -> Frame:
        raise NotImplementedError

    def rho_log(self):
        """log of the residue of zeta at s = 1, or None if there is none."""
        raise NotImplementedError


class SystemIntegrand(_IntegrandBase):
    """x^{s+1} exp(Sigma(s)) / ((s-1)(s+1)) for a continuous system.

    Sigma is the closed-form oscillator sum, so the kernel equals
    x^{s+1} zeta(s) / (s (s+1)) with the only right-half-plane pole at
    s = 1.  Vectorized evaluation mirrors the zeta evaluator's scalar
    term formula exactly (same drop of no terms, same phase signs).
    """

    def __init__(self, sys: ContinuousPrimeSystem, log_x=None,
                 evaluator: ZetaEvaluator | None = None):
        self.sys = sys
        self.evaluator = evaluator if evaluator is not None \
            else ZetaEvaluator(sys)
        with mp.workprec(sys.bits):
            self.log_x_mp = mp.mpf(log_x) if log_x is not None \
                else (sys.log_x[0] if sys.K else mp.mpf(1))
        self.log_x = float(self.log_x_mp)
        self.lx_hi, self.lx_lo = _split_mp(self.log_x_mp)
        self.den_shifts = (1.0, -1.0)
        levels = []
        with mp.workprec(sys.bits):
            for k in range(sys.K):
                c1 = (1 + sys.delta[k]) * sys.log_tau[k]
                c2 = sys.nu[k] * sys.log_tau[k]
                levels.append({
                    "ltau": float(sys.log_tau[k]),
                    "tau_f": float(sys.tau[k]),
                    "tau_mp": sys.tau[k],
                    "c1": float(c1), "c2": float(c2),
                    "c1_pair": _split_mp(c1), "c2_pair": _split_mp(c2),
                    "c1_mp": c1, "c2_mp": c2,
                })
        self.levels = tuple(levels)
        self.pole_ordinates = tuple(L["tau_f"] for L in self.levels)

    def with_log_x(self, log_x) -> "SystemIntegrand":
        return SystemIntegrand(self.sys, log_x=log_x,
                               evaluator=self.evaluator)

    # -- frames ---------------------------------------------------------------

    def frame_at(self, t0) -> Frame:
        with mp.workprec(max(self.sys.bits, 128)):
            t0_mp = mp.mpf(t0)
            anchor_x = _mod2pi_mp(t0_mp * self.log_x_mp) if t0_mp != 0 \
                else 0.0
            osc, dist0, sum0 = [], [], []
            for L in self.levels:
                if t0_mp == 0:
                    osc.append((0.0, 0.0))
                else:
                    osc.append((_mod2pi_mp(t0_mp * L["c1_mp"]),
                                _mod2pi_mp(t0_mp * L["c2_mp"])))
                dist0.append(float(t0_mp - L["tau_mp"]))
                sum0.append(float(t0_mp + L["tau_mp"]))
        return Frame(t0f=float(t0_mp), anchor_x=anchor_x,
                     osc_anchors=tuple(osc), dist0=tuple(dist0),
                     sum0=tuple(sum0))

    # -- level activity --------------------------------------------------------

    def _active(self, sig_min: float, sig_max: float, frame: Frame,
                y_min: float, y_max: float) -> list:
        """(level, window log-amplitude) pairs that can matter here."""
        act = []
        for k, L in enumerate(self.levels):
            e_max = L["ltau"] - sig_min * min(L["c1"], L["c2"])
            dm = _interval_dist(frame.dist0[k] + y_min,
                                frame.dist0[k] + y_max)
            dp = _interval_dist(frame.sum0[k] + y_min,
                                frame.sum0[k] + y_max)
            d = max(math.hypot(sig_min, dm), 1e-300)
            dp = max(math.hypot(sig_min, dp), 1e-300)
            log_amp = e_max - math.log(2.0) + math.log(1.0 / d + 1.0 / dp)
            if log_amp > math.log(_DROP_AMP):
                if e_max > 690.0:
                    raise NonFinite(
                        "oscillator magnitude overflows a double on this "
                        "window and is too large to drop")
                act.append((k, log_amp))
        return act

    # -- vectorized log-integrand ----------------------------------------------

    def eval_lam(self, sigma, y: np.ndarray, frame: Frame,
                 with_x_phase: bool = True):
        """(real log-magnitude, phase) arrays of the integrand at
        s = sigma + i (t0 + y).  with_x_phase=False leaves the linear
        x-phase out (the carrier used by oscillatory panels)."""
        y = np.asarray(y, dtype=float)
        sig = np.broadcast_to(np.asarray(sigma, dtype=float), y.shape)
        t = frame.t0f + y
        s = sig + 1j * t
        lam = (1.0 + sig) * self.log_x
        phi = np.zeros_like(y)
        for shift in self.den_shifts:
            z = s - shift
            lam = lam - np.log(np.abs(z))
            phi = phi - np.angle(z)
        smin, smax = float(np.min(sig)), float(np.max(sig))
        ymin, ymax = (float(np.min(y)), float(np.max(y))) if y.size \
            else (0.0, 0.0)
        for k in self._active(smin, smax, frame, ymin, ymax):
            L = self.levels[k]
            e1 = L["ltau"] - sig * L["c1"]
            e2 = L["ltau"] - sig * L["c2"]
            ph1 = frame.osc_anchors[k][0] + _phase_arr(y, *L["c1_pair"])
            ph2 = frame.osc_anchors[k][1] + _phase_arr(y, *L["c2_pair"])
            num = np.exp(e1 - 1j * ph1) - np.exp(e2 - 1j * ph2)
            den_m = sig + 1j * (frame.dist0[k] + y)
            den_p = sig + 1j * (frame.sum0[k] + y)
            term = num / (2.0 * den_m) + num / (2.0 * den_p)
            lam = lam + term.real
            phi = phi + term.imag
        if with_x_phase:
            phi = phi + frame.anchor_x \
                + _phase_arr(y, self.lx_hi, self.lx_lo,
                             guard=_PHASE_GUARD_X)
        return lam, phi

    def stiff(self, sigma, y: np.ndarray, frame: Frame) -> np.ndarray:
        """Upper estimate of |d log I / ds| (any direction)."""
        y = np.asarray(y, dtype=float)
        sig = np.broadcast_to(np.asarray(sigma, dtype=float), y.shape)
        s = sig + 1j * (frame.t0f + y)
        out = np.full(y.shape, self.log_x)
        for shift in self.den_shifts:
            out = out + 1.0 / np.abs(s - shift)
        smin, smax = float(np.min(sig)), float(np.max(sig))
        ymin, ymax = (float(np.min(y)), float(np.max(y))) if y.size \
            else (0.0, 0.0)
        for k in self._active(smin, smax, frame, ymin, ymax):
            L = self.levels[k]
            a1 = np.exp(L["ltau"] - sig * L["c1"])
            a2 = np.exp(L["ltau"] - sig * L["c2"])
            dm = np.abs(sig + 1j * (frame.dist0[k] + y))
            dp = np.abs(sig + 1j * (frame.sum0[k] + y))
            out = out + 0.5 * (L["c1"] * a1 + L["c2"] * a2) \
                * (1.0 / dm + 1.0 / dp) \
                + 0.5 * (a1 + a2) * (1.0 / dm ** 2 + 1.0 / dp ** 2)
        return out

    def osc_rel(self, sigma, y: np.ndarray, frame: Frame) -> np.ndarray:
        """Total oscillator amplitude inside Sigma (the carrier's wiggle)."""
        y = np.asarray(y, dtype=float)
        sig = np.broadcast_to(np.asarray(sigma, dtype=float), y.shape)
        out = np.zeros(y.shape)
        smin, smax = float(np.min(sig)), float(np.max(sig))
        ymin, ymax = (float(np.min(y)), float(np.max(y))) if y.size \
            else (0.0, 0.0)
        for k in self._active(smin, smax, frame, ymin, ymax):
            L = self.levels[k]
            a1 = np.exp(L["ltau"] - sig * L["c1"])
            a2 = np.exp(L["ltau"] - sig * L["c2"])
            dm = np.abs(sig + 1j * (frame.dist0[k] + y))
            dp = np.abs(sig + 1j * (frame.sum0[k] + y))
            out = out + 0.5 * (a1 + a2) * (1.0 / dm + 1.0 / dp)
        return out

    def max_osc_freq(self) -> float:
        return max((max(L["c1"], L["c2"]) for L in self.levels),
                   default=0.0)

    # -- scalar paths -----------------------------------------------------------

    def lam_mp(self, s):
        """Full log-integrand at one mpmath point (imag part unreduced)."""
        with mp.workprec(max(self.sys.bits, 128)):
            s = mp.mpc(s)
            osc = self.evaluator.oscillator_sum(s)
            return (s + 1) * self.log_x_mp + osc \
                - mp.log(s - 1) - mp.log(s + 1)

    def lam_prime(self, s: complex) -> complex:
        d = complex(self.log_x)
        for shift in self.den_shifts:
            d -= 1.0 / (s - shift)
        for L in self.levels:
            e1 = L["ltau"] - s.real * L["c1"]
            if e1 - math.log(max(abs(s.imag - L["tau_f"]), 1e-300)) \
                    < math.log(_DROP_AMP):
                e2 = L["ltau"] - s.real * L["c2"]
                if e2 - math.log(max(abs(s.imag - L["tau_f"]), 1e-300)) \
                        < math.log(_DROP_AMP):
                    continue
            a = cmath.exp(complex(L["ltau"], 0)
                          - L["c1"] * complex(s.real,
                                              math.fmod(s.imag, TWO_PI)
                                              if abs(s.imag) * L["c1"]
                                              < _SCALAR_PHASE_EXACT
                                              else 0.0))
            # phases need care; rebuild via the split reduction
            ph1 = _phase_scalar(s.imag, L["c1_mp"])
            ph2 = _phase_scalar(s.imag, L["c2_mp"])
            a = math.exp(L["ltau"] - s.real * L["c1"]) \
                * cmath.exp(-1j * ph1)
            b = math.exp(L["ltau"] - s.real * L["c2"]) \
                * cmath.exp(-1j * ph2)
            num = a - b
            dnum = -L["c1"] * a + L["c2"] * b
            den_m = complex(s.real, s.imag - L["tau_f"])
            den_p = complex(s.real, s.imag + L["tau_f"])
            d += dnum / (2.0 * den_m) + dnum / (2.0 * den_p) \
                - num / (2.0 * den_m ** 2) - num / (2.0 * den_p ** 2)
        return d

    # -- certificates -----------------------------------------------------------

    def sum_abs_sup(self, sigma_min: float) -> float:
        """Bound on Re Sigma (hence on log |e^Sigma|) for sigma >= sigma_min."""
        g = 0.0
        for L in self.levels:
            a1 = math.exp(L["ltau"] - sigma_min * L["c1"])
            a2 = math.exp(L["ltau"] - sigma_min * L["c2"])
            g += (a1 + a2) / sigma_min
        return g

    def tail_sups(self, kappa: float, T: float):
        """(sup |lam''|, inf |lam'|, log C) for t >= T on sigma = kappa,
        with |integrand| <= x^{kappa+1} C / t^2 there."""
        sup2 = 2.0 / T ** 2
        inf1 = self.log_x - 2.0 / T
        for L in self.levels:
            a1 = math.exp(L["ltau"] - kappa * L["c1"])
            a2 = math.exp(L["ltau"] - kappa * L["c2"])
            tau = L["tau_f"]
            dm = kappa if tau >= T else math.hypot(kappa, T - tau)
            dp = math.hypot(kappa, T + tau)
            c1, c2 = L["c1"], L["c2"]
            sup2 += 0.5 * (c1 * c1 * a1 + c2 * c2 * a2) * (1 / dm + 1 / dp) \
                + (c1 * a1 + c2 * a2) * (1 / dm ** 2 + 1 / dp ** 2) \
                + (a1 + a2) * (1 / dm ** 3 + 1 / dp ** 3)
            inf1 -= 0.5 * (c1 * a1 + c2 * a2) * (1 / dm + 1 / dp) \
                + 0.5 * (a1 + a2) * (1 / dm ** 2 + 1 / dp ** 2)
        return sup2, inf1, self.sum_abs_sup(kappa)

    def rho_log(self):
        with mp.workprec(max(self.sys.bits, 128)):
            return float(mp.re(self.evaluator.oscillator_sum(mp.mpc(1))))


class EulerProductIntegrand(_IntegrandBase):
    """x^{s+1} exp(-sum_p log(1 - p^{-s})) / (s (s+1)) for finitely many
    generators p > 1.  The zeta factor has no pole in Re s > 0, so the
    Perron identity carries no residue term."""

    def __init__(self, primes, log_x, bits: int = 128):
        self.primes = tuple(float(p) for p in primes)
        if any(p <= 1.0 for p in self.primes):
            raise ValueError("generators must exceed 1")
        self.bits = bits
        with mp.workprec(bits):
            self.log_x_mp = mp.mpf(log_x)
            self.logp_mp = tuple(mp.log(mp.mpf(p)) for p in self.primes)
        self.log_x = float(self.log_x_mp)
        self.lx_hi, self.lx_lo = _split_mp(self.log_x_mp)
        self.logp = tuple(float(lp) for lp in self.logp_mp)
        with mp.workprec(bits):
            self.logp_pairs = tuple(_split_mp(lp) for lp in self.logp_mp)
        self.den_shifts = (0.0, -1.0)
        self.pole_ordinates = ()

    def with_log_x(self, log_x) -> "EulerProductIntegrand":
        return EulerProductIntegrand(self.primes, log_x, bits=self.bits)

    def frame_at(self, t0) -> Frame:
        with mp.workprec(max(self.bits, 128)):
            t0_mp = mp.mpf(t0)
            anchor_x = _mod2pi_mp(t0_mp * self.log_x_mp) if t0_mp != 0 \
                else 0.0
            osc = tuple(_mod2pi_mp(t0_mp * lp) if t0_mp != 0 else 0.0
                        for lp in self.logp_mp)
        return Frame(t0f=float(t0_mp), anchor_x=anchor_x, osc_anchors=osc,
                     dist0=(), sum0=())

    def eval_lam(self, sigma, y: np.ndarray, frame: Frame,
                 with_x_phase: bool = True):
        y = np.asarray(y, dtype=float)
        sig = np.broadcast_to(np.asarray(sigma, dtype=float), y.shape)
        t = frame.t0f + y
        s = sig + 1j * t
        lam = (1.0 + sig) * self.log_x
        phi = np.zeros_like(y)
        for shift in self.den_shifts:
            z = s - shift
            lam = lam - np.log(np.abs(z))
            phi = phi - np.angle(z)
        for i, lp in enumerate(self.logp):
            ph = frame.osc_anchors[i] + _phase_arr(y, *self.logp_pairs[i])
            w = 1.0 - np.exp(-sig * lp - 1j * ph)
            lam = lam - np.log(np.abs(w))
            phi = phi - np.angle(w)
        if with_x_phase:
            phi = phi + frame.anchor_x \
                + _phase_arr(y, self.lx_hi, self.lx_lo,
                             guard=_PHASE_GUARD_X)
        return lam, phi

    def stiff(self, sigma, y: np.ndarray, frame: Frame) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        sig = np.broadcast_to(np.asarray(sigma, dtype=float), y.shape)
        s = sig + 1j * (frame.t0f + y)
        out = np.full(y.shape, self.log_x)
        for shift in self.den_shifts:
            out = out + 1.0 / np.abs(s - shift)
        for lp in self.logp:
            z = np.exp(-sig * lp)
            out = out + lp * z / (1.0 - z)
        return out

    def osc_rel(self, sigma, y: np.ndarray, frame: Frame) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        sig = np.broadcast_to(np.asarray(sigma, dtype=float), y.shape)
        out = np.zeros(y.shape)
        for lp in self.logp:
            z = np.exp(-sig * lp)
            out = out + z / (1.0 - z)
        return out

    def max_osc_freq(self) -> float:
        return max(self.logp)

    def lam_mp(self, s):
        with mp.workprec(max(self.bits, 128)):
            s = mp.mpc(s)
            acc = (s + 1) * self.log_x_mp
            for shift in self.den_shifts:
                acc -= mp.log(s - shift)
            for lp in self.logp_mp:
                acc -= mp.log(1 - mp.exp(-s * lp))
            return acc

    def lam_prime(self, s: complex) -> complex:
        d = complex(self.log_x)
        for shift in self.den_shifts:
            d -= 1.0 / (s - shift)
        for i, lp in enumerate(self.logp):
            ph = _phase_scalar(s.imag, self.logp_mp[i])
            z = math.exp(-s.real * lp) * cmath.exp(-1j * ph)
            d -= lp * z / (1.0 - z)
        return d

    def sum_abs_sup(self, sigma_min: float) -> float:
        return sum(-math.log(1.0 - math.exp(-sigma_min * lp))
                   for lp in self.logp)

    def tail_sups(self, kappa: float, T: float):
        sup2 = 2.0 / T ** 2
        inf1 = self.log_x - 2.0 / T
        for lp in self.logp:
            z = math.exp(-kappa * lp)
            sup2 += lp * lp * z / (1.0 - z) ** 2
            inf1 -= lp * z / (1.0 - z)
        return sup2, inf1, self.sum_abs_sup(kappa)

    def rho_log(self):
        return None


def _interval_dist(lo: float, hi: float) -> float:
    """Distance of the interval [lo, hi] from zero."""
    if lo <= 0.0 <= hi:
        return 0.0
    return min(abs(lo), abs(hi))


# ---------------------------------------------------------------------------
# Accumulators and segment records
# ---------------------------------------------------------------------------

class _Acc:
    """Running value / absolute-envelope / error accumulator."""

    def __init__(self):
        self.val = LogComplex.zero()
        self.abs_log = -math.inf
        self.err_log = -math.inf
        self.n_panels = 0
        self.n_evals = 0

    def add(self, val: LogComplex, abs_log: float, err_log: float,
            panels: int, evals: int):
        self.val = self.val.plus(val)
        self.abs_log = float(np.logaddexp(self.abs_log, abs_log))
        self.err_log = float(np.logaddexp(self.err_log, err_log))
        self.n_panels += panels
        self.n_evals += evals


@dataclass(frozen=True)
class Segment:
    """One contour piece with its measured and certified magnitudes."""

    tag: str
    kind: str
    z0: complex
    z1: complex
    value_logmag: float
    value_phase: float
    abs_bound_logmag: float       # log of the measured integral of |I| |ds|
    err_logmag: float             # accumulated quadrature error estimate
    n_panels: int
    n_evals: int
    envelope_logmag: float | None = None
    envelope_alt_logmag: float | None = None
    fallback: bool = False

    @property
    def value(self) -> LogComplex:
        return LogComplex(self.value_logmag, self.value_phase)

    def to_json(self) -> dict:
        row = {"tag": self.tag,
               "log10_abs": self.value_logmag / math.log(10.0),
               "phase": self.value_phase,
               "bound_log10_abs": self.abs_bound_logmag / math.log(10.0)}
        return row


def _segment_from_acc(tag, kind, z0, z1, acc: _Acc, *, envelope=None,
                      envelope_alt=None, fallback=False) -> Segment:
    return Segment(tag=tag, kind=kind, z0=z0, z1=z1,
                   value_logmag=acc.val.logmag, value_phase=acc.val.phase,
                   abs_bound_logmag=acc.abs_log, err_logmag=acc.err_log,
                   n_panels=acc.n_panels, n_evals=acc.n_evals,
                   envelope_logmag=envelope,
                   envelope_alt_logmag=envelope_alt, fallback=fallback)


# ---------------------------------------------------------------------------
# Curves: t-parametrized paths handed to the quadrature drivers
# ---------------------------------------------------------------------------

class _VerticalCurve:
    def __init__(self, sigma: float):
        self.sigma0 = sigma

    def sigma(self, t):
        return np.full(np.shape(t), self.sigma0) if np.ndim(t) \
            else self.sigma0

    def dsigma(self, t):
        return np.zeros(np.shape(t)) if np.ndim(t) else 0.0


class _HugCurve:
    """sigma = 1 - 1/e up to t = e^e, then 1 - log log t / log t."""

    KNEE = E_E
    SIGMA_LOW = 1.0 - 1.0 / math.e

    def sigma(self, t):
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, self.SIGMA_LOW)
        hi = t > self.KNEE
        if np.any(hi):
            lt = np.log(t[hi])
            out[hi] = 1.0 - np.log(lt) / lt
        return out if out.ndim else float(out)

    def dsigma(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape)
        hi = t > self.KNEE
        if np.any(hi):
            lt = np.log(t[hi])
            out[hi] = (np.log(lt) - 1.0) / (t[hi] * lt * lt)
        return out if out.ndim else float(out)

    @staticmethod
    def sigma_at(t: float) -> float:
        if t <= E_E:
            return 1.0 - 1.0 / math.e
        lt = math.log(t)
        return 1.0 - math.log(lt) / lt


# ---------------------------------------------------------------------------
# Resolved Gauss-Legendre marching
# ---------------------------------------------------------------------------

def _march_edges(integrand, curve, frame: Frame, y_lo: float, y_hi: float,
                 max_panels: int = 4_000_000) -> np.ndarray:
    """Panel edges over [y_lo, y_hi] sized so each panel's phase swing
    stays under the GL budget.  Stiffness is probed blockwise."""
    edges = [y_lo]
    y = y_lo
    span = y_hi - y_lo
    while y < y_hi:
        st = float(integrand.stiff(curve.sigma(frame.t0f + y),
                                   np.asarray([y]), frame)[0])
        w = _PANEL_PHASE / max(st, 1e-12)
        w = min(w, span)
        block = [min(y + w * (j + 1), y_hi) for j in range(64)]
        # re-probe at the block's end; shrink if stiffness grew
        st_end = float(integrand.stiff(curve.sigma(frame.t0f + block[-1]),
                                       np.asarray([block[-1]]), frame)[0])
        if st_end > 1.6 * st:
            w = _PANEL_PHASE / st_end
            block = [min(y + w * (j + 1), y_hi) for j in range(64)]
        for b in block:
            if b > edges[-1]:
                edges.append(b)
            if b >= y_hi:
                break
        y = edges[-1]
        if len(edges) > max_panels:
            raise PerronError("resolved march exceeded the panel budget; "
                              "this span needs the oscillatory ladder")
    return np.asarray(edges)


def _gl_span(integrand, curve, frame: Frame, y_lo: float, y_hi: float,
             acc: _Acc, *, chunk: int = 4096):
    """Resolved GL-16 integration of the full integrand over a curve span
    (contributes the complex integral of I ds with ds = (sigma' + i) dt)."""
    if y_hi <= y_lo:
        return
    edges = _march_edges(integrand, curve, frame, y_lo, y_hi)
    n = len(edges) - 1
    for i0 in range(0, n, chunk):
        i1 = min(i0 + chunk, n)
        lo = edges[i0:i1]
        hi = edges[i0 + 1:i1 + 1]
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        y = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
        t = frame.t0f + y
        sig = curve.sigma(t)
        dsig = curve.dsigma(t)
        lam, phi = integrand.eval_lam(sig, y, frame, with_x_phase=True)
        l_ref = float(np.max(lam))
        vals = np.exp(lam - l_ref + 1j * phi) * (dsig + 1j)
        w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
        total = complex(np.sum(w * vals))
        abs_tot = float(np.sum(w * np.abs(vals)))
        # error heuristic: compare against the embedded 8-point rule
        v8 = complex(np.sum((w * vals).reshape(-1, 16)[:, ::2] * 2.0))
        err = abs(total - v8) * 1e-3 + abs(total) * 1e-14
        acc.add(LogComplex.from_complex(total).times_real_exp(l_ref)
                if total != 0 else LogComplex.zero(),
                (math.log(abs_tot) + l_ref) if abs_tot > 0 else -math.inf,
                (math.log(err) + l_ref) if err > 0 else -math.inf,
                i1 - i0, y.size)


def _gl_horizontal(integrand, frame: Frame, y_fix: float, sig_lo: float,
                   sig_hi: float, acc: _Acc):
    """Resolved GL-16 integration along a horizontal piece (fixed t,
    ds = d sigma, phases constant in sigma)."""
    if sig_lo == sig_hi:
        return
    direction = 1.0 if sig_hi > sig_lo else -1.0
    a, b = min(sig_lo, sig_hi), max(sig_lo, sig_hi)
    edges = [a]
    sig = a
    while sig < b:
        st = float(integrand.stiff(sig, np.asarray([y_fix]), frame)[0])
        sig = min(sig + _PANEL_PHASE / max(st, 1e-12), b)
        edges.append(sig)
    edges = np.asarray(edges)
    lo, hi = edges[:-1], edges[1:]
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    sg = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    y = np.full(sg.shape, y_fix)
    lam, phi = integrand.eval_lam(sg, y, frame, with_x_phase=True)
    l_ref = float(np.max(lam))
    vals = np.exp(lam - l_ref + 1j * phi)
    w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel() * direction
    total = complex(np.sum(w * vals))
    abs_tot = float(np.sum(np.abs(w) * np.abs(vals)))
    acc.add(LogComplex.from_complex(total).times_real_exp(l_ref)
            if total != 0 else LogComplex.zero(),
            (math.log(abs_tot) + l_ref) if abs_tot > 0 else -math.inf,
            (math.log(max(abs(total), abs_tot) * 1e-13) + l_ref)
            if abs_tot > 0 else -math.inf,
            len(lo), sg.size)


# ---------------------------------------------------------------------------
# Oscillatory panels: Chebyshev carrier fit against exact x-phase moments
# ---------------------------------------------------------------------------

def _moments(omega: float, e_iw: complex, jmax: int = _CHEB_N) -> np.ndarray:
    """mu_j = int_{-1}^{1} u^j e^{i omega u} du for j < jmax, via the
    upward recurrence (stable once |omega| > j).  e_iw must be the exact
    e^{i omega}."""
    mu = np.empty(jmax, dtype=complex)
    iw = 1j * omega
    e_m = 1.0 / e_iw          # e^{-i omega}, |e_iw| = 1
    mu[0] = (e_iw - e_m) / iw
    sign = -1.0
    for j in range(1, jmax):
        mu[j] = (e_iw - sign * e_m) / iw - (j / iw) * mu[j - 1]
        sign = -sign
    return mu


def _panel_value(integrand, curve, frame: Frame, y_lo: float, y_hi: float,
                 l_ref: float):
    """One ladder panel, relative to e^{l_ref}.  Returns
    (value, abs_estimate, evals).  Chooses the carrier fit when the
    x-phase swings fast, plain GL-16 otherwise."""
    half = 0.5 * (y_hi - y_lo)
    mid = 0.5 * (y_hi + y_lo)
    omega = half * integrand.log_x
    if omega < _FILON_OMEGA_MIN:
        y = mid + half * _GL_NODES
        t = frame.t0f + y
        sig = curve.sigma(t)
        dsig = curve.dsigma(t)
        lam, phi = integrand.eval_lam(sig, y, frame, with_x_phase=True)
        vals = np.exp(lam - l_ref + 1j * phi) * (dsig + 1j)
        w = half * _GL_WEIGHTS
        return complex(np.sum(w * vals)), float(np.sum(w * np.abs(vals))), \
            y.size
    y = mid + half * _CHEB_U
    t = frame.t0f + y
    sig = curve.sigma(t)
    dsig = curve.dsigma(t)
    lam, phi_c = integrand.eval_lam(sig, y, frame, with_x_phase=False)
    g = np.exp(lam - l_ref + 1j * phi_c) * (dsig + 1j)
    coef = _CHEB_MINV @ g
    phi_mid = frame.anchor_x + _phase_scalar(mid, integrand.log_x_mp)
    e_iw = cmath.exp(1j * _phase_scalar(half, integrand.log_x_mp))
    mu = _moments(omega, e_iw)
    val = half * cmath.exp(1j * phi_mid) * complex(np.sum(coef * mu))
    abs_est = 2.0 * half * float(np.mean(np.abs(g)))
    return val, abs_est, y.size


def _ladder_span(integrand, curve, frame: Frame, y_lo: float, y_hi: float,
                 anchor_y: float, acc: _Acc, *, ratio: float = 1.35,
                 panel_tol: float = 1e-3, floor_log: float = -math.inf,
                 max_depth: int = 14):
    """Geometric ladder over [y_lo, y_hi] with bisection verification.

    Distances from anchor_y grow by `ratio` per panel; each candidate
    panel is accepted when halving it moves the value by less than
    panel_tol relatively (plus an absolute floor), and is bisected
    otherwise.  The carrier fit inside `_panel_value` keeps the cost per
    panel at eight evaluations regardless of the x-phase speed.
    """
    if y_hi <= y_lo:
        return
    # candidate edges, geometric in distance from the anchor
    d_lo = max(y_lo - anchor_y, 0.0) if anchor_y <= y_lo \
        else max(anchor_y - y_hi, 0.0)
    edges = [y_lo]
    if anchor_y <= y_lo:
        d = max(d_lo, 1e-9 * max(abs(y_lo), 1.0))
        while anchor_y + d < y_hi:
            d *= ratio
            edges.append(min(anchor_y + d, y_hi))
    else:
        d = max(d_lo, 1e-9 * max(abs(y_hi), 1.0))
        back = [y_hi]
        while anchor_y - d > y_lo:
            d *= ratio
            back.append(max(anchor_y - d, y_lo))
        edges = list(reversed(back))
        if edges[0] > y_lo:
            edges.insert(0, y_lo)
    if edges[-1] < y_hi:
        edges.append(y_hi)

    # reference scale: probe a few points for the local magnitude
    probe = np.linspace(y_lo, y_hi, 9)
    lam_p, _ = integrand.eval_lam(curve.sigma(frame.t0f + probe), probe,
                                  frame, with_x_phase=False)
    l_ref = float(np.max(lam_p))
    acc.n_evals += probe.size

    def do_panel(a, b, depth):
        v, ab, ev = _panel_value(integrand, curve, frame, a, b, l_ref)
        acc.n_evals += ev
        m = 0.5 * (a + b)
        v1, ab1, ev1 = _panel_value(integrand, curve, frame, a, m, l_ref)
        v2, ab2, ev2 = _panel_value(integrand, curve, frame, m, b, l_ref)
        acc.n_evals += ev1 + ev2
        fine = v1 + v2
        err = abs(v - fine)
        tol = panel_tol * abs(fine) + math.exp(min(floor_log - l_ref, 500.0))
        if err <= tol or depth >= max_depth:
            acc.add(LogComplex.from_complex(fine).times_real_exp(l_ref)
                    if fine != 0 else LogComplex.zero(),
                    (math.log(ab1 + ab2) + l_ref) if ab1 + ab2 > 0
                    else -math.inf,
                    (math.log(err) + l_ref) if err > 0 else -math.inf,
                    2, 0)
            acc.n_panels += 0
            return
        do_panel(a, m, depth + 1)
        do_panel(m, b, depth + 1)

    for a, b in zip(edges[:-1], edges[1:]):
        do_panel(a, b, 0)


# ---------------------------------------------------------------------------
# The top-level span integrator: splits at oscillator windows
# ---------------------------------------------------------------------------

def _window_halfwidth(integrand, k: int, sigma_ref: float,
                      filon_tol: float) -> float:
    """Half-width of the resolved window around tau_k on a curve whose
    abscissa near the pole is about sigma_ref."""
    L = integrand.levels[k]
    a1 = math.exp(L["ltau"] - sigma_ref * L["c1"])
    a2 = math.exp(L["ltau"] - sigma_ref * L["c2"])
    w = (a1 + a2) / (2.0 * filon_tol)
    return max(w, 4.0 * sigma_ref)


def _integrate_t_span(integrand, curve, t_lo: float, t_hi: float,
                      acc: _Acc, *, frames: dict, anchor_t: float,
                      filon_tol: float = 3e-3, force_resolved: bool = False,
                      floor_log: float = -math.inf,
                      resolved_cap: float = 512.0):
    """Integrate I ds over t in [t_lo, t_hi] along the curve.

    The span is cut at every oscillator ordinate window, each window
    integrated by the resolved march in that level's frame, and the
    remaining zones by the geometric carrier ladder (or the resolved
    march if they are cheap or force_resolved is set).
    """
    if t_hi <= t_lo:
        return

    def get_frame(key, t0):
        if key not in frames:
            frames[key] = integrand.frame_at(t0)
        return frames[key]

    # windows around oscillator ordinates inside the span
    windows = []
    if hasattr(integrand, "levels"):
        for k, L in enumerate(integrand.levels):
            tau = L["tau_f"]
            sig_ref = float(np.asarray(curve.sigma(max(tau, t_lo))))
            w = _window_halfwidth(integrand, k, sig_ref, filon_tol)
            lo, hi = tau - w, tau + w
            if hi > t_lo and lo < t_hi:
                windows.append((max(lo, t_lo), min(hi, t_hi), k, L))
    windows.sort()

    zones = []
    cur = t_lo
    for lo, hi, k, L in windows:
        if lo > cur:
            zones.append((cur, lo, None, None))
        zones.append((lo, hi, k, L))
        cur = max(cur, hi)
    if cur < t_hi:
        zones.append((cur, t_hi, None, None))

    for lo, hi, k, L in zones:
        if k is not None:
            fr = get_frame(("tau", k), L["tau_mp"])
            _gl_span(integrand, curve, fr, lo - fr.t0f, hi - fr.t0f, acc)
            continue
        # plain zone: resolved when short or forced, ladder otherwise
        fr_abs = get_frame("abs", 0)
        st_lo = float(integrand.stiff(curve.sigma(lo), np.asarray([lo]),
                                      fr_abs)[0])
        est_panels = (hi - lo) * st_lo / _PANEL_PHASE
        if force_resolved or est_panels <= resolved_cap:
            # keep within the fmod exactness budget of the x-phase
            if hi * integrand.log_x <= _PHASE_GUARD_X:
                _gl_span(integrand, curve, fr_abs, lo, hi, acc)
                continue
        # ladder anchored at the requested feature (clip into the zone)
        anchor = min(max(anchor_t, lo - (hi - lo)), hi + (hi - lo))
        # choose the frame nearest this zone for phase anchoring
        fr = fr_abs
        best = abs(anchor_t)
        for key, f in list(frames.items()):
            if isinstance(key, tuple) and key[0] == "tau":
                if abs(f.t0f - 0.5 * (lo + hi)) < best:
                    best = abs(f.t0f - 0.5 * (lo + hi))
                    fr = f
        _ladder_span(integrand, curve, fr, lo - fr.t0f, hi - fr.t0f,
                     anchor - fr.t0f, acc, panel_tol=filon_tol,
                     floor_log=floor_log)


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PerronResult:
    """Outcome of one Perron run: residue + (1/pi) Im Z decomposition.

    `total` is the plain-float weighted count (inf when e^{2 log x}
    overflows a double; the log fields then carry the result), `segments`
    the per-piece ledger.  Composite runs add the descent-box reference
    magnitude and the dominance report.
    """

    mode: str
    x: float
    log_x: float
    kappa: float | None
    t_cut: float | None
    residue_logmag: float | None
    contour_logmag: float
    contour_phase: float
    total: float
    total_logmag: float
    total_sign: int
    tail_bound_logmag: float
    quad_err_logmag: float
    segments: tuple
    n_evals: int
    k: int | None = None
    sigma0: float | None = None
    sigma_prime: float | None = None
    c_doubleprime: float | None = None
    saddle_logmag: float | None = None
    all_below_saddle: bool | None = None
    dominating: tuple = ()
    delta0_lead_max: float | None = None
    fallback_boxes: tuple = ()

    @property
    def residue_term(self) -> float:
        if self.residue_logmag is None:
            return 0.0
        if self.residue_logmag > 700.0:
            return math.inf
        return math.exp(self.residue_logmag)

    @property
    def contour_value(self) -> complex:
        return LogComplex(self.contour_logmag, self.contour_phase) \
            .to_complex()

    @property
    def tail_bound(self) -> float:
        if self.tail_bound_logmag > 700.0:
            return math.inf
        return math.exp(self.tail_bound_logmag)

    def gaps(self) -> dict:
        """Per-segment log gap below the central box (positive = smaller)."""
        if self.saddle_logmag is None:
            return {}
        return {seg.tag: self.saddle_logmag - seg.value_logmag
                for seg in self.segments if not seg.kind.startswith("descent")}

    def ledger_json(self) -> list:
        return [seg.to_json() for seg in self.segments]


def _real_logcomplex(logmag: float, negative: bool) -> LogComplex:
    return LogComplex(logmag, math.pi if negative else 0.0)


def _assemble_total(residue_logmag, z: LogComplex):
    """total = residue + Im(z)/pi, in split-exponent arithmetic."""
    sin_ph = math.sin(z.phase)
    if z.logmag == -math.inf or sin_ph == 0.0:
        imz = LogComplex.zero()
    else:
        imz = _real_logcomplex(z.logmag + math.log(abs(sin_ph))
                               - math.log(math.pi), sin_ph < 0)
    if residue_logmag is None:
        tot = imz
    else:
        tot = _real_logcomplex(residue_logmag, False).plus(imz)
    sign = 1 if math.cos(tot.phase) >= 0 else -1
    if tot.logmag > 700.0:
        total = math.inf * sign
    elif tot.logmag == -math.inf:
        total = 0.0
    else:
        total = sign * math.exp(tot.logmag)
    return total, tot.logmag, sign


# ---------------------------------------------------------------------------
# Vertical mode
# ---------------------------------------------------------------------------

def _coerce_integrand(system_or_integrand, x) -> _IntegrandBase:
    if isinstance(system_or_integrand, ContinuousPrimeSystem):
        if x is None:
            raise ValueError("x is required with a bare system")
        with mp.workprec(max(system_or_integrand.bits, 128)):
            return SystemIntegrand(system_or_integrand, log_x=mp.log(x))
    integrand = system_or_integrand
    if x is not None:
        with mp.workprec(128):
            integrand = integrand.with_log_x(mp.log(x))
    return integrand


def _vertical_tail(integrand, kappa: float, T: float):
    """One integration by parts past T: returns (tail value as a piece of
    Z, certified log bound on the remainder)."""
    lam_T = integrand.lam_mp(mp.mpc(kappa, T))
    lam_re = float(mp.re(lam_T))
    lam_ph = _mod2pi_mp(mp.im(lam_T))
    lp = integrand.lam_prime(complex(kappa, T))
    sup2, inf1, log_c = integrand.tail_sups(kappa, T)
    if inf1 <= 0.1 * integrand.log_x:
        raise TailTooLarge(
            "the phase derivative is not bounded away from zero beyond the "
            "cutoff; raise T_cut", bound=math.inf, t_cut=T)
    # Z_tail = int_T^inf I i dt = -e^{Lambda(T)} / lam'(T) + i * remainder
    val = _real_logcomplex(lam_re - math.log(abs(lp)), False)
    val = LogComplex(val.logmag,
                     lam_ph - cmath.phase(lp) + math.pi)
    bound_log = math.log(sup2) - 2.0 * math.log(inf1) \
        + (kappa + 1.0) * integrand.log_x + log_c - math.log(T)
    return val, bound_log


def perron_vertical(system_or_integrand, x=None, kappa: float = 2.0,
                    T_cut: float | None = None, *, rel_tol: float = 1e-3,
                    filon_tol: float = 1e-5) -> PerronResult:
    """Weighted count by the truncated vertical line Re s = kappa.

    The finite part [0, T_cut] is integrated with resolved panels, the
    tail beyond T_cut evaluated by one integration by parts whose
    remainder carries a certified bound; `TailTooLarge` is raised when
    that bound exceeds rel_tol times the computed total.  T_cut defaults
    to max(10^3, x).  filon_tol is the per-panel acceptance for the
    carrier ladder; it is kept tight here because the line integral
    cancels down from an x^{kappa+1} envelope, so panel errors are
    amplified by the cancellation ratio.
    """
    if kappa <= 1.0:
        raise ValueError("kappa must exceed 1")
    integrand = _coerce_integrand(system_or_integrand, x)
    x_f = integrand.x_float()
    T = float(T_cut) if T_cut is not None else max(1e3, x_f)
    if not math.isfinite(T):
        raise ValueError("T_cut must be finite at this size; pass one")

    acc = _Acc()
    curve = _VerticalCurve(kappa)
    frames: dict = {}
    # resolved panels stay affordable far beyond the generic zone cap on a
    # vertical line, and the cancellation down from the x^{kappa+1} envelope
    # punishes the ladder's panel floor; prefer the march up to ~10^6 panels
    _integrate_t_span(integrand, curve, 0.0, T, acc, frames=frames,
                      anchor_t=0.0, force_resolved=False,
                      filon_tol=filon_tol, resolved_cap=1e6)
    tail_val, tail_bound_log = _vertical_tail(integrand, kappa, T)
    z = acc.val.plus(tail_val)

    seg = _segment_from_acc("vertical", "vertical", complex(kappa, 0.0),
                            complex(kappa, T), acc)
    # the base point kappa > 1 sits right of the zeta pole: no residue term
    total, total_logmag, sign = _assemble_total(None, z)

    scale = max(abs(total), 1e-300)
    bound = math.exp(min(tail_bound_log, 700.0)) / math.pi
    if bound > rel_tol * scale:
        raise TailTooLarge(
            f"certified tail bound {bound:.3e} exceeds {rel_tol:.1e} of "
            f"the result scale {scale:.3e} at T_cut={T:.4g}",
            bound=bound, scale=scale, t_cut=T,
            t_suggest=T * (bound / (rel_tol * scale)))

    return PerronResult(
        mode="vertical", x=x_f, log_x=integrand.log_x, kappa=kappa, t_cut=T,
        residue_logmag=None, contour_logmag=z.logmag,
        contour_phase=z.phase, total=total, total_logmag=total_logmag,
        total_sign=sign, tail_bound_logmag=tail_bound_log - math.log(math.pi),
        quad_err_logmag=acc.err_log, segments=(seg,), n_evals=acc.n_evals)


# ---------------------------------------------------------------------------
# The hugging contour
# ---------------------------------------------------------------------------

def _hug_tail(integrand, T: float):
    """One integration by parts for the hugging contour above T.

    Returns (tail value as a piece of Z, certified log bound on the
    remainder); the bound is +inf when the phase-derivative certificate
    does not close at this height (the caller then integrates further).
    With Lambda(t) the log-integrand along the curve, the tail is
    -e^{Lambda(T)} / Lambda'(T) plus a remainder below
    sup |Lambda''| / |Lambda'|^2 times the integral of |I|, and that
    integral is at most x^2 C / T since sigma <= 1, |e^Sigma| <= C and
    the kernel decays like 1/t^2.
    """
    curve = _HugCurve()
    sig = _HugCurve.sigma_at(T)
    sup2, inf1, log_c = integrand.tail_sups(sig, T)
    if inf1 <= 0.05 * integrand.log_x:
        return None, math.inf
    bits = max(getattr(integrand, "bits", 0),
               getattr(getattr(integrand, "sys", None), "bits", 0), 128)
    with mp.workprec(bits + 80):
        lam_T = integrand.lam_mp(mp.mpc(mp.mpf(sig), mp.mpf(T)))
        lam_re = float(mp.re(lam_T))
        lam_ph = _mod2pi_mp(mp.im(lam_T))
    dsig = float(np.asarray(curve.dsigma(T)))
    lamdot = complex(dsig, 1.0) * integrand.lam_prime(complex(sig, T))
    val = LogComplex(lam_re - math.log(abs(lamdot)),
                     lam_ph - cmath.phase(lamdot) + math.pi)
    # |Lambda''| <= |sigma''| sup|lam'| + (1 + sigma'^2) sup|lam''|
    supdd = 6.0 * integrand.log_x / T ** 2 + 1.05 * sup2
    bound_log = math.log(supdd) - 2.0 * math.log(inf1) \
        + 2.0 * integrand.log_x + log_c + math.log(1.01) - math.log(T)
    return val, bound_log


def _integrate_hug(integrand, t_lo: float, t_hi: float, acc: _Acc,
                   frames: dict, *, filon_tol: float = 3e-3,
                   floor_log: float = -math.inf):
    """The hugging contour between two ordinates (handles the knee)."""
    curve = _HugCurve()
    if t_lo < E_E:
        _integrate_t_span(integrand, curve, t_lo, min(t_hi, E_E), acc,
                          frames=frames, anchor_t=0.0,
                          filon_tol=filon_tol, floor_log=floor_log)
    if t_hi > E_E:
        _integrate_t_span(integrand, curve, max(t_lo, E_E), t_hi, acc,
                          frames=frames, anchor_t=max(t_lo, E_E),
                          filon_tol=filon_tol, floor_log=floor_log)


def perron_hl(system_or_integrand, x=None, *, t_top: float | None = None,
              rel_tol: float = 1e-3, filon_tol: float = 3e-3
              ) -> PerronResult:
    """Weighted count over the full hugging contour.

    The contour starts on the real axis at sigma = 1 - 1/e (left of the
    zeta pole, hence the half-residue term).  It is truncated at an
    adaptive height where the integration-by-parts tail value plus its
    certified remainder bound take over.
    """
    integrand = _coerce_integrand(system_or_integrand, x)
    x_f = integrand.x_float()
    acc = _Acc()
    frames: dict = {}
    rho_log = integrand.rho_log()
    residue_logmag = None if rho_log is None \
        else rho_log + 2.0 * integrand.log_x - math.log(2.0)
    t1 = float(t_top) if t_top is not None \
        else max(1e4, 10.0 * min(x_f, 1e290))
    _integrate_hug(integrand, 0.0, t1, acc, frames, filon_tol=filon_tol)
    tail_val, tail_log = _hug_tail(integrand, t1)
    if t_top is None:
        while t1 < 1e30:
            scale_log = max(residue_logmag if residue_logmag is not None
                            else -math.inf, acc.val.logmag - math.log(math.pi))
            if tail_log <= scale_log + math.log(rel_tol) - math.log(30.0):
                break
            t0, t1 = t1, t1 * 32.0
            _integrate_hug(integrand, t0, t1, acc, frames,
                           filon_tol=filon_tol,
                           floor_log=acc.abs_log + math.log(1e-9))
            tail_val, tail_log = _hug_tail(integrand, t1)
    if tail_val is None:
        raise TailTooLarge(
            "the hugging-contour tail certificate did not close below the "
            f"height cap (reached t={t1:.3g})", bound=math.inf, t_cut=t1)
    z = acc.val.plus(tail_val)

    seg = _segment_from_acc("HL-arc(full)", "HL-arc",
                            complex(1.0 - 1.0 / math.e, 0.0),
                            complex(_HugCurve.sigma_at(t1), t1), acc)
    total, total_logmag, sign = _assemble_total(residue_logmag, z)
    return PerronResult(
        mode="hl", x=x_f, log_x=integrand.log_x, kappa=None, t_cut=t1,
        residue_logmag=residue_logmag, contour_logmag=z.logmag,
        contour_phase=z.phase, total=total, total_logmag=total_logmag,
        total_sign=sign, tail_bound_logmag=tail_log - math.log(math.pi),
        quad_err_logmag=acc.err_log, segments=(seg,), n_evals=acc.n_evals)


# ---------------------------------------------------------------------------
# The window constant c'' and the toy level
# ---------------------------------------------------------------------------

def compute_c_doubleprime(problem: SaddleProblem, *,
                          m_window: float | None = None,
                          sigma0: float | None = None) -> float:
    """Largest c'' making the mid-bridge inequality chain hold with the
    measured constants: for |t - tau| >= d0 = 2 pi m / coef,

        (1/2) tau^{1-(1+delta) sigma_0} / |sigma_0 + i (t-tau)|
            <= sqrt(2) sqrt(lx/llx) - c'' (lx/llx)^{1/6}.

    The worst case sits at |t - tau| = d0, so the solve is explicit.
    m_window defaults to the problem's own certified branch count and may
    be passed as a continuous value to study the window scaling (the
    increment over the zero-window value grows like the window squared,
    i.e. like c_m^2 through m_max).  Larger windows push the constraint
    farther from tau and therefore yield a LARGER c''.
    """
    if sigma0 is None:
        sigma0 = find_saddle(problem, 0).w.real
    lx, llx = problem.log_x, problem.loglog_x
    halfpower = 0.5 * math.exp(problem.log_tau - problem.coef * sigma0) \
        / sigma0
    main = math.sqrt(2.0) * math.sqrt(lx / llx)
    mw = float(problem.m_max) if m_window is None else float(m_window)
    d0 = TWO_PI * mw / problem.coef
    worst = halfpower / math.sqrt(1.0 + (d0 / sigma0) ** 2)
    return (main - worst) / (lx / llx) ** (1.0 / 6.0)


def _solve_increasing_mp(f, lo, hi, bits: int, tol_log2: int = -160):
    """Root of an increasing function on [lo, hi] by bisection at mp."""
    with mp.workprec(bits):
        lo, hi = mp.mpf(lo), mp.mpf(hi)
        flo, fhi = f(lo), f(hi)
        if not (flo < 0 < fhi):
            raise ValueError("root not bracketed")
        for _ in range(-tol_log2):
            mid = (lo + hi) / 2
            if f(mid) < 0:
                lo = mid
            else:
                hi = mid
            if hi - lo < mp.ldexp(1, tol_log2):
                break
        return (lo + hi) / 2


def toy_saddle_system(delta: float = 0.3, tau_near: float = 50.0,
                      bits: int = 256, span: int = 8
                      ) -> ContinuousPrimeSystem:
    """A one-level system sized for the composite contour at desk scale.

    tau is phase-aligned ((1+delta) tau log tau in 2 pi Z) near tau_near,
    log x solves the defining tie log tau = sqrt(log x log log x / 2),
    and nu is the smallest multiple of 2 pi / (tau log tau) at least 2.
    Among the admissible alignment integers within `span` of the one
    nearest tau_near, the returned system is the one whose anchor phase
    tau log x sits closest to the even-level class 2 pi Z, which keeps
    the descent-box phase checks comfortably inside their tolerance.
    """
    with mp.workprec(bits):
        dl = mp.mpf(delta)
        n_center = int(mp.nint((1 + dl) * tau_near * mp.log(tau_near)
                               / (2 * mp.pi)))
        best = None
        for n in range(max(n_center - span, 8), n_center + span + 1):
            target = 2 * mp.pi * n / (1 + dl)

            def f_tau(t, target=target):
                return t * mp.log(t) - target

            tau = _solve_increasing_mp(f_tau, mp.mpf(2), mp.mpf(10) ** 6,
                                       bits)
            ltau = mp.log(tau)
            lxlx = 2 * ltau * ltau

            def f_lx(v, lxlx=lxlx):
                return v * mp.log(v) - lxlx

            lx = _solve_increasing_mp(f_lx, mp.mpf(mp.e), mp.mpf(10) ** 9,
                                      bits)
            n_nu = int(mp.ceil(tau * ltau / mp.pi))
            while n_nu * 2 * mp.pi / (tau * ltau) < 2:
                n_nu += 1
            nu = n_nu * 2 * mp.pi / (tau * ltau)
            anchor, _err = reduce_mod_2pi(tau * lx, bits=bits)
            dist = float(dist_to_multiples(anchor, 0.0))
            if best is None or dist < best[0]:
                best = (dist, tau, ltau, lx, nu, n_nu)
        _dist, tau, ltau, lx, nu, n_nu = best
        a_val = dl * ltau - mp.log(ltau)
        return ContinuousPrimeSystem(
            K=1, bits=bits, alpha=math.log(6.0) + 0.5,
            tau=(tau,), log_tau=(ltau,), a=(a_val,), delta=(dl,),
            nu=(nu,), nu_int=(n_nu,), log_x=(lx,),
            log_xi=(lx,), eps=(mp.mpf(0),), eta=(a_val - mp.log(6) - 0.5,))


# ---------------------------------------------------------------------------
# The composite contour
# ---------------------------------------------------------------------------

def _box_fallback(integrand, frame: Frame, sigma_v: float, y_lo: float,
                  y_hi: float) -> _Acc:
    """Vertical pass through a box when its descent trace is unusable."""
    acc = _Acc()
    _gl_span(integrand, _VerticalCurve(sigma_v), frame, y_lo, y_hi, acc)
    return acc


def _box_abs_bound(integrand, frame: Frame, path) -> float:
    """log of the trapezoid of |I| |ds| along a traced descent path."""
    ys = np.array([row[2] for row in path.offsets])
    sg = np.array([row[1] for row in path.offsets])
    lam, _phi = integrand.eval_lam(sg, ys, frame, with_x_phase=False)
    l_ref = float(np.max(lam))
    mag = np.exp(lam - l_ref)
    dw = np.abs(np.diff(sg + 1j * ys))
    tot = float(np.sum(0.5 * (mag[1:] + mag[:-1]) * dw))
    return l_ref + math.log(tot) if tot > 0 else -math.inf


def _delta0_lead_max(problem: SaddleProblem, sig_lo: float, sig_hi: float,
                     y_fix: float, n: int = 64) -> float:
    """Max over samples of Re[ (1/2) tau^{1-(1+delta)s} / (s - i tau) ]
    on a horizontal piece at offset y_fix (exact phase: coef*tau is a
    multiple of 2 pi by construction, so only coef*y enters)."""
    sig = np.linspace(min(sig_lo, sig_hi), max(sig_lo, sig_hi), n)
    amp = 0.5 * np.exp(problem.log_tau - problem.coef * sig)
    ang = problem.coef * y_fix
    val = amp * (sig * math.cos(ang) - y_fix * math.sin(ang)) \
        / (sig ** 2 + y_fix ** 2)
    return float(np.max(val))


def _composite_envelopes(problem: SaddleProblem, c2: float, sigma0: float):
    """Closed-form per-family magnitude envelopes (O-terms dropped)."""
    lx, llx = problem.log_x, problem.loglog_x
    ltau = problem.log_tau
    a_k = problem.a_k
    root_big = math.sqrt(lx * llx)
    root_small = math.sqrt(lx / llx)
    sixth = (lx / llx) ** (1.0 / 6.0)
    env = {}
    env["connector"] = (2.0 * lx - 2.0 * math.sqrt(2.0) * root_big
                        - math.sqrt(2.0)
                        * (a_k + math.log(2.0) + math.log(math.pi / 2.0))
                        * root_small, None)
    env["delta0"] = ((1.0 + sigma0) * lx - math.sqrt(2.0) * root_big, None)
    env["delta1"] = (0.5 * c2 * sixth + (1.0 + sigma0) * lx
                     - math.sqrt(2.0) * root_big
                     + math.sqrt(2.0) * root_small - c2 * sixth, None)
    env["delta2"] = ((1.0 + sigma0) * lx - math.sqrt(2.0) * root_big, None)
    env["delta3"] = (2.0 * lx - 0.5 * math.sqrt(2.0) * c2
                     * (lx / llx) ** (2.0 / 3.0), None)
    # the minus-side bridge sits at height tau^{1/5}; when that height is
    # below e^e the hugging curve has not straightened yet and only the
    # x^{2 - 1/e} envelope of the hugging family applies
    env["delta4-"] = (2.0 * lx - 2.25 * math.sqrt(2.0) * root_big,
                      (2.0 - 1.0 / math.e) * lx
                      if problem.tau_f ** 0.2 <= E_E else None)
    env["delta4+"] = (2.0 * lx - 5.0 * ltau, None)
    env["hug-"] = (2.0 * lx - 2.25 * math.sqrt(2.0) * root_big,
                   (2.0 - 1.0 / math.e) * lx)
    env["hug+"] = (2.0 * lx - 5.0 * ltau,
                   2.0 * lx - 2.5 * math.sqrt(2.0) * root_big)
    return env


def perron_composite(sys: ContinuousPrimeSystem, k: int = 0, *,
                     c_m: float = 0.01, n_theta: int = 800,
                     filon_tol: float = 3e-3, strict: bool = False,
                     rel_tol: float = 1e-3, evaluator=None) -> PerronResult:
    """Weighted count at x = x_k over the descent assembly for level k.

    Ascending order: hugging contour up to tau^{1/5}, bridges in to the
    central abscissa, the descent boxes with their connectors, bridges
    back out, and the hugging contour beyond tau^5.  Boxes whose descent
    trace fails (lost path, winding, phase) fall back to a vertical pass
    through the same box, which leaves the contour's homotopy class --
    and hence the total -- unchanged.  The per-segment ledger compares
    every remainder piece against the central box; with strict=True a
    piece at or above the box raises `SegmentDominates`, otherwise the
    result reports the offenders with their measured gaps.
    """
    problem = SaddleProblem(sys, k=k, c_m=c_m)
    if evaluator is None:
        evaluator = ZetaEvaluator(sys)
    integrand = SystemIntegrand(sys, log_x=sys.log_x[k],
                                evaluator=evaluator)
    tau = problem.tau_f
    tau_mp = sys.tau[k]
    m_max = problem.m_max
    m_list = list(range(-m_max, m_max + 1))
    frames: dict = {"abs": integrand.frame_at(0)}
    f_tau = integrand.frame_at(tau_mp)
    frames[("tau", k)] = f_tau

    # -- descent boxes ---------------------------------------------------------
    saddles, paths, fallback = {}, {}, {}
    for m in m_list:
        try:
            saddles[m] = find_saddle(problem, m)
            paths[m] = trace_descent(problem, saddles[m], n_theta=n_theta)
        except (SaddleError, NonFinite):
            fallback[m] = True
    good = [m for m in m_list if m not in fallback]
    report = None
    while good:
        try:
            report = saddle_contribution(
                problem, m_set=good,
                saddles={m: saddles[m] for m in good},
                paths={m: paths[m] for m in good},
                evaluator=evaluator, n_theta=n_theta)
            break
        except PhaseViolation as exc:
            bad = getattr(exc, "m", None)
            if bad is None or bad not in good:
                raise
            fallback[bad] = True
            good.remove(bad)
    sigma0 = saddles[0].w.real if 0 in saddles \
        else min(max(problem.seed(0).real, 0.52), 0.98)

    # per-box geometry: entry/exit abscissas used by the connectors
    entry, exita = {}, {}
    for m in m_list:
        if m in fallback or m not in paths:
            sv = saddles[m].w.real if m in saddles else sigma0
            entry[m] = exita[m] = sv
        else:
            entry[m] = paths[m].sigma_minus
            exita[m] = paths[m].sigma_plus

    segments = []
    z_acc = LogComplex.zero()
    err_log = -math.inf
    n_evals = 0
    entries_by_m = {e.m: e for e in report.entries} if report else {}

    def push(seg: Segment):
        nonlocal z_acc, err_log, n_evals
        segments.append(seg)
        z_acc = z_acc.plus(seg.value)
        err_log = float(np.logaddexp(err_log, seg.err_logmag))
        n_evals += seg.n_evals

    # -- geometry constants ------------------------------------------------------
    c2 = compute_c_doubleprime(problem, sigma0=sigma0)
    lx, llx = problem.log_x, problem.loglog_x
    y1_lo, y1_hi = problem.box_offsets(-m_max)[0], \
        problem.box_offsets(m_max)[1]
    t2_off = math.exp(0.5 * c2 * (lx / llx) ** (1.0 / 6.0))
    if not (t2_off > -y1_lo):
        raise ContourBroken(
            "the mid bridge height does not clear the outer box edge "
            f"(c''={c2:.4f})")
    sigma_pr = (1.0 - 0.5 * math.sqrt(2.0) * c2
                / (lx ** (1.0 / 3.0) * llx ** (2.0 / 3.0))) \
        / (1.0 + problem.delta)
    with mp.workprec(max(sys.bits, 128)):
        t3_plus_mp = tau_mp ** 5
        t3_minus_mp = tau_mp ** mp.mpf("0.2")
    t3_plus = float(t3_plus_mp)
    t3_minus = float(t3_minus_mp)
    t2_minus = tau - t2_off
    t2_plus = tau + t2_off
    if not (0.0 < t3_minus < t2_minus):
        raise ContourBroken("the lower ordinates are out of order: "
                            f"tau^(1/5)={t3_minus:.4g} vs "
                            f"T2-={t2_minus:.4g}")
    env = _composite_envelopes(problem, c2, sigma0)
    hug = _HugCurve()
    sig_hl_minus = hug.sigma_at(t3_minus)
    sig_hl_plus = hug.sigma_at(t3_plus)
    f_t3p = integrand.frame_at(t3_plus_mp)
    frames[("t3", "+")] = f_t3p

    # -- ascending assembly ------------------------------------------------------
    # hugging contour below tau^{1/5}
    acc = _Acc()
    _integrate_hug(integrand, 0.0, t3_minus, acc, frames,
                   filon_tol=filon_tol)
    push(_segment_from_acc(
        "HL-arc(-)", "HL-arc", complex(1.0 - 1.0 / math.e, 0.0),
        complex(sig_hl_minus, t3_minus), acc,
        envelope=env["hug-"][0], envelope_alt=env["hug-"][1]))

    # bridge at tau^{1/5} over to sigma'
    acc = _Acc()
    _gl_horizontal(integrand, frames["abs"], t3_minus, sig_hl_minus,
                   sigma_pr, acc)
    push(_segment_from_acc(
        "delta(4,-)", "horizontal", complex(sig_hl_minus, t3_minus),
        complex(sigma_pr, t3_minus), acc, envelope=env["delta4-"][0],
        envelope_alt=env["delta4-"][1]))

    # vertical at sigma' up to T2-
    acc = _Acc()
    _integrate_t_span(integrand, _VerticalCurve(sigma_pr), t3_minus,
                      t2_minus, acc, frames=frames, anchor_t=tau,
                      filon_tol=filon_tol)
    push(_segment_from_acc(
        "delta(3,-)", "vertical", complex(sigma_pr, t3_minus),
        complex(sigma_pr, t2_minus), acc, envelope=env["delta3"][0]))

    # horizontal at T2- over to sigma_0
    acc = _Acc()
    _gl_horizontal(integrand, f_tau, -t2_off, sigma_pr, sigma0, acc)
    push(_segment_from_acc(
        "delta(2,-)", "horizontal", complex(sigma_pr, t2_minus),
        complex(sigma0, t2_minus), acc, envelope=env["delta2"][0]))

    # vertical at sigma_0 up to the outer box edge
    acc = _Acc()
    _gl_span(integrand, _VerticalCurve(sigma0), f_tau, -t2_off, y1_lo, acc)
    push(_segment_from_acc(
        "delta(1,-)", "vertical", complex(sigma0, t2_minus),
        complex(sigma0, tau + y1_lo), acc, envelope=env["delta1"][0]))

    # horizontal at T1- from sigma_0 to the first box entry
    acc = _Acc()
    _gl_horizontal(integrand, f_tau, y1_lo, sigma0, entry[-m_max], acc)
    lead_max = _delta0_lead_max(problem, sigma0, entry[-m_max], y1_lo)
    push(_segment_from_acc(
        "delta(0,-)", "horizontal", complex(sigma0, tau + y1_lo),
        complex(entry[-m_max], tau + y1_lo), acc,
        envelope=env["delta0"][0]))

    # boxes and connectors
    for m in m_list:
        y_lo, y_hi = problem.box_offsets(m)
        if m in fallback or m not in entries_by_m:
            acc = _box_fallback(integrand, f_tau, entry[m], y_lo, y_hi)
            push(_segment_from_acc(
                f"descent({m})", "descent", complex(entry[m], tau + y_lo),
                complex(exita[m], tau + y_hi), acc, fallback=True))
        else:
            e = entries_by_m[m]
            val = LogComplex(e.log_magnitude,
                             e.anchor + cmath.phase(e.value_rel))
            abs_log = _box_abs_bound(integrand, f_tau, paths[m]) \
                + problem.log_x
            seg = Segment(
                tag=f"descent({m})", kind="descent",
                z0=complex(entry[m], tau + y_lo),
                z1=complex(exita[m], tau + y_hi),
                value_logmag=val.logmag, value_phase=val.phase,
                abs_bound_logmag=abs_log,
                err_logmag=val.logmag + math.log(1e-3),
                n_panels=len(paths[m].offsets) - 1,
                n_evals=len(paths[m].offsets))
            push(seg)
        if m < m_max:
            # connector: vertical to the next box's lower edge, then
            # horizontal to its entry abscissa
            y_next = problem.box_offsets(m + 1)[0]
            acc = _Acc()
            _gl_span(integrand, _VerticalCurve(exita[m]), f_tau, y_hi,
                     y_next, acc)
            _gl_horizontal(integrand, f_tau, y_next, exita[m],
                           entry[m + 1], acc)
            push(_segment_from_acc(
                f"connector({m})", "connector",
                complex(exita[m], tau + y_hi),
                complex(entry[m + 1], tau + y_next), acc,
                envelope=env["connector"][0]
                + math.log(abs(y_next - y_hi)
                           + abs(entry[m + 1] - exita[m]) + 1e-300)))

    # horizontal at T1+ back to sigma_0
    acc = _Acc()
    _gl_horizontal(integrand, f_tau, y1_hi, exita[m_max], sigma0, acc)
    lead_max = max(lead_max, _delta0_lead_max(problem, exita[m_max],
                                              sigma0, y1_hi))
    push(_segment_from_acc(
        "delta(0,+)", "horizontal", complex(exita[m_max], tau + y1_hi),
        complex(sigma0, tau + y1_hi), acc, envelope=env["delta0"][0]))

    # vertical at sigma_0 up to T2+
    acc = _Acc()
    _gl_span(integrand, _VerticalCurve(sigma0), f_tau, y1_hi, t2_off, acc)
    push(_segment_from_acc(
        "delta(1,+)", "vertical", complex(sigma0, tau + y1_hi),
        complex(sigma0, t2_plus), acc, envelope=env["delta1"][0]))

    # horizontal at T2+ over to sigma'
    acc = _Acc()
    _gl_horizontal(integrand, f_tau, t2_off, sigma0, sigma_pr, acc)
    push(_segment_from_acc(
        "delta(2,+)", "horizontal", complex(sigma0, t2_plus),
        complex(sigma_pr, t2_plus), acc, envelope=env["delta2"][0]))

    # vertical at sigma' up to tau^5
    acc = _Acc()
    _integrate_t_span(integrand, _VerticalCurve(sigma_pr), t2_plus,
                      t3_plus, acc, frames=frames, anchor_t=tau,
                      filon_tol=filon_tol)
    push(_segment_from_acc(
        "delta(3,+)", "vertical", complex(sigma_pr, t2_plus),
        complex(sigma_pr, t3_plus), acc, envelope=env["delta3"][0]))

    # horizontal at tau^5 out to the hugging contour
    acc = _Acc()
    _gl_horizontal(integrand, f_t3p, 0.0, sigma_pr, sig_hl_plus, acc)
    push(_segment_from_acc(
        "delta(4,+)", "horizontal", complex(sigma_pr, t3_plus),
        complex(sig_hl_plus, t3_plus), acc, envelope=env["delta4+"][0]))

    # hugging contour above tau^5, adaptive top + integration-by-parts tail
    acc = _Acc()
    t1 = t3_plus
    rho_log = integrand.rho_log()
    residue_logmag = rho_log + 2.0 * lx - math.log(2.0)
    while True:
        t0, t1 = t1, t1 * 32.0
        _integrate_hug(integrand, t0, t1, acc, frames,
                       filon_tol=filon_tol,
                       floor_log=acc.abs_log + math.log(1e-9)
                       if acc.abs_log > -math.inf else -math.inf)
        tail_val, tail_log = _hug_tail(integrand, t1)
        if tail_log <= max(acc.abs_log + math.log(1e-4),
                           residue_logmag + math.log(1e-12)) \
                or t1 > t3_plus * 1e24:
            break
    if tail_val is None:
        raise TailTooLarge(
            "the hugging-contour tail certificate did not close above the "
            f"descent assembly (reached t={t1:.3g})", bound=math.inf,
            t_cut=t1)
    acc.add(tail_val, tail_val.logmag, tail_log, 0, 0)
    push(_segment_from_acc(
        "HL-arc(+)", "HL-arc", complex(sig_hl_plus, t3_plus),
        complex(hug.sigma_at(t1), t1), acc,
        envelope=env["hug+"][0], envelope_alt=env["hug+"][1]))

    # -- closure check ------------------------------------------------------------
    for left, right in zip(segments[:-1], segments[1:]):
        gap = abs(left.z1 - right.z0)
        scale = max(abs(left.z1), abs(right.z0), 1.0)
        if gap > 1e-9 * scale:
            raise ContourBroken(
                f"{left.tag} ends at {left.z1} but {right.tag} starts at "
                f"{right.z0}")

    # -- ledger vs the central box -------------------------------------------------
    saddle_seg = next(s for s in segments if s.tag == "descent(0)")
    saddle_log = saddle_seg.value_logmag
    dominating = tuple(
        s.tag for s in segments
        if not s.kind.startswith("descent")
        and s.value_logmag >= saddle_log)
    if strict and dominating:
        worst = max((s.value_logmag - saddle_log, s.tag)
                    for s in segments if s.tag in dominating)
        raise SegmentDominates(
            f"segment {worst[1]} exceeds the central box by "
            f"{worst[0]:.2f} in log magnitude", tag=worst[1],
            gap_log=worst[0])

    total, total_logmag, sign = _assemble_total(residue_logmag, z_acc)
    return PerronResult(
        mode="composite", x=integrand.x_float(), log_x=lx, kappa=None,
        t_cut=t1, residue_logmag=residue_logmag,
        contour_logmag=z_acc.logmag, contour_phase=z_acc.phase,
        total=total, total_logmag=total_logmag, total_sign=sign,
        tail_bound_logmag=tail_log - math.log(math.pi),
        quad_err_logmag=err_log, segments=tuple(segments),
        n_evals=n_evals, k=k, sigma0=sigma0, sigma_prime=sigma_pr,
        c_doubleprime=c2, saddle_logmag=saddle_log,
        all_below_saddle=not dominating, dominating=dominating,
        delta0_lead_max=lead_max,
        fallback_boxes=tuple(sorted(fallback)))


# ---------------------------------------------------------------------------
# Measure-side ground truth
# ---------------------------------------------------------------------------

def measure_side_integral(gm: GridMeasure, x: float) -> float:
    """int (x - u)^+ dN(u) for a binned measure: each cell's mass sits at
    its center e^{j h}, the unit atom at u = 1."""
    u = np.exp(gm.h * np.arange(gm.ncells))
    return float(np.sum(gm.cell_mass * np.clip(x - u, 0.0, None))
                 + gm.mass_at_one * (x - 1.0))
