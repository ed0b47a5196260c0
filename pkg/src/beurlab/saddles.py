"""Saddle-point laboratory for one oscillator level's resonance exponent.

The object under study is the exponent

    f(s) = (s + 1) log x  +  tau^{1 - (1+delta) s} / (2 (s - i tau)),

where (tau, delta, log x) belong to one level of a built system: the
log-integrand of that level's leading oscillator piece against the
quadratic Perron kernel.  Everything interesting happens in a horizontal
strip of height ~ 1/log(tau) around Im s = tau, which double precision
cannot even address once tau is astronomically large.  The whole module
therefore works in the recentred coordinate

    w = s - i tau,
    F(w) = f(s) - (1 + i tau) log x
         = w log x + exp((1 - (1+delta) w) log tau) / (2 w).

The level construction aligns (1+delta) tau log(tau) with 2 pi Z exactly,
so recentring introduces no phase error at all: tau^{-(1+delta) i tau} = 1
and F carries every oscillation of f faithfully.  F, F', F'' are O(1) to
O(log x)-sized near the saddles at any height, so ordinary doubles do the
bulk of the work; mpmath enters only to polish roots, to evaluate F at
them to full precision, and to reduce the single anchor phase
tau * log x modulo 2 pi.

Geometry of one branch index m: the search box B_m is

    [1/2, 1] x [tau + (2 pi m - pi/2)/c, tau + (2 pi m + pi/2)/c],
    c = (1+delta) log tau,

described here by offset ordinates y in [(2 pi m -+ pi/2)/c] and by the
box angle theta = y*c - 2 pi m in [-pi/2, pi/2].  Each box holds exactly
one simple zero of F' (certified by an argument-principle winding
integral over the box boundary), and the steepest-descent curve through
it is the level set Im F = Im F(w_m), traced as a graph sigma = X(theta).

Scale bookkeeping: f itself is an exponent, and exp(Re f) overflows a
double long before the systems get interesting.  Contribution integrals
are therefore reported relative to the saddle: the stored complex value
is the integral of exp(F - F(w_m)) g, and the true magnitude lives in a
separate log_scale = Re f(s_m) field.
"""

import cmath
import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

from mpmath import mp

from .numcore import (NonFinite, NumericError, ToleranceNotMet,
                      dist_to_multiples, find_root_bracketed, integrate_path,
                      newton_complex, polyline, reduce_mod_2pi)
from .systems import ContinuousPrimeSystem
from .zeta import ZetaEvaluator

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

class SaddleError(Exception):
    """Base class for failures of the saddle machinery."""


class PoleAtITau(SaddleError):
    """f was evaluated at its pole s = i tau (w = 0)."""


class WindingNot1(SaddleError):
    """The argument-principle count of zeros of f' in the box is not 1."""

    def __init__(self, msg, winding=None):
        super().__init__(msg)
        self.winding = winding


class NewtonFailed(SaddleError):
    """Root refinement failed even after the winding-guided subdivision."""


class PathLost(SaddleError):
    """Level-curve tracing could not continue past some box angle."""

    def __init__(self, msg, m=None, theta=None):
        super().__init__(msg)
        self.m = m
        self.theta = theta


class PhaseViolation(SaddleError):
    """A contribution's phase left the admissible window around +-pi/2."""

    def __init__(self, msg, m=None, phi=None):
        super().__init__(msg)
        self.m = m
        self.phi = phi


def _is_mp(x) -> bool:
    return isinstance(x, (mp.mpf, mp.mpc))


# ---------------------------------------------------------------------------
# The problem object: one level's exponent and its derived constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SaddleProblem:
    """Immutable description of one level's exponent f.

    Safe to share across workers: all fields are plain values.  c_m sets
    the width of the certified branch window via
    m_max = floor(c_m * (log x)^{1/3} (log log x)^{2/3}); branch indices
    beyond m_max but below (log tau)^{3/4} remain reachable for study.
    """

    sys: ContinuousPrimeSystem
    k: int = 0
    c_m: float = 0.01

    # derived floats, filled in __post_init__
    log_x: float = field(init=False)
    log_tau: float = field(init=False)
    tau_f: float = field(init=False)
    delta: float = field(init=False)
    a_k: float = field(init=False)
    coef: float = field(init=False)      # (1+delta) log tau
    big_m: int = field(init=False)       # (1+delta) tau log tau / (2 pi)

    def __post_init__(self):
        if not (0 <= self.k < self.sys.K):
            raise ValueError(f"level {self.k} outside 0..{self.sys.K - 1}")
        if not (self.c_m > 0):
            raise ValueError("c_m must be positive")
        sset = object.__setattr__
        sset(self, "log_x", float(self.sys.log_x[self.k]))
        sset(self, "log_tau", float(self.sys.log_tau[self.k]))
        sset(self, "tau_f", float(self.sys.tau[self.k]))
        sset(self, "delta", float(self.sys.delta[self.k]))
        sset(self, "a_k", float(self.sys.a[self.k]))
        with mp.workprec(self.sys.bits):
            coef = (1 + self.sys.delta[self.k]) * self.sys.log_tau[self.k]
            mval = self.sys.tau[self.k] * coef / (2 * mp.pi)
            big_m = int(mp.nint(mval))
            if abs(mval - big_m) > 1e-6:
                raise SaddleError(
                    "level is not phase-aligned: tau*(1+delta)*log tau "
                    f"sits {float(abs(mval - big_m)):.3e} away from 2 pi Z")
            sset(self, "coef", float(coef))
            sset(self, "big_m", big_m)
        # sanity: log tau and log x are tied by log tau = sqrt(lx llx / 2)
        lx = self.log_x
        tie = math.sqrt(lx * math.log(lx) / 2.0)
        if abs(self.log_tau - tie) > 1e-9 * max(1.0, self.log_tau):
            raise SaddleError("log tau does not match its defining relation "
                              f"to log x ({self.log_tau} vs {tie})")

    # -- derived ranges ------------------------------------------------------

    @property
    def loglog_x(self) -> float:
        return math.log(self.log_x)

    @property
    def m_max(self) -> int:
        return _m_max_for(self, self.c_m)

    @property
    def study_limit(self) -> float:
        """Branch indices with |m| below this are searchable at all."""
        return self.log_tau ** 0.75

    def with_c_m(self, c_m: float) -> "SaddleProblem":
        return replace(self, c_m=c_m)

    @property
    def coef_mp(self):
        with mp.workprec(self.sys.bits):
            return (1 + self.sys.delta[self.k]) * self.sys.log_tau[self.k]

    def box_offsets(self, m: int):
        """Ordinate offsets (y_lo, y_hi) of box B_m: theta in [-pi/2, pi/2]."""
        return ((TWO_PI * m - 0.5 * math.pi) / self.coef,
                (TWO_PI * m + 0.5 * math.pi) / self.coef)

    def theta_of(self, y: float, m: int) -> float:
        return y * self.coef - TWO_PI * m

    def seed(self, m: int) -> complex:
        """Asymptotic first guess for the branch-m saddle, in w."""
        lx, llx = self.log_x, self.loglog_x
        rat = math.sqrt(2.0) * math.sqrt(llx / lx)
        x0 = 1.0 - rat - math.sqrt(2.0) * (self.a_k + math.log(2.0)) \
            / math.sqrt(lx * llx)
        x0 = min(max(x0, 0.52), 0.98)
        y0 = (TWO_PI * m / self.coef) * (1.0 - (1.0 + rat) / self.coef)
        return complex(x0, y0)

    # -- the exponent in offset coordinates ----------------------------------

    def f_w(self, w):
        """F(w) = w log x + exp((1 - (1+delta) w) log tau) / (2 w)."""
        if _is_mp(w):
            w = mp.mpc(w)
            if w == 0:
                raise PoleAtITau("w = 0 is the pole")
            k = self.k
            return (w * self.sys.log_x[k]
                    + mp.exp(self.sys.log_tau[k] - self.coef_mp * w) / (2 * w))
        w = complex(w)
        if w == 0:
            raise PoleAtITau("w = 0 is the pole")
        ex = self.log_tau - self.coef * w.real
        if ex > 700.0:
            raise NonFinite("oscillator magnitude overflows double here; "
                            "evaluate with an mpmath complex")
        lev = cmath.exp(complex(ex, -self.coef * w.imag)) / (2.0 * w)
        return w * self.log_x + lev

    def f_w_prime(self, w):
        """F'(w) = log x - lev(w) * ((1+delta) log tau + 1/w)."""
        if _is_mp(w):
            w = mp.mpc(w)
            if w == 0:
                raise PoleAtITau("w = 0 is the pole")
            k = self.k
            c = self.coef_mp
            lev = mp.exp(self.sys.log_tau[k] - c * w) / (2 * w)
            return self.sys.log_x[k] - lev * (c + 1 / w)
        w = complex(w)
        if w == 0:
            raise PoleAtITau("w = 0 is the pole")
        ex = self.log_tau - self.coef * w.real
        if ex > 700.0:
            raise NonFinite("oscillator magnitude overflows double here; "
                            "evaluate with an mpmath complex")
        lev = cmath.exp(complex(ex, -self.coef * w.imag)) / (2.0 * w)
        return self.log_x - lev * (self.coef + 1.0 / w)

    def f_w_second(self, w):
        """F''(w) = lev(w) * (c^2 + 2c/w + 2/w^2),  c = (1+delta) log tau."""
        if _is_mp(w):
            w = mp.mpc(w)
            if w == 0:
                raise PoleAtITau("w = 0 is the pole")
            k = self.k
            c = self.coef_mp
            lev = mp.exp(self.sys.log_tau[k] - c * w) / (2 * w)
            return lev * (c * c + 2 * c / w + 2 / (w * w))
        w = complex(w)
        if w == 0:
            raise PoleAtITau("w = 0 is the pole")
        ex = self.log_tau - self.coef * w.real
        if ex > 700.0:
            raise NonFinite("oscillator magnitude overflows double here; "
                            "evaluate with an mpmath complex")
        c = self.coef
        lev = cmath.exp(complex(ex, -c * w.imag)) / (2.0 * w)
        return lev * (c * c + 2.0 * c / w + 2.0 / (w * w))

    # -- absolute coordinates -------------------------------------------------

    def _to_offset(self, s):
        if _is_mp(s):
            with mp.workprec(self.sys.bits):
                w = mp.mpc(s) - mp.mpc(0, self.sys.tau[self.k])
            return w, True
        return complex(s) - 1j * self.tau_f, False

    def f_eval(self, s):
        """f(s) itself.  In doubles the imaginary part carries the absolute
        phase tau*log x and is only good to its ulp; use an mpmath input
        (or f_w plus the anchor) whenever phases matter."""
        w, high = self._to_offset(s)
        if high:
            with mp.workprec(self.sys.bits):
                k = self.k
                return self.f_w(w) + (1 + mp.mpc(0, self.sys.tau[k])) \
                    * self.sys.log_x[k]
        return self.f_w(w) + complex(self.log_x, self.tau_f * self.log_x)

    def f_prime(self, s):
        w, high = self._to_offset(s)
        if high:
            with mp.workprec(self.sys.bits):
                return self.f_w_prime(w)
        return self.f_w_prime(w)

    def f_second(self, s):
        w, high = self._to_offset(s)
        if high:
            with mp.workprec(self.sys.bits):
                return self.f_w_second(w)
        return self.f_w_second(w)


def _m_max_for(problem: SaddleProblem, c_m: float) -> int:
    lx = problem.log_x
    return int(math.floor(c_m * lx ** (1.0 / 3.0)
                          * problem.loglog_x ** (2.0 / 3.0)))


def _check_m_reachable(problem: SaddleProblem, m: int):
    if abs(m) <= problem.m_max or abs(m) < problem.study_limit:
        return
    raise ValueError(
        f"branch {m} outside both the certified window (|m| <= "
        f"{problem.m_max}) and the study range (|m| < "
        f"{problem.study_limit:.2f})")


# ---------------------------------------------------------------------------
# Winding integral of F''/F' over box boundaries
# ---------------------------------------------------------------------------

def _logderiv_ratio(problem: SaddleProblem, w: complex) -> complex:
    """F''(w)/F'(w), computed through u = 1/lev so that the oscillator
    magnitude can over- or underflow harmlessly anywhere in the box."""
    c = problem.coef
    ex = c * w.real - problem.log_tau
    upper = c * c + 2.0 * c / w + 2.0 / (w * w)
    if ex > 700.0:
        # oscillator negligible: F' ~ log x, F'' ~ 0
        return 0.0j
    if ex < -700.0:
        # oscillator dominates: F''/F' -> -upper/(c + 1/w)
        return -upper / (c + 1.0 / w)
    u = 2.0 * w * cmath.exp(complex(ex, c * w.imag))
    return upper / (u * problem.log_x - (c + 1.0 / w))


def winding_number(problem: SaddleProblem, m: int = 0, *, rect=None,
                   tol: float = 1e-7) -> complex:
    """Zero count of F' inside a rectangle, by boundary quadrature of
    F''/F' / (2 pi i).  Defaults to box B_m.  Returns the raw complex
    quadrature value (real part near the integer count)."""
    if rect is None:
        y_lo, y_hi = problem.box_offsets(m)
        rect = (0.5, 1.0, y_lo, y_hi)
    x0, x1, y0, y1 = rect
    corners = [complex(x0, y0), complex(x1, y0), complex(x1, y1),
               complex(x0, y1), complex(x0, y0)]
    try:
        val, _err = integrate_path(lambda w: _logderiv_ratio(problem, w),
                                   polyline(corners), tol=tol)
    except ToleranceNotMet as exc:
        raise WindingNot1(
            "winding quadrature did not settle (zero of F' near the "
            f"boundary of {rect}?): {exc}") from exc
    return val / complex(0.0, TWO_PI)


# ---------------------------------------------------------------------------
# Saddle points
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SaddlePoint:
    """A certified simple zero of F' in box B_m.

    w is the offset root s_m - i tau in doubles, w_mp the high-precision
    version (for m = 0 its imaginary part is exactly zero, so
    Im s_0 = tau holds by representation, not approximation).
    f_val is f(s_m) as a double pair: its imaginary part carries the
    absolute phase tau log x and is only ulp-accurate; phase work goes
    through f_offset_im / phase_distance instead.
    """

    m: int
    w: complex
    w_mp: object                 # mpc at sys.bits
    bits: int
    tau: object                  # mpf, the level height
    f_val: complex               # absolute f(s_m), double precision
    f_offset_re: float           # Re F(w_m) to double accuracy (exact source)
    f_offset_im: float           # Im F(w_m) likewise
    f_second: complex            # F''(w_m) = f''(s_m)
    newton_residual: float       # |F'(w_m)|
    newton_rel: float            # |F'| / |F''| at the root
    winding: complex             # boundary quadrature value (nan if skipped)
    winding_ok: bool
    n_m: int                     # branch integer of the phase equation
    big_m: int                   # the m = 0 branch integer
    y_lo: float                  # box ordinate offsets
    y_hi: float
    theta_m: float               # box angle of the saddle
    v_m: float                   # level offset Im[log x / (c + 1/w_m)]
    iterations: int
    method: str                  # "newton" or "quadtree"

    @property
    def sigma(self) -> float:
        return self.w.real

    @property
    def s_m(self):
        """Absolute saddle location as an mpc at full precision.

        The ordinate is tau plus the stored offset; the extra working
        bits keep the sum exact (the build carries tau with guard bits,
        and an on-axis saddle has offset exactly zero)."""
        with mp.workprec(self.bits + 64):
            return mp.mpc(self.w_mp.real, self.tau + self.w_mp.imag)

    @property
    def t_lo(self) -> float:
        return self.tau_float + self.y_lo

    @property
    def t_hi(self) -> float:
        return self.tau_float + self.y_hi

    @property
    def tau_float(self) -> float:
        return float(self.tau)


def _float_newton(problem: SaddleProblem, w0: complex, max_iter: int):
    res = newton_complex(problem.f_w_prime, problem.f_w_second,
                         complex(w0), tol=1e-12, max_iter=max_iter)
    return res.root, res.iterations


def _inside_box(w: complex, y_lo: float, y_hi: float,
                margin: float = 1e-12) -> bool:
    return (0.5 + margin < w.real < 1.0 - margin
            and y_lo + margin < w.imag < y_hi - margin)


def _quadtree_center(problem: SaddleProblem, rect, depth_cap: int = 22):
    """Winding-guided subdivision: descend into the quadrant that keeps
    count 1 until the cell is small, then return its center."""
    x0, x1, y0, y1 = rect
    w_all = winding_number(problem, rect=rect)
    if abs(w_all - 1.0) > 0.05:
        raise NewtonFailed(
            f"no single zero certified in {rect}: winding {w_all:.4f}")
    for _ in range(depth_cap):
        if max(x1 - x0, y1 - y0) < 1e-3:
            break
        xm, ym = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
        quads = [(x0, xm, y0, ym), (xm, x1, y0, ym),
                 (x0, xm, ym, y1), (xm, x1, ym, y1)]
        found = None
        for q in quads:
            try:
                wq = winding_number(problem, rect=q)
            except WindingNot1:
                continue  # zero sits on this cut; try the others
            if abs(wq - 1.0) <= 0.05:
                found = q
                break
        if found is None:
            # the zero straddles the cut lines; a slightly shifted split
            # cannot miss it
            xm = x0 + 0.37 * (x1 - x0)
            ym = y0 + 0.37 * (y1 - y0)
            quads = [(x0, xm, y0, ym), (xm, x1, y0, ym),
                     (x0, xm, ym, y1), (xm, x1, ym, y1)]
            for q in quads:
                try:
                    wq = winding_number(problem, rect=q)
                except WindingNot1:
                    continue
                if abs(wq - 1.0) <= 0.05:
                    found = q
                    break
        if found is None:
            break
        x0, x1, y0, y1 = found
    return complex(0.5 * (x0 + x1), 0.5 * (y0 + y1))


def find_saddle(problem: SaddleProblem, m: int, *, check_winding: bool = True,
                seed_newton_iters: int = 60, newton_bits: int | None = None
                ) -> SaddlePoint:
    """Locate and certify the branch-m saddle.

    Order of business: argument-principle winding over the box boundary
    (must be 1), damped float Newton from the asymptotic seed, fallback
    winding-guided subdivision if that diverges or escapes the box, then
    an mpmath polish to |F'| <= 1e-30 |F''|.  The m = 0 root is refined
    on the real axis, so its ordinate offset is exactly zero.
    """
    _check_m_reachable(problem, m)
    y_lo, y_hi = problem.box_offsets(m)

    winding = complex(float("nan"), 0.0)
    winding_ok = False
    if check_winding:
        winding = winding_number(problem, m)
        if abs(winding - round(winding.real)) > 0.01:
            raise WindingNot1(
                f"box {m} winding quadrature value {winding:.6f} is not "
                "near an integer", winding=winding)
        if round(winding.real) != 1:
            raise WindingNot1(
                f"box {m} contains {round(winding.real)} zeros of F', not 1",
                winding=winding)
        winding_ok = True

    # float stage: Newton from the seed, subdivision fallback
    method = "newton"
    iters = 0
    w0 = None
    try:
        w0, iters = _float_newton(problem, problem.seed(m), seed_newton_iters)
    except NumericError:
        w0 = None
    if w0 is not None and not _inside_box(w0, y_lo, y_hi):
        w0 = None
    if w0 is None:
        method = "quadtree"
        center = _quadtree_center(problem, (0.5, 1.0, y_lo, y_hi))
        try:
            w0, iters = _float_newton(problem, center, 60)
        except NumericError as exc:
            raise NewtonFailed(
                f"box {m}: Newton failed even from the subdivision center "
                f"{center:.6f}") from exc
        if not _inside_box(w0, y_lo, y_hi):
            raise NewtonFailed(
                f"box {m}: refined root {w0:.6f} escaped the box")

    # high-precision polish; the m = 0 iteration stays on the real axis
    bits = newton_bits if newton_bits is not None else max(192,
                                                           problem.sys.bits)
    with mp.workprec(bits):
        start = mp.mpf(w0.real) if m == 0 else mp.mpc(w0)
        try:
            res = newton_complex(problem.f_w_prime, problem.f_w_second,
                                 start, tol=mp.mpf("1e-30"), max_iter=60)
        except NumericError as exc:
            raise NewtonFailed(f"box {m}: high-precision polish failed "
                               f"from {w0}") from exc
        w_mp = mp.mpc(res.root)
        wf = complex(w_mp)
        if not _inside_box(wf, y_lo, y_hi):
            raise NewtonFailed(f"box {m}: polished root {wf:.6f} left the "
                               "box interior")
        f_off = problem.f_w(w_mp)
        f2 = problem.f_w_second(w_mp)
        c = problem.coef_mp
        # branch integer of the phase equation at the root
        r_m = (mp.im(w_mp) * c - mp.arg(c + 1 / w_mp) + mp.arg(w_mp)) \
            / (2 * mp.pi)
        if abs(r_m - m) > 1e-6:
            raise SaddleError(
                f"box {m}: root solves the phase equation with branch "
                f"{float(r_m):.6f}, expected {m}")
        v_m = float(mp.im(problem.sys.log_x[problem.k] / (c + 1 / w_mp)))
        f_abs = complex(problem.log_x + float(mp.re(f_off)),
                        problem.tau_f * problem.log_x + float(mp.im(f_off)))

    return SaddlePoint(
        m=m, w=wf, w_mp=w_mp, bits=bits, tau=problem.sys.tau[problem.k],
        f_val=f_abs, f_offset_re=float(mp.re(f_off)),
        f_offset_im=float(mp.im(f_off)), f_second=complex(f2),
        newton_residual=res.residual,
        newton_rel=res.residual / res.dfscale if res.dfscale else math.inf,
        winding=winding, winding_ok=winding_ok, n_m=problem.big_m + m,
        big_m=problem.big_m, y_lo=y_lo, y_hi=y_hi,
        theta_m=problem.theta_of(wf.imag, m) if m != 0 else 0.0,
        v_m=v_m, iterations=iters + res.iterations, method=method)


def saddle_sweep(problem: SaddleProblem, m_values=None, *, workers: int = 0
                 ) -> dict:
    """find_saddle over a set of branches; dict m -> SaddlePoint.

    workers > 1 runs the per-branch searches in separate processes (the
    problem is immutable and pickles, and each branch is independent).
    """
    if m_values is None:
        m_values = range(-problem.m_max, problem.m_max + 1)
    m_values = list(m_values)
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            found = pool.map(_sweep_one, [(problem, m) for m in m_values])
            return dict(found)
    return {m: find_saddle(problem, m) for m in m_values}


def _sweep_one(args):
    problem, m = args
    return m, find_saddle(problem, m)


# ---------------------------------------------------------------------------
# Steepest-descent paths: the level set Im F = Im F(w_m)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DescentPath:
    """One traced steepest-descent curve through a saddle.

    samples hold (theta, sigma, t) rows with t = tau + y in doubles (at
    astronomical heights t is ulp-limited; offsets keeps the exact
    (theta, sigma, y) triples that all further computation uses).
    Diagnostics are recorded, not enforced: imf_ok / re_ok / tangent_ok
    say whether the level was held, whether Re F fell strictly away from
    the saddle, and whether the tangent stayed within pi/5 of vertical.
    The tangent margin genuinely fails on small desk systems (it decays
    like 1/log tau), hence a flag rather than an exception.
    """

    m: int
    theta_m: float
    level_im: float              # Im F(w_m), the tracked level
    v_m: float
    samples: tuple               # (theta, sigma, t) rows
    offsets: tuple               # (theta, sigma, y) rows
    sigma_minus: float           # abscissa at theta = -pi/2
    sigma_plus: float            # abscissa at theta = +pi/2
    eta_used: float
    eta_halvings: int
    eps_at_eta: float            # quadratic-model defect at r = eta/log tau
    step_halvings: int
    imf_drift_max: float
    imf_tol: float               # the contract tolerance it is judged by
    imf_ok: bool
    re_violations: int
    re_ok: bool
    tangent_max_dev: float       # worst |angle(tangent) -+ pi/2|
    tangent_ok: bool

    @property
    def n_samples(self) -> int:
        return len(self.offsets)


def _unit_tangent(problem: SaddleProblem, w: complex, sense: float) -> complex:
    """Unit tangent of the level curve, oriented with sign(Im) = sense."""
    d = -problem.f_w_prime(w).conjugate()
    d /= abs(d)
    if d.imag * sense < 0:
        d = -d
    return d


def _near_step(problem, w_prev, tangent, y_target, level, tol):
    """Advance along the curve to ordinate ~ y_target by a tangent
    predictor and Newton correction in the fixed normal direction."""
    if abs(tangent.imag) < 0.1:
        return None
    w = w_prev + ((y_target - w_prev.imag) / tangent.imag) * tangent
    nrm = 1j * tangent
    for _ in range(30):
        r = problem.f_w(w).imag - level
        if abs(r) <= tol:
            return w
        d = (problem.f_w_prime(w) * nrm).imag
        if d == 0.0 or not math.isfinite(d):
            return None
        w -= (r / d) * nrm
    return w if abs(problem.f_w(w).imag - level) <= tol else None


def _far_step(problem, x_pred, y, level, tol):
    """Solve Im F(x + iy) = level for x near the prediction: expanding
    window, sign-change scan, bracketed root, Newton polish."""
    def h(x):
        return problem.f_w(complex(x, y)).imag - level

    xmin, xmax = 0.5 + 1e-9, 1.0 - 1e-9
    width = 0.004
    while True:
        lo, hi = max(x_pred - width, xmin), min(x_pred + width, xmax)
        if hi > lo:
            root = _nearest_sign_change(h, lo, hi, x_pred)
            if root is not None:
                x = root
                for _ in range(3):
                    d = problem.f_w_prime(complex(x, y)).imag
                    if d == 0.0 or not math.isfinite(d):
                        break
                    x -= h(x) / d
                if abs(h(x)) <= tol and xmin <= x <= xmax:
                    return complex(x, y)
                return None
        if lo <= xmin and hi >= xmax:
            return None
        width *= 2.0


def _nearest_sign_change(h, lo, hi, x_pred, pieces: int = 8):
    """Scan [lo, hi] in pieces, root-solve the sign-change cell whose
    center lies nearest x_pred (several cells can bracket: the level
    curve's other branch may cut the same ordinate)."""
    xs = [lo + (hi - lo) * i / pieces for i in range(pieces + 1)]
    vals = [h(x) for x in xs]
    best = None
    for i in range(pieces):
        if vals[i] == 0.0:
            return xs[i]
        if (vals[i] > 0) != (vals[i + 1] > 0):
            center = 0.5 * (xs[i] + xs[i + 1])
            if best is None or abs(center - x_pred) < abs(best[0] - x_pred):
                best = (center, xs[i], xs[i + 1])
    if best is None:
        return None
    return find_root_bracketed(h, best[1], best[2], tol=1e-13)


def _quad_eps(problem: SaddleProblem, w0: complex, f0: complex,
              f2: complex, r: float, n_dir: int = 8) -> float:
    """Relative defect of the quadratic model at radius r around w0."""
    worst = 0.0
    half = 0.5 * f2
    scale = 0.5 * abs(f2) * r * r
    for j in range(n_dir):
        d = cmath.exp(2j * math.pi * j / n_dir) * r
        err = abs(problem.f_w(w0 + d) - f0 - half * d * d) / scale
        worst = max(worst, err)
    return worst


def trace_descent(problem: SaddleProblem, saddle, *, n_theta: int = 400,
                  eta: float = 0.1, validate_eta: bool = True,
                  max_halvings: int = 10) -> DescentPath:
    """Trace the branch's steepest-descent curve across its box.

    The curve is the level set Im F = Im F(w_m), swept in the box angle
    theta over [-pi/2, pi/2] on a uniform grid of n_theta steps (extra
    points are inserted by halving whenever a step fails to hold the
    level).  Within eta/2 of the saddle's own angle the curve is advanced
    by tangent continuation with Newton correction along the frozen
    normal (the level set crosses itself at the saddle, so a plain
    ordinate solve would be ambiguous there); elsewhere each ordinate is
    solved directly by a bracketed search started at the continuation
    prediction.  eta is certified against the quadratic model and halved
    until the model defect at radius eta/log tau is below 0.05.
    """
    if isinstance(saddle, int):
        saddle = find_saddle(problem, saddle)
    m = saddle.m
    w_m = saddle.w
    level = saddle.f_offset_im
    f0 = complex(saddle.f_offset_re, saddle.f_offset_im)
    f2 = saddle.f_second
    theta_m = saddle.theta_m

    # certify the near-saddle switch radius
    eta_used, eta_halvings = eta, 0
    eps = _quad_eps(problem, w_m, f0, f2, eta_used / problem.log_tau)
    while validate_eta and eps >= 0.05 and eta_halvings < 8:
        eta_used *= 0.5
        eta_halvings += 1
        eps = _quad_eps(problem, w_m, f0, f2, eta_used / problem.log_tau)

    tol = 1e-10 * max(1.0, abs(level)) + 1e-12
    grid = [-0.5 * math.pi + math.pi * i / n_theta for i in range(n_theta + 1)]
    upper = [th for th in grid if th > theta_m + 1e-15]
    lower = [th for th in grid if th < theta_m - 1e-15]
    lower.reverse()

    phi2 = cmath.phase(f2)
    d_up = cmath.exp(1j * (0.5 * math.pi - 0.5 * phi2))   # Im > 0 always

    up_pts, h_up = _trace_side(problem, m, w_m, theta_m, level, upper,
                               d_up, +1.0, eta_used, tol, max_halvings)
    dn_pts, h_dn = _trace_side(problem, m, w_m, theta_m, level, lower,
                               -d_up, -1.0, eta_used, tol, max_halvings)

    dn_pts.reverse()
    pts = dn_pts + [(theta_m, w_m)] + up_pts
    saddle_idx = len(dn_pts)

    # ---- diagnostics over the final sampling --------------------------------
    drift = 0.0
    re_vals = []
    tan_worst = 0.0
    for i, (th, w) in enumerate(pts):
        fw = problem.f_w(w)
        re_vals.append(fw.real)
        drift = max(drift, abs(fw.imag - level))
        if i != saddle_idx:
            v = _unit_tangent(problem, w, +1.0)
            tan_worst = max(tan_worst, abs(cmath.phase(v / 1j)))
    re_viol = 0
    for i in range(saddle_idx, len(pts) - 1):
        if not re_vals[i + 1] < re_vals[i]:
            re_viol += 1
    for i in range(saddle_idx, 0, -1):
        if not re_vals[i - 1] < re_vals[i]:
            re_viol += 1
    # the contract judges the level drift against the absolute exponent
    im_f_abs = abs(problem.tau_f * problem.log_x + level)
    imf_tol = 1e-8 * im_f_abs + 1e-12

    offsets = tuple((th, w.real, w.imag) for th, w in pts)
    samples = tuple((th, w.real, problem.tau_f + w.imag) for th, w in pts)
    return DescentPath(
        m=m, theta_m=theta_m, level_im=level, v_m=saddle.v_m,
        samples=samples, offsets=offsets,
        sigma_minus=offsets[0][1], sigma_plus=offsets[-1][1],
        eta_used=eta_used, eta_halvings=eta_halvings, eps_at_eta=eps,
        step_halvings=h_up + h_dn, imf_drift_max=drift, imf_tol=imf_tol,
        imf_ok=drift <= imf_tol, re_violations=re_viol, re_ok=re_viol == 0,
        tangent_max_dev=tan_worst,
        tangent_ok=tan_worst <= math.pi / 5.0 + 1e-9)


def _trace_side(problem, m, w_start, theta_start, level, thetas, d_start,
                sense, eta, tol, max_halvings):
    """March one half of the curve away from the saddle.  Returns the
    accepted (theta, w) list in march order plus the halving count."""
    pts = []
    w_prev, th_prev = w_start, theta_start
    w_prev2 = None
    tangent = d_start
    coef = problem.coef
    halvings = 0
    stack = [(th, 0) for th in reversed(thetas)]
    while stack:
        th, depth = stack.pop()
        y_t = (TWO_PI * m + th) / coef
        if abs(th - theta_start) <= 0.5 * eta:
            w_new = _near_step(problem, w_prev, tangent, y_t, level, tol)
        else:
            if w_prev2 is not None and w_prev.imag != w_prev2.imag:
                slope = (w_prev.real - w_prev2.real) \
                    / (w_prev.imag - w_prev2.imag)
            elif abs(tangent.imag) > 0.1:
                slope = tangent.real / tangent.imag
            else:
                slope = 0.0
            x_pred = w_prev.real + slope * (y_t - w_prev.imag)
            x_pred = min(max(x_pred, 0.5 + 1e-9), 1.0 - 1e-9)
            w_new = _far_step(problem, x_pred, y_t, level, tol)
        if w_new is None:
            if depth >= max_halvings:
                raise PathLost(
                    f"branch {m}: could not hold the level past box angle "
                    f"{th:.4f}", m=m, theta=th)
            halvings += 1
            stack.append((th, depth))
            stack.append((0.5 * (th_prev + th), depth + 1))
            continue
        th_actual = problem.theta_of(w_new.imag, m)
        pts.append((th_actual, w_new))
        w_prev2, w_prev, th_prev = w_prev, w_new, th_actual
        tangent = _unit_tangent(problem, w_new, sense)
    return pts, halvings


# ---------------------------------------------------------------------------
# Phase accounting: Im f(s_m) against the level's parity class
# ---------------------------------------------------------------------------

def phase_distance(problem: SaddleProblem, saddle: SaddlePoint) -> float:
    """Distance of Im f(s_m) from 2 pi Z (even level) or pi + 2 pi Z (odd).

    Im f(s_m) = tau log x + Im F(w_m); the huge anchor term is reduced
    mod 2 pi at the system's own precision, where the alignment of
    tau log x near the parity class is exact by construction.
    """
    sys_ = problem.sys
    k = problem.k
    with mp.workprec(sys_.bits + 16):
        anchor, _err = reduce_mod_2pi(sys_.tau[k] * sys_.log_x[k],
                                      bits=sys_.bits)
        total = anchor + mp.im(problem.f_w(saddle.w_mp))
        target = 0.0 if sys_.parity(k) == "even" else mp.pi
        return float(dist_to_multiples(total % (2 * mp.pi), target))


@dataclass(frozen=True)
class PhaseEntry:
    m: int
    dist: float
    ok: bool


@dataclass(frozen=True)
class PhaseReport:
    k: int
    parity: str
    c_m_start: float
    c_m_used: float
    shrinks: int
    m_max: int
    entries: tuple
    max_dist: float
    edge_dist: float
    ok: bool                     # every distance below pi/8
    edge_ok: bool                # edge distance below pi/16


def phase_report(problem: SaddleProblem, m_values=None, *,
                 auto_shrink: bool = True, saddles: dict | None = None
                 ) -> PhaseReport:
    """Phase distances of Im f(s_m) over the branch window.

    With m_values = None the window is the certified |m| <= m_max range;
    if the edge distance exceeds pi/16 the window constant c_m is halved
    and the sweep repeated (the error budget only covers windows whose
    edge stays under pi/16).  Reports; never raises on a bad phase.
    """
    threshold = math.pi / 8.0
    edge_threshold = math.pi / 16.0
    cache = dict(saddles) if saddles else {}

    def dist_of(m):
        if m not in cache:
            cache[m] = find_saddle(problem, m)
        return phase_distance(problem, cache[m])

    if m_values is not None:
        ms = sorted(set(int(m) for m in m_values))
        c_used, shrinks = problem.c_m, 0
        m_edge = max(abs(m) for m in ms) if ms else 0
    else:
        c_used, shrinks = problem.c_m, 0
        while True:
            m_edge = _m_max_for(problem, c_used)
            ms = list(range(-m_edge, m_edge + 1))
            if not auto_shrink or m_edge == 0:
                break
            edge = max(dist_of(m_edge), dist_of(-m_edge))
            if edge <= edge_threshold:
                break
            c_used *= 0.5
            shrinks += 1

    entries = tuple(PhaseEntry(m=m, dist=dist_of(m),
                               ok=dist_of(m) < threshold) for m in ms)
    dists = [e.dist for e in entries]
    edge_dists = [e.dist for e in entries if abs(e.m) == m_edge] or [0.0]
    return PhaseReport(
        k=problem.k, parity=problem.sys.parity(problem.k),
        c_m_start=problem.c_m, c_m_used=c_used, shrinks=shrinks,
        m_max=m_edge, entries=entries,
        max_dist=max(dists) if dists else 0.0,
        edge_dist=max(edge_dists),
        ok=all(e.ok for e in entries),
        edge_ok=max(edge_dists) <= edge_threshold)


# ---------------------------------------------------------------------------
# The contribution integral over each descent path
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContributionEntry:
    m: int
    value_rel: complex           # integral of e^{F - F(w_m)} g over the path
    log_scale: float             # Re f(s_m): true magnitude = e^{log_scale}
    anchor: float                # Im f(s_m) mod 2 pi
    phi: float                   # phase defect from +-pi/2 after parity
    log_magnitude: float         # log |contribution| = log_scale + log |rel|
    im_sign: int                 # sign of Im(e^{i anchor} value_rel)
    im_sign_ok: bool


@dataclass(frozen=True)
class ContributionReport:
    """Saddle contributions, kept at the m = 0 saddle's scale.

    Iterating the report yields the (sign, lower_bound, value) triple;
    at heights where e^{log_scale} overflows a double, lower_bound is
    inf and value None, and the log/relative fields carry the result.
    """

    k: int
    sign: int                    # (-1)^(k+1)
    entries: tuple
    sigma_prime_sup: float       # sup |Im Sigma'| over all path samples
    sigma_prime_ok: bool         # below pi/16
    value_rel: complex           # sum over m, referenced to m=0's scale
    log_scale: float             # Re f(s_0)
    anchor: float                # Im f(s_0) mod 2 pi (the reference phase)
    lower_bound_rel: float | None
    log_lower_bound: float | None
    lower_bound_ok: bool
    laplace_rel: float | None    # sqrt(2 pi/|f''|) |g(s_0)|
    laplace_ratio: float | None
    laplace_ok: bool
    gauss_const: float | None    # arc integral * sqrt(log x log tau)

    @property
    def lower_bound(self) -> float:
        if self.log_lower_bound is None:
            return 0.0
        if self.log_lower_bound > 700.0:
            return math.inf
        return math.exp(self.log_lower_bound)

    @property
    def value(self):
        if abs(self.value_rel) == 0.0:
            return 0j
        ln = self.log_scale + math.log(abs(self.value_rel))
        if ln > 700.0:
            return None
        return cmath.exp(complex(ln, self.anchor + cmath.phase(self.value_rel)))

    def __iter__(self):
        return iter((self.sign, self.lower_bound, self.value))


def _wrap_pi(x: float) -> float:
    return (x + math.pi) % TWO_PI - math.pi


def saddle_contribution(problem: SaddleProblem, m_set=(0,), *,
                        saddles: dict | None = None,
                        paths: dict | None = None,
                        evaluator: ZetaEvaluator | None = None,
                        n_theta: int = 400) -> ContributionReport:
    """Integrate e^f g over the traced descent paths of the given branches.

    g is the slowly-varying remainder: exp of the oscillator sum with
    this level's leading piece removed, over (s-1)(s+1).  Each branch's
    integral is computed relative to its saddle (value_rel, log_scale);
    phases are anchored by the high-precision reduction of Im f(s_m).
    Checks performed here: the phase defect phi_m of each contribution
    from the parity-expected +-pi/2 axis must stay below 2 pi/5
    (PhaseViolation otherwise); the imaginary-part sign must equal
    (-1)^(k+1); branch 0 gets the explicit lower bound
    cos(2 pi/5) e^{Re f(s_0)} / tau^2 * (arc integral of e^{Re delta F})
    and a Gaussian cross-check within a factor 2.
    """
    sys_ = problem.sys
    k = problem.k
    if 2.0 * problem.log_tau > 600.0:
        raise NonFinite("1/tau^2 underflows a double at this level; the "
                        "relative-value bookkeeping stops at level ~3")
    if evaluator is None:
        evaluator = ZetaEvaluator(sys_)
    m_list = sorted(set(int(m) for m in m_set))
    saddles = dict(saddles) if saddles else {}
    paths = dict(paths) if paths else {}
    for m in m_list:
        if m not in saddles:
            saddles[m] = find_saddle(problem, m)
        if m not in paths:
            paths[m] = trace_descent(problem, saddles[m], n_theta=n_theta)

    # double-precision ordinates t = tau + y are only usable when their
    # ulp cannot move the phases; otherwise evaluate g at mpc points
    use_mp = problem.tau_f * 2.0 ** -52 * problem.coef > 1e-9
    expected = -1 if k % 2 == 0 else 1

    with mp.workprec(sys_.bits + 16):
        anchor_tau, _ = reduce_mod_2pi(sys_.tau[k] * sys_.log_x[k],
                                       bits=sys_.bits)

    entries = []
    sup_im = 0.0
    ref_scale = None
    ref_anchor = None
    total = 0j
    lb_rel = log_lb = lap_rel = lap_ratio = gauss_const = None
    lb_ok = lap_ok = True
    for m in m_list:
        sp, path = saddles[m], paths[m]
        f0 = complex(sp.f_offset_re, sp.f_offset_im)
        with mp.workprec(sys_.bits + 16):
            anch = float((anchor_tau + mp.im(problem.f_w(sp.w_mp)))
                         % (2 * mp.pi))
        log_scale = problem.log_x + sp.f_offset_re

        ws, hs, gs = [], [], []
        for th, x, y in path.offsets:
            w = complex(x, y)
            if use_mp:
                with mp.workprec(sys_.bits):
                    s = mp.mpc(x, sys_.tau[k] + y)
                    osc = evaluator.oscillator_sum(s, drop_level=k,
                                                   drop="lead")
                    g = complex(mp.exp(osc) / ((s - 1) * (s + 1)))
                    osc_im = float(mp.im(osc))
            else:
                s = complex(x, problem.tau_f + y)
                osc = evaluator.oscillator_sum(s, drop_level=k, drop="lead")
                g = cmath.exp(osc) / ((s - 1.0) * (s + 1.0))
                osc_im = osc.imag
            sup_im = max(sup_im, abs(osc_im))
            ws.append(w)
            hs.append(cmath.exp(problem.f_w(w) - f0) * g)
            gs.append(g)

        val = 0j
        for i in range(len(ws) - 1):
            val += 0.5 * (hs[i] + hs[i + 1]) * (ws[i + 1] - ws[i])

        phi = _wrap_pi(anch + cmath.phase(val) - 0.5 * math.pi
                       - (k + 1) * math.pi)
        rot = cmath.exp(1j * anch) * val
        sgn = 1 if rot.imag > 0 else -1
        entries.append(ContributionEntry(
            m=m, value_rel=val, log_scale=log_scale, anchor=anch, phi=phi,
            log_magnitude=log_scale + math.log(abs(val)),
            im_sign=sgn, im_sign_ok=sgn == expected))
        if abs(phi) >= 0.4 * math.pi:
            raise PhaseViolation(
                f"branch {m}: contribution phase defect {phi:.4f} outside "
                f"(-2 pi/5, 2 pi/5)", m=m, phi=phi)

        if m == 0:
            ref_scale, ref_anchor = log_scale, anch
            # lower bound: cos(2 pi/5)/tau^2 times the arc integral of
            # the relative magnitude
            arc = 0.0
            for i in range(len(ws) - 1):
                e0 = math.exp(min(problem.f_w(ws[i]).real - f0.real, 0.0))
                e1 = math.exp(min(problem.f_w(ws[i + 1]).real - f0.real, 0.0))
                arc += 0.5 * (e0 + e1) * abs(ws[i + 1] - ws[i])
            lb_rel = math.cos(0.4 * math.pi) * arc / problem.tau_f ** 2
            log_lb = log_scale + math.log(lb_rel)
            lb_ok = abs(val) >= lb_rel
            i0 = min(range(len(ws)),
                     key=lambda i: abs(path.offsets[i][0] - sp.theta_m))
            g0 = gs[i0]
            lap_rel = math.sqrt(TWO_PI / abs(sp.f_second)) * abs(g0)
            lap_ratio = abs(val) / lap_rel
            lap_ok = 0.5 <= lap_ratio <= 2.0
            gauss_const = arc * math.sqrt(problem.log_x * problem.log_tau)

    if ref_scale is None:   # no branch 0 in the set: reference the first
        ref_scale = entries[0].log_scale
        ref_anchor = entries[0].anchor
        lb_ok = lap_ok = True
    for e in entries:
        total += e.value_rel * cmath.exp(complex(e.log_scale - ref_scale,
                                                 e.anchor - ref_anchor))

    return ContributionReport(
        k=k, sign=expected, entries=tuple(entries),
        sigma_prime_sup=sup_im, sigma_prime_ok=sup_im < math.pi / 16.0,
        value_rel=total, log_scale=ref_scale, anchor=ref_anchor,
        lower_bound_rel=lb_rel, log_lower_bound=log_lb, lower_bound_ok=lb_ok,
        laplace_rel=lap_rel, laplace_ratio=lap_ratio, laplace_ok=lap_ok,
        gauss_const=gauss_const)


# ---------------------------------------------------------------------------
# Model diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadraticModelFit:
    """Measured defect of F against its quadratic model around a saddle."""

    m: int
    radii: tuple
    eps: tuple                   # defect at each radius
    slope: float                 # d log eps / d log r  (should be ~ 1)
    c_values: tuple              # eps / (r log tau)
    c_max: float


def quadratic_model_fit(problem: SaddleProblem, saddle: SaddlePoint,
                        radii=None, n_dir: int = 16) -> QuadraticModelFit:
    """Sample the quadratic-model defect eps(r) on circles around the
    saddle and fit its growth; linearity in r with a modest constant is
    what licenses the near-saddle continuation zone."""
    if radii is None:
        radii = tuple(0.0005 * 2 ** j for j in range(6))
    f0 = complex(saddle.f_offset_re, saddle.f_offset_im)
    eps = tuple(_quad_eps(problem, saddle.w, f0, saddle.f_second, r, n_dir)
                for r in radii)
    logs_r = [math.log(r) for r in radii]
    logs_e = [math.log(e) for e in eps]
    n = len(radii)
    mean_r = sum(logs_r) / n
    mean_e = sum(logs_e) / n
    num = sum((lr - mean_r) * (le - mean_e) for lr, le in zip(logs_r, logs_e))
    den = sum((lr - mean_r) ** 2 for lr in logs_r)
    slope = num / den if den else float("nan")
    c_vals = tuple(e / (r * problem.log_tau) for r, e in zip(radii, eps))
    return QuadraticModelFit(m=saddle.m, radii=tuple(radii), eps=eps,
                             slope=slope, c_values=c_vals,
                             c_max=max(c_vals))


def theta_cot_max(n: int = 20001) -> float:
    """max |1/theta - cot theta| over [-pi/2, pi/2] (sampled); the bound
    2/pi on this quantity feeds the tangent-angle control."""
    worst = 0.0
    for i in range(n + 1):
        th = -0.5 * math.pi + math.pi * i / n
        if abs(th) < 1e-4:
            val = abs(th / 3.0 + th ** 3 / 45.0)
        else:
            val = abs(1.0 / th - math.cos(th) / math.sin(th))
        worst = max(worst, val)
    return worst


def level_offset_constant(problem: SaddleProblem, saddles) -> float:
    """C in |v_m| <= C log x (log tau)^{-9/4} over the given saddles."""
    worst = 0.0
    for sp in (saddles.values() if isinstance(saddles, dict) else saddles):
        if sp.m == 0:
            continue
        worst = max(worst, abs(sp.v_m) * problem.log_tau ** 2.25
                    / problem.log_x)
    return worst


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def export_descent_csv(problem: SaddleProblem, paths, filepath: str) -> None:
    """Dump traced paths as CSV rows m, theta, sigma, t, re_f, im_f.

    t and im_f are absolute (t = tau + y, im_f = tau log x + Im F): at
    astronomical heights both are ulp-limited in doubles; offsets on the
    DescentPath objects keep full accuracy.
    """
    items = paths.items() if isinstance(paths, dict) else \
        ((p.m, p) for p in paths)
    with open(filepath, "w", newline="") as fh:
        wtr = csv.writer(fh)
        wtr.writerow(["m", "theta", "sigma", "t", "re_f", "im_f"])
        for m, path in sorted(items):
            for th, x, y in path.offsets:
                fw = problem.f_w(complex(x, y))
                wtr.writerow([m, repr(th), repr(x),
                              repr(problem.tau_f + y),
                              repr(problem.log_x + fw.real),
                              repr(problem.tau_f * problem.log_x + fw.imag)])
