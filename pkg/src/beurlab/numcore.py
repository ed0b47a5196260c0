# beurlab/numcore.py
#
# Shared numeric substrate for the rest of the package: dual-precision
# (machine floats + mpmath) helpers, bracketed root finding, damped complex
# Newton iteration, exact reduction mod 2*pi at controlled precision, and
# adaptive Gauss-Kronrod quadrature along paths in the complex plane.
#
# Everything here is a pure function (or an immutable value type); no module
# state is mutated apart from mpmath's thread-local working precision, which
# is always restored via context managers.

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import mpmath as mp

# ---------------------------------------------------------------------------
# Precision plumbing
# ---------------------------------------------------------------------------

DEFAULT_BITS = 256

# Unit roundoff of the fast (double precision) mode.
EPS_MACHINE = 2.0 ** -53


class NumericError(Exception):
    """Base class for numerical failures in this package."""


class NoSignChange(NumericError):
    pass


class NonFinite(NumericError):
    pass


class NoConvergence(NumericError):
    def __init__(self, msg, last=None, residual=None):
        super().__init__(msg)
        self.last = last
        self.residual = residual


class DerivativeVanished(NumericError):
    pass


class InsufficientPrecision(NumericError):
    pass


class ToleranceNotMet(NumericError):
    """Quadrature failed its tolerance; carries the best value and error."""

    def __init__(self, msg, value, error):
        super().__init__(msg)
        self.value = value
        self.error = error


@dataclass(frozen=True)
class PrecisionContext:
    """Precision configuration: `bits` for the mpmath mode, machine unit
    roundoff for the fast mode.  Phase-critical code paths require
    bits >= 128; builders auto-size beyond that as needed."""

    bits: int = DEFAULT_BITS
    eps_machine: float = EPS_MACHINE

    def __post_init__(self):
        if self.bits < 53:
            raise ValueError("PrecisionContext needs at least 53 bits")

    def workprec(self):
        """Context manager setting mpmath working precision to self.bits."""
        return mp.workprec(self.bits)

    def with_bits(self, bits: int) -> "PrecisionContext":
        return PrecisionContext(bits=bits, eps_machine=self.eps_machine)

    def mpf(self, x) -> mp.mpf:
        with mp.workprec(self.bits):
            return mp.mpf(x)

    def mpc(self, re, im=0) -> mp.mpc:
        with mp.workprec(self.bits):
            return mp.mpc(re, im)


def is_finite_number(x) -> bool:
    try:
        return bool(mp.isfinite(x))
    except (TypeError, ValueError):
        return False


# ---------------------------------------------------------------------------
# Root finding
# ---------------------------------------------------------------------------

def find_root_bracketed(f: Callable, lo, hi, tol, max_iter: int = 500):
    """Root of f on [lo, hi] given f(lo)*f(hi) <= 0.

    Bisection down to ~10 safe digits of bracket width, then safeguarded
    secant polish; the final bracket width is <= tol.  Works with floats or
    mpmath mpf endpoints (all arithmetic is generic).  Deterministic.
    """
    if not (tol > 0):
        raise ValueError("tol must be positive")
    if not (hi > lo):
        raise ValueError("need lo < hi")
    flo, fhi = f(lo), f(hi)
    if not (is_finite_number(flo) and is_finite_number(fhi)):
        raise NonFinite("f non-finite at a bracket endpoint")
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if (flo > 0) == (fhi > 0):
        raise NoSignChange(f"f({lo})={flo} and f({hi})={fhi} have equal sign")

    # Bisection phase: shrink the bracket to ~1e-10 relative width.
    coarse = 1e-10
    width = hi - lo
    for _ in range(max_iter):
        if width <= tol or width <= coarse * max(abs(lo), abs(hi), 1):
            break
        mid = (lo + hi) / 2
        fmid = f(mid)
        if not is_finite_number(fmid):
            raise NonFinite(f"f non-finite at {mid}")
        if fmid == 0:
            return mid
        if (fmid > 0) == (fhi > 0):
            hi, fhi = mid, fmid
        else:
            lo, flo = mid, fmid
        width = hi - lo

    # Secant polish, safeguarded: fall back to bisection whenever the secant
    # step leaves the bracket or fails to shrink it.
    a, fa, b, fb = lo, flo, hi, fhi
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fb != fa:
            c = b - fb * (b - a) / (fb - fa)
        else:
            c = (a + b) / 2
        if not (a < c < b):
            c = (a + b) / 2
        fc = f(c)
        if not is_finite_number(fc):
            raise NonFinite(f"f non-finite at {c}")
        if fc == 0:
            return c
        if (fc > 0) == (fb > 0):
            b, fb = c, fc
        else:
            a, fa = c, fc
    return (a + b) / 2


@dataclass(frozen=True)
class NewtonResult:
    root: complex
    residual: float  # |f(root)|
    dfscale: float   # |df(root)|
    iterations: int


def newton_complex(f: Callable, df: Callable, s0, tol, max_iter: int = 80) -> NewtonResult:
    """Newton iteration for f(s) = 0 in the complex plane.

    Succeeds when |f(s)| <= tol * |df(s)| (i.e. the Newton step is below
    tol).  Raises NoConvergence after max_iter, DerivativeVanished when the
    derivative underflows.  Mild step damping (halving up to 4 times) is
    applied when a full step would increase |f|.
    """
    if not (tol > 0):
        raise ValueError("tol must be positive")
    s = s0
    fs = f(s)
    if not is_finite_number(fs):
        raise NonFinite("f non-finite at the initial point")
    for it in range(1, max_iter + 1):
        d = df(s)
        absd = abs(d)
        if not is_finite_number(d) or absd == 0 or absd < 1e-280:
            raise DerivativeVanished(f"|df| = {absd} at iterate {it}")
        if abs(fs) <= tol * absd:
            return NewtonResult(root=s, residual=float(abs(fs)),
                                dfscale=float(absd), iterations=it - 1)
        step = fs / d
        s_new = s - step
        f_new = f(s_new)
        # Damping: halve the step while it makes things worse (or blows up).
        halvings = 0
        while halvings < 8 and (not is_finite_number(f_new)
                                or abs(f_new) > abs(fs)):
            step = step / 2
            s_new = s - step
            f_new = f(s_new)
            halvings += 1
        s, fs = s_new, f_new
        if not is_finite_number(fs):
            raise NonFinite(f"f non-finite at iterate {it}")
    d = df(s)
    if abs(fs) <= tol * abs(d):
        return NewtonResult(root=s, residual=float(abs(fs)),
                            dfscale=float(abs(d)), iterations=max_iter)
    raise NoConvergence(f"no convergence in {max_iter} iterations",
                        last=s, residual=float(abs(fs)))


# ---------------------------------------------------------------------------
# Reduction mod 2*pi
# ---------------------------------------------------------------------------

def reduce_mod_2pi(x, bits: int | None = None):
    """Reduce a (high-precision) real x into [0, 2*pi).

    Returns (r, err) where r is an mpf with x - r in 2*pi*Z exactly at the
    working precision, and err bounds the rounding error of the reduction.
    Requires bits >= log2|x| + 64 (InsufficientPrecision otherwise): with
    fewer bits the residual of a number of that magnitude mod 2*pi is
    meaningless.
    """
    if bits is None:
        bits = mp.mp.prec
    if not is_finite_number(x):
        raise NonFinite("cannot reduce a non-finite value")
    mag = abs(x)
    log2mag = 0.0 if mag == 0 else float(mp.log(mag, 2))
    if bits < log2mag + 64:
        raise InsufficientPrecision(
            f"{bits} bits cannot resolve magnitude 2^{log2mag:.1f} mod 2*pi; "
            f"need >= {math.ceil(log2mag) + 64}")
    with mp.workprec(bits + 16):
        xx = mp.mpf(x)
        twopi = 2 * mp.pi
        n = mp.floor(xx / twopi)
        r = xx - n * twopi
        # Guard against boundary rounding.
        if r < 0:
            r += twopi
        if r >= twopi:
            r -= twopi
        err = mp.mpf(2) ** (int(log2mag) - bits + 2) + mp.mpf(2) ** (-bits + 4)
        return mp.mpf(r), mp.mpf(err)


def dist_to_multiples(r, target: float = 0.0):
    """Distance from r (already reduced mod 2*pi) to target + 2*pi*Z."""
    twopi = 2 * mp.pi if isinstance(r, mp.mpf) else 2 * math.pi
    d = (r - target) % twopi
    return min(d, twopi - d)


# ---------------------------------------------------------------------------
# Split-exponent complex values (log-magnitude + phase)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LogComplex:
    """A complex number stored as (log|z|, arg z) so that magnitudes like
    exp(2 log x) never overflow.  logmag = -inf encodes zero."""

    logmag: float
    phase: float

    @staticmethod
    def zero() -> "LogComplex":
        return LogComplex(float("-inf"), 0.0)

    @staticmethod
    def from_complex(z: complex) -> "LogComplex":
        az = abs(z)
        if az == 0:
            return LogComplex.zero()
        return LogComplex(math.log(az), math.atan2(z.imag, z.real))

    def times(self, other: "LogComplex") -> "LogComplex":
        return LogComplex(self.logmag + other.logmag, self.phase + other.phase)

    def times_real_exp(self, logfactor: float) -> "LogComplex":
        return LogComplex(self.logmag + logfactor, self.phase)

    def plus(self, other: "LogComplex") -> "LogComplex":
        a, b = self, other
        if a.logmag < b.logmag:
            a, b = b, a
        if b.logmag == float("-inf"):
            return a
        # Factor out the larger magnitude; the ratio is representable.
        ratio = math.exp(b.logmag - a.logmag)
        z = 1.0 + ratio * complex(math.cos(b.phase - a.phase),
                                  math.sin(b.phase - a.phase))
        az = abs(z)
        if az == 0:
            return LogComplex.zero()
        return LogComplex(a.logmag + math.log(az),
                          a.phase + math.atan2(z.imag, z.real))

    def neg(self) -> "LogComplex":
        return LogComplex(self.logmag, self.phase + math.pi)

    def to_complex(self) -> complex:
        if self.logmag == float("-inf"):
            return 0j
        m = math.exp(self.logmag)  # may overflow to inf; caller's choice
        return complex(m * math.cos(self.phase), m * math.sin(self.phase))

    @property
    def log10_abs(self) -> float:
        return self.logmag / math.log(10.0)


# ---------------------------------------------------------------------------
# Paths and adaptive Gauss-Kronrod quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LineSeg:
    """Straight segment from z0 to z1."""
    z0: complex
    z1: complex

    def point(self, t: float) -> complex:
        return self.z0 + t * (self.z1 - self.z0)

    def derivative(self, t: float) -> complex:
        return self.z1 - self.z0

    def reversed(self) -> "LineSeg":
        return LineSeg(self.z1, self.z0)


@dataclass(frozen=True)
class ParamSeg:
    """Parametrized segment gamma(t) for t in [0, 1] with derivative dgamma."""
    gamma: Callable
    dgamma: Callable

    def point(self, t: float) -> complex:
        return self.gamma(t)

    def derivative(self, t: float) -> complex:
        return self.dgamma(t)

    def reversed(self) -> "ParamSeg":
        return ParamSeg(lambda t: self.gamma(1.0 - t),
                        lambda t: -self.dgamma(1.0 - t))


# 15-point Kronrod rule with embedded 7-point Gauss rule on [-1, 1]
# (the classical QUADPACK dqk15 constants).
_XGK = (
    0.9914553711208126392068547,
    0.9491079123427585245261897,
    0.8648644233597690727897128,
    0.7415311855993944398638648,
    0.5860872354676911302941448,
    0.4058451513773971669066064,
    0.2077849550078984676006894,
    0.0,
)
_WGK = (
    0.0229353220105292249637320,
    0.0630920926299785532907007,
    0.1047900103222501838398763,
    0.1406532597155259187451896,
    0.1690047266392679028265834,
    0.1903505780647854099132564,
    0.2044329400752988924141620,
    0.2094821410847278280129992,
)
_WG = (
    0.1294849661688696932706114,
    0.2797053914892766679014678,
    0.3818300505051189449503698,
    0.4179591836734693877551020,
)


def _gk15(h: Callable, a: float, b: float):
    """One Gauss-Kronrod 15 panel of h over [a, b]; returns (kronrod, err)."""
    c = 0.5 * (a + b)
    half = 0.5 * (b - a)
    fc = h(c)
    resk = _WGK[7] * fc
    resg = _WG[3] * fc
    resasc_terms = [( _WGK[7], fc)]
    for j in range(7):
        x = half * _XGK[j]
        f1 = h(c - x)
        f2 = h(c + x)
        resk += _WGK[j] * (f1 + f2)
        if j % 2 == 1:  # Kronrod nodes 1,3,5 are the Gauss-7 nodes
            resg += _WG[j // 2] * (f1 + f2)
        resasc_terms.append((_WGK[j], f1))
        resasc_terms.append((_WGK[j], f2))
    resk *= half
    resg *= half
    # Scaled error estimate in the QUADPACK style.
    reskh = resk / (b - a)
    resasc = sum(w * abs(f - reskh) for (w, f) in resasc_terms) * abs(half)
    err = abs(resk - resg)
    if resasc != 0 and err != 0:
        err = resasc * min(1.0, (200.0 * err / resasc) ** 1.5)
    return resk, err


def _integrate_h(h: Callable, tol: float, depth_cap: int,
                 max_panels: int = 100_000):
    """Adaptive GK15 of h over [0, 1]; returns (value, errsum).

    Worst-interval-first refinement with a global error target: the panel
    with the largest error estimate is split until the summed estimate
    drops under tol, every offender hits the depth cap, or the panel
    budget runs out.
    """
    val, err = _gk15(h, 0.0, 1.0)
    if not math.isfinite(err):
        err = math.inf
    heap = [(-err, 0.0, 1.0, val, err, 0)]
    total, errsum = val, err
    panels = 1
    frozen = 0.0  # error stuck at the depth cap; can never be reduced
    while heap and panels < max_panels:
        if errsum <= 0.5 * tol * (1.0 + abs(total)):
            break
        _, a, b, v, e, d = heapq.heappop(heap)
        m = 0.5 * (a + b)
        if d >= depth_cap or m <= a or m >= b:
            frozen += e
            if frozen > 0.5 * tol * (1.0 + abs(total)):
                break  # hopeless: frozen error alone exceeds the target
            continue
        v1, e1 = _gk15(h, a, m)
        v2, e2 = _gk15(h, m, b)
        if not math.isfinite(e1):
            e1 = math.inf
        if not math.isfinite(e2):
            e2 = math.inf
        total += (v1 + v2) - v
        errsum += (e1 + e2) - e
        heapq.heappush(heap, (-e1, a, m, v1, e1, d + 1))
        heapq.heappush(heap, (-e2, m, b, v2, e2, d + 1))
        panels += 2
    return total, errsum


def integrate_path(g: Callable, path, tol: float = 1e-10, depth_cap: int = 30,
                   max_panels: int = 100_000):
    """Adaptive Gauss-Kronrod integral of g along a path.

    `path` is a segment, a (z0, z1) tuple, or a sequence of either.  Returns
    (value, err_estimate).  Raises ToleranceNotMet (carrying the best value)
    when err > tol * (1 + |value|).
    """
    segs = _as_segments(path)
    total = 0j
    errsum = 0.0
    for seg in segs:
        h = lambda t, s=seg: g(s.point(t)) * s.derivative(t)
        val, err = _integrate_h(h, tol / max(1, len(segs)), depth_cap,
                                max_panels=max_panels)
        total += val
        errsum += err
    if errsum > tol * (1.0 + abs(total)):
        raise ToleranceNotMet(
            f"achieved error {errsum:.3e} above tolerance", total, errsum)
    return total, errsum


def _as_segments(path) -> Sequence:
    if isinstance(path, (LineSeg, ParamSeg)):
        return [path]
    if isinstance(path, tuple) and len(path) == 2 and not isinstance(path[0], (LineSeg, ParamSeg)):
        return [LineSeg(complex(path[0]), complex(path[1]))]
    segs = []
    for item in path:
        if isinstance(item, (LineSeg, ParamSeg)):
            segs.append(item)
        elif isinstance(item, tuple) and len(item) == 2:
            segs.append(LineSeg(complex(item[0]), complex(item[1])))
        else:
            raise TypeError(f"not a path segment: {item!r}")
    return segs


def polyline(points) -> list:
    """Chain of straight segments through the given complex points."""
    pts = [complex(p) for p in points]
    return [LineSeg(a, b) for a, b in zip(pts, pts[1:])]
