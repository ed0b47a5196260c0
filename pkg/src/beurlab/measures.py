"""measures.py -- measures on [1, oo): atoms, closed-form densities, log-grid cells.

A Measure is a finite list of point masses plus density segments; the
supported density kinds are

  RationalLog          (1 - 1/u)/log u          on (a, b)
  SineChunkDerivative  tau cos(tau log u)/u     on (a, b]   (derivative of
                                                 sin(tau log u))
  GridCells            tabulated cell masses on a log grid
  UserTable            tabulated or callable density

Ops: cdf, Mellin-Stieltjes transform, projection to a log grid, multiplicative
convolution (= additive convolution of cell masses in log coordinates), and
the convolution exponential

    exp_star(mu) = delta_1 + sum_{n>=1} mu^{*n} / n!

which maps a prime-counting measure to its integer-counting measure.
Everything is immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import mpmath as mp
import numpy as np
from scipy.signal import fftconvolve
from scipy.special import exp1, expi

from .numcore import ParamSeg, integrate_path, reduce_mod_2pi

EULER_GAMMA = 0.57721566490153286060651209008240243

# density-kind tags
RATIONAL_LOG = "RationalLog"
SINE_CHUNK_DERIVATIVE = "SineChunkDerivative"
GRID_CELLS = "GridCells"
USER_TABLE = "UserTable"

_KINDS = (RATIONAL_LOG, SINE_CHUNK_DERIVATIVE, GRID_CELLS, USER_TABLE)

DEFAULT_GRID_H = 1e-4

# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class MeasureError(Exception):
    pass


class InvalidMeasure(MeasureError):
    pass


class DivergentTail(MeasureError):
    pass


class GridMismatch(MeasureError):
    pass


class MassAtOne(MeasureError):
    pass


class Overflow(MeasureError):
    pass


# ---------------------------------------------------------------------------
# Scalar helpers, generic over float / mpf
# ---------------------------------------------------------------------------


def _is_mp(*vals) -> bool:
    return any(isinstance(v, (mp.mpf, mp.mpc)) for v in vals)


def _log(x):
    return mp.log(x) if _is_mp(x) else math.log(x)


def ratlog_antiderivative_logarg(v):
    """integral_0^v (1 - e^{-w})/w e^{w} ... i.e. P(e^v) where dP has density
    (1-1/u)/log u; equals Ei(v) - log v - gamma for v > 0, with the series
    sum_{n>=1} v^n/(n n!) used near 0 where the closed form cancels.
    """
    if _is_mp(v):
        if v <= 0:
            return mp.mpf(0)
        if v < mp.mpf("0.01"):
            term, total = v, v
            for n in range(2, 12):
                term = term * v / n
                total += term / n
            return total
        return mp.ei(v) - mp.log(v) - mp.euler
    if v <= 0.0:
        return 0.0
    if v < 0.01:
        term, total = v, v
        for n in range(2, 9):
            term = term * v / n
            total += term / n
        return total
    return float(expi(v)) - math.log(v) - EULER_GAMMA


def _ratlog_anti_logargs_vec(vs: np.ndarray) -> np.ndarray:
    """Vectorized ratlog_antiderivative_logarg for a float array of v >= 0."""
    vs = np.asarray(vs, dtype=float)
    out = np.zeros_like(vs)
    small = (vs > 0.0) & (vs < 0.01)
    big = vs >= 0.01
    if np.any(small):
        v = vs[small]
        term = v.copy()
        total = v.copy()
        for n in range(2, 9):
            term = term * v / n
            total += term / n
        out[small] = total
    if np.any(big):
        v = vs[big]
        out[big] = expi(v) - np.log(v) - EULER_GAMMA
    return out


def _phase_mod_2pi(tau, logx):
    """tau * logx reduced to [0, 2 pi), at whatever precision the size of the
    product demands.  Accepts float or mpf; returns the same flavour.
    """
    want_mp = _is_mp(tau, logx)
    mag = abs(float(tau)) * max(abs(float(logx)), 1.0)
    if not want_mp and mag < 2.0 ** 46:
        return math.fmod(float(tau) * float(logx), 2.0 * math.pi)
    bits = max(96, int(math.log2(max(mag, 2.0))) + 96)
    with mp.workprec(bits):
        arg = mp.mpf(tau) * mp.mpf(logx)
        r, _ = reduce_mod_2pi(arg, bits=bits)
        return r if want_mp else float(r)


def _sin_tau_log(tau, x):
    """sin(tau log x) with high-precision argument reduction when needed."""
    ph = _phase_mod_2pi(tau, _log(x))
    return mp.sin(ph) if _is_mp(ph) else math.sin(ph)


def _cos_tau_log(tau, x):
    ph = _phase_mod_2pi(tau, _log(x))
    return mp.cos(ph) if _is_mp(ph) else math.cos(ph)


# ---------------------------------------------------------------------------
# Measure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    """One density segment on (a, b); kind selects the density family."""

    a: object
    b: object
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InvalidMeasure(f"unknown density kind {self.kind!r}")
        if not (self.a >= 1):
            raise InvalidMeasure("segment must start at a >= 1")
        if not (self.b > self.a):
            raise InvalidMeasure("segment needs b > a")
        if self.kind == SINE_CHUNK_DERIVATIVE:
            if "tau" not in self.params:
                raise InvalidMeasure("sine chunk needs params['tau']")
            if math.isinf(float(self.b)):
                raise InvalidMeasure("sine chunk must be bounded")
        if self.kind == GRID_CELLS:
            for key in ("h", "log_a", "cells"):
                if key not in self.params:
                    raise InvalidMeasure(f"grid cells need params[{key!r}]")
        if self.kind == USER_TABLE:
            if "f" not in self.params and not (
                    "u" in self.params and "density" in self.params):
                raise InvalidMeasure(
                    "user table needs params['f'] or params['u']/['density']")


@dataclass(frozen=True)
class Measure:
    """Point masses + density segments on [1, oo).

    `signed=False` asserts non-negativity: atom weights >= 0, plain densities
    >= 0, and every sine chunk covered by a RationalLog segment whose floor
    beats the chunk amplitude (1/(2 nu log tau) >= tau^{-delta} in terms of
    the chunk endpoints a = tau^{1+delta}, b = tau^nu).
    """

    atoms: tuple = ()
    segments: tuple = ()
    signed: bool = False

    def __post_init__(self):
        atoms = tuple((u, w) for (u, w) in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "segments", tuple(self.segments))
        prev = None
        for u, w in atoms:
            if not (u >= 1):
                raise InvalidMeasure("atom position must be >= 1")
            if prev is not None and u < prev:
                raise InvalidMeasure("atoms must be sorted by position")
            if not self.signed and not (w >= 0):
                raise InvalidMeasure("negative atom weight in unsigned measure")
            prev = u
        # same-kind segments must not overlap (different kinds may: the total
        # density is the sum over segments)
        by_kind: dict = {}
        for seg in self.segments:
            by_kind.setdefault(seg.kind, []).append(seg)
        for kind, segs in by_kind.items():
            segs = sorted(segs, key=lambda s: float(s.a))
            for s0, s1 in zip(segs, segs[1:]):
                if float(s1.a) < float(s0.b):
                    raise InvalidMeasure(f"overlapping {kind} segments")
        if not self.signed:
            self._check_unsigned()

    # -- construction-time positivity checks (cheap, analytic) --
    def _check_unsigned(self):
        ratlogs = [s for s in self.segments if s.kind == RATIONAL_LOG]
        for seg in self.segments:
            if seg.kind == SINE_CHUNK_DERIVATIVE:
                covered = any(float(r.a) <= float(seg.a)
                              and float(r.b) >= float(seg.b) for r in ratlogs)
                if not covered:
                    raise InvalidMeasure(
                        "unsigned sine chunk not covered by a RationalLog "
                        "segment")
                tau = float(seg.params["tau"])
                ltau = math.log(tau)
                delta = math.log(float(seg.a)) / ltau - 1.0
                nu = math.log(float(seg.b)) / ltau
                floor = 1.0 / (2.0 * nu * ltau) - tau ** (-delta)
                if floor < -1e-15:
                    raise InvalidMeasure(
                        f"sine chunk can push the density negative "
                        f"(floor {floor:.3e} < 0)")
            elif seg.kind == GRID_CELLS:
                if np.any(np.asarray(seg.params["cells"]) < 0):
                    raise InvalidMeasure("negative grid cell in unsigned "
                                         "measure")
            elif seg.kind == USER_TABLE and "density" in seg.params:
                if np.any(np.asarray(seg.params["density"]) < 0):
                    raise InvalidMeasure("negative table density in unsigned "
                                         "measure")


def dp_measure(b=math.inf) -> Measure:
    """The smooth prime-counting measure with density (1 - 1/u)/log u."""
    return Measure(segments=(Segment(1.0, b, RATIONAL_LOG),))


def sine_chunk_measure(tau, a, b, signed=True) -> Measure:
    """The oscillating measure with density tau cos(tau log u)/u on (a, b]."""
    return Measure(segments=(
        Segment(a, b, SINE_CHUNK_DERIVATIVE, {"tau": tau}),), signed=signed)


def atomic_measure(pairs, signed=False) -> Measure:
    return Measure(atoms=tuple(sorted(pairs, key=lambda t: float(t[0]))),
                   signed=signed)


# ---------------------------------------------------------------------------
# density and cdf
# ---------------------------------------------------------------------------


def _table_density(seg: Segment, u: float) -> float:
    if "f" in seg.params:
        return float(seg.params["f"](u))
    us = np.asarray(seg.params["u"], dtype=float)
    ds = np.asarray(seg.params["density"], dtype=float)
    return float(np.interp(u, us, ds))


def density(mu: Measure, u):
    """Total density at u (atoms excluded)."""
    total = 0.0
    for seg in mu.segments:
        if not (seg.a <= u <= seg.b):
            continue
        if seg.kind == RATIONAL_LOG:
            lu = _log(u)
            if lu == 0:
                total += 1.0  # removable limit of (1 - 1/u)/log u at u = 1
            elif float(lu) < 1e-8:
                total += 1.0 - float(lu) / 2.0
            else:
                total += (1.0 - 1.0 / u) / lu
        elif seg.kind == SINE_CHUNK_DERIVATIVE:
            tau = seg.params["tau"]
            total += tau * _cos_tau_log(tau, u) / u
        elif seg.kind == GRID_CELLS:
            h = seg.params["h"]
            la = seg.params["log_a"]
            cells = seg.params["cells"]
            j = int(math.floor((math.log(float(u)) - la) / h + 0.5))
            if 0 <= j < len(cells):
                lo = math.exp(la + (j - 0.5) * h)
                total += cells[j] / (lo * math.expm1(h))
        elif seg.kind == USER_TABLE:
            total += _table_density(seg, float(u))
    return total


def _segment_cdf(seg: Segment, x):
    """Mass of one segment on [1, x]."""
    if x <= seg.a:
        return 0.0
    xe = x if x < seg.b else seg.b
    if seg.kind == RATIONAL_LOG:
        return (ratlog_antiderivative_logarg(_log(xe))
                - ratlog_antiderivative_logarg(_log(seg.a)))
    if seg.kind == SINE_CHUNK_DERIVATIVE:
        tau = seg.params["tau"]
        return _sin_tau_log(tau, xe) - _sin_tau_log(tau, seg.a)
    if seg.kind == GRID_CELLS:
        h = seg.params["h"]
        la = seg.params["log_a"]
        cells = np.asarray(seg.params["cells"], dtype=float)
        # cell j's mass sits at its left edge exp(la + j h)
        jmax = int(math.floor((math.log(float(xe)) - la) / h + 1e-12))
        return float(np.sum(cells[:max(0, min(len(cells), jmax + 1))]))
    if seg.kind == USER_TABLE:
        if "f" in seg.params:
            f = seg.params["f"]
            val, _ = integrate_path(
                lambda z: complex(f(z.real), 0.0),
                [(complex(float(seg.a), 0.0), complex(float(xe), 0.0))],
                tol=1e-10)
            return val.real
        us = np.asarray(seg.params["u"], dtype=float)
        ds = np.asarray(seg.params["density"], dtype=float)
        lo, hi = float(seg.a), float(xe)
        grid = np.unique(np.clip(np.concatenate([us, [lo, hi]]), lo, hi))
        return float(np.trapezoid(np.interp(grid, us, ds), grid)) \
            if hasattr(np, "trapezoid") else \
            float(np.trapz(np.interp(grid, us, ds), grid))
    raise InvalidMeasure(seg.kind)


def cdf(mu: Measure, x):
    """mu([1, x]); 0 for x < 1."""
    if x < 1:
        return 0.0
    total = 0.0
    for u, w in mu.atoms:
        if u <= x:
            total = total + w
    for seg in mu.segments:
        total = total + _segment_cdf(seg, x)
    return total


# ---------------------------------------------------------------------------
# Mellin-Stieltjes transform
# ---------------------------------------------------------------------------


def _e1(z):
    if _is_mp(z):
        return mp.e1(z)
    return complex(exp1(complex(z)))


def _ratlog_mellin_tail(s, logb):
    """integral_{b}^{oo} u^{-s} (1-1/u)/log u du for Re s > 1, b = e^logb > 1."""
    return _e1((s - 1) * logb) - _e1(s * logb)


def _ratlog_mellin(seg: Segment, s, x_cut):
    a, b = seg.a, seg.b
    bu = b if b <= x_cut else x_cut
    infinite = math.isinf(float(bu))
    re_s = float(mp.re(s)) if _is_mp(s) else s.real
    la = _log(a)
    if infinite:
        if re_s <= 1.0:
            raise DivergentTail(
                "RationalLog tail diverges for Re s <= 1 with x_cut = oo")
        if float(la) == 0.0:
            return mp.log(s / (s - 1)) if _is_mp(s) else \
                complex(np.log(s / (s - 1)))
        return _ratlog_mellin_tail(s, la)
    lb = _log(bu)
    if re_s > 1.0:
        if float(la) == 0.0:
            head = mp.log(s / (s - 1)) if _is_mp(s) else \
                complex(np.log(s / (s - 1)))
            return head - _ratlog_mellin_tail(s, lb)
        return _ratlog_mellin_tail(s, la) - _ratlog_mellin_tail(s, lb)
    # finite range, Re s <= 1: no closed form on the principal branch; the
    # integrand in v = log u is entire, so quadrature is cheap and safe.
    sv = complex(s)
    lav, lbv = float(la), float(lb)

    def g(z):
        v = z.real
        if v < 1e-8:
            base = 1.0 - v / 2.0  # (1 - e^{-v})/v, series at 0
        else:
            base = -math.expm1(-v) / v
        return base * np.exp((1.0 - sv) * v)

    val, _ = integrate_path(g, [(complex(lav, 0.0), complex(lbv, 0.0))],
                            tol=1e-12)
    return val


def _chunk_mellin(seg: Segment, s, x_cut):
    """Closed form: (tau/2)[(a^{-(s-i tau)} - b^{-(s-i tau)})/(s - i tau)
    + (a^{-(s+i tau)} - b^{-(s+i tau)})/(s + i tau)], endpoints clipped to
    x_cut; phases tau log(.) reduced mod 2 pi at adequate precision."""
    tau = seg.params["tau"]
    a, b = seg.a, seg.b
    if x_cut <= a:
        return 0.0 + 0.0j
    bu = b if b <= x_cut else x_cut
    want_mp = _is_mp(s, tau, a, bu)
    la, lb = _log(a), _log(bu)

    def endpoint(lv):
        # u^{-(s -/+ i tau)} at u = e^lv for both pole signs
        ph = _phase_mod_2pi(tau, lv)
        if want_mp or _is_mp(ph):
            amp = mp.exp(-mp.mpc(s) * mp.mpf(lv))
            rot = mp.exp(1j * mp.mpf(ph))
            return amp * rot, amp / rot
        amp_rot = np.exp(-complex(s) * float(lv) + 1j * float(ph))
        amp_con = np.exp(-complex(s) * float(lv) - 1j * float(ph))
        return complex(amp_rot), complex(amp_con)

    ea_plus, ea_minus = endpoint(la)
    eb_plus, eb_minus = endpoint(lb)
    if want_mp:
        taum = mp.mpf(tau)
        sm = mp.mpc(s)
        return (taum / 2) * ((ea_plus - eb_plus) / (sm - 1j * taum)
                             + (ea_minus - eb_minus) / (sm + 1j * taum))
    tauf = float(tau)
    sf = complex(s)
    return (tauf / 2.0) * ((ea_plus - eb_plus) / (sf - 1j * tauf)
                           + (ea_minus - eb_minus) / (sf + 1j * tauf))


def mellin_stieltjes(mu: Measure, s, x_cut=math.inf):
    """integral_1^{x_cut} u^{-s} d mu(u).

    Closed forms per segment where available, quadrature otherwise.  Raises
    DivergentTail when a segment reaches to infinity and Re s <= 1.
    """
    total = 0.0 + 0.0j if not _is_mp(s) else mp.mpc(0)
    for u, w in mu.atoms:
        if u <= x_cut:
            if _is_mp(s, u):
                total = total + w * mp.exp(-mp.mpc(s) * mp.log(mp.mpf(u)))
            else:
                total = total + w * np.exp(-complex(s) * math.log(u))
    for seg in mu.segments:
        if seg.a >= x_cut:
            continue
        if seg.kind == RATIONAL_LOG:
            total = total + _ratlog_mellin(seg, s, x_cut)
        elif seg.kind == SINE_CHUNK_DERIVATIVE:
            total = total + _chunk_mellin(seg, s, x_cut)
        elif seg.kind == GRID_CELLS:
            h = seg.params["h"]
            la = seg.params["log_a"]
            cells = np.asarray(seg.params["cells"], dtype=float)
            lv = la + h * np.arange(len(cells))
            keep = lv <= math.log(float(min(x_cut, 1e308)))
            total = total + complex(np.sum(
                cells[keep] * np.exp(-complex(s) * lv[keep])))
        elif seg.kind == USER_TABLE:
            bu = seg.b if seg.b <= x_cut else x_cut
            if math.isinf(float(bu)):
                raise DivergentTail("user table needs a finite range")
            if "f" in seg.params:
                f = seg.params["f"]
            else:
                us = np.asarray(seg.params["u"], dtype=float)
                ds = np.asarray(seg.params["density"], dtype=float)
                f = lambda u: float(np.interp(u, us, ds))
            sv = complex(s)
            g = lambda z: f(z.real) * np.exp(-sv * math.log(z.real))
            val, _ = integrate_path(
                g, [(complex(float(seg.a), 0.0), complex(float(bu), 0.0))],
                tol=1e-11)
            total = total + val
    return total


# ---------------------------------------------------------------------------
# Log-grid measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GridMeasure:
    """Mass binned on the log grid cell_j = [e^{(j-1/2) h}, e^{(j+1/2) h}).

    The mass of cell j sits at the cell center e^{j h}, so multiplicative
    convolution is exact additive convolution of cell indices, and
    round-to-nearest binning keeps the placement error at h/2 with no
    systematic drift.  A unit point mass at u = 1 is tracked separately in
    `mass_at_one` (cell 0 holds genuine density mass near 1).
    """

    h: float
    cell_mass: np.ndarray
    mass_at_one: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "cell_mass",
                           np.asarray(self.cell_mass, dtype=float))
        if self.h <= 0:
            raise InvalidMeasure("grid step must be positive")

    @property
    def ncells(self) -> int:
        return len(self.cell_mass)

    @property
    def log_max(self) -> float:
        return self.h * self.ncells

    def total_mass(self) -> float:
        return self.mass_at_one + float(np.sum(self.cell_mass))

    def cdf(self, x) -> float:
        return float(self.cdf_many(np.asarray([x], dtype=float))[0])

    def cdf_many(self, xs: np.ndarray) -> np.ndarray:
        """Mass on [1, x]: full cells below x plus a linear share of the cell
        containing x (cell mass is treated as uniform across the cell), plus
        the unit atom."""
        xs = np.asarray(xs, dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(self.cell_mass)])
        out = np.zeros_like(xs)
        ok = xs >= 1.0
        pos = np.log(np.maximum(xs[ok], 1.0)) / self.h + 0.5
        j = np.floor(pos + 1e-12).astype(int)
        frac = np.clip(pos - j, 0.0, 1.0)
        j = np.clip(j, 0, self.ncells)
        partial = np.where(j < self.ncells,
                           self.cell_mass[np.minimum(j, self.ncells - 1)]
                           * frac, 0.0)
        out[ok] = self.mass_at_one + cum[j] + partial
        return out


def grid_delta_one(log_max: float, h: float = DEFAULT_GRID_H) -> GridMeasure:
    n = int(round(log_max / h))
    return GridMeasure(h, np.zeros(n), mass_at_one=1.0)


def to_grid(mu: Measure, log_max: float, h: float = DEFAULT_GRID_H) -> GridMeasure:
    """Project a Measure onto the log grid on [1, e^{log_max})."""
    n = int(round(log_max / h))
    if n <= 0:
        raise InvalidMeasure("empty grid")
    cells = np.zeros(n)
    mass1 = 0.0
    for u, w in mu.atoms:
        if float(u) == 1.0:
            mass1 += float(w)
            continue
        j = int(math.floor(math.log(float(u)) / h + 0.5 + 1e-12))
        if j < n:
            cells[j] += float(w)
    # log coordinates of cell edges: cell j spans [(j-1/2) h, (j+1/2) h)
    edges = np.maximum((np.arange(n + 1) - 0.5) * h, 0.0)
    for seg in mu.segments:
        la = math.log(float(seg.a))
        lb = math.inf if math.isinf(float(seg.b)) else math.log(float(seg.b))
        lv = np.clip(edges, la, min(lb, edges[-1]))
        if seg.kind == RATIONAL_LOG:
            anti = _ratlog_anti_logargs_vec(lv)
            cells += np.diff(anti)
        elif seg.kind == SINE_CHUNK_DERIVATIVE:
            tau = float(seg.params["tau"])
            if tau * float(lv[-1]) > 2.0 ** 46:
                # phases unresolvable in doubles; do the few relevant cells
                # in high precision
                vals = np.array([float(_sin_tau_log(seg.params["tau"],
                                                    math.exp(v)))
                                 for v in lv])
                cells += np.diff(vals)
            else:
                cells += np.diff(np.sin(tau * lv))
        elif seg.kind == GRID_CELLS:
            hs = seg.params["h"]
            la_s = seg.params["log_a"]
            src = np.asarray(seg.params["cells"], dtype=float)
            pos = la_s + hs * np.arange(len(src))
            j = np.floor(pos / h + 0.5 + 1e-12).astype(int)
            keep = j < n
            np.add.at(cells, j[keep], src[keep])
        elif seg.kind == USER_TABLE:
            if "f" in seg.params:
                f = seg.params["f"]
                mids = np.exp(0.5 * (lv[1:] + lv[:-1]))
                widths = np.diff(np.exp(lv))
                dens = np.array([float(f(u)) for u in mids])
                cells += dens * widths
            else:
                us = np.asarray(seg.params["u"], dtype=float)
                ds = np.asarray(seg.params["density"], dtype=float)
                # cumulative trapezoid of the table, interpolated at edges
                cum = np.concatenate([[0.0], np.cumsum(
                    0.5 * (ds[1:] + ds[:-1]) * np.diff(us))])
                cells += np.diff(np.interp(np.exp(lv), us, cum))
    return GridMeasure(h, cells, mass_at_one=mass1)


def grid_mellin(gm: GridMeasure, s) -> complex:
    """Transform of the binned measure (cells at their left edges)."""
    lv = gm.h * np.arange(gm.ncells)
    return complex(gm.mass_at_one
                   + np.sum(gm.cell_mass * np.exp(-complex(s) * lv)))


def mconvolve(a: GridMeasure, b: GridMeasure) -> GridMeasure:
    """Multiplicative convolution, truncated at the common log_max."""
    if abs(a.h - b.h) > 1e-12 * a.h or a.ncells != b.ncells:
        raise GridMismatch("grids must share h and log_max")
    n = a.ncells
    if n <= 4096:
        cc = np.convolve(a.cell_mass, b.cell_mass)[:n]
    else:
        cc = fftconvolve(a.cell_mass, b.cell_mass)[:n]
    cells = (cc + a.mass_at_one * b.cell_mass + b.mass_at_one * a.cell_mass)
    return GridMeasure(a.h, cells, mass_at_one=a.mass_at_one * b.mass_at_one)


def exp_star(mu: GridMeasure, n_max: int | None = None,
             tail_rel: float = 1e-12) -> GridMeasure:
    """delta_1 + sum_{n>=1} mu^{*n}/n! on the grid.

    With n_max=None the series is cut once the n-th term's mass has been
    decreasing for three steps and the geometric tail estimate
    m_n r/(1-r), r = m_n/m_{n-1}, falls under tail_rel of the accumulated
    mass.  Truncation at log_max means high powers die out quickly.
    """
    if mu.mass_at_one != 0.0:
        raise MassAtOne("exp_star input must have no point mass at 1")
    n = mu.ncells
    base = mu.cell_mass

    def convolve(p):
        if n <= 4096:
            return np.convolve(p, base)[:n]
        return fftconvolve(p, base)[:n]

    acc = base.copy()
    power = base.copy()
    m_prev = float(np.sum(np.abs(power)))
    decreasing = 0
    cap = n_max if n_max is not None else 2000
    k = 1
    while k < cap:
        k += 1
        power = convolve(power) / k
        m_k = float(np.sum(np.abs(power)))
        acc += power
        if n_max is None:
            if m_k < m_prev:
                decreasing += 1
            else:
                decreasing = 0
            if decreasing >= 3 and m_prev > 0:
                r = m_k / m_prev
                tail = m_k * r / (1.0 - r) if r < 1.0 else math.inf
                if tail <= tail_rel * max(1.0, float(np.sum(np.abs(acc)))):
                    break
            if m_k == 0.0:
                break
        m_prev = m_k
    else:
        if n_max is None:
            raise MeasureError("exp_star series did not settle within cap")
    return GridMeasure(mu.h, acc, mass_at_one=1.0)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_BGM1_MAGIC = b"BGM1"
_BGM1_HEADER = struct.Struct("<4sddQ")


def write_bgm1(gm: GridMeasure, path: str) -> None:
    """Binary dump: magic, h, log_max, cell count, then f64 cells.

    The format has no slot for a separate unit atom, so `mass_at_one` is
    folded into cell 0; cdf values are unchanged by the relocation.
    """
    cells = gm.cell_mass.copy()
    if gm.mass_at_one != 0.0:
        cells[0] += gm.mass_at_one
    with open(path, "wb") as fh:
        fh.write(_BGM1_HEADER.pack(_BGM1_MAGIC, gm.h, gm.log_max, len(cells)))
        fh.write(cells.astype("<f8").tobytes())


def read_bgm1(path: str) -> GridMeasure:
    with open(path, "rb") as fh:
        head = fh.read(_BGM1_HEADER.size)
        magic, h, log_max, count = _BGM1_HEADER.unpack(head)
        if magic != _BGM1_MAGIC:
            raise InvalidMeasure("not a BGM1 file")
        cells = np.frombuffer(fh.read(8 * count), dtype="<f8").copy()
    if count != int(round(log_max / h)):
        raise InvalidMeasure("BGM1 header is inconsistent")
    return GridMeasure(h, cells)


def export_cdf_csv(obj, path: str, xs: Sequence[float]) -> None:
    """CSV with columns x, cdf for a Measure or GridMeasure."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "cdf"])
        for x in xs:
            val = obj.cdf(x) if isinstance(obj, GridMeasure) else cdf(obj, x)
            w.writerow([repr(float(x)), repr(float(val))])


# ---------------------------------------------------------------------------
# Discrete systems: exact lattice enumeration
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DiscreteCounts:
    """Sorted generalized integers (with weights) and prime powers up to x_max."""

    values: np.ndarray
    weights: np.ndarray
    pp_values: np.ndarray
    pp_weights: np.ndarray
    x_max: float

    def N(self, x) -> float:
        j = np.searchsorted(self.values, float(x) * (1.0 + 1e-12), "right")
        return float(np.sum(self.weights[:j]))

    def Pi(self, x) -> float:
        j = np.searchsorted(self.pp_values, float(x) * (1.0 + 1e-12), "right")
        return float(np.sum(self.pp_weights[:j]))


def discrete_integers(primes, x_max: float, cap: int = 2_000_000) -> DiscreteCounts:
    """Enumerate the multiplicative semigroup generated by `primes` up to x_max.

    `primes` is a list of p or (p, multiplicity).  A prime of multiplicity m
    contributes C(e+m-1, e) ways to use it with exponent e.  Raises Overflow
    past `cap` generated values.
    """
    norm = []
    for entry in primes:
        if isinstance(entry, (tuple, list)):
            p, m = entry
        else:
            p, m = entry, 1
        if not (p > 1):
            raise InvalidMeasure("generalized primes must exceed 1")
        if not (isinstance(m, int) and m >= 1):
            raise InvalidMeasure("multiplicity must be a positive integer")
        norm.append((float(p), m))
    items = [(1.0, 1.0)]
    for p, m in norm:
        out = []
        for v, w in items:
            e = 0
            pv = 1.0
            while v * pv <= x_max * (1.0 + 1e-12):
                out.append((v * pv, w * math.comb(e + m - 1, e)))
                e += 1
                pv *= p
                if len(out) > cap:
                    raise Overflow(f"more than {cap} generalized integers")
        items = out
    items.sort(key=lambda t: t[0])
    values = np.array([t[0] for t in items])
    weights = np.array([t[1] for t in items])
    pps = []
    for p, m in norm:
        j = 1
        pv = p
        while pv <= x_max * (1.0 + 1e-12):
            pps.append((pv, m / j))
            j += 1
            pv *= p
    pps.sort(key=lambda t: t[0])
    pp_values = np.array([t[0] for t in pps]) if pps else np.zeros(0)
    pp_weights = np.array([t[1] for t in pps]) if pps else np.zeros(0)
    return DiscreteCounts(values, weights, pp_values, pp_weights, float(x_max))


# ---------------------------------------------------------------------------
# Positivity sampling
# ---------------------------------------------------------------------------


def check_nonnegativity(mu: Measure, samples_per_chunk: int = 10_000) -> float:
    """Deterministically sample the total density across every sine chunk and
    return the worst (most negative) value found; >= 0 means the sampled
    density never went negative."""
    worst = math.inf
    for seg in mu.segments:
        if seg.kind != SINE_CHUNK_DERIVATIVE:
            continue
        la, lb = math.log(float(seg.a)), math.log(float(seg.b))
        offs = (np.arange(samples_per_chunk) + 0.382) / samples_per_chunk
        for v in la + offs * (lb - la):
            worst = min(worst, float(density(mu, math.exp(v))))
    if math.isinf(worst):
        worst = 0.0  # no chunks: RationalLog and friends are nonnegative
    return worst
