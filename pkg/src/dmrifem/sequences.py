"""Diffusion-encoding temporal profiles f(t) and the b-value algebra.

All times are in us, gradient amplitudes in T/um, diffusivities in um^2/us;
with these units the customary s/mm^2 b-values and m/s permeabilities carry
over with conversion factor one, and only the gyromagnetic ratio rescales.

Profiles are contiguous lists of segments over [0, T], each segment being a
constant, a linear ramp, or a single sine/cosine. This closed algebra admits
exact antiderivatives, so F(t) = int_0^t f and the b-value integral
int_0^T F^2 are evaluated in closed form rather than numerically.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass, field

import numpy as np

#: gyromagnetic ratio of the water proton, rad/(us T)  (2.67513e8 rad/(s T))
GAMMA = 2.67513e2


@dataclass(frozen=True)
class Segment:
    """One smooth piece of a temporal profile on (t0, t1].

    kind 'const':  f = a
    kind 'linear': f = a + b*(t - t0)
    kind 'cos':    f = a*cos(omega*(t - t0) + phase)
    kind 'sin':    f = a*sin(omega*(t - t0) + phase)
    """

    t0: float
    t1: float
    kind: str
    a: float = 0.0
    b: float = 0.0
    omega: float = 0.0
    phase: float = 0.0

    def value(self, t: float) -> float:
        s = t - self.t0
        if self.kind == "const":
            return self.a
        if self.kind == "linear":
            return self.a + self.b * s
        if self.kind == "cos":
            return self.a * math.cos(self.omega * s + self.phase)
        if self.kind == "sin":
            return self.a * math.sin(self.omega * s + self.phase)
        raise ValueError(f"unknown segment kind {self.kind!r}")

    def integral(self, t: float) -> float:
        """Integral of f over (t0, t]."""
        s = t - self.t0
        if self.kind == "const":
            return self.a * s
        if self.kind == "linear":
            return self.a * s + 0.5 * self.b * s * s
        w, p = self.omega, self.phase
        if self.kind == "cos":
            return self.a / w * (math.sin(w * s + p) - math.sin(p))
        if self.kind == "sin":
            return self.a / w * (math.cos(p) - math.cos(w * s + p))
        raise ValueError(f"unknown segment kind {self.kind!r}")

    def sq_f_integral(self, F0: float) -> float:
        """Integral of F(t)^2 over the whole segment, F(t0) = F0. Closed form."""
        L = self.t1 - self.t0
        if self.kind in ("const", "linear"):
            # F = c0 + c1 s + c2 s^2 on the segment
            c0, c1, c2 = F0, self.a, 0.5 * self.b
            return (c0 * c0 * L + c0 * c1 * L**2 + (c1 * c1 + 2.0 * c0 * c2) * L**3 / 3.0
                    + 0.5 * c1 * c2 * L**4 + c2 * c2 * L**5 / 5.0)
        w, p, A = self.omega, self.phase, self.a
        if self.kind == "cos":
            # F = K + (A/w) sin(w s + p), K = F0 - (A/w) sin(p)
            K = F0 - A / w * math.sin(p)
            B = A / w
            lin = K * K * L + 0.5 * B * B * L
            cross = -2.0 * K * B / w * (math.cos(w * L + p) - math.cos(p))
            osc = -B * B / (4.0 * w) * (math.sin(2.0 * (w * L + p)) - math.sin(2.0 * p))
            return lin + cross + osc
        if self.kind == "sin":
            # F = K - (A/w) cos(w s + p), K = F0 + (A/w) cos(p)
            K = F0 + A / w * math.cos(p)
            B = -A / w
            lin = K * K * L + 0.5 * B * B * L
            cross = 2.0 * K * B / w * (math.sin(w * L + p) - math.sin(p))
            osc = B * B / (4.0 * w) * (math.sin(2.0 * (w * L + p)) - math.sin(2.0 * p))
            return lin + cross + osc
        raise ValueError(f"unknown segment kind {self.kind!r}")


class TemporalProfile:
    """Piecewise gradient waveform with exact running integral.

    Segments must be contiguous and cover [0, T]. Evaluation at a segment
    boundary uses the left segment (f(delta) = 1 for PGSE: the pulse is
    closed on the right).
    """

    def __init__(self, segments, name="profile"):
        if not segments:
            raise ValueError("profile needs at least one segment")
        self.name = name
        self.segments = list(segments)
        if abs(self.segments[0].t0) > 0.0:
            raise ValueError("profile must start at t = 0")
        for s0, s1 in zip(self.segments[:-1], self.segments[1:]):
            if not math.isclose(s0.t1, s1.t0, rel_tol=0.0, abs_tol=1e-9 * self.segments[-1].t1):
                raise ValueError("segments must be contiguous")
        self.echo_time = self.segments[-1].t1
        self._ends = [s.t1 for s in self.segments]
        # cumulative F at each segment start
        self._F0 = [0.0]
        for s in self.segments[:-1]:
            self._F0.append(self._F0[-1] + s.integral(s.t1))

    @property
    def T(self) -> float:
        return self.echo_time

    def _segment_index(self, t: float) -> int:
        if t < 0.0 or t > self.echo_time * (1.0 + 1e-12) + 1e-12:
            raise ValueError(f"t = {t} outside [0, {self.echo_time}]")
        i = bisect_left(self._ends, t)
        return min(i, len(self.segments) - 1)

    def f(self, t: float) -> float:
        return self.segments[self._segment_index(t)].value(t)

    def F(self, t: float) -> float:
        i = self._segment_index(t)
        return self._F0[i] + self.segments[i].integral(t)

    def f_on(self, i: int, t: float) -> float:
        """f evaluated with segment i's formula (one-sided limits at joints)."""
        return self.segments[i].value(t)

    def segment_containing(self, t0: float, t1: float) -> int:
        """Index of the segment covering the open interval (t0, t1)."""
        return self._segment_index(0.5 * (t0 + t1))

    def boundaries(self):
        """Interior segment joints (candidate f-discontinuity instants)."""
        return [s.t1 for s in self.segments[:-1]]

    def b_factor(self) -> float:
        """int_0^T F(s)^2 ds in us^3, by exact per-segment integration."""
        total = 0.0
        for F0, s in zip(self._F0, self.segments):
            total += s.sq_f_integral(F0)
        return total

    def is_refocused(self, tol: float = 1e-9) -> bool:
        scale = max(abs(f0) for f0 in self._F0) + self.echo_time
        return abs(self.F(self.echo_time)) <= tol * scale


def b_from_g(profile: TemporalProfile, g: float) -> float:
    """b = gamma^2 g^2 int F^2; g in T/um, b in us/um^2 (== s/mm^2)."""
    if g < 0.0:
        raise ValueError("gradient amplitude must be non-negative")
    return GAMMA ** 2 * g ** 2 * profile.b_factor()


def g_from_b(profile: TemporalProfile, b: float) -> float:
    """Positive gradient amplitude reproducing the requested b-value."""
    if b < 0.0:
        raise ValueError("b-value must be non-negative")
    if b == 0.0:
        return 0.0
    bf = profile.b_factor()
    if bf <= 0.0:
        raise ValueError("profile has no diffusion encoding (int F^2 = 0)")
    return math.sqrt(b / (GAMMA ** 2 * bf))


@dataclass
class GradientSpec:
    """Unit gradient direction plus amplitude, one of b or g given."""

    direction: np.ndarray
    g: float | None = None
    b: float | None = None

    def __post_init__(self):
        q = np.asarray(self.direction, dtype=float)
        if q.shape != (3,):
            qfull = np.zeros(3)
            qfull[: q.size] = q
            q = qfull
        norm = np.linalg.norm(q)
        if norm == 0.0:
            raise ValueError("gradient direction must be nonzero")
        self.direction = q / norm
        if self.g is None and self.b is None:
            raise ValueError("one of g or b is required")
        if self.g is not None and self.g < 0.0:
            raise ValueError("g must be non-negative")
        if self.b is not None and self.b < 0.0:
            raise ValueError("b must be non-negative")

    def resolve(self, profile: TemporalProfile) -> tuple[float, float]:
        """Return (b, g) with the missing one computed from the profile."""
        if self.g is not None and self.b is None:
            return b_from_g(profile, self.g), self.g
        if self.b is not None and self.g is None:
            return self.b, g_from_b(profile, self.b)
        return self.b, self.g


def _check_pulse_args(delta, Delta, n=None, ramp=None):
    if not (0.0 < delta <= Delta):
        raise ValueError(f"need 0 < delta <= Delta, got delta={delta}, Delta={Delta}")
    if n is not None and (int(n) != n or n < 1):
        raise ValueError(f"oscillation count must be a positive integer, got {n}")
    if ramp is not None and not (0.0 < ramp < delta / 2.0):
        raise ValueError(f"need 0 < ramp < delta/2, got ramp={ramp}")


def pgse(delta: float, Delta: float) -> TemporalProfile:
    """Pulsed-gradient spin echo: +1 on [0, delta], -1 on (Delta, Delta+delta]."""
    _check_pulse_args(delta, Delta)
    segs = [Segment(0.0, delta, "const", a=1.0)]
    if Delta > delta:
        segs.append(Segment(delta, Delta, "const", a=0.0))
    segs.append(Segment(Delta, Delta + delta, "const", a=-1.0))
    return TemporalProfile(segs, name="pgse")


def double_pgse(delta: float, Delta: float) -> TemporalProfile:
    """Two identical PGSE blocks back to back (echo time 2(Delta+delta))."""
    _check_pulse_args(delta, Delta)
    block = delta + Delta
    segs = []
    for off in (0.0, block):
        segs.append(Segment(off, off + delta, "const", a=1.0))
        if Delta > delta:
            segs.append(Segment(off + delta, off + Delta, "const", a=0.0))
        segs.append(Segment(off + Delta, off + block, "const", a=-1.0))
    return TemporalProfile(segs, name="double_pgse")


def cos_ogse(delta: float, Delta: float, n: int) -> TemporalProfile:
    """Oscillating gradient, cosine flavour: omega = 2*n*pi/delta.

    The second pulse is the negated first one shifted by tau = (delta+Delta)/2.
    """
    _check_pulse_args(delta, Delta, n=n)
    omega = 2.0 * n * math.pi / delta
    tau = 0.5 * (delta + Delta)
    segs = [Segment(0.0, delta, "cos", a=1.0, omega=omega)]
    if tau > delta:
        segs.append(Segment(delta, tau, "const", a=0.0))
    segs.append(Segment(tau, tau + delta, "cos", a=-1.0, omega=omega))
    if delta + Delta > tau + delta:
        segs.append(Segment(tau + delta, delta + Delta, "const", a=0.0))
    return TemporalProfile(segs, name="cos_ogse")


def sin_ogse(delta: float, Delta: float, n: int) -> TemporalProfile:
    """Oscillating gradient, sine flavour: omega = 2*n*pi/delta."""
    _check_pulse_args(delta, Delta, n=n)
    omega = 2.0 * n * math.pi / delta
    tau = 0.5 * (delta + Delta)
    segs = [Segment(0.0, delta, "sin", a=1.0, omega=omega)]
    if tau > delta:
        segs.append(Segment(delta, tau, "const", a=0.0))
    segs.append(Segment(tau, tau + delta, "sin", a=-1.0, omega=omega))
    if delta + Delta > tau + delta:
        segs.append(Segment(tau + delta, delta + Delta, "const", a=0.0))
    return TemporalProfile(segs, name="sin_ogse")


def _trapezoid_block(segs, off, delta, ramp, sign):
    slope = sign / ramp
    segs.append(Segment(off, off + ramp, "linear", a=0.0, b=slope))
    segs.append(Segment(off + ramp, off + delta - ramp, "const", a=sign))
    segs.append(Segment(off + delta - ramp, off + delta, "linear", a=sign, b=-slope))


def trapezoidal_pgse(delta: float, Delta: float, ramp: float) -> TemporalProfile:
    """PGSE with symmetric linear ramps of the given duration on both pulses."""
    _check_pulse_args(delta, Delta, ramp=ramp)
    segs = []
    _trapezoid_block(segs, 0.0, delta, ramp, +1.0)
    if Delta > delta:
        segs.append(Segment(delta, Delta, "const", a=0.0))
    _trapezoid_block(segs, Delta, delta, ramp, -1.0)
    return TemporalProfile(segs, name="trap_pgse")


def double_trapezoidal_pgse(delta: float, Delta: float, ramp: float) -> TemporalProfile:
    """Two trapezoidal PGSE blocks back to back."""
    _check_pulse_args(delta, Delta, ramp=ramp)
    block = delta + Delta
    segs = []
    for off in (0.0, block):
        _trapezoid_block(segs, off, delta, ramp, +1.0)
        if Delta > delta:
            segs.append(Segment(off + delta, off + Delta, "const", a=0.0))
        _trapezoid_block(segs, off + Delta, delta, ramp, -1.0)
    return TemporalProfile(segs, name="double_trap_pgse")


PROFILE_BUILDERS = {
    "pgse": pgse,
    "double_pgse": double_pgse,
    "cos_ogse": cos_ogse,
    "sin_ogse": sin_ogse,
    "trap_pgse": trapezoidal_pgse,
    "double_trap_pgse": double_trapezoidal_pgse,
}
