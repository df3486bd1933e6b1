"""Time-parameterized curves λ(t) through parameter space."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .spectrum import ParamVector

__all__ = [
    "ParamPath",
    "EllipsePath",
    "ArcPath",
    "LinePath",
    "ChainPath",
    "SampledPath",
    "StaticPath",
]


class ParamPath:
    names: tuple
    duration: float
    cyclic: bool
    kind: str

    def position(self, t) -> np.ndarray:
        raise NotImplementedError

    def velocity(self, t) -> np.ndarray:
        raise NotImplementedError

    def point(self, t: float) -> ParamVector:
        return ParamVector(self.names, self.position(t))

    def breakpoints(self) -> list[float]:
        """Times where the velocity may jump; quadrature splits there."""
        return [0.0, self.duration]

    def closure_error(self) -> float:
        return float(np.max(np.abs(self.position(self.duration) - self.position(0.0))))

    def velocity_check(self, probes: int = 16, rel_step: float = 1e-6) -> float:
        """Largest relative mismatch between velocity() and a central difference of position()."""
        ts = self.duration * (np.arange(probes) + 0.5) / probes
        h = rel_step * self.duration
        worst = 0.0
        for t in ts:
            fd = (self.position(t + h) - self.position(t - h)) / (2 * h)
            v = self.velocity(t)
            scale = max(float(np.max(np.abs(v))), 1e-300)
            worst = max(worst, float(np.max(np.abs(fd - v))) / scale)
        return worst

    def waypoints(self, fractions) -> np.ndarray:
        """Points at fractions of the traversal; independent of speed for rescaled copies."""
        return self.position(np.asarray(fractions, dtype=float) * self.duration)

    def tangents(self, fractions) -> np.ndarray:
        """dλ/ds with s the traversal fraction in [0, 1]."""
        return self.velocity(np.asarray(fractions, dtype=float) * self.duration) * self.duration

    def break_fractions(self) -> list[float]:
        return [b / self.duration for b in self.breakpoints()] if self.duration > 0 else [0.0, 1.0]

    def rescaled(self, speed: float) -> "ParamPath":
        """Same curve traversed ``speed`` times faster."""
        return _Rescaled(self, speed)


class _Rescaled(ParamPath):
    def __init__(self, base: ParamPath, speed: float):
        if speed <= 0:
            raise ValueError("speed must be positive")
        self.base = base
        self.speed = float(speed)
        self.names = base.names
        self.duration = base.duration / self.speed
        self.cyclic = base.cyclic
        self.kind = base.kind

    def position(self, t):
        return self.base.position(np.asarray(t) * self.speed)

    def velocity(self, t):
        return self.base.velocity(np.asarray(t) * self.speed) * self.speed

    def breakpoints(self):
        return [b / self.speed for b in self.base.breakpoints()]

    def waypoints(self, fractions):
        return self.base.waypoints(fractions)

    def tangents(self, fractions):
        return self.base.tangents(fractions)

    def break_fractions(self):
        return self.base.break_fractions()


class EllipsePath(ParamPath):
    """λ_μ(t) = c_μ + A_μ cos(Ωt + φ) + B_μ sin(Ωt + φ) for ``cycles`` revolutions."""

    def __init__(self, names: Sequence[str], center, cos_amp, sin_amp, omega: float,
                 cycles: float = 1.0, phase: float = 0.0, kind: str = "analytic-ellipse"):
        self.names = tuple(names)
        self.center = np.asarray(center, dtype=float)
        self.cos_amp = np.asarray(cos_amp, dtype=float)
        self.sin_amp = np.asarray(sin_amp, dtype=float)
        if omega <= 0:
            raise ValueError("omega must be positive")
        if cycles <= 0:
            raise ValueError("cycles must be positive")
        self.omega = float(omega)
        self.cycles = float(cycles)
        self.phase = float(phase)
        self.duration = 2.0 * math.pi * self.cycles / self.omega
        self.cyclic = float(self.cycles).is_integer()
        self.kind = kind

    @classmethod
    def circle(cls, names, center, radius: float, omega: float, cycles: float = 1.0, phase: float = 0.0):
        return cls(names, center, [radius, 0.0], [0.0, radius], omega, cycles, phase, kind="analytic-circle")

    def position(self, t):
        t = np.asarray(t, dtype=float)
        arg = self.omega * t + self.phase
        c, s = np.cos(arg), np.sin(arg)
        return self.center + np.multiply.outer(c, self.cos_amp) + np.multiply.outer(s, self.sin_amp)

    def velocity(self, t):
        t = np.asarray(t, dtype=float)
        arg = self.omega * t + self.phase
        c, s = np.cos(arg), np.sin(arg)
        return self.omega * (np.multiply.outer(-s, self.cos_amp) + np.multiply.outer(c, self.sin_amp))

    def scaled(self, s: float) -> "EllipsePath":
        """Same center, amplitudes multiplied by ``s``."""
        return EllipsePath(self.names, self.center, s * self.cos_amp, s * self.sin_amp, self.omega,
                           self.cycles, self.phase, self.kind)

    def with_cycles(self, cycles: float) -> "EllipsePath":
        return EllipsePath(self.names, self.center, self.cos_amp, self.sin_amp, self.omega, cycles,
                           self.phase, self.kind)

    def with_omega(self, omega: float) -> "EllipsePath":
        return EllipsePath(self.names, self.center, self.cos_amp, self.sin_amp, omega, self.cycles,
                           self.phase, self.kind)


class ArcPath(ParamPath):
    """Circular arc in polar coordinates about ``center`` from angle φ₀ to φ₁ at uniform speed."""

    def __init__(self, names, center, radius: float, phi_start: float, phi_end: float, duration: float):
        self.names = tuple(names)
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.phi_start = float(phi_start)
        self.phi_end = float(phi_end)
        self.duration = float(duration)
        self.cyclic = math.isclose(abs(phi_end - phi_start) % (2 * math.pi), 0.0, abs_tol=1e-14) and phi_end != phi_start
        self.kind = "analytic-circle"

    def _phi(self, t):
        return self.phi_start + (self.phi_end - self.phi_start) * np.asarray(t, dtype=float) / self.duration

    def position(self, t):
        phi = self._phi(t)
        return self.center + self.radius * np.stack([np.cos(phi), np.sin(phi)], axis=-1)

    def velocity(self, t):
        phi = self._phi(t)
        rate = (self.phi_end - self.phi_start) / self.duration
        return self.radius * rate * np.stack([-np.sin(phi), np.cos(phi)], axis=-1)


class LinePath(ParamPath):
    def __init__(self, names, start, end, duration: float):
        self.names = tuple(names)
        self.start = np.asarray(start, dtype=float)
        self.end = np.asarray(end, dtype=float)
        self.duration = float(duration)
        self.cyclic = False
        self.kind = "analytic-line"

    def position(self, t):
        u = np.asarray(t, dtype=float) / self.duration
        return self.start + np.multiply.outer(u, self.end - self.start)

    def velocity(self, t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to((self.end - self.start) / self.duration, t.shape + self.start.shape).copy()


class ChainPath(ParamPath):
    """Concatenation of paths end to end."""

    def __init__(self, segments: Sequence[ParamPath]):
        if not segments:
            raise ValueError("need at least one segment")
        self.segments = list(segments)
        self.names = segments[0].names
        self.offsets = np.concatenate([[0.0], np.cumsum([s.duration for s in segments])])
        self.duration = float(self.offsets[-1])
        for a, b in zip(segments[:-1], segments[1:]):
            if np.max(np.abs(a.position(a.duration) - b.position(0.0))) > 1e-10:
                raise ValueError("chain segments are not contiguous")
        self.cyclic = bool(np.max(np.abs(segments[-1].position(segments[-1].duration) - segments[0].position(0.0))) <= 1e-10)
        self.kind = "piecewise"

    @classmethod
    def annular_sector(cls, names, r_inner, r_outer, phi_start, phi_end, speed: float = 1.0):
        """Closed loop bounding {r_inner ≤ r ≤ r_outer, φ₀ ≤ φ ≤ φ₁}, counterclockwise."""
        origin = np.zeros(2)
        dphi = phi_end - phi_start
        p = lambda r, ph: np.array([r * math.cos(ph), r * math.sin(ph)])
        return cls([
            LinePath(names, p(r_inner, phi_start), p(r_outer, phi_start), (r_outer - r_inner) / speed),
            ArcPath(names, origin, r_outer, phi_start, phi_end, r_outer * abs(dphi) / speed),
            LinePath(names, p(r_outer, phi_end), p(r_inner, phi_end), (r_outer - r_inner) / speed),
            ArcPath(names, origin, r_inner, phi_end, phi_start, r_inner * abs(dphi) / speed),
        ])

    def _locate(self, t: float):
        k = int(np.clip(np.searchsorted(self.offsets, t, side="right") - 1, 0, len(self.segments) - 1))
        return k, t - self.offsets[k]

    def position(self, t):
        t = np.asarray(t, dtype=float)
        if t.ndim:
            return np.array([self.position(x) for x in t])
        k, u = self._locate(float(t))
        return self.segments[k].position(u)

    def velocity(self, t):
        t = np.asarray(t, dtype=float)
        if t.ndim:
            return np.array([self.velocity(x) for x in t])
        k, u = self._locate(float(t))
        return self.segments[k].velocity(u)

    def breakpoints(self):
        return [float(x) for x in self.offsets]


class SampledPath(ParamPath):
    """Cubic-spline interpolation through waypoints; periodic spline when cyclic."""

    def __init__(self, names, times, points, cyclic: bool | None = None):
        self.names = tuple(names)
        times = np.asarray(times, dtype=float)
        points = np.asarray(points, dtype=float)
        if cyclic is None:
            cyclic = bool(np.max(np.abs(points[0] - points[-1])) <= 1e-10)
        if cyclic:
            points = points.copy()
            points[-1] = points[0]
        self.cyclic = cyclic
        self.times = times - times[0]
        self.duration = float(self.times[-1])
        self._spline = CubicSpline(self.times, points, axis=0, bc_type="periodic" if cyclic else "not-a-knot")
        self._deriv = self._spline.derivative()
        self.kind = "sampled-with-cubic-interpolation"

    def position(self, t):
        return self._spline(t)

    def velocity(self, t):
        return self._deriv(t)


class StaticPath(ParamPath):
    def __init__(self, names, point, duration: float):
        self.names = tuple(names)
        self.point_value = np.asarray(point, dtype=float)
        self.duration = float(duration)
        self.cyclic = True
        self.kind = "static"

    def position(self, t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(self.point_value, t.shape + self.point_value.shape).copy()

    def velocity(self, t):
        t = np.asarray(t, dtype=float)
        return np.zeros(t.shape + self.point_value.shape)
