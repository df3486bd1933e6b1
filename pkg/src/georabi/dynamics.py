"""Driven, rotating-frame and geometrical propagation of the two decoupled states.

Conventions (ħ = 1):

* The drive is ``2 F H′ cos θ(t)`` with ``θ̇ = ω(t)``; ``F`` scales the
  model's drive operator.
* ``f`` is stored including its leading factor ``i``; in the real gauge it
  is purely imaginary and the rotation rate ``iκ = i f·λ̇`` is real.
* Rotating frame: ``a₀ = c₀`` and ``a₂ = e^{iθ} c₂`` with energies measured
  from ``E₀``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.interpolate import CubicSpline
from scipy.special import roots_legendre

from . import kernels
from .paths import ArcPath, ChainPath, EllipsePath, ParamPath
from .spectrum import DegeneracyError, EigenFrame, HamiltonianModel, ParamVector, SpectrumError

__all__ = [
    "DriveSchedule",
    "StepControl",
    "EffectiveField",
    "StarkShifts",
    "EvolutionRecord",
    "AdiabaticityReport",
    "Surface",
    "ConvergenceError",
    "RealnessError",
    "local_data",
    "stark_shifts",
    "resonant_omega",
    "effective_kappa",
    "effective_field_f",
    "PathSampler",
    "evolve_full",
    "evolve_rwa",
    "evolve_geometric",
    "gamma_line",
    "gamma_surface",
    "adiabaticity_report",
    "flag_for",
]

OK_LIMIT = 0.05
MARGINAL_LIMIT = 0.2


class ConvergenceError(RuntimeError):
    pass


class RealnessError(ValueError):
    """The bracketed products in f are not real; use evolve_geometric instead of Γ."""


@dataclass(frozen=True)
class DriveSchedule:
    """Drive amplitude and frequency rule.

    ``omega_rule`` is ``"tracked"`` (ω follows the Stark-corrected 0↔2 gap)
    or ``"fixed"`` (constant ``omega``). ``stark_rule`` selects the Stark
    formula used for tracking, see :func:`stark_shifts`.
    """

    amplitude: float = 1.0
    omega_rule: str = "tracked"
    omega: float | None = None
    stark_rule: str = "sideband"

    def __post_init__(self):
        if not math.isfinite(self.amplitude):
            raise ValueError("amplitude must be finite")
        if self.omega_rule not in ("tracked", "fixed"):
            raise ValueError(f"unknown omega_rule {self.omega_rule!r}")
        if self.omega_rule == "fixed" and (self.omega is None or self.omega <= 0):
            raise ValueError("fixed omega_rule needs a positive omega")
        if self.stark_rule not in STARK_RULES:
            raise ValueError(f"unknown stark_rule {self.stark_rule!r}")


@dataclass(frozen=True)
class StepControl:
    steps_per_period: int = 48
    frames_per_cycle: int = 200
    halving_tol: float = 1e-6
    max_doublings: int = 4
    check: bool = True
    store: int = 400


@dataclass(frozen=True)
class EffectiveField:
    lam: ParamVector
    f: np.ndarray
    kappa: complex | None = None
    stark: tuple | None = None
    detuning: float | None = None

    @property
    def rate(self) -> np.ndarray:
        """i·f, the real integrand of Γ in the real gauge."""
        return 1j * self.f


@dataclass(frozen=True)
class StarkShifts:
    delta0: float
    delta2: float
    ill_conditioned: bool = False

    def __iter__(self):
        return iter((self.delta0, self.delta2))

    def __getitem__(self, i):
        return (self.delta0, self.delta2)[i]


@dataclass(frozen=True)
class EvolutionRecord:
    times: np.ndarray
    amplitudes: np.ndarray
    populations: np.ndarray
    gamma_accumulated: np.ndarray
    frame: str
    diagnostics: dict = field(default_factory=dict)
    rotating: np.ndarray | None = None  # (a0, a2) for full runs
    theta: np.ndarray | None = None

    def norm_error(self) -> float:
        return float(np.max(np.abs(np.sum(np.abs(self.amplitudes) ** 2, axis=1) - 1.0)))

    @property
    def final(self) -> np.ndarray:
        return self.amplitudes[-1]

    def role_populations(self, roles) -> np.ndarray:
        """(P₀, P₂) over time; for two-component records this is just the populations."""
        if self.populations.shape[1] == 2:
            return self.populations
        return self.populations[:, [roles.state0, roles.state2]]


@dataclass(frozen=True)
class AdiabaticityReport:
    nonadiabatic_max: float
    offresonance_max: float
    nonadiabatic: np.ndarray  # [probe, j in (0, 2), aux]
    offresonance: np.ndarray
    times: np.ndarray

    @property
    def worst(self) -> float:
        return max(self.nonadiabatic_max, self.offresonance_max)

    @property
    def flag(self) -> str:
        return flag_for(self.worst)

    def as_dict(self) -> dict:
        return {
            "nonadiabatic_max": self.nonadiabatic_max,
            "offresonance_max": self.offresonance_max,
            "flag": self.flag,
        }


def flag_for(ratio: float) -> str:
    if ratio < OK_LIMIT:
        return "ok"
    if ratio < MARGINAL_LIMIT:
        return "marginal"
    return "violated"


# ---------------------------------------------------------------------------
# local quantities


@dataclass
class LocalData:
    frame: EigenFrame
    hp: np.ndarray
    coupling: np.ndarray  # [μ, i, j]

    @property
    def energies(self) -> np.ndarray:
        return self.frame.energies


def local_data(model: HamiltonianModel, lam: ParamVector, F: float = 1.0,
               reference: EigenFrame | None = None) -> LocalData:
    frame = model.eigenframe(lam, reference=reference)
    hp = F * model.hprime_eigen(frame)
    c = model.coupling_tensor(lam, frame=frame).entries
    return LocalData(frame=frame, hp=hp, coupling=c)


def _field_terms(model, data: LocalData, ddt: np.ndarray) -> complex | np.ndarray:
    """Σ_aux i ⟨0|∂1⟩H′₁₂/(E₁-E₀) + i H′₀₁⟨1|∂2⟩/(E₁-E₂) with ∂ given by ``ddt``."""
    r = model.roles
    e = data.energies
    i0, i2 = r.state0, r.state2
    total = 0j
    for a in r.auxiliary:
        total = total + 1j * ddt[..., i0, a] * data.hp[a, i2] / (e[a] - e[i0])
        total = total + 1j * data.hp[i0, a] * ddt[..., a, i2] / (e[a] - e[i2])
    return total


def effective_field_f(model: HamiltonianModel, lam: ParamVector, F: float = 1.0,
                      reference: EigenFrame | None = None, data: LocalData | None = None) -> EffectiveField:
    data = data or local_data(model, lam, F, reference)
    f = np.asarray(_field_terms(model, data, data.coupling), dtype=complex)
    f = np.broadcast_to(f, (len(lam),)).copy()
    return EffectiveField(lam=lam, f=f)


def effective_kappa(model: HamiltonianModel, lam: ParamVector, velocity, F: float = 1.0,
                    reference: EigenFrame | None = None, data: LocalData | None = None) -> complex:
    """Effective Rabi frequency from the time-derivative couplings ⟨Φ_i|Φ̇_j⟩."""
    data = data or local_data(model, lam, F, reference)
    nac = np.tensordot(np.asarray(velocity, dtype=float), data.coupling, axes=1)
    return complex(_field_terms(model, data, nac))


STARK_RULES = ("quasistatic", "sideband", "none")


def stark_shifts(model: HamiltonianModel, lam: ParamVector, velocity, F: float = 1.0, rule: str = "quasistatic",
                 omega: float | None = None, reference: EigenFrame | None = None,
                 data: LocalData | None = None, ill_tol: float = 1e-6) -> StarkShifts:
    """Second-order shifts of states 0 and 2 from the auxiliary states.

    ``rule="quasistatic"`` uses ``[2|H′₁ⱼ|² + |⟨Φⱼ|Φ̇₁⟩|²]/(Eⱼ - E₁)``, the
    quasi-static limit of the drive. ``rule="sideband"`` keeps both drive
    sidebands, ``|H′₁ⱼ|²[1/(Eⱼ-E₁+ω) + 1/(Eⱼ-E₁-ω)]``, which reduces to the
    former as ω → 0. ``rule="none"`` returns zeros.
    """
    if rule not in STARK_RULES:
        raise ValueError(f"unknown Stark rule {rule!r}")
    data = data or local_data(model, lam, F, reference)
    if rule == "none":
        return StarkShifts(0.0, 0.0)
    r = model.roles
    e = data.energies
    nac = np.tensordot(np.asarray(velocity, dtype=float), data.coupling, axes=1)
    if rule == "sideband" and omega is None:
        omega = e[r.state2] - e[r.state0]
    out = []
    ill = False
    scale = max(float(np.ptp(e)), 1e-300)
    for j in (r.state0, r.state2):
        s = 0.0
        for a in r.auxiliary:
            gap = e[j] - e[a]
            if abs(gap) < 1e-12 * scale:
                raise SpectrumError(f"state {j} degenerate with auxiliary {a}")
            ill |= abs(gap) < ill_tol * scale
            drive2 = abs(data.hp[a, j]) ** 2
            if rule == "quasistatic":
                s += 2.0 * drive2 / gap
            else:
                d_plus, d_minus = gap + omega, gap - omega
                ill |= min(abs(d_plus), abs(d_minus)) < ill_tol * scale
                s += drive2 * (1.0 / d_plus + 1.0 / d_minus)
            s += abs(nac[j, a]) ** 2 / gap
        out.append(float(s))
    return StarkShifts(out[0], out[1], ill)


def resonant_omega(model: HamiltonianModel, lam: ParamVector, velocity, F: float = 1.0, rule: str = "quasistatic",
                   reference: EigenFrame | None = None, data: LocalData | None = None) -> float:
    """ω = E₂ - E₀ - (δE₀ - δE₂), iterated to self-consistency for the sideband rule."""
    data = data or local_data(model, lam, F, reference)
    r = model.roles
    bare = data.energies[r.state2] - data.energies[r.state0]
    omega = bare
    for _ in range(50 if rule == "sideband" else 1):
        d = stark_shifts(model, lam, velocity, F, rule=rule, omega=omega, data=data)
        new = bare - (d.delta0 - d.delta2)
        converged = abs(new - omega) <= 1e-15 * abs(bare)
        omega = new
        if converged:
            break
    if omega <= 0:
        raise SpectrumError(f"resonant frequency {omega} is not positive; check role assignment")
    return float(omega)


# ---------------------------------------------------------------------------
# frames along a path


def _needs_tracking(model) -> bool:
    return not getattr(model, "globally_gauged", False)


class _GaugeTracker:
    """Sequentially tracked frames on a uniform grid, used as gauge references."""

    def __init__(self, model, path: ParamPath, n: int = 256):
        self.model = model
        self.enabled = _needs_tracking(model)
        self.path = path
        if not self.enabled:
            return
        self.fractions = np.linspace(0.0, 1.0, n + 1)
        frames = []
        ref = None
        for p in path.waypoints(self.fractions):
            ref = model.eigenframe(ParamVector(path.names, p), reference=ref)
            frames.append(ref)
        self.frames = frames

    def reference(self, t: float):
        return self.at_fraction(t / self.path.duration if self.path.duration > 0 else 0.0)

    def at_fraction(self, s: float):
        if not self.enabled:
            return None
        k = int(np.argmin(np.abs(self.fractions - s)))
        return self.frames[k]


@dataclass
class PathSampler:
    """Eigen-data along a path on a time grid, tracked for gauge continuity."""

    model: HamiltonianModel
    path: ParamPath
    drive: DriveSchedule
    times: np.ndarray
    energies: np.ndarray
    hp: np.ndarray
    nac: np.ndarray
    kappa: np.ndarray
    stark: np.ndarray
    omega: np.ndarray
    frames: list

    @classmethod
    def build(cls, model, path, drive: DriveSchedule, frames_per_cycle: int = 200,
              times: np.ndarray | None = None) -> "PathSampler":
        if times is None:
            times = _sample_times(path, frames_per_cycle)
        F = drive.amplitude
        n = model.dimension
        g = len(times)
        energies = np.empty((g, n))
        hp = np.empty((g, n, n))
        nac = np.empty((g, n, n))
        kappa = np.empty(g, dtype=complex)
        stark = np.empty((g, 2))
        omega = np.empty(g)
        frames = []
        ref = None
        for k, t in enumerate(times):
            lam = path.point(t)
            vel = path.velocity(t)
            data = local_data(model, lam, F, reference=ref if _needs_tracking(model) else None)
            ref = data.frame
            frames.append(data.frame)
            energies[k] = data.energies
            hp[k] = data.hp
            nac[k] = np.tensordot(vel, data.coupling, axes=1)
            kappa[k] = effective_kappa(model, lam, vel, F, data=data)
            if drive.omega_rule == "tracked":
                omega[k] = resonant_omega(model, lam, vel, F, rule=drive.stark_rule, data=data)
            else:
                omega[k] = drive.omega
            w = omega[k] if drive.stark_rule == "sideband" else None
            stark[k] = tuple(stark_shifts(model, lam, vel, F, rule=drive.stark_rule, omega=w, data=data))
        return cls(model, path, drive, np.asarray(times, dtype=float), energies, hp, nac, kappa, stark, omega, frames)

    def spline(self, values: np.ndarray):
        return _piecewise_spline(self.path, self.times, values)


def _sample_times(path: ParamPath, frames_per_cycle: int) -> np.ndarray:
    cycles = getattr(path, "cycles", 1.0)
    bps = path.breakpoints()
    total = max(int(math.ceil(frames_per_cycle * cycles)), 4)
    pieces = [np.array([bps[0]])]
    for lo, hi in zip(bps[:-1], bps[1:]):
        m = max(int(math.ceil(total * (hi - lo) / path.duration)), 4)
        pieces.append(np.linspace(lo, hi, m + 1)[1:])
    return np.concatenate(pieces)


class _PiecewiseCubic:
    """Cubic splines per smooth piece of the path, exposed as one coefficient table."""

    def __init__(self, knots: np.ndarray, coef: np.ndarray):
        self.knots = knots  # (G+1,)
        self.coef = coef  # (G, 4, ...) ascending powers

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        g = np.clip(np.searchsorted(self.knots, t, side="right") - 1, 0, len(self.coef) - 1)
        c = self.coef[g]  # t.shape + (4,) + value shape
        u = (t - self.knots[g]).reshape(t.shape + (1,) * (self.coef.ndim - 2))
        c0, c1, c2, c3 = (np.take(c, p, axis=t.ndim) for p in range(4))
        return c0 + u * (c1 + u * (c2 + u * c3))


def _piecewise_spline(path: ParamPath, times: np.ndarray, values: np.ndarray) -> _PiecewiseCubic:
    bps = path.breakpoints()
    coefs = []
    knots = [times[0]]
    start = 0
    for hi in bps[1:]:
        stop = int(np.searchsorted(times, hi, side="right"))
        seg_t = times[start:stop]
        seg_v = values[start:stop]
        if len(seg_t) >= 2:
            bc = "not-a-knot" if len(seg_t) >= 4 else "natural"
            cs = CubicSpline(seg_t, seg_v, axis=0, bc_type=bc)
            c = np.moveaxis(cs.c[::-1], 0, 1)  # (G, 4, ...)
            coefs.append(c)
            knots.extend(seg_t[1:])
        start = stop - 1
    return _PiecewiseCubic(np.asarray(knots), np.concatenate(coefs, axis=0))


# ---------------------------------------------------------------------------
# propagators


def _check_norm(psi: np.ndarray, tol: float = 1e-10):
    n = float(np.vdot(psi, psi).real)
    if abs(n - 1.0) > tol:
        raise ValueError(f"initial state must be normalized, |ψ|² = {n}")


def evolve_full(model: HamiltonianModel, path: ParamPath, drive: DriveSchedule, psi0,
                control: StepControl = StepControl(), sampler: PathSampler | None = None,
                backend: str | None = None, keep_diagonal: bool = False,
                couplings: str = "star") -> EvolutionRecord:
    """Integrate the driven N-level equations in the instantaneous eigenbasis.

    ``couplings="star"`` links every auxiliary to states 0 and 2 only (plus
    any direct 0-2 element of the model), so auxiliaries act independently;
    ``"all"`` keeps auxiliary-auxiliary drive and motion couplings too.
    Diagonal drive elements ⟨Φⱼ|H′|Φⱼ⟩ are left out unless ``keep_diagonal``.

    ``psi0`` holds eigenbasis amplitudes at t = 0. The diagonal energies are
    removed analytically (interaction picture), θ and the level phases are
    integrated alongside the amplitudes with fixed-step RK4, and the step is
    halved until the final state stops changing by more than
    ``control.halving_tol``.
    """
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (model.dimension,):
        raise ValueError(f"psi0 must have {model.dimension} components")
    _check_norm(psi0)
    s = sampler or PathSampler.build(model, path, drive, control.frames_per_cycle)
    r = model.roles
    e_rel = s.energies - s.energies[:, [r.state0]]
    sp_e = s.spline(e_rel)
    mask = _coupling_mask(model, couplings)
    drive_m = 2.0 * s.hp * mask
    if keep_diagonal:
        drive_m = drive_m + 2.0 * s.hp * np.eye(model.dimension)
    sp_w = s.spline(drive_m)
    sp_a = s.spline(s.nac * mask)
    sp_o = s.spline(s.omega[:, None])
    tables = dict(
        knots=sp_e.knots,
        e=np.ascontiguousarray(sp_e.coef),
        w=np.ascontiguousarray(sp_w.coef),
        a=np.ascontiguousarray(sp_a.coef),
        o=np.ascontiguousarray(sp_o.coef[..., 0]),
    )
    period = 2.0 * math.pi / float(np.max(np.abs(s.omega)))
    fastest = max(period, 1e-300)
    n_steps = max(int(math.ceil(path.duration / fastest * control.steps_per_period)), 16)
    stride = max(n_steps // control.store, 1)

    def run(nsteps, stride):
        h = path.duration / nsteps
        return kernels.propagate(tables, psi0, np.zeros(model.dimension), 0.0, 0.0, h, nsteps, stride,
                                 backend=backend)

    out = run(n_steps, stride)
    doublings = 0
    change = math.nan
    if control.check:
        while True:
            finer = run(2 * n_steps, 2 * stride)
            change = float(np.max(np.abs(finer[1][-1] - out[1][-1])))
            n_steps, stride, out = 2 * n_steps, 2 * stride, finer
            if change <= control.halving_tol:
                break
            doublings += 1
            if doublings > control.max_doublings:
                raise ConvergenceError(f"step halving did not converge (last change {change:.2e})")
    times, b, phi, theta = out
    c = b * np.exp(-1j * phi)
    rot = np.stack([c[:, r.state0], np.exp(1j * theta) * c[:, r.state2]], axis=1)
    pops = np.abs(c) ** 2
    kap = s.spline(np.stack([s.kappa.real, s.kappa.imag], axis=1))
    gam = _cumulative_gamma(kap, times)
    rec = EvolutionRecord(
        times=times, amplitudes=c, populations=pops, gamma_accumulated=gam, frame="lab",
        diagnostics={"steps": n_steps, "halving_change": change, "backend": kernels.resolve(backend)},
        rotating=rot, theta=theta,
    )
    _assert_unitary(rec)
    return rec


def _coupling_mask(model, couplings: str) -> np.ndarray:
    n = model.dimension
    if couplings == "all":
        return 1.0 - np.eye(n)
    if couplings != "star":
        raise ValueError(f"unknown coupling topology {couplings!r}")
    r = model.roles
    m = np.zeros((n, n))
    for j in (r.state0, r.state2):
        m[j, :] = 1.0
        m[:, j] = 1.0
    np.fill_diagonal(m, 0.0)
    return m


def _cumulative_gamma(kap_spline: _PiecewiseCubic, times: np.ndarray) -> np.ndarray:
    """∫ Re(iκ) dt at the requested times (Gauss–Legendre on each interval)."""
    x, w = roots_legendre(6)
    out = np.zeros(len(times))
    for k in range(1, len(times)):
        lo, hi = times[k - 1], times[k]
        tt = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        vals = kap_spline(tt)
        rate = -vals[:, 1]  # Re(iκ) = -Im κ
        out[k] = out[k - 1] + 0.5 * (hi - lo) * np.dot(w, rate)
    return out


def _assert_unitary(rec: EvolutionRecord, tol: float = 1e-6):
    err = rec.norm_error()
    if err > tol:
        raise ConvergenceError(f"norm drifted by {err:.2e}")


def evolve_rwa(model: HamiltonianModel, path: ParamPath, drive: DriveSchedule, psi0,
               control: StepControl = StepControl(), sampler: PathSampler | None = None,
               rtol: float = 1e-10, atol: float = 1e-12) -> EvolutionRecord:
    """Two-level rotating-frame evolution with off-diagonal κ(t).

    With a tracked drive the diagonal is equal and is dropped; with a fixed
    frequency the relative diagonal δE₂ - δE₀ + Δ is kept.
    """
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (2,):
        raise ValueError("psi0 must have two components (a0, a2)")
    _check_norm(psi0)
    s = sampler or PathSampler.build(model, path, drive, control.frames_per_cycle)
    r = model.roles
    kap = s.spline(np.stack([s.kappa.real, s.kappa.imag], axis=1))
    if drive.omega_rule == "tracked":
        diag = None
    else:
        gap = s.energies[:, r.state2] - s.energies[:, r.state0]
        rel = s.stark[:, 1] - s.stark[:, 0] + gap - s.omega
        diag = s.spline(rel[:, None])

    def rhs(t, y):
        k = kap(t)
        kc = k[0] + 1j * k[1]
        a0, a2 = y[0] + 1j * y[1], y[2] + 1j * y[3]
        d = 0.0 if diag is None else float(diag(t)[0])
        da0 = -1j * (kc * a2)
        da2 = -1j * (np.conj(kc) * a0 + d * a2)
        return [da0.real, da0.imag, da2.real, da2.imag]

    t_eval = np.linspace(0.0, path.duration, control.store + 1)
    y0 = [psi0[0].real, psi0[0].imag, psi0[1].real, psi0[1].imag]
    sol = solve_ivp(rhs, (0.0, path.duration), y0, method="DOP853", t_eval=t_eval, rtol=rtol, atol=atol,
                    max_step=path.duration / 64)
    if not sol.success:
        raise ConvergenceError(sol.message)
    amp = np.stack([sol.y[0] + 1j * sol.y[1], sol.y[2] + 1j * sol.y[3]], axis=1)
    rec = EvolutionRecord(
        times=sol.t, amplitudes=amp, populations=np.abs(amp) ** 2,
        gamma_accumulated=_cumulative_gamma(kap, sol.t), frame="rotating",
        diagnostics={"nfev": sol.nfev},
    )
    _assert_unitary(rec)
    return rec


def _su2_step(rx: float, ry: float) -> np.ndarray:
    """exp(-i (rx σx + ry σy))."""
    r = math.hypot(rx, ry)
    if r == 0.0:
        return np.eye(2, dtype=complex)
    c, s = math.cos(r), math.sin(r) / r
    return np.array([[c, -1j * s * (rx - 1j * ry)], [-1j * s * (rx + 1j * ry), c]])


def _segment_grid(path: ParamPath, segments: int) -> np.ndarray:
    """Segment edges in traversal fraction, with every path corner on an edge."""
    bf = path.break_fractions()
    pieces = [np.array([0.0])]
    left = segments
    for i, (lo, hi) in enumerate(zip(bf[:-1], bf[1:])):
        if hi <= lo:
            continue
        m = left if i == len(bf) - 2 else max(int(round(segments * (hi - lo))), 1)
        m = max(min(m, left - (len(bf) - 2 - i)), 1)
        left -= m
        pieces.append(np.linspace(lo, hi, m + 1)[1:])
    return np.concatenate(pieces)


_GL2 = (0.5 - math.sqrt(3.0) / 6.0, 0.5 + math.sqrt(3.0) / 6.0)
# fourth-order commutator-free weights for two exponentials per segment
_CF4 = ((0.25 + math.sqrt(3.0) / 6.0, 0.25 - math.sqrt(3.0) / 6.0),
        (0.25 - math.sqrt(3.0) / 6.0, 0.25 + math.sqrt(3.0) / 6.0))


def _geometric_product(model, path: ParamPath, F: float, psi0: np.ndarray, segments: int):
    """Each segment applies two factors built from f·dλ/ds at its two Gauss nodes.

    With commuting factors (real rate) this is Gauss–Legendre quadrature of
    Γ; otherwise the pairing is the fourth-order commutator-free product.
    """
    fr = _segment_grid(path, segments)
    ds = np.diff(fr)
    nodes = np.stack([fr[:-1] + g * ds for g in _GL2], axis=1)
    pts = path.waypoints(nodes.ravel()).reshape(nodes.shape + (-1,))
    tans = path.tangents(nodes.ravel()).reshape(nodes.shape + (-1,))
    tracker = _GaugeTracker(model, path, n=max(2 * len(ds), 64)) if _needs_tracking(model) else None
    psi = psi0.copy()
    states = [psi.copy()]
    gam = [0.0]
    worst_imag = 0.0
    for k in range(len(ds)):
        ref = tracker.at_fraction(0.5 * (fr[k] + fr[k + 1])) if tracker is not None else None
        phi = []
        for q in range(2):
            lam = ParamVector(path.names, pts[k, q])
            node_ref = model.eigenframe(lam, reference=ref) if ref is not None else None
            phi.append(ds[k] * complex(effective_field_f(model, lam, F, reference=node_ref).f @ tans[k, q]))
        for w0, w1 in _CF4:
            part = w0 * phi[0] + w1 * phi[1]
            psi = _su2_step(part.real, -part.imag) @ psi
        states.append(psi.copy())
        g = 0.5j * (phi[0] + phi[1])
        worst_imag = max(worst_imag, abs(g.imag))
        gam.append(gam[-1] + g.real)
    return fr * path.duration, np.array(states), np.array(gam), worst_imag


def evolve_geometric(model: HamiltonianModel, path: ParamPath, F: float, psi0, segments: int = 400,
                     check: bool = True, tol: float = 1e-4) -> EvolutionRecord:
    """Path-ordered product of exp(-i{[Re f]σx - [Im f]σy}·Δλ) over path segments.

    Only the curve enters, sampled at fixed fractions of the traversal, so
    the result does not depend on how fast the path is traversed. With ``check`` the product is recomputed with
    half as many segments and a change above ``tol`` raises ConvergenceError.
    """
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (2,):
        raise ValueError("psi0 must have two components (a0, a2)")
    _check_norm(psi0)
    if segments < 2:
        raise ValueError("need at least two segments")
    ts, states, gam, worst = _geometric_product(model, path, F, psi0, segments)
    change = math.nan
    if check:
        _, coarse, _, _ = _geometric_product(model, path, F, psi0, segments // 2)
        change = float(np.max(np.abs(coarse[-1] - states[-1])))
        if change > tol:
            raise ConvergenceError(f"{segments} segments not converged (halving change {change:.2e})")
    rec = EvolutionRecord(
        times=ts, amplitudes=states, populations=np.abs(states) ** 2, gamma_accumulated=gam,
        frame="rotating", diagnostics={"segments": segments, "halving_change": change, "max_imag_step": worst},
    )
    _assert_unitary(rec, 1e-9)
    return rec


# ---------------------------------------------------------------------------
# rotation angle


def _rate_along(model, path: ParamPath, F: float, tracker: _GaugeTracker | None, with_scale: bool = False):
    def integrand(t):
        lam = path.point(t)
        ref = tracker.reference(t) if tracker is not None else None
        ef = effective_field_f(model, lam, F, reference=ref)
        v = path.velocity(t)
        val = complex(1j * (ef.f @ v))
        if with_scale:
            return val, float(np.linalg.norm(ef.f) * np.linalg.norm(v))
        return val

    return integrand


def gamma_line(model: HamiltonianModel, path: ParamPath, F: float = 1.0, epsrel: float = 1e-10,
               realness_tol: float = 1e-6, return_residual: bool = False):
    """Γ = i∫ f·dλ by adaptive quadrature between the path's breakpoints.

    Raises RealnessError when Im(i f·λ̇) exceeds ``realness_tol`` relative to
    the largest |i f·λ̇| seen.
    """
    tracker = _GaugeTracker(model, path) if _needs_tracking(model) else None
    g = _rate_along(model, path, F, tracker)
    sized = _rate_along(model, path, F, tracker, with_scale=True)
    imag_seen = [0.0]
    mag_seen = [0.0]

    def re_part(t):
        v = g(t)
        imag_seen[0] = max(imag_seen[0], abs(v.imag))
        mag_seen[0] = max(mag_seen[0], abs(v))
        return v.real

    total = 0.0
    bps = path.breakpoints()
    for lo, hi in zip(bps[:-1], bps[1:]):
        if hi <= lo:
            continue
        # an absolute floor tied to |f|·|λ̇| keeps integrands that cancel to noise from stalling quad
        probe = max(sized(t)[1] for t in np.linspace(lo, hi, 17))
        if probe == 0.0:
            continue
        val, _ = quad(re_part, lo, hi, epsrel=epsrel, epsabs=1e-12 * probe * (hi - lo), limit=200)
        total += val
    residual = imag_seen[0] / mag_seen[0] if mag_seen[0] > 0 else 0.0
    if residual > realness_tol:
        raise RealnessError(
            f"i·f is not real along the path (relative imaginary part {residual:.2e}); use evolve_geometric"
        )
    return (total, residual) if return_residual else total


@dataclass(frozen=True)
class Surface:
    """Map (u, v) ∈ [u0,u1]×[v0,v1] → λ with the boundary oriented like the loop.

    ``periodic_v`` marks v as an angle (trapezoid rule); otherwise both
    directions use Gauss–Legendre nodes.
    """

    names: tuple
    mapping: object
    u_range: tuple
    v_range: tuple
    periodic_v: bool = False

    @classmethod
    def filled_ellipse(cls, path: EllipsePath) -> "Surface":
        c, ac, bs, ph = path.center, path.cos_amp, path.sin_amp, path.phase

        def mapping(u, v):
            return c + u * (ac * math.cos(v + ph) + bs * math.sin(v + ph))

        return cls(path.names, mapping, (0.0, 1.0), (0.0, 2 * math.pi), periodic_v=True)

    @classmethod
    def annular_sector(cls, names, r_inner, r_outer, phi_start, phi_end, center=(0.0, 0.0)) -> "Surface":
        c = np.asarray(center, dtype=float)

        def mapping(u, v):
            return c + u * np.array([math.cos(v), math.sin(v)])

        return cls(tuple(names), mapping, (r_inner, r_outer), (phi_start, phi_end))

    @classmethod
    def point(cls, names, at) -> "Surface":
        at = np.asarray(at, dtype=float)
        return cls(tuple(names), lambda u, v: at + 0.0 * u, (0.0, 0.0), (0.0, 2 * math.pi), True)

    def boundary(self, n: int = 256) -> np.ndarray:
        """Closed polyline around the region, edge by edge in (u, v) order."""
        (u0, u1), (v0, v1) = self.u_range, self.v_range
        s = np.linspace(0.0, 1.0, n, endpoint=False)
        edges = [(u0 + (u1 - u0) * s, np.full(n, v0)), (np.full(n, u1), v0 + (v1 - v0) * s),
                 (u1 - (u1 - u0) * s, np.full(n, v1)), (np.full(n, u0), v1 - (v1 - v0) * s)]
        return np.array([self.mapping(u, v) for us, vs in edges for u, v in zip(us, vs)], dtype=float)

    def winding(self, point) -> int:
        """Winding number of the boundary around ``point``."""
        d = self.boundary() - np.asarray(point, dtype=float)
        ang = np.arctan2(d[:, 1], d[:, 0])
        step = np.diff(np.append(ang, ang[0]))
        return int(round(np.sum((step + math.pi) % (2 * math.pi) - math.pi) / (2 * math.pi)))

    def jacobian(self, u, v, h=1e-7) -> float:
        du = (np.asarray(self.mapping(u + h, v)) - np.asarray(self.mapping(u - h, v))) / (2 * h)
        dv = (np.asarray(self.mapping(u, v + h)) - np.asarray(self.mapping(u, v - h))) / (2 * h)
        return float(du[0] * dv[1] - du[1] * dv[0])


def gamma_surface(model: HamiltonianModel, surface: Surface, F: float = 1.0, nodes: tuple = (8, 16),
                  h: float | Sequence[float] | None = None) -> float:
    """Γ as i∬ (∂_μ f_ν - ∂_ν f_μ) dμ dν over the surface, with a finite-difference curl."""
    if len(surface.names) != 2:
        raise ValueError("surface integral needs exactly two parameters")
    (u0, u1), (v0, v1) = surface.u_range, surface.v_range
    if u1 == u0 or v1 == v0:
        return 0.0
    for p in model.degeneracy_points():
        if surface.winding(p) != 0:
            raise DegeneracyError(f"surface encloses the degeneracy at {np.asarray(p).tolist()}; use gamma_line")
    xu, wu = roots_legendre(nodes[0])
    us = 0.5 * (u1 - u0) * xu + 0.5 * (u1 + u0)
    wu = 0.5 * (u1 - u0) * wu
    if surface.periodic_v:
        vs = v0 + (v1 - v0) * np.arange(nodes[1]) / nodes[1]
        wv = np.full(nodes[1], (v1 - v0) / nodes[1])
    else:
        xv, wv = roots_legendre(nodes[1])
        vs = 0.5 * (v1 - v0) * xv + 0.5 * (v1 + v0)
        wv = 0.5 * (v1 - v0) * wv
    extent = np.ptp(np.array([surface.mapping(u, v) for u in (u0, u1) for v in np.linspace(v0, v1, 9)]), axis=0)
    if h is None:
        h = 1e-4 * np.maximum(extent, 1e-12)
    h = np.broadcast_to(np.asarray(h, dtype=float), (2,))
    track = _needs_tracking(model)
    total = 0.0
    column_ref = None
    for i, u in enumerate(us):
        ref = None
        if track:
            column_ref = model.eigenframe(ParamVector(surface.names, surface.mapping(u, vs[0])), reference=column_ref)
            ref = column_ref
        for j, v in enumerate(vs):
            lam = ParamVector(surface.names, surface.mapping(u, v))
            if track:
                ref = model.eigenframe(lam, reference=ref)
            fs = []
            for mu in range(2):
                for sgn in (1.0, -1.0):
                    fs.append(effective_field_f(model, lam.shifted(mu, sgn * h[mu]), F, reference=ref).f)
            d0_f1 = (fs[0][1] - fs[1][1]) / (2 * h[0])
            d1_f0 = (fs[2][0] - fs[3][0]) / (2 * h[1])
            curl = 1j * (d0_f1 - d1_f0)
            total += wu[i] * wv[j] * curl.real * surface.jacobian(u, v)
    return float(total)


# ---------------------------------------------------------------------------
# diagnostics


def adiabaticity_report(model: HamiltonianModel, path: ParamPath, drive: DriveSchedule | None = None,
                        F: float | None = None, probes: int = 64) -> AdiabaticityReport:
    """Both smallness ratios at ``probes`` times for every auxiliary state.

    Non-adiabatic: |⟨Φⱼ|Φ̇₁⟩/(E₁-Eⱼ)|; off-resonance: |H′₁ⱼ/(|E₁-Eⱼ| - ω)|.
    """
    drive = drive or DriveSchedule()
    F = drive.amplitude if F is None else F
    r = model.roles
    ts = np.linspace(0.0, path.duration, probes)
    na = np.zeros((probes, 2, len(r.auxiliary)))
    off = np.zeros_like(na)
    ref = None
    for k, t in enumerate(ts):
        lam = path.point(t)
        vel = path.velocity(t)
        data = local_data(model, lam, F, reference=ref if _needs_tracking(model) else None)
        ref = data.frame
        e = data.energies
        nac = np.tensordot(vel, data.coupling, axes=1)
        if drive.omega_rule == "tracked":
            w = resonant_omega(model, lam, vel, F, rule=drive.stark_rule, data=data)
        else:
            w = drive.omega
        for jj, j in enumerate((r.state0, r.state2)):
            for aa, a in enumerate(r.auxiliary):
                na[k, jj, aa] = abs(nac[j, a] / (e[a] - e[j]))
                off[k, jj, aa] = abs(data.hp[a, j] / (abs(e[a] - e[j]) - w))
    return AdiabaticityReport(float(na.max(initial=0.0)), float(off.max(initial=0.0)), na, off, ts)
