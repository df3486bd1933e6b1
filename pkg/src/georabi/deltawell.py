"""Bound states of a square well flanked by two attractive delta wells.

The potential is ``V(x) = -V_c θ(a-|x|) - U_l δ(x+a) - U_r δ(x-a)`` in units
with ħ = 1 and 2m = 1, so the Schrödinger equation reads ``-ψ'' + Vψ = Eψ``,
a delta strength ``γ`` equals ``U`` and the square-well depth is ``V_c = β²``.

Every wavefunction is kept in closed form as a short list of terms
``c · x**n · exp(z (x - x0))`` per region (left exterior, interior, right
exterior), which lets overlaps and position matrix elements be evaluated
exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.optimize import brentq

from .spectrum import (
    CouplingTensor,
    Roles,
    DegeneracyError,
    EigenFrame,
    HamiltonianModel,
    ParamVector,
    SpectrumError,
)

__all__ = [
    "DeltaWellPotential",
    "BoundState",
    "StateClassification",
    "ResolutionError",
    "bound_spectrum",
    "classify",
    "position_element",
    "overlap",
    "position_matrix",
    "DeltaWellModel",
    "as_model",
    "dense_grid_energies",
    "StatesFrame",
    "depth_ellipse",
    "energy_unit",
]

SERIES_BAND = 1e-10
_TERMS_SERIES = 40


class ResolutionError(SpectrumError):
    """The bound-state count is not stable under grid refinement."""


@dataclass(frozen=True)
class DeltaWellPotential:
    a: float
    gamma_l: float
    gamma_r: float
    beta: float

    def __post_init__(self):
        for name in ("a", "gamma_l", "gamma_r", "beta"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.a <= 0:
            raise ValueError("a must be positive")
        if self.gamma_r < 0 or self.gamma_l < self.gamma_r:
            raise ValueError("need gamma_l >= gamma_r >= 0 (left well deepest)")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")

    @property
    def v_c(self) -> float:
        return self.beta**2

    @property
    def zeta(self) -> float:
        """Unit length 1/γ_l."""
        return 1.0 / self.gamma_l

    @classmethod
    def from_depths(cls, a, gamma_l, eps_c, eps_r):
        """Build from depth energies ε_c = β², ε_r = γ_r²."""
        if eps_c < 0 or eps_r < 0:
            raise ValueError("depth energies must be non-negative")
        return cls(a=a, gamma_l=gamma_l, gamma_r=math.sqrt(eps_r), beta=math.sqrt(eps_c))

    @classmethod
    def standard(cls, zeta: float = 1.0) -> "DeltaWellPotential":
        """a = 44ζ, γ_r = 22/a, β = 7.8/a."""
        a = 44.0 * zeta
        return cls(a=a, gamma_l=1.0 / zeta, gamma_r=22.0 / a, beta=7.8 / a)

    def potential(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) < self.a, -self.v_c, 0.0)


# A term is (coef, z, n, x0) and stands for coef * x**n * exp(z * (x - x0)).
Term = tuple


def _eval_terms(terms: Sequence[Term], x, deriv: bool = False):
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape, dtype=complex)
    for c, z, n, x0 in terms:
        e = np.exp(z * (x - x0))
        if deriv:
            out += c * (n * x ** max(n - 1, 0) + z * x**n) * e if n else c * z * e
        else:
            out += c * x**n * e
    return out


def _power_exp_integral(k: int, z: complex, ylo: float, yhi: float) -> complex:
    """∫_{ylo}^{yhi} y^k e^{z y} dy; infinite limits need the integrand to vanish there."""
    finite = math.isfinite(ylo) and math.isfinite(yhi)
    span = max(abs(ylo), abs(yhi)) if finite else math.inf
    if finite and abs(z) * span < 0.5:
        total = 0j
        zj = 1.0 + 0j
        fact = 1.0
        for j in range(_TERMS_SERIES):
            p = k + j + 1
            total += zj / fact * (yhi**p - ylo**p) / p
            zj *= z
            fact *= j + 1
        return total

    def antider(y):
        if not math.isfinite(y):
            return 0j
        acc = 0j
        coeff = 1.0
        for l in range(k + 1):
            acc += (-1) ** l * coeff * y ** (k - l) / z ** (l + 1)
            coeff *= k - l
        return acc * np.exp(z * y)

    return antider(yhi) - antider(ylo)


def _segment_integral(ti: Sequence[Term], tj: Sequence[Term], lo: float, hi: float, m: int) -> float:
    """∫_{lo}^{hi} x^m f_i f_j dx for two term lists on a single region."""
    if hi <= lo:
        return 0.0
    total = 0j
    for ci, zi, ni, xi in ti:
        for cj, zj, nj, xj in tj:
            z = zi + zj
            p = ni + nj + m
            if not math.isfinite(lo):
                x0 = hi
            elif not math.isfinite(hi):
                x0 = lo
            else:
                x0 = hi if z.real > 0 else lo
            const = ci * cj * np.exp(z * x0 - zi * xi - zj * xj)
            acc = 0j
            for kk in range(p + 1):
                acc += math.comb(p, kk) * x0 ** (p - kk) * _power_exp_integral(kk, z, lo - x0, hi - x0)
            total += const * acc
    return total.real


@dataclass(frozen=True)
class BoundState:
    energy: float
    potential: DeltaWellPotential
    left: tuple
    interior: tuple
    right: tuple
    interior_character: str
    norm_constant: float
    index: int = -1

    @property
    def decay(self) -> float:
        return math.sqrt(-self.energy)

    def regions(self):
        a = self.potential.a
        return ((-math.inf, -a, self.left), (-a, a, self.interior), (a, math.inf, self.right))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        a = self.potential.a
        out = np.where(
            x < -a,
            _eval_terms(self.left, np.minimum(x, -a)).real,
            np.where(
                x > a,
                _eval_terms(self.right, np.maximum(x, a)).real,
                _eval_terms(self.interior, np.clip(x, -a, a)).real,
            ),
        )
        return out

    def derivative(self, x, side: str = "auto"):
        """ψ'(x); at x = ±a choose the one-sided limit with ``side`` in {'left', 'right'}."""
        x = np.asarray(x, dtype=float)
        a = self.potential.a
        if side == "auto":
            inner = _eval_terms(self.interior, np.clip(x, -a, a), deriv=True).real
            return np.where(
                x < -a,
                _eval_terms(self.left, np.minimum(x, -a), deriv=True).real,
                np.where(x > a, _eval_terms(self.right, np.maximum(x, a), deriv=True).real, inner),
            )
        if side not in ("left", "right"):
            raise ValueError("side must be 'left', 'right' or 'auto'")
        if np.isclose(x, -a):
            terms = self.left if side == "left" else self.interior
        elif np.isclose(x, a):
            terms = self.interior if side == "left" else self.right
        else:
            return self.derivative(x)
        return _eval_terms(terms, x, deriv=True).real

    def matching_residuals(self) -> dict:
        """Continuity and derivative-jump residuals at both deltas, relative to the state scale."""
        p = self.potential
        a = p.a
        scale = max(abs(self(-a)), abs(self(a)), 1e-300)
        res = {}
        for x0, g, lab in ((-a, p.gamma_l, "left"), (a, p.gamma_r, "right")):
            outer = self.left if lab == "left" else self.right
            v_out = _eval_terms(outer, x0).real
            v_in = _eval_terms(self.interior, x0).real
            d_minus = self.derivative(x0, "left")
            d_plus = self.derivative(x0, "right")
            res[f"continuity_{lab}"] = float(abs(v_out - v_in) / scale)
            res[f"jump_{lab}"] = float(abs((d_plus - d_minus) + g * v_in) / scale)
        return res


@dataclass(frozen=True)
class StateClassification:
    label: str
    weights: dict = field(default_factory=dict)


def _shoot(pot: DeltaWellPotential, energies: np.ndarray):
    """Solution launched from the left delta with ψ(-a) = 1.

    Returns (ψ(a), mismatch, interior node count). ψ(a) and the mismatch are
    divided by cosh(pL) in the evanescent case so they cannot overflow; the
    scaling is positive, so signs are exact.
    """
    e = np.asarray(energies, dtype=float)
    k = np.sqrt(-e)
    s = e + pot.v_c
    L = 2.0 * pot.a
    v = k - pot.gamma_l
    q = np.sqrt(np.abs(s))
    osc = s >= 0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        c = np.where(osc, np.cos(q * L), 1.0)
        sq = np.where(osc, L * np.sinc(q * L / np.pi), L * _tanhc(q * L))
        msq = np.where(osc, -s * sq, q * np.tanh(q * L))
        psi = c + sq * v
        dpsi = msq + c * v
        mismatch = dpsi - (pot.gamma_r - k) * psi
        # ψ = A sin(qy + φ0) inside; φ0 ∈ (0, π) because ψ(-a) > 0
        phase = (q * L + np.arctan2(q, v)) / np.pi
    nodes = np.where(osc & (q > 0), np.floor(phase), (psi <= 0).astype(float))
    # keep the count consistent with the sign of ψ(a) when the phase sits on an integer
    off = osc & (q > 0) & (np.where(nodes % 2 == 0, 1.0, -1.0) * psi < 0)
    nodes = np.where(off, np.where(phase - nodes > 0.5, nodes + 1, nodes - 1), nodes)
    return psi, mismatch, nodes


def _shooting_mismatch(pot: DeltaWellPotential, energies: np.ndarray) -> np.ndarray:
    """Right-boundary mismatch; its zeros are the eigenvalues."""
    return _shoot(pot, energies)[1]


def _count_below(pot: DeltaWellPotential, energies: np.ndarray) -> np.ndarray:
    """Number of bound states below each energy, by counting nodes of the shot solution.

    The right tail adds one node when ψ(a) and the decay at +∞ disagree in sign.
    """
    psi, mismatch, nodes = _shoot(pot, energies)
    return (nodes + (psi * mismatch < 0)).astype(int)


def _tanhc(x):
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 - x**2 / 3.0, np.tanh(safe) / safe)


def _energy_grid(pot: DeltaWellPotential, n: int) -> np.ndarray:
    lo = 1.2 * (pot.gamma_l**2 / 4.0 + pot.v_c + pot.gamma_l * pot.beta)
    while _count_below(pot, np.array([-lo]))[0] > 0:
        lo *= 2.0
    return -np.logspace(math.log10(lo), -6.0, n)


def _isolate(pot: DeltaWellPotential, lo: float, hi: float, n_lo: int, n_hi: int, out: list) -> None:
    """Split [lo, hi] by node count until each piece brackets one root."""
    if n_hi == n_lo:
        return
    if n_hi - n_lo == 1:
        f = lambda e: float(_shooting_mismatch(pot, np.array([e]))[0])
        out.append(brentq(f, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=400))
        return
    mid = -math.sqrt(lo * hi)
    if not lo < mid < hi:
        raise ResolutionError(f"{n_hi - n_lo} bound states within one ulp of {lo!r}")
    n_mid = int(_count_below(pot, np.array([mid]))[0])
    _isolate(pot, lo, mid, n_lo, n_mid, out)
    _isolate(pot, mid, hi, n_mid, n_hi, out)


def _find_roots(pot: DeltaWellPotential, n_grid: int) -> list[float]:
    grid = _energy_grid(pot, n_grid)
    counts = _count_below(pot, grid)
    if np.any(np.diff(counts) < 0):
        raise ResolutionError("node count is not monotone in energy")
    roots: list[float] = []
    for i in np.flatnonzero(np.diff(counts)):
        _isolate(pot, float(grid[i]), float(grid[i + 1]), int(counts[i]), int(counts[i + 1]), roots)
    return sorted(roots)


def _interior_basis(pot: DeltaWellPotential, energy: float):
    s = energy + pot.v_c
    a = pot.a
    if abs(s) <= SERIES_BAND:
        return "threshold", [[(1.0 + 0j, 0j, 0, 0.0)], [(1.0 + 0j, 0j, 1, 0.0)]]
    if s > 0:
        q = math.sqrt(s)
        cos_t = [(0.5 + 0j, 1j * q, 0, 0.0), (0.5 + 0j, -1j * q, 0, 0.0)]
        sin_t = [(-0.5j, 1j * q, 0, 0.0), (0.5j, -1j * q, 0, 0.0)]
        return "oscillatory", [cos_t, sin_t]
    p = math.sqrt(-s)
    if p * a >= 1.0:
        return "evanescent", [[(1.0 + 0j, p + 0j, 0, a)], [(1.0 + 0j, -p + 0j, 0, -a)]]
    cosh_t = [(0.5 + 0j, p + 0j, 0, 0.0), (0.5 + 0j, -p + 0j, 0, 0.0)]
    sinh_t = [(0.5 + 0j, p + 0j, 0, 0.0), (-0.5 + 0j, -p + 0j, 0, 0.0)]
    return "evanescent", [cosh_t, sinh_t]


def _build_state(pot: DeltaWellPotential, energy: float, index: int, side: str = "auto") -> BoundState:
    a = pot.a
    k = math.sqrt(-energy)
    character, basis = _interior_basis(pot, energy)
    val_l = np.array([_eval_terms(b, -a).real for b in basis])
    der_l = np.array([_eval_terms(b, -a, deriv=True).real for b in basis])
    val_r = np.array([_eval_terms(b, a).real for b in basis])
    der_r = np.array([_eval_terms(b, a, deriv=True).real for b in basis])
    row_l = der_l - (k - pot.gamma_l) * val_l
    row_r = der_r - (pot.gamma_r - k) * val_r
    if side == "auto":
        side = "left" if np.linalg.norm(row_l) >= np.linalg.norm(row_r) else "right"
    row = row_l if side == "left" else row_r
    coef = np.array([row[1], -row[0]])
    interior = []
    for c, b in zip(coef, basis):
        interior.extend((c * t[0], t[1], t[2], t[3]) for t in b)
    amp_l = float(coef @ val_l)
    amp_r = float(coef @ val_r)
    if amp_l < 0:
        interior = [(-t[0], t[1], t[2], t[3]) for t in interior]
        amp_l, amp_r = -amp_l, -amp_r
    left = [(amp_l + 0j, k + 0j, 0, -a)]
    right = [(amp_r + 0j, -k + 0j, 0, a)]
    norm2 = (
        _segment_integral(left, left, -math.inf, -a, 0)
        + _segment_integral(interior, interior, -a, a, 0)
        + _segment_integral(right, right, a, math.inf, 0)
    )
    nc = 1.0 / math.sqrt(norm2)
    scale = lambda ts: tuple((t[0] * nc, t[1], t[2], t[3]) for t in ts)
    return BoundState(
        energy=float(energy),
        potential=pot,
        left=scale(left),
        interior=scale(interior),
        right=scale(right),
        interior_character=character,
        norm_constant=nc,
        index=index,
    )


def _jumps(st: BoundState) -> list[tuple[float, float]]:
    """(position, signed derivative-jump residual) at each delta; H ψ = E ψ - Σ residual δ(x - position)."""
    p = st.potential
    out = []
    for x0, g in ((-p.a, p.gamma_l), (p.a, p.gamma_r)):
        jump = float(st.derivative(x0, "right") - st.derivative(x0, "left"))
        out.append((x0, jump + g * float(st(x0))))
    return out


def _combine(states: Sequence[BoundState], coef: np.ndarray, energy: float, index: int) -> BoundState:
    def mix(attr):
        return tuple((c * t[0], t[1], t[2], t[3]) for c, st in zip(coef, states) for t in getattr(st, attr))

    main = int(np.argmax(np.abs(coef)))
    out = BoundState(energy=float(energy), potential=states[0].potential, left=mix("left"),
                     interior=mix("interior"), right=mix("right"),
                     interior_character=states[main].interior_character,
                     norm_constant=abs(coef[main]) * states[main].norm_constant, index=index)
    if out(-out.potential.a) < 0:
        out = _combine(states, -coef, energy, index)
    return out


def _refine_clusters(states: list[BoundState], rel_gap: float = 5e-2) -> list[BoundState]:
    """Rayleigh-Ritz within groups of nearly degenerate states.

    A root of the boundary mismatch is only accurate to about eps over the
    splitting, which mixes close partners by the same relative amount. Each
    root yields two candidates, anchored at either delta. A candidate solves
    the equation exactly apart from a derivative-jump residual at the other
    delta, so H and the overlap matrix on the candidates' span are exact and
    their generalized eigenvectors recover the true states.
    """
    out = list(states)
    i = 0
    while i < len(states):
        j = i + 1
        while j < len(states) and states[j].energy - states[j - 1].energy < rel_gap * abs(states[j - 1].energy):
            j += 1
        if j - i > 1:
            m = j - i
            pot = states[i].potential
            energies = [st.energy for st in states[i:j]]
            # a second pass rebuilds the candidates at the far more accurate Ritz energies
            for _ in range(2):
                group = [_build_state(pot, e, i, side) for e in energies for side in ("left", "right")]
                S = np.array([[overlap(p, q) for q in group] for p in group])
                H = np.empty_like(S)
                for c, q in enumerate(group):
                    H[:, c] = q.energy * S[:, c] - [sum(r * float(p(x0)) for x0, r in _jumps(q)) for p in group]
                # the candidates span the group's states; keep the dominant m directions
                w, u = np.linalg.eigh(S)
                basis = u[:, -m:] / np.sqrt(w[-m:])
                energies, vecs = np.linalg.eigh(basis.T @ (0.5 * (H + H.T)) @ basis)
            coef = basis @ vecs
            for k in range(m):
                out[i + k] = _combine(group, coef[:, k], energies[k], i + k)
        i = j
    return out


def bound_spectrum(pot: DeltaWellPotential, n_grid: int = 2000, check: bool = True) -> list[BoundState]:
    """All bound states (E < -1e-6), ascending in energy.

    ``n_grid`` sets the seed energy grid; node counting splits any grid
    interval that holds several roots. ``check`` verifies that every state
    satisfies the matching conditions.
    """
    roots = _find_roots(pot, n_grid)
    states = _refine_clusters([_build_state(pot, e, i) for i, e in enumerate(roots)])
    if check:
        for st in states:
            worst = max(st.matching_residuals().values())
            if not worst <= 1e-6:
                raise ResolutionError(f"state {st.index} at E = {st.energy!r} violates matching by {worst:.1e}")
    return states


def _pair_integral(si: BoundState, sj: BoundState, m: int, lo: float = -math.inf, hi: float = math.inf) -> float:
    total = 0.0
    for (r_lo, r_hi, ti), (_, _, tj) in zip(si.regions(), sj.regions()):
        total += _segment_integral(ti, tj, max(lo, r_lo), min(hi, r_hi), m)
    return total


def overlap(si: BoundState, sj: BoundState, lo: float = -math.inf, hi: float = math.inf) -> float:
    return _pair_integral(si, sj, 0, lo, hi)


def position_element(si: BoundState, sj: BoundState) -> float:
    """⟨x⟩_ij = ∫ ψ_i x ψ_j dx."""
    return _pair_integral(si, sj, 1)


def position_matrix(states: Sequence[BoundState]) -> np.ndarray:
    n = len(states)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            out[i, j] = out[j, i] = position_element(states[i], states[j])
    return out


def classify(state: BoundState, pot: DeltaWellPotential | None = None, window: float | None = None,
             threshold: float = 0.9) -> StateClassification:
    """Label a state by where its probability sits.

    The window around each delta defaults to four of that well's own length
    scale 1/γ, so the shallower right well gets a proportionally wider window.
    """
    pot = pot or state.potential
    a = pot.a
    if window is None:
        w_l = 4.0 / pot.gamma_l if pot.gamma_l > 0 else 0.0  # no delta, no window
        w_r = 4.0 / pot.gamma_r if pot.gamma_r > 0 else 0.0
    else:
        w_l = w_r = window
    w_l, w_r = min(w_l, a), min(w_r, a)
    weights = {
        "left": overlap(state, state, -a - w_l, -a + w_l),
        "right": overlap(state, state, a - w_r, a + w_r),
        "central": overlap(state, state, -a + w_l, a - w_r),
    }
    if weights["left"] > threshold:
        label = "localized-left"
    elif weights["right"] > threshold:
        label = "localized-right"
    else:
        label = "extended"
    return StateClassification(label=label, weights=weights)


def dense_grid_energies(pot: DeltaWellPotential, n_points: int = 8001, box: float | None = None,
                        n_states: int | None = None) -> np.ndarray:
    """Finite-difference reference spectrum; each delta becomes a one-cell well of depth γ/dx."""
    half = 4.0 * pot.a if box is None else box / 2.0
    x, dx = np.linspace(-half, half, n_points, retstep=True)
    v = -pot.v_c * np.clip((pot.a - np.abs(x)) / dx + 0.5, 0.0, 1.0)
    v[np.argmin(np.abs(x + pot.a))] -= pot.gamma_l / dx
    v[np.argmin(np.abs(x - pot.a))] -= pot.gamma_r / dx
    diag = 2.0 / dx**2 + v
    off = -np.ones(n_points - 1) / dx**2
    evals = eigh_tridiagonal(diag, off, eigvals_only=True, select="v", select_range=(-np.inf, 0.0))
    evals = np.sort(evals)
    return evals if n_states is None else evals[:n_states]


# ---------------------------------------------------------------------------
# adapter to the generic engine


@dataclass(frozen=True)
class StatesFrame(EigenFrame):
    states: tuple = ()


class DeltaWellModel(HamiltonianModel):
    """Truncated set of bound states over the depth parameters (ε_c, ε_r).

    The model basis *is* the instantaneous eigenbasis: H₀ is diagonal, the
    drive is ``F ⟨x⟩_ij`` and the non-adiabatic couplings come from the
    Hellmann–Feynman relation with ∂H/∂ε_c = -θ(a-|x|) and
    ∂H/∂ε_r = -δ(x-a)/(2γ_r).
    """

    param_names = ("eps_c", "eps_r")

    def __init__(self, a: float, gamma_l: float, keep: Sequence[int], F: float = 1.0,
                 n_grid: int = 2000, cache_size: int = 4096):
        self.a = float(a)
        self.gamma_l = float(gamma_l)
        self.keep = tuple(int(k) for k in keep)
        if len(self.keep) < 3 or self.keep[:2] != (0, 1):
            raise ValueError("keep must start with the two localized states (0, 1) plus auxiliaries")
        self.F = float(F)
        self.n_grid = n_grid
        self.dimension = len(self.keep)
        self.roles = Roles(state0=0, state2=1, auxiliary=tuple(range(2, self.dimension)))
        self.globally_gauged = True
        self._cache: dict = {}
        self._cache_size = cache_size

    def potential_at(self, lam: ParamVector) -> DeltaWellPotential:
        return DeltaWellPotential.from_depths(self.a, self.gamma_l, lam["eps_c"], lam["eps_r"])

    def states_at(self, lam: ParamVector) -> list[BoundState]:
        key = lam.values
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        states = bound_spectrum(self.potential_at(lam), n_grid=self.n_grid)
        if len(states) <= max(self.keep):
            raise SpectrumError(f"only {len(states)} bound states at {lam.as_dict()}, need index {max(self.keep)}")
        kept = [states[k] for k in self.keep]
        energies = np.array([s.energy for s in kept])
        gaps = np.abs(np.subtract.outer(energies, energies)) + np.eye(len(kept))
        if gaps.min() < 1e-8 * (energies.max() - energies.min()):
            raise DegeneracyError(f"level collision at {lam.as_dict()}")
        if len(self._cache) >= self._cache_size:
            self._cache.clear()
        self._cache[key] = kept
        return kept

    def eigenframe(self, lam, reference=None, degeneracy_tol=None):
        kept = self.states_at(lam)
        return StatesFrame(lam=lam, energies=np.array([s.energy for s in kept]),
                           vectors=np.eye(self.dimension), order=tuple(range(self.dimension)),
                           states=tuple(kept))

    def h0_at(self, lam):
        return np.diag([s.energy for s in self.states_at(lam)])

    def hprime_at(self, lam):
        return self.F * position_matrix(self.states_at(lam))

    def hprime_eigen(self, frame):
        states = frame.states if isinstance(frame, StatesFrame) else self.states_at(frame.lam)
        return self.F * position_matrix(states)

    def dh_matrices(self, lam: ParamVector) -> np.ndarray:
        """⟨i|∂_μ H|j⟩ for μ = (ε_c, ε_r)."""
        st = self.states_at(lam)
        n = len(st)
        out = np.zeros((2, n, n))
        g_r = math.sqrt(lam["eps_r"])
        at_a = np.array([float(s(self.a)) for s in st])
        for i in range(n):
            for j in range(i, n):
                out[0, i, j] = out[0, j, i] = -overlap(st[i], st[j], -self.a, self.a)
        out[1] = -np.outer(at_a, at_a) / (2.0 * g_r)
        return out

    def coupling_tensor(self, lam, h=None, frame=None):
        e = np.array([s.energy for s in self.states_at(lam)])
        dh = self.dh_matrices(lam)
        denom = np.subtract.outer(e, e).T  # E_j - E_i at [i, j]
        np.fill_diagonal(denom, np.inf)
        return CouplingTensor(names=self.param_names, entries=dh / denom)

    def dphi(self, lam, h=None, frame=None):
        """Components ⟨Φ_i|∂_μΦ_n⟩ within the kept set, array [μ, i, n]."""
        return self.coupling_tensor(lam).entries

    def coupling_tensor_fd(self, lam: ParamVector, h: float | Sequence[float] = 1e-7) -> CouplingTensor:
        """Independent route: central differences of exact overlaps ⟨ψ_i(λ)|ψ_j(λ ± h e_μ)⟩."""
        center = self.states_at(lam)
        steps = np.broadcast_to(np.asarray(h, dtype=float), (2,))
        n = len(center)
        out = np.zeros((2, n, n))
        for mu in range(2):
            plus = bound_spectrum(self.potential_at(lam.shifted(mu, steps[mu])), self.n_grid, check=False)
            minus = bound_spectrum(self.potential_at(lam.shifted(mu, -steps[mu])), self.n_grid, check=False)
            plus = [plus[k] for k in self.keep]
            minus = [minus[k] for k in self.keep]
            for i in range(n):
                for j in range(n):
                    out[mu, i, j] = (overlap(center[i], plus[j]) - overlap(center[i], minus[j])) / (2 * steps[mu])
        return CouplingTensor(names=self.param_names, entries=out)


def depth_ellipse(pot: DeltaWellPotential | None = None, lambda_r: float = 0.037, lambda_c: float = 0.024,
              omega: float = 2e-3, cycles: float = 1.0):
    """The elliptic depth path; amplitudes in units of E_u = γ_r² - β²."""
    from .paths import EllipsePath

    pot = pot or DeltaWellPotential.standard()
    e_u = pot.gamma_r**2 - pot.beta**2
    return EllipsePath(
        ("eps_c", "eps_r"),
        center=[pot.beta**2, pot.gamma_r**2],
        cos_amp=[0.0, lambda_r * e_u],
        sin_amp=[lambda_c * e_u, 0.0],
        omega=omega,
        cycles=cycles,
    )


def energy_unit(pot: DeltaWellPotential) -> float:
    return pot.gamma_r**2 - pot.beta**2


def as_model(pot: DeltaWellPotential, path, F: float = 1.0, threshold: float = 0.99, probes: int = 32,
             n_grid: int = 2000):
    """Truncated generic model along ``path`` plus the path itself.

    Auxiliary states are the extended states, taken in order of decreasing
    contribution to |f| summed over ``probes`` points of the path, until the
    cumulative fraction reaches ``threshold``.
    """
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    ts = np.linspace(0.0, path.duration, probes, endpoint=False)
    samples = []
    for t in ts:
        lam = path.point(t)
        p = DeltaWellPotential.from_depths(pot.a, pot.gamma_l, lam["eps_c"], lam["eps_r"])
        states = bound_spectrum(p, n_grid=n_grid)
        labels = [classify(s).label for s in states]
        if labels.count("localized-left") != 1 or labels.count("localized-right") != 1:
            raise SpectrumError(f"expected exactly two localized states at {lam.as_dict()}, got {labels}")
        if labels[0] != "localized-left" or labels[1] != "localized-right":
            raise SpectrumError(f"localized states are not the two lowest levels at {lam.as_dict()}")
        samples.append((lam, states))
    # states that exist along the whole path are the auxiliary candidates
    n_states = min(len(st) for _, st in samples)
    contrib = np.zeros(n_states)
    for lam, states in samples:
        states = states[:n_states]
        full = DeltaWellModel(pot.a, pot.gamma_l, keep=range(n_states), F=1.0, n_grid=n_grid)
        full._cache[lam.values] = states
        c = full.coupling_tensor(lam).entries
        x = position_matrix(states)
        e = np.array([s.energy for s in states])
        for k in range(2, n_states):
            term = c[:, 0, k] * x[k, 1] / (e[k] - e[0]) + x[0, k] * c[:, k, 1] / (e[k] - e[1])
            contrib[k] += np.linalg.norm(term)
    order = np.argsort(contrib[2:])[::-1] + 2
    total = contrib[2:].sum()
    chosen = []
    acc = 0.0
    for k in order:
        chosen.append(int(k))
        acc += contrib[k]
        if total == 0 or acc >= threshold * total:
            break
    model = DeltaWellModel(pot.a, pot.gamma_l, keep=[0, 1, *sorted(chosen)], F=F, n_grid=n_grid)
    model.contributions = contrib
    return model, path
