"""Three-level Λ system: a tunable ground doublet and a distant excited level.

In the ground subspace ``H = E_g + (ε σz' + δ σx')/2`` with mixing angle
``α = ½ atan2(δ, ε)``; the field polarization angle β sets the dipole
couplings of the rotated ground states to the excited level.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .dynamics import DriveSchedule
from .paths import EllipsePath, ParamPath, StaticPath
from .spectrum import DegeneracyError, EigenFrame, HamiltonianModel, ParamVector, Roles

__all__ = [
    "LambdaParams",
    "MixingState",
    "LambdaModel",
    "mixing",
    "mixing_at",
    "drive_couplings",
    "gamma_analytic",
    "excited_amplitude",
    "to_generic",
    "circle_path",
]

PARAM_NAMES = ("epsilon", "delta")


@dataclass(frozen=True)
class LambdaParams:
    """Static Λ-system parameters. ``beta_pol=None`` means the polarization tracks α."""

    e_ground: float = 0.0
    e_excited: float = 20.0
    epsilon: float = 1.0
    delta: float = 0.0
    dipole: float = 1.0
    field: float = 0.01
    beta_pol: float | None = None
    min_gap_ratio: float = 20.0
    max_offresonance: float = 0.2

    def __post_init__(self):
        vals = [self.e_ground, self.e_excited, self.epsilon, self.delta, self.dipole, self.field]
        if self.beta_pol is not None:
            vals.append(self.beta_pol)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("Λ-system parameters must be finite")
        if self.e_excited <= self.e_ground:
            raise ValueError("excited level must lie above the ground doublet")

    @property
    def coupling(self) -> float:
        """dℰ"""
        return self.dipole * self.field

    @property
    def rho(self) -> float:
        return math.hypot(self.epsilon, self.delta)

    def validity(self, rho: float | None = None) -> dict:
        """Engineering checks on the two "≫/≪" conditions; reported, never enforced."""
        rho = self.rho if rho is None else rho
        gap_ratio = (self.e_excited - self.e_ground) / rho if rho > 0 else math.inf
        offres = abs(self.coupling) / rho if rho > 0 else math.inf
        return {
            "gap_ratio": gap_ratio,
            "gap_ok": gap_ratio >= self.min_gap_ratio,
            "offresonance": offres,
            "offresonance_ok": offres <= self.max_offresonance,
        }

    def replace(self, **kw) -> "LambdaParams":
        return dataclasses.replace(self, **kw)


@dataclass(frozen=True)
class MixingState:
    alpha: float
    rho: float
    e_minus: float
    e_plus: float
    g_minus: np.ndarray  # components on (g1, g2)
    g_plus: np.ndarray


def mixing_at(epsilon: float, delta: float, e_ground: float = 0.0, previous: float | None = None,
              origin_tol: float = 0.0) -> MixingState:
    """Ground-doublet eigensystem at (ε, δ); α on the branch nearest ``previous``."""
    rho = math.hypot(epsilon, delta)
    if rho <= origin_tol:
        raise DegeneracyError("ε = δ = 0: ground doublet degenerate, α undefined")
    alpha = 0.5 * math.atan2(delta, epsilon)
    if previous is not None:
        alpha += math.pi * round((previous - alpha) / math.pi)
    c, s = math.cos(alpha), math.sin(alpha)
    return MixingState(
        alpha=alpha, rho=rho, e_minus=e_ground - rho / 2, e_plus=e_ground + rho / 2,
        g_minus=np.array([c, -s]), g_plus=np.array([s, c]),
    )


def mixing(params: LambdaParams, previous: MixingState | None = None) -> MixingState:
    """Diagonalize the ground doublet, keeping α continuous against ``previous``.

    α shifts by π between branches, which flips both g± together.
    """
    prev = previous.alpha if previous is not None else None
    return mixing_at(params.epsilon, params.delta, params.e_ground, prev)


def drive_couplings(params: LambdaParams, alpha: float) -> tuple[float, float]:
    """(H′_{e g-}, H′_{e g+}) = dℰ(sin(β-α), cos(β-α)); β = α when tracking."""
    beta = alpha if params.beta_pol is None else params.beta_pol
    return params.coupling * math.sin(beta - alpha), params.coupling * math.cos(beta - alpha)


def gamma_analytic(params: LambdaParams, path: ParamPath, epsrel: float = 1e-11) -> float:
    """Γ = -dℰ ∫ dα/ρ along the (ε, δ) path, by adaptive quadrature."""
    names = tuple(path.names)
    ie, idl = names.index("epsilon"), names.index("delta")
    coupling = params.coupling

    def rate(t):
        p = path.position(t)
        v = path.velocity(t)
        eps, dl = p[ie], p[idl]
        rho2 = eps * eps + dl * dl
        if rho2 == 0.0:
            raise DegeneracyError("path crosses ε = δ = 0")
        alpha_dot = 0.5 * (eps * v[idl] - dl * v[ie]) / rho2
        return -coupling * alpha_dot / math.sqrt(rho2)

    def size(t):
        p, v = path.position(t), path.velocity(t)
        return abs(coupling) * float(np.linalg.norm(v)) / float(np.hypot(p[ie], p[idl])) ** 2

    total = 0.0
    bps = path.breakpoints()
    for lo, hi in zip(bps[:-1], bps[1:]):
        if hi <= lo:
            continue
        # radial segments integrate to an exact zero; the floor stops quad chasing rounding noise
        floor = 1e-15 * (hi - lo) * max(size(t) for t in np.linspace(lo, hi, 9))
        total += quad(rate, lo, hi, epsrel=epsrel, epsabs=floor, limit=200)[0]
    return float(total)


def excited_amplitude(gamma: float) -> float:
    """a_e = sin Γ for a start in g-."""
    return math.sin(gamma)


class LambdaModel(HamiltonianModel):
    """Λ system in the {g1, g2, e} basis with roles g- → 0, g+ → auxiliary, e → 2.

    With ``beta_pol=None`` the field points along the tracked g+, so the drive
    matrix is assembled from the frame's own vectors and H′_{e g-} vanishes
    identically. A numeric ``beta_pol`` fixes the lab-frame polarization.
    """

    globally_gauged = False

    def __init__(self, params: LambdaParams = LambdaParams(), degeneracy_tol: float | None = None):
        self.params = params
        self.param_names = PARAM_NAMES
        self.dimension = 3
        self.roles = Roles(state0=0, auxiliary=(1,), state2=2)
        self.degeneracy_tol = degeneracy_tol
        self.param_scale = None

    def degeneracy_points(self):
        return [np.zeros(2)]

    def default_step(self, lam):
        rho = math.hypot(lam["epsilon"], lam["delta"])
        return np.full(2, 1e-5 * max(rho, 1e-12))

    def h0_at(self, lam: ParamVector) -> np.ndarray:
        eps, dl = lam["epsilon"], lam["delta"]
        eg, ee = self.params.e_ground, self.params.e_excited
        return np.array([[eg - eps / 2, dl / 2, 0.0], [dl / 2, eg + eps / 2, 0.0], [0.0, 0.0, ee]])

    def eigenframe(self, lam, reference=None, degeneracy_tol=None):
        tol = degeneracy_tol if degeneracy_tol is not None else self.degeneracy_tol
        if math.hypot(lam["epsilon"], lam["delta"]) <= (tol or 0.0):
            raise DegeneracyError(f"ground doublet degenerate at {lam.as_dict()}")
        return super().eigenframe(lam, reference, degeneracy_tol)

    def _dressed(self, u) -> np.ndarray:
        d = self.params.coupling
        return np.array([[0.0, 0.0, d * u[0]], [0.0, 0.0, d * u[1]], [d * u[0], d * u[1], 0.0]])

    def hprime_at(self, lam: ParamVector) -> np.ndarray:
        """Lab-frame drive; with tracking, β = α on the principal branch."""
        if self.params.beta_pol is None:
            u = mixing_at(lam["epsilon"], lam["delta"]).g_plus
        else:
            b = self.params.beta_pol
            u = (math.sin(b), math.cos(b))
        return self._dressed(u)

    def hprime_eigen(self, frame: EigenFrame) -> np.ndarray:
        if self.params.beta_pol is None:
            hp = self._dressed(frame.vectors[:2, 1])
        else:
            hp = self.hprime_at(frame.lam)
        return frame.vectors.T @ hp @ frame.vectors


def circle_path(radius: float = 1.0, omega: float = 0.02, cycles: float = 1.0, center=(0.0, 0.0),
                phase: float = 0.0) -> EllipsePath:
    return EllipsePath.circle(PARAM_NAMES, center, radius, omega, cycles, phase)


def to_generic(params: LambdaParams, path: ParamPath | None = None, duration: float = 100.0,
               stark_rule: str = "sideband"):
    """Adapter to the generic engine: (model, path, resonance-tracked drive).

    Without a path the model sits at the static (ε, δ) of ``params``. Validity
    checks on the worst point of the path are attached as ``model.validity``.
    """
    if path is None:
        path = StaticPath(PARAM_NAMES, [params.epsilon, params.delta], duration)
    if tuple(path.names) != PARAM_NAMES:
        raise ValueError(f"path must be over {PARAM_NAMES}")
    rho = np.hypot(*path.position(np.linspace(0.0, path.duration, 257)).T)
    if rho.min() <= 0:
        raise DegeneracyError("path crosses the degeneracy at ε = δ = 0")
    model = LambdaModel(params)
    far = params.validity(float(rho.max()))
    near = params.validity(float(rho.min()))
    model.validity = {
        "gap_ratio": far["gap_ratio"], "gap_ok": far["gap_ok"],
        "offresonance": near["offresonance"], "offresonance_ok": near["offresonance_ok"],
    }
    return model, path, DriveSchedule(amplitude=1.0, omega_rule="tracked", stark_rule=stark_rule)
