"""Parameterized Hamiltonians, gauge-fixed eigenframes and non-adiabatic couplings.

Everything here works with real-symmetric matrices, so eigenvectors can be
chosen real and the diagonal Berry connection ``⟨Φ_n|∂Φ_n⟩`` vanishes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = [
    "SpectrumError",
    "DegeneracyError",
    "SolverError",
    "ParamVector",
    "Roles",
    "EigenFrame",
    "CouplingTensor",
    "HamiltonianModel",
    "MatrixModel",
    "eigenframe",
    "dphi_dparam",
    "coupling_tensor",
    "fix_gauge",
]


class SpectrumError(RuntimeError):
    pass


class DegeneracyError(SpectrumError):
    """Two levels closer than the degeneracy tolerance; energy denominators blow up."""


class SolverError(SpectrumError):
    pass


@dataclass(frozen=True)
class ParamVector:
    """Named point in parameter space."""

    names: tuple
    values: tuple

    def __init__(self, names: Iterable[str], values: Iterable[float]):
        names = tuple(names)
        values = tuple(float(v) for v in values)
        if len(names) != len(values):
            raise ValueError("names and values differ in length")
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate parameter names in {names}")
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"non-finite parameter value in {values}")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ParamVector":
        return cls(mapping.keys(), mapping.values())

    def __getitem__(self, name: str) -> float:
        return self.values[self.names.index(name)]

    def __len__(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.array(self.values)

    def with_values(self, values) -> "ParamVector":
        return ParamVector(self.names, values)

    def shifted(self, index: int, h: float) -> "ParamVector":
        v = list(self.values)
        v[index] += h
        return ParamVector(self.names, v)

    def as_dict(self) -> dict:
        return dict(zip(self.names, self.values))


@dataclass(frozen=True)
class Roles:
    """Which eigen-indices play state 0, the auxiliary set, and state 2."""

    state0: int
    auxiliary: tuple
    state2: int

    def __post_init__(self):
        object.__setattr__(self, "auxiliary", tuple(int(i) for i in self.auxiliary))
        idx = (self.state0, self.state2, *self.auxiliary)
        if len(set(idx)) != len(idx):
            raise ValueError(f"role indices must be distinct, got {idx}")
        if min(idx) < 0:
            raise ValueError("role indices must be non-negative")

    def check(self, dimension: int):
        if max(self.state0, self.state2, *self.auxiliary) >= dimension:
            raise ValueError(f"role index out of range for dimension {dimension}")


@dataclass(frozen=True)
class EigenFrame:
    lam: ParamVector
    energies: np.ndarray
    vectors: np.ndarray  # columns are eigenvectors
    order: tuple = ()  # sorted index of each tracked column; identity unless levels swapped

    def residual(self, h0: np.ndarray) -> float:
        r = h0 @ self.vectors - self.vectors * self.energies
        return float(np.max(np.linalg.norm(r, axis=0)))

    def orthonormality_error(self) -> float:
        n = self.vectors.shape[1]
        return float(np.max(np.abs(self.vectors.T @ self.vectors - np.eye(n))))

    def overlaps(self, other: "EigenFrame") -> np.ndarray:
        """⟨Φ_n^other|Φ_n⟩ for each n."""
        return np.einsum("in,in->n", other.vectors, self.vectors)


@dataclass(frozen=True)
class CouplingTensor:
    """entries[μ, i, j] = ⟨Φ_i|∂_μ Φ_j⟩."""

    names: tuple
    entries: np.ndarray

    def along(self, velocity) -> np.ndarray:
        """⟨Φ_i|Φ̇_j⟩ for a parameter velocity dλ/dt."""
        return np.tensordot(np.asarray(velocity, dtype=float), self.entries, axes=1)

    def antisymmetry_error(self) -> float:
        return float(np.max(np.abs(self.entries + np.swapaxes(self.entries, 1, 2))))

    def max_diagonal(self) -> float:
        return float(np.max(np.abs(np.diagonal(self.entries, axis1=1, axis2=2))))


def fix_gauge(vectors: np.ndarray, reference: np.ndarray | None = None) -> np.ndarray:
    """Flip column signs for positive overlap with ``reference``.

    Without a reference, the largest-magnitude component of each column is
    made positive.
    """
    v = np.array(vectors, dtype=float, copy=True)
    if reference is None:
        idx = np.argmax(np.abs(v), axis=0)
        signs = np.sign(v[idx, np.arange(v.shape[1])])
    else:
        signs = np.sign(np.einsum("in,in->n", reference, v))
    signs[signs == 0] = 1.0
    return v * signs


class HamiltonianModel:
    """Base class: a real-symmetric H₀(λ) and drive operator H′(λ) with role labels.

    Subclasses provide ``h0_at`` and ``hprime_at``; models whose eigenstates
    are known in closed form may also override ``eigenframe``,
    ``coupling_tensor`` and ``hprime_eigen``.
    """

    param_names: tuple = ()
    dimension: int = 0
    roles: Roles
    degeneracy_tol: float | None = None
    param_scale: Sequence[float] | None = None

    def h0_at(self, lam: ParamVector) -> np.ndarray:
        raise NotImplementedError

    def hprime_at(self, lam: ParamVector) -> np.ndarray:
        raise NotImplementedError

    def point(self, values) -> ParamVector:
        return ParamVector(self.param_names, values)

    def degeneracy_points(self) -> list[np.ndarray]:
        """Parameter points where levels are known to cross; surface integrals must not enclose them."""
        return []

    def default_step(self, lam: ParamVector) -> np.ndarray:
        scale = np.ones(len(lam)) if self.param_scale is None else np.asarray(self.param_scale, dtype=float)
        return 1e-5 * scale

    def eigenframe(self, lam: ParamVector, reference: EigenFrame | None = None,
                   degeneracy_tol: float | None = None) -> EigenFrame:
        h0 = np.asarray(self.h0_at(lam), dtype=float)
        _check_symmetric(h0, "H0")
        try:
            energies, vectors = np.linalg.eigh(h0)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
            raise SolverError(f"eigensolver failed at {lam.as_dict()}") from exc
        _check_degeneracy(energies, degeneracy_tol if degeneracy_tol is not None else self.degeneracy_tol, lam)
        order = tuple(range(len(energies)))
        if reference is None:
            vectors = fix_gauge(vectors)
        else:
            perm = _track_order(reference.vectors, vectors)
            if perm is not None:
                energies, vectors = energies[perm], vectors[:, perm]
                order = tuple(int(p) for p in perm)
            vectors = fix_gauge(vectors, reference.vectors)
        return EigenFrame(lam=lam, energies=energies, vectors=vectors, order=order)

    def hprime_eigen(self, frame: EigenFrame) -> np.ndarray:
        """Drive matrix ⟨Φ_i|H′|Φ_j⟩ in the frame's eigenbasis."""
        hp = np.asarray(self.hprime_at(frame.lam), dtype=float)
        _check_symmetric(hp, "H'")
        return frame.vectors.T @ hp @ frame.vectors

    def dphi(self, lam: ParamVector, h=None, frame: EigenFrame | None = None) -> np.ndarray:
        """Central differences of all gauge-fixed eigenvectors: array [μ, component, n]."""
        center = frame if frame is not None else self.eigenframe(lam)
        steps = _steps(self, lam, h)
        out = np.empty((len(lam), *center.vectors.shape))
        for mu, hm in enumerate(steps):
            plus = self.eigenframe(lam.shifted(mu, hm), reference=center)
            minus = self.eigenframe(lam.shifted(mu, -hm), reference=center)
            out[mu] = (plus.vectors - minus.vectors) / (2.0 * hm)
        return out

    def coupling_tensor(self, lam: ParamVector, h=None, frame: EigenFrame | None = None) -> CouplingTensor:
        center = frame if frame is not None else self.eigenframe(lam)
        d = self.dphi(lam, h, center)
        entries = np.einsum("ki,mkj->mij", center.vectors, d)
        return CouplingTensor(names=lam.names, entries=entries)


class MatrixModel(HamiltonianModel):
    """Model defined by two callables returning N×N real-symmetric matrices."""

    def __init__(self, param_names: Sequence[str], h0: Callable, hprime: Callable, roles: Roles,
                 dimension: int | None = None, degeneracy_tol: float | None = None,
                 param_scale: Sequence[float] | None = None):
        self.param_names = tuple(param_names)
        self._h0 = h0
        self._hprime = hprime
        self.roles = roles
        if dimension is None:
            dimension = np.asarray(h0(ParamVector(self.param_names, [1.0] * len(self.param_names)))).shape[0]
        self.dimension = int(dimension)
        roles.check(self.dimension)
        self.degeneracy_tol = degeneracy_tol
        self.param_scale = param_scale

    def h0_at(self, lam):
        return np.asarray(self._h0(lam), dtype=float)

    def hprime_at(self, lam):
        return np.asarray(self._hprime(lam), dtype=float)


def _check_symmetric(m: np.ndarray, label: str):
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{label} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{label} has non-finite entries")
    scale = max(float(np.max(np.abs(m))), 1e-300)
    if np.max(np.abs(m - m.T)) > 1e-12 * scale:
        raise ValueError(f"{label} is not symmetric")


def _check_degeneracy(energies: np.ndarray, tol: float | None, lam: ParamVector):
    if len(energies) < 2:
        return
    spread = float(energies[-1] - energies[0])
    if tol is None:
        tol = 1e-8 * max(spread, 1e-300)
    gaps = np.diff(energies)
    k = int(np.argmin(gaps))
    if gaps[k] < tol:
        raise DegeneracyError(
            f"levels {k} and {k + 1} are degenerate (gap {gaps[k]:.3e} < {tol:.3e}) at {lam.as_dict()}"
        )


def _track_order(ref: np.ndarray, vectors: np.ndarray):
    """Permutation following the reference by maximal |overlap|, or None if it is the identity."""
    ov = np.abs(ref.T @ vectors)
    n = ov.shape[0]
    if np.all(np.argmax(ov, axis=1) == np.arange(n)):
        return None
    rows, cols = linear_sum_assignment(-ov)
    perm = cols[np.argsort(rows)]
    if np.all(perm == np.arange(n)):
        return None
    return perm


def _steps(model: HamiltonianModel, lam: ParamVector, h) -> np.ndarray:
    if h is None:
        steps = model.default_step(lam)
    else:
        steps = np.broadcast_to(np.asarray(h, dtype=float), (len(lam),)).copy()
    floor = 1e3 * np.finfo(float).eps * np.maximum(np.abs(lam.as_array()), 1.0)
    if np.any(steps <= 0):
        raise ValueError("finite-difference step must be positive")
    if np.any(steps < floor):
        raise ValueError(f"finite-difference step {steps} below the round-off floor {floor}")
    return steps


def eigenframe(model: HamiltonianModel, lam: ParamVector, reference: EigenFrame | None = None,
               degeneracy_tol: float | None = None) -> EigenFrame:
    return model.eigenframe(lam, reference=reference, degeneracy_tol=degeneracy_tol)


def dphi_dparam(model: HamiltonianModel, lam: ParamVector, n: int, h=None) -> np.ndarray:
    """∂_μ Φ_n for every parameter μ, shape (n_params, N)."""
    return model.dphi(lam, h)[:, :, n]


def coupling_tensor(model: HamiltonianModel, lam: ParamVector, h=None) -> CouplingTensor:
    return model.coupling_tensor(lam, h)
