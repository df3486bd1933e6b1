import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from georabi.lambda_system import LambdaModel, LambdaParams
from georabi.spectrum import (
    DegeneracyError,
    MatrixModel,
    ParamVector,
    Roles,
    coupling_tensor,
    dphi_dparam,
    eigenframe,
    fix_gauge,
)

ROLES3 = Roles(state0=0, auxiliary=(1,), state2=2)


def constant_model(h0):
    h0 = np.asarray(h0, dtype=float)
    n = len(h0)
    roles = Roles(state0=0, auxiliary=tuple(range(1, n - 1)), state2=n - 1)
    return MatrixModel(("x",), lambda lam: h0, lambda lam: np.zeros_like(h0), roles)


def random_model(seed, n):
    """H(λ) = A + λ₁B + λ₂C + λ₁λ₂D with random symmetric parts and well-spaced diagonal."""
    rng = np.random.default_rng(seed)
    parts = []
    for scale in (1.0, 0.3, 0.3, 0.1):
        m = rng.normal(size=(n, n)) * scale
        parts.append(0.5 * (m + m.T))
    parts[0] += np.diag(np.arange(n) * 3.0)
    a, b, c, d = parts

    def h0(lam):
        x, y = lam["x"], lam["y"]
        return a + x * b + y * c + x * y * d

    roles = Roles(state0=0, auxiliary=tuple(range(1, n - 1)), state2=n - 1)
    return MatrixModel(("x", "y"), h0, lambda lam: b, roles), (b, c, d)


def test_diagonal_model_gives_identity_frame():
    m = constant_model(np.diag([0.0, 1.0, 10.0]))
    fr = eigenframe(m, m.point([0.3]))
    assert np.allclose(fr.energies, [0, 1, 10])
    assert np.array_equal(np.abs(fr.vectors), np.eye(3))
    assert np.all(np.diag(fr.vectors) > 0)


def test_symmetric_block_eigenvectors():
    d = 0.7
    m = LambdaModel(LambdaParams(epsilon=0.0, delta=d))
    fr = m.eigenframe(m.point([0.0, d]))
    assert fr.energies[:2] == pytest.approx([-d / 2, d / 2], abs=1e-14)
    s = 1 / math.sqrt(2)
    assert np.allclose(fr.vectors[:2, 0], [s, -s]) or np.allclose(fr.vectors[:2, 0], [-s, s])
    assert np.allclose(np.abs(fr.vectors[:2, 1]), [s, s])


def test_lambda_doublet_energies_and_mixing():
    m = LambdaModel(LambdaParams())
    fr = m.eigenframe(m.point([1.0, 1.0]))
    assert fr.energies[:2] == pytest.approx([-math.sqrt(2) / 2, math.sqrt(2) / 2], abs=1e-14)
    alpha = math.pi / 8
    # g- = (cos α, -sin α) up to sign
    assert abs(abs(fr.vectors[:2, 0] @ [math.cos(alpha), -math.sin(alpha)]) - 1) < 1e-12
    assert math.cos(2 * alpha) == pytest.approx(1 / math.sqrt(2), abs=1e-15)


def test_constant_model_has_zero_derivatives():
    m = constant_model(np.diag([0.0, 2.0, 5.0]))
    lam = m.point([0.1])
    for n in range(3):
        assert np.all(dphi_dparam(m, lam, n) == 0.0)
    assert np.all(coupling_tensor(m, lam).entries == 0.0)


def test_lambda_alpha_derivative():
    # ∂_α g- = -g+ so ⟨g+|∂_α g-⟩ = -1; α moves along the polar direction with dα = dφ/2
    m = LambdaModel(LambdaParams())
    rho, phi = 1.3, 0.4
    lam = m.point([rho * math.cos(phi), rho * math.sin(phi)])
    c = coupling_tensor(m, lam).entries
    dphi_dir = np.array([-math.sin(phi), math.cos(phi)]) * rho  # d(ε,δ)/dφ
    along_alpha = 2.0 * np.tensordot(dphi_dir, c, axes=1)
    assert along_alpha[1, 0] == pytest.approx(-1.0, abs=1e-8)


def test_lambda_coupling_along_delta():
    lam_val = 0.8
    m = LambdaModel(LambdaParams())
    c = coupling_tensor(m, m.point([lam_val, 0.0])).entries
    # |∂α/∂δ| = 1/(2Λ) on the ε axis
    assert abs(c[1, 0, 1]) == pytest.approx(1 / (2 * lam_val), rel=1e-8)
    assert c[0, 0, 1] == pytest.approx(0.0, abs=1e-8)


def test_degeneracy_raises():
    m = MatrixModel(("x",), lambda lam: np.diag([0.0, lam["x"], 1.0]), lambda lam: np.zeros((3, 3)), ROLES3,
                    degeneracy_tol=1e-8)
    with pytest.raises(DegeneracyError):
        eigenframe(m, m.point([0.0]))
    with pytest.raises(DegeneracyError):
        LambdaModel(LambdaParams(), degeneracy_tol=1e-12).eigenframe(ParamVector(("epsilon", "delta"), [0.0, 0.0]))


def test_eigenframe_is_deterministic():
    m, _ = random_model(3, 6)
    lam = m.point([0.2, -0.1])
    a, b = eigenframe(m, lam), eigenframe(m, lam)
    assert np.array_equal(a.vectors, b.vectors) and np.array_equal(a.energies, b.energies)


def test_fix_gauge_conventions():
    v = np.array([[0.6, -0.8], [-0.8, -0.6]])
    out = fix_gauge(v)
    assert out[1, 0] > 0 and out[0, 1] > 0
    ref = -out
    assert np.array_equal(fix_gauge(out, ref), -out)


def test_level_swap_is_tracked_by_overlap():
    # avoided crossing far narrower than the step: sorted order swaps, tracked order keeps character
    def h0(lam):
        x = lam["x"]
        return np.array([[x, 1e-6, 0.0], [1e-6, -x, 0.0], [0.0, 0.0, 5.0]])

    m = MatrixModel(("x",), h0, lambda lam: np.zeros((3, 3)), ROLES3)
    a = m.eigenframe(m.point([-0.1]))
    b = m.eigenframe(m.point([0.1]), reference=a)
    assert b.order == (1, 0, 2)
    assert np.all(b.overlaps(a) > 0.99)


def test_richardson_ratio():
    m, _ = random_model(11, 5)
    lam = m.point([0.3, 0.2])
    d = [m.dphi(lam, h=h) for h in (4e-2, 2e-2, 1e-2)]
    ratio = np.linalg.norm(d[0] - d[1]) / np.linalg.norm(d[1] - d[2])
    assert 3.5 <= ratio <= 4.5


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(3, 10), x=st.floats(-0.5, 0.5), y=st.floats(-0.5, 0.5))
def test_random_models_satisfy_frame_invariants(seed, n, x, y):
    m, (b, c, d) = random_model(seed, n)
    lam = m.point([x, y])
    fr = eigenframe(m, lam)
    assert np.all(np.diff(fr.energies) > 0)
    scale = max(1.0, np.max(np.abs(fr.energies)))
    assert fr.residual(m.h0_at(lam)) <= 1e-10 * scale
    assert fr.orthonormality_error() <= 1e-12
    gaps = np.min(np.diff(fr.energies))
    if gaps < 1e-3:
        return  # nearly degenerate draws make FD derivatives meaningless
    near = eigenframe(m, m.point([x + 1e-4, y]), reference=fr)
    assert np.all(near.overlaps(fr) > 0)
    ct = coupling_tensor(m, lam)
    assert ct.antisymmetry_error() <= 1e-6 * max(1.0, np.max(np.abs(ct.entries)))
    assert ct.max_diagonal() <= 1e-9 * max(1.0, np.max(np.abs(ct.entries)))
    # Hellmann–Feynman: ⟨i|∂H|j⟩/(E_j - E_i)
    dh = [b + y * d, c + x * d]
    v, e = fr.vectors, fr.energies
    for mu in range(2):
        denom = np.subtract.outer(e, e).T
        np.fill_diagonal(denom, np.inf)
        hf = v.T @ dh[mu] @ v / denom
        off = ~np.eye(n, dtype=bool)
        ref = hf[off]
        got = ct.entries[mu][off]
        assert np.max(np.abs(got - ref)) <= 1e-6 * max(1.0, np.max(np.abs(ref)))


def test_dphi_projection_on_itself_vanishes():
    m, _ = random_model(5, 4)
    lam = m.point([0.1, 0.1])
    fr = eigenframe(m, lam)
    for n in range(4):
        d = dphi_dparam(m, lam, n)
        assert np.max(np.abs(d @ fr.vectors[:, n])) <= 1e-8
