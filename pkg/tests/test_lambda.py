import math

import numpy as np
import pytest

from georabi.dynamics import evolve_full, gamma_line
from georabi.lambda_system import (
    LambdaModel,
    LambdaParams,
    circle_path,
    drive_couplings,
    excited_amplitude,
    gamma_analytic,
    mixing,
    mixing_at,
    to_generic,
)
from georabi.paths import ArcPath, ChainPath, EllipsePath, LinePath
from georabi.spectrum import DegeneracyError

NAMES = ("epsilon", "delta")


@pytest.mark.parametrize("eps,delta,alpha,half_split", [
    (1.0, 0.0, 0.0, 0.5),
    (0.0, 1.0, math.pi / 4, 0.5),
    (1.0, 1.0, math.pi / 8, math.sqrt(2) / 2),
])
def test_mixing_examples(eps, delta, alpha, half_split):
    m = mixing(LambdaParams(epsilon=eps, delta=delta))
    assert m.alpha == pytest.approx(alpha, abs=1e-15)
    assert m.e_plus == pytest.approx(half_split, abs=1e-15)
    assert m.e_minus == pytest.approx(-half_split, abs=1e-15)
    rho = math.hypot(eps, delta)
    assert math.cos(2 * m.alpha) == pytest.approx(eps / rho, abs=1e-12)
    assert math.sin(2 * m.alpha) == pytest.approx(delta / rho, abs=1e-12)


def test_mixing_at_ground_axis_is_g1():
    m = mixing_at(1.0, 0.0)
    assert np.array_equal(m.g_minus, [1.0, -0.0]) or np.allclose(m.g_minus, [1.0, 0.0])


def test_origin_is_degenerate():
    with pytest.raises(DegeneracyError):
        mixing(LambdaParams(epsilon=0.0, delta=0.0))
    with pytest.raises(DegeneracyError):
        to_generic(LambdaParams(), LinePath(NAMES, [-1.0, 0.0], [1.0, 0.0], 1.0))


def test_drive_couplings_examples():
    p = LambdaParams(beta_pol=None, field=0.02)
    assert drive_couplings(p, 0.3) == (0.0, pytest.approx(p.coupling))
    fixed = p.replace(beta_pol=0.3 + math.pi / 2)
    assert drive_couplings(fixed, 0.3) == pytest.approx((p.coupling, 0.0), abs=1e-15)
    quarter = p.replace(beta_pol=0.3 + math.pi / 4)
    s = p.coupling / math.sqrt(2)
    assert drive_couplings(quarter, 0.3) == pytest.approx((s, s), abs=1e-15)


def test_alpha_is_continuous_around_origin():
    path = circle_path(1.0, cycles=3)
    prev = None
    alphas = []
    for t in np.linspace(0, path.duration, 3001):
        eps, dl = path.position(t)
        prev = mixing_at(eps, dl, previous=prev.alpha if prev else None)
        alphas.append(prev.alpha)
    steps = np.diff(alphas)
    assert np.max(np.abs(steps)) < 0.01
    assert alphas[-1] - alphas[0] == pytest.approx(3 * math.pi, rel=1e-9)


def test_gamma_analytic_examples():
    p = LambdaParams(field=0.01)
    spoke = LinePath(NAMES, [0.5, 0.5], [2.0, 2.0], 10.0)
    assert gamma_analytic(p, spoke) == 0.0
    for radius in (0.5, 2.0):
        assert gamma_analytic(p, circle_path(radius)) == pytest.approx(-math.pi * p.coupling / radius, rel=1e-10)
    half = ArcPath(NAMES, [0, 0], 2.0, 0.0, math.pi, 10.0)
    assert gamma_analytic(p, half) == pytest.approx(-math.pi / 2 * p.coupling / 2.0, rel=1e-10)


def test_reversal_negates_gamma():
    p = LambdaParams(field=0.01)
    forward = ChainPath.annular_sector(NAMES, 0.7, 1.5, 0.2, 2.0)
    backward = EllipsePath(NAMES, [0.3, 0.1], [1.0, 0.0], [0.0, -0.8], omega=0.1)
    ccw = EllipsePath(NAMES, [0.3, 0.1], [1.0, 0.0], [0.0, 0.8], omega=0.1)
    assert gamma_analytic(p, backward) == pytest.approx(-gamma_analytic(p, ccw), rel=1e-14)
    assert gamma_analytic(p, forward) == pytest.approx(0.5 * p.coupling * 1.8 * (1 / 0.7 - 1 / 1.5), rel=1e-10)


def test_excited_amplitude_examples():
    assert excited_amplitude(0.0) == 0.0
    assert excited_amplitude(math.pi / 2) == 1.0
    assert excited_amplitude(-math.pi * 0.01) == pytest.approx(-0.031411, abs=1e-6)


def test_eigenframe_reproduces_mixing_state():
    model = LambdaModel(LambdaParams())
    for eps, dl in [(1.0, 0.2), (-0.4, 0.9), (0.3, -1.1)]:
        fr = model.eigenframe(model.point([eps, dl]))
        ms = mixing_at(eps, dl)
        assert fr.energies[:2] == pytest.approx([ms.e_minus, ms.e_plus], abs=1e-14)
        assert abs(fr.vectors[:2, 0] @ ms.g_minus) == pytest.approx(1.0, abs=1e-12)
        assert abs(fr.vectors[:2, 1] @ ms.g_plus) == pytest.approx(1.0, abs=1e-12)


def test_interference_keeps_g_minus_undriven():
    p = LambdaParams(field=0.05)
    model, path, _ = to_generic(p, circle_path(1.3, cycles=2))
    ref = None
    for t in np.linspace(0, path.duration, 97):
        ref = model.eigenframe(path.point(t), reference=ref)
        hp = model.hprime_eigen(ref)
        assert abs(hp[2, 0]) <= 1e-15 * p.coupling
        assert abs(abs(hp[2, 1]) - p.coupling) < 1e-15


def test_generic_gamma_matches_closed_form():
    p = LambdaParams(field=0.01)
    for path in (circle_path(1.0), ChainPath.annular_sector(NAMES, 0.5, 1.2, -0.3, 1.0),
                 EllipsePath(NAMES, [0.4, 0.2], [1.1, 0.1], [0.0, 0.9], omega=0.05)):
        model, path, _ = to_generic(p, path)
        ga = gamma_analytic(p, path)
        assert gamma_line(model, path) == pytest.approx(ga, rel=1e-6)


def test_static_point_stays_in_g_minus():
    p = LambdaParams(epsilon=1.0, delta=0.3, field=0.01)
    model, path, drive = to_generic(p, duration=300.0)
    rec = evolve_full(model, path, drive, np.array([1, 0, 0], dtype=complex))
    assert rec.populations[:, 0].min() >= 1 - 1e-4


def test_validity_flags_reported_not_enforced():
    p = LambdaParams(e_excited=5.0, field=0.5)
    model, _, _ = to_generic(p, circle_path(1.0))
    assert model.validity["gap_ok"] is False and model.validity["offresonance_ok"] is False
    assert LambdaParams().validity()["gap_ratio"] == pytest.approx(20.0)
    with pytest.raises(ValueError):
        LambdaParams(e_excited=-1.0)
