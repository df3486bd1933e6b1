import math

import numpy as np
import pytest
from scipy.linalg import expm

from georabi import kernels
from georabi.dynamics import (
    ConvergenceError,
    DriveSchedule,
    PathSampler,
    RealnessError,
    StepControl,
    Surface,
    adiabaticity_report,
    effective_field_f,
    effective_kappa,
    evolve_full,
    evolve_geometric,
    evolve_rwa,
    flag_for,
    gamma_line,
    gamma_surface,
    resonant_omega,
    stark_shifts,
)
from georabi.lambda_system import LambdaParams, circle_path, to_generic
from georabi.paths import EllipsePath, LinePath, StaticPath
from georabi.spectrum import DegeneracyError, MatrixModel, Roles

SIGMA_Y = np.array([[0, -1j], [1j, 0]])


def toy_static(g=0.1):
    """Energies 0, 1, 5 with the auxiliary on top, coupled to both ends by g."""
    h0 = np.diag([0.0, 1.0, 5.0])
    hp = np.zeros((3, 3))
    hp[0, 2] = hp[2, 0] = hp[1, 2] = hp[2, 1] = g
    return MatrixModel(("x",), lambda lam: h0, lambda lam: hp, Roles(state0=0, auxiliary=(2,), state2=1))


def rotating_toy(g=0.5, e_aux=5.0, e2=1.0):
    """Φ0 = (cos λ, -sin λ, 0) and Φ_aux = (sin λ, cos λ, 0) rotate; H′ links Φ_aux to the fixed e2."""
    def vecs(lam):
        c, s = math.cos(lam["lam"]), math.sin(lam["lam"])
        return np.array([c, -s, 0.0]), np.array([s, c, 0.0]), np.array([0.0, 0.0, 1.0])

    def h0(lam):
        p0, p1, p2 = vecs(lam)
        return e_aux * np.outer(p1, p1) + e2 * np.outer(p2, p2)

    def hp(lam):
        _, p1, p2 = vecs(lam)
        return g * (np.outer(p1, p2) + np.outer(p2, p1))

    return MatrixModel(("lam",), h0, hp, Roles(state0=0, auxiliary=(2,), state2=1))


def direct_model(g):
    h0 = np.diag([0.0, 1.0, 5.0])
    hp = np.zeros((3, 3))
    hp[0, 1] = hp[1, 0] = g
    return MatrixModel(("x",), lambda lam: h0, lambda lam: hp, Roles(state0=0, auxiliary=(2,), state2=1))


def random_model(seed, n=4):
    rng = np.random.default_rng(seed)
    parts = []
    for scale in (1.0, 0.2, 0.2):
        m = rng.normal(size=(n, n)) * scale
        parts.append(0.5 * (m + m.T))
    parts[0] += np.diag(np.arange(n) * 2.0)
    a, b, c = parts
    hp = rng.normal(size=(n, n)) * 0.1
    hp = hp + hp.T
    return MatrixModel(("x", "y"), lambda lam: a + lam["x"] * b + lam["y"] * c, lambda lam: hp,
                       Roles(state0=0, auxiliary=tuple(range(1, n - 1)), state2=n - 1))


# ---------------------------------------------------------------- local quantities


def test_stark_shifts_toy_values():
    F = 0.7
    m = toy_static()
    lam = m.point([0.0])
    d0, d2 = stark_shifts(m, lam, [0.0], F, rule="quasistatic")
    assert d0 == pytest.approx(2 * (0.1 * F) ** 2 / (0 - 5), rel=1e-14)
    assert d2 == pytest.approx(2 * (0.1 * F) ** 2 / (1 - 5), rel=1e-14)
    assert d0 < 0 and d2 < 0
    w = resonant_omega(m, lam, [0.0], F, rule="quasistatic")
    assert w == pytest.approx(1.0 - d0 + d2, rel=1e-14)


def test_stark_shifts_vanish_without_drive_or_motion():
    m = toy_static()
    lam = m.point([0.0])
    for rule in ("quasistatic", "sideband"):
        assert tuple(stark_shifts(m, lam, [0.0], 0.0, rule=rule)) == (0.0, 0.0)
    assert resonant_omega(m, lam, [0.0], 0.0) == 1.0


def test_sideband_rule_reduces_to_quasi_static_form():
    m = toy_static()
    lam = m.point([0.0])
    slow = stark_shifts(m, lam, [0.0], 0.3, rule="sideband", omega=1e-9)
    quasi = stark_shifts(m, lam, [0.0], 0.3, rule="quasistatic")
    assert slow.delta0 == pytest.approx(quasi.delta0, rel=1e-8)


def test_kappa_for_rotating_basis():
    g, e_aux = 0.5, 5.0
    m = rotating_toy(g, e_aux)
    lam = m.point([0.3])
    rate = 0.02
    k = effective_kappa(m, lam, [rate], 1.0)
    assert k == pytest.approx(1j * rate * g / (e_aux - 0.0), rel=1e-7)
    f = effective_field_f(m, lam, 1.0).f
    assert complex(f @ [rate]) == pytest.approx(k, rel=1e-12)


def test_field_vanishes_in_trivial_cases():
    m = rotating_toy()
    lam = m.point([0.3])
    assert effective_kappa(m, lam, [0.0], 1.0) == 0
    assert np.all(effective_field_f(m, lam, 0.0).f == 0)
    fixed = toy_static()
    assert np.all(effective_field_f(fixed, fixed.point([0.2]), 1.0).f == 0)
    no_aux_drive = MatrixModel(("lam",), rotating_toy().h0_at, lambda lam: np.zeros((3, 3)), rotating_toy().roles)
    assert effective_kappa(no_aux_drive, lam, [1.0], 1.0) == 0


def test_kappa_equals_field_dot_velocity():
    m = random_model(4)
    lam = m.point([0.1, -0.2])
    v = np.array([0.3, -0.7])
    f = effective_field_f(m, lam, 0.8).f
    assert effective_kappa(m, lam, v, 0.8) == pytest.approx(complex(f @ v), rel=1e-12)


def test_lambda_field_along_alpha():
    p = LambdaParams(field=0.01)
    model, _, _ = to_generic(p, circle_path(1.0))
    rho, phi = 1.7, 0.9
    lam = model.point([rho * math.cos(phi), rho * math.sin(phi)])
    f = effective_field_f(model, lam, 1.0).f
    d_lam_d_alpha = 2 * rho * np.array([-math.sin(phi), math.cos(phi)])
    assert complex(1j * f @ d_lam_d_alpha) == pytest.approx(-p.coupling / rho, rel=1e-7)


def test_lambda_resonance_uses_g_minus_to_e_gap():
    p = LambdaParams(field=0.01)
    model, path, drive = to_generic(p, circle_path(1.0))
    lam = path.point(0.0)
    e = model.eigenframe(lam).energies
    w = resonant_omega(model, lam, path.velocity(0.0), 1.0, rule="quasistatic")
    d = stark_shifts(model, lam, path.velocity(0.0), 1.0, rule="quasistatic")
    assert w == pytest.approx(e[2] - e[0] - (d.delta0 - d.delta2), rel=1e-14)


# ---------------------------------------------------------------- evolution


def test_stationary_state_keeps_populations_and_phase():
    m = toy_static()
    path = StaticPath(("x",), [0.0], 200.0)
    psi0 = np.array([1, 1, 0], dtype=complex) / math.sqrt(2)
    rec = evolve_full(m, path, DriveSchedule(amplitude=0.0), psi0)
    assert np.max(np.abs(rec.populations - rec.populations[0])) < 1e-12
    rel = rec.amplitudes[:, 1] / rec.amplitudes[:, 0]
    assert np.allclose(rel, np.exp(-1j * 1.0 * rec.times), atol=1e-8)


def test_direct_coupling_rabi_oscillation():
    g = 1e-3
    m = direct_model(g)
    T = 3 * math.pi / g
    path = StaticPath(("x",), [0.0], T)
    rec = evolve_full(m, path, DriveSchedule(amplitude=1.0, omega_rule="fixed", omega=1.0),
                      np.array([1, 0, 0], dtype=complex))
    assert np.max(np.abs(rec.populations[:, 1] - np.sin(g * rec.times) ** 2)) < 1e-3


def test_rwa_static_and_constant_kappa():
    m = rotating_toy(g=0.5)
    static = StaticPath(("lam",), [0.3], 100.0)
    rec = evolve_rwa(m, static, DriveSchedule(amplitude=1.0), np.array([1, 0], dtype=complex))
    assert np.max(np.abs(rec.populations[:, 0] - 1)) < 1e-12
    L, T = 10.0, 400.0  # |κ|T = g L / 5 = 1
    line = LinePath(("lam",), [0.0], [L], T)
    rec = evolve_rwa(m, line, DriveSchedule(amplitude=1.0), np.array([1, 0], dtype=complex))
    kappa = 0.5 * (L / T) / 5.0
    assert np.allclose(rec.populations[:, 1], np.sin(kappa * rec.times) ** 2, atol=1e-8)
    assert rec.gamma_accumulated[-1] == pytest.approx(-1.0, rel=1e-8)  # Γ = i∫f·dλ = -gL/5


def test_geometric_zero_path_is_identity():
    m = rotating_toy()
    psi0 = np.array([0.6, 0.8j])
    rec = evolve_geometric(m, StaticPath(("lam",), [0.3], 10.0), 1.0, psi0)
    assert np.array_equal(rec.final, psi0)


def test_geometric_quarter_turn_transfers_fully():
    g = 0.5
    m = rotating_toy(g)
    L = math.pi / 2 * 5.0 / g
    rec = evolve_geometric(m, LinePath(("lam",), [0.0], [L], 1.0), 1.0, np.array([1, 0], dtype=complex))
    assert abs(rec.final[0]) < 1e-9 and abs(abs(rec.final[1]) - 1) < 1e-9
    assert rec.gamma_accumulated[-1] == pytest.approx(-math.pi / 2, rel=1e-9)


def test_geometric_cycles_compose():
    p = LambdaParams(field=0.03)
    model, path, _ = to_generic(p, circle_path(1.0, cycles=1))
    one = evolve_geometric(model, path, 1.0, np.array([1, 0], dtype=complex), segments=800)
    gam = one.gamma_accumulated[-1]
    model3, path3, _ = to_generic(p, circle_path(1.0, cycles=3))
    three = evolve_geometric(model3, path3, 1.0, np.array([1, 0], dtype=complex), segments=2400)
    assert np.allclose(three.final, expm(-1j * 3 * gam * SIGMA_Y) @ [1, 0], atol=1e-9)


class _TwistedDrive(MatrixModel):
    """Drive phase winding with λ: the field direction turns, so segment factors do not commute."""

    def hprime_eigen(self, frame):
        return np.exp(3j * frame.lam["lam"]) * super().hprime_eigen(frame)


def test_geometric_product_converges_at_fourth_order():
    base = rotating_toy(g=2.0)
    m = _TwistedDrive(base.param_names, base.h0_at, base.hprime_at, base.roles)
    path = LinePath(("lam",), [0.0], [3.0], 1.0)
    psi0 = np.array([1, 0], dtype=complex)
    finals = [evolve_geometric(m, path, 1.0, psi0, segments=n, check=False).final for n in (100, 200, 400)]
    d1 = np.max(np.abs(finals[1] - finals[0]))
    d2 = np.max(np.abs(finals[2] - finals[1]))
    assert d2 <= 1e-8
    assert 12.0 < d1 / d2 < 20.0


def test_geometric_halving_check_rejects_coarse_products():
    model, path, _ = to_generic(LambdaParams(field=0.05), circle_path(1.0, cycles=10))
    with pytest.raises(ConvergenceError):
        evolve_geometric(model, path, 1.0, np.array([1, 0], dtype=complex), segments=20)


def test_geometric_is_speed_independent_bitwise():
    model, path, _ = to_generic(LambdaParams(field=0.02), circle_path(1.0))
    psi0 = np.array([1, 0], dtype=complex)
    a = evolve_geometric(model, path, 1.0, psi0, segments=600).final
    b = evolve_geometric(model, path.rescaled(3.0), 1.0, psi0, segments=600).final
    assert np.array_equal(a, b)


def test_lambda_cross_method_agreement():
    p = LambdaParams(field=0.01)
    model, path, drive = to_generic(p, circle_path(1.0, omega=0.02))
    sampler = PathSampler.build(model, path, drive)
    full = evolve_full(model, path, drive, np.array([1, 0, 0], dtype=complex), sampler=sampler)
    rwa = evolve_rwa(model, path, drive, np.array([1, 0], dtype=complex), sampler=sampler)
    geo = evolve_geometric(model, path, 1.0, np.array([1, 0], dtype=complex))
    p_full = np.abs(full.rotating) ** 2
    interp = np.stack([np.interp(rwa.times, full.times, p_full[:, k]) for k in range(2)], axis=1)
    assert np.max(np.abs(interp - rwa.populations)) <= 0.05
    assert np.max(np.abs(rwa.populations[-1] - geo.populations[-1])) <= 0.01
    for rec in (full, rwa, geo):
        assert rec.norm_error() <= 1e-6


def test_backends_agree():
    if "compiled" not in kernels.available():
        pytest.skip("compiled kernel not built")
    m = direct_model(0.01)
    path = StaticPath(("x",), [0.0], 60.0)
    drive = DriveSchedule(amplitude=1.0, omega_rule="fixed", omega=1.0)
    ctrl = StepControl(check=False)
    psi0 = np.array([1, 0, 0], dtype=complex)
    a = evolve_full(m, path, drive, psi0, ctrl, backend="compiled")
    b = evolve_full(m, path, drive, psi0, ctrl, backend="python")
    assert np.max(np.abs(a.amplitudes - b.amplitudes)) < 1e-12


def test_full_drive_step_halving_reports_order():
    m = direct_model(0.05)
    path = StaticPath(("x",), [0.0], 50.0)
    drive = DriveSchedule(amplitude=1.0, omega_rule="fixed", omega=1.0)
    psi0 = np.array([1, 0, 0], dtype=complex)
    finals = [evolve_full(m, path, drive, psi0, StepControl(steps_per_period=n, check=False)).final
              for n in (40, 80, 160)]
    ratio = np.max(np.abs(finals[1] - finals[0])) / np.max(np.abs(finals[2] - finals[1]))
    assert 12 < ratio < 20  # fourth order


# ---------------------------------------------------------------- rotation angle


def test_gamma_line_zero_cases():
    model, _, _ = to_generic(LambdaParams(), circle_path(1.0))
    assert gamma_line(model, StaticPath(("epsilon", "delta"), [1.0, 0.5], 10.0)) == 0.0
    spoke = LinePath(("epsilon", "delta"), [1.0, 1.0], [2.0, 2.0], 5.0)
    assert abs(gamma_line(model, spoke)) < 1e-13


def test_gamma_line_lambda_circle():
    p = LambdaParams(field=0.01)
    for radius in (0.5, 1.0, 2.0):
        model, path, _ = to_generic(p, circle_path(radius))
        assert gamma_line(model, path) == pytest.approx(-math.pi * p.coupling / radius, rel=1e-9)


class _ComplexDrive(MatrixModel):
    """A drive with a complex phase, which makes i·f complex."""

    def hprime_eigen(self, frame):
        return np.exp(0.4j) * super().hprime_eigen(frame)


def test_gamma_line_rejects_complex_fields():
    base = rotating_toy()
    m = _ComplexDrive(("lam",), base.h0_at, base.hprime_at, base.roles)
    path = LinePath(("lam",), [0.0], [1.0], 1.0)
    with pytest.raises(RealnessError):
        gamma_line(m, path)
    # real-symmetric models always give a real rate
    g, residual = gamma_line(random_model(2), EllipsePath(("x", "y"), [0, 0], [0.3, 0], [0, 0.2], omega=1.0),
                             return_residual=True)
    assert residual <= 1e-12


def test_gamma_surface_zero_area():
    model, _, _ = to_generic(LambdaParams(), circle_path(1.0))
    assert gamma_surface(model, Surface.point(("epsilon", "delta"), [1.0, 0.0])) == 0.0


def test_gamma_surface_lambda_sector():
    p = LambdaParams(field=0.01)
    model, _, _ = to_generic(p, circle_path(1.0))
    r1, r2, f0, f1 = 0.8, 1.6, 0.3, 1.4
    closed = 0.5 * p.coupling * (f1 - f0) * (1 / r1 - 1 / r2)
    s = gamma_surface(model, Surface.annular_sector(("epsilon", "delta"), r1, r2, f0, f1))
    assert s == pytest.approx(closed, rel=1e-3)


def test_gamma_surface_refuses_to_enclose_degeneracy():
    model, _, _ = to_generic(LambdaParams(), circle_path(1.0))
    names = ("epsilon", "delta")
    with pytest.raises(DegeneracyError):
        gamma_surface(model, Surface.filled_ellipse(circle_path(1.0)))
    with pytest.raises(DegeneracyError):
        gamma_surface(model, Surface.filled_ellipse(circle_path(1.0, center=(0.4, -0.3))))
    # a full annulus leaves the origin in its hole, so it is allowed
    ring = gamma_surface(model, Surface.annular_sector(names, 0.5, 1.0, 0.0, 2 * math.pi), nodes=(8, 32))
    assert ring == pytest.approx(0.5 * LambdaParams().coupling * 2 * math.pi * (1 / 0.5 - 1 / 1.0), rel=1e-3)
    off_centre = Surface.filled_ellipse(circle_path(1.0, center=(2.5, 0.0)))
    assert off_centre.winding([0.0, 0.0]) == 0
    assert math.isfinite(gamma_surface(model, off_centre, nodes=(4, 8)))


# ---------------------------------------------------------------- diagnostics


def test_adiabaticity_static_undriven_is_zero():
    m = toy_static()
    rep = adiabaticity_report(m, StaticPath(("x",), [0.0], 10.0), DriveSchedule(amplitude=0.0), probes=8)
    assert rep.nonadiabatic_max == 0.0 and rep.offresonance_max == 0.0 and rep.flag == "ok"


def test_adiabaticity_scales_with_speed():
    p = LambdaParams(field=0.01)
    model, path, drive = to_generic(p, circle_path(1.0, omega=0.02))
    slow = adiabaticity_report(model, path, drive, probes=16)
    fast = adiabaticity_report(model, path.rescaled(2.0), drive, probes=16)
    assert fast.nonadiabatic_max == pytest.approx(2 * slow.nonadiabatic_max, rel=1e-6)
    assert fast.offresonance_max == pytest.approx(slow.offresonance_max, rel=1e-3)
    # off-resonance ratio of the Λ system is dℰ/ρ
    assert slow.offresonance_max == pytest.approx(p.coupling / 1.0, rel=1e-3)


def test_flag_thresholds():
    assert flag_for(0.01) == "ok" and flag_for(0.1) == "marginal" and flag_for(0.5) == "violated"


def test_invalid_inputs():
    m = toy_static()
    path = StaticPath(("x",), [0.0], 1.0)
    with pytest.raises(ValueError):
        evolve_full(m, path, DriveSchedule(), np.array([1, 1, 0], dtype=complex))
    with pytest.raises(ValueError):
        DriveSchedule(omega_rule="fixed")
    with pytest.raises(ValueError):
        stark_shifts(m, m.point([0.0]), [0.0], rule="bogus")


def test_preset_ellipse_rwa_matches_geometric_state(well_ellipse):
    model, path = well_ellipse
    F = 0.003  # keeps both ratio families below 0.03
    drive = DriveSchedule(amplitude=F)
    rep = adiabaticity_report(model, path, drive, probes=32)
    assert rep.worst <= 0.03
    psi0 = np.array([1, 0], dtype=complex)
    rwa = evolve_rwa(model, path, drive, psi0)
    geo = evolve_geometric(model, path, F, psi0)
    assert np.max(np.abs(rwa.final - geo.final)) <= 1e-3
    assert abs(geo.final[1]) == pytest.approx(abs(math.sin(geo.gamma_accumulated[-1])), rel=1e-6)
