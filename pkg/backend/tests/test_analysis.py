import math

import numpy as np
import pytest

from app.core.exceptions import AdiabaticError, ScheduleError
from app.services.analysis import (
    JUMP,
    MARKER,
    SWEEP,
    adiabaticity_bound,
    analytic_back_forth,
    analytic_constant_gap,
    counterexample_slope,
    decompose,
    dynamic_phases,
    epsilon,
    epsilon_curve,
    epsilon_max,
    perfect_transfer_phase,
    phases_at_time,
    u_adia,
    u_adia_at_time,
    w_generator,
)
from app.services.paths import latitude_path, regauge, xy_geodesic
from app.services.propagate import propagate
from app.services.qcore import basis_state, fidelity, mhz_2pi
from app.services.schedules import (
    Constant,
    Modulated,
    Vanishing,
    back_forth,
    compensate,
    compile_continuous,
    compile_jumping,
)

OMEGA = mhz_2pi(5.0)
FIG1_OMEGA = mhz_2pi(6.0)
FIG1_T = 1e-6 / 0.12

@pytest.mark.parametrize("theta_g", [math.pi, 2 * math.pi])
@pytest.mark.parametrize("phi", [1.0, 5.0, 20.0, 100.0])
def test_propagator_matches_closed_form(theta_g, phi):
    path = latitude_path(math.pi / 2, theta_g)
    timeline = compile_continuous(path, Constant(OMEGA), phi / OMEGA)
    report = decompose(timeline)
    U, U_adia, U_dia = analytic_constant_gap(math.pi / 2, theta_g, phi)
    assert report.U.distance(U) < 1e-8
    assert report.U_adia.distance(U_adia) < 1e-8
    assert report.U_dia.distance(U_dia) < 1e-8

def test_closed_form_off_the_equator():
    theta, theta_g, phi = math.pi / 3, 2 * math.pi, 12.0
    path = latitude_path(theta, theta_g)
    report = decompose(compile_continuous(path, Constant(OMEGA), phi / OMEGA))
    U, U_adia, _ = analytic_constant_gap(theta, theta_g, phi)
    assert report.U.distance(U) < 1e-8
    assert report.U_adia.distance(U_adia) < 1e-8

@pytest.mark.parametrize("repeats", [2, 3])
def test_back_and_forth_closed_form(repeats):
    theta, theta_g, phi = math.pi / 3, math.pi, 7.0
    single = compile_continuous(latitude_path(theta, theta_g), Constant(OMEGA), phi / OMEGA)
    U = propagate(back_forth(single, repeats))
    assert U.distance(analytic_back_forth(theta, theta_g, phi, repeats)) < 1e-8

def test_decomposition_is_consistent(full_circle):
    report = decompose(compile_continuous(full_circle, Modulated(FIG1_OMEGA), 1e-6))
    assert report.decomposition_residual < 1e-12
    assert report.ode_residual < 1e-6
    assert report.bound_holds

@pytest.mark.parametrize("N", [1, 2, 3, 5, 10])
def test_jumping_is_exactly_adiabatic(half_circle, x_state, y_state, N):
    timeline = compile_jumping(half_circle, OMEGA, N)
    report = decompose(timeline)
    assert report.deviation_norm < 1e-9
    assert report.epsilon(1, 2, 1.0) < 1e-9
    assert fidelity(x_state.evolve(report.U), x_state.evolve(report.U_adia)) == pytest.approx(1.0, abs=1e-9)
    compensated = compensate(timeline, OMEGA)
    U = propagate(compensated)
    target = u_adia(half_circle, dynamic_phases(compensated), 1.0)
    assert fidelity(y_state.evolve(U), y_state.evolve(target)) == pytest.approx(1.0, abs=1e-9)

def test_compensation_cancels_the_dynamic_phase(half_circle):
    compensated = compensate(compile_jumping(half_circle, OMEGA, 5), OMEGA)
    record = dynamic_phases(compensated)
    assert record.phi(1.0)[0] == pytest.approx([0.0, 0.0], abs=1e-12)

def test_jumping_phase_record(half_circle):
    record = dynamic_phases(compile_jumping(half_circle, OMEGA, 5))
    kinds = [p.kind for p in record.pieces]
    assert kinds.count(JUMP) == 5 and kinds.count(MARKER) == 6
    assert record.phi(1.0)[0] == pytest.approx([2.5 * math.pi, -2.5 * math.pi])
    # φ jumps by π at the first path point and stays flat between points
    assert record.relative(1, 2, [0.09, 0.1, 0.2])[:] == pytest.approx([0.0, math.pi, math.pi])

def test_sweep_phase_record(half_circle):
    T = 2e-6
    record = dynamic_phases(compile_continuous(half_circle, Constant(OMEGA), T))
    assert [p.kind for p in record.pieces] == [SWEEP]
    assert record.relative(1, 2, [0.5])[0] == pytest.approx(0.5 * OMEGA * T)
    frame = record.to_frame(points=11)
    assert list(frame.columns) == ["s", "lambda", "phi_1", "phi_2", "gamma_1", "gamma_2"]
    assert frame["gamma_1"].iloc[-1] == pytest.approx(-0.5 * math.pi)

def test_modulated_gap_epsilon_grows_like_bessel(full_circle):
    record = dynamic_phases(compile_continuous(full_circle, Modulated(FIG1_OMEGA), FIG1_T))
    a = FIG1_OMEGA * FIG1_T
    slope = counterexample_slope()
    assert slope == pytest.approx(0.1149, abs=1e-4)
    for j in (10, 25, 49):
        lam = 2 * math.pi * j / a
        # φ_{1,2} is a multiple of 2π here
        assert abs(math.remainder(record.relative(1, 2, [lam])[0], 2 * math.pi)) < 1e-6
        assert epsilon(record, 1, 2, lam) == pytest.approx(slope * lam, rel=0.01)

def test_modulated_gap_is_not_adiabatic(full_circle, x_state):
    U = propagate(compile_continuous(full_circle, Modulated(FIG1_OMEGA), FIG1_T))
    assert fidelity(x_state.evolve(U), full_circle.eigenstate(1, 1.0)) < 0.9

def test_constant_gap_epsilon_is_small(full_circle):
    record = dynamic_phases(compile_continuous(full_circle, Constant(FIG1_OMEGA), FIG1_T))
    bound = 2.0 / (FIG1_OMEGA * FIG1_T)
    assert epsilon(record, 1, 2, 1.0) <= bound + 1e-3
    assert epsilon_max(record) <= bound + 1e-3

@pytest.mark.parametrize("k", [1, 2, 3])
def test_perfect_transfer_resonances(half_circle, x_state, k):
    phi = perfect_transfer_phase(math.pi, k)
    U = propagate(compile_continuous(half_circle, Constant(OMEGA), phi / OMEGA))
    assert fidelity(x_state.evolve(U), basis_state("-x")) == pytest.approx(1.0, abs=1e-9)
    detuned = 0.5 * (phi + perfect_transfer_phase(math.pi, k + 1))
    U = propagate(compile_continuous(half_circle, Constant(OMEGA), detuned / OMEGA))
    assert fidelity(x_state.evolve(U), basis_state("-x")) < 1.0 - 1e-3

def test_perfect_transfer_needs_room():
    assert perfect_transfer_phase(math.pi, 1) == pytest.approx(math.sqrt(3.0) * math.pi)
    with pytest.raises(ScheduleError):
        perfect_transfer_phase(7.0, 1)

def test_vanishing_gap_gives_linear_epsilon(half_circle):
    record = dynamic_phases(compile_continuous(half_circle, Vanishing(), 1e-6))
    for lam in (0.1, 0.37, 0.5, 1.0):
        assert epsilon(record, 1, 2, lam) == pytest.approx(lam, abs=1e-9)
    nodes, values = epsilon_curve(record, 1, 2)
    assert values == pytest.approx(nodes, abs=1e-9)

def test_regauging_leaves_physics_unchanged(rng):
    base = latitude_path(math.pi / 3, 2 * math.pi)
    c = rng.uniform(-3.0, 3.0, size=4)
    path = regauge(base, [
        lambda lam: c[0] * np.sin(c[1] * lam),
        lambda lam: c[2] * lam ** 2 + c[3] * lam,
    ])
    plain = compile_continuous(base, Modulated(OMEGA), 1e-6)
    regauged = compile_continuous(path, Modulated(OMEGA), 1e-6)
    a, b = dynamic_phases(plain), dynamic_phases(regauged)
    for lam in (0.25, 0.5, 1.0):
        assert abs(epsilon(a, 1, 2, lam) - epsilon(b, 1, 2, lam)) < 1e-8
    assert u_adia(base, a, 1.0).distance(u_adia(path, b, 1.0)) < 1e-8

def test_time_based_target_agrees_at_the_end(half_circle):
    for timeline in (
        compile_jumping(half_circle, OMEGA, 5),
        compile_continuous(half_circle, Modulated(OMEGA), 1e-6),
    ):
        end = u_adia_at_time(timeline, timeline.total_time)
        assert end.distance(u_adia(half_circle, dynamic_phases(timeline), 1.0)) < 1e-10

def test_phases_at_time(half_circle):
    T = 1e-6
    timeline = compile_continuous(half_circle, Constant(OMEGA), T)
    assert phases_at_time(timeline, 0.25 * T) == pytest.approx([0.125 * OMEGA * T, -0.125 * OMEGA * T])
    assert phases_at_time(timeline, 0.0) == pytest.approx([0.0, 0.0])
    with pytest.raises(ScheduleError):
        phases_at_time(timeline, 2 * T)

def test_w_generator_is_off_diagonal(half_circle):
    record = dynamic_phases(compile_continuous(half_circle, Constant(OMEGA), 1e-6))
    W = w_generator(half_circle, record, 0.3).entries
    assert np.allclose(np.diag(W), 0.0)
    assert abs(W[0, 1]) == pytest.approx(0.5 * math.pi)

def test_bound_at_an_intermediate_point(full_circle):
    report = decompose(compile_continuous(full_circle, Modulated(FIG1_OMEGA), 1e-6))
    check = adiabaticity_bound(report, 0.5)
    assert check.holds
    assert check.lhs >= 0.0

def test_label_and_range_checks(half_circle):
    record = dynamic_phases(compile_jumping(half_circle, OMEGA, 2))
    with pytest.raises(AdiabaticError) as exc:
        epsilon(record, 1, 1, 0.5)
    assert exc.value.code == "INVALID_LABELS"
    with pytest.raises(ScheduleError):
        epsilon(record, 1, 2, 1.5)
    with pytest.raises(AdiabaticError) as exc:
        u_adia(xy_geodesic(math.pi), record, 1.0)
    assert exc.value.code == "PATH_MISMATCH"
    assert epsilon(record, 1, 2, 0.0) == 0.0

def test_report_serializes(half_circle):
    report = decompose(compile_jumping(half_circle, OMEGA, 3))
    payload = report.to_dict(points=9)
    assert payload["bound_holds"]
    assert set(payload["phases"]) == {"s", "lambda", "phi_1", "phi_2", "gamma_1", "gamma_2"}
