import json
import math

import numpy as np
import pytest
from scipy import integrate

from app.core.exceptions import ScheduleError
from app.services.qcore import SIGMA_Z, mhz_2pi
from app.services.schedules import (
    Biased,
    Constant,
    Crossing,
    DriveTimeline,
    Modulated,
    Segment,
    Vanishing,
    back_forth,
    compensate,
    compile_continuous,
    compile_hybrid,
    compile_idle,
    compile_jumping,
    jumping_points,
    segment_hamiltonians,
)

OMEGA = mhz_2pi(5.0)
T = 3e-6

def test_jumping_points():
    assert jumping_points(5) == pytest.approx([0.1, 0.3, 0.5, 0.7, 0.9])
    with pytest.raises(ScheduleError):
        jumping_points(0)

@pytest.mark.parametrize("N", [1, 2, 5])
def test_jumping_is_pi_pulses_joined_by_markers(half_circle, N):
    timeline = compile_jumping(half_circle, OMEGA, N)
    assert timeline.static_lambdas() == pytest.approx(jumping_points(N))
    assert len(timeline.segments) == 2 * N + 1
    assert timeline.total_time == pytest.approx(N * math.pi / OMEGA)
    assert timeline.initial_lambda == 0.0 and timeline.final_lambda == 1.0

def test_jumping_on_intrinsic_path_uses_local_gap(lz):
    timeline = compile_jumping(lz, None, 5)
    pulses = [s for s in timeline.segments if not s.is_marker]
    gaps = lz.intrinsic_gap(jumping_points(5))
    assert [p.duration for p in pulses] == pytest.approx(list(math.pi / gaps))
    assert all(p.gap is None for p in pulses)

def test_jumping_needs_a_gap_on_external_path(half_circle):
    with pytest.raises(ScheduleError):
        compile_jumping(half_circle, None, 3)

def test_continuous_sweep(half_circle):
    timeline = compile_continuous(half_circle, Constant(OMEGA), T)
    assert len(timeline.segments) == 1
    assert timeline.lambda_of_t(0.25 * T) == pytest.approx(0.25)
    with pytest.raises(ScheduleError):
        compile_continuous(half_circle, None, T)
    with pytest.raises(ScheduleError):
        compile_continuous(half_circle, Constant(OMEGA), 0.0)

def test_continuous_lz_sweep_is_clipped(lz):
    timeline = compile_continuous(lz, None, T)
    assert timeline.lambda_clip == pytest.approx(0.02)
    assert [s.is_marker for s in timeline.segments] == [True, False, True]
    assert timeline.segments[1].lambda_start == pytest.approx(0.02)
    assert timeline.final_lambda == 1.0

def test_hybrid_limits(half_circle):
    jumping = compile_jumping(half_circle, OMEGA, 5)
    assert compile_hybrid(half_circle, OMEGA, 5, 1.0).isclose(jumping)
    continuous = compile_hybrid(half_circle, OMEGA, 5, 0.0, T)
    assert len(continuous.segments) == 1
    assert continuous.total_time == pytest.approx(T)
    assert continuous.segments[0].lambda_end == 1.0

def test_hybrid_keeps_total_drive_time(half_circle):
    timeline = compile_hybrid(half_circle, OMEGA, 5, 0.5, T)
    assert timeline.total_time == pytest.approx(T)
    assert sum(1 for s in timeline.segments if not s.is_marker) == 5

def test_hybrid_rejects_bad_ratio(half_circle):
    with pytest.raises(ScheduleError):
        compile_hybrid(half_circle, OMEGA, 5, 1.5, T)

def test_back_forth_alternates_direction(half_circle):
    single = compile_jumping(half_circle, OMEGA, 3)
    assert back_forth(single, 2).final_lambda == 0.0
    three = back_forth(single, 3)
    assert three.final_lambda == 1.0
    assert three.total_time == pytest.approx(3 * single.total_time)
    with pytest.raises(ScheduleError):
        back_forth(single, 0)

def test_compensation_reverses_the_drive(half_circle):
    single = compile_jumping(half_circle, OMEGA, 3)
    extended = compensate(single, OMEGA)
    last = extended.segments[-1]
    assert last.phase_flip and last.duration == pytest.approx(single.total_time)
    assert extended.total_time == pytest.approx(2 * single.total_time)

def test_segment_hamiltonian_sign_and_detuning(half_circle):
    seg = Segment(1e-7, 0.5, 0.5, gap=Constant(OMEGA), sweep_time=1e-7)
    flipped = Segment(1e-7, 0.5, 0.5, gap=Constant(OMEGA), sweep_time=1e-7, phase_flip=True)
    detuned = Segment(1e-7, 0.5, 0.5, gap=Constant(OMEGA), sweep_time=1e-7, detuning=1e6)
    base = segment_hamiltonians(half_circle, seg, [0.5])[0]
    assert np.allclose(segment_hamiltonians(half_circle, flipped, [0.5])[0], -base)
    assert np.allclose(segment_hamiltonians(half_circle, detuned, [0.5])[0], base + 0.5e6 * SIGMA_Z)
    assert np.linalg.eigvalsh(base) == pytest.approx([-0.5 * OMEGA, 0.5 * OMEGA])

def test_lambda_is_right_continuous_at_pulse_edges(half_circle):
    timeline = compile_jumping(half_circle, OMEGA, 2)
    tau = math.pi / OMEGA
    assert timeline.lambda_of_t(0.5 * tau) == pytest.approx(0.25)
    assert timeline.lambda_of_t(tau) == pytest.approx(0.75)
    assert timeline.lambda_of_t(10.0) == 1.0

def test_split_keeps_the_schedule(half_circle):
    timeline = compile_continuous(half_circle, Constant(OMEGA), T)
    split = timeline.split_at([0.3 * T, 0.6 * T])
    assert len(split.segments) == 3
    assert split.total_time == pytest.approx(T)
    assert split.segments[1].lambda_start == pytest.approx(0.3)

def test_timeline_must_be_continuous(half_circle):
    with pytest.raises(ScheduleError):
        DriveTimeline(half_circle, (Segment(1e-7, 0.0, 0.4), Segment(1e-7, 0.5, 1.0)))
    with pytest.raises(ScheduleError):
        DriveTimeline(half_circle, ())

def test_negative_duration_rejected():
    with pytest.raises(ScheduleError):
        Segment(-1.0, 0.0, 1.0)

@pytest.mark.parametrize("gap", [Modulated(OMEGA), Crossing(OMEGA), Biased(Crossing(OMEGA), 1.1)])
def test_gap_integrals_match_quadrature(gap):
    expected, _ = integrate.quad(lambda lam: gap.gap([lam], T)[0], 0.1, 0.7, limit=400)
    assert gap.integral(0.1, 0.7, T) == pytest.approx(expected, rel=1e-8)

def test_crossing_gap_changes_sign():
    gap = Crossing(OMEGA, 2.34)
    assert gap.omega0_prime == pytest.approx(math.sqrt(2.0 / (2.0 + 2.34 ** 2)) * OMEGA)
    values = gap.gap(np.linspace(0.0, 1.0, 1001), 8.333e-6)
    assert values.min() < 0 < values.max()

def test_gap_parameters_are_checked():
    with pytest.raises(ScheduleError):
        Constant(0.0)
    with pytest.raises(ScheduleError):
        Biased(Constant(OMEGA), float("nan"))
    assert Vanishing().integral(0.0, 1.0, T) == 0.0

def test_idle_timeline(half_circle):
    timeline = compile_idle(half_circle, 0.0, 1e-6)
    assert timeline.segments[0].is_static
    with pytest.raises(ScheduleError):
        compile_idle(half_circle, 0.0, 0.0)

def test_dump_json(half_circle, tmp_path):
    target = compile_jumping(half_circle, OMEGA, 3).dump_json(tmp_path / "timeline.json")
    payload = json.loads(target.read_text())
    assert len(payload["segments"]) == 7
    assert payload["path"]["name"] == "xy_geodesic"

def test_gap_follows_the_sweep(half_circle):
    gap = Modulated(OMEGA)
    timeline = compile_continuous(half_circle, gap, T)
    times = np.linspace(0.0, T, 41)
    lams = np.array([timeline.lambda_of_t(t) for t in times])
    assert timeline.gap_of_t(times) == pytest.approx(gap.gap(lams, T), rel=1e-12)

def test_gap_of_jumping_and_compensated_drive(half_circle):
    single = compile_jumping(half_circle, OMEGA, 3)
    tau = math.pi / OMEGA
    assert single.gap_of_t([0.0, 0.5 * tau, 2.0 * tau, single.total_time]) == pytest.approx([OMEGA] * 4)
    extended = compensate(single, OMEGA)
    assert extended.gap_of_t([1.5 * single.total_time])[0] == pytest.approx(-OMEGA)

def test_gap_of_intrinsic_path(lz):
    timeline = compile_jumping(lz, None, 2)
    tau = math.pi / lz.intrinsic_gap([0.25])[0]
    assert timeline.gap_of_t([0.5 * tau]) == pytest.approx(lz.intrinsic_gap([0.25]))
