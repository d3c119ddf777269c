import math

import numpy as np
import pytest

from app.core.exceptions import NoiseModelError, ScheduleError, TrajectoryError
from app.schemas.noise import (
    AMPLITUDE,
    DETUNING,
    BiasAmplitude,
    OUAmplitude,
    StaticGaussianDetuning,
    StaticLorentzAmplitude,
    WhiteGaussianAmplitude,
)
from app.services import noise
from app.services.noise import (
    ENSEMBLE_COLUMNS,
    apply_noise,
    apply_traces,
    monte_carlo,
    sample_trace,
    target_states,
)
from app.services.propagate import evolve_state
from app.services.qcore import fidelity, mhz_2pi
from app.services.schedules import Constant, Vanishing, compile_continuous, compile_idle, compile_jumping

OMEGA = mhz_2pi(5.0)
WHITE = WhiteGaussianAmplitude(rel_std=0.5, dwell_ns=10.0)

def test_traces_are_deterministic():
    a = sample_trace(WHITE, 1e-6, seed=7)
    b = sample_trace(WHITE, 1e-6, seed=7)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, sample_trace(WHITE, 1e-6, seed=7, stream=1).values)
    assert not np.array_equal(a.values, sample_trace(WHITE, 1e-6, seed=8).values)

def test_trace_values_are_read_only():
    trace = sample_trace(WHITE, 1e-6, seed=0)
    with pytest.raises(ValueError):
        trace.values[0] = 1.0

@pytest.mark.parametrize("T, slices", [(95e-9, 10), (100e-9, 10), (101e-9, 11), (1e-9, 1)])
def test_white_noise_slices(T, slices):
    trace = sample_trace(WHITE, T, seed=1)
    assert len(trace.values) == slices
    assert trace.boundaries[-1] == pytest.approx(T)

def test_static_models_draw_one_value():
    detuning = sample_trace(StaticGaussianDetuning(sigma_mhz=0.13), 1e-6, seed=3)
    assert detuning.channel == DETUNING and len(detuning.values) == 1
    assert StaticGaussianDetuning(sigma_mhz=0.13).sigma == pytest.approx(mhz_2pi(0.13))
    bias = sample_trace(BiasAmplitude(factor=1.1), 1e-6, seed=3)
    assert bias.channel == AMPLITUDE
    assert bias.values.tolist() == pytest.approx([0.1])

def test_lorentz_draws_are_truncated():
    model = StaticLorentzAmplitude(gamma=0.0067, truncation=0.5)
    draws = np.array([sample_trace(model, 1e-6, seed=s).values[0] for s in range(2000)])
    assert np.max(np.abs(draws)) <= 0.5
    assert np.median(np.abs(draws)) == pytest.approx(0.0067, rel=0.15)

@pytest.mark.parametrize("tau_c_us", [0.1, 1.0, 10.0])
def test_ou_variance_is_stationary(tau_c_us):
    model = OUAmplitude(rel_std=0.5, tau_c_ns=1e3 * tau_c_us, dwell_ns=100.0 * tau_c_us)
    trace = sample_trace(model, 400_000 * model.dwell, seed=11)
    assert np.var(trace.values) == pytest.approx(0.25, rel=0.05)
    # lag-one correlation e^{-dwell/τ_c}
    x = trace.values
    assert np.corrcoef(x[:-1], x[1:])[0, 1] == pytest.approx(math.exp(-0.1), abs=0.01)

def test_white_noise_segments_are_uncorrelated():
    trace = sample_trace(WHITE, 10_000 * WHITE.dwell, seed=5)
    x = trace.values
    assert len(x) >= 10_000
    assert abs(np.corrcoef(x[:-1], x[1:])[0, 1]) < 0.05
    assert np.std(x) == pytest.approx(0.5, rel=0.03)

def test_static_detuning_ensemble_statistics():
    model = StaticGaussianDetuning(sigma_mhz=0.13)
    n = 10_000
    draws = np.array([sample_trace(model, 1e-6, seed=s).values[0] for s in range(n)])
    assert abs(np.mean(draws)) < 3.0 * model.sigma / math.sqrt(n)
    assert np.std(draws) == pytest.approx(model.sigma, rel=0.03)

@pytest.mark.parametrize("kwargs", [
    {"model": "white", "T": 1e-6, "seed": 0},
    {"model": WHITE, "T": 0.0, "seed": 0},
    {"model": WHITE, "T": 1e-6, "seed": -1},
])
def test_invalid_trace_requests(kwargs):
    with pytest.raises(NoiseModelError):
        sample_trace(**kwargs)

def test_apply_noise_splits_at_dwell_boundaries(half_circle):
    timeline = compile_jumping(half_circle, OMEGA, 5)
    trace = sample_trace(WHITE, timeline.total_time, seed=2)
    noisy = apply_noise(timeline, amplitude=trace)
    assert noisy.total_time == pytest.approx(timeline.total_time)
    driven = [s for s in noisy.segments if not s.is_marker]
    assert len(driven) >= len(trace.values)
    for k, segment in enumerate(noisy.segments):
        if segment.is_marker:
            continue
        mid = noisy.boundaries[k] + 0.5 * segment.duration
        assert segment.scale == pytest.approx(1.0 + trace.value_at(mid))

def test_detuning_enters_every_driven_segment(half_circle):
    timeline = compile_continuous(half_circle, Constant(OMEGA), 1e-6)
    trace = sample_trace(StaticGaussianDetuning(), 1e-6, seed=5)
    noisy = apply_noise(timeline, detuning=trace)
    assert [s.detuning for s in noisy.segments] == [trace.values[0]]

def test_zero_noise_leaves_the_timeline(half_circle):
    timeline = compile_jumping(half_circle, OMEGA, 3)
    trace = sample_trace(WhiteGaussianAmplitude(rel_std=0.0), timeline.total_time, seed=0)
    assert apply_noise(timeline, amplitude=trace) is timeline
    assert apply_noise(timeline) is timeline

def test_bias_scales_the_drive(half_circle):
    timeline = compile_continuous(half_circle, Constant(OMEGA), 1e-6)
    biased = apply_traces(timeline, [sample_trace(BiasAmplitude(factor=0.8), 1e-6, seed=0)])
    assert [s.scale for s in biased.segments] == pytest.approx([0.8])

def test_trace_checks(half_circle):
    timeline = compile_jumping(half_circle, OMEGA, 3)
    detuning = sample_trace(StaticGaussianDetuning(), timeline.total_time, seed=0)
    with pytest.raises(NoiseModelError):
        apply_noise(timeline, amplitude=detuning)
    short = sample_trace(WHITE, 0.5 * timeline.total_time, seed=0)
    with pytest.raises(NoiseModelError):
        apply_noise(timeline, amplitude=short)

def test_zero_noise_ensemble_equals_deterministic_run(half_circle, x_state):
    timeline = compile_jumping(half_circle, OMEGA, 5)
    ensemble = monte_carlo(timeline, [WhiteGaussianAmplitude(rel_std=0.0)], x_state, 4, 0, n_samples=6)
    trajectory = evolve_state(x_state, timeline, 6)
    expected = [fidelity(s.state, t) for s, t in zip(trajectory.samples, target_states(timeline, x_state, ensemble.times))]
    assert np.array_equal(ensemble.fidelities, np.tile(expected, (4, 1)))
    assert ensemble.final_mean == pytest.approx(1.0, abs=1e-9)
    assert np.max(ensemble.stderr) < 1e-12

def test_ensemble_does_not_depend_on_worker_count(half_circle, x_state):
    timeline = compile_jumping(half_circle, OMEGA, 5)
    serial = monte_carlo(timeline, [WHITE], x_state, 12, 42, n_samples=3, workers=1)
    threaded = monte_carlo(timeline, [WHITE], x_state, 12, 42, n_samples=3, workers=4)
    assert np.array_equal(serial.fidelities, threaded.fidelities)
    assert np.array_equal(serial.projections, threaded.projections)

def test_ensemble_frame_and_summary(half_circle, x_state):
    timeline = compile_jumping(half_circle, OMEGA, 2)
    ensemble = monte_carlo(timeline, [WHITE], x_state, 5, 1, n_samples=4)
    frame = ensemble.to_frame()
    assert list(frame.columns) == ENSEMBLE_COLUMNS
    assert frame["n_traj"].tolist() == [5] * 4
    assert ensemble.mean_projections.shape == (4, 3)
    summary = ensemble.summary()
    assert summary["n_traj"] == 5
    assert summary["noise"][0]["kind"] == "white_gaussian_amplitude"

def test_ensemble_arguments(half_circle, x_state):
    timeline = compile_jumping(half_circle, OMEGA, 2)
    with pytest.raises(NoiseModelError):
        monte_carlo(timeline, [WHITE], x_state, 1, 0)
    with pytest.raises(NoiseModelError):
        monte_carlo(timeline, [WHITE], x_state, 4, -3)

def test_failed_trajectory_reports_its_seed(half_circle, x_state, monkeypatch):
    def broken(*args, **kwargs):
        raise ScheduleError("broken")
    monkeypatch.setattr(noise, "evolve_state", broken)
    with pytest.raises(TrajectoryError) as exc:
        monte_carlo(compile_jumping(half_circle, OMEGA, 2), [WHITE], x_state, 3, 9, workers=1)
    assert exc.value.seed == 9
    assert exc.value.code == "TRAJECTORY_FAILED"

@pytest.mark.slow
def test_free_induction_decay_envelope(half_circle, x_state):
    sigma = mhz_2pi(0.13)
    t2_star = math.sqrt(2.0) / sigma
    timeline = compile_idle(half_circle, 0.0, 1.7e-6)
    assert isinstance(timeline.segments[0].gap, Vanishing)
    ensemble = monte_carlo(timeline, [StaticGaussianDetuning(sigma_mhz=0.13)], x_state, 10_000, 0, n_samples=18)
    # sample k sits at k·0.1 µs
    for k in (5, 8, 10):
        t = ensemble.times[k]
        envelope = 2.0 * ensemble.mean[k] - 1.0
        assert envelope == pytest.approx(math.exp(-(t / t2_star) ** 2), rel=0.03)
