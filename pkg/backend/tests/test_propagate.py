import math

import numpy as np
import pytest
from scipy.linalg import expm

from app.core.config import settings
from app.core.exceptions import EXIT_NON_CONVERGENCE, ConvergenceError, ScheduleError
from app.services.propagate import TRAJECTORY_COLUMNS, evolve_state, propagate
from app.services.qcore import basis_state, fidelity, mhz_2pi, spectral_norm
from app.services.schedules import (
    Constant,
    Modulated,
    Segment,
    DriveTimeline,
    compile_continuous,
    compile_jumping,
    segment_hamiltonians,
)

OMEGA = mhz_2pi(5.0)
T = 1e-6
# Ω0·T must not be a multiple of π here
T_ORDER = 1.05e-6

@pytest.mark.parametrize("N", [1, 2, 3, 5, 10])
def test_jumping_transfers_x_to_minus_x(half_circle, x_state, N):
    U = propagate(compile_jumping(half_circle, OMEGA, N))
    assert fidelity(x_state.evolve(U), basis_state("-x")) == pytest.approx(1.0, abs=1e-9)

def test_jumping_transfers_lz_poles(lz):
    U = propagate(compile_jumping(lz, None, 5))
    assert fidelity(basis_state("-z").evolve(U), basis_state("z")) == pytest.approx(1.0, abs=1e-9)

def test_static_segment_is_one_exponential(half_circle):
    seg = Segment(2e-7, 0.3, 0.3, gap=Constant(OMEGA), sweep_time=2e-7)
    U = propagate(DriveTimeline(half_circle, (seg,)))
    ham = segment_hamiltonians(half_circle, seg, [0.3])[0]
    assert spectral_norm(U.entries - expm(-1j * ham * 2e-7)) < 1e-12

def test_markers_are_identity(half_circle):
    U = propagate(DriveTimeline(half_circle, (Segment(0.0, 0.0, 1.0, gap=Constant(OMEGA)),)))
    assert spectral_norm(U.entries - np.eye(2)) == 0.0

@pytest.mark.parametrize("integrator, low, high", [("magnus4", 12.0, 20.0), ("midpoint", 3.0, 5.0)])
def test_fixed_step_convergence_order(half_circle, integrator, low, high):
    timeline = compile_continuous(half_circle, Modulated(OMEGA), T_ORDER)
    reference = propagate(timeline, dt_max=T_ORDER / 8192, integrator="magnus4", check=False)
    coarse = propagate(timeline, dt_max=T_ORDER / 256, integrator=integrator, check=False)
    fine = propagate(timeline, dt_max=T_ORDER / 512, integrator=integrator, check=False)
    ratio = coarse.distance(reference) / fine.distance(reference)
    assert low < ratio < high

def test_adaptive_propagation_meets_tolerance(half_circle):
    timeline = compile_continuous(half_circle, Modulated(OMEGA), T)
    adaptive = propagate(timeline)
    reference = propagate(timeline, dt_max=T / 16384, check=False)
    assert adaptive.distance(reference) < 1e-8

def test_chunked_product_matches_single_batch(half_circle, monkeypatch):
    timeline = compile_continuous(half_circle, Modulated(OMEGA), T)
    whole = propagate(timeline, dt_max=T / 100, check=False)
    monkeypatch.setattr(settings, "MAX_CHUNK_STEPS", 16)
    chunked = propagate(timeline, dt_max=T / 100, check=False)
    assert chunked.distance(whole) < 1e-12

def test_non_convergence_is_reported(half_circle, monkeypatch):
    monkeypatch.setattr(settings, "MAX_HALVINGS", 0)
    with pytest.raises(ConvergenceError) as exc:
        propagate(compile_continuous(half_circle, Constant(OMEGA), T))
    assert exc.value.exit_code == EXIT_NON_CONVERGENCE

def test_step_arguments_are_checked(half_circle):
    timeline = compile_continuous(half_circle, Constant(OMEGA), T)
    with pytest.raises(ScheduleError):
        propagate(timeline, dt_max=-1.0)
    with pytest.raises(ScheduleError):
        propagate(timeline, check=False)

def test_clipped_lz_sweep_propagates(lz):
    U = propagate(compile_continuous(lz, None, 2e-6))
    assert U.d == 2

def test_trajectory_samples(half_circle, x_state):
    timeline = compile_jumping(half_circle, OMEGA, 5)
    trajectory = evolve_state(x_state, timeline, 11)
    assert trajectory.times == pytest.approx(np.linspace(0.0, timeline.total_time, 11))
    final = x_state.evolve(propagate(timeline))
    assert fidelity(trajectory.final.state, final) == pytest.approx(1.0, abs=1e-12)
    assert trajectory.final.fid_eig == pytest.approx(1.0, abs=1e-9)
    frame = trajectory.to_frame()
    assert list(frame.columns) == TRAJECTORY_COLUMNS
    assert len(frame) == 11
    assert frame["px"].iloc[0] == pytest.approx(1.0)

def test_trajectory_needs_two_samples(half_circle, x_state):
    with pytest.raises(ScheduleError):
        evolve_state(x_state, compile_jumping(half_circle, OMEGA, 2), 1)

def test_continuous_constant_gap_follows_eigenstate_slowly(half_circle, x_state):
    # Ω0 T = 2π·5 MHz · 20 µs: deep in the adiabatic regime
    trajectory = evolve_state(x_state, compile_continuous(half_circle, Constant(OMEGA), 20e-6), 5)
    assert trajectory.final.fid_eig > 1.0 - 1e-4
    assert math.isfinite(trajectory.final.projections[2])
