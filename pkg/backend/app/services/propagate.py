"""
Time-ordered integration of drive timelines.

Static segments use one exact exponential. Sweeps are cut into substeps,
each an exact unitary (fourth-order Magnus by default, midpoint on
request), and the substep count is doubled until the segment propagator
changes by less than PROPAGATION_TOLERANCE in spectral norm.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.core.config import settings
from app.core.exceptions import ConvergenceError, ScheduleError
from app.services.paths import AdiabaticPath
from app.services.qcore import (
    PureState,
    Unitary,
    bloch_projections,
    expm_herm_batch,
    fidelity,
    ordered_product,
    spectral_norm,
)
from app.services.schedules import DriveTimeline, Segment, max_gap, segment_hamiltonians

logger = logging.getLogger(__name__)

GAUSS_OFFSET = math.sqrt(3.0) / 6.0
MAGNUS_COMMUTATOR = math.sqrt(3.0) / 12.0

TRAJECTORY_COLUMNS = ["t_s", "lambda", "px", "py", "pz", "fid_eig"]

def _substeps(path: AdiabaticPath, segment: Segment, n: int, integrator: str) -> np.ndarray:
    h = segment.duration / n
    k = np.arange(n, dtype=float)
    if integrator == "midpoint":
        hams = segment_hamiltonians(path, segment, segment.lambda_at((k + 0.5) * h))
        return expm_herm_batch(hams, h)
    h1 = segment_hamiltonians(path, segment, segment.lambda_at((k + 0.5 - GAUSS_OFFSET) * h))
    h2 = segment_hamiltonians(path, segment, segment.lambda_at((k + 0.5 + GAUSS_OFFSET) * h))
    commutator = h1 @ h2 - h2 @ h1
    generator = 0.5 * h * (h1 + h2) + 1j * MAGNUS_COMMUTATOR * h * h * commutator
    return expm_herm_batch(generator, 1.0)

def _fixed_step_product(path: AdiabaticPath, segment: Segment, n: int, integrator: str) -> np.ndarray:
    chunk = settings.MAX_CHUNK_STEPS
    if n <= chunk:
        return ordered_product(_substeps(path, segment, n, integrator))
    # long sweeps are integrated chunk by chunk to bound memory
    d = path.d
    total = np.eye(d, dtype=complex)
    h = segment.duration / n
    done = 0
    while done < n:
        size = min(chunk, n - done)
        piece = Segment(
            duration=size * h,
            lambda_start=float(segment.lambda_at(done * h)),
            lambda_end=float(segment.lambda_at((done + size) * h)),
            gap=segment.gap,
            sweep_time=segment.sweep_time,
            scale=segment.scale,
            detuning=segment.detuning,
            phase_flip=segment.phase_flip,
        )
        total = ordered_product(_substeps(path, piece, size, integrator)) @ total
        done += size
    return total

def initial_steps(path: AdiabaticPath, segment: Segment, dt_max: Optional[float] = None) -> int:
    """Substep count resolving the dynamic phase and the λ motion of a sweep."""
    if dt_max is not None:
        return max(1, math.ceil(segment.duration / dt_max))
    phase = max_gap(path, segment) * segment.duration
    per_cycle = math.ceil(settings.SUBSTEPS_PER_CYCLE * phase / (2.0 * math.pi))
    per_lambda = math.ceil(abs(segment.lambda_end - segment.lambda_start) / settings.LAMBDA_STEP)
    return max(per_cycle, per_lambda, 1)

def propagate_segment(
    path: AdiabaticPath,
    segment: Segment,
    dt_max: Optional[float] = None,
    integrator: Optional[str] = None,
    check: bool = True,
) -> np.ndarray:
    """Propagator of a single segment as a dense matrix."""
    integrator = integrator or settings.INTEGRATOR
    if segment.is_marker:
        return np.eye(path.d, dtype=complex)
    if segment.is_static:
        hams = segment_hamiltonians(path, segment, [segment.lambda_start])
        return expm_herm_batch(hams, segment.duration)[0]

    n = initial_steps(path, segment, dt_max)
    current = _fixed_step_product(path, segment, n, integrator)
    if not check:
        return current
    previous, change = current, float("inf")
    for halving in range(1, settings.MAX_HALVINGS + 1):
        n *= 2
        previous, current = current, _fixed_step_product(path, segment, n, integrator)
        change = spectral_norm(current - previous)
        if change < settings.PROPAGATION_TOLERANCE:
            logger.debug(
                "Segment converged",
                extra={"path": path.name, "steps": n, "halvings": halving, "residual": change}
            )
            return current
    raise ConvergenceError(
        "Step halving did not reach the propagation tolerance",
        iterates=[previous, current],
        details={"path": path.name, "steps": n, "residual": change, "duration": segment.duration}
    )

def propagate_segments(
    path: AdiabaticPath,
    segments: Sequence[Segment],
    dt_max: Optional[float] = None,
    integrator: Optional[str] = None,
    check: bool = True,
) -> np.ndarray:
    total = np.eye(path.d, dtype=complex)
    for segment in segments:
        total = propagate_segment(path, segment, dt_max, integrator, check) @ total
    return total

def propagate(
    timeline: DriveTimeline,
    dt_max: Optional[float] = None,
    integrator: Optional[str] = None,
    check: bool = True,
) -> Unitary:
    """
    Total propagator of a timeline.

    With check=False the sweeps use exactly ceil(duration / dt_max) substeps
    and no halving, which exposes the integrator's convergence order.
    """
    if dt_max is not None and not dt_max > 0:
        raise ScheduleError("dt_max must be positive", details={"dt_max": dt_max})
    if not check and dt_max is None:
        raise ScheduleError("Fixed-step propagation needs dt_max")
    matrix = propagate_segments(timeline.path, timeline.segments, dt_max, integrator, check)
    return Unitary(matrix)

@dataclass(frozen=True)
class TrajectorySample:
    t: float
    lam: float
    state: PureState
    projections: Tuple[float, float, float]
    fid_eig: float

@dataclass
class Trajectory:
    samples: List[TrajectorySample] = field(default_factory=list)

    @property
    def final(self) -> TrajectorySample:
        return self.samples[-1]

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples])

    def to_frame(self) -> pd.DataFrame:
        rows = [
            (s.t, s.lam, s.projections[0], s.projections[1], s.projections[2], s.fid_eig)
            for s in self.samples
        ]
        return pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS)

def _sample(path: AdiabaticPath, t: float, lam: float, state: PureState) -> TrajectorySample:
    if state.d == 2:
        projections = bloch_projections(state)
    else:
        projections = (float("nan"),) * 3
    eig = fidelity(state, path.eigenstate(1, lam))
    return TrajectorySample(t=t, lam=lam, state=state, projections=projections, fid_eig=eig)

def evolve_state(
    psi0: PureState,
    timeline: DriveTimeline,
    n_samples: int,
    dt_max: Optional[float] = None,
    integrator: Optional[str] = None,
) -> Trajectory:
    """Propagate ψ0 and record equally spaced samples in time."""
    path = timeline.path
    total = timeline.total_time
    if total == 0.0:
        return Trajectory([_sample(path, 0.0, timeline.initial_lambda, psi0)])
    if n_samples < 2:
        raise ScheduleError("A trajectory needs at least two samples", details={"n_samples": n_samples})

    times = np.linspace(0.0, total, n_samples)
    trajectory = Trajectory([_sample(path, 0.0, timeline.initial_lambda, psi0)])
    state = psi0
    for k, segments in enumerate(timeline.intervals(times), start=1):
        if segments:
            state = state.evolve(propagate_segments(path, segments, dt_max, integrator))
        t = float(times[k])
        trajectory.samples.append(_sample(path, t, timeline.lambda_of_t(t), state))
    return trajectory
