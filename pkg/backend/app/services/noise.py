"""
Classical noise traces and seeded Monte-Carlo ensembles.

A trace is piecewise constant on slices of one dwell. Detuning traces add
δ0·σ_z/2 to the Hamiltonian; amplitude traces scale the drive by (1 + δ1).
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import signal

from app.core.config import settings
from app.core.exceptions import AdiabaticError, NoiseModelError, TrajectoryError
from app.schemas.noise import (
    AMPLITUDE,
    DETUNING,
    BiasAmplitude,
    NoiseSpec,
    OUAmplitude,
    StaticGaussianDetuning,
    StaticLorentzAmplitude,
    WhiteGaussianAmplitude,
)
from app.services.analysis import u_adia_at_time
from app.services.propagate import evolve_state
from app.services.qcore import PureState, fidelity
from app.services.schedules import DriveTimeline

logger = logging.getLogger(__name__)

ENSEMBLE_COLUMNS = ["t_s", "mean_fid", "stderr", "n_traj"]
DURATION_SLACK = 1e-12

@dataclass(frozen=True, eq=False)
class NoiseTrace:
    """Piecewise-constant noise values, one per dwell slice of [0, duration]."""
    kind: str
    channel: str
    values: np.ndarray
    dwell: float
    duration: float
    seed: int

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values)

    @property
    def boundaries(self) -> np.ndarray:
        edges = np.arange(len(self.values) + 1, dtype=float) * self.dwell
        return np.minimum(edges, self.duration)

    def value_at(self, t: float) -> float:
        index = int(math.floor(t / self.dwell)) if t > 0 else 0
        return float(self.values[min(index, len(self.values) - 1)])

def _generator(seed: int, stream: int) -> np.random.Generator:
    # counter-based so a trajectory's draws do not depend on scheduling
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream])))

def _slices(T: float, dwell: float) -> int:
    return max(1, math.ceil(T / dwell - DURATION_SLACK))

def _lorentz(gamma: float, truncation: float, rng: np.random.Generator) -> float:
    if gamma == 0.0:
        return 0.0
    # inverse CDF restricted to |δ1| ≤ truncation
    lo = 0.5 + math.atan(-truncation / gamma) / math.pi
    hi = 0.5 + math.atan(truncation / gamma) / math.pi
    u = rng.uniform(lo, hi)
    return float(gamma * math.tan(math.pi * (u - 0.5)))

def _ou(model: OUAmplitude, n: int, rng: np.random.Generator) -> np.ndarray:
    decay = math.exp(-model.dwell / model.tau_c)
    kick = math.sqrt(1.0 - decay * decay) * model.rel_std
    draws = rng.standard_normal(n)
    first = model.rel_std * draws[0]
    if n == 1:
        return np.array([first])
    # x_k = decay·x_{k-1} + kick·ξ_k
    rest, _ = signal.lfilter([kick], [1.0, -decay], draws[1:], zi=[decay * first])
    return np.concatenate([[first], rest])

def sample_trace(model: NoiseSpec, T: float, seed: int, stream: int = 0) -> NoiseTrace:
    """Draw one trace of `model` over [0, T]; deterministic in (model, T, seed, stream)."""
    if not isinstance(model, NoiseSpec):
        raise NoiseModelError("Unknown noise model", details={"model": type(model).__name__})
    if not (T > 0 and math.isfinite(T)):
        raise NoiseModelError("Noise traces need a positive duration", details={"T": T})
    if seed < 0 or stream < 0:
        raise NoiseModelError("Seeds must be non-negative", details={"seed": seed, "stream": stream})

    rng = _generator(seed, stream)
    dwell = T
    if isinstance(model, StaticGaussianDetuning):
        values = [model.sigma * rng.standard_normal()]
    elif isinstance(model, StaticLorentzAmplitude):
        values = [_lorentz(model.gamma, model.truncation, rng)]
    elif isinstance(model, WhiteGaussianAmplitude):
        dwell = model.dwell
        values = model.rel_std * rng.standard_normal(_slices(T, dwell))
    elif isinstance(model, OUAmplitude):
        dwell = model.dwell
        values = _ou(model, _slices(T, dwell), rng)
    elif isinstance(model, BiasAmplitude):
        values = [model.factor - 1.0]
    else:
        raise NoiseModelError("Unsupported noise model", details={"kind": getattr(model, "kind", None)})

    return NoiseTrace(
        kind=model.kind,
        channel=model.channel,
        values=np.asarray(values, dtype=float),
        dwell=dwell,
        duration=T,
        seed=seed,
    )

def _check_trace(trace: Optional[NoiseTrace], channel: str, total: float) -> Optional[NoiseTrace]:
    if trace is None:
        return None
    if trace.channel != channel:
        raise NoiseModelError(
            "Trace applied to the wrong channel",
            details={"expected": channel, "got": trace.channel}
        )
    if trace.duration < total * (1.0 - DURATION_SLACK):
        raise NoiseModelError(
            "Noise trace shorter than the timeline",
            details={"trace": trace.duration, "timeline": total}
        )
    return None if trace.is_zero else trace

def apply_noise(
    timeline: DriveTimeline,
    detuning: Optional[NoiseTrace] = None,
    amplitude: Optional[NoiseTrace] = None,
) -> DriveTimeline:
    """Split at dwell boundaries and fold δ0, δ1 into each segment."""
    total = timeline.total_time
    detuning = _check_trace(detuning, DETUNING, total)
    amplitude = _check_trace(amplitude, AMPLITUDE, total)
    if detuning is None and amplitude is None:
        return timeline

    cuts: List[float] = []
    for trace in (detuning, amplitude):
        if trace is not None:
            cuts.extend(trace.boundaries[1:-1].tolist())
    split = timeline.split_at(cuts)

    segments = []
    for k, segment in enumerate(split.segments):
        if segment.is_marker:
            segments.append(segment)
            continue
        mid = float(split.boundaries[k]) + 0.5 * segment.duration
        delta0 = detuning.value_at(mid) if detuning is not None else 0.0
        delta1 = amplitude.value_at(mid) if amplitude is not None else 0.0
        segments.append(replace(
            segment,
            scale=segment.scale * (1.0 + delta1),
            detuning=segment.detuning + delta0,
        ))
    return replace(split, segments=tuple(segments))

def apply_traces(timeline: DriveTimeline, traces: Sequence[NoiseTrace]) -> DriveTimeline:
    for trace in traces:
        if trace.channel == DETUNING:
            timeline = apply_noise(timeline, detuning=trace)
        else:
            timeline = apply_noise(timeline, amplitude=trace)
    return timeline

@dataclass(frozen=True, eq=False)
class EnsembleResult:
    """Per-sample-time statistics of fidelity to the ideal target over an ensemble."""
    times: np.ndarray
    fidelities: np.ndarray
    projections: np.ndarray
    base_seed: int
    models: tuple

    @property
    def n_traj(self) -> int:
        return self.fidelities.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.fidelities.mean(axis=0)

    @property
    def stderr(self) -> np.ndarray:
        return self.fidelities.std(axis=0, ddof=1) / math.sqrt(self.n_traj)

    @property
    def mean_projections(self) -> np.ndarray:
        """⟨(p_x, p_y, p_z)⟩ at each sample time, shape (samples, 3)."""
        return self.projections.mean(axis=0)

    @property
    def final_mean(self) -> float:
        return float(self.mean[-1])

    @property
    def final_stderr(self) -> float:
        return float(self.stderr[-1])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "t_s": self.times,
            "mean_fid": self.mean,
            "stderr": self.stderr,
            "n_traj": np.full(len(self.times), self.n_traj, dtype=int),
        }, columns=ENSEMBLE_COLUMNS)

    def summary(self) -> Dict[str, object]:
        return {
            "n_traj": self.n_traj,
            "base_seed": self.base_seed,
            "final_mean_fidelity": self.final_mean,
            "final_stderr": self.final_stderr,
            "noise": [m.dict() for m in self.models],
        }

def target_states(timeline: DriveTimeline, psi0: PureState, times: Sequence[float]) -> List[PureState]:
    """Ideal states U_adia(t)|ψ0⟩ of the noise-free timeline."""
    return [psi0.evolve(u_adia_at_time(timeline, float(t))) for t in times]

def monte_carlo(
    timeline: DriveTimeline,
    models: Sequence[NoiseSpec],
    psi0: PureState,
    n_traj: int,
    base_seed: int,
    n_samples: int = 2,
    workers: Optional[int] = None,
    dt_max: Optional[float] = None,
) -> EnsembleResult:
    """
    Fidelity-to-target statistics over n_traj noisy trajectories.

    Trajectory i draws from seed base_seed ^ i; model k uses stream k of that
    seed. Results are stored by trajectory index, so the reduction does not
    depend on the worker count.
    """
    if n_traj < 2:
        raise NoiseModelError("An ensemble needs at least two trajectories", details={"n_traj": n_traj})
    if base_seed < 0:
        raise NoiseModelError("Seeds must be non-negative", details={"base_seed": base_seed})
    total = timeline.total_time
    if total == 0.0:
        raise NoiseModelError("Cannot sample noise over a zero-duration timeline")

    times = np.linspace(0.0, total, max(n_samples, 2))
    targets = target_states(timeline, psi0, times)
    fidelities = np.empty((n_traj, len(times)))
    projections = np.empty((n_traj, len(times), 3))

    def run_one(index: int) -> None:
        seed = base_seed ^ index
        try:
            traces = [sample_trace(model, total, seed, stream) for stream, model in enumerate(models)]
            noisy = apply_traces(timeline, traces)
            trajectory = evolve_state(psi0, noisy, len(times), dt_max=dt_max)
        except AdiabaticError as e:
            raise TrajectoryError(seed, e) from e
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as e:
            raise TrajectoryError(seed, e) from e
        for k, (sample, target) in enumerate(zip(trajectory.samples, targets)):
            fidelities[index, k] = fidelity(sample.state, target)
            projections[index, k] = sample.projections

    workers = workers or settings.MC_MAX_WORKERS
    logger.info(
        "Monte-Carlo ensemble started",
        extra={"n_traj": n_traj, "base_seed": base_seed, "workers": workers,
               "noise": [m.kind for m in models]}
    )
    if workers <= 1:
        for index in range(n_traj):
            run_one(index)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            # list() re-raises the first failure
            list(pool.map(run_one, range(n_traj)))

    result = EnsembleResult(
        times=times,
        fidelities=fidelities,
        projections=projections,
        base_seed=base_seed,
        models=tuple(models),
    )
    logger.info(
        "Monte-Carlo ensemble complete",
        extra={"n_traj": n_traj, "final_mean": result.final_mean, "final_stderr": result.final_stderr}
    )
    return result
