"""
Gap schedules and the protocol compiler.

A DriveTimeline is an ordered tuple of segments. A segment either sits at a
fixed λ for its duration (static) or sweeps λ linearly from lambda_start to
lambda_end. Zero-duration segments are λ markers: they move the path
parameter in zero time with no drive.
"""
import json
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.core.config import settings
from app.core.exceptions import DimensionMismatchError, ScheduleError, SingularPathError
from app.services.paths import EXTERNAL_GAP, AdiabaticPath
from app.services.qcore import SIGMA_Z

logger = logging.getLogger(__name__)

SNAP_TOLERANCE = 1e-12
DEFAULT_CROSSING_A = 2.34

class GapSchedule(ABC):
    """Ω(λ) in rad/s for a sweep of duration T."""

    kind = "gap"

    @abstractmethod
    def gap(self, lams, T: float) -> np.ndarray:
        """Ω at the given λ values."""

    @abstractmethod
    def integral(self, lam_a: float, lam_b: float, T: float) -> float:
        """∫ Ω dλ from lam_a to lam_b."""

    def describe(self) -> Dict[str, object]:
        return {"kind": self.kind, **asdict(self)}

@dataclass(frozen=True)
class Constant(GapSchedule):
    omega0: float
    kind = "constant"

    def __post_init__(self):
        if not self.omega0 > 0:
            raise ScheduleError("Constant gap must be positive", details={"omega0": self.omega0})

    def gap(self, lams, T: float) -> np.ndarray:
        return np.full(np.shape(np.atleast_1d(lams)), self.omega0, dtype=float)

    def integral(self, lam_a: float, lam_b: float, T: float) -> float:
        return self.omega0 * (lam_b - lam_a)

@dataclass(frozen=True)
class Modulated(GapSchedule):
    """Ω0 (2 + cos(Ω0 T λ)): dynamic phases hit 2π multiples while ε grows linearly."""
    omega0: float
    kind = "modulated"

    def __post_init__(self):
        if not self.omega0 > 0:
            raise ScheduleError("Modulated gap needs Ω0 > 0", details={"omega0": self.omega0})

    def gap(self, lams, T: float) -> np.ndarray:
        lams = np.atleast_1d(np.asarray(lams, dtype=float))
        return self.omega0 * (2.0 + np.cos(self.omega0 * T * lams))

    def integral(self, lam_a: float, lam_b: float, T: float) -> float:
        def antiderivative(lam):
            return 2.0 * self.omega0 * lam + np.sin(self.omega0 * T * lam) / T
        return antiderivative(lam_b) - antiderivative(lam_a)

@dataclass(frozen=True)
class Crossing(GapSchedule):
    """Ω0' (1 + a cos(2 Ω0' T λ)) with Ω0' = √(2/(2+a²)) Ω0; crosses zero for |a| > 1."""
    omega0: float
    a: float = DEFAULT_CROSSING_A
    kind = "crossing"

    def __post_init__(self):
        if not self.omega0 > 0:
            raise ScheduleError("Crossing gap needs Ω0 > 0", details={"omega0": self.omega0})

    @property
    def omega0_prime(self) -> float:
        return math.sqrt(2.0 / (2.0 + self.a ** 2)) * self.omega0

    def gap(self, lams, T: float) -> np.ndarray:
        lams = np.atleast_1d(np.asarray(lams, dtype=float))
        w = self.omega0_prime
        return w * (1.0 + self.a * np.cos(2.0 * w * T * lams))

    def integral(self, lam_a: float, lam_b: float, T: float) -> float:
        w = self.omega0_prime

        def antiderivative(lam):
            return w * lam + self.a * np.sin(2.0 * w * T * lam) / (2.0 * T)
        return antiderivative(lam_b) - antiderivative(lam_a)

@dataclass(frozen=True)
class Biased(GapSchedule):
    base: GapSchedule
    factor: float
    kind = "biased"

    def __post_init__(self):
        if not math.isfinite(self.factor):
            raise ScheduleError("Bias factor must be finite", details={"factor": self.factor})

    def gap(self, lams, T: float) -> np.ndarray:
        return self.factor * self.base.gap(lams, T)

    def integral(self, lam_a: float, lam_b: float, T: float) -> float:
        return self.factor * self.base.integral(lam_a, lam_b, T)

    def describe(self) -> Dict[str, object]:
        return {"kind": self.kind, "base": self.base.describe(), "factor": self.factor}

@dataclass(frozen=True)
class Vanishing(GapSchedule):
    """Ω ≡ 0."""
    kind = "vanishing"

    def gap(self, lams, T: float) -> np.ndarray:
        return np.zeros(np.shape(np.atleast_1d(lams)))

    def integral(self, lam_a: float, lam_b: float, T: float) -> float:
        return 0.0

@dataclass(frozen=True)
class Segment:
    """
    One piece of a drive timeline.

    `gap` is None on intrinsic paths, whose Hamiltonian carries its own
    energies. `sweep_time` is the T entering Ω(λ, T). The applied
    Hamiltonian is ±(scaled path Hamiltonian) + detuning·σ_z/2.
    """
    duration: float
    lambda_start: float
    lambda_end: float
    gap: Optional[GapSchedule] = None
    sweep_time: float = 0.0
    scale: float = 1.0
    detuning: float = 0.0
    phase_flip: bool = False

    def __post_init__(self):
        if not self.duration >= 0 or not math.isfinite(self.duration):
            raise ScheduleError("Segment durations must be finite and non-negative", details={"duration": self.duration})

    @property
    def is_marker(self) -> bool:
        return self.duration == 0.0

    @property
    def is_static(self) -> bool:
        return self.lambda_start == self.lambda_end

    def lambda_at(self, tau) -> np.ndarray:
        """λ at local times tau ∈ [0, duration]."""
        tau = np.asarray(tau, dtype=float)
        if self.duration == 0.0:
            return np.full(tau.shape, self.lambda_end)
        return self.lambda_start + (self.lambda_end - self.lambda_start) * (tau / self.duration)

    def split(self, tau: float) -> Tuple["Segment", "Segment"]:
        lam = float(self.lambda_at(tau))
        return (
            replace(self, duration=tau, lambda_end=lam),
            replace(self, duration=self.duration - tau, lambda_start=lam),
        )

    def reversed(self) -> "Segment":
        return replace(self, lambda_start=self.lambda_end, lambda_end=self.lambda_start)

    def isclose(self, other: "Segment", tol: float = 1e-12) -> bool:
        scale = max(1e-300, abs(self.duration), abs(other.duration))
        sweep_scale = max(1e-300, abs(self.sweep_time), abs(other.sweep_time))
        return (
            abs(self.duration - other.duration) <= tol * scale
            and abs(self.lambda_start - other.lambda_start) <= tol
            and abs(self.lambda_end - other.lambda_end) <= tol
            and self.gap == other.gap
            and (self.gap is None or isinstance(self.gap, Constant)
                 or abs(self.sweep_time - other.sweep_time) <= tol * sweep_scale)
            and self.scale == other.scale
            and self.detuning == other.detuning
            and self.phase_flip == other.phase_flip
        )

    def gap_at_start(self) -> Optional[float]:
        if self.gap is None:
            return None
        return float(self.gap.gap([self.lambda_start], self.sweep_time)[0] * self.scale)

    def gap_at(self, tau: float, path: AdiabaticPath) -> float:
        """Applied Ω at local time tau, sign and scale included; NaN where the path diverges."""
        lam = float(self.lambda_at(tau))
        if self.gap is None:
            if path.singular(lam):
                return float("nan")
            value = float(path.intrinsic_gap([lam])[0])
        else:
            value = float(self.gap.gap([lam], self.sweep_time)[0])
        value *= self.scale
        return -value if self.phase_flip else value

    def to_record(self) -> Dict[str, object]:
        return {
            "duration_s": self.duration,
            "lambda_start": self.lambda_start,
            "lambda_end": self.lambda_end,
            "gap_rad_s": self.gap_at_start(),
            "phase_flip": self.phase_flip,
        }

@dataclass(frozen=True)
class DriveTimeline:
    path: AdiabaticPath
    segments: Tuple[Segment, ...]
    lambda_clip: float = 0.0
    boundaries: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise ScheduleError("A timeline needs at least one segment")
        for previous, current in zip(self.segments, self.segments[1:]):
            if abs(previous.lambda_end - current.lambda_start) > SNAP_TOLERANCE:
                raise ScheduleError(
                    "Segments must join continuously in λ",
                    details={"end": previous.lambda_end, "start": current.lambda_start}
                )
        starts = np.concatenate([[0.0], np.cumsum([s.duration for s in self.segments])])
        object.__setattr__(self, "boundaries", starts)

    @property
    def total_time(self) -> float:
        return math.fsum(s.duration for s in self.segments)

    @property
    def initial_lambda(self) -> float:
        return self.segments[0].lambda_start

    @property
    def final_lambda(self) -> float:
        return self.segments[-1].lambda_end

    def lambda_of_t(self, t: float) -> float:
        """Right-continuous λ(t); clamped outside [0, total_time]."""
        if t <= 0.0:
            return self.initial_lambda
        if t >= self.boundaries[-1]:
            return self.final_lambda
        for k, seg in enumerate(self.segments):
            start = self.boundaries[k]
            if seg.duration > 0 and start <= t < start + seg.duration:
                return float(seg.lambda_at(t - start))
        return self.final_lambda

    def _driven_at(self, t: float) -> Tuple[Segment, float]:
        """Segment carrying the drive at time t (right-continuous) and the local time in it."""
        driven = [k for k, s in enumerate(self.segments) if not s.is_marker]
        if not driven:
            return self.segments[-1], 0.0
        if t >= self.boundaries[-1]:
            last = self.segments[driven[-1]]
            return last, last.duration
        for k in driven:
            start = self.boundaries[k]
            if t < start + self.segments[k].duration:
                return self.segments[k], max(0.0, t - start)
        last = self.segments[driven[-1]]
        return last, last.duration

    def gap_of_t(self, times: Sequence[float]) -> np.ndarray:
        """Applied gap Ω(λ(t)) in rad/s at each time."""
        values = []
        for t in times:
            segment, tau = self._driven_at(float(t))
            values.append(segment.gap_at(tau, self.path))
        return np.asarray(values, dtype=float)

    def split_at(self, times: Iterable[float]) -> "DriveTimeline":
        """Split segments so that every interior time in `times` is a boundary."""
        cuts = sorted({float(t) for t in times if 0.0 < t < self.boundaries[-1]})
        if not cuts:
            return self
        out: List[Segment] = []
        index = 0
        for k, seg in enumerate(self.segments):
            start = self.boundaries[k]
            end = start + seg.duration
            current = seg
            offset = start
            while index < len(cuts) and cuts[index] <= offset:
                index += 1
            while index < len(cuts) and cuts[index] < end:
                tau = cuts[index] - offset
                if tau > 0:
                    head, current = current.split(tau)
                    out.append(head)
                    offset = cuts[index]
                index += 1
            out.append(current)
        return replace(self, segments=tuple(out))

    def intervals(self, times: Sequence[float]) -> List[Tuple[Segment, ...]]:
        """Segments between consecutive sample times; markers at a sample time open the next interval."""
        split = self.split_at(times)
        groups: List[List[Segment]] = [[] for _ in range(max(len(times) - 1, 0))]
        if not groups:
            return []
        edges = np.asarray(times, dtype=float)
        slack = SNAP_TOLERANCE * max(1.0, float(split.boundaries[-1]))
        for k, seg in enumerate(split.segments):
            start = split.boundaries[k]
            slot = int(np.searchsorted(edges, start + slack, side="right")) - 1
            slot = min(max(slot, 0), len(groups) - 1)
            groups[slot].append(seg)
        return [tuple(group) for group in groups]

    def concat(self, other: "DriveTimeline") -> "DriveTimeline":
        if other.path is not self.path:
            raise ScheduleError("Only timelines on the same path can be concatenated")
        return replace(self, segments=self.segments + other.segments)

    def reversed(self) -> "DriveTimeline":
        return replace(self, segments=tuple(s.reversed() for s in reversed(self.segments)))

    def static_lambdas(self) -> List[float]:
        """λ of every driven static segment, in order."""
        return [s.lambda_start for s in self.segments if s.is_static and not s.is_marker]

    def isclose(self, other: "DriveTimeline", tol: float = 1e-12) -> bool:
        return (
            len(self.segments) == len(other.segments)
            and all(a.isclose(b, tol) for a, b in zip(self.segments, other.segments))
        )

    def to_records(self) -> List[Dict[str, object]]:
        return [s.to_record() for s in self.segments]

    def dump_json(self, target: Path) -> Path:
        target = Path(target)
        target.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "path": self.path.describe(),
            "lambda_clip": self.lambda_clip,
            "total_time_s": self.total_time,
            "segments": self.to_records(),
        }
        target.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return target

def jumping_points(N: int) -> List[float]:
    """λ_j = (2j - 1) / (2N), j = 1..N."""
    if N < 1:
        raise ScheduleError("Jumping needs at least one path point", details={"N": N})
    return [(2 * j - 1) / (2 * N) for j in range(1, N + 1)]

def _marker(lam_a: float, lam_b: float, gap: Optional[GapSchedule], sweep_time: float) -> Segment:
    return Segment(0.0, lam_a, lam_b, gap=gap, sweep_time=sweep_time)

def compile_jumping(path: AdiabaticPath, omega0: Optional[float], N: int) -> DriveTimeline:
    """π pulses at λ_j, joined by zero-duration λ markers."""
    points = jumping_points(N)
    if path.energy_mode == EXTERNAL_GAP:
        if omega0 is None or not omega0 > 0:
            raise ScheduleError("Jumping on an external-gap path needs Ω0 > 0", details={"omega0": omega0})
        gap: Optional[GapSchedule] = Constant(omega0)
        durations = [math.pi / omega0] * N
        idle: Optional[GapSchedule] = Vanishing()
    else:
        path.check_regular(points)
        gap = None
        durations = [math.pi / g for g in path.intrinsic_gap(points)]
        idle = None
    sweep_time = math.fsum(durations)

    segments: List[Segment] = [_marker(0.0, points[0], idle, sweep_time)]
    for j, (lam, tau) in enumerate(zip(points, durations)):
        segments.append(Segment(tau, lam, lam, gap=gap, sweep_time=sweep_time))
        following = points[j + 1] if j + 1 < N else 1.0
        segments.append(_marker(lam, following, idle, sweep_time))

    logger.debug("Compiled jumping protocol", extra={"path": path.name, "N": N, "total_time": sweep_time})
    return DriveTimeline(path, tuple(segments))

def compile_continuous(
    path: AdiabaticPath,
    gap: Optional[GapSchedule],
    T: float,
    lambda_clip: Optional[float] = None,
) -> DriveTimeline:
    """Single sweep at constant dλ/dt; intrinsic paths are clipped to [clip, 1 - clip]."""
    if not T > 0:
        raise ScheduleError("Sweep time must be positive", details={"T": T})

    if path.energy_mode == EXTERNAL_GAP:
        if gap is None:
            raise ScheduleError("External-gap paths need a gap schedule", details={"path": path.name})
        clip = lambda_clip or 0.0
    else:
        gap = None
        if lambda_clip is None:
            touches_singularity = path.singular(0.0) or path.singular(1.0)
            lambda_clip = settings.LZ_LAMBDA_CLIP if touches_singularity else 0.0
        clip = lambda_clip
    if not 0.0 <= clip < 0.5:
        raise ScheduleError("λ clip must lie in [0, 0.5)", details={"lambda_clip": clip})

    start, end = clip, 1.0 - clip
    if path.energy_mode != EXTERNAL_GAP:
        path.check_regular([start, end])

    segments: List[Segment] = []
    if clip > 0:
        segments.append(_marker(0.0, start, gap, T))
    segments.append(Segment(T, start, end, gap=gap, sweep_time=T))
    if clip > 0:
        segments.append(_marker(end, 1.0, gap, T))
    if clip > 0:
        logger.info("Sweep clipped away from singular endpoints", extra={"path": path.name, "lambda_clip": clip})
    return DriveTimeline(path, tuple(segments), lambda_clip=clip)

def compile_hybrid(
    path: AdiabaticPath,
    omega0: float,
    N: int,
    r_jump: float,
    T: Optional[float] = None,
) -> DriveTimeline:
    """
    Interpolates continuous driving (r_jump = 0) and jumping (r_jump = 1).

    Each cell of width 1/N holds a driven window of λ-width (1 - r_jump)/N
    centred at λ_j lasting T/N; the rest of the cell has Ω = 0 and is
    crossed in zero time.
    """
    if path.energy_mode != EXTERNAL_GAP:
        raise ScheduleError("Hybrid protocols need an external-gap path", details={"path": path.name})
    if not 0.0 <= r_jump <= 1.0:
        raise ScheduleError("r_jump must lie in [0, 1]", details={"r_jump": r_jump})
    if omega0 is None or not omega0 > 0:
        raise ScheduleError("Hybrid protocol needs Ω0 > 0", details={"omega0": omega0})
    points = jumping_points(N)
    T = N * math.pi / omega0 if T is None else T
    if not T > 0:
        raise ScheduleError("Sweep time must be positive", details={"T": T})

    gap = Constant(omega0)
    idle = Vanishing()
    half_width = 0.5 * (1.0 - r_jump) / N
    window = T / N

    raw: List[Segment] = []
    cursor = 0.0
    for lam in points:
        lo, hi = lam - half_width, lam + half_width
        raw.append(_marker(cursor, lo, idle, T))
        raw.append(Segment(window, lo, hi, gap=gap, sweep_time=T))
        cursor = hi
    raw.append(_marker(cursor, 1.0, idle, T))
    return DriveTimeline(path, tuple(_normalize(raw)))

def _normalize(segments: List[Segment]) -> List[Segment]:
    """Drop zero-width markers, merge adjacent markers and equal-rate sweeps, snap to 0/1."""
    snapped = [
        replace(s, lambda_start=_snap(s.lambda_start), lambda_end=_snap(s.lambda_end))
        for s in segments
    ]
    out: List[Segment] = []
    for seg in snapped:
        if seg.is_marker and abs(seg.lambda_end - seg.lambda_start) <= SNAP_TOLERANCE:
            continue
        if out:
            last = out[-1]
            if seg.is_marker and last.is_marker:
                out[-1] = replace(last, lambda_end=seg.lambda_end)
                continue
            if _same_rate(last, seg):
                out[-1] = replace(
                    last,
                    duration=math.fsum([last.duration, seg.duration]),
                    lambda_end=seg.lambda_end,
                )
                continue
        out.append(seg)
    # every joint must meet exactly after snapping and merging
    for k in range(1, len(out)):
        out[k] = replace(out[k], lambda_start=out[k - 1].lambda_end)
    return out

def _snap(lam: float) -> float:
    if abs(lam) <= SNAP_TOLERANCE:
        return 0.0
    if abs(lam - 1.0) <= SNAP_TOLERANCE:
        return 1.0
    return lam

def _same_rate(a: Segment, b: Segment) -> bool:
    if a.is_marker or b.is_marker or a.is_static or b.is_static:
        return False
    if (a.gap, a.sweep_time, a.scale, a.detuning, a.phase_flip) != (b.gap, b.sweep_time, b.scale, b.detuning, b.phase_flip):
        return False
    rate_a = (a.lambda_end - a.lambda_start) / a.duration
    rate_b = (b.lambda_end - b.lambda_start) / b.duration
    return abs(rate_a - rate_b) <= 1e-12 * max(abs(rate_a), abs(rate_b))

def compile_idle(path: AdiabaticPath, lam: float, duration: float) -> DriveTimeline:
    """Free evolution at a fixed path point."""
    if not duration > 0:
        raise ScheduleError("Idle duration must be positive", details={"duration": duration})
    return DriveTimeline(path, (Segment(duration, lam, lam, gap=Vanishing(), sweep_time=duration),))

def back_forth(timeline: DriveTimeline, repeats: int) -> DriveTimeline:
    """Alternate forward and λ-reversed passes; `repeats` counts half paths."""
    if repeats < 1:
        raise ScheduleError("repeats must be at least 1", details={"repeats": repeats})
    backward = timeline.reversed()
    result = timeline
    for k in range(1, repeats):
        result = result.concat(backward if k % 2 else timeline)
    return result

def compensation_segment(
    path: AdiabaticPath,
    final_lambda: float,
    duration: float,
    omega0: Optional[float] = None,
) -> Segment:
    """-H(final_λ) for `duration`, cancelling the accumulated relative dynamic phase."""
    if not duration >= 0:
        raise ScheduleError("Compensation duration must be non-negative", details={"duration": duration})
    if path.energy_mode == EXTERNAL_GAP:
        if omega0 is None or not omega0 > 0:
            raise ScheduleError("Compensation on an external-gap path needs Ω0 > 0", details={"omega0": omega0})
        return Segment(duration, final_lambda, final_lambda, gap=Constant(omega0), sweep_time=duration, phase_flip=True)
    if path.singular(final_lambda):
        raise SingularPathError(
            f"Cannot compensate at the singular point λ={final_lambda!r}",
            details={"path": path.name, "lambda": final_lambda}
        )
    return Segment(duration, final_lambda, final_lambda, gap=None, sweep_time=duration, phase_flip=True)

def compensate(timeline: DriveTimeline, omega0: Optional[float] = None) -> DriveTimeline:
    segment = compensation_segment(timeline.path, timeline.final_lambda, timeline.total_time, omega0)
    return replace(timeline, segments=timeline.segments + (segment,))

def segment_hamiltonians(path: AdiabaticPath, segment: Segment, lams) -> np.ndarray:
    """Hamiltonians applied by `segment` at the given λ values, shape (k, d, d)."""
    sign = -1.0 if segment.phase_flip else 1.0
    if segment.gap is None:
        hams = sign * path.intrinsic_hamiltonians(lams, segment.scale)
    else:
        drive = sign * segment.scale * segment.gap.gap(lams, segment.sweep_time)
        hams = path.drive_hamiltonians(lams, drive)
    if segment.detuning:
        if path.d != 2:
            raise DimensionMismatchError("Detuning noise needs a qubit path", details={"d": path.d})
        hams = hams + 0.5 * segment.detuning * SIGMA_Z
    return hams

def max_gap(path: AdiabaticPath, segment: Segment) -> float:
    """Largest spectral width of the segment's Hamiltonian, sampled on a coarse grid."""
    lams = segment.lambda_at(np.linspace(0.0, segment.duration, 17))
    hams = segment_hamiltonians(path, segment, lams)
    values = np.linalg.eigvalsh(hams)
    return float(np.max(values[:, -1] - values[:, 0]))
