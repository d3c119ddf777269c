"""
Phase bookkeeping and the adiabatic/diabatic decomposition U = U_adia U_dia.

Everything is expressed on the unfolded path coordinate s ∈ [0, 1]: the
accumulated |Δλ| of the timeline, normalised to one. For a single forward
pass s = λ. Timelines that never move λ use normalised time instead.
Dynamic phases follow φ_n = +∫E_n dt and U_adia carries e^{i(γ_n - φ_n)}.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import integrate, special

from app.core.config import settings
from app.core.exceptions import (
    AdiabaticError,
    ConvergenceError,
    DimensionMismatchError,
    NonHermitianError,
    ScheduleError,
)
from app.services.paths import AdiabaticPath, berry_phases, geometric_matrix
from app.services.qcore import (
    SIGMA_Z,
    HermitianOp,
    Unitary,
    expm_herm,
    expm_herm_batch,
    ordered_product,
    sigma_theta,
    spectral_norm,
)
from app.services.propagate import propagate
from app.services.schedules import DriveTimeline, Segment

logger = logging.getLogger(__name__)

SWEEP = "sweep"
MARKER = "marker"
JUMP = "jump"
LINEAR = "linear"

BOUND_FLOOR = 1e-9
COUPLING_NODES = 257
PROBE_NODES = 257
MIN_EPSILON_NODES = 16

@dataclass(frozen=True)
class PhasePiece:
    """A stretch of the s axis over which φ_n varies smoothly (or jumps, for zero width)."""
    kind: str
    s_start: float
    s_end: float
    segment: Segment
    phi_start: np.ndarray
    phi_end: np.ndarray
    increment: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)

    @property
    def width(self) -> float:
        return self.s_end - self.s_start

    def lam_at(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self.width == 0.0 or self.kind == LINEAR:
            return np.full(s.shape, self.segment.lambda_end)
        fraction = np.clip((s - self.s_start) / self.width, 0.0, 1.0)
        return self.segment.lambda_start + (self.segment.lambda_end - self.segment.lambda_start) * fraction

    def dlam_ds(self) -> float:
        if self.width == 0.0 or self.kind == LINEAR:
            return 0.0
        return (self.segment.lambda_end - self.segment.lambda_start) / self.width

    def phi_at(self, s: np.ndarray) -> np.ndarray:
        """φ inside the piece, shape (k, d)."""
        s = np.asarray(s, dtype=float)
        if self.kind in (MARKER, JUMP) or self.width == 0.0:
            return np.broadcast_to(self.phi_start, s.shape + self.phi_start.shape).copy()
        fraction = np.clip((s - self.s_start) / self.width, 0.0, 1.0)
        return self.phi_start + self.increment(fraction)

@dataclass(frozen=True)
class PhaseRecord:
    """Dynamic phases φ_n(s) and Berry phases γ_n(s) along one timeline."""
    path: AdiabaticPath
    pieces: Tuple[PhasePiece, ...]
    length: float
    time_mode: bool
    initial_lambda: float
    final_lambda: float

    @property
    def d(self) -> int:
        return self.path.d

    @property
    def grid(self) -> np.ndarray:
        edges = [0.0] + [p.s_end for p in self.pieces]
        return np.unique(np.asarray(edges, dtype=float))

    def phi(self, s) -> np.ndarray:
        """Right-continuous φ_n(s) with φ_n(0) = 0, shape (k, d)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.zeros((s.size, self.d))
        for piece in self.pieces:
            delta = piece.phi_end - piece.phi_start
            if piece.kind == JUMP:
                mask = (s >= piece.s_start) & (s > 0.0)
                out[mask] += delta
            elif piece.kind in (SWEEP, LINEAR):
                out[s >= piece.s_end] += delta
                inside = (s > piece.s_start) & (s < piece.s_end)
                if np.any(inside):
                    out[inside] += piece.phi_at(s[inside]) - piece.phi_start
        return out

    def lam(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.full(s.size, self.final_lambda)
        assigned = np.zeros(s.size, dtype=bool)
        for piece in self.pieces:
            if piece.width == 0.0:
                continue
            mask = (~assigned) & (s >= piece.s_start) & (s < piece.s_end)
            out[mask] = piece.lam_at(s[mask])
            assigned |= mask
        out[s <= 0.0] = self.initial_lambda
        return out

    def gamma(self, s) -> np.ndarray:
        """γ_n along the traversal: γ_n(λ(s)) - γ_n(λ(0))."""
        lams = self.lam(s)
        reference = berry_phases(self.path, [self.initial_lambda])
        return berry_phases(self.path, lams) - reference

    def relative(self, n: int, m: int, s) -> np.ndarray:
        phi = self.phi(s)
        return phi[:, n - 1] - phi[:, m - 1]

    def to_frame(self, points: int = 257) -> pd.DataFrame:
        s = np.union1d(np.linspace(0.0, 1.0, points), self.grid)
        phi = self.phi(s)
        gamma = self.gamma(s)
        columns = {"s": s, "lambda": self.lam(s)}
        for n in range(self.d):
            columns[f"phi_{n + 1}"] = phi[:, n]
        for n in range(self.d):
            columns[f"gamma_{n + 1}"] = gamma[:, n]
        return pd.DataFrame(columns)

def _energy_weights(d: int) -> np.ndarray:
    weights = np.zeros(d)
    weights[0], weights[1] = 0.5, -0.5
    return weights

def _static_energies(path: AdiabaticPath, segment: Segment) -> np.ndarray:
    sign = -1.0 if segment.phase_flip else 1.0
    lam = segment.lambda_start
    if segment.gap is not None:
        gap = float(segment.gap.gap([lam], segment.sweep_time)[0])
        return sign * segment.scale * gap * _energy_weights(path.d)
    if segment.scale == 1.0:
        return sign * path.intrinsic_energies([lam])[0]
    return sign * _scaled_intrinsic_energies(path, segment, np.array([lam]))[0]

def _scaled_intrinsic_energies(path: AdiabaticPath, segment: Segment, lams: np.ndarray) -> np.ndarray:
    # upper level is label 1 on intrinsic paths
    hams = path.intrinsic_hamiltonians(lams, segment.scale)
    return np.linalg.eigvalsh(hams)[:, ::-1]

def _sweep_increment(path: AdiabaticPath, segment: Segment) -> Callable[[np.ndarray], np.ndarray]:
    """∫E_n dt from the start of a sweep to a fraction of it, exact where closed forms exist."""
    sign = -1.0 if segment.phase_flip else 1.0
    lam_a, lam_b = segment.lambda_start, segment.lambda_end
    rate = segment.duration / (lam_b - lam_a)

    def lam_of(fraction):
        return lam_a + (lam_b - lam_a) * np.asarray(fraction, dtype=float)

    if segment.gap is not None:
        weights = _energy_weights(path.d)

        def external(fraction):
            area = segment.gap.integral(lam_a, lam_of(fraction), segment.sweep_time)
            area = np.broadcast_to(np.asarray(area, dtype=float), np.shape(fraction))
            return np.multiply.outer(sign * segment.scale * rate * area, weights)
        return external

    if segment.scale == 1.0:
        def intrinsic(fraction):
            lams = np.atleast_1d(lam_of(fraction))
            values = np.array([path.energy_integral(lam_a, float(lam)) for lam in lams])
            return sign * rate * values
        return intrinsic

    def scaled(fraction):
        lams = np.atleast_1d(lam_of(fraction))
        values = []
        for lam in lams:
            values.append([
                integrate.quad(
                    lambda x, n=n: _scaled_intrinsic_energies(path, segment, np.array([x]))[0, n],
                    lam_a, float(lam), limit=200
                )[0]
                for n in range(path.d)
            ])
        return sign * rate * np.asarray(values)
    return scaled

def _linear_increment(energies: np.ndarray, duration: float) -> Callable[[np.ndarray], np.ndarray]:
    def linear(fraction):
        return np.multiply.outer(np.asarray(fraction, dtype=float) * duration, energies)
    return linear

def _no_increment(d: int) -> Callable[[np.ndarray], np.ndarray]:
    def constant(fraction):
        return np.zeros(np.shape(fraction) + (d,))
    return constant

def dynamic_phases(timeline: DriveTimeline, path: Optional[AdiabaticPath] = None) -> PhaseRecord:
    """
    φ_n(s) = ∫E_n dt with E_n = ±Ω/2 for external gaps and the path's own
    energies for intrinsic paths. Static drives appear as jumps in s;
    detuning is not part of the bookkeeping.
    """
    path = path or timeline.path
    if path.d != timeline.path.d:
        raise DimensionMismatchError(details={"timeline": timeline.path.d, "path": path.d})
    d = path.d
    length = math.fsum(abs(s.lambda_end - s.lambda_start) for s in timeline.segments)
    total = timeline.total_time
    time_mode = length == 0.0

    pieces: List[PhasePiece] = []
    phi = np.zeros(d)
    s = 0.0
    for segment in timeline.segments:
        moved = abs(segment.lambda_end - segment.lambda_start)
        if time_mode:
            if segment.duration == 0.0:
                continue
            width = segment.duration / total
            energies = _static_energies(timeline.path, segment)
            increment = _linear_increment(energies, segment.duration)
            kind = LINEAR
        elif moved == 0.0:
            if segment.duration == 0.0:
                continue
            width = 0.0
            energies = _static_energies(timeline.path, segment)
            increment = _linear_increment(energies, segment.duration)
            kind = JUMP
        elif segment.duration == 0.0:
            width = moved / length
            increment = _no_increment(d)
            kind = MARKER
        else:
            width = moved / length
            increment = _sweep_increment(timeline.path, segment)
            kind = SWEEP
        end = min(1.0, s + width)
        delta = increment(np.array(1.0)).reshape(d)
        pieces.append(PhasePiece(kind, s, end, segment, phi.copy(), phi + delta, increment))
        phi = phi + delta
        s = end

    return PhaseRecord(
        path=path,
        pieces=tuple(pieces),
        length=length,
        time_mode=time_mode,
        initial_lambda=timeline.initial_lambda,
        final_lambda=timeline.final_lambda,
    )

def _check_pair(record: PhaseRecord, n: int, m: int) -> None:
    record.path._check_label(n)
    record.path._check_label(m)
    if n == m:
        raise AdiabaticError("ε needs two different labels", code="INVALID_LABELS", details={"n": n, "m": m})

def _check_s(s: float) -> float:
    if not -1e-12 <= s <= 1.0 + 1e-12:
        raise ScheduleError("Path coordinate outside [0, 1]", details={"s": s})
    return min(max(float(s), 0.0), 1.0)

def _probe_nodes(record: PhaseRecord, piece: PhasePiece, a: float, b: float, n: int, m: int) -> int:
    probe = np.linspace(a, b, PROBE_NODES)
    relative = piece.phi_at(probe)
    variation = float(np.sum(np.abs(np.diff(relative[:, n - 1] - relative[:, m - 1]))))
    return max(MIN_EPSILON_NODES, math.ceil(settings.EPSILON_POINTS_PER_CYCLE * variation / (2.0 * math.pi)))

def _epsilon_piece(record: PhaseRecord, piece: PhasePiece, a: float, b: float, n: int, m: int):
    """Trapezoid of e^{iφ_nm} over [a, b], doubled until stable; returns nodes, cumulative and the extrapolated total."""
    if piece.kind == MARKER:
        phase = piece.phi_start[n - 1] - piece.phi_start[m - 1]
        value = np.exp(1j * phase) * (b - a)
        return np.array([a, b]), np.array([0.0, value]), value

    intervals = _probe_nodes(record, piece, a, b, n, m)

    def trapezoid(count):
        nodes = np.linspace(a, b, count + 1)
        phi = piece.phi_at(nodes)
        values = np.exp(1j * (phi[:, n - 1] - phi[:, m - 1]))
        cumulative = np.concatenate([[0.0], np.cumsum(0.5 * (values[1:] + values[:-1]) * np.diff(nodes))])
        return nodes, cumulative

    nodes, cumulative = trapezoid(intervals)
    for _ in range(settings.MAX_HALVINGS):
        intervals *= 2
        fine_nodes, fine_cumulative = trapezoid(intervals)
        change = abs(fine_cumulative[-1] - cumulative[-1])
        if change / 3.0 < settings.EPSILON_TOLERANCE:
            total = fine_cumulative[-1] + (fine_cumulative[-1] - cumulative[-1]) / 3.0
            return fine_nodes, fine_cumulative, total
        nodes, cumulative = fine_nodes, fine_cumulative
    raise ConvergenceError(
        "ε quadrature did not converge",
        iterates=[cumulative[-1], fine_cumulative[-1]],
        details={"n": n, "m": m, "s_start": a, "s_end": b}
    )

def epsilon_curve(record: PhaseRecord, n: int, m: int, s_end: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and ε_{n,m} at each node up to s_end."""
    _check_pair(record, n, m)
    s_end = _check_s(s_end)
    all_nodes = [np.array([0.0])]
    all_values = [np.array([0.0], dtype=complex)]
    running = 0.0 + 0.0j
    for piece in record.pieces:
        a, b = piece.s_start, min(piece.s_end, s_end)
        if piece.kind == JUMP or b <= a:
            continue
        nodes, cumulative, total = _epsilon_piece(record, piece, a, b, n, m)
        all_nodes.append(nodes[1:])
        all_values.append(running + cumulative[1:])
        running = running + total
        all_values[-1][-1] = running
    return np.concatenate(all_nodes), np.abs(np.concatenate(all_values))

def epsilon(phases: PhaseRecord, n: int, m: int, lam: float) -> float:
    """ε_{n,m}(λ) = |∫_0^λ e^{iφ_{n,m}} dλ'| on the path coordinate."""
    lam = _check_s(lam)
    if lam == 0.0:
        _check_pair(phases, n, m)
        return 0.0
    _, values = epsilon_curve(phases, n, m, lam)
    return float(values[-1])

def epsilon_max(phases: PhaseRecord, lam: float = 1.0) -> float:
    """max over n ≠ m and λ' ≤ λ of ε_{n,m}(λ')."""
    lam = _check_s(lam)
    best = 0.0
    for n in range(1, phases.d + 1):
        for m in range(n + 1, phases.d + 1):
            _, values = epsilon_curve(phases, n, m, lam)
            best = max(best, float(np.max(values)))
    return best

def u_adia(path: AdiabaticPath, phases: PhaseRecord, lam: float) -> Unitary:
    """Σ_n e^{i(γ_n - φ_n)} |ψ_n(λ(s))><ψ_n(λ(0))|."""
    _check_record(path, phases)
    s = _check_s(lam)
    weights = np.exp(1j * (phases.gamma(s)[0] - phases.phi(s)[0]))
    now = path.frames(phases.lam(s))[0]
    start = path.frames([phases.initial_lambda])[0]
    return Unitary((now * weights[None, :]) @ start.conj().T)

def u_dia_extract(U: Unitary, U_adia: Unitary) -> Unitary:
    if U.d != U_adia.d:
        raise DimensionMismatchError(details={"U": U.d, "U_adia": U_adia.d})
    return U_adia.dagger @ U

def _segment_phase(path: AdiabaticPath, segment: Segment, fraction: float) -> np.ndarray:
    if segment.duration == 0.0 or fraction <= 0.0:
        return np.zeros(path.d)
    if segment.is_static:
        return _static_energies(path, segment) * segment.duration * fraction
    return _sweep_increment(path, segment)(np.array(fraction)).reshape(path.d)

def phases_at_time(timeline: DriveTimeline, t: float) -> np.ndarray:
    """φ_n accumulated up to wall-clock time t, shape (d,)."""
    path = timeline.path
    total = timeline.total_time
    if not -1e-15 <= t <= total * (1.0 + 1e-12) + 1e-15:
        raise ScheduleError("Time outside the timeline", details={"t": t, "total_time": total})
    phi = np.zeros(path.d)
    for k, segment in enumerate(timeline.segments):
        start = float(timeline.boundaries[k])
        if segment.duration == 0.0:
            continue
        if t >= start + segment.duration:
            phi = phi + _segment_phase(path, segment, 1.0)
            continue
        if t > start:
            phi = phi + _segment_phase(path, segment, (t - start) / segment.duration)
        break
    return phi

def u_adia_at_time(timeline: DriveTimeline, t: float) -> Unitary:
    """U_adia evaluated at wall-clock time t rather than on the path coordinate."""
    path = timeline.path
    lam = timeline.lambda_of_t(t)
    lam0 = timeline.initial_lambda
    gamma = berry_phases(path, [lam])[0] - berry_phases(path, [lam0])[0]
    weights = np.exp(1j * (gamma - phases_at_time(timeline, t)))
    now = path.frames([lam])[0]
    start = path.frames([lam0])[0]
    return Unitary((now * weights[None, :]) @ start.conj().T)

def _check_record(path: AdiabaticPath, phases: PhaseRecord) -> None:
    if path is not phases.path:
        raise AdiabaticError(
            "Phase record was built for a different path",
            code="PATH_MISMATCH",
            details={"path": path.name, "record_path": phases.path.name}
        )

def _couplings(phases: PhaseRecord, piece: PhasePiece, s: np.ndarray) -> np.ndarray:
    """G_{n,m}(s) = e^{i(γ_m - γ_n)} g_{n,m}(λ(s)) dλ/ds, shape (k, d, d)."""
    lams = piece.lam_at(s)
    g = geometric_matrix(phases.path, lams) * piece.dlam_ds()
    gamma = berry_phases(phases.path, lams) - berry_phases(phases.path, [phases.initial_lambda])
    return np.exp(1j * (gamma[:, None, :] - gamma[:, :, None])) * g

def _w_matrices(phases: PhaseRecord, piece: PhasePiece, s: np.ndarray) -> np.ndarray:
    G = _couplings(phases, piece, s)
    phi = piece.phi_at(s)
    W = np.exp(1j * (phi[:, :, None] - phi[:, None, :])) * G
    idx = np.arange(phases.d)
    W[:, idx, idx] = 0.0
    return W

def _piece_at(phases: PhaseRecord, s: float) -> Optional[PhasePiece]:
    chosen = None
    for piece in phases.pieces:
        if piece.width > 0 and piece.s_start <= s <= piece.s_end:
            chosen = piece
            if s < piece.s_end:
                break
    return chosen

def w_generator(path: AdiabaticPath, phases: PhaseRecord, lam: float) -> HermitianOp:
    """W(s) in the {|ψ_n(0)>} basis: zero diagonal, e^{iφ_nm} G_nm off the diagonal."""
    _check_record(path, phases)
    s = _check_s(lam)
    piece = _piece_at(phases, s)
    if piece is None or piece.kind == LINEAR:
        return HermitianOp(np.zeros((path.d, path.d), dtype=complex))
    W = _w_matrices(phases, piece, np.array([s]))[0]
    asymmetry = spectral_norm(W - W.conj().T)
    if asymmetry > 1e-9 * max(1.0, spectral_norm(W)):
        raise NonHermitianError("W generator is not Hermitian", details={"asymmetry": asymmetry, "s": s})
    return HermitianOp(0.5 * (W + W.conj().T))

def _ode_steps(phases: PhaseRecord, piece: PhasePiece, a: float, b: float, n_steps: int) -> np.ndarray:
    h = (b - a) / n_steps
    k = np.arange(n_steps, dtype=float)
    offset = math.sqrt(3.0) / 6.0
    w1 = _w_matrices(phases, piece, a + (k + 0.5 - offset) * h)
    w2 = _w_matrices(phases, piece, a + (k + 0.5 + offset) * h)
    commutator = w1 @ w2 - w2 @ w1
    generator = -0.5 * h * (w1 + w2) + 1j * (math.sqrt(3.0) / 12.0) * h * h * commutator
    # enforce exact Hermiticity of each step generator
    generator = 0.5 * (generator + np.conj(np.swapaxes(generator, 1, 2)))
    return ordered_product(expm_herm_batch(generator, 1.0))

def u_dia_ode(path: AdiabaticPath, phases: PhaseRecord, lam_end: float, grid: Optional[int] = None) -> Unitary:
    """
    Integrates dU_dia/ds = iW(s) U_dia from U_dia(0) = I with a fourth-order
    Magnus stepper, halving the step until ODE_TOLERANCE is met on each piece.
    """
    _check_record(path, phases)
    s_end = _check_s(lam_end)
    total = np.eye(path.d, dtype=complex)
    for piece in phases.pieces:
        a, b = piece.s_start, min(piece.s_end, s_end)
        if piece.kind in (JUMP, LINEAR) or b <= a:
            continue
        if piece.kind == MARKER:
            n_steps = grid or 1
        else:
            n_steps = grid or max(
                max(_probe_nodes(phases, piece, a, b, i, j)
                    for i in range(1, path.d + 1) for j in range(i + 1, path.d + 1)),
                math.ceil((b - a) / settings.LAMBDA_STEP),
            )
        current = _ode_steps(phases, piece, a, b, n_steps)
        previous = current
        for _ in range(settings.MAX_HALVINGS):
            n_steps *= 2
            previous, current = current, _ode_steps(phases, piece, a, b, n_steps)
            change = spectral_norm(current - previous)
            if change < settings.ODE_TOLERANCE:
                break
        else:
            raise ConvergenceError(
                "U_dia integration did not converge",
                iterates=[previous, current],
                details={"s_start": a, "s_end": b, "steps": n_steps}
            )
        total = current @ total
    return Unitary(total)

class BoundCheck(NamedTuple):
    lhs: float
    rhs: float
    holds: bool

def coupling_totals(phases: PhaseRecord, lam: float = 1.0) -> Tuple[float, float]:
    """G_tot = Σ_{n≠m} max|G_nm| and G_tot' = Σ_{n≠m} max|dG_nm/ds| over s' ≤ s."""
    s_end = _check_s(lam)
    d = phases.d
    g_max = np.zeros((d, d))
    g_prime_max = np.zeros((d, d))
    for piece in phases.pieces:
        a, b = piece.s_start, min(piece.s_end, s_end)
        if piece.kind in (JUMP, LINEAR) or b <= a:
            continue
        nodes = np.linspace(a, b, COUPLING_NODES)
        G = _couplings(phases, piece, nodes)
        g_max = np.maximum(g_max, np.max(np.abs(G), axis=0))
        slope = np.gradient(G, nodes, axis=0)
        g_prime_max = np.maximum(g_prime_max, np.max(np.abs(slope), axis=0))
    off = ~np.eye(d, dtype=bool)
    return float(np.sum(g_max[off])), float(np.sum(g_prime_max[off]))

def bound_rhs(eps: float, g_tot: float, g_tot_prime: float, lam: float) -> float:
    root = math.sqrt(eps)
    return root * (g_tot ** 2 + g_tot_prime) * lam ** 2 + (root + eps) * g_tot

@dataclass(frozen=True)
class DecompositionReport:
    path: AdiabaticPath
    phases: PhaseRecord
    U: Unitary
    U_adia: Unitary
    U_dia: Unitary
    U_dia_ode: Unitary
    epsilon_max: float
    G_tot: float
    G_tot_prime: float
    bound_lhs: float
    bound_rhs: float

    @property
    def deviation_norm(self) -> float:
        return self.U_dia.distance(Unitary.identity(self.U.d))

    @property
    def decomposition_residual(self) -> float:
        return spectral_norm(self.U.entries - (self.U_adia @ self.U_dia).entries)

    @property
    def ode_residual(self) -> float:
        return self.U_dia_ode.distance(self.U_dia)

    @property
    def bound_holds(self) -> bool:
        return self.bound_lhs < self.bound_rhs or self.bound_lhs <= BOUND_FLOOR

    def epsilon(self, n: int, m: int, lam: float) -> float:
        return epsilon(self.phases, n, m, lam)

    def to_dict(self, points: int = 65) -> Dict[str, object]:
        table = self.phases.to_frame(points)
        return {
            "gauge": self.path.gauge,
            "epsilon_max": self.epsilon_max,
            "G_tot": self.G_tot,
            "G_tot_prime": self.G_tot_prime,
            "bound_lhs": self.bound_lhs,
            "bound_rhs": self.bound_rhs,
            "bound_holds": self.bound_holds,
            "deviation_norm": self.deviation_norm,
            "decomposition_residual": self.decomposition_residual,
            "ode_residual": self.ode_residual,
            "phases": {column: table[column].tolist() for column in table.columns},
        }

def adiabaticity_bound(report: DecompositionReport, lam: float) -> BoundCheck:
    """‖U_dia(λ) - I‖ against √ε(G_tot² + G_tot')λ² + (√ε + ε)G_tot."""
    s = _check_s(lam)
    if s >= 1.0:
        U_dia = report.U_dia
    else:
        U_dia = u_dia_ode(report.path, report.phases, s)
    lhs = U_dia.distance(Unitary.identity(U_dia.d))
    eps = epsilon_max(report.phases, s)
    g_tot, g_tot_prime = coupling_totals(report.phases, s)
    rhs = bound_rhs(eps, g_tot, g_tot_prime, s)
    check = BoundCheck(lhs, rhs, lhs < rhs or lhs <= BOUND_FLOOR)
    if not check.holds:
        logger.warning("Adiabaticity bound violated", extra={"lhs": lhs, "rhs": rhs, "s": s})
    return check

def decompose(
    timeline: DriveTimeline,
    U: Optional[Unitary] = None,
    path: Optional[AdiabaticPath] = None,
) -> DecompositionReport:
    """Propagate (unless U is given), then build U_adia, both U_dia routes and the bound."""
    path = path or timeline.path
    phases = dynamic_phases(timeline, path)
    U = U if U is not None else propagate(timeline)
    U_ad = u_adia(path, phases, 1.0)
    U_dia = u_dia_extract(U, U_ad)
    U_ode = u_dia_ode(path, phases, 1.0)
    eps = epsilon_max(phases, 1.0)
    g_tot, g_tot_prime = coupling_totals(phases, 1.0)
    lhs = U_dia.distance(Unitary.identity(U_dia.d))
    rhs = bound_rhs(eps, g_tot, g_tot_prime, 1.0)
    report = DecompositionReport(
        path=path,
        phases=phases,
        U=U,
        U_adia=U_ad,
        U_dia=U_dia,
        U_dia_ode=U_ode,
        epsilon_max=eps,
        G_tot=g_tot,
        G_tot_prime=g_tot_prime,
        bound_lhs=lhs,
        bound_rhs=rhs,
    )
    logger.info(
        "Decomposition complete",
        extra={
            "path": path.name,
            "epsilon_max": eps,
            "deviation_norm": lhs,
            "ode_residual": report.ode_residual,
            "bound_holds": report.bound_holds,
        }
    )
    return report

def analytic_constant_gap(theta: float, theta_g: float, phi: float) -> Tuple[Unitary, Unitary, Unitary]:
    """
    Closed forms for a constant gap on a circle of latitude:
    U = e^{-iθ_gσ_z/2} exp[-i(φσ_θ - θ_gσ_z)/2],
    U_adia = e^{-iθ_gσ_z/2} e^{iθ_g cosθ σ_θ/2} e^{-iφσ_θ/2},
    U_dia = exp[i(φ - θ_g cosθ)σ_θ/2] exp[-i(φσ_θ - θ_gσ_z)/2].
    """
    s_theta = sigma_theta(theta)
    frame = expm_herm(0.5 * theta_g * SIGMA_Z, 1.0)
    rotating = expm_herm(0.5 * (phi * s_theta - theta_g * SIGMA_Z), 1.0)
    U = frame @ rotating
    U_adia = frame @ expm_herm(-0.5 * theta_g * math.cos(theta) * s_theta, 1.0) @ expm_herm(0.5 * phi * s_theta, 1.0)
    U_dia = expm_herm(-0.5 * (phi - theta_g * math.cos(theta)) * s_theta, 1.0) @ rotating
    return U, U_adia, U_dia

def analytic_back_forth(theta: float, theta_g: float, phi: float, repeats: int) -> Unitary:
    """Alternating forward and reversed constant-gap passes, each with dynamic phase φ."""
    if repeats < 1:
        raise ScheduleError("repeats must be at least 1", details={"repeats": repeats})
    s_theta = sigma_theta(theta)
    forward, _, _ = analytic_constant_gap(theta, theta_g, phi)
    backward = expm_herm(0.5 * (phi * s_theta + theta_g * SIGMA_Z), 1.0) @ expm_herm(-0.5 * theta_g * SIGMA_Z, 1.0)
    total = Unitary.identity(2)
    for k in range(repeats):
        total = (forward if k % 2 == 0 else backward) @ total
    return total

def perfect_transfer_phase(theta_g: float, k: int) -> float:
    """φ = √((2kπ)² - θ_g²), where the constant-gap transfer is exact."""
    if k < 1 or 2.0 * k * math.pi <= theta_g:
        raise ScheduleError(
            "Perfect transfer needs 2kπ > θ_g",
            details={"theta_g": theta_g, "k": k}
        )
    return math.sqrt((2.0 * k * math.pi) ** 2 - theta_g ** 2)

def counterexample_slope() -> float:
    """J_2(1), the growth rate of ε for the modulated gap."""
    return float(special.jv(2, 1.0))
