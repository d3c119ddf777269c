"""
Adiabatic paths: λ-parameterized instantaneous eigenframes.

Eigenstates are labeled by continuity along the path, never by energy order.
Frames are returned column-wise: frames(λ)[:, :, n-1] is |ψ_n(λ)>.
"""
import logging
from abc import ABC, abstractmethod
from typing import Callable, Dict, Optional, Sequence, Union

import numpy as np
from scipy import integrate

from app.core.config import settings
from app.core.exceptions import (
    DimensionMismatchError,
    ScheduleError,
    SingularPathError,
)
from app.services.qcore import SIGMA_X, SIGMA_Y, SIGMA_Z, PureState, HermitianOp

logger = logging.getLogger(__name__)

EXTERNAL_GAP = "external-gap"
INTRINSIC = "intrinsic"

LAMBDA_SLACK = 1e-12
SINGULAR_TOLERANCE = 1e-12

StateLike = Union[PureState, Sequence[complex], np.ndarray]

def _as_lambdas(lams) -> np.ndarray:
    values = np.atleast_1d(np.asarray(lams, dtype=float))
    if np.any(values < -LAMBDA_SLACK) or np.any(values > 1.0 + LAMBDA_SLACK):
        raise ScheduleError("Path parameter outside [0, 1]", details={"lambda": values.tolist()[:8]})
    return np.clip(values, 0.0, 1.0)

class AdiabaticPath(ABC):
    """Instantaneous eigenframe {|ψ_n(λ)>} with its energy convention."""

    energy_mode = EXTERNAL_GAP
    gauge = "analytic"

    def __init__(self, d: int, theta_g: float, name: str):
        self.d = d
        self.theta_g = float(theta_g)
        self.name = name

    @abstractmethod
    def frames(self, lams) -> np.ndarray:
        """Eigenframes at the given λ values, shape (k, d, d)."""

    def eigenstate(self, n: int, lam: float) -> PureState:
        self._check_label(n)
        column = self.frames([lam])[0][:, n - 1]
        return PureState(column / np.linalg.norm(column))

    def analytic_g(self, lams) -> Optional[np.ndarray]:
        """Closed-form g_{n,m}(λ), shape (k, d, d), or None."""
        return None

    def analytic_berry(self, lams) -> Optional[np.ndarray]:
        """Closed-form γ_n(λ), shape (k, d), or None."""
        return None

    def singular(self, lam: float) -> bool:
        """True where the Hamiltonian diverges."""
        return False

    def frame_singular(self, lam: float) -> bool:
        """True where the eigenframe itself is undefined."""
        return False

    def check_regular(self, lams) -> None:
        for lam in np.atleast_1d(lams):
            if self.singular(float(lam)):
                raise SingularPathError(
                    f"{self.name} is singular at λ={float(lam)!r}",
                    details={"path": self.name, "lambda": float(lam)}
                )

    def drive_hamiltonians(self, lams, drive) -> np.ndarray:
        """
        Hamiltonians (Ω/2)(|ψ1><ψ1| - |ψ2><ψ2|) for an external gap.

        `drive` holds the signed, scaled Ω at each λ.
        """
        frames = self.frames(_as_lambdas(lams))
        drive = np.broadcast_to(np.asarray(drive, dtype=float), frames.shape[:1])
        weights = np.zeros(frames.shape[:2])
        weights[:, 0] = 0.5 * drive
        weights[:, 1] = -0.5 * drive
        return np.einsum("kin,kn,kjn->kij", frames, weights, frames.conj())

    def hamiltonian(self, lam: float, gap: Optional[float] = None) -> HermitianOp:
        """H(λ) for a fixed gap value (ignored by intrinsic paths)."""
        if self.energy_mode == INTRINSIC:
            return HermitianOp(self.intrinsic_hamiltonians([lam])[0])
        if gap is None:
            raise ScheduleError("External-gap paths need a gap value", details={"path": self.name})
        return HermitianOp(self.drive_hamiltonians([lam], [gap])[0])

    def intrinsic_hamiltonians(self, lams, scale: float = 1.0) -> np.ndarray:
        raise ScheduleError(f"{self.name} has no intrinsic Hamiltonian", details={"path": self.name})

    def intrinsic_energies(self, lams) -> np.ndarray:
        raise ScheduleError(f"{self.name} has no intrinsic energies", details={"path": self.name})

    def intrinsic_gap(self, lams) -> np.ndarray:
        energies = self.intrinsic_energies(lams)
        return np.abs(energies[:, 0] - energies[:, 1])

    def energy_integral(self, lam_a: float, lam_b: float) -> np.ndarray:
        """∫ E_n dλ between two path points, shape (d,)."""
        raise ScheduleError(f"{self.name} has no intrinsic energies", details={"path": self.name})

    def describe(self) -> Dict[str, object]:
        return {
            "name": self.name,
            "d": self.d,
            "theta_g": self.theta_g,
            "energy_mode": self.energy_mode,
            "gauge": self.gauge,
        }

    def _check_label(self, n: int) -> None:
        if not 1 <= n <= self.d:
            raise DimensionMismatchError(
                f"Eigenstate label {n} outside 1..{self.d}",
                details={"label": n, "d": self.d}
            )

class XYGeodesic(AdiabaticPath):
    """|±_λ> = (|z> ± e^{iθ_g λ}|-z>)/√2 on the equator."""

    def __init__(self, theta_g: float):
        if theta_g <= 0:
            raise ScheduleError("θ_g must be positive", details={"theta_g": theta_g})
        super().__init__(2, theta_g, "xy_geodesic")

    def frames(self, lams) -> np.ndarray:
        lams = _as_lambdas(lams)
        phase = np.exp(1j * self.theta_g * lams)
        out = np.empty((lams.size, 2, 2), dtype=complex)
        r = 1.0 / np.sqrt(2.0)
        out[:, 0, 0] = r
        out[:, 1, 0] = r * phase
        out[:, 0, 1] = r
        out[:, 1, 1] = -r * phase
        return out

    def drive_hamiltonians(self, lams, drive) -> np.ndarray:
        lams = _as_lambdas(lams)
        drive = np.broadcast_to(np.asarray(drive, dtype=float), lams.shape)
        phase = np.exp(1j * self.theta_g * lams)
        out = np.zeros((lams.size, 2, 2), dtype=complex)
        out[:, 0, 1] = 0.5 * drive * phase.conj()
        out[:, 1, 0] = 0.5 * drive * phase
        return out

    def analytic_g(self, lams) -> np.ndarray:
        lams = _as_lambdas(lams)
        half = 0.5 * self.theta_g
        g = np.array([[-half, half], [half, -half]], dtype=complex)
        return np.broadcast_to(g, (lams.size, 2, 2)).copy()

    def analytic_berry(self, lams) -> np.ndarray:
        lams = _as_lambdas(lams)
        gamma = -0.5 * self.theta_g * lams
        return np.stack([gamma, gamma], axis=1)

class LatitudePath(AdiabaticPath):
    """
    Circle of latitude at polar angle θ, traversed by an azimuth θ_g λ.

    Single-valued gauge, so a full circle (θ_g = 2π) returns to the same
    vectors and the Berry phases come out as ±π(cos θ - 1).
    """

    def __init__(self, theta: float, theta_g: float):
        if theta_g <= 0:
            raise ScheduleError("θ_g must be positive", details={"theta_g": theta_g})
        super().__init__(2, theta_g, "latitude")
        self.theta = float(theta)
        self._c = np.cos(0.5 * theta)
        self._s = np.sin(0.5 * theta)

    def frames(self, lams) -> np.ndarray:
        lams = _as_lambdas(lams)
        phase = np.exp(1j * self.theta_g * lams)
        out = np.empty((lams.size, 2, 2), dtype=complex)
        out[:, 0, 0] = self._c
        out[:, 1, 0] = self._s * phase
        out[:, 0, 1] = -self._s * phase.conj()
        out[:, 1, 1] = self._c
        return out

    def analytic_g(self, lams) -> np.ndarray:
        lams = _as_lambdas(lams)
        phase = np.exp(1j * self.theta_g * lams)
        s2 = self._s ** 2
        cs = self._c * self._s
        out = np.empty((lams.size, 2, 2), dtype=complex)
        out[:, 0, 0] = -self.theta_g * s2
        out[:, 1, 1] = self.theta_g * s2
        out[:, 0, 1] = -self.theta_g * cs * phase.conj()
        out[:, 1, 0] = -self.theta_g * cs * phase
        return out

    def analytic_berry(self, lams) -> np.ndarray:
        lams = _as_lambdas(lams)
        gamma = -self.theta_g * self._s ** 2 * lams
        return np.stack([gamma, -gamma], axis=1)

    def describe(self) -> Dict[str, object]:
        return {**super().describe(), "theta": self.theta}

class GeneralGeodesic(AdiabaticPath):
    """Geodesic |ψ1(λ)> = cos(θ_gλ/2)|ψ1(0)> + sin(θ_gλ/2)|ψ2(0)> between two states."""

    gauge = "real-rotation"

    def __init__(self, psi_i: StateLike, psi_t: StateLike):
        initial = _to_state(psi_i)
        target = _to_state(psi_t)
        if initial.d != target.d:
            raise DimensionMismatchError(details={"initial": initial.d, "target": target.d})
        d = initial.d
        overlap = np.vdot(initial.amplitudes, target.amplitudes)
        r = min(1.0, float(abs(overlap)))
        aligned = target.amplitudes
        # orthogonal states keep the target phase as given
        if r > SINGULAR_TOLERANCE:
            aligned = aligned * np.exp(-1j * np.angle(overlap))
        theta_g = 2.0 * np.arccos(r)
        super().__init__(d, theta_g, "general_geodesic")

        first = initial.amplitudes
        residual = aligned - r * first
        if np.sin(0.5 * theta_g) > SINGULAR_TOLERANCE and np.linalg.norm(residual) > SINGULAR_TOLERANCE:
            second = residual / np.linalg.norm(residual)
            basis = [first, second]
        else:
            basis = [first]
        basis = _complete_basis(basis, d)
        self._basis = np.stack(basis, axis=1)
        self.target = PureState(aligned / np.linalg.norm(aligned))

    def frames(self, lams) -> np.ndarray:
        lams = _as_lambdas(lams)
        half = 0.5 * self.theta_g * lams
        c, s = np.cos(half), np.sin(half)
        out = np.broadcast_to(self._basis, (lams.size, self.d, self.d)).copy()
        first, second = self._basis[:, 0], self._basis[:, 1]
        out[:, :, 0] = c[:, None] * first + s[:, None] * second
        out[:, :, 1] = -s[:, None] * first + c[:, None] * second
        return out

    def analytic_g(self, lams) -> np.ndarray:
        lams = _as_lambdas(lams)
        out = np.zeros((lams.size, self.d, self.d), dtype=complex)
        out[:, 0, 1] = -0.5j * self.theta_g
        out[:, 1, 0] = 0.5j * self.theta_g
        return out

    def analytic_berry(self, lams) -> np.ndarray:
        return np.zeros((_as_lambdas(lams).size, self.d))

class LandauZenerPath(AdiabaticPath):
    """
    H(λ) = B_z σ_z/2 + Δ σ_x/2 with B_z = -Δ cot(θ_g λ).

    The eigenframe is the meridian (sin(θ_gλ/2), cos(θ_gλ/2)) and stays
    regular at the endpoints; only the Hamiltonian diverges there.
    """

    energy_mode = INTRINSIC

    def __init__(self, delta: float, theta_g: float = np.pi):
        if delta <= 0:
            raise ScheduleError("Δ must be positive", details={"delta": delta})
        if not 0 < theta_g <= np.pi:
            raise ScheduleError("θ_g must lie in (0, π]", details={"theta_g": theta_g})
        super().__init__(2, theta_g, "lz_path")
        self.delta = float(delta)

    def singular(self, lam: float) -> bool:
        return abs(np.sin(self.theta_g * lam)) < SINGULAR_TOLERANCE

    def frames(self, lams) -> np.ndarray:
        lams = _as_lambdas(lams)
        half = 0.5 * self.theta_g * lams
        s, c = np.sin(half), np.cos(half)
        out = np.empty((lams.size, 2, 2), dtype=complex)
        out[:, 0, 0] = s
        out[:, 1, 0] = c
        out[:, 0, 1] = c
        out[:, 1, 1] = -s
        return out

    def analytic_g(self, lams) -> np.ndarray:
        lams = _as_lambdas(lams)
        out = np.zeros((lams.size, 2, 2), dtype=complex)
        out[:, 0, 1] = -0.5j * self.theta_g
        out[:, 1, 0] = 0.5j * self.theta_g
        return out

    def analytic_berry(self, lams) -> np.ndarray:
        return np.zeros((_as_lambdas(lams).size, 2))

    def bz(self, lams) -> np.ndarray:
        lams = _as_lambdas(lams)
        self.check_regular(lams)
        return -self.delta / np.tan(self.theta_g * lams)

    def intrinsic_hamiltonians(self, lams, scale: float = 1.0) -> np.ndarray:
        bz = self.bz(lams)
        return (0.5 * bz[:, None, None] * SIGMA_Z
                + 0.5 * scale * self.delta * SIGMA_X[None])

    def intrinsic_energies(self, lams) -> np.ndarray:
        lams = _as_lambdas(lams)
        self.check_regular(lams)
        half_gap = 0.5 * self.delta / np.abs(np.sin(self.theta_g * lams))
        return np.stack([half_gap, -half_gap], axis=1)

    def energy_integral(self, lam_a: float, lam_b: float) -> np.ndarray:
        self.check_regular([lam_a, lam_b])
        # ∫ Δ / (2 sin(θ_g λ)) dλ = Δ/(2θ_g) ln tan(θ_g λ / 2)
        value = (0.5 * self.delta / self.theta_g) * (
            np.log(np.tan(0.5 * self.theta_g * lam_b)) - np.log(np.tan(0.5 * self.theta_g * lam_a))
        )
        return np.stack([value, -value], axis=-1)

    def describe(self) -> Dict[str, object]:
        return {**super().describe(), "delta": self.delta}

class MicrowavePath(AdiabaticPath):
    """
    Rotating-frame drive H = δσ_z/2 + Ω(cos ϑ σ_x + sin ϑ σ_y)/2 diagonalized numerically.

    Labels follow continuity from the upper state at λ=0; each frame is
    phase-aligned (real-positive overlap) to the nearest tabulated sample.
    """

    energy_mode = INTRINSIC
    gauge = "aligned"

    def __init__(
        self,
        detuning: Callable[[np.ndarray], np.ndarray],
        amplitude: Callable[[np.ndarray], np.ndarray],
        phase: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        theta_g: float = np.pi,
        samples: Optional[int] = None,
    ):
        super().__init__(2, theta_g, "microwave_path")
        self._detuning = detuning
        self._amplitude = amplitude
        self._phase = phase or (lambda lam: np.zeros_like(np.asarray(lam, dtype=float)))
        samples = samples or settings.MICROWAVE_FRAME_SAMPLES
        self._nodes = np.linspace(0.0, 1.0, samples)
        self._table = self._tabulate(self._nodes)

    def _fields(self, lams: np.ndarray):
        delta = np.broadcast_to(np.asarray(self._detuning(lams), dtype=float), lams.shape)
        omega = np.broadcast_to(np.asarray(self._amplitude(lams), dtype=float), lams.shape)
        vartheta = np.broadcast_to(np.asarray(self._phase(lams), dtype=float), lams.shape)
        return delta, omega, vartheta

    def singular(self, lam: float) -> bool:
        with np.errstate(all="ignore"):
            fields = self._fields(np.array([lam]))
        return not all(np.isfinite(f[0]) for f in fields)

    def frame_singular(self, lam: float) -> bool:
        return self.singular(lam)

    def intrinsic_hamiltonians(self, lams, scale: float = 1.0) -> np.ndarray:
        lams = _as_lambdas(lams)
        self.check_regular(lams)
        delta, omega, vartheta = self._fields(lams)
        drive = 0.5 * scale * omega
        return (0.5 * delta[:, None, None] * SIGMA_Z
                + (drive * np.cos(vartheta))[:, None, None] * SIGMA_X
                + (drive * np.sin(vartheta))[:, None, None] * SIGMA_Y)

    def _tabulate(self, nodes: np.ndarray) -> np.ndarray:
        table = np.empty((nodes.size, 2, 2), dtype=complex)
        previous = None
        for k, lam in enumerate(nodes):
            values, vectors = np.linalg.eigh(self._safe_hamiltonian(lam))
            vectors = vectors[:, ::-1]  # upper state first
            if previous is not None:
                vectors = _align(previous, vectors)
            table[k] = vectors
            previous = vectors
        return table

    def _safe_hamiltonian(self, lam: float) -> np.ndarray:
        # endpoints of a divergent sweep are replaced by their nearest regular neighbour
        step = 1.0 / (self._nodes.size - 1) if hasattr(self, "_nodes") else 1e-6
        probe = lam
        while self.singular(probe):
            probe = probe + step if probe < 0.5 else probe - step
        return self.intrinsic_hamiltonians([probe])[0]

    def frames(self, lams) -> np.ndarray:
        lams = _as_lambdas(lams)
        out = np.empty((lams.size, 2, 2), dtype=complex)
        for k, lam in enumerate(lams):
            node = int(round(lam * (self._nodes.size - 1)))
            _, vectors = np.linalg.eigh(self._safe_hamiltonian(lam))
            out[k] = _align(self._table[node], vectors)
        return out

    def intrinsic_energies(self, lams) -> np.ndarray:
        lams = _as_lambdas(lams)
        hams = self.intrinsic_hamiltonians(lams)
        frames = self.frames(lams)
        return np.einsum("kin,kij,kjn->kn", frames.conj(), hams, frames).real

    def energy_integral(self, lam_a: float, lam_b: float) -> np.ndarray:
        self.check_regular([lam_a, lam_b])
        return np.array([
            integrate.quad(lambda x, n=n: self.intrinsic_energies([x])[0, n], lam_a, lam_b, limit=200)[0]
            for n in range(2)
        ])

class RegaugedPath(AdiabaticPath):
    """Base path with eigenstates multiplied by e^{iα_n(λ)}."""

    def __init__(self, base: AdiabaticPath, alphas: Sequence[Callable[[np.ndarray], np.ndarray]]):
        if len(alphas) != base.d:
            raise DimensionMismatchError(
                "One gauge function per eigenstate is required",
                details={"d": base.d, "given": len(alphas)}
            )
        super().__init__(base.d, base.theta_g, f"regauged_{base.name}")
        self.base = base
        self.alphas = list(alphas)
        self.energy_mode = base.energy_mode
        self.gauge = f"regauged-{base.gauge}"

    def _alpha(self, lams: np.ndarray) -> np.ndarray:
        return np.stack([np.broadcast_to(np.asarray(a(lams), dtype=float), lams.shape) for a in self.alphas], axis=1)

    def _alpha_prime(self, lams: np.ndarray) -> np.ndarray:
        step = settings.FINITE_DIFFERENCE_STEP
        upper = np.minimum(lams + step, 1.0)
        lower = np.maximum(lams - step, 0.0)
        return (self._alpha(upper) - self._alpha(lower)) / (upper - lower)[:, None]

    def frames(self, lams) -> np.ndarray:
        lams = _as_lambdas(lams)
        return self.base.frames(lams) * np.exp(1j * self._alpha(lams))[:, None, :]

    def analytic_g(self, lams) -> Optional[np.ndarray]:
        lams = _as_lambdas(lams)
        base_g = geometric_matrix(self.base, lams)
        alpha = self._alpha(lams)
        rotation = np.exp(1j * (alpha[:, None, :] - alpha[:, :, None]))
        shift = np.zeros_like(base_g)
        idx = np.arange(self.d)
        shift[:, idx, idx] = self._alpha_prime(lams)
        return rotation * (base_g - shift)

    def analytic_berry(self, lams) -> Optional[np.ndarray]:
        lams = _as_lambdas(lams)
        base = self.base.analytic_berry(lams)
        if base is None:
            return None
        return base - (self._alpha(lams) - self._alpha(np.zeros_like(lams)))

    def singular(self, lam: float) -> bool:
        return self.base.singular(lam)

    def frame_singular(self, lam: float) -> bool:
        return self.base.frame_singular(lam)

    def drive_hamiltonians(self, lams, drive) -> np.ndarray:
        return self.base.drive_hamiltonians(lams, drive)

    def intrinsic_hamiltonians(self, lams, scale: float = 1.0) -> np.ndarray:
        return self.base.intrinsic_hamiltonians(lams, scale)

    def intrinsic_energies(self, lams) -> np.ndarray:
        return self.base.intrinsic_energies(lams)

    def energy_integral(self, lam_a: float, lam_b: float) -> np.ndarray:
        return self.base.energy_integral(lam_a, lam_b)

def _to_state(value: StateLike) -> PureState:
    if isinstance(value, PureState):
        return value
    return PureState.from_amplitudes(value)

def _complete_basis(vectors, d: int):
    """Gram-Schmidt over canonical basis vectors in index order."""
    basis = [np.asarray(v, dtype=complex) for v in vectors]
    for k in range(d):
        if len(basis) == d:
            break
        candidate = np.zeros(d, dtype=complex)
        candidate[k] = 1.0
        for b in basis:
            candidate = candidate - np.vdot(b, candidate) * b
        norm = np.linalg.norm(candidate)
        if norm > 1e-6:
            basis.append(candidate / norm)
    return basis

def _align(reference: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Order columns by overlap with `reference` and rotate each overlap real-positive."""
    overlaps = reference.conj().T @ vectors
    order = np.argmax(np.abs(overlaps), axis=1)
    if len(set(order.tolist())) != vectors.shape[1]:
        order = np.arange(vectors.shape[1])
    aligned = vectors[:, order]
    diag = np.einsum("in,in->n", reference.conj(), aligned)
    phases = np.where(np.abs(diag) > 0, diag / np.where(np.abs(diag) > 0, np.abs(diag), 1.0), 1.0)
    return aligned * phases.conj()[None, :]

def xy_geodesic(theta_g: float) -> XYGeodesic:
    return XYGeodesic(theta_g)

def latitude_path(theta: float, theta_g: float = 2 * np.pi) -> LatitudePath:
    return LatitudePath(theta, theta_g)

def general_geodesic(psi_i: StateLike, psi_t: StateLike) -> GeneralGeodesic:
    return GeneralGeodesic(psi_i, psi_t)

def lz_path(delta: float, theta_g: float = np.pi) -> LandauZenerPath:
    return LandauZenerPath(delta, theta_g)

def microwave_path(detuning, amplitude, phase=None, theta_g: float = np.pi) -> MicrowavePath:
    return MicrowavePath(detuning, amplitude, phase, theta_g)

def regauge(path: AdiabaticPath, alphas) -> RegaugedPath:
    return RegaugedPath(path, alphas)

def geometric_matrix(path: AdiabaticPath, lams, step: Optional[float] = None, analytic: bool = True) -> np.ndarray:
    """g_{n,m}(λ) for all labels at once, shape (k, d, d)."""
    lams = _as_lambdas(lams)
    for lam in lams:
        if path.frame_singular(float(lam)):
            raise SingularPathError(
                f"Eigenframe of {path.name} is undefined at λ={float(lam)!r}",
                details={"path": path.name, "lambda": float(lam)}
            )
    if analytic:
        g = path.analytic_g(lams)
        if g is not None:
            return g
    step = step or settings.FINITE_DIFFERENCE_STEP
    upper = np.minimum(lams + step, 1.0)
    lower = np.maximum(lams - step, 0.0)
    centre = path.frames(lams)
    plus = _gauge_aligned(centre, path.frames(upper))
    minus = _gauge_aligned(centre, path.frames(lower))
    derivative = (plus - minus) / (upper - lower)[:, None, None]
    return 1j * np.einsum("kin,kim->knm", centre.conj(), derivative)

def _gauge_aligned(reference: np.ndarray, frames: np.ndarray) -> np.ndarray:
    overlaps = np.einsum("kin,kin->kn", reference.conj(), frames)
    magnitude = np.abs(overlaps)
    phases = np.where(magnitude > 0, overlaps / np.where(magnitude > 0, magnitude, 1.0), 1.0)
    return frames * phases.conj()[:, None, :]

def geometric_function(
    path: AdiabaticPath,
    n: int,
    m: int,
    lam: float,
    step: Optional[float] = None,
    analytic: bool = True,
) -> complex:
    """g_{n,m}(λ) = i<ψ_n(λ)| d/dλ |ψ_m(λ)>."""
    path._check_label(n)
    path._check_label(m)
    return complex(geometric_matrix(path, [lam], step=step, analytic=analytic)[0, n - 1, m - 1])

def berry_phase(path: AdiabaticPath, n: int, lam: float, points: Optional[int] = None) -> float:
    """
    γ_n(λ) by trapezoidal quadrature of g_{n,n} over [0, λ].

    The result is the Richardson combination of the full grid and its
    every-other-point subgrid.
    """
    path._check_label(n)
    lam = float(_as_lambdas(lam)[0])
    if lam == 0.0:
        return 0.0
    intervals = points or settings.BERRY_GRID_POINTS
    intervals += intervals % 2
    grid = np.linspace(0.0, lam, intervals + 1)
    values = geometric_matrix(path, grid)[:, n - 1, n - 1].real
    fine = integrate.trapezoid(values, grid)
    coarse = integrate.trapezoid(values[::2], grid[::2])
    extrapolated = fine + (fine - coarse) / 3.0
    if abs(extrapolated - fine) > settings.EPSILON_TOLERANCE:
        logger.warning(
            "Berry phase quadrature not resolved",
            extra={"path": path.name, "label": n, "lambda": lam, "correction": abs(extrapolated - fine)}
        )
    return float(extrapolated)

def berry_phases(path: AdiabaticPath, lams) -> np.ndarray:
    """γ_n at many λ, shape (k, d); closed form when the path has one."""
    lams = _as_lambdas(lams)
    analytic = path.analytic_berry(lams)
    if analytic is not None:
        return analytic
    table = getattr(path, "_berry_table", None)
    if table is None:
        intervals = settings.BERRY_GRID_POINTS
        grid = np.linspace(0.0, 1.0, intervals + 1)
        diag = np.diagonal(geometric_matrix(path, grid), axis1=1, axis2=2).real
        steps = 0.5 * (diag[1:] + diag[:-1]) * np.diff(grid)[:, None]
        cumulative = np.vstack([np.zeros((1, path.d)), np.cumsum(steps, axis=0)])
        table = (grid, cumulative)
        path._berry_table = table
    grid, cumulative = table
    return np.stack([np.interp(lams, grid, cumulative[:, n]) for n in range(path.d)], axis=1)
