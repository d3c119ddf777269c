"""
Small dense quantum linear algebra.

States are normalized complex vectors, operators are d x d complex matrices.
Energies are angular frequencies (rad/s) with hbar = 1, so the propagator of a
constant Hamiltonian over a duration t is exp(-iHt).
"""
import logging
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from app.core.exceptions import (
    AdiabaticError,
    DimensionMismatchError,
    NonHermitianError,
    NormalizationError,
)

logger = logging.getLogger(__name__)

NORM_TOLERANCE = 1e-12
HERMITIAN_TOLERANCE = 1e-12
UNITARY_TOLERANCE = 1e-10

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)

def mhz_2pi(value: float) -> float:
    """2π × value MHz in rad/s."""
    return 2.0 * np.pi * value * 1e6

def spectral_norm(matrix: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(matrix), 2))

def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=complex, copy=True)
    array.setflags(write=False)
    return array

@dataclass(frozen=True, eq=False)
class PureState:
    """Normalized state vector of a d-level system (d >= 2)."""
    amplitudes: np.ndarray

    def __post_init__(self):
        amplitudes = _frozen(self.amplitudes)
        if amplitudes.ndim != 1 or amplitudes.shape[0] < 2:
            raise DimensionMismatchError(
                "A pure state needs a vector of length >= 2",
                details={"shape": list(amplitudes.shape)}
            )
        norm = float(np.vdot(amplitudes, amplitudes).real)
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise NormalizationError(
                "State is not normalized",
                details={"norm_squared": norm}
            )
        object.__setattr__(self, "amplitudes", amplitudes)

    @classmethod
    def from_amplitudes(cls, amplitudes: Sequence[complex]) -> "PureState":
        """Normalize arbitrary non-zero amplitudes."""
        vector = np.asarray(amplitudes, dtype=complex)
        norm = np.linalg.norm(vector)
        if norm == 0.0:
            raise NormalizationError("Zero-norm amplitudes cannot be normalized")
        return cls(vector / norm)

    @property
    def d(self) -> int:
        return self.amplitudes.shape[0]

    def evolve(self, unitary: Union["Unitary", np.ndarray]) -> "PureState":
        if not isinstance(unitary, Unitary):
            unitary = Unitary(np.asarray(unitary))
        matrix = unitary.entries
        if matrix.shape != (self.d, self.d):
            raise DimensionMismatchError(
                "Unitary and state dimensions differ",
                details={"state_d": self.d, "operator_shape": list(matrix.shape)}
            )
        vector = matrix @ self.amplitudes
        # removes rounding drift only; the operator is already checked
        return PureState(vector / np.linalg.norm(vector))

@dataclass(frozen=True, eq=False)
class HermitianOp:
    """Hermitian operator in rad/s."""
    entries: np.ndarray

    def __post_init__(self):
        entries = _frozen(self.entries)
        _check_square(entries)
        scale = max(1.0, spectral_norm(entries))
        asymmetry = spectral_norm(entries - entries.conj().T)
        # relative check: entries are O(1e7..1e9) rad/s
        if asymmetry > HERMITIAN_TOLERANCE * scale:
            raise NonHermitianError(details={"asymmetry": asymmetry, "scale": scale})
        object.__setattr__(self, "entries", entries)

    @property
    def d(self) -> int:
        return self.entries.shape[0]

@dataclass(frozen=True, eq=False)
class Unitary:
    """Unitary propagator."""
    entries: np.ndarray

    def __post_init__(self):
        entries = _frozen(self.entries)
        _check_square(entries)
        defect = spectral_norm(entries.conj().T @ entries - np.eye(entries.shape[0]))
        if defect > UNITARY_TOLERANCE:
            raise NormalizationError("Matrix is not unitary", details={"defect": defect})
        object.__setattr__(self, "entries", entries)

    @classmethod
    def identity(cls, d: int) -> "Unitary":
        return cls(np.eye(d, dtype=complex))

    @property
    def d(self) -> int:
        return self.entries.shape[0]

    @property
    def dagger(self) -> "Unitary":
        return Unitary(self.entries.conj().T)

    def __matmul__(self, other: "Unitary") -> "Unitary":
        if other.d != self.d:
            raise DimensionMismatchError(details={"left": self.d, "right": other.d})
        return Unitary(self.entries @ other.entries)

    def distance(self, other: "Unitary") -> float:
        """Spectral-norm distance."""
        return spectral_norm(self.entries - other.entries)

def _check_square(entries: np.ndarray) -> None:
    if entries.ndim != 2 or entries.shape[0] != entries.shape[1] or entries.shape[0] < 2:
        raise DimensionMismatchError(
            "Expected a square matrix of size >= 2",
            details={"shape": list(entries.shape)}
        )

def basis_state(label: str) -> PureState:
    """Named qubit states |±x>, |±y>, |±z>."""
    r = 1.0 / np.sqrt(2.0)
    table = {
        "z": (1.0, 0.0),
        "-z": (0.0, 1.0),
        "x": (r, r),
        "-x": (r, -r),
        "y": (r, 1j * r),
        "-y": (r, -1j * r),
    }
    if label not in table:
        raise AdiabaticError(
            f"Unknown basis state {label!r}",
            code="UNKNOWN_STATE",
            details={"known": sorted(table)}
        )
    return PureState(np.array(table[label], dtype=complex))

def sigma_theta(theta: float) -> np.ndarray:
    """σ_θ = σ_z cos θ + σ_x sin θ."""
    return np.cos(theta) * SIGMA_Z + np.sin(theta) * SIGMA_X

def fidelity(a: PureState, b: PureState) -> float:
    """|<a|b>|^2."""
    if a.d != b.d:
        raise DimensionMismatchError(details={"left": a.d, "right": b.d})
    value = abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2
    return float(min(1.0, value))

def expm_herm_batch(hamiltonians: np.ndarray, t: Union[float, np.ndarray] = 1.0) -> np.ndarray:
    """
    exp(-iHt) for a stack of Hermitian matrices, shape (k, d, d).

    The 2 x 2 case uses the closed Pauli form, larger systems an
    eigendecomposition. No Hermiticity check is made here.
    """
    stack = np.asarray(hamiltonians, dtype=complex)
    times = np.broadcast_to(np.asarray(t, dtype=float), stack.shape[:1])
    if stack.shape[-1] == 2:
        a0 = 0.5 * (stack[:, 0, 0] + stack[:, 1, 1]).real
        az = 0.5 * (stack[:, 0, 0] - stack[:, 1, 1]).real
        ax = 0.5 * (stack[:, 0, 1].real + stack[:, 1, 0].real)
        ay = 0.5 * (stack[:, 1, 0].imag - stack[:, 0, 1].imag)
        r = np.sqrt(ax * ax + ay * ay + az * az)
        c = np.cos(r * times)
        # sin(r t)/r without the r = 0 division
        s = times * np.sinc(r * times / np.pi)
        phase = np.exp(-1j * a0 * times)
        out = np.empty_like(stack)
        out[:, 0, 0] = c - 1j * s * az
        out[:, 1, 1] = c + 1j * s * az
        out[:, 0, 1] = -1j * s * (ax - 1j * ay)
        out[:, 1, 0] = -1j * s * (ax + 1j * ay)
        return out * phase[:, None, None]
    values, vectors = np.linalg.eigh(stack)
    phases = np.exp(-1j * values * times[:, None])
    return np.einsum("kij,kj,klj->kil", vectors, phases, vectors.conj())

def expm_herm(hamiltonian: Union[HermitianOp, np.ndarray], t: float) -> Unitary:
    """exp(-iHt) for a Hermitian H and finite t."""
    if not np.isfinite(t):
        raise AdiabaticError("Propagation time must be finite", code="INVALID_TIME", details={"t": t})
    op = hamiltonian if isinstance(hamiltonian, HermitianOp) else HermitianOp(hamiltonian)
    return Unitary(expm_herm_batch(op.entries[None], t)[0])

def ordered_product(steps: np.ndarray) -> np.ndarray:
    """
    Time-ordered product steps[k-1] ... steps[1] steps[0].

    Pairwise reduction keeps the number of numpy calls logarithmic in k.
    """
    mats = np.asarray(steps, dtype=complex)
    if mats.shape[0] == 0:
        raise DimensionMismatchError("Empty step list has no dimension")
    while mats.shape[0] > 1:
        if mats.shape[0] % 2:
            eye = np.eye(mats.shape[-1], dtype=complex)[None]
            mats = np.concatenate([mats, eye])
        mats = mats[1::2] @ mats[0::2]
    return mats[0]

def bloch_projections(psi: PureState) -> Tuple[float, float, float]:
    """Populations (p_x, p_y, p_z) along |x>, |y>, |z>."""
    if psi.d != 2:
        raise DimensionMismatchError("Bloch projections need a qubit state", details={"d": psi.d})
    a, b = psi.amplitudes
    p_z = abs(a) ** 2
    p_x = 0.5 * abs(a + b) ** 2
    p_y = 0.5 * abs(a - 1j * b) ** 2
    return float(p_x), float(p_y), float(p_z)
