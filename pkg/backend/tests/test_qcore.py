import math

import numpy as np
import pytest
from scipy.linalg import expm

from app.core.exceptions import AdiabaticError, DimensionMismatchError, NonHermitianError, NormalizationError
from app.services.qcore import (
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    HermitianOp,
    PureState,
    Unitary,
    basis_state,
    bloch_projections,
    expm_herm,
    expm_herm_batch,
    fidelity,
    mhz_2pi,
    ordered_product,
    sigma_theta,
    spectral_norm,
)

def _random_hermitian(rng, d, scale=1.0):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * 0.5 * (a + a.conj().T)

def test_basis_states_are_orthonormal_pairs():
    for label in ("x", "y", "z"):
        assert fidelity(basis_state(label), basis_state(label)) == pytest.approx(1.0)
        assert fidelity(basis_state(label), basis_state("-" + label)) == pytest.approx(0.0, abs=1e-15)

def test_unknown_basis_label():
    with pytest.raises(AdiabaticError) as exc:
        basis_state("w")
    assert exc.value.code == "UNKNOWN_STATE"

def test_pure_state_rejects_unnormalized_vector():
    with pytest.raises(NormalizationError):
        PureState(np.array([1.0, 1.0]))

def test_from_amplitudes_normalizes():
    psi = PureState.from_amplitudes([3.0, 4.0j])
    assert np.linalg.norm(psi.amplitudes) == pytest.approx(1.0)
    with pytest.raises(NormalizationError):
        PureState.from_amplitudes([0.0, 0.0])

def test_pure_state_needs_a_vector():
    with pytest.raises(DimensionMismatchError):
        PureState(np.array([1.0]))

def test_hermitian_op_rejects_asymmetric_matrix():
    with pytest.raises(NonHermitianError):
        HermitianOp(np.array([[0.0, 1.0], [0.0, 0.0]]))

def test_unitary_rejects_non_unitary_matrix():
    with pytest.raises(NormalizationError):
        Unitary(2.0 * np.eye(2))

def test_pi_rotation_about_x():
    U = expm_herm(0.5 * math.pi * SIGMA_X, 1.0)
    assert U.distance(Unitary(-1j * SIGMA_X)) < 1e-14

@pytest.mark.parametrize("d", [2, 3, 4])
def test_batched_exponential_matches_scipy(rng, d):
    hams = np.stack([_random_hermitian(rng, d, scale=3.0) for _ in range(5)])
    times = rng.uniform(0.1, 2.0, size=5)
    ours = expm_herm_batch(hams, times)
    for k in range(5):
        assert spectral_norm(ours[k] - expm(-1j * hams[k] * times[k])) < 1e-12

def test_zero_hamiltonian_gives_identity():
    out = expm_herm_batch(np.zeros((1, 2, 2)), 1e-6)
    assert spectral_norm(out[0] - np.eye(2)) == 0.0

def test_expm_rejects_infinite_time():
    with pytest.raises(AdiabaticError) as exc:
        expm_herm(SIGMA_Z, float("inf"))
    assert exc.value.code == "INVALID_TIME"

@pytest.mark.parametrize("count", [1, 2, 5, 8])
def test_ordered_product_puts_later_steps_on_the_left(rng, count):
    steps = np.stack([expm(-1j * _random_hermitian(rng, 2)) for _ in range(count)])
    expected = np.eye(2, dtype=complex)
    for step in steps:
        expected = step @ expected
    assert spectral_norm(ordered_product(steps) - expected) < 1e-13

def test_bloch_projections_of_y():
    px, py, pz = bloch_projections(basis_state("y"))
    assert (px, py, pz) == pytest.approx((0.5, 1.0, 0.5))

def test_bloch_projections_need_a_qubit():
    with pytest.raises(DimensionMismatchError):
        bloch_projections(PureState(np.array([1.0, 0.0, 0.0])))

def test_sigma_theta_limits():
    assert spectral_norm(sigma_theta(0.0) - SIGMA_Z) < 1e-15
    assert spectral_norm(sigma_theta(math.pi / 2) - SIGMA_X) < 1e-15

def test_evolve_checks_dimensions(x_state):
    with pytest.raises(DimensionMismatchError):
        x_state.evolve(np.eye(3))
    assert fidelity(x_state.evolve(Unitary(SIGMA_Y)), basis_state("-x")) == pytest.approx(1.0)

def test_evolve_rejects_non_unitary_matrix(x_state):
    with pytest.raises(NormalizationError):
        x_state.evolve(2.0 * np.eye(2))
    with pytest.raises(NormalizationError):
        x_state.evolve(np.array([[1.0, 0.0], [0.0, 0.5]]))
    assert fidelity(x_state.evolve(SIGMA_Y), basis_state("-x")) == pytest.approx(1.0)

def test_unit_helpers():
    assert mhz_2pi(1.0) == pytest.approx(2 * math.pi * 1e6)
    assert spectral_norm(SIGMA_X + SIGMA_Z) == pytest.approx(math.sqrt(2))
