import numpy as np
import pytest
import scipy.linalg

from otoc_scaling.engine import (QuantumState, boltzmann_weights, eigendecompose, evolve_state,
                                 gibbs_state, ground_state, heisenberg_operator, krylov_propagate,
                                 parity_labels, pure_state, thermal_expectation)
from otoc_scaling.models import ModelSpec, build_hamiltonian, local_pauli, spin_flip_parity


def random_state(dim, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


SPECS = [ModelSpec.annni(6, 0.436), ModelSpec.annni(8, 1.3, boundary="Periodic"),
         ModelSpec.lmg(40, 1.0), ModelSpec.lmg(31, 0.5)]


@pytest.mark.parametrize("spec", SPECS, ids=str)
def test_decomposition_reconstructs(spec):
    H = build_hamiltonian(spec)
    sd = eigendecompose(H)
    assert np.all(np.diff(sd.eigenvalues) >= -1e-12)
    np.testing.assert_allclose(sd.reconstruct(), H.matrix, atol=1e-11)
    U = sd.eigenvectors
    np.testing.assert_allclose(U.conj().T @ U, np.eye(sd.dim), atol=1e-11)


@pytest.mark.parametrize("spec", SPECS, ids=str)
def test_eigenvectors_carry_parity(spec):
    sd = eigendecompose(build_hamiltonian(spec))
    assert sd.parity is not None
    P = spin_flip_parity(spec)
    np.testing.assert_allclose(P[:, None] * sd.eigenvectors, sd.eigenvectors * sd.parity, atol=1e-8)


def test_parity_resolved_for_close_levels():
    # near the critical field some level pairs are ~1e-7 apart and a plain
    # dense solver mixes their parity sectors at the 1e-9 level
    spec = ModelSpec.annni(10, 0.436)
    H = build_hamiltonian(spec)
    P = spin_flip_parity(spec)
    _, raw = scipy.linalg.eigh(H.matrix)
    raw_labels = np.sign(np.einsum("in,i,in->n", raw, P, raw))
    assert np.abs(raw * (P[:, None] != raw_labels)).max() > 1e-10
    sd = eigendecompose(H)
    assert np.abs(sd.eigenvectors * (P[:, None] != sd.parity)).max() == 0
    np.testing.assert_allclose(sd.reconstruct(), H.matrix, atol=1e-10)
    U = sd.eigenvectors
    np.testing.assert_allclose(U.T @ U, np.eye(sd.dim), atol=1e-10)


def test_parity_labels_reject_mixed_vectors():
    sym = np.array([1.0, -1.0])
    mixed = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
    assert parity_labels(mixed, sym) is None
    np.testing.assert_array_equal(parity_labels(np.eye(2), sym), [1, -1])


def test_non_hermitian_rejected():
    with pytest.raises(ValueError):
        eigendecompose(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        eigendecompose(np.zeros((2, 3)))


def test_phase_convention_is_deterministic():
    spec = ModelSpec.annni(5, 0.8)
    a = eigendecompose(build_hamiltonian(spec)).eigenvectors
    b = eigendecompose(build_hamiltonian(spec)).eigenvectors
    np.testing.assert_array_equal(a, b)
    piv = a[np.argmax(np.abs(a), axis=0), np.arange(a.shape[1])]
    assert np.all(piv > 0)


@pytest.mark.parametrize("spec", [ModelSpec.annni(7, 0.436), ModelSpec.lmg(50, 1.0)], ids=str)
def test_norm_and_energy_conservation(spec):
    H = build_hamiltonian(spec)
    sd = eigendecompose(H)
    v = random_state(sd.dim, 1)
    e0 = np.vdot(v, H.matrix @ v).real
    for t in np.linspace(0, 20, 21):
        w = evolve_state(sd, v, t)
        assert abs(np.linalg.norm(w) - 1) < 1e-9
        assert abs(np.vdot(w, H.matrix @ w).real - e0) < 1e-9


@pytest.mark.parametrize("spec", [ModelSpec.annni(8, 0.436), ModelSpec.annni(10, 1.0),
                                  ModelSpec.lmg(200, 1.0), ModelSpec.lmg(60, 0.3)], ids=str)
def test_krylov_agrees_with_eigenbasis(spec):
    H = build_hamiltonian(spec)
    sd = eigendecompose(H)
    v = random_state(sd.dim, 2)
    for t in (0.1, 1.0, 5.0, -3.0):
        a = evolve_state(sd, v, t)
        b = krylov_propagate(H, v, t)
        assert abs(np.vdot(a, b)) >= 1 - 1e-8


def test_eigenbasis_propagation_matches_expm():
    H = build_hamiltonian(ModelSpec.annni(5, 0.7)).matrix
    sd = eigendecompose(H)
    v = random_state(32, 3)
    np.testing.assert_allclose(evolve_state(sd, v, 2.5), scipy.linalg.expm(-2.5j * H) @ v, atol=1e-11)


def test_krylov_rejects_bad_input():
    H = build_hamiltonian(ModelSpec.annni(3, 1.0))
    with pytest.raises(ValueError):
        krylov_propagate(H, np.ones(8), 1.0)
    with pytest.raises(ValueError):
        krylov_propagate(H, np.eye(8)[0], 1.0, m=1)


def test_heisenberg_operator():
    spec = ModelSpec.annni(4, 0.9)
    H = build_hamiltonian(spec).matrix
    sd = eigendecompose(H)
    X = local_pauli(4, "x", 2)
    np.testing.assert_array_equal(heisenberg_operator(sd, X, 0.0), X)
    t = 1.3
    U = scipy.linalg.expm(-1j * H * t)
    np.testing.assert_allclose(heisenberg_operator(sd, X, t), U.conj().T @ X @ U, atol=1e-12)
    with pytest.raises(ValueError):
        heisenberg_operator(sd, np.eye(3), 1.0)


@pytest.mark.parametrize("T", [0.0, 1e-3, 0.1, 1.0, 50.0])
def test_boltzmann_weights_normalized(T):
    E = np.linspace(-3, 4, 40)
    w = boltzmann_weights(E, T)
    assert abs(w.sum() - 1) < 1e-12
    assert np.all(w >= 0) and np.all(np.diff(w) <= 0)


def test_zero_temperature_is_equal_mixture_of_ground_space():
    E = np.array([-1.0, -1.0 + 5e-11, -0.5, 0.0])
    np.testing.assert_allclose(boltzmann_weights(E, 0.0), [0.5, 0.5, 0, 0])
    np.testing.assert_allclose(boltzmann_weights(E, 0.0, degeneracy_tol=1e-12), [1, 0, 0, 0])


def test_states():
    sd = eigendecompose(build_hamiltonian(ModelSpec.lmg(10, 1.0)))
    g = ground_state(sd)
    assert g.is_pure
    hot = gibbs_state(sd, 0.5)
    assert not hot.is_pure
    E = thermal_expectation(hot, sd.reconstruct())
    assert abs(E - np.dot(hot.weights(), sd.eigenvalues)) < 1e-12
    with pytest.raises(ValueError):
        pure_state(np.ones(3))
    with pytest.raises(ValueError):
        gibbs_state(sd, -1.0)
    with pytest.raises(ValueError):
        QuantumState()
    with pytest.raises(ValueError):
        QuantumState(temperature=1.0)
