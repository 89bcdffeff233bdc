"""Spectral decomposition, ground/Gibbs states and time evolution."""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.linalg

from .models import HamiltonianMatrix, ModelSpec, spin_flip_parity

DEGENERACY_TOL = 1e-10


@dataclasses.dataclass(frozen=True)
class SpectralData:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    spec: ModelSpec | None = None
    # +1/-1 spin-flip parity of each eigenvector, when it is a good label
    parity: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    def reconstruct(self) -> np.ndarray:
        U = self.eigenvectors
        return (U * self.eigenvalues) @ U.conj().T

    def to_eigenbasis(self, op: np.ndarray) -> np.ndarray:
        U = self.eigenvectors
        return U.conj().T @ op @ U


def _fix_phases(vecs):
    """Make the largest-magnitude entry of every column real positive."""
    rows = np.argmax(np.abs(vecs), axis=0)
    pivots = vecs[rows, np.arange(vecs.shape[1])]
    return vecs * (np.abs(pivots) / pivots)


def _resolve_symmetry(m, evals, evecs, sym, cluster_tol):
    """Rotate within near-degenerate clusters so every eigenvector is also an
    eigenvector of the diagonal involution ``sym``.

    A dense solver returns arbitrary mixtures of levels closer than roughly
    eps * |H| / gap, which would hide the selection rule of odd operators.
    """
    evecs = evecs.copy()
    breaks = np.flatnonzero(np.diff(evals) > cluster_tol) + 1
    for idx in np.split(np.arange(len(evals)), breaks):
        if idx.size < 2:
            continue
        U = evecs[:, idx]
        _, R = np.linalg.eigh(U.conj().T @ (sym[:, None] * U))
        U = U @ R
        # rediagonalize H inside each parity class of the cluster
        labels = np.sign(np.einsum("in,i,in->n", U.conj(), sym, U).real)
        for lab in (-1.0, 1.0):
            sel = labels == lab
            if sel.any():
                Us = U[:, sel]
                e, Q = np.linalg.eigh(Us.conj().T @ m @ Us)
                U[:, sel] = Us @ Q
                evals[idx[sel]] = e
        order = np.argsort(evals[idx], kind="stable")
        evals[idx] = evals[idx][order]
        evecs[:, idx] = U[:, order]
    return evals, evecs


def parity_labels(evecs, sym, tol=1e-8):
    """Parity of each column of ``evecs`` under diagonal ``sym``, or None if
    some column is not a parity eigenvector to within ``tol``."""
    w = np.abs(evecs) ** 2
    labels = np.where(sym @ w >= 0, 1.0, -1.0)
    leak = np.max(np.abs((sym[:, None] != labels[None, :]) * w).sum(axis=0)) if evecs.size else 0.0
    return labels if leak <= tol else None


def eigendecompose(H: HamiltonianMatrix | np.ndarray, tol: float = 1e-12,
                   cluster_tol: float = 1e-6) -> SpectralData:
    """Dense Hermitian eigendecomposition with a deterministic phase convention.

    For model Hamiltonians the eigenvectors of near-degenerate levels
    (spacing below ``cluster_tol``) are chosen with definite spin-flip parity,
    and the labels are stored on the result.
    """
    if isinstance(H, HamiltonianMatrix):
        m, spec = H.matrix, H.spec
    else:
        m, spec = np.asarray(H), None
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    scale = max(1.0, np.max(np.abs(m))) if m.size else 1.0
    err = np.max(np.abs(m - m.conj().T)) if m.size else 0.0
    if err > tol * scale:
        raise ValueError(f"matrix is not Hermitian (max deviation {err:.3g})")
    evals, evecs = scipy.linalg.eigh(m)
    parity = None
    if spec is not None and m.size:
        sym = spin_flip_parity(spec)
        evals, evecs = _resolve_symmetry(m, evals, evecs, sym, cluster_tol * scale)
        parity = parity_labels(evecs, sym)
        if parity is not None:
            # drop the residual wrong-parity amplitudes (solver round-off)
            evecs = np.where(sym[:, None] == parity[None, :], evecs, 0.0)
            evecs /= np.linalg.norm(evecs, axis=0)
    return SpectralData(evals, _fix_phases(evecs), spec, parity)


@dataclasses.dataclass(frozen=True)
class QuantumState:
    """Either a pure state vector or a thermal state on top of ``spectral``.

    ``temperature == 0`` is the equal mixture of all levels within
    ``degeneracy_tol`` of the ground energy.
    """

    vector: np.ndarray | None = None
    temperature: float | None = None
    spectral: SpectralData | None = None
    degeneracy_tol: float = DEGENERACY_TOL

    def __post_init__(self):
        if (self.vector is None) == (self.temperature is None):
            raise ValueError("a state is either pure (vector) or thermal (temperature)")
        if self.vector is not None:
            norm = np.linalg.norm(self.vector)
            if abs(norm - 1.0) > 1e-12:
                raise ValueError(f"pure state is not normalized (norm {norm!r})")
        else:
            if self.temperature < 0:
                raise ValueError(f"temperature must be >= 0, got {self.temperature}")
            if self.spectral is None:
                raise ValueError("a thermal state needs spectral data")

    @property
    def is_pure(self) -> bool:
        return self.vector is not None

    def weights(self) -> np.ndarray:
        """Boltzmann weights over the eigenbasis of ``spectral``."""
        return boltzmann_weights(self.spectral.eigenvalues, self.temperature, self.degeneracy_tol)


def pure_state(vector) -> QuantumState:
    return QuantumState(vector=np.asarray(vector))


def boltzmann_weights(energies, T, degeneracy_tol=DEGENERACY_TOL):
    energies = np.asarray(energies, dtype=float)
    shifted = energies - energies.min()
    if T == 0:
        w = (shifted <= degeneracy_tol).astype(float)
    else:
        w = np.exp(-shifted / T)
    return w / w.sum()


def gibbs_state(sd: SpectralData, T: float, degeneracy_tol: float = DEGENERACY_TOL) -> QuantumState:
    return QuantumState(temperature=float(T), spectral=sd, degeneracy_tol=degeneracy_tol)


def ground_state(sd: SpectralData) -> QuantumState:
    """Lowest eigenvector as a pure state (ignores degeneracy)."""
    return pure_state(sd.eigenvectors[:, 0])


def thermal_expectation(state: QuantumState, op: np.ndarray) -> complex:
    sd = state.spectral
    diag = np.einsum("in,ij,jn->n", sd.eigenvectors.conj(), op, sd.eigenvectors)
    return complex(np.dot(state.weights(), diag))


def heisenberg_operator(sd: SpectralData, O: np.ndarray, t: float) -> np.ndarray:
    """O(t) = exp(iHt) O exp(-iHt), evaluated in the eigenbasis."""
    O = np.asarray(O)
    if O.shape != (sd.dim, sd.dim):
        raise ValueError(f"operator shape {O.shape} does not match dimension {sd.dim}")
    if t == 0:
        return O.copy()
    U = sd.eigenvectors
    phase = np.exp(1j * sd.eigenvalues * t)
    Ot = (phase[:, None] * sd.to_eigenbasis(O)) * phase.conj()[None, :]
    return U @ Ot @ U.conj().T


def evolve_state(sd: SpectralData, v: np.ndarray, t: float) -> np.ndarray:
    """exp(-iHt) v through the eigenbasis."""
    U = sd.eigenvectors
    return U @ (np.exp(-1j * sd.eigenvalues * t) * (U.conj().T @ v))


class KrylovError(RuntimeError):
    pass


def _lanczos(matvec, v, m):
    n = v.shape[0]
    Q = np.zeros((n, m), dtype=complex)
    alpha = np.zeros(m)
    beta = np.zeros(m)
    Q[:, 0] = v
    k = m
    for j in range(m):
        w = matvec(Q[:, j])
        alpha[j] = np.vdot(Q[:, j], w).real
        # full reorthogonalization; m is small
        w = w - Q[:, : j + 1] @ (Q[:, : j + 1].conj().T @ w)
        w = w - Q[:, : j + 1] @ (Q[:, : j + 1].conj().T @ w)
        beta[j] = np.linalg.norm(w)
        if j + 1 == m:
            break
        if beta[j] < 1e-13:
            k = j + 1
            break
        Q[:, j + 1] = w / beta[j]
    return Q[:, :k], alpha[:k], beta[:k]


def krylov_propagate(H, v, dt, m=30, tol=1e-10, max_steps=10_000):
    """exp(-iH dt) v by Lanczos with adaptive sub-stepping.

    Each sub-step of length tau is accepted when the residual estimate
    beta_m |[exp(-i T_m tau)]_{m-1,0}| drops below ``tol``; otherwise
    tau is halved.
    """
    if m < 2:
        raise ValueError("Krylov dimension must be at least 2")
    mat = H.matrix if isinstance(H, HamiltonianMatrix) else np.asarray(H)
    v = np.asarray(v, dtype=complex)
    if abs(np.linalg.norm(v) - 1) > 1e-9:
        raise ValueError("krylov_propagate expects a normalized vector")
    if dt == 0:
        return v.copy()
    matvec = lambda x: mat @ x  # noqa: E731
    m = min(m, v.shape[0])
    remaining = float(dt)
    tau = remaining
    steps = 0
    while abs(remaining) > 0:
        Q, alpha, beta = _lanczos(matvec, v, m)
        k = len(alpha)
        T = np.diag(alpha) + np.diag(beta[: k - 1], 1) + np.diag(beta[: k - 1], -1)
        evals, evecs = np.linalg.eigh(T)
        while True:
            steps += 1
            if steps > max_steps:
                raise KrylovError(f"no convergence within {max_steps} sub-steps")
            tau = min(abs(tau), abs(remaining)) * np.sign(remaining)
            coeffs = evecs @ (np.exp(-1j * evals * tau) * evecs[0].conj())
            # invariant subspace: exact up to round-off
            err = 0.0 if k < m else beta[k - 1] * abs(coeffs[k - 1])
            if err < tol:
                break
            tau /= 2
        v = Q @ coeffs
        v /= np.linalg.norm(v)
        remaining -= tau
        if abs(remaining) < 1e-15 * abs(dt):
            remaining = 0.0
        tau *= 2
    return v
