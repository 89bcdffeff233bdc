"""Hamiltonians and observables for the ANNNI chain and the LMG model.

The ANNNI chain lives in the full 2^L tensor-product basis of sigma^z
eigenstates, with site 1 as the most significant bit (basis index
``sum_j s_j 2^(L-j)``, ``s_j = 1`` meaning spin down). The LMG model is
permutation symmetric and is represented in the maximal-spin sector
S = L/2, basis ordered m = S, S-1, ..., -S.
"""

from __future__ import annotations

import dataclasses
import enum
import json

import numpy as np

MAX_CHAIN_SITES = 14
MAX_COLLECTIVE_DIM = 4001


class BudgetError(ValueError):
    """A requested matrix exceeds the dense-storage budget."""


class ModelKind(str, enum.Enum):
    ANNNI = "ANNNI"
    LMG = "LMG"


class Boundary(str, enum.Enum):
    OPEN = "Open"
    PERIODIC = "Periodic"


class Basis(str, enum.Enum):
    FULL = "FullSpinHalfChain"
    COLLECTIVE = "CollectiveSpin"


@dataclasses.dataclass(frozen=True)
class ModelSpec:
    """One instance of a spin model.

    ``delta`` and ``boundary`` only mean something for ANNNI and ``gamma``
    only for LMG; the irrelevant ones are normalized to ``None`` so that two
    specs describing the same Hamiltonian compare (and hash) equal.
    """

    kind: ModelKind
    L: int
    lam: float
    J: float = 1.0
    delta: float | None = None
    gamma: float | None = None
    boundary: Boundary | None = None

    def __post_init__(self):
        kind = ModelKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if int(self.L) != self.L or self.L < 1:
            raise ValueError(f"L must be a positive integer, got {self.L!r}")
        object.__setattr__(self, "L", int(self.L))
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "J", float(self.J))
        if kind is ModelKind.ANNNI:
            delta = -0.3 if self.delta is None else float(self.delta)
            boundary = Boundary(self.boundary or Boundary.OPEN)
            if boundary is Boundary.PERIODIC and self.L < 3:
                raise ValueError("periodic ANNNI chain needs L >= 3")
            object.__setattr__(self, "delta", delta)
            object.__setattr__(self, "boundary", boundary)
            object.__setattr__(self, "gamma", None)
        else:
            gamma = 0.5 if self.gamma is None else float(self.gamma)
            object.__setattr__(self, "gamma", gamma)
            object.__setattr__(self, "delta", None)
            object.__setattr__(self, "boundary", None)

    @classmethod
    def annni(cls, L, lam, delta=-0.3, J=1.0, boundary=Boundary.OPEN):
        return cls(ModelKind.ANNNI, L, lam, J=J, delta=delta, boundary=boundary)

    @classmethod
    def lmg(cls, L, lam, gamma=0.5, J=1.0):
        return cls(ModelKind.LMG, L, lam, J=J, gamma=gamma)

    @property
    def basis(self) -> Basis:
        return Basis.FULL if self.kind is ModelKind.ANNNI else Basis.COLLECTIVE

    @property
    def dim(self) -> int:
        return 2**self.L if self.kind is ModelKind.ANNNI else self.L + 1

    def replace(self, **changes) -> ModelSpec:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "L": self.L, "lam": self.lam, "J": self.J}
        if self.kind is ModelKind.ANNNI:
            d["delta"] = self.delta
            d["boundary"] = self.boundary.value
        else:
            d["gamma"] = self.gamma
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelSpec:
        return cls(**d)

    def canonical(self) -> str:
        """Canonical serialization; floats keep full repr precision."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


@dataclasses.dataclass(frozen=True)
class OperatorSpec:
    """A local Pauli ``sigma^axis_site`` (site is 1-based) or the
    normalized collective operator ``(1/L) sum_j sigma^axis_j``."""

    form: str
    axis: str = "x"
    site: int | None = None

    def __post_init__(self):
        if self.form not in ("LocalPauli", "CollectiveNormalized"):
            raise ValueError(f"unknown operator form {self.form!r}")
        if self.axis not in ("x", "y", "z"):
            raise ValueError(f"unknown axis {self.axis!r}")
        if self.form == "LocalPauli":
            if self.site is None or int(self.site) != self.site:
                raise ValueError("LocalPauli needs an integer site")
            object.__setattr__(self, "site", int(self.site))
        elif self.site is not None:
            raise ValueError("CollectiveNormalized takes no site")

    @classmethod
    def pauli(cls, axis, site):
        return cls("LocalPauli", axis, site)

    @classmethod
    def collective(cls, axis="x"):
        return cls("CollectiveNormalized", axis)

    @property
    def is_unitary(self) -> bool:
        return self.form == "LocalPauli"

    def to_dict(self) -> dict:
        d = {"form": self.form, "axis": self.axis}
        if self.site is not None:
            d["site"] = self.site
        return d

    @classmethod
    def from_dict(cls, d: dict) -> OperatorSpec:
        return cls(**d)

    def __str__(self):
        if self.form == "LocalPauli":
            return f"sigma{self.axis}_{self.site}"
        return f"sigma{self.axis}_global"


def separation(W: OperatorSpec, V: OperatorSpec) -> int | None:
    """Distance r between two local operators, None for global ones."""
    if W.form == "LocalPauli" and V.form == "LocalPauli":
        return abs(V.site - W.site)
    return None


@dataclasses.dataclass(frozen=True)
class HamiltonianMatrix:
    basis: Basis
    matrix: np.ndarray
    spec: ModelSpec

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def _check_hermitian(m, tol=1e-12):
    err = np.max(np.abs(m - m.conj().T)) if m.size else 0.0
    if err > tol:
        raise ValueError(f"matrix is not Hermitian (max deviation {err:.3g})")


def _site_mask(L, j):
    # site 1 is the most significant bit
    return 1 << (L - j)


def _z_signs(L, j):
    """Diagonal of sigma^z_j: +1 for bit 0 (up), -1 for bit 1 (down)."""
    idx = np.arange(2**L)
    return 1.0 - 2.0 * ((idx >> (L - j)) & 1)


def _add_xx(H, L, i, j, coeff):
    """H += coeff * sigma^x_i sigma^x_j, in place."""
    idx = np.arange(2**L)
    H[idx ^ (_site_mask(L, i) | _site_mask(L, j)), idx] += coeff


def build_annni_hamiltonian(spec: ModelSpec, max_sites: int = MAX_CHAIN_SITES) -> HamiltonianMatrix:
    """H = -J sum_j [x_j x_{j+1} + delta x_j x_{j+2} + lam z_j]."""
    if spec.kind is not ModelKind.ANNNI:
        raise ValueError(f"expected an ANNNI spec, got {spec.kind.value}")
    L = spec.L
    if L > max_sites:
        raise BudgetError(f"ANNNI chain with L={L} exceeds the dense cap L <= {max_sites}")
    J, delta, lam = spec.J, spec.delta, spec.lam
    periodic = spec.boundary is Boundary.PERIODIC

    H = np.zeros((2**L, 2**L))
    for j in range(1, L + 1):
        for dist, coupling in ((1, 1.0), (2, delta)):
            k = j + dist
            if k > L:
                if not periodic:
                    continue
                k -= L
            if coupling != 0.0:
                _add_xx(H, L, j, k, -J * coupling)
    if lam != 0.0:
        H[np.diag_indices(2**L)] += -J * lam * sum(_z_signs(L, j) for j in range(1, L + 1))
    return HamiltonianMatrix(Basis.FULL, H, spec)


def collective_spin_matrices(S):
    """Spin-S matrices (S_x, S_y, S_z) in the basis m = S, S-1, ..., -S."""
    two_s = 2 * S
    if two_s < 0 or abs(two_s - round(two_s)) > 1e-12:
        raise ValueError(f"spin must be a non-negative half-integer, got {S!r}")
    S = round(two_s) / 2
    m = S - np.arange(round(two_s) + 1)
    # <m+1|S_+|m> = sqrt(S(S+1) - m(m+1)); S_+ sits on the first superdiagonal
    ladder = np.sqrt(S * (S + 1) - m[1:] * (m[1:] + 1))
    s_plus = np.diag(ladder, 1)
    s_x = (s_plus + s_plus.T) / 2
    s_y = (s_plus - s_plus.T) / 2j
    s_z = np.diag(m)
    return s_x, s_y, s_z


def build_lmg_hamiltonian(spec: ModelSpec, max_dim: int = MAX_COLLECTIVE_DIM) -> HamiltonianMatrix:
    """LMG Hamiltonian in the S = L/2 sector, constant shift included.

    Uses sum_{i<j} s^a_i s^a_j = 2 S_a^2 - L/2, so
    H = -(J/L) (2 S_x^2 + 2 gamma S_y^2 - (1 + gamma) L/2) - 2 lam S_z.
    """
    if spec.kind is not ModelKind.LMG:
        raise ValueError(f"expected an LMG spec, got {spec.kind.value}")
    L = spec.L
    if L + 1 > max_dim:
        raise BudgetError(f"LMG with L={L} exceeds the dense cap dim <= {max_dim}")
    s_x, s_y, s_z = collective_spin_matrices(L / 2)
    sx2 = s_x @ s_x
    # S_y^2 is real; drop the zero imaginary part
    sy2 = (s_y @ s_y).real
    H = -(spec.J / L) * (2 * sx2 + 2 * spec.gamma * sy2 - (1 + spec.gamma) * L / 2 * np.eye(L + 1))
    H -= 2 * spec.lam * s_z
    return HamiltonianMatrix(Basis.COLLECTIVE, H, spec)


def build_hamiltonian(spec: ModelSpec) -> HamiltonianMatrix:
    if spec.kind is ModelKind.ANNNI:
        return build_annni_hamiltonian(spec)
    return build_lmg_hamiltonian(spec)


def local_pauli(L, axis, site):
    """sigma^axis on ``site`` (1-based) in the full 2^L basis."""
    if not 1 <= site <= L:
        raise ValueError(f"site {site} out of range 1..{L}")
    dim = 2**L
    idx = np.arange(dim)
    if axis == "z":
        return np.diag(_z_signs(L, site))
    out = np.zeros((dim, dim), dtype=float if axis == "x" else complex)
    flipped = idx ^ _site_mask(L, site)
    if axis == "x":
        out[flipped, idx] = 1.0
    else:
        # sigma^y|up> = i|down>, sigma^y|down> = -i|up>
        out[flipped, idx] = 1j * _z_signs(L, site)
    return out


def collective_pauli_full(L, axis):
    """(1/L) sum_j sigma^axis_j in the full 2^L basis."""
    if L > MAX_CHAIN_SITES:
        raise BudgetError(f"full-basis operator with L={L} exceeds the dense cap")
    return sum(local_pauli(L, axis, j) for j in range(1, L + 1)) / L


def spin_flip_parity(spec: ModelSpec) -> np.ndarray:
    """Diagonal of prod_j sigma^z_j in the model basis (+1 or -1 per state).

    Both Hamiltonians commute with it. In the collective basis the entry for
    magnetization m is (-1)^(S - m).
    """
    if spec.basis is Basis.COLLECTIVE:
        return np.where(np.arange(spec.dim) % 2 == 0, 1.0, -1.0)
    down = np.zeros(spec.dim, dtype=int)
    for j in range(1, spec.L + 1):
        down += _z_signs(spec.L, j) < 0
    return np.where(down % 2 == 0, 1.0, -1.0)


def build_operator(op: OperatorSpec, spec: ModelSpec) -> np.ndarray:
    """Matrix of ``op`` in the basis of ``spec``'s Hamiltonian.

    Collective operators are also available on the full chain basis,
    where they are the explicit site sum.
    """
    if op.form == "LocalPauli":
        if spec.basis is not Basis.FULL:
            raise ValueError("local Pauli operators need the full chain basis")
        return local_pauli(spec.L, op.axis, op.site)
    if spec.basis is Basis.FULL:
        return collective_pauli_full(spec.L, op.axis)
    s_x, s_y, s_z = collective_spin_matrices(spec.L / 2)
    s = {"x": s_x, "y": s_y, "z": s_z}[op.axis]
    return 2 * s / spec.L
