"""OTOC time series F(t) = <W(t)^dag V^dag W(t) V> and derived series."""

from __future__ import annotations

import csv
import dataclasses
import json
import pathlib

import numpy as np

from .engine import QuantumState, SpectralData, eigendecompose, gibbs_state
from .models import ModelKind, ModelSpec, OperatorSpec, build_hamiltonian, build_operator, separation

WEIGHT_CUTOFF = 1e-14
SECTOR_NOTE = "LMG thermal state restricted to the maximal-spin sector S = L/2"


@dataclasses.dataclass
class OTOCSeries:
    times: np.ndarray
    values: np.ndarray
    meta: dict

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        if self.times.shape != self.values.shape or self.times.ndim != 1:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("OTOC values must be finite")

    @property
    def real(self) -> np.ndarray:
        return self.values.real

    def __len__(self):
        return len(self.times)


@dataclasses.dataclass
class RealSeries:
    times: np.ndarray
    values: np.ndarray
    meta: dict = dataclasses.field(default_factory=dict)


def make_meta(spec, W, V, T, lambda_c=None, **extra):
    meta = {
        "spec": spec,
        "T": T,
        "L": spec.L,
        "lam": spec.lam,
        "lambda_c": lambda_c,
        "h": spec.lam - lambda_c if lambda_c is not None else spec.lam,
        "W": W,
        "V": V,
        "r": separation(W, V),
        "normalized": False,
        "notes": [],
    }
    if spec.kind is ModelKind.LMG and T is not None and T > 0:
        meta["notes"].append(SECTOR_NOTE)
    meta.update(extra)
    return meta


def default_time_grid(sd: SpectralData, t_max: float, max_phase_step: float = 0.5):
    """Uniform grid on [0, t_max] with E_max * dt <= ``max_phase_step``."""
    e_max = np.max(np.abs(sd.eigenvalues))
    n = max(2, int(np.ceil(t_max * e_max / max_phase_step)) + 1)
    return np.linspace(0.0, t_max, n)


def _mm(a, b):
    # complex @ real as two real products; numpy would upcast to zgemm
    # .real/.imag are strided views and would miss BLAS
    if np.iscomplexobj(a) and not np.iscomplexobj(b):
        return (np.ascontiguousarray(a.real) @ b) + 1j * (np.ascontiguousarray(a.imag) @ b)
    if np.iscomplexobj(b) and not np.iscomplexobj(a):
        return (a @ np.ascontiguousarray(b.real)) + 1j * (a @ np.ascontiguousarray(b.imag))
    return a @ b


def _realify(m):
    if np.iscomplexobj(m) and not np.any(m.imag):
        return m.real.copy()
    return m


def _pure_otoc(energies, Wt, Vt, c, times, chunk=64):
    """Pure state with eigenbasis amplitudes ``c``; all times batched."""
    out = np.empty(len(times), dtype=complex)
    vc = Vt @ c
    for start in range(0, len(times), chunk):
        ts = times[start : start + chunk]
        ph = np.exp(-1j * np.outer(energies, ts))  # exp(-iE_n t), shape (D, nt)
        # W(t) x = conj(ph) * (W (ph * x))
        a = ph.conj() * _mm(Wt, ph * vc[:, None])
        wc = ph.conj() * _mm(Wt, ph * c[:, None])
        b = _mm(Vt, wc)
        out[start : start + chunk] = np.einsum("ij,ij->j", b.conj(), a)
    return out


def _mixed_otoc(energies, Wt, Vt, weights, times, cutoff=WEIGHT_CUTOFF, parity=None):
    """Tr(rho W(t)^dag V^dag W(t) V) for rho diagonal in the eigenbasis.

    With B = W(t) V[:, K] and C = V W(t)[:, K] on the retained levels K,
    F = sum_n p_n sum_m conj(C[m, n]) B[m, n].
    """
    keep = np.flatnonzero(weights >= cutoff * weights.max())
    grading = _odd_grading(Wt, Vt, parity)
    if grading is not None:
        return _mixed_otoc_graded(energies, Wt, Vt, weights, times, keep, grading)
    p = weights[keep]
    Vk = Vt[:, keep]
    Wk = Wt[:, keep]
    out = np.empty(len(times), dtype=complex)
    for i, t in enumerate(times):
        ph = np.exp(-1j * energies * t)
        # W(t)_{mn} = conj(ph_m) W_mn ph_n
        B = ph.conj()[:, None] * _mm(Wt, ph[:, None] * Vk)
        Wt_k = ph.conj()[:, None] * Wk * ph[keep][None, :]
        C = _mm(Vt, Wt_k)
        out[i] = np.einsum("mn,mn,n->", C.conj(), B, p)
    return out


def _odd_grading(Wt, Vt, parity, tol=1e-8):
    """Boolean class mask when both operators flip the parity labels, else None.

    Cross-class leakage below ``tol`` times the largest entry is treated as
    eigensolver noise.
    """
    if parity is None or Wt.shape[0] < 64:
        return None
    even = parity > 0
    same = even[:, None] == even[None, :]
    for op in (Wt, Vt):
        a = np.abs(op)
        if np.max(a[same]) > tol * a.max():
            return None
    return even


def _mixed_otoc_graded(energies, Wt, Vt, weights, times, keep, grading):
    """Same trace as ``_mixed_otoc`` when W and V are odd under ``grading``:
    W(t) V and V W(t) are then block diagonal and only the two diagonal
    blocks are formed."""
    kept = np.zeros(len(weights), dtype=bool)
    kept[keep] = True
    blocks = []
    for g in (grading, ~grading):
        own, other = np.flatnonzero(g), np.flatnonzero(~g)
        k = np.flatnonzero(kept[own])
        blocks.append((own, other, k, weights[own][k],
                       np.ascontiguousarray(Wt[np.ix_(own, other)]),
                       np.ascontiguousarray(Vt[np.ix_(other, own)][:, k]),
                       np.ascontiguousarray(Vt[np.ix_(own, other)]),
                       np.ascontiguousarray(Wt[np.ix_(other, own)][:, k])))
    out = np.zeros(len(times), dtype=complex)
    for i, t in enumerate(times):
        ph = np.exp(-1j * energies * t)
        for own, other, k, p, W_oo, V_ok, V_oo, W_ok in blocks:
            if not k.size:
                continue
            ph_own, ph_other = ph[own], ph[other]
            B = ph_own.conj()[:, None] * _mm(W_oo, ph_other[:, None] * V_ok)
            C = _mm(V_oo, ph_other.conj()[:, None] * W_ok * ph_own[k][None, :])
            out[i] += np.einsum("mn,mn,n->", C.conj(), B, p)
    return out


def otoc_values(sd: SpectralData, W: np.ndarray, V: np.ndarray, state: QuantumState, times,
                cutoff: float = WEIGHT_CUTOFF) -> np.ndarray:
    """Raw OTOC values on ``times`` for operator matrices in the model basis."""
    times = np.asarray(times, dtype=float)
    if W.shape != (sd.dim, sd.dim) or V.shape != (sd.dim, sd.dim):
        raise ValueError("operator and Hamiltonian dimensions differ")
    Wt = _realify(sd.to_eigenbasis(W))
    Vt = _realify(sd.to_eigenbasis(V))
    if state.is_pure:
        if state.vector.shape != (sd.dim,):
            raise ValueError("state and Hamiltonian dimensions differ")
        c = sd.eigenvectors.conj().T @ state.vector
        return _pure_otoc(sd.eigenvalues, Wt, Vt, c, times)
    if state.spectral is not sd and state.spectral.dim != sd.dim:
        raise ValueError("thermal state was built on a different spectrum")
    return _mixed_otoc(sd.eigenvalues, Wt, Vt, state.weights(), times, cutoff, sd.parity)


def compute_otoc_series(spec: ModelSpec, W: OperatorSpec, V: OperatorSpec, state: QuantumState,
                        times, sd: SpectralData | None = None, lambda_c: float | None = None,
                        cutoff: float = WEIGHT_CUTOFF) -> OTOCSeries:
    """OTOC series for a model, operator pair and state.

    ``sd`` may be passed to reuse an existing decomposition; otherwise the
    thermal state's spectrum, or a fresh decomposition, is used.
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise ValueError("empty time grid")
    if sd is None:
        sd = state.spectral if not state.is_pure else eigendecompose(build_hamiltonian(spec))
    Wm = build_operator(W, spec)
    Vm = build_operator(V, spec)
    values = otoc_values(sd, Wm, Vm, state, times, cutoff)
    T = None if state.is_pure else state.temperature
    return OTOCSeries(times, values, make_meta(spec, W, V, T, lambda_c))


def thermal_otoc_series(spec, W, V, T, times, sd=None, lambda_c=None, cutoff=WEIGHT_CUTOFF):
    """Convenience wrapper: Gibbs state at temperature T (T = 0 allowed)."""
    if sd is None:
        sd = eigendecompose(build_hamiltonian(spec))
    return compute_otoc_series(spec, W, V, gibbs_state(sd, T), times, sd=sd,
                               lambda_c=lambda_c, cutoff=cutoff)


def normalized_series(s: OTOCSeries, tol: float = 1e-12) -> OTOCSeries:
    """F(t) / F(0)."""
    f0 = s.values[0]
    if abs(f0) <= tol:
        raise ValueError(f"F(0) = {f0!r} vanishes; cannot normalize")
    values = s.values / f0
    values[0] = 1.0
    meta = dict(s.meta, normalized=True, F0=complex(f0))
    return OTOCSeries(s.times.copy(), values, meta)


def squared_commutator_series(s: OTOCSeries) -> RealSeries:
    """C(t) = 2 [1 - Re F(t)]; only meaningful for unitary W and V."""
    for key in ("W", "V"):
        op = s.meta.get(key)
        if op is None or not op.is_unitary:
            raise ValueError(f"squared commutator needs unitary operators, {key} = {op}")
    return RealSeries(s.times.copy(), 2.0 * (1.0 - s.values.real), dict(s.meta))


def _jsonable(value):
    if isinstance(value, (ModelSpec, OperatorSpec)):
        return value.to_dict()
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def meta_to_json(meta: dict) -> dict:
    return {k: _jsonable(v) for k, v in meta.items()}


def meta_from_json(d: dict) -> dict:
    meta = dict(d)
    meta["spec"] = ModelSpec.from_dict(d["spec"])
    meta["W"] = OperatorSpec.from_dict(d["W"])
    meta["V"] = OperatorSpec.from_dict(d["V"])
    if isinstance(d.get("F0"), list):
        meta["F0"] = complex(*d["F0"])
    return meta


def write_series(s: OTOCSeries, csv_path) -> tuple[pathlib.Path, pathlib.Path]:
    """Write ``<name>.csv`` (t, re_F, im_F) and a ``<name>.meta.json`` sidecar."""
    csv_path = pathlib.Path(csv_path)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "re_F", "im_F"])
        for t, f in zip(s.times, s.values):
            writer.writerow([f"{t:.17g}", f"{f.real:.17g}", f"{f.imag:.17g}"])
    meta_path = csv_path.with_suffix(".meta.json")
    meta_path.write_text(json.dumps(meta_to_json(s.meta), indent=2, sort_keys=True) + "\n")
    return csv_path, meta_path


def read_series(csv_path) -> OTOCSeries:
    csv_path = pathlib.Path(csv_path)
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    meta = meta_from_json(json.loads(csv_path.with_suffix(".meta.json").read_text()))
    return OTOCSeries(data[:, 0], data[:, 1] + 1j * data[:, 2], meta)
