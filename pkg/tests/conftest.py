"""Shared fixtures and independent reference constructions.

The oracles here are built with plain Kronecker products and scipy's expm,
without touching the package's own builders.
"""

import functools

import numpy as np
import pytest

PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]]),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def kron_pauli(L, axis, site):
    """sigma^axis on a 1-based site, site 1 leftmost in the Kronecker product."""
    out = np.eye(1, dtype=complex)
    for j in range(1, L + 1):
        out = np.kron(out, PAULI[axis] if j == site else np.eye(2))
    return out


@functools.lru_cache(maxsize=None)
def _paulis(L):
    return {a: [kron_pauli(L, a, j) for j in range(1, L + 1)] for a in "xyz"}


def kron_annni(L, lam, delta=-0.3, J=1.0, periodic=False):
    p = _paulis(L)
    H = np.zeros((2**L, 2**L), dtype=complex)
    for j in range(L):
        for dist, c in ((1, 1.0), (2, delta)):
            k = j + dist
            if k >= L:
                if not periodic:
                    continue
                k -= L
            H -= J * c * p["x"][j] @ p["x"][k]
        H -= J * lam * p["z"][j]
    return H


def kron_lmg(L, lam, gamma=0.5, J=1.0):
    """LMG on the full 2^L space: -(J/L) sum_{i<j} (x x + gamma y y) - lam sum z."""
    p = _paulis(L)
    H = np.zeros((2**L, 2**L), dtype=complex)
    for i in range(L):
        for j in range(i + 1, L):
            H -= (J / L) * (p["x"][i] @ p["x"][j] + gamma * p["y"][i] @ p["y"][j])
        H -= lam * p["z"][i]
    return H


@pytest.fixture
def cache_dir(tmp_path):
    return tmp_path / "cache"


# acceptance verdicts, printed once at the end of the run
ACCEPTANCE_LINES = []


def record_acceptance(label, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
