"""Quantum-optics operator constructors and the effective-Hamiltonian /
Lindblad machinery.

Basis convention: index 0 is the ground state |0>, so sigma_minus() maps
index 1 to index 0 and excited qubits are prepared with fock(2, 1).
hbar = 1 throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import sqrt

import numpy as np

from . import linalg
from .linalg import CsrMatrix, as_matrix, as_vector, dagger, expm, to_csr

__all__ = [
    "OperatorSet", "EffectiveGenerator", "destroy", "eye", "sigma_minus",
    "sigma_x", "sigma_z", "fock", "coherent", "effective_generator",
    "lindblad_rhs",
]


def destroy(n: int) -> np.ndarray:
    """Bosonic annihilation operator on an n-level truncated Fock space:
    a|k> = sqrt(k)|k-1>."""
    if n < 1:
        raise ValueError("destroy() needs n >= 1")
    a = np.zeros((n, n), dtype=np.complex128)
    for k in range(1, n):
        a[k - 1, k] = sqrt(k)
    return a


def eye(n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("eye() needs n >= 1")
    return np.eye(n, dtype=np.complex128)


def sigma_minus() -> np.ndarray:
    """Qubit lowering operator |1> -> |0>."""
    return np.array([[0, 1], [0, 0]], dtype=np.complex128)


def sigma_x() -> np.ndarray:
    return np.array([[0, 1], [1, 0]], dtype=np.complex128)


def sigma_z() -> np.ndarray:
    return np.array([[1, 0], [0, -1]], dtype=np.complex128)


def fock(n: int, k: int) -> np.ndarray:
    """Number state |k> as a unit vector of dimension n."""
    if not 0 <= k < n:
        raise ValueError(f"fock index {k} out of range for dimension {n}")
    v = np.zeros(n, dtype=np.complex128)
    v[k] = 1.0
    return v


def coherent(n: int, alpha: complex) -> np.ndarray:
    """Coherent state D(alpha)|0> built from the truncated displacement
    operator expm(alpha a^+ - alpha* a).

    The operator is unitary on the truncated space, so the result has unit
    norm exactly; the entries approximate the Poisson amplitudes
    exp(-|alpha|^2/2) alpha^k / sqrt(k!) up to truncation distortion near
    the top of the ladder.
    """
    if n < 2:
        raise ValueError("coherent() needs n >= 2")
    a = destroy(n)
    d = expm(alpha * dagger(a) - np.conj(alpha) * a)
    return as_vector(d @ fock(n, 0))


@dataclass(frozen=True)
class OperatorSet:
    """System Hamiltonian plus collapse and expectation operator lists,
    all square and of one common dimension."""

    h_sys: np.ndarray
    collapse: tuple = ()
    expect: tuple = ()

    def __post_init__(self):
        h = as_matrix(self.h_sys)
        object.__setattr__(self, "h_sys", h)
        object.__setattr__(self, "collapse", tuple(as_matrix(c) for c in self.collapse))
        object.__setattr__(self, "expect", tuple(as_matrix(e) for e in self.expect))
        for m in (*self.collapse, *self.expect):
            if m.shape != h.shape:
                raise ValueError(f"operator dimension {m.shape} != Hamiltonian {h.shape}")

    @property
    def dim(self) -> int:
        return self.h_sys.shape[0]


@dataclass(frozen=True)
class EffectiveGenerator:
    """The matrix G = -i H_eff driving deterministic between-jump
    evolution, stored as CSR: psi' = G psi."""

    g: CsrMatrix

    @property
    def dim(self) -> int:
        return self.g.n


def effective_generator(ops: OperatorSet, drop_tol: float = 0.0) -> EffectiveGenerator:
    """G = -i (H - (i/2) sum_n C_n^+ C_n) = -i H - (1/2) sum_n C_n^+ C_n.

    With an empty collapse list this is plain -i H.  The anti-Hermitian
    defect satisfies G + G^+ = -sum C^+ C, which makes the state norm
    non-increasing between jumps.
    """
    g = -1j * ops.h_sys
    for c in ops.collapse:
        g -= 0.5 * (dagger(c) @ c)
    return EffectiveGenerator(to_csr(g, drop_tol))


def lindblad_rhs(ops: OperatorSet, rho: np.ndarray) -> np.ndarray:
    """Right side of the Lindblad master equation:
    -i[H, rho] + sum_n (C rho C^+ - (1/2){C^+ C, rho})."""
    rho = as_matrix(rho)
    if rho.shape != ops.h_sys.shape:
        raise ValueError(f"rho dimension {rho.shape} != Hamiltonian {ops.h_sys.shape}")
    h = ops.h_sys
    out = -1j * (h @ rho - rho @ h)
    for c in ops.collapse:
        cd = dagger(c)
        cdc = cd @ c
        out += c @ rho @ cd - 0.5 * (rho @ cdc + cdc @ rho)
    return out
