"""Builders for the four benchmark problems.

All builders are pure: repeated calls construct identical problems.
Time grids start at 0 by default; grid density and horizon can be
overridden without touching the physics.
"""

from __future__ import annotations

from math import pi, sqrt

from .linalg import dagger, tensor
from .ode import OdeConfig
from .operators import (OperatorSet, coherent, destroy, eye, fock,
                        sigma_minus, sigma_x, sigma_z)
from .trajectory import QuantumProblem, RunOptions

__all__ = ["build_unitary", "build_trilinear", "build_jcm", "build_photon",
           "PROBLEM_BUILDERS", "PROBLEM_DEFAULTS"]

# per-problem default (n_steps, t_to, n_trajectories)
PROBLEM_DEFAULTS = {
    "unitary": (200, 10.0, 1000),
    "trilinear": (200, 4.0, 1000),
    "jcm": (600, 35.0, 1),
    "photon": (200, 1.0, 1000),
}


def build_unitary(*, n_steps=200, t_from=0.0, t_to=10.0, ode=None, options=None,
                  with_collapse=True) -> QuantumProblem:
    """Driven qubit: H = (2 pi / 10) sigma_x, weak sigma_x collapse,
    sigma_z expectation, |psi0> = |0>."""
    h = (2.0 * pi / 10.0) * sigma_x()
    collapse = (0.05 * sigma_x(),) if with_collapse else ()
    ops = OperatorSet(h, collapse, (sigma_z(),))
    return QuantumProblem.from_operators(ops, fock(2, 0), t_from, t_to, n_steps,
                                         ode, options)


def build_trilinear(*, n_steps=200, t_from=0.0, t_to=4.0, ode=None,
                    options=None) -> QuantumProblem:
    """Optical parametric amplifier: three 8-level modes (dim 512),
    H = i K (a b^+ c^+ - a^+ b c), damping on every mode and photon-number
    expectations; the pump starts in a coherent state with |alpha|^2 = 3."""
    n0 = n1 = n2 = 8
    coupling = 1.0
    gammas = (0.1, 0.1, 0.4)
    d0, d1, d2 = destroy(n0), destroy(n1), destroy(n2)
    a0 = tensor(d0, eye(n1), eye(n2))
    a1 = tensor(eye(n0), d1, eye(n2))
    a2 = tensor(eye(n0), eye(n1), d2)
    h = 1j * coupling * (a0 @ dagger(a1) @ dagger(a2) - dagger(a0) @ a1 @ a2)
    collapse = tuple(sqrt(2.0 * g) * a for g, a in zip(gammas, (a0, a1, a2)))
    expect = tuple(dagger(a) @ a for a in (a0, a1, a2))
    psi0 = tensor(coherent(n0, sqrt(3.0)), fock(n1, 0), fock(n2, 0))
    ops = OperatorSet(h, collapse, expect)
    return QuantumProblem.from_operators(ops, psi0, t_from, t_to, n_steps,
                                         ode, options)


def build_jcm(*, n_steps=600, t_from=0.0, t_to=35.0, ode=None,
              options=None) -> QuantumProblem:
    """Jaynes-Cummings model without dissipation: 40 cavity levels times
    one qubit (dim 80), detuning -0.1, coupling 1, cavity seeded with a
    coherent state alpha = 4 and the qubit excited; observable is the spin
    excitation b^+ b.  Meant to run as a single trajectory."""
    n = 40
    g, delta, alpha = 1.0, -0.1, 4.0
    a = tensor(destroy(n), eye(2))
    b = tensor(eye(n), sigma_minus())
    h = delta * (dagger(a) @ a) + g * (dagger(a) @ b + a @ dagger(b))
    psi0 = tensor(coherent(n, alpha), fock(2, 1))
    ops = OperatorSet(h, (), (dagger(b) @ b,))
    return QuantumProblem.from_operators(ops, psi0, t_from, t_to, n_steps,
                                         ode, options)


def build_photon(*, n_steps=200, t_from=0.0, t_to=1.0, ode=None,
                 options=None) -> QuantumProblem:
    """Single-photon decay in a lossy cavity coupled to a thermal bath:
    five Fock levels, H = a^+ a, kappa = 1/0.129, thermal occupation
    0.063, photon-number expectation, |psi0> = |1>."""
    n = 5
    kappa = 1.0 / 0.129
    n_th = 0.063
    a = destroy(n)
    h = dagger(a) @ a
    collapse = (sqrt(kappa * (1.0 + n_th)) * a, sqrt(kappa * n_th) * dagger(a))
    ops = OperatorSet(h, collapse, (dagger(a) @ a,))
    return QuantumProblem.from_operators(ops, fock(n, 1), t_from, t_to, n_steps,
                                         ode, options)


PROBLEM_BUILDERS = {
    "unitary": build_unitary,
    "trilinear": build_trilinear,
    "jcm": build_jcm,
    "photon": build_photon,
}
