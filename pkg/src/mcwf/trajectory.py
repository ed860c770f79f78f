"""Single-trajectory quantum-jump engine, trajectory averaging, and the
dense master-equation oracle.

A trajectory integrates psi' = G psi under the effective generator while
the squared norm decays; when it crosses a uniform random threshold r the
jump time is located by bisection on the solver's dense output, a collapse
channel is selected by the cumulative-probability rule, the state is
projected and renormalised, r is redrawn and integration resumes from a
cold-restarted solver (the state changed discontinuously, so the multistep
history is invalid).  Expectation values are recorded at every output grid
point from the normalised interpolated state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import (csr_quadform, nordsieck_eval, nordsieck_eval_norm_sq,
                       vec_norm_sq)
from .linalg import CsrMatrix, as_vector, spmv, to_csr
from .ode import OdeConfig, OdeFailure, OdeSolver
from .operators import EffectiveGenerator, OperatorSet, effective_generator, lindblad_rhs

__all__ = [
    "RunOptions", "QuantumProblem", "TrajectoryResult",
    "run_single_trajectory", "locate_jump_time", "apply_collapse",
    "record_expectation", "average_trajectories", "solve_master_equation",
]

_JUMP_REL_TOL = 1e-9
_JUMP_MAX_ITER = 60


@dataclass(frozen=True)
class RunOptions:
    """Output-side options carried with a problem."""

    only_final_trj: bool = True
    output_target: str = "-"  # "-" means stdout
    verbose: bool = False
    log_jumps: bool = False


@dataclass(frozen=True)
class QuantumProblem:
    """Everything one trajectory needs: the effective generator (or a
    time-dependent right side), collapse and expectation operators in CSR,
    a unit initial state and the output grid."""

    generator: EffectiveGenerator | None
    collapse_csr: tuple
    expect_csr: tuple
    psi0: np.ndarray
    t_from: float
    t_to: float
    n_steps: int
    ode: OdeConfig = field(default_factory=OdeConfig)
    options: RunOptions = field(default_factory=RunOptions)
    rhs_fn: object = None  # optional callback (t, psi) -> dpsi for H(t)

    def __post_init__(self):
        psi0 = as_vector(self.psi0)
        object.__setattr__(self, "psi0", psi0)
        object.__setattr__(self, "collapse_csr", tuple(self.collapse_csr))
        object.__setattr__(self, "expect_csr", tuple(self.expect_csr))
        if not np.all(np.isfinite(psi0.view(np.float64))):
            raise ValueError("psi0 must be finite")
        if abs(float(np.vdot(psi0, psi0).real) - 1.0) > 1e-12:
            raise ValueError("psi0 must be normalised to 1 within 1e-12")
        if (self.generator is None) == (self.rhs_fn is None):
            raise ValueError("exactly one of generator / rhs_fn must be given")
        dim = psi0.shape[0]
        if self.generator is not None and self.generator.dim != dim:
            raise ValueError(f"generator dim {self.generator.dim} != state dim {dim}")
        for m in (*self.collapse_csr, *self.expect_csr):
            if not isinstance(m, CsrMatrix) or m.n != dim:
                raise ValueError("collapse/expect operators must be CsrMatrix of the state dim")
        if not self.t_to > self.t_from:
            raise ValueError("t_to must exceed t_from")
        if self.n_steps < 1:
            raise ValueError("n_steps must be positive")

    @property
    def dim(self) -> int:
        return self.psi0.shape[0]

    def time_grid(self) -> np.ndarray:
        return np.linspace(self.t_from, self.t_to, self.n_steps + 1)

    @classmethod
    def from_operators(cls, ops: OperatorSet, psi0, t_from, t_to, n_steps,
                       ode: OdeConfig | None = None,
                       options: RunOptions | None = None) -> "QuantumProblem":
        return cls(
            generator=effective_generator(ops),
            collapse_csr=tuple(to_csr(c) for c in ops.collapse),
            expect_csr=tuple(to_csr(e) for e in ops.expect),
            psi0=psi0, t_from=float(t_from), t_to=float(t_to), n_steps=int(n_steps),
            ode=ode if ode is not None else OdeConfig(),
            options=options if options is not None else RunOptions(),
        )


@dataclass(frozen=True)
class TrajectoryResult:
    """Expectation-value time series averaged over n_trajectories runs."""

    times: np.ndarray
    values: np.ndarray  # shape (n_expect, len(times))
    n_trajectories: int
    jumps: list | None = None

    def __post_init__(self):
        object.__setattr__(self, "times", np.ascontiguousarray(self.times, dtype=np.float64))
        object.__setattr__(self, "values", np.ascontiguousarray(self.values, dtype=np.float64))
        if self.values.ndim != 2 or self.values.shape[1] != self.times.shape[0]:
            raise ValueError("values must be (n_expect, n_times)")


def record_expectation(psi: np.ndarray, e: CsrMatrix) -> float:
    """<psi|E|psi> / <psi|psi>, real part.  For Hermitian E the imaginary
    residue is numerical noise and must stay below 1e-10 relative."""
    num, nrm = csr_quadform(e.row_ptr, e.col_ind, e.values, psi)
    if nrm == 0.0:
        raise ValueError("expectation of a zero vector")
    if __debug__ and abs(num.imag) > 1e-10 * max(abs(num.real), nrm):
        raise AssertionError(f"non-real expectation value {num!r} for Hermitian operator")
    return num.real / nrm


def apply_collapse(psi: np.ndarray, collapse, u: float):
    """Project psi with the collapse channel selected by the cumulative
    rule: smallest n with sum_{i<=n} P_i >= u, P_i proportional to
    <psi|C_i^+ C_i|psi>.  Returns (normalised state, channel index)."""
    psi = as_vector(psi)
    weights = []
    for c in collapse:
        cp = spmv(c, psi)
        weights.append(float(np.vdot(cp, cp).real))
    dp = sum(weights)
    if dp <= 0.0:
        raise ValueError("no collapse channel has support on the state")
    cum = 0.0
    idx = max(k for k, w in enumerate(weights) if w > 0.0)
    for k, w in enumerate(weights):
        cum += w / dp
        if w > 0.0 and cum >= u:
            idx = k
            break
    out = spmv(collapse[idx], psi)
    out /= np.sqrt(np.vdot(out, out).real)
    return out, idx


def locate_jump_time(solver: OdeSolver, r: float, t_lo: float, t_hi: float) -> float:
    """Bisection on the solver's dense output for the time where the
    squared norm crosses r.  Requires norm_sq(t_lo) >= r >= norm_sq(t_hi);
    the norm is non-increasing under the effective generator, so a
    violated bracket signals a solver bug."""
    z, nord, t_cur, h = solver.z, solver.q, solver.t, solver.h
    f_lo = nordsieck_eval_norm_sq(z, nord, (t_lo - t_cur) / h)
    f_hi = nordsieck_eval_norm_sq(z, nord, (t_hi - t_cur) / h)
    tol = _JUMP_REL_TOL * r
    if f_lo < r - tol or f_hi > r + tol:
        raise RuntimeError(
            f"jump bracket violated: norm_sq({t_lo:g}) = {f_lo:g}, "
            f"norm_sq({t_hi:g}) = {f_hi:g}, r = {r:g}")
    if f_lo <= r + tol:
        return t_lo
    a, b = t_lo, t_hi
    for _ in range(_JUMP_MAX_ITER):
        mid = 0.5 * (a + b)
        f_mid = nordsieck_eval_norm_sq(z, nord, (mid - t_cur) / h)
        if abs(f_mid - r) <= tol:
            return mid
        if f_mid > r:
            a = mid
        else:
            b = mid
    return 0.5 * (a + b)


def _make_solver(problem: QuantumProblem, t0: float, psi: np.ndarray, h_hint=None) -> OdeSolver:
    rhs = problem.generator.g if problem.generator is not None else problem.rhs_fn
    return OdeSolver(problem.ode, rhs, t0=t0, y0=psi, h0=h_hint)


def run_single_trajectory(problem: QuantumProblem, rng_state):
    """One stochastic trajectory.  Returns (TrajectoryResult with
    n_trajectories = 1, advanced rng state).

    The rng state only needs a ``next_u01() -> (u, state)`` method; draws
    happen in a fixed order (threshold r, then per jump: channel u and a
    fresh r), which is what makes results bitwise reproducible.
    """
    times = problem.time_grid()
    n_pts = times.shape[0]
    n_exp = len(problem.expect_csr)
    values = np.empty((n_exp, n_pts), dtype=np.float64)
    jumps = [] if problem.options.log_jumps else None

    psi_buf = np.empty(problem.dim, dtype=np.complex128)

    def record(gi, solver=None):
        if solver is None:
            psi = problem.psi0
        else:
            # dense output inside the solver's last step, cheap path
            nordsieck_eval(solver.z, solver.q, (times[gi] - solver.t) / solver.h, psi_buf)
            psi = psi_buf
        for k, e in enumerate(problem.expect_csr):
            values[k, gi] = record_expectation(psi, e)

    record(0)
    r, rng_state = rng_state.next_u01()
    solver = _make_solver(problem, problem.t_from, problem.psi0.copy())
    gi = 1
    steps_in_segment = 0

    try:
        while gi < n_pts:
            solver.step()
            steps_in_segment += 1
            if steps_in_segment > problem.ode.max_steps:
                raise OdeFailure(-1, f"max_steps = {problem.ode.max_steps} exhausted "
                                     f"in trajectory segment at t = {solver.t:g}")
            if vec_norm_sq(solver.y) < r and problem.collapse_csr:
                t_star = locate_jump_time(solver, r, solver.t_lo, solver.t)
                if t_star <= problem.t_to:
                    while gi < n_pts and times[gi] <= t_star:
                        record(gi, solver)
                        gi += 1
                    psi_star = solver.interpolate_at(t_star)
                    u, rng_state = rng_state.next_u01()
                    psi_new, idx = apply_collapse(psi_star, problem.collapse_csr, u)
                    if jumps is not None:
                        jumps.append((t_star, idx))
                    r, rng_state = rng_state.next_u01()
                    solver = _make_solver(problem, t_star, psi_new, h_hint=solver.h)
                    steps_in_segment = 0
                    continue
            while gi < n_pts and times[gi] <= solver.t:
                record(gi, solver)
                gi += 1
    except OdeFailure as exc:
        raise OdeFailure(exc.istate, f"{exc} (inside trajectory)") from exc

    return TrajectoryResult(times, values, 1, jumps), rng_state


def average_trajectories(results) -> TrajectoryResult:
    """Average weighted by each input's trajectory count.  All inputs must
    share the time grid and expectation layout exactly."""
    results = list(results)
    if not results:
        raise ValueError("nothing to average")
    first = results[0]
    total = 0
    acc = np.zeros_like(first.values)
    jumps: list | None = [] if all(r.jumps is not None for r in results) else None
    for r in results:
        if r.values.shape != first.values.shape or not np.array_equal(r.times, first.times):
            raise ValueError("trajectory results have mismatching grids")
        if r.n_trajectories:
            acc += r.n_trajectories * r.values
        total += r.n_trajectories
        if jumps is not None:
            jumps.extend(r.jumps)
    if total > 0:
        acc /= total
    return TrajectoryResult(first.times, acc, total, jumps)


def solve_master_equation(ops: OperatorSet, rho0: np.ndarray, times,
                          ode: OdeConfig | None = None) -> np.ndarray:
    """Dense Lindblad oracle: integrate the vectorised density matrix with
    the same ODE machinery and return tr(E_k rho(t)) for every expectation
    operator, shape (n_expect, len(times)).  Verification-scale only."""
    n = ops.dim
    if n > 128:
        raise ValueError("master-equation oracle limited to dim <= 128")
    rho0 = np.ascontiguousarray(rho0, dtype=np.complex128)
    if rho0.shape != (n, n):
        raise ValueError(f"rho0 must be {n} x {n}")
    times = np.asarray(times, dtype=np.float64)
    cfg = ode if ode is not None else OdeConfig(rtol=1e-9, atol=1e-12)

    def rhs(_t, y):
        return lindblad_rhs(ops, y.reshape(n, n)).reshape(-1)

    solver = OdeSolver(cfg, rhs, t0=float(times[0]), y0=rho0.reshape(-1))
    out = np.empty((len(ops.expect), times.shape[0]), dtype=np.float64)
    for j, t in enumerate(times):
        rho = (rho0.reshape(-1) if j == 0 else solver.advance_to(t)).reshape(n, n)
        for k, e in enumerate(ops.expect):
            out[k, j] = np.trace(e @ rho).real
    return out
