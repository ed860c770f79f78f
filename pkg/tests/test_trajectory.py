import numpy as np
import pytest

from mcwf import rng
from mcwf.linalg import norm_sq, to_csr
from mcwf.ode import OdeConfig, OdeSolver
from mcwf.operators import (OperatorSet, fock, sigma_minus, sigma_x, sigma_z)
from mcwf.trajectory import (QuantumProblem, RunOptions, TrajectoryResult,
                             apply_collapse, average_trajectories,
                             locate_jump_time, record_expectation,
                             run_single_trajectory, solve_master_equation)

from oracles import ScriptedDraws

OMEGA = 2 * np.pi / 10


def rabi_problem(rtol=1e-8, with_collapse=False, n_steps=100):
    collapse = (0.05 * sigma_x(),) if with_collapse else ()
    ops = OperatorSet(OMEGA * sigma_x(), collapse, (sigma_z(),))
    return QuantumProblem.from_operators(ops, fock(2, 0), 0.0, 10.0, n_steps,
                                         ode=OdeConfig(rtol=rtol, atol=1e-12))


def decay_problem(gamma=1.0, t_to=12.0, n_steps=12, rtol=1e-8, log_jumps=True):
    ops = OperatorSet(np.zeros((2, 2), dtype=complex),
                      (np.sqrt(gamma) * sigma_minus(),), (sigma_z(),))
    return QuantumProblem.from_operators(
        ops, fock(2, 1), 0.0, t_to, n_steps,
        ode=OdeConfig(rtol=rtol, atol=1e-12),
        options=RunOptions(log_jumps=log_jumps))


def test_problem_validates_norm():
    ops = OperatorSet(sigma_x(), (), (sigma_z(),))
    with pytest.raises(ValueError):
        QuantumProblem.from_operators(ops, np.array([1.0, 1.0]), 0.0, 1.0, 10)


def test_problem_validates_time_order():
    ops = OperatorSet(sigma_x(), (), ())
    with pytest.raises(ValueError):
        QuantumProblem.from_operators(ops, fock(2, 0), 1.0, 1.0, 10)


def test_closed_system_rabi_oscillation():
    p = rabi_problem()
    res, _ = run_single_trajectory(p, rng.derive_stream(1, 0))
    want = np.cos(2 * OMEGA * res.times)
    assert np.abs(res.values[0] - want).max() < 10 * p.ode.rtol


def test_forced_jump_at_half_norm():
    # r = 0.5 forced: norm^2(t) = exp(-t), so the jump lands at ln 2 and
    # the state collapses to the ground state
    p = decay_problem()
    draws = ScriptedDraws([0.5, 0.3, 0.9999999])
    res, _ = run_single_trajectory(p, draws)
    assert res.jumps is not None and len(res.jumps) == 1
    t_star, idx = res.jumps[0]
    assert idx == 0
    assert abs(t_star - np.log(2.0)) < 1e-6
    # <sigma_z> flips from -1 (excited) to +1 (ground) after the jump
    before = res.values[0, res.times < t_star]
    after = res.values[0, res.times > t_star]
    np.testing.assert_allclose(before, -1.0, atol=1e-9)
    np.testing.assert_allclose(after, 1.0, atol=1e-9)


def test_no_jump_when_threshold_below_final_norm():
    # r below norm^2(t_to): trajectory is the deterministic evolution
    p = decay_problem(t_to=1.0, n_steps=10)
    draws = ScriptedDraws([np.exp(-1.0) / 2])
    res, _ = run_single_trajectory(p, draws)
    assert res.jumps == []
    np.testing.assert_allclose(res.values[0], -1.0, atol=1e-9)


def test_trajectory_is_deterministic():
    p = decay_problem()
    r1, s1 = run_single_trajectory(p, rng.derive_stream(9, 4))
    r2, s2 = run_single_trajectory(p, rng.derive_stream(9, 4))
    np.testing.assert_array_equal(r1.values, r2.values)
    assert r1.jumps == r2.jumps
    assert s1 == s2


def test_norm_monotone_between_jumps():
    # raw solver norm along the grid is non-increasing under H_eff
    p = rabi_problem(with_collapse=True)
    g = p.generator.g
    s = OdeSolver(p.ode, g, t0=0.0, y0=p.psi0.copy())
    prev = 1.0
    for t in np.linspace(0.5, 10.0, 20):
        y = s.advance_to(t)
        n = norm_sq(y)
        assert n <= prev + 10 * p.ode.rtol
        prev = n


def test_post_jump_norm_is_unit():
    p = decay_problem()
    state = rng.derive_stream(3, 1)
    seen = 0
    for _ in range(20):
        res, state = run_single_trajectory(p, state)
        if res.jumps:
            seen += 1
            # after the jump the recorded expectation is from a unit state
            assert abs(res.values[0, -1] - 1.0) < 1e-12
    assert seen > 10


def test_locate_jump_time_analytic_decay():
    p = decay_problem()
    s = OdeSolver(p.ode, p.generator.g, t0=0.0, y0=p.psi0.copy())
    r = 0.5
    while norm_sq(s.y) > r:
        s.step()
    t_star = locate_jump_time(s, r, s.t_lo, s.t)
    assert abs(t_star - np.log(2.0)) < 1e-6


def test_locate_jump_time_boundary():
    p = decay_problem()
    s = OdeSolver(p.ode, p.generator.g, t0=0.0, y0=p.psi0.copy())
    s.step()
    r = s.interpolate_norm_sq(s.t_lo)
    assert locate_jump_time(s, r, s.t_lo, s.t) == s.t_lo


def test_locate_jump_time_matches_scan_oracle():
    p = decay_problem(gamma=2.5)
    s = OdeSolver(p.ode, p.generator.g, t0=0.0, y0=p.psi0.copy())
    for r in (0.9, 0.6, 0.2):
        while norm_sq(s.y) > r:
            s.step()
        t_star = locate_jump_time(s, r, s.t_lo, s.t)
        # fine-grid scan on the same dense output
        grid = np.linspace(s.t_lo, s.t, 200001)
        vals = np.array([s.interpolate_norm_sq(t) for t in grid])
        t_scan = grid[np.argmin(np.abs(vals - r))]
        assert abs(t_star - t_scan) <= (grid[1] - grid[0]) + 1e-9
        assert abs(s.interpolate_norm_sq(t_star) - r) <= 1e-9 * r


def test_locate_jump_time_bracket_violation():
    p = decay_problem()
    s = OdeSolver(p.ode, p.generator.g, t0=0.0, y0=p.psi0.copy())
    s.step()
    with pytest.raises(RuntimeError, match="bracket"):
        locate_jump_time(s, 2.0, s.t_lo, s.t)  # r above initial norm


def test_apply_collapse_single_channel():
    c = to_csr(np.sqrt(0.5) * sigma_minus())
    psi, idx = apply_collapse(fock(2, 1), (c,), 0.7)
    assert idx == 0
    np.testing.assert_allclose(psi, fock(2, 0), atol=1e-15)
    assert abs(norm_sq(psi) - 1.0) < 1e-12


def test_apply_collapse_cumulative_rule():
    c = to_csr(sigma_minus())
    psi = (fock(2, 0) + fock(2, 1)) / np.sqrt(2)
    # two channels with equal weight: u = 0.25 -> first, u = 0.75 -> second
    _, idx = apply_collapse(psi, (c, c), 0.25)
    assert idx == 0
    _, idx = apply_collapse(psi, (c, c), 0.75)
    assert idx == 1


def test_apply_collapse_no_support():
    c = to_csr(sigma_minus())
    with pytest.raises(ValueError, match="support"):
        apply_collapse(fock(2, 0), (c,), 0.5)


def test_apply_collapse_multinomial_frequencies():
    # weights proportional to 1:2:3 -> selection probabilities k/6
    base = sigma_minus()
    cs = tuple(to_csr(np.sqrt(w) * base) for w in (1.0, 2.0, 3.0))
    psi = fock(2, 1)
    n = 100_000
    counts = np.zeros(3, dtype=int)
    state = rng.seed(11, 22, 33, 4444)
    for _ in range(n):
        u, state = state.next_u01()
        _, idx = apply_collapse(psi, cs, u)
        counts[idx] += 1
    probs = np.array([1 / 6, 2 / 6, 3 / 6])
    sigma = np.sqrt(probs * (1 - probs) * n)
    assert np.all(np.abs(counts - probs * n) < 3 * sigma)


def test_record_expectation_basics():
    sz = to_csr(sigma_z())
    assert record_expectation(fock(2, 0), sz) == 1.0
    psi = (fock(2, 0) + fock(2, 1)) / np.sqrt(2)
    assert abs(record_expectation(psi, sz)) < 1e-15
    assert record_expectation(2.0 * psi, sz) == record_expectation(psi, sz)


def test_record_expectation_zero_vector():
    with pytest.raises(ValueError):
        record_expectation(np.zeros(2, dtype=complex), to_csr(sigma_z()))


def one_result(value, count, n=3):
    times = np.linspace(0.0, 1.0, n)
    return TrajectoryResult(times, np.full((1, n), value), count)


def test_average_single_identity():
    r = one_result(0.7, 1)
    out = average_trajectories([r])
    np.testing.assert_array_equal(out.values, r.values)
    assert out.n_trajectories == 1


def test_average_weighted():
    out = average_trajectories([one_result(1.0, 2), one_result(2.0, 3)])
    np.testing.assert_allclose(out.values, 1.6)
    assert out.n_trajectories == 5


def test_average_copies_unchanged():
    rs = [one_result(0.3, 2)] * 4
    out = average_trajectories(rs)
    np.testing.assert_allclose(out.values, 0.3)
    assert out.n_trajectories == 8


def test_average_grid_mismatch():
    a = one_result(1.0, 1)
    b = TrajectoryResult(np.linspace(0, 2, 3), np.full((1, 3), 1.0), 1)
    with pytest.raises(ValueError):
        average_trajectories([a, b])


def test_master_equation_closed_rabi():
    ops = OperatorSet(OMEGA * sigma_x(), (), (sigma_z(),))
    rho0 = np.outer(fock(2, 0), fock(2, 0).conj())
    times = np.linspace(0.0, 10.0, 51)
    vals = solve_master_equation(ops, rho0, times)
    np.testing.assert_allclose(vals[0], np.cos(2 * OMEGA * times), atol=1e-6)


def test_master_equation_decay_rate():
    gamma = 0.7
    n_op = np.diag([0.0, 1.0]).astype(complex)
    ops = OperatorSet(np.zeros((2, 2), dtype=complex),
                      (np.sqrt(gamma) * sigma_minus(),), (n_op,))
    rho0 = np.diag([0.0, 1.0]).astype(complex)
    times = np.linspace(0.0, 3.0, 31)
    vals = solve_master_equation(ops, rho0, times)
    np.testing.assert_allclose(vals[0], np.exp(-gamma * times), atol=1e-6)


def test_master_equation_trace_preserved_photon():
    from mcwf.problems import build_photon
    from mcwf.operators import eye
    p = build_photon()
    kappa, n_th = 1.0 / 0.129, 0.063
    from mcwf.operators import destroy, eye
    a = destroy(5)
    ops = OperatorSet(a.conj().T @ a,
                      (np.sqrt(kappa * (1 + n_th)) * a,
                       np.sqrt(kappa * n_th) * a.conj().T),
                      (eye(5),))  # identity expectation tracks the trace
    rho0 = np.outer(fock(5, 1), fock(5, 1).conj())
    times = np.linspace(0.0, 1.0, 21)
    trace = solve_master_equation(ops, rho0, times)[0]
    assert np.abs(trace - 1.0).max() < 1e-8


def test_closed_system_equals_direct_integration():
    p = rabi_problem(rtol=1e-9)
    res, _ = run_single_trajectory(p, rng.derive_stream(5, 0))
    s = OdeSolver(p.ode, p.generator.g, t0=0.0, y0=p.psi0.copy())
    direct = []
    for t in res.times:
        y = p.psi0 if t == 0.0 else s.advance_to(t)
        direct.append(np.vdot(y, sigma_z() @ y).real / np.vdot(y, y).real)
    assert np.abs(res.values[0] - np.array(direct)).max() < 10 * (p.ode.rtol + p.ode.atol)


def test_monte_carlo_converges_to_oracle():
    # max-abs deviation from the Lindblad oracle shrinks like 1/sqrt(N):
    # each 4x increase in N should halve it, within a factor 1.5
    from mcwf.problems import build_photon
    p = build_photon(n_steps=25, t_to=0.5,
                     ode=OdeConfig(rtol=1e-6, atol=1e-10))
    kappa, n_th = 1.0 / 0.129, 0.063
    from mcwf.operators import destroy
    a = destroy(5)
    ops = OperatorSet(a.conj().T @ a,
                      (np.sqrt(kappa * (1 + n_th)) * a,
                       np.sqrt(kappa * n_th) * a.conj().T),
                      (a.conj().T @ a,))
    rho0 = np.outer(fock(5, 1), fock(5, 1).conj())
    oracle = solve_master_equation(ops, rho0, p.time_grid())[0]

    state = rng.derive_stream(2022, 0)
    devs = {}
    acc = None
    total = 0
    for n_target in (100, 400, 1600):
        while total < n_target:
            res, state = run_single_trajectory(p, state)
            acc = res.values if acc is None else acc + res.values
            total += 1
        devs[n_target] = np.abs(acc[0] / total - oracle).max()
    r1 = devs[100] / devs[400]
    r2 = devs[400] / devs[1600]
    assert 2 / 1.5 <= r1 <= 2 * 1.5, devs
    assert 2 / 1.5 <= r2 <= 2 * 1.5, devs
