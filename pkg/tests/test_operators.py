import numpy as np
import pytest

from mcwf.linalg import dagger, norm_sq, tensor, to_csr
from mcwf.operators import (OperatorSet, coherent, destroy,
                            effective_generator, eye, fock, lindblad_rhs,
                            sigma_minus, sigma_x, sigma_z)

from oracles import poisson_amplitude


def test_destroy_two_levels():
    np.testing.assert_array_equal(destroy(2), np.array([[0, 1], [0, 0]]))


def test_destroy_superdiagonal():
    a = destroy(3)
    np.testing.assert_allclose(np.diag(a, k=1), [1.0, np.sqrt(2)])


def test_number_operator():
    for n in (2, 5, 9):
        a = destroy(n)
        np.testing.assert_allclose(dagger(a) @ a, np.diag(np.arange(n)), atol=1e-14)


def test_destroy_rejects_zero():
    with pytest.raises(ValueError):
        destroy(0)


def test_pauli_matrices():
    np.testing.assert_array_equal(sigma_x(), np.array([[0, 1], [1, 0]]))
    np.testing.assert_array_equal(sigma_z(), np.array([[1, 0], [0, -1]]))


def test_sigma_minus_lowers():
    out = sigma_minus() @ np.array([0, 1], dtype=complex)
    np.testing.assert_array_equal(out, np.array([1, 0], dtype=complex))


def test_fock_examples():
    np.testing.assert_array_equal(fock(2, 0), np.array([1, 0], dtype=complex))
    np.testing.assert_array_equal(fock(5, 1), np.array([0, 1, 0, 0, 0], dtype=complex))
    for k in range(4):
        assert norm_sq(fock(4, k)) == 1.0


def test_fock_out_of_range():
    with pytest.raises(ValueError):
        fock(3, 3)
    with pytest.raises(ValueError):
        fock(3, -1)


def test_coherent_zero_displacement():
    np.testing.assert_allclose(coherent(6, 0.0), fock(6, 0), atol=1e-15)


def test_coherent_poisson_amplitudes():
    # Truncated displacement distorts the amplitudes near the top of the
    # ladder; at N = 8, alpha = sqrt(3) the distortion reaches the bottom
    # entries at the 1e-5 .. 4e-3 level (measured against the analytic
    # formula), so the tight comparison is done at a dimension where the
    # Poisson tail is negligible.
    alpha = np.sqrt(3)
    psi = coherent(8, alpha)
    for k in range(5):
        assert abs(psi[k] - poisson_amplitude(alpha, k)) < 5e-3
    psi_big = coherent(24, alpha)
    for k in range(5):
        assert abs(psi_big[k] - poisson_amplitude(alpha, k)) < 1e-6


def test_coherent_unit_norm():
    assert abs(norm_sq(coherent(20, 2.0)) - 1.0) < 1e-8


def test_coherent_mean_occupation_truncated():
    psi = coherent(8, np.sqrt(3))
    a = destroy(8)
    n_mean = np.vdot(psi, dagger(a) @ a @ psi).real
    assert abs(n_mean - 3.0) < 2e-2


def test_effective_generator_driven_qubit_values():
    h = (2 * np.pi / 10) * sigma_x()
    ops = OperatorSet(h, (0.05 * sigma_x(),), ())
    g = effective_generator(ops).g.to_dense()
    np.testing.assert_allclose(np.diag(g), [-0.00125, -0.00125], atol=1e-12)
    assert abs(g[0, 1] - (-0.62831853j)) < 1e-8
    assert abs(g[1, 0] - (-0.62831853j)) < 1e-8


def test_effective_generator_pure_damping():
    c = 0.3
    ops = OperatorSet(np.zeros((2, 2), dtype=complex), (c * sigma_x(),), ())
    g = effective_generator(ops).g.to_dense()
    np.testing.assert_allclose(g, -(c**2 / 2) * np.eye(2), atol=1e-15)


def test_effective_generator_closed_system_antihermitian():
    rng = np.random.default_rng(2)
    h = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    h = h + dagger(h)
    g = effective_generator(OperatorSet(h)).g.to_dense()
    np.testing.assert_allclose(g + dagger(g), np.zeros((4, 4)), atol=1e-13)


def test_effective_generator_defect_identity():
    rng = np.random.default_rng(8)
    h = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
    h = h + dagger(h)
    cs = tuple(rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
               for _ in range(3))
    g = effective_generator(OperatorSet(h, cs)).g.to_dense()
    defect = sum(dagger(c) @ c for c in cs)
    np.testing.assert_allclose(g + dagger(g), -defect, atol=1e-13)


def test_lindblad_rhs_trivial():
    ops = OperatorSet(np.zeros((3, 3), dtype=complex))
    rho = np.diag([0.2, 0.3, 0.5]).astype(complex)
    np.testing.assert_array_equal(lindblad_rhs(ops, rho), np.zeros((3, 3)))


def test_lindblad_rhs_commutator():
    omega = 0.7
    ops = OperatorSet(omega * sigma_x())
    rho = np.diag([1.0, 0.0]).astype(complex)
    got = lindblad_rhs(ops, rho)
    want = -1j * omega * (sigma_x() @ rho - rho @ sigma_x())
    np.testing.assert_allclose(got, want, atol=1e-15)
    assert abs(np.trace(got)) < 1e-15


def test_lindblad_rhs_qubit_decay_rate():
    gamma = 0.8
    ops = OperatorSet(np.zeros((2, 2), dtype=complex),
                      (np.sqrt(gamma) * sigma_minus(),))
    rho = np.diag([0.0, 1.0]).astype(complex)  # excited state |1><1|
    rhs = lindblad_rhs(ops, rho)
    # d<n>/dt with n = diag(0, 1)
    assert abs(rhs[1, 1].real - (-gamma)) < 1e-14


def test_lindblad_rhs_preserves_hermiticity_and_trace():
    rng = np.random.default_rng(13)
    h = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    h = h + dagger(h)
    cs = tuple(rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
               for _ in range(2))
    rho = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    rho = rho @ dagger(rho)
    rho /= np.trace(rho)
    out = lindblad_rhs(OperatorSet(h, cs), rho)
    np.testing.assert_allclose(out, dagger(out), atol=1e-13)
    assert abs(np.trace(out)) < 1e-12


def test_lindblad_rhs_dimension_mismatch():
    ops = OperatorSet(np.zeros((2, 2), dtype=complex))
    with pytest.raises(ValueError):
        lindblad_rhs(ops, np.zeros((3, 3), dtype=complex))


def test_operator_set_dimension_check():
    with pytest.raises(ValueError):
        OperatorSet(np.zeros((2, 2), dtype=complex), (np.zeros((3, 3), dtype=complex),))


def test_three_mode_composition_dimension():
    n0 = n1 = n2 = 8
    a0 = tensor(destroy(n0), eye(n1), eye(n2))
    assert a0.shape == (512, 512)
    # embedded number operator acts only on the first mode
    n_op = dagger(a0) @ a0
    psi = tensor(fock(n0, 3), fock(n1, 0), fock(n2, 0))
    assert abs(np.vdot(psi, n_op @ psi).real - 3.0) < 1e-13
