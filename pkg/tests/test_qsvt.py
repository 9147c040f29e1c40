import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tpuzzle.core import PauliString, ResourceCapError
from tpuzzle.qsvt import (
    CircuitIR,
    CommutingBasis,
    Gate,
    QSPFitError,
    QSPPhases,
    assemble_qsvt,
    build_block_encoding,
    build_commuting_basis,
    cayley_function,
    check_cayley_equivalence,
    nested_hermitian,
    qsp_angles_for_cayley,
    qsp_polynomial,
    qsp_unitaries,
    verify_cayley_equivalence,
)

from conftest import pauli_matrix

phase_lists = st.integers(0, 3).flatmap(
    lambda h: st.lists(st.floats(-math.pi, math.pi), min_size=2 * h + 1, max_size=2 * h + 1)
)


def product_projector(basis):
    dim = 1 << basis.n
    out = np.eye(dim, dtype=complex)
    for b in basis.basis:
        out = out @ (np.eye(dim) + pauli_matrix(b.letters)) / 2
    return out


@pytest.fixture(scope="module")
def yy_basis():
    return CommutingBasis((PauliString("YI"), PauliString("IY")))


@pytest.fixture(scope="module")
def fitted_half():
    return qsp_angles_for_cayley(0.5, 4)


# ---------------------------------------------------------------- bases and encoded operator


def test_basis_examples():
    assert CommutingBasis((PauliString("X"),)).k == 2
    b = CommutingBasis((PauliString("XI"), PauliString("IX")))
    assert (b.n, b.K, b.k) == (2, 2, 4)
    assert [p.letters for p in b.products()] == ["II", "XI", "IX", "XX"]


def test_basis_validation():
    with pytest.raises(ValueError):
        CommutingBasis((PauliString("XI"), PauliString("YI")))  # anticommute
    with pytest.raises(ValueError):
        CommutingBasis((PauliString("XX"), PauliString("YY"), PauliString("ZZ")))  # Z letters
    with pytest.raises(ValueError):
        CommutingBasis((PauliString("XI"), PauliString("IX"), PauliString("XX")))  # dependent
    with pytest.raises(ValueError):
        build_commuting_basis(2, 3)


@given(st.integers(1, 5).flatmap(lambda n: st.tuples(st.just(n), st.integers(1, n), st.integers(0, 10**6))))
def test_random_bases_commute_as_matrices(args):
    n, K, seed = args
    basis = build_commuting_basis(n, K, seed)
    mats = [pauli_matrix(b.letters) for b in basis.basis]
    for a in mats:
        np.testing.assert_allclose(a @ a, np.eye(1 << n), atol=1e-12)
        for b in mats:
            np.testing.assert_allclose(a @ b, b @ a, atol=1e-12)
    assert all(b.is_offdiagonal and "Z" not in b.letters for b in basis.basis)


@given(st.integers(1, 4).flatmap(lambda n: st.tuples(st.just(n), st.integers(1, n), st.integers(0, 10**6))))
def test_nested_hermitian_is_the_product_projector(args):
    n, K, seed = args
    basis = build_commuting_basis(n, K, seed)
    h = nested_hermitian(basis).dense()
    np.testing.assert_allclose(h, product_projector(basis), atol=1e-12)
    np.testing.assert_allclose(h @ h, h, atol=1e-10)
    evals = np.linalg.eigvalsh(h)
    assert np.all(np.minimum(np.abs(evals), np.abs(evals - 1)) < 1e-10)


# ---------------------------------------------------------------- block encoding


@pytest.mark.parametrize("open_controls", [True, False])
def test_single_x_block(open_controls):
    circ = build_block_encoding(CommutingBasis((PauliString("X"),)), open_controls)
    x = np.array([[0, 1], [1, 0]])
    np.testing.assert_allclose(circ.block(), (np.eye(2) + x) / 2, atol=1e-12)


@given(st.integers(1, 4).flatmap(lambda n: st.tuples(st.just(n), st.integers(1, n), st.integers(0, 10**6))),
       st.booleans())
def test_block_matches_projector(args, open_controls):
    n, K, seed = args
    basis = build_commuting_basis(n, K, seed)
    circ = build_block_encoding(basis, open_controls)
    block = circ.block()
    np.testing.assert_allclose(block, product_projector(basis), atol=1e-12)
    np.testing.assert_allclose(block @ block, block, atol=1e-10)
    u = circ.dense()
    np.testing.assert_allclose(u.conj().T @ u, np.eye(u.shape[0]), atol=1e-10)


def test_postselection_probability(yy_basis):
    circ = build_block_encoding(yy_basis)
    out = circ.columns_from_zero_ancillas()[:, 0]
    p_zero = np.sum(np.abs(out[:4]) ** 2)
    h = nested_hermitian(yy_basis).dense()
    assert p_zero == pytest.approx((h @ h)[0, 0].real, abs=1e-12)


def test_encoding_cap():
    basis = build_commuting_basis(10, 2, 0)
    with pytest.raises(ResourceCapError):
        build_block_encoding(basis)


def test_text_round_trip(yy_basis, fitted_half):
    circ = assemble_qsvt(build_block_encoding(yy_basis), fitted_half)
    back = CircuitIR.from_text(circ.to_text())
    assert back.gates == circ.gates
    assert (back.num_wires, back.encoding_wires, back.system_wires) == (
        circ.num_wires, circ.encoding_wires, circ.system_wires)
    np.testing.assert_array_equal(back.block(), circ.block())
    with pytest.raises(ValueError):
        Gate.from_line("CCZ 0,1")


def test_circuit_validation():
    with pytest.raises(ValueError):
        CircuitIR(3, (1,), (1, 2))
    circ = CircuitIR(2, (), (1,))
    with pytest.raises(ValueError):
        circ.append(Gate("H", (5,)))
    with pytest.raises(ValueError):
        circ.append(Gate("CNOT", (0, 1)))


# ---------------------------------------------------------------- QSP polynomials


@given(phase_lists, st.floats(-1, 1))
def test_qsp_unitary_constraints(phases, x):
    u = qsp_unitaries(phases, x)[0]
    np.testing.assert_allclose(u @ u.conj().T, np.eye(2), atol=1e-10)
    p = u[0, 0]
    s = math.sqrt(max(0.0, 1 - x * x))
    if s > 1e-6:
        q = u[0, 1] / (1j * s)
        assert abs(p) ** 2 + (1 - x * x) * abs(q) ** 2 == pytest.approx(1, abs=1e-8)
    # even degree gives an even polynomial
    assert qsp_polynomial(phases, -x)[0] == pytest.approx(p, abs=1e-10)


def test_qsp_matches_explicit_product():
    phases = [0.3, -0.7, 1.1]
    x = 0.4
    wx = np.array([[x, 1j * math.sqrt(1 - x * x)], [1j * math.sqrt(1 - x * x), x]])
    ez = lambda p: np.diag([np.exp(1j * p), np.exp(-1j * p)])
    ref = ez(phases[0]) @ wx @ ez(phases[1]) @ wx @ ez(phases[2])
    np.testing.assert_allclose(qsp_unitaries(phases, x)[0], ref, atol=1e-14)


def test_beta_zero_fit_is_exact():
    for d in (0, 2, 4):
        fit = qsp_angles_for_cayley(0.0, d)
        assert fit.fit_error <= 1e-12
        np.testing.assert_allclose(fit.polynomial(np.linspace(-1, 1, 11)), 1, atol=1e-12)


def test_fit_pins_projector_points(fitted_half):
    grid = np.linspace(-1, 1, 201)
    err = np.max(np.abs(fitted_half.polynomial(grid).real - cayley_function(0.5, grid).real))
    assert err == pytest.approx(fitted_half.fit_error, abs=1e-12)
    p0, p1 = fitted_half.polynomial([0.0, 1.0])
    assert p0.real == pytest.approx(1, abs=1e-9)
    assert p1.real == pytest.approx(cayley_function(0.5, 1.0).real, abs=1e-9)
    # only the real parts are pinned; the imaginary parts follow from unitarity
    assert abs(p0 - 1) <= 1e-6
    assert abs(p1 - cayley_function(0.5, 1.0)) <= 1e-6
    assert fitted_half.pinned_error <= 1e-6
    re = fitted_half.polynomial(grid).real
    np.testing.assert_allclose(re, re[::-1], atol=1e-10)


def test_fit_argument_checks():
    with pytest.raises(ValueError):
        qsp_angles_for_cayley(0.5, 3)
    with pytest.raises(ValueError):
        qsp_angles_for_cayley(-0.5, 2)
    with pytest.raises(QSPFitError):
        qsp_angles_for_cayley(2.0, 2, tol=1e-9)


# ---------------------------------------------------------------- QSVT assembly


@given(phase_lists)
def test_qsvt_block_applies_polynomial_to_projector(phases):
    basis = CommutingBasis((PauliString("YI"), PauliString("IY")))
    h = nested_hermitian(basis).dense()
    circ = assemble_qsvt(build_block_encoding(basis), QSPPhases(tuple(phases), 0.0, 0.0))
    p0, p1 = qsp_polynomial(phases, [0.0, 1.0])
    np.testing.assert_allclose(circ.block(), p1 * h + p0 * (np.eye(4) - h), atol=1e-10)


def test_degree_zero_is_a_phase_layer(yy_basis):
    circ = assemble_qsvt(build_block_encoding(yy_basis), QSPPhases((0.4,), 0.0, 0.0))
    assert set(circ.counts()) <= {"MCX", "RZ"}
    np.testing.assert_allclose(circ.block(), np.exp(0.4j) * np.eye(4), atol=1e-12)


def test_gate_count_is_linear_in_degree(yy_basis):
    enc = build_block_encoding(yy_basis)
    totals = [sum(assemble_qsvt(enc, QSPPhases((0.1,) * (d + 1), 0.0, 0.0)).counts().values())
              for d in (2, 4, 6, 8)]
    steps = np.diff(totals)
    assert np.all(steps == steps[0])
    assert steps[0] == 2 * (len(enc.gates) + 3)


def test_cayley_equivalence_small(yy_basis, fitted_half):
    chk = check_cayley_equivalence(yy_basis, 0.5, 4)
    assert chk.deviation <= 1e-4
    assert chk.min_success_probability == pytest.approx(1, abs=1e-8)
    assert chk.unitarity_error <= 1e-6
    # eigenvectors of the projector pick up f(0) and f(1)
    circ = assemble_qsvt(build_block_encoding(yy_basis), fitted_half)
    block = circ.block()
    evals, evecs = np.linalg.eigh(nested_hermitian(yy_basis).dense())
    for lam, v in zip(np.round(evals), evecs.T):
        expected = cayley_function(0.5, lam)
        np.testing.assert_allclose(block @ v, expected * v, atol=1e-7)
    assert verify_cayley_equivalence(yy_basis, 0.0, 2) <= 1e-10


def test_rescaled_equivalence():
    basis = CommutingBasis((PauliString("X"),))
    chk = check_cayley_equivalence(basis, 0.3, 4, rescale=True)
    assert chk.beta_eff == pytest.approx(0.3 * math.sqrt(2))
    assert chk.deviation <= 1e-6
