import numpy as np
import pytest
from hypothesis import given, strategies as st

from coherdist import sdp
from coherdist.errors import DomainError


def max_eig_program(h):
    bld = sdp.ProgramBuilder(complex_=np.iscomplexobj(h))
    x = bld.psd(h.shape[0])
    bld.add_row({x: np.eye(h.shape[0])}, 1.0)
    bld.maximize({x: h})
    return bld.build()


def test_small_lp():
    bld = sdp.ProgramBuilder()
    x = bld.nonneg(2)
    bld.add_row({x: np.array([1.0, 2.0])}, 1.0)
    bld.maximize({x: np.array([1.0, 1.0])})
    sol = sdp.solve(bld.build())
    assert sol.optimal
    assert sol.primal_value == pytest.approx(1.0, abs=1e-7)
    assert np.allclose(sol.X[0], [1.0, 0.0], atol=1e-7)
    assert sol.y[0] == pytest.approx(1.0, abs=1e-7)


def unit_lp():
    bld = sdp.ProgramBuilder()
    x = bld.nonneg(1)
    s = bld.nonneg(1)
    bld.add_row({x: np.array([1.0]), s: np.array([1.0])}, 1.0)
    bld.maximize({x: np.array([1.0])})
    return bld.build()


def test_unit_lp_and_certificate():
    program = unit_lp()
    sol = sdp.solve(program)
    assert sol.optimal
    assert sol.primal_value == pytest.approx(1.0, abs=1e-8)
    rep = sdp.check_certificate(program, sol)
    assert max(rep.primal_residual, rep.dual_residual, rep.gap, *rep.psd_defects) <= 1e-8


def test_perturbed_iterate_fails_certificate():
    program = unit_lp()
    sol = sdp.solve(program)
    sol.X = [x + 1e-3 for x in sol.X]
    assert sdp.check_certificate(program, sol).primal_residual >= 1e-4


def test_trace_bound():
    bld = sdp.ProgramBuilder()
    x = bld.psd(2)
    s = bld.nonneg(1)
    bld.add_row({x: np.eye(2), s: np.array([1.0])}, 3.0)
    bld.maximize({x: np.eye(2)})
    sol = sdp.solve(bld.build())
    assert sol.optimal
    assert sol.primal_value == pytest.approx(3.0, abs=1e-7)


@given(st.integers(2, 5), st.booleans(), st.integers(0, 10**6))
def test_max_eigenvalue(d, complex_, seed):
    rng = np.random.default_rng(seed)
    h = rng.normal(size=(d, d))
    if complex_:
        h = h + 1j * rng.normal(size=(d, d))
    h = h + h.conj().T
    program = max_eig_program(h)
    sol = sdp.solve(program)
    assert sol.optimal
    assert sol.primal_value == pytest.approx(np.linalg.eigvalsh(h)[-1], abs=1e-7)
    assert sol.gap <= 1e-8
    assert sdp.check_certificate(program, sol).ok(1e-7)


@given(st.integers(0, 10**6))
def test_weak_duality_and_slack(seed):
    rng = np.random.default_rng(seed)
    h = rng.normal(size=(3, 3))
    h = h + h.T
    program = max_eig_program(h)
    sol = sdp.solve(program)
    # the minimisation dual bounds the maximisation from above
    assert sol.dual_value >= sol.primal_value - 1e-9
    s = program.adjoint(sol.y)[0] - h
    assert np.allclose(s, sol.S[0])
    assert np.linalg.eigvalsh(s)[0] > -1e-7


def test_complementary_slackness():
    h = np.diag([3.0, 1.0, -1.0])
    sol = sdp.solve(max_eig_program(h))
    assert abs(np.sum(sol.X[0] * sol.S[0])) < 1e-7
    assert sol.X[0][0, 0] == pytest.approx(1.0, abs=1e-7)


def test_program_without_interior_uses_a_face():
    # X00 = 0 forces the off-diagonal entry to vanish
    bld = sdp.ProgramBuilder()
    x = bld.psd(2)
    bld.add_row({x: np.diag([1.0, 0.0])}, 0.0)
    bld.add_row({x: np.eye(2)}, 1.0)
    bld.maximize({x: np.array([[0.0, 0.5], [0.5, 0.0]])})
    program = bld.build()
    sol = sdp.solve(program)
    assert sol.optimal
    assert abs(sol.primal_value) < 1e-8
    assert sol.face_rows == [0]
    rep = sdp.check_certificate(program, sol)
    assert rep.face_valid and rep.ok(1e-7)


def test_face_from_rows_rejects_non_exposing_rows():
    bld = sdp.ProgramBuilder()
    x = bld.psd(2)
    bld.add_row({x: np.diag([1.0, -1.0])}, 0.0)
    bld.add_row({x: np.eye(2)}, 1.0)
    program = bld.build()
    assert sdp.face_from_rows(program, [0]) is None
    assert sdp.face_from_rows(program, [1]) is None


def test_certificate_detects_a_bad_dual():
    program = max_eig_program(np.diag([2.0, 1.0]))
    sol = sdp.solve(program)
    assert sdp.check_certificate(program, sol).ok()
    sol.y = sol.y - 0.5
    rep = sdp.check_certificate(program, sol)
    assert not rep.ok()
    # S = y 1 - c loses 0.5 on every eigenvalue; relative to 1 + max|c| = 3
    assert rep.dual_residual == pytest.approx(0.5 / 3, abs=1e-6)
    assert rep.psd_defects == [0.0]


def test_infeasible_program_is_not_reported_optimal():
    bld = sdp.ProgramBuilder()
    x = bld.nonneg(1)
    bld.add_row({x: np.array([1.0])}, -1.0)
    bld.maximize({x: np.array([1.0])})
    sol = sdp.solve(bld.build())
    assert not sol.optimal


def test_iteration_limit_is_reported():
    program = max_eig_program(np.diag([2.0, 1.0, 0.5]))
    sol = sdp.solve(program, max_iter=1)
    assert sol.status is sdp.Status.MAX_ITERATIONS
    assert sol.iterations == 1


def test_empty_program_rejected():
    bld = sdp.ProgramBuilder()
    bld.psd(2)
    with pytest.raises(DomainError):
        sdp.solve(bld.build())


def test_redundant_rows_are_presolved():
    bld = sdp.ProgramBuilder()
    x = bld.psd(2)
    bld.add_row({x: np.eye(2)}, 1.0)
    bld.add_row({x: 2 * np.eye(2)}, 2.0)
    bld.maximize({x: np.diag([1.0, 0.0])})
    sol = sdp.solve(bld.build())
    assert sol.optimal
    assert sol.primal_value == pytest.approx(1.0, abs=1e-7)
    assert sol.y.shape == (2,)


def test_embedding_round_trip(rng):
    h = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    h = h + h.conj().T
    e = sdp.embed_matrix(h)
    assert np.allclose(e, e.T)
    assert np.allclose(sdp.unembed_matrix(e), h)
    w, we = np.linalg.eigvalsh(h), np.linalg.eigvalsh(e)
    assert np.allclose(np.repeat(w, 2), we)


def test_json_round_trip(rng):
    h = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    h = h + h.conj().T
    bld = sdp.ProgramBuilder(complex_=True)
    x = bld.psd(2)
    t = bld.nonneg(1)
    bld.add_row({x: np.eye(2), t: np.array([1.0])}, 1.0)
    bld.maximize({x: h})
    program = bld.build()
    back = sdp.ConicProgram.from_json(program.to_json())
    assert back.blocks == program.blocks
    for a, b in zip(back.A, program.A):
        assert np.allclose(a, b)
    assert sdp.solve(back).primal_value == pytest.approx(sdp.solve(program).primal_value, abs=1e-9)


def test_hermitian_basis_is_orthonormal():
    for complex_ in (False, True):
        basis = np.array(list(sdp.hermitian_basis(3, complex_)))
        assert len(basis) == (9 if complex_ else 6)
        gram = np.einsum("aij,bij->ab", basis.conj(), basis).real
        assert np.allclose(gram, np.eye(len(basis)))


def test_matrix_equality_adds_one_row_per_basis_element():
    bld = sdp.ProgramBuilder(complex_=True)
    x = bld.psd(2)
    bld.add_matrix_equality({x: lambda b: b}, np.diag([0.5, 0.5]))
    program = bld.build()
    assert program.num_constraints == 4
    sol = sdp.solve(program)
    assert np.allclose(sol.X[0], np.diag([0.5, 0.5]), atol=1e-7)


def test_solve_is_deterministic():
    program = max_eig_program(np.array([[1.0, 0.3], [0.3, -0.2]]))
    a, b = sdp.solve(program), sdp.solve(program)
    assert a.primal_value == b.primal_value
    assert np.array_equal(a.y, b.y)
