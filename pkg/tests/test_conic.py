"""Conic program builder, Hermitian embedding and standard-form dumps."""

import cvxpy as cp
import numpy as np
import pytest

from pinch_secure.conic import (
    ConicError,
    ConicProgram,
    dump_program,
    embed_expression,
    hermitian_embed,
    hermitian_extract,
    solve,
)


class TestEmbedding:
    def test_eigenvalues_doubled(self):
        H = np.array([[1.0, 1j], [-1j, 1.0]])
        eigvals = np.sort(np.linalg.eigvalsh(hermitian_embed(H)))
        np.testing.assert_allclose(eigvals, [0.0, 0.0, 2.0, 2.0], atol=1e-12)

    def test_extract_inverts_embed(self, rng):
        A = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        H = A + A.conj().T
        np.testing.assert_allclose(hermitian_extract(hermitian_embed(H)), H)

    def test_rejects_non_hermitian(self):
        with pytest.raises(ConicError):
            hermitian_embed(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_rejects_non_square(self):
        with pytest.raises(ConicError):
            hermitian_embed(np.ones((2, 3)))

    def test_expression_matches_numeric(self):
        H = np.array([[2.0, 1 - 1j], [1 + 1j, 3.0]])
        np.testing.assert_allclose(embed_expression(H).value, hermitian_embed(H))


class TestProgram:
    def test_log_term_in_bits(self, settings):
        prog = ConicProgram("log")
        x = prog.scalar("x")
        prog.add(x <= 4.0)
        prog.add_log_term(1.0, x, tag="rate")
        solution = solve(prog, settings)
        assert solution.ok
        assert solution.objective == pytest.approx(2.0, abs=1e-4)
        assert solution.scalar("x") == pytest.approx(4.0, abs=1e-3)

    def test_softplus_at_zero(self, settings):
        prog = ConicProgram("softplus")
        s = prog.scalar("s")
        prog.add_softplus_leq(s, 0.0, theta=50.0)
        prog.add_penalty(s)
        solution = solve(prog, settings)
        assert solution.ok
        assert solution.scalar("s") == pytest.approx(1.0, abs=1e-4)

    def test_vector_softplus(self, settings):
        prog = ConicProgram("softplus-vector")
        s = prog.vector("s", 2)
        prog.add_softplus_leq(s, np.array([0.0, 0.1]), theta=10.0)
        prog.add_penalty(cp.sum(s))
        solution = solve(prog, settings)
        expected = np.log2(1.0 + np.exp(-10.0 * np.array([0.0, 0.1])))
        np.testing.assert_allclose(solution.value("s"), expected, atol=1e-4)

    def test_hermitian_psd_block(self, settings):
        prog = ConicProgram("psd")
        X = prog.hermitian("X", 2, psd=True)
        prog.add([X[0, 0] == 1.0, X[1, 1] == 1.0])
        prog.add_objective(cp.real(X[0, 1]))
        solution = solve(prog, settings)
        assert solution.ok
        assert solution.objective == pytest.approx(1.0, abs=1e-4)
        assert np.min(np.linalg.eigvalsh(solution.value("X"))) >= -1e-6

    def test_infeasible(self, settings):
        prog = ConicProgram("infeasible")
        x = prog.scalar("x", nonneg=True)
        prog.add(x <= -1.0)
        prog.add_objective(x)
        solution = solve(prog, settings)
        assert solution.status == "infeasible"
        assert not solution.ok
        with pytest.raises(ConicError):
            solution.value("x")

    def test_duplicate_variable(self):
        prog = ConicProgram()
        prog.scalar("a")
        with pytest.raises(ConicError):
            prog.vector("a", 2)

    def test_unknown_variable(self):
        with pytest.raises(ConicError):
            ConicProgram()["missing"]

    def test_bad_sizes_and_weights(self):
        prog = ConicProgram()
        with pytest.raises(ConicError):
            prog.vector("v", 0)
        with pytest.raises(ConicError):
            prog.add_psd(cp.Variable((2, 3)))
        with pytest.raises(ConicError):
            prog.add_log_term(-1.0, prog.scalar("t"))

    def test_describe_counts_families(self):
        prog = ConicProgram()
        prog.hermitian("A", 2, psd=True)
        x = prog.scalar("x")
        prog.add(x >= 0.0, tag="c1")
        prog.add_log_term(1.0, x + 1.0, tag="log:user0")
        assert prog.describe() == {"psd": 1, "c1": 1, "log": 1}

    def test_no_installed_solver(self, settings):
        prog = ConicProgram()
        prog.add_objective(-cp.square(prog.scalar("x")))
        with pytest.raises(ConicError):
            solve(prog, settings, solvers=["NOT_A_SOLVER"])


def test_dump_program(tmp_path):
    prog = ConicProgram("dumped")
    x = prog.vector("x", 2, nonneg=True)
    prog.add(cp.sum(x) <= 1.0)
    prog.add_log_term(1.0, x[0] + 1.0)
    path = dump_program(prog, tmp_path / "nested" / "prog.txt")
    lines = path.read_text().splitlines()
    assert lines[0] == "# dumped solver=SCS"
    assert lines[1].startswith("dims ")
    assert any(line.startswith("cone exp") for line in lines)
    assert any(line.startswith("A ") for line in lines)
