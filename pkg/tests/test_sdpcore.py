import json

import numpy as np
import pytest
import scipy.sparse as sp

from roacert.sdpcore import (
    DEFAULT_TOL,
    SdpSolution,
    Status,
    assess,
    dual_slacks,
    solution_to_dict,
    solve,
    write_solution,
)
from roacert.soscompile import SdpProblem, compile_program

# variables of a 2x2 block in column-major upper triangle: X11, X12, X22


def one_by_one():
    return SdpProblem((1,), 0, 0, sp.csr_matrix([[1.0]]), [1.0], [1.0])


def two_by_two():
    # min X11 s.t. X12 = 1, X11 + X22 = 2; optimum 1 at X = [[1, 1], [1, 1]]
    A = sp.csr_matrix([[0.0, 1.0, 0.0], [1.0, 0.0, 1.0]])
    return SdpProblem((2,), 0, 0, A, [1.0, 2.0], [1.0, 0.0, 0.0])


def negative_diagonal():
    return SdpProblem((1,), 0, 0, sp.csr_matrix([[1.0]]), [-1.0], [0.0])


class TestContract:
    def test_one_by_one(self):
        sol = solve(one_by_one())
        assert sol.status is Status.OPTIMAL
        assert sol.objective == pytest.approx(1.0, abs=1e-8)
        assert sol.gap <= DEFAULT_TOL

    def test_kkt_by_hand(self):
        sol = solve(two_by_two())
        assert sol.status is Status.OPTIMAL
        assert sol.objective == pytest.approx(1.0, abs=1e-7)
        assert sol.gap <= DEFAULT_TOL
        np.testing.assert_allclose(sol.blocks[0], np.ones((2, 2)), atol=1e-4)

    def test_infeasible_ray(self):
        prob = negative_diagonal()
        sol = solve(prob)
        assert sol.status is Status.INFEASIBLE
        y = sol.ray
        # Farkas: b.y = 1 while A^T y is nonpositive on the PSD cone
        assert prob.b @ y == pytest.approx(1.0)
        S, _ = dual_slacks(SdpProblem((1,), 0, 0, prob.A, prob.b, np.zeros(1)), y)
        assert np.linalg.eigvalsh(S[0])[0] >= -1e-9
        assert not sol.ok

    def test_presolve_empty_row_infeasible(self):
        A = sp.csr_matrix([[1.0], [0.0]])
        sol = solve(SdpProblem((1,), 0, 0, A, [1.0, 3.0], [1.0]))
        assert sol.status is Status.INFEASIBLE
        assert sol.ray[1] == pytest.approx(1 / 3)

    def test_presolve_empty_row_dropped(self):
        A = sp.csr_matrix([[1.0], [0.0]])
        sol = solve(SdpProblem((1,), 0, 0, A, [1.0, 0.0], [1.0]))
        assert sol.status is Status.OPTIMAL
        assert sol.y.shape == (2,)

    def test_unknown_backend(self):
        with pytest.raises(ValueError):
            solve(one_by_one(), backend="mosek")


class TestInvariants:
    @pytest.fixture(scope="class")
    @classmethod
    def scalar_problem(cls):
        from conftest import scalar_field

        return compile_program(scalar_field(), 6, 1.0, 1, 1.5, [(-1.2, 1.2)]).problem

    def test_optimal_means_within_tolerance(self, scalar_problem):
        sol = solve(scalar_problem)
        assert sol.status is Status.OPTIMAL
        assert sol.gap <= DEFAULT_TOL
        assert sol.primal_residual <= DEFAULT_TOL
        scale = max(1.0, max(np.max(np.abs(B)) for B in sol.blocks))
        assert min(sol.min_eig_primal) >= -DEFAULT_TOL * scale

    def test_weak_duality(self, scalar_problem):
        for prob in (one_by_one(), scalar_problem):
            sol = solve(prob)
            scale = 1.0 + abs(sol.primal_objective)
            assert sol.primal_objective >= sol.dual_objective - 1e-9 * scale

    def test_unattained_dual_within_gap(self):
        # the 2x2 dual optimum is not attained (|y| ~ 1e8 at the last
        # iterate), so b.y can overshoot c.x by round-off of order |y| eps;
        # the overshoot stays inside the gap tolerance
        sol = solve(two_by_two())
        assert np.max(np.abs(sol.y)) > 1e6
        assert abs(sol.primal_objective - sol.dual_objective) <= DEFAULT_TOL * (1 + abs(sol.primal_objective))

    def test_complementarity(self, scalar_problem):
        sol = solve(scalar_problem)
        assert sol.complementarity <= DEFAULT_TOL

    def test_repeatable(self, scalar_problem):
        a, b = solve(scalar_problem), solve(scalar_problem)
        assert a.objective == pytest.approx(b.objective, abs=1e-9)

    def test_backends_agree(self, scalar_problem):
        a = solve(scalar_problem, backend="clarabel")
        b = solve(scalar_problem, backend="cvxopt")
        assert b.info["backend"] == "cvxopt"
        assert b.ok
        assert a.objective == pytest.approx(b.objective, rel=1e-6)

    def test_assess_matches_solution(self, scalar_problem):
        sol = solve(scalar_problem)
        m = assess(scalar_problem, sol.x, sol.y)
        assert m["pobj"] == pytest.approx(sol.primal_objective)

    def test_stalled_is_a_status(self, scalar_problem):
        sol = solve(scalar_problem, max_iters=2)
        assert sol.status in (Status.STALLED, Status.NEAR_OPTIMAL)
        assert isinstance(sol, SdpSolution)


def test_solution_dump(tmp_path):
    sol = solve(two_by_two())
    path = tmp_path / "sol.json"
    write_solution(sol, path)
    doc = json.loads(path.read_text())
    assert doc["status"] == "Optimal"
    assert doc == json.loads(json.dumps(solution_to_dict(sol)))
