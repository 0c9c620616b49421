import numpy as np
import pytest
import scipy.sparse as sp

from conftest import solved
from reachsos.sdp import (
    MAX_ITERS, OPTIMAL, SdpFormatError, SdpInstance, export_sdpa, import_sdpa, solve,
)


def two_by_two():
    """min x s.t. [[x, 1], [1, x]] PSD, written as X = that matrix with one free variable."""
    A_free = sp.csr_matrix(np.array([[-1.0], [-1.0], [0.0]]))
    # rows: X11 - x = 0, X22 - x = 0, X12 = 1 (both off-diagonal slots carry 1/2)
    A_blk = sp.csr_matrix(np.array([[1.0, 0, 0, 0], [0, 0, 0, 1.0], [0, 0.5, 0.5, 0]]))
    return SdpInstance(1, [2], A_free, [A_blk], np.array([0.0, 0.0, 1.0]), np.array([1.0]), [np.zeros((2, 2))])


def trace_form():
    """The same problem in SDPA's primal form: min x s.t. x I - F0 PSD with F0 = [[0,-1],[-1,0]]."""
    return SdpInstance(0, [2], sp.csr_matrix((1, 0)), [sp.csr_matrix(np.array([[1.0, 0, 0, 1.0]]))],
                       np.array([1.0]), np.zeros(0), [np.array([[0.0, 1.0], [1.0, 0.0]])])


HAND_WRITTEN = """\
1
1
2
1
0 1 1 2 -1
1 1 1 1 1
1 1 2 2 1
"""

# The worked example shipped with the SDPA manual; its optimal value is 41.9.
SDPA_MANUAL = """\
"Example 1: mDim = 3, nBLOCK = 1, {2}"
   3  =  mDIM
   1  =  nBLOCK
   2  =  bLOCKsTRUCT
{48, -8, 20}
0 1 1 1 -11
0 1 2 2 23
1 1 1 1 10
1 1 1 2 4
2 1 2 2 -8
3 1 1 2 -8
3 1 2 2 -2
"""


def kkt(inst, sol):
    pres = np.max(np.abs(inst.apply(sol.x_free, sol.X_blocks) - inst.b), initial=0)
    dres_free = np.max(np.abs(inst.c_free - inst.A_free.T @ sol.y), initial=0)
    dres_blk = max((np.max(np.abs(C - S - Z)) for C, S, Z in zip(inst.C_blocks, inst.adjoint(sol.y), sol.Z_blocks)),
                   default=0)
    comp = sum(np.vdot(X, Z) for X, Z in zip(sol.X_blocks, sol.Z_blocks)) / sum(inst.block_dims)
    return pres, max(dres_free, dres_blk), comp


class TestSolve:
    def test_two_by_two(self):
        sol = solve(two_by_two())
        assert sol.status == OPTIMAL
        assert sol.x_free[0] == pytest.approx(1.0, abs=1e-8)
        assert sol.relative_gap <= 1e-8

    def test_trace_form_dual_is_the_sdpa_primal(self):
        sol = solve(trace_form())
        assert sol.status == OPTIMAL
        assert sol.primal_objective == pytest.approx(-1.0, abs=1e-8)
        assert -sol.y[0] == pytest.approx(1.0, abs=1e-8)

    def test_one_by_one_feasibility(self):
        inst = SdpInstance(0, [1], sp.csr_matrix((1, 0)), [sp.csr_matrix(np.array([[1.0]]))], np.array([5.0]),
                           np.zeros(0), [np.zeros((1, 1))])
        sol = solve(inst)
        assert sol.status == OPTIMAL
        assert sol.X_blocks[0][0, 0] == pytest.approx(5.0, abs=1e-8)

    def test_kkt_on_example1(self):
        _, cfg, _, inst, sol, _ = solved("ex1a", 4)
        assert sol.status == OPTIMAL
        pres, dres, comp = kkt(inst, sol)
        assert pres <= cfg.feas_tol
        assert dres <= cfg.feas_tol
        assert comp <= cfg.gap_tol * (1 + abs(sol.primal_objective))
        assert min(np.linalg.eigvalsh(X).min() for X in sol.X_blocks) >= -cfg.feas_tol
        assert sol.relative_gap <= cfg.gap_tol

    @pytest.mark.parametrize("name,k", [("ex1a", 4), ("ex1a", 6), ("ex2a", 6), ("ex2b", 4)])
    def test_weak_duality_at_every_iterate(self, name, k):
        sol = solved(name, k)[4]
        assert sol.history
        for rec in sol.history:
            assert rec["pobj"] >= rec["dobj"] - 1e-9

    def test_deterministic(self):
        inst = solved("ex2a", 4)[3]
        a = solve(inst)
        b = solve(inst)
        assert a.iterations == b.iterations
        assert a.primal_objective == b.primal_objective
        assert a.dual_objective == b.dual_objective
        assert np.array_equal(a.x_free, b.x_free)

    def test_max_iters_keeps_best_iterate(self):
        inst = solved("ex1a", 4)[3]
        sol = solve(inst, max_iters=3)
        assert sol.status == MAX_ITERS
        assert sol.iterations == 3
        assert np.isfinite(sol.primal_objective)

    def test_tolerance_range(self):
        with pytest.raises(ValueError):
            solve(two_by_two(), feas_tol=0.5)

    def test_verbose_log_columns(self, capsys):
        solve(two_by_two(), verbose=True)
        err = capsys.readouterr().err
        assert "iter" in err and "mu" in err and "p_res" in err and "d_res" in err and "gap" in err

    def test_matches_clarabel_on_example1(self):
        cp = pytest.importorskip("cvxpy")
        _, _, _, inst, sol, _ = solved("ex1a", 4)
        x = cp.Variable(inst.n_free)
        Xs = [cp.Variable((d, d), symmetric=True) for d in inst.block_dims]
        expr = inst.A_free @ x
        for A, X in zip(inst.A_blocks, Xs):
            expr = expr + A @ cp.vec(X, order="C")
        cons = [expr == inst.b] + [X >> 0 for X in Xs]
        prob = cp.Problem(cp.Minimize(inst.c_free @ x), cons)
        prob.solve(solver=cp.CLARABEL)
        assert prob.status == "optimal"
        assert sol.primal_objective == pytest.approx(prob.value, rel=1e-5)


class TestSdpa:
    def test_export_two_by_two_matches_hand_written_file(self):
        text = export_sdpa(trace_form()).decode()
        body = [ln for ln in text.splitlines() if not ln.startswith(('"', "*"))]
        assert body == HAND_WRITTEN.splitlines()

    def test_hand_written_file_solves_to_one(self):
        sol = solve(import_sdpa(HAND_WRITTEN))
        assert -sol.primal_objective == pytest.approx(1.0, abs=1e-8)

    def test_export_import_export_is_identity(self):
        once = export_sdpa(import_sdpa(HAND_WRITTEN))
        assert export_sdpa(import_sdpa(once)) == once
        body = [ln for ln in once.decode().splitlines() if not ln.startswith(('"', "*"))]
        assert body == HAND_WRITTEN.splitlines()

    def test_free_variables_survive_round_trip(self):
        inst = two_by_two()
        back = import_sdpa(export_sdpa(inst))
        assert back.n_free == 1
        a, b = solve(inst), solve(back)
        assert a.x_free[0] == pytest.approx(b.x_free[0], abs=1e-8)
        assert "free-split" in export_sdpa(inst).decode().splitlines()[1]

    def test_round_trip_on_example1(self):
        inst = solved("ex1a", 4)[3]
        back = import_sdpa(export_sdpa(inst))
        assert back.block_dims == inst.block_dims and back.n_free == inst.n_free
        assert np.array_equal(back.b, inst.b)
        assert abs(back.A_free - inst.A_free).max() == 0
        sol = solve(back)
        assert sol.primal_objective == pytest.approx(solved("ex1a", 4)[4].primal_objective, abs=1e-8)

    def test_export_is_byte_stable(self):
        inst = solved("ex2a", 4)[3]
        assert export_sdpa(inst) == export_sdpa(inst)

    def test_empty_constraint_set(self):
        inst = SdpInstance(0, [1], sp.csr_matrix((0, 0)), [sp.csr_matrix((0, 1))], np.zeros(0), np.zeros(0),
                           [np.ones((1, 1))])
        text = export_sdpa(inst).decode()
        body = [ln for ln in text.splitlines() if not ln.startswith(('"', "*"))]
        assert body[0] == "0"
        assert import_sdpa(text).m == 0

    def test_sdpa_manual_example(self):
        inst = import_sdpa(SDPA_MANUAL)
        sol = solve(inst)
        assert sol.status == OPTIMAL
        assert -sol.primal_objective == pytest.approx(-41.9, abs=1e-6)

    def test_sdpa_manual_example_against_cvxpy(self):
        cp = pytest.importorskip("cvxpy")
        # SDPA primal: min c.x s.t. sum F_i x_i - F0 PSD
        F0 = np.array([[-11.0, 0], [0, 23]])
        F = [np.array([[10.0, 4], [4, 0]]), np.array([[0.0, 0], [0, -8]]), np.array([[0.0, -8], [-8, -2]])]
        x = cp.Variable(3)
        prob = cp.Problem(cp.Minimize(np.array([48.0, -8, 20]) @ x), [sum(F[i] * x[i] for i in range(3)) - F0 >> 0])
        prob.solve(solver=cp.CLARABEL)
        ours = solve(import_sdpa(SDPA_MANUAL))
        assert prob.value == pytest.approx(-41.9, abs=1e-6)
        assert -ours.primal_objective == pytest.approx(prob.value, abs=1e-6)

    def test_malformed_block_count_names_line_2(self):
        bad = "1\n2\n2\n1\n1 1 1 1 1\n"
        with pytest.raises(SdpFormatError) as info:
            import_sdpa(bad)
        assert info.value.line == 2

    @pytest.mark.parametrize("text,line", [
        ("1\n1\n2\n1 2\n", 4),
        ("1\n1\n2\n1\n1 1 1 1\n", 5),
        ("1\n1\n2\n1\n1 1 3 1 1\n", 5),
        ("1\n1\n-2\n1\n1 1 1 2 1\n", 5),
        ("1\n1\n", 2),
    ])
    def test_parse_errors_report_lines(self, text, line):
        with pytest.raises(SdpFormatError) as info:
            import_sdpa(text)
        assert info.value.line == line
