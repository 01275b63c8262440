"""Solve block-diagonal SDPs in standard primal form.

Two interior-point backends sit behind one contract: Clarabel (homogeneous
embedding, so infeasibility is detected rather than looped on) for
problems whose KKT system fits in memory, and CVXOPT's Schur-complement
method for the larger ones.  For Clarabel the problem is passed over as

    minimize c . x   s.t.  A x = b,   svec(X_k) in PSD,   v >= 0

where ``svec`` scales off-diagonal Gram entries by sqrt(2) to match
Clarabel's triangle cone.  Everything the caller sees, including the
gap and residuals used for the status decision, is recomputed here from
the returned iterates instead of trusted from the backend.
"""

from __future__ import annotations

import enum
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .soscompile import SdpProblem, tri_pairs, tri_to_matrix

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
SQRT2 = np.sqrt(2.0)


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    NEAR_OPTIMAL = "NearOptimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    STALLED = "Stalled"

    def __str__(self) -> str:
        return self.value


class SolverFailure(RuntimeError):
    """Raised by consumers that need a solution and got a failure status."""

    def __init__(self, status: "Status", message: str = "", problem=None, ray=None):
        super().__init__(message or f"solver returned {status.value}")
        self.status = status
        self.problem = problem
        self.ray = ray


@dataclass
class SdpSolution:
    status: Status
    x: np.ndarray  # primal variables in SdpProblem layout
    y: np.ndarray  # equality multipliers
    blocks: list[np.ndarray]  # primal PSD blocks as full matrices
    dual_slacks: list[np.ndarray]  # S_k = C_k - sum_i y_i A_ik
    primal_objective: float
    dual_objective: float
    gap: float  # relative duality gap
    primal_residual: float
    dual_residual: float
    min_eig_primal: list[float]
    min_eig_dual: list[float]
    complementarity: float  # <X, S> summed over cones / total cone dimension
    iterations: int
    solve_time: float
    ray: np.ndarray | None = None  # Farkas ray when infeasible/unbounded
    backend_status: str = ""
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status in (Status.OPTIMAL, Status.NEAR_OPTIMAL)

    @property
    def objective(self) -> float:
        return self.primal_objective


def _svec_weights(m: int) -> np.ndarray:
    return np.array([1.0 if i == j else SQRT2 for i, j in tri_pairs(m)])


def dual_slacks(problem: SdpProblem, y: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """``S_k = C_k - sum_i y_i A_ik`` per block, and ``c - A^T y`` on the other variables.

    A reduced cost on an off-diagonal variable ``X[i, j]`` covers both
    triangles, so it is halved on the way into the matrix.
    """
    r = problem.c - problem.A.T @ y
    S = []
    for k, m in enumerate(problem.psd_blocks):
        v = r[problem.block_slice(k)].copy()
        v[_svec_weights(m) != 1.0] *= 0.5
        S.append(tri_to_matrix(v, m))
    return S, r[problem.n_psd_vars:]


def _min_eig(M: np.ndarray) -> float:
    if M.size == 0:
        return 0.0
    return float(np.linalg.eigvalsh(M)[0])


def assess(problem: SdpProblem, x: np.ndarray, y: np.ndarray) -> dict:
    """Objectives, residuals, cone violations and complementarity of a candidate pair."""
    pobj = float(problem.c @ x)
    dobj = float(problem.b @ y)
    bscale = 1.0 + float(np.max(np.abs(problem.b), initial=0.0))
    cscale = 1.0 + float(np.max(np.abs(problem.c), initial=0.0))
    pres = float(np.max(np.abs(problem.A @ x - problem.b), initial=0.0)) / bscale
    X = [tri_to_matrix(x[problem.block_slice(k)], m) for k, m in enumerate(problem.psd_blocks)]
    S, r_rest = dual_slacks(problem, y)
    r_free = r_rest[: problem.n_free]
    r_nn = r_rest[problem.n_free:]
    ms = [_min_eig(Sk) for Sk in S]
    dres = max(
        float(np.max(np.abs(r_free), initial=0.0)),
        float(np.max(-r_nn, initial=0.0)),
        max((max(0.0, -e) for e in ms), default=0.0),
    ) / cscale
    mx = [_min_eig(Xk) for Xk in X]
    v = x[problem.nonneg_slice()]
    inner = sum(float(np.sum(Xk * Sk)) for Xk, Sk in zip(X, S)) + float(v @ r_nn)
    ncone = sum(problem.psd_blocks) + problem.n_nonneg
    gap = abs(pobj - dobj) / max(1.0, abs(pobj), abs(dobj))
    return {
        "pobj": pobj,
        "dobj": dobj,
        "gap": gap,
        "pres": pres,
        "dres": dres,
        "X": X,
        "S": S,
        "min_eig_primal": mx,
        "min_eig_dual": ms,
        "complementarity": inner / max(ncone, 1),
    }


def _to_clarabel(problem: SdpProblem):
    import clarabel

    nv = problem.n_vars
    cones = [clarabel.ZeroConeT(problem.n_rows)]
    diag = []
    for k, m in enumerate(problem.psd_blocks):
        diag.append(-_svec_weights(m))
        cones.append(clarabel.PSDTriangleConeT(m))
    cone_cols = np.r_[
        np.arange(problem.n_psd_vars), np.arange(problem.nonneg_slice().start, nv)
    ].astype(np.int64)
    if problem.n_nonneg:
        diag.append(-np.ones(problem.n_nonneg))
        cones.append(clarabel.NonnegativeConeT(problem.n_nonneg))
    vals = np.concatenate(diag) if diag else np.zeros(0)
    K = sp.csc_matrix((vals, (np.arange(len(vals)), cone_cols)), shape=(len(vals), nv))
    A = sp.vstack([problem.A, K]).tocsc()
    b = np.concatenate([problem.b, np.zeros(len(vals))])
    return sp.csc_matrix((nv, nv)), problem.c.copy(), A, b, cones


# Backend settings tried in order when an attempt misses the tolerance on
# a small problem.  Problems whose dual optimum is not attained (the
# 2x2 contract example) are sensitive to equilibration and regularization.
FALLBACKS = (
    {},
    {"equilibrate_enable": False},
    {"static_regularization_enable": False},
)
RETRY_MAX_VARS = 5000


def _attempt(problem, tol, near_tol, max_iters, verbose, overrides):
    import clarabel

    P, q, A, b, cones = _to_clarabel(problem)
    st = clarabel.DefaultSettings()
    st.verbose = verbose
    st.max_iter = max_iters
    # the backend stops on its own scaled measures; ours are checked after
    inner = 0.1 * tol
    st.tol_gap_rel = inner
    st.tol_gap_abs = inner
    st.tol_feas = inner
    st.tol_ktratio = 1e-8
    st.reduced_tol_gap_rel = near_tol
    st.reduced_tol_gap_abs = near_tol
    st.reduced_tol_feas = near_tol
    for k, v in overrides.items():
        setattr(st, k, v)
    t0 = time.perf_counter()
    res = clarabel.DefaultSolver(P, q, A, b, cones, st).solve()
    elapsed = time.perf_counter() - t0
    bstat = str(res.status).split(".")[-1]
    iters = int(res.iterations)
    m = problem.n_rows
    z = np.asarray(res.z, dtype=float)

    if "PrimalInfeasible" in bstat:
        ray = z[:m].copy()
        s = float(problem.b @ ray)
        ray = ray / s if s != 0 else ray
        return _failure(problem, Status.INFEASIBLE, ray, elapsed, iters, bstat), 0.0
    if "DualInfeasible" in bstat:
        ray = np.asarray(res.x, dtype=float)
        return _failure(problem, Status.UNBOUNDED, ray, elapsed, iters, bstat), 0.0

    x = np.asarray(res.x, dtype=float)
    y = -z[:m]
    sol = _finish(problem, x, y, tol, near_tol, elapsed, iters, bstat,
                  {"backend": "clarabel", "settings": dict(overrides)})
    return sol, sol.info["measure"]


def _finish(problem, x, y, tol, near_tol, elapsed, iters, bstat, info) -> SdpSolution:
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        out = _failure(problem, Status.STALLED, None, elapsed, iters, bstat)
        out.info = dict(info, measure=np.inf)
        return out
    a = assess(problem, x, y)
    worst_cone = max([0.0] + [-e for e in a["min_eig_primal"]])
    xscale = max([1.0] + [float(np.max(np.abs(X))) for X in a["X"] if X.size])
    measures = max(a["gap"], a["pres"], worst_cone / xscale)
    if measures <= tol:
        status = Status.OPTIMAL
    elif measures <= near_tol and a["dres"] <= near_tol:
        status = Status.NEAR_OPTIMAL
    else:
        status = Status.STALLED
    return SdpSolution(
        status=status,
        x=x,
        y=y,
        blocks=a["X"],
        dual_slacks=a["S"],
        primal_objective=a["pobj"],
        dual_objective=a["dobj"],
        gap=a["gap"],
        primal_residual=a["pres"],
        dual_residual=a["dres"],
        min_eig_primal=a["min_eig_primal"],
        min_eig_dual=a["min_eig_dual"],
        complementarity=a["complementarity"],
        iterations=iters,
        solve_time=elapsed,
        backend_status=bstat,
        info=dict(info, measure=measures),
    )


def solve(
    problem: SdpProblem,
    tol: float = DEFAULT_TOL,
    max_iters: int = 400,
    near_tol: float = 1e-5,
    verbose: bool = False,
    backend: str = "auto",
) -> SdpSolution:
    """Solve ``problem`` to relative duality gap ``tol``.

    ``Optimal`` requires gap, primal residual and PSD violation all within
    ``tol``; iterates that stop short of that but are within ``near_tol``
    are ``NearOptimal``; anything worse is ``Stalled``.  Infeasibility is
    reported with a Farkas ray ``y`` in :attr:`SdpSolution.ray`, normalized
    so ``b . y = 1`` while ``A^T y`` is nonpositive on every cone and zero
    on free variables.

    Rows with no entries are dropped first (``0 = 0``) or reported
    infeasible on the spot (``0 = b != 0``).  ``backend="auto"`` uses
    Clarabel unless its KKT system would be too large for memory, in which
    case CVXOPT's Schur-complement method is used.
    """
    reduced, keep, trivial = _drop_empty_rows(problem)
    if trivial is not None:
        ray = np.zeros(problem.n_rows)
        ray[trivial] = 1.0 / problem.b[trivial]
        return _failure(problem, Status.INFEASIBLE, ray, 0.0, 0, "presolve: 0 = b row")
    if backend == "auto":
        backend = "clarabel" if _kkt_weight(reduced) <= CLARABEL_MAX_WEIGHT else "cvxopt"
    if backend == "cvxopt":
        best = _attempt_cvxopt(reduced, tol, near_tol, max_iters, verbose)
        total = best.solve_time
    elif backend == "clarabel":
        schedule = FALLBACKS if reduced.n_vars <= RETRY_MAX_VARS else FALLBACKS[:1]
        best, best_measure, total = None, np.inf, 0.0
        for overrides in schedule:
            sol, measure = _attempt(reduced, tol, near_tol, max_iters, verbose, overrides)
            total += sol.solve_time
            if sol.status in (Status.INFEASIBLE, Status.UNBOUNDED, Status.OPTIMAL):
                best = sol
                break
            if best is None or measure < best_measure:
                best, best_measure = sol, measure
    else:
        raise ValueError(f"unknown backend {backend!r}")
    best.solve_time = total
    if keep is not None:
        best = _expand_rows(problem, best, keep)
    log.info(
        "sdp %s (%s) in %d iters, %.1fs: pobj=%.10g dobj=%.10g gap=%.2e pres=%.2e",
        best.status.value, best.backend_status, best.iterations, total,
        best.primal_objective, best.dual_objective, best.gap, best.primal_residual,
    )
    return best


def _drop_empty_rows(problem: SdpProblem):
    A = problem.A.copy()
    A.eliminate_zeros()
    empty = np.diff(A.indptr) == 0
    if not np.any(empty):
        return problem, None, None
    bad = np.flatnonzero(empty & (problem.b != 0))
    if bad.size:
        return problem, None, int(bad[0])
    keep = np.flatnonzero(~empty)
    prov = tuple(problem.provenance[i] for i in keep) if problem.provenance else ()
    reduced = SdpProblem(
        problem.psd_blocks, problem.n_free, problem.n_nonneg, A[keep], problem.b[keep],
        problem.c, prov, problem.row_scale[keep], dict(problem.meta),
    )
    return reduced, keep, None


def _expand_rows(problem: SdpProblem, sol: SdpSolution, keep: np.ndarray) -> SdpSolution:
    def grow(v):
        if v is None or len(v) != len(keep):
            return v
        out = np.zeros(problem.n_rows) if np.all(np.isfinite(v)) else np.full(problem.n_rows, np.nan)
        out[keep] = v
        return out

    sol.y = grow(sol.y)
    if sol.status is Status.INFEASIBLE:
        sol.ray = grow(sol.ray)
    if sol.y is not None and len(sol.y) != problem.n_rows:
        sol.y = np.full(problem.n_rows, np.nan)
    return sol


# Beyond this many KKT entries from the PSD scaling blocks (sum of squared
# triangle sizes) Clarabel's factorization no longer fits in a few GB.
CLARABEL_MAX_WEIGHT = 2.0e7


def _kkt_weight(problem: SdpProblem) -> float:
    return float(sum((m * (m + 1) // 2) ** 2 for m in problem.psd_blocks))


def _failure(problem, status, ray, elapsed, iters, bstat) -> SdpSolution:
    nan = float("nan")
    return SdpSolution(
        status=status,
        x=np.full(problem.n_vars, nan),
        y=np.full(problem.n_rows, nan),
        blocks=[],
        dual_slacks=[],
        primal_objective=nan,
        dual_objective=nan,
        gap=nan,
        primal_residual=nan,
        dual_residual=nan,
        min_eig_primal=[],
        min_eig_dual=[],
        complementarity=nan,
        iterations=iters,
        solve_time=elapsed,
        ray=ray,
        backend_status=bstat,
    )


# -- CVXOPT backend ----------------------------------------------------------
#
# CVXOPT is handed the dual of the program,
#
#     maximize b . y   s.t.  C_k - sum_i y_i A_ik PSD,  c_free = F^T y,  c_nn >= G^T y,
#
# so its Newton system is the Schur complement over the equality rows.  That
# keeps memory at O(rows^2) where the primal KKT system of the default
# backend grows with the square of the largest Gram triangle.


def _sym_columns(problem: SdpProblem, mat: sp.csc_matrix, k: int):
    """COO triplets of vec(A_ik) (column-major, both triangles) for block ``k``."""
    m = problem.psd_blocks[k]
    pairs = np.array(tri_pairs(m), dtype=np.int64).reshape(-1, 2)
    coo = sp.coo_matrix(mat)
    i, j = pairs[coo.row, 0], pairs[coo.row, 1]
    diag = i == j
    half = np.where(diag, coo.data, 0.5 * coo.data)
    rows = np.concatenate([i + j * m, (j + i * m)[~diag]])
    cols = np.concatenate([coo.col, coo.col[~diag]])
    vals = np.concatenate([half, half[~diag]])
    return rows, cols, vals


def _to_cvxopt(problem: SdpProblem):
    from cvxopt import matrix, spmatrix

    m = problem.n_rows
    AT = sp.csc_matrix(problem.A.T)
    c = problem.c
    Gs, hs = [], []
    for k, size in enumerate(problem.psd_blocks):
        sl = problem.block_slice(k)
        rows, cols, vals = _sym_columns(problem, AT[sl, :], k)
        Gs.append(spmatrix(vals.tolist(), rows.tolist(), cols.tolist(), (size * size, m)))
        ck = c[sl].copy()
        ck[_svec_weights(size) != 1.0] *= 0.5
        hs.append(matrix(tri_to_matrix(ck, size)))
    kw = {"c": matrix(-problem.b), "Gs": Gs, "hs": hs}
    if problem.n_nonneg:
        G = sp.coo_matrix(AT[problem.nonneg_slice(), :])
        kw["Gl"] = spmatrix(G.data.tolist(), G.row.tolist(), G.col.tolist(), (problem.n_nonneg, m))
        kw["hl"] = matrix(c[problem.nonneg_slice()])
    if problem.n_free:
        F = sp.coo_matrix(AT[problem.free_slice(), :])
        kw["A"] = spmatrix(F.data.tolist(), F.row.tolist(), F.col.tolist(), (problem.n_free, m))
        kw["b"] = matrix(c[problem.free_slice()])
    return kw


def _tri(Z: np.ndarray) -> np.ndarray:
    Z = 0.5 * (Z + Z.T)
    pairs = np.array(tri_pairs(Z.shape[0]), dtype=np.int64).reshape(-1, 2)
    return Z[pairs[:, 0], pairs[:, 1]].copy()


def _attempt_cvxopt(problem, tol, near_tol, max_iters, verbose):
    from cvxopt import solvers

    options = {
        "show_progress": verbose,
        "maxiters": max_iters,
        "abstol": 1e-12,
        "reltol": 0.1 * tol,
        "feastol": 0.1 * tol,
        "refinement": 2,
    }
    t0 = time.perf_counter()
    try:
        res = solvers.sdp(options=options, **_to_cvxopt(problem))
    except (ArithmeticError, ValueError) as exc:
        elapsed = time.perf_counter() - t0
        log.warning("cvxopt broke down: %s", exc)
        return _failure(problem, Status.STALLED, None, elapsed, 0, f"error: {exc}")
    elapsed = time.perf_counter() - t0
    bstat = res["status"]
    iters = int(res.get("iterations", 0) or 0)

    def arr(v) -> np.ndarray:
        return np.zeros(0) if v is None else np.array(v).ravel()

    if bstat == "dual infeasible":
        # a ray of cvxopt's primal, i.e. of our dual
        ray = arr(res["x"])
        s = float(problem.b @ ray)
        return _failure(problem, Status.INFEASIBLE, ray / s if s else ray, elapsed, iters, bstat)
    if bstat == "primal infeasible":
        return _failure(problem, Status.UNBOUNDED, None, elapsed, iters, bstat)
    x = np.zeros(problem.n_vars)
    for k, Z in enumerate(res["zs"] or []):
        x[problem.block_slice(k)] = _tri(np.array(Z))
    if problem.n_nonneg:
        x[problem.nonneg_slice()] = arr(res["zl"])
    if problem.n_free:
        x[problem.free_slice()] = arr(res["y"])
    y = arr(res["x"])
    return _finish(problem, x, y, tol, near_tol, elapsed, iters, bstat, {"backend": "cvxopt"})


def solution_to_dict(sol: SdpSolution) -> dict:
    def num(v):
        return None if v is None or not np.isfinite(v) else float(v)

    def vec(a):
        return None if a is None else [num(t) for t in np.asarray(a, dtype=float)]

    return {
        "status": sol.status.value,
        "backend_status": sol.backend_status,
        "primal_objective": num(sol.primal_objective),
        "dual_objective": num(sol.dual_objective),
        "gap": num(sol.gap),
        "primal_residual": num(sol.primal_residual),
        "dual_residual": num(sol.dual_residual),
        "min_eig_primal": [float(e) for e in sol.min_eig_primal],
        "min_eig_dual": [float(e) for e in sol.min_eig_dual],
        "complementarity": num(sol.complementarity),
        "iterations": sol.iterations,
        "x": vec(sol.x),
        "y": vec(sol.y),
        "ray": vec(sol.ray),
    }


def write_solution(sol: SdpSolution, path) -> None:
    """Status, objectives and full variable dumps as JSON."""
    Path(path).write_text(json.dumps(solution_to_dict(sol), indent=1) + "\n")
