"""Compile the ROA sum-of-squares program into a block-diagonal SDP.

Decision polynomials:

* ``J``  - SOS, degree ``d``; the objective integrates it over the box.
* ``s``  - SOS multiplier of ``R^2 - |x|^2`` in the decrease identity.
* ``p``  - free multiplier of ``R^2 - |x|^2`` in the boundary identity.
* ``k1`` - SOS, ``k1 = -grad(J).f - lam (1 - J) |x|^(2 beta) - s (R^2 - |x|^2)``.
* ``k2`` - SOS, ``k2 = (J - 1) - p (R^2 - |x|^2)``.

Every SOS polynomial is parameterized by a Gram matrix over a half-degree
monomial basis, and each identity is matched coefficient by coefficient,
producing one equality row per monomial.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .dynamics import VectorField
from .polyalg import (
    Monomial,
    Poly,
    basis_size,
    box_moments,
    monomial_basis,
    norm_power,
)

ROLES = ("J", "k1", "s", "k2", "p")


class CompileError(ValueError):
    pass


def _even_ceil(k: int) -> int:
    return k + (k % 2)


@dataclass(frozen=True)
class DegreePlan:
    d: int
    deg_J: int
    deg_k1: int
    deg_s: int
    deg_k2: int
    deg_p: int
    nvars: int

    def half(self, role: str) -> int:
        return {"J": self.deg_J, "k1": self.deg_k1, "s": self.deg_s, "k2": self.deg_k2}[role] // 2

    def gram_size(self, role: str) -> int:
        return basis_size(self.nvars, self.half(role))


def degree_plan(d: int, f_degree: int, beta: int, nvars: int) -> DegreePlan:
    """Smallest even degrees that make both identities exactly matchable."""
    if d < 2 or d % 2:
        hint = f"; use d={_even_ceil(d)}" if d % 2 and d > 0 else ""
        raise CompileError(f"degree d must be even and >= 2, got {d}{hint}")
    deg_k1 = _even_ceil(max(d - 1 + f_degree, d + 2 * beta))
    deg_k2 = _even_ceil(d)
    return DegreePlan(
        d=d,
        deg_J=d,
        deg_k1=deg_k1,
        deg_s=deg_k1 - 2,
        deg_k2=deg_k2,
        deg_p=deg_k2 - 2,
        nvars=nvars,
    )


@dataclass(frozen=True)
class GramBlock:
    """Gram parameterization ``Z^T Q Z`` over ``basis`` (no PSD constraint for ``p``)."""

    role: str
    basis: tuple[Monomial, ...]

    @property
    def size(self) -> int:
        return len(self.basis)

    @property
    def n_entries(self) -> int:
        """Number of upper-triangle variables (or free coefficients for ``p``)."""
        if self.role == "p":
            return self.size
        return self.size * (self.size + 1) // 2


# At the origin the decrease identity reads k1(0) = -s(0) R^2.  Both sides
# are SOS, so k1(0) = s(0) = 0 and the constant row of either Gram matrix
# vanishes on the whole feasible set.  Leaving the constant monomial out of
# those bases removes that face exactly and restores strict feasibility.
ZERO_AT_ORIGIN = ("k1", "s")


def gram_basis(role: str, n: int, half: int) -> tuple[Monomial, ...]:
    basis = monomial_basis(n, half)
    if role in ZERO_AT_ORIGIN:
        basis = basis[1:]
    return tuple(basis)


def tri_pairs(m: int) -> list[tuple[int, int]]:
    """Upper-triangle index pairs in column-major order: (0,0),(0,1),(1,1),(0,2),..."""
    return [(i, j) for j in range(m) for i in range(j + 1)]


def tri_to_matrix(v: np.ndarray, m: int) -> np.ndarray:
    Q = np.zeros((m, m))
    iu = np.array(tri_pairs(m), dtype=np.int64).reshape(-1, 2)
    Q[iu[:, 0], iu[:, 1]] = v
    Q[iu[:, 1], iu[:, 0]] = v
    return Q


def matrix_to_tri(Q: np.ndarray) -> np.ndarray:
    m = Q.shape[0]
    iu = np.array(tri_pairs(m), dtype=np.int64).reshape(-1, 2)
    return Q[iu[:, 0], iu[:, 1]].copy()


def gram_map(basis: Sequence[Monomial], targets: Sequence[Monomial]) -> sp.csr_matrix:
    """Linear map from upper-triangle Gram entries to coefficients of ``Z^T Q Z``.

    Row ``r`` gives the coefficient of ``targets[r]``; an off-diagonal entry
    ``Q[a, b]`` contributes twice because ``Q`` is symmetric.
    """
    tindex = {m: r for r, m in enumerate(targets)}
    rows, cols, vals = [], [], []
    for k, (i, j) in enumerate(tri_pairs(len(basis))):
        m = tuple(a + b for a, b in zip(basis[i], basis[j]))
        r = tindex.get(m)
        if r is None:
            raise CompileError(f"Gram product monomial {m} missing from the target list")
        rows.append(r)
        cols.append(k)
        vals.append(1.0 if i == j else 2.0)
    return sp.csr_matrix(
        (vals, (rows, cols)), shape=(len(targets), len(basis) * (len(basis) + 1) // 2)
    )


def gram_poly(Q: np.ndarray, basis: Sequence[Monomial], nvars: int) -> Poly:
    """Expand ``Z^T Q Z``."""
    terms: dict[Monomial, float] = {}
    m = len(basis)
    for i in range(m):
        for j in range(m):
            if Q[i, j] != 0.0:
                mono = tuple(a + b for a, b in zip(basis[i], basis[j]))
                terms[mono] = terms.get(mono, 0.0) + Q[i, j]
    return Poly(terms, nvars)


def poly_operator(
    sources: Sequence[Monomial], targets: Sequence[Monomial], image
) -> sp.csr_matrix:
    """Matrix of a linear polynomial operator in monomial coordinates.

    ``image(m)`` returns the Poly that monomial ``m`` is mapped to; column
    ``k`` of the result holds the coefficients of ``image(sources[k])``.
    """
    tindex = {m: r for r, m in enumerate(targets)}
    rows, cols, vals = [], [], []
    for k, m in enumerate(sources):
        for mono, c in image(m).items():
            r = tindex.get(mono)
            if r is None:
                raise CompileError(f"operator image monomial {mono} outside target degree")
            rows.append(r)
            cols.append(k)
            vals.append(c)
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(targets), len(sources)))


@dataclass(frozen=True)
class RowTag:
    """Which identity and monomial an equality row matches."""

    identity: str  # "k1", "k2" or "J0"
    monomial: Monomial


@dataclass
class SdpProblem:
    """Block-diagonal conic program in standard primal form.

    Variables are laid out as ``[PSD block entries..., free..., nonneg...]``;
    each PSD block contributes its upper triangle in column-major order with
    variable ``(i, j)`` equal to ``X[i, j]``.  The program is::

        minimize    c . x
        subject to  A x = b,   X_k PSD,   nonneg >= 0
    """

    psd_blocks: tuple[int, ...]
    n_free: int
    n_nonneg: int
    A: sp.csr_matrix
    b: np.ndarray
    c: np.ndarray
    provenance: tuple = ()
    row_scale: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A = sp.csr_matrix(self.A)
        self.b = np.asarray(self.b, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        nv = self.n_vars
        if self.A.shape[1] != nv or self.c.shape != (nv,):
            raise ValueError(
                f"variable count mismatch: layout has {nv}, A has {self.A.shape[1]}, "
                f"c has {self.c.shape}"
            )
        if self.A.shape[0] != self.b.shape[0]:
            raise ValueError("A and b disagree on the number of rows")
        if self.provenance and len(self.provenance) != self.n_rows:
            raise ValueError("provenance must tag every equality row")
        if self.row_scale is None:
            self.row_scale = np.ones(self.n_rows)

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    @property
    def block_offsets(self) -> list[int]:
        offs, k = [], 0
        for m in self.psd_blocks:
            offs.append(k)
            k += m * (m + 1) // 2
        offs.append(k)
        return offs

    @property
    def n_psd_vars(self) -> int:
        return self.block_offsets[-1]

    @property
    def n_vars(self) -> int:
        return self.n_psd_vars + self.n_free + self.n_nonneg

    def free_slice(self) -> slice:
        return slice(self.n_psd_vars, self.n_psd_vars + self.n_free)

    def nonneg_slice(self) -> slice:
        return slice(self.n_psd_vars + self.n_free, self.n_vars)

    def block_slice(self, k: int) -> slice:
        offs = self.block_offsets
        return slice(offs[k], offs[k + 1])

    def summary(self) -> dict:
        return {
            "psd_blocks": list(self.psd_blocks),
            "n_free": self.n_free,
            "n_nonneg": self.n_nonneg,
            "n_rows": self.n_rows,
            "n_vars": self.n_vars,
            "nnz": int(self.A.nnz),
        }


@dataclass(frozen=True)
class CompiledProgram:
    """An :class:`SdpProblem` plus what is needed to read polynomials back out."""

    problem: SdpProblem
    plan: DegreePlan
    blocks: tuple[GramBlock, ...]  # J, k1, s, k2 (PSD) then p (free)
    f: VectorField
    lam: float
    beta: int
    R: float
    box: tuple[tuple[float, float], ...]

    def block(self, role: str) -> GramBlock:
        for b in self.blocks:
            if b.role == role:
                return b
        raise KeyError(role)


def sos_constraint(
    target_matrix: sp.spmatrix,
    target_const: np.ndarray,
    monomials: Sequence[Monomial],
    block: GramBlock,
) -> tuple[sp.csr_matrix, sp.csr_matrix, np.ndarray]:
    """Coefficient-matching rows for ``target(u) == Z^T Q Z``.

    The target is an affine polynomial in unknowns ``u``: its coefficient on
    ``monomials[r]`` is ``target_matrix[r] @ u + target_const[r]``.  Returns
    ``(G, T, rhs)`` so that the rows read ``G q - T u = rhs`` with ``q`` the
    upper-triangle Gram entries.  Rows are emitted for every monomial in the
    list, which must cover the span of the Gram basis.  A touched monomial
    of higher degree than the basis can reach is an error; a low-degree one
    the basis skips (see ``ZERO_AT_ORIGIN``) just forces its coefficient to 0.
    """
    if block.role == "p":
        raise CompileError("the free multiplier has no Gram matrix")
    top = 2 * max(sum(m) for m in block.basis)
    T = sp.csr_matrix(target_matrix)
    T.eliminate_zeros()
    const = np.asarray(target_const, dtype=float)
    touched = np.flatnonzero(np.abs(T).sum(axis=1).A1 + np.abs(const) > 0)
    for r in touched:
        if sum(monomials[r]) > top:
            raise CompileError(
                f"Gram basis of block {block.role!r} (max half-degree {top // 2}) "
                f"cannot represent monomial {monomials[r]} of degree {sum(monomials[r])}"
            )
    G = gram_map(block.basis, monomials)
    return G, T, const


def box_corner_norm(box) -> float:
    corners = np.array(np.meshgrid(*[list(b) for b in box], indexing="ij")).reshape(len(box), -1).T
    return float(np.max(np.linalg.norm(corners, axis=1)))


def _check_box_in_ball(box, R: float) -> None:
    # closed ball: the benchmark boxes have their corners exactly on the sphere
    worst = box_corner_norm(box)
    if worst > R * (1 + 1e-12):
        raise CompileError(
            f"box is not contained in the ball of radius R={R}: corner norm {worst:.6g}"
        )


def compile_program(
    f: VectorField,
    d: int,
    lam: float,
    beta: int,
    R: float,
    box: Sequence[tuple[float, float]],
    check_box: bool = True,
) -> CompiledProgram:
    """Build the SDP for degree ``d``.

    Variable blocks: Gram matrices of J, k1, s, k2, the free coefficients of
    p, and one nonnegative slack carrying ``J(0) >= 0``.
    """
    n = f.nvars
    box = tuple((float(a), float(b)) for a, b in box)
    if len(box) != n:
        raise CompileError(f"box has {len(box)} coordinates, field has {n}")
    if not lam > 0:
        raise CompileError(f"lambda must be positive, got {lam}")
    if int(beta) != beta or beta < 1:
        raise CompileError(f"beta must be a positive integer, got {beta}")
    if not R > 0:
        raise CompileError(f"R must be positive, got {R}")
    if check_box:
        _check_box_in_ball(box, R)
    beta = int(beta)
    plan = degree_plan(d, f.degree, beta, n)

    blocks = tuple(
        GramBlock(role, gram_basis(role, n, plan.half(role))) for role in ("J", "k1", "s", "k2")
    ) + (GramBlock("p", tuple(monomial_basis(n, plan.deg_p))),)
    bJ, bk1, bs, bk2, bp = blocks

    mono_J = monomial_basis(n, plan.deg_J)
    mono_k1 = monomial_basis(n, plan.deg_k1)
    mono_k2 = monomial_basis(n, plan.deg_k2)
    mono_s = monomial_basis(n, plan.deg_s)

    npow = norm_power(n, beta)
    ball = Poly.constant(R * R, n) - norm_power(n, 1)

    # coefficient maps: Gram entries -> polynomial coefficients
    GJ = gram_map(bJ.basis, mono_J)
    Gs = gram_map(bs.basis, mono_s)

    def decrease_image(m: Monomial) -> Poly:
        xm = Poly({m: 1.0}, n)
        # J-linear part of -grad(J).f - lam (1 - J)|x|^2b
        out = Poly.zero(n)
        for dxi, fi in zip(xm.gradient(), f.components):
            out = out - dxi * fi
        return out + (xm * npow).scale(lam)

    L_J_k1 = poly_operator(mono_J, mono_k1, decrease_image)
    L_s_k1 = poly_operator(mono_s, mono_k1, lambda m: -(Poly({m: 1.0}, n) * ball))
    const_k1 = (npow.scale(-lam)).coefficient_vector(mono_k1)

    L_J_k2 = poly_operator(mono_J, mono_k2, lambda m: Poly({m: 1.0}, n))
    L_p_k2 = poly_operator(bp.basis, mono_k2, lambda m: -(Poly({m: 1.0}, n) * ball))
    const_k2 = Poly.constant(-1.0, n).coefficient_vector(mono_k2)

    sizes = [b.size for b in blocks[:4]]
    ntri = [b.n_entries for b in blocks[:4]]
    offs = np.concatenate([[0], np.cumsum(ntri)])
    n_psd = int(offs[-1])
    n_free = bp.size
    n_vars = n_psd + n_free + 1

    def place(mat: sp.spmatrix, start: int) -> sp.csr_matrix:
        mat = sp.coo_matrix(mat)
        return sp.csr_matrix(
            (mat.data, (mat.row, mat.col + start)), shape=(mat.shape[0], n_vars)
        )

    # k1 rows: Gram(k1) - [L_J GJ qJ + L_s Gs qs] = const_k1
    Gk1, T1, rhs1 = sos_constraint(
        sp.hstack([L_J_k1 @ GJ, L_s_k1 @ Gs]).tocsr(), const_k1, mono_k1, bk1
    )
    A_k1 = (
        place(Gk1, offs[1])
        - place(T1[:, : ntri[0]], offs[0])
        - place(T1[:, ntri[0]:], offs[2])
    )

    # k2 rows: Gram(k2) - [GJ qJ + L_p p] = const_k2
    Gk2, T2, rhs2 = sos_constraint(
        sp.hstack([L_J_k2 @ GJ, L_p_k2]).tocsr(), const_k2, mono_k2, bk2
    )
    A_k2 = (
        place(Gk2, offs[3])
        - place(T2[:, : ntri[0]], offs[0])
        - place(T2[:, ntri[0]:], n_psd)
    )

    # J(0) >= 0: constant coefficient of J equals a nonnegative slack
    A_j0 = place(GJ[0:1, :], offs[0]) - place(sp.csr_matrix(([1.0], ([0], [0])), shape=(1, 1)), n_vars - 1)
    rhs_j0 = np.zeros(1)

    A = sp.vstack([A_k1, A_k2, A_j0]).tocsr()
    b = np.concatenate([rhs1, rhs2, rhs_j0])
    A.eliminate_zeros()

    provenance = tuple(
        [RowTag("k1", m) for m in mono_k1]
        + [RowTag("k2", m) for m in mono_k2]
        + [RowTag("J0", mono_J[0])]
    )

    # scale rows so the largest entry is 1
    row_max = np.maximum(abs(A).max(axis=1).toarray().ravel(), np.abs(b))
    row_max[row_max == 0] = 1.0
    Dinv = sp.diags(1.0 / row_max)
    A = (Dinv @ A).tocsr()
    b = b / row_max

    alpha = box_moments(plan.deg_J, box)
    c = np.zeros(n_vars)
    c[offs[0]: offs[1]] = GJ.T @ alpha.entries

    problem = SdpProblem(
        psd_blocks=tuple(sizes),
        n_free=n_free,
        n_nonneg=1,
        A=A,
        b=b,
        c=c,
        provenance=provenance,
        row_scale=row_max,
        meta={
            "roles": ["J", "k1", "s", "k2"],
            "free_role": "p",
            "nonneg_role": "J0",
            "degrees": {
                "J": plan.deg_J,
                "k1": plan.deg_k1,
                "s": plan.deg_s,
                "k2": plan.deg_k2,
                "p": plan.deg_p,
            },
        },
    )
    return CompiledProgram(problem, plan, blocks, f, float(lam), beta, float(R), box)


# -- certificate extraction -------------------------------------------------


class InfeasibleProgram(RuntimeError):
    """The SDP solver did not return a usable point; carries its status."""

    def __init__(self, status, message: str = "", problem: SdpProblem | None = None, ray=None):
        super().__init__(message or f"SOS program not solved: {status}")
        self.status = status
        self.problem = problem
        self.ray = ray


@dataclass
class SosCertificate:
    """Polynomials recovered from a solved program, with their self-checks.

    ``residuals`` holds, per identity, the largest coefficient mismatch
    between the Gram expansion and the symbolic right-hand side, and the
    size of the terms it is measured against.
    """

    J: Poly
    s: Poly
    p: Poly
    k1: Poly
    k2: Poly
    objective: float
    residuals: dict
    gram_min_eig: dict
    J0: float

    def identity_ok(self, rel: float = 1e-6) -> bool:
        return all(r["abs"] <= rel * max(1.0, r["scale"]) for r in self.residuals.values())

    def polys(self) -> dict[str, Poly]:
        return {"J": self.J, "s": self.s, "p": self.p, "k1": self.k1, "k2": self.k2}


def identity_residuals(
    J: Poly, s: Poly, p: Poly, k1: Poly, k2: Poly, f, lam: float, beta: int, R: float
) -> dict:
    """Coefficient mismatch of both identities, recomputed symbolically."""
    n = J.nvars
    npow = norm_power(n, beta)
    ball = Poly.constant(R * R, n) - norm_power(n, 1)
    parts1 = [
        -_lie(J, f),
        (Poly.constant(1.0, n) - J) * npow.scale(-lam),
        -(s * ball),
    ]
    parts2 = [J - 1.0, -(p * ball)]
    out = {}
    for name, k, parts in (("k1", k1, parts1), ("k2", k2, parts2)):
        rhs = parts[0]
        for q in parts[1:]:
            rhs = rhs + q
        diff = _exact_diff(k, rhs)
        # J is O(1) by construction; the floor keeps a vanishing identity
        # (J == 1, k1 == 0) from turning round-off into a large ratio
        scale = max([1.0, k.max_abs_coefficient()] + [q.max_abs_coefficient() for q in parts])
        out[name] = {"abs": diff, "scale": scale, "rel": diff / scale}
    return out


def _lie(J: Poly, f) -> Poly:
    out = Poly.zero(J.nvars)
    for g, fi in zip(J.gradient(), f.components):
        out = out + g * fi
    return out


def _exact_diff(a: Poly, b: Poly) -> float:
    keys = set(a.terms) | set(b.terms)
    return max((abs(a.coefficient(m) - b.coefficient(m)) for m in keys), default=0.0)


def extract_certificate(program: CompiledProgram, solution) -> SosCertificate:
    """Rebuild every decision polynomial from a solved program.

    Raises :class:`InfeasibleProgram` unless the solver reports Optimal or
    NearOptimal.
    """
    if not solution.ok:
        raise InfeasibleProgram(
            solution.status, problem=program.problem, ray=getattr(solution, "ray", None)
        )
    prob = program.problem
    n = program.f.nvars
    x = solution.x
    grams = {}
    polys = {}
    for k, role in enumerate(("J", "k1", "s", "k2")):
        blk = program.block(role)
        Q = tri_to_matrix(x[prob.block_slice(k)], blk.size)
        grams[role] = float(np.linalg.eigvalsh(Q)[0])
        polys[role] = gram_poly(Q, blk.basis, n)
    bp = program.block("p")
    polys["p"] = Poly(dict(zip(bp.basis, x[prob.free_slice()])), n)
    res = identity_residuals(
        polys["J"], polys["s"], polys["p"], polys["k1"], polys["k2"],
        program.f, program.lam, program.beta, program.R,
    )
    return SosCertificate(
        J=polys["J"],
        s=polys["s"],
        p=polys["p"],
        k1=polys["k1"],
        k2=polys["k2"],
        objective=float(solution.primal_objective),
        residuals=res,
        gram_min_eig=grams,
        J0=polys["J"].coefficient((0,) * n),
    )


# -- sparse text format -----------------------------------------------------

FORMAT_HEADER = "# roacert sparse sdp v1"


def write_problem(problem: SdpProblem, path) -> None:
    """Write the documented sparse text format.

    Sections, each introduced by a keyword line: ``blocks``, ``free``,
    ``nonneg``, ``rows``, then ``A`` (``row var value`` triples), ``b``
    (``row value``), ``c`` (``var value``), ``scale`` (``row value``) and
    ``provenance`` (``row identity exponents...``).  Values are written
    with ``repr`` so a read-back is exact.
    """
    A = sp.coo_matrix(problem.A)
    lines = [FORMAT_HEADER]
    lines.append("blocks " + " ".join(str(m) for m in problem.psd_blocks))
    lines.append(f"free {problem.n_free}")
    lines.append(f"nonneg {problem.n_nonneg}")
    lines.append(f"rows {problem.n_rows}")
    order = np.lexsort((A.col, A.row))
    lines.append(f"A {len(order)}")
    lines += [f"{A.row[k]} {A.col[k]} {float(A.data[k])!r}" for k in order]
    nzb = np.flatnonzero(problem.b)
    lines.append(f"b {len(nzb)}")
    lines += [f"{i} {float(problem.b[i])!r}" for i in nzb]
    nzc = np.flatnonzero(problem.c)
    lines.append(f"c {len(nzc)}")
    lines += [f"{i} {float(problem.c[i])!r}" for i in nzc]
    lines.append(f"scale {problem.n_rows}")
    lines += [f"{i} {float(v)!r}" for i, v in enumerate(problem.row_scale)]
    lines.append(f"provenance {len(problem.provenance)}")
    lines += [
        f"{i} {tag.identity} " + " ".join(map(str, tag.monomial))
        for i, tag in enumerate(problem.provenance)
    ]
    lines.append("end")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_problem(path) -> SdpProblem:
    """Parse :func:`write_problem` output; errors name the offending line."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    pos = 0

    def fail(msg: str):
        # pos already points past the line just taken
        raise ValueError(f"{path}:{max(pos, 1)}: {msg}")

    def take() -> list[str]:
        nonlocal pos
        while pos < len(lines) and (not lines[pos].strip() or lines[pos].startswith("#")):
            pos += 1
        if pos >= len(lines):
            fail("unexpected end of file")
        toks = lines[pos].split()
        pos += 1
        return toks

    def section(word: str) -> list[str]:
        toks = take()
        if toks[0] != word:
            fail(f"expected section {word!r}, found {toks[0]!r}")
        return toks[1:]

    if not lines or lines[0].strip() != FORMAT_HEADER:
        fail(f"missing header {FORMAT_HEADER!r}")
    def counts(word: str) -> list[int]:
        toks = section(word)
        try:
            return [int(t) for t in toks]
        except ValueError:
            fail(f"section {word!r} needs integers")

    blocks = tuple(counts("blocks"))
    n_free, n_nonneg, n_rows = counts("free")[0], counts("nonneg")[0], counts("rows")[0]
    nv = sum(m * (m + 1) // 2 for m in blocks) + n_free + n_nonneg
    def entries(word: str, types) -> list[tuple]:
        head = section(word)
        if len(head) != 1 or not head[0].isdigit():
            fail(f"section {word!r} needs an entry count")
        out = []
        for _ in range(int(head[0])):
            toks = take()
            try:
                if len(toks) < len(types):
                    raise ValueError(f"expected {len(types)} fields")
                out.append(tuple(t(v) for t, v in zip(types, toks)) + tuple(toks[len(types):]))
            except ValueError as exc:
                fail(f"malformed {word} entry ({exc})")
        return out

    trip = entries("A", (int, int, float))
    rows = [t[0] for t in trip]
    cols = [t[1] for t in trip]
    vals = [t[2] for t in trip]
    b = np.zeros(n_rows)
    for i, v in entries("b", (int, float)):
        b[i] = v
    c = np.zeros(nv)
    for i, v in entries("c", (int, float)):
        c[i] = v
    scale = np.ones(n_rows)
    for i, v in entries("scale", (int, float)):
        scale[i] = v
    prov = []
    for t in entries("provenance", (int, str)):
        try:
            prov.append(RowTag(t[1], tuple(int(e) for e in t[2:])))
        except ValueError:
            fail("malformed provenance exponents")
    if take()[0] != "end":
        fail("expected 'end'")
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n_rows, nv))
    return SdpProblem(blocks, n_free, n_nonneg, A, b, c, tuple(prov), scale)
