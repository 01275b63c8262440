"""Spec -> compile -> solve -> certificate -> independent verification.

The SOS program is solved in normalized coordinates ``y = x / R`` so the
computation ball becomes the unit ball; without this, monomials of degree
16 on a ball of radius 3.4 span about nine orders of magnitude and the
SDP stalls.  In ``y`` the data are ``f~(y) = f(R y) / R``,
``lam~ = lam R^(2 beta)``, ``R~ = 1``, ``box~ = box / R``, and the
solution maps back as ``J(x) = J~(x / R)``, ``s(x) = s~(x / R) / R^2``
(same for ``p``), with ``k1``, ``k2`` unchanged under substitution.  Both
identities are then re-checked symbolically in the original coordinates.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import __version__
from .dynamics import (
    Membership,
    OracleConfig,
    VectorField,
    diagnostics,
    local_stability,
    oracle_many,
    roa_member_many,
    sample_ball,
)
from .polyalg import Poly, box_moments
from .sdpcore import DEFAULT_TOL, SdpSolution, solve
from .setmetrics import IndicatorSet, SharedSample, VolumeEstimate
from .soscompile import (
    CompileError,
    CompiledProgram,
    InfeasibleProgram,
    box_corner_norm,
    compile_program,
    extract_certificate,
    identity_residuals,
)

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-6
GRAZE = 1e-9


class SpecError(ValueError):
    """A RoaSpec that violates one of its invariants."""


@dataclass(frozen=True)
class RoaSpec:
    lam: float
    beta: int
    R: float
    box: tuple[tuple[float, float], ...]
    d: int
    tol: float = DEFAULT_TOL
    n_verify: int = 1000
    seed: int = 0
    normalize: bool = True
    allow_marginal: bool = False
    # oracle settings; R_escape defaults to 10 R
    eta: float | None = None
    T_max: float = 100.0
    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    tail_tol: float = 1e-10
    R_escape: float | None = None
    backend: str = "auto"

    def __post_init__(self):
        object.__setattr__(self, "box", tuple((float(a), float(b)) for a, b in self.box))
        if not self.lam > 0:
            raise SpecError(f"lambda must be positive, got {self.lam}")
        if int(self.beta) != self.beta or self.beta < 1:
            raise SpecError(f"beta must be a positive integer, got {self.beta}")
        if not self.R > 0:
            raise SpecError(f"R must be positive, got {self.R}")
        if any(not a < b for a, b in self.box):
            raise SpecError(f"box has an empty side: {self.box}")
        if int(self.d) != self.d or self.d < 2 or self.d % 2:
            raise SpecError(f"degree d must be even and >= 2, got {self.d}")
        worst = box_corner_norm(self.box)
        if worst > self.R * (1 + 1e-12):
            raise SpecError(
                f"box is not inside B_R(0): corner norm {worst:.6g} > R = {self.R:.6g}"
            )
        if self.n_verify < 1:
            raise SpecError(f"n_verify must be positive, got {self.n_verify}")

    @property
    def nvars(self) -> int:
        return len(self.box)

    def oracle_config(self) -> OracleConfig:
        return OracleConfig(
            eta=self.eta,
            R_escape=self.R_escape if self.R_escape is not None else 10.0 * self.R,
            T_max=self.T_max,
            rel_tol=self.rel_tol,
            abs_tol=self.abs_tol,
            tail_tol=self.tail_tol,
        )

    def with_degree(self, d: int) -> "RoaSpec":
        return replace(self, d=int(d))

    def as_dict(self) -> dict:
        out = dict(self.__dict__)
        out["box"] = [list(b) for b in self.box]
        return out


class CertStatus:
    VERIFIED = "Verified"
    UNVERIFIED = "Unverified"
    FALSIFIED = "Falsified"
    EMPTY = "Empty"


@dataclass
class VerifyReport:
    """Oracle classification of the samples a certificate claims.

    ``n_inside`` counts samples with ``P < 1 - 1e-9`` and ``|x| < R``; the
    three outcome counts refer to them.  Samples with ``1 - 1e-9 <= P < 1``
    sit within solver resolution of the level set and are simulated and
    counted separately (``grazing``, ``grazing_diverged``) without
    deciding the status.
    """

    n_samples: int
    n_inside: int
    converged: int
    diverged: int
    undetermined: int
    grazing: int
    seed: int | None
    grazing_diverged: int = 0
    diverged_points: list = field(default_factory=list)

    @property
    def falsified(self) -> bool:
        return self.diverged > 0

    @property
    def empty(self) -> bool:
        return self.n_inside == 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class Certificate:
    P: Poly
    s: Poly
    p: Poly
    k1: Poly
    k2: Poly
    objective: float
    residuals: dict
    gram_min_eig: dict
    spec: RoaSpec
    f: VectorField
    solver: dict
    status: str = CertStatus.UNVERIFIED
    verification: VerifyReport | None = None
    volume: VolumeEstimate | None = None  # {P < 1} n box
    volume_interior: VolumeEstimate | None = None  # {P < 1 - 1e-9} n box
    dv: VolumeEstimate | None = None
    checks: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def residuals_ok(self) -> bool:
        return all(r["rel"] <= RESIDUAL_TOL for r in self.residuals.values())

    def sublevel(self, label: str | None = None) -> IndicatorSet:
        """``{x : P(x) < 1}`` as an indicator set."""
        return IndicatorSet(lambda X: self.P.eval_many(X) < 1.0, label or f"P_{self.spec.d}<1")

    def inside(self, X: np.ndarray) -> np.ndarray:
        """Points of the certified set ``{P < 1} n B_R``."""
        X = np.atleast_2d(X)
        return (self.P.eval_many(X) < 1.0) & (np.linalg.norm(X, axis=1) < self.spec.R)


# -- estimation -------------------------------------------------------------


def compile_spec(f: VectorField, spec: RoaSpec) -> tuple[CompiledProgram, float]:
    """Compile in normalized coordinates; returns the program and the scale."""
    if f.nvars != spec.nvars:
        raise SpecError(f"field has {f.nvars} variables, box has {spec.nvars}")
    sigma = spec.R if spec.normalize else 1.0
    prog = compile_program(
        f.rescaled(sigma) if sigma != 1.0 else f,
        spec.d,
        spec.lam * sigma ** (2 * spec.beta),
        spec.beta,
        spec.R / sigma,
        [(a / sigma, b / sigma) for a, b in spec.box],
    )
    return prog, sigma


def _unscale(poly: Poly, sigma: float, power: int = 0) -> Poly:
    if sigma == 1.0:
        return poly
    out = poly.rescale(1.0 / sigma)
    return out.scale(sigma ** (-power)) if power else out


def solve_spec(f: VectorField, spec: RoaSpec) -> tuple[Certificate, CompiledProgram, SdpSolution]:
    """Compile, solve and extract, without any sampling-based verification."""
    ls = local_stability(f)
    if not ls.hurwitz and not spec.allow_marginal:
        raise SpecError(
            "linearization at the origin is not Hurwitz (eigenvalues "
            f"{np.round(ls.eigenvalues, 6).tolist()}); set allow_marginal to proceed"
        )
    prog, sigma = compile_spec(f, spec)
    log.info("compiled d=%d: %s", spec.d, prog.problem.summary())
    sol = solve(prog.problem, tol=spec.tol, backend=spec.backend)
    sc = extract_certificate(prog, sol)  # raises InfeasibleProgram on failure
    n = f.nvars
    P = _unscale(sc.J, sigma)
    s = _unscale(sc.s, sigma, 2)
    p = _unscale(sc.p, sigma, 2)
    k1 = _unscale(sc.k1, sigma)
    k2 = _unscale(sc.k2, sigma)
    res = identity_residuals(P, s, p, k1, k2, f, spec.lam, spec.beta, spec.R)
    objective = sc.objective * sigma**n
    solver = {
        "status": sol.status.value,
        "backend": sol.info.get("backend", ""),
        "backend_status": sol.backend_status,
        "gap": sol.gap,
        "primal_residual": sol.primal_residual,
        "dual_residual": sol.dual_residual,
        "iterations": sol.iterations,
        "tol": spec.tol,
        "problem": prog.problem.summary(),
        "scale": sigma,
        "scaled_residuals": sc.residuals,
    }
    cert = Certificate(
        P=P, s=s, p=p, k1=k1, k2=k2,
        objective=objective,
        residuals=res,
        gram_min_eig=sc.gram_min_eig,
        spec=spec,
        f=f,
        solver=solver,
    )
    moment = box_moments(spec.d, spec.box).integrate(P)
    cert.checks["objective_identity"] = {
        "solver": objective,
        "moments": moment,
        "rel": abs(moment - objective) / max(1.0, abs(objective)),
    }
    cert.checks["objective_identity"]["ok"] = cert.checks["objective_identity"]["rel"] <= 1e-7
    return cert, prog, sol


def verify_inner(
    cert: Certificate,
    f: VectorField,
    cfg: OracleConfig,
    n_samples: int | None = None,
    seed: int | None = None,
    points: np.ndarray | None = None,
) -> VerifyReport:
    """Simulate every sample that the certificate claims is in the ROA.

    Samples are uniform over the box (or the given ``points``); those with
    ``P < 1`` and ``|x| < R`` are classified by the oracle.  Integration
    failures count as Undetermined.  See :class:`VerifyReport` for the
    grazing band.
    """
    spec = cert.spec
    if points is None:
        n_samples = spec.n_verify if n_samples is None else n_samples
        seed = spec.seed if seed is None else seed
        points = SharedSample(spec.box, n_samples, seed).points
    X = np.atleast_2d(points)
    vals = cert.P.eval_many(X)
    in_ball = np.linalg.norm(X, axis=1) < spec.R
    claimed = (vals < 1.0) & in_ball
    graze = claimed & (vals >= 1.0 - GRAZE)
    inside = claimed & ~graze
    mem = np.full(len(X), None, dtype=object)
    if claimed.any():
        mem[claimed] = roa_member_many(f, X[claimed], cfg, allow_marginal=spec.allow_marginal)
    conv = mem == Membership.CONVERGED
    div = mem == Membership.DIVERGED
    return VerifyReport(
        n_samples=len(X),
        n_inside=int(inside.sum()),
        converged=int(np.sum(conv & inside)),
        diverged=int(np.sum(div & inside)),
        undetermined=int(np.sum(inside & ~conv & ~div)),
        grazing=int(graze.sum()),
        seed=seed,
        grazing_diverged=int(np.sum(div & graze)),
        diverged_points=X[div & inside][:10].tolist(),
    )


def grid_points(box, shape: Sequence[int]) -> np.ndarray:
    """Cell-centred grid over the box with ``shape[i]`` points on axis ``i``."""
    axes = [a + (np.arange(k) + 0.5) * (b - a) / k for (a, b), k in zip(box, shape)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))


def classify(cert: Certificate, report: VerifyReport) -> str:
    if report.falsified:
        return CertStatus.FALSIFIED
    if not cert.residuals_ok:
        return CertStatus.UNVERIFIED
    if report.empty:
        return CertStatus.EMPTY
    return CertStatus.VERIFIED


def constraint_checks(
    cert: Certificate,
    n_interior: int = 1000,
    n_boundary: int = 200,
    n_dominance: int = 500,
    seed: int = 0,
    cfg: OracleConfig | None = None,
) -> dict:
    """Sampled checks of the pointwise inequalities the certificate must obey.

    * decrease: ``grad P . f <= -lam |x|^2b (1 - P) + 1e-6 scale`` in ``B_R``
    * boundary: ``P >= 1 - 1e-6`` on the sphere ``|x| = R``
    * origin: ``P(0) >= -1e-8``; nonnegativity: ``P >= -1e-6`` in ``B_R``
    * dominance: ``W(x) <= P(x) + 1e-4`` at converged points of the box
    """
    spec, f, P = cert.spec, cert.f, cert.P
    n = f.nvars
    X = sample_ball(n, spec.R, n_interior, seed)
    grads = [g.eval_many(X) for g in P.gradient()]
    F = f.eval_many(X)
    lie = sum(grads[i] * F[:, i] for i in range(n))
    pv = P.eval_many(X)
    decay = spec.lam * np.einsum("ij,ij->i", X, X) ** spec.beta * (1.0 - pv)
    scale = np.maximum(1.0, np.maximum(np.abs(lie), np.abs(decay)))
    excess = (lie + decay) / scale
    out = {
        "decrease": {"max_scaled_excess": float(np.max(excess)), "ok": bool(np.all(excess <= 1e-6))},
        "nonnegative": {"min": float(np.min(pv)), "ok": bool(np.min(pv) >= -1e-6)},
    }
    U = sample_ball(n, 1.0, n_boundary, seed + 1)
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    pb = P.eval_many(spec.R * U)
    out["boundary"] = {"min": float(np.min(pb)), "ok": bool(np.min(pb) >= 1 - 1e-6)}
    p0 = float(P(np.zeros(n)))
    out["origin"] = {"value": p0, "ok": p0 >= -1e-8}

    cfg = cfg or spec.oracle_config()
    Xb = SharedSample(spec.box, n_dominance, seed + 2).points
    tab = oracle_many(f, Xb, spec.lam, spec.beta, cfg, allow_marginal=spec.allow_marginal)
    conv = tab.membership == Membership.CONVERGED
    rigorous = local_stability(f).hurwitz
    # with a tail bracket the upper value is used; otherwise only the
    # partial integral (a lower bound on W) is available
    Wc = tab.W_upper[conv] if rigorous else tab.W[conv]
    gap = Wc - P.eval_many(Xb[conv])
    out["dominance"] = {
        "n_converged": int(conv.sum()),
        "max_excess": float(np.max(gap, initial=-np.inf)),
        "ok": bool(np.all(gap <= 1e-4)),
        "rigorous_tail": rigorous,
    }
    out["ok"] = all(v["ok"] for v in out.values() if isinstance(v, dict))
    return out


def estimate_roa(
    f: VectorField,
    spec: RoaSpec,
    reference: IndicatorSet | None = None,
    run_checks: bool = True,
    verify_points: np.ndarray | None = None,
) -> Certificate:
    """Full pipeline for one degree.

    The certified set's volume is estimated on the verification sample;
    when ``reference`` (an ROA indicator) is given, the symmetric
    difference to it is estimated on the same sample.
    """
    t0 = time.perf_counter()
    cert, _, _ = solve_spec(f, spec)  # InfeasibleProgram carries the problem
    cfg = spec.oracle_config()
    sample = SharedSample(spec.box, spec.n_verify, spec.seed)
    pts = sample.points if verify_points is None else verify_points
    report = verify_inner(cert, f, cfg, points=pts)
    report.seed = spec.seed if verify_points is None else None
    cert.verification = report
    cert.status = classify(cert, report)
    sub = cert.sublevel()
    cert.volume = sample.volume(sub)
    cert.volume_interior = sample.volume(
        IndicatorSet(lambda X: cert.P.eval_many(X) < 1.0 - GRAZE, f"P_{spec.d}<1-graze")
    )
    if reference is not None:
        cert.dv = sample.dv(sub, reference)
    if run_checks:
        cert.checks.update(constraint_checks(cert, seed=spec.seed, cfg=cfg))
    try:
        cert.diagnostics = diagnostics(f, spec.lam, spec.beta, spec.R, seed=spec.seed).as_dict()
    except Exception as exc:  # diagnostics are advisory only
        cert.diagnostics = {"error": str(exc)}
    log.info(
        "d=%d %s objective=%.8g volume=%.4g in %.1fs",
        spec.d, cert.status, cert.objective, cert.volume.value, time.perf_counter() - t0,
    )
    return cert


def oracle_roa(f: VectorField, spec: RoaSpec, label: str = "ROA") -> IndicatorSet:
    """ROA indicator from simulation; Undetermined points count as outside."""
    cfg = spec.oracle_config()

    def member(X):
        mem = roa_member_many(f, X, cfg, allow_marginal=spec.allow_marginal)
        return mem == Membership.CONVERGED

    return IndicatorSet(member, label)


# -- degree sweeps ----------------------------------------------------------


@dataclass
class SweepRow:
    d: int
    status: str
    objective: float = math.nan
    volume: VolumeEstimate | None = None
    dv: VolumeEstimate | None = None
    verification: VerifyReport | None = None
    error: str = ""
    certificate: Certificate | None = None

    def as_dict(self) -> dict:
        return {
            "d": self.d,
            "status": self.status,
            "objective": self.objective,
            "volume": None if self.volume is None else self.volume.value,
            "volume_se": None if self.volume is None else self.volume.se,
            "volume_interior": None if self.certificate is None else self.certificate.volume_interior.value,
            "dv": None if self.dv is None else self.dv.value,
            "dv_se": None if self.dv is None else self.dv.se,
            "diverged": None if self.verification is None else self.verification.diverged,
            "error": self.error,
        }


def degree_sweep(
    f: VectorField,
    spec: RoaSpec,
    degrees: Sequence[int],
    reference: IndicatorSet | None = None,
    run_checks: bool = False,
) -> list[SweepRow]:
    """One certificate per degree on a shared sample; failures become FAILED rows.

    ``reference`` defaults to the simulated ROA, evaluated once on the
    shared sample.
    """
    degrees = list(degrees)
    if not degrees:
        raise SpecError("degree list is empty")
    if any(b <= a for a, b in zip(degrees, degrees[1:])):
        raise SpecError(f"degrees must be increasing, got {degrees}")
    ref = reference or oracle_roa(f, spec)
    rows = []
    for d in degrees:
        try:
            s = spec.with_degree(d)
            cert = estimate_roa(f, s, reference=ref, run_checks=run_checks)
            rows.append(
                SweepRow(d, cert.status, cert.objective, cert.volume, cert.dv,
                         cert.verification, certificate=cert)
            )
        except (SpecError, CompileError, InfeasibleProgram) as exc:
            log.warning("degree %d failed: %s", d, exc)
            rows.append(SweepRow(d, "FAILED", error=str(exc)))
    return rows


# -- certificate document ---------------------------------------------------


def _clean(v):
    if isinstance(v, float):
        return v if math.isfinite(v) else str(v)
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (np.floating,)):
        return _clean(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _est(e: VolumeEstimate | None):
    if e is None:
        return None
    return {"value": e.value, "se": e.se, "n": e.n_samples, "seed": e.seed,
            "fraction": e.fraction, "box_volume": e.box_volume}


def certificate_document(cert: Certificate, extra: dict | None = None) -> dict:
    """Everything needed to re-check the certificate, without timings."""
    doc = {
        "schema_version": 1,
        "generator": f"roacert {__version__}",
        "status": cert.status,
        "spec": cert.spec.as_dict(),
        "vector_field": cert.f.to_records(),
        "objective": cert.objective,
        "polynomials": {
            name: poly.to_records()
            for name, poly in (("P", cert.P), ("s", cert.s), ("p", cert.p), ("k1", cert.k1), ("k2", cert.k2))
        },
        "residuals": cert.residuals,
        "gram_min_eig": cert.gram_min_eig,
        "solver": cert.solver,
        "verification": None if cert.verification is None else cert.verification.as_dict(),
        "volume": _est(cert.volume),
        "volume_interior": _est(cert.volume_interior),
        "dv": _est(cert.dv),
        "checks": cert.checks,
        "diagnostics": cert.diagnostics,
        "notes": cert.notes,
        "seed": cert.spec.seed,
    }
    if extra:
        doc.update(extra)
    return _clean(doc)


def write_certificate(cert: Certificate, path, extra: dict | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(certificate_document(cert, extra), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_certificate_poly(path) -> tuple[Poly, dict]:
    """The ``P`` polynomial and the raw document of a written certificate."""
    with open(path) as fh:
        doc = json.load(fh)
    n = len(doc["spec"]["box"])
    return Poly.from_records(doc["polynomials"]["P"], n), doc


def load_certificate(path) -> Certificate:
    """Rebuild a :class:`Certificate` from a written document.

    Polynomials, spec, field and recorded results come back as written;
    sampled estimates (volume, D_V) and the verification report stay in
    the document only.
    """
    P, doc = load_certificate_poly(path)
    spec = RoaSpec(**{**doc["spec"], "box": [tuple(b) for b in doc["spec"]["box"]]})
    n = spec.nvars
    polys = {k: Poly.from_records(v, n) for k, v in doc["polynomials"].items()}
    return Certificate(
        P=P, s=polys["s"], p=polys["p"], k1=polys["k1"], k2=polys["k2"],
        objective=float(doc["objective"]),
        residuals=doc["residuals"],
        gram_min_eig=doc["gram_min_eig"],
        spec=spec,
        f=VectorField.from_records(doc["vector_field"], n),
        solver=doc["solver"],
        status=doc["status"],
        notes=list(doc.get("notes", [])),
    )
