"""Command line front end: ``roacert {solve,sweep,oracle,plot}``.

Exit codes: 0 certificate verified (or vacuously, when empty), 1 invalid
input, 2 certificate falsified by simulation, 3 solver failure or a
certificate whose identities do not hold.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import (
    IntegrationError,
    OracleAssumptionError,
    OracleConfig,
    VectorField,
    oracle_many,
    reverse_time_boundary,
)
from .polyalg import Poly
from .roapipeline import (
    CertStatus,
    RoaSpec,
    SpecError,
    degree_sweep,
    estimate_roa,
    grid_points,
    load_certificate_poly,
    oracle_roa,
    verify_inner,
    write_certificate,
)
from .sdpcore import SolverFailure
from .soscompile import CompileError, InfeasibleProgram

log = logging.getLogger("roacert")

SCHEMA_VERSION = 1
OUT_ENV = "ROACERT_OUT"
BUNDLED = ("scalar", "vanderpol", "servo3")

EXIT_OK, EXIT_INPUT, EXIT_FALSIFIED, EXIT_SOLVER = 0, 1, 2, 3


class ProblemError(ValueError):
    """Malformed or invalid problem file."""


# -- problem files ----------------------------------------------------------


@dataclass
class ProblemFile:
    system: str
    nvars: int
    vector_field: list  # per component, list of {exponents, coefficient}
    spec: dict
    oracle: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    SPEC_KEYS = ("lambda", "beta", "R", "box", "degree", "degrees", "tol", "normalize",
                 "allow_marginal", "backend")
    ORACLE_KEYS = ("eta", "T_max", "rel_tol", "abs_tol", "tail_tol", "R_escape", "seed", "samples")

    @classmethod
    def parse(cls, text: str, source: str = "<problem>") -> "ProblemFile":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ProblemError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
        if not isinstance(raw, dict):
            raise ProblemError(f"{source}: top level must be an object")
        version = raw.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ProblemError(f"{source}: unsupported schema_version {version!r}, expected {SCHEMA_VERSION}")
        missing = [k for k in ("system", "nvars", "vector_field", "spec") if k not in raw]
        if missing:
            raise ProblemError(f"{source}: missing field(s) {', '.join(missing)}")
        for block, keys in (("spec", cls.SPEC_KEYS), ("oracle", cls.ORACLE_KEYS)):
            unknown = set(raw.get(block) or {}) - set(keys)
            if unknown:
                raise ProblemError(f"{source}: unknown {block} key(s) {sorted(unknown)}")
        pf = cls(
            system=str(raw["system"]),
            nvars=raw["nvars"],
            vector_field=raw["vector_field"],
            spec=dict(raw["spec"]),
            oracle=dict(raw.get("oracle") or {}),
            schema_version=version,
        )
        pf.build_field()  # validates f(0) = 0 and shapes
        return pf

    @classmethod
    def load(cls, path) -> "ProblemFile":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ProblemError(f"cannot read problem file: {exc}") from None
        return cls.parse(text, str(path))

    def dumps(self) -> str:
        return json.dumps(
            {
                "schema_version": self.schema_version,
                "system": self.system,
                "nvars": self.nvars,
                "vector_field": self.vector_field,
                "spec": self.spec,
                "oracle": self.oracle,
            },
            indent=1,
        ) + "\n"

    def build_field(self) -> VectorField:
        if not isinstance(self.nvars, int) or self.nvars < 1:
            raise ProblemError(f"nvars must be a positive integer, got {self.nvars!r}")
        if not isinstance(self.vector_field, list) or len(self.vector_field) != self.nvars:
            raise ProblemError(f"vector_field needs {self.nvars} components")
        try:
            return VectorField.from_records(self.vector_field, self.nvars)
        except (ValueError, TypeError) as exc:
            raise ProblemError(f"invalid vector field: {exc}") from None

    def degrees(self) -> list[int]:
        return [int(d) for d in self.spec.get("degrees", [])]

    def roa_spec(self, degree=None, seed=None, samples=None, tol=None) -> RoaSpec:
        s, o = self.spec, self.oracle
        try:
            d = degree if degree is not None else s.get("degree")
            if d is None:
                degs = self.degrees()
                if not degs:
                    raise ProblemError("spec has neither degree nor degrees")
                d = degs[-1]
            return RoaSpec(
                lam=float(s["lambda"]),
                beta=s["beta"],
                R=float(s["R"]),
                box=[tuple(b) for b in s["box"]],
                d=d,
                tol=float(tol if tol is not None else s.get("tol", 1e-8)),
                n_verify=int(samples if samples is not None else o.get("samples", 1000)),
                seed=int(seed if seed is not None else o.get("seed", 0)),
                normalize=bool(s.get("normalize", True)),
                allow_marginal=bool(s.get("allow_marginal", False)),
                eta=o.get("eta"),
                T_max=float(o.get("T_max", 100.0)),
                rel_tol=float(o.get("rel_tol", 1e-9)),
                abs_tol=float(o.get("abs_tol", 1e-12)),
                tail_tol=float(o.get("tail_tol", 1e-10)),
                R_escape=o.get("R_escape"),
                backend=str(s.get("backend", "auto")),
            )
        except KeyError as exc:
            raise ProblemError(f"spec is missing {exc}") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, (ProblemError, SpecError)):
                raise
            raise ProblemError(f"invalid spec value: {exc}") from None


def resolve_problem(name: str) -> Path:
    """A path, or the name of a bundled configuration."""
    p = Path(name)
    if p.exists():
        return p
    if name in BUNDLED:
        return Path(str(resources.files("roacert") / "configs" / f"{name}.json"))
    raise ProblemError(f"no such problem file or bundled config: {name}")


def content_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- commands ---------------------------------------------------------------


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _grid_shape(box, n: int) -> list[int]:
    """``n`` points on the shortest side, proportionally more on the others."""
    sides = [b - a for a, b in box]
    short = min(sides)
    return [int(math.ceil(n * s / short - 1e-9)) for s in sides]


def cmd_solve(args) -> int:
    path = resolve_problem(args.problem)
    pf = ProblemFile.load(path)
    f = pf.build_field()
    spec = pf.roa_spec(args.degree, args.seed, args.samples, args.tol)
    out = _out_dir(args)
    target = out / f"{pf.system}_d{spec.d}.cert.json"
    extra = {"problem_sha256": content_hash(path), "system": pf.system}
    try:
        cert = estimate_roa(f, spec, reference=oracle_roa(f, spec))
    except (InfeasibleProgram, SolverFailure) as exc:
        doc = {"schema_version": 1, "status": "SolverFailure", "message": str(exc),
               "spec": spec.as_dict(), **extra}
        target.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    if args.grid:
        shape = _grid_shape(spec.box, args.grid)
        rep = verify_inner(cert, f, spec.oracle_config(), points=grid_points(spec.box, shape))
        extra["grid_verification"] = {"shape": shape, **rep.as_dict()}
        if rep.falsified:
            cert.status = CertStatus.FALSIFIED
    write_certificate(cert, target, extra)
    v = cert.verification
    print(
        f"{pf.system} d={spec.d}: {cert.status}  objective={cert.objective:.8g}  "
        f"volume={cert.volume.value:.4g}+-{cert.volume.se:.2g} (interior {cert.volume_interior.value:.4g})  "
        f"D_V={cert.dv.value:.4g}+-{cert.dv.se:.2g}  inside={v.n_inside} diverged={v.diverged}  "
        f"grazing={v.grazing} (diverged {v.grazing_diverged})"
    )
    print(f"wrote {target}")
    if cert.status == CertStatus.FALSIFIED:
        return EXIT_FALSIFIED
    if cert.status == CertStatus.UNVERIFIED:
        return EXIT_SOLVER
    return EXIT_OK


SWEEP_FIELDS = ("d", "status", "objective", "volume", "volume_se", "volume_interior", "dv", "dv_se", "diverged", "error")


def cmd_sweep(args) -> int:
    path = resolve_problem(args.problem)
    pf = ProblemFile.load(path)
    f = pf.build_field()
    degrees = [int(x) for x in args.degrees.split(",") if x.strip()] if args.degrees is not None else pf.degrees()
    if not degrees:
        raise ProblemError("empty degree list")
    spec = pf.roa_spec(degrees[0], args.seed, args.samples, args.tol)
    rows = degree_sweep(f, spec, degrees)
    out = _out_dir(args)
    target = out / f"{pf.system}_sweep.csv"
    with open(target, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.as_dict().items()})
    for r in rows:
        vol = "-" if r.volume is None else f"{r.volume.value:.4g}+-{r.volume.se:.2g}"
        dv = "-" if r.dv is None else f"{r.dv.value:.4g}+-{r.dv.se:.2g}"
        print(f"d={r.d:3d} {r.status:10s} objective={r.objective:.8g} volume={vol} D_V={dv} {r.error}")
    print(f"wrote {target}")
    if any(r.status == CertStatus.FALSIFIED for r in rows):
        return EXIT_FALSIFIED
    if any(r.status in ("FAILED", CertStatus.UNVERIFIED) for r in rows):
        return EXIT_SOLVER
    return EXIT_OK


def read_points(path, nvars: int) -> tuple[np.ndarray, list[str]]:
    """Rows of comma or whitespace separated coordinates; ``#`` starts a comment."""
    pts, errors = [], []
    for k, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        try:
            row = [float(v) for v in parts]
        except ValueError:
            errors.append(f"row {k}: not numeric: {line!r}")
            continue
        if len(row) != nvars or not all(math.isfinite(v) for v in row):
            errors.append(f"row {k}: expected {nvars} finite values, got {line!r}")
            continue
        pts.append(row)
    return np.array(pts, dtype=float).reshape(-1, nvars), errors


def cmd_oracle(args) -> int:
    path = resolve_problem(args.problem)
    pf = ProblemFile.load(path)
    f = pf.build_field()
    spec = pf.roa_spec(args.degree, args.seed, args.samples, args.tol)
    X, errors = read_points(args.points, f.nvars)
    for e in errors:
        print(f"{args.points}: {e}", file=sys.stderr)
    tab = oracle_many(f, X, spec.lam, spec.beta, spec.oracle_config(), allow_marginal=spec.allow_marginal)
    out = _out_dir(args)
    target = out / f"{pf.system}_oracle.csv"
    names = [f"x{i + 1}" for i in range(f.nvars)]
    with open(target, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ["class", "W", "V", "F_eta"])
        for x, cls, W, V, F in tab.rows():
            w.writerow([repr(float(v)) for v in x] + [cls, repr(float(W)), repr(float(V)), repr(float(F))])
    print(f"wrote {target} ({len(X)} rows, {len(errors)} rejected)")
    return EXIT_INPUT if errors else EXIT_OK


def level_crossings_1d(P: Poly, lo: float, hi: float, n: int = 2001) -> list[float]:
    """Roots of ``P - 1`` on ``[lo, hi]`` from sign changes, refined by brentq."""
    from scipy.optimize import brentq

    xs = np.linspace(lo, hi, n)
    g = P.eval_many(xs[:, None]) - 1.0
    roots = []
    for k in np.flatnonzero(np.sign(g[:-1]) * np.sign(g[1:]) < 0):
        roots.append(brentq(lambda t: P([t]) - 1.0, xs[k], xs[k + 1], xtol=1e-14))
    roots.extend(float(x) for x in xs[g == 0.0])
    return sorted(roots)


def contour_lines(X, Y, Z, level: float = 1.0) -> list[np.ndarray]:
    """Level-set polylines of a gridded field (marching squares via contourpy)."""
    import contourpy

    gen = contourpy.contour_generator(X, Y, Z, line_type=contourpy.LineType.Separate)
    return [np.asarray(seg) for seg in gen.lines(level)]


def _svg_with_provenance(fig, path: Path, prov: dict) -> None:
    import io

    buf = io.StringIO()
    fig.savefig(buf, format="svg")
    text = buf.getvalue()
    note = "<!-- roacert " + " ".join(f"{k}={v}" for k, v in prov.items()) + " -->\n"
    head, sep, rest = text.partition("?>\n")
    path.write_text(head + sep + note + rest if sep else note + text)


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    P, doc = load_certificate_poly(args.certificate)
    spec = doc["spec"]
    box = [tuple(b) for b in spec["box"]]
    n = len(box)
    R = float(spec["R"])
    res = args.grid or 200
    out = _out_dir(args)
    stem = Path(args.certificate).name.replace(".cert.json", "").replace(".json", "")
    prov = {
        "seed": doc.get("seed"),
        "tol": spec.get("tol"),
        "problem_sha256": doc.get("problem_sha256", "unknown"),
        "version": __version__,
    }
    if not 1 <= n <= 3:
        print(f"plotting {n} variables is unsupported", file=sys.stderr)
        return EXIT_INPUT
    axes = [np.linspace(a, b, res) for a, b in box]

    if n == 1:
        xs = axes[0]
        vals = P.eval_many(xs[:, None])
        roots = level_crossings_1d(P, *box[0])
        np.savetxt(out / f"{stem}_grid.csv", np.column_stack([xs, vals]), delimiter=",", header="x1,P", comments="")
        (out / f"{stem}_contour.json").write_text(json.dumps({"level": 1.0, "crossings": roots}, indent=1) + "\n")
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(xs, vals, "k-", lw=1.2, label="P")
        ax.axhline(1.0, color="0.5", ls=":")
        for r in roots:
            ax.axvline(r, color="tab:red", lw=0.8)
        ax.set_xlabel("x1")
        ax.set_xlim(*box[0])
        _svg_with_provenance(fig, out / f"{stem}.svg", prov)
        plt.close(fig)
        print("crossings: " + ", ".join(f"{r:.6f}" for r in roots))
        return EXIT_OK

    if n == 2:
        X, Y = np.meshgrid(axes[0], axes[1], indexing="ij")
        Z = P.eval_many(np.column_stack([X.ravel(), Y.ravel()])).reshape(X.shape)
        lines = contour_lines(X, Y, Z)
        np.savetxt(out / f"{stem}_grid.csv", np.column_stack([X.ravel(), Y.ravel(), Z.ravel()]),
                   delimiter=",", header="x1,x2,P", comments="")
        (out / f"{stem}_contour.json").write_text(
            json.dumps({"level": 1.0, "polylines": [ln.tolist() for ln in lines]}) + "\n"
        )
        fig, ax = plt.subplots(figsize=(6, 6))
        (a0, b0), (a1, b1) = box
        ax.plot([a0, b0, b0, a0, a0], [a1, a1, b1, b1, a1], ":", color="tab:blue", label="box")
        t = np.linspace(0, 2 * np.pi, 400)
        ax.plot(R * np.cos(t), R * np.sin(t), ":", color="tab:green", label="B_R")
        for k, ln in enumerate(lines):
            ax.plot(ln[:, 0], ln[:, 1], "k-", lw=1.5, label="P = 1" if k == 0 else None)
        if args.oracle:
            vf = VectorField.from_records(doc["vector_field"], n)
            try:
                cyc = reverse_time_boundary(vf, np.array([0.1, 0.1]), 60.0, OracleConfig(R_escape=10 * R))
                ax.plot(cyc[:, 0], cyc[:, 1], "--", color="tab:red", lw=1.0, label="reverse-time boundary")
            except IntegrationError as exc:
                print(f"no oracle boundary: {exc}", file=sys.stderr)
        ax.set_aspect("equal")
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
        ax.legend(loc="upper right", fontsize=8)
        _svg_with_provenance(fig, out / f"{stem}.svg", prov)
        plt.close(fig)
        print(f"{len(lines)} level-1 polyline(s)")
        return EXIT_OK

    # three variables: slices along x3 plus a point cloud near the level set
    nslices = 5
    zs = np.linspace(box[2][0], box[2][1], nslices + 2)[1:-1]
    X, Y = np.meshgrid(axes[0], axes[1], indexing="ij")
    slices = []
    fig, axs = plt.subplots(1, nslices, figsize=(3 * nslices, 3.2))
    for ax, z in zip(axs, zs):
        Z = P.eval_many(np.column_stack([X.ravel(), Y.ravel(), np.full(X.size, z)])).reshape(X.shape)
        lines = contour_lines(X, Y, Z)
        slices.append({"x3": float(z), "polylines": [ln.tolist() for ln in lines]})
        for ln in lines:
            ax.plot(ln[:, 0], ln[:, 1], "k-", lw=1.2)
        ax.set_title(f"x3 = {z:.2f}", fontsize=9)
        ax.set_xlim(*box[0])
        ax.set_ylim(*box[1])
        ax.set_aspect("equal")
    _svg_with_provenance(fig, out / f"{stem}.svg", prov)
    plt.close(fig)
    m = min(res, 60)
    G = np.stack(np.meshgrid(*[np.linspace(a, b, m) for a, b in box], indexing="ij"), axis=-1).reshape(-1, 3)
    vals = P.eval_many(G)
    np.savetxt(out / f"{stem}_grid.csv", np.column_stack([G, vals]), delimiter=",",
               header="x1,x2,x3,P", comments="")
    cell = max((b - a) / (m - 1) for a, b in box)
    near = np.abs(vals - 1.0) <= _level_band(P, G, cell)
    np.savetxt(out / f"{stem}_isosurface.csv", G[near], delimiter=",", header="x1,x2,x3", comments="")
    (out / f"{stem}_contour.json").write_text(json.dumps({"level": 1.0, "slices": slices}) + "\n")
    print(f"{nslices} slices, {int(near.sum())} isosurface points")
    return EXIT_OK


def _level_band(P: Poly, G: np.ndarray, cell: float) -> np.ndarray:
    # |P - 1| below half a cell times the local gradient norm
    g = np.sqrt(sum(d.eval_many(G) ** 2 for d in P.gradient()))
    return 0.5 * cell * g


# -- entry point ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roacert",
        description="Inner certificates of regions of attraction from a degree-indexed SOS program.",
        epilog=f"Outputs go to --out, else ${OUT_ENV}, else the current directory. "
        "Exit codes: 0 verified, 1 invalid input, 2 falsified, 3 solver failure.",
    )
    parser.add_argument("--version", action="version", version=f"roacert {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, problem=True):
        if problem:
            p.add_argument("--problem", required=True,
                           help=f"problem file, or a bundled name ({', '.join(BUNDLED)})")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")
        p.add_argument("--seed", type=int, help="sampling seed (unsigned 64-bit)")
        p.add_argument("--samples", type=int, help="verification sample count")
        p.add_argument("--tol", type=float, help="SDP tolerance")
        p.add_argument("--degree", type=int, help="override the certificate degree d")
        p.add_argument("--grid", type=int, help="grid resolution (points on the shortest box side)")

    p = sub.add_parser("solve", help="compute and verify one certificate")
    common(p)
    p.set_defaults(func=cmd_solve)
    p = sub.add_parser("sweep", help="certificates over a list of degrees")
    common(p)
    p.add_argument("--degrees", help="comma separated even degrees (default: from the problem file)")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("oracle", help="simulated V, W, class and entry time per point")
    common(p)
    p.add_argument("--points", required=True, help="file with one point per row")
    p.set_defaults(func=cmd_oracle)
    p = sub.add_parser("plot", help="grid values, level-1 contours and an SVG figure")
    common(p, problem=False)
    p.add_argument("--certificate", required=True, help="certificate written by solve")
    p.add_argument("--oracle", action="store_true", help="overlay the reverse-time boundary (2-D)")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", None) is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except (ProblemError, SpecError, CompileError, OracleAssumptionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
