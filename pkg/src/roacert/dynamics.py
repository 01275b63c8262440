"""Polynomial vector fields and simulation oracles.

The oracles here are the empirical ground truth that SOS certificates are
checked against: trajectory integration, region-of-attraction membership,
entry times into a small ball, and the two converse Lyapunov functions

    V(x) = int_0^inf |phi(x, t)|^(2 beta) dt
    W(x) = 1 - exp(-lam * V(x))      (W = 1 outside the ROA).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import scipy.linalg

from .polyalg import Monomial, Poly, grlex_key


class IntegrationError(RuntimeError):
    """Step size underflow or a non-finite state during integration."""


class OracleAssumptionError(ValueError):
    """The oracle needs a Hurwitz linearization and did not get one."""


class VectorField:
    """``xdot = f(x)`` with polynomial components and ``f(0) = 0``."""

    def __init__(self, components: Sequence[Poly]):
        comps = tuple(components)
        if not comps:
            raise ValueError("a vector field needs at least one component")
        n = comps[0].nvars
        if len(comps) != n or any(c.nvars != n for c in comps):
            raise ValueError(
                f"{len(comps)} components over {[c.nvars for c in comps]} variables; "
                "need n components in n variables"
            )
        zero = (0,) * n
        for i, c in enumerate(comps):
            if c.coefficient(zero) != 0.0:
                raise ValueError(
                    f"f(0) != 0: component {i + 1} has constant term {c.coefficient(zero)}"
                )
        self.components = comps
        self.nvars = n
        self._compile()

    def _compile(self) -> None:
        monos: list[Monomial] = sorted(
            {m for c in self.components for m in c.terms}, key=grlex_key
        )
        idx = {m: k for k, m in enumerate(monos)}
        C = np.zeros((self.nvars, len(monos)))
        for i, comp in enumerate(self.components):
            for m, c in comp.items():
                C[i, idx[m]] = c
        self._exps = np.array(monos, dtype=np.int64).reshape(len(monos), self.nvars)
        self._coef_t = C.T.copy()
        self._maxdeg = int(self._exps.max()) if self._exps.size else 0

    @property
    def degree(self) -> int:
        return max(c.degree for c in self.components)

    def __len__(self) -> int:
        return self.nvars

    def __iter__(self):
        return iter(self.components)

    def __getitem__(self, i) -> Poly:
        return self.components[i]

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(1, self.nvars)
        return self.eval_many(x)[0]

    def eval_many(self, X: np.ndarray) -> np.ndarray:
        """Evaluate at each row of an ``(N, n)`` array; returns ``(N, n)``."""
        if not self._exps.size:
            return np.zeros_like(X)
        powers = [np.ones_like(X)]
        for _ in range(self._maxdeg):
            powers.append(powers[-1] * X)
        P = np.stack(powers)  # (maxdeg+1, N, n)
        mono = np.ones((X.shape[0], self._exps.shape[0]))
        for i in range(self.nvars):
            mono *= P[self._exps[:, i], :, i].T
        return mono @ self._coef_t

    def jacobian_at_zero(self) -> np.ndarray:
        """Exact linearization, read off the degree-one coefficients."""
        n = self.nvars
        A = np.zeros((n, n))
        for i, comp in enumerate(self.components):
            for j in range(n):
                e = [0] * n
                e[j] = 1
                A[i, j] = comp.coefficient(tuple(e))
        return A

    def jacobian(self) -> list[list[Poly]]:
        return [c.gradient() for c in self.components]

    def rescaled(self, sigma: float) -> "VectorField":
        """Field in coordinates ``y = x / sigma``: ``g(y) = f(sigma * y) / sigma``."""
        return VectorField([c.rescale(sigma).scale(1.0 / sigma) for c in self.components])

    def to_records(self) -> list[list[dict]]:
        return [c.to_records() for c in self.components]

    @classmethod
    def from_records(cls, records: Sequence[Sequence[dict]], nvars: int) -> "VectorField":
        return cls([Poly.from_records(r, nvars) for r in records])

    def __repr__(self) -> str:
        return f"VectorField({list(self.components)!r})"


# -- oracle configuration and results ---------------------------------------


@dataclass(frozen=True)
class OracleConfig:
    """Integration and classification settings shared by every oracle.

    ``eta=None`` takes the radius from :func:`local_stability`.
    """

    eta: float | None = None
    R_escape: float = 100.0
    T_max: float = 100.0
    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    tail_tol: float = 1e-10
    max_steps: int = 200_000

    def __post_init__(self):
        if self.eta is not None and not 0 < self.eta < self.R_escape:
            raise ValueError(f"need 0 < eta < R_escape, got eta={self.eta}, R_escape={self.R_escape}")
        if not self.R_escape > 0:
            raise ValueError(f"R_escape must be positive, got {self.R_escape}")
        for name in ("T_max", "rel_tol", "abs_tol", "tail_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    @classmethod
    def for_radius(cls, R: float, **kw) -> "OracleConfig":
        """Escape radius ten times the computation ball."""
        return cls(R_escape=10.0 * R, **kw)

    def with_eta(self, eta: float) -> "OracleConfig":
        return replace(self, eta=eta)


class Outcome(str, enum.Enum):
    ENTERED_BALL = "EnteredBall"
    ESCAPED = "Escaped"
    TIMED_OUT = "TimedOut"
    FAILED = "Failed"

    def __str__(self) -> str:
        return self.value


class Membership(str, enum.Enum):
    CONVERGED = "Converged"
    DIVERGED = "Diverged"
    UNDETERMINED = "Undetermined"

    def __str__(self) -> str:
        return self.value


_MEMBERSHIP = {
    Outcome.ENTERED_BALL: Membership.CONVERGED,
    Outcome.ESCAPED: Membership.DIVERGED,
    Outcome.TIMED_OUT: Membership.UNDETERMINED,
}


@dataclass
class Trajectory:
    t: np.ndarray
    states: np.ndarray  # (len(t), n)
    outcome: Outcome
    entry_time: float = math.inf
    integral: float = 0.0  # int_0^t |x|^(2 beta) along the recorded span

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


@dataclass
class OracleValue:
    """A V or W value with its classification.

    ``lower``/``upper`` bracket the true value: the tail bound for
    converged points, ``[partial, 1]`` (or ``[partial, inf]``) for
    undetermined ones.
    """

    value: float
    lower: float
    upper: float
    membership: Membership
    entry_time: float

    @property
    def flagged(self) -> bool:
        return self.membership is Membership.UNDETERMINED

    @property
    def error(self) -> float:
        return self.upper - self.lower

    def __float__(self) -> float:
        return float(self.value)


@dataclass(frozen=True)
class LocalStability:
    jacobian: np.ndarray
    eigenvalues: np.ndarray
    hurwitz: bool
    marginal: bool  # some eigenvalue on the imaginary axis, none to its right
    P: np.ndarray | None
    eta: float | None  # sampled, non-rigorous basin radius
    mu: float | None
    delta: float | None

    @property
    def real_parts(self) -> np.ndarray:
        return self.eigenvalues.real


# -- local stability --------------------------------------------------------

DELTA_MARGIN = 0.1
ETA_SAFETY = 0.5


def _sphere_directions(n: int, count: int, seed: int = 0) -> np.ndarray:
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        a = np.linspace(0.0, 2 * np.pi, count, endpoint=False)
        return np.column_stack([np.cos(a), np.sin(a)])
    g = np.random.default_rng(seed).standard_normal((count, n))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _ellipsoid_radius(f: VectorField, P: np.ndarray) -> float:
    """Largest r on a geometric grid such that ``2 x'P f(x) < 0`` on the
    sampled sublevel set ``{x'Px <= lmin r^2}`` (which lies inside B_r)."""
    n = f.nvars
    evals, evecs = np.linalg.eigh(P)
    lmin = float(evals[0])
    dirs = _sphere_directions(n, 720 if n == 2 else 3000)
    # map unit directions onto the ellipsoid boundary x'Px = 1
    L = evecs / np.sqrt(evals)
    shell = dirs @ L.T
    fracs = np.linspace(0.05, 1.0, 20)
    best = 0.0
    for r in np.geomspace(1e-3, 1e2, 100):
        c = lmin * r * r
        X = (fracs[:, None, None] * math.sqrt(c) * shell[None]).reshape(-1, n)
        dV = 2.0 * np.einsum("ij,jk,ik->i", X, P, f.eval_many(X))
        if np.all(dV < 0):
            best = float(r)
        else:
            break
    return best


def local_stability(f: VectorField) -> LocalStability:
    """Linearization, quadratic Lyapunov function and a sampled basin radius.

    ``eta`` is the radius of a ball inside an ellipsoid on which the
    quadratic decrease condition held at every sampled point, shrunk by a
    safety factor.  It is an empirical estimate, not a proof.
    """
    cached = getattr(f, "_stability", None)
    if cached is not None:
        return cached
    A = f.jacobian_at_zero()
    ev = np.linalg.eigvals(A)
    tol = 1e-12 * max(1.0, float(np.max(np.abs(A))))
    hurwitz = bool(np.all(ev.real < -tol))
    marginal = bool(not hurwitz and np.all(ev.real <= tol))
    P = eta = mu = delta = None
    if hurwitz:
        P = scipy.linalg.solve_continuous_lyapunov(A.T, -np.eye(f.nvars))
        P = 0.5 * (P + P.T)
        pe = np.linalg.eigvalsh(P)
        mu = float(math.sqrt(pe[-1] / pe[0]))
        delta = float(abs(np.max(ev.real)) * (1 - DELTA_MARGIN))
        r = _ellipsoid_radius(f, P)
        eta = ETA_SAFETY * r * math.sqrt(pe[0] / pe[-1])
    out = LocalStability(A, ev, hurwitz, marginal, P, eta, mu, delta)
    f._stability = out
    return out


# -- batched Dormand-Prince integration --------------------------------------

# Butcher tableau, error weights and dense-output matrix of the 5(4) pair
_A = np.array(
    [
        [0, 0, 0, 0, 0],
        [1 / 5, 0, 0, 0, 0],
        [3 / 40, 9 / 40, 0, 0, 0],
        [44 / 45, -56 / 15, 32 / 9, 0, 0],
        [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0],
        [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    ]
)
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_E = np.array([-71 / 57600, 0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
_P = np.array(
    [
        [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0, 0, 0, 0],
        [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)


@dataclass
class BatchResult:
    outcome: np.ndarray  # Outcome values per row (object array)
    entry_time: np.ndarray
    integral: np.ndarray  # int |x|^(2 beta) up to the stop time
    tail_bound: np.ndarray  # bracket on the remainder, inf when unknown
    t_end: np.ndarray
    x_end: np.ndarray

    def membership(self) -> np.ndarray:
        return np.array(
            [_MEMBERSHIP.get(o, Membership.UNDETERMINED) for o in self.outcome], dtype=object
        )

    def converged(self) -> np.ndarray:
        return np.array([o is Outcome.ENTERED_BALL for o in self.outcome])


_ACTIVE, _ENTERED, _ESCAPED, _TIMED_OUT, _FAILED = -1, 0, 1, 2, 3
_CODES = {
    _ENTERED: Outcome.ENTERED_BALL,
    _ESCAPED: Outcome.ESCAPED,
    _TIMED_OUT: Outcome.TIMED_OUT,
    _FAILED: Outcome.FAILED,
}


def _rhs(f: VectorField, beta: int, Y: np.ndarray) -> np.ndarray:
    X = Y[:, :-1]
    out = np.empty_like(Y)
    out[:, :-1] = f.eval_many(X)
    out[:, -1] = np.einsum("ij,ij->i", X, X) ** beta
    return out


def simulate(
    f: VectorField,
    X0,
    cfg: OracleConfig,
    beta: int = 1,
    tail: bool = False,
    horizon: float | None = None,
    eta: float | None = None,
    tail_rate: tuple[float, float] | None = None,
    record: bool = False,
):
    """Integrate every row of ``X0`` together, each with its own step size.

    Each row stops at the first of: entering ``B_eta`` (crossing located by
    bisection on the dense output), leaving ``B_{R_escape}``, or reaching
    the horizon.  With ``tail=True`` a row that entered the ball keeps
    going until the exponential tail bound ``mu^2b eta^2b
    exp(-2 delta b (t - F)) / (2 delta b)`` is below ``cfg.tail_tol``;
    ``tail_rate = (mu, delta)`` supplies the constants.  The integral of
    ``|x|^(2 beta)`` is carried as an extra state component.

    ``eta=0`` disables the ball event.  With ``record=True`` the accepted
    step states are also returned per row.
    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    N, n = X0.shape
    if n != f.nvars:
        raise ValueError(f"points have dimension {n}, field has {f.nvars}")
    eta = cfg.eta if eta is None else eta
    if eta is None:
        raise ValueError("no ball radius: set cfg.eta or pass eta")
    T = cfg.T_max if horizon is None else float(horizon)
    rtol, atol = cfg.rel_tol, cfg.abs_tol

    Y = np.zeros((N, n + 1))
    Y[:, :n] = X0
    t = np.zeros(N)
    outcome = np.full(N, _ACTIVE, dtype=np.int8)
    F = np.full(N, math.inf)
    qF = np.zeros(N)
    t_stop = np.full(N, T)
    tail_b = np.full(N, math.inf)
    if tail and tail_rate is None:
        raise ValueError("tail integration needs (mu, delta)")
    tail_len = 0.0
    if tail:
        mu, delta = tail_rate
        rate = 2 * delta * beta
        b0 = (mu * eta) ** (2 * beta) / rate
        tail_len = max(0.0, math.log(b0 / cfg.tail_tol) / rate) if b0 > 0 else 0.0

    norms0 = np.linalg.norm(X0, axis=1)
    if eta > 0:
        inside = norms0 <= eta
        F[inside] = 0.0
        if tail:
            t_stop[inside] = tail_len
        else:
            outcome[inside] = _ENTERED
            t_stop[inside] = 0.0
    outside = norms0 >= cfg.R_escape
    outcome[outside & (outcome == _ACTIVE)] = _ESCAPED

    active = outcome == _ACTIVE
    # initial step from the usual scale heuristic
    f0 = _rhs(f, beta, Y)
    sc = atol + rtol * np.abs(Y)
    d0 = np.sqrt(np.mean((Y / sc) ** 2, axis=1))
    d1 = np.sqrt(np.mean((f0 / sc) ** 2, axis=1))
    h = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / np.maximum(d1, 1e-300))
    h = np.clip(h, 1e-8, 0.1)
    rec_t = [[0.0] for _ in range(N)] if record else None
    rec_x = [[X0[i].copy()] for i in range(N)] if record else None

    steps = 0
    while np.any(active):
        steps += 1
        if steps > cfg.max_steps:
            outcome[active] = _FAILED
            break
        idx = np.flatnonzero(active)
        y = Y[idx]
        hh = np.minimum(h[idx], t_stop[idx] - t[idx])
        K = np.empty((7,) + y.shape)
        K[0] = _rhs(f, beta, y)
        for s in range(1, 6):
            K[s] = _rhs(f, beta, y + hh[:, None] * np.tensordot(_A[s, :s], K[:s], axes=1))
        y_new = y + hh[:, None] * np.tensordot(_B, K[:6], axes=1)
        finite = np.all(np.isfinite(y_new), axis=1)
        y_new[~finite] = y[~finite]
        K[6] = _rhs(f, beta, y_new)
        err = hh[:, None] * np.tensordot(_E, K, axes=1)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        # the quadrature component is judged relative to its own size only
        en = np.sqrt(np.mean((err / scale) ** 2, axis=1))
        en[~finite] = np.inf
        accept = en <= 1.0
        fac = np.where(en == 0, 10.0, 0.9 * np.power(np.maximum(en, 1e-300), -0.2))
        fac = np.clip(fac, 0.2, 10.0)
        fac[~accept] = np.minimum(fac[~accept], 1.0)
        h[idx] = hh * fac
        tiny = hh < 16 * np.finfo(float).eps * np.maximum(1.0, np.abs(t[idx]))
        fail = tiny & ~accept
        if np.any(fail):
            outcome[idx[fail]] = _FAILED
            active[idx[fail]] = False

        acc = np.flatnonzero(accept)
        if acc.size == 0:
            continue
        rows = idx[acc]
        ya, yn, ha = y[acc], y_new[acc], hh[acc]
        t_new = t[rows] + ha
        xn = np.linalg.norm(yn[:, :n], axis=1)

        if eta > 0:
            hit = (xn <= eta) & ~np.isfinite(F[rows])
            if np.any(hit):
                hk = np.flatnonzero(hit)
                Q = np.einsum("sk,srj->rjk", _P, K[:, acc[hk]])  # (rows, n+1, 4)

                def dense(theta):
                    pw = np.stack([theta, theta**2, theta**3, theta**4], axis=1)
                    return ya[hk] + ha[hk, None] * np.einsum("rjk,rk->rj", Q, pw)

                lo = np.zeros(hk.size)
                hi = np.ones(hk.size)
                for _ in range(30):
                    mid = 0.5 * (lo + hi)
                    inb = np.linalg.norm(dense(mid)[:, :n], axis=1) <= eta
                    hi = np.where(inb, mid, hi)
                    lo = np.where(inb, lo, mid)
                ycross = dense(hi)
                r_hit = rows[hk]
                F[r_hit] = t[r_hit] + hi * ha[hk]
                qF[r_hit] = ycross[:, -1]
                if tail:
                    t_stop[r_hit] = F[r_hit] + tail_len
                else:
                    # stop exactly at the crossing
                    yn[hk] = ycross
                    t_new[hk] = F[r_hit]
                    outcome[r_hit] = _ENTERED

        Y[rows] = yn
        t[rows] = t_new
        if record:
            for k, r in enumerate(rows):
                rec_t[r].append(float(t_new[k]))
                rec_x[r].append(yn[k, :n].copy())

        esc = (xn >= cfg.R_escape) & (outcome[rows] == _ACTIVE)
        outcome[rows[esc]] = _ESCAPED
        done = rows[(t_new >= t_stop[rows] * (1 - 1e-15)) & (outcome[rows] == _ACTIVE)]
        outcome[done] = np.where(np.isfinite(F[done]), _ENTERED, _TIMED_OUT)
        active[rows] = outcome[rows] == _ACTIVE

    integral = Y[:, -1].copy()
    entered = outcome == _ENTERED
    if tail:
        rate_t = 2 * tail_rate[1] * beta
        b0 = (tail_rate[0] * eta) ** (2 * beta) / rate_t
        tail_b[entered] = b0 * np.exp(-rate_t * (t[entered] - F[entered]))
    labels = np.array([_CODES[c] for c in outcome], dtype=object)
    res = BatchResult(labels, F, integral, tail_b, t.copy(), Y[:, :n].copy())
    if record:
        return res, [(np.array(a), np.array(b)) for a, b in zip(rec_t, rec_x)]
    return res


def _stability_for(f: VectorField, cfg: OracleConfig, allow_marginal: bool) -> tuple[LocalStability, float]:
    ls = local_stability(f)
    if not ls.hurwitz and not (allow_marginal and ls.marginal):
        raise OracleAssumptionError(
            f"linearization is not Hurwitz (eigenvalue real parts {np.round(ls.real_parts, 12)}); "
            "convergence cannot be inferred from entering a small ball"
        )
    eta = cfg.eta if cfg.eta is not None else ls.eta
    if eta is None or eta <= 0:
        raise OracleAssumptionError("no certified ball radius available; set OracleConfig.eta")
    if ls.hurwitz and ls.eta is not None and cfg.eta is not None and cfg.eta > ls.eta:
        raise OracleAssumptionError(
            f"eta={cfg.eta} exceeds the sampled quadratic basin radius {ls.eta:.4g}"
        )
    return ls, eta


def integrate(
    f: VectorField, x0, horizon: float, cfg: OracleConfig, stop_on_entry: bool = True
) -> Trajectory:
    """Trajectory from ``x0`` up to ``horizon`` (earlier on entry or escape).

    Raises :class:`IntegrationError` on step-size underflow.  With
    ``stop_on_entry=False`` (or ``cfg.eta=None``) the ball event is off.
    """
    eta = cfg.eta if (stop_on_entry and cfg.eta is not None) else 0.0
    res, recs = simulate(f, x0, cfg, horizon=horizon, eta=eta, record=True)
    if res.outcome[0] is Outcome.FAILED:
        raise IntegrationError(
            f"step size underflow or step limit at t={res.t_end[0]:.6g} from x0={np.ravel(x0)}"
        )
    t, X = recs[0]
    return Trajectory(t, X, res.outcome[0], float(res.entry_time[0]), float(res.integral[0]))


def roa_member_many(
    f: VectorField, X, cfg: OracleConfig, allow_marginal: bool = False
) -> np.ndarray:
    """Membership of each row; integration failures count as Undetermined."""
    _, eta = _stability_for(f, cfg, allow_marginal)
    return simulate(f, X, cfg, eta=eta).membership()


def roa_member(f: VectorField, x0, cfg: OracleConfig, allow_marginal: bool = False) -> Membership:
    _, eta = _stability_for(f, cfg, allow_marginal)
    res = simulate(f, x0, cfg, eta=eta)
    if res.outcome[0] is Outcome.FAILED:
        raise IntegrationError(f"integration failed from x0={np.ravel(x0)}")
    return res.membership()[0]


def entry_time(f: VectorField, x0, eta: float, cfg: OracleConfig, allow_marginal: bool = False) -> float:
    """First time the trajectory is in the closed ball ``B_eta``; ``inf`` if it never is."""
    _stability_for(f, cfg, allow_marginal)
    res = simulate(f, x0, cfg, eta=eta)
    if res.outcome[0] is Outcome.FAILED:
        raise IntegrationError(f"integration failed from x0={np.ravel(x0)}")
    return float(res.entry_time[0]) if res.outcome[0] is Outcome.ENTERED_BALL else math.inf


@dataclass
class OracleTable:
    points: np.ndarray
    membership: np.ndarray
    V: np.ndarray
    V_upper: np.ndarray
    W: np.ndarray
    W_upper: np.ndarray
    entry_time: np.ndarray

    def rows(self):
        for k in range(len(self.points)):
            yield (
                self.points[k], self.membership[k].value, self.W[k], self.V[k], self.entry_time[k]
            )


def oracle_many(
    f: VectorField, X, lam: float, beta: int, cfg: OracleConfig, allow_marginal: bool = False
) -> OracleTable:
    """V, W, membership and entry time for every row of ``X``.

    Converged rows carry the tail bracket; Diverged rows get ``V = inf``,
    ``W = 1``; Undetermined rows report the partial integral with upper
    brackets ``inf`` and ``1``.  Without a Hurwitz linearization (only
    with ``allow_marginal``) there is no tail estimate, so converged rows
    report the integral up to ball entry with upper brackets ``inf``, ``1``.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if int(beta) != beta or beta < 1:
        raise ValueError(f"beta must be a positive integer, got {beta}")
    ls, eta = _stability_for(f, cfg, allow_marginal)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if ls.hurwitz:
        res = simulate(f, X, cfg, beta=int(beta), tail=True, eta=eta, tail_rate=(ls.mu, ls.delta))
    else:
        res = simulate(f, X, cfg, beta=int(beta), eta=eta)
    mem = res.membership()
    V = res.integral.copy()
    Vu = V + res.tail_bound
    conv = np.array([m is Membership.CONVERGED for m in mem], dtype=bool)
    div = np.array([m is Membership.DIVERGED for m in mem], dtype=bool)
    und = ~(conv | div)
    V[div] = math.inf
    Vu[div | und] = math.inf
    W = -np.expm1(-lam * V)
    Wu = -np.expm1(-lam * Vu)
    W[div] = 1.0
    Wu[div | und] = 1.0
    F = np.where(conv, res.entry_time, math.inf)
    return OracleTable(X, mem, V, Vu, W, Wu, F)


def v_oracle(f: VectorField, x0, beta: int, cfg: OracleConfig) -> OracleValue:
    """``V(x0) = int_0^inf |phi(x0, t)|^(2 beta) dt``; ``inf`` for divergent points."""
    tab = oracle_many(f, x0, 1.0, beta, cfg)
    m = tab.membership[0]
    v = float(tab.V[0])
    return OracleValue(v, v, float(tab.V_upper[0]), m, float(tab.entry_time[0]))


def w_oracle(f: VectorField, x0, lam: float, beta: int, cfg: OracleConfig) -> OracleValue:
    """``W(x0) = 1 - exp(-lam V(x0))``; exactly 1 for divergent points."""
    tab = oracle_many(f, x0, lam, beta, cfg)
    m = tab.membership[0]
    w = float(tab.W[0])
    return OracleValue(w, w, float(tab.W_upper[0]), m, float(tab.entry_time[0]))


# -- diagnostics for the theoretical constants ------------------------------


def sample_ball(n: int, R: float, count: int, seed: int) -> np.ndarray:
    """Uniform points in the open ball ``B_R`` (Philox stream keyed by ``seed``)."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    g = rng.standard_normal((count, n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = R * rng.random(count) ** (1.0 / n)
    return g * r[:, None]


def estimate_theta(f: VectorField, R: float, n_samples: int = 4000, seed: int = 0) -> float:
    """Sampled bound on ``|D^a f|_2`` over ``B_R`` for ``|a| <= 2``.

    The Jacobian's operator norm is included too, since that is what the
    exponential divergence estimate actually needs.
    """
    X = sample_ball(f.nvars, R, n_samples, seed)
    n = f.nvars
    derivs = [list(f.components)]
    first = [[c.diff(i) for c in f.components] for i in range(n)]
    derivs += first
    derivs += [[c.diff(j) for c in first[i]] for i in range(n) for j in range(i, n)]
    best = 0.0
    for comps in derivs:
        vals = np.column_stack([c.eval_many(X) for c in comps])
        best = max(best, float(np.max(np.linalg.norm(vals, axis=1))))
    J = np.stack([np.column_stack([c.eval_many(X) for c in row]) for row in first], axis=2)
    best = max(best, float(np.max(np.linalg.norm(J, ord=2, axis=(1, 2)))))
    return best


def lipschitz_bound(
    lam: float, beta: int, R: float, theta: float, mu: float, delta: float, eta: float
) -> float:
    """``K = 2 lam max{2b R^(2b-1)/theta, 2b (mu eta)^(2b-1)/(delta(2b-1) - theta)}``.

    ``inf`` when the second denominator is not positive.
    """
    den = delta * (2 * beta - 1) - theta
    if den <= 0:
        return math.inf
    a = 2 * beta * R ** (2 * beta - 1) / theta
    b = 2 * beta * (mu * eta) ** (2 * beta - 1) / den
    return 2 * lam * max(a, b)


@dataclass
class Diagnostics:
    theta: float
    mu: float | None
    delta: float | None
    eta: float | None
    K: float
    lam_threshold: float  # lam must exceed theta eta^(-2 beta)
    beta_threshold: float  # beta must exceed theta / (2 delta) + 1/2
    lam_ok: bool
    beta_ok: bool
    hurwitz: bool
    marginal: bool

    def as_dict(self) -> dict:
        return {k: (v if not isinstance(v, float) or math.isfinite(v) else str(v))
                for k, v in self.__dict__.items()}


def diagnostics(
    f: VectorField, lam: float, beta: int, R: float, n_samples: int = 4000, seed: int = 0
) -> Diagnostics:
    """Estimated constants and whether the Lipschitz hypotheses on lam, beta hold.

    Everything here is sampled and labeled non-rigorous; the pipeline
    reports these values but does not enforce them.
    """
    ls = local_stability(f)
    theta = estimate_theta(f, R, n_samples, seed)
    if ls.hurwitz:
        lam_t = theta * ls.eta ** (-2 * beta)
        beta_t = theta / (2 * ls.delta) + 0.5
        K = lipschitz_bound(lam, beta, R, theta, ls.mu, ls.delta, ls.eta)
    else:
        lam_t = beta_t = K = math.inf
    return Diagnostics(
        theta, ls.mu, ls.delta, ls.eta, K, lam_t, beta_t,
        bool(lam > lam_t), bool(beta > beta_t), ls.hurwitz, ls.marginal,
    )


def divergence_ratios(
    f: VectorField, pairs: np.ndarray, t: float, theta: float, cfg: OracleConfig
) -> np.ndarray:
    """``|phi(x,t) - phi(y,t)| / (e^(theta t) |x - y|)`` for rows ``(x, y)`` of ``pairs``.

    Values above 1 contradict the exponential divergence estimate.
    """
    n = f.nvars
    X, Y = pairs[:, :n], pairs[:, n:]
    rx = simulate(f, X, cfg, horizon=t, eta=0.0)
    ry = simulate(f, Y, cfg, horizon=t, eta=0.0)
    num = np.linalg.norm(rx.x_end - ry.x_end, axis=1)
    den = math.exp(theta * t) * np.linalg.norm(X - Y, axis=1)
    return num / den


def reverse_time_boundary(
    f: VectorField, x0, T: float, cfg: OracleConfig, keep: float = 0.25
) -> np.ndarray:
    """States on the last ``keep`` fraction of a reverse-time trajectory.

    For a field whose ROA is bounded by an unstable limit cycle, flowing
    backwards from a point inside the ROA converges onto that cycle, so
    the tail of the trajectory traces the ROA boundary.
    """
    back = VectorField([c.scale(-1.0) for c in f.components])
    tr = integrate(back, x0, T, cfg, stop_on_entry=False)
    if tr.outcome is Outcome.ESCAPED:
        raise IntegrationError("reverse-time trajectory escaped; no bounding cycle found")
    # resample uniformly in time from the recorded steps
    ts = np.linspace(T * (1 - keep), tr.t[-1], 2000)
    return np.column_stack([np.interp(ts, tr.t, tr.states[:, i]) for i in range(f.nvars)])
