"""Sparse multivariate polynomials over the reals.

Polynomials are stored as a map from exponent tuples to float coefficients.
All monomial orderings in the package use the graded-lexicographic order
produced by :func:`monomial_basis`, so moment vectors, Gram bases and
coefficient vectors index identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations_with_replacement
from typing import Iterable, Mapping, Sequence

import numpy as np

Monomial = tuple[int, ...]

# relative threshold below which a coefficient is treated as cancellation residue
ZERO_TOL = 1e-14


def grlex_key(m: Monomial) -> tuple:
    """Sort key: total degree first, then lexicographically larger exponents first.

    With this key the degree-2 basis in two variables reads
    ``1, x1, x2, x1^2, x1 x2, x2^2``.
    """
    return (sum(m), tuple(-e for e in m))


@lru_cache(maxsize=None)
def _basis_cached(n: int, d: int) -> tuple[Monomial, ...]:
    out: list[Monomial] = []
    for deg in range(d + 1):
        layer = []
        for combo in combinations_with_replacement(range(n), deg):
            e = [0] * n
            for i in combo:
                e[i] += 1
            layer.append(tuple(e))
        layer.sort(key=grlex_key)
        out.extend(layer)
    return tuple(out)


def monomial_basis(n: int, d: int) -> list[Monomial]:
    """All exponent vectors in ``n`` variables with total degree ``<= d``.

    The length is ``C(d + n, n)`` and the constant monomial comes first.
    """
    if n < 1:
        raise ValueError(f"need at least one variable, got n={n}")
    if d < 0:
        raise ValueError(f"degree must be nonnegative, got d={d}")
    return list(_basis_cached(n, d))


def basis_size(n: int, d: int) -> int:
    return math.comb(d + n, n)


def _prune(terms: dict[Monomial, float], scale: float) -> dict[Monomial, float]:
    cut = ZERO_TOL * scale
    return {m: c for m, c in terms.items() if c != 0.0 and abs(c) > cut}


class Poly:
    """Immutable sparse polynomial in ``nvars`` real variables."""

    __slots__ = ("_terms", "nvars", "_compiled")

    def __init__(self, terms: Mapping[Sequence[int], float] | None, nvars: int):
        if nvars < 1:
            raise ValueError("nvars must be positive")
        clean: dict[Monomial, float] = {}
        for m, c in (terms or {}).items():
            m = tuple(int(e) for e in m)
            if len(m) != nvars:
                raise ValueError(f"exponent {m} does not have length {nvars}")
            if any(e < 0 for e in m):
                raise ValueError(f"negative exponent in {m}")
            c = float(c)
            if c != 0.0:
                clean[m] = clean.get(m, 0.0) + c
        scale = max((abs(c) for c in clean.values()), default=0.0)
        self._terms = _prune(clean, scale)
        self.nvars = nvars
        self._compiled = None

    # -- constructors -----------------------------------------------------
    @classmethod
    def zero(cls, nvars: int) -> "Poly":
        return cls({}, nvars)

    @classmethod
    def constant(cls, value: float, nvars: int) -> "Poly":
        return cls({(0,) * nvars: value}, nvars)

    @classmethod
    def variable(cls, i: int, nvars: int) -> "Poly":
        e = [0] * nvars
        e[i] = 1
        return cls({tuple(e): 1.0}, nvars)

    @classmethod
    def from_coefficients(
        cls, coeffs: Sequence[float], basis: Sequence[Monomial], nvars: int
    ) -> "Poly":
        if len(coeffs) != len(basis):
            raise ValueError("coefficient vector and basis differ in length")
        return cls(dict(zip(basis, coeffs)), nvars)

    # -- inspection -------------------------------------------------------
    @property
    def terms(self) -> dict[Monomial, float]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def coefficient(self, m: Sequence[int]) -> float:
        return self._terms.get(tuple(m), 0.0)

    def __len__(self) -> int:
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    @property
    def degree(self) -> int:
        """Total degree; the zero polynomial has degree -1."""
        return max((sum(m) for m in self._terms), default=-1)

    def max_abs_coefficient(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def coefficient_vector(self, basis: Sequence[Monomial]) -> np.ndarray:
        """Coefficients listed in ``basis`` order; raises if a term is missing from it."""
        index = {m: i for i, m in enumerate(basis)}
        out = np.zeros(len(basis))
        for m, c in self._terms.items():
            if m not in index:
                raise ValueError(f"monomial {m} not in the supplied basis")
            out[index[m]] = c
        return out

    def __repr__(self) -> str:
        if not self._terms:
            return f"Poly(0, nvars={self.nvars})"
        parts = []
        for m in sorted(self._terms, key=grlex_key):
            mono = "*".join(
                f"x{i + 1}" if e == 1 else f"x{i + 1}^{e}" for i, e in enumerate(m) if e
            )
            parts.append(f"{self._terms[m]:+.6g}" + (f"*{mono}" if mono else ""))
        return f"Poly({' '.join(parts)}, nvars={self.nvars})"

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, float)):
            other = Poly.constant(other, self.nvars)
        if not isinstance(other, Poly):
            return NotImplemented
        return self.nvars == other.nvars and self._terms == other._terms

    __hash__ = None  # type: ignore[assignment]

    def allclose(self, other: "Poly", atol: float = 1e-12) -> bool:
        self._check(other)
        keys = set(self._terms) | set(other._terms)
        return all(abs(self.coefficient(k) - other.coefficient(k)) <= atol for k in keys)

    # -- arithmetic -------------------------------------------------------
    def _check(self, other: "Poly") -> None:
        if self.nvars != other.nvars:
            raise ValueError(
                f"dimension mismatch: {self.nvars} vs {other.nvars} variables"
            )

    def _coerce(self, other) -> "Poly":
        if isinstance(other, Poly):
            self._check(other)
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Poly.constant(float(other), self.nvars)
        return NotImplemented

    def __add__(self, other) -> "Poly":
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        out = dict(self._terms)
        for m, c in other._terms.items():
            out[m] = out.get(m, 0.0) + c
        scale = max(self.max_abs_coefficient(), other.max_abs_coefficient())
        return Poly._raw(_prune(out, scale), self.nvars)

    __radd__ = __add__

    def __neg__(self) -> "Poly":
        return Poly._raw({m: -c for m, c in self._terms.items()}, self.nvars)

    def __sub__(self, other) -> "Poly":
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other) -> "Poly":
        return (-self) + other

    def scale(self, a: float) -> "Poly":
        a = float(a)
        if a == 0.0:
            return Poly.zero(self.nvars)
        return Poly._raw({m: a * c for m, c in self._terms.items()}, self.nvars)

    def __mul__(self, other) -> "Poly":
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(other)
        if not isinstance(other, Poly):
            return NotImplemented
        self._check(other)
        out: dict[Monomial, float] = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                m = tuple(a + b for a, b in zip(m1, m2))
                out[m] = out.get(m, 0.0) + c1 * c2
        scale = self.max_abs_coefficient() * other.max_abs_coefficient()
        return Poly._raw(_prune(out, scale), self.nvars)

    __rmul__ = __mul__

    def __pow__(self, k: int) -> "Poly":
        if not isinstance(k, int) or k < 0:
            raise ValueError("only nonnegative integer powers are supported")
        result = Poly.constant(1.0, self.nvars)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    @classmethod
    def _raw(cls, terms: dict[Monomial, float], nvars: int) -> "Poly":
        p = cls.__new__(cls)
        p._terms = terms
        p.nvars = nvars
        p._compiled = None
        return p

    # -- calculus ---------------------------------------------------------
    def diff(self, i: int) -> "Poly":
        out = {}
        for m, c in self._terms.items():
            if m[i]:
                e = list(m)
                e[i] -= 1
                out[tuple(e)] = c * m[i]
        return Poly._raw(out, self.nvars)

    def gradient(self) -> list["Poly"]:
        return [self.diff(i) for i in range(self.nvars)]

    def rescale(self, sigma: float) -> "Poly":
        """Return ``q`` with ``q(y) = p(sigma * y)``."""
        return Poly._raw(
            {m: c * sigma ** sum(m) for m, c in self._terms.items()}, self.nvars
        )

    # -- evaluation -------------------------------------------------------
    def _arrays(self):
        if self._compiled is None:
            monos = list(self._terms)
            exps = np.array(monos, dtype=np.int64).reshape(len(monos), self.nvars)
            coefs = np.array([self._terms[m] for m in monos], dtype=float)
            self._compiled = (exps, coefs)
        return self._compiled

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x.reshape(1)
        if x.shape != (self.nvars,):
            raise ValueError(
                f"point has dimension {x.shape}, polynomial expects ({self.nvars},)"
            )
        total = 0.0
        for m, c in self._terms.items():
            term = c
            for xi, e in zip(x, m):
                if e:
                    term *= xi**e
            total += term
        return float(total)

    def eval_many(self, X) -> np.ndarray:
        """Evaluate at each row of an ``(N, nvars)`` array."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1 and self.nvars == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[1] != self.nvars:
            raise ValueError(f"expected shape (N, {self.nvars}), got {X.shape}")
        exps, coefs = self._arrays()
        if coefs.size == 0:
            return np.zeros(X.shape[0])
        maxdeg = int(exps.max()) if exps.size else 0
        # powers[k, :, i] = X[:, i] ** k
        powers = np.ones((maxdeg + 1,) + X.shape)
        for k in range(1, maxdeg + 1):
            powers[k] = powers[k - 1] * X
        vals = np.ones((X.shape[0], coefs.size))
        for i in range(self.nvars):
            vals *= powers[exps[:, i], :, i].T
        return vals @ coefs

    # -- serialization ----------------------------------------------------
    def to_records(self) -> list[dict]:
        return [
            {"exponents": list(m), "coefficient": self._terms[m]}
            for m in sorted(self._terms, key=grlex_key)
        ]

    @classmethod
    def from_records(cls, records: Iterable[Mapping], nvars: int) -> "Poly":
        terms: dict[Monomial, float] = {}
        for k, rec in enumerate(records):
            try:
                m = tuple(int(e) for e in rec["exponents"])
                c = float(rec["coefficient"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"malformed term record #{k}: {rec!r}") from exc
            if len(m) != nvars:
                raise ValueError(
                    f"term record #{k} has {len(m)} exponents, expected {nvars}"
                )
            terms[m] = terms.get(m, 0.0) + c
        return cls(terms, nvars)


def norm_power(n: int, beta: int) -> Poly:
    """The polynomial ``(x1^2 + ... + xn^2)^beta``."""
    if beta < 1:
        raise ValueError("beta must be a positive integer")
    sq = Poly({tuple(2 if j == i else 0 for j in range(n)): 1.0 for i in range(n)}, n)
    return sq**beta


def gradient(p: Poly) -> list[Poly]:
    return p.gradient()


def lie_derivative(J: Poly, f: Sequence[Poly]) -> Poly:
    """``grad(J) . f`` for a vector field given as a sequence of components."""
    comps = list(getattr(f, "components", f))
    if len(comps) != J.nvars or any(c.nvars != J.nvars for c in comps):
        raise ValueError("vector field and polynomial have different dimensions")
    out = Poly.zero(J.nvars)
    for dJ, fi in zip(J.gradient(), comps):
        out = out + dJ * fi
    return out


@dataclass(frozen=True)
class MomentVector:
    """Box integrals of the degree-``d`` monomial basis, in basis order."""

    entries: np.ndarray
    degree: int
    box: tuple[tuple[float, float], ...]

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, k):
        return self.entries[k]

    @property
    def basis(self) -> list[Monomial]:
        return monomial_basis(len(self.box), self.degree)

    def integrate(self, p: Poly) -> float:
        """Integral of ``p`` over the box (``p`` must have degree ``<= d``)."""
        return float(self.entries @ p.coefficient_vector(self.basis))


def box_moments(d: int, box: Sequence[tuple[float, float]], n: int | None = None) -> MomentVector:
    """Integrals of every degree-``<= d`` basis monomial over an axis-aligned box.

    Uses the product formula ``prod_i (b_i^(e_i+1) - a_i^(e_i+1)) / (e_i + 1)``.
    Entries are indexed like ``monomial_basis(n, d)``.
    """
    box = [(float(a), float(b)) for a, b in box]
    n = len(box) if n is None else n
    if len(box) != n:
        raise ValueError("box dimension does not match the variable count")
    for i, (a, b) in enumerate(box):
        if not a < b:
            raise ValueError(f"degenerate box in coordinate {i}: [{a}, {b}]")
    # one_dim[i][e] = integral of x_i^e over [a_i, b_i]
    one_dim = []
    for a, b in box:
        row = []
        for e in range(d + 1):
            if a == -b and e % 2 == 1:
                row.append(0.0)
            else:
                row.append((b ** (e + 1) - a ** (e + 1)) / (e + 1))
        one_dim.append(row)
    out = np.empty(basis_size(n, d))
    for k, m in enumerate(monomial_basis(n, d)):
        v = 1.0
        for i, e in enumerate(m):
            v *= one_dim[i][e]
        out[k] = v
    return MomentVector(out, d, tuple(box))


def box_volume(box: Sequence[tuple[float, float]]) -> float:
    return float(np.prod([b - a for a, b in box]))
