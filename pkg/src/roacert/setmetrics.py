"""Monte Carlo volumes and the symmetric-difference volume metric over boxes.

Samples come from a counter-based Philox stream: point ``i`` is fixed by
``(seed, i)`` alone, so any subset of points can be regenerated in any
order or in parallel.  Every comparison in a report is evaluated on the
same points, which makes the metric axioms hold exactly rather than only
in expectation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .polyalg import box_volume

CHUNK = 4096


def _chunk(seed: int, k: int, dim: int) -> np.ndarray:
    gen = np.random.Generator(np.random.Philox(key=seed, counter=[0, k, 0, 0]))
    return gen.random((CHUNK, dim))


def uniform_points(box: Sequence[tuple[float, float]], n: int, seed: int, start: int = 0) -> np.ndarray:
    """Points ``start .. start+n-1`` of the stream for ``seed``, mapped into ``box``."""
    box = np.asarray(box, dtype=float).reshape(-1, 2)
    dim = len(box)
    if n <= 0:
        return np.zeros((0, dim))
    first, last = start // CHUNK, (start + n - 1) // CHUNK
    U = np.vstack([_chunk(seed, k, dim) for k in range(first, last + 1)])
    U = U[start - first * CHUNK: start - first * CHUNK + n]
    lo, hi = box[:, 0], box[:, 1]
    return lo + U * (hi - lo)


@dataclass(frozen=True)
class IndicatorSet:
    """A set given by a vectorized membership predicate ``(N, n) -> bool[N]``."""

    predicate: Callable[[np.ndarray], np.ndarray]
    label: str = "set"

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(self.predicate(np.atleast_2d(X)), dtype=bool)

    @classmethod
    def everything(cls, label: str = "box") -> "IndicatorSet":
        return cls(lambda X: np.ones(len(X), dtype=bool), label)

    @classmethod
    def nothing(cls, label: str = "empty") -> "IndicatorSet":
        return cls(lambda X: np.zeros(len(X), dtype=bool), label)

    @classmethod
    def sublevel(cls, g: Callable[[np.ndarray], np.ndarray], gamma: float, label: str) -> "IndicatorSet":
        """Strict sublevel set ``{g < gamma}``."""
        return cls(lambda X: np.asarray(g(X)) < gamma, label)


@dataclass(frozen=True)
class VolumeEstimate:
    value: float
    se: float
    n_samples: int
    seed: int
    hits: int
    box_volume: float

    @property
    def fraction(self) -> float:
        return self.hits / self.n_samples

    @classmethod
    def from_hits(cls, hits: int, n: int, seed: int, vol: float) -> "VolumeEstimate":
        p = hits / n
        return cls(vol * p, vol * math.sqrt(p * (1 - p) / n), n, seed, int(hits), vol)


class SharedSample:
    """One sample of ``box`` reused by every estimate drawn from it.

    Membership vectors are cached by set label, so a label must name one
    set only.
    """

    def __init__(self, box: Sequence[tuple[float, float]], n: int, seed: int):
        if n < 1:
            raise ValueError(f"need at least one sample, got n={n}")
        self.box = tuple((float(a), float(b)) for a, b in box)
        self.n = int(n)
        self.seed = int(seed)
        self.points = uniform_points(self.box, self.n, self.seed)
        self.volume_box = box_volume(self.box)
        self._cache: dict[str, np.ndarray] = {}

    def mask(self, s: IndicatorSet) -> np.ndarray:
        m = self._cache.get(s.label)
        if m is None:
            m = s(self.points)
            self._cache[s.label] = m
        return m

    def estimate(self, mask: np.ndarray) -> VolumeEstimate:
        return VolumeEstimate.from_hits(int(np.count_nonzero(mask)), self.n, self.seed, self.volume_box)

    def volume(self, s: IndicatorSet) -> VolumeEstimate:
        return self.estimate(self.mask(s))

    def dv(self, a: IndicatorSet, b: IndicatorSet) -> VolumeEstimate:
        return self.estimate(self.mask(a) ^ self.mask(b))


def volume_mc(s: IndicatorSet, box, n: int, seed: int) -> VolumeEstimate:
    """Hit fraction times the box volume, with the binomial standard error."""
    return SharedSample(box, n, seed).volume(s)


def dv_mc(a: IndicatorSet, b: IndicatorSet, box, n: int, seed: int) -> VolumeEstimate:
    """Volume of the symmetric difference ``(A \\ B) u (B \\ A)``."""
    return SharedSample(box, n, seed).dv(a, b)


def grid_volume(s: IndicatorSet, box, resolution: int) -> float:
    """Midpoint-rule volume on a ``resolution^n`` grid (cross-check for n <= 2)."""
    box = np.asarray(box, dtype=float).reshape(-1, 2)
    if len(box) > 2:
        raise ValueError("grid volumes are offered for n <= 2 only")
    axes = [a + (np.arange(resolution) + 0.5) * (b - a) / resolution for a, b in box]
    G = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(box))
    return float(np.mean(s(G))) * float(np.prod(box[:, 1] - box[:, 0]))


@dataclass(frozen=True)
class ConvergenceRow:
    d: int
    l1: float
    l1_se: float
    dv: VolumeEstimate


def sublevel_convergence_check(
    V: Callable[[np.ndarray], np.ndarray],
    family: Mapping[int, Callable[[np.ndarray], np.ndarray]],
    gamma: float,
    box,
    n: int,
    seed: int,
) -> list[ConvergenceRow]:
    """L1 distance and sublevel-set D_V between ``V`` and each ``J_d >= V``.

    Every ``J_d`` is evaluated on the same sample as ``V``; a sample where
    ``J_d < V - 1e-9`` rejects the family.
    """
    sample = SharedSample(box, n, seed)
    X = sample.points
    v = np.asarray(V(X), dtype=float)
    below_v = v < gamma
    rows = []
    for d in sorted(family):
        j = np.asarray(family[d](X), dtype=float)
        bad = np.flatnonzero(j < v - 1e-9)
        if bad.size:
            k = bad[0]
            raise ValueError(
                f"J_{d} < V at sample {k} (x={X[k].tolist()}): {j[k]:.6g} < {v[k]:.6g}"
            )
        diff = j - v
        l1 = sample.volume_box * float(np.mean(diff))
        l1_se = sample.volume_box * float(np.std(diff, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
        rows.append(ConvergenceRow(d, l1, l1_se, sample.estimate(below_v ^ (j < gamma))))
    return rows


REPORT_FIELDS = ("label_a", "label_b", "n", "seed", "estimate", "se")


def report_rows(sample: SharedSample, pairs: Sequence[tuple[IndicatorSet, IndicatorSet | None]]) -> list[dict]:
    """One row per pair; a ``None`` partner means the volume of the first set."""
    out = []
    for a, b in pairs:
        est = sample.volume(a) if b is None else sample.dv(a, b)
        out.append(
            {
                "label_a": a.label,
                "label_b": "" if b is None else b.label,
                "n": sample.n,
                "seed": sample.seed,
                "estimate": repr(est.value),
                "se": repr(est.se),
            }
        )
    return out


def write_report(rows: Sequence[Mapping], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
        w.writeheader()
        w.writerows(rows)
