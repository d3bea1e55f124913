"""Compound Poisson distributions and point processes.

A compound Poisson variable is ``M = Q_1 + ... + Q_N`` with ``N ~ Poisson(s)``
and i.i.d. cluster sizes ``Q_j >= 1`` drawn from a multiplicity law
``(lambda_l)_{l >= 1}``.  Multiplicity laws are carried as an explicit head
``lambda_1..lambda_K`` plus an optional matrix-geometric tail

    lambda_{K+k} = row @ A**(k-1) @ col,   k >= 1,

which covers the Polya-Aeppli (geometric) case exactly as a 1x1 block and
keeps tail mass and moments analytic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

__all__ = [
    "MultiplicityLaw",
    "CpdParams",
    "MarkedSample",
    "cpd_pmf_direct",
    "cpd_pmf_recursive",
    "sample_cpd",
    "sample_cppp",
    "polya_aeppli_multiplicity",
    "poisson_multiplicity",
    "total_variation",
]

MASS_TOL = 1e-12
DIRECT_MAX_N = 25


def _as_tuple(values) -> tuple[float, ...]:
    return tuple(float(v) for v in np.asarray(values, dtype=float).ravel())


@dataclass(frozen=True)
class MultiplicityLaw:
    """Cluster-size law on {1, 2, ...}.

    Parameters
    ----------
    probs : sequence of float
        Explicit head ``lambda_1, ..., lambda_K``.
    tail_row, tail_matrix, tail_col : optional
        Matrix-geometric tail beyond the head.  ``tail_matrix`` must have
        spectral radius < 1.  Leave all three as ``None`` for a truncated law.
    """

    probs: tuple[float, ...]
    tail_row: tuple[float, ...] | None = None
    tail_matrix: tuple[tuple[float, ...], ...] | None = None
    tail_col: tuple[float, ...] | None = None
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "probs", _as_tuple(self.probs))
        parts = (self.tail_row, self.tail_matrix, self.tail_col)
        if any(p is not None for p in parts):
            if any(p is None for p in parts):
                raise ValueError("tail_row, tail_matrix and tail_col go together")
            A = np.atleast_2d(np.asarray(self.tail_matrix, dtype=float))
            row = np.asarray(self.tail_row, dtype=float).ravel()
            col = np.asarray(self.tail_col, dtype=float).ravel()
            if A.shape[0] != A.shape[1] or row.size != A.shape[0] or col.size != A.shape[0]:
                raise ValueError("tail block shapes are inconsistent")
            if A.size and max(abs(np.linalg.eigvals(A))) >= 1.0:
                raise ValueError("tail matrix must have spectral radius < 1")
            object.__setattr__(self, "tail_row", _as_tuple(row))
            object.__setattr__(self, "tail_matrix", tuple(_as_tuple(r) for r in A))
            object.__setattr__(self, "tail_col", _as_tuple(col))
        if any(p < -MASS_TOL or p > 1 + MASS_TOL for p in self.probs):
            raise ValueError("multiplicity probabilities must lie in [0, 1]")
        total = self.total_mass()
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"multiplicity law has total mass {total!r}, expected 1")
        if self.has_tail and min(self.head(len(self.probs) + 64)) < -MASS_TOL:
            raise ValueError("tail produces negative probabilities")

    # -- constructors -----------------------------------------------------
    @classmethod
    def truncated(cls, probs: Sequence[float]) -> "MultiplicityLaw":
        return cls(tuple(probs))

    @classmethod
    def geometric(cls, ratio: float, head: Sequence[float] = (), scale: float | None = None):
        """Head followed by ``lambda_{K+k} = scale * ratio**(k-1)``.

        With an empty head and no ``scale``, this is the geometric law
        ``(1 - ratio) * ratio**(l-1)``.
        """
        if not 0.0 <= ratio < 1.0:
            raise ValueError("geometric ratio must lie in [0, 1)")
        if scale is None:
            scale = (1.0 - sum(head)) * (1.0 - ratio)
        return cls(tuple(head), (scale,), ((ratio,),), (1.0,))

    # -- queries ----------------------------------------------------------
    @property
    def has_tail(self) -> bool:
        return self.tail_matrix is not None

    @property
    def tail_kind(self) -> str:
        if not self.has_tail:
            return "truncated"
        return "geometric" if len(self.tail_matrix) == 1 else "matrix_geometric"

    @property
    def ratio(self) -> float | None:
        """Geometric tail ratio, when the tail is a 1x1 block."""
        return self.tail_matrix[0][0] if self.tail_kind == "geometric" else None

    def _tail_arrays(self):
        return (np.asarray(self.tail_row), np.asarray(self.tail_matrix), np.asarray(self.tail_col))

    def head(self, n: int) -> np.ndarray:
        """Return ``lambda_1..lambda_n`` as an array (zeros past finite support)."""
        key = ("head", n)
        if key in self._cache:
            return self._cache[key]
        out = np.zeros(n)
        k = min(n, len(self.probs))
        out[:k] = self.probs[:k]
        if self.has_tail and n > len(self.probs):
            row, A, col = self._tail_arrays()
            v = row.copy()
            for i in range(len(self.probs), n):
                out[i] = v @ col
                v = v @ A
        out.flags.writeable = False
        self._cache[key] = out
        return out

    def prob(self, ell: int) -> float:
        if ell < 1:
            return 0.0
        return float(self.head(ell)[ell - 1])

    def tail_mass_beyond(self, n: int) -> float:
        """Mass of ``{l > n}``."""
        if n <= 0:
            return 1.0
        return max(0.0, self.total_mass() - float(self.head(n).sum()))

    def total_mass(self) -> float:
        total = math.fsum(self.probs)
        if self.has_tail:
            row, A, col = self._tail_arrays()
            total += float(row @ np.linalg.solve(np.eye(len(A)) - A, col))
        return total

    def mean(self) -> float:
        """First moment ``sum_l l * lambda_l`` (exact for analytic tails)."""
        k = len(self.probs)
        m = math.fsum((i + 1) * p for i, p in enumerate(self.probs))
        if self.has_tail:
            row, A, col = self._tail_arrays()
            inv = np.linalg.inv(np.eye(len(A)) - A)
            tail = float(row @ inv @ col)
            m += k * tail + float(row @ inv @ inv @ col)
        return m

    def support_bound(self, eps: float = 1e-16) -> int:
        """Smallest n with tail mass beyond n below ``eps``."""
        if not self.has_tail:
            nz = [i for i, p in enumerate(self.probs) if p > 0]
            return (nz[-1] + 1) if nz else 1
        n = max(len(self.probs), 1)
        while self.tail_mass_beyond(n) > eps and n < 100_000:
            n *= 2
        return n

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw i.i.d. cluster sizes."""
        if self.tail_kind == "geometric":
            k = len(self.probs)
            head_mass = math.fsum(self.probs)
            out = np.empty(size, dtype=np.int64)
            u = rng.random(size)
            in_head = u < head_mass
            if k:
                cdf = np.cumsum(self.probs)
                out[in_head] = np.searchsorted(cdf, u[in_head], side="right") + 1
            n_tail = int((~in_head).sum())
            out[~in_head] = k + rng.geometric(1.0 - self.ratio, size=n_tail)
            return out
        n = self.support_bound()
        cdf = np.cumsum(self.head(n))
        cdf /= cdf[-1]
        return np.searchsorted(cdf, rng.random(size), side="right") + 1


def poisson_multiplicity() -> MultiplicityLaw:
    """The degenerate law delta_1 (CPD collapses to Poisson)."""
    return MultiplicityLaw((1.0,))


def polya_aeppli_multiplicity(D: float) -> MultiplicityLaw:
    """Geometric law ``lambda_l = (1 - 1/D) * D**-(l-1)`` for ``D > 1``."""
    if not D > 1:
        raise ValueError(f"Polya-Aeppli parameter must exceed 1, got {D!r}")
    if math.isinf(D):
        return poisson_multiplicity()
    return MultiplicityLaw.geometric(1.0 / float(D))


@dataclass(frozen=True)
class CpdParams:
    intensity: float
    multiplicity: MultiplicityLaw

    def __post_init__(self):
        if not self.intensity > 0:
            raise ValueError("CPD intensity must be positive")

    @property
    def mean(self) -> float:
        return self.intensity * self.multiplicity.mean()


@dataclass(frozen=True)
class MarkedSample:
    """Finite atomic measure on [0, 1) with integer multiplicities."""

    positions: tuple[float, ...]
    multiplicities: tuple[int, ...]

    def __post_init__(self):
        if len(self.positions) != len(self.multiplicities):
            raise ValueError("positions and multiplicities differ in length")
        if any(not 0.0 <= p < 1.0 for p in self.positions):
            raise ValueError("mark positions must lie in [0, 1)")
        if any(m < 1 for m in self.multiplicities):
            raise ValueError("multiplicities must be >= 1")

    @property
    def total(self) -> int:
        return int(sum(self.multiplicities))

    def count(self, a: float, b: float) -> int:
        """Mass of the half-open interval [a, b)."""
        return int(sum(m for p, m in zip(self.positions, self.multiplicities) if a <= p < b))


def _compositions(n: int):
    """Yield every composition of n into positive parts."""
    for k in range(n):
        for cuts in combinations(range(1, n), k):
            edges = (0,) + cuts + (n,)
            yield tuple(edges[i + 1] - edges[i] for i in range(len(edges) - 1))


def cpd_pmf_direct(params: CpdParams, n: int) -> float:
    """CPD probability of ``n`` by explicit composition enumeration.

    Only meant as a small-n oracle: the number of compositions is 2**(n-1).
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n > DIRECT_MAX_N:
        raise ValueError(f"direct evaluation is capped at n <= {DIRECT_MAX_N}")
    s = params.intensity
    if n == 0:
        return math.exp(-s)
    lam = params.multiplicity.head(n)
    by_parts = [0.0] * (n + 1)
    for comp in _compositions(n):
        by_parts[len(comp)] += math.prod(lam[c - 1] for c in comp)
    return math.fsum(
        s**l * math.exp(-s) / math.factorial(l) * by_parts[l] for l in range(1, n + 1)
    )


def cpd_pmf_recursive(params: CpdParams, n_max: int) -> np.ndarray:
    """CPD pmf ``p_0..p_{n_max}`` via ``p_n = (s/n) sum_l l lambda_l p_{n-l}``."""
    if n_max < 0:
        raise ValueError("n_max must be nonnegative")
    s = params.intensity
    lam = params.multiplicity.head(max(n_max, 1))
    w = s * np.arange(1, n_max + 1) * lam[:n_max]
    p = np.zeros(n_max + 1)
    p[0] = math.exp(-s)
    for n in range(1, n_max + 1):
        p[n] = np.dot(w[:n], p[n - 1 :: -1][:n]) / n
    return p


def sample_cpd(params: CpdParams, rng: np.random.Generator, size: int | None = None):
    """Draw from CPD: a Poisson number of i.i.d. cluster sizes, summed."""
    m = 1 if size is None else size
    counts = rng.poisson(params.intensity, size=m)
    total = int(counts.sum())
    sizes = params.multiplicity.sample(rng, total)
    owner = np.repeat(np.arange(m), counts)
    out = np.bincount(owner, weights=sizes, minlength=m).astype(np.int64)
    return int(out[0]) if size is None else out


def sample_cppp(params: CpdParams, rng: np.random.Generator) -> MarkedSample:
    """Draw one realization of the compound Poisson point process on [0, 1)."""
    n = int(rng.poisson(params.intensity))
    pos = np.sort(rng.random(n))
    mult = params.multiplicity.sample(rng, n)
    return MarkedSample(tuple(pos.tolist()), tuple(int(m) for m in mult))


def total_variation(p, q) -> float:
    """Total variation between two pmfs on {0, 1, ...}.

    Either input may be truncated; its missing mass is treated as a single
    overflow bucket and compared with the other's.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    n = max(p.size, q.size)
    pp = np.zeros(n)
    qq = np.zeros(n)
    pp[: p.size] = p
    qq[: q.size] = q
    tail_p = max(0.0, 1.0 - math.fsum(pp))
    tail_q = max(0.0, 1.0 - math.fsum(qq))
    return 0.5 * (float(np.abs(pp - qq).sum()) + abs(tail_p - tail_q))
