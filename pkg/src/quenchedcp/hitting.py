"""Monte Carlo estimation of quenched hitting statistics.

Conventions: the hit count ``Z^L`` sums indicators ``I_0 .. I_{L-1}``; the
starred count ``Z_*^L`` and the higher-order hitting times ``r^l`` use
``I_1 .. I_L``.  Balls are closed, ``|x - x(theta^i omega)| <= rho``, in the
interval metric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import engine
from .cpd import MarkedSample, total_variation
from .maps import MapFamily, iterate, validate_family
from .noise import NoiseModel, Word, sample_word
from .targets import TargetSpec

__all__ = [
    "HitSeries",
    "EmpiricalLaw",
    "ExperimentPlan",
    "ball_mass_annealed",
    "kac_horizon",
    "hit_series",
    "count_hits",
    "count_hits_star",
    "hitting_time",
    "mark_hits",
    "interval_counts",
    "interval_count_matrix",
    "simulate_hits",
    "empirical_quenched_law",
    "empirical_alpha",
    "empirical_lambda",
    "annealed_entry_ratio",
    "fixed_word",
    "AlphaHat",
    "pooled_noise_bound",
]

N_MAX = 32


def _exact(x) -> Fraction:
    return engine._as_fraction(x)


def _ball_length(center: Fraction, rho: Fraction) -> Fraction:
    return min(Fraction(1), center + rho) - max(Fraction(0), center - rho)


def ball_mass_annealed(family: MapFamily, target: TargetSpec, rho, noise: NoiseModel | None = None) -> Fraction:
    """Marginal Lebesgue mass of the random ball, ``sum_v P(omega_0 = v) |B_rho(x_v)|``.

    Exact for rational targets; ``rho`` given as a float is read through its
    decimal representation, so ``1e-3`` means exactly 1/1000.
    """
    rho = _exact(rho)
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    if target.constant or noise is None:
        if not target.constant:
            raise ValueError("distinct target points need the noise model for their weights")
        return _ball_length(target.x0, rho)
    return sum(Fraction(noise.initial[v]) * _ball_length(target.point(v), rho) for v in range(noise.u))


def kac_horizon(t, mu) -> int:
    """``N = floor(t / mu)`` computed exactly."""
    mu = _exact(mu)
    if mu <= 0:
        raise ValueError("ball mass must be positive")
    return math.floor(_exact(t) / mu)


@dataclass(frozen=True)
class HitSeries:
    indicators: np.ndarray
    rho: float = 0.0
    word_id: str = ""
    x: object = None

    def __post_init__(self):
        arr = np.asarray(self.indicators, dtype=np.int8)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("a hit series needs at least one indicator")
        if not np.isin(arr, (0, 1)).all():
            raise ValueError("indicators must be 0 or 1")
        arr.setflags(write=False)
        object.__setattr__(self, "indicators", arr)

    @classmethod
    def from_bits(cls, bits: str, **meta) -> "HitSeries":
        return cls(np.array([int(c) for c in bits], dtype=np.int8), **meta)

    @property
    def N(self) -> int:
        return self.indicators.size

    def __str__(self) -> str:
        return "".join(map(str, self.indicators.tolist()))


def hit_series(family: MapFamily, target: TargetSpec, word: Sequence[int], x, N: int, rho) -> HitSeries:
    """Indicators along one exact orbit; a breakpoint raises `BreakpointError`."""
    if len(word) < N:
        raise ValueError(f"word of length {len(word)} is shorter than N={N}")
    orbit = iterate(family, word, x, N - 1)
    rho_q = _exact(rho) if isinstance(x, Fraction) else float(rho)
    ind = [1 if abs(orbit[i] - target.point(word[i])) <= rho_q else 0 for i in range(N)]
    wid = getattr(word, "provenance", "")
    return HitSeries(np.array(ind, dtype=np.int8), float(rho), wid, x)


def count_hits(series: HitSeries, L: int | None = None) -> int:
    """``Z^L = sum_{i=0}^{L-1} I_i`` (the whole series by default)."""
    L = series.N if L is None else L
    if L > series.N:
        raise ValueError("series shorter than L")
    return int(series.indicators[:L].sum())


def count_hits_star(series: HitSeries, L: int | None = None) -> int:
    """``Z_*^L = sum_{i=1}^{L} I_i``; needs ``L + 1`` indicators."""
    L = series.N - 1 if L is None else L
    if L + 1 > series.N:
        raise ValueError("series shorter than L + 1")
    return int(series.indicators[1 : L + 1].sum())


def hitting_time(series: HitSeries, ell: int):
    """Index of the ``ell``-th hit among ``I_1, I_2, ...``, or ``None`` if there is none."""
    if ell < 1:
        raise ValueError("ell must be at least 1")
    hits = np.flatnonzero(series.indicators[1:]) + 1
    return int(hits[ell - 1]) if hits.size >= ell else None


def mark_hits(series: HitSeries, N: int | None = None) -> MarkedSample:
    """Atoms at ``i / N`` for each hit (``N`` defaults to the series length)."""
    N = series.N if N is None else N
    idx = np.flatnonzero(series.indicators)
    pos = tuple(Fraction(int(i), N) for i in idx)
    return MarkedSample(tuple(float(p) for p in pos), tuple(1 for _ in pos))


def interval_counts(marks: MarkedSample, partition: Sequence[tuple]) -> np.ndarray:
    """``Y([a, b))`` for each interval of a disjoint partition of [0, 1)."""
    _check_partition(partition)
    return np.array([marks.count(a, b) for a, b in partition], dtype=np.int64)


def _check_partition(partition):
    spans = sorted((float(a), float(b)) for a, b in partition)
    for a, b in spans:
        if not 0 <= a < b <= 1:
            raise ValueError(f"interval [{a}, {b}) is not inside [0, 1)")
    for (a1, b1), (a2, b2) in zip(spans, spans[1:]):
        if a2 < b1:
            raise ValueError("partition intervals overlap")


def interval_count_matrix(hits: np.ndarray, partition: Sequence[tuple]) -> np.ndarray:
    """Vectorized `interval_counts` for hit rows of length ``N``: atoms at ``i / N``."""
    _check_partition(partition)
    N = hits.shape[1]
    i = np.arange(N)
    cols = []
    for a, b in partition:
        a, b = _exact(a), _exact(b)
        sel = np.array([a <= Fraction(int(k), N) < b for k in i])
        cols.append(hits[:, sel].sum(axis=1))
    return np.stack(cols, axis=1)


@dataclass(frozen=True)
class EmpiricalLaw:
    """Histogram of counts ``0..n_max`` followed by one overflow bucket."""

    counts: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @classmethod
    def from_values(cls, values: np.ndarray, n_max: int = N_MAX, **meta) -> "EmpiricalLaw":
        values = np.asarray(values)
        counts = np.bincount(np.minimum(values, n_max + 1), minlength=n_max + 2)
        return cls(counts, meta)

    @property
    def M(self) -> int:
        return int(self.counts.sum())

    @property
    def n_max(self) -> int:
        return self.counts.size - 2

    @property
    def overflow(self) -> int:
        return int(self.counts[-1])

    @property
    def probs(self) -> np.ndarray:
        """Empirical pmf on ``0..n_max`` (overflow excluded, so it may sum below 1)."""
        return self.counts[:-1] / self.M

    @property
    def stderr(self) -> np.ndarray:
        p = self.probs
        return np.sqrt(p * (1 - p) / self.M)

    def tv_to(self, pmf: Sequence[float]) -> float:
        pmf = np.asarray(pmf, dtype=float)[: self.n_max + 1]
        return total_variation(self.probs, pmf)

    def __add__(self, other: "EmpiricalLaw") -> "EmpiricalLaw":
        return EmpiricalLaw(self.counts + other.counts, self.meta)


@dataclass(frozen=True)
class ExperimentPlan:
    family: MapFamily
    target: TargetSpec
    noise: NoiseModel
    t: float = 1.0
    rho0: float = 1e-2
    gamma: float = 2.0
    schedule_length: int = 4
    samples: int = 100_000
    L: int = 64
    q: float = 1.0
    seed: int = 0
    omega_mode: str = "fixed_word"
    n_max: int = N_MAX
    ell_max: int = 8
    threads: int = 1

    def problems(self) -> list[str]:
        out = []
        if not self.t > 0:
            out.append("t must be positive")
        if self.omega_mode not in ("fixed_word", "resampled_per_replicate"):
            out.append(f"unknown omega_mode {self.omega_mode!r}")
        if not self.gamma * self.q > 1:
            out.append(f"schedule not summable: gamma*q = {self.gamma * self.q} must exceed 1")
        if self.samples < 1 or self.schedule_length < 1 or self.L < 1:
            out.append("samples, schedule_length and L must be positive")
        gap = min(min(x, 1 - x) for x in (self.target.x0, self.target.x1))
        if not 0 < self.rho0 < gap:
            out.append(f"rho0={self.rho0} must lie in (0, {float(gap)}), the distance from the target to {{0, 1}}")
        if self.noise.u != self.family.u:
            out.append("noise alphabet does not match the number of maps")
        return out

    def validate(self) -> "ExperimentPlan":
        p = self.problems() + list(validate_family(self.family).problems)
        if p:
            raise ValueError("; ".join(p))
        return self

    def rho_schedule(self) -> list[float]:
        """``rho_m = rho0 * m**-gamma`` for ``m = 1..schedule_length``."""
        return [self.rho0 * m ** (-self.gamma) for m in range(1, self.schedule_length + 1)]

    def ball_mass(self, rho) -> Fraction:
        return ball_mass_annealed(self.family, self.target, rho, self.noise)

    def horizon(self, rho) -> int:
        return kac_horizon(self.t, self.ball_mass(rho))


def fixed_word(plan: ExperimentPlan, length: int, index: int = 0) -> Word:
    """The quenched noise realization number ``index`` for this plan's seed."""
    rng = engine.chunk_rng(plan.seed, f"omega/{index}", 0)
    return sample_word(plan.noise, length, rng, tag=f"sampled(seed={plan.seed}, index={index})")


def simulate_hits(
    plan: ExperimentPlan,
    rho,
    N: int,
    omega: Word | None,
    tag: str,
    reducer,
    start: str = "uniform",
    samples: int | None = None,
    seed: int | None = None,
) -> list:
    """Run chunks of hit matrices and apply ``reducer(hits, symbols)`` to each.

    ``omega=None`` draws an independent word per sample.  ``start="ball"``
    starts each sample uniformly in the ball around ``x(omega)``.
    """
    system = engine.make_system(plan.family)
    points = plan.target.points(plan.family.u)
    samples = plan.samples if samples is None else samples
    seed = plan.seed if seed is None else seed
    shared = None
    if omega is not None:
        if len(omega) < N:
            raise ValueError(f"word of length {len(omega)} is shorter than N={N}")
        shared = np.asarray(omega.symbols[:N], dtype=np.int8)

    def chunk(rng, s, n):
        symbols = shared if shared is not None else plan.noise.sample(rng, (n, N))
        if start == "uniform":
            states = system.start_uniform(rng, n)
        elif start == "ball":
            first = np.full(n, shared[0]) if shared is not None else symbols[:, 0]
            states = system.start_uniform(rng, n)
            for v in range(plan.family.u):
                sel = first == v
                if sel.any():
                    states[sel] = system.start_ball(rng, int(sel.sum()), points[v], rho)
        else:
            raise ValueError(f"unknown start {start!r}")
        hits = engine.hit_matrix(system, points, rho, symbols, states, rng)
        return reducer(hits, symbols)

    return engine.run_chunks(chunk, samples, seed, tag, plan.threads)


def empirical_quenched_law(plan: ExperimentPlan, omega: Word | None, rho, N: int | None = None,
                           tag: str = "quenched") -> EmpiricalLaw:
    """Histogram of ``Z^{omega,N}`` over uniform initial points (``N`` = Kac horizon)."""
    N = plan.horizon(rho) if N is None else N
    parts = simulate_hits(plan, rho, N, omega, f"{tag}/{rho!r}", lambda h, s: h.sum(axis=1))
    z = np.concatenate(parts)
    return EmpiricalLaw.from_values(z, plan.n_max, rho=rho, N=N, M=plan.samples)


@dataclass(frozen=True)
class AlphaHat:
    alpha: np.ndarray
    hat_alpha: np.ndarray
    counts: np.ndarray

    @property
    def M(self) -> int:
        return int(self.counts.sum())

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(self.alpha * (1 - self.alpha) / self.M)

    def exact(self) -> tuple[list[Fraction], list[Fraction]]:
        """``(alpha_hat, hat_alpha_hat)`` as exact rationals of the integer counts."""
        M = self.M
        tail = np.cumsum(self.counts[::-1])[::-1]
        ell_max = self.alpha.size
        alpha = [Fraction(int(self.counts[l]), M) for l in range(1, ell_max + 1)]
        hat = [Fraction(int(tail[l]), M) for l in range(1, ell_max + 2)]
        return alpha, hat


def empirical_alpha(plan: ExperimentPlan, omega: Word | None, L: int, rho, ell_max: int | None = None,
                    tag: str = "alpha") -> AlphaHat:
    """``alpha_hat_l`` = share of ball-started samples with ``Z^L = l``; ``hat_alpha_l`` = share with ``Z^L >= l``."""
    ell_max = plan.ell_max if ell_max is None else ell_max
    parts = simulate_hits(plan, rho, L, omega, f"{tag}/{L}/{rho!r}", lambda h, s: h.sum(axis=1), start="ball")
    z = np.concatenate(parts)
    counts = np.bincount(np.minimum(z, ell_max + 1), minlength=ell_max + 2)
    M = counts.sum()
    alpha = counts[1 : ell_max + 1] / M
    # hat_alpha_l = #{Z >= l} / M, from the same integer counts
    tail = np.cumsum(counts[::-1])[::-1]
    hat_alpha = tail[1 : ell_max + 2] / M
    return AlphaHat(alpha, hat_alpha, counts)


def empirical_lambda(plan: ExperimentPlan, omega: Word | None, L: int, rho, ell_max: int | None = None,
                     tag: str = "lambda"):
    """``lambda_hat_l = #{Z^L = l} / #{Z^L > 0}`` over uniform starts; ``None`` if no sample hits."""
    ell_max = plan.ell_max if ell_max is None else ell_max
    parts = simulate_hits(plan, rho, L, omega, f"{tag}/{L}/{rho!r}", lambda h, s: h.sum(axis=1))
    z = np.concatenate(parts)
    pos = int((z > 0).sum())
    if pos == 0:
        return None
    counts = np.bincount(np.minimum(z, ell_max + 1), minlength=ell_max + 2)
    return counts[1 : ell_max + 1] / pos


def annealed_entry_ratio(plan: ExperimentPlan, L: int, rho, method: str = "last_hit", tag: str = "entry"):
    """``P(Z^L >= 1) / (L mu_hat(Gamma_rho))`` under the annealed law, with a standard error.

    ``method="direct"`` counts samples with a hit among uniform starts.  The
    default ``"last_hit"`` uses invariance of the skew product: splitting
    ``{Z^L >= 1}`` by the time of the last hit gives

        P(Z^L >= 1) = mu_hat * sum_{j<L} P(no hit at 1..j | I_0 = 1),

    so the ratio is the mean of ``min(first return, L) / L`` over starts in
    the ball, a far less noisy estimator of the same quantity.  Words are
    drawn from the noise law and reweighted by ``|B_rho(x_v)| / mu_hat``;
    the self-normalized form makes ``L = 1`` give exactly 1.
    """
    mu = float(plan.ball_mass(rho))
    if method == "direct":
        parts = simulate_hits(plan, rho, L, None, f"{tag}/direct/{L}/{rho!r}",
                              lambda h, s: h.any(axis=1))
        hit = np.concatenate(parts).astype(float)
        p = hit.mean()
        return p / (L * mu), math.sqrt(p * (1 - p) / hit.size) / (L * mu)
    if method != "last_hit":
        raise ValueError(f"unknown method {method!r}")
    weights = np.array([float(_ball_length(plan.target.point(v), _exact(rho))) / mu for v in range(plan.family.u)])

    def reduce(h, s):
        rest = h[:, 1:]
        first = np.full(h.shape[0], L) if rest.shape[1] == 0 else np.where(rest.any(axis=1), rest.argmax(axis=1) + 1, L)
        v0 = s[0] if s.ndim == 1 else s[:, 0]
        w = weights[np.asarray(v0, dtype=np.int64)]
        return np.stack([w * (first / L), w])

    parts = simulate_hits(plan, rho, L, None, f"{tag}/last_hit/{L}/{rho!r}", reduce, start="ball")
    f, w = np.concatenate(parts, axis=1)
    ratio = f.sum() / w.sum()
    # delta-method standard error of a ratio of means
    resid = f - ratio * w
    se = math.sqrt(resid.var(ddof=1) / f.size) / w.mean()
    return float(ratio), float(se)


def pooled_noise_bound(laws: Sequence[EmpiricalLaw]) -> float:
    """Typical TV between two independent samples of the pooled law, ``M`` draws each.

    ``0.5 * sum_n sqrt(2 p_n (1 - p_n) / M)`` with ``p`` the pooled histogram
    and ``M`` the smallest sample size.
    """
    total = np.sum([law.counts for law in laws], axis=0)
    p = total / total.sum()
    M = min(law.M for law in laws)
    return float(0.5 * np.sum(np.sqrt(2 * p * (1 - p) / M)))
