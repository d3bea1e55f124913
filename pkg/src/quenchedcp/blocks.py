"""Block approximation of a sum of binary variables and its error functionals.

A row ``X_0 .. X_{N-1}`` is cut into ``N' = N // L`` blocks with sums
``Z_j``; ``W_a^b = Z_a + ... + Z_b`` (zero when ``b < a``).  The law of
``W = W_0^{N'-1}`` is compared with the convolution of the block laws, and
the four error terms are estimated from the same replicates:

* ``R1t = sum_j max_{q<=n} |Q(Z_j>=1) Q(V_j=q) - Q(Z_j>=1, V_j=q)|``
* ``R1  = sum_j max_{1<=q<=n} sum_{u=1}^q |Q(Z_j=u, V_j=q-u) - Q(Z_j=u) Q(V_j=q-u)|``
* ``R2  = sum_j Q(Z_j>=1, W_{j+1}^{j+Delta-1} >= 1)``
* ``R3  = sum_{i=0}^{N} sum_{q=max(0, i-Delta L)}^{i} Q(X_i=1) Q(X_q=1)``

with ``V_j = W_{j+Delta}^{N'-1}``.  Plugging empirical frequencies into the
absolute values and maxima of ``R1t`` and ``R1`` biases them upwards by the
sampling noise, so they are estimated by cross-fitting: the replicates are
split in two, the maximizing ``q`` and the signs are chosen on one half and
the signed differences evaluated on the other, then the roles swap.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from typing import Sequence

import numpy as np

__all__ = [
    "BlockPlan",
    "JointSample",
    "BlockErrors",
    "GapResult",
    "block_sums",
    "independent_block_law",
    "error_R2",
    "error_R3",
    "error_R1_and_R1tilde",
    "approximation_gap",
    "exact_from_joint_table",
    "exact_markov_binary",
    "sample_markov_binary",
    "N_MAX",
]

N_MAX = 8
BOOTSTRAP = 200
MIN_OCCUPANCY = 30


@dataclass(frozen=True)
class BlockPlan:
    N: int
    L: int
    Delta: int

    def __post_init__(self):
        if self.N < 3:
            raise ValueError("N must be at least 3")
        if not 1 <= self.L <= self.N // 3:
            raise ValueError(f"L={self.L} must lie in [1, N//3 = {self.N // 3}]")
        if not 1 <= self.Delta <= self.n_blocks:
            raise ValueError(f"Delta={self.Delta} must lie in [1, N'={self.n_blocks}]")

    @property
    def n_blocks(self) -> int:
        """``N'``; the remainder ``N - L N'`` is dropped."""
        return self.N // self.L

    @property
    def used(self) -> int:
        return self.L * self.n_blocks

    @property
    def dropped(self) -> int:
        return self.N - self.used


@dataclass(frozen=True)
class JointSample:
    """Replicate rows of binary variables ``X_0 .. X_{N-1}``."""

    X: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X)
        if X.ndim != 2:
            raise ValueError("a joint sample is a 2-d array of replicates by time")
        if X.dtype != bool:
            if not np.isin(X, (0, 1)).all():
                raise ValueError("entries must be binary")
            X = X.astype(bool)
        object.__setattr__(self, "X", X)

    @property
    def R(self) -> int:
        return self.X.shape[0]

    @property
    def N(self) -> int:
        return self.X.shape[1]


def block_sums(sample: JointSample, plan: BlockPlan) -> np.ndarray:
    """``Z_j`` per replicate, shape ``(R, N')``."""
    if sample.N < plan.N:
        raise ValueError("sample rows are shorter than the plan's N")
    X = sample.X[:, : plan.used]
    return X.reshape(sample.R, plan.n_blocks, plan.L).sum(axis=2, dtype=np.int64)


def independent_block_law(block_laws: Sequence[Sequence[float]], n_max: int | None = None) -> np.ndarray:
    """pmf of the sum of independent blocks with the given laws.

    With ``n_max`` the result is truncated to ``0..n_max``; the dropped mass
    is ``1 - sum(result)``, which `total_variation` treats as one bucket.
    """
    out = np.array([1.0])
    for law in block_laws:
        law = np.asarray(law, dtype=float)
        if abs(law.sum() - 1) > 1e-9:
            raise ValueError("each block law must sum to one")
        out = np.convolve(out, law)
        if n_max is not None:
            out = out[: n_max + 1]
    if n_max is not None and out.size < n_max + 1:
        out = np.pad(out, (0, n_max + 1 - out.size))
    return out


def _suffix(Z: np.ndarray, start: int) -> np.ndarray:
    """``W_start^{N'-1}`` per replicate (zero when start is past the end)."""
    if start >= Z.shape[1]:
        return np.zeros(Z.shape[0], dtype=np.int64)
    return Z[:, start:].sum(axis=1)


def _window(Z: np.ndarray, a: int, b: int) -> np.ndarray:
    b = min(b, Z.shape[1] - 1)
    if b < a:
        return np.zeros(Z.shape[0], dtype=np.int64)
    return Z[:, a : b + 1].sum(axis=1)


def error_R2(sample: JointSample, plan: BlockPlan) -> tuple[float, float]:
    """Plug-in ``R2`` with its standard error."""
    Z = block_sums(sample, plan)
    per = np.zeros(sample.R)
    for j in range(plan.n_blocks):
        per += (Z[:, j] >= 1) & (_window(Z, j + 1, j + plan.Delta - 1) >= 1)
    return float(per.mean()), float(per.std(ddof=1) / np.sqrt(sample.R)) if sample.R > 1 else 0.0


def error_R3(marginals: Sequence[float], plan: BlockPlan) -> float:
    """Exact double sum over ``P(X_i = 1)``; the vector is padded with its last value to ``N + 1``."""
    p = np.asarray(marginals, dtype=float)
    if p.size == 0:
        raise ValueError("need at least one marginal")
    if p.size < plan.N + 1:
        p = np.concatenate([p, np.full(plan.N + 1 - p.size, p[-1])])
    p = p[: plan.N + 1]
    c = np.concatenate([[0.0], np.cumsum(p)])
    w = plan.Delta * plan.L
    i = np.arange(plan.N + 1)
    lo = np.maximum(0, i - w)
    return float(np.sum(p * (c[i + 1] - c[lo])))


# -- joint tables of (Z_j, V_j) ----------------------------------------------


def _codes(Z: np.ndarray, plan: BlockPlan, n: int) -> np.ndarray:
    """Per-replicate cell index of ``(j, min(Z_j, n+1), min(V_j, n+1))``."""
    c = n + 2
    cols = []
    for j in range(plan.n_blocks):
        z = np.minimum(Z[:, j], n + 1)
        v = np.minimum(_suffix(Z, j + plan.Delta), n + 1)
        cols.append(j * c * c + z * c + v)
    return np.stack(cols, axis=1)


def _tables(codes: np.ndarray, weights: np.ndarray, n_blocks: int, n: int) -> np.ndarray:
    c = n + 2
    w = np.broadcast_to(weights[:, None], codes.shape)
    counts = np.bincount(codes.ravel(), weights=w.ravel(), minlength=n_blocks * c * c)
    T = counts.reshape(n_blocks, c, c)
    tot = weights.sum()
    return T / tot if tot > 0 else T


def _differences(T: np.ndarray, n: int):
    """Signed pieces of the two long-range terms from a normalized table."""
    pz = T.sum(axis=2)  # (J, c)
    pv = T.sum(axis=1)
    pz1 = pz[:, 1:].sum(axis=1)
    joint1 = T[:, 1:, :].sum(axis=1)
    D = pz1[:, None] * pv[:, : n + 1] - joint1[:, : n + 1]  # (J, n+1)
    E = T - pz[:, :, None] * pv[:, None, :]  # (J, c, c)
    return D, E


def _r1_pieces(E: np.ndarray, n: int):
    """``E[j, u, q-u]`` arranged as ``(J, q, u)`` for ``1 <= u <= q <= n``."""
    J = E.shape[0]
    out = np.zeros((J, n + 1, n + 1))
    for q in range(1, n + 1):
        for u in range(1, q + 1):
            out[:, q, u] = E[:, u, q - u]
    return out


def _plugin(T: np.ndarray, n: int) -> tuple[float, float]:
    D, E = _differences(T, n)
    r1t = np.abs(D).max(axis=1).sum()
    P = np.abs(_r1_pieces(E, n)).sum(axis=2)[:, 1:]
    r1 = P.max(axis=1).sum() if n >= 1 else 0.0
    return float(r1), float(r1t)


def _crossfit(TA: np.ndarray, TB: np.ndarray, n: int) -> tuple[float, float]:
    DA, EA = _differences(TA, n)
    DB, EB = _differences(TB, n)
    J = DA.shape[0]
    rows = np.arange(J)
    qa = np.abs(DA).argmax(axis=1)
    r1t = float(np.sum(np.sign(DA[rows, qa]) * DB[rows, qa]))
    if n < 1:
        return 0.0, r1t
    PA, PB = _r1_pieces(EA, n), _r1_pieces(EB, n)
    qs = np.abs(PA).sum(axis=2)[:, 1:].argmax(axis=1) + 1
    r1 = float(np.sum(np.sign(PA[rows, qs]) * PB[rows, qs]))
    return r1, r1t


@dataclass(frozen=True)
class BlockErrors:
    R1t: float
    R1: float
    R2: float
    R3: float
    se_R1t: float
    se_R1: float
    se_R2: float
    se_R3: float
    low_confidence: bool = False

    @property
    def total(self) -> float:
        return self.R1t + self.R1 + self.R2 + self.R3


def _effective_n(plan: BlockPlan, n_max: int) -> int:
    return min(n_max, plan.L)


def _half_masks(R: int):
    a = np.zeros(R, dtype=bool)
    a[0::2] = True
    return a.astype(float), (~a).astype(float)


def error_R1_and_R1tilde(sample: JointSample, plan: BlockPlan, n_max: int = N_MAX, bootstrap: int = BOOTSTRAP,
                         seed: int = 0, method: str = "crossfit") -> tuple[float, float, float, float, bool]:
    """``(R1, R1t, se_R1, se_R1t, low_confidence)`` for ``q <= min(n_max, L)``.

    ``method="plugin"`` gives the raw plug-in values instead of the
    cross-fitted ones.  Standard errors come from a Poisson bootstrap of the
    replicates.  ``low_confidence`` flags tables whose occupied cells hold
    fewer than a handful of replicates.
    """
    n = _effective_n(plan, n_max)
    Z = block_sums(sample, plan)
    codes = _codes(Z, plan, n)
    J = plan.n_blocks

    def stat(weights):
        if method == "plugin":
            return _plugin(_tables(codes, weights, J, n), n)
        a, b = _half_masks(sample.R)
        TA = _tables(codes, weights * a, J, n)
        TB = _tables(codes, weights * b, J, n)
        x, y = _crossfit(TA, TB, n), _crossfit(TB, TA, n)
        return (x[0] + y[0]) / 2, (x[1] + y[1]) / 2

    ones = np.ones(sample.R)
    r1, r1t = stat(ones)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xB10C,)))
    boots = np.array([stat(rng.poisson(1.0, sample.R).astype(float)) for _ in range(bootstrap)])
    se = boots.std(axis=0, ddof=1) if bootstrap > 1 else np.zeros(2)
    counts = np.bincount(codes.ravel(), minlength=J * (n + 2) ** 2)
    occupied = counts[counts > 0]
    low = bool(occupied.size and occupied.min() < MIN_OCCUPANCY and sample.R < MIN_OCCUPANCY * occupied.size)
    return r1, r1t, float(se[0]), float(se[1]), low


@dataclass(frozen=True)
class GapResult:
    n: int
    signed: float
    ci: tuple[float, float]
    errors: BlockErrors

    @property
    def gap(self) -> float:
        return abs(self.signed)

    @property
    def gap_ci(self) -> tuple[float, float]:
        """Interval for ``|Q(W=n) - Q(W~=n)|`` implied by the signed interval."""
        lo, hi = self.ci
        if lo <= 0 <= hi:
            return 0.0, max(-lo, hi)
        return min(abs(lo), abs(hi)), max(abs(lo), abs(hi))


def _signed_gaps(Z: np.ndarray, weights: np.ndarray, n: int) -> np.ndarray:
    tot = weights.sum()
    W = np.minimum(Z.sum(axis=1), n + 1)
    pw = np.bincount(W, weights=weights, minlength=n + 2)[: n + 1] / tot
    laws = []
    top = int(Z.max()) + 1 if Z.size else 1
    for j in range(Z.shape[1]):
        laws.append(np.bincount(Z[:, j], weights=weights, minlength=top) / tot)
    conv = independent_block_law(laws, n)
    return pw - conv


def approximation_gap(sample: JointSample, plan: BlockPlan, n: int | Sequence[int] | None = None,
                      n_max: int = N_MAX, bootstrap: int = BOOTSTRAP, seed: int = 0, level: float = 0.95):
    """Signed ``Q(W=n) - Q(W~=n)`` with percentile bootstrap intervals, plus the error terms.

    Returns one `GapResult` per requested ``n`` (default ``0..min(n_max, L)``).
    """
    n_eff = _effective_n(plan, n_max)
    ns = list(range(n_eff + 1)) if n is None else ([n] if np.isscalar(n) else list(n))
    top = max(ns)
    Z = block_sums(sample, plan)
    ones = np.ones(sample.R)
    d = _signed_gaps(Z, ones, top)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x6A9,)))
    boots = np.array([_signed_gaps(Z, rng.poisson(1.0, sample.R).astype(float), top) for _ in range(bootstrap)])
    a = (1 - level) / 2
    lo, hi = np.quantile(boots, [a, 1 - a], axis=0)
    r1, r1t, se1, se1t, low = error_R1_and_R1tilde(sample, plan, n_max, bootstrap, seed)
    r2, se2 = error_R2(sample, plan)
    Xf = sample.X[:, : plan.N].astype(float)
    r3 = error_R3(Xf.mean(axis=0), plan)
    pb = np.array([error_R3(w @ Xf / w.sum(), plan)
                   for w in (rng.poisson(1.0, sample.R).astype(float) for _ in range(min(bootstrap, 50)))])
    se3 = float(pb.std(ddof=1)) if pb.size > 1 else 0.0
    errs = BlockErrors(r1t, r1, r2, r3, se1t, se1, se2, se3, low)
    return [GapResult(k, float(d[k]), (float(lo[k]), float(hi[k])), errs) for k in ns]


# -- exact oracles -----------------------------------------------------------------


@dataclass(frozen=True)
class ExactBlockQuantities:
    gap: tuple  # signed Q(W=n) - Q(W~=n), n = 0..n
    R1t: object
    R1: object
    R2: object
    R3: object
    W_law: tuple
    block_laws: tuple


def _exact_terms(joint_zv, n: int):
    """R1t and R1 from exact joint tables ``{j: {(z, v): prob}}`` with capped values."""
    r1t = 0
    r1 = 0
    for j in sorted(joint_zv):
        tab = joint_zv[j]
        pz, pv = {}, {}
        for (z, v), p in tab.items():
            pz[z] = pz.get(z, 0) + p
            pv[v] = pv.get(v, 0) + p
        pz1 = sum(p for z, p in pz.items() if z >= 1)
        best = 0
        for q in range(n + 1):
            j1 = sum(p for (z, v), p in tab.items() if z >= 1 and v == q)
            best = max(best, abs(pz1 * pv.get(q, 0) - j1))
        r1t += best
        best = 0
        for q in range(1, n + 1):
            s = sum(abs(tab.get((u, q - u), 0) - pz.get(u, 0) * pv.get(q - u, 0)) for u in range(1, q + 1))
            best = max(best, s)
        r1 += best
    return r1t, r1


def _exact_quantities(probs_of, plan: BlockPlan, n: int, marginals) -> ExactBlockQuantities:
    """Shared assembly; ``probs_of(spec)`` returns the exact law of capped segment sums."""
    J, D = plan.n_blocks, plan.Delta
    c = n + 1
    W = probs_of([(0, J - 1, c)])
    W_law = tuple(W.get((k,), 0) for k in range(n + 1))
    blocks = []
    for j in range(J):
        law = probs_of([(j, j, plan.L)])
        blocks.append(tuple(law.get((z,), 0) for z in range(plan.L + 1)))
    conv = [0] * (n + 1)
    acc = [1] + [0] * n
    for law in blocks:
        new = [0] * (n + 1)
        for a, pa in enumerate(acc):
            if pa == 0:
                continue
            for z, pz in enumerate(law):
                if a + z <= n:
                    new[a + z] += pa * pz
        acc = new
    conv = acc
    gap = tuple(W_law[k] - conv[k] for k in range(n + 1))
    joint = {}
    r2 = 0
    for j in range(J):
        segs = [(j, j, c)]
        if j + D <= J - 1:
            segs.append((j + D, J - 1, c))
            tab = probs_of(segs)
        else:
            tab = {(z[0], 0): p for z, p in probs_of(segs).items()}
        joint[j] = {k if len(k) == 2 else (k[0], 0): p for k, p in tab.items()}
        if D >= 2 and j + 1 <= J - 1:
            t2 = probs_of([(j, j, 1), (j + 1, min(j + D - 1, J - 1), 1)])
            r2 += t2.get((1, 1), 0)
    r1t, r1 = _exact_terms(joint, n)
    p = list(marginals) + [marginals[-1]] * (plan.N + 1 - len(marginals))
    w = D * plan.L
    r3 = sum(p[i] * sum(p[q] for q in range(max(0, i - w), i + 1)) for i in range(plan.N + 1))
    return ExactBlockQuantities(gap, r1t, r1, r2, r3, W_law, tuple(blocks))


def exact_from_joint_table(probs: dict, plan: BlockPlan, n_max: int = N_MAX) -> ExactBlockQuantities:
    """All quantities from an explicit law ``{bit tuple of length N: probability}``."""
    n = _effective_n(plan, n_max)
    rows = [(np.asarray(k, dtype=np.int64), p) for k, p in probs.items() if p]

    def probs_of(segs):
        out: dict = {}
        for x, p in rows:
            Z = x[: plan.used].reshape(plan.n_blocks, plan.L).sum(axis=1)
            key = tuple(min(int(Z[a : b + 1].sum()), cap) for a, b, cap in segs)
            out[key] = out.get(key, 0) + p
        return out

    marg = [sum(p for x, p in rows if x[i]) for i in range(plan.N)]
    return _exact_quantities(probs_of, plan, n, marg)


def exact_markov_binary(P: Sequence[Sequence], initial: Sequence, plan: BlockPlan,
                        n_max: int = N_MAX) -> ExactBlockQuantities:
    """Exact quantities for a two-state chain ``X_i`` by transfer-matrix recursion.

    Works in whatever number type the inputs carry (use `Fraction` for exact
    rationals).
    """
    n = _effective_n(plan, n_max)
    L, J = plan.L, plan.n_blocks
    zero = initial[0] * 0

    # block kernel: K[s_in][s_out][z] over one block given the state before it;
    # "s_in = None" is the first block, driven by the initial law.
    def block_kernel(first: bool):
        ker = {}
        starts = [None] if first else [0, 1]
        for s in starts:
            dist = {}
            for x0 in (0, 1):
                p = initial[x0] if s is None else P[s][x0]
                if p:
                    dist[(x0, x0)] = dist.get((x0, x0), zero) + p
            for _ in range(L - 1):
                new = {}
                for (st, z), p in dist.items():
                    for x in (0, 1):
                        if P[st][x]:
                            key = (x, z + x)
                            new[key] = new.get(key, zero) + p * P[st][x]
                dist = new
            ker[s] = dist
        return ker

    k_first, k_next = block_kernel(True), block_kernel(False)

    def probs_of(segs):
        seg_of = {}
        for idx, (a, b, cap) in enumerate(segs):
            for j in range(a, b + 1):
                seg_of[j] = (idx, cap)
        dist = {(None, tuple(0 for _ in segs)): initial[0] * 0 + 1}
        for j in range(J):
            ker = k_first if j == 0 else k_next
            new = {}
            for (s, sums), p in dist.items():
                for (s2, z), pk in ker[s].items():
                    if j in seg_of:
                        i, cap = seg_of[j]
                        sums2 = list(sums)
                        sums2[i] = min(sums2[i] + z, cap)
                        sums2 = tuple(sums2)
                    else:
                        sums2 = sums
                    key = (s2, sums2)
                    new[key] = new.get(key, zero) + p * pk
            dist = new
        out: dict = {}
        for (s, sums), p in dist.items():
            out[sums] = out.get(sums, zero) + p
        return out

    marg = []
    pi = list(initial)
    for i in range(plan.N):
        marg.append(pi[1])
        pi = [pi[0] * P[0][0] + pi[1] * P[1][0], pi[0] * P[0][1] + pi[1] * P[1][1]]
    return _exact_quantities(probs_of, plan, n, marg)


def sample_markov_binary(P: Sequence[Sequence[float]], initial: Sequence[float], N: int, R: int,
                         rng: np.random.Generator) -> JointSample:
    """``R`` independent paths of a two-state chain of length ``N``."""
    P = np.asarray(P, dtype=float)
    u = rng.random((R, N))
    X = np.empty((R, N), dtype=bool)
    X[:, 0] = u[:, 0] < float(initial[1])
    for i in range(1, N):
        p1 = np.where(X[:, i - 1], P[1, 1], P[0, 1])
        X[:, i] = u[:, i] < p1
    return JointSample(X)
