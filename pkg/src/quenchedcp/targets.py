"""Exact return structure of random singleton targets and limit parameters.

The target is ``x(omega) = x_{omega_0}`` for two rational points ``x_0, x_1``.
A return of period ``m`` happens when ``T_omega^m x(omega) = x(theta^m omega)``.
Return laws are decided in exact rational arithmetic.  Orbits that land on a
branch endpoint are continued with the mod-1 value of the map there, which
is always 0 for full branches; 0 is fixed and never a target, so such orbits
certifiably never return.

For Lebesgue-preserving families the return quantities are

    alpha_l = E[ 1{K >= l-1} / J_{l-1} - 1{K >= l} / J_l ],

where ``J_j`` is the Jacobian of ``T_omega^{M_j}`` at the target and ``K`` is
the number of finite periods.  With ``G_l = E[1{K >= l} / J_l]`` this reads
``alpha_l = G_{l-1} - G_l``; `ReturnChain` evaluates ``G_l`` in closed form.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .cpd import MultiplicityLaw
from .maps import MapFamily, image_mod1, parse_number, validate_family
from .noise import ENUMERATION_CAP, NoiseModel, Word, enumerate_words, sample_word

__all__ = [
    "TargetSpec",
    "ReturnStructure",
    "MGammaCertificate",
    "Classification",
    "ReturnChain",
    "AlphaLambda",
    "AnalysisError",
    "UncertifiedError",
    "target_problems",
    "minimal_period",
    "return_structure",
    "orbit_closure",
    "verify_M_Gamma",
    "classify_target",
    "return_chain",
    "alpha_from_theory",
    "lambda_from_alpha",
    "mean_cluster_identity_check",
]

PERIOD_HORIZON = 64
WORD_HORIZON = 12
CLOSURE_CAP = 100_000


class AnalysisError(ValueError):
    pass


class UncertifiedError(AnalysisError):
    """The system could not be certified to have uniformly bounded periods."""


@dataclass(frozen=True)
class TargetSpec:
    x0: Fraction
    x1: Fraction

    def __post_init__(self):
        object.__setattr__(self, "x0", parse_number(self.x0))
        object.__setattr__(self, "x1", parse_number(self.x1))

    def point(self, symbol: int) -> Fraction:
        """Target point seen when the current symbol is ``symbol``."""
        return self.x0 if symbol == 0 else self.x1

    def points(self, u: int) -> tuple:
        return tuple(self.point(v) for v in range(u))

    @property
    def constant(self) -> bool:
        return self.x0 == self.x1


def target_problems(family: MapFamily, target: TargetSpec, allow_boundary: bool = False) -> list[str]:
    """Static checks on the target points; an empty list means acceptable.

    Each point must be rational and inside (0, 1).  Unless ``allow_boundary``
    is set, it must also avoid every breakpoint of every map.
    """
    problems = []
    for v, x in enumerate((target.x0, target.x1)):
        if not isinstance(x, Fraction):
            problems.append(f"target x{v}={x!r} is not an exact rational")
            continue
        if not 0 < x < 1:
            problems.append(f"target x{v}={x} is outside (0, 1)")
            continue
        if allow_boundary:
            continue
        for s, tmap in enumerate(family.maps):
            if tmap.branch_index(x) < 0:
                problems.append(f"target x{v}={x} is a breakpoint of map {s}")
    return problems


def _probe(family: MapFamily, target: TargetSpec, word: Sequence[int], start: int, horizon: int):
    """Look for the first return from ``x(theta^start omega)``.

    Returns ``(m, jacobian, status)`` with status ``"return"``, ``"never"``
    (orbit absorbed at an endpoint), ``"horizon"`` or ``"word"`` (ran out of
    symbols).
    """
    if start >= len(word):
        return None, None, "word"
    x = target.point(word[start])
    jac = Fraction(1)
    for k in range(1, horizon + 1):
        i = start + k - 1
        if i >= len(word):
            return None, None, "word"
        x, slope = image_mod1(family, word[i], x)
        if slope is None:
            return None, None, "never"
        jac *= abs(slope)
        if target.constant:
            hit = x == target.x0
        elif start + k < len(word):
            hit = x == target.point(word[start + k])
        else:
            return None, None, "word"
        if hit:
            return k, jac, "return"
    return None, None, "horizon"


def minimal_period(family: MapFamily, target: TargetSpec, word: Sequence[int], horizon: int = PERIOD_HORIZON):
    """Smallest ``m <= horizon`` with ``T^m x(omega) = x(theta^m omega)``, else ``None``."""
    m, _, _ = _probe(family, target, word, 0, horizon)
    return m


@dataclass(frozen=True)
class ReturnStructure:
    word: Word
    periods: tuple[int, ...]
    cumulative: tuple[int, ...]
    jacobians: tuple[Fraction, ...]
    truncated: bool
    saturated: bool

    @property
    def K(self) -> int:
        """Number of finite periods found (a lower bound when ``saturated``)."""
        return len(self.periods)


def return_structure(
    family: MapFamily,
    target: TargetSpec,
    word: Sequence[int],
    ell_max: int,
    horizon: int = PERIOD_HORIZON,
) -> ReturnStructure:
    """Successive minimal periods ``m_j = m(theta^{M_j} omega)`` along the word.

    Stops after ``ell_max`` periods (``saturated``) or at the first period not
    found within ``horizon``; ``truncated`` is set when that verdict is not
    certain (horizon or word exhausted rather than absorption).
    """
    if not isinstance(word, Word):
        word = Word(tuple(word))
    periods, cum, jacs = [], [0], [Fraction(1)]
    truncated = False
    while len(periods) < ell_max:
        m, jac, status = _probe(family, target, word, cum[-1], horizon)
        if m is None:
            truncated = status in ("horizon", "word")
            break
        periods.append(m)
        cum.append(cum[-1] + m)
        jacs.append(jacs[-1] * jac)
    return ReturnStructure(
        word=word,
        periods=tuple(periods),
        cumulative=tuple(cum),
        jacobians=tuple(jacs),
        truncated=truncated,
        saturated=len(periods) >= ell_max,
    )


# -- orbit-closure graph ---------------------------------------------------


@dataclass
class _ReturnGraph:
    """Points reachable from the target, with 'continue' edges labelled by symbol."""

    family: MapFamily
    target: TargetSpec
    nodes: set
    succ: dict  # node -> list[(symbol, next_node, slope)]
    returnable: dict  # node -> list of symbols that close a period here
    starts: dict  # symbol v -> (T_v(x_v), slope) or None when absorbed

    def can_reach_return(self) -> set:
        pred: dict = {n: [] for n in self.nodes}
        for n, edges in self.succ.items():
            for _, m, _ in edges:
                pred[m].append(n)
        seen = {n for n in self.nodes if self.returnable[n]}
        queue = deque(seen)
        while queue:
            n = queue.popleft()
            for p in pred[n]:
                if p not in seen:
                    seen.add(p)
                    queue.append(p)
        return seen


def _is_boundary(x) -> bool:
    return x == 0 or x == 1


def orbit_closure(family: MapFamily, target: TargetSpec, cap: int = CLOSURE_CAP):
    """Forward orbit closure of the target under all symbol sequences.

    Returns a `_ReturnGraph`, or ``None`` when more than ``cap`` points are
    reached (the closure is then treated as infinite).
    """
    u = family.u
    pts = target.points(u)
    starts = {}
    frontier = deque()
    nodes: set = set()
    for v in range(u):
        y, slope = image_mod1(family, v, pts[v])
        starts[v] = (y, slope)
        if slope is not None and y not in nodes:
            nodes.add(y)
            frontier.append(y)
    succ, returnable = {}, {}
    while frontier:
        x = frontier.popleft()
        edges, ret = [], []
        for s in range(u):
            if x == pts[s]:
                ret.append(s)
                continue
            y, slope = image_mod1(family, s, x)
            if slope is None:
                y = type(x)(0)
            edges.append((s, y, slope))
            if y not in nodes:
                if len(nodes) >= cap:
                    return None
                nodes.add(y)
                frontier.append(y)
        succ[x] = edges
        returnable[x] = ret
    return _ReturnGraph(family, target, nodes, succ, returnable, starts)


@dataclass(frozen=True)
class MGammaCertificate:
    certified: bool
    m_gamma: int | float | None
    period_bound: int
    closure_size: int | None
    max_period_enumerated: int
    counterexample: Word | None = None
    reason: str = ""
    graph: object = field(default=None, repr=False, compare=False)

    @property
    def bounded(self) -> bool:
        return self.certified and self.m_gamma is not None and self.m_gamma <= self.period_bound


def _find_cycle(graph: _ReturnGraph, live: set):
    """A cycle of continue-edges inside ``live``, as (entry node, symbol path), or None."""
    color = {n: 0 for n in live}
    parent: dict = {}
    for root in live:
        if color[root]:
            continue
        stack = [(root, iter(graph.succ.get(root, ())))]
        color[root] = 1
        while stack:
            node, it = stack[-1]
            advanced = False
            for s, nxt, _ in it:
                if nxt not in live:
                    continue
                if color[nxt] == 0:
                    color[nxt] = 1
                    parent[nxt] = (node, s)
                    stack.append((nxt, iter(graph.succ.get(nxt, ()))))
                    advanced = True
                    break
                if color[nxt] == 1:
                    path = [s]
                    cur = node
                    while cur != nxt:
                        cur, sym = parent[cur]
                        path.append(sym)
                    return nxt, path[::-1]
            if not advanced:
                color[node] = 2
                stack.pop()
    return None


def _path_between(graph: _ReturnGraph, src, dst_pred):
    """Shortest symbol path from ``src`` to a node satisfying ``dst_pred``."""
    prev = {src: None}
    queue = deque([src])
    while queue:
        n = queue.popleft()
        if dst_pred(n):
            path = []
            while prev[n] is not None:
                n, s = prev[n]
                path.append(s)
            return path[::-1]
        for s, m, _ in graph.succ.get(n, ()):
            if m not in prev:
                prev[m] = (n, s)
                queue.append(m)
    return None


def _counterexample(graph: _ReturnGraph, live: set, cycle, period_bound: int) -> Word:
    entry, loop = cycle
    for v, (y, slope) in graph.starts.items():
        if slope is None or y not in live:
            continue
        lead = _path_between(graph, y, lambda n: n == entry)
        if lead is None:
            continue
        out = _path_between(graph, entry, lambda n: bool(graph.returnable[n]))
        reps = period_bound // max(len(loop), 1) + 1
        sym = [v] + lead + loop * reps + out
        sym.append(graph.returnable[_walk(graph, y, lead + loop * reps + out)][0])
        return Word(tuple(sym), "counterexample")
    return Word((), "counterexample")


def _walk(graph: _ReturnGraph, x, symbols):
    for s in symbols:
        nxt = {sym: m for sym, m, _ in graph.succ[x]}
        x = nxt[s]
    return x


def _longest(graph: _ReturnGraph, live: set) -> dict:
    """Longest number of steps before a return, from each live node (DAG assumed)."""
    memo: dict = {}
    order = []
    stack = [(n, False) for n in live]
    while stack:
        n, done = stack.pop()
        if done:
            order.append(n)
            continue
        if n in memo:
            continue
        memo[n] = None
        stack.append((n, True))
        for _, m, _ in graph.succ.get(n, ()):
            if m in live and m not in memo:
                stack.append((m, False))
    best: dict = {}
    for n in order:
        cands = [0] if graph.returnable[n] else []
        cands += [1 + best[m] for _, m, _ in graph.succ.get(n, ()) if m in live and m in best]
        best[n] = max(cands)
    return best


def verify_M_Gamma(
    family: MapFamily,
    target: TargetSpec,
    period_bound: int = PERIOD_HORIZON,
    word_horizon: int = WORD_HORIZON,
    cap: int = ENUMERATION_CAP,
    closure_cap: int = CLOSURE_CAP,
) -> MGammaCertificate:
    """Certify ``M_Gamma = sup_omega sup_j m_j(omega)`` and compare with ``period_bound``.

    The certificate comes from the finite orbit closure: if the points that
    can still reach the target carry no cycle, periods are bounded and the
    longest first-return path is ``M_Gamma``.  A cycle yields a counterexample
    word with a period above ``period_bound``.  Independently, every word of
    length ``word_horizon`` is scanned and the largest period seen recorded.
    """
    u = family.u
    length = word_horizon
    while u**length > cap and length > 0:
        length -= 1
    scanned = 0
    for sym in np.ndindex(*([u] * length)) if length else [()]:
        rs = return_structure(family, target, sym, ell_max=length + 1, horizon=min(period_bound, length))
        if rs.periods:
            scanned = max(scanned, max(rs.periods))

    graph = orbit_closure(family, target, closure_cap)
    if graph is None:
        return MGammaCertificate(False, None, period_bound, None, scanned,
                                 reason=f"orbit closure exceeds {closure_cap} points")
    live = graph.can_reach_return()
    cycle = _find_cycle(graph, live)
    if cycle is not None:
        word = _counterexample(graph, live, cycle, period_bound)
        return MGammaCertificate(True, float("inf"), period_bound, len(graph.nodes), scanned, word,
                                 reason="a cycle avoiding the target can be followed by a return", graph=graph)
    best = _longest(graph, live)
    periods = [1 + best[y] for v, (y, slope) in graph.starts.items() if slope is not None and y in live]
    m_gamma = max(periods) if periods else 0
    if scanned > m_gamma:
        raise AnalysisError(f"scan found period {scanned} above certified bound {m_gamma}")
    reason = "bounded" if m_gamma <= period_bound else f"M_Gamma={m_gamma} exceeds period bound"
    return MGammaCertificate(True, m_gamma, period_bound, len(graph.nodes), scanned, reason=reason, graph=graph)


@dataclass(frozen=True)
class Classification:
    kind: str  # pure_periodic | pure_aperiodic | hybrid | uncertified
    m_star: int | None = None

    def __str__(self) -> str:
        return f"{self.kind}({self.m_star})" if self.kind == "pure_periodic" else self.kind


def classify_target(family: MapFamily, target: TargetSpec, cert: MGammaCertificate) -> Classification:
    """Periodic / aperiodic / hybrid taxonomy from the certified return graph."""
    if not cert.certified or cert.graph is None or cert.m_gamma == float("inf"):
        return Classification("uncertified")
    graph: _ReturnGraph = cert.graph
    live = graph.can_reach_return()
    starts = [(y, slope) for y, slope in graph.starts.values()]
    if not any(slope is not None and y in live for y, slope in starts):
        return Classification("pure_aperiodic")
    lengths: dict = {}
    escapes: dict = {}
    best = _longest(graph, live)
    for n in sorted(live, key=lambda n: best[n]):
        ls = {0} if graph.returnable[n] else set()
        esc = False
        for _, m, _ in graph.succ.get(n, ()):
            if m in live:
                ls |= {1 + k for k in lengths[m]}
                esc |= escapes[m]
            else:
                esc = True
        lengths[n], escapes[n] = ls, esc
    all_lengths = set()
    for y, slope in starts:
        if slope is None or y not in live:
            return Classification("hybrid")
        if escapes[y]:
            return Classification("hybrid")
        all_lengths |= {1 + k for k in lengths[y]}
    if len(all_lengths) == 1:
        return Classification("pure_periodic", all_lengths.pop())
    return Classification("hybrid")


# -- return chain ------------------------------------------------------------


@dataclass(frozen=True)
class ReturnChain:
    """``G_l = initial @ A**l @ 1`` with ``A[v][w]`` the Jacobian-weighted return kernel.

    ``A[v][w]`` sums ``P(path | v) / J(path)`` over first-return paths that
    start at ``x_v`` with symbol ``v`` and close when the current symbol is
    ``w``.
    """

    initial: tuple
    matrix: tuple

    def G(self, ell: int):
        v = list(self.initial)
        n = len(v)
        for _ in range(ell):
            v = [sum(v[i] * self.matrix[i][j] for i in range(n)) for j in range(n)]
        return sum(v)

    def alphas(self, ell_max: int) -> list:
        g = [self.G(0)]
        for ell in range(1, ell_max + 1):
            g.append(self.G(ell))
        return [g[i - 1] - g[i] for i in range(1, ell_max + 1)]

    def is_rank_one(self) -> bool:
        A = self.matrix
        n = len(A)
        return all(A[i][k] * A[j][l] == A[i][l] * A[j][k] for i in range(n) for j in range(n)
                   for k in range(n) for l in range(n))


def return_chain(family: MapFamily, target: TargetSpec, noise: NoiseModel, m_gamma: int) -> ReturnChain:
    u = family.u
    A = [[Fraction(0)] * u for _ in range(u)]
    for v in range(u):
        # depth-first over continuation symbols, at most m_gamma steps
        x0, slope = image_mod1(family, v, target.point(v))
        if slope is None or m_gamma == 0:
            continue
        stack = [(x0, v, Fraction(1), Fraction(abs(slope)), 1)]
        while stack:
            x, prev, prob, jac, depth = stack.pop()
            for w in range(u):
                p = noise.transition(prev, w)
                if p == 0:
                    continue
                if x == target.point(w):
                    A[v][w] += prob * p / jac
                    continue
                if depth >= m_gamma:
                    continue
                y, s = image_mod1(family, w, x)
                if s is None:
                    continue
                stack.append((y, w, prob * p, jac * abs(s), depth + 1))
    return ReturnChain(tuple(noise.initial), tuple(tuple(r) for r in A))


# -- alpha / lambda ------------------------------------------------------------


@dataclass(frozen=True)
class AlphaLambda:
    alpha: tuple
    lam: tuple
    extremal_index: object
    tail_bound: object
    tail_mass: object
    method: str
    chain: ReturnChain | None = None
    stderr: tuple | None = None

    @property
    def exact(self) -> bool:
        return self.method in ("exact", "chain")

    def multiplicity(self) -> MultiplicityLaw:
        """Float multiplicity law with the analytic tail when one is known."""
        head = [float(x) for x in self.lam]
        if self.chain is None:
            total = sum(head)
            return MultiplicityLaw.truncated([h / total for h in head])
        a1 = self.alpha[0]
        A = self.chain.matrix
        n = len(A)
        ell_max = len(self.lam)
        row = list(self.chain.initial)
        for _ in range(ell_max):
            row = [sum(row[i] * A[i][j] for i in range(n)) for j in range(n)]
        ones = [Fraction(1)] * n
        col1 = [ones[i] - sum(A[i][j] * ones[j] for j in range(n)) for i in range(n)]
        col = [(col1[i] - sum(A[i][j] * col1[j] for j in range(n))) / a1 for i in range(n)]
        first = sum(r * c for r, c in zip(row, col))
        if all(x == 0 for r in A for x in r) or first == 0:
            return MultiplicityLaw.truncated(head)
        if self.chain.is_rank_one():
            ratio = sum(A[i][i] for i in range(n))
            Acol = [sum(A[i][j] * col[j] for j in range(n)) for i in range(n)]
            second = sum(r * c for r, c in zip(row, Acol))
            return MultiplicityLaw.geometric(float(ratio), head=head + [float(first)], scale=float(second))
        return MultiplicityLaw(tuple(head), tuple(float(r) for r in row),
                               tuple(tuple(float(x) for x in r) for r in A), tuple(float(c) for c in col))


def _integrand(rs: ReturnStructure, ell: int):
    """Contribution of one word to ``alpha_ell`` (Lebesgue-preserving case)."""
    K = rs.K
    if ell <= K:
        return 1 / rs.jacobians[ell - 1] - 1 / rs.jacobians[ell]
    if ell == K + 1:
        return 1 / rs.jacobians[ell - 1]
    return Fraction(0)


def lambda_from_alpha(alpha: Sequence, tail_bound=0) -> list:
    """``lambda_l = (alpha_l - alpha_{l+1}) / alpha_1`` for ``l < len(alpha)``.

    The mass not assigned, ``alpha_last / alpha_1``, belongs to ``l >= len(alpha)``.
    """
    if not alpha or not alpha[0] > 0:
        raise ValueError("alpha_1 must be positive")
    return [(alpha[i] - alpha[i + 1]) / alpha[0] for i in range(len(alpha) - 1)]


def mean_cluster_identity_check(alpha: Sequence, lam) -> float:
    """``|alpha_1 * sum_l l lambda_l - 1|``, using the analytic tail if ``lam`` has one."""
    law = lam if isinstance(lam, MultiplicityLaw) else MultiplicityLaw.truncated([float(x) for x in lam])
    return abs(float(alpha[0]) * law.mean() - 1.0)


def alpha_from_theory(
    family: MapFamily,
    target: TargetSpec,
    noise: NoiseModel,
    ell_max: int = 10,
    method: str = "exact",
    cert: MGammaCertificate | None = None,
    samples: int = 100_000,
    rng: np.random.Generator | None = None,
    cap: int = ENUMERATION_CAP,
) -> AlphaLambda:
    """Return quantities ``alpha_1..alpha_ell_max`` and the cluster law ``lambda``.

    ``method="exact"`` averages the return integrand over every word of the
    window that determines it, with exact word probabilities; when that
    enumeration would exceed ``cap`` words the closed-form return chain is
    used instead (same exact values).  ``"chain"`` forces the closed form and
    ``"monte_carlo"`` averages over ``samples`` sampled words.
    """
    report = validate_family(family)
    if not report.ok:
        raise AnalysisError("; ".join(report.problems))
    if not report.lebesgue_preserving:
        raise AnalysisError("only Lebesgue-preserving families are supported")
    if noise.u != family.u:
        raise AnalysisError(f"noise has {noise.u} symbols but the family has {family.u} maps")
    if cert is None:
        cert = verify_M_Gamma(family, target)
    if not cert.certified or cert.m_gamma is None:
        raise UncertifiedError(cert.reason or "M_Gamma is not certified")
    if cert.m_gamma == float("inf"):
        raise UncertifiedError("periods are unbounded (M_Gamma is infinite)")
    mg = int(cert.m_gamma)
    d_min = report.d_min
    tail_bound = Fraction(1) / Fraction(d_min) ** ell_max if isinstance(d_min, Fraction) else d_min**-ell_max
    chain = return_chain(family, target, noise, mg)
    n_alpha = ell_max + 1
    length = n_alpha * mg + 1

    stderr = None
    if method == "exact" and noise.u**length > cap:
        method = "chain"
    if method == "exact":
        sums = [Fraction(0)] * n_alpha
        g_tail = Fraction(0)
        for word, p in enumerate_words(noise, length, cap):
            if p == 0:
                continue
            rs = return_structure(family, target, word, n_alpha, horizon=mg)
            for ell in range(1, n_alpha + 1):
                sums[ell - 1] += p * _integrand(rs, ell)
            if rs.K >= ell_max:
                g_tail += p / rs.jacobians[ell_max]
        alpha = sums
        tail_mass = g_tail
    elif method == "chain":
        alpha = chain.alphas(n_alpha)
        tail_mass = chain.G(ell_max)
    elif method == "monte_carlo":
        rng = rng if rng is not None else np.random.default_rng()
        vals = np.zeros((samples, n_alpha))
        tails = np.zeros(samples)
        for i in range(samples):
            w = sample_word(noise, length, rng)
            rs = return_structure(family, target, w, n_alpha, horizon=mg)
            vals[i] = [float(_integrand(rs, ell)) for ell in range(1, n_alpha + 1)]
            tails[i] = float(1 / rs.jacobians[ell_max]) if rs.K >= ell_max else 0.0
        alpha = list(vals.mean(axis=0))
        stderr = tuple(vals.std(axis=0, ddof=1) / np.sqrt(samples))[:ell_max]
        tail_mass = float(tails.mean())
    else:
        raise ValueError(f"unknown method {method!r}")

    if not alpha[0] > 0:
        raise AnalysisError("alpha_1 vanished; the target is degenerate")
    lam = lambda_from_alpha(alpha)
    return AlphaLambda(
        alpha=tuple(alpha[:ell_max]),
        lam=tuple(lam[:ell_max]),
        extremal_index=alpha[0],
        tail_bound=tail_bound,
        tail_mass=tail_mass,
        method=method,
        chain=chain if method != "monte_carlo" else None,
        stderr=stderr,
    )
