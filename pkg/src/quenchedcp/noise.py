"""Driving noise: Bernoulli and Markov measures on symbol sequences."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from typing import Sequence

import numpy as np

from .maps import parse_number

__all__ = ["NoiseModel", "Word", "sample_word", "enumerate_words", "ENUMERATION_CAP"]

ENUMERATION_CAP = 2**20
TOL = 1e-12


def _num(v):
    return parse_number(v) if not isinstance(v, (Fraction, float)) else v


def _stationary(P: tuple[tuple, ...]):
    """Stationary row vector of P, exact when the entries are rationals."""
    n = len(P)
    if all(isinstance(p, Fraction) for row in P for p in row):
        # Solve pi (P - I) = 0 with sum(pi) = 1 by Gaussian elimination over Q.
        A = [[P[j][i] - (1 if i == j else 0) for j in range(n)] for i in range(n)]
        A[-1] = [Fraction(1)] * n
        b = [Fraction(0)] * (n - 1) + [Fraction(1)]
        M = [row[:] + [b[i]] for i, row in enumerate(A)]
        for c in range(n):
            piv = next((r for r in range(c, n) if M[r][c] != 0), None)
            if piv is None:
                raise ValueError("transition matrix has no unique stationary law")
            M[c], M[piv] = M[piv], M[c]
            for r in range(n):
                if r != c and M[r][c] != 0:
                    f = M[r][c] / M[c][c]
                    M[r] = [a - f * bb for a, bb in zip(M[r], M[c])]
        return tuple(M[i][n] / M[i][i] for i in range(n))
    Pf = np.asarray(P, dtype=float)
    w, v = np.linalg.eig(Pf.T)
    k = int(np.argmin(abs(w - 1)))
    pi = np.real(v[:, k])
    return tuple(float(x) for x in pi / pi.sum())


@dataclass(frozen=True)
class NoiseModel:
    """Law of the symbol sequence driving the random map.

    ``kind`` is ``"bernoulli"`` (i.i.d. symbols with ``weights``) or
    ``"markov"`` (``matrix`` rows are transition laws, the chain starts from
    ``initial``, which defaults to the stationary law).
    """

    kind: str
    weights: tuple = ()
    matrix: tuple = ()
    initial: tuple = ()

    def __post_init__(self):
        if self.kind == "bernoulli":
            w = tuple(_num(x) for x in self.weights)
            if not w:
                raise ValueError("bernoulli noise needs weights")
            if any(x < 0 for x in w) or abs(sum(w) - 1) > TOL:
                raise ValueError(f"bernoulli weights {w} are not a probability vector")
            object.__setattr__(self, "weights", w)
            object.__setattr__(self, "initial", w)
        elif self.kind == "markov":
            P = tuple(tuple(_num(x) for x in row) for row in self.matrix)
            n = len(P)
            if n == 0 or any(len(r) != n for r in P):
                raise ValueError("markov matrix must be square and non-empty")
            for i, r in enumerate(P):
                if any(x < 0 for x in r) or abs(sum(r) - 1) > TOL:
                    raise ValueError(f"markov row {i} is not a probability vector")
            object.__setattr__(self, "matrix", P)
            pi = tuple(_num(x) for x in self.initial) if self.initial else _stationary(P)
            resid = max(abs(sum(pi[i] * P[i][j] for i in range(n)) - pi[j]) for j in range(n))
            if resid > TOL:
                raise ValueError(f"initial law is not stationary (residual {float(resid):.3g})")
            object.__setattr__(self, "initial", pi)
        else:
            raise ValueError(f"unknown noise kind {self.kind!r}")

    @classmethod
    def bernoulli(cls, weights: Sequence) -> "NoiseModel":
        return cls("bernoulli", weights=tuple(weights))

    @classmethod
    def markov(cls, matrix: Sequence[Sequence], initial: Sequence = ()) -> "NoiseModel":
        return cls("markov", matrix=tuple(tuple(r) for r in matrix), initial=tuple(initial))

    @property
    def u(self) -> int:
        return len(self.initial)

    def transition(self, prev: int | None, sym: int):
        """Probability of ``sym`` given the previous symbol (``None`` at time 0)."""
        if prev is None or self.kind == "bernoulli":
            return self.initial[sym]
        return self.matrix[prev][sym]

    def word_probability(self, symbols: Sequence[int]):
        p = Fraction(1) if all(isinstance(x, Fraction) for x in self.initial) else 1.0
        prev = None
        for s in symbols:
            p *= self.transition(prev, s)
            prev = s
        return p

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        """Symbol array whose last axis is time."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        init = np.asarray(self.initial, dtype=float)
        if self.kind == "bernoulli":
            cdf = np.cumsum(init)
            return np.minimum(np.searchsorted(cdf, rng.random(shape), side="right"), self.u - 1).astype(np.int8)
        out = np.empty(shape, dtype=np.int8)
        if shape[-1] == 0:
            return out
        u = rng.random(shape)
        cdfs = np.cumsum(np.asarray(self.matrix, dtype=float), axis=1)
        cur = np.minimum(np.searchsorted(np.cumsum(init), u[..., 0], side="right"), self.u - 1)
        out[..., 0] = cur
        for t in range(1, shape[-1]):
            cur = np.minimum((u[..., t, None] >= cdfs[cur]).sum(axis=-1), self.u - 1)
            out[..., t] = cur
        return out


@dataclass(frozen=True)
class Word:
    symbols: tuple[int, ...]
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.symbols)

    def __getitem__(self, i):
        return self.symbols[i]

    def __iter__(self):
        return iter(self.symbols)

    def shift(self, k: int) -> "Word":
        return Word(self.symbols[k:], f"{self.provenance}>>{k}" if self.provenance else "")

    def __str__(self) -> str:
        return "".join(str(s) for s in self.symbols) if all(s < 10 for s in self.symbols) else str(self.symbols)


def sample_word(model: NoiseModel, length: int, rng: np.random.Generator, tag: str = "sampled") -> Word:
    """Draw a finite window of the driving sequence (Markov chains start stationary)."""
    if length < 0:
        raise ValueError("length must be nonnegative")
    return Word(tuple(int(s) for s in model.sample(rng, length)), tag)


def enumerate_words(model: NoiseModel, length: int, cap: int = ENUMERATION_CAP) -> list[tuple[Word, object]]:
    """All words of a given length with their exact probabilities, lexicographic."""
    if model.u**length > cap:
        raise ValueError(f"{model.u}**{length} words exceed the enumeration cap {cap}")
    out = []
    for i, sym in enumerate(product(range(model.u), repeat=length)):
        out.append((Word(sym, f"enumerated({i})"), model.word_probability(sym)))
    return out
