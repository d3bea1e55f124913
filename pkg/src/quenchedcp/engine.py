"""Vectorized orbit simulation with deterministic chunked parallelism.

Floating-point orbits of maps with integer slopes collapse: ``2x mod 1``
shifts out one mantissa bit per step and reaches 0 after about 53 steps.
`LatticeSystem` avoids this by lazy refinement.  A state is a dyadic cell
``k`` of width ``2**-B`` and the point is ``x = (k + U) / 2**B`` with ``U``
uniform and not yet revealed.  For a branch ``x -> c x + d`` with integer
``c`` and ``d * 2**B`` integral,

    c x + d = (c k + d 2**B + floor(c U) + frac(c U)) / 2**B,

and ``floor(c U)`` is uniform on ``{0..c-1}`` (on ``{c..-1}`` for ``c < 0``)
while ``frac(c U)`` is again uniform and independent.  Sampling that integer
each step gives the exact law of the orbit for as many steps as needed.
Breakpoints off the dyadic grid (such as 1/3) are resolved at the cell
midpoint, an error of probability ``2**-B`` per step.

Families without that structure run on `FloatSystem`, which iterates in
float64 with a tiny random perturbation against round-off collapse.
"""

from __future__ import annotations

import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .maps import MapFamily

__all__ = [
    "LatticeSystem",
    "FloatSystem",
    "make_system",
    "chunk_rng",
    "run_chunks",
    "hit_matrix",
    "CHUNK",
]

CHUNK = 8192
DEFAULT_BITS = 54


def _as_fraction(x) -> Fraction:
    """Exact value of a number, reading floats through their shortest repr."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


def _ceil(q: Fraction) -> int:
    return -((-q.numerator) // q.denominator)


def _floor(q: Fraction) -> int:
    return q.numerator // q.denominator


class LatticeSystem:
    """Exact-law simulation on dyadic cells for integer slopes and dyadic intercepts."""

    kind = "lattice"

    def __init__(self, family: MapFamily, bits: int = DEFAULT_BITS):
        cmax = max(abs(int(b.slope)) for m in family.maps for b in m.branches)
        bits = min(bits, 61 - max(1, math.ceil(math.log2(cmax + 1))))
        self.bits = bits
        self.size = 1 << bits
        self.mask = self.size - 1
        self.family = family
        self.thresholds, self.slopes, self.shifts = [], [], []
        for m in family.maps:
            self.thresholds.append(np.array([_floor(Fraction(b.lo) * 2 ** (bits + 1)) for b in m.branches[1:]],
                                            dtype=np.int64))
            self.slopes.append(np.array([int(b.slope) for b in m.branches], dtype=np.int64))
            shifts = []
            for b in m.branches:
                d = (Fraction(b.intercept) - b.offset) * self.size
                if d.denominator != 1:
                    raise ValueError("intercept is not on the dyadic grid")
                shifts.append(int(d))
            self.shifts.append(np.array(shifts, dtype=np.int64))
        self.modulus = math.lcm(*(abs(int(b.slope)) for m in family.maps for b in m.branches))

    @staticmethod
    def supports(family: MapFamily, bits: int = DEFAULT_BITS) -> bool:
        for m in family.maps:
            for b in m.branches:
                if not b.exact or b.slope.denominator != 1:
                    return False
                d = Fraction(b.intercept) - b.offset
                if d.denominator & (d.denominator - 1) or d.denominator > 2 ** (bits - 8):
                    return False
        return True

    def start_uniform(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.integers(0, self.size, size=size, dtype=np.int64)

    def start_ball(self, rng: np.random.Generator, size: int, center, rho) -> np.ndarray:
        c, r = _as_fraction(center), _as_fraction(rho)
        lo = max(0, _ceil((c - r) * self.size))
        hi = min(self.size - 1, _floor((c + r) * self.size) - 1)
        if hi < lo:
            hi = lo
        return rng.integers(lo, hi + 1, size=size, dtype=np.int64)

    def window(self, center, rho) -> tuple[int, int]:
        """Bounds on ``2k + 1`` for the closed ball of radius ``rho``."""
        c, r = _as_fraction(center), _as_fraction(rho)
        scale = 2 ** (self.bits + 1)
        return _ceil((c - r) * scale), _floor((c + r) * scale)

    def in_window(self, states: np.ndarray, bounds) -> np.ndarray:
        m = 2 * states + 1
        return (m >= bounds[0]) & (m <= bounds[1])

    def _step_one(self, states, v, draws):
        idx = np.searchsorted(self.thresholds[v], 2 * states + 1, side="left")
        c = self.slopes[v][idx]
        ac = np.abs(c)
        r = draws % ac
        r = np.where(c > 0, r, -1 - r)
        return (c * states + self.shifts[v][idx] + r) & self.mask

    def step(self, states: np.ndarray, symbols, rng: np.random.Generator) -> np.ndarray:
        draws = rng.integers(0, self.modulus, size=states.shape, dtype=np.int64)
        if np.isscalar(symbols) or np.ndim(symbols) == 0:
            return self._step_one(states, int(symbols), draws)
        out = np.empty_like(states)
        for v in range(self.family.u):
            sel = symbols == v
            if sel.any():
                out[sel] = self._step_one(states[sel], v, draws[sel])
        return out

    def to_float(self, states: np.ndarray) -> np.ndarray:
        return (states.astype(np.float64) + 0.5) / self.size


class FloatSystem:
    """Float64 iteration for families the lattice cannot represent."""

    kind = "float"

    def __init__(self, family: MapFamily, jitter: float = 2.0**-48):
        self.family = family
        self.jitter = jitter
        self.lows = [np.array([float(b.lo) for b in m.branches[1:]]) for m in family.maps]
        self.slopes = [np.array([float(b.slope) for b in m.branches]) for m in family.maps]
        self.shifts = [np.array([float(b.intercept) - float(b.offset) for b in m.branches]) for m in family.maps]

    def start_uniform(self, rng, size):
        return rng.random(size)

    def start_ball(self, rng, size, center, rho):
        c, r = float(center), float(rho)
        lo, hi = max(0.0, c - r), min(1.0, c + r)
        return lo + (hi - lo) * rng.random(size)

    def window(self, center, rho):
        return float(center) - float(rho), float(center) + float(rho)

    def in_window(self, states, bounds):
        return (states >= bounds[0]) & (states <= bounds[1])

    def _step_one(self, x, v, noise):
        idx = np.searchsorted(self.lows[v], x, side="right")
        c = self.slopes[v][idx]
        y = c * x + self.shifts[v][idx] + noise * np.abs(c)
        return np.mod(y, 1.0)

    def step(self, states, symbols, rng):
        noise = (2 * rng.random(states.shape) - 1) * self.jitter
        if np.isscalar(symbols) or np.ndim(symbols) == 0:
            return self._step_one(states, int(symbols), noise)
        out = np.empty_like(states)
        for v in range(self.family.u):
            sel = symbols == v
            if sel.any():
                out[sel] = self._step_one(states[sel], v, noise[sel])
        return out

    def to_float(self, states):
        return states


def make_system(family: MapFamily):
    return LatticeSystem(family) if LatticeSystem.supports(family) else FloatSystem(family)


def chunk_rng(seed: int, tag: str, index: int) -> np.random.Generator:
    """Stream for one chunk, a pure function of (seed, tag, chunk index)."""
    key = zlib.crc32(tag.encode())
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(key, int(index))))


def run_chunks(fn: Callable, samples: int, seed: int, tag: str, threads: int = 1, chunk: int = CHUNK) -> list:
    """Evaluate ``fn(rng, start, size)`` over fixed-size chunks, results in chunk order.

    Chunk boundaries and streams do not depend on ``threads``, so the merged
    results are identical for every worker count.
    """
    jobs = [(i, s, min(chunk, samples - s)) for i, s in enumerate(range(0, samples, chunk))]

    def one(job):
        i, s, n = job
        return fn(chunk_rng(seed, tag, i), s, n)

    if threads <= 1 or len(jobs) <= 1:
        return [one(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, jobs))


def hit_matrix(system, target_points: Sequence, rho, symbols: np.ndarray, states: np.ndarray,
               rng: np.random.Generator) -> np.ndarray:
    """Indicators ``I_i = 1{|T^i x - x_{w_i}| <= rho}`` for ``i < N``.

    ``symbols`` has shape ``(N,)`` for one word shared by all samples or
    ``(size, N)`` for a word per sample.  Position ``i`` tests against the
    target seen at symbol ``w_i`` and then steps with map ``w_i``.
    """
    symbols = np.asarray(symbols)
    N = symbols.shape[-1]
    windows = [system.window(x, rho) for x in target_points]
    out = np.zeros((states.shape[0], N), dtype=bool)
    shared = symbols.ndim == 1
    x = states
    for i in range(N):
        if shared:
            out[:, i] = system.in_window(x, windows[int(symbols[i])])
        else:
            col = symbols[:, i]
            hit = np.zeros(x.shape[0], dtype=bool)
            for v, w in enumerate(windows):
                sel = col == v
                hit[sel] = system.in_window(x[sel], w)
            out[:, i] = hit
        if i + 1 < N:
            x = system.step(x, symbols[i] if shared else symbols[:, i], rng)
    return out
