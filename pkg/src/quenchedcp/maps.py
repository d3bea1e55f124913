"""Piecewise expanding interval maps with full affine branches.

Each branch is an open interval ``(lo, hi)`` carrying the law
``x -> slope * x + intercept (mod 1)``.  Maps built from rationals are
evaluated in exact arithmetic so that returns of an orbit to a target can be
decided by equality.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Sequence

__all__ = [
    "Branch",
    "BranchMap",
    "MapFamily",
    "ValidationReport",
    "BreakpointError",
    "FamilyError",
    "Orbit",
    "parse_number",
    "times_map",
    "validate_family",
    "apply_map",
    "iterate",
    "derivative_along",
    "image_mod1",
]

EXACT = "piecewise_linear_exact"
NUMERIC = "general_numeric"
DEFAULT_MAX_BITS = 4096


class FamilyError(ValueError):
    """Raised when a map family violates the full-branch expanding conditions."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class BreakpointError(ArithmeticError):
    """A point landed on a branch endpoint, where the map is undefined."""

    def __init__(self, x, symbol: int, step: int | None = None):
        self.x = x
        self.symbol = symbol
        self.step = step
        where = "" if step is None else f" at step {step}"
        super().__init__(f"point {x} is a breakpoint of map {symbol}{where}")


def parse_number(value) -> Fraction | float:
    """Parse ``"p/q"``, integers, decimal strings or numbers.

    Strings and integers become exact rationals; Python floats stay floats.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans are not numbers here")
    if isinstance(value, Rational):
        return Fraction(value)
    if isinstance(value, float):
        return value
    if isinstance(value, str):
        return Fraction(value.strip().replace(" ", ""))
    raise TypeError(f"cannot interpret {value!r} as a number")


@dataclass(frozen=True)
class Branch:
    lo: Fraction | float
    hi: Fraction | float
    slope: Fraction | float
    intercept: Fraction | float

    @property
    def exact(self) -> bool:
        return all(isinstance(v, Fraction) for v in (self.lo, self.hi, self.slope, self.intercept))

    @property
    def offset(self):
        """Integer removed by the mod-1 reduction (the image's lower end)."""
        low_end = self.slope * (self.lo if self.slope > 0 else self.hi) + self.intercept
        return round(low_end)

    def __call__(self, x):
        return self.slope * x + self.intercept - self.offset

    def contains(self, x) -> bool:
        return self.lo < x < self.hi


@dataclass(frozen=True)
class BranchMap:
    branches: tuple[Branch, ...]
    name: str = ""
    kind: str = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(sorted(self.branches, key=lambda b: b.lo)))
        kind = EXACT if all(b.exact for b in self.branches) else NUMERIC
        object.__setattr__(self, "kind", kind)

    @classmethod
    def from_table(cls, rows, name: str = "") -> "BranchMap":
        """Build from rows ``(lo, hi, slope, intercept)``."""
        return cls(tuple(Branch(*(parse_number(v) for v in row)) for row in rows), name)

    @property
    def breakpoints(self) -> tuple:
        """Interior branch endpoints."""
        return tuple(b.lo for b in self.branches[1:])

    @property
    def min_slope(self):
        return min(abs(b.slope) for b in self.branches)

    def branch_index(self, x) -> int:
        for i, b in enumerate(self.branches):
            if b.contains(x):
                return i
        return -1


def times_map(c: int, name: str = "") -> BranchMap:
    """The map ``x -> c x mod 1`` for an integer ``|c| >= 2``."""
    c = int(c)
    n = abs(c)
    rows = []
    for i in range(n):
        lo, hi = Fraction(i, n), Fraction(i + 1, n)
        rows.append((lo, hi, Fraction(c), Fraction(-i if c > 0 else i + 1)))
    return BranchMap(tuple(Branch(*r) for r in rows), name or f"{c}x mod 1")


@dataclass(frozen=True)
class MapFamily:
    maps: tuple[BranchMap, ...]

    def __post_init__(self):
        object.__setattr__(self, "maps", tuple(self.maps))
        if not self.maps:
            raise FamilyError(["a map family needs at least one map"])

    @property
    def u(self) -> int:
        return len(self.maps)

    @property
    def exact(self) -> bool:
        return all(m.kind == EXACT for m in self.maps)

    @property
    def d_min(self):
        return min(m.min_slope for m in self.maps)

    def __getitem__(self, v: int) -> BranchMap:
        return self.maps[v]


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    d_min: Fraction | float | None
    branch_counts: tuple[int, ...]
    lebesgue: tuple[bool, ...]
    problems: tuple[str, ...]

    @property
    def lebesgue_preserving(self) -> bool:
        return bool(self.lebesgue) and all(self.lebesgue)

    def raise_if_invalid(self) -> "ValidationReport":
        if not self.ok:
            raise FamilyError(self.problems)
        return self


def _check_map(v: int, tmap: BranchMap) -> tuple[list[str], bool]:
    problems = []
    br = tmap.branches
    tol = 0 if tmap.kind == EXACT else 1e-12
    if not br:
        return [f"map {v}: no branches"], False
    if abs(br[0].lo) > tol or abs(br[-1].hi - 1) > tol:
        problems.append(f"map {v}: branches must span [0, 1]")
    for i, b in enumerate(br):
        tag = f"map {v} branch {i} ({b.lo}, {b.hi})"
        if not b.lo < b.hi:
            problems.append(f"{tag}: empty domain")
            continue
        if i + 1 < len(br) and abs(br[i + 1].lo - b.hi) > tol:
            problems.append(f"{tag}: gap or overlap with the next branch")
        if abs(b.slope) <= 1:
            problems.append(f"{tag}: slope {b.slope} is not expanding (|slope| must exceed 1)")
            continue
        if abs(abs(b.slope) * (b.hi - b.lo) - 1) > tol:
            problems.append(f"{tag}: image has length {abs(b.slope) * (b.hi - b.lo)}, not a full branch")
        low_end = b.slope * (b.lo if b.slope > 0 else b.hi) + b.intercept
        if abs(low_end - round(low_end)) > tol:
            problems.append(f"{tag}: image wraps inside the branch (not surjective onto (0, 1))")
    inv = sum(1 / abs(b.slope) for b in br if b.slope != 0)
    lebesgue = abs(inv - 1) <= tol
    return problems, lebesgue


def validate_family(family: MapFamily) -> ValidationReport:
    """Check full branches and uniform expansion; report d_min and Lebesgue invariance.

    Piecewise linear full-branch maps preserve Lebesgue exactly when the
    inverse slopes sum to one over each map's branches.
    """
    problems: list[str] = []
    leb = []
    for v, tmap in enumerate(family.maps):
        p, ok = _check_map(v, tmap)
        problems.extend(p)
        leb.append(ok)
    d_min = family.d_min if not problems else None
    return ValidationReport(
        ok=not problems,
        d_min=d_min,
        branch_counts=tuple(len(m.branches) for m in family.maps),
        lebesgue=tuple(leb),
        problems=tuple(problems),
    )


def apply_map(family: MapFamily, symbol: int, x):
    """Image of ``x`` under map ``symbol``; breakpoints raise `BreakpointError`."""
    tmap = family[symbol]
    i = tmap.branch_index(x)
    if i < 0:
        raise BreakpointError(x, symbol)
    return tmap.branches[i](x)


def image_mod1(family: MapFamily, symbol: int, x):
    """Image of ``x`` with branch endpoints sent to their mod-1 value.

    Full branches end at 0 or 1 on both sides of every breakpoint, so the
    one-sided limits agree mod 1 and equal 0; 0 is then fixed.  Returns
    ``(image, slope)`` with ``slope = None`` for an endpoint.
    """
    tmap = family[symbol]
    i = tmap.branch_index(x)
    if i < 0:
        return type(x)(0), None
    b = tmap.branches[i]
    return b(x), b.slope


class Orbit(list):
    """Orbit points; ``downgraded_at`` marks where exact arithmetic gave way to floats."""

    downgraded_at: int | None = None


def _too_big(x, max_bits: int) -> bool:
    return isinstance(x, Fraction) and (
        x.denominator.bit_length() > max_bits or x.numerator.bit_length() > max_bits
    )


def iterate(family: MapFamily, word: Sequence[int], x, n: int, max_bits: int = DEFAULT_MAX_BITS) -> Orbit:
    """Return ``[x, T_w0 x, T_w1 T_w0 x, ...]`` of length ``n + 1``."""
    if n > len(word):
        raise ValueError(f"word of length {len(word)} is too short for {n} steps")
    orbit = Orbit([x])
    for i in range(n):
        try:
            x = apply_map(family, word[i], x)
        except BreakpointError as err:
            raise BreakpointError(err.x, err.symbol, step=i) from None
        if orbit.downgraded_at is None and _too_big(x, max_bits):
            orbit.downgraded_at = i + 1
            x = float(x)
        orbit.append(x)
    return orbit


def derivative_along(family: MapFamily, word: Sequence[int], x, n: int):
    """Jacobian ``|(T_w^n)'(x)|``: the product of branch slopes along the orbit."""
    jac = Fraction(1) if isinstance(x, Fraction) else 1.0
    for i in range(n):
        tmap = family[word[i]]
        k = tmap.branch_index(x)
        if k < 0:
            raise BreakpointError(x, word[i], step=i)
        b = tmap.branches[k]
        jac *= abs(b.slope)
        x = b(x)
    return jac
