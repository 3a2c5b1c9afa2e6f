"""Univariate piecewise-linear functions and staircase algebra.

A function with k pieces is stored as breakpoints ``h_0 < h_1 < ... < h_k``
together with per-piece slopes ``a_1..a_k`` and intercepts ``d_1..d_k``; piece
``i`` applies on ``[h_{i-1}, h_i)`` (the last piece is closed). Jumps at
breakpoints are allowed; evaluation is right-continuous by convention.

A staircase is a piecewise-linear function whose slopes all lie in {0, s} for
a single common slope s (possibly 0 or negative). ReLU (s=1, two pieces) and
uniform quantizers (s=0) are special cases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ParameterError

# Relative tolerance for merging breakpoints that collide after clipping.
BREAKPOINT_MERGE_TOL = 1e-12


@dataclass(frozen=True)
class PiecewiseLinear:
    """Right-continuous univariate piecewise-linear function on [h_0, h_k]."""

    breakpoints: np.ndarray  # shape (k+1,), strictly increasing
    slopes: np.ndarray       # shape (k,)
    intercepts: np.ndarray   # shape (k,)

    def __post_init__(self):
        object.__setattr__(self, "breakpoints", np.asarray(self.breakpoints, dtype=float))
        object.__setattr__(self, "slopes", np.asarray(self.slopes, dtype=float))
        object.__setattr__(self, "intercepts", np.asarray(self.intercepts, dtype=float))
        if self.breakpoints.ndim != 1 or self.breakpoints.size < 2:
            raise ParameterError("need at least one piece (two breakpoints)")
        if self.slopes.shape != (self.num_pieces,) or self.intercepts.shape != (self.num_pieces,):
            raise ParameterError("slopes/intercepts must have one entry per piece")
        if not np.all(np.diff(self.breakpoints) > 0):
            raise ParameterError("breakpoints must be strictly increasing")
        if not (np.all(np.isfinite(self.breakpoints)) and np.all(np.isfinite(self.slopes))
                and np.all(np.isfinite(self.intercepts))):
            raise ParameterError("breakpoints, slopes and intercepts must be finite")

    @property
    def num_pieces(self) -> int:
        return self.breakpoints.size - 1

    @property
    def lo(self) -> float:
        return float(self.breakpoints[0])

    @property
    def hi(self) -> float:
        return float(self.breakpoints[-1])

    def piece_index(self, t: float) -> int:
        """0-based index of the right-continuous piece containing t."""
        if t < self.lo or t > self.hi:
            raise DomainError(f"t={t} outside [{self.lo}, {self.hi}]")
        idx = int(np.searchsorted(self.breakpoints, t, side="right")) - 1
        return min(max(idx, 0), self.num_pieces - 1)

    def __call__(self, t: float) -> float:
        i = self.piece_index(t)
        return float(self.slopes[i] * t + self.intercepts[i])

    def batch(self, ts: np.ndarray) -> np.ndarray:
        """Vectorized evaluation with the same right-continuous convention."""
        ts = np.asarray(ts, dtype=float)
        if np.any(ts < self.lo - 1e-9) or np.any(ts > self.hi + 1e-9):
            raise DomainError("batch evaluation outside the function domain")
        idx = np.clip(np.searchsorted(self.breakpoints, ts, side="right") - 1,
                      0, self.num_pieces - 1)
        return self.slopes[idx] * ts + self.intercepts[idx]

    def piece_value(self, i: int, t: float) -> float:
        """Value of piece i's affine extension at t (closure semantics)."""
        return float(self.slopes[i] * t + self.intercepts[i])

    def output_range(self) -> tuple[float, float]:
        """Min/max of the closure of the graph over the full domain."""
        left = self.slopes * self.breakpoints[:-1] + self.intercepts
        right = self.slopes * self.breakpoints[1:] + self.intercepts
        return float(min(left.min(), right.min())), float(max(left.max(), right.max()))

    def is_continuous(self, tol: float = 1e-12) -> bool:
        scale = max(1.0, float(np.abs(self.intercepts).max()), float(np.abs(self.slopes).max()))
        return all(abs(self.jump_at(i)) <= tol * scale for i in range(1, self.num_pieces))

    def jump_at(self, i: int) -> float:
        """f(h_i+) - f(h_i-) for an interior breakpoint index 1 <= i <= k-1."""
        h = self.breakpoints[i]
        return self.piece_value(i, h) - self.piece_value(i - 1, h)

    def negate(self) -> "PiecewiseLinear":
        return replace_pieces(self, -self.slopes, -self.intercepts)

    def reverse(self) -> "PiecewiseLinear":
        """Reflect the argument through the domain midpoint: t -> h_0 + h_k - t.

        The graph is unchanged as a set once the caller also negates the
        pre-activation map; piece i of the result corresponds to piece
        k+1-i of the original.
        """
        c = self.lo + self.hi
        new_bp = c - self.breakpoints[::-1]
        new_slopes = -self.slopes[::-1]
        new_intercepts = (self.slopes * c + self.intercepts)[::-1]
        return PiecewiseLinear(new_bp, new_slopes, new_intercepts)


def staircase_slope(f: PiecewiseLinear, tol: float = 1e-9) -> float | None:
    """Common slope s if f is a staircase (slopes within tol of {0, s}), else None."""
    nonzero = f.slopes[np.abs(f.slopes) > tol]
    if nonzero.size == 0:
        return 0.0
    s = float(nonzero[0])
    if np.all(np.abs(nonzero - s) <= tol * max(1.0, abs(s))):
        return s
    return None


@dataclass(frozen=True)
class Staircase(PiecewiseLinear):
    """Piecewise-linear function whose slopes all lie in {0, s}."""

    s: float = field(default=0.0)

    def __post_init__(self):
        super().__post_init__()
        ok = np.isclose(self.slopes, 0.0, atol=1e-12) | np.isclose(self.slopes, self.s, atol=1e-12)
        if not np.all(ok):
            raise ParameterError("staircase slopes must lie in {0, s}")

    def negate(self) -> "Staircase":
        return Staircase(self.breakpoints, -self.slopes, -self.intercepts, s=-self.s)

    def reverse(self) -> "Staircase":
        g = PiecewiseLinear.reverse(self)
        return Staircase(g.breakpoints, g.slopes, g.intercepts, s=-self.s)


def as_staircase(f: PiecewiseLinear) -> Staircase:
    if isinstance(f, Staircase):
        return f
    s = staircase_slope(f)
    if s is None:
        raise ParameterError("function is not a staircase")
    return Staircase(f.breakpoints, f.slopes, f.intercepts, s=s)


def replace_pieces(f: PiecewiseLinear, slopes, intercepts) -> PiecewiseLinear:
    g = PiecewiseLinear(f.breakpoints, slopes, intercepts)
    s = staircase_slope(g)
    return g if s is None else Staircase(g.breakpoints, g.slopes, g.intercepts, s=s)


def evaluate(f: PiecewiseLinear, t: float) -> float:
    """f(t) for h_0 <= t <= h_k using the right-continuous piece."""
    return f(t)


def constant(value: float, lo: float, hi: float) -> Staircase:
    return Staircase([lo, hi], [0.0], [value], s=0.0)


def identity(lo: float, hi: float) -> Staircase:
    return Staircase([lo, hi], [1.0], [0.0], s=1.0)


def relu(lo: float, hi: float) -> Staircase:
    """ReLU restricted to [lo, hi]; the kink at 0 appears only if interior."""
    if lo >= 0:
        return identity(lo, hi)
    if hi <= 0:
        return constant(0.0, lo, hi)
    return Staircase([lo, 0.0, hi], [0.0, 1.0], [0.0, 0.0], s=1.0)


def dorefa(bits: int, lo: float, hi: float) -> Staircase:
    """Uniform 2**bits-level quantizer on [lo, hi] with output levels in [0, 1].

    Piecewise constant (s = 0) with equal-width pieces; level i of 2**bits is
    i / (2**bits - 1). This is the convention used throughout the toolkit.
    """
    if bits < 1:
        raise ParameterError("bits must be >= 1")
    if not lo < hi:
        raise ParameterError("need lo < hi")
    k = 2 ** bits
    bp = np.linspace(lo, hi, k + 1)
    levels = np.arange(k) / (k - 1)
    return Staircase(bp, np.zeros(k), levels, s=0.0)


def clip(f: PiecewiseLinear, lo: float, hi: float) -> PiecewiseLinear:
    """Restrict f to [lo, hi], dropping pieces that fall outside.

    Used when bound propagation tightens the pre-activation interval. The
    clipped function keeps f's right-continuous piece assignment; breakpoints
    closer than BREAKPOINT_MERGE_TOL * max(1, width) are merged to avoid
    zero-width pieces from float noise.
    """
    if lo > hi:
        raise DomainError(f"empty clip interval [{lo}, {hi}]")
    if lo < f.lo - 1e-9 or hi > f.hi + 1e-9:
        raise DomainError("clip interval must be inside the function's domain")
    lo = max(lo, f.lo)
    hi = min(hi, f.hi)
    merge = BREAKPOINT_MERGE_TOL * max(1.0, f.hi - f.lo)
    if hi - lo <= merge:
        # degenerate pre-activation: keep a single thin piece around lo
        i = f.piece_index(lo)
        width = max(merge, 1e-12)
        return replace_pieces(
            PiecewiseLinear([lo, lo + width], [f.slopes[i]], [f.intercepts[i]]),
            [f.slopes[i]], [f.intercepts[i]])
    interior = [h for h in f.breakpoints[1:-1] if lo + merge < h < hi - merge]
    bp = np.array([lo] + interior + [hi])
    idx = [f.piece_index(b) for b in bp[:-1]]
    g = PiecewiseLinear(bp, f.slopes[idx], f.intercepts[idx])
    return replace_pieces(g, g.slopes, g.intercepts)


def decompose_staircase(f: PiecewiseLinear) -> tuple[Staircase | None, list[Staircase]]:
    """Split f into an optional piecewise-constant jump part and staircases.

    Returns ``(f0, [f_1..f_m])`` with ``f = f0 + sum(f_v)`` pointwise on the
    shared breakpoint grid. f0 collects all jump discontinuities and is None
    when f is continuous. Each f_v is a continuous staircase taking slope s_v
    on the pieces where f has that slope and 0 elsewhere; the components split
    f's value at the left endpoint evenly, f_v(h_0) = f(h_0) / m.

    m is the number of distinct nonzero slopes (at least 1), so m <= k and
    m <= |{distinct slopes}|.
    """
    k = f.num_pieces
    bp = f.breakpoints

    # continuous part: same slopes, jumps removed by chaining piece values
    jumps = np.zeros(k)
    for i in range(1, k):
        jumps[i] = f.jump_at(i)
    cum_jump = np.cumsum(jumps)
    cont_intercepts = f.intercepts - cum_jump
    f0 = None
    if np.any(np.abs(jumps) > 0):
        # piecewise-constant jump accumulator: f0 is 0 on the first piece
        f0 = Staircase(bp, np.zeros(k), cum_jump, s=0.0)

    slopes = f.slopes
    distinct = []
    for a in slopes:
        if abs(a) > 0 and not any(abs(a - s) <= 1e-12 * max(1.0, abs(s)) for s in distinct):
            distinct.append(float(a))
    if not distinct:
        # constant (after jump removal): one flat staircase on the same grid
        base = float(cont_intercepts[0] + slopes[0] * bp[0])
        return f0, [Staircase(bp, np.zeros(k), np.full(k, base), s=0.0)]

    m = len(distinct)
    f_left = float(slopes[0] * bp[0] + cont_intercepts[0])
    parts = []
    for s_v in distinct:
        active = np.abs(slopes - s_v) <= 1e-12 * max(1.0, abs(s_v))
        comp_slopes = np.where(active, s_v, 0.0)
        # integrate the slope pattern from the left to stay continuous
        intercepts = np.empty(k)
        value = f_left / m
        for i in range(k):
            intercepts[i] = value - comp_slopes[i] * bp[i]
            value = comp_slopes[i] * bp[i + 1] + intercepts[i]
        parts.append(Staircase(bp, comp_slopes, intercepts, s=s_v))
    return f0, parts


def tanh_staircase_pair(scale: float = 1.0) -> PiecewiseLinear:
    """Symmetric 7-piece tanh-style approximation that splits into 2 staircases.

    The slope multiset {0, a, b, a, b, a, 0} uses only two nonzero values, so
    decompose_staircase returns exactly two components.
    """
    a, b = 0.12 * scale, 0.55 * scale
    bp = np.array([-4.0, -3.0, -2.0, -1.0, 1.0, 2.0, 3.0, 4.0])
    slopes = np.array([0.0, a, b, a, b, a, 0.0])
    # integrate from f(-4) = -1 for a tanh-like shape
    intercepts = np.empty(7)
    value = -1.0
    for i in range(7):
        intercepts[i] = value - slopes[i] * bp[i]
        value = slopes[i] * bp[i + 1] + intercepts[i]
    return PiecewiseLinear(bp, slopes, intercepts)
