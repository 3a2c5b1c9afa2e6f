"""Pre-activation bound propagation: interval arithmetic and quantized DeepPoly.

DeepPoly sandwiches every activation between two linear functions of its
pre-activation and back-substitutes through the affine layers all the way to
the input box. The final intervals are intersected with plain interval bounds,
so they are never looser than interval arithmetic. The same bounds feed the
Big-M and Cayley formulation builders.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .network import BoxDomain, Network
from .pwl import PiecewiseLinear

UNIFORM_TOL = 1e-9


@dataclass(frozen=True)
class LinearBound:
    """One-sided linear bound c . v + b0 on a neuron output."""

    coeffs: np.ndarray
    const: float
    sense: str  # "upper" | "lower"
    fallback: bool = False

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.atleast_1d(np.asarray(self.coeffs, dtype=float)))
        if self.sense not in ("upper", "lower"):
            raise ParameterError("sense must be 'upper' or 'lower'")

    def value(self, v) -> float:
        return float(self.coeffs @ np.atleast_1d(v) + self.const)


@dataclass
class PreActBounds:
    """Per-neuron pre-activation interval [L, U], one array pair per layer."""

    lower: list[np.ndarray] = field(default_factory=list)
    upper: list[np.ndarray] = field(default_factory=list)

    def interval(self, layer: int, neuron: int) -> tuple[float, float]:
        return float(self.lower[layer][neuron]), float(self.upper[layer][neuron])

    def as_report(self) -> dict:
        out = {}
        for li in range(len(self.lower)):
            for j in range(self.lower[li].size):
                out[f"layer{li}/neuron{j}"] = [float(self.lower[li][j]), float(self.upper[li][j])]
        return out


def _layer_output_interval(layer, lo_in, hi_in, pre_lo, pre_hi):
    """Activation output intervals given input and pre-activation intervals."""
    out_lo = np.empty(layer.out_dim)
    out_hi = np.empty(layer.out_dim)
    for j in range(layer.out_dim):
        spec = layer.activations[j]
        if spec is None:
            out_lo[j], out_hi[j] = pre_lo[j], pre_hi[j]
        else:
            f = spec.instantiate(pre_lo[j], pre_hi[j])
            out_lo[j], out_hi[j] = f.output_range()
    return out_lo, out_hi


def interval_bounds(net: Network, input_box: BoxDomain) -> PreActBounds:
    """Plain interval arithmetic layer by layer."""
    out = PreActBounds()
    lo, hi = input_box.lower, input_box.upper
    for layer in net.layers:
        w_pos = np.maximum(layer.weights, 0.0)
        w_neg = np.minimum(layer.weights, 0.0)
        pre_lo = w_pos @ lo + w_neg @ hi + layer.bias
        pre_hi = w_pos @ hi + w_neg @ lo + layer.bias
        out.lower.append(pre_lo)
        out.upper.append(pre_hi)
        lo, hi = _layer_output_interval(layer, lo, hi, pre_lo, pre_hi)
    return out


def _is_uniform(values, tol) -> bool:
    if values.size <= 1:
        return True
    return float(values.max() - values.min()) <= tol * max(1.0, float(np.abs(values).max()))


def deeppoly_activation_relax(f: PiecewiseLinear, L: float, U: float
                              ) -> tuple[LinearBound, LinearBound]:
    """Two linear bounds for a non-decreasing uniform piecewise-constant staircase.

    The coefficient applies to the pre-activation value t in [L, U]. Cases:
    k = 2 branches on the widths of the outer pieces; k > 2 branches on the
    first/last widths against the uniform interior step. Non-uniform steps fall
    back to constant bounds (flagged); decreasing staircases are rejected.
    """
    if abs(L - f.lo) > 1e-7 * max(1.0, abs(L)) or abs(U - f.hi) > 1e-7 * max(1.0, abs(U)):
        raise ParameterError("activation must already be aligned to [L, U]")
    if np.any(np.abs(f.slopes) > 1e-12):
        raise ParameterError("relaxation rules require a piecewise-constant staircase")
    levels = f.intercepts
    k = f.num_pieces
    if k == 1:
        c = float(levels[0])
        return (LinearBound([0.0], c, "upper"), LinearBound([0.0], c, "lower"))
    steps = np.diff(levels)
    if np.any(steps < -1e-12):
        raise ParameterError("decreasing staircases are not supported by these rules")

    h = f.breakpoints
    widths = np.diff(h)
    scale = max(1.0, U - L)
    interior = widths[1:-1]
    if not (_is_uniform(interior, UNIFORM_TOL) and _is_uniform(steps, UNIFORM_TOL)
            and np.all(steps > 1e-12)):
        return (LinearBound([0.0], float(levels.max()), "upper", fallback=True),
                LinearBound([0.0], float(levels.min()), "lower", fallback=True))

    first, last = float(widths[0]), float(widths[-1])
    if k == 2:
        rise = float(levels[1] - levels[0])
        if last >= first:  # ties take this branch (deterministic choice)
            upper = LinearBound([0.0], float(levels[1]), "upper")
            cl = rise / last
            lower = LinearBound([cl], float(levels[0] - cl * h[1]), "lower")
        else:
            cu = rise / first
            upper = LinearBound([cu], float(levels[1] - cu * h[1]), "upper")
            lower = LinearBound([0.0], float(levels[0]), "lower")
        return upper, lower

    step_h = float(interior[0])
    step_f = float(steps[0])
    if first > step_h:
        cu = float((levels[-1] - levels[0]) / (h[-2] - h[0]))
    else:
        cu = step_f / step_h
    upper = LinearBound([cu], float(levels[-1] - cu * h[-2]), "upper")
    if last > step_h:
        cl = float((levels[-1] - levels[0]) / (h[-1] - h[1]))
    else:
        cl = step_f / step_h
    lower = LinearBound([cl], float(levels[0] - cl * h[1]), "lower")
    return upper, lower


def relax_activation(f: PiecewiseLinear, L: float, U: float
                     ) -> tuple[LinearBound, LinearBound]:
    """Linear sandwich for any supported activation, aligned to [L, U].

    Dispatch: exact lines for a single piece, triangle-style relaxation for
    continuous two-piece staircases (ReLU and friends), the quantizer rules
    for non-decreasing piecewise-constant functions, and a shifted-secant
    sandwich for everything else.
    """
    k = f.num_pieces
    if k == 1:
        a, d = float(f.slopes[0]), float(f.intercepts[0])
        return (LinearBound([a], d, "upper"), LinearBound([a], d, "lower"))
    if np.all(np.abs(f.slopes) <= 1e-12):
        return deeppoly_activation_relax(f, L, U)
    if k == 2 and f.is_continuous(tol=1e-9):
        a1, a2 = float(f.slopes[0]), float(f.slopes[1])
        h1 = float(f.breakpoints[1])
        yL, y1, yU = f.piece_value(0, L), f.piece_value(0, h1), f.piece_value(1, U)
        sec = (yU - yL) / (U - L)
        sec_bound = LinearBound([sec], yL - sec * L, "upper" if a2 > a1 else "lower")
        # pick the piece line covering the wider side of the kink
        i = 1 if (U - h1) > (h1 - L) else 0
        line = LinearBound([float(f.slopes[i])], float(f.intercepts[i]),
                           "lower" if a2 > a1 else "upper")
        if a2 > a1:  # convex kink: secant above, piece line below
            return sec_bound, line
        return line, sec_bound
    return _secant_sandwich(f, L, U)


def _secant_sandwich(f: PiecewiseLinear, L: float, U: float
                     ) -> tuple[LinearBound, LinearBound]:
    """Sound generic sandwich: secant slope shifted to clear every corner."""
    slope = (f.piece_value(f.num_pieces - 1, U) - f.piece_value(0, L)) / (U - L)
    lefts = f.slopes * f.breakpoints[:-1] + f.intercepts
    rights = f.slopes * f.breakpoints[1:] + f.intercepts
    gaps = np.concatenate([lefts - slope * f.breakpoints[:-1],
                           rights - slope * f.breakpoints[1:]])
    return (LinearBound([slope], float(gaps.max()), "upper", fallback=True),
            LinearBound([slope], float(gaps.min()), "lower", fallback=True))


class _LayerRelax:
    """Per-layer data for back-substitution: affine map plus neuron sandwiches."""

    def __init__(self, layer, cu, bu, cl, bl):
        self.weights = layer.weights
        self.bias = layer.bias
        self.cu, self.bu, self.cl, self.bl = cu, bu, cl, bl


def _back_substitute(coeffs: np.ndarray, const: float, relaxed: list[_LayerRelax],
                     input_box: BoxDomain, sense: str) -> float:
    """Tightest bound on coeffs . activations(layer len(relaxed)-1) + const."""
    for lr in reversed(relaxed):
        pos = np.maximum(coeffs, 0.0)
        neg = np.minimum(coeffs, 0.0)
        if sense == "upper":
            slope = pos * lr.cu + neg * lr.cl
            const += float(pos @ lr.bu + neg @ lr.bl)
        else:
            slope = pos * lr.cl + neg * lr.cu
            const += float(pos @ lr.bl + neg @ lr.bu)
        # pre-activation t = W v + b, so the expression drops one layer down
        const += float(slope @ lr.bias)
        coeffs = slope @ lr.weights
    pos = np.maximum(coeffs, 0.0)
    neg = np.minimum(coeffs, 0.0)
    if sense == "upper":
        return const + float(pos @ input_box.upper + neg @ input_box.lower)
    return const + float(pos @ input_box.lower + neg @ input_box.upper)


def deeppoly_bounds(net: Network, input_box: BoxDomain) -> PreActBounds:
    """DeepPoly-style bounds via full back-substitution to the input box.

    Every neuron's [L, U] is intersected with the interval-arithmetic bound,
    so the result is at least as tight on both sides.
    """
    ivals = interval_bounds(net, input_box)
    out = PreActBounds()
    relaxed: list[_LayerRelax] = []
    for li, layer in enumerate(net.layers):
        pre_lo = np.empty(layer.out_dim)
        pre_hi = np.empty(layer.out_dim)
        for j in range(layer.out_dim):
            ilo, ihi = ivals.interval(li, j)
            lo = _back_substitute(layer.weights[j], float(layer.bias[j]),
                                  relaxed, input_box, "lower")
            hi = _back_substitute(layer.weights[j], float(layer.bias[j]),
                                  relaxed, input_box, "upper")
            pre_lo[j] = max(lo, ilo)
            pre_hi[j] = min(hi, ihi)
            if pre_lo[j] > pre_hi[j]:  # float noise on a pinned neuron
                mid = 0.5 * (pre_lo[j] + pre_hi[j])
                pre_lo[j] = pre_hi[j] = mid
        out.lower.append(pre_lo)
        out.upper.append(pre_hi)

        cu = np.empty(layer.out_dim)
        bu = np.empty(layer.out_dim)
        cl = np.empty(layer.out_dim)
        bl = np.empty(layer.out_dim)
        for j in range(layer.out_dim):
            spec = layer.activations[j]
            if spec is None:
                cu[j] = cl[j] = 1.0
                bu[j] = bl[j] = 0.0
                continue
            f = spec.instantiate(pre_lo[j], pre_hi[j])
            ub, lb = relax_activation(f, f.lo, f.hi)
            cu[j], bu[j] = float(ub.coeffs[0]), ub.const
            cl[j], bl[j] = float(lb.coeffs[0]), lb.const
        relaxed.append(_LayerRelax(layer, cu, bu, cl, bl))
    return out


def output_linear_bound(net: Network, input_box: BoxDomain, c: np.ndarray,
                        preact: PreActBounds | None = None) -> float:
    """Upper bound on c . N(x) over the box, DeepPoly style (used as a verifier)."""
    if preact is None:
        preact = deeppoly_bounds(net, input_box)
    relaxed = []
    for li, layer in enumerate(net.layers):
        cu = np.empty(layer.out_dim)
        bu = np.empty(layer.out_dim)
        cl = np.empty(layer.out_dim)
        bl = np.empty(layer.out_dim)
        for j in range(layer.out_dim):
            spec = layer.activations[j]
            if spec is None:
                cu[j] = cl[j] = 1.0
                bu[j] = bl[j] = 0.0
                continue
            lo, hi = preact.interval(li, j)
            f = spec.instantiate(lo, hi)
            ub, lb = relax_activation(f, f.lo, f.hi)
            cu[j], bu[j] = float(ub.coeffs[0]), ub.const
            cl[j], bl[j] = float(lb.coeffs[0]), lb.const
        relaxed.append(_LayerRelax(layer, cu, bu, cl, bl))
    # expression over the last layer's activations
    c = np.asarray(c, dtype=float)
    pos = np.maximum(c, 0.0)
    neg = np.minimum(c, 0.0)
    last = relaxed[-1]
    slope = pos * last.cu + neg * last.cl
    const = float(pos @ last.bu + neg @ last.bl) + float(slope @ last.bias)
    coeffs = slope @ last.weights
    return _back_substitute(coeffs, const, relaxed[:-1], input_box, "upper")
