"""Per-neuron constraint systems and whole-query models.

Two interchangeable encodings of one neuron's lifted graph over piece
indicators z in the unit simplex:

* Big-M: slab coupling rows plus indicator rows deactivated by M constants;
  piecewise-constant activations drop the M rows in favor of the exact
  ``y = sum_i d_i z_i``.
* Cayley: slab coupling and simplex rows plus a growable pool of hull cuts,
  seeded with the alpha = 0 and alpha = s w inequalities in both directions.

Integrality of z is a solver-mode flag, never a formulation change, and the
same pre-activation bounds feed both builders.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import pwl as pwl_mod
from .bounds import PreActBounds, deeppoly_bounds
from .errors import FormulationError, InputError
from .lp import EQUAL, GREATER, LESS, LinearProgram
from .network import BoxDomain, Network, Neuron
from .pwl import staircase_slope
from .separation import Cut, LOWER, UPPER, retrieve_cut

BIGM, CAYLEY = "bigm", "cayley"


@dataclass(frozen=True)
class VerificationQuery:
    """Targeted robustness query: can an input in the eps-ball flip l to l'?"""

    network: Network
    x0: np.ndarray
    eps: float
    label: int
    target: int | None = None   # None = try every other label
    xi: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        if self.x0.shape != (self.network.input_dim,):
            raise InputError("anchor input has the wrong dimension")
        if not (0 <= self.label < self.network.output_dim):
            raise InputError("label out of range")
        if self.target is not None and (
                not (0 <= self.target < self.network.output_dim)
                or self.target == self.label):
            raise InputError("target must be a different valid label")

    def targets(self) -> list[int]:
        if self.target is not None:
            return [self.target]
        return [t for t in range(self.network.output_dim) if t != self.label]

    def with_target(self, target: int) -> "VerificationQuery":
        return VerificationQuery(self.network, self.x0, self.eps, self.label,
                                 target, self.xi)

    def input_region(self) -> BoxDomain:
        ball = BoxDomain(self.x0 - self.eps, self.x0 + self.eps)
        lower = np.maximum(self.network.input_box.lower, ball.lower)
        upper = np.minimum(self.network.input_box.upper, ball.upper)
        if np.any(lower > upper + 1e-12):
            raise InputError("perturbation ball misses the network input box")
        return BoxDomain(lower, upper)

    def objective_vector(self) -> np.ndarray:
        if self.target is None:
            raise InputError("objective needs a concrete target label")
        return attack_objective(self.network.output_dim, self.label, self.target)


def attack_objective(n_out: int, label: int, target: int) -> np.ndarray:
    c = np.zeros(n_out)
    c[target] = 1.0
    c[label] = -1.0
    return c


@dataclass
class NeuronFormulation:
    """Variable ids and cut pool of one activated neuron inside a model."""

    layer: int
    index: int
    neuron: Neuron          # weight/bias over the previous layer, clipped activation
    x_vars: list[int]
    y_var: int
    z_vars: list[int]
    pool: dict = field(default_factory=dict)   # cut key -> (Cut, row index)

    @property
    def key(self) -> tuple[int, int]:
        return (self.layer, self.index)

    @property
    def name(self) -> str:
        return f"layer{self.layer}/neuron{self.index}"


class _RowModel:
    """Shared variable/row bookkeeping for neuron and query models."""

    def __init__(self, mode: str):
        if mode not in (BIGM, CAYLEY):
            raise InputError(f"mode must be '{BIGM}' or '{CAYLEY}'")
        self.mode = mode
        self.lower: list[float] = []
        self.upper: list[float] = []
        self.names: list[str] = []
        self.rows: list[tuple[dict, str, float]] = []
        self.objective: np.ndarray | None = None
        self.neurons: dict[tuple[int, int], NeuronFormulation] = {}

    def _new_var(self, lo: float, hi: float, name: str) -> int:
        self.lower.append(float(lo))
        self.upper.append(float(hi))
        self.names.append(name)
        return len(self.lower) - 1

    def _add_row(self, coeffs: dict, sense: str, rhs: float) -> int:
        self.rows.append((coeffs, sense, float(rhs)))
        return len(self.rows) - 1

    def num_vars(self) -> int:
        return len(self.lower)

    def _attach_neuron(self, nf: NeuronFormulation) -> None:
        self.neurons[nf.key] = nf
        f = nf.neuron.activation
        w = nf.neuron.weight
        b = nf.neuron.bias
        self._add_row({z: 1.0 for z in nf.z_vars}, EQUAL, 1.0)
        low = {v: float(w[p]) for p, v in enumerate(nf.x_vars) if w[p]}
        high = dict(low)
        for i, z in enumerate(nf.z_vars):
            low[z] = low.get(z, 0.0) - float(f.breakpoints[i])
            high[z] = high.get(z, 0.0) - float(f.breakpoints[i + 1])
        self._add_row(low, GREATER, -b)
        self._add_row(high, LESS, -b)
        if self.mode == BIGM:
            self._add_bigm_rows(nf)
        else:
            self._add_seed_cuts(nf)

    def _add_bigm_rows(self, nf: NeuronFormulation) -> None:
        f = nf.neuron.activation
        w = nf.neuron.weight
        b = nf.neuron.bias
        if np.all(np.abs(f.slopes) <= 1e-12):
            # constant pieces never need the M constants
            row = {nf.y_var: 1.0}
            for i, z in enumerate(nf.z_vars):
                row[z] = -float(f.intercepts[i])
            self._add_row(row, EQUAL, 0.0)
            return
        # corner values of f over the whole range; the M constants must bound
        # the difference y - (a_i t + d_i), not y itself
        corner_ts = np.concatenate([f.breakpoints[:-1], f.breakpoints[1:]])
        corner_fs = np.concatenate([f.slopes * f.breakpoints[:-1] + f.intercepts,
                                    f.slopes * f.breakpoints[1:] + f.intercepts])
        for i, z in enumerate(nf.z_vars):
            a_i = float(f.slopes[i])
            d_i = float(f.intercepts[i])
            diff = corner_fs - (a_i * corner_ts + d_i)
            m1, m2 = float(diff.min()), float(diff.max())
            up = {nf.y_var: 1.0, z: m2}
            low = {nf.y_var: 1.0, z: m1}
            for p, v in enumerate(nf.x_vars):
                if a_i * w[p]:
                    up[v] = up.get(v, 0.0) - a_i * float(w[p])
                    low[v] = low.get(v, 0.0) - a_i * float(w[p])
            self._add_row(up, LESS, m2 + a_i * b + d_i)
            self._add_row(low, GREATER, m1 + a_i * b + d_i)

    def _seed_alphas(self, nf: NeuronFormulation) -> list[np.ndarray]:
        f = nf.neuron.activation
        s = staircase_slope(f)
        if s is None:
            _, parts = pwl_mod.decompose_staircase(f)
            s = float(sum(p.s for p in parts))
        seeds = [np.zeros(nf.neuron.dim)]
        if s != 0.0:
            seeds.append(s * nf.neuron.weight)
        return seeds

    def _add_seed_cuts(self, nf: NeuronFormulation) -> None:
        for alpha in self._seed_alphas(nf):
            for direction in (UPPER, LOWER):
                cut = retrieve_cut(nf.neuron, alpha, direction, neuron_id=nf.name)
                self.add_cut(nf, cut)

    def add_cut(self, nf: NeuronFormulation, cut: Cut) -> bool:
        """Install a cut row unless an equal one (up to 1e-10) is pooled already."""
        key = cut.key()
        if key in nf.pool:
            return False
        row = {}
        for p, v in enumerate(nf.x_vars):
            if cut.alpha[p]:
                row[v] = row.get(v, 0.0) + float(cut.alpha[p])
        for i, z in enumerate(nf.z_vars):
            if cut.zcoef[i]:
                row[z] = row.get(z, 0.0) + float(cut.zcoef[i])
        if cut.y_coef:
            row[nf.y_var] = row.get(nf.y_var, 0.0) - float(cut.y_coef)
        sense = LESS if (cut.y_coef != 0.0 and cut.direction == LOWER) else GREATER
        ridx = self._add_row(row, sense, -cut.const)
        nf.pool[key] = (cut, ridx)
        return True

    def neuron_point(self, x: np.ndarray, key: tuple[int, int]):
        nf = self.neurons[key]
        xin = np.array([x[v] for v in nf.x_vars])
        zhat = np.array([x[v] for v in nf.z_vars])
        return xin, float(x[nf.y_var]), zhat

    def to_lp(self, sense: str = "max", fixed_z: dict | None = None) -> LinearProgram:
        """Dense LinearProgram; `fixed_z` pins allowed piece sets per neuron key."""
        lower = np.array(self.lower)
        upper = np.array(self.upper)
        if fixed_z:
            for key, allowed in fixed_z.items():
                nf = self.neurons[key]
                allowed = set(allowed)
                for i, z in enumerate(nf.z_vars):
                    if i not in allowed:
                        lower[z] = 0.0
                        upper[z] = 0.0
        lp = LinearProgram(sense, self.objective.copy(), lower=lower, upper=upper,
                           names=list(self.names))
        n = self.num_vars()
        for coeffs, rsense, rhs in self.rows:
            dense = np.zeros(n)
            for v, c in coeffs.items():
                dense[v] = c
            lp.add_row(dense, rsense, rhs)
        return lp

    def activated_neurons(self) -> list[NeuronFormulation]:
        return [self.neurons[k] for k in sorted(self.neurons)]


class NeuronModel(_RowModel):
    """Standalone model of a single neuron over its input box."""

    def __init__(self, neuron: Neuron, mode: str):
        super().__init__(mode)
        n = neuron.dim
        xs = [self._new_var(neuron.box.lower[j], neuron.box.upper[j], f"x{j}")
              for j in range(n)]
        out_lo, out_hi = neuron.activation.output_range()
        y = self._new_var(out_lo, out_hi, "y")
        zs = [self._new_var(0.0, 1.0, f"z{i}")
              for i in range(neuron.activation.num_pieces)]
        nf = NeuronFormulation(0, 0, neuron, xs, y, zs)
        self._attach_neuron(nf)
        self.nf = nf
        self.objective = np.zeros(self.num_vars())

    def with_objective(self, coeffs) -> "NeuronModel":
        self.objective = np.asarray(coeffs, dtype=float)
        return self


def build_bigm(neuron: Neuron, L: float | None = None, U: float | None = None) -> NeuronModel:
    """Big-M formulation of one neuron; [L, U] optionally clips the activation."""
    return NeuronModel(_clipped(neuron, L, U), BIGM)


def build_cayley(neuron: Neuron, L: float | None = None, U: float | None = None) -> NeuronModel:
    """Seeded Cayley formulation of one neuron; the pool grows via separation."""
    return NeuronModel(_clipped(neuron, L, U), CAYLEY)


def _clipped(neuron: Neuron, L, U) -> Neuron:
    if L is None and U is None:
        return neuron
    f = neuron.activation
    L = f.lo if L is None else max(L, f.lo)
    U = f.hi if U is None else min(U, f.hi)
    if L > U:
        raise FormulationError(f"inconsistent bounds: L={L} > U={U}")
    return Neuron(neuron.weight, neuron.bias, pwl_mod.clip(f, L, U), neuron.box)


class QueryModel(_RowModel):
    """Assembled LP/MIP over input, activation and piece-indicator variables."""

    def __init__(self, query: VerificationQuery, mode: str,
                 bounds: PreActBounds | None = None):
        super().__init__(mode)
        self.query = query
        net = query.network
        self.net = net
        self.region = query.input_region()
        self.bounds = bounds if bounds is not None else deeppoly_bounds(net, self.region)

        self.layer_inputs: list[list[int]] = []
        self.y_vars: list[list[int]] = []
        current = [self._new_var(self.region.lower[j], self.region.upper[j], f"x{j}")
                   for j in range(net.input_dim)]
        for li, layer in enumerate(net.layers):
            self.layer_inputs.append(current)
            in_lo = np.array([self.lower[v] for v in current])
            in_hi = np.array([self.upper[v] for v in current])
            ys = []
            for j in range(layer.out_dim):
                pre_lo, pre_hi = self.bounds.interval(li, j)
                spec = layer.activations[j]
                if spec is None:
                    y = self._new_var(pre_lo, pre_hi, f"y{li}_{j}")
                    row = {v: float(layer.weights[j, p])
                           for p, v in enumerate(current) if layer.weights[j, p]}
                    row[y] = row.get(y, 0.0) - 1.0
                    self._add_row(row, EQUAL, -float(layer.bias[j]))
                    ys.append(y)
                    continue
                f = spec.instantiate(pre_lo, pre_hi)
                out_lo, out_hi = f.output_range()
                y = self._new_var(out_lo, out_hi, f"y{li}_{j}")
                zs = [self._new_var(0.0, 1.0, f"z{li}_{j}_{i}")
                      for i in range(f.num_pieces)]
                nrn = Neuron(layer.weights[j], float(layer.bias[j]), f,
                             BoxDomain(in_lo, in_hi))
                self._attach_neuron(NeuronFormulation(li, j, nrn, list(current), y, zs))
                ys.append(y)
            self.y_vars.append(ys)
            current = ys
        self.objective = np.zeros(self.num_vars())
        c = query.objective_vector()
        for j, y in enumerate(self.y_vars[-1]):
            self.objective[y] = c[j]

    # -- solution probing -----------------------------------------------------

    def input_point(self, x: np.ndarray) -> np.ndarray:
        return np.array(x[:self.net.input_dim])

    def trace_assignment(self, x_input) -> np.ndarray:
        """Full variable assignment induced by a forward trace (z one-hot)."""
        vals = np.zeros(self.num_vars())
        current = np.asarray(x_input, dtype=float)
        vals[:self.net.input_dim] = current
        for li, layer in enumerate(self.net.layers):
            pre = layer.weights @ current + layer.bias
            out = np.empty(layer.out_dim)
            for j in range(layer.out_dim):
                if (li, j) in self.neurons:
                    nf = self.neurons[(li, j)]
                    f = nf.neuron.activation
                    t = float(np.clip(pre[j], f.lo, f.hi))
                    piece = f.piece_index(t)
                    out[j] = f.piece_value(piece, t)
                    vals[nf.z_vars[piece]] = 1.0
                    vals[nf.y_var] = out[j]
                else:
                    out[j] = pre[j]
                    vals[self.y_vars[li][j]] = out[j]
            current = out
        return vals

    # -- independent pattern route (used by the exhaustive oracle) ------------

    def pattern_prefilter(self) -> list[list[int]]:
        """Per neuron, the pieces whose slab meets the reachable interval."""
        out = []
        for nf in self.activated_neurons():
            lo, hi = self.bounds.interval(nf.layer, nf.index)
            f = nf.neuron.activation
            keep = [i for i in range(f.num_pieces)
                    if f.breakpoints[i] <= hi + 1e-9 and f.breakpoints[i + 1] >= lo - 1e-9]
            out.append(keep or list(range(f.num_pieces)))
        return out

    def pattern_lp(self, pattern) -> LinearProgram:
        """One closure branch: every activated neuron pinned to one piece.

        Built from the network data directly (affine rows, slab pins, graph
        equalities) so the exhaustive oracle does not reuse the Big-M or
        Cayley rows it is meant to check.
        """
        neurons = self.activated_neurons()
        if len(pattern) != len(neurons):
            raise InputError("pattern length must match the activated neuron count")
        n = self.num_vars()
        lp = LinearProgram("max", self.objective.copy(),
                           lower=np.array(self.lower), upper=np.array(self.upper))
        for li, layer in enumerate(self.net.layers):
            for j in range(layer.out_dim):
                if (li, j) in self.neurons:
                    continue
                row = np.zeros(n)
                for p, v in enumerate(self.layer_inputs[li]):
                    row[v] = layer.weights[j, p]
                row[self.y_vars[li][j]] -= 1.0
                lp.add_row(row, EQUAL, -float(layer.bias[j]))
        for nf, piece in zip(neurons, pattern):
            f = nf.neuron.activation
            w = nf.neuron.weight
            b = nf.neuron.bias
            pre = np.zeros(n)
            for p, v in enumerate(nf.x_vars):
                pre[v] = w[p]
            lp.add_row(pre, GREATER, float(f.breakpoints[piece]) - b)
            lp.add_row(pre, LESS, float(f.breakpoints[piece + 1]) - b)
            graph = -float(f.slopes[piece]) * pre
            graph[nf.y_var] += 1.0
            lp.add_row(graph, EQUAL,
                       float(f.slopes[piece]) * b + float(f.intercepts[piece]))
            for i, z in enumerate(nf.z_vars):
                row = np.zeros(n)
                row[z] = 1.0
                lp.add_row(row, EQUAL, 1.0 if i == piece else 0.0)
        return lp


def build_query_model(query: VerificationQuery, mode: str,
                      bounds: PreActBounds | None = None) -> QueryModel:
    return QueryModel(query, mode, bounds)


def build_query_lp(query: VerificationQuery, mode: str,
                   bounds: PreActBounds | None = None) -> LinearProgram:
    """Continuous relaxation of the verification model (z relaxed to [0, 1])."""
    return build_query_model(query, mode, bounds).to_lp()
