"""Inexact (LP + cutting planes) and exact (branch-and-bound) verification.

A query is robust when every target-attack optimum stays below the threshold.
The relaxed driver solves one LP per target; in cayley mode it alternates
solving with per-neuron separation until no pooled-new cut is violated. The
exact driver runs best-first branch-and-bound on the piece indicators,
branching by bisecting the allowed index set of the least integral neuron,
with lazy hull cuts at node optima in cayley mode.
"""

from __future__ import annotations

import heapq
import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericalError, StairVerifyError
from .formulations import (BIGM, CAYLEY, QueryModel, VerificationQuery,
                           attack_objective, build_query_model)
from .lp import solve
from .separation import LOWER, UPPER, separate_pwl

MODES = ("deeppoly", "bigm-lp", "cayley-lp", "bigm-exact", "cayley-exact")


@dataclass
class VerifyConfig:
    mode: str = "cayley-lp"
    max_cut_rounds: int = 20
    cut_tol: float = 1e-6
    node_limit: int = 20000
    timeout: float = 120.0
    mip_gap: float = 1e-9
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise InputError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.cut_tol <= 0 or self.mip_gap <= 0 or self.timeout <= 0:
            raise InputError("tolerances and timeout must be positive")

    @property
    def formulation(self) -> str:
        return CAYLEY if self.mode.startswith("cayley") else BIGM

    @property
    def is_exact(self) -> bool:
        return self.mode.endswith("exact")


@dataclass
class VerifyReport:
    verdict: str                      # robust | falsified | unknown
    target_bounds: dict = field(default_factory=dict)   # target -> best upper bound
    counterexample: np.ndarray | None = None
    cuts_added: int = 0
    nodes: int = 0
    gap_percent: float = 0.0
    solve_time: float = 0.0
    separation_time: float = 0.0
    rounds: int = 0
    diagnostic: str = ""

    def as_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "target_bounds": {str(k): v for k, v in self.target_bounds.items()},
            "counterexample": None if self.counterexample is None
            else [float(v) for v in self.counterexample],
            "cuts_added": self.cuts_added,
            "nodes": self.nodes,
            "gap_percent": self.gap_percent,
            "solve_time": self.solve_time,
            "separation_time": self.separation_time,
            "rounds": self.rounds,
            "diagnostic": self.diagnostic,
        }


def _replay(network, x, label) -> bool:
    try:
        return int(np.argmax(network.forward(x))) != label
    except StairVerifyError:
        return False


def _cut_round(model: QueryModel, x: np.ndarray, tol: float) -> int:
    """Separate every activated neuron at the LP point; returns cuts added."""
    added = 0
    for nf in model.activated_neurons():
        xin, yv, zv = model.neuron_point(x, nf.key)
        xin = nf.neuron.box.clamp(xin)
        zv = np.maximum(zv, 0.0)
        total = zv.sum()
        zv = zv / total if total > 0 else np.full_like(zv, 1.0 / zv.size)
        for direction in (UPPER, LOWER):
            try:
                cut = separate_pwl(nf.neuron, xin, yv, zv, direction,
                                   tol=tol, neuron_id=nf.name)
            except StairVerifyError:
                continue
            if cut is not None and cut.violation(xin, yv, zv) > tol:
                if model.add_cut(nf, cut):
                    added += 1
    return added


def verify_relaxed(query: VerificationQuery, config: VerifyConfig) -> VerifyReport:
    """LP-relaxation verification; cayley-lp interleaves cutting-plane rounds.

    Robust iff every target bound stays at or below the threshold. A target
    LP optimum above the threshold yields a falsification only when the LP
    input replays to a label flip through the real network; otherwise the
    verdict is unknown.
    """
    if config.is_exact:
        raise InputError("verify_relaxed requires a relaxation mode")
    if config.mode == "deeppoly":
        return _verify_deeppoly(query, config)
    report = VerifyReport(verdict="robust")
    t0 = time.monotonic()
    for target in query.targets():
        model = build_query_model(query.with_target(target), config.formulation)
        value, rounds, cuts, sep_time, diag = _solve_with_cuts(model, config)
        report.rounds += rounds
        report.cuts_added += cuts
        report.separation_time += sep_time
        if value is None:
            report.verdict = "unknown"
            report.diagnostic = diag
            break
        report.target_bounds[target] = value
        if value > query.xi + 1e-9:
            report.verdict = "unknown"
            sol_x = getattr(model, "_last_x", None)
            if sol_x is not None:
                x_cand = model.input_point(sol_x)
                if _replay(query.network, x_cand, query.label):
                    report.verdict = "falsified"
                    report.counterexample = x_cand
            break
    report.solve_time = time.monotonic() - t0 - report.separation_time
    return report


def _solve_with_cuts(model: QueryModel, config: VerifyConfig):
    """Solve the relaxation; in cayley mode add violated cuts until stable.

    Returns (value, rounds, cuts_added, separation_time, diagnostic). The
    objective is non-increasing round over round since rows only accumulate.
    """
    cuts = 0
    sep_time = 0.0
    prev = np.inf
    rounds = 0
    while True:
        sol = solve(model.to_lp())
        if sol.status == "infeasible":
            return None, rounds, cuts, sep_time, "relaxation infeasible (stale bounds?)"
        if sol.status != "optimal":
            return None, rounds, cuts, sep_time, f"LP {sol.status}"
        model._last_x = sol.x
        value = sol.objective
        if value > prev + 1e-9:
            raise NumericalError("cutting loop regressed the LP objective")
        prev = value
        if model.mode != CAYLEY or rounds >= config.max_cut_rounds:
            return value, rounds, cuts, sep_time, ""
        t0 = time.monotonic()
        added = _cut_round(model, sol.x, config.cut_tol)
        sep_time += time.monotonic() - t0
        if added == 0:
            return value, rounds, cuts, sep_time, ""
        cuts += added
        rounds += 1


def _verify_deeppoly(query: VerificationQuery, config: VerifyConfig) -> VerifyReport:
    from .bounds import deeppoly_bounds, output_linear_bound

    report = VerifyReport(verdict="robust")
    t0 = time.monotonic()
    region = query.input_region()
    preact = deeppoly_bounds(query.network, region)
    for target in query.targets():
        c = attack_objective(query.network.output_dim, query.label, target)
        bound = output_linear_bound(query.network, region, c, preact)
        report.target_bounds[target] = bound
        if bound > query.xi + 1e-9:
            report.verdict = "unknown"
            break
    report.solve_time = time.monotonic() - t0
    return report


@dataclass(order=True)
class _Node:
    neg_bound: float
    serial: int
    allowed: dict = field(compare=False)
    basis: list | None = field(compare=False, default=None)


def _fractionality(zv: np.ndarray) -> float:
    return 1.0 - float(zv.max())


def verify_exact(query: VerificationQuery, config: VerifyConfig) -> VerifyReport:
    """Best-first branch-and-bound on the piece indicators of each neuron.

    Branching bisects the allowed index set of the least integral neuron and
    fixes the complementary indicators to zero. Node LPs reuse the parent
    basis; cayley-exact separates lazily at node optima. Terminates with the
    exact verdict, or unknown plus a gap at the node/time limit.
    """
    if not config.is_exact:
        raise InputError("verify_exact requires an exact mode")
    report = VerifyReport(verdict="robust")
    t_start = time.monotonic()
    deadline = t_start + config.timeout
    for target in query.targets():
        value, info = _branch_and_bound(query.with_target(target), config, deadline, report)
        report.target_bounds[target] = value
        if info == "timeout" or info == "nodes":
            report.verdict = "unknown"
            report.diagnostic = f"{info} limit reached"
            break
        if value > query.xi + 1e-9:
            x_cand = report.counterexample
            if x_cand is not None and _replay(query.network, x_cand, query.label):
                report.verdict = "falsified"
            else:
                report.verdict = "unknown"
                report.diagnostic = "optimum above threshold but replay failed"
            break
    if report.verdict != "falsified":
        report.counterexample = None
    report.solve_time = time.monotonic() - t_start - report.separation_time
    return report


def _branch_and_bound(tq: VerificationQuery, config: VerifyConfig,
                      deadline: float, report: VerifyReport):
    model = build_query_model(tq, config.formulation)
    serial = itertools.count()
    root_allowed = {nf.key: tuple(range(nf.neuron.activation.num_pieces))
                    for nf in model.activated_neurons()}
    incumbent = -np.inf
    incumbent_x = None
    best_bound = np.inf
    heap: list[_Node] = []

    def push(allowed, bound, basis):
        heapq.heappush(heap, _Node(-bound, next(serial), allowed, basis))

    push(root_allowed, np.inf, None)
    while heap:
        best_bound = -heap[0].neg_bound
        if time.monotonic() > deadline:
            report.gap_percent = max(report.gap_percent, _gap_percent(best_bound, incumbent))
            report.counterexample = incumbent_x
            return incumbent, "timeout"
        if report.nodes >= config.node_limit:
            report.gap_percent = max(report.gap_percent, _gap_percent(best_bound, incumbent))
            report.counterexample = incumbent_x
            return incumbent, "nodes"
        node = heapq.heappop(heap)
        parent_bound = -node.neg_bound
        if parent_bound <= incumbent + config.mip_gap:
            continue
        report.nodes += 1
        sol = solve(model.to_lp(fixed_z=node.allowed), warm_basis=node.basis)
        if sol.status != "optimal":
            continue
        bound = sol.objective
        if bound <= incumbent + config.mip_gap:
            continue
        if config.formulation == CAYLEY:
            t0 = time.monotonic()
            added = _cut_round(model, sol.x, config.cut_tol)
            report.separation_time += time.monotonic() - t0
            if added:
                report.cuts_added += added
                push(node.allowed, bound, sol.basis)
                continue
        frac_key, frac_score = None, 1e-6
        for nf in model.activated_neurons():
            _, _, zv = model.neuron_point(sol.x, nf.key)
            score = _fractionality(zv)
            if score > frac_score:
                frac_key, frac_score = nf.key, score
        if frac_key is None:
            if bound > incumbent:
                incumbent = bound
                incumbent_x = model.input_point(sol.x)
            continue
        allowed = [i for i in node.allowed[frac_key]]
        if len(allowed) <= 1:
            # numerically fractional but structurally fixed; accept as integral
            if bound > incumbent:
                incumbent = bound
                incumbent_x = model.input_point(sol.x)
            continue
        half = len(allowed) // 2
        for part in (allowed[:half], allowed[half:]):
            child = dict(node.allowed)
            child[frac_key] = tuple(part)
            push(child, bound, sol.basis)
    report.counterexample = incumbent_x
    report.gap_percent = 0.0
    return incumbent, "optimal"


def _gap_percent(bound: float, incumbent: float) -> float:
    if not np.isfinite(bound) or not np.isfinite(incumbent):
        return float("inf")
    return 100.0 * max(0.0, bound - incumbent) / max(1.0, abs(incumbent))


def verify(query: VerificationQuery, config: VerifyConfig) -> VerifyReport:
    return verify_exact(query, config) if config.is_exact else verify_relaxed(query, config)
