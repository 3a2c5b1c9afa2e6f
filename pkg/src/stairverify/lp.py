"""Bundled dense LP solver: bounded-variable primal simplex with Bland's rule.

Instances at desk scale (hundreds of variables) do not justify sparse
machinery, so everything is dense numpy. The solver is the single numeric
authority for the toolkit: pivot tolerance 1e-9, feasibility tolerance 1e-7.

Infinite bounds use the sentinel +/-1e30 and never enter arithmetic beyond
comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ParameterError, StairVerifyError

INF = 1e30
PIVOT_TOL = 1e-9
FEAS_TOL = 1e-7

LESS, EQUAL, GREATER = "<=", "=", ">="


class InfeasibleError(StairVerifyError):
    """The constraint system admits no feasible point."""


@dataclass
class LinearProgram:
    """min/max c.x  subject to  row senses and per-variable bounds."""

    sense: str  # "max" | "min"
    objective: np.ndarray
    rows: list = field(default_factory=list)        # (coeffs, sense, rhs)
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    names: list[str] | None = None                  # optional, for LP export

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        n = self.objective.size
        if self.sense not in ("max", "min"):
            raise ParameterError("sense must be 'max' or 'min'")
        self.lower = np.full(n, -INF) if self.lower is None else np.asarray(self.lower, dtype=float)
        self.upper = np.full(n, INF) if self.upper is None else np.asarray(self.upper, dtype=float)
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ParameterError("bounds must match the objective length")

    @property
    def num_vars(self) -> int:
        return self.objective.size

    def add_row(self, coeffs, sense: str, rhs: float) -> None:
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.num_vars,):
            raise ParameterError("row length must match the variable count")
        if sense not in (LESS, EQUAL, GREATER):
            raise ParameterError(f"bad row sense {sense!r}")
        if not np.all(np.isfinite(coeffs)) or not np.isfinite(rhs):
            raise ParameterError("row coefficients must be finite")
        self.rows.append((coeffs, sense, float(rhs)))


@dataclass
class LpSolution:
    status: str                      # optimal | infeasible | unbounded
    x: np.ndarray | None = None
    objective: float | None = None
    duals: np.ndarray | None = None          # per row, user sense
    reduced_costs: np.ndarray | None = None  # per structural variable, user sense
    basis: list[int] | None = None           # column indices incl. slacks
    iterations: int = 0

    def dual_objective(self, lp: LinearProgram) -> float:
        """Bounded-variable dual value; equals the primal objective at optimality."""
        if self.status != "optimal":
            raise StairVerifyError("dual objective only defined for optimal solutions")
        b = np.array([rhs for _, _, rhs in lp.rows])
        val = float(self.duals @ b) if len(lp.rows) else 0.0
        d = self.reduced_costs
        sign = 1.0 if lp.sense == "min" else -1.0
        for j in range(lp.num_vars):
            dj = d[j] * sign  # reduced cost in min convention
            if dj > 0 and lp.lower[j] > -INF:
                val += self.reduced_costs[j] * lp.lower[j]
            elif dj < 0 and lp.upper[j] < INF:
                val += self.reduced_costs[j] * lp.upper[j]
        return val


class _Tableau:
    """Working state of one solve: columns = structurals + slacks + artificials."""

    def __init__(self, lp: LinearProgram):
        m, n = len(lp.rows), lp.num_vars
        self.m, self.n = m, n
        self.A = np.zeros((m, n + m))
        self.lower = np.concatenate([lp.lower, np.zeros(m)])
        self.upper = np.concatenate([lp.upper, np.zeros(m)])
        self.b = np.zeros(m)
        for i, (coeffs, sense, rhs) in enumerate(lp.rows):
            self.A[i, :n] = coeffs
            self.A[i, n + i] = 1.0
            self.b[i] = rhs
            if sense == LESS:
                self.lower[n + i], self.upper[n + i] = 0.0, INF
            elif sense == GREATER:
                self.lower[n + i], self.upper[n + i] = -INF, 0.0
            else:
                self.lower[n + i], self.upper[n + i] = 0.0, 0.0
        self.ncols = n + m
        self.basis: list[int] = []
        self.binv: np.ndarray | None = None

    def refactor(self):
        B = self.A[:, self.basis]
        try:
            self.binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular basis") from exc


def _initial_point(tab: _Tableau) -> np.ndarray:
    x = np.zeros(tab.ncols)
    for j in range(tab.ncols):
        lo, hi = tab.lower[j], tab.upper[j]
        if lo > -INF and hi < INF:
            x[j] = lo if abs(lo) <= abs(hi) else hi
        elif lo > -INF:
            x[j] = lo
        elif hi < INF:
            x[j] = hi
        else:
            x[j] = 0.0
    return x


def _simplex_loop(tab: _Tableau, cost: np.ndarray, x: np.ndarray,
                  max_iter: int, fixed: np.ndarray) -> tuple[str, int]:
    """Bland-rule bounded-variable primal simplex on a feasible basis."""
    m = tab.m
    iters = 0
    since_refactor = 0
    basic_mask = np.zeros(tab.ncols, dtype=bool)
    basic_mask[tab.basis] = True
    while True:
        if iters >= max_iter:
            raise NumericalError("cycling guard exceeded")
        y = cost[tab.basis] @ tab.binv
        d = cost - y @ tab.A
        entering = -1
        direction = 0.0
        for j in range(tab.ncols):
            if basic_mask[j] or fixed[j]:
                continue
            if tab.upper[j] - tab.lower[j] <= PIVOT_TOL:
                continue  # pinned variable, can never move
            at_lower = tab.lower[j] > -INF and x[j] <= tab.lower[j] + FEAS_TOL
            at_upper = tab.upper[j] < INF and x[j] >= tab.upper[j] - FEAS_TOL
            if at_lower and d[j] < -PIVOT_TOL:
                entering, direction = j, 1.0
                break
            if at_upper and d[j] > PIVOT_TOL:
                entering, direction = j, -1.0
                break
            if not at_lower and not at_upper and abs(d[j]) > PIVOT_TOL:
                entering, direction = j, (1.0 if d[j] < 0 else -1.0)
                break
        if entering < 0:
            return "optimal", iters

        u = tab.binv @ tab.A[:, entering]
        if direction < 0:
            u = -u
        # max step before a basic variable or the entering bound blocks
        step = INF
        leaving = -1
        leave_to = 0.0
        for i in range(m):
            bi = tab.basis[i]
            if u[i] > PIVOT_TOL:
                lo = tab.lower[bi]
                if lo > -INF:
                    r = (x[bi] - lo) / u[i]
                    if r < step - PIVOT_TOL or (r < step + PIVOT_TOL and (leaving < 0 or bi < tab.basis[leaving])):
                        step, leaving, leave_to = r, i, lo
            elif u[i] < -PIVOT_TOL:
                hi = tab.upper[bi]
                if hi < INF:
                    r = (hi - x[bi]) / (-u[i])
                    if r < step - PIVOT_TOL or (r < step + PIVOT_TOL and (leaving < 0 or bi < tab.basis[leaving])):
                        step, leaving, leave_to = r, i, hi
        span = tab.upper[entering] - tab.lower[entering]
        flip = span if (tab.lower[entering] > -INF and tab.upper[entering] < INF) else INF
        if flip < step - PIVOT_TOL:
            # bound flip: entering crosses its box without changing the basis
            x[entering] += direction * flip
            x[tab.basis] -= flip * u
            iters += 1
            continue
        if step >= INF:
            return "unbounded", iters

        step = max(step, 0.0)
        x[entering] += direction * step
        x[tab.basis] -= step * u
        out = tab.basis[leaving]
        x[out] = leave_to
        tab.basis[leaving] = entering
        basic_mask[out] = False
        basic_mask[entering] = True
        since_refactor += 1
        if since_refactor >= 64:
            tab.refactor()
            since_refactor = 0
        else:
            # product-form update of the basis inverse
            col = tab.binv @ tab.A[:, entering]
            piv = col[leaving]
            if abs(piv) < PIVOT_TOL:
                tab.refactor()
            else:
                tab.binv[leaving, :] /= piv
                rows = [i for i in range(m) if i != leaving]
                tab.binv[rows, :] -= np.outer(col[rows], tab.binv[leaving, :])
        iters += 1


def solve(lp: LinearProgram, warm_basis: list[int] | None = None,
          max_iter: int | None = None) -> LpSolution:
    """Solve the LP; optimal solutions are vertex (basic) solutions.

    `warm_basis` restarts from a previously returned basis when its columns
    still form a nonsingular matrix; any numerical failure under a warm start
    falls back to the cold start before being reported.
    """
    try:
        return _solve_once(lp, warm_basis, max_iter)
    except NumericalError:
        if warm_basis is None:
            raise
        return _solve_once(lp, None, max_iter)


def _solve_once(lp: LinearProgram, warm_basis: list[int] | None,
                max_iter: int | None) -> LpSolution:
    tab = _Tableau(lp)
    m, n = tab.m, tab.n
    if m == 0:
        return _solve_boxonly(lp)
    if max_iter is None:
        max_iter = 2000 + 200 * (m + n)

    x = _initial_point(tab)
    tab.basis = list(range(n, n + m))
    warm_used = False
    if warm_basis is not None and len(set(warm_basis)) == m and max(warm_basis) < tab.ncols:
        try:
            tab.basis = list(warm_basis)
            tab.refactor()
            warm_used = True
        except NumericalError:
            tab.basis = list(range(n, n + m))
            tab.binv = None
    if tab.binv is None:
        tab.refactor()

    nonbasic = [j for j in range(tab.ncols) if j not in set(tab.basis)]
    x[tab.basis] = tab.binv @ (tab.b - tab.A[:, nonbasic] @ x[nonbasic])

    # Phase 1: shift infeasible basic values onto artificial columns.
    viol_lo = np.maximum(tab.lower[tab.basis] - x[tab.basis], 0.0)
    viol_hi = np.maximum(x[tab.basis] - tab.upper[tab.basis], 0.0)
    art_cols = []
    if np.any(viol_lo > FEAS_TOL) or np.any(viol_hi > FEAS_TOL):
        sign = np.where(viol_lo > 0, -1.0, 1.0)
        mag = viol_lo + viol_hi
        extra = np.zeros((m, m))
        keep = []
        for i in range(m):
            if mag[i] > FEAS_TOL:
                extra[i, i] = sign[i]
                keep.append(i)
        extra = extra[:, keep]
        tab.A = np.hstack([tab.A, extra])
        tab.lower = np.concatenate([tab.lower, np.zeros(len(keep))])
        tab.upper = np.concatenate([tab.upper, np.full(len(keep), INF)])
        x = np.concatenate([x, np.zeros(len(keep))])
        art_cols = list(range(tab.ncols, tab.ncols + len(keep)))
        tab.ncols += len(keep)
        for pos, i in enumerate(keep):
            bi = tab.basis[i]
            x[bi] = np.clip(x[bi], max(tab.lower[bi], -INF), min(tab.upper[bi], INF))
            x[art_cols[pos]] = mag[i]
            tab.basis[i] = art_cols[pos]
        tab.refactor()
        nonbasic = [j for j in range(tab.ncols) if j not in set(tab.basis)]
        x[tab.basis] = tab.binv @ (tab.b - tab.A[:, nonbasic] @ x[nonbasic])
        # with a non-identity (warm) basis, moving the clipped variables can
        # push other basic values out of bounds; the cold identity start
        # cannot, so fall back rather than start phase 1 infeasible
        still_lo = np.maximum(tab.lower[tab.basis] - x[tab.basis], 0.0)
        still_hi = np.maximum(x[tab.basis] - tab.upper[tab.basis], 0.0)
        if float(np.maximum(still_lo, still_hi).max()) > FEAS_TOL:
            if warm_used:
                raise NumericalError("warm basis leaves an infeasible phase-1 start")
            raise NumericalError("cold phase-1 start inconsistent")

        cost1 = np.zeros(tab.ncols)
        cost1[art_cols] = 1.0
        fixed = np.zeros(tab.ncols, dtype=bool)
        status, it1 = _simplex_loop(tab, cost1, x, max_iter, fixed)
        if status != "optimal" or float(cost1 @ x) > FEAS_TOL * max(1.0, np.abs(tab.b).max()):
            return LpSolution(status="infeasible", iterations=it1)
        # pin artificials at zero for phase 2
        tab.lower[art_cols] = 0.0
        tab.upper[art_cols] = 0.0
        x[art_cols] = 0.0

    cost = np.zeros(tab.ncols)
    user_cost = lp.objective if lp.sense == "min" else -lp.objective
    cost[:n] = user_cost
    fixed = np.zeros(tab.ncols, dtype=bool)
    fixed[art_cols] = True
    status, iters = _simplex_loop(tab, cost, x, max_iter, fixed)
    if status == "unbounded":
        return LpSolution(status="unbounded", iterations=iters)

    # clean recomputation of the basic values from the final basis
    tab.refactor()
    nonbasic = [j for j in range(tab.ncols) if j not in set(tab.basis)]
    x[tab.basis] = tab.binv @ (tab.b - tab.A[:, nonbasic] @ x[nonbasic])

    y = cost[tab.basis] @ tab.binv
    d = cost - y @ tab.A
    sense_sign = 1.0 if lp.sense == "min" else -1.0
    obj = float(lp.objective @ x[:n])
    return LpSolution(
        status="optimal",
        x=x[:n].copy(),
        objective=obj,
        duals=sense_sign * y,
        reduced_costs=sense_sign * d[:n],
        basis=list(tab.basis),
        iterations=iters,
    )


def _solve_boxonly(lp: LinearProgram) -> LpSolution:
    c = lp.objective if lp.sense == "max" else -lp.objective
    x = np.where(c > 0, lp.upper, np.where(c < 0, lp.lower, np.clip(0.0, lp.lower, lp.upper)))
    if np.any(np.abs(x[np.abs(c) > PIVOT_TOL]) >= INF):
        return LpSolution(status="unbounded")
    if np.any(lp.lower > lp.upper + FEAS_TOL):
        return LpSolution(status="infeasible")
    x = np.clip(x, np.maximum(lp.lower, -INF), np.minimum(lp.upper, INF))
    return LpSolution(status="optimal", x=x, objective=float(lp.objective @ x),
                      duals=np.zeros(0), reduced_costs=lp.objective.copy(), basis=[])


def solve_box_knapsack(c, w, lhs, rhs, lower, upper, sense: str = "max"):
    """Optimize c.x over {l <= x <= u, lhs <= w.x <= rhs} by greedy shifting.

    Starts from the box optimum of c.x and moves coordinates in order of
    increasing objective sacrifice per unit of w.x change until the ranged
    constraint is met; at most one coordinate ends up strictly between its
    bounds. Raises InfeasibleError when the slice misses the box entirely.
    """
    c = np.asarray(c, dtype=float)
    w = np.asarray(w, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if sense == "min":
        x, _ = solve_box_knapsack(-c, w, lhs, rhs, lower, upper, "max")
        return x, float(c @ x)
    if np.any(lower > upper + 1e-12):
        raise InfeasibleError("empty box")

    tmin = float(w @ np.where(w >= 0, lower, upper))
    tmax = float(w @ np.where(w >= 0, upper, lower))
    safety = 1e-9 * max(1.0, abs(tmin), abs(tmax))
    if rhs < tmin - safety or lhs > tmax + safety:
        raise InfeasibleError(f"slice [{lhs}, {rhs}] misses the box range [{tmin}, {tmax}]")

    x = np.where(c > 0, upper, lower).astype(float)
    t = float(w @ x)
    if t > rhs:
        target, sign = rhs, -1.0   # must decrease w.x
    elif t < lhs:
        target, sign = lhs, 1.0    # must increase w.x
    else:
        return x, float(c @ x)

    # coordinate moves that shift w.x toward the target, cheapest first
    moves = []
    for j in range(c.size):
        if w[j] == 0.0 or upper[j] <= lower[j]:
            continue
        dest = lower[j] if (w[j] > 0) == (sign < 0) else upper[j]
        shift = w[j] * (dest - x[j])
        if sign * shift > 0:
            moves.append((abs(c[j] / w[j]), j, dest, shift))
    moves.sort(key=lambda item: (item[0], item[1]))
    remaining = target - t
    for _, j, dest, shift in moves:
        if abs(remaining) <= 1e-15 * max(1.0, abs(target)):
            break
        if abs(shift) <= abs(remaining):
            x[j] = dest
            remaining -= shift
        else:
            x[j] += (remaining / w[j])
            remaining = 0.0
            break
    if abs(remaining) > safety:
        raise InfeasibleError("greedy failed to reach the slice (inconsistent bounds)")
    return x, float(c @ x)


def write_lp_text(lp: LinearProgram) -> str:
    """Render the model in the industry LP text format for external checking."""
    names = lp.names or [f"x{j}" for j in range(lp.num_vars)]

    def expr(coeffs):
        terms = []
        for j, v in enumerate(coeffs):
            if v == 0:
                continue
            op = "+" if v >= 0 else "-"
            terms.append(f"{op} {abs(v):.17g} {names[j]}")
        return " ".join(terms) if terms else "0 " + names[0]

    out = ["Maximize" if lp.sense == "max" else "Minimize",
           " obj: " + expr(lp.objective), "Subject To"]
    for i, (coeffs, sense, rhs) in enumerate(lp.rows):
        out.append(f" c{i}: {expr(coeffs)} {sense} {rhs:.17g}")
    out.append("Bounds")
    for j in range(lp.num_vars):
        lo = "-inf" if lp.lower[j] <= -INF else f"{lp.lower[j]:.17g}"
        hi = "+inf" if lp.upper[j] >= INF else f"{lp.upper[j]:.17g}"
        out.append(f" {lo} <= {names[j]} <= {hi}")
    out.append("End")
    return "\n".join(out) + "\n"
