"""Campaign GMV maximisation as a group knapsack over discretised alpha options."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import EmptyGrid
from ..model import MINOR_UNIT
from .grid import AllocationResult, Demand, ValuationGrid

LATTICE_STEPS = 1000


@dataclass(frozen=True)
class CostLattice:
    """Integer cost lattice shared by the solver and its feasibility rule.

    Option costs are rounded up to multiples of ``unit``; a selection is
    feasible when its lattice cost lies in ``[lower, upper]`` where ``upper``
    allows one unit of overspend above the window's top edge.
    """

    unit: float
    lower: float
    upper: int

    @classmethod
    def for_window(cls, lo: float, hi: float) -> "CostLattice":
        if hi <= 0.0:
            return cls(unit=MINOR_UNIT, lower=0.0, upper=0)
        unit = hi / LATTICE_STEPS
        return cls(unit=unit, lower=lo / unit - 1e-9, upper=LATTICE_STEPS + 1)

    def weight(self, cost: np.ndarray) -> np.ndarray:
        return np.maximum(np.ceil(np.asarray(cost) / self.unit - 1e-9), 0).astype(np.int64)

    def violation(self, c: int) -> float:
        if c < self.lower:
            return self.lower - c
        if c > self.upper:
            return float(c - self.upper)
        return 0.0


def _knapsack(weights: list[np.ndarray], values: list[np.ndarray], cap: int):
    """Best value per exact lattice cost 0..cap, choosing one option per group."""
    best = np.full(cap + 1, -np.inf)
    best[0] = 0.0
    choices = []
    for w, y in zip(weights, values):
        new = np.full(cap + 1, -np.inf)
        arg = np.full(cap + 1, -1, dtype=np.int64)
        for j in range(len(w)):
            wj = int(w[j])
            if wj > cap:
                continue
            cand = np.full(cap + 1, -np.inf)
            cand[wj:] = best[: cap + 1 - wj] + y[j]
            better = cand > new
            new[better] = cand[better]
            arg[better] = j
        best = new
        choices.append(arg)
    return best, choices


def _backtrack(choices, weights, c: int) -> list[int]:
    sel = []
    for arg, w in zip(reversed(choices), reversed(weights)):
        j = int(arg[c])
        sel.append(j)
        c -= int(w[j])
    return sel[::-1]


def optimize_gmv(grid: ValuationGrid, beta: float, epsilon: float) -> AllocationResult:
    """Pick one alpha option per AD maximising total GMV inside the cost window.

    Exact over the cost lattice. When no selection is lattice-feasible the
    selection with the smallest window violation (ties: higher GMV) is
    returned with ``feasible=False``.
    """
    if len(grid) == 0:
        raise EmptyGrid("valuation grid has no ADs")
    window = grid.window(beta, epsilon)
    lat = CostLattice.for_window(*window)
    weights = [lat.weight(a.cost) for a in grid.ads]
    values = [a.gmv for a in grid.ads]

    min_total = sum(int(w.min()) for w in weights)
    if min_total > lat.upper:
        sel = [int(np.lexsort((-y, w))[0]) for w, y in zip(weights, values)]
        feasible = False
    else:
        cap = 2 * lat.upper + 1
        best, choices = _knapsack(weights, values, cap)
        cells = np.arange(cap + 1)
        reach = np.isfinite(best)
        inside = reach & (cells >= lat.lower) & (cells <= lat.upper)
        if inside.any():
            c = int(np.flatnonzero(inside)[np.argmax(best[inside])])
            feasible = True
        else:
            cand = np.flatnonzero(reach)
            viol = np.array([lat.violation(int(x)) for x in cand])
            order = np.lexsort((-best[cand], viol))
            c = int(cand[order[0]])
            feasible = False
        sel = _backtrack(choices, weights, c)

    lattice_cost = int(sum(int(w[j]) for w, j in zip(weights, sel)))
    gmv = 0.0
    for y, j in zip(values, sel):
        gmv += float(y[j])
    return AllocationResult(
        demand=Demand.GMV,
        ad_ids=tuple(a.ad_id for a in grid.ads),
        alphas=tuple(float(a.alphas[j]) for a, j in zip(grid.ads, sel)),
        selection=tuple(sel),
        per_ad=tuple(a.summary(j) for a, j in zip(grid.ads, sel)),
        feasible=feasible,
        objective_value=gmv,
        window=window,
        details={"lattice_unit": lat.unit, "lattice_cost": lattice_cost,
                 "violation": lat.violation(lattice_cost)},
    )


def window_contains(total_cost: float, window: tuple[float, float], slack: float = 0.0) -> bool:
    lo, hi = window
    return lo - slack <= total_cost <= hi + slack


def lattice_unit(window: tuple[float, float]) -> float:
    return CostLattice.for_window(*window).unit

