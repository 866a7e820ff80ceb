"""Style comparison: spread impressions as evenly as possible under a shared cost window.

The decision variable is the per-AD impression target s. Each AD has a box
[s_lo, s_hi] and a monotone piecewise-linear map from impressions to cost
built from its valuation grid. The objective is the squared deviation of s
from its mean (same minimiser as the Euclidean norm).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import EmptyGrid, InfeasibleWindow
from ..model import ReplaySummary
from ..replay import BidPolicy, evaluate, invert_cost
from .grid import AllocationResult, Demand, ValuationGrid

FEAS_TOL = 1e-9


@dataclass(frozen=True)
class PiecewiseLinear:
    """Non-decreasing piecewise-linear map, constant beyond its end points."""

    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        ys = np.asarray(self.ys, dtype=float)
        if xs.ndim != 1 or xs.shape != ys.shape or len(xs) == 0:
            raise ValueError("xs and ys must be equal-length 1-d arrays")
        if np.any(np.diff(xs) < 0) or np.any(np.diff(ys) < 0):
            raise ValueError("piecewise-linear map must be non-decreasing")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @classmethod
    def identity(cls, lo: float, hi: float) -> "PiecewiseLinear":
        return cls(np.array([lo, hi]), np.array([lo, hi]))

    def __call__(self, x):
        if len(self.xs) == 1:
            return np.full_like(np.asarray(x, dtype=float), self.ys[0]) if np.ndim(x) else float(self.ys[0])
        return np.interp(x, self.xs, self.ys)


def squared_deviation(s: np.ndarray) -> float:
    s = np.asarray(s, dtype=float)
    return float(np.sum((s - s.mean()) ** 2))


def normalized_std(values) -> float | None:
    """Population std over mean; ``None`` when the mean is zero."""
    v = np.asarray(values, dtype=float)
    m = v.mean()
    if m == 0:
        return None
    return float(v.std() / m)


@dataclass(frozen=True)
class LevelSolution:
    s: np.ndarray
    level: float
    objective: float
    total_cost: float
    refined: bool


class _Inverse:
    """Impressions as a function of cost for one AD, restricted to its box."""

    def __init__(self, cmap: PiecewiseLinear, lo: float, hi: float):
        inner = cmap.xs[(cmap.xs > lo) & (cmap.xs < hi)]
        xs = np.concatenate([[lo], inner, [hi]]) if hi > lo else np.array([lo])
        zs = np.asarray(cmap(xs), dtype=float).reshape(-1)
        # keep the largest s for repeated costs so z -> s is a function
        keep = np.append(zs[1:] > zs[:-1], True)
        self.xs, self.zs = xs[keep], zs[keep]
        self.zlo, self.zhi = float(zs[0]), float(zs[-1])

    def s(self, z: float) -> float:
        if len(self.zs) == 1:
            return float(self.xs[0])
        return float(np.interp(z, self.zs, self.xs))

    def slope(self, z: float) -> float:
        if len(self.zs) == 1:
            return 0.0
        seg = int(np.clip(np.searchsorted(self.zs, z, side="right") - 1, 0, len(self.zs) - 2))
        dz = self.zs[seg + 1] - self.zs[seg]
        left = (self.xs[seg + 1] - self.xs[seg]) / dz
        if z == self.zs[seg] and seg > 0:
            prev = (self.xs[seg] - self.xs[seg - 1]) / (self.zs[seg] - self.zs[seg - 1])
            return 0.5 * (left + prev)
        return left


def _project_box_slab(v, lo, hi, b, B):
    """Euclidean projection onto {lo <= z <= hi, b <= sum(z) <= B}.

    The projection is clip(v - mu) for a scalar shift mu; sum(clip(v - mu)) is
    piecewise linear in mu with kinks at v - hi and v - lo, so mu is found
    exactly by locating the segment that crosses the target sum.
    """
    z = np.clip(v, lo, hi)
    total = z.sum()
    if b - FEAS_TOL <= total <= B + FEAS_TOL:
        return z
    target = B if total > B else b
    kinks = np.unique(np.concatenate([v - hi, v - lo]))
    sums = np.clip(v[None, :] - kinks[:, None], lo, hi).sum(axis=1)
    # sums is non-increasing along kinks; find the first kink at or below target
    j = int(np.searchsorted(-sums, -target, side="left"))
    if j == 0:
        mu = kinks[0]
    elif j >= len(kinks):
        mu = kinks[-1]
    else:
        s0, s1 = sums[j - 1], sums[j]
        mu = kinks[j] if s0 == s1 else kinks[j - 1] + (s0 - target) * (kinks[j] - kinks[j - 1]) / (s0 - s1)
    return np.clip(v - mu, lo, hi)


MAX_CELLS = 60_000


def _cells(cost_map, lo, hi):
    """Every choice of one linear segment per AD inside its box.

    Returns (p, q, a, y0) arrays of shape (cells, n): segment ends, slope and
    cost at the left end.
    """
    per_ad = []
    for cm, l, h in zip(cost_map, lo, hi):
        if h <= l:
            y = float(cm(l))
            per_ad.append((np.array([l]), np.array([l]), np.array([0.0]), np.array([y])))
            continue
        pts = np.concatenate([[l], cm.xs[(cm.xs > l) & (cm.xs < h)], [h]])
        ys = np.asarray(cm(pts), dtype=float)
        per_ad.append((pts[:-1], pts[1:], np.diff(ys) / np.diff(pts), ys[:-1]))
    idx = np.indices([len(x[0]) for x in per_ad]).reshape(len(per_ad), -1).T
    cols = [np.column_stack([x[k][idx[:, i]] for i, x in enumerate(per_ad)]) for k in range(4)]
    return tuple(cols)


def _project_hyperplane(c, p, q, a, target):
    """Row-wise projection of c*1 onto {p <= s <= q, a.s = target}.

    The solution is clip(c - mu*a) with a scalar mu per row; a.s is piecewise
    linear and non-increasing in mu, so mu is interpolated between kinks.
    """
    pos = a > 0
    safe = np.where(pos, a, 1.0)
    k1 = np.where(pos, (c[:, None] - q) / safe, np.nan)
    k2 = np.where(pos, (c[:, None] - p) / safe, np.nan)
    kinks = np.concatenate([k1, k2], axis=1)
    fill = np.nanmin(np.where(np.isnan(kinks), np.inf, kinks), axis=1)
    fill = np.where(np.isfinite(fill), fill, 0.0)
    kinks = np.sort(np.where(np.isnan(kinks), fill[:, None], kinks), axis=1)
    s_at = np.clip(c[:, None, None] - kinks[:, :, None] * a[:, None, :], p[:, None, :], q[:, None, :])
    g = (s_at * a[:, None, :]).sum(axis=2)
    j = (g > target[:, None]).sum(axis=1)
    rows = np.arange(len(c))
    jl = np.clip(j - 1, 0, kinks.shape[1] - 1)
    jr = np.clip(j, 0, kinks.shape[1] - 1)
    g0, g1 = g[rows, jl], g[rows, jr]
    m0, m1 = kinks[rows, jl], kinks[rows, jr]
    den = np.where(g0 > g1, g0 - g1, 1.0)
    mu = np.where(g0 > g1, m0 + (g0 - target) * (m1 - m0) / den, m0)
    return np.clip(c[:, None] - mu[:, None] * a, p, q)


def _solve_cells(cost_map, lo, hi, edge):
    """Global minimum over all segment cells on the hyperplane total cost == edge."""
    p, q, a, y0 = _cells(cost_map, lo, hi)
    base = (y0 - a * p).sum(axis=1)
    c_min = (y0).sum(axis=1)
    c_max = (y0 + a * (q - p)).sum(axis=1)
    tol = FEAS_TOL * max(1.0, abs(edge))
    ok = (c_min <= edge + tol) & (c_max >= edge - tol)
    if not ok.any():
        return None
    p, q, a, base = p[ok], q[ok], a[ok], base[ok]
    target = edge - base

    def F(c):
        s = _project_hyperplane(c, p, q, a, target)
        return ((s - c[:, None]) ** 2).sum(axis=1)

    # F is convex in c (partial minimum of a jointly convex problem)
    x0, x3 = p.min(axis=1), q.max(axis=1)
    gr = (math.sqrt(5) - 1) / 2
    x1, x2 = x3 - gr * (x3 - x0), x0 + gr * (x3 - x0)
    f1, f2 = F(x1), F(x2)
    for _ in range(80):
        left = f1 <= f2
        # keep [x0, x2] (new left probe) or [x1, x3] (new right probe)
        x0, x3 = np.where(left, x0, x1), np.where(left, x2, x3)
        probe = np.where(left, x3 - gr * (x3 - x0), x0 + gr * (x3 - x0))
        fp = F(probe)
        x1, x2, f1, f2 = (np.where(left, probe, x2), np.where(left, x1, probe),
                          np.where(left, fp, f2), np.where(left, f1, fp))
    c = 0.5 * (x0 + x3)
    s = _project_hyperplane(c, p, q, a, target)
    obj = ((s - s.mean(axis=1, keepdims=True)) ** 2).sum(axis=1)
    k = int(np.argmin(obj))
    return s[k], float(obj[k])


def _refine(inv: list[_Inverse], z0: np.ndarray, window, max_iter: int, min_step: float):
    lo = np.array([i.zlo for i in inv])
    hi = np.array([i.zhi for i in inv])
    b, B = window

    def s_of(z):
        return np.array([i.s(zi) for i, zi in zip(inv, z)])

    def f(z):
        return squared_deviation(s_of(z))

    def grad(z):
        s = s_of(z)
        return 2.0 * (s - s.mean()) * np.array([i.slope(zi) for i, zi in zip(inv, z)])

    z = _project_box_slab(z0, lo, hi, b, B)
    fz = f(z)
    scale = float(max(np.max(hi - lo), 1e-12))
    step = scale
    for _ in range(max_iter):
        g = grad(z)
        gn = float(np.max(np.abs(g)))
        if gn == 0.0:
            break
        trial = _project_box_slab(z - step * g / gn, lo, hi, b, B)
        ft = f(trial)
        if ft < fz - 1e-15 * (1.0 + fz):
            z, fz = trial, ft
            step = min(2.0 * step, scale)
        else:
            step *= 0.5
            if step < min_step * scale:
                break
    return z, fz


def solve_level_projection(
    boxes: Sequence[tuple[float, float]],
    cost_map: Sequence[PiecewiseLinear],
    window: tuple[float, float],
    *,
    max_iter: int = 10_000,
    min_step: float = 1e-9,
    restarts: int = 8,
    seed: int = 0,
) -> LevelSolution:
    """Minimise the spread of s over boxes subject to a total-cost window.

    First the common-level family s_i(t) = clip(t, box_i) is searched: the
    unconstrained minimiser over boxes is such a point, so if its cost lies
    in the window it is optimal. Otherwise the level point on the binding
    edge seeds projected-gradient descent in cost space (box and window are
    linear there), with step halving and a few seeded restarts.
    """
    lo = np.array([b[0] for b in boxes], dtype=float)
    hi = np.array([b[1] for b in boxes], dtype=float)
    if len(lo) == 0:
        raise EmptyGrid("no boxes")
    if np.any(hi < lo):
        raise ValueError("each box needs lo <= hi")
    b, B = window
    if b > B:
        raise ValueError("window lower edge exceeds upper edge")

    def clip(t):
        return np.clip(t, lo, hi)

    def total(s):
        return math.fsum(float(c(x)) for c, x in zip(cost_map, s))

    c_min, c_max = total(lo), total(hi)
    if c_min > B + FEAS_TOL * max(1.0, abs(B)) or c_max < b - FEAS_TOL * max(1.0, abs(b)):
        raise InfeasibleWindow(f"box costs span [{c_min}, {c_max}], window is [{b}, {B}]")

    t_lo, t_hi = float(lo.min()), float(hi.max())
    if len(lo) == 1:
        z_target = min(max(c_min, b), c_max)
        s = np.array([_Inverse(cost_map[0], lo[0], hi[0]).s(z_target)])
        return LevelSolution(s, float(s[0]), 0.0, total(s), False)

    # fixed point t = mean(clip(t)); mean(clip(t)) - t is non-increasing
    a, c = t_lo, t_hi
    for _ in range(200):
        m = 0.5 * (a + c)
        if clip(m).mean() - m > 0:
            a = m
        else:
            c = m
        if c - a <= 1e-14 * max(1.0, abs(c)):
            break
    t_star = 0.5 * (a + c)
    s_star = clip(t_star)
    cost_star = total(s_star)
    tol_b, tol_B = FEAS_TOL * max(1.0, abs(b)), FEAS_TOL * max(1.0, abs(B))
    if b - tol_b <= cost_star <= B + tol_B:
        return LevelSolution(s_star, t_star, squared_deviation(s_star), cost_star, False)

    bound = B if cost_star > B else b
    a, c = (t_lo, t_star) if cost_star > B else (t_star, t_hi)
    for _ in range(200):
        m = 0.5 * (a + c)
        if total(clip(m)) > bound:
            c = m
        else:
            a = m
        if c - a <= 1e-14 * max(1.0, abs(c)):
            break
    t_edge = a if cost_star > B else c
    s_edge = clip(t_edge)
    best_s, best_f = s_edge, squared_deviation(s_edge)

    n_cells = math.prod(1 if h <= l else 1 + int(np.sum((cm.xs > l) & (cm.xs < h)))
                        for cm, l, h in zip(cost_map, lo, hi))
    if n_cells <= MAX_CELLS:
        # an optimum lies on the binding edge; solve every segment cell exactly
        found = _solve_cells(cost_map, lo, hi, bound)
        if found is not None and found[1] < best_f:
            best_s, best_f = found
        return LevelSolution(best_s, t_edge, best_f, total(best_s), best_s is not s_edge)

    inv = [_Inverse(cm, l, h) for cm, l, h in zip(cost_map, lo, hi)]
    zlo = np.array([i.zlo for i in inv])
    zhi = np.array([i.zhi for i in inv])
    starts = [np.array([float(cm(x)) for cm, x in zip(cost_map, s_edge)]), zlo, zhi, 0.5 * (zlo + zhi)]
    rng = np.random.default_rng(seed)
    starts += [rng.uniform(zlo, zhi) for _ in range(restarts)]
    for z0 in starts:
        z, fz = _refine(inv, z0, (b, B), max_iter, min_step)
        if fz < best_f - 1e-15:
            best_s = np.array([i.s(zi) for i, zi in zip(inv, z)])
            best_f = fz
    refined = best_s is not s_edge
    return LevelSolution(best_s, t_edge, best_f, total(best_s), refined)


def _cost_map(opts) -> PiecewiseLinear:
    s, z = opts.impressions, opts.cost
    keep = np.concatenate([[True], s[1:] > s[:-1]])
    return PiecewiseLinear(s[keep], z[keep])


def optimize_style(grid: ValuationGrid, beta: float, epsilon: float) -> AllocationResult:
    """Near-uniform impressions across the campaign's ADs within the cost window.

    After solving for impression targets, each AD's target cost is mapped back
    to alpha by bisection on the replay (when the grid carries its log) or by
    log-linear interpolation of the grid otherwise.
    """
    if len(grid) == 0:
        raise EmptyGrid("valuation grid has no ADs")
    window = grid.window(beta, epsilon)
    maps = [_cost_map(a) for a in grid.ads]
    boxes = [(float(a.impressions[0]), float(a.impressions[-1])) for a in grid.ads]
    try:
        sol = solve_level_projection(boxes, maps, window)
        s, feasible = sol.s, True
    except InfeasibleWindow:
        over = math.fsum(float(m(bx[0])) for m, bx in zip(maps, boxes)) > window[1]
        s = np.array([bx[0] if over else bx[1] for bx in boxes])
        feasible = False

    alphas, per_ad = [], []
    for opts, cmap, si in zip(grid.ads, maps, s):
        z_target = float(cmap(si))
        j = int(np.clip(np.searchsorted(opts.cost, z_target, side="left"), 0, len(opts) - 1))
        if grid.log is not None:
            a_lo = float(opts.alphas[max(j - 1, 0)])
            a_hi = float(opts.alphas[j])
            inv = invert_cost(grid.log, opts.ad_id, opts.tk, z_target, (a_lo, a_hi), grid.days)
            alpha = inv.alpha
            summ = evaluate(grid.log, opts.ad_id, BidPolicy.cia(opts.ad_id, alpha, opts.tk), grid.days)
        else:
            alpha = float(np.exp(np.interp(z_target, opts.cost, np.log(opts.alphas))))
            summ = ReplaySummary(
                cost=z_target,
                gmv=float(np.interp(z_target, opts.cost, opts.gmv)),
                impressions=float(si),
                clicks=0.0,
                conversions=0.0,
            ) if si > 0 else ReplaySummary(cost=z_target)
        alphas.append(alpha)
        per_ad.append(summ)

    realized = [p.impressions for p in per_ad]
    return AllocationResult(
        demand=Demand.STYLE,
        ad_ids=tuple(a.ad_id for a in grid.ads),
        alphas=tuple(alphas),
        selection=None,
        per_ad=tuple(per_ad),
        feasible=feasible,
        objective_value=normalized_std(s) or 0.0,
        window=window,
        details={
            "target_impressions": tuple(float(x) for x in s),
            "squared_deviation": squared_deviation(s),
            "norm_deviation": math.sqrt(squared_deviation(s)),
            "realized_normalized_std": normalized_std(realized),
        },
    )
