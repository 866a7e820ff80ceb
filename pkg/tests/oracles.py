"""Independent reference implementations used by the tests."""

import itertools
import math

import numpy as np


def gsp_oracle(record, bid_of):
    """Rank by pairwise comparison counts, then price each winner by hand.

    ``bid_of(candidate)`` gives the bid. Returns [(ad_id, slot, price)].
    """
    reserve = record.reserve_price
    q = [(c.ad_id, bid_of(c), c.ctr) for c in record.candidates]
    q = [(a, b, ctr, b * ctr) for a, b, ctr in q if b >= reserve and b * ctr > 0]
    rank = {}
    for a, _, _, s in q:
        rank[a] = sum(1 for a2, _, _, s2 in q if s2 > s or (s2 == s and a2 < a))
    by_rank = {r: e for e, r in zip(q, (rank[e[0]] for e in q))}
    out = []
    for r in range(min(record.slots, len(q))):
        a, b, ctr, _ = by_rank[r]
        if r + 1 in by_rank:
            price = by_rank[r + 1][3] / ctr
        else:
            price = reserve
        price = min(max(price, reserve), b)
        out.append((a, r + 1, price))
    return out


def evaluate_oracle(log, ad_id, bid_of, days=None):
    """Per-day averaged (cost, gmv, impressions, clicks) by a plain scan of every record."""
    days = sorted(set(log.days if days is None else days))
    cost = gmv = imps = clicks = 0.0
    for rec in log.records:
        if rec.day not in days:
            continue
        for a, _, price in gsp_oracle(rec, bid_of):
            if a == ad_id:
                c = next(c for c in rec.candidates if c.ad_id == a)
                cost += c.ctr * price
                gmv += c.ctr * c.cvr * c.item_price
                imps += 1
                clicks += c.ctr
    n = len(days)
    return cost / n, gmv / n, imps / n, clicks / n


def lattice_weights(cost, unit):
    return [max(math.ceil(z / unit - 1e-9), 0) for z in cost]


def knapsack_enumeration(gmv, cost, baseline, beta, eps, steps=1000):
    """Best GMV over every selection whose lattice cost falls inside the window.

    Returns (best_gmv, best_selection) or (None, None) when nothing fits.
    """
    z = math.fsum(baseline)
    lo, hi = (beta - eps) * z, (beta + eps) * z
    unit = hi / steps
    w = [lattice_weights(c, unit) for c in cost]
    best, arg = None, None
    for sel in itertools.product(*[range(len(g)) for g in gmv]):
        c = sum(w[i][j] for i, j in enumerate(sel))
        if not (lo / unit - 1e-9 <= c <= steps + 1):
            continue
        v = 0.0
        for i, j in enumerate(sel):
            v += gmv[i][j]
        if best is None or v > best:
            best, arg = v, sel
    return best, arg


def _mesh(axes):
    grids = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in grids])


def style_oracle(boxes, maps, window, coarse=24, levels=3, keep=20):
    """Dense grid over n-1 impression targets; the remaining one in closed form.

    For fixed others the objective is a convex quadratic in the free target,
    minimised at the mean of the others, so it is that mean projected onto the
    interval allowed by its box and the cost window. The free coordinate is
    the one with the widest box. ``maps`` are strictly increasing
    piecewise-linear (xs, ys) pairs. Cells around the best candidates are
    refined ``levels`` times by a factor of 10.
    """
    n = len(boxes)
    if n == 1:
        return 0.0, None
    b, B = window
    free = int(np.argmax([hi - lo for lo, hi in boxes]))
    rest = [i for i in range(n) if i != free]
    xs_f, ys_f = maps[free]
    lo_f, hi_f = boxes[free]

    def cost(i, s):
        return np.interp(s, maps[i][0], maps[i][1])

    def inv(z):
        if len(xs_f) == 1:
            return np.where(z < ys_f[0], -np.inf, np.where(z > ys_f[0], np.inf, xs_f[0]))
        return np.interp(z, ys_f, xs_f, left=-np.inf, right=np.inf)

    def solve(pts):
        c_other = sum(cost(i, pts[:, k]) for k, i in enumerate(rest))
        s_lo = np.maximum(lo_f, inv(b - c_other))
        s_hi = np.minimum(hi_f, inv(B - c_other))
        ok = s_lo <= s_hi + 1e-12
        s_lo = np.where(ok, s_lo, lo_f)
        s_hi = np.where(ok, np.maximum(s_lo, s_hi), lo_f)
        s_f = np.clip(pts.mean(axis=1), s_lo, s_hi)
        full = np.empty((len(pts), n))
        full[:, rest] = pts
        full[:, free] = s_f
        f = ((full - full.mean(axis=1, keepdims=True)) ** 2).sum(axis=1)
        return np.where(ok, f, np.inf), full

    box_r = [boxes[i] for i in rest]
    pts = _mesh([np.linspace(lo, hi, coarse + 1) for lo, hi in box_r])
    steps = np.array([(hi - lo) / coarse for lo, hi in box_r])
    f, full = solve(pts)
    k = int(np.argmin(f))
    best, best_s = float(f[k]), full[k]
    for _ in range(levels):
        order = np.argsort(f)[: 50 * keep]
        order = order[np.isfinite(f[order])]
        if len(order) == 0:
            break
        _, first = np.unique(pts[order], axis=0, return_index=True)
        centers = pts[order[np.sort(first)[:keep]]]
        offs = _mesh([np.linspace(-st, st, 21) for st in steps])
        cand = (centers[:, None, :] + offs[None, :, :]).reshape(-1, len(rest))
        lo_r = np.array([lo for lo, _ in box_r])
        hi_r = np.array([hi for _, hi in box_r])
        pts = np.clip(cand, lo_r, hi_r)
        steps = steps / 10
        f, full = solve(pts)
        k = int(np.argmin(f))
        if f[k] < best:
            best, best_s = float(f[k]), full[k]
    return best, best_s


def random_increasing_map(rng, lo, hi, knots=None):
    """Strictly increasing piecewise-linear map on [lo, hi] as (xs, ys)."""
    k = int(rng.integers(2, 6)) if knots is None else knots
    if hi <= lo:
        return np.array([lo]), np.array([rng.uniform(0.5, 3.0)])
    xs = np.sort(np.concatenate([[lo, hi], rng.uniform(lo, hi, k - 2)]))
    xs = np.unique(xs)
    ys = np.concatenate([[rng.uniform(0.1, 2.0)], rng.uniform(0.2, 3.0, len(xs) - 1)]).cumsum()
    return xs, ys
