"""Offline comparisons of CIA bidding against keyword bidding on a replayable log.

Three levels are covered: single ADs matched on cost, campaigns optimised for
GMV or for an even impression split, and platform-wide adoption sweeps where
every adopter's bids change at once.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DegenerateAd, InfeasibleWindow
from .inference import ALPHA_SEARCH, compute_profile, mean_keyword_bid
from .model import MINOR_UNIT, AuctionLog, Campaign, ReplaySummary, quantize_money
from .optimizers import (
    AllocationResult,
    CampaignProblem,
    Demand,
    build_grid,
    normalized_std,
    optimize_gmv,
    optimize_style,
)
from .replay import BidPolicy, CiaBid, KeywordBid, cost_tolerance, evaluate, invert_cost, replay_all

SHIFT_FIELDS = ("cost_pct", "gmv_pct", "roi_pct", "cvr_pct", "ppc_pct")


def _ratio(num: float, den: float) -> float | None:
    return num / den if den > 0 else None


def _pct(test: float | None, base: float | None) -> float | None:
    if test is None or base is None or base == 0:
        return None
    return 100.0 * (test - base) / base


def roi(s: ReplaySummary) -> float | None:
    return _ratio(s.gmv, s.cost)


def cvr(s: ReplaySummary) -> float | None:
    return _ratio(s.conversions, s.clicks)


def ppc(s: ReplaySummary) -> float | None:
    return _ratio(s.cost, s.clicks)


@dataclass(frozen=True)
class MetricShift:
    """Relative shifts in percent; ``None`` where the baseline cannot anchor a ratio."""

    cost_pct: float | None
    gmv_pct: float | None
    roi_pct: float | None
    cvr_pct: float | None
    ppc_pct: float | None

    @classmethod
    def between(cls, base: ReplaySummary, test: ReplaySummary) -> "MetricShift":
        return cls(
            cost_pct=_pct(test.cost, base.cost),
            gmv_pct=_pct(test.gmv, base.gmv),
            roi_pct=_pct(roi(test), roi(base)),
            cvr_pct=_pct(cvr(test), cvr(base)),
            ppc_pct=_pct(ppc(test), ppc(base)),
        )

    def as_dict(self) -> dict:
        return {f: getattr(self, f) for f in SHIFT_FIELDS}


def fmt(x: float | None) -> str:
    """CSV cell for an optional number; absent values stay empty."""
    return "" if x is None else repr(float(x))


def _map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# AD level


@dataclass(frozen=True)
class AdComparison:
    ad_id: str
    take_rate: float
    alpha: float
    clamped: bool
    baseline: ReplaySummary
    cia: ReplaySummary

    @property
    def shift(self) -> MetricShift:
        return MetricShift.between(self.baseline, self.cia)


@dataclass(frozen=True)
class AdLevelReport:
    beta: float
    epsilon: float
    days: tuple[int, ...]
    rows: tuple[AdComparison, ...]
    skipped: tuple[tuple[str, str], ...] = ()

    @property
    def baseline_total(self) -> ReplaySummary:
        return ReplaySummary.total(r.baseline for r in self.rows)

    @property
    def cia_total(self) -> ReplaySummary:
        return ReplaySummary.total(r.cia for r in self.rows)

    @property
    def overall(self) -> MetricShift:
        return MetricShift.between(self.baseline_total, self.cia_total)

    @property
    def cost_matched(self) -> bool:
        """Overall CIA cost within the (beta +- epsilon) band around the baseline."""
        base = self.baseline_total.cost
        lo, hi = (self.beta - self.epsilon) * base, (self.beta + self.epsilon) * base
        return lo - MINOR_UNIT <= self.cia_total.cost <= hi + MINOR_UNIT

    def calibration(self) -> dict[str, tuple[float, float]]:
        """ad_id -> (alpha, tk) for every compared AD."""
        return {r.ad_id: (r.alpha, r.take_rate) for r in self.rows}

    CSV_HEADER = ("ad_id", "tk", "alpha", "clamped", "base_cost", "base_gmv", "cia_cost", "cia_gmv") + SHIFT_FIELDS

    def csv_rows(self) -> list[tuple]:
        out = []
        for r in self.rows:
            out.append((r.ad_id, fmt(r.take_rate), fmt(r.alpha), str(r.clamped).lower(),
                        fmt(r.baseline.cost), fmt(r.baseline.gmv), fmt(r.cia.cost), fmt(r.cia.gmv),
                        *(fmt(v) for v in r.shift.as_dict().values())))
        b, c = self.baseline_total, self.cia_total
        out.append(("overall", "", "", "", fmt(b.cost), fmt(b.gmv), fmt(c.cost), fmt(c.gmv),
                    *(fmt(v) for v in self.overall.as_dict().values())))
        return out

    def to_json(self) -> dict:
        return {
            "beta": self.beta,
            "epsilon": self.epsilon,
            "days": list(self.days),
            "overall": self.overall.as_dict(),
            "cost_matched": self.cost_matched,
            "compared": len(self.rows),
            "skipped": [{"ad_id": a, "reason": why} for a, why in self.skipped],
        }


def compare_ad(log: AuctionLog, ad_id: str, beta: float = 1.0, days=None) -> AdComparison:
    """CIA at the alpha whose cost matches ``beta`` times the keyword-bid cost."""
    profile = compute_profile(log, ad_id, days)
    base = evaluate(log, ad_id, BidPolicy(), days)
    inv = invert_cost(log, ad_id, profile.take_rate, beta * base.cost, ALPHA_SEARCH, days)
    cia = evaluate(log, ad_id, BidPolicy.cia(ad_id, inv.alpha, profile.take_rate), days)
    return AdComparison(ad_id, profile.take_rate, inv.alpha, inv.clamped, base, cia)


def run_ad_level(
    log: AuctionLog,
    ad_ids: Iterable[str] | None = None,
    beta: float = 1.0,
    epsilon: float = 0.1,
    days=None,
    *,
    threads: int = 1,
) -> AdLevelReport:
    if not 0.0 < beta <= 1.0 or not 0.0 <= epsilon < beta:
        raise ConfigError("need 0 < beta <= 1 and 0 <= epsilon < beta", module="experiments")
    day_set = log.resolve_days(days)
    ads = list(log.ad_ids if ad_ids is None else ad_ids)

    def one(ad):
        try:
            return compare_ad(log, ad, beta, day_set)
        except DegenerateAd as exc:
            return (ad, exc.reason)

    results = _map(one, ads, threads)
    rows = tuple(r for r in results if isinstance(r, AdComparison))
    skipped = tuple(r for r in results if isinstance(r, tuple))
    return AdLevelReport(beta, epsilon, day_set, rows, skipped)


# ---------------------------------------------------------------------------
# campaign level


def make_campaigns(
    log: AuctionLog,
    count: int,
    size: int = 5,
    seed: int = 0,
    bid_range: tuple[float, float] = (0.5, 2.0),
    days=None,
) -> list[Campaign]:
    """Disjoint random campaigns; each AD's bounds are factors of its mean logged bid."""
    ads = [a for a in log.ad_ids]
    if count * size > len(ads):
        raise ConfigError(f"{count} campaigns of {size} need {count * size} ADs, log has {len(ads)}",
                          module="experiments")
    lo_f, hi_f = bid_range
    if not 0.0 < lo_f <= hi_f:
        raise ConfigError("bid_range factors must satisfy 0 < low <= high", module="experiments")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ads))
    out = []
    for c in range(count):
        members = sorted(ads[i] for i in order[c * size:(c + 1) * size])
        means = [mean_keyword_bid(log, a, days) for a in members]
        out.append(
            Campaign(
                campaign_id=f"c{c:03d}",
                ad_ids=tuple(members),
                bid_lower=tuple(max(quantize_money(lo_f * m), MINOR_UNIT) for m in means),
                bid_upper=tuple(max(quantize_money(hi_f * m), MINOR_UNIT) for m in means),
            )
        )
    return out


def _match_total_cost(cost_of: Callable[[float], float], target: float,
                      bounds: tuple[float, float], first: float | None = None) -> tuple[float, float]:
    """Geometric bisection on a scalar knob so that a non-decreasing cost hits ``target``."""
    tol = cost_tolerance(target)
    if first is not None:
        c = cost_of(first)
        if abs(c - target) <= tol:
            return first, c
    lo, hi = bounds
    c_lo, c_hi = cost_of(lo), cost_of(hi)
    if target <= c_lo:
        return lo, c_lo
    if target >= c_hi:
        return hi, c_hi
    for _ in range(64):
        mid = math.sqrt(lo * hi)
        if not lo < mid < hi:
            break
        c = cost_of(mid)
        if abs(c - target) <= tol:
            return mid, c
        if c < target:
            lo, c_lo = mid, c
        else:
            hi, c_hi = mid, c
    return (lo, c_lo) if target - c_lo <= c_hi - target else (hi, c_hi)


@dataclass(frozen=True)
class CampaignReport:
    campaign_id: str
    demand: Demand
    result: AllocationResult | None
    baseline_knob: float
    baseline: tuple[ReplaySummary, ...]
    error: str | None = None

    @property
    def cia(self) -> tuple[ReplaySummary, ...]:
        return () if self.result is None else self.result.per_ad

    @property
    def feasible(self) -> bool:
        return self.result is not None and self.result.feasible

    @property
    def shift(self) -> MetricShift | None:
        if self.result is None:
            return None
        return MetricShift.between(ReplaySummary.total(self.baseline), ReplaySummary.total(self.cia))

    def spread(self, policy: str, metric: str) -> float | None:
        parts = self.baseline if policy == "baseline" else self.cia
        if not parts:
            return None
        return normalized_std([getattr(p, metric) for p in parts])


@dataclass(frozen=True)
class CampaignLevelReport:
    demand: Demand
    beta: float
    epsilon: float
    grid_size: int
    days: tuple[int, ...]
    campaigns: tuple[CampaignReport, ...]

    @property
    def baseline_name(self) -> str:
        return "scaled-KB" if self.demand is Demand.GMV else "equal-bid"

    def csv_header(self) -> tuple[str, ...]:
        head = ("campaign_id", "feasible", "baseline", "baseline_knob", "base_cost", "base_gmv",
                "cia_cost", "cia_gmv")
        if self.demand is Demand.GMV:
            return head + SHIFT_FIELDS
        return head + ("base_nstd_impressions", "cia_nstd_impressions", "base_nstd_cost", "cia_nstd_cost")

    def csv_rows(self) -> list[tuple]:
        out = []
        for c in self.campaigns:
            b, t = ReplaySummary.total(c.baseline), ReplaySummary.total(c.cia)
            row = (c.campaign_id, str(c.feasible).lower(), self.baseline_name, fmt(c.baseline_knob),
                   fmt(b.cost), fmt(b.gmv), fmt(t.cost), fmt(t.gmv))
            if self.demand is Demand.GMV:
                sh = c.shift
                row += tuple(fmt(None if sh is None else getattr(sh, f)) for f in SHIFT_FIELDS)
            else:
                row += (fmt(c.spread("baseline", "impressions")), fmt(c.spread("cia", "impressions")),
                        fmt(c.spread("baseline", "cost")), fmt(c.spread("cia", "cost")))
            out.append(row)
        return out

    def style_wins(self) -> tuple[int, int]:
        """(campaigns where CIA impression spread <= baseline, campaigns compared)."""
        won = total = 0
        for c in self.campaigns:
            a, b = c.spread("cia", "impressions"), c.spread("baseline", "impressions")
            if a is None or b is None:
                continue
            total += 1
            won += a <= b + 1e-12
        return won, total

    def to_json(self) -> dict:
        out = {
            "demand": self.demand.value,
            "baseline": self.baseline_name,
            "beta": self.beta,
            "epsilon": self.epsilon,
            "grid_size": self.grid_size,
            "days": list(self.days),
            "campaigns": [
                {"campaign_id": c.campaign_id, "feasible": c.feasible, "error": c.error,
                 "result": None if c.result is None else c.result.to_json()}
                for c in self.campaigns
            ],
        }
        if self.demand is Demand.STYLE:
            won, total = self.style_wins()
            out["cia_spread_not_worse"] = {"campaigns": won, "of": total}
        return out


def _baseline_scaled_kb(log, camp: Campaign, target: float, days) -> tuple[float, tuple[ReplaySummary, ...]]:
    def parts(k):
        pol = BidPolicy(KeywordBid(scale=k))
        return tuple(evaluate(log, a, pol, days) for a in camp.ad_ids)

    k, _ = _match_total_cost(lambda k: math.fsum(p.cost for p in parts(k)), target, (1e-3, 1e3), first=1.0)
    return k, parts(k)


def _baseline_equal_bid(log, camp: Campaign, target: float, days) -> tuple[float, tuple[ReplaySummary, ...]]:
    def parts(u):
        return tuple(evaluate(log, a, BidPolicy.keyword(a, uniform=u), days) for a in camp.ad_ids)

    start = float(np.mean([mean_keyword_bid(log, a, days) for a in camp.ad_ids]))
    u, _ = _match_total_cost(lambda u: math.fsum(p.cost for p in parts(u)), target,
                             (MINOR_UNIT, 1e3 * max(start, 1.0)), first=start)
    return u, parts(u)


def run_campaign(log: AuctionLog, camp: Campaign, demand: Demand, beta: float = 1.0,
                 epsilon: float = 0.2, grid_size: int = 8, days=None) -> CampaignReport:
    day_set = log.resolve_days(days)
    profiles = {a: compute_profile(log, a, day_set) for a in camp.ad_ids}
    problem = CampaignProblem(camp, profiles, beta, epsilon, grid_size, demand)
    grid = build_grid(log, problem, day_set)
    if demand is Demand.GMV:
        result = optimize_gmv(grid, beta, epsilon)
    else:
        result = optimize_style(grid, beta, epsilon)
    # the baseline spends what the CIA allocation spends (falls back to beta * Z)
    target = result.cost if result.feasible and result.cost > 0 else beta * grid.baseline_total
    match = _baseline_scaled_kb if demand is Demand.GMV else _baseline_equal_bid
    knob, base = match(log, camp, target, day_set)
    return CampaignReport(camp.campaign_id, demand, result, knob, base)


def run_campaign_level(
    log: AuctionLog,
    campaigns: Sequence[Campaign],
    demand: Demand | str,
    beta: float = 1.0,
    epsilon: float = 0.2,
    grid_size: int = 8,
    days=None,
    *,
    threads: int = 1,
) -> CampaignLevelReport:
    demand = Demand(demand)
    day_set = log.resolve_days(days)

    def one(camp):
        try:
            return run_campaign(log, camp, demand, beta, epsilon, grid_size, day_set)
        except (DegenerateAd, InfeasibleWindow) as exc:
            return CampaignReport(camp.campaign_id, demand, None, 0.0, (), f"{exc.code}: {exc}")

    reports = tuple(_map(one, list(campaigns), threads))
    return CampaignLevelReport(demand, beta, epsilon, grid_size, day_set, reports)


# ---------------------------------------------------------------------------
# platform level


@dataclass(frozen=True)
class SweepPoint:
    fraction: float
    adopters: tuple[str, ...]
    platform: MetricShift
    cia_ads: MetricShift | None
    platform_base: ReplaySummary
    platform_test: ReplaySummary


@dataclass(frozen=True)
class AdoptionSweep:
    fractions: tuple[float, ...]
    seed: int
    order: tuple[str, ...]
    points: tuple[SweepPoint, ...]
    skipped: tuple[tuple[str, str], ...] = ()
    per_ad: dict = field(default_factory=dict, repr=False)

    CSV_HEADER = ("fraction", "adopters", "scope") + SHIFT_FIELDS

    def csv_rows(self) -> list[tuple]:
        out = []
        for p in self.points:
            out.append((repr(p.fraction), str(len(p.adopters)), "all",
                        *(fmt(v) for v in p.platform.as_dict().values())))
            cia = p.cia_ads.as_dict() if p.cia_ads is not None else dict.fromkeys(SHIFT_FIELDS)
            out.append((repr(p.fraction), str(len(p.adopters)), "cia", *(fmt(v) for v in cia.values())))
        return out

    def to_json(self) -> dict:
        return {
            "fractions": list(self.fractions),
            "seed": self.seed,
            "adoption_order": list(self.order),
            "skipped": [{"ad_id": a, "reason": why} for a, why in self.skipped],
            "points": [
                {"fraction": p.fraction, "adopters": len(p.adopters),
                 "all": p.platform.as_dict(),
                 "cia": None if p.cia_ads is None else p.cia_ads.as_dict()}
                for p in self.points
            ],
        }


def adoption_policy(calibration: dict[str, tuple[float, float]], adopters: Iterable[str]) -> BidPolicy:
    return BidPolicy(KeywordBid(), {a: CiaBid(*calibration[a]) for a in adopters})


def run_platform_sweep(
    log: AuctionLog,
    fractions: Sequence[float] = (0.1, 0.3, 0.5, 1.0),
    seed: int = 0,
    days=None,
    *,
    calibration: AdLevelReport | None = None,
    order: Sequence[str] | None = None,
    threads: int = 1,
) -> AdoptionSweep:
    """Switch growing shares of ADs to CIA and replay every auction at once.

    Adopters are a prefix of one seeded permutation (or of ``order``) so the
    adopter sets are nested across fractions. Each adopter bids with the
    alpha and tk from the AD-level calibration, which holds the rest of the
    market at keyword bids.
    """
    fractions = tuple(float(f) for f in fractions)
    if any(not 0.0 <= f <= 1.0 for f in fractions) or list(fractions) != sorted(fractions):
        raise ConfigError("fractions must be ascending within [0, 1]", module="experiments")
    day_set = log.resolve_days(days)
    if calibration is None:
        calibration = run_ad_level(log, None, 1.0, 0.1, day_set, threads=threads)
    cal = calibration.calibration()
    eligible = sorted(cal)
    if order is None:
        rng = np.random.default_rng(seed)
        order = [eligible[i] for i in rng.permutation(len(eligible))]
    else:
        order = [a for a in order if a in cal]

    cols = log.columns
    all_rows = np.arange(len(cols.row_ad))
    base_out = replay_all(log, BidPolicy(), day_set)
    base_total = base_out.summary_for(log, all_rows)
    points = []
    per_ad = {}
    for f in fractions:
        m = int(f * len(order) + 0.5)
        adopters = tuple(order[:m])
        out = replay_all(log, adoption_policy(cal, adopters), day_set) if adopters else base_out
        test_total = out.summary_for(log, all_rows)
        cia_shift = None
        if adopters:
            codes = np.array([cols.code_of[a] for a in adopters])
            rows = all_rows[np.isin(cols.row_ad, codes)]
            cia_shift = MetricShift.between(base_out.summary_for(log, rows), out.summary_for(log, rows))
        per_ad[f] = {a: out.summary_for(log, cols.rows_of(cols.code_of[a])) for a in log.ad_ids}
        points.append(SweepPoint(f, adopters, MetricShift.between(base_total, test_total), cia_shift,
                                 base_total, test_total))
    return AdoptionSweep(fractions, seed, tuple(order), tuple(points), calibration.skipped, per_ad)
