from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..errors import ConfigError, EmptyGrid
from ..inference import AdProfile, AlphaRange, compute_profile, feasible_alpha_range
from ..model import MINOR_UNIT, AuctionLog, Campaign, ReplaySummary, format_money
from ..replay import BidPolicy, alpha_curve, evaluate

DEFAULT_GRID_SIZE = 8


class Demand(str, enum.Enum):
    GMV = "gmv"
    STYLE = "style"


def check_window_params(beta: float, epsilon: float) -> None:
    if not 0.0 < beta <= 1.0:
        raise ConfigError(f"beta must lie in (0, 1], got {beta}", module="optimizers")
    if not 0.0 <= epsilon < beta:
        raise ConfigError(f"epsilon must lie in [0, beta), got {epsilon}", module="optimizers")


@dataclass(frozen=True)
class CampaignProblem:
    campaign: Campaign
    profiles: Mapping[str, AdProfile]
    beta: float = 1.0
    epsilon: float = 0.2
    grid_size: int = DEFAULT_GRID_SIZE
    demand: Demand = Demand.GMV

    def __post_init__(self):
        check_window_params(self.beta, self.epsilon)
        if self.grid_size < 1:
            raise ConfigError("grid_size must be >= 1", module="optimizers")
        missing = [a for a in self.campaign.ad_ids if a not in self.profiles]
        if missing:
            raise ConfigError(f"no profile for ad(s) {missing}", module="optimizers")


@dataclass(frozen=True)
class AdOptions:
    """Valuation points of one AD, ascending in alpha."""

    ad_id: str
    alphas: np.ndarray
    gmv: np.ndarray
    cost: np.ndarray
    impressions: np.ndarray
    baseline_cost: float
    tk: float = 1.0
    clicks: np.ndarray | None = None
    conversions: np.ndarray | None = None

    def __post_init__(self):
        for name in ("alphas", "gmv", "cost", "impressions", "clicks", "conversions"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.asarray(v, dtype=float))
        k = len(self.alphas)
        if k == 0:
            raise EmptyGrid(f"ad {self.ad_id!r} has no options")
        if not (len(self.gmv) == len(self.cost) == len(self.impressions) == k):
            raise ValueError("option arrays must have equal length")
        if np.any(np.diff(self.cost) < 0):
            raise ValueError(f"ad {self.ad_id!r}: cost must be non-decreasing in alpha")
        if min(self.gmv.min(), self.cost.min(), self.impressions.min()) < 0 or self.baseline_cost < 0:
            raise ValueError(f"ad {self.ad_id!r}: negative valuation")

    def __len__(self) -> int:
        return len(self.alphas)

    def summary(self, j: int) -> ReplaySummary:
        return ReplaySummary(
            cost=float(self.cost[j]),
            gmv=float(self.gmv[j]),
            impressions=float(self.impressions[j]),
            clicks=0.0 if self.clicks is None else float(self.clicks[j]),
            conversions=0.0 if self.conversions is None else float(self.conversions[j]),
        )


@dataclass(frozen=True, eq=False)
class ValuationGrid:
    ads: tuple[AdOptions, ...]
    days: tuple[int, ...] | None = None
    log: AuctionLog | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "ads", tuple(self.ads))

    def __len__(self) -> int:
        return len(self.ads)

    @property
    def baseline_total(self) -> float:
        return math.fsum(a.baseline_cost for a in self.ads)

    def window(self, beta: float, epsilon: float) -> tuple[float, float]:
        check_window_params(beta, epsilon)
        z = self.baseline_total
        return (beta - epsilon) * z, (beta + epsilon) * z

    @classmethod
    def from_values(cls, gmv: Sequence[Sequence[float]], cost: Sequence[Sequence[float]],
                    baseline: Sequence[float], impressions=None, alphas=None) -> "ValuationGrid":
        """Grid from plain per-AD option lists (no log attached)."""
        ads = []
        for i, (y, z, zt) in enumerate(zip(gmv, cost, baseline)):
            k = len(y)
            s = impressions[i] if impressions is not None else [float(j + 1) for j in range(k)]
            a = alphas[i] if alphas is not None else list(np.geomspace(0.5, 2.0, k)) if k > 1 else [1.0]
            ads.append(AdOptions(f"ad{i}", a, y, z, s, float(zt)))
        return cls(tuple(ads))


def alpha_points(lo: float, hi: float, k: int) -> np.ndarray:
    """k geometrically spaced alphas over [lo, hi], duplicates removed."""
    if k == 1:
        return np.array([math.sqrt(lo * hi)])
    return np.unique(np.geomspace(lo, hi, k))


def ensure_alpha_range(log: AuctionLog, profile: AdProfile, l_bid: float, u_bid: float,
                       days: Iterable[int] | None = None) -> AdProfile:
    if profile.alpha_range is not None:
        return profile
    rng = feasible_alpha_range(log, profile.ad_id, profile, max(l_bid, MINOR_UNIT),
                               max(u_bid, MINOR_UNIT), days)
    return profile.with_alpha_range(rng)


def build_grid(log: AuctionLog, problem: CampaignProblem, days: Iterable[int] | None = None) -> ValuationGrid:
    """Replay every AD of the campaign on a geometric alpha grid over its feasible range."""
    camp = problem.campaign
    if not camp.ad_ids:
        raise EmptyGrid(f"campaign {camp.campaign_id} has no ADs")
    day_set = log.resolve_days(days)
    ads = []
    for ad, l_bid, u_bid in zip(camp.ad_ids, camp.bid_lower, camp.bid_upper):
        prof = ensure_alpha_range(log, problem.profiles[ad], l_bid, u_bid, day_set)
        rng: AlphaRange = prof.alpha_range
        alphas = alpha_points(rng.lo, rng.hi, problem.grid_size)
        curve = alpha_curve(log, ad, prof.take_rate, alphas, day_set)
        baseline = evaluate(log, ad, BidPolicy(), day_set).cost
        ads.append(
            AdOptions(
                ad_id=ad,
                alphas=alphas,
                gmv=curve.column("gmv"),
                cost=curve.column("cost"),
                impressions=curve.column("impressions"),
                baseline_cost=baseline,
                tk=prof.take_rate,
                clicks=curve.column("clicks"),
                conversions=curve.column("conversions"),
            )
        )
    return ValuationGrid(tuple(ads), day_set, log)


def profiles_for(log: AuctionLog, ad_ids: Iterable[str], days: Iterable[int] | None = None) -> dict[str, AdProfile]:
    return {a: compute_profile(log, a, days) for a in ad_ids}


@dataclass(frozen=True)
class AllocationResult:
    demand: Demand
    ad_ids: tuple[str, ...]
    alphas: tuple[float, ...]
    selection: tuple[int, ...] | None
    per_ad: tuple[ReplaySummary, ...]
    feasible: bool
    objective_value: float
    window: tuple[float, float]
    details: Mapping = field(default_factory=dict)

    @property
    def cost(self) -> float:
        return math.fsum(p.cost for p in self.per_ad)

    @property
    def gmv(self) -> float:
        return math.fsum(p.gmv for p in self.per_ad)

    @property
    def impressions(self) -> float:
        return math.fsum(p.impressions for p in self.per_ad)

    def to_json(self) -> dict:
        return {
            "demand": self.demand.value,
            "feasible": self.feasible,
            "objective_value": self.objective_value,
            "window": list(self.window),
            "totals": {"cost": self.cost, "gmv": self.gmv, "impressions": self.impressions},
            "ads": [
                {
                    "ad_id": a,
                    "alpha": al,
                    "option": None if self.selection is None else self.selection[i],
                    "cost": p.cost,
                    "gmv": p.gmv,
                    "impressions": p.impressions,
                }
                for i, (a, al, p) in enumerate(zip(self.ad_ids, self.alphas, self.per_ad))
            ],
            "details": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.details.items()},
        }

    def table(self) -> str:
        lines = [f"{'ad_id':<12} {'alpha':>10} {'cost':>12} {'gmv':>12} {'impressions':>12}"]
        for a, al, p in zip(self.ad_ids, self.alphas, self.per_ad):
            lines.append(f"{a:<12} {al:>10.4f} {p.cost:>12.4f} {p.gmv:>12.4f} {p.impressions:>12.2f}")
        lines.append(
            f"{'total':<12} {'':>10} {self.cost:>12.4f} {self.gmv:>12.4f} {self.impressions:>12.2f}"
        )
        lo, hi = self.window
        lines.append(
            f"window [{format_money(lo)}, {format_money(hi)}]  feasible={self.feasible}  "
            f"objective={self.objective_value:.6g}"
        )
        return "\n".join(lines)
