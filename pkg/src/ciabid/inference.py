"""From keyword-level bids to take-rates, virtual budgets and feasible alpha ranges."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping

import numpy as np

from .errors import DegenerateAd, UnknownAd
from .model import AuctionLog
from .replay import BidPolicy, ad_slice, evaluate, invert_cost

ALPHA_SEARCH = (1e-3, 1e3)


@dataclass(frozen=True)
class AlphaRange:
    lo: float
    hi: float
    clamped: bool = False
    cost_lo: float = 0.0
    cost_hi: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.lo <= self.hi:
            raise ValueError(f"alpha range must satisfy 0 < lo <= hi, got [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class AdProfile:
    ad_id: str
    expected_roi: float
    take_rate: float
    virtual_budget: float
    source_days: tuple[int, ...]
    alpha_range: AlphaRange | None = None

    def with_alpha_range(self, rng: AlphaRange) -> "AdProfile":
        return replace(self, alpha_range=rng)


def _ad_sums(log: AuctionLog, ad_id: str, days: Iterable[int] | None):
    if ad_id not in log.ad_index:
        raise UnknownAd(ad_id, module="inference")
    sl = ad_slice(log, ad_id)
    day_set = log.resolve_days(days)
    mask = sl.day_mask(day_set)
    sel = slice(None) if mask is None else mask
    return sl, sel, day_set


def compute_profile(log: AuctionLog, ad_id: str, days: Iterable[int] | None = None) -> AdProfile:
    """Accumulated ROI over every auction the AD entered, and tk = 1/R.

    The click cost is approximated by the keyword bid, so R is a lower bound
    of the realised ROI. The virtual budget is the per-day average of
    sum(ctr * keyword_bid) over the selected days.
    """
    sl, sel, day_set = _ad_sums(log, ad_id, days)
    ctr = sl.ctr[sel]
    value = math.fsum((ctr * sl.cvr[sel] * sl.price[sel]).tolist())
    spend = math.fsum((ctr * sl.bid[sel]).tolist())
    if not value > 0.0:
        raise DegenerateAd(ad_id, "expected GMV over its auctions is zero")
    if not spend > 0.0:
        raise DegenerateAd(ad_id, "sum of ctr * keyword_bid over its auctions is zero")
    roi = value / spend
    return AdProfile(
        ad_id=ad_id,
        expected_roi=roi,
        take_rate=spend / value,
        virtual_budget=spend / len(day_set),
        source_days=day_set,
    )


def propagate_tk_delta(
    log: AuctionLog,
    ad_id: str,
    days: Iterable[int] | None,
    delta_bids: Mapping[int, float],
) -> float:
    """Change of tk implied by per-auction keyword bid changes.

    ``delta_bids`` maps record positions (of auctions the AD entered) to the
    bid change in that auction; missing positions mean no change and
    positions outside the selected days are ignored.
    """
    sl, sel, _ = _ad_sums(log, ad_id, days)
    pos = sl.positions
    known = set(pos.tolist())
    bad = [p for p in delta_bids if p not in known]
    if bad:
        raise ValueError(f"ad {ad_id!r} is not in auction position(s) {sorted(bad)[:5]}")
    delta = np.array([float(delta_bids.get(p, 0.0)) for p in pos.tolist()])
    ctr = sl.ctr[sel]
    value = math.fsum((ctr * sl.cvr[sel] * sl.price[sel]).tolist())
    if not value > 0.0:
        raise DegenerateAd(ad_id, "expected GMV over its auctions is zero")
    return math.fsum((ctr * delta[sel]).tolist()) / value


def feasible_alpha_range(
    log: AuctionLog,
    ad_id: str,
    profile: AdProfile,
    l_bid: float,
    u_bid: float,
    days: Iterable[int] | None = None,
    search: tuple[float, float] = ALPHA_SEARCH,
) -> AlphaRange:
    """Alpha interval whose CIA cost spans the cost of uniform bids l..u.

    An endpoint is flagged as clamped when inversion hit the search bound,
    either because the target was out of reach or because the cost is flat
    there (e.g. the AD never wins at bid l).
    """
    if not 0.0 < l_bid <= u_bid:
        raise ValueError("need 0 < l <= u")
    z_lo = evaluate(log, ad_id, BidPolicy.keyword(ad_id, uniform=l_bid), days).cost
    z_hi = evaluate(log, ad_id, BidPolicy.keyword(ad_id, uniform=u_bid), days).cost
    tk = profile.take_rate
    inv_lo = invert_cost(log, ad_id, tk, z_lo, search, days)
    inv_hi = invert_cost(log, ad_id, tk, z_hi, search, days) if u_bid != l_bid else inv_lo
    a_lo, a_hi = sorted((inv_lo.alpha, inv_hi.alpha))
    at_bound = a_lo <= search[0] or a_hi >= search[1]
    return AlphaRange(
        lo=a_lo,
        hi=a_hi,
        clamped=inv_lo.clamped or inv_hi.clamped or at_bound,
        cost_lo=z_lo,
        cost_hi=z_hi,
    )


def mean_keyword_bid(log: AuctionLog, ad_id: str, days: Iterable[int] | None = None) -> float:
    sl, sel, _ = _ad_sums(log, ad_id, days)
    return float(np.mean(sl.bid[sel]))
