"""GSP replay of logged auctions under modified bids.

Two execution paths exist and must agree exactly:

* :func:`replay_all` re-runs every auction of the log (vectorised over rows),
  which is what platform-level experiments need when many ADs change bids at
  once.
* :func:`evaluate` uses the AD index: for a focal AD only the auctions it
  entered are touched, and the competitors' qualified scores are pre-sorted
  once per AD so that a new focal bid costs one pass over a small matrix.

Accumulations use :func:`math.fsum`, which is exactly rounded and therefore
independent of summation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence, Union

import numpy as np

from .errors import NonMonotone, UnknownAd
from .model import MINOR_UNIT, AuctionCandidate, AuctionLog, AuctionRecord, ReplaySummary


@dataclass(frozen=True)
class KeywordBid:
    """Bid the logged keyword bid, optionally rescaled or replaced by one level."""

    scale: float = 1.0
    uniform: float | None = None

    def __post_init__(self):
        if not self.scale >= 0.0:
            raise ValueError("scale must be >= 0")
        if self.uniform is not None and not self.uniform >= 0.0:
            raise ValueError("uniform bid must be >= 0")


@dataclass(frozen=True)
class CiaBid:
    """Impression-level bid alpha * tk * cvr * item_price."""

    alpha: float
    tk: float

    def __post_init__(self):
        if not (self.alpha > 0.0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not (self.tk > 0.0 and math.isfinite(self.tk)):
            raise ValueError(f"tk must be > 0, got {self.tk}")


BidRule = Union[KeywordBid, CiaBid]


@dataclass(frozen=True)
class BidPolicy:
    default: BidRule = KeywordBid()
    overrides: Mapping[str, BidRule] = field(default_factory=dict)

    @classmethod
    def cia(cls, ad_id: str, alpha: float, tk: float) -> "BidPolicy":
        """Keyword bidding everywhere except ``ad_id``, which bids with CIA."""
        return cls(overrides={ad_id: CiaBid(alpha, tk)})

    @classmethod
    def keyword(cls, ad_id: str | None = None, *, scale: float = 1.0,
                uniform: float | None = None) -> "BidPolicy":
        rule = KeywordBid(scale=scale, uniform=uniform)
        if ad_id is None:
            return cls(default=rule)
        return cls(overrides={ad_id: rule})

    def rule_for(self, ad_id: str) -> BidRule:
        return self.overrides.get(ad_id, self.default)

    def bid(self, cand: AuctionCandidate) -> float:
        return rule_bid(self.rule_for(cand.ad_id), cand)


def rule_bid(rule: BidRule, cand: AuctionCandidate) -> float:
    if isinstance(rule, CiaBid):
        return rule.alpha * rule.tk * cand.cvr * cand.item_price
    if rule.uniform is not None:
        return rule.uniform
    return cand.keyword_bid * rule.scale


def score(candidate: AuctionCandidate, bid: float) -> float:
    """Ranking score bid * ctr."""
    return bid * candidate.ctr


class Winner(NamedTuple):
    ad_id: str
    slot: int
    click_price: float


def replay_auction(record: AuctionRecord, policy: BidPolicy) -> list[Winner]:
    """Re-rank one auction under ``policy`` and price the winners with GSP.

    Slots are numbered from 1. A candidate takes part only if its bid reaches
    the reserve and its score is positive.
    """
    reserve = record.reserve_price
    entries = []
    for cand in record.candidates:
        b = policy.bid(cand)
        r = score(cand, b)
        if b >= reserve and r > 0.0:
            entries.append((r, cand.ad_id, b, cand.ctr))
    entries.sort(key=lambda e: (-e[0], e[1]))
    winners = []
    for i, (r, ad_id, b, ctr) in enumerate(entries[: record.slots]):
        if i + 1 < len(entries):
            raw = entries[i + 1][0] / ctr
        else:
            raw = reserve
        winners.append(Winner(ad_id, i + 1, min(max(raw, reserve), b)))
    return winners


# ---------------------------------------------------------------------------
# whole-log replay


@dataclass(frozen=True)
class ReplayOutcome:
    """Per-row result of :func:`replay_all` (row order of ``log.columns``)."""

    bid: np.ndarray
    win: np.ndarray
    slot: np.ndarray
    click_price: np.ndarray
    n_days: int

    def summary_for(self, log: AuctionLog, rows: np.ndarray) -> ReplaySummary:
        cols = log.columns
        w = rows[self.win[rows]]
        return _summarize(cols.ctr[w], cols.cvr[w], cols.price[w], self.click_price[w], self.n_days)


def policy_bids(log: AuctionLog, policy: BidPolicy) -> np.ndarray:
    """Bid of every row of the log under ``policy``."""
    cols = log.columns
    n_ads = len(cols.ad_ids)
    alpha_tk = np.full(n_ads, np.nan)
    uniform = np.full(n_ads, np.nan)
    scale = np.full(n_ads, np.nan)

    def assign(codes, rule):
        if isinstance(rule, CiaBid):
            alpha_tk[codes] = rule.alpha * rule.tk
        elif rule.uniform is not None:
            uniform[codes] = rule.uniform
        else:
            scale[codes] = rule.scale

    assign(slice(None), policy.default)
    for ad_id, rule in policy.overrides.items():
        code = cols.code_of.get(ad_id)
        if code is None:
            continue
        alpha_tk[code] = np.nan
        uniform[code] = np.nan
        scale[code] = np.nan
        assign(code, rule)

    at = alpha_tk[cols.row_ad]
    un = uniform[cols.row_ad]
    sc = scale[cols.row_ad]
    bids = cols.bid * sc
    cia = ~np.isnan(at)
    bids[cia] = at[cia] * cols.cvr[cia] * cols.price[cia]
    uni = ~np.isnan(un)
    bids[uni] = un[uni]
    return bids


def replay_all(log: AuctionLog, policy: BidPolicy, days: Iterable[int] | None = None) -> ReplayOutcome:
    """Replay every auction in the selected days simultaneously under ``policy``."""
    cols = log.columns
    day_set = log.resolve_days(days)
    bids = policy_bids(log, policy)
    scores = bids * cols.ctr
    reserve = cols.reserve[cols.row_auction]
    in_days = np.isin(cols.day, day_set)[cols.row_auction]
    qual = (bids >= reserve) & (scores > 0.0) & in_days

    order = np.lexsort((cols.row_ad, -scores, ~qual, cols.row_auction))
    s_auction = cols.row_auction[order]
    s_qual = qual[order]
    rank = np.arange(len(order)) - cols.offsets[s_auction]
    s_win = s_qual & (rank < cols.slots[s_auction])

    next_qual = np.zeros(len(order), dtype=bool)
    next_qual[:-1] = s_qual[1:] & (s_auction[1:] == s_auction[:-1])
    next_score = np.zeros(len(order))
    next_score[:-1] = scores[order][1:]

    s_ctr = cols.ctr[order]
    s_reserve = reserve[order]
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.where(next_qual, next_score / s_ctr, s_reserve)
    s_price = np.minimum(np.maximum(raw, s_reserve), bids[order])

    win = np.zeros(len(order), dtype=bool)
    win[order] = s_win
    slot = np.zeros(len(order), dtype=np.int64)
    slot[order] = np.where(s_win, rank + 1, 0)
    price = np.zeros(len(order))
    price[order] = np.where(s_win, s_price, 0.0)
    return ReplayOutcome(bid=bids, win=win, slot=slot, click_price=price, n_days=len(day_set))


# ---------------------------------------------------------------------------
# indexed single-AD replay


def _fsum(a: np.ndarray) -> float:
    return math.fsum(a.tolist())


def _summarize(ctr, cvr, price, click_price, n_days) -> ReplaySummary:
    if n_days == 0 or len(ctr) == 0:
        return ReplaySummary()
    return ReplaySummary(
        cost=_fsum(ctr * click_price) / n_days,
        gmv=_fsum(ctr * cvr * price) / n_days,
        impressions=len(ctr) / n_days,
        clicks=_fsum(ctr) / n_days,
        conversions=_fsum(ctr * cvr) / n_days,
    )


@dataclass
class AdSlice:
    """One AD's auctions with the competition pre-sorted.

    ``others_score`` holds, per auction, the scores of the qualified
    competitors in rank order (score descending, ad code ascending), padded
    with ``-inf``; there is always at least one padding column.
    """

    ad_id: str
    code: int
    positions: np.ndarray
    day: np.ndarray
    slots: np.ndarray
    reserve: np.ndarray
    bid: np.ndarray
    ctr: np.ndarray
    cvr: np.ndarray
    price: np.ndarray
    others_score: np.ndarray
    others_code: np.ndarray
    n_qual: np.ndarray
    _day_masks: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.positions)

    def day_mask(self, day_set: tuple[int, ...]) -> np.ndarray | None:
        if day_set not in self._day_masks:
            mask = np.isin(self.day, day_set)
            self._day_masks[day_set] = None if mask.all() else mask
        return self._day_masks[day_set]

    def focal_bids(self, rule: BidRule) -> np.ndarray:
        if isinstance(rule, CiaBid):
            return rule.alpha * rule.tk * self.cvr * self.price
        if rule.uniform is not None:
            return np.full(len(self.bid), float(rule.uniform))
        return self.bid * rule.scale

    def outcome(self, bids: np.ndarray):
        """Win mask and click price of the focal AD for a vector of its bids."""
        r = bids * self.ctr
        qual = (bids >= self.reserve) & (r > 0.0)
        rc = r[:, None]
        above = (self.others_score > rc).sum(axis=1)
        above += ((self.others_score == rc) & (self.others_code < self.code)).sum(axis=1)
        win = qual & (above < self.slots)
        idx = np.minimum(above, self.others_score.shape[1] - 1)
        nxt = np.take_along_axis(self.others_score, idx[:, None], axis=1)[:, 0]
        has_next = above < self.n_qual
        with np.errstate(divide="ignore", invalid="ignore"):
            raw = np.where(has_next, nxt / self.ctr, self.reserve)
        price = np.minimum(np.maximum(raw, self.reserve), bids)
        return win, price

    def summarize(self, rule: BidRule, day_set: tuple[int, ...]) -> ReplaySummary:
        win, price = self.outcome(self.focal_bids(rule))
        mask = self.day_mask(day_set)
        if mask is not None:
            win = win & mask
        return _summarize(self.ctr[win], self.cvr[win], self.price[win], price[win], len(day_set))


def build_slice(log: AuctionLog, ad_id: str, env: BidPolicy | None = None) -> AdSlice:
    """Pre-sort the competition ``ad_id`` faces; competitors bid per ``env``."""
    cols = log.columns
    code = cols.code_of.get(ad_id)
    if code is None:
        raise UnknownAd(ad_id)
    rows = cols.rows_of(code)
    auctions = cols.row_auction[rows]
    start = cols.offsets[auctions]
    size = cols.offsets[auctions + 1] - start
    width = int(size.max())
    t = np.arange(width)
    idx = start[:, None] + t[None, :]
    valid = (t[None, :] < size[:, None]) & (idx != rows[:, None])
    idx = np.where(valid, idx, 0)

    if env is None or (env == BidPolicy()):
        all_bids = cols.bid
    else:
        all_bids = policy_bids(log, env)
    o_bid = all_bids[idx]
    o_ctr = cols.ctr[idx]
    o_score = o_bid * o_ctr
    reserve = cols.reserve[auctions]
    qual = valid & (o_bid >= reserve[:, None]) & (o_score > 0.0)
    o_score = np.where(qual, o_score, -np.inf)
    o_code = np.where(qual, cols.row_ad[idx], np.iinfo(np.int64).max)

    first = np.argsort(o_code, axis=1, kind="stable")
    o_score = np.take_along_axis(o_score, first, axis=1)
    o_code = np.take_along_axis(o_code, first, axis=1)
    second = np.argsort(-o_score, axis=1, kind="stable")
    o_score = np.take_along_axis(o_score, second, axis=1)
    o_code = np.take_along_axis(o_code, second, axis=1)
    pad = np.full((len(rows), 1), -np.inf)
    o_score = np.hstack([o_score, pad])
    o_code = np.hstack([o_code, np.full((len(rows), 1), np.iinfo(np.int64).max)])

    return AdSlice(
        ad_id=ad_id,
        code=code,
        positions=auctions,
        day=cols.day[auctions],
        slots=cols.slots[auctions],
        reserve=reserve,
        bid=cols.bid[rows],
        ctr=cols.ctr[rows],
        cvr=cols.cvr[rows],
        price=cols.price[rows],
        others_score=o_score,
        others_code=o_code,
        n_qual=qual.sum(axis=1),
    )


def ad_slice(log: AuctionLog, ad_id: str, policy: BidPolicy | None = None) -> AdSlice:
    """Slice for ``ad_id`` with competitors bidding per ``policy``.

    The keyword-bidding environment is cached on the log; any other
    environment is built afresh.
    """
    env = BidPolicy() if policy is None else policy
    others = {a: r for a, r in env.overrides.items() if a != ad_id}
    if env.default == KeywordBid() and not others:
        cache = log._cache.setdefault("slices", {})
        if ad_id not in cache:
            cache[ad_id] = build_slice(log, ad_id)
        return cache[ad_id]
    return build_slice(log, ad_id, BidPolicy(env.default, others))


def evaluate(
    log: AuctionLog,
    ad_id: str,
    policy: BidPolicy,
    days: Iterable[int] | None = None,
    *,
    use_index: bool = True,
) -> ReplaySummary:
    """Daily cost, GMV, impressions and clicks of ``ad_id`` under ``policy``.

    Over several days the per-day average is returned.
    """
    if ad_id not in log.ad_index:
        raise UnknownAd(ad_id)
    day_set = log.resolve_days(days)
    if not use_index:
        out = replay_all(log, policy, day_set)
        rows = log.columns.rows_of(log.columns.code_of[ad_id])
        return out.summary_for(log, rows)
    sl = ad_slice(log, ad_id, policy)
    return sl.summarize(policy.rule_for(ad_id), day_set)


# ---------------------------------------------------------------------------
# alpha curves and inversion


@dataclass(frozen=True)
class AlphaCurve:
    ad_id: str
    tk: float
    alphas: tuple[float, ...]
    summaries: tuple[ReplaySummary, ...]

    def __len__(self) -> int:
        return len(self.alphas)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.summaries])


_MONOTONE_FIELDS = ("cost", "gmv", "impressions", "clicks")


def alpha_curve(
    log: AuctionLog,
    ad_id: str,
    tk: float,
    alphas: Sequence[float],
    days: Iterable[int] | None = None,
) -> AlphaCurve:
    alphas = tuple(float(a) for a in alphas)
    if not alphas or any(a <= 0 for a in alphas):
        raise ValueError("alphas must be non-empty and positive")
    if any(b <= a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("alphas must be strictly increasing")
    if ad_id not in log.ad_index:
        raise UnknownAd(ad_id)
    sl = ad_slice(log, ad_id)
    day_set = log.resolve_days(days)
    summaries = tuple(sl.summarize(CiaBid(a, tk), day_set) for a in alphas)
    for prev, cur, a in zip(summaries, summaries[1:], alphas[1:]):
        for name in _MONOTONE_FIELDS:
            if getattr(cur, name) < getattr(prev, name):
                raise NonMonotone(f"{ad_id}: {name} decreases at alpha={a}")
    return AlphaCurve(ad_id, tk, alphas, summaries)


class Inversion(NamedTuple):
    """Result of :func:`invert_cost`.

    ``converged`` is False when the target sits inside a jump of the cost
    step function; ``bracket`` then holds the two alphas around the jump.
    """

    alpha: float
    cost: float
    clamped: bool
    iterations: int
    converged: bool = True
    bracket: tuple[float, float] | None = None


def cost_tolerance(target: float) -> float:
    return max(1e-3 * target, MINOR_UNIT)


def invert_cost(
    log: AuctionLog,
    ad_id: str,
    tk: float,
    target_cost: float,
    alpha_bounds: tuple[float, float] = (1e-3, 1e3),
    days: Iterable[int] | None = None,
    *,
    max_iter: int = 64,
) -> Inversion:
    """Find alpha whose replayed daily cost matches ``target_cost``.

    Bisection is geometric (on log alpha). Cost is a step function of alpha, so when
    no alpha lands within tolerance the closer side of the final bracket is
    returned with ``converged`` unset. Targets outside [cost(lo), cost(hi)] return that bound with
    ``clamped`` set.
    """
    if not target_cost >= 0:
        raise ValueError("target_cost must be >= 0")
    lo, hi = alpha_bounds
    if not 0 < lo <= hi:
        raise ValueError("alpha_bounds must satisfy 0 < lo <= hi")
    if ad_id not in log.ad_index:
        raise UnknownAd(ad_id)
    sl = ad_slice(log, ad_id)
    day_set = log.resolve_days(days)

    def cost(a: float) -> float:
        return sl.summarize(CiaBid(a, tk), day_set).cost

    tol = cost_tolerance(target_cost)
    c_lo = cost(lo)
    if abs(c_lo - target_cost) <= tol:
        return Inversion(lo, c_lo, False, 0)
    if target_cost < c_lo:
        return Inversion(lo, c_lo, True, 0, False)
    c_hi = cost(hi)
    if abs(c_hi - target_cost) <= tol:
        return Inversion(hi, c_hi, False, 0)
    if target_cost > c_hi:
        return Inversion(hi, c_hi, True, 0, False)

    it = 0
    while it < max_iter:
        it += 1
        mid = math.sqrt(lo * hi)
        if not lo < mid < hi:
            break
        c = cost(mid)
        if abs(c - target_cost) <= tol:
            return Inversion(mid, c, False, it)
        if c < target_cost:
            lo, c_lo = mid, c
        else:
            hi, c_hi = mid, c
    if target_cost - c_lo <= c_hi - target_cost:
        return Inversion(lo, c_lo, False, it, False, (lo, hi))
    return Inversion(hi, c_hi, False, it, False, (lo, hi))
