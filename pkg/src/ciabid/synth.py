"""Seeded synthetic auction logs and day-over-day stationarity diagnostics."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidConfig, SingleDayLog, UnknownAd
from .model import (
    DEFAULT_RESERVE,
    AuctionCandidate,
    AuctionLog,
    AuctionRecord,
    build_ad_index,
    quantize_money,
)


@dataclass(frozen=True)
class BetaShape:
    """Per-AD Beta distribution: the AD's mean is drawn from [mean_low, mean_high]."""

    mean_low: float
    mean_high: float
    concentration: float

    def validate(self, name: str) -> None:
        if not 0.0 < self.mean_low <= self.mean_high < 1.0:
            raise InvalidConfig(name, "means must satisfy 0 < mean_low <= mean_high < 1")
        if not self.concentration > 0.0:
            raise InvalidConfig(name, "concentration must be > 0")


@dataclass(frozen=True)
class BidLevelRule:
    """How each AD's keyword bid level is set.

    ``value``: level = mean cvr * item price * u with u ~ U[low, high], i.e.
    the advertiser pays a fraction of the expected conversion value per click.
    ``uniform``: level ~ U[low, high] in money.
    """

    kind: str = "value"
    low: float = 0.2
    high: float = 0.6

    def validate(self) -> None:
        if self.kind not in ("value", "uniform"):
            raise InvalidConfig("bid_policy", f"unknown kind {self.kind!r}")
        if not 0.0 < self.low <= self.high:
            raise InvalidConfig("bid_policy", "need 0 < low <= high")


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    num_ads: int = 20
    num_days: int = 7
    auctions_per_day: int = 2000
    slots: int = 3
    ctr_shape: BetaShape = BetaShape(0.01, 0.08, 40.0)
    cvr_shape: BetaShape = BetaShape(0.01, 0.10, 6.0)
    price_range: tuple[float, float] = (5.0, 200.0)
    bid_policy: BidLevelRule = BidLevelRule()
    candidates_per_auction: tuple[int, int] = (4, 10)
    keywords_per_ad: int = 3
    popularity_sigma: float = 0.8
    reserve_price: float = DEFAULT_RESERVE

    def validate(self) -> None:
        for name in ("num_ads", "num_days", "auctions_per_day", "slots", "keywords_per_ad"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise InvalidConfig(name, "must be an integer >= 1")
        if self.auctions_per_day < self.num_ads:
            raise InvalidConfig("auctions_per_day", "must be >= num_ads so every AD appears daily")
        self.ctr_shape.validate("ctr_shape")
        self.cvr_shape.validate("cvr_shape")
        lo, hi = self.price_range
        if not 0.0 < lo <= hi:
            raise InvalidConfig("price_range", "need 0 < lower <= upper")
        self.bid_policy.validate()
        cmin, cmax = self.candidates_per_auction
        if not 1 <= cmin <= cmax:
            raise InvalidConfig("candidates_per_auction", "need 1 <= lower <= upper")
        if cmax > self.num_ads:
            raise InvalidConfig("candidates_per_auction", "upper exceeds num_ads")
        if not self.popularity_sigma >= 0.0:
            raise InvalidConfig("popularity_sigma", "must be >= 0")
        if not self.reserve_price >= 0.0:
            raise InvalidConfig("reserve_price", "must be >= 0")

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, obj: Mapping) -> "SynthConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise InvalidConfig(sorted(unknown)[0], "unknown field")
        kw = dict(obj)
        try:
            if "ctr_shape" in kw:
                kw["ctr_shape"] = BetaShape(**kw["ctr_shape"])
            if "cvr_shape" in kw:
                kw["cvr_shape"] = BetaShape(**kw["cvr_shape"])
            if "bid_policy" in kw:
                kw["bid_policy"] = BidLevelRule(**kw["bid_policy"])
            for name in ("price_range", "candidates_per_auction"):
                if name in kw:
                    kw[name] = tuple(kw[name])
        except TypeError as exc:
            raise InvalidConfig("config", str(exc)) from exc
        return cls(**kw)


def _beta(rng: np.random.Generator, mean: np.ndarray, conc: float) -> np.ndarray:
    return rng.beta(mean * conc, (1.0 - mean) * conc)


def generate(config: SynthConfig) -> AuctionLog:
    """Generate a log that is a pure function of ``config``.

    Each AD has fixed ctr/cvr Beta distributions, an item price, a keyword
    bid level and a popularity weight. Per-day draws are i.i.d., so the
    per-AD auction distribution is stationary by construction. The first
    ``num_ads`` auctions of every day each carry one AD of a fresh random
    permutation, which puts every AD on every day.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    n = config.num_ads
    width = max(4, len(str(n - 1)))
    ad_ids = [f"ad{i:0{width}d}" for i in range(n)]

    ctr_mean = rng.uniform(config.ctr_shape.mean_low, config.ctr_shape.mean_high, n)
    cvr_mean = rng.uniform(config.cvr_shape.mean_low, config.cvr_shape.mean_high, n)
    plo, phi = config.price_range
    item_price = np.array([quantize_money(p) for p in np.round(rng.uniform(plo, phi, n), 2)])
    rule = config.bid_policy
    u = rng.uniform(rule.low, rule.high, n)
    level = cvr_mean * item_price * u if rule.kind == "value" else u
    kw_noise = rng.uniform(0.8, 1.2, (n, config.keywords_per_ad))
    kw_bid = np.vectorize(quantize_money)(level[:, None] * kw_noise)
    log_pop = rng.normal(0.0, config.popularity_sigma, n)

    cmin, cmax = config.candidates_per_auction
    n_auct = config.auctions_per_day
    records: list[AuctionRecord] = []
    for day in range(config.num_days):
        sizes = rng.integers(cmin, cmax + 1, n_auct)
        keys = log_pop[None, :] + rng.gumbel(size=(n_auct, n))
        anchors = rng.permutation(n)
        keys[np.arange(n), anchors] = np.inf
        top = np.argsort(-keys, axis=1, kind="stable")[:, :cmax]
        mask = np.arange(cmax)[None, :] < sizes[:, None]
        ads = top[mask]
        ctr = _beta(rng, ctr_mean[ads], config.ctr_shape.concentration)
        cvr = _beta(rng, cvr_mean[ads], config.cvr_shape.concentration)
        kw = rng.integers(0, config.keywords_per_ad, len(ads))
        bids = kw_bid[ads, kw]

        ends = np.cumsum(sizes)
        starts = ends - sizes
        ads_l, ctr_l, cvr_l, bid_l = ads.tolist(), ctr.tolist(), cvr.tolist(), bids.tolist()
        price_l = item_price.tolist()
        for t in range(n_auct):
            cands = tuple(
                AuctionCandidate(ad_ids[ads_l[r]], bid_l[r], ctr_l[r], cvr_l[r], price_l[ads_l[r]])
                for r in range(starts[t], ends[t])
            )
            records.append(
                AuctionRecord(
                    auction_id=f"d{day}-{t:06d}",
                    day=day,
                    slots=config.slots,
                    candidates=cands,
                    reserve_price=config.reserve_price,
                )
            )
    return build_ad_index(records)


# ---------------------------------------------------------------------------
# stationarity


def cdf_gap(a: np.ndarray, b: np.ndarray) -> float:
    """Sup-norm distance between the empirical CDFs of two samples."""
    if len(a) == 0 and len(b) == 0:
        return 0.0
    if len(a) == 0 or len(b) == 0:
        return 1.0
    a = np.sort(a)
    b = np.sort(b)
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / len(a)
    fb = np.searchsorted(b, grid, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


@dataclass(frozen=True)
class AdStationarity:
    ad_id: str
    volume_mean: float
    volume_std: float
    ctr_cdf_gap: float
    cvr_cdf_gap: float


@dataclass(frozen=True)
class StationarityReport:
    days: tuple[int, ...]
    rows: tuple[AdStationarity, ...] = field(default_factory=tuple)

    CSV_HEADER = ("ad_id", "volume_mean", "volume_std", "ctr_cdf_gap", "cvr_cdf_gap")

    def csv_rows(self) -> list[tuple]:
        return [
            (r.ad_id, repr(r.volume_mean), repr(r.volume_std), repr(r.ctr_cdf_gap), repr(r.cvr_cdf_gap))
            for r in self.rows
        ]


def stationarity_report(log: AuctionLog, ad_ids: Sequence[str]) -> StationarityReport:
    """Per-AD daily volume spread and the largest consecutive-day CDF gaps."""
    days = log.days
    if len(days) < 2:
        raise SingleDayLog(f"need at least 2 days, log has {len(days)}")
    cols = log.columns
    rows = []
    for ad in ad_ids:
        code = cols.code_of.get(ad)
        if code is None:
            raise UnknownAd(ad, module="log_synth")
        r = cols.rows_of(code)
        rday = cols.day[cols.row_auction[r]]
        per_day = [r[rday == d] for d in days]
        volume = np.array([len(x) for x in per_day], dtype=float)
        ctr_gap = max(cdf_gap(cols.ctr[x], cols.ctr[y]) for x, y in zip(per_day, per_day[1:]))
        cvr_gap = max(cdf_gap(cols.cvr[x], cols.cvr[y]) for x, y in zip(per_day, per_day[1:]))
        rows.append(AdStationarity(ad, float(volume.mean()), float(volume.std()), ctr_gap, cvr_gap))
    return StationarityReport(days=days, rows=tuple(rows))
