"""Domain types: auction log records, the advertiser hierarchy and replay aggregates.

Money fields are decimal amounts with at most four fraction digits. They are
parsed through :class:`decimal.Decimal` and held as the nearest float, so a
log written to JSON Lines and read back is bit-identical to the original.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from functools import cached_property
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyLog, InvalidRecord, UnknownAd

MONEY_DIGITS = 4
MINOR_UNIT = 10.0 ** -MONEY_DIGITS
DEFAULT_RESERVE = 0.01
_QUANTUM = Decimal(1).scaleb(-MONEY_DIGITS)


def quantize_money(value) -> float:
    """Round a money amount to the nearest minor unit (half-even)."""
    return float(Decimal(str(value)).quantize(_QUANTUM, rounding=ROUND_HALF_EVEN))


def format_money(value: float) -> str:
    text = str(Decimal(value).quantize(_QUANTUM, rounding=ROUND_HALF_EVEN))
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    return "0" if text in ("-0", "") else text


def parse_money(text) -> float:
    d = Decimal(str(text))
    if d.as_tuple().exponent < -MONEY_DIGITS and d != d.quantize(_QUANTUM):
        raise InvalidRecord(f"money {text!r} has more than {MONEY_DIGITS} fraction digits")
    return float(d)


@dataclass(frozen=True, slots=True)
class AuctionCandidate:
    ad_id: str
    keyword_bid: float
    ctr: float
    cvr: float
    item_price: float

    def __post_init__(self):
        if not 0.0 <= self.ctr <= 1.0:
            raise InvalidRecord(f"{self.ad_id}: ctr {self.ctr} outside [0, 1]")
        if not 0.0 <= self.cvr <= 1.0:
            raise InvalidRecord(f"{self.ad_id}: cvr {self.cvr} outside [0, 1]")
        if not self.item_price > 0.0:
            raise InvalidRecord(f"{self.ad_id}: item_price must be positive")
        if not self.keyword_bid >= 0.0:
            raise InvalidRecord(f"{self.ad_id}: keyword_bid must be non-negative")

    @property
    def expected_gmv(self) -> float:
        return self.ctr * self.cvr * self.item_price


@dataclass(frozen=True, slots=True)
class AuctionRecord:
    auction_id: str
    day: int
    slots: int
    candidates: tuple[AuctionCandidate, ...]
    reserve_price: float = DEFAULT_RESERVE

    def __post_init__(self):
        if not isinstance(self.candidates, tuple):
            object.__setattr__(self, "candidates", tuple(self.candidates))
        if self.slots < 1:
            raise InvalidRecord(f"auction {self.auction_id}: slots must be >= 1")
        if not self.reserve_price >= 0.0:
            raise InvalidRecord(f"auction {self.auction_id}: reserve_price must be >= 0")
        if not self.candidates:
            raise InvalidRecord(f"auction {self.auction_id}: no candidates")
        ids = [c.ad_id for c in self.candidates]
        if len(set(ids)) != len(ids):
            raise InvalidRecord(f"auction {self.auction_id}: duplicate ad_id")

    def to_json(self) -> dict:
        return {
            "auction_id": self.auction_id,
            "day": self.day,
            "slots": self.slots,
            "reserve_price": format_money(self.reserve_price),
            "candidates": [
                {
                    "ad_id": c.ad_id,
                    "keyword_bid": format_money(c.keyword_bid),
                    "ctr": c.ctr,
                    "cvr": c.cvr,
                    "item_price": format_money(c.item_price),
                }
                for c in self.candidates
            ],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "AuctionRecord":
        try:
            cands = tuple(
                AuctionCandidate(
                    ad_id=str(c["ad_id"]),
                    keyword_bid=parse_money(c["keyword_bid"]),
                    ctr=float(c["ctr"]),
                    cvr=float(c["cvr"]),
                    item_price=parse_money(c["item_price"]),
                )
                for c in obj["candidates"]
            )
            return cls(
                auction_id=str(obj["auction_id"]),
                day=int(obj["day"]),
                slots=int(obj["slots"]),
                reserve_price=parse_money(obj.get("reserve_price", DEFAULT_RESERVE)),
                candidates=cands,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidRecord(f"malformed record: {exc}") from exc


@dataclass(frozen=True)
class LogColumns:
    """Flat numpy view of a log: one row per (auction, candidate)."""

    ad_ids: tuple[str, ...]
    offsets: np.ndarray
    day: np.ndarray
    slots: np.ndarray
    reserve: np.ndarray
    row_auction: np.ndarray
    row_ad: np.ndarray
    bid: np.ndarray
    ctr: np.ndarray
    cvr: np.ndarray
    price: np.ndarray

    @cached_property
    def code_of(self) -> dict[str, int]:
        return {a: i for i, a in enumerate(self.ad_ids)}

    @cached_property
    def _rows_by_ad(self) -> list[np.ndarray]:
        order = np.argsort(self.row_ad, kind="stable")
        bounds = np.searchsorted(self.row_ad[order], np.arange(len(self.ad_ids) + 1))
        return [order[bounds[i]:bounds[i + 1]] for i in range(len(self.ad_ids))]

    def rows_of(self, code: int) -> np.ndarray:
        """Row indices of one AD, in auction order."""
        return self._rows_by_ad[code]


@dataclass(frozen=True, eq=False)
class AuctionLog:
    records: tuple[AuctionRecord, ...]
    ad_index: Mapping[str, tuple[int, ...]]
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.records)

    def positions(self, ad_id: str) -> tuple[int, ...]:
        try:
            return self.ad_index[ad_id]
        except KeyError:
            raise UnknownAd(ad_id) from None

    @property
    def ad_ids(self) -> tuple[str, ...]:
        return self.columns.ad_ids

    @cached_property
    def days(self) -> tuple[int, ...]:
        return tuple(sorted({r.day for r in self.records}))

    def resolve_days(self, days: Iterable[int] | None) -> tuple[int, ...]:
        """Sorted day set; ``None`` selects every day present in the log."""
        if days is None:
            return self.days
        return tuple(sorted(set(int(d) for d in days)))

    @cached_property
    def columns(self) -> LogColumns:
        recs = self.records
        ad_ids = tuple(sorted(self.ad_index))
        code_of = {a: i for i, a in enumerate(ad_ids)}
        sizes = np.fromiter((len(r.candidates) for r in recs), dtype=np.int64, count=len(recs))
        offsets = np.zeros(len(recs) + 1, dtype=np.int64)
        np.cumsum(sizes, out=offsets[1:])
        cands = [c for r in recs for c in r.candidates]
        n = len(cands)
        return LogColumns(
            ad_ids=ad_ids,
            offsets=offsets,
            day=np.fromiter((r.day for r in recs), dtype=np.int64, count=len(recs)),
            slots=np.fromiter((r.slots for r in recs), dtype=np.int64, count=len(recs)),
            reserve=np.fromiter((r.reserve_price for r in recs), dtype=np.float64, count=len(recs)),
            row_auction=np.repeat(np.arange(len(recs), dtype=np.int64), sizes),
            row_ad=np.fromiter((code_of[c.ad_id] for c in cands), dtype=np.int64, count=n),
            bid=np.fromiter((c.keyword_bid for c in cands), dtype=np.float64, count=n),
            ctr=np.fromiter((c.ctr for c in cands), dtype=np.float64, count=n),
            cvr=np.fromiter((c.cvr for c in cands), dtype=np.float64, count=n),
            price=np.fromiter((c.item_price for c in cands), dtype=np.float64, count=n),
        )


def build_ad_index(records: Sequence[AuctionRecord]) -> AuctionLog:
    """Wrap records in an :class:`AuctionLog` with its inverted AD index."""
    records = tuple(records)
    if not records:
        raise EmptyLog("cannot build an index over zero records")
    index: dict[str, list[int]] = {}
    for pos, rec in enumerate(records):
        for cand in rec.candidates:
            index.setdefault(cand.ad_id, []).append(pos)
    frozen = {ad: tuple(p) for ad, p in index.items()}
    return AuctionLog(records=records, ad_index=MappingProxyType(frozen))


def read_log(path) -> AuctionLog:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InvalidRecord(f"{path}:{lineno}: {exc}") from exc
            records.append(AuctionRecord.from_json(obj))
    return build_ad_index(records)


def dump_log_lines(log: AuctionLog) -> Iterable[str]:
    for rec in log.records:
        yield json.dumps(rec.to_json(), separators=(",", ":")) + "\n"


@dataclass(frozen=True)
class Campaign:
    campaign_id: str
    ad_ids: tuple[str, ...]
    bid_lower: tuple[float, ...]
    bid_upper: tuple[float, ...]

    def __post_init__(self):
        for name in ("ad_ids", "bid_lower", "bid_upper"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if len(set(self.ad_ids)) != len(self.ad_ids):
            raise InvalidRecord(f"campaign {self.campaign_id}: duplicate ad_id")
        if not len(self.ad_ids) == len(self.bid_lower) == len(self.bid_upper):
            raise InvalidRecord(f"campaign {self.campaign_id}: bound vectors must match ad_ids")
        for a, lo, hi in zip(self.ad_ids, self.bid_lower, self.bid_upper):
            if not 0.0 <= lo <= hi:
                raise InvalidRecord(f"campaign {self.campaign_id}: need 0 <= l <= u for {a}")

    def to_json(self) -> dict:
        return {
            "campaign_id": self.campaign_id,
            "ad_ids": list(self.ad_ids),
            "bid_lower": [format_money(x) for x in self.bid_lower],
            "bid_upper": [format_money(x) for x in self.bid_upper],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "Campaign":
        return cls(
            campaign_id=str(obj["campaign_id"]),
            ad_ids=tuple(str(a) for a in obj["ad_ids"]),
            bid_lower=tuple(parse_money(x) for x in obj["bid_lower"]),
            bid_upper=tuple(parse_money(x) for x in obj["bid_upper"]),
        )


@dataclass(frozen=True)
class ReplaySummary:
    """Expected outcome of an AD over a day (or the average of several days).

    ``conversions`` is the expected number of conversions, sum of ctr*cvr
    over won slots; CVR reporting needs it.
    """

    cost: float = 0.0
    gmv: float = 0.0
    impressions: float = 0.0
    clicks: float = 0.0
    conversions: float = 0.0

    def __post_init__(self):
        for name in ("cost", "gmv", "impressions", "clicks", "conversions"):
            v = getattr(self, name)
            if not (v >= 0.0 and math.isfinite(v)):
                raise ValueError(f"ReplaySummary.{name} must be finite and >= 0, got {v}")
        if self.impressions == 0 and self.gmv != 0:
            raise ValueError("gmv must be 0 when impressions is 0")

    def __add__(self, other: "ReplaySummary") -> "ReplaySummary":
        return ReplaySummary(
            self.cost + other.cost,
            self.gmv + other.gmv,
            self.impressions + other.impressions,
            self.clicks + other.clicks,
            self.conversions + other.conversions,
        )

    @classmethod
    def total(cls, parts: Iterable["ReplaySummary"]) -> "ReplaySummary":
        parts = list(parts)
        return cls(
            math.fsum(p.cost for p in parts),
            math.fsum(p.gmv for p in parts),
            math.fsum(p.impressions for p in parts),
            math.fsum(p.clicks for p in parts),
            math.fsum(p.conversions for p in parts),
        )
