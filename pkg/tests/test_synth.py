import dataclasses

import numpy as np
import pytest

from ciabid.errors import InvalidConfig, SingleDayLog, UnknownAd
from ciabid.model import AuctionCandidate, AuctionRecord, build_ad_index, dump_log_lines
from ciabid.synth import BetaShape, BidLevelRule, SynthConfig, cdf_gap, generate, stationarity_report


def small(**kw):
    base = dict(seed=1, num_ads=10, num_days=2, auctions_per_day=300)
    base.update(kw)
    return SynthConfig(**base)


def test_same_seed_same_bytes():
    a = "".join(dump_log_lines(generate(small())))
    b = "".join(dump_log_lines(generate(small())))
    assert a == b
    assert a != "".join(dump_log_lines(generate(small(seed=2))))


def test_every_ad_every_day():
    log = generate(small(num_ads=40, num_days=4, auctions_per_day=60, popularity_sigma=2.5))
    cols = log.columns
    for code in range(len(cols.ad_ids)):
        days = set(cols.day[cols.row_auction[cols.rows_of(code)]].tolist())
        assert days == {0, 1, 2, 3}


def test_degenerate_single_candidate():
    log = generate(small(candidates_per_auction=(1, 1), slots=1))
    assert all(len(r.candidates) == 1 and r.slots == 1 for r in log.records)


def test_shape_of_records():
    cfg = small()
    log = generate(cfg)
    assert len(log) == cfg.num_days * cfg.auctions_per_day
    sizes = {len(r.candidates) for r in log.records}
    assert min(sizes) >= cfg.candidates_per_auction[0] and max(sizes) <= cfg.candidates_per_auction[1]
    for r in log.records[:50]:
        for c in r.candidates:
            assert 0 <= c.ctr <= 1 and 0 <= c.cvr <= 1 and c.item_price > 0
            assert round(c.keyword_bid, 4) == c.keyword_bid


@pytest.mark.parametrize("change,field", [
    (dict(num_ads=0), "num_ads"),
    (dict(num_days=0), "num_days"),
    (dict(slots=0), "slots"),
    (dict(auctions_per_day=5), "auctions_per_day"),
    (dict(ctr_shape=BetaShape(0.0, 0.1, 10)), "ctr_shape"),
    (dict(cvr_shape=BetaShape(0.1, 0.2, 0)), "cvr_shape"),
    (dict(price_range=(0.0, 5.0)), "price_range"),
    (dict(candidates_per_auction=(3, 2)), "candidates_per_auction"),
    (dict(candidates_per_auction=(1, 50)), "candidates_per_auction"),
    (dict(bid_policy=BidLevelRule("weird")), "bid_policy"),
])
def test_invalid_config_names_field(change, field):
    with pytest.raises(InvalidConfig) as err:
        generate(dataclasses.replace(small(), **change))
    assert err.value.field == field


def test_config_json_roundtrip():
    cfg = small(bid_policy=BidLevelRule("uniform", 0.5, 1.5))
    assert SynthConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(InvalidConfig):
        SynthConfig.from_json({"bogus": 1})


def test_uniform_bid_levels():
    log = generate(small(bid_policy=BidLevelRule("uniform", 1.0, 1.0)))
    bids = np.array([c.keyword_bid for r in log.records for c in r.candidates])
    assert bids.min() >= 0.8 - 1e-12 and bids.max() <= 1.2 + 1e-12


def _cdf_gap_oracle(a, b):
    pts = np.union1d(a, b)
    return max(abs(np.mean(a <= x) - np.mean(b <= x)) for x in pts)


def test_cdf_gap_matches_oracle(rng):
    for _ in range(50):
        a = rng.beta(2, 5, rng.integers(1, 60)).round(2)
        b = rng.beta(2, 4, rng.integers(1, 60)).round(2)
        assert cdf_gap(a, b) == pytest.approx(_cdf_gap_oracle(a, b), abs=1e-12)
    assert cdf_gap(np.array([0.1]), np.array([0.9])) == 1.0
    assert cdf_gap(np.array([]), np.array([])) == 0.0


def _copy_days(rec_day0, days):
    out = []
    for d in range(days):
        for r in rec_day0:
            out.append(AuctionRecord(f"{r.auction_id}-{d}", d, r.slots, r.candidates, r.reserve_price))
    return out


def test_identical_days_zero_gaps():
    base = [r for r in generate(small()).records if r.day == 0]
    log = build_ad_index(_copy_days(base, 3))
    rep = stationarity_report(log, log.ad_ids)
    assert all(r.ctr_cdf_gap == 0 and r.cvr_cdf_gap == 0 and r.volume_std == 0 for r in rep.rows)


def test_disjoint_supports_gap_one():
    recs = [
        AuctionRecord("x", 0, 1, (AuctionCandidate("A", 1.0, 0.1, 0.1, 5.0),)),
        AuctionRecord("y", 1, 1, (AuctionCandidate("A", 1.0, 0.9, 0.1, 5.0),)),
    ]
    rep = stationarity_report(build_ad_index(recs), ["A"])
    assert rep.rows[0].ctr_cdf_gap == 1.0
    assert rep.rows[0].cvr_cdf_gap == 0.0


def test_stationarity_errors():
    one_day = build_ad_index([AuctionRecord("x", 0, 1, (AuctionCandidate("A", 1.0, 0.1, 0.1, 5.0),))])
    with pytest.raises(SingleDayLog):
        stationarity_report(one_day, ["A"])
    log = generate(small())
    with pytest.raises(UnknownAd):
        stationarity_report(log, ["nobody"])


def test_large_log_is_stationary():
    # two days, 20k auctions each: ctr/cvr CDF gaps of well-sampled ADs stay small
    log = generate(SynthConfig(seed=3, num_ads=8, num_days=2, auctions_per_day=20_000,
                               candidates_per_auction=(2, 6)))
    rep = stationarity_report(log, log.ad_ids[:4])
    for row in rep.rows:
        # DKW: P(gap > e) <= 2 exp(-2 n e^2) per sample, n >= several thousand here
        assert row.volume_mean > 1000
        assert row.ctr_cdf_gap < 0.05 and row.cvr_cdf_gap < 0.05
    assert rep.csv_rows()[0][0] == log.ad_ids[0]
