import math

import numpy as np
import pytest

from ciabid.errors import DegenerateAd, UnknownAd
from ciabid.inference import (
    ALPHA_SEARCH,
    AlphaRange,
    compute_profile,
    feasible_alpha_range,
    mean_keyword_bid,
    propagate_tk_delta,
)
from ciabid.model import AuctionCandidate, AuctionRecord, build_ad_index
from ciabid.replay import BidPolicy, cost_tolerance, evaluate, invert_cost

from conftest import random_records


def rec(i, ctr, cvr, ip, b, ad="A", day=0):
    return AuctionRecord(f"r{i}", day, 1, (AuctionCandidate(ad, b, ctr, cvr, ip),))


def test_profile_single_auction():
    p = compute_profile(build_ad_index([rec(0, 1.0, 0.1, 100.0, 10.0)]), "A")
    assert p.expected_roi == pytest.approx(1.0)
    assert p.take_rate == pytest.approx(1.0)
    assert p.virtual_budget == pytest.approx(10.0)
    assert p.alpha_range is None


def test_profile_two_auctions():
    log = build_ad_index([rec(0, 0.1, 0.2, 100.0, 1.0), rec(1, 0.2, 0.1, 50.0, 2.0)])
    p = compute_profile(log, "A")
    assert p.expected_roi == pytest.approx(6.0)
    assert p.take_rate == pytest.approx(1 / 6)
    assert p.virtual_budget == pytest.approx(0.5)
    assert p.take_rate * p.expected_roi == pytest.approx(1.0, rel=1e-9)


def test_budget_is_daily_average():
    log = build_ad_index([rec(0, 0.1, 0.2, 100.0, 1.0, day=0), rec(1, 0.2, 0.1, 50.0, 2.0, day=1)])
    assert compute_profile(log, "A").virtual_budget == pytest.approx(0.25)
    assert compute_profile(log, "A", [1]).virtual_budget == pytest.approx(0.4)


def test_profile_degenerate():
    with pytest.raises(DegenerateAd):
        compute_profile(build_ad_index([rec(0, 0.1, 0.0, 100.0, 1.0)]), "A")
    with pytest.raises(DegenerateAd):
        compute_profile(build_ad_index([rec(0, 0.1, 0.1, 100.0, 0.0)]), "A")
    with pytest.raises(UnknownAd):
        compute_profile(build_ad_index([rec(0, 0.1, 0.1, 100.0, 1.0)]), "B")


def test_profile_uses_all_entered_auctions():
    # A never wins the second auction but it still counts toward R
    r0 = rec(0, 0.1, 0.2, 100.0, 1.0)
    r1 = AuctionRecord("r1", 0, 1, (AuctionCandidate("A", 2.0, 0.2, 0.1, 50.0),
                                    AuctionCandidate("B", 50.0, 0.9, 0.1, 50.0)))
    p = compute_profile(build_ad_index([r0, r1]), "A")
    assert p.expected_roi == pytest.approx(6.0)


def test_tk_delta_examples():
    log = build_ad_index([rec(0, 1.0, 0.1, 100.0, 10.0)])
    assert propagate_tk_delta(log, "A", None, {}) == 0.0
    assert propagate_tk_delta(log, "A", None, {0: 5.0}) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        propagate_tk_delta(log, "A", None, {3: 1.0})


def _with_bid_changes(log, ad, delta):
    recs = []
    for p, r in enumerate(log.records):
        if p in delta:
            cands = tuple(
                AuctionCandidate(c.ad_id, c.keyword_bid + delta[p], c.ctr, c.cvr, c.item_price)
                if c.ad_id == ad else c
                for c in r.candidates
            )
            r = AuctionRecord(r.auction_id, r.day, r.slots, cands, r.reserve_price)
        recs.append(r)
    return build_ad_index(recs)


def test_tk_delta_linearity(rng):
    for trial in range(40):
        log = build_ad_index(random_records(rng, n_auctions=80, n_ads=5))
        ad = log.ad_ids[trial % len(log.ad_ids)]
        pos = log.positions(ad)
        pick = rng.choice(pos, size=max(1, len(pos) // 2), replace=False)
        delta = {int(p): float(rng.uniform(0, 1.5)) for p in pick}
        days = None if trial % 2 else [0]
        before = compute_profile(log, ad, days).take_rate
        after = compute_profile(_with_bid_changes(log, ad, delta), ad, days).take_rate
        d = propagate_tk_delta(log, ad, days, delta)
        assert after == pytest.approx(before + d, rel=1e-9)


def test_tk_sufficiency(rng):
    # bid = tk * cvr * ip and any price <= bid gives impression roi >= R
    for _ in range(2000):
        R = rng.uniform(0.2, 20)
        tk = 1 / R
        cvr = rng.uniform(1e-4, 1)
        ip = rng.uniform(0.5, 500)
        bid = tk * cvr * ip
        c = bid * rng.uniform(1e-3, 1.0)
        assert cvr * ip / c >= R * (1 - 1e-12)


def test_budget_consistency(small_log):
    for ad in small_log.ad_ids[:8]:
        p = compute_profile(small_log, ad)
        assert evaluate(small_log, ad, BidPolicy()).cost <= p.virtual_budget * (1 + 1e-12)


def test_alpha_range_equal_bounds(small_log):
    ad = small_log.ad_ids[4]
    p = compute_profile(small_log, ad)
    b = mean_keyword_bid(small_log, ad)
    r = feasible_alpha_range(small_log, ad, p, b, b)
    assert r.lo == r.hi


def test_alpha_range_never_wins_is_clamped(small_log):
    ad = small_log.ad_ids[4]
    p = compute_profile(small_log, ad)
    r = feasible_alpha_range(small_log, ad, p, 1e-6, mean_keyword_bid(small_log, ad))
    assert r.lo == ALPHA_SEARCH[0] and r.clamped


def test_alpha_range_reproduces_costs(small_log):
    hits = 0
    for ad in small_log.ad_ids[:12]:
        p = compute_profile(small_log, ad)
        b = mean_keyword_bid(small_log, ad)
        r = feasible_alpha_range(small_log, ad, p, 0.5 * b, 2.0 * b)
        assert r.lo <= r.hi
        for a, z in ((r.lo, r.cost_lo), (r.hi, r.cost_hi)):
            inv = invert_cost(small_log, ad, p.take_rate, z, ALPHA_SEARCH)
            assert inv.alpha == a
            got = evaluate(small_log, ad, BidPolicy.cia(ad, a, p.take_rate)).cost
            if inv.converged:
                assert abs(got - z) <= cost_tolerance(z)
                hits += 1
            elif not inv.clamped:
                # the target sits in a jump of the cost step function
                lo, hi = inv.bracket
                assert hi / lo - 1 < 1e-12
                c_lo = evaluate(small_log, ad, BidPolicy.cia(ad, lo, p.take_rate)).cost
                c_hi = evaluate(small_log, ad, BidPolicy.cia(ad, hi, p.take_rate)).cost
                assert c_lo < z - cost_tolerance(z) and c_hi > z + cost_tolerance(z)
    assert hits > 0
    with pytest.raises(ValueError):
        feasible_alpha_range(small_log, ad, p, 2.0, 1.0)


def test_alpha_range_validation():
    with pytest.raises(ValueError):
        AlphaRange(2.0, 1.0)
    with pytest.raises(ValueError):
        AlphaRange(0.0, 1.0)


def test_mean_keyword_bid_matches_scan(small_log):
    ad = small_log.ad_ids[0]
    bids = [c.keyword_bid for r in small_log.records for c in r.candidates if c.ad_id == ad]
    assert mean_keyword_bid(small_log, ad) == pytest.approx(math.fsum(bids) / len(bids))
    assert np.isfinite(mean_keyword_bid(small_log, ad, [0]))
