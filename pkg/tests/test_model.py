import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ciabid.errors import EmptyLog, InvalidRecord, UnknownAd
from ciabid.model import (
    AuctionCandidate,
    AuctionRecord,
    Campaign,
    ReplaySummary,
    build_ad_index,
    dump_log_lines,
    format_money,
    parse_money,
    quantize_money,
    read_log,
)

from conftest import random_records


def cand(ad, bid=1.0, ctr=0.1, cvr=0.1, price=10.0):
    return AuctionCandidate(ad, bid, ctr, cvr, price)


def test_index_single_record():
    log = build_ad_index([AuctionRecord("x", 0, 1, (cand("A"), cand("B")))])
    assert dict(log.ad_index) == {"A": (0,), "B": (0,)}


def test_index_two_records():
    log = build_ad_index([
        AuctionRecord("x", 0, 1, (cand("A"),)),
        AuctionRecord("y", 0, 1, (cand("A"), cand("B"))),
    ])
    assert dict(log.ad_index) == {"A": (0, 1), "B": (1,)}


def test_empty_log_rejected():
    with pytest.raises(EmptyLog):
        build_ad_index([])


def test_index_matches_linear_scan(rng):
    recs = random_records(rng, n_auctions=10_000, n_ads=30)
    log = build_ad_index(recs)
    assert log.records == tuple(recs)
    for ad in log.ad_ids:
        scan = tuple(p for p, r in enumerate(recs) if any(c.ad_id == ad for c in r.candidates))
        assert log.ad_index[ad] == scan
    assert sum(len(v) for v in log.ad_index.values()) == sum(len(r.candidates) for r in recs)


def test_positions_unknown_ad(small_log):
    with pytest.raises(UnknownAd):
        small_log.positions("missing")


@pytest.mark.parametrize("kwargs", [
    dict(ctr=1.5), dict(ctr=-0.1), dict(cvr=2.0), dict(price=0.0), dict(bid=-1.0),
])
def test_candidate_validation(kwargs):
    with pytest.raises(InvalidRecord):
        cand("A", **kwargs)


def test_record_validation():
    with pytest.raises(InvalidRecord):
        AuctionRecord("x", 0, 0, (cand("A"),))
    with pytest.raises(InvalidRecord):
        AuctionRecord("x", 0, 1, (cand("A"), cand("A")))
    with pytest.raises(InvalidRecord):
        AuctionRecord("x", 0, 1, ())
    with pytest.raises(InvalidRecord):
        AuctionRecord("x", 0, 1, (cand("A"),), reserve_price=-0.01)


def test_money_helpers():
    assert quantize_money(1.23456) == 1.2346
    assert quantize_money(0.00005) == 0.0  # half-even
    assert format_money(1.5) == "1.5"
    assert format_money(2.0) == "2"
    assert format_money(0.0001) == "0.0001"
    assert parse_money("12.3456") == 12.3456
    with pytest.raises(InvalidRecord):
        parse_money("0.00001")


@given(st.integers(min_value=0, max_value=10**9))
def test_money_roundtrip(units):
    value = units / 10_000
    assert parse_money(format_money(value)) == quantize_money(value)


def test_jsonl_roundtrip(tmp_path, rng):
    log = build_ad_index(random_records(rng, n_auctions=300))
    path = tmp_path / "log.jsonl"
    path.write_text("".join(dump_log_lines(log)))
    back = read_log(path)
    assert back.records == log.records
    line = json.loads(path.read_text().splitlines()[0])
    assert set(line) == {"auction_id", "day", "slots", "reserve_price", "candidates"}
    assert isinstance(line["candidates"][0]["keyword_bid"], str)


def test_read_log_malformed(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"auction_id": "x"}\n')
    with pytest.raises(InvalidRecord):
        read_log(p)
    p.write_text("not json\n")
    with pytest.raises(InvalidRecord):
        read_log(p)


def test_columns_consistent(rng):
    log = build_ad_index(random_records(rng, n_auctions=500))
    cols = log.columns
    for pos in (0, 17, 499):
        rec = log.records[pos]
        rows = np.arange(cols.offsets[pos], cols.offsets[pos + 1])
        assert [cols.ad_ids[c] for c in cols.row_ad[rows]] == [c.ad_id for c in rec.candidates]
        assert cols.day[pos] == rec.day
    for code, ad in enumerate(cols.ad_ids):
        assert tuple(cols.row_auction[cols.rows_of(code)]) == log.ad_index[ad]


def test_campaign_validation_and_json():
    c = Campaign("c", ("a", "b"), (0.5, 1.0), (1.0, 2.0))
    assert Campaign.from_json(json.loads(json.dumps(c.to_json()))) == c
    with pytest.raises(InvalidRecord):
        Campaign("c", ("a", "a"), (0, 0), (1, 1))
    with pytest.raises(InvalidRecord):
        Campaign("c", ("a",), (2.0,), (1.0,))
    with pytest.raises(InvalidRecord):
        Campaign("c", ("a", "b"), (0.0,), (1.0, 1.0))


def test_summary_invariants():
    with pytest.raises(ValueError):
        ReplaySummary(cost=-1.0)
    with pytest.raises(ValueError):
        ReplaySummary(gmv=1.0, impressions=0.0)
    a = ReplaySummary(1.0, 2.0, 1.0, 0.1, 0.01)
    b = ReplaySummary(0.5, 0.0, 0.0, 0.0, 0.0)
    assert a + b == ReplaySummary(1.5, 2.0, 1.0, 0.1, 0.01)
    assert ReplaySummary.total([a, b, a]) == ReplaySummary(2.5, 4.0, 2.0, 0.2, 0.02)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1e6), st.floats(0, 1e6), st.floats(1, 1e3)), min_size=1, max_size=20))
def test_summary_total_order_free(parts):
    sums = [ReplaySummary(c, g, i) for c, g, i in parts]
    assert ReplaySummary.total(sums) == ReplaySummary.total(reversed(sums))
