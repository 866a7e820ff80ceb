import numpy as np
import pytest

from ciabid.model import AuctionCandidate, AuctionRecord, build_ad_index, quantize_money
from ciabid.synth import SynthConfig, generate


def random_records(rng, n_auctions=200, n_ads=8, n_days=2, max_cands=5, max_slots=3, reserve=0.01):
    """Small random log with quantized money and arbitrary competition."""
    ads = [f"a{i:02d}" for i in range(n_ads)]
    prices = {a: quantize_money(rng.uniform(5, 100)) for a in ads}
    bids = {a: rng.uniform(0.05, 3.0) for a in ads}
    recs = []
    for t in range(n_auctions):
        k = int(rng.integers(1, max_cands + 1))
        chosen = rng.choice(n_ads, size=k, replace=False)
        cands = tuple(
            AuctionCandidate(
                ads[i],
                quantize_money(bids[ads[i]] * rng.uniform(0.8, 1.2)),
                float(rng.beta(2, 30)),
                float(rng.beta(1.5, 20)),
                prices[ads[i]],
            )
            for i in chosen
        )
        recs.append(AuctionRecord(f"t{t:05d}", t % n_days, int(rng.integers(1, max_slots + 1)), cands, reserve))
    return recs


@pytest.fixture(scope="session")
def small_log():
    return generate(SynthConfig(seed=5, num_ads=24, num_days=3, auctions_per_day=1500))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES = []


def record_criterion(number, name, ok, detail=""):
    """Print and remember one PASS/FAIL line; the caller still asserts."""
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'} {name}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append((number, line))
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
