"""Conversion-based bidding (CIA) replay, inference and campaign optimisation."""

from .errors import CiaError, ConfigError, DataError, InfeasibleError
from .model import AuctionCandidate, AuctionLog, AuctionRecord, Campaign, ReplaySummary, build_ad_index, read_log
from .replay import BidPolicy, CiaBid, KeywordBid, alpha_curve, evaluate, invert_cost, replay_all, replay_auction
from .inference import AdProfile, compute_profile, feasible_alpha_range, propagate_tk_delta
from .synth import SynthConfig, generate, stationarity_report

__version__ = "0.1.0"

__all__ = [
    "AdProfile",
    "AuctionCandidate",
    "AuctionLog",
    "AuctionRecord",
    "BidPolicy",
    "Campaign",
    "CiaBid",
    "CiaError",
    "ConfigError",
    "DataError",
    "InfeasibleError",
    "KeywordBid",
    "ReplaySummary",
    "SynthConfig",
    "alpha_curve",
    "build_ad_index",
    "compute_profile",
    "evaluate",
    "feasible_alpha_range",
    "generate",
    "invert_cost",
    "propagate_tk_delta",
    "read_log",
    "replay_all",
    "replay_auction",
    "stationarity_report",
]
