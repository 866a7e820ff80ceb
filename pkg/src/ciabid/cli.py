"""Command-line entry point.

Every command writes its artifacts atomically and leaves a manifest next to
them that echoes the resolved configuration and the content hash of every
input. Failures print one line ``error code=<Code> module=<module> message=<text>``
on stderr and exit with 2 (configuration), 3 (data) or 4 (infeasible, only
with ``--strict``).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

from . import __version__
from .errors import CiaError, ConfigError, DataError, InfeasibleWindow
from .experiments import (
    AdLevelReport,
    fmt,
    make_campaigns,
    run_ad_level,
    run_campaign_level,
    run_platform_sweep,
)
from .inference import compute_profile, feasible_alpha_range, mean_keyword_bid
from .model import MINOR_UNIT, Campaign, dump_log_lines, format_money, read_log
from .optimizers import CampaignProblem, Demand, build_grid, optimize_gmv, optimize_style
from .replay import BidPolicy, alpha_curve, evaluate
from .synth import SynthConfig, generate, stationarity_report


# ---------------------------------------------------------------------------
# output helpers


def atomic_write(path: Path, data: str | bytes) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def sha256_of(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


_PATH_ARGS = ("log", "config", "campaign", "campaigns", "out")


def write_manifest(path: Path, args: argparse.Namespace, inputs: dict[str, Path], outputs: Sequence[Path]) -> None:
    """Resolved config, input hashes and output names; no timestamps or absolute paths."""
    config = {}
    for k, v in sorted(vars(args).items()):
        if k in ("func",):
            continue
        if k in _PATH_ARGS and v is not None:
            v = Path(v).name
        config[k] = v
    manifest = {
        "tool": "ciabid",
        "version": __version__,
        "command": args.command,
        "config": config,
        "inputs": {name: {"file": Path(p).name, "sha256": sha256_of(p)} for name, p in sorted(inputs.items())},
        "outputs": sorted(Path(p).name for p in outputs),
    }
    atomic_write(path, json_text(manifest))


def manifest_path(out: Path) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


# ---------------------------------------------------------------------------
# argument parsing helpers


def parse_days(text: str | None) -> tuple[int, ...] | None:
    """``a..b`` (inclusive) or a single day index."""
    if text is None:
        return None
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            a, b = int(a), int(b)
        else:
            a = b = int(text)
    except ValueError:
        raise ConfigError(f"--days expects a..b, got {text!r}", module="cli") from None
    if a > b or a < 0:
        raise ConfigError(f"--days range {text!r} is empty or negative", module="cli")
    return tuple(range(a, b + 1))


def select_days(log, days: tuple[int, ...] | None) -> tuple[int, ...]:
    if days is None:
        return log.days
    present = [d for d in days if d in set(log.days)]
    if not present:
        raise DataError(f"log has no records on days {days[0]}..{days[-1]}", module="cli")
    return tuple(present)


def parse_floats(text: str, name: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{name} expects comma-separated numbers, got {text!r}", module="cli") from None


def parse_alphas(text: str) -> list[float]:
    import numpy as np

    try:
        lo, hi, n = text.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise ConfigError(f"--alphas expects lo:hi:n, got {text!r}", module="cli") from None
    if not (0 < lo <= hi and n >= 1) or (n > 1 and lo == hi):
        raise ConfigError("--alphas needs 0 < lo < hi and n >= 1 (lo == hi only with n = 1)", module="cli")
    return [lo] if n == 1 else [float(a) for a in np.geomspace(lo, hi, n)]


def resolve_ads(log, spec: str) -> list[str]:
    if spec == "all":
        return list(log.ad_ids)
    ads = [a.strip() for a in spec.split(",") if a.strip()]
    if not ads:
        raise ConfigError("--ads is empty", module="cli")
    return ads


def load_campaigns(path: Path) -> list[Campaign]:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}", module="cli") from exc
    items = obj.get("campaigns", [obj]) if isinstance(obj, dict) else obj
    try:
        return [Campaign.from_json(c) for c in items]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: malformed campaign ({exc})", module="cli") from exc


def load_log(path):
    try:
        return read_log(path)
    except FileNotFoundError:
        raise DataError(f"log file {path} not found", module="cli") from None


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = SynthConfig.from_json(json.load(fh))
    else:
        cfg = SynthConfig()
    overrides = {k: getattr(args, k) for k in ("seed", "num_ads", "num_days", "auctions_per_day")
                 if getattr(args, k) is not None}
    cfg = SynthConfig.from_json({**cfg.to_json(), **overrides})
    log = generate(cfg)
    out = Path(args.out)
    atomic_write(out, "".join(dump_log_lines(log)))
    args.resolved_config = cfg.to_json()
    inputs = {"config": Path(args.config)} if args.config else {}
    write_manifest(manifest_path(out), args, inputs, [out])
    print(f"wrote {len(log)} auctions for {len(log.ad_ids)} ADs over {len(log.days)} days to {out}")
    return 0


def cmd_stationarity(args) -> int:
    log = load_log(args.log)
    rep = stationarity_report(log, resolve_ads(log, args.ads))
    out = Path(args.out)
    atomic_write(out, csv_text(rep.CSV_HEADER, rep.csv_rows()))
    write_manifest(manifest_path(out), args, {"log": Path(args.log)}, [out])
    return 0


def cmd_infer(args) -> int:
    log = load_log(args.log)
    days = select_days(log, parse_days(args.days))
    lo_f, hi_f = parse_floats(args.bid_range, "--bid-range")
    if not 0 < lo_f <= hi_f:
        raise ConfigError("--bid-range needs 0 < low <= high", module="cli")
    rows = []
    for ad in resolve_ads(log, args.ads):
        prof = compute_profile(log, ad, days)
        b = mean_keyword_bid(log, ad, days)
        rng = feasible_alpha_range(log, ad, prof, max(lo_f * b, MINOR_UNIT), max(hi_f * b, MINOR_UNIT), days)
        rows.append((ad, fmt(prof.expected_roi), fmt(prof.take_rate), fmt(prof.virtual_budget),
                     fmt(rng.lo), fmt(rng.hi), str(rng.clamped).lower()))
    out = Path(args.out)
    atomic_write(out, csv_text(("ad_id", "R", "tk", "B", "alpha_lo", "alpha_hi", "clamped"), rows))
    write_manifest(manifest_path(out), args, {"log": Path(args.log)}, [out])
    return 0


def _tk_for(log, ad, tk, days) -> float:
    return compute_profile(log, ad, days).take_rate if tk is None else tk


def cmd_replay(args) -> int:
    log = load_log(args.log)
    days = select_days(log, parse_days(args.days))
    if args.policy == "cia":
        if args.alpha is None:
            raise ConfigError("--policy cia needs --alpha", module="cli")
        tk = _tk_for(log, args.ad, args.tk, days)
        policy = BidPolicy.cia(args.ad, args.alpha, tk)
    else:
        policy = BidPolicy()
    s = evaluate(log, args.ad, policy, days)
    line = ",".join([args.ad, args.policy, fmt(s.cost), fmt(s.gmv), fmt(s.impressions), fmt(s.clicks)])
    print(line)
    if args.out:
        out = Path(args.out)
        atomic_write(out, csv_text(("ad_id", "policy", "cost", "gmv", "impressions", "clicks"), [line.split(",")]))
        write_manifest(manifest_path(out), args, {"log": Path(args.log)}, [out])
    return 0


def cmd_curve(args) -> int:
    log = load_log(args.log)
    days = select_days(log, parse_days(args.days))
    tk = _tk_for(log, args.ad, args.tk, days)
    curve = alpha_curve(log, args.ad, tk, parse_alphas(args.alphas), days)
    rows = [(fmt(a), fmt(s.cost), fmt(s.gmv), fmt(s.impressions), fmt(s.clicks))
            for a, s in zip(curve.alphas, curve.summaries)]
    out = Path(args.out)
    atomic_write(out, csv_text(("alpha", "cost", "gmv", "impressions", "clicks"), rows))
    write_manifest(manifest_path(out), args, {"log": Path(args.log)}, [out])
    return 0


def cmd_optimize(args) -> int:
    log = load_log(args.log)
    days = select_days(log, parse_days(args.days))
    camps = load_campaigns(args.campaign)
    if len(camps) != 1:
        raise ConfigError(f"--campaign must hold exactly one campaign, found {len(camps)}", module="cli")
    camp = camps[0]
    demand = Demand(args.demand)
    profiles = {a: compute_profile(log, a, days) for a in camp.ad_ids}
    problem = CampaignProblem(camp, profiles, args.beta, args.epsilon, args.k, demand)
    grid = build_grid(log, problem, days)
    result = (optimize_gmv if demand is Demand.GMV else optimize_style)(grid, args.beta, args.epsilon)
    if args.strict and not result.feasible:
        lo, hi = result.window
        raise InfeasibleWindow(
            f"campaign {camp.campaign_id}: no allocation lands in [{format_money(lo)}, {format_money(hi)}]"
        )
    out = Path(args.out)
    table = out.with_suffix(".txt")
    body = result.to_json()
    body["campaign_id"] = camp.campaign_id
    atomic_write(out, json_text(body))
    atomic_write(table, result.table() + "\n")
    write_manifest(manifest_path(out), args, {"log": Path(args.log), "campaign": Path(args.campaign)},
                   [out, table])
    print(result.table())
    return 0


def cmd_experiment(args) -> int:
    log = load_log(args.log)
    days = select_days(log, parse_days(args.days))
    out = Path(args.out)
    inputs = {"log": Path(args.log)}
    written = []

    def put(name: str, text: str):
        p = out / name
        atomic_write(p, text)
        written.append(p)

    if args.level == "ad":
        ads = None if args.ads == "all" else resolve_ads(log, args.ads)
        rep = run_ad_level(log, ads, args.beta, args.epsilon, days, threads=args.threads)
        put("ad_level.csv", csv_text(rep.CSV_HEADER, rep.csv_rows()))
        put("ad_level.json", json_text(rep.to_json()))
        print(_summary_line("overall", rep.overall.as_dict()))
    elif args.level == "campaign":
        if args.campaigns:
            camps = load_campaigns(args.campaigns)
            inputs["campaigns"] = Path(args.campaigns)
        else:
            lo_f, hi_f = parse_floats(args.bid_range, "--bid-range")
            camps = make_campaigns(log, args.num_campaigns, args.campaign_size, args.seed, (lo_f, hi_f), days)
        put("campaigns.json", json_text({"campaigns": [c.to_json() for c in camps]}))
        rep = run_campaign_level(log, camps, args.demand, args.beta, args.epsilon, args.k, days,
                                 threads=args.threads)
        put(f"campaign_{rep.demand.value}.csv", csv_text(rep.csv_header(), rep.csv_rows()))
        put(f"campaign_{rep.demand.value}.json", json_text(rep.to_json()))
        if rep.demand is Demand.STYLE:
            won, total = rep.style_wins()
            print(f"cia spread <= {rep.baseline_name} spread on {won}/{total} campaigns")
    else:
        fractions = parse_floats(args.fractions, "--fractions")
        cal = run_ad_level(log, None, 1.0, args.epsilon, days, threads=args.threads)
        sweep = run_platform_sweep(log, fractions, args.seed, days, calibration=cal, threads=args.threads)
        put("platform_sweep.csv", csv_text(sweep.CSV_HEADER, sweep.csv_rows()))
        put("platform_sweep.json", json_text(sweep.to_json()))
        put("calibration.csv", _calibration_csv(cal))
        for p in sweep.points:
            print(_summary_line(f"fraction={p.fraction}", p.platform.as_dict()))
    write_manifest(out / "manifest.json", args, inputs, written)
    return 0


def _calibration_csv(cal: AdLevelReport) -> str:
    rows = [(r.ad_id, fmt(r.take_rate), fmt(r.alpha), str(r.clamped).lower()) for r in cal.rows]
    return csv_text(("ad_id", "tk", "alpha", "clamped"), rows)


def _summary_line(label: str, shifts: dict) -> str:
    cells = " ".join(f"{k}={'n/a' if v is None else f'{v:.4f}'}" for k, v in shifts.items())
    return f"{label}: {cells}"


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser, *, log: bool = True, days: bool = True) -> None:
    if log:
        p.add_argument("--log", required=True, help="auction log (JSON Lines)")
    if days:
        p.add_argument("--days", help="day filter a..b (inclusive) or a single day; default all days")
    p.add_argument("--threads", type=int, default=1, help="cap on worker threads (default 1)")
    p.add_argument("--seed", type=int, default=None if not log else 0, help="random seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ciabid", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic auction log")
    p.add_argument("--config", help="SynthConfig JSON; defaults are used for missing fields")
    p.add_argument("--num-ads", type=int)
    p.add_argument("--num-days", type=int)
    p.add_argument("--auctions-per-day", type=int)
    p.add_argument("--out", required=True, help="output JSONL path")
    _common(p, log=False, days=False)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("stationarity", help="per-AD day-over-day stationarity report (CSV)")
    p.add_argument("--ads", default="all", help="'all' or comma-separated AD ids")
    p.add_argument("--out", required=True)
    _common(p, days=False)
    p.set_defaults(func=cmd_stationarity)

    p = sub.add_parser("infer", help="take-rate, ROI, virtual budget and alpha range per AD (CSV)")
    p.add_argument("--ads", default="all")
    p.add_argument("--bid-range", default="0.5,2.0",
                   help="bid bounds l,u as factors of each AD's mean keyword bid (default 0.5,2.0)")
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("replay", help="replay one AD and print cost,gmv,impressions,clicks")
    p.add_argument("--ad", required=True)
    p.add_argument("--policy", choices=("keyword", "cia"), default="keyword")
    p.add_argument("--tk", type=float, help="take-rate; inferred from the log when omitted")
    p.add_argument("--alpha", type=float)
    p.add_argument("--out", help="optional CSV copy of the printed line")
    _common(p)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("curve", help="alpha curve of one AD (CSV)")
    p.add_argument("--ad", required=True)
    p.add_argument("--alphas", required=True, help="lo:hi:n, geometrically spaced")
    p.add_argument("--tk", type=float, help="take-rate; inferred from the log when omitted")
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("optimize", help="campaign GMV or style optimisation (JSON + table)")
    p.add_argument("demand", choices=[d.value for d in Demand])
    p.add_argument("--campaign", required=True, help="campaign JSON (campaign_id, ad_ids, bid_lower, bid_upper)")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--epsilon", type=float, default=0.2)
    p.add_argument("--k", type=int, default=8, help="alpha grid size per AD")
    p.add_argument("--strict", action="store_true", help="exit 4 when no allocation fits the cost window")
    p.add_argument("--out", required=True, help="result JSON; the table goes next to it as .txt")
    _common(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("experiment", help="AD, campaign or platform level comparison")
    p.add_argument("level", choices=("ad", "campaign", "platform"))
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--ads", default="all", help="AD level: 'all' or comma-separated ids")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--epsilon", type=float, default=None,
                   help="cost window half-width (default 0.1 for ad/platform, 0.2 for campaign)")
    p.add_argument("--demand", choices=[d.value for d in Demand], default="gmv")
    p.add_argument("--campaigns", help="campaign JSON list; generated from the log when omitted")
    p.add_argument("--num-campaigns", type=int, default=10)
    p.add_argument("--campaign-size", type=int, default=5)
    p.add_argument("--bid-range", default="0.5,2.0", help="generated campaigns: l,u factors of mean bid")
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--fractions", default="0.1,0.3,0.5,1.0", help="platform level adoption fractions")
    _common(p)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "epsilon", 0) is None:
        args.epsilon = 0.2 if args.level == "campaign" else 0.1
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except CiaError as exc:
        print(f"error code={exc.code} module={exc.module} message={exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, KeyError) as exc:
        print(f"error code=ConfigError module=cli message={exc}", file=sys.stderr)
        return ConfigError.exit_code
    except OSError as exc:
        print(f"error code=DataError module=cli message={exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
