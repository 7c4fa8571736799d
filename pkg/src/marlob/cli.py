"""Command-line entry point: run cases, analyze artifacts, compare cases.

Subcommands
-----------
run      -- resolve a case, train its learners, dump per-seed measurement
            artifacts (event log, price/profit series) plus a manifest.
analyze  -- compute stylised facts / complexity outputs from a manifest.
compare  -- cross-case moment table and dimension differences vs a baseline.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
All randomness flows from the configured seed list; outputs are plain CSV
written atomically, so re-runs overwrite byte-identically.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Optional

import numpy as np
import yaml

from . import __version__
from .environment import EnvironmentParams
from .execution import QLearningParams, RewardParams
from .orchestrator import (CaseConfig, EpisodeAborted, greedy_policy_grid,
                           load_case, load_events_csv, load_prices_csv,
                           run_episode, train, write_csv, write_events_csv,
                           write_policy_changes_csv, write_policy_csv,
                           write_prices_csv, write_profits_csv,
                           write_qtable_csv, write_returns_csv,
                           _atomic_dump_json)
from . import complexity as cx
from . import stylized as sf


class ConfigError(Exception):
    """Bad usage or configuration; maps to exit code 2."""


DEFAULT_ANALYSIS = {
    "max_lag": 100,
    "bootstrap_resamples": 100,
    "impact_buckets": 20,
    "m_range": [1, 2, 3, 4, 5, 6, 7, 8],
    "phase_segment_length": 250,
    "max_embedding_points": 2500,
}


def worker_count(n_tasks: int) -> int:
    cap = os.environ.get("MARL_LOB_THREADS")
    try:
        cap = int(cap) if cap else (os.cpu_count() or 1)
    except ValueError:
        raise ConfigError(f"MARL_LOB_THREADS must be an integer, got {cap!r}")
    return max(1, min(cap, n_tasks))


def _dataclass_from(cls, mapping, where):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(mapping) - fields
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")
    try:
        return cls(**mapping)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {where} parameters: {exc}")


def load_config(path: Optional[str], overrides: dict) -> dict:
    """Merge the YAML config file (optional) with CLI flag overrides."""
    cfg = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            try:
                loaded = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"cannot parse {path}: {exc}")
        if not isinstance(loaded, dict):
            raise ConfigError(f"config root must be a mapping: {path}")
        cfg.update(loaded)
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    return cfg


def resolve_case(cfg: dict) -> tuple:
    """Build the CaseConfig plus analysis settings from a merged config."""
    if "case" not in cfg:
        raise ConfigError("no case selected (use --case or the config file)")
    env = _dataclass_from(EnvironmentParams, cfg.get("environment", {}),
                          "environment")
    learning = _dataclass_from(QLearningParams, cfg.get("learning", {}),
                               "learning")
    reward = _dataclass_from(RewardParams, cfg.get("reward", {}), "reward")
    analysis = dict(DEFAULT_ANALYSIS)
    unknown = set(cfg.get("analysis", {})) - set(analysis)
    if unknown:
        raise ConfigError(f"unknown analysis keys: {sorted(unknown)}")
    analysis.update(cfg.get("analysis", {}))
    seeds = cfg.get("seeds", [1, 2, 3, 4, 5])
    if isinstance(seeds, str):
        seeds = [int(s) for s in seeds.split(",") if s]
    if not seeds:
        raise ConfigError("empty seed list")
    out_dir = cfg.get("out_dir", "marlob-run")
    try:
        case = load_case(
            cfg["case"], env=env, learning=learning, reward=reward,
            adv=cfg.get("adv"), adv_sessions=cfg.get("adv_sessions", 20),
            adv_cache_path=os.path.join(out_dir, "adv_cache.json"),
            episodes=int(cfg.get("episodes", 100)), seeds=tuple(seeds),
            decision_points=int(cfg.get("decision_points", 50)),
            depth_scale=float(cfg.get("depth_scale", 10.0)))
    except ValueError as exc:
        raise ConfigError(str(exc))
    return case, analysis, out_dir, cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _measure_one(args):
    case, seed = args
    art = run_episode(case, seed, qtables=None, epsilon=0.0,
                      record_events=True, record_series=True)
    return seed, art


def _measure_one_trained(args):
    case, seed, qtables, epsilon = args
    art = run_episode(case, seed, qtables=qtables, epsilon=epsilon,
                      record_events=True, record_series=True)
    return seed, art


# ----------------------------------------------------------------------
# run

def cmd_run(args) -> int:
    cfg = load_config(args.config, {
        "case": args.case, "episodes": args.episodes, "seeds": args.seeds,
        "out_dir": args.out, "adv": args.adv,
        "adv_sessions": args.adv_sessions,
    })
    case, analysis, out_dir, merged = resolve_case(cfg)
    os.makedirs(out_dir, exist_ok=True)
    merged["adv_measured"] = case.adv
    timings = {}
    artifacts: dict = {}

    learner_idx = case.learner_indices
    qtables = None
    t0 = time.time()
    if learner_idx and case.episodes > 0:
        result = train(case)
        qtables = result.qtables
        write_returns_csv(os.path.join(out_dir, "returns.csv"), result)
        write_policy_changes_csv(os.path.join(out_dir, "policy_changes.csv"),
                                 result)
        artifacts["returns"] = "returns.csv"
        artifacts["policy_changes"] = "policy_changes.csv"
        artifacts["qtables"] = {}
        artifacts["policies"] = {}
        for i in learner_idx:
            qname = f"qtable_agent{i}.csv"
            pname = f"policy_agent{i}.csv"
            write_qtable_csv(os.path.join(out_dir, qname), qtables[i])
            write_policy_csv(os.path.join(out_dir, pname),
                             greedy_policy_grid(qtables[i]))
            artifacts["qtables"][str(i)] = qname
            artifacts["policies"][str(i)] = pname
    timings["train_s"] = round(time.time() - t0, 3)

    # one recorded measurement episode per seed (learners act greedily at
    # the exploration floor)
    t0 = time.time()
    eps = case.learning.epsilon_floor if qtables is not None else 0.0
    tasks = [(case, seed, qtables, eps) for seed in case.seeds]
    nworkers = worker_count(len(tasks))
    if nworkers > 1:
        with ProcessPoolExecutor(max_workers=nworkers) as pool:
            measured = list(pool.map(_measure_one_trained, tasks))
    else:
        measured = [_measure_one_trained(t) for t in tasks]
    artifacts["events"] = {}
    artifacts["prices"] = {}
    artifacts["profits"] = {}
    for seed, art in measured:
        ev = f"events_s{seed}.csv"
        pr = f"prices_s{seed}.csv"
        pf = f"profits_s{seed}.csv"
        write_events_csv(os.path.join(out_dir, ev), art.events)
        write_prices_csv(os.path.join(out_dir, pr), art.mids, art.micros)
        write_profits_csv(os.path.join(out_dir, pf), art.profits)
        artifacts["events"][str(seed)] = ev
        artifacts["prices"][str(seed)] = pr
        artifacts["profits"][str(seed)] = pf
    timings["measure_s"] = round(time.time() - t0, 3)

    manifest = {
        "version": __version__,
        "case": case.case_id,
        "config_hash": config_hash(merged),
        "config": merged,
        "analysis": analysis,
        "adv": case.adv,
        "seeds": list(case.seeds),
        "episodes": case.episodes,
        "artifacts": artifacts,
        "timings": timings,
    }
    path = os.path.join(out_dir, "manifest.json")
    _atomic_dump_json(path, manifest)
    print(f"wrote {path}")
    return 0


# ----------------------------------------------------------------------
# analyze

def _manifest_paths(manifest: dict, root: str, group: str) -> dict:
    out = {}
    for seed, rel in manifest["artifacts"].get(group, {}).items():
        path = os.path.join(root, rel)
        if not os.path.exists(path):
            raise FileNotFoundError(path)
        out[int(seed)] = path
    return out


def load_manifest(path: str) -> tuple:
    if not os.path.exists(path):
        raise ConfigError(f"manifest not found: {path}")
    with open(path) as fh:
        manifest = json.load(fh)
    return manifest, os.path.dirname(os.path.abspath(path))


def analyze_moments(manifest, root) -> list:
    prices = _manifest_paths(manifest, root, "prices")
    if not prices:
        raise FileNotFoundError("no price series in manifest")
    first = prices[min(prices)]
    _, micro = load_prices_csv(first)
    report = sf.moment_report(
        micro, n_blocks=manifest["analysis"]["bootstrap_resamples"])
    rows = list(report.rows())
    write_csv(os.path.join(root, "moments.csv"),
              ("moment", "estimate", "ci_low", "ci_high"), rows)
    return rows


def analyze_acf(manifest, root) -> None:
    max_lag = manifest["analysis"]["max_lag"]
    signs_raw = []
    signs_dm = []
    abs_dm = []
    for path in _manifest_paths(manifest, root, "events").values():
        events = load_events_csv(path)
        signs = np.array([1 if r[3] == "buy" else -1 for r in events
                          if r[1] == "Trade"], dtype=float)
        signs_raw.append(sf.acf(signs, max_lag, demean=False).rho)
        signs_dm.append(sf.acf(signs, max_lag, demean=True).rho)
    for path in _manifest_paths(manifest, root, "prices").values():
        _, micro = load_prices_csv(path)
        r = np.abs(sf.log_returns(micro))
        abs_dm.append(sf.acf(r, max_lag, demean=True).rho)
    lags = np.arange(max_lag + 1)
    raw = np.mean(signs_raw, axis=0)
    dm = np.mean(signs_dm, axis=0)
    write_csv(os.path.join(root, "acf_tradesigns.csv"),
              ("lag", "rho_raw", "rho_demeaned"),
              zip(lags.tolist(), raw.tolist(), dm.tolist()))
    am = np.mean(abs_dm, axis=0)
    write_csv(os.path.join(root, "acf_absreturns.csv"), ("lag", "rho"),
              zip(lags.tolist(), am.tolist()))


def analyze_impact(manifest, root) -> None:
    records = []
    for path in _manifest_paths(manifest, root, "events").values():
        records.extend(sf.iter_market_exec(load_events_csv(path)))
    if not records:
        raise FileNotFoundError("no executed market orders in the event logs")
    buyer, seller = sf.price_impact_curves(
        records, manifest["adv"],
        n_buckets=manifest["analysis"]["impact_buckets"])
    for curve, name in ((buyer, "price_impact_buyer.csv"),
                        (seller, "price_impact_seller.csv")):
        rows = []
        for b in range(curve.omega_mid.size):
            rows.append((curve.bucket_edges[b], curve.bucket_edges[b + 1],
                         curve.omega_mid[b],
                         None if math.isnan(curve.mean_impact[b])
                         else curve.mean_impact[b],
                         int(curve.counts[b])))
        write_csv(os.path.join(root, name),
                  ("omega_lo", "omega_hi", "omega_mid", "mean_impact", "n"),
                  rows)


def analyze_complexity(manifest, root) -> None:
    ana = manifest["analysis"]
    m_range = tuple(ana["m_range"])
    curves = []
    first_micro = None
    for seed, path in sorted(_manifest_paths(manifest, root, "prices").items()):
        _, micro = load_prices_csv(path)
        micro = micro[np.isfinite(micro)]
        if first_micro is None:
            first_micro = micro
        fluct = np.diff(micro)
        curves.append(cx.dimension_vs_embedding(
            fluct, m_range=m_range, max_points=ana["max_embedding_points"]))
    rows = []
    for k, m in enumerate(m_range):
        ds = [c.D[k] for c in curves]
        fit = curves[0].fits[k]
        rows.append((m, float(np.mean([c.delay for c in curves])),
                     float(np.mean(ds)),
                     fit.r_bounds[0], fit.r_bounds[1],
                     int(fit.scaling_region_found)))
    write_csv(os.path.join(root, "dimension_curve.csv"),
              ("m", "tau", "D", "r_lo", "r_hi", "scaling_region_found"), rows)

    tau = cx.correlation_time(first_micro)
    ps_rows, _ = cx.phase_space_export(first_micro, tau,
                                       ana["phase_segment_length"])
    write_csv(os.path.join(root, "phase_space.csv"),
              ("t", "x", "x_lagged", "highlighted"), ps_rows)


ANALYSES = {
    "moments": analyze_moments,
    "acf": analyze_acf,
    "impact": analyze_impact,
    "complexity": analyze_complexity,
}


def cmd_analyze(args) -> int:
    manifest, root = load_manifest(args.manifest)
    which = list(ANALYSES) if args.which == "all" else [args.which]
    for name in which:
        try:
            ANALYSES[name](manifest, root)
        except FileNotFoundError as exc:
            print(f"error: missing artifact for {name}: {exc}",
                  file=sys.stderr)
            return 1
        print(f"analyzed {name} -> {root}")
    return 0


# ----------------------------------------------------------------------
# compare

def _read_moments(root: str) -> dict:
    path = os.path.join(root, "moments.csv")
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    out = {}
    import csv as _csv
    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        next(reader)
        for name, est, lo, hi in reader:
            out[name] = (float(est) if est else None,
                         float(lo) if lo else None,
                         float(hi) if hi else None)
    return out


def _read_dimension_curve(root: str) -> cx.DimensionCurve:
    path = os.path.join(root, "dimension_curve.csv")
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    ms, ds, taus = [], [], []
    import csv as _csv
    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        next(reader)
        for m, tau, d, *_ in reader:
            ms.append(int(m))
            taus.append(float(tau))
            ds.append(float(d))
    return cx.DimensionCurve(dimensions=tuple(ms),
                             delay=int(round(np.mean(taus))),
                             D=tuple(ds), fits=())


def cmd_compare(args) -> int:
    if len(args.manifests) < 2:
        print("error: compare needs at least two manifests", file=sys.stderr)
        return 2
    baseline_path = args.baseline or args.manifests[0]
    if baseline_path not in args.manifests:
        args.manifests.insert(0, baseline_path)
    loaded = []
    for path in args.manifests:
        manifest, root = load_manifest(path)
        loaded.append((str(manifest["case"]), manifest, root))
    baseline = next((e for e in loaded
                     if os.path.abspath(os.path.join(e[2], "manifest.json"))
                     == os.path.abspath(baseline_path)), None)
    if baseline is None:
        print(f"error: baseline manifest {baseline_path} not among inputs",
              file=sys.stderr)
        return 2
    out_dir = args.out or os.path.dirname(os.path.abspath(baseline_path))

    try:
        moments = {case: _read_moments(root) for case, _, root in loaded}
        curves = {case: _read_dimension_curve(root)
                  for case, _, root in loaded}
    except FileNotFoundError as exc:
        print(f"error: missing analysis output: {exc} (run `marlob analyze` "
              f"first)", file=sys.stderr)
        return 1

    # Table-4-style layout: cases as column groups, sorted by falling Std
    order = sorted(moments, key=lambda c: -(moments[c]["std"][0] or 0.0))
    header = ["moment"]
    for case in order:
        header += [f"case{case}_est", f"case{case}_lo", f"case{case}_hi"]
    rows = []
    for name in sf.MOMENT_NAMES:
        row = [name]
        for case in order:
            row += list(moments[case].get(name, (None, None, None)))
        rows.append(row)
    write_csv(os.path.join(out_dir, "moments_compare.csv"), header, rows)

    base_case = baseline[0]
    rows = []
    for case, _, _ in loaded:
        mean_d, upper_d = cx.delta_dimension(curves[case], curves[base_case])
        rows.append((case, mean_d, upper_d))
    write_csv(os.path.join(out_dir, "delta_dimension.csv"),
              ("case", "delta_D_mean", "delta_D_upper_half"), rows)
    print(f"wrote {os.path.join(out_dir, 'moments_compare.csv')} and "
          f"delta_dimension.csv")
    return 0


# ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="marlob",
        description="Event-driven limit-order-book market simulator with "
                    "learning execution agents")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="train a case and dump artifacts")
    pr.add_argument("--config", help="YAML config file")
    pr.add_argument("--case", type=int, help="built-in case id (0..12)")
    pr.add_argument("--episodes", type=int)
    pr.add_argument("--seeds", help="comma-separated seed list")
    pr.add_argument("--seed", dest="seeds", help="single seed (alias)")
    pr.add_argument("--out", help="output directory")
    pr.add_argument("--adv", type=float, help="override the measured ADV")
    pr.add_argument("--adv-sessions", type=int, default=None)
    pr.set_defaults(fn=cmd_run)

    pa = sub.add_parser("analyze", help="compute analysis CSVs from a run")
    pa.add_argument("--manifest", required=True)
    pa.add_argument("--which", default="all",
                    choices=["moments", "acf", "impact", "complexity", "all"])
    pa.set_defaults(fn=cmd_analyze)

    pc = sub.add_parser("compare", help="cross-case tables vs a baseline")
    pc.add_argument("manifests", nargs="*")
    pc.add_argument("--baseline", help="baseline manifest path (default: "
                                       "first positional manifest)")
    pc.add_argument("--out", help="output directory")
    pc.set_defaults(fn=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EpisodeAborted as exc:
        print(f"error: episode aborted: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
