"""Command line: ``portfolio-drl {train,backtest,compare,report}``.

Bundle layout written under ``--out``::

    checkpoint.bin        network spec + flat parameters
    reward_history.csv    episode_index, mean_reward, steps
    prices.csv            the OHLC data the run used (long format)
    metrics.csv           one row per strategy, DRL first
    values_<name>.csv     value curve per strategy
    weights_<name>.csv    date, symbol, weight, cost per strategy
    report/               plot-ready files from ``report``
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import sys
from pathlib import Path


from . import config as config_mod
from .backtest import (
    BacktestResult,
    policy_backtest,
    read_value_curve,
    read_weights_costs,
    write_value_curve,
    write_weights_costs,
)
from .baselines import rolling_rebalance_backtest
from .config import RunConfig
from .errors import CheckpointError, DatasetError, PortfolioDrlError, ReportError
from .market_data import MarketDataset, first_decision_day, load_csv, write_csv
from .metrics import COLUMNS, MetricsReport
from .network import load_checkpoint, save_checkpoint
from .ppo import PpoTrainer, write_reward_history

log = logging.getLogger("portfolio_drl")

CHECKPOINT = "checkpoint.bin"
REWARDS = "reward_history.csv"
PRICES = "prices.csv"
METRICS = "metrics.csv"
MANIFEST = "bundle.json"
REPORT_FILES = ("normalized_prices.csv", "value_curves.csv", "weights.csv", "costs.csv", "reward_history.csv")


def _train_view(cfg: RunConfig, dataset: MarketDataset) -> MarketDataset:
    lo, hi = dataset.date_range(cfg.split.train_start, cfg.split.train_end)
    return dataset.slice(lo, hi + 1)


def _test_days(cfg: RunConfig, dataset: MarketDataset) -> range:
    lo, hi = dataset.date_range(cfg.split.test_start, cfg.split.test_end)
    if lo < first_decision_day(cfg.env.window):
        raise DatasetError(f"test range starts before {cfg.env.window - 1} days of tensor history exist")
    return range(lo, hi + 1)


def cmd_train(cfg: RunConfig, out: Path, progress_every: int = 0):
    dataset = cfg.load_dataset()
    view = _train_view(cfg, dataset)
    spec = cfg.net_spec(dataset.n_assets)
    trainer = PpoTrainer(view, cfg.env, spec, cfg.ppo)
    result = trainer.run(progress_every)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / CHECKPOINT, spec, result.params,
                    {"seed": cfg.seed, "steps": trainer.steps, "policy_version": result.policy_version})
    write_reward_history(result.history, out / REWARDS)
    return result


def _load_policy(cfg: RunConfig, dataset: MarketDataset, checkpoint: Path):
    spec = cfg.net_spec(dataset.n_assets)
    _, params, _ = load_checkpoint(checkpoint, expected=spec)
    return spec, params


def _write_bundle(cfg: RunConfig, dataset: MarketDataset, results: list[BacktestResult], out: Path) -> list:
    out.mkdir(parents=True, exist_ok=True)
    write_csv(dataset, out / PRICES)
    rows = []
    with open(out / METRICS, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", *COLUMNS, "test_start", "test_end", "n_days"])
        for r in results:
            report = r.metrics(cfg.env.freq)
            rows.append((r.name, report))
            w.writerow([r.name, *report.row(), str(r.dates[0]), str(r.dates[-1]), len(r.dates)])
            write_value_curve(r, out / f"values_{r.name}.csv")
            write_weights_costs(r, out / f"weights_{r.name}.csv")
    manifest = {"strategies": [r.name for r in results], "symbols": list(dataset.symbols)}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
    return rows


def cmd_backtest(cfg: RunConfig, checkpoint: Path, out: Path):
    dataset = cfg.load_dataset()
    spec, params = _load_policy(cfg, dataset, checkpoint)
    days = _test_days(cfg, dataset)
    result = policy_backtest(dataset, params, spec, cfg.env, days)
    _write_bundle(cfg, dataset, [result], out)
    return result


def cmd_compare(cfg: RunConfig, checkpoint: Path, out: Path):
    dataset = cfg.load_dataset()
    spec, params = _load_policy(cfg, dataset, checkpoint)
    days = _test_days(cfg, dataset)
    results = [policy_backtest(dataset, params, spec, cfg.env, days)]
    for b in cfg.baseline_specs():
        run = rolling_rebalance_backtest(dataset, b, cfg.env, days)
        if run.flags:
            log.warning("%s: %d day(s) flagged (%s)", b.name, len(run.flags),
                        ", ".join(sorted({f for fs in run.flags.values() for f in fs})))
        results.append(run.result)
    _write_bundle(cfg, dataset, results, out)
    return results


def read_metrics(path) -> list[tuple[str, MetricsReport, tuple]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        return [(r[0], MetricsReport.from_row(r[1:9]), tuple(r[9:])) for r in reader]


def cmd_report(bundle: Path) -> list[Path]:
    needed = [bundle / MANIFEST, bundle / PRICES, bundle / REWARDS]
    for p in needed:
        if not p.is_file():
            raise ReportError(f"missing bundle file: {p}")
    manifest = json.loads((bundle / MANIFEST).read_text())
    for name in manifest["strategies"]:
        for p in (bundle / f"values_{name}.csv", bundle / f"weights_{name}.csv"):
            if not p.is_file():
                raise ReportError(f"missing bundle file: {p}")
    out = bundle / "report"
    out.mkdir(exist_ok=True)
    dataset = load_csv(bundle / PRICES)

    last_open = dataset.open[-1]
    with open(out / REPORT_FILES[0], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "symbol", "open", "high", "low", "close"])
        for i, d in enumerate(dataset.calendar):
            for j, s in enumerate(dataset.symbols):
                w.writerow([str(d), s] + [repr(float(getattr(dataset, f)[i, j] / last_open[j]))
                                          for f in ("open", "high", "low", "close")])

    curves = {}
    for name in manifest["strategies"]:
        dates, values, _ = read_value_curve(bundle / f"values_{name}.csv")
        curves[name] = (dates, values)
    dates = ["start"] + curves[manifest["strategies"][0]][0]
    with open(out / REPORT_FILES[1], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", *manifest["strategies"]])
        for i, d in enumerate(dates):
            w.writerow([d] + [repr(float(curves[n][1][i])) for n in manifest["strategies"]])

    with open(out / REPORT_FILES[2], "w", newline="") as fw, open(out / REPORT_FILES[3], "w", newline="") as fc:
        ww, wc = csv.writer(fw), csv.writer(fc)
        ww.writerow(["strategy", "date", "symbol", "weight"])
        wc.writerow(["strategy", "date", "cost"])
        for name in manifest["strategies"]:
            ds, syms, weights, costs = read_weights_costs(bundle / f"weights_{name}.csv")
            for d, row, c in zip(ds, weights, costs):
                for s, wt in zip(syms, row):
                    ww.writerow([name, d, s, repr(float(wt))])
                wc.writerow([name, d, repr(float(c))])

    shutil.copyfile(bundle / REWARDS, out / REPORT_FILES[4])
    return [out / f for f in REPORT_FILES]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="portfolio-drl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("train", "train the PPO agent on the training range"),
                        ("backtest", "run the greedy policy over the test range"),
                        ("compare", "backtest the policy and every configured baseline"),
                        ("report", "write plot-ready CSVs from a bundle directory")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", type=Path, required=name != "report")
        sp.add_argument("--out", type=Path, required=name == "report")
        sp.add_argument("--seed", type=int)
        if name in ("backtest", "compare"):
            sp.add_argument("--checkpoint", type=Path)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            for path in cmd_report(args.out):
                print(path)
            return 0
        cfg = config_mod.load(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        out = args.out if args.out is not None else cfg.base_dir / cfg.output_dir
        if args.command == "train":
            result = cmd_train(cfg, out, progress_every=10 if args.verbose else 0)
            print(f"trained {len(result.history)} episodes -> {out / CHECKPOINT}")
            return 0
        checkpoint = args.checkpoint if args.checkpoint is not None else out / CHECKPOINT
        if not checkpoint.is_file():
            raise CheckpointError(f"checkpoint not found: {checkpoint}")
        if args.command == "backtest":
            result = cmd_backtest(cfg, checkpoint, out)
            print(f"DRL final value {result.values[-1]:.6f} -> {out / METRICS}")
        else:
            results = cmd_compare(cfg, checkpoint, out)
            for r in results:
                m = r.metrics(cfg.env.freq)
                print(f"{r.name:>16}  E(R)={m.ann_return: .4f}  Sharpe={m.sharpe if m.sharpe is None else round(m.sharpe, 4)}")
        return 0
    except PortfolioDrlError as exc:
        print(f"error: {exc.category}: " + " ".join(str(exc).split()), file=sys.stderr)
        return 2 if exc.category == "config" else 1


if __name__ == "__main__":
    sys.exit(main())
