"""Run configuration, stored as TOML.

Example::

    seed = 7
    output_dir = "runs/demo"

    [data]
    csv = "prices.csv"            # or a [data.synthetic] table
    symbols = ["AAA", "BBB"]

    [split]
    train_start = "2010-03-17"
    train_end = "2023-08-02"
    test_start = "2023-08-07"
    test_end = "2024-02-20"

    [env]        # cost_rate, freq, risk_free, episode_steps, window
    [network]    # conv_channels, pools, fc_widths, init_log_std
    [ppo]        # PpoConfig fields
    [baselines]
    strategies = ["EqualWeight", "MV-MinRisk", "HRP-4yr"]
"""

from __future__ import annotations

import dataclasses
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path

import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .baselines import BaselineSpec
from .env import EnvConfig
from .errors import ConfigError, PortfolioDrlError
from .market_data import AssetSpec, MarketDataset, load_csv, synthetic_market
from .network import NetworkSpec
from .ppo import PpoConfig

DEFAULT_STRATEGIES = ("EqualWeight", "MV-MinRisk", "MV-Sharpe", "RP", "HRP")


@dataclass(frozen=True)
class SyntheticSpec:
    assets: tuple
    days: int
    start_date: str = "2010-01-04"
    seed: int = 0


@dataclass(frozen=True)
class DataSource:
    csv: str | None = None
    symbols: tuple | None = None
    synthetic: SyntheticSpec | None = None


@dataclass(frozen=True)
class Split:
    train_start: dt.date
    train_end: dt.date
    test_start: dt.date
    test_end: dt.date


@dataclass(frozen=True)
class RunConfig:
    data: DataSource
    split: Split
    env: EnvConfig = EnvConfig()
    network: dict = field(default_factory=dict)
    ppo: PpoConfig = PpoConfig()
    strategies: tuple = DEFAULT_STRATEGIES
    output_dir: str = "out"
    seed: int = 0
    base_dir: Path = field(default=Path("."), compare=False)

    def net_spec(self, asset_count: int) -> NetworkSpec:
        return NetworkSpec(asset_count=asset_count, window=self.env.window, **self.network)

    def csv_path(self) -> Path | None:
        return None if self.data.csv is None else (self.base_dir / self.data.csv)

    def load_dataset(self) -> MarketDataset:
        if self.data.synthetic is not None:
            s = self.data.synthetic
            return synthetic_market(s.assets, s.days, s.seed, s.start_date)
        return load_csv(self.csv_path(), self.data.symbols)

    def baseline_specs(self) -> list[BaselineSpec]:
        return [BaselineSpec.parse(s) for s in self.strategies]

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, seed=seed, ppo=dataclasses.replace(self.ppo, seed=seed))

    def to_dict(self) -> dict:
        out = {"seed": self.seed, "output_dir": self.output_dir}
        data = {}
        if self.data.csv is not None:
            data["csv"] = self.data.csv
        if self.data.symbols is not None:
            data["symbols"] = list(self.data.symbols)
        if self.data.synthetic is not None:
            s = self.data.synthetic
            data["synthetic"] = {
                "days": s.days, "start_date": s.start_date, "seed": s.seed,
                "assets": [dataclasses.asdict(a) for a in s.assets],
            }
        out["data"] = data
        out["split"] = {k: getattr(self.split, k) for k in ("train_start", "train_end", "test_start", "test_end")}
        env = dataclasses.asdict(self.env)
        if env["asset_count"] is None:
            del env["asset_count"]
        out["env"] = env
        out["network"] = {k: [list(x) for x in v] if k in ("conv_channels", "pools") else
                          list(v) if isinstance(v, tuple) else v for k, v in self.network.items()}
        out["ppo"] = {k: v for k, v in dataclasses.asdict(self.ppo).items() if k != "seed"}
        out["baselines"] = {"strategies": list(self.strategies)}
        return out

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())


def _section(raw: dict, name: str, allowed) -> dict:
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"{name}: expected a table")
    unknown = sorted(set(sec) - set(allowed))
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}: unknown key")
    return sec


def _build(path: str, cls, kwargs):
    try:
        return cls(**kwargs)
    except (ValueError, TypeError, PortfolioDrlError) as exc:
        msg = str(exc)
        for key in kwargs:
            if key in msg:
                raise ConfigError(f"{path}.{key}: {msg}") from None
        raise ConfigError(f"{path}: {msg}") from None


def _date(path, value):
    if isinstance(value, dt.date):
        return value
    try:
        return dt.date.fromisoformat(str(value))
    except ValueError:
        raise ConfigError(f"{path}: not an ISO date: {value!r}") from None


def from_dict(raw: dict, base_dir: Path = Path("."), check_paths: bool = True) -> RunConfig:
    top = {"seed", "output_dir", "data", "split", "env", "network", "ppo", "baselines"}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed: must be an integer")

    d = _section(raw, "data", ("csv", "symbols", "synthetic"))
    if ("csv" in d) == ("synthetic" in d):
        raise ConfigError("data: give exactly one of data.csv or data.synthetic")
    synthetic = None
    if "synthetic" in d:
        s = _section(d, "synthetic", ("days", "start_date", "seed", "assets"))
        if not s.get("assets"):
            raise ConfigError("data.synthetic.assets: at least one asset required")
        assets = tuple(_build(f"data.synthetic.assets[{i}]", AssetSpec, a) for i, a in enumerate(s["assets"]))
        if "days" not in s:
            raise ConfigError("data.synthetic.days: required")
        synthetic = SyntheticSpec(assets, int(s["days"]), str(s.get("start_date", "2010-01-04")),
                                  int(s.get("seed", 0)))
    data = DataSource(d.get("csv"), tuple(d["symbols"]) if "symbols" in d else None, synthetic)
    if check_paths and data.csv is not None and not (base_dir / data.csv).is_file():
        raise ConfigError(f"data.csv: file not found: {base_dir / data.csv}")

    sp = _section(raw, "split", ("train_start", "train_end", "test_start", "test_end"))
    for key in ("train_start", "train_end", "test_start", "test_end"):
        if key not in sp:
            raise ConfigError(f"split.{key}: required")
    split = Split(*(_date(f"split.{k}", sp[k]) for k in ("train_start", "train_end", "test_start", "test_end")))
    if split.train_start > split.train_end:
        raise ConfigError("split.train_end: before train_start")
    if split.test_start > split.test_end:
        raise ConfigError("split.test_end: before test_start")
    if split.test_start <= split.train_end:
        raise ConfigError("split.test_start: test range must start after train_end")

    env = _build("env", EnvConfig, _section(raw, "env", [f.name for f in dataclasses.fields(EnvConfig)]))
    net = dict(_section(raw, "network", ("conv_channels", "pools", "fc_widths", "init_log_std")))
    _build("network", NetworkSpec, {"asset_count": 1, "window": env.window, **net})
    ppo_raw = _section(raw, "ppo", [f.name for f in dataclasses.fields(PpoConfig) if f.name != "seed"])
    ppo = _build("ppo", PpoConfig, {**ppo_raw, "seed": seed})
    if ppo.total_steps < env.episode_steps:
        raise ConfigError("ppo.total_steps: must be >= env.episode_steps")
    b = _section(raw, "baselines", ("strategies",))
    strategies = tuple(b.get("strategies", DEFAULT_STRATEGIES))
    for i, name in enumerate(strategies):
        try:
            BaselineSpec.parse(name)
        except PortfolioDrlError as exc:
            raise ConfigError(f"baselines.strategies[{i}]: {exc}") from None
    return RunConfig(data, split, env, net, ppo, strategies, str(raw.get("output_dir", "out")), seed, base_dir)


def loads(text: str, base_dir: Path = Path("."), check_paths: bool = True) -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"<config>: {exc}") from None
    return from_dict(raw, base_dir, check_paths)


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return loads(text, path.parent)
