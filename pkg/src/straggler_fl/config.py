"""Scenario configuration.

Configs are TOML files written with flat dotted keys (``stragglers.ratio =
0.3``); ``[section]`` tables work too. Every validation failure raises
:class:`~straggler_fl.errors.ConfigError` naming the field and, when the
value came from a file, the line it sits on.
"""

from __future__ import annotations

import dataclasses
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

__all__ = [
    "STRATEGIES",
    "ScenarioConfig",
    "FedLesScanParams",
    "FedProxParams",
    "StragglerParams",
    "LatencyParams",
    "TrainParams",
    "DataParams",
    "EvalParams",
    "CostParams",
    "load_config",
    "parse_config",
]

STRATEGIES = ("fedavg", "fedprox", "fedlesscan")


@dataclass(frozen=True)
class FedLesScanParams:
    alpha: float = 0.5
    tau: int = 2
    renormalize: bool = False
    min_samples: int = 2


@dataclass(frozen=True)
class FedProxParams:
    mu: float = 0.01
    straggler_epoch_multiplier: float = 1.0


@dataclass(frozen=True)
class StragglerParams:
    ratio: float = 0.0
    slow_fraction: float = 0.5
    fixed_set: tuple = ()
    slow_delay_min: float = 1.05
    slow_delay_max: float = 1.5


@dataclass(frozen=True)
class LatencyParams:
    median_min: float = 4.0
    median_max: float = 16.0
    sigma: float = 0.1
    cold_start_penalty: float = 4.0
    cold_start_idle_threshold: int = 2
    jitter_mean: float = 0.5


@dataclass(frozen=True)
class TrainParams:
    model: str = "softmax"
    hidden: int = 16
    local_epochs: int = 2
    batch_size: int = 16
    learning_rate: float = 0.1


@dataclass(frozen=True)
class DataParams:
    kind: str = "synthetic"
    partition: str = "noniid"
    n_classes: int = 4
    n_features: int = 10
    samples_per_client: int = 100
    separation: float = 4.0
    noise: float = 1.0
    shards_per_client: int = 2
    test_fraction: float = 0.2
    mnist_images: str = ""
    mnist_labels: str = ""


@dataclass(frozen=True)
class EvalParams:
    sample: int = 0


@dataclass(frozen=True)
class CostParams:
    price_per_invocation: float = 4e-7
    price_per_gb_second: float = 2.5e-5
    allocated_memory: float = 2.0
    duration_rounding: float = 0.1


_SECTIONS = {
    "fedlesscan": FedLesScanParams,
    "fedprox": FedProxParams,
    "stragglers": StragglerParams,
    "latency": LatencyParams,
    "train": TrainParams,
    "data": DataParams,
    "eval": EvalParams,
    "cost": CostParams,
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Complete description of one experiment."""

    seed: int = 0
    n_clients: int = 60
    clients_per_round: int = 20
    max_rounds: int = 30
    strategy: str = "fedlesscan"
    timeout: float = 60.0
    fedlesscan: FedLesScanParams = field(default_factory=FedLesScanParams)
    fedprox: FedProxParams = field(default_factory=FedProxParams)
    stragglers: StragglerParams = field(default_factory=StragglerParams)
    latency: LatencyParams = field(default_factory=LatencyParams)
    train: TrainParams = field(default_factory=TrainParams)
    data: DataParams = field(default_factory=DataParams)
    eval: EvalParams = field(default_factory=EvalParams)
    cost: CostParams = field(default_factory=CostParams)

    def __post_init__(self):
        _validate(self)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["stragglers"]["fixed_set"] = list(self.stragglers.fixed_set)
        return out

    def flat(self) -> dict:
        out = {}
        for k, v in self.to_dict().items():
            if isinstance(v, dict):
                out.update({f"{k}.{kk}": vv for kk, vv in v.items()})
            else:
                out[k] = v
        return out

    def with_overrides(self, overrides: Mapping[str, Any]) -> "ScenarioConfig":
        """Copy with dotted-key overrides, e.g. ``{"stragglers.ratio": 0.3}``."""
        return _build(_nest(overrides, base=self.to_dict()))


def _nest(flat: Mapping[str, Any], base: dict | None = None) -> dict:
    out = dict(base or {})
    for key, value in flat.items():
        parts = key.split(".")
        if len(parts) > 2:
            raise ConfigError(f"unknown key {key!r}", field=key)
        if len(parts) == 2:
            out[parts[0]] = dict(out.get(parts[0], {}))
            out[parts[0]][parts[1]] = value
        else:
            out[key] = value
    return out


def _coerce(key: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}", field=key)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}", field=key)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}", field=key)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string, got {value!r}", field=key)
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key} must be a list, got {value!r}", field=key)
        return tuple(value)
    return value


def _build_section(name: str, cls, raw: Any):
    if isinstance(raw, cls):
        return raw
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{name} must be a table of settings", field=name)
    defaults = cls()
    kwargs = {}
    known = {f.name for f in dataclasses.fields(cls)}
    for key, value in raw.items():
        dotted = f"{name}.{key}"
        if key not in known:
            raise ConfigError(f"unknown key {dotted!r}", field=dotted)
        kwargs[key] = _coerce(dotted, value, getattr(defaults, key))
    return cls(**kwargs)


def _build(raw: Mapping[str, Any]) -> ScenarioConfig:
    defaults = ScenarioConfig.__dataclass_fields__
    kwargs = {}
    for key, value in raw.items():
        if key in _SECTIONS:
            kwargs[key] = _build_section(key, _SECTIONS[key], value)
        elif key in defaults:
            kwargs[key] = _coerce(key, value, defaults[key].default)
        else:
            raise ConfigError(f"unknown key {key!r}", field=key)
    return ScenarioConfig(**kwargs)


def _check(cond: bool, key: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{key} {message}", field=key)


def _validate(c: ScenarioConfig) -> None:
    _check(c.n_clients >= 1, "n_clients", "must be >= 1")
    _check(c.clients_per_round >= 1, "clients_per_round", "must be >= 1")
    _check(
        c.clients_per_round <= c.n_clients,
        "clients_per_round",
        f"({c.clients_per_round}) must not exceed n_clients ({c.n_clients})",
    )
    _check(c.max_rounds >= 1, "max_rounds", "must be >= 1")
    _check(c.strategy in STRATEGIES, "strategy", f"must be one of {', '.join(STRATEGIES)}")
    _check(c.timeout > 0, "timeout", "must be positive")

    f = c.fedlesscan
    _check(0 < f.alpha <= 1, "fedlesscan.alpha", "must lie in (0, 1]")
    _check(f.tau >= 1, "fedlesscan.tau", "must be >= 1")
    _check(f.min_samples >= 1, "fedlesscan.min_samples", "must be >= 1")
    _check(c.fedprox.mu >= 0, "fedprox.mu", "must be non-negative")
    _check(c.fedprox.straggler_epoch_multiplier >= 0, "fedprox.straggler_epoch_multiplier", "must be non-negative")

    s = c.stragglers
    _check(0 <= s.ratio <= 1, "stragglers.ratio", "must lie in [0, 1]")
    _check(0 <= s.slow_fraction <= 1, "stragglers.slow_fraction", "must lie in [0, 1]")
    _check(1 < s.slow_delay_min <= s.slow_delay_max, "stragglers.slow_delay_min",
           "must exceed 1 and not exceed stragglers.slow_delay_max")
    for item in s.fixed_set:
        _check(isinstance(item, int) and not isinstance(item, bool) and 0 <= item < c.n_clients,
               "stragglers.fixed_set", f"entries must be client indices in 0..{c.n_clients - 1}")
    _check(len(set(s.fixed_set)) == len(s.fixed_set), "stragglers.fixed_set", "has duplicates")

    lat = c.latency
    _check(0 < lat.median_min <= lat.median_max, "latency.median_min", "must be positive and <= latency.median_max")
    _check(lat.sigma >= 0, "latency.sigma", "must be non-negative")
    _check(lat.cold_start_penalty >= 0, "latency.cold_start_penalty", "must be non-negative")
    _check(lat.cold_start_idle_threshold >= 0, "latency.cold_start_idle_threshold", "must be non-negative")
    _check(lat.jitter_mean >= 0, "latency.jitter_mean", "must be non-negative")

    t = c.train
    _check(t.model in ("softmax", "mlp"), "train.model", "must be softmax or mlp")
    _check(t.hidden >= 1, "train.hidden", "must be >= 1")
    _check(t.local_epochs >= 1, "train.local_epochs", "must be >= 1")
    _check(t.batch_size >= 1, "train.batch_size", "must be >= 1")
    _check(t.learning_rate > 0, "train.learning_rate", "must be positive")

    d = c.data
    _check(d.kind in ("synthetic", "mnist"), "data.kind", "must be synthetic or mnist")
    _check(d.partition in ("noniid", "iid"), "data.partition", "must be noniid or iid")
    _check(d.n_classes >= 2, "data.n_classes", "must be >= 2")
    _check(d.n_features >= 1, "data.n_features", "must be >= 1")
    _check(d.samples_per_client >= 2, "data.samples_per_client", "must be >= 2")
    _check(d.shards_per_client >= 1, "data.shards_per_client", "must be >= 1")
    _check(0 < d.test_fraction < 1, "data.test_fraction", "must lie in (0, 1)")
    if d.kind == "mnist":
        _check(bool(d.mnist_images), "data.mnist_images", "is required for mnist data")
        _check(bool(d.mnist_labels), "data.mnist_labels", "is required for mnist data")

    _check(0 <= c.eval.sample <= c.n_clients, "eval.sample", f"must lie in 0..{c.n_clients} (0 = all)")
    cost = c.cost
    for name in ("price_per_invocation", "price_per_gb_second", "allocated_memory", "duration_rounding"):
        _check(getattr(cost, name) >= 0, f"cost.{name}", "must be non-negative")


_TABLE = re.compile(r"^\s*\[\s*([A-Za-z0-9_.\-]+)\s*\]\s*(#.*)?$")
_KEY = re.compile(r"^\s*([A-Za-z0-9_.\-]+)\s*=")


def _key_lines(text: str) -> dict:
    """Map each dotted key to the 1-based line that sets it."""
    lines = {}
    table = ""
    for no, line in enumerate(text.splitlines(), start=1):
        m = _TABLE.match(line)
        if m:
            table = m.group(1)
            lines.setdefault(table, no)
            continue
        m = _KEY.match(line)
        if m:
            lines[f"{table}.{m.group(1)}" if table else m.group(1)] = no
    return lines


def parse_config(text: str, path: str | None = None) -> ScenarioConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        if line is None:
            m = re.search(r"line (\d+)", str(exc))
            line = int(m.group(1)) if m else None
        raise ConfigError(f"syntax error: {exc}", line=line, path=path) from None
    try:
        return _build(raw)
    except ConfigError as exc:
        field_ = exc.field
        line = _key_lines(text).get(field_) if field_ else None
        message = str(exc)
        raise ConfigError(message, field=field_, line=line, path=path) from None


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path=str(path)) from None
    return parse_config(text, str(path))
