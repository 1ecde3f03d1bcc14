"""Flat JSON run configuration with named profiles.

Precedence, lowest first: built-in defaults, the selected profile, the
config file, then command-line overrides.  The merged result is what gets
echoed to ``effective_config.json``; feeding that echo back as ``--config``
reproduces the run.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .channel import DEFAULT_CARRIER_HZ, DEFAULT_INTERVAL_S
from .experiment import PAPER_EBN0_GRID, PAPER_SPEEDS, POLICIES, ChannelParams, ExperimentPlan
from .link import PAYLOAD_BITS, LatencyModel, LinkConfig, RewardWeights
from .qcldpc import DEFAULT_MAX_ITERATIONS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # grid and protocol
    speeds: tuple[float, ...] = PAPER_SPEEDS
    ebn0_grid: tuple[float, ...] = PAPER_EBN0_GRID
    t_train: int = 6000
    t_val: int = 6000
    eval_trials: int = 30000
    seeds: tuple[int, ...] = (0,)
    policies: tuple[str, ...] = POLICIES
    train_snr_mode: str = "uniform"
    learn_during_eval: bool = False
    restart_channel_per_trial: bool = False
    # policy
    alpha: float = 2.0
    gamma: float = 0.998
    lambda_reg: float = 1.0
    # channel
    carrier_hz: float = DEFAULT_CARRIER_HZ
    interval_s: float = DEFAULT_INTERVAL_S
    p01: float = 0.05
    p11: float = 0.90
    interference_boost_db: float = 10.0
    deep_fade_threshold: float = 0.3
    snr_obs_noise_db: float = 0.8
    receiver_knows_interference: bool = False
    # link
    payload_bits: int = PAYLOAD_BITS
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    zero_noise: bool = False
    # latency
    tti_ms: float = 1.0
    base_stack_ms: float = 0.5
    iter_cost_ms: float = 0.08
    pdb_ms: float = 5.0
    bandwidth_mhz: float = 20.0
    # reward
    w_g: float = 1.0
    w_de: float = 0.2
    w_ue: float = 5.0
    w_dm: float = 3.0
    deadline_penalty: bool = True
    # output
    out_dir: str = "results"

    def to_dict(self) -> dict[str, Any]:
        return {f.name: _jsonable(getattr(self, f.name)) for f in dataclasses.fields(self)}

    def to_json(self) -> str:
        # the output location does not affect results, so the echo omits it
        echo = {k: v for k, v in self.to_dict().items() if k != "out_dir"}
        return json.dumps(echo, indent=2) + "\n"

    def plan(self) -> ExperimentPlan:
        """Build (and thereby validate) the experiment plan."""
        try:
            return ExperimentPlan(
                speeds=self.speeds,
                ebn0_grid=self.ebn0_grid,
                t_train=self.t_train,
                t_val=self.t_val,
                eval_trials=self.eval_trials,
                seeds=self.seeds,
                policies=self.policies,
                alpha=self.alpha,
                gamma=self.gamma,
                lambda_reg=self.lambda_reg,
                link=LinkConfig(
                    payload_bits=self.payload_bits,
                    max_iterations=self.max_iterations,
                    deep_fade_threshold=self.deep_fade_threshold,
                    snr_obs_noise_db=self.snr_obs_noise_db,
                    receiver_knows_interference=self.receiver_knows_interference,
                    zero_noise=self.zero_noise,
                    latency=LatencyModel(
                        self.tti_ms, self.base_stack_ms, self.iter_cost_ms, self.pdb_ms, self.bandwidth_mhz
                    ),
                ),
                weights=RewardWeights(self.w_g, self.w_de, self.w_ue, self.w_dm, self.deadline_penalty),
                channel=ChannelParams(self.p01, self.p11, self.interference_boost_db, self.carrier_hz, self.interval_s),
                train_snr_mode=self.train_snr_mode,
                learn_during_eval=self.learn_during_eval,
                restart_channel_per_trial=self.restart_channel_per_trial,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


PROFILES: dict[str, dict[str, Any]] = {
    "paper": {},
    "desk": {"t_train": 2000, "eval_trials": 5000, "seeds": [0, 1, 2]},
}

_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_ELEMENT_TYPES = {"speeds": float, "ebn0_grid": float, "seeds": int, "policies": str}


def _jsonable(v):
    return list(v) if isinstance(v, tuple) else v


def _coerce(name: str, value: Any) -> Any:
    default = getattr(RunConfig, name)
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{name}: expected a list, got {type(value).__name__}")
        elem = _ELEMENT_TYPES[name]
        return tuple(_coerce_scalar(f"{name}[{i}]", elem, v) for i, v in enumerate(value))
    return _coerce_scalar(name, type(default), value)


def _coerce_scalar(name: str, kind: type, value: Any) -> Any:
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true/false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return value
    if not isinstance(value, str):
        raise ConfigError(f"{name}: expected a string, got {value!r}")
    return value


def merge(base: RunConfig, overrides: Mapping[str, Any]) -> RunConfig:
    unknown = sorted(set(overrides) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    return dataclasses.replace(base, **{k: _coerce(k, v) for k, v in overrides.items()})


def load_config_file(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return data


def build_config(
    profile: str = "desk",
    config_path: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> RunConfig:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    cfg = merge(RunConfig(), PROFILES[profile])
    if config_path is not None:
        cfg = merge(cfg, load_config_file(config_path))
    if overrides:
        cfg = merge(cfg, overrides)
    cfg.plan()
    return cfg
