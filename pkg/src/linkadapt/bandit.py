"""Discounted LinUCB, greedy and fixed configuration policies."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

N_ARMS = 12
DIM = 5
SNAPSHOT_FORMAT = "linkadapt-policy"
SNAPSHOT_VERSION = 1


@dataclass
class ArmState:
    """Discounted ridge statistics for one configuration."""

    A: np.ndarray
    B: np.ndarray
    theta: np.ndarray
    update_count: int = 0

    @classmethod
    def fresh(cls, dim: int = DIM, lambda_reg: float = 1.0) -> "ArmState":
        return cls(lambda_reg * np.eye(dim), np.zeros(dim), np.zeros(dim))


def ucb_score(arm: ArmState, x: np.ndarray, alpha: float) -> float:
    """``theta^T x + alpha * sqrt(x^T A^{-1} x)``."""
    x = np.asarray(x, dtype=np.float64)
    width = float(x @ np.linalg.solve(arm.A, x))
    return float(arm.theta @ x) + alpha * np.sqrt(max(width, 0.0))


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = "linucb"
    alpha: float = 2.0
    gamma: float = 0.998
    lambda_reg: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("linucb", "greedy"):
            raise ValueError(f"unknown learning policy kind {self.kind!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.lambda_reg <= 0:
            raise ValueError("lambda_reg must be positive")

    @property
    def exploration(self) -> float:
        # greedy is LinUCB with zero exploration width
        return 0.0 if self.kind == "greedy" else self.alpha


class LinUCBPolicy:
    """Disjoint discounted LinUCB over ``n_arms`` configurations.

    Only the chosen arm is discounted and updated each round.  Ties in the
    score are broken uniformly at random with the caller's generator.
    """

    def __init__(self, config: PolicyConfig = PolicyConfig(), n_arms: int = N_ARMS, dim: int = DIM):
        self.config = config
        self.arms = [ArmState.fresh(dim, config.lambda_reg) for _ in range(n_arms)]

    @property
    def kind(self) -> str:
        return self.config.kind

    def scores(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        A = np.stack([a.A for a in self.arms])
        theta = np.stack([a.theta for a in self.arms])
        Ainv_x = np.linalg.solve(A, np.broadcast_to(x, (len(self.arms), x.size))[..., None])[..., 0]
        width = np.sqrt(np.maximum(Ainv_x @ x, 0.0))
        return theta @ x + self.config.exploration * width

    def select_action(self, x, rng: np.random.Generator) -> int:
        s = self.scores(x)
        ties = np.flatnonzero(s == s.max())
        # always draw so the generator advances identically on every step
        return int(ties[rng.integers(ties.size)])

    def update(self, action: int, x, reward: float) -> None:
        arm = self.arms[action]
        x = np.asarray(x, dtype=np.float64)
        g = self.config.gamma
        arm.A = g * arm.A + np.outer(x, x)
        arm.B = g * arm.B + reward * x
        np.linalg.cholesky(arm.A)  # raises LinAlgError if A lost positive definiteness
        arm.theta = np.linalg.solve(arm.A, arm.B)
        arm.update_count += 1

    def is_spd(self) -> bool:
        return all(np.linalg.eigvalsh(a.A).min() > 0 for a in self.arms)

    def to_snapshot(self) -> dict:
        return {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "kind": self.config.kind,
            "alpha": self.config.alpha,
            "gamma": self.config.gamma,
            "lambda_reg": self.config.lambda_reg,
            "arms": [
                {"A": a.A.tolist(), "B": a.B.tolist(), "count": a.update_count} for a in self.arms
            ],
        }

    @classmethod
    def from_snapshot(cls, snap: Mapping) -> "LinUCBPolicy":
        _check_header(snap)
        cfg = PolicyConfig(snap["kind"], snap["alpha"], snap["gamma"], snap["lambda_reg"])
        arms = snap["arms"]
        policy = cls(cfg, n_arms=len(arms), dim=len(arms[0]["B"]))
        for arm, rec in zip(policy.arms, arms):
            arm.A = np.array(rec["A"], dtype=np.float64)
            arm.B = np.array(rec["B"], dtype=np.float64)
            arm.theta = np.linalg.solve(arm.A, arm.B)
            arm.update_count = int(rec["count"])
        return policy


@dataclass(frozen=True)
class ActionStats:
    p_ue: float
    p_de: float
    rate: float


@dataclass(frozen=True)
class FixedChoice:
    """Offline choice for one speed and the validation statistics behind it."""

    action: int
    stats: dict[int, ActionStats] = field(default_factory=dict)


class FixedPolicy:
    kind = "fixed"

    def __init__(self, choice: FixedChoice):
        self.choice = choice

    def select_action(self, x, rng: np.random.Generator) -> int:
        rng.integers(1)  # keep stream alignment with the learning policies
        return self.choice.action

    def update(self, action: int, x, reward: float) -> None:
        pass

    def to_snapshot(self) -> dict:
        return {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "kind": "fixed",
            "action": self.choice.action,
            "stats": {
                str(a): [s.p_ue, s.p_de, s.rate] for a, s in sorted(self.choice.stats.items())
            },
        }

    @classmethod
    def from_snapshot(cls, snap: Mapping) -> "FixedPolicy":
        _check_header(snap)
        stats = {int(a): ActionStats(*v) for a, v in snap.get("stats", {}).items()}
        return cls(FixedChoice(int(snap["action"]), stats))


def fixed_best_select(stats: Mapping[int, ActionStats], n_arms: int = N_ARMS) -> int:
    """Minimum validation P_UE; ties go to lower P_DE, then higher rate, then lower index."""
    missing = sorted(set(range(n_arms)) - set(stats))
    if missing:
        raise ValueError(f"validation statistics missing for actions {missing}")
    return min(range(n_arms), key=lambda a: (stats[a].p_ue, stats[a].p_de, -stats[a].rate, a))


def _check_header(snap: Mapping) -> None:
    if snap.get("format") != SNAPSHOT_FORMAT:
        raise ValueError("not a policy snapshot")
    if snap.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {snap.get('version')}")


def dump_snapshot(snap: Mapping) -> str:
    return json.dumps(snap, sort_keys=True, indent=1) + "\n"


def load_policy(text: str):
    snap = json.loads(text)
    if snap.get("kind") == "fixed":
        return FixedPolicy.from_snapshot(snap)
    return LinUCBPolicy.from_snapshot(snap)
