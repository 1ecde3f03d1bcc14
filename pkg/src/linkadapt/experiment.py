"""Training, FixedBest validation and rare-event evaluation over a grid.

Every stochastic stream is seeded from ``derive_seed(master, *coords)``, a
SHA-256 of the master seed and the cell coordinates, so results do not
depend on execution order or worker count.  Streams that feed the channel
exclude the policy from their coordinates: all policies in a cell see the
same payloads, fading, interference and noise.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import math
import statistics
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import beta

from .bandit import ActionStats, FixedChoice, FixedPolicy, LinUCBPolicy, PolicyConfig, fixed_best_select
from .channel import ChannelState, MobilityProfile
from .link import (
    Kind,
    LinkConfig,
    RewardWeights,
    action_space,
    compute_reward,
    observe_context,
    run_transmission,
)

POLICIES = ("linucb", "greedy", "fixed")
PAPER_SPEEDS = (0, 60, 120, 180, 250)
PAPER_EBN0_GRID = (-5, 0, 5, 10, 15, 20, 25)


@dataclass(frozen=True)
class ChannelParams:
    p01: float = 0.05
    p11: float = 0.90
    interference_boost_db: float = 10.0
    carrier_hz: float = 5.9e9
    interval_s: float = 1e-3

    def __post_init__(self) -> None:
        for name in ("p01", "p11"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.carrier_hz <= 0 or self.interval_s <= 0:
            raise ValueError("carrier_hz and interval_s must be positive")


@dataclass(frozen=True)
class ExperimentPlan:
    speeds: tuple[float, ...] = PAPER_SPEEDS
    ebn0_grid: tuple[float, ...] = PAPER_EBN0_GRID
    t_train: int = 6000
    t_val: int = 6000
    eval_trials: int = 30000
    seeds: tuple[int, ...] = (0,)
    policies: tuple[str, ...] = POLICIES
    alpha: float = 2.0
    gamma: float = 0.998
    lambda_reg: float = 1.0
    link: LinkConfig = field(default_factory=LinkConfig)
    weights: RewardWeights = field(default_factory=RewardWeights)
    channel: ChannelParams = field(default_factory=ChannelParams)
    train_snr_mode: str = "uniform"  # or "per_cell"
    learn_during_eval: bool = False
    restart_channel_per_trial: bool = False

    def __post_init__(self) -> None:
        if not self.speeds or not self.ebn0_grid or not self.seeds or not self.policies:
            raise ValueError("speeds, ebn0_grid, seeds and policies must be non-empty")
        for name in ("t_train", "t_val", "eval_trials"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        unknown = set(self.policies) - set(POLICIES)
        if unknown:
            raise ValueError(f"unknown policies {sorted(unknown)}")
        if self.train_snr_mode not in ("uniform", "per_cell"):
            raise ValueError(f"unknown train_snr_mode {self.train_snr_mode!r}")
        if any(v < 0 for v in self.speeds):
            raise ValueError("speeds must be non-negative")

    def policy_config(self, kind: str) -> PolicyConfig:
        return PolicyConfig(kind, self.alpha, self.gamma, self.lambda_reg)

    def profile(self, speed: float) -> MobilityProfile:
        return MobilityProfile(speed, self.channel.carrier_hz, self.channel.interval_s)

    def new_channel(self, rng: np.random.Generator) -> ChannelState:
        c = self.channel
        return ChannelState.initial(rng, p01=c.p01, p11=c.p11, interference_boost_db=c.interference_boost_db)


def derive_seed(master: int, *coords) -> int:
    key = "|".join([str(int(master))] + [repr(c) for c in coords])
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "big")


def _rng(master: int, *coords) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *coords))


def _num(x: float) -> float | int:
    # canonical coordinate so 60 and 60.0 derive the same seed
    return int(x) if float(x).is_integer() else float(x)


# --- metrics -----------------------------------------------------------------


def ue_upper_bound(n_ue: int, M: int, confidence: float = 0.95) -> float:
    """One-sided upper confidence limit on P_UE.

    Zero observed events give the rule of three, ``3/M`` (the exact value is
    ``-ln(0.05)/M``, rounded up).  Otherwise the Clopper-Pearson limit.
    """
    if M <= 0:
        raise ValueError("M must be positive")
    if not 0 <= n_ue <= M:
        raise ValueError(f"n_ue must lie in [0, {M}]")
    if n_ue == 0:
        return 3.0 / M if confidence == 0.95 else -math.log(1.0 - confidence) / M
    if n_ue == M:
        return 1.0
    return float(beta.ppf(confidence, n_ue + 1, M - n_ue))


@dataclass(frozen=True)
class MetricsRecord:
    speed: float
    ebn0_db: float
    policy: str
    seed: int
    trials: int
    n_ok: int
    n_de: int
    n_ue: int
    p_ue: float
    p_de: float
    p_ue_upper95: float
    mean_reward: float
    mean_iterations: float
    deadline_miss_rate: float
    action_histogram: tuple[int, ...]


class _Tally:
    def __init__(self, n_actions: int):
        self.counts = {k: 0 for k in Kind}
        self.reward = 0.0
        self.iterations = 0
        self.misses = 0
        self.hist = [0] * n_actions
        self.m = 0

    def add(self, outcome, reward: float) -> None:
        self.counts[outcome.kind] += 1
        self.reward += reward
        self.iterations += outcome.decoder_iterations
        self.misses += outcome.deadline_miss
        self.hist[outcome.action] += 1
        self.m += 1

    def record(self, speed, ebn0_db, policy, seed) -> MetricsRecord:
        M = self.m
        n_ue = self.counts[Kind.UE]
        return MetricsRecord(
            speed=speed,
            ebn0_db=ebn0_db,
            policy=policy,
            seed=seed,
            trials=M,
            n_ok=self.counts[Kind.OK],
            n_de=self.counts[Kind.DE],
            n_ue=n_ue,
            p_ue=n_ue / M,
            p_de=self.counts[Kind.DE] / M,
            p_ue_upper95=ue_upper_bound(n_ue, M),
            mean_reward=self.reward / M,
            mean_iterations=self.iterations / M,
            deadline_miss_rate=self.misses / M,
            action_histogram=tuple(self.hist),
        )


# --- protocol stages ------------------------------------------------------------


@dataclass
class TrainResult:
    policy: LinUCBPolicy
    running_p_ue: np.ndarray  # cumulative-average UE indicator per step


def train_policy(kind: str, speed: float, plan: ExperimentPlan, seed: int, ebn0_db: float | None = None) -> TrainResult:
    """Online training for ``t_train`` packets at one speed.

    Each step draws Eb/N0 uniformly from the evaluation grid unless
    ``ebn0_db`` pins it.
    """
    if kind not in ("linucb", "greedy"):
        raise ValueError(f"cannot train policy kind {kind!r}")
    speed = _num(speed)
    coords = ("train", speed) if ebn0_db is None else ("train", speed, _num(ebn0_db))
    rng = _rng(seed, *coords)
    tie_rng = _rng(seed, *coords, "ties")
    policy = LinUCBPolicy(plan.policy_config(kind))
    actions = action_space()
    profile = plan.profile(speed)
    chan = plan.new_channel(rng)
    grid = np.asarray(plan.ebn0_grid, dtype=np.float64)
    prev = None
    ue = np.zeros(plan.t_train)
    for t in range(plan.t_train):
        eb = float(grid[rng.integers(grid.size)])
        if ebn0_db is not None:
            eb = float(ebn0_db)
        x = observe_context(prev)
        a = policy.select_action(x, tie_rng)
        out = run_transmission(actions[a], chan, profile, eb, rng, plan.link)
        policy.update(a, x, compute_reward(out, plan.weights))
        ue[t] = out.kind is Kind.UE
        prev = out
    return TrainResult(policy, np.cumsum(ue) / np.arange(1, plan.t_train + 1))


def validate_fixed(speed: float, plan: ExperimentPlan, seed: int, ebn0_db: float | None = None) -> FixedChoice:
    """Pick the FixedBest configuration from ``t_val`` validation packets.

    Actions are cycled round-robin over one continuous channel stream, so each
    gets ``t_val // 12`` packets spread over the same fading history.
    """
    speed = _num(speed)
    coords = ("val", speed) if ebn0_db is None else ("val", speed, _num(ebn0_db))
    rng = _rng(seed, *coords)
    actions = action_space()
    n_act = len(actions)
    per_action = plan.t_val // n_act
    if per_action < 1:
        raise ValueError(f"t_val={plan.t_val} leaves no packets per action")
    profile = plan.profile(speed)
    chan = plan.new_channel(rng)
    grid = np.asarray(plan.ebn0_grid, dtype=np.float64)
    n_ue = [0] * n_act
    n_de = [0] * n_act
    for t in range(per_action * n_act):
        eb = float(grid[rng.integers(grid.size)]) if ebn0_db is None else float(ebn0_db)
        a = t % n_act
        out = run_transmission(actions[a], chan, profile, eb, rng, plan.link)
        n_ue[a] += out.kind is Kind.UE
        n_de[a] += out.kind is Kind.DE
    stats = {a: ActionStats(n_ue[a] / per_action, n_de[a] / per_action, actions[a].rate) for a in range(n_act)}
    return FixedChoice(fixed_best_select(stats, n_act), stats)


def evaluate(policy, speed: float, ebn0_db: float, trials: int, plan: ExperimentPlan, seed: int) -> MetricsRecord:
    """Run ``trials`` packets with a frozen policy and aggregate the outcomes.

    Context still flows from each packet to the next.  With
    ``plan.learn_during_eval`` a copy of the policy keeps learning instead.
    """
    speed, ebn0_db = _num(speed), _num(ebn0_db)
    rng = _rng(seed, "eval", speed, ebn0_db)
    tie_rng = _rng(seed, "eval", speed, ebn0_db, "ties")
    if plan.learn_during_eval:
        policy = copy.deepcopy(policy)
    actions = action_space()
    profile = plan.profile(speed)
    chan = plan.new_channel(rng)
    tally = _Tally(len(actions))
    prev = None
    for _ in range(trials):
        if plan.restart_channel_per_trial:
            chan = plan.new_channel(rng)
        x = observe_context(prev)
        a = policy.select_action(x, tie_rng)
        out = run_transmission(actions[a], chan, profile, float(ebn0_db), rng, plan.link)
        r = compute_reward(out, plan.weights)
        if plan.learn_during_eval:
            policy.update(a, x, r)
        tally.add(out, r)
        prev = out
    return tally.record(speed, ebn0_db, policy.kind, seed)


# --- grid --------------------------------------------------------------------


@dataclass(frozen=True)
class SeriesRow:
    step: int
    cum_p_ue: float
    speed: float
    policy: str
    seed: int


@dataclass(frozen=True)
class FixedRow:
    speed: float
    seed: int
    choice: FixedChoice


@dataclass
class GridResult:
    records: list[MetricsRecord]
    series: list[SeriesRow]
    fixed: list[FixedRow]
    snapshots: dict[str, dict] = field(default_factory=dict)  # file stem -> policy snapshot


class GridError(RuntimeError):
    def __init__(self, failures: list[tuple[tuple, BaseException]]):
        self.failures = failures
        lines = [f"  seed={s}, speed={v}: {type(e).__name__}: {e}" for (s, v), e in failures]
        super().__init__(f"{len(failures)} grid cell(s) failed:\n" + "\n".join(lines))


def _snapshot_name(kind: str, speed, seed: int, ebn0) -> str:
    name = f"{kind}_v{_num(speed)}_s{seed}"
    return name if ebn0 is None else f"{name}_e{ebn0}"


def _run_speed(plan: ExperimentPlan, seed: int, speed: float) -> GridResult:
    """Everything for one (seed, speed): training, validation and evaluation."""
    out = GridResult([], [], [])
    per_cell = plan.train_snr_mode == "per_cell"
    snr_keys = [_num(e) for e in plan.ebn0_grid] if per_cell else [None]
    learned: dict[tuple[str, object], LinUCBPolicy] = {}
    fixed: dict[object, FixedPolicy] = {}
    for key in snr_keys:
        for kind in ("linucb", "greedy"):
            if kind in plan.policies:
                res = train_policy(kind, speed, plan, seed, key)
                learned[kind, key] = res.policy
                out.snapshots[_snapshot_name(kind, speed, seed, key)] = res.policy.to_snapshot()
                if key is None:
                    out.series += [
                        SeriesRow(t + 1, float(v), _num(speed), kind, seed) for t, v in enumerate(res.running_p_ue)
                    ]
        if "fixed" in plan.policies:
            choice = validate_fixed(speed, plan, seed, key)
            fixed[key] = FixedPolicy(choice)
            out.snapshots[_snapshot_name("fixed", speed, seed, key)] = fixed[key].to_snapshot()
            if key is None:
                out.fixed.append(FixedRow(_num(speed), seed, choice))
    for eb in plan.ebn0_grid:
        key = _num(eb) if per_cell else None
        for kind in plan.policies:
            pol = fixed[key] if kind == "fixed" else learned[kind, key]
            out.records.append(evaluate(pol, speed, eb, plan.eval_trials, plan, seed))
    return out


def _run_speed_safe(args):
    plan, seed, speed = args
    try:
        return (seed, speed), _run_speed(plan, seed, speed), None
    except Exception as exc:  # collected and re-raised with cell identity
        return (seed, speed), None, exc


def run_grid(plan: ExperimentPlan, jobs: int = 1) -> GridResult:
    """Train, validate and evaluate every (seed, speed, Eb/N0, policy) cell.

    Units of work are (seed, speed) pairs; with ``jobs > 1`` they run in
    worker processes.  Output order is fixed regardless of ``jobs``.
    """
    units = [(plan, seed, speed) for seed in plan.seeds for speed in plan.speeds]
    if jobs > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_speed_safe, units))
    else:
        results = [_run_speed_safe(u) for u in units]
    failures = [(key, exc) for key, _, exc in results if exc is not None]
    if failures:
        raise GridError(failures)
    merged = GridResult([], [], [])
    for _, res, _ in results:
        merged.records += res.records
        merged.series += res.series
        merged.fixed += res.fixed
        merged.snapshots.update(res.snapshots)
    return merged


# --- summaries -----------------------------------------------------------------


def speed_summary(records: Iterable[MetricsRecord], seed_reduce: str = "mean") -> dict[tuple[float, str], float]:
    """SNR-averaged P_UE per (speed, policy).

    Replicate seeds are first collapsed per (speed, Eb/N0, policy) cell with
    ``seed_reduce`` ("mean" or "median").  Every (speed, policy) must cover
    the full set of Eb/N0 points present in ``records``.
    """
    reducer = {"mean": statistics.fmean, "median": statistics.median}[seed_reduce]
    cells: dict[tuple, list[float]] = defaultdict(list)
    for r in records:
        cells[r.speed, r.policy, r.ebn0_db].append(r.p_ue)
    if not cells:
        raise ValueError("no records to summarize")
    grid = sorted({k[2] for k in cells})
    groups = sorted({k[:2] for k in cells})
    missing = [(v, p, e) for v, p in groups for e in grid if (v, p, e) not in cells]
    if missing:
        listing = ", ".join(f"(speed={v}, policy={p}, ebn0={e})" for v, p, e in missing)
        raise ValueError(f"incomplete grid, missing cells: {listing}")
    return {(v, p): statistics.fmean(reducer(cells[v, p, e]) for e in grid) for v, p in groups}


# --- CSV -------------------------------------------------------------------------

METRICS_HEADER = (
    "speed_kmh", "ebn0_db", "policy", "seed", "trials", "n_ok", "n_de", "n_ue",
    "p_ue", "p_de", "p_ue_upper95", "mean_reward", "mean_iterations",
    "deadline_miss_rate", "action_histogram",
)
SERIES_HEADER = ("step", "cum_p_ue", "speed_kmh", "policy", "seed")
FIXED_HEADER = (
    "speed_kmh", "seed", "action", "crc", "rate", "k", "n", "val_p_ue", "val_p_de",
    "linucb_preferred_action", "linucb_preferred_config",
)


def write_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def metrics_csv(records: Iterable[MetricsRecord]) -> str:
    return write_csv(
        METRICS_HEADER,
        (
            [r.speed, r.ebn0_db, r.policy, r.seed, r.trials, r.n_ok, r.n_de, r.n_ue, repr(r.p_ue),
             repr(r.p_de), repr(r.p_ue_upper95), repr(r.mean_reward), repr(r.mean_iterations),
             repr(r.deadline_miss_rate), ";".join(map(str, r.action_histogram))]
            for r in records
        ),
    )


def series_csv(rows: Iterable[SeriesRow]) -> str:
    return write_csv(SERIES_HEADER, ([r.step, repr(r.cum_p_ue), r.speed, r.policy, r.seed] for r in rows))


def fixed_csv(result: GridResult) -> str:
    """Per-speed FixedBest choice next to the configuration LinUCB used most."""
    actions = action_space()
    usage: dict[tuple, np.ndarray] = defaultdict(lambda: np.zeros(len(actions), dtype=np.int64))
    for r in result.records:
        if r.policy == "linucb":
            usage[r.speed, r.seed] += np.asarray(r.action_histogram)
    rows = []
    for f in result.fixed:
        a = actions[f.choice.action]
        st = f.choice.stats[f.choice.action]
        hist = usage.get((f.speed, f.seed))
        pref = int(np.argmax(hist)) if hist is not None else ""
        rows.append([
            f.speed, f.seed, a.index, a.crc.name, a.rate_label, a.code.k, a.code.n, repr(st.p_ue), repr(st.p_de),
            pref, actions[pref].label if pref != "" else "",
        ])
    return write_csv(FIXED_HEADER, rows)


def parse_metrics_csv(text: str) -> list[MetricsRecord]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError("metrics CSV is empty") from None
    if tuple(header) != METRICS_HEADER:
        raise ValueError(f"row 1: unexpected header {header}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            if len(row) != len(METRICS_HEADER):
                raise ValueError(f"expected {len(METRICS_HEADER)} fields, found {len(row)}")
            f = dict(zip(METRICS_HEADER, row))
            out.append(MetricsRecord(
                speed=_num(float(f["speed_kmh"])),
                ebn0_db=_num(float(f["ebn0_db"])),
                policy=f["policy"],
                seed=int(f["seed"]),
                trials=int(f["trials"]),
                n_ok=int(f["n_ok"]),
                n_de=int(f["n_de"]),
                n_ue=int(f["n_ue"]),
                p_ue=float(f["p_ue"]),
                p_de=float(f["p_de"]),
                p_ue_upper95=float(f["p_ue_upper95"]),
                mean_reward=float(f["mean_reward"]),
                mean_iterations=float(f["mean_iterations"]),
                deadline_miss_rate=float(f["deadline_miss_rate"]),
                action_histogram=tuple(int(x) for x in f["action_histogram"].split(";")),
            ))
        except ValueError as exc:
            raise ValueError(f"row {lineno}: {exc}") from None
    return out
