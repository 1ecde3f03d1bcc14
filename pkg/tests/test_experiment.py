from __future__ import annotations

import hashlib
import json

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.stats import binom

from linkadapt.bandit import FixedChoice, FixedPolicy, LinUCBPolicy, PolicyConfig
from linkadapt.experiment import (
    METRICS_HEADER,
    ExperimentPlan,
    GridError,
    MetricsRecord,
    derive_seed,
    evaluate,
    fixed_csv,
    metrics_csv,
    parse_metrics_csv,
    run_grid,
    series_csv,
    speed_summary,
    train_policy,
    ue_upper_bound,
    validate_fixed,
)
from linkadapt.link import LinkConfig, action_space

ZERO = LinkConfig(zero_noise=True)


def tiny_plan(**kw) -> ExperimentPlan:
    base = dict(speeds=(60,), ebn0_grid=(5,), t_train=60, t_val=120, eval_trials=40, seeds=(1,))
    base.update(kw)
    return ExperimentPlan(**base)


def record(speed, ebn0, policy, p_ue, seed=0, M=1000):
    n = round(p_ue * M)
    return MetricsRecord(speed, ebn0, policy, seed, M, M - n, 0, n, n / M, 0.0, ue_upper_bound(n, M), 0.0, 1.0, 0.0, (M,) + (0,) * 11)


def snapshot_hash(policy) -> str:
    return hashlib.sha256(json.dumps(policy.to_snapshot(), sort_keys=True).encode()).hexdigest()


# --- bounds ---------------------------------------------------------------------


@pytest.mark.parametrize("n, M, expected", [(0, 30000, 1.0e-4), (0, 3000, 1.0e-3), (7, 7, 1.0)])
def test_upper_bound_examples(n, M, expected):
    assert ue_upper_bound(n, M) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("n, M", [(1, 100), (3, 5000), (40, 30000), (99, 100)])
def test_clopper_pearson_against_binomial_inversion(n, M):
    # the upper limit p solves P(X <= n; M, p) = 0.05
    oracle = brentq(lambda p: binom.cdf(n, M, p) - 0.05, n / M, 1.0 - 1e-15, xtol=1e-15)
    assert ue_upper_bound(n, M) == pytest.approx(oracle, rel=1e-8)
    assert ue_upper_bound(n, M) > n / M


@pytest.mark.parametrize("n, M", [(0, 0), (-1, 10), (11, 10)])
def test_upper_bound_rejects(n, M):
    with pytest.raises(ValueError):
        ue_upper_bound(n, M)


# --- plan and seeds ---------------------------------------------------------------


@pytest.mark.parametrize(
    "kw",
    [{"speeds": ()}, {"ebn0_grid": ()}, {"seeds": ()}, {"t_train": 0}, {"eval_trials": -3}, {"policies": ("ucb",)},
     {"train_snr_mode": "random"}, {"speeds": (-10,)}],
)
def test_plan_validation(kw):
    with pytest.raises(ValueError):
        tiny_plan(**kw)


def test_default_plan_matches_protocol_table():
    plan = ExperimentPlan()
    assert plan.speeds == (0, 60, 120, 180, 250)
    assert plan.ebn0_grid == (-5, 0, 5, 10, 15, 20, 25)
    assert (plan.t_train, plan.t_val, plan.eval_trials) == (6000, 6000, 30000)
    assert (plan.alpha, plan.gamma, plan.lambda_reg) == (2.0, 0.998, 1.0)


def test_derived_seeds():
    assert derive_seed(0, "eval", 60, 5) == derive_seed(0, "eval", 60, 5)
    assert derive_seed(0, "eval", 60, 5) != derive_seed(1, "eval", 60, 5)
    assert derive_seed(0, "eval", 60, 5) != derive_seed(0, "eval", 5, 60)
    assert 0 <= derive_seed(123, "x") < 2**64


# --- stages ----------------------------------------------------------------------


def test_training_zero_noise_series_is_zero():
    res = train_policy("linucb", 60, tiny_plan(link=ZERO), 0)
    assert res.running_p_ue.shape == (60,)
    assert not res.running_p_ue.any()


def test_training_is_deterministic():
    plan = tiny_plan()
    a, b = train_policy("greedy", 120, plan, 4), train_policy("greedy", 120, plan, 4)
    assert json.dumps(a.policy.to_snapshot()) == json.dumps(b.policy.to_snapshot())
    assert np.array_equal(a.running_p_ue, b.running_p_ue)


def test_training_quasi_static_high_snr():
    res = train_policy("linucb", 0, tiny_plan(t_train=400), 0, ebn0_db=25)
    assert res.running_p_ue[-1] < 1e-2


def test_training_rejects_fixed_kind():
    with pytest.raises(ValueError):
        train_policy("fixed", 60, tiny_plan(), 0)


def test_validation_zero_noise_picks_high_rate():
    choice = validate_fixed(60, tiny_plan(link=ZERO), 0)
    assert all(s.p_ue == 0 and s.p_de == 0 for s in choice.stats.values())
    assert action_space()[choice.action].rate_label == "3/4"
    assert choice.action == 2  # lowest index among the rate-3/4 ties


def test_validation_uses_even_split():
    choice = validate_fixed(60, tiny_plan(t_val=240), 2)
    for s in choice.stats.values():
        assert (s.p_de * 20) == pytest.approx(round(s.p_de * 20))


def test_validation_is_deterministic():
    plan = tiny_plan()
    assert validate_fixed(180, plan, 3) == validate_fixed(180, plan, 3)


def test_evaluate_zero_noise():
    plan = tiny_plan(link=ZERO)
    policy = train_policy("linucb", 60, plan, 0).policy
    rec = evaluate(policy, 60, 5, 50, plan, 0)
    assert rec.n_ok == 50 and rec.p_ue == 0 and rec.p_de == 0
    rates = [a.rate for a in action_space()]
    mean_rate = sum(c * rates[a] for a, c in enumerate(rec.action_histogram)) / 50
    assert rec.mean_reward == pytest.approx(mean_rate)
    assert rec.p_ue_upper95 == pytest.approx(3 / 50)


def test_evaluate_counts_and_identity():
    plan = tiny_plan()
    rec = evaluate(FixedPolicy(FixedChoice(0)), 120, 0, 80, plan, 0)
    assert rec.n_ok + rec.n_de + rec.n_ue == rec.trials == 80
    assert rec.p_ue == rec.n_ue / 80 and rec.p_de == rec.n_de / 80
    assert rec.p_ue_upper95 >= rec.p_ue
    assert sum(rec.action_histogram) == 80 and rec.action_histogram[0] == 80


def test_evaluation_freezes_policy():
    plan = tiny_plan()
    policy = train_policy("linucb", 60, plan, 0).policy
    before = snapshot_hash(policy)
    evaluate(policy, 60, 0, 60, plan, 0)
    assert snapshot_hash(policy) == before


def test_learning_during_evaluation_leaves_original_intact():
    plan = tiny_plan(learn_during_eval=True)
    policy = LinUCBPolicy(PolicyConfig())
    before = snapshot_hash(policy)
    frozen = evaluate(policy, 60, 10, 60, tiny_plan(), 0)
    online = evaluate(policy, 60, 10, 60, plan, 0)
    assert snapshot_hash(policy) == before
    assert frozen.action_histogram != online.action_histogram


def test_restart_channel_flag_changes_stream():
    policy = FixedPolicy(FixedChoice(0))
    a = evaluate(policy, 0, 5, 100, tiny_plan(), 0)
    b = evaluate(policy, 0, 5, 100, tiny_plan(restart_channel_per_trial=True), 0)
    assert a.trials == b.trials == 100
    assert (a.n_ok, a.mean_iterations) != (b.n_ok, b.mean_iterations)


def test_static_channel_pde_falls_with_snr():
    plan = tiny_plan(speeds=(0,), ebn0_grid=(-5, 25), policies=("fixed",), t_val=240, eval_trials=300)
    res = run_grid(plan)
    p_de = {r.ebn0_db: r.p_de for r in res.records}
    assert p_de[25] * 10 < p_de[-5]


# --- grid ------------------------------------------------------------------------


def test_grid_cardinality_and_order():
    res = run_grid(tiny_plan())
    assert [(r.speed, r.ebn0_db, r.policy) for r in res.records] == [(60, 5, "linucb"), (60, 5, "greedy"), (60, 5, "fixed")]
    assert len(res.series) == 2 * 60
    assert len(res.fixed) == 1
    assert sorted(res.snapshots) == ["fixed_v60_s1", "greedy_v60_s1", "linucb_v60_s1"]


def test_zero_noise_grid_is_error_free():
    res = run_grid(tiny_plan(link=ZERO, ebn0_grid=(0, 10)))
    for r in res.records:
        assert r.n_ok == r.trials


def test_policies_see_the_same_channel(monkeypatch):
    import linkadapt.experiment as ex

    seen = {}
    real = ex.run_transmission

    def spy(action, chan, profile, ebn0_db, rng, cfg):
        out = real(action, chan, profile, ebn0_db, rng, cfg)
        seen.setdefault(cfg_key[0], []).append((out.true_h_mag, out.interference))
        return out

    cfg_key = [None]
    monkeypatch.setattr(ex, "run_transmission", spy)
    plan = tiny_plan()
    for i, policy in enumerate([FixedPolicy(FixedChoice(0)), FixedPolicy(FixedChoice(11)), LinUCBPolicy()]):
        cfg_key[0] = i
        evaluate(policy, 60, 5, 30, plan, 0)
    assert seen[0] == seen[1] == seen[2]


def test_grid_is_deterministic_and_job_independent():
    plan = tiny_plan(speeds=(0, 250), ebn0_grid=(0, 20))
    a, b = run_grid(plan, jobs=1), run_grid(plan, jobs=2)
    assert metrics_csv(a.records) == metrics_csv(b.records)
    assert series_csv(a.series) == series_csv(b.series)
    assert fixed_csv(a) == fixed_csv(b)


def test_per_cell_training_mode():
    res = run_grid(tiny_plan(train_snr_mode="per_cell", ebn0_grid=(0, 10)))
    assert len(res.records) == 6
    assert "linucb_v60_s1_e10" in res.snapshots
    assert res.series == [] and res.fixed == []


def test_grid_failures_name_cells():
    plan = tiny_plan(speeds=(60, 120), link=LinkConfig(payload_bits=420))
    with pytest.raises(GridError) as err:
        run_grid(plan)
    msg = str(err.value)
    assert "2 grid cell(s) failed" in msg
    assert "seed=1, speed=60" in msg and "seed=1, speed=120" in msg


# --- summaries and CSV ---------------------------------------------------------------


def test_speed_summary_examples():
    assert speed_summary([record(60, 5, "fixed", 0.004)]) == {(60, "fixed"): pytest.approx(0.004)}
    recs = [record(60, 0, "greedy", 1e-3), record(60, 5, "greedy", 3e-3)]
    assert speed_summary(recs)[60, "greedy"] == pytest.approx(2e-3)
    zero = [record(v, e, "linucb", 0.0) for v in (0, 60) for e in (0, 5)]
    assert set(speed_summary(zero).values()) == {0.0}


def test_speed_summary_seed_reduction():
    recs = [record(60, 0, "greedy", p, seed=s) for s, p in enumerate([1e-3, 2e-3, 9e-3])]
    assert speed_summary(recs)[60, "greedy"] == pytest.approx(4e-3)
    assert speed_summary(recs, "median")[60, "greedy"] == pytest.approx(2e-3)


def test_speed_summary_incomplete_grid():
    recs = [record(60, 0, "greedy", 0.0), record(60, 5, "greedy", 0.0), record(120, 0, "greedy", 0.0)]
    with pytest.raises(ValueError, match=r"missing cells: \(speed=120, policy=greedy, ebn0=5\)"):
        speed_summary(recs)
    with pytest.raises(ValueError):
        speed_summary([])


def test_metrics_csv_roundtrip():
    res = run_grid(tiny_plan())
    text = metrics_csv(res.records)
    assert text.splitlines()[0] == ",".join(METRICS_HEADER)
    assert parse_metrics_csv(text) == res.records


@pytest.mark.parametrize(
    "mutate, match",
    [
        (lambda lines: ["speed"] + lines[1:], "row 1"),
        (lambda lines: lines[:2] + ["1,2,3"], "row 3"),
        (lambda lines: lines[:1] + [lines[1].replace("linucb,1,40", "linucb,1,forty")], "row 2"),
        (lambda lines: [], "empty"),
    ],
)
def test_metrics_csv_errors(mutate, match):
    lines = metrics_csv(run_grid(tiny_plan()).records).splitlines()
    with pytest.raises(ValueError, match=match):
        parse_metrics_csv("\n".join(mutate(lines)))


def test_series_csv_definition():
    res = run_grid(tiny_plan(policies=("linucb",)))
    rows = series_csv(res.series).splitlines()
    assert rows[0] == "step,cum_p_ue,speed_kmh,policy,seed"
    assert len(rows) == 61
    assert rows[1].startswith("1,")


def test_fixed_csv_layout():
    res = run_grid(tiny_plan())
    lines = fixed_csv(res).splitlines()
    assert lines[0].startswith("speed_kmh,seed,action,crc,rate,k,n")
    fields = lines[1].split(",")
    a = action_space()[int(fields[2])]
    assert fields[3] == a.crc.name and fields[4] == a.rate_label
