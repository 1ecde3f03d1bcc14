from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

from linkadapt.cli import main, reduction_rows
from linkadapt.config import ConfigError, RunConfig, build_config
from linkadapt.experiment import metrics_csv
from linkadapt.qcldpc import BUILTIN_CODE_FILES, builtin_code_text

from test_experiment import record

GOLDEN = Path(__file__).parent / "golden"
OUTPUTS = ("effective_config.json", "metrics.csv", "training_series.csv", "fixed_choices.csv")


def write_config(path: Path, **fields) -> Path:
    path.write_text(json.dumps(fields))
    return path


def small_config(tmp_path: Path, **extra) -> Path:
    fields = dict(speeds=[0], ebn0_grid=[0, 25], t_train=50, t_val=120, eval_trials=30)
    fields.update(extra)
    return write_config(tmp_path / "cfg.json", **fields)


def read_outputs(out: Path) -> dict[str, bytes]:
    files = {name: (out / name).read_bytes() for name in OUTPUTS}
    files.update({p.name: p.read_bytes() for p in sorted((out / "policies").glob("*.json"))})
    return files


# --- validate-codes --------------------------------------------------------------


def test_validate_codes_ok(capsys):
    assert main(["validate-codes"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3
    assert lines[0].startswith("R1/2: n=576 k=288 rate=0.5000 Z=48")
    assert lines[2].startswith("R3/4: n=576 k=432 rate=0.7500 Z=48")


def _code_dir(tmp_path: Path, patch_rate=None, patch=None) -> Path:
    for rate, fname in BUILTIN_CODE_FILES.items():
        text = builtin_code_text(rate)
        if rate == patch_rate:
            text = patch(text)
        (tmp_path / fname).write_text(text)
    return tmp_path


def test_validate_codes_shift_out_of_range(tmp_path, capsys):
    def bump(text):
        lines = text.splitlines()
        lines[2] = lines[2].replace(" 0", " 48", 1)
        return "\n".join(lines) + "\n"

    assert main(["validate-codes", "--code-dir", str(_code_dir(tmp_path, "2/3", bump))]) != 0
    err = capsys.readouterr().err
    assert "qc576_r23.txt:3: shift 48 in column" in err


def test_validate_codes_duplicated_row(tmp_path, capsys):
    def dup(text):
        lines = text.splitlines()
        return "\n".join(lines[:2] + [lines[1]] + lines[3:]) + "\n"

    assert main(["validate-codes", "--code-dir", str(_code_dir(tmp_path, "1/2", dup))]) != 0
    assert "rank" in capsys.readouterr().err


def test_validate_codes_missing_file(tmp_path, capsys):
    assert main(["validate-codes", "--code-dir", str(tmp_path)]) != 0
    assert "qc576_r12.txt" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "linkadapt", "validate-codes"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.count("ok") == 3


# --- configuration ---------------------------------------------------------------


@pytest.mark.parametrize("profile", ["paper", "desk"])
def test_default_config_echo_matches_golden(profile):
    assert build_config(profile).to_json() == (GOLDEN / f"effective_config_{profile}.json").read_text()


def test_paper_defaults_are_protocol_values():
    cfg = RunConfig()
    assert (cfg.t_train, cfg.t_val, cfg.eval_trials) == (6000, 6000, 30000)
    assert (cfg.w_g, cfg.w_de, cfg.w_ue, cfg.w_dm) == (1.0, 0.2, 5.0, 3.0)
    assert (cfg.tti_ms, cfg.base_stack_ms, cfg.iter_cost_ms, cfg.pdb_ms, cfg.bandwidth_mhz) == (1.0, 0.5, 0.08, 5.0, 20.0)
    assert (cfg.carrier_hz, cfg.interval_s, cfg.snr_obs_noise_db) == (5.9e9, 1e-3, 0.8)


def test_paper_profile_has_105_cells():
    plan = build_config("paper").plan()
    assert len(plan.seeds) * len(plan.speeds) * len(plan.ebn0_grid) * len(plan.policies) == 105


@pytest.mark.parametrize(
    "fields, match",
    [
        ({"speed": [0]}, "unknown configuration keys: speed"),
        ({"t_train": "many"}, "t_train: expected an integer"),
        ({"seeds": 3}, "seeds: expected a list"),
        ({"p11": 2.0}, "p11"),
        ({"w_ue": 0.1}, "w_ue > w_de"),
        ({"zero_noise": 1}, "true/false"),
        ({"pdb_ms": 0}, "latency"),
    ],
)
def test_config_errors(tmp_path, fields, match):
    with pytest.raises(ConfigError, match=match):
        build_config("desk", write_config(tmp_path / "c.json", **fields))


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "t_train": 5,\n  oops\n}')
    with pytest.raises(ConfigError, match=r"bad.json:3: invalid JSON"):
        build_config("desk", bad)
    with pytest.raises(ConfigError, match="no such file"):
        build_config("desk", tmp_path / "absent.json")
    bad.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="JSON object"):
        build_config("desk", bad)


def test_config_precedence(tmp_path):
    cfg = build_config("desk", write_config(tmp_path / "c.json", eval_trials=7), {"seeds": [9]})
    assert cfg.t_train == 2000  # profile
    assert cfg.eval_trials == 7  # file over profile
    assert cfg.seeds == (9,)  # flag over everything


def test_config_error_stops_before_simulation(tmp_path, capsys):
    out = tmp_path / "out"
    cfg = write_config(tmp_path / "c.json", speeds=[0], ebn0_grid=[], t_train=5)
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 2
    assert "ebn0_grid" in capsys.readouterr().err
    assert not out.exists()


@pytest.mark.parametrize("argv", [["run", "--jobs", "0"], ["run", "--seed", "-1"]])
def test_bad_flags(argv):
    assert main(argv) == 2


# --- run -------------------------------------------------------------------------


def test_run_row_count_and_files(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--profile", "desk", "--config", str(small_config(tmp_path)), "--seed", "5", "--out", str(out)]) == 0
    rows = (out / "metrics.csv").read_text().splitlines()
    assert len(rows) == 1 + 6
    assert {r.split(",")[2] for r in rows[1:]} == {"linucb", "greedy", "fixed"}
    assert len((out / "training_series.csv").read_text().splitlines()) == 1 + 2 * 50
    assert len((out / "fixed_choices.csv").read_text().splitlines()) == 2
    assert json.loads((out / "effective_config.json").read_text())["seeds"] == [5]
    assert sorted(p.name for p in (out / "policies").iterdir()) == ["fixed_v0_s5.json", "greedy_v0_s5.json", "linucb_v0_s5.json"]


def test_run_twice_is_byte_identical_and_echo_reproduces(tmp_path):
    cfg = small_config(tmp_path, speeds=[60, 250])
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["run", "--config", str(cfg), "--seed", "3", "--out", str(a)]) == 0
    assert main(["run", "--config", str(cfg), "--seed", "3", "--out", str(b)]) == 0
    assert read_outputs(a) == read_outputs(b)
    # the echo alone (no profile-specific flags) reproduces the run
    assert main(["run", "--profile", "paper", "--config", str(a / "effective_config.json"), "--out", str(c)]) == 0
    assert read_outputs(a) == read_outputs(c)


def test_run_flags(tmp_path):
    out = tmp_path / "out"
    args = ["run", "--config", str(small_config(tmp_path)), "--seed", "1", "--out", str(out), "--zero-noise", "--strict-eq15"]
    assert main(args) == 0
    echo = json.loads((out / "effective_config.json").read_text())
    assert echo["zero_noise"] is True and echo["deadline_penalty"] is False
    for row in (out / "metrics.csv").read_text().splitlines()[1:]:
        f = row.split(",")
        assert f[5] == f[4]  # n_ok == trials


# --- replay ----------------------------------------------------------------------


def test_reduction_conventions():
    recs = [
        record(60, 0, "linucb", 2e-3), record(60, 0, "greedy", 2e-3),
        record(60, 5, "linucb", 1e-3), record(60, 5, "greedy", 2e-3),
        record(60, 10, "linucb", 1e-3), record(60, 10, "greedy", 0.0),
        record(60, 15, "linucb", 0.0), record(60, 15, "greedy", 4e-3),
    ]
    red = {row[1]: row[5] for row in reduction_rows(recs)}
    assert red == {0: "0.0", 5: "50.0", 10: "n/a (zero baseline)", 15: "100.0"}


def test_replay_writes_summaries(tmp_path, capsys):
    recs = [record(v, e, p, x) for v, x in ((60, 2e-3), (250, 1e-3)) for e in (0, 5) for p in ("linucb", "greedy", "fixed")]
    path = tmp_path / "metrics.csv"
    path.write_text(metrics_csv(recs))
    assert main(["replay", str(path)]) == 0
    summary = (tmp_path / "speed_summary.csv").read_text().splitlines()
    assert summary[0] == "speed_kmh,policy,mean_p_ue"
    assert "60,linucb,0.002" in summary
    reduction = (tmp_path / "reduction.csv").read_text().splitlines()
    assert reduction[0] == "speed_kmh,ebn0_db,seed,p_ue_linucb,p_ue_greedy,reduction_pct"
    assert len(reduction) == 5
    assert "mean P_UE" in capsys.readouterr().out


def test_replay_malformed_csv(tmp_path, capsys):
    recs = [record(60, 0, p, 0.0) for p in ("linucb", "greedy")]
    lines = metrics_csv(recs).splitlines()
    lines[2] = lines[2].replace(",1000,", ",lots,", 1)
    path = tmp_path / "metrics.csv"
    path.write_text("\n".join(lines) + "\n")
    assert main(["replay", str(path)]) == 1
    assert "row 3" in capsys.readouterr().err


def test_replay_incomplete_grid(tmp_path, capsys):
    path = tmp_path / "metrics.csv"
    path.write_text(metrics_csv([record(60, 0, "greedy", 0.0), record(60, 5, "greedy", 0.0), record(0, 0, "greedy", 0.0)]))
    assert main(["replay", str(path)]) == 1
    assert "missing cells" in capsys.readouterr().err
