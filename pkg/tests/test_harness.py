"""Experiment configs, sweeps, aggregation and the CLI."""

import csv
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from envyaudit.harness import cli
from envyaudit.harness.config import ConfigError, config_from_dict, default_config, dump_config, load_config
from envyaudit.harness.experiments import (
    SUMMARY_COLUMNS,
    TRIAL_COLUMNS,
    TrialRecord,
    _ocef_trial,
    aggregate,
    parse_grid_point,
    read_records,
    run_audit_experiment,
    run_euu_vs_opt,
    run_experiment,
    run_mispecification_sweep,
    run_ocef_sweep,
    write_records,
    write_rows,
)


def without_wallclock(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if "wallclock_ms" not in rows[0]:
        return rows
    i = rows[0].index("wallclock_ms")
    return [r[:i] + r[i + 1:] for r in rows]


def record(gp="g", trial=0, verdict="no_envy", duration=10, cost=1.0, violated=False):
    return TrialRecord("exp", gp, trial, 0, verdict, duration, cost, violated, 0.0)


def small_sweep(tmp_path, **kw):
    raw = {"kind": "ocef_sweep", "trials": 2, "master_seed": 5, "output_dir": str(tmp_path),
           "environment": {"type": "bernoulli", "means": [[0.6, 0.2, 0.2], [0.2, 0.7, 0.1]]},
           "epsilon": 0.1, "grid": {"alpha": [0.2, 0.5]}}
    raw.update(kw)
    return config_from_dict(raw)


class TestConfig:

    def test_defaults(self):
        cfg = default_config("ocef_sweep")
        assert cfg.trials == 100 and cfg.grid["alpha"] == [0.01, 0.05, 0.1, 0.2, 0.5]
        assert cfg.delta == cfg.epsilon == 0.05 and cfg.name == "ocef_sweep"

    def test_aliases(self):
        cfg = config_from_dict({"kind": "audit_run", "lambda": 0.3, "seed": 9})
        assert cfg.lambda_ == 0.3 and cfg.master_seed == 9

    @pytest.mark.parametrize("raw", [
        {}, {"kind": "nope"}, {"kind": "ocef_sweep", "bogus": 1}, {"kind": "ocef_sweep", "trials": 0},
        {"kind": "ocef_sweep", "grid": {"alpha": []}}, {"kind": "ocef_sweep", "delta": 1.5},
        {"kind": "ocef_sweep", "environment": [1]}, {"kind": "ocef_sweep", "master_seed": -1},
    ])
    def test_rejects(self, raw):
        with pytest.raises(ConfigError):
            config_from_dict(raw)

    def test_environment_merge(self):
        cfg = config_from_dict({"kind": "envy_metrics", "environment": {"users": 10}})
        assert cfg.environment["users"] == 10 and cfg.environment["items"] == 60
        cfg = config_from_dict({"kind": "envy_metrics", "environment": {"type": "csv", "preferences": "x.csv"}})
        assert "items" not in cfg.environment

    def test_yaml_round_trip(self, tmp_path):
        cfg = config_from_dict({"kind": "mispecification_sweep", "trials": 2, "lambda": 0.2})
        dump_config(cfg, tmp_path / "c.yaml")
        assert load_config(tmp_path / "c.yaml") == cfg

    def test_overrides(self, tmp_path):
        (tmp_path / "c.yaml").write_text("kind: euu_vs_opt\nmaster_seed: 1\n")
        cfg = load_config(tmp_path / "c.yaml", {"master_seed": 7, "output_dir": None})
        assert cfg.master_seed == 7 and cfg.output_dir == "results"

    def test_bad_yaml(self, tmp_path):
        (tmp_path / "c.yaml").write_text("kind: [unclosed\n")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "c.yaml")

    def test_shipped_configs_load(self):
        from pathlib import Path
        configs = sorted((Path(__file__).parent.parent / "configs").glob("*.yaml"))
        kinds = {load_config(p).kind for p in configs}
        assert kinds == {"ocef_sweep", "audit_run", "envy_metrics", "euu_vs_opt", "mispecification_sweep"}


class TestAggregate:

    def test_single(self):
        (row,) = aggregate([record(duration=12, cost=-2.5)])
        assert row["mean_duration"] == 12 and row["std_duration"] == 0 and row["mean_cost"] == -2.5

    def test_two(self):
        (row,) = aggregate([record(duration=10), record(trial=1, duration=20)])
        assert row["mean_duration"] == 15 and row["std_duration"] == 5
        assert (row["min_duration"], row["max_duration"]) == (10, 20)

    def test_verdict_fractions(self):
        recs = [record(verdict=v, trial=i, violated=(i == 0)) for i, v in
                enumerate(["envy", "no_envy", "inconclusive", "not_envy_free"])]
        (row,) = aggregate(recs)
        assert (row["frac_envy"], row["frac_noenvy"], row["frac_inconclusive"], row["frac_violation"]) == (
            0.5, 0.25, 0.25, 0.25)

    def test_empty(self, tmp_path):
        assert aggregate([]) == []
        write_rows(tmp_path / "s.csv", SUMMARY_COLUMNS, aggregate([]))
        assert (tmp_path / "s.csv").read_text() == ",".join(SUMMARY_COLUMNS) + "\n"

    def test_grid_order(self):
        rows = aggregate([record("b"), record("a"), record("b", 1)])
        assert [r["grid_point"] for r in rows] == ["b", "a"]

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from("abc"), st.integers(0, 1000), st.integers(-50, 50)),
                    min_size=1, max_size=30), st.integers(0, 2 ** 16))
    def test_order_independent(self, items, seed):
        recs = [record(gp, i, duration=d, cost=float(c)) for i, (gp, d, c) in enumerate(items)]
        shuffled = list(recs)
        random.Random(seed).shuffle(shuffled)
        a = {r["grid_point"]: r for r in aggregate(recs)}
        b = {r["grid_point"]: r for r in aggregate(shuffled)}
        assert a.keys() == b.keys()
        for k in a:
            for col in SUMMARY_COLUMNS[1:]:
                assert a[k][col] == pytest.approx(b[k][col], abs=1e-9)

    def test_records_round_trip(self, tmp_path):
        recs = [record(cost=0.1 + 0.2), record(trial=1, verdict="envy", violated=True)]
        write_records(tmp_path / "t.csv", recs)
        assert read_records(tmp_path / "t.csv") == recs
        assert (tmp_path / "t.csv").read_text().splitlines()[0] == ",".join(TRIAL_COLUMNS)

    def test_parse_grid_point(self):
        assert parse_grid_point("problem=1;alpha=0.05;system=x") == {"problem": 1, "alpha": 0.05, "system": "x"}


class TestOcefSweep:

    def test_records(self, tmp_path):
        result = run_ocef_sweep(small_sweep(tmp_path))
        assert len(result.records) == 2 * 2 * 2
        assert {r.verdict for r in result.records if "custom0" in r.grid_point} == {"no_envy"}
        assert {r.verdict for r in result.records if "custom1" in r.grid_point} == {"envy"}
        assert len(result.summary) == 4
        assert result.files["trials"].exists() and result.files["summary"].exists()

    def test_deterministic(self, tmp_path):
        a = run_ocef_sweep(small_sweep(tmp_path / "a"))
        b = run_ocef_sweep(small_sweep(tmp_path / "b"))
        for key in ("trials", "summary"):
            assert without_wallclock(a.files[key]) == without_wallclock(b.files[key])

    def test_workers_do_not_change_results(self, tmp_path):
        a = run_ocef_sweep(small_sweep(tmp_path / "a"), workers=1)
        b = run_ocef_sweep(small_sweep(tmp_path / "b"), workers=2)
        assert without_wallclock(a.files["trials"]) == without_wallclock(b.files["trials"])

    def test_adding_grid_points_keeps_seeds(self, tmp_path):
        a = run_ocef_sweep(small_sweep(tmp_path / "a"))
        b = run_ocef_sweep(small_sweep(tmp_path / "b", grid={"alpha": [0.1, 0.2, 0.5]}))
        seeds_b = {(r.grid_point, r.trial): r.seed for r in b.records}
        assert all(seeds_b[(r.grid_point, r.trial)] == r.seed for r in a.records)

    def test_failed_trial_recorded(self):
        rec = _ocef_trial(("e", "g", 0, 1, [0.5, 1.5], 0.05, 0.1, 0.1, 0.99, 100))
        assert rec.verdict == "error" and rec.duration == 0

    def test_standard_problem_labels(self, tmp_path):
        cfg = config_from_dict({"kind": "ocef_sweep", "trials": 1, "output_dir": str(tmp_path),
                                "environment": {"problems": [2]}, "grid": {"alpha": [0.5], "arm_count": [3]}})
        (rec,) = run_ocef_sweep(cfg).records
        assert parse_grid_point(rec.grid_point) == {"problem": 2, "arms": 3, "delta": 0.05, "alpha": 0.5}

    def test_constraint_frequency(self, tmp_path):
        result = run_ocef_sweep(small_sweep(tmp_path, trials=10))
        for row in result.summary:
            assert row["frac_violation"] <= 0.05 + 3 * (0.05 * 0.95 / 10) ** 0.5


class TestOtherExperiments:

    def test_mispecification(self, tmp_path):
        raw = {"kind": "mispecification_sweep", "trials": 2, "output_dir": str(tmp_path),
               "environment": {"users": 30, "items": 20, "true_rank": 4}, "grid": {"rank": [1, 2, 4]}}
        a = run_mispecification_sweep(config_from_dict(raw))
        assert [r["rank"] for r in a.summary] == [1, 2, 4]
        assert a.summary[0]["average_envy"] == 0.0
        raw["output_dir"] = str(tmp_path / "b")
        b = run_mispecification_sweep(config_from_dict(raw))
        for key in a.files:
            assert a.files[key].read_bytes() == b.files[key].read_bytes()

    def test_euu_vs_opt(self, tmp_path):
        cfg = config_from_dict({"kind": "euu_vs_opt", "output_dir": str(tmp_path), "euu_iterations": 500})
        rows = {r["policy"]: r for r in run_euu_vs_opt(cfg).rows}
        assert rows["OPT"]["average_envy"] == 0 and rows["OPT"]["prop_envious"] == 0
        assert rows["EUU"]["total_utility"] < rows["OPT"]["total_utility"]
        assert rows["EUU"]["average_envy"] > 0

    def test_envy_metrics(self, tmp_path):
        cfg = config_from_dict({"kind": "envy_metrics", "output_dir": str(tmp_path), "euu_iterations": 100,
                                "environment": {"users": 12, "items": 10, "true_rank": 3, "model_rank": 2}})
        result = run_experiment(cfg)
        rows = {r["policy"]: r for r in result.rows}
        assert set(rows) == {"opt", "softmax", "parity", "equity", "euu"}
        assert rows["opt"]["average_envy"] == 0 and rows["parity"]["average_envy"] <= 1e-9
        assert result.files["users_opt"].read_text().startswith("user,delta,epsilon_flag")

    def test_envy_metrics_csv_environment(self, tmp_path):
        from envyaudit.envs import save_matrix
        save_matrix([[0.9, 0.1], [0.2, 0.8]], tmp_path / "p.csv")
        save_matrix([[0.0, 1.0], [0.0, 1.0]], tmp_path / "q.csv")
        cfg = config_from_dict({"kind": "envy_metrics", "output_dir": str(tmp_path),
                                "environment": {"type": "csv", "preferences": str(tmp_path / "p.csv"),
                                                "policy_matrix": str(tmp_path / "q.csv"),
                                                "policies": ["csv", "opt"]}})
        rows = {r["policy"]: r for r in run_experiment(cfg).rows}
        # both users share one policy, so nobody envies
        assert rows["csv"]["average_envy"] == 0 and rows["csv"]["total_utility"] == pytest.approx(0.9)
        assert rows["opt"]["total_utility"] == pytest.approx(1.7)

    def test_csv_policy_needs_path(self, tmp_path):
        from envyaudit.envs import save_matrix
        save_matrix([[0.9, 0.1]], tmp_path / "p.csv")
        cfg = config_from_dict({"kind": "envy_metrics", "output_dir": str(tmp_path), "environment": {
            "type": "csv", "preferences": str(tmp_path / "p.csv"), "policies": ["csv"]}})
        with pytest.raises(ConfigError):
            run_experiment(cfg)

    def test_audit_experiment_echo(self, tmp_path):
        cfg = config_from_dict({"kind": "audit_run", "trials": 1, "max_steps": 3, "output_dir": str(tmp_path),
                                "environment": {"users": 100}, "grid": {"alpha": [0.1]}})
        result = run_audit_experiment(cfg)
        echo = list(csv.DictReader(open(result.files["sample_sizes"])))[0]
        assert (echo["target_users"], echo["arms"]) == ("41", "75")
        assert {r.verdict for r in result.records} == {"inconclusive"}
        assert len(result.rows) == 2 * 41
        assert (tmp_path / "reports").is_dir()

    def test_audit_experiment_signs(self, tmp_path):
        cfg = config_from_dict({"kind": "audit_run", "trials": 2, "gamma": 0.5, "lambda": 0.5,
                                "output_dir": str(tmp_path), "environment": {"users": 40},
                                "grid": {"alpha": [0.2]}})
        rows = {parse_grid_point(r["grid_point"])["system"]: r for r in run_audit_experiment(cfg).summary}
        assert rows["envy_free"]["frac_noenvy"] == 1.0 and rows["envy_free"]["mean_cost"] > 0
        assert rows["envious"]["frac_envy"] == 1.0 and rows["envious"]["mean_cost"] < 0


class TestCli:

    def test_sample_sizes(self, capsys):
        assert cli.main(["sample-sizes"]) == 0
        assert capsys.readouterr().out.strip() == "target_users=41 arms=75"

    def test_config_error_exit_code(self, tmp_path, capsys):
        (tmp_path / "c.yaml").write_text("kind: ocef_sweep\ntrials: 0\n")
        assert cli.main(["run", "--config", str(tmp_path / "c.yaml")]) == 2
        assert "trials" in capsys.readouterr().err

    def test_kind_mismatch(self, tmp_path):
        (tmp_path / "c.yaml").write_text("kind: euu_vs_opt\n")
        assert cli.main(["ocef-sweep", "--config", str(tmp_path / "c.yaml")]) == 2

    def test_run_with_plots(self, tmp_path, capsys):
        (tmp_path / "c.yaml").write_text(
            "kind: mispecification_sweep\ntrials: 1\nenvironment: {users: 20, items: 15, true_rank: 3}\n"
            "grid: {rank: [1, 3]}\n")
        assert cli.main(["run", "-c", str(tmp_path / "c.yaml"), "-o", str(tmp_path / "out"), "--seed", "4"]) == 0
        out = tmp_path / "out"
        assert (out / "mispecification_sweep_summary.csv").exists()
        assert (out / "mispecification_sweep_envy.png").stat().st_size > 0
        assert load_config(out / "mispecification_sweep_config.yaml").master_seed == 4

    def test_sweep_plots(self, tmp_path):
        (tmp_path / "c.yaml").write_text(
            "kind: ocef_sweep\ntrials: 1\nepsilon: 0.1\n"
            "environment: {type: bernoulli, means: [0.6, 0.2]}\ngrid: {alpha: [0.3, 0.6]}\n")
        assert cli.main(["ocef-sweep", "-c", str(tmp_path / "c.yaml"), "-o", str(tmp_path)]) == 0
        assert (tmp_path / "ocef_sweep_duration.png").exists() and (tmp_path / "ocef_sweep_cost.png").exists()

    def test_bad_workers(self):
        assert cli.main(["euu-vs-opt", "--workers", "0"]) == 2
