import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from stepstone.cli import main
from stepstone.config import EvalConfig, RunConfig, SeedRoster, apply_profile
from stepstone.errors import ConfigurationError
from stepstone.harness import (
    cmd_eval_student,
    cmd_filter,
    cmd_sample_teacher,
    cmd_train_baseline,
    cmd_train_soar,
    load_split,
    soar_dir,
)
from stepstone.inner import InnerLoopConfig
from stepstone.outer import OuterLoopConfig
from stepstone.reporting import cmd_report


def mini_config(out_dir: str, **kwargs) -> RunConfig:
    base = RunConfig(
        outer=OuterLoopConfig(
            max_steps=4,
            group_size=2,
            dataset_size=8,
            repeats=2,
            reward_question_count=16,
            warmup_steps=2,
        ),
        inner=InnerLoopConfig(steps=3, batch_size=4, group_size=8),
        evaluation=EvalConfig(
            max_steps=80,
            cadence=10,
            early_stop_window=25,
            report_window=30,
        ),
        seeds=SeedRoster(teacher=(0, 1), student=(0,), split=7),
        output_dir=out_dir,
    )
    return replace(base, **kwargs)


@pytest.fixture(scope="module")
def mini_run(tmp_path_factory):
    """One filtered split shared by the cheap harness tests."""
    out = tmp_path_factory.mktemp("mini")
    config = mini_config(str(out))
    split = cmd_filter(config)
    return config, split


class TestConfig:
    def test_round_trip_through_json(self, tmp_path):
        config = mini_config(str(tmp_path))
        path = tmp_path / "config.json"
        config.save(path)
        loaded = RunConfig.load(path)
        assert loaded.to_dict() == config.to_dict()
        assert loaded.hash() == config.hash()

    def test_unknown_field_rejected(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"outer": {"bogus_knob": 3}}))
        with pytest.raises(ConfigurationError):
            RunConfig.load(path)

    def test_profiles_adjust_budgets(self):
        config = RunConfig()
        desk = apply_profile(config, "desk")
        paper = apply_profile(config, "paper")
        assert desk.outer.max_steps < paper.outer.max_steps
        assert paper.outer.max_steps == 200
        assert paper.evaluation.max_steps == 1500


class TestFilter:
    def test_split_disjoint_and_hard_only_levels(self, mini_run):
        config, split = mini_run
        pool_levels = {
            level for level, count in enumerate(config.env.pool_counts) if count
        }
        survivor_levels = {t.level for t in split.train} | {t.level for t in split.test}
        assert survivor_levels <= pool_levels
        # the easy entry zone never survives a 0-of-128 filter
        assert min(survivor_levels) >= 6
        train_ids = {t.id for t in split.train}
        test_ids = {t.id for t in split.test}
        assert not train_ids & test_ids

    def test_identical_seeds_identical_split_files(self, tmp_path):
        config_a = mini_config(str(tmp_path / "a"))
        config_b = mini_config(str(tmp_path / "b"))
        cmd_filter(config_a)
        cmd_filter(config_b)
        text_a = (Path(config_a.output_dir) / "split.json").read_text()
        text_b = (Path(config_b.output_dir) / "split.json").read_text()
        assert text_a == text_b

    def test_load_split_requires_filter(self, tmp_path):
        config = mini_config(str(tmp_path / "nofilter"))
        with pytest.raises(ConfigurationError):
            load_split(config)


class TestTrainSoar:
    def test_byte_identical_reruns(self, tmp_path):
        config_a = mini_config(str(tmp_path / "a"))
        config_b = mini_config(str(tmp_path / "b"))
        cmd_filter(config_a)
        cmd_filter(config_b)
        cmd_train_soar(config_a, 0)
        cmd_train_soar(config_b, 0)
        steps_a = (soar_dir(Path(config_a.output_dir), 0) / "steps.jsonl").read_bytes()
        steps_b = (soar_dir(Path(config_b.output_dir), 0) / "steps.jsonl").read_bytes()
        assert steps_a == steps_b

    def test_resume_reproduces_uninterrupted_run(self, tmp_path):
        full = mini_config(str(tmp_path / "full"))
        cmd_filter(full)
        cmd_train_soar(full, 0)

        # Simulate a crash after step 1: roll the artifacts back to the
        # step-1 checkpoint, then resume to budget.
        crashed = mini_config(str(tmp_path / "crashed"))
        cmd_filter(crashed)
        cmd_train_soar(crashed, 0)
        run_dir = soar_dir(Path(crashed.output_dir), 0)
        steps_file = run_dir / "steps.jsonl"
        surviving = steps_file.read_text().splitlines()[:2]
        steps_file.write_text("\n".join(surviving) + "\n")
        early_checkpoint = (run_dir / "checkpoints" / "step-1.json").read_text()
        (run_dir / "checkpoint.json").write_text(early_checkpoint)
        cmd_train_soar(crashed, 0, resume=True)

        steps_full = (soar_dir(Path(full.output_dir), 0) / "steps.jsonl").read_bytes()
        assert steps_file.read_bytes() == steps_full

    def test_resume_refuses_foreign_config(self, tmp_path):
        config = mini_config(str(tmp_path / "foreign"))
        cmd_filter(config)
        cmd_train_soar(config, 0)
        other = replace(config, outer=replace(config.outer, tau=0.5))
        with pytest.raises(ConfigurationError):
            cmd_train_soar(other, 0, resume=True)

    def test_unreachable_threshold_never_promotes(self, tmp_path):
        config = mini_config(str(tmp_path / "tauinf"))
        config = replace(config, outer=replace(config.outer, tau=float("inf")))
        cmd_filter(config)
        result = cmd_train_soar(config, 0)
        assert result.ledger.stage == 0
        assert result.ledger.best_datasets == []
        pq = json.loads(
            (soar_dir(Path(config.output_dir), 0) / "pq.json").read_text()
        )
        assert pq["items"] == []


class TestBaselines:
    def test_base_teacher_emits_128_well_formed(self, mini_run):
        config, _ = mini_run
        pairs = cmd_train_baseline(config, "base-teacher", 0)
        assert len(pairs) == 128
        assert all(p.well_formed for p in pairs)

    def test_intrinsic_arm_runs_and_samples(self, mini_run):
        config, _ = mini_run
        result = cmd_train_baseline(config, "intrinsic", 0)
        assert result.ledger.stage == 0  # promotion disabled on this arm
        assert len(result.reports) == config.outer.max_steps
        sample_file = (
            Path(config.output_dir) / "baseline" / "intrinsic" / "t0" / "sample.json"
        )
        assert len(json.loads(sample_file.read_text())["items"]) == 128

    def test_unknown_arm_rejected(self, mini_run):
        config, _ = mini_run
        with pytest.raises(ConfigurationError):
            cmd_train_baseline(config, "mystery", 0)


class TestEvalStudent:
    def test_curriculum_with_zero_warmup_equals_hard_only(self, tmp_path):
        from stepstone.env import teacher_generate
        from stepstone.outer import TeacherState
        from stepstone.records import atomic_write_json, qa_to_dict
        from stepstone.seeding import derive_rng

        config = mini_config(str(tmp_path / "warmup0"))
        cmd_filter(config)
        # a synthetic question set is enough; no training run needed
        teacher = TeacherState.fresh(config.env.levels, config.outer)
        rng = derive_rng(123)
        items = [
            teacher_generate(teacher.policy(), config.env, rng).qa for _ in range(16)
        ]
        atomic_write_json(
            soar_dir(Path(config.output_dir), 0) / "pq.json",
            {
                "config_hash": config.hash(),
                "teacher_seed": 0,
                "stage": 1,
                "items": [qa_to_dict(qa) for qa in items],
            },
        )
        zero_warmup = replace(
            config, evaluation=replace(config.evaluation, synthetic_warmup_steps=0)
        )
        with_pq = cmd_eval_student(zero_warmup, "pq", "curriculum", 0, 0)
        without = cmd_eval_student(zero_warmup, "none", "curriculum", 0, 0)
        assert with_pq.train_rewards.values == without.train_rewards.values
        assert with_pq.reported_pass_k == without.reported_pass_k

    def test_missing_dataset_is_configuration_error(self, mini_run):
        config, _ = mini_run
        with pytest.raises(ConfigurationError):
            cmd_eval_student(config, "sampled", "mixed", 99, 0)

    def test_summary_artifacts_written(self, mini_run):
        config, _ = mini_run
        result = cmd_eval_student(config, "none", "mixed", 0, 0)
        run_dir = Path(config.output_dir) / "eval" / "none-mixed" / "t0-s0"
        summary = json.loads((run_dir / "summary.json").read_text())
        assert summary["config_hash"] == config.hash()
        assert set(summary["reported_pass_k"]) == {"1", "4", "8", "16", "32"}
        assert (run_dir / "train_rewards.jsonl").exists()
        assert (run_dir / "passk.jsonl").exists()
        assert result.final_test_greedy <= 1.0


class TestSampleTeacher:
    def test_sample_from_checkpoint(self, tmp_path):
        config = mini_config(str(tmp_path / "sample"))
        cmd_filter(config)
        cmd_train_soar(config, 1)
        pairs = cmd_sample_teacher(config, 1, count=32)
        assert len(pairs) == 32
        assert all(p.well_formed for p in pairs)
        early = cmd_sample_teacher(config, 1, count=8, checkpoint_step=0)
        assert len(early) == 8

    def test_missing_checkpoint_rejected(self, mini_run):
        config, _ = mini_run
        with pytest.raises(ConfigurationError):
            cmd_sample_teacher(config, 42, count=4)


class TestReport:
    def build_artifacts(self, out: str) -> RunConfig:
        config = mini_config(out)
        config = replace(config, seeds=SeedRoster(teacher=(0,), student=(0,), split=7))
        cmd_filter(config)
        cmd_train_soar(config, 0)
        cmd_train_baseline(config, "hard-only", 0, 0)
        cmd_eval_student(config, "none", "mixed", 0, 0)
        return config

    def test_single_run_has_zero_std(self, tmp_path):
        config = self.build_artifacts(str(tmp_path / "report"))
        tables = cmd_report(config)
        report_dir = Path(tables["report_dir"])
        rows = (report_dir / "passk_table.csv").read_text().splitlines()
        header, data = rows[0].split(","), rows[1:]
        std_col = header.index("std")
        runs_col = header.index("runs")
        for row in data:
            cells = row.split(",")
            if cells[runs_col] == "1":
                assert float(cells[std_col]) == 0.0
        diversity = (report_dir / "diversity_table.csv").read_text().splitlines()
        assert any(line.startswith("d-train,") for line in diversity[1:])
        for line in diversity[1:]:
            vendi_mean = float(line.split(",")[2])
            assert 1.0 <= vendi_mean <= 128.0
        assert (report_dir / "plotdata.jsonl").exists()

    def test_missing_roster_runs_listed(self, tmp_path):
        config = self.build_artifacts(str(tmp_path / "missing"))
        config = replace(config, seeds=SeedRoster(teacher=(0, 5), student=(0,)))
        with pytest.raises(ConfigurationError) as excinfo:
            cmd_report(config)
        assert "t5" in str(excinfo.value)


class TestCli:
    def test_filter_and_report_flow(self, tmp_path, capsys):
        out = tmp_path / "cli"
        config = mini_config(str(out))
        config_path = tmp_path / "config.json"
        config.save(config_path)
        argv = ["--config", str(config_path), "--out", str(out)]
        assert main(argv + ["filter"]) == 0
        assert main(argv + ["--seed", "0", "train-soar"]) == 0
        captured = capsys.readouterr()
        assert "teacher seed 0" in captured.out

    def test_error_paths_return_nonzero(self, tmp_path, capsys):
        out = tmp_path / "cli-err"
        config = mini_config(str(out))
        config_path = tmp_path / "config.json"
        config.save(config_path)
        argv = ["--config", str(config_path), "--out", str(out)]
        assert main(argv + ["--seed", "0", "eval-student", "--source", "pq", "--strategy", "mixed"]) == 1
        captured = capsys.readouterr()
        assert "error:" in captured.err

    def test_bridge_backend_guards(self, tmp_path, capsys):
        out = tmp_path / "cli-bridge"
        config = mini_config(str(out))
        config_path = tmp_path / "config.json"
        config.save(config_path)
        argv = ["--config", str(config_path), "--out", str(out), "--backend", "bridge"]
        assert main(argv + ["train-baseline", "--arm", "hard-only"]) == 1
        assert main(argv + ["sample-teacher"]) == 1  # missing --bridge-cmd
        captured = capsys.readouterr()
        assert "bridge" in captured.err
