import json

import numpy as np
import pytest

from extractlab import cli
from extractlab.harness import (
    ConfigError,
    CorpusSpec,
    ExperimentConfig,
    append_ledger_rows,
    cmd_attack,
    cmd_run_table,
    cmd_train_gan,
    cmd_train_victim,
)

TINY_CONFIG = {
    "experiment_id": "unit-tiny",
    "seed": 3,
    "victim_corpus": {"kind": "synth", "n_speakers": 4, "examples_per_speaker": 10, "duration_s": 0.12},
    "proxy_corpus": {"kind": "synth", "n_speakers": 4, "examples_per_speaker": 10, "duration_s": 0.12},
    "model": {"input_len": 1024, "width_scale": 0.0625, "embedding_dim": 32},
    "victim_train": {"epochs": 4, "batch_size": 8},
    "attack": {"epochs": 2, "batch_size": 8, "volume": 12},
    "gan": {"dim_mult": 2, "batch_size": 4, "steps": 6},
    "tables": {"t1_volume": 10, "t1_subset_volume": 5, "t2_volume": 8, "t3_gan_volume": 12,
               "t4_alphas": [2], "t4_betas": [1.0], "t4_n": [1, 2], "t4_size": 10},
}


@pytest.fixture(scope="module")
def trained_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    cfg = ExperimentConfig.from_dict(TINY_CONFIG)
    record = cmd_train_victim(cfg, out)
    return cfg, out, record


class TestConfig:
    def test_json_round_trip(self, tmp_path):
        cfg = ExperimentConfig.from_dict(TINY_CONFIG)
        path = tmp_path / "cfg.json"
        cfg.to_json(path)
        back = ExperimentConfig.from_json(path)
        assert back == cfg

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"bogus_key": 1})

    def test_bad_corpus_kind(self):
        cfg = ExperimentConfig.from_dict({**TINY_CONFIG, "victim_corpus": {"kind": "nope"}})
        with pytest.raises(ConfigError):
            cfg.victim_corpus.build(0)

    def test_missing_config_file(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_json("/does/not/exist.json")


class TestLedger:
    def test_append_creates_header_once(self, tmp_path):
        path = tmp_path / "ledger.csv"
        append_ledger_rows(path, [{"run_id": "a", "table": "t1", "volume": 3}])
        append_ledger_rows(path, [{"run_id": "b", "table": "t1", "volume": 4}])
        lines = path.read_text().strip().splitlines()
        assert lines[0].startswith("run_id,table,source,volume")
        assert len(lines) == 3


class TestCommands:
    def test_train_victim_emits_checkpoint_and_metrics(self, trained_out):
        cfg, out, record = trained_out
        assert (out / "victim.pt").exists()
        assert 0.0 <= record["test_accuracy"] <= 1.0

    def test_train_victim_rerun_identical_accuracy(self, trained_out, tmp_path):
        cfg, _, record = trained_out
        again = cmd_train_victim(cfg, tmp_path)
        assert again["test_accuracy"] == record["test_accuracy"]

    def test_attack_writes_ledger_row(self, trained_out):
        cfg, out, _ = trained_out
        row, truncated = cmd_attack(cfg, out)
        assert not truncated
        assert row["volume"] == 12
        assert (out / "ledger.csv").exists()

    def test_missing_checkpoint_is_config_error(self, tmp_path):
        cfg = ExperimentConfig.from_dict(TINY_CONFIG)
        with pytest.raises(ConfigError):
            cmd_attack(cfg, tmp_path / "empty")

    def test_t1_emits_nine_rows(self, trained_out):
        cfg, out, _ = trained_out
        rows, truncated = cmd_run_table(cfg, "t1", out)
        assert len(rows) == 9
        assert not truncated
        sources = [r["source"] for r in rows]
        assert sources[0] == "proxy_full"
        assert "gaussian_noise" in sources
        assert "interpolation" in sources

    def test_t2_emits_four_rows(self, trained_out):
        cfg, out, _ = trained_out
        rows, _ = cmd_run_table(cfg, "t2", out)
        assert len(rows) == 4

    def test_t4_requires_gan(self, trained_out):
        cfg, out, _ = trained_out
        with pytest.raises(ConfigError):
            cmd_run_table(cfg, "t4", out)

    def test_t4_rows_and_plots(self, trained_out):
        cfg, out, _ = trained_out
        cmd_train_gan(cfg, out, train_on="proxy")
        rows, _ = cmd_run_table(cfg, "t4", out)
        # one row per (n, policy): 2 n-values x (1 beta + 1 alpha)
        assert len(rows) == 4
        plots = out / "plots"
        assert any(p.suffix == ".png" for p in plots.iterdir())
        assert any(p.suffix == ".csv" for p in plots.iterdir())

    def test_unknown_table_rejected(self, trained_out):
        cfg, out, _ = trained_out
        with pytest.raises(ConfigError):
            cmd_run_table(cfg, "t9", out)


class TestCli:
    def test_train_and_attack_exit_zero(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(TINY_CONFIG))
        out = tmp_path / "out"
        assert cli.main(["train-victim", "--config", str(cfg_path), "--out", str(out)]) == 0
        capsys.readouterr()
        assert cli.main(["attack", "--config", str(cfg_path), "--out", str(out)]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["table"] == "attack"

    def test_missing_checkpoint_exit_two(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(TINY_CONFIG))
        assert cli.main(["attack", "--config", str(cfg_path), "--out", str(tmp_path / "none")]) == 2

    def test_truncated_attack_exit_three(self, tmp_path):
        config = dict(TINY_CONFIG)
        config["budget"] = 5
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(config))
        out = tmp_path / "out"
        assert cli.main(["train-victim", "--config", str(cfg_path), "--out", str(out)]) == 0
        assert cli.main(["attack", "--config", str(cfg_path), "--out", str(out)]) == 3

    def test_bad_config_exit_two(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text("{not json")
        assert cli.main(["train-victim", "--config", str(cfg_path), "--out", str(tmp_path)]) == 2


class TestRemoteAttack:
    def test_remote_attack_matches_in_process(self, trained_out):
        from extractlab.harness import cmd_attack_remote, cmd_serve_oracle

        cfg, out, _ = trained_out
        server = cmd_serve_oracle(cfg, out, port=0)
        try:
            remote_row, remote_trunc = cmd_attack_remote(cfg, server.url, out)
        finally:
            server.close()
        local_row, local_trunc = cmd_attack(cfg, out)
        assert remote_trunc == local_trunc == False
        assert remote_row["volume"] == local_row["volume"]
        assert remote_row["coverage"] == local_row["coverage"]
        assert remote_row["test_accuracy"] == local_row["test_accuracy"]


class TestTablesT3AndReverse:
    def test_t3_needs_both_generators(self, trained_out, tmp_path_factory):
        import shutil

        cfg, out, _ = trained_out
        solo = tmp_path_factory.mktemp("t3")
        shutil.copy(out / "victim.pt", solo / "victim.pt")
        with pytest.raises(ConfigError):
            cmd_run_table(cfg, "t3", solo)

    def test_t3_emits_four_rows(self, trained_out):
        cfg, out, _ = trained_out
        cmd_train_gan(cfg, out, train_on="proxy")
        cmd_train_gan(cfg, out, train_on="self")
        rows, _ = cmd_run_table(cfg, "t3", out)
        assert [r["source"] for r in rows] == ["proxy_full", "self_full", "proxy_gan", "self_gan"]

    def test_reverse_requires_reverse_victim(self, trained_out):
        cfg, out, _ = trained_out
        with pytest.raises(ConfigError):
            cmd_run_table(cfg, "reverse", out)

    def test_reverse_runs_with_swapped_roles(self, trained_out):
        cfg, out, _ = trained_out
        cmd_train_victim(cfg, out, reverse=True)
        rows, _ = cmd_run_table(cfg, "reverse", out)
        assert len(rows) >= 2
        assert rows[0]["table"] == "reverse"
