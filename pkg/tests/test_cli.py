"""Command-line interface: exit codes and artifact plumbing."""

import json
import subprocess
import sys

import pytest

from dffrec.cli import main

TINY = """
# desk-sized synthetic run
store = {store}
log = {log}
caption_store = {cap}
out_dir = {out}
seed = 0
synth.num_users = 25
synth.num_items = 20
synth.num_topics = 4
synth.num_layers = 2
synth.dim = 4
synth.signal_layers = 1,2
synth.min_len = 4
synth.max_len = 8
model.dim = 8
model.num_blocks = 1
model.num_heads = 1
model.max_seq_len = 6
train.learning_rate = 0.01
train.batch_size = 16
train.patience = 2
train.max_epochs = 2
train.lr_grid =
train.dim_grid =
eval.cutoffs = 5,10
"""


@pytest.fixture()
def cfg(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(TINY.format(store=tmp_path / "s.dffs", log=tmp_path / "log.tsv",
                                cap=tmp_path / "cap.dffs", out=tmp_path / "out"))
    return path


def test_print_defaults(capsys):
    assert main(["--print-defaults"]) == 0
    out = capsys.readouterr().out
    assert "model.strategy = fusion" in out
    assert "synth.num_users = 500" in out
    assert "train.lr_grid = 0.0001,1e-05,1e-06" in out


def test_no_subcommand_is_usage_error(capsys):
    assert main([]) == 1
    assert "subcommand" in capsys.readouterr().err


def test_unknown_flag_exits_one():
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--config", "x", "--frobnicate"])
    assert exc.value.code == 1


def test_missing_config_file(capsys, tmp_path):
    assert main(["synth", "--config", str(tmp_path / "nope.cfg")]) == 1
    assert "cannot read config" in capsys.readouterr().err


def test_unknown_config_key(capsys, tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("modle.dim = 8\n")
    assert main(["train", "--config", str(bad)]) == 1
    assert "unknown config key 'modle.dim'" in capsys.readouterr().err


def test_synth_validate_round_trip(cfg, tmp_path, capsys):
    assert main(["synth", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "wrote 20 items" in out
    assert (tmp_path / "s.dffs").exists() and (tmp_path / "log.tsv").exists()
    assert (tmp_path / "cap.dffs").exists()

    assert main(["validate", "--store", str(tmp_path / "s.dffs"),
                 "--log", str(tmp_path / "log.tsv")]) == 0
    assert "status: clean" in capsys.readouterr().out


def test_validate_flags_missing_items(cfg, tmp_path, capsys):
    main(["synth", "--config", str(cfg)])
    with open(tmp_path / "log.tsv", "a") as f:
        f.write("999\t9999\t0\n999\t9998\t1\n999\t19\t2\n")
    assert main(["validate", "--store", str(tmp_path / "s.dffs"),
                 "--log", str(tmp_path / "log.tsv")]) == 2
    out = capsys.readouterr().out
    assert "MISSING from store: 9998, 9999" in out
    assert "status: FAILED" in out


def test_train_writes_checkpoint_and_manifest(cfg, tmp_path, capsys):
    main(["synth", "--config", str(cfg)])
    assert main(["train", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "checkpoint ->" in out
    assert (tmp_path / "out" / "checkpoint.dffc").exists()
    manifest = (tmp_path / "out" / "manifest.txt").read_text()
    assert "seed = 0" in manifest
    assert "store_sha256 = " in manifest
    assert "created_at = " in manifest
    assert "best = lr=0.01,dim=8" in manifest


def test_eval_reads_back_checkpoint(cfg, tmp_path, capsys):
    main(["synth", "--config", str(cfg)])
    main(["train", "--config", str(cfg)])
    capsys.readouterr()
    assert main(["eval", "--config", str(cfg), "--phase", "test",
                 "--checkpoint", str(tmp_path / "out" / "checkpoint.dffc")]) == 0
    out = capsys.readouterr().out
    assert "phase: test" in out
    assert (tmp_path / "out" / "report_test.txt").exists()
    assert (tmp_path / "out" / "report_test.csv").read_text().startswith(
        "phase,cutoff,hit_rate,ndcg,num_users")


def test_eval_rejects_mismatched_store(cfg, tmp_path, capsys):
    main(["synth", "--config", str(cfg)])
    main(["train", "--config", str(cfg)])
    # regenerate the store with a different feature dim, same catalog size
    wide = tmp_path / "wide.cfg"
    wide.write_text(cfg.read_text().replace("synth.dim = 4", "synth.dim = 8")
                    .replace("s.dffs", "w.dffs"))
    main(["synth", "--config", str(wide)])
    capsys.readouterr()
    assert main(["eval", "--config", str(wide), "--phase", "test",
                 "--checkpoint", str(tmp_path / "out" / "checkpoint.dffc")]) == 2
    assert "checkpoint expects features" in capsys.readouterr().err


def test_dff_command_exports_weights(cfg, tmp_path, capsys):
    main(["synth", "--config", str(cfg)])
    capsys.readouterr()
    assert main(["dff", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "learned layer weights:" in out
    payload = json.loads((tmp_path / "out" / "dff_weights.json").read_text())
    assert len(payload["layer_weights"]) == 2
    assert abs(sum(payload["layer_weights"]) - 1.0) < 1e-6


def test_layer_sweep_command(cfg, tmp_path, capsys):
    main(["synth", "--config", str(cfg)])
    capsys.readouterr()
    assert main(["layer-sweep", "--config", str(cfg)]) == 0
    lines = capsys.readouterr().out.strip().split("\n")
    assert lines[0] == "arm,layer,hr10,ndcg10,hr20,ndcg20,seed"
    assert len(lines) == 4                       # L=2 singles + uniform
    assert (tmp_path / "out" / "layer_sweep.csv").exists()


def test_strategy_matrix_command(cfg, tmp_path, capsys):
    main(["synth", "--config", str(cfg)])
    capsys.readouterr()
    assert main(["strategy-matrix", "--config", str(cfg)]) == 0
    lines = capsys.readouterr().out.strip().split("\n")
    assert len(lines) == 7                       # header + 6 table rows
    assert (tmp_path / "out" / "strategy_matrix.txt").exists()


def test_synth_requires_output_paths(tmp_path, capsys):
    cfg = tmp_path / "min.cfg"
    cfg.write_text("seed = 1\n")
    assert main(["synth", "--config", str(cfg)]) == 1
    assert "requires config keys" in capsys.readouterr().err


def test_seed_flag_overrides_config(cfg, tmp_path, capsys):
    assert main(["synth", "--config", str(cfg), "--seed", "3"]) == 0
    a = (tmp_path / "s.dffs").read_bytes()
    assert main(["synth", "--config", str(cfg)]) == 0
    assert a != (tmp_path / "s.dffs").read_bytes()


def test_installed_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "dffrec.cli", "--print-defaults"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "model.dim = 32" in proc.stdout
