import json

import pytest

from intentmarl import cli
from intentmarl.config import default_config, dump_config, load_config, to_dict


@pytest.fixture
def tiny_scenario(tmp_path):
    cfg = default_config()
    cfg.name = "tiny"
    cfg.env.horizon = 3
    cfg.training.episodes = 2
    cfg.training.batch_episodes = 2
    cfg.evaluation.horizon = 4
    cfg.schedule[1].step = 2
    path = tmp_path / "tiny.json"
    dump_config(cfg, path)
    return path


@pytest.fixture
def out_root(tmp_path, monkeypatch):
    root = tmp_path / "runs"
    monkeypatch.setenv(cli.OUT_ENV, str(root))
    return root


def train(cfg_path, group, *extra):
    return cli.main(["train", "--group", group, "--config", str(cfg_path), *extra])


def test_builtin_scenarios_load():
    for name in cli.BUILTIN_SCENARIOS:
        cfg = cli.read_scenario(name)
        assert cfg.name == name
    assert cli.read_scenario("scenario1").emulator.capacity_mbps == 20.0
    assert cli.read_scenario("scenario2").emulator.capacity_mbps == 4.0
    assert cli.read_scenario("scenario2-penalties").penalties == {"CV": 1.0, "URLLC": 10.0, "MIOT": 1.0}


def test_train_writes_checkpoint_log_and_manifest(tiny_scenario, out_root, capsys):
    assert train(tiny_scenario, "priority", "--seed", "3") == 0
    ck = out_root / "tiny" / "priority-seed3.json"
    assert ck.is_file()
    assert json.loads(ck.read_text())["meta"]["group"] == "PRIORITY"
    log_lines = (out_root / "tiny" / "priority-seed3.log.csv").read_text().splitlines()
    assert log_lines[0] == "episode,return,mean_reward,length,loss,epsilon" and len(log_lines) == 3
    manifest = json.loads((out_root / "tiny" / "priority-seed3.manifest.json").read_text())
    assert manifest["seeds"] == [3] and manifest["command"] == "train"
    assert manifest["config_hash"] == json.loads(ck.read_text())["meta"]["config_hash"]


def test_zero_episodes_warns_and_saves_initial_weights(tiny_scenario, out_root, caplog):
    assert train(tiny_scenario, "mbr", "--episodes", "0", "--out", "init.json") == 0
    assert (out_root / "init.json").is_file()
    assert any("episodes 0" in r.message for r in caplog.records)


def test_malformed_config_names_key(tmp_path, out_root, capsys):
    doc = to_dict(default_config())
    doc["emulator"]["gnbs"] = 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    assert train(bad, "mbr") == 1
    assert "emulator.gnbs" in capsys.readouterr().err


def test_usage_errors_exit_1(capsys):
    assert cli.main([]) == 1
    assert cli.main(["train", "--group", "both"]) == 1
    assert cli.main(["train", "--group", "mbr", "--config", "/nonexistent.json"]) == 1


@pytest.fixture
def checkpoints(tiny_scenario, out_root):
    assert train(tiny_scenario, "priority", "--out", "p.json") == 0
    assert train(tiny_scenario, "mbr", "--out", "m.json") == 0
    return out_root / "p.json", out_root / "m.json"


def evaluate(cfg_path, setup, cks, *extra):
    return cli.main(["evaluate", "--scenario", str(cfg_path), "--setup", setup,
                     "--checkpoints", *map(str, cks), *extra])


def test_evaluate_fans_out_over_seeds(tiny_scenario, checkpoints, out_root):
    assert evaluate(tiny_scenario, "supervised", checkpoints, "--seeds", "1,2,3,4,5", "--out", "sup") == 0
    out = out_root / "sup"
    assert sorted(p.name for p in out.glob("trace_seed*.csv")) == [f"trace_seed{i}.csv" for i in range(1, 6)]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seeds"] == [1, 2, 3, 4, 5]
    assert set(summary["services"]) == {"CV", "URLLC", "MIOT"}
    assert all(len(v) == 4 for v in summary["active_groups"].values())
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seeds"] == [1, 2, 3, 4, 5]
    assert set(manifest["checkpoints"]) == {"priority", "mbr"}
    long_csv = (out / "long.csv").read_text().splitlines()
    assert long_csv[0] == ",".join(cli.LONG_COLUMNS) and len(long_csv) == 1 + 5 * 4 * 3


def test_supervised_needs_both_checkpoints(tiny_scenario, checkpoints, out_root, capsys):
    assert evaluate(tiny_scenario, "supervised", checkpoints[:1], "--out", "x") == 1
    assert "needs checkpoints" in capsys.readouterr().err
    assert not (out_root / "x").exists()


def test_missing_checkpoint_named(tiny_scenario, out_root, capsys):
    assert evaluate(tiny_scenario, "only-mbr", ["mbr=/no/such/file.json"]) == 1
    assert "/no/such/file.json" in capsys.readouterr().err


def test_evaluation_outputs_are_byte_reproducible(tiny_scenario, checkpoints, out_root):
    for name, jobs in (("a", "1"), ("b", "2")):
        assert evaluate(tiny_scenario, "supervised", checkpoints, "--seeds", "0,1",
                        "--jobs", jobs, "--out", name) == 0
    for f in ("trace_seed0.csv", "trace_seed1.csv", "long.csv", "summary.json"):
        assert (out_root / "a" / f).read_bytes() == (out_root / "b" / f).read_bytes()


def test_training_outputs_are_byte_reproducible(tiny_scenario, out_root):
    for name in ("a.json", "b.json"):
        assert train(tiny_scenario, "mbr", "--seed", "4", "--out", name) == 0
    assert (out_root / "a.json").read_bytes() == (out_root / "b.json").read_bytes()
    assert (out_root / "a.log.csv").read_bytes() == (out_root / "b.log.csv").read_bytes()


def test_report_three_setups(tiny_scenario, checkpoints, out_root, capsys):
    p, m = checkpoints
    for setup, cks in (("only-priority", [p]), ("only-mbr", [m]), ("supervised", [p, m])):
        assert evaluate(tiny_scenario, setup, cks, "--seeds", "0,1", "--out", f"rep/{setup}") == 0
    capsys.readouterr()
    assert cli.main(["report", "--runs", str(out_root / "rep"), "--out", "report.md"]) == 0
    text = capsys.readouterr().out
    assert "| Service | only-mbr | only-priority | supervised |" in text
    assert "Qualitative checks" in text
    assert (out_root / "report.md").read_text() == text


def test_report_single_run_has_no_flags(tiny_scenario, checkpoints, out_root, capsys):
    assert evaluate(tiny_scenario, "only-mbr", checkpoints[1:], "--seeds", "0", "--out", "one") == 0
    capsys.readouterr()
    assert cli.main(["report", "--runs", str(out_root / "one")]) == 0
    text = capsys.readouterr().out
    assert "| Service | only-mbr |" in text and "*" not in text and "PASS" not in text


def test_report_rejects_empty_and_mixed(tmp_path, tiny_scenario, checkpoints, out_root):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert cli.main(["report", "--runs", str(empty)]) == 1
    other = load_config(tiny_scenario)
    other.name = "other"
    other_path = tmp_path / "other.json"
    dump_config(other, other_path)
    assert evaluate(tiny_scenario, "only-mbr", checkpoints[1:], "--seeds", "0", "--out", "mix/a") == 0
    assert evaluate(other_path, "only-priority", checkpoints[:1], "--seeds", "0", "--out", "mix/b") == 0
    assert cli.main(["report", "--runs", str(out_root / "mix")]) == 1


def test_module_entry_point_version(capsys):
    assert cli.main(["--version"]) == 0
    assert "intentmarl" in capsys.readouterr().out
