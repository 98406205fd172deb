import json

import pytest

from intentmarl.config import (ConfigError, config_hash, default_config, dump_config, from_dict,
                               load_config, to_dict)


def test_round_trip_is_hash_stable(tmp_path):
    cfg = default_config()
    path = tmp_path / "cfg.json"
    dump_config(cfg, path)
    again = load_config(path)
    assert to_dict(again) == to_dict(cfg)
    assert config_hash(again) == config_hash(cfg)
    # key order in the file does not matter
    doc = json.loads(path.read_text())
    shuffled = dict(reversed(list(doc.items())))
    assert config_hash(from_dict(shuffled)) == config_hash(cfg)


def test_hash_changes_with_content():
    a, b = default_config(), default_config()
    b.penalties["URLLC"] = 10.0
    assert config_hash(a) != config_hash(b)


def test_partial_document_takes_defaults():
    cfg = from_dict({"name": "x", "intents": to_dict(default_config())["intents"],
                     "schedule": [{"step": 0, "intents": ["1.1", "2", "3"]}]})
    assert cfg.emulator.capacity_mbps == 20.0 and cfg.name == "x"


@pytest.mark.parametrize("mutate,needle", [
    (lambda d: d["emulator"].update(capacty_mbps=4), "emulator.capacty_mbps"),
    (lambda d: d.update(penalty={}), "penalty"),
    (lambda d: d["training"].update(gamma="high"), "training.gamma"),
    (lambda d: d["emulator"]["ues_per_service"].update(CV=3), "ues_per_service.CV"),
    (lambda d: d["schedule"].insert(0, {"step": 5, "intents": ["1.1", "2", "3"]}), "schedule"),
    (lambda d: d["intents"][0].update(kpi="PLR"), "intents.1.1"),
    (lambda d: d["schedule"][1].update(intents=["1.2", "2", "9"]), "unknown intents"),
    (lambda d: d["training"].update(updates_per_episode=0), "updates_per_episode"),
])
def test_invalid_documents_name_the_problem(mutate, needle):
    doc = to_dict(default_config())
    mutate(doc)
    with pytest.raises(ConfigError, match=needle.replace(".", r"\.")):
        from_dict(doc)


def test_bad_json_is_a_config_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path)


def test_intent_schedule():
    cfg = default_config()
    assert [i.target for i in cfg.intents_at(0)] == [3.0, 0.02, 0.04]
    assert [i.target for i in cfg.intents_at(25)] == [3.5, 0.02, 0.04]
    assert cfg.gnb_capacity() == 20.0
    cfg.emulator.capacity_scope = "total"
    assert cfg.gnb_capacity() == 10.0
