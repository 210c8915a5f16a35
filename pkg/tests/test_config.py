import pytest

from missiongnn.config import PRESETS, Config, load_config, parse_overrides, preset


def test_defaults():
    c = Config()
    assert (c.lr, c.weight_decay, c.batch_size, c.T, c.gnn_dim) == (1e-5, 1.0, 128, 30, 8)
    assert c.alpha_d == 0.9999 and c.lambda_aplus is None


def test_round_trip_text(tmp_path):
    c = preset("synthetic").replace(lambda_aplus=0.5, positional=False)
    path = tmp_path / "run.cfg"
    c.save(path)
    assert load_config(path) == c


def test_dict_round_trip():
    c = Config(seed=9)
    assert Config.from_dict(c.to_dict()) == c
    with pytest.raises(KeyError):
        Config.from_dict({"nope": 1})


def test_overrides_coerce():
    o = parse_overrides({"lr": "3e-4", "positional": "no", "steps": "10", "lambda_aplus": ""})
    assert o == {"lr": 3e-4, "positional": False, "steps": 10, "lambda_aplus": None}
    with pytest.raises((KeyError, ValueError)):
        parse_overrides({"positional": "maybe"})


def test_partial_file_keeps_base(tmp_path):
    path = tmp_path / "p.cfg"
    path.write_text("steps = 7\n")
    c = load_config(path, base=preset("synthetic"))
    assert c.steps == 7 and c.d_emb == 64


def test_presets():
    assert set(PRESETS) >= {"paper", "paper_decay099", "synthetic"}
    assert preset("paper_decay099").alpha_d == 0.99
    assert preset("paper") is not preset("paper")
    with pytest.raises(KeyError):
        preset("missing")
