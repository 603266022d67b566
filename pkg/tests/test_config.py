import json

import pytest

from solitonnf.config import ConfigError, cubic_default, from_dict, load, potential_default


def test_defaults_validate():
    assert from_dict(potential_default()).model.kind == "potential"
    assert from_dict(cubic_default()).grid.n == 256


def test_toml_and_json_agree(tmp_path):
    (tmp_path / "a.toml").write_text(
        '[model]\nkind = "cubic"\n[grid]\nn = 64\n[soliton]\nlam = [-1.0, 0.0]\n')
    (tmp_path / "a.json").write_text(json.dumps(
        {"model": {"kind": "cubic"}, "grid": {"n": 64}, "soliton": {"lam": [-1.0, 0.0]}}))
    a, b = load(tmp_path / "a.toml"), load(tmp_path / "a.json")
    assert a.digest() == b.digest()


def test_output_relative_to_config(tmp_path):
    (tmp_path / "c.toml").write_text('output = "res"\n[soliton]\np = [0.06]\n')
    assert load(tmp_path / "c.toml").output == str(tmp_path / "res")


def test_digest_ignores_output_location():
    a = from_dict(dict(potential_default(), output="x"))
    b = from_dict(dict(potential_default(), output="y"))
    assert a.digest() == b.digest()
    c = from_dict(dict(potential_default(), seed=1))
    assert c.digest() != a.digest()


@pytest.mark.parametrize("raw", [
    {"soliton": {"p": [0.06]}, "bogus": 1},
    {"soliton": {"p": [0.06]}, "grid": {"n": 31}},
    {"soliton": {"p": [0.06], "lam": [-4.0]}},
    {"soliton": {}},
    {"soliton": {"p": [0.06]}, "audit": {"samples": 0}},
    {"soliton": {"p": [0.06]}, "model": {"kind": "kdv"}},
    {"soliton": {"p": [0.06]}, "normalform": {"max_degree": 1}},
    {"soliton": {"p": [0.06]}, "normalform": {"oracle_eps": []}},
    {"soliton": {"p": [0.06]}, "chart": {"typo": 1}},
])
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        from_dict(raw)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load(tmp_path / "nope.toml")


def test_unparsable_file(tmp_path):
    (tmp_path / "bad.toml").write_text("[model\n")
    with pytest.raises(ConfigError):
        load(tmp_path / "bad.toml")
