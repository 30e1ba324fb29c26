from pathlib import Path

import pytest

from causalhsp.config import RunConfig, load_config, parse_bounds
from causalhsp.errors import ConfigInvalid

SHIPPED = Path(__file__).resolve().parents[1] / "src" / "causalhsp" / "data" / "backtest.ini"


def write(tmp_path, text):
    p = tmp_path / "run.ini"
    p.write_text(text)
    return p


def test_parse_bounds():
    assert parse_bounds("0.03:0.10") == (0.03, 0.10)
    assert parse_bounds("none") is None
    assert parse_bounds(":0.5") == (None, 0.5)
    with pytest.raises(ValueError):
        parse_bounds("0.1")


def test_typed_values_and_relative_paths(tmp_path):
    cfg = load_config(write(tmp_path, "[run]\nseed = 4\n[data]\nassets = a.csv\n[selection]\nexclude = X1, X2\n"
                                      "screen_collinear = yes\n[allocation]\nbounds = 0:1\n"))
    assert cfg.get("run", "seed") == 4
    assert cfg.get("data", "assets") == str(tmp_path / "a.csv")
    assert cfg.get("selection", "exclude") == ["X1", "X2"]
    assert cfg.get("selection", "screen_collinear") is True
    assert cfg.get("allocation", "bounds") == (0.0, 1.0)
    assert cfg.get("allocation", "gamma", 2.0) == 2.0


@pytest.mark.parametrize("text,fragment", [
    ("[nope]\nx = 1\n", "unknown section"),
    ("[run]\ncolour = red\n", "unknown key"),
    ("[run]\nseed = seven\n", "seed"),
    ("[geometry]\npsd_repair = maybe\n", "psd_repair"),
    ("no header\n", "unparseable"),
])
def test_invalid_configs_name_the_problem(tmp_path, text, fragment):
    with pytest.raises(ConfigInvalid) as exc:
        load_config(write(tmp_path, text))
    assert fragment in str(exc.value)
    assert exc.value.details["path"] == str(tmp_path / "run.ini")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigInvalid):
        load_config(tmp_path / "absent.ini")


def test_no_config_and_overrides():
    cfg = load_config(None)
    assert isinstance(cfg, RunConfig) and cfg.get("run", "seed") is None
    cfg.set("run", "seed", 3)
    cfg.set("run", "output", None)
    assert cfg.get("run", "seed") == 3 and cfg.get("run", "output") is None


def test_shipped_config_is_valid():
    cfg = load_config(SHIPPED)
    assert Path(cfg.get("data", "assets")).is_file()
    assert cfg.get("allocation", "bounds") == (0.03, 0.10)
