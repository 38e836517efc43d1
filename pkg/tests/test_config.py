import copy
import json
from pathlib import Path

import pytest

from conestab.config import ConfigError, config_from_dict, load_config, loads_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

MINIMAL = {
    "dimension": 1,
    "faces": [{"normal": [1.0], "direction": [1.0]}],
    "delta": 1.0,
    "model": {
        "drift": {"type": "constant", "b": [-1.0]},
        "sigma": {"type": "constant", "matrix": [[1.0]]},
    },
}


def with_changes(**changes):
    raw = copy.deepcopy(MINIMAL)
    for dotted, value in changes.items():
        node = raw
        *head, last = dotted.split("__")
        for key in head:
            node = node.setdefault(key, {})
        node[last] = value
    return raw


def test_minimal_config_uses_defaults():
    cfg = config_from_dict(MINIMAL)
    assert cfg.dimension == 1
    assert cfg.lipschitz_K is None
    assert cfg.sim["h"] == 0.01 and cfg.sim["n_paths"] == 1
    assert cfg.x0 == (0.0,)
    m = cfg.build_model()
    assert m.b([3.0])[0] == -1.0


def test_shipped_configs_load():
    for p in sorted(CONFIGS.glob("*.json")):
        cfg = load_config(p)
        assert cfg.cone.contains(cfg.x0)


def test_expression_drift():
    raw = with_changes(model__drift={"type": "expr", "exprs": ["min(-1, -x0)"]})
    assert config_from_dict(raw).build_model().b([2.0])[0] == -2.0


def test_bad_face_reports_index():
    raw = copy.deepcopy(MINIMAL)
    raw["dimension"] = 2
    raw["faces"] = [
        {"normal": [1.0, 0.0], "direction": [1.0, 0.0]},
        {"normal": [0.0, 1.0], "direction": [1.0, 0.0]},
    ]
    raw["model"]["drift"]["b"] = [-1.0, -1.0]
    raw["model"]["sigma"]["matrix"] = [[1.0, 0.0], [0.0, 1.0]]
    with pytest.raises(ConfigError) as info:
        config_from_dict(raw)
    assert info.value.path == "faces[1]"


def test_wrong_vector_length_reports_field():
    raw = with_changes(model__drift={"type": "constant", "b": [-1.0, 0.0]})
    with pytest.raises(ConfigError) as info:
        config_from_dict(raw)
    assert info.value.path.startswith("model.drift")


def test_parse_error_has_line_and_column():
    with pytest.raises(ConfigError, match=r"line 2, column \d+"):
        loads_config('{\n  "dimension": ,\n}')


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError) as info:
        config_from_dict(with_changes(bogus=1))
    assert info.value.path == "bogus"
    with pytest.raises(ConfigError) as info:
        config_from_dict(with_changes(sim__stepsize=0.1))
    assert info.value.path == "sim.stepsize"


def test_invalid_values():
    cases = [
        (with_changes(delta=-1.0), "delta"),
        (with_changes(lipschitz_K=0.5), "lipschitz_K"),
        (with_changes(sim__h=0.03, sim__horizon=1.0), "sim.horizon"),
        (with_changes(sim__x0=[-1.0]), "sim"),
        (with_changes(model__drift={"type": "expr", "exprs": ["-1 +"]}), "model.drift"),
        (with_changes(model__sigma={"type": "diag_expr", "exprs": ["1"]}), "model.gamma_bound"),
        (with_changes(diagnose__estimator="guess"), "diagnose.estimator"),
    ]
    for raw, prefix in cases:
        with pytest.raises(ConfigError) as info:
            config_from_dict(raw)
        assert info.value.path.startswith(prefix), (raw, info.value)


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/config.json")


def test_round_trip():
    for p in sorted(CONFIGS.glob("*.json")):
        a = load_config(p)
        text = a.dumps()
        b = loads_config(text)
        assert a == b
        assert b.dumps() == text
        assert json.loads(text) == a.to_dict()


def test_expressions_stored_canonically():
    raw = with_changes(model__drift={"type": "expr", "exprs": ["-1+0*x0"]})
    text = config_from_dict(raw).dumps()
    assert "(-1.0 + (0.0 * x0))" in text
