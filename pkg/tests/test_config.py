import math

import pytest

from percabs.config import (ConfigError, MarginPolicy, SolverConfig, config_hash, load_scenario,
                            read_scenario_bytes, scenario_from_dict, scenario_to_dict)
from percabs.models import Combiner, ErrorFn, VehicleKind
from percabs.perception import Dataset


def test_gem_preset_constants():
    cfg = load_scenario("gem")
    p = cfg.params
    assert (p.v_f, p.wheel_base, p.dt, p.sat_limit, p.gain) == (2.8, 1.75, 0.1, 0.61, 0.45)
    assert p.kind is VehicleKind.BICYCLE
    assert cfg.unsafe.y_limit == 2.0 and cfg.unsafe.theta_limit is None
    assert cfg.initial == ((-1.2, 1.2), (-math.pi / 12, math.pi / 12))
    assert (cfg.partition.n_y, cfg.partition.n_theta) == (8, 5)
    assert cfg.percept_search == ((-3.0, 3.0), (-math.pi / 2, math.pi / 2))
    assert len(cfg.environments) == 6 and cfg.perception.noise_bound == 0.01


def test_agbot_preset_constants():
    cfg = load_scenario("agbot")
    p = cfg.params
    assert (p.v_f, p.dt, p.sat_limit, p.gain) == (1.0, 0.05, 0.5, 0.1)
    assert p.kind is VehicleKind.SKID_STEER
    assert cfg.unsafe.y_limit == 0.228
    assert cfg.unsafe.theta_limit == pytest.approx(math.pi / 6)
    assert cfg.unsafe.combiner is Combiner.AND
    assert len(cfg.environments) == 5


def test_default_solver():
    s = SolverConfig()
    assert s.max_nodes == 2_000_000 and s.falsifier_grid == 25 and s.nm_iters == 200
    assert s.margin_policy is MarginPolicy.INTERVAL_GAP


@pytest.mark.parametrize("name", ["gem", "agbot"])
def test_dict_round_trip(name):
    cfg = load_scenario(name)
    assert scenario_from_dict(scenario_to_dict(cfg)) == cfg


def test_overrides():
    cfg = load_scenario("gem").with_error_fn("V2").with_partition(8, 10).with_solver(max_nodes=5)
    assert cfg.error_fn is ErrorFn.V2 and cfg.partition.n_theta == 10
    assert cfg.solver.max_nodes == 5


def test_search_box_must_cover_truth_image():
    doc = scenario_to_dict(load_scenario("gem"))
    doc["percept_search"]["d"] = [-1.0, 1.0]
    with pytest.raises(ConfigError, match="ground-truth image"):
        scenario_from_dict(doc)


def test_theta_outside_pi_rejected():
    doc = scenario_to_dict(load_scenario("gem"))
    doc["partition"]["theta_range"] = [-4.0, 4.0]
    doc["percept_search"]["psi"] = [-5.0, 5.0]
    with pytest.raises(ConfigError):
        scenario_from_dict(doc)


@pytest.mark.parametrize("patch", [
    lambda d: d.pop("params"),
    lambda d: d["params"].update(v_f=-1.0),
    lambda d: d["solver"].update(min_box_width=0.0),
    lambda d: d.update(norm="l3"),
    lambda d: d["partition"].update(y_range=[1.0]),
])
def test_invalid_documents(patch):
    doc = scenario_to_dict(load_scenario("gem"))
    patch(doc)
    with pytest.raises(ConfigError):
        scenario_from_dict(doc)


def test_missing_file_and_bad_toml(tmp_path):
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "nope.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("name = [")
    with pytest.raises(ConfigError):
        load_scenario(bad)


def test_hash_matches_bytes():
    raw, where = read_scenario_bytes("gem")
    assert where == "preset:gem" and len(config_hash(raw)) == 64


def test_validate_percepts_rejects_outliers():
    cfg = load_scenario("gem")
    data = Dataset([[0, 0.1, 0.0]], [0], [[-0.1, 0.0]], [[5.0, 0.0]])
    with pytest.raises(ConfigError, match="outside"):
        cfg.validate_percepts(data)
    cfg.validate_percepts(Dataset.empty())
