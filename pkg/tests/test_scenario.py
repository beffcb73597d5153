import math

import numpy as np
import pytest
import yaml

from disac.scenario import (ConfigError, GeometryError, RcsModelSpec, db2lin,
                            default_table2_config, derive_geometry, desk_scale_config,
                            load_config, make_config, save_config, spawn_rng_stream)


def test_desk_defaults():
    cfg = desk_scale_config(seed=3)
    assert (cfg.num_nodes, cfg.tx_antennas, cfg.num_ues) == (2, 4, 2)
    assert cfg.seed == 3


def test_table2_sizes():
    cfg = default_table2_config()
    assert cfg.tx_antennas == 12 and cfg.num_ues == 3
    assert cfg.power_budget / cfg.comm_noise == pytest.approx(1000.0)
    assert cfg.sync_error_bound == 0.01


def test_rng_streams_are_reproducible_and_distinct():
    a = spawn_rng_stream(7, "channels").standard_normal(5)
    b = spawn_rng_stream(7, "channels").standard_normal(5)
    c = spawn_rng_stream(7, "aoa").standard_normal(5)
    d = spawn_rng_stream(8, "channels").standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.allclose(a, c) and not np.allclose(a, d)


def test_config_hash_tracks_content():
    a = desk_scale_config(seed=0)
    assert a.config_hash() == desk_scale_config(seed=0).config_hash()
    assert a.config_hash() != a.replace(sync_error_bound=0.05).config_hash()


def test_yaml_units_are_converted(tmp_path):
    base = desk_scale_config(seed=0).to_dict()
    base.pop("sinr_threshold")
    base.pop("aoa_half_width")
    base["sinr_threshold_db"] = 10.0
    base["aoa_half_width_deg"] = [2.0, 5.0]
    p = tmp_path / "s.yaml"
    p.write_text(yaml.safe_dump(base))
    cfg = load_config(p)
    assert cfg.sinr_threshold == pytest.approx(10.0)
    assert cfg.aoa_half_width == pytest.approx((math.radians(2), math.radians(5)))


def test_save_load_round_trip(tmp_path):
    cfg = desk_scale_config(seed=4)
    save_config(cfg, tmp_path / "c.yaml")
    again = load_config(tmp_path / "c.yaml")
    assert again.config_hash() == cfg.config_hash()


@pytest.mark.parametrize("field,value", [
    ("sync_error_bound", 0.5), ("sync_error_bound", -0.1), ("power_budget", 0.0),
    ("clutter_cnr", -1.0), ("aoa_grid_points", 4), ("robust_numerator", "other"),
])
def test_invalid_fields_rejected(field, value):
    with pytest.raises(ConfigError):
        desk_scale_config(seed=0).replace(**{field: value})


def test_mismatched_positions_rejected():
    cfg = desk_scale_config(seed=0)
    with pytest.raises(ConfigError):
        cfg.replace(ue_positions=cfg.ue_positions[:1])


def test_unknown_rcs_model():
    with pytest.raises(ConfigError):
        RcsModelSpec(kind="rayleigh")


def test_geometry_rejects_node_under_target():
    cfg = desk_scale_config(seed=0)
    tgt = cfg.target_position
    nodes = list(cfg.node_positions)
    nodes[0] = (tgt[0], tgt[1], 0.0)
    with pytest.raises(GeometryError):
        derive_geometry(cfg.replace(node_positions=tuple(nodes)))


def test_geometry_ranges_match_slant_range():
    cfg = make_config(num_nodes=3, antennas=4, num_ues=2, seed=1, slant_range=100.0)
    geo = derive_geometry(cfg)
    assert np.allclose(geo.target_ranges, 100.0)
    assert geo.ue_angles.shape == (3, 2)


def test_db2lin():
    assert db2lin(10) == pytest.approx(10.0)
    assert db2lin(0) == 1.0
