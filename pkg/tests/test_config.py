import pytest

from sclab import config
from sclab.config import ConfigError


@pytest.mark.parametrize("make", [config.ecg_config, config.imu_config])
def test_text_round_trip(make):
    cfg = make()
    assert config.loads(config.dumps(cfg)) == cfg


def test_round_trip_after_overrides(tmp_path):
    cfg = config.imu_config(**{"hp.beta": "0.25", "run.seed": 4, "partition.d_inv": "16", "partition.d_var": "16"})
    config.save(cfg, tmp_path / "c.txt")
    assert config.load(tmp_path / "c.txt") == cfg


def test_comments_and_blank_lines():
    cfg = config.loads("# header\n\nhp.lam = 0.5   # weaker\nrun.steps=7\n")
    assert cfg.hp.lam == 0.5 and cfg.run.steps == 7


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="hp.gamma"):
        config.apply_overrides(config.ecg_config(), {"hp.gamma": "1"})
    with pytest.raises(ConfigError, match="section"):
        config.apply_overrides(config.ecg_config(), {"nope.x": "1"})


def test_bad_value_names_key():
    with pytest.raises(ConfigError, match="run.steps"):
        config.loads("run.steps = many\n")


def test_partition_must_match_latent_width():
    with pytest.raises(ConfigError, match="32"):
        config.ecg_config(**{"partition.d_var": 4})


def test_classifier_width_checked():
    with pytest.raises(ConfigError, match="classes"):
        config.imu_config(**{"head.out_width": 5})


def test_transform_family_checked():
    with pytest.raises(ConfigError, match="3-channel"):
        config.ecg_config(**{"transform.kind": "ROTATION_3D"})


def test_invalid_mode_rejected():
    with pytest.raises(ConfigError, match="mode"):
        config.ecg_config(**{"hp.mode": "SUPERVISED"})


def test_rebalance_partition():
    cfg = config.rebalance_partition(config.imu_config(), 0)
    assert (cfg.partition.d_inv, cfg.partition.d_var, cfg.partition.d_free) == (0, 32, 0)
    with pytest.raises(ConfigError):
        config.rebalance_partition(cfg, 40)


def test_run_name_records_mode_and_differs():
    a = config.ecg_config(**{"hp.mode": "BASELINE"})
    b = config.ecg_config(**{"hp.mode": "STRUCTURED"})
    assert "baseline" in a.run_name() and "structured" in b.run_name()
    assert a.run_name() != b.run_name()
