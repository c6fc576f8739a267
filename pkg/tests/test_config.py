import pytest

from brsm.config import PRESETS, RunConfig, preset
from brsm.layer import ConfigError


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_echo_round_trip(name):
    cfg = preset(name)
    assert RunConfig.from_text(cfg.to_text()) == cfg


def test_round_trip_with_optional_and_partitions():
    cfg = RunConfig(rsm_freeze_step=7, partitions="feed-forward:0.1,recurrent:0.8,integrated:0.1")
    assert RunConfig.from_text(cfg.to_text()) == cfg
    assert cfg.partition_spec() is not None


def test_unknown_keys_are_errors():
    with pytest.raises(ConfigError):
        RunConfig.from_text("[model]\nmm = 3\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("[modle]\nm = 3\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("[training]\nm = 3\n")
    with pytest.raises(ConfigError):
        RunConfig().with_overrides(["mm=3"])
    with pytest.raises(ConfigError):
        RunConfig().with_overrides(["m"])


def test_overrides_and_base():
    cfg = preset("paper-ssmnist").with_overrides(["m=50", "k=5", "trainable_decay=yes"])
    assert (cfg.m, cfg.k, cfg.trainable_decay) == (50, 5, True)
    assert cfg.batch_size == 300
    text_cfg = RunConfig.from_text("[model]\nk = 3\n", base=cfg)
    assert text_cfg.k == 3 and text_cfg.m == 50


def test_validation():
    with pytest.raises(ConfigError):
        RunConfig(k=300, m=200)
    with pytest.raises(ConfigError):
        RunConfig(strategy="magic")
    with pytest.raises(ConfigError):
        RunConfig(uniform_mass=0.6, cache_weight=0.5)
    with pytest.raises(ConfigError):
        RunConfig.from_text("[model]\nm = many\n")
    with pytest.raises(ConfigError):
        preset("nope")


def test_reference_presets():
    lm = preset("paper-lm")
    assert (lm.m, lm.k, lm.batch_size, lm.cache_weight) == (1500, 80, 300, 0.07)
    ss = preset("paper-ssmnist")
    assert (ss.m, ss.k, ss.grammar, ss.observation) == (1000, 120, "paper-8x9", "random")
