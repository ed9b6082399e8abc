"""Run configuration: parsing, defaults, precedence, round trips."""

import pytest

from diat.config import DEFAULTS, RunConfig
from diat.errors import ConfigError
from diat.pipeline import TrainConfig


class TestDefaults:
    def test_fresh_config_matches_documented_defaults(self):
        cfg = RunConfig()
        for key, (default, _) in DEFAULTS.items():
            assert getattr(cfg, key) == default

    def test_every_key_has_help_text(self):
        for key, (_, help_text) in DEFAULTS.items():
            assert isinstance(help_text, str) and help_text, key


class TestParsing:
    def test_comments_and_blank_lines_ignored(self):
        cfg = RunConfig.parse(
            "# a comment\n"
            "\n"
            "seed = 9   # trailing comment\n"
            "variant = DIAT3\n")
        assert cfg.seed == 9
        assert cfg.variant == "DIAT3"

    def test_types_follow_defaults(self):
        cfg = RunConfig.parse(
            "max_iters = 42\nlam = 0.25\nattribute_target = true\n"
            "attribute = mouth_open\n")
        assert cfg.max_iters == 42 and isinstance(cfg.max_iters, int)
        assert cfg.lam == 0.25 and isinstance(cfg.lam, float)
        assert cfg.attribute_target is True
        assert cfg.attribute == "mouth_open"

    @pytest.mark.parametrize("text,value", [
        ("true", True), ("1", True), ("yes", True), ("on", True),
        ("false", False), ("0", False), ("no", False), ("off", False),
    ])
    def test_boolean_spellings(self, text, value):
        assert RunConfig.parse(f"attribute_target = {text}\n").attribute_target is value

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            RunConfig.parse("lerning_rate = 0.1\n")

    def test_malformed_line_rejected(self):
        with pytest.raises(ConfigError, match="line 2"):
            RunConfig.parse("seed = 1\njust some words\n")

    def test_untypable_value_rejected(self):
        with pytest.raises(ConfigError, match="cannot parse"):
            RunConfig.parse("max_iters = soon\n")

    def test_bad_boolean_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig.parse("attribute_target = maybe\n")


class TestRoundTrip:
    def test_parse_serialize_parse_is_identity(self):
        cfg = RunConfig(seed=13, variant="DIAT2", lam=0.05,
                        attribute_target=True, dataset_root="elsewhere")
        again = RunConfig.parse(cfg.serialize())
        assert again.as_dict() == cfg.as_dict()

    def test_save_load(self, tmp_path):
        cfg = RunConfig(seed=21, sigma=2.5)
        path = tmp_path / "run.cfg"
        cfg.save(str(path))
        assert RunConfig.load(str(path)).as_dict() == cfg.as_dict()


class TestPrecedence:
    def test_overrides_beat_file_values(self):
        cfg = RunConfig.parse("seed = 5\nvariant = DIAT\n")
        cfg.update({"seed": "7"})
        assert cfg.seed == 7
        assert cfg.variant == "DIAT"

    def test_update_parses_strings_by_key_type(self):
        cfg = RunConfig().update({"lam": "0.5", "attribute_target": "yes"})
        assert cfg.lam == 0.5
        assert cfg.attribute_target is True

    def test_update_rejects_unknown_key(self):
        with pytest.raises(ConfigError):
            RunConfig().update({"nope": 1})


class TestDerivedConfigs:
    def test_train_config_carries_loss_weights(self):
        cfg = RunConfig(variant="DIAT3", lam=0.2, gamma=0.01, tstep=3)
        tc = cfg.train_config()
        assert isinstance(tc, TrainConfig)
        assert tc.variant == "DIAT3"
        assert tc.tstep == 3
        assert tc.loss.lam == 0.2
        assert tc.loss.gamma == 0.01

    def test_invalid_variant_surfaces_as_config_error(self):
        cfg = RunConfig()
        cfg.variant = "DIAT9"
        with pytest.raises(ConfigError):
            cfg.train_config()

    def test_image_size_follows_scale(self):
        assert RunConfig(scale_factor=0.25).image_size == 32
        assert RunConfig(scale_factor=1.0).image_size == 128
