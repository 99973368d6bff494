"""Config parsing, validation, and experiment-hash behavior."""

import dataclasses

import pytest

from kforge.config import (PipelineConfig, config_as_dict, config_hash,
                           load_config, parse_config_text)
from kforge.errors import MissingInputError, ValidationError


class TestParsing:
    def test_raw_lines_and_comments(self):
        text = "# a comment\nseed = 42\nnoise = uniform  # trailing\n\n"
        kv = parse_config_text(text)
        assert kv == {"seed": "42", "noise": "uniform"}

    def test_typed_values(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text(
            "seed = 42\n"
            "lambda_tv = 5e-3   # trailing comment\n"
            "noise = uniform\n"
            "emit_figures = true\n"
            "samplings = cartesian, radial\n"
            "split_fractions = 0.8, 0.1, 0.1\n")
        cfg = load_config(str(p))
        assert cfg.seed == 42
        assert cfg.lambda_tv == 5e-3
        assert cfg.noise == "uniform"
        assert cfg.emit_figures is True
        assert cfg.samplings == ("cartesian", "radial")
        assert cfg.split_fractions == (0.8, 0.1, 0.1)

    def test_duplicate_key_rejected(self):
        with pytest.raises(ValidationError, match="duplicate"):
            parse_config_text("seed = 1\nseed = 2\n")

    def test_malformed_line_rejected(self):
        with pytest.raises(ValidationError):
            parse_config_text("just some words\n")

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(MissingInputError):
            load_config(str(tmp_path / "nope.cfg"))

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("not_a_field = 1\n")
        with pytest.raises(ValidationError, match="not_a_field"):
            load_config(str(p))

    def test_overrides_win_over_file(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("seed = 1\nimage_size = 48\n")
        cfg = load_config(str(p), overrides={"seed": 9})
        assert cfg.seed == 9
        assert cfg.image_size == 48


class TestValidation:
    def test_defaults_are_valid(self):
        cfg = PipelineConfig()
        assert cfg.image_size == 64
        assert cfg.samplings == ("cartesian", "radial", "spiral")

    @pytest.mark.parametrize("field,value", [
        ("image_size", 16),
        ("jobs", 0),
        ("n_coils", 0),
        ("n_virtual_coils", 9),
        ("noise", "speckle"),
        ("method", "dl"),
        ("samplings", ("cartesian", "helix")),
        ("split_fractions", (0.5, 0.5)),
        ("lambda_tv", -1.0),
    ])
    def test_bad_values_rejected(self, field, value):
        with pytest.raises(ValidationError):
            PipelineConfig(**{field: value})


class TestHash:
    def test_operational_fields_do_not_change_hash(self):
        a = PipelineConfig()
        b = PipelineConfig(video_dir="elsewhere", out_dir="x",
                           jobs=8, emit_figures=True)
        assert config_hash(a) == config_hash(b)

    def test_science_fields_change_hash(self):
        a = PipelineConfig()
        for field, value in (("seed", 1), ("image_size", 96),
                             ("lambda_tv", 1e-2), ("noise", "uniform")):
            b = PipelineConfig(**{field: value})
            assert config_hash(a) != config_hash(b), field

    def test_as_dict_covers_every_field(self):
        cfg = PipelineConfig()
        d = config_as_dict(cfg)
        assert set(d) == {f.name for f in dataclasses.fields(PipelineConfig)}
