"""Tests for the key=value config parser and the CLI configuration builder."""

import pytest

from crackloss.config import (
    DEFAULT_BETAS,
    build_cli_config,
    load_config_file,
    parse_config_text,
)
from crackloss.errors import ConfigError
from crackloss.metrics import DEFAULT_GRID


class TestParser:
    def test_scalars(self):
        doc = parse_config_text(
            'name = "run a"\ncount = 3\nrate = 0.5\nneg = -2\nflag = true\noff = false\n'
        )
        assert doc == {"name": "run a", "count": 3, "rate": 0.5,
                       "neg": -2, "flag": True, "off": False}

    def test_dotted_keys_and_comments(self):
        doc = parse_config_text(
            "# leading comment\n"
            "loss.beta = 0.75  # trailing\n"
            "\n"
            'title = "a # not a comment"\n'
        )
        assert doc["loss.beta"] == 0.75
        assert doc["title"] == "a # not a comment"

    def test_arrays(self):
        doc = parse_config_text('betas = [0.25, 0.5, 1]\nnames = ["a", "b"]\n')
        assert doc["betas"] == [0.25, 0.5, 1]
        assert doc["names"] == ["a", "b"]

    def test_empty_array(self):
        assert parse_config_text("xs = []\n") == {"xs": []}

    @pytest.mark.parametrize(
        "text",
        [
            "just words\n",
            "a b = 3\n",
            'x = "unterminated\n',
            "x = [1, 2\n",
            "x = bareword\n",
            "x = 3\nx = 4\n",
            "x =\n",
        ],
    )
    def test_malformed_rejected(self, text):
        with pytest.raises(ConfigError):
            parse_config_text(text)

    def test_error_carries_line_number(self):
        with pytest.raises(ConfigError) as exc:
            parse_config_text("ok = 1\nbad line\n")
        assert "line 2" in str(exc.value)

    def test_load_file(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("seed = 7\n")
        assert load_config_file(str(p)) == {"seed": 7}


class TestBuildCliConfig:
    def test_defaults(self):
        cfg = build_cli_config({})
        assert cfg.train.spec.family == "exp"
        assert cfg.train.spec.beta == 0.75
        assert cfg.train.epochs == 30
        assert cfg.train.batch_size == 2
        assert cfg.train.lr == 3e-4
        assert cfg.synth.width == 64
        assert cfg.train_count == 200
        assert cfg.test_count == 50
        assert cfg.n_seeds == 5
        assert cfg.betas == DEFAULT_BETAS
        assert cfg.train.eval_grid == DEFAULT_GRID

    def test_overrides_flow_through(self):
        cfg = build_cli_config({
            "seed": 3,
            "loss.family": "xie",
            "holistic.a": 20.0,
            "holistic.b": 1.0,
            "holistic.lambda": 2.0,
            "train.epochs": 5,
            "unet.base_channels": 4,
            "synth.noise_sigma": 0.1,
        })
        assert cfg.train.seed == 3
        assert cfg.synth.seed == 3
        assert cfg.train.spec.family == "xie"
        assert cfg.train.hol.a == 20.0
        assert cfg.train.hol.lam == 2.0
        assert cfg.train.epochs == 5
        assert cfg.train.unet.base_channels == 4
        assert cfg.synth.noise_sigma == 0.1

    def test_cli_flags_override_file(self):
        cfg = build_cli_config({"seed": 3, "output_dir": "from_file"},
                               seed_override=9, out_override="from_flag")
        assert cfg.train.seed == 9
        assert cfg.output_dir == "from_flag"

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError) as exc:
            build_cli_config({"loss.alpha": 0.5})
        assert "loss.alpha" in str(exc.value)

    def test_section_prefix_on_nested_error(self):
        with pytest.raises(ConfigError) as exc:
            build_cli_config({"loss.beta": 7.0})
        assert str(exc.value).startswith("loss.")

    def test_type_errors(self):
        with pytest.raises(ConfigError):
            build_cli_config({"train.epochs": "many"})
        with pytest.raises(ConfigError):
            build_cli_config({"train.epochs": True})

    def test_int_promotes_to_float(self):
        cfg = build_cli_config({"holistic.a": 20})
        assert cfg.train.hol.a == 20.0

    def test_custom_grid(self):
        cfg = build_cli_config({"metrics.grid_points": 9})
        assert cfg.train.eval_grid == tuple(i / 10 for i in range(1, 10))

    def test_betas_validation(self):
        cfg = build_cli_config({"sweep.betas": [0.5, 1]})
        assert cfg.betas == (0.5, 1.0)
        with pytest.raises(ConfigError):
            build_cli_config({"sweep.betas": [0.5, 1.5]})

    def test_dims_must_match_depth(self):
        with pytest.raises(ConfigError):
            build_cli_config({"synth.width": 60, "unet.depth": 3})

    def test_manifests_both_or_neither(self):
        with pytest.raises(ConfigError):
            build_cli_config({"data.train_manifest": "a.json"})
        cfg = build_cli_config({"data.train_manifest": "a.json",
                                "data.test_manifest": "b.json"})
        assert cfg.train_manifest == "a.json"
        assert cfg.test_manifest == "b.json"

    def test_seeds_must_be_positive(self):
        with pytest.raises(ConfigError):
            build_cli_config({"seeds": 0})
