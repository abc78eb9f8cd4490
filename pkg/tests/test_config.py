"""Tests for configuration loading and precedence."""

import pytest

from adverseg.core.models import NetConfig
from adverseg.errors import ConfigError
from adverseg.utils.config import SEED_ENV, Config, load_config_file, resolve_seed


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(
        "# desk run\n"
        "steps = 50\n"
        "lambda_rec = 5\n"
        'loss_convention = "standard"\n'
        "encoder_channels = [8, 16]\n"
        "seed = 11\n"
    )
    return path


class TestConfig:
    """Tests for Config."""

    def test_defaults(self):
        cfg = Config(environ={})
        assert cfg.seed == 0
        assert cfg.steps == 200
        assert cfg.get("lambda_rec") == 10.0
        assert cfg.get("adversarial") is True

    def test_file_values(self, config_file):
        cfg = Config(config_file, environ={})
        assert cfg.steps == 50
        assert cfg.get("lambda_rec") == 5.0
        assert isinstance(cfg.get("lambda_rec"), float)
        assert cfg.get("loss_convention") == "standard"

    def test_precedence(self, config_file):
        cfg = Config(config_file, overrides={"steps": 7, "seed": None}, environ={SEED_ENV: "3"})
        assert cfg.steps == 7
        # file beats the environment, None overrides are ignored
        assert cfg.seed == 11

    def test_env_seed_over_default(self):
        assert Config(environ={SEED_ENV: "42"}).seed == 42

    def test_bad_env_seed(self):
        with pytest.raises(ConfigError, match=SEED_ENV):
            Config(environ={SEED_ENV: "abc"})

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("learning_rate = 0.1\n")
        with pytest.raises(ConfigError, match="learning_rate"):
            Config(path, environ={})

    def test_wrong_type(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text('steps = "many"\n')
        with pytest.raises(ConfigError, match="steps"):
            Config(path, environ={})

    def test_bool_is_not_int(self):
        with pytest.raises(ConfigError):
            Config(overrides={"steps": True}, environ={})

    def test_bad_choice(self):
        with pytest.raises(ConfigError, match="minmax, standard"):
            Config(overrides={"loss_convention": "hinge"}, environ={})

    def test_tables_rejected(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[train]\nsteps = 3\n")
        with pytest.raises(ConfigError, match="sections"):
            load_config_file(path)

    def test_syntax_error(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("steps = = 3\n")
        with pytest.raises(ConfigError):
            load_config_file(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            Config(tmp_path / "missing.toml", environ={})

    def test_dumps_reloads(self, tmp_path, config_file):
        cfg = Config(config_file, environ={})
        saved = cfg.save(tmp_path / "effective.toml")
        assert Config(saved, environ={}).as_dict() == cfg.as_dict()

    def test_dumps_format(self):
        text = Config(environ={}).dumps()
        assert "adversarial = true\n" in text
        assert 'model_name = "Ours"\n' in text
        assert "encoder_channels = [16, 32, 64]\n" in text

    def test_to_train_config(self, config_file):
        train_cfg = Config(config_file, environ={}).to_train_config(num_classes=2)
        assert train_cfg.steps == 50
        assert train_cfg.seed == 11
        assert train_cfg.net == NetConfig(num_classes=2, encoder_channels=(8, 16))
        assert train_cfg.augment.gain_range == (0.9, 1.1)

    def test_range_checked_in_train_config(self):
        cfg = Config(overrides={"lambda_rec": -1.0}, environ={})
        with pytest.raises(ConfigError):
            cfg.to_train_config()


class TestSeed:
    def test_flag_wins(self):
        assert resolve_seed(5, {SEED_ENV: "9"}) == 5

    def test_env_then_default(self):
        assert resolve_seed(None, {SEED_ENV: "9"}) == 9
        assert resolve_seed(None, {}) == 0

    def test_negative(self):
        with pytest.raises(ConfigError):
            resolve_seed(-1, {})
