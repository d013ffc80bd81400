import pytest

from src.models import ConfigSource, LossVariant, Regime
from src.services.config_service import (
    load_resolved_config,
    read_config_file,
    resolve_config,
    section_keys,
    write_resolved_config,
)
from src.services.errors import InvalidParameterError


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(
        "\n".join(
            [
                "[train]",
                "variant = supcon-nd",
                "alpha = 0.3",
                "hidden = 16, 8",
                "",
                "[mining]",
                "max_per_class = none",
                "rho = 0.5",
                "",
                "[split]",
                "regime = duality",
                "",
            ]
        )
    )
    return path


class TestResolveConfig:
    def test_defaults(self):
        config = resolve_config()
        assert config.train.variant == LossVariant.INFONCE_ND
        assert config.train.alpha == 0.1
        assert set(config.provenance.values()) == {ConfigSource.DEFAULT}
        assert config.source_file is None

    def test_file_values(self, config_file):
        config = resolve_config(config_file, defaults={"mining": {"max_per_class": 8}})
        assert config.train.variant == LossVariant.SUPCON_ND
        assert config.train.hidden == [16, 8]
        assert config.train.mining.rho == 0.5
        assert config.train.mining.max_per_class is None
        assert config.split.regime == Regime.DUALITY
        assert config.provenance["train.alpha"] == ConfigSource.FILE
        assert config.provenance["train.beta"] == ConfigSource.DEFAULT

    def test_flags_beat_file_beat_defaults(self, config_file):
        config = resolve_config(config_file, flags={"train": {"alpha": 0.7, "beta": None}}, defaults={"train": {"beta": 0.2}})
        assert config.train.alpha == 0.7
        assert config.provenance["train.alpha"] == ConfigSource.FLAG
        assert config.train.beta == 0.2
        assert config.provenance["train.beta"] == ConfigSource.DEFAULT

    def test_invalid_value_is_rejected(self):
        with pytest.raises(ValueError, match="invalid trade-off"):
            resolve_config(flags={"train": {"alpha": -1.0}})

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            resolve_config(tmp_path / "absent.ini")


class TestConfigFile:
    def test_unknown_section(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[optimizer]\nlr = 1\n")
        with pytest.raises(InvalidParameterError, match=r"unknown config section \[optimizer\]"):
            read_config_file(path)

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[train]\nmomentum = 0.9\n")
        with pytest.raises(InvalidParameterError, match="unknown key 'momentum'"):
            read_config_file(path)

    def test_nested_block_is_not_a_train_key(self, tmp_path):
        assert "mining" not in section_keys("train")
        path = tmp_path / "bad.ini"
        path.write_text("[train]\nmining = 1\n")
        with pytest.raises(InvalidParameterError):
            read_config_file(path)

    def test_bad_hidden_list(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[train]\nhidden = 8, wide\n")
        with pytest.raises(InvalidParameterError, match="comma-separated list"):
            read_config_file(path)


def test_resolved_config_round_trip(config_file, tmp_path):
    config = resolve_config(config_file, flags={"output": {"out_dir": str(tmp_path / "run")}})
    path = write_resolved_config(config, tmp_path / "run")
    assert path.name == "resolved_config.json"
    assert load_resolved_config(path) == config
