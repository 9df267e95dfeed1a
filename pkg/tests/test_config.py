import pytest

from dpgrad_lab.config import (
    KNOWN_KEYS,
    build_config,
    config_hash,
    describe_keys,
    load_config,
    parse_flat,
    with_overrides,
)
from dpgrad_lab.errors import ConfigError
from dpgrad_lab.models import ExperimentConfig


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_flat_file_parses_typed_values(tmp_path):
    path = _write(
        tmp_path,
        "exp.conf",
        "# noisy top-k\n"
        "privacy.sigma = 0.8\n"
        "privacy.delta = 1e-5   # explicit\n"
        "compress.kind = topk\n"
        "compress.rate = 16\n"
        "grid.sigmas = [0.0, 0.8]\n"
        "privacy.enabled = true\n",
    )
    config = load_config(path)
    assert config.privacy.sigma == 0.8
    assert config.privacy.delta == 1e-5
    assert config.compress.kind == "topk"
    assert config.compress.rate == 16.0
    assert config.grid.sigmas == [0.0, 0.8]
    assert config.privacy.enabled is True


def test_yaml_file_is_flattened(tmp_path):
    path = _write(
        tmp_path,
        "exp.yaml",
        "privacy:\n  sigma: 0.4\n  delta: 1e-5\ncompress:\n  kind: powersgd\n  rank: 4\n",
    )
    config = load_config(path)
    assert config.privacy.sigma == 0.4
    assert config.privacy.delta == 1e-5
    assert config.compress.rank == 4


def test_defaults_without_file():
    assert load_config() == ExperimentConfig()


def test_missing_file_names_the_path(tmp_path):
    missing = tmp_path / "nope.conf"
    with pytest.raises(ConfigError) as excinfo:
        load_config(missing)
    assert excinfo.value.path == str(missing)
    assert str(missing) in str(excinfo.value)


def test_unknown_key_is_rejected(tmp_path):
    path = _write(tmp_path, "exp.conf", "privacy.sigmaa = 0.8\n")
    with pytest.raises(ConfigError, match="privacy.sigmaa"):
        load_config(path)


def test_malformed_and_duplicate_lines_are_rejected():
    with pytest.raises(ConfigError, match="line 1"):
        parse_flat("privacy.sigma 0.8\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_flat("privacy.sigma = 0.8\nprivacy.sigma = 0.4\n")


def test_invalid_values_become_config_errors():
    with pytest.raises(ConfigError, match="compress.rate"):
        build_config({"compress.rate": 0.5})
    with pytest.raises(ConfigError):
        build_config({"privacy.delta": 2.0})
    with pytest.raises(ConfigError):
        build_config({"compress.kind": "randk"})


def test_denoise_requires_explicit_decays():
    with pytest.raises(ConfigError, match="denoise.beta"):
        build_config({"denoise.enabled": True, "denoise.beta": 0.9})
    config = build_config({"denoise.enabled": True, "denoise.beta": 0.9, "denoise.gamma": 0.5})
    assert config.denoise.gamma == 0.5


def test_hash_ignores_key_order_and_logging(tmp_path):
    a = load_config(_write(tmp_path, "a.conf", "privacy.sigma = 0.8\ncompress.rate = 16\n"))
    b = load_config(_write(tmp_path, "b.conf", "compress.rate = 16\nprivacy.sigma = 0.8\n"))
    assert config_hash(a) == config_hash(b)
    assert config_hash(with_overrides(a, {"logging.level": "DEBUG"})) == config_hash(a)
    assert config_hash(with_overrides(a, {"privacy.sigma": 0.4})) != config_hash(a)


def test_hash_covers_resolved_defaults():
    explicit = build_config({"privacy.sigma": ExperimentConfig().privacy.sigma})
    assert config_hash(explicit) == config_hash(ExperimentConfig())


def test_described_keys_cover_every_section():
    text = describe_keys()
    for key in KNOWN_KEYS:
        assert key in text
    assert "privacy.sigma" in KNOWN_KEYS
    assert "denoise.tie_break" in KNOWN_KEYS
