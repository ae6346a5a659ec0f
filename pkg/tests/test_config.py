from __future__ import annotations

import pytest

from components.config import DEFAULTS, RunConfig, load_config
from components.errors import ConfigError, ParameterError


def _write(tmp_path, text: str) -> str:
    path = tmp_path / "run.cfg"
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_empty_file_gives_defaults(tmp_path):
    cfg = load_config(_write(tmp_path, ""))
    assert cfg == DEFAULTS
    assert (cfg.length, cfg.write_duration, cfg.nz, cfg.modes) == (10.0, 5.5, 512, 10)


def test_no_file_gives_defaults():
    assert load_config() == DEFAULTS


def test_flag_overrides_file(tmp_path):
    cfg = load_config(_write(tmp_path, "L = 20\n"), {"length": 12.0})
    assert cfg.length == 12.0


def test_file_overrides_defaults(tmp_path):
    text = "# operating point\nlength = 12\nnz = 256\nmodes = 4\ntransform = density\n"
    cfg = load_config(_write(tmp_path, text))
    assert (cfg.length, cfg.nz, cfg.modes, cfg.transform) == (12.0, 256, 4, "density")


def test_unknown_key_is_named(tmp_path):
    with pytest.raises(ConfigError, match="lenght"):
        load_config(_write(tmp_path, "lenght = 3\n"))


def test_type_mismatch(tmp_path):
    with pytest.raises(ConfigError, match="nz"):
        load_config(_write(tmp_path, "nz = many\n"))
    with pytest.raises(ConfigError, match="format"):
        load_config(_write(tmp_path, "format = xlsx\n"))


def test_duration_sets_both_stages(tmp_path):
    cfg = load_config(_write(tmp_path, "duration = 4\nread_duration = 6\n"))
    assert (cfg.write_duration, cfg.read_duration) == (4.0, 6.0)
    cfg = load_config(_write(tmp_path, "T_w = 3\n"), {"duration": 7.0})
    assert (cfg.write_duration, cfg.read_duration) == (7.0, 7.0)


@pytest.mark.parametrize("text, expected", [("yes", True), ("1", True), ("False", False), ("no", False)])
def test_boolean_spellings(tmp_path, text, expected):
    assert load_config(_write(tmp_path, f"mixing = {text}\n")).mixing is expected


def test_storage_models_are_exclusive(tmp_path):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, "delta_l = 2\nmixing = true\n"))


def test_command_line_storage_replaces_file_storage(tmp_path):
    path = _write(tmp_path, "delta_l = 2\n")
    cfg = load_config(path, {"mixing": True, "delta_l": None})
    assert cfg.mixing and cfg.delta_l is None
    cfg = load_config(_write(tmp_path, "mixing = yes\n"), {"delta_l": 10.0, "mixing": None})
    assert cfg.delta_l == 10.0 and not cfg.mixing


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.cfg"))


def test_storage_model_from_config():
    assert RunConfig().storage().label == "none"
    assert RunConfig(delta_l=2.0).storage().label == "free_expansion(delta_L=2,per_atom)"
    assert RunConfig(mixing=True, mix_norm="amplitude").storage().label == "full_mixing(amplitude)"


def test_physics_guards_surface_as_parameter_errors():
    with pytest.raises(ParameterError):
        RunConfig(length=-1.0)
    with pytest.raises(ConfigError):
        RunConfig(modes=0)
