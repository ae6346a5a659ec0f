from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional

from dotenv import dotenv_values

from .errors import ConfigError
from .kernelgen import CycleParams
from .storage import StorageModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    """Resolved run parameters. Defaults are the reference operating point L=10, T=5.5."""

    length: float = 10.0
    write_duration: float = 5.5
    read_duration: float = 5.5
    nz: int = 512
    nt: int = 512
    inner_n: Optional[int] = None
    modes: int = 10
    delta_l: Optional[float] = None
    mixing: bool = False
    transform: str = "per_atom"
    mix_norm: str = "excitation"
    quadrature: str = "hermite"
    out: str = "results"
    format: str = "csv"
    workers: int = 1
    allow_out_of_model: bool = False

    def __post_init__(self) -> None:
        if self.mixing and self.delta_l is not None:
            raise ConfigError("delta_l and mixing are mutually exclusive storage models")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"format must be csv or json, got {self.format!r}")
        if self.modes < 1:
            raise ConfigError(f"modes must be at least 1, got {self.modes}")
        if self.workers < 1:
            raise ConfigError(f"workers must be at least 1, got {self.workers}")
        # CycleParams and StorageModel raise ParameterError on bad physics values
        self.params()
        self.storage()

    def params(self) -> CycleParams:
        return CycleParams(
            L=self.length,
            T_w=self.write_duration,
            T_r=self.read_duration,
            n_z=self.nz,
            n_t=self.nt,
            inner_n=self.inner_n,
        )

    def storage(self) -> StorageModel:
        extra = dict(transform=self.transform, mix_norm=self.mix_norm, quadrature=self.quadrature)
        if self.mixing:
            return StorageModel.full_mixing(**extra)
        if self.delta_l is not None:
            return StorageModel.free_expansion(self.delta_l, **extra)
        return StorageModel(**extra)

    @property
    def strict(self) -> bool:
        return not self.allow_out_of_model

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)


DEFAULTS = RunConfig()

# alternative spellings accepted in config files
ALIASES = {
    "L": "length",
    "T_w": "write_duration",
    "T_r": "read_duration",
    "T": "duration",
    "M": "modes",
    "n_z": "nz",
    "n_t": "nt",
}


def _to_bool(raw: Any) -> bool:
    if isinstance(raw, bool):
        return raw
    text = str(raw).strip().lower()
    if text in ("true", "yes", "1", "on"):
        return True
    if text in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _to_optional(cast: Callable[[Any], Any]) -> Callable[[Any], Any]:
    def convert(raw: Any) -> Any:
        if raw is None or (isinstance(raw, str) and raw.strip().lower() in ("", "none")):
            return None
        return cast(raw)

    return convert


def _to_int(raw: Any) -> int:
    if isinstance(raw, float) and not raw.is_integer():
        raise ValueError(f"not an integer: {raw!r}")
    return int(str(raw).strip()) if isinstance(raw, str) else int(raw)


def _choice(*allowed: str) -> Callable[[Any], str]:
    def convert(raw: Any) -> str:
        text = str(raw).strip().lower()
        if text not in allowed:
            raise ValueError(f"expected one of {', '.join(allowed)}, got {raw!r}")
        return text

    return convert


COERCE: Dict[str, Callable[[Any], Any]] = {
    "length": float,
    "write_duration": float,
    "read_duration": float,
    "duration": float,
    "nz": _to_int,
    "nt": _to_int,
    "inner_n": _to_optional(_to_int),
    "modes": _to_int,
    "delta_l": _to_optional(float),
    "mixing": _to_bool,
    "transform": _choice("per_atom", "scalar", "density"),
    "mix_norm": _choice("excitation", "amplitude"),
    "quadrature": _choice("hermite", "segment"),
    "out": lambda raw: str(raw).strip(),
    "format": _choice("csv", "json"),
    "workers": _to_int,
    "allow_out_of_model": _to_bool,
}

KNOWN_KEYS = frozenset(COERCE)


def _normalize(raw: Mapping[str, Any], source: str) -> Dict[str, Any]:
    """Map aliases, reject unknown keys and coerce each value."""
    out: Dict[str, Any] = {}
    unknown = []
    for key, value in raw.items():
        name = ALIASES.get(key.strip(), key.strip())
        if name not in KNOWN_KEYS:
            unknown.append(key)
            continue
        try:
            out[name] = COERCE[name](value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: bad value for {key!r}: {exc}") from exc
    if unknown:
        raise ConfigError(f"{source}: unknown key(s): {', '.join(sorted(unknown))}")
    return out


def _apply_layer(values: Dict[str, Any], layer: Mapping[str, Any]) -> None:
    layer = dict(layer)
    # a shared duration fills both stages; stage-specific keys in the same layer win
    if "duration" in layer:
        duration = layer.pop("duration")
        if duration is not None:
            values["write_duration"] = duration
            values["read_duration"] = duration
    values.update(layer)


def read_config_file(path: str) -> Dict[str, Any]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = dotenv_values(p, interpolate=False)
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return _normalize({k: v for k, v in raw.items()}, str(path))


def load_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Defaults, then the key = value file, then command-line overrides.

    Override entries that are None count as not given.
    """
    values: Dict[str, Any] = {}
    if path:
        file_values = read_config_file(path)
        logger.debug("config file %s sets %s", path, sorted(file_values))
        _apply_layer(values, file_values)
    if overrides:
        given = {k: v for k, v in overrides.items() if v is not None}
        _apply_layer(values, _normalize(given, "command line"))
    given = overrides or {}
    # a storage model chosen on the command line replaces the one from the file
    if given.get("mixing") and given.get("delta_l") is None:
        values["delta_l"] = None
    elif given.get("delta_l") is not None and not given.get("mixing"):
        values["mixing"] = False
    try:
        return replace(DEFAULTS, **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
