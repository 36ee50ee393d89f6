from __future__ import annotations

import typing as t
from functools import lru_cache
from os import environ

from dotenv import load_dotenv

from mhslam.errors import InvalidInputError

load_dotenv()

PREFIX = "MHSLAM_"


def _to_bool(value: str) -> bool:
    return value.strip().lower() in ("1", "true", "yes", "on")


class ConfigMeta(type):
    _defaults: dict[str, str]

    def resolve_value(cls, value: str) -> t.Any:
        _map: dict[str, t.Callable[[str], t.Any]] = {
            "bool": _to_bool,
            "int": int,
            "float": float,
            "str": str,
            "list": lambda x: [cls.resolve_value(y) for y in x.split(",")] if x else [],
        }

        kind, _, raw = value.partition(":")
        try:
            convert = _map[kind]
        except KeyError:
            raise InvalidInputError(f"unknown setting type {kind!r} in {value!r}") from None
        return convert(raw)

    @lru_cache()
    def __getattr__(cls, name: str) -> t.Any:
        if name.startswith("_"):
            raise AttributeError(name)
        raw = environ.get(PREFIX + name)
        if raw is None:
            try:
                raw = cls._defaults[name]
            except KeyError:
                raise AttributeError(f"no configuration value named {name}") from None
        return cls.resolve_value(raw)

    def reload(cls) -> None:
        ConfigMeta.__getattr__.cache_clear()  # type: ignore[attr-defined]


class Config(metaclass=ConfigMeta):
    """Environment-driven settings; `MHSLAM_WORKERS=int:4` overrides `Config.WORKERS`."""

    _defaults = {
        "LOG_LEVEL": "str:INFO",
        "LOG_FILE": "str:",
        "WORKERS": "int:1",
        "PRIOR_SIGMA_ROT": "float:1e-3",
        "PRIOR_SIGMA_TRANS": "float:1e-3",
        "ADDS_MAX_POINTS": "int:512",
        "SIGMA_FLOOR": "float:1e-4",
    }


__all__ = ["Config"]
