"""Layered configuration: built-in defaults < TOML file < environment < command-line flags.

A file section is addressed by dotted name, e.g. ``[train.rl]`` or ``[metric]``. The
matching environment variable for key ``lr`` in ``train.rl`` is ``MTREASON_TRAIN_RL_LR``.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

ENV_PREFIX = "MTREASON"


def load_file(path: str | Path | None) -> dict:
    if path is None:
        return {}
    with Path(path).open("rb") as fh:
        return tomllib.load(fh)


def _section(data: dict, name: str) -> dict:
    node: Any = data
    for part in name.split("."):
        if not isinstance(node, dict) or part not in node:
            return {}
        node = node[part]
    return {k: v for k, v in node.items() if not isinstance(v, dict)} if isinstance(node, dict) else {}


def _coerce(value: str, like: Any) -> Any:
    if isinstance(like, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def env_name(section: str, key: str) -> str:
    return "_".join([ENV_PREFIX, *section.replace("-", "_").split("."), key.replace("-", "_")]).upper()


def resolve(
    section: str,
    defaults: Mapping[str, Any],
    flags: Mapping[str, Any] | None = None,
    file_data: dict | None = None,
    environ: Mapping[str, str] | None = None,
) -> dict:
    """Merge one section; ``None`` flag values mean "not given" and do not override."""
    environ = os.environ if environ is None else environ
    out = dict(defaults)
    out.update(_section(file_data or {}, section))
    for key in out:
        name = env_name(section, key)
        if name in environ:
            out[key] = _coerce(environ[name], defaults.get(key, ""))
    for key, value in (flags or {}).items():
        if value is not None:
            out[key] = value
    return out
