"""Sectioned key-value (INI) experiment configuration.

Unknown sections or keys are errors.  Every key is optional; omitted keys
take the documented defaults, optionally pre-seeded by a named scenario
preset (``[experiment] preset = lone_hq``).
"""
from __future__ import annotations

import configparser
import enum
import re
from dataclasses import fields
from pathlib import Path

from .federation import FederationConfig

SECTIONS: dict[str, tuple[str, ...]] = {
    "experiment": ("seed", "rounds", "strategy", "rank_policy", "scenario"),
    "clients": ("num_clients", "participation_fraction", "hq_fraction", "alpha_hq", "alpha_lq",
                "samples_per_client"),
    "ranks": ("r_low", "r_high", "high_rank_fraction"),
    "training": ("lr", "beta1", "beta2", "eps", "batch_size", "local_epochs"),
    "task": ("num_classes", "dim", "hidden", "separation", "train_pool_factor", "test_pool", "val_fraction",
             "pretrain_samples", "pretrain_steps", "pretrain_lr"),
    "ledger": ("ledger_preset",),
}

PRESETS: dict[str, dict] = {
    # 100 clients, 10% HQ (alpha 5.0) / 90% LQ (alpha 1.0), 10% stratified participation
    "main": {},
    # one perfectly balanced client plus 14 clients at alpha 0.6, all participating
    "lone_hq": {
        "scenario": "lone_hq",
        "num_clients": 15,
        "participation_fraction": 1.0,
        "alpha_lq": 0.6,
        "rank_policy": "oracle",
    },
}

_KEY_ALIASES = {("ledger", "preset"): "ledger_preset"}


class ConfigError(ValueError):
    pass


def _field_types() -> dict[str, type]:
    defaults = FederationConfig.__dataclass_fields__
    return {name: type(f.default) for name, f in defaults.items()}


def _line_of(lines: list[str], section: str, key: str | None) -> int | None:
    current = None
    for no, raw in enumerate(lines, 1):
        line = raw.strip()
        m = re.match(r"\[(.+)\]$", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return no
            continue
        if current == section and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", line):
            return no
    return None


def _convert(name: str, raw: str, kind: type):
    raw = raw.strip()
    if issubclass(kind, enum.Enum):
        return kind(raw).value if raw in {e.value for e in kind} else _bad(name, raw, [e.value for e in kind])
    if kind is bool:
        if raw.lower() in ("true", "yes", "1"):
            return True
        if raw.lower() in ("false", "no", "0"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


def _bad(name, raw, allowed):
    raise ValueError(f"{raw!r} is not one of {', '.join(allowed)}")


def parse_config_text(text: str, source: str = "<config>") -> FederationConfig:
    lines = text.splitlines()
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None

    types = _field_types()
    values: dict[str, object] = {}
    origin: dict[str, str] = {}
    preset = None
    for section in parser.sections():
        if section not in SECTIONS:
            line = _line_of(lines, section, None)
            raise ConfigError(f"{source}:{line}: unknown section [{section}]")
        for key, raw in parser.items(section):
            where = f"{source}:{_line_of(lines, section, key)}: [{section}] {key}"
            if section == "experiment" and key == "preset":
                if raw.strip() not in PRESETS:
                    raise ConfigError(f"{where}: unknown preset {raw.strip()!r}; known: {', '.join(PRESETS)}")
                preset = raw.strip()
                continue
            name = _KEY_ALIASES.get((section, key), key)
            if name not in SECTIONS[section]:
                raise ConfigError(f"{where}: unknown key")
            try:
                values[name] = _convert(name, raw, types[name])
            except ValueError as exc:
                raise ConfigError(f"{where}: malformed value: {exc}") from None
            origin[name] = where

    merged = {**PRESETS.get(preset or "main", {}), **values}
    try:
        return FederationConfig(**merged)
    except ValueError as exc:
        msg = str(exc)
        found = [(m.start(), origin[k]) for k in origin if (m := re.search(rf"\b{k}\b", msg))]
        raise ConfigError(f"{min(found)[1] if found else source}: {msg}") from None


def parse_config(path: str | Path) -> FederationConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(encoding="utf-8"), str(p))


def emit_config(cfg: FederationConfig) -> str:
    """Effective configuration as INI text; parses back to an equal config."""
    values = cfg.as_dict()
    inverse = {v: k for k, v in _KEY_ALIASES.items()}
    out = []
    for section, keys in SECTIONS.items():
        out.append(f"[{section}]")
        for name in keys:
            key = inverse.get(name, (section, name))[1]
            out.append(f"{key} = {values[name]!r}" if isinstance(values[name], float) else f"{key} = {values[name]}")
        out.append("")
    return "\n".join(out)


assert {n for keys in SECTIONS.values() for n in keys} == {f.name for f in fields(FederationConfig)}
