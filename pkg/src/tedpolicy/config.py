"""Plain ``key = value`` config files.

Every field of :class:`TedConfig` and :class:`GenerationConfig` is addressable.
Keys may carry a ``model.``, ``corpus.`` or ``curve.`` prefix; an unprefixed
key goes to every section that has that field (``seed`` sets both seeds).
Dict fields take a sub-key, e.g. ``required_slots.hotel = location,nights``.
Tuples are comma separated. ``#`` starts a comment.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from tedpolicy.corpus import GenerationConfig
from tedpolicy.model import TedConfig


class ConfigError(ValueError):
    pass


@dataclass
class CurveConfig:
    sizes: tuple = (25, 50, 100, 200, 400, 600)
    seeds: tuple = (0, 1, 2)
    train_fraction: float = 0.75


@dataclass
class RunConfig:
    model: TedConfig = field(default_factory=TedConfig)
    corpus: GenerationConfig = field(default_factory=GenerationConfig)
    curve: CurveConfig = field(default_factory=CurveConfig)


_SECTIONS = {"model": TedConfig, "corpus": GenerationConfig, "curve": CurveConfig}


def _convert(raw, default, where):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            kind = type(default[0]) if default else str
            return tuple(kind(x) for x in items)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {type(default).__name__}") from None


def _set(obj, key, raw, where):
    name, _, sub = key.partition(".")
    names = {f.name for f in fields(obj)}
    if name not in names:
        return None
    current = getattr(obj, name)
    if isinstance(current, dict):
        if not sub:
            raise ConfigError(f"{where}: {name} needs a sub-key, e.g. {name}.<name>")
        sample = next(iter(current.values()), ("",))
        updated = dict(current)
        updated[sub] = _convert(raw, sample, where)
        return replace(obj, **{name: updated})
    if sub:
        raise ConfigError(f"{where}: {name} takes no sub-key")
    return replace(obj, **{name: _convert(raw, current, where)})


def apply(run, key, raw, where="override"):
    """Return ``run`` with ``key`` set from the string ``raw``."""
    prefix, _, rest = key.partition(".")
    targets = [prefix] if prefix in _SECTIONS and rest else list(_SECTIONS)
    key = rest if prefix in _SECTIONS and rest else key
    hit = False
    for section in targets:
        new = _set(getattr(run, section), key, raw, where)
        if new is not None:
            run = replace(run, **{section: new})
            hit = True
    if not hit:
        raise ConfigError(f"{where}: unknown key {key!r}")
    return run


def parse_config(text, run=None, source="<config>"):
    run = run or RunConfig()
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        run = apply(run, key, raw, f"{source}:{n}")
    try:
        run.model.validate()
        run.corpus.validate()
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return run


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), source=str(path))
