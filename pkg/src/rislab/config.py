"""Experiment configuration: ``key = value`` text with optional sections.

Every key name is unique, so a key may appear either before any section
header or inside its own section (``[scenario]``, ``[agent]``, ``[embed]``,
``[experiment]``). Unset keys keep their defaults.

Example::

    p_max_dbm = 35

    [agent]
    episodes = 500
    hidden = 64, 64

    [experiment]
    methods = fmdrl, raw_drl, beam_sweep
    sweep = power_dbm
    sweep_values = 30, 35, 40, 45
    seeds = 0, 1, 2
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field
from typing import List

from .channel import ScenarioConfig
from .ddpg import AgentConfig
from .nn_core import ConfigError

METHODS = ("fmdrl", "raw_drl", "beam_sweep")
SWEEPS = ("none", "power_dbm", "users")


class ParseError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class EmbedSettings:
    embed_dim: int = 16
    embed_blocks: int = 2
    embed_heads: int = 2
    # masked-modeling training of the from-scratch encoder
    pretrain_epochs: int = 20
    pretrain_lr: float = 3e-3
    # subsequent fine-tuning pass
    finetune_epochs: int = 5
    finetune_lr: float = 5e-5
    finetune_batch: int = 64
    finetune_weight_decay: float = 1e-5
    last_layer_only: bool = True


@dataclass
class ExperimentSpec:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    embed: EmbedSettings = field(default_factory=EmbedSettings)
    methods: List[str] = field(default_factory=lambda: list(METHODS))
    sweep: str = "none"
    sweep_values: List[float] = field(default_factory=list)
    seeds: List[int] = field(default_factory=lambda: [0])
    output: str = "results"
    n_samples: int = 700
    eval_draws: int = 100
    penalty_weight: float = 0.0
    bs_codebook_size: int = 32
    ris_codebook_size: int = 32

    def validate(self) -> "ExperimentSpec":
        for m in self.methods:
            if m not in METHODS:
                raise ParseError("methods", f"unknown method {m!r}")
        if not self.methods:
            raise ParseError("methods", "at least one method is required")
        if self.sweep not in SWEEPS:
            raise ParseError("sweep", f"unknown sweep {self.sweep!r}")
        if self.sweep != "none" and not self.sweep_values:
            raise ParseError("sweep_values", "a sweep needs values")
        if not self.seeds:
            raise ParseError("seeds", "at least one seed is required")
        if self.n_samples < 1 or self.eval_draws < 1:
            raise ParseError("n_samples", "sample counts must be >= 1")
        if self.bs_codebook_size < 1 or self.ris_codebook_size < 1:
            raise ParseError("bs_codebook_size", "codebooks must be nonempty")
        return self

    def points(self):
        """Sweep values, or a single ``None`` when there is no sweep."""
        return [None] if self.sweep == "none" else list(self.sweep_values)


_GROUPS = {"scenario": ScenarioConfig, "agent": AgentConfig,
           "embed": EmbedSettings}
_TOP = "experiment"
_INTERNAL = "__top__"


def _key_table():
    table = {}
    for group, cls in _GROUPS.items():
        for f in dataclasses.fields(cls):
            table[f.name] = (group, f)
    for f in dataclasses.fields(ExperimentSpec):
        if f.name not in _GROUPS:
            table[f.name] = (_TOP, f)
    return table


def _convert(key: str, raw: str, f: dataclasses.Field):
    default = f.default if f.default is not dataclasses.MISSING else \
        f.default_factory()
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, (list, tuple)):
            items = [t.strip() for t in text.split(",") if t.strip()]
            if key in ("methods",):
                return items
            if key in ("seeds", "hidden"):
                vals = [int(t) for t in items]
            else:
                vals = [float(t) for t in items]
            return tuple(vals) if isinstance(default, tuple) else vals
        return text
    except ValueError:
        raise ParseError(key, f"cannot interpret {raw!r} as "
                              f"{type(default).__name__}") from None


def parse_config(text: str) -> ExperimentSpec:
    parser = configparser.ConfigParser(interpolation=None,
                                       default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(f"[{_INTERNAL}]\n" + text)
    except configparser.Error as exc:
        raise ParseError("<syntax>", str(exc)) from None
    table = _key_table()
    values = {g: {} for g in (*_GROUPS, _TOP)}
    for section in parser.sections():
        if section not in (_INTERNAL, _TOP, *_GROUPS):
            raise ParseError(section, "unknown section")
        for key, raw in parser.items(section):
            if key not in table:
                raise ParseError(key, "unknown key")
            group, f = table[key]
            if section not in (_INTERNAL, group):
                raise ParseError(key, f"belongs in section [{group}]")
            if key in values[group]:
                raise ParseError(key, "set twice")
            values[group][key] = _convert(key, raw, f)
    try:
        scenario = ScenarioConfig(**values["scenario"])
    except ConfigError as exc:
        raise ParseError(_blame(str(exc), values["scenario"]),
                         str(exc)) from None
    try:
        agent = AgentConfig(**values["agent"])
    except ConfigError as exc:
        raise ParseError(_blame(str(exc), values["agent"]), str(exc)) from None
    embed = EmbedSettings(**values["embed"])
    if embed.embed_dim % embed.embed_heads:
        raise ParseError("embed_heads", "embed_dim must be divisible by it")
    spec = ExperimentSpec(scenario=scenario, agent=agent, embed=embed,
                          **values[_TOP])
    return spec.validate()


def _first(d):
    return next(iter(d), "<scenario>")


def _blame(message, d):
    for key in d:
        if key in message:
            return key
    return _first(d)


def load_config(path) -> ExperimentSpec:
    with open(path) as fh:
        return parse_config(fh.read())


def format_value(v) -> str:
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if isinstance(v, (list, tuple)):
        return ", ".join(map(str, v))
    return str(v)
