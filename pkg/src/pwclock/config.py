"""Declarative run configuration (JSON or YAML).

A document has up to five sections::

    sim:      {SimParams field: value, ...}
    sweep:    {SimParams field: [value, value, ...], ...}
    output:   {event_log: bool, with_vclock: bool, waitfree: bool}
    agent:    {AgentConfig field: value, ...}
    measure:  {role, peers, seconds, sizes}

Anything else is rejected, as are unknown fields inside a section.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, fields
from typing import Any, Optional

import yaml

from .net import AgentConfig
from .sim import SimError, SimParams, params_from_dict


class ConfigError(ValueError):
    pass


SECTIONS = {"sim", "sweep", "output", "agent", "measure"}
OUTPUT_KEYS = {"event_log", "with_vclock", "waitfree"}
MEASURE_KEYS = {"role", "peers", "seconds", "sizes"}


@dataclass
class RunConfig:
    sim: dict[str, Any] = field(default_factory=dict)
    sweep: dict[str, list] = field(default_factory=dict)
    event_log: bool = False
    with_vclock: bool = False
    waitfree: bool = True
    agent: Optional[dict[str, Any]] = None
    measure: Optional[dict[str, Any]] = None

    def base_params(self, **overrides) -> SimParams:
        d = dict(self.sim)
        d.update(overrides)
        try:
            return params_from_dict(d)
        except (SimError, TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    def expand(self) -> list[SimParams]:
        """Cross product of the sweep lists over the base ``sim`` section, in document order."""
        if not self.sweep:
            return [self.base_params()]
        keys = list(self.sweep)
        out = []
        for combo in itertools.product(*(self.sweep[k] for k in keys)):
            out.append(self.base_params(**dict(zip(keys, combo))))
        return out

    def agent_config(self) -> AgentConfig:
        if self.agent is None:
            raise ConfigError("config has no agent section")
        known = {f.name for f in fields(AgentConfig)}
        unknown = set(self.agent) - known
        if unknown:
            raise ConfigError(f"unknown agent fields: {sorted(unknown)}")
        try:
            return AgentConfig(**self.agent)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e


def parse_config(doc: Any) -> RunConfig:
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(doc) - SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    sim = doc.get("sim") or {}
    sweep = doc.get("sweep") or {}
    output = doc.get("output") or {}
    for name, sec in (("sim", sim), ("sweep", sweep), ("output", output)):
        if not isinstance(sec, dict):
            raise ConfigError(f"section {name!r} must be a mapping")
    param_names = {f.name for f in fields(SimParams)}
    for name, sec in (("sim", sim), ("sweep", sweep)):
        bad = set(sec) - param_names
        if bad:
            raise ConfigError(f"unknown {name} parameters: {sorted(bad)}")
    for k, v in sweep.items():
        if not isinstance(v, list) or not v:
            raise ConfigError(f"sweep values for {k!r} must be a non-empty list")
    bad = set(output) - OUTPUT_KEYS
    if bad:
        raise ConfigError(f"unknown output keys: {sorted(bad)}")
    measure = doc.get("measure")
    if measure is not None:
        bad = set(measure) - MEASURE_KEYS
        if bad:
            raise ConfigError(f"unknown measure keys: {sorted(bad)}")
    cfg = RunConfig(sim=sim, sweep=sweep, agent=doc.get("agent"), measure=measure,
                    **{k: bool(output[k]) for k in output})
    # validate eagerly so bad configs fail before any work starts
    cfg.expand()
    if cfg.agent is not None:
        cfg.agent_config()
    return cfg


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as f:
            doc = yaml.safe_load(f)  # YAML is a superset of JSON
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    return parse_config(doc)
