"""Synthetic energy-harvesting case study: environment x battery x sensors.

The generated model interleaves two kinds of steps:

* ``tick``: the hourly environment chain advances (its branches carry the
  environment parameters) and the battery level is updated deterministically
  from the harvested energy and the power drawn by the current sensor modes.
  Sensor modes do not change.
* ``busy``/``idle``/``standby``/``sleep``: the controller commands a mode.
  One sensor, picked uniformly, responds according to the parameter group
  attached to the current battery level (``param_scheme``).  Each group
  member maps to a target rule relative to the command, e.g. ``command``
  (comply), ``down1`` (one mode below the command) or ``stay``.

Only one parametric factor is ever involved per step, so every branch is a
linear expression.

Battery charge is represented by the lower bound of its band (low = 0,
regular = first threshold, high = second threshold); the next level is the
band containing ``charge + harvested - drawn``.  A command step subtracts the
switch cost of every sensor that changes mode, so any positive cost drains
one level under this convention; default costs are 0.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from partopt.errors import ConfigInvalid, PartoptError
from partopt.fmt import parse_expr
from partopt.model import (
    AvailabilityMask,
    LinExpr,
    MaskRule,
    ParamGroup,
    Pmdp,
    is_ident,
    to_fraction,
    validate_model,
)

MODES = ("busy", "idle", "standby", "sleep")  # highest power first
BATTERY_LEVELS = ("low", "regular", "high")
ENV_LEVELS = ("low", "medium", "high")
TICK = "tick"

TARGET_RULES = ("command", "down1", "down2", "stay", "sleep", "standby")

DEFAULT_HOURLY_ENERGY = (0, 0, 0, 0, 0, 0, 50, 150, 250, 350, 450, 550,
                         550, 550, 450, 350, 250, 150, 50, 0, 0, 0, 0, 0)

DEFAULT_SCHEME = {
    "high": (("p2", "command"), ("p3", "down1"), ("p4", "down2"), ("p0a", "stay")),
    "regular": (("p5", "command"), ("p6", "down1"), ("p0b", "stay")),
    "low": (("p7", "down1"), ("p8", "sleep"), ("p0c", "stay")),
}

# allowed commands per (env level, battery level); tick is always allowed
DEFAULT_HIERARCHY = {
    ("low", "low"): ("standby", "sleep"),
    ("low", "regular"): ("idle", "standby", "sleep"),
    ("low", "high"): ("idle", "standby", "sleep"),
    ("medium", "low"): ("standby", "sleep"),
    ("medium", "regular"): ("idle", "standby", "sleep"),
    ("medium", "high"): MODES,
    ("high", "low"): ("idle", "standby", "sleep"),
    ("high", "regular"): MODES,
    ("high", "high"): MODES,
}


@dataclass(frozen=True)
class EnvState:
    name: str
    energy: Fraction
    next: Tuple[Tuple[str, str], ...]  # (expression text, target name)


@dataclass(frozen=True)
class CaseConfig:
    n_sensors: int = 2
    env_states: Tuple[EnvState, ...] = ()
    battery_thresholds: Tuple[Fraction, Fraction] = (Fraction(200), Fraction(600))
    energy_bands: Tuple[Fraction, Fraction] = (Fraction(200), Fraction(400))
    mode_power: Mapping[str, Fraction] = field(default_factory=dict)
    switch_cost: Mapping[Tuple[str, str], Fraction] = field(default_factory=dict)
    utility: Mapping[str, Fraction] = field(default_factory=dict)
    param_scheme: Mapping[str, Tuple[Tuple[str, str], ...]] = field(default_factory=dict)
    initial: Tuple[str, str, str] = ("", "regular", "idle")  # env state ("" = first), battery, sensor mode


@dataclass(frozen=True)
class Category:
    id: str
    env_level: str
    battery_level: str
    mask: AvailabilityMask


@dataclass(frozen=True)
class GeneratedModel:
    model: Pmdp
    categories: Tuple[Category, ...]
    policy_params: Tuple[str, ...]
    env_params: Tuple[str, ...]


def hourly_chain(energies: Sequence[int], bands=(200, 400)) -> Tuple[EnvState, ...]:
    """A cyclic hourly chain; each hour lingers with its band's parameter."""
    n = len(energies)
    states = []
    for h, e in enumerate(energies):
        name = f"h{h:02d}"
        nxt = f"h{(h + 1) % n:02d}"
        band = energy_band(Fraction(e), bands)
        p = f"env.{band}"
        if nxt == name:
            states.append(EnvState(name, Fraction(e), (("1", name),)))
        else:
            states.append(EnvState(name, Fraction(e), ((f"1 - {p}", nxt), (p, name))))
    return tuple(states)


def default_config() -> CaseConfig:
    return CaseConfig(
        n_sensors=2,
        env_states=hourly_chain(DEFAULT_HOURLY_ENERGY),
        battery_thresholds=(Fraction(200), Fraction(600)),
        energy_bands=(Fraction(200), Fraction(400)),
        mode_power={"busy": Fraction(10), "idle": Fraction(5), "standby": Fraction(2), "sleep": Fraction(1)},
        switch_cost={(a, b): Fraction(0) for a in MODES for b in MODES if a != b},
        utility={"busy": Fraction(4), "idle": Fraction(2), "standby": Fraction(1), "sleep": Fraction(0)},
        param_scheme=dict(DEFAULT_SCHEME),
    )


def energy_band(energy: Fraction, bands) -> str:
    if energy < bands[0]:
        return "low"
    if energy < bands[1]:
        return "medium"
    return "high"


def battery_level(charge: Fraction, thresholds) -> str:
    if charge < thresholds[0]:
        return "low"
    if charge < thresholds[1]:
        return "regular"
    return "high"


def _battery_floor(level: str, thresholds) -> Fraction:
    return {"low": Fraction(0), "regular": thresholds[0], "high": thresholds[1]}[level]


def _shift(mode: str, steps: int) -> str:
    return MODES[min(MODES.index(mode) + steps, len(MODES) - 1)]


def _rule_target(rule: str, command: str, current: str) -> str:
    if rule == "command":
        return command
    if rule == "down1":
        return _shift(command, 1)
    if rule == "down2":
        return _shift(command, 2)
    if rule == "stay":
        return current
    return rule  # a fixed mode: "sleep" or "standby"


def check_config(cfg: CaseConfig) -> None:
    if cfg.n_sensors < 1:
        raise ConfigInvalid("n_sensors must be >= 1")
    if not cfg.env_states:
        raise ConfigInvalid("env_states must not be empty")
    t0, t1 = cfg.battery_thresholds
    if not 0 < t0 < t1:
        raise ConfigInvalid("battery thresholds must be positive and strictly increasing")
    b0, b1 = cfg.energy_bands
    if not b0 < b1:
        raise ConfigInvalid("energy band cutoffs must be strictly increasing")
    names = [e.name for e in cfg.env_states]
    if len(set(names)) != len(names):
        raise ConfigInvalid("duplicate environment state name")
    for e in cfg.env_states:
        if not is_ident(e.name):
            raise ConfigInvalid(f"bad environment state name {e.name!r}")
        if e.energy < 0:
            raise ConfigInvalid(f"negative energy for {e.name}")
        if not e.next:
            raise ConfigInvalid(f"environment state {e.name} has no outgoing distribution")
        for _, target in e.next:
            if target not in names:
                raise ConfigInvalid(f"environment state {e.name} targets unknown {target!r}")
    for table, what in ((cfg.mode_power, "mode_power"), (cfg.utility, "utility")):
        missing = [m for m in MODES if m not in table]
        if missing:
            raise ConfigInvalid(f"{what} lacks modes {missing}")
    for level in BATTERY_LEVELS:
        scheme = cfg.param_scheme.get(level)
        if not scheme or len(scheme) < 2:
            raise ConfigInvalid(f"param_scheme for battery {level!r} needs at least two members")
        suffixes = [s for s, _ in scheme]
        if len(set(suffixes)) != len(suffixes):
            raise ConfigInvalid(f"duplicate parameter in param_scheme[{level!r}]")
        for suffix, rule in scheme:
            if rule not in TARGET_RULES:
                raise ConfigInvalid(f"unknown target rule {rule!r}")
            if not is_ident(suffix):
                raise ConfigInvalid(f"bad parameter suffix {suffix!r}")
    all_suffixes = [s for level in BATTERY_LEVELS for s, _ in cfg.param_scheme[level]]
    if len(set(all_suffixes)) != len(all_suffixes):
        raise ConfigInvalid("param_scheme groups must use distinct parameter names")
    if cfg.initial[0] and cfg.initial[0] not in names:
        raise ConfigInvalid(f"unknown initial environment state {cfg.initial[0]!r}")
    if cfg.initial[1] not in BATTERY_LEVELS or cfg.initial[2] not in MODES:
        raise ConfigInvalid("bad initial battery level or sensor mode")


def state_name(env: str, battery: str, modes: Sequence[str]) -> str:
    return ".".join((env, battery) + tuple(modes))


def generate_model(cfg: CaseConfig, name: str = "energy_harvesting") -> GeneratedModel:
    check_config(cfg)
    n = cfg.n_sensors
    thresholds = cfg.battery_thresholds
    share = Fraction(1, n)

    env_exprs: Dict[str, List[Tuple[LinExpr, str]]] = {}
    env_params: List[str] = []
    for e in cfg.env_states:
        branches = []
        for text, target in e.next:
            try:
                expr = parse_expr(text)
            except PartoptError as exc:
                raise ConfigInvalid(f"bad expression {text!r} for {e.name}: {exc}") from None
            for p, _ in expr.terms:
                if p not in env_params:
                    env_params.append(p)
            branches.append((expr, target))
        env_exprs[e.name] = branches

    groups: List[ParamGroup] = []
    policy_params: List[str] = []
    scheme: Dict[Tuple[int, str], List[Tuple[str, str]]] = {}
    for k in range(1, n + 1):
        for level in ("high", "regular", "low"):
            members = [(f"s{k}.{suffix}", rule) for suffix, rule in cfg.param_scheme[level]]
            scheme[(k, level)] = members
            groups.append(ParamGroup(tuple(p for p, _ in members)))
            policy_params.extend(p for p, _ in members)
    clash = set(env_params) & set(policy_params)
    if clash:
        raise ConfigInvalid(f"environment parameters clash with sensor parameters: {sorted(clash)}")

    states: List[str] = []
    labels = {}
    rewards = {}
    transitions: Dict[Tuple[str, str], tuple] = {}
    energy = {e.name: e.energy for e in cfg.env_states}
    for e in cfg.env_states:
        band = energy_band(e.energy, cfg.energy_bands)
        for level in BATTERY_LEVELS:
            floor = _battery_floor(level, thresholds)
            for modes in itertools.product(MODES, repeat=n):
                s = state_name(e.name, level, modes)
                states.append(s)
                labels[s] = (("env", band), ("hour", e.name), ("battery", level)) + tuple(
                    (f"s{k + 1}", modes[k]) for k in range(n)
                )
                rewards[s] = sum((cfg.utility[m] for m in modes), Fraction(0))

                drawn = sum((cfg.mode_power[m] for m in modes), Fraction(0))
                next_level = battery_level(floor + energy[e.name] - drawn, thresholds)
                tick = [(expr, state_name(t, next_level, modes)) for expr, t in env_exprs[e.name]]
                transitions[(s, TICK)] = _merge(tick)

                for command in MODES:
                    branches = []
                    for k in range(1, n + 1):
                        for param, rule in scheme[(k, level)]:
                            target_mode = _rule_target(rule, command, modes[k - 1])
                            new_modes = list(modes)
                            new_modes[k - 1] = target_mode
                            cost = cfg.switch_cost.get((modes[k - 1], target_mode), Fraction(0))
                            new_level = battery_level(floor - cost, thresholds) if cost else level
                            branches.append((LinExpr.param(param, share), state_name(e.name, new_level, new_modes)))
                    transitions[(s, command)] = _merge(branches)

    init_env = cfg.initial[0] or cfg.env_states[0].name
    model = Pmdp(
        name=name,
        states=tuple(states),
        initial=state_name(init_env, cfg.initial[1], (cfg.initial[2],) * n),
        actions=MODES + (TICK,),
        transitions=transitions,
        params=tuple(policy_params) + tuple(env_params),
        groups=tuple(groups),
        rewards=rewards,
        labels=labels,
    )
    violations = validate_model(model)
    if violations:
        raise ConfigInvalid(f"generated model is invalid: {violations[0]}")
    return GeneratedModel(model, categories(), tuple(policy_params), tuple(env_params))


def _merge(branches: List[Tuple[LinExpr, str]]) -> Tuple[Tuple[LinExpr, str], ...]:
    acc: Dict[str, LinExpr] = {}
    for expr, t in branches:
        acc[t] = acc[t] + expr if t in acc else expr
    return tuple((expr, t) for t, expr in acc.items() if not expr.is_zero)


def category_mask(env_level: str, battery: str, hierarchy=None) -> AvailabilityMask:
    hierarchy = hierarchy or DEFAULT_HIERARCHY
    try:
        allowed = hierarchy[(env_level, battery)]
    except KeyError:
        raise ConfigInvalid(f"no category for env={env_level!r}, battery={battery!r}") from None
    rule = MaskRule((("env", env_level), ("battery", battery)), frozenset(allowed) | {TICK})
    return AvailabilityMask((rule,), f"{env_level}-{battery}")


def categories(hierarchy=None) -> Tuple[Category, ...]:
    return tuple(
        Category(f"{env}-{bat}", env, bat, category_mask(env, bat, hierarchy))
        for env in ENV_LEVELS
        for bat in BATTERY_LEVELS
    )


def category_by_id(cat_id: str) -> Category:
    for cat in categories():
        if cat.id == cat_id:
            return cat
    raise ConfigInvalid(f"unknown category {cat_id!r}; expected one of {[c.id for c in categories()]}")


# -- JSON config ----------------------------------------------------------------


def config_from_dict(data: dict) -> CaseConfig:
    """Build a config from JSON data; missing keys take default values."""
    base = default_config()
    try:
        env_states = base.env_states
        if "hourly_energy" in data:
            bands = tuple(to_fraction(x) for x in data.get("energy_bands", base.energy_bands))
            env_states = hourly_chain(data["hourly_energy"], bands)
        if "env_states" in data:
            env_states = tuple(
                EnvState(e["name"], to_fraction(e["energy"]), tuple((str(x), str(t)) for x, t in e["next"]))
                for e in data["env_states"]
            )
        switch_cost = dict(base.switch_cost)
        for key, value in data.get("switch_cost", {}).items():
            a, b = key.split("->")
            switch_cost[(a.strip(), b.strip())] = to_fraction(value)
        scheme = dict(base.param_scheme)
        for level, members in data.get("param_scheme", {}).items():
            scheme[level] = tuple((str(p), str(r)) for p, r in members)
        initial = data.get("initial", {})
        return CaseConfig(
            n_sensors=int(data.get("n_sensors", base.n_sensors)),
            env_states=env_states,
            battery_thresholds=tuple(to_fraction(x) for x in data.get("battery_thresholds", base.battery_thresholds)),
            energy_bands=tuple(to_fraction(x) for x in data.get("energy_bands", base.energy_bands)),
            mode_power={**base.mode_power, **{k: to_fraction(v) for k, v in data.get("mode_power", {}).items()}},
            switch_cost=switch_cost,
            utility={**base.utility, **{k: to_fraction(v) for k, v in data.get("utility", {}).items()}},
            param_scheme=scheme,
            initial=(
                initial.get("env", base.initial[0]),
                initial.get("battery", base.initial[1]),
                initial.get("mode", base.initial[2]),
            ),
        )
    except (KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
        raise ConfigInvalid(f"malformed config: {exc}") from None


def load_config(path) -> CaseConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"config is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigInvalid("config must be a JSON object")
    return config_from_dict(data)
