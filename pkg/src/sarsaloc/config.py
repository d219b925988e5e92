"""Run configuration: built-in defaults, an INI file, command-line overrides.

Later sources win: command line over file over defaults. The file is plain
INI, one section per concern; every key is optional::

    [sarsa]
    policy = epsilon_greedy     ; greedy | epsilon_greedy | softmax
    alpha = 0.4
    gamma = 0.9
    epsilon = 0.1
    tau = 1.0

    [loop]
    oracle_weight = 0.7
    play_length = 200
    n_plays = 100
    window = 20
    initial_error = 0.0         ; "inf" makes a play's first error always improve
    variance_update = fixed     ; blend | mixture | fixed
    reestimate_transitions = false

    [world]
    grid = 20                   ; number of 1 m cells (side length if square)
    aps = 6
    coverage = 0.5
    square = false
    p0 = -45.0
    d0 = 1.0
    exponent_n = 2.0
    shadow_sigma = 4.0
    awgn_sigma_ctrl = 3.0

    [run]
    seed = 0
    replications = 20
    workers = 1

    [sweep]
    policies = greedy, epsilon_greedy, softmax
    coverages = 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0
    grids = 20
    aps = 6

    [replay]
    repeats = 100
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .environment import PathLossParams
from .loop import ExperimentConfig, LoopConfig
from .sarsa_agent import POLICIES, SarsaConfig


class ConfigError(ValueError):
    """Bad configuration; the message names the offending field."""


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(conv):
    def parse(text: str) -> tuple:
        return tuple(conv(p.strip()) for p in text.split(",") if p.strip())
    return parse


# (section, key) -> (attribute, parser)
_KEYS = {
    ("sarsa", "policy"): ("policy", str),
    ("sarsa", "alpha"): ("alpha", float),
    ("sarsa", "gamma"): ("gamma", float),
    ("sarsa", "epsilon"): ("epsilon", float),
    ("sarsa", "tau"): ("tau", float),
    ("loop", "oracle_weight"): ("oracle_weight", float),
    ("loop", "play_length"): ("play_length", int),
    ("loop", "n_plays"): ("n_plays", int),
    ("loop", "window"): ("window", int),
    ("loop", "initial_error"): ("initial_error", float),
    ("loop", "variance_update"): ("variance_update", str),
    ("loop", "reestimate_transitions"): ("reestimate_transitions", _bool),
    ("world", "grid"): ("grid", int),
    ("world", "aps"): ("aps", int),
    ("world", "coverage"): ("coverage", float),
    ("world", "square"): ("square", _bool),
    ("world", "p0"): ("p0", float),
    ("world", "d0"): ("d0", float),
    ("world", "exponent_n"): ("exponent_n", float),
    ("world", "shadow_sigma"): ("shadow_sigma", float),
    ("world", "awgn_sigma_ctrl"): ("awgn_sigma_ctrl", float),
    ("run", "seed"): ("seed", int),
    ("run", "replications"): ("replications", int),
    ("run", "workers"): ("workers", int),
    ("sweep", "policies"): ("policies", _list(str)),
    ("sweep", "coverages"): ("coverages", _list(float)),
    ("sweep", "grids"): ("grids", _list(int)),
    ("sweep", "aps"): ("sweep_aps", _list(int)),
    ("replay", "repeats"): ("repeats", int),
}


@dataclass(frozen=True)
class RunConfig:
    policy: str = "epsilon_greedy"
    alpha: float = 0.4
    gamma: float = 0.9
    epsilon: float = 0.1
    tau: float = 1.0
    oracle_weight: float = 0.7
    play_length: int = 200
    n_plays: int = 100
    window: int = 20
    initial_error: float = 0.0
    variance_update: str = "fixed"
    reestimate_transitions: bool = False
    grid: int = 20
    aps: int = 6
    coverage: float = 0.5
    square: bool = False
    p0: float = -45.0
    d0: float = 1.0
    exponent_n: float = 2.0
    shadow_sigma: float = 4.0
    awgn_sigma_ctrl: float = 3.0
    seed: int = 0
    replications: int = 20
    workers: int = 1
    policies: tuple[str, ...] = POLICIES
    coverages: tuple[float, ...] = tuple(round(0.1 * i, 1) for i in range(1, 11))
    grids: tuple[int, ...] = (20,)
    sweep_aps: tuple[int, ...] = (6,)
    repeats: int = 100

    def validate(self) -> "RunConfig":
        """Build every derived object once so errors surface before any work."""
        for name in ("policies", "coverages", "grids", "sweep_aps"):
            if not getattr(self, name):
                raise ConfigError(f"{name}: sweep axis is empty")
        for p in (self.policy,) + tuple(self.policies):
            if p not in POLICIES:
                raise ConfigError(f"policy: unknown policy {p!r}, expected one of {POLICIES}")
        for c in (self.coverage,) + tuple(self.coverages):
            if not 0.0 < c <= 1.0:
                raise ConfigError(f"coverage: {c} must lie in (0, 1]")
        for name in ("replications", "workers", "repeats", "grid", "aps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed: must be >= 0")
        for g in self.grids + (self.grid,):
            if g < 2:
                raise ConfigError(f"grid: {g} is too small")
        if any(m < 1 for m in self.sweep_aps):
            raise ConfigError("aps: AP counts must be >= 1")
        try:
            self.loop_config()
            self.path_loss()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def sarsa_config(self, policy: str | None = None) -> SarsaConfig:
        return SarsaConfig(alpha=self.alpha, gamma=self.gamma, epsilon=self.epsilon,
                           tau=self.tau, policy=policy or self.policy)

    def loop_config(self, policy: str | None = None) -> LoopConfig:
        return LoopConfig(sarsa=self.sarsa_config(policy), oracle_weight=self.oracle_weight,
                          play_length=self.play_length, n_plays=self.n_plays,
                          window=self.window, initial_error=self.initial_error,
                          variance_update=self.variance_update,
                          reestimate_transitions=self.reestimate_transitions)

    def path_loss(self) -> PathLossParams:
        return PathLossParams(self.p0, self.d0, self.exponent_n, self.shadow_sigma,
                              self.awgn_sigma_ctrl)

    def single_experiment(self) -> ExperimentConfig:
        return ExperimentConfig(loop=self.loop_config(), path_loss=self.path_loss(),
                                policies=(self.policy,), grids=(self.grid,),
                                aps=(self.aps,), coverages=(self.coverage,),
                                square=self.square)

    def sweep_experiment(self) -> ExperimentConfig:
        return ExperimentConfig(loop=self.loop_config(), path_loss=self.path_loss(),
                                policies=tuple(self.policies), grids=tuple(self.grids),
                                aps=tuple(self.sweep_aps), coverages=tuple(self.coverages),
                                square=self.square)


def parse_config_text(text: str, base: RunConfig = RunConfig(), source: str = "<config>") -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    changes = {}
    for section in cp.sections():
        for key, raw in cp.items(section):
            entry = _KEYS.get((section, key))
            if entry is None:
                raise ConfigError(f"{source}: unknown field [{section}] {key}")
            attr, conv = entry
            try:
                changes[attr] = conv(raw)
            except ValueError:
                raise ConfigError(f"{source}: bad value for [{section}] {key}: {raw!r}") from None
    return replace(base, **changes)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file at ``path`` (if any), then ``overrides``.

    ``None`` values in ``overrides`` are ignored, so unset CLI flags do not
    clobber file values.
    """
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        cfg = parse_config_text(p.read_text(), cfg, str(p))
    known = {f.name for f in fields(RunConfig)}
    extra = {k: v for k, v in (overrides or {}).items() if v is not None}
    bad = set(extra) - known
    if bad:
        raise ConfigError(f"unknown override(s): {sorted(bad)}")
    return replace(cfg, **extra).validate()
