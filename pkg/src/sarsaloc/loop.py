"""Closed-loop controller and the Monte Carlo experiment engine.

One *replication* owns a world, a Q table and a reinforced model. It runs
``n_plays`` plays of ``play_length`` ticks. Every play starts from the
configured MDP state/action and tracked error; Q and the reinforced model
carry over between plays. Each tick:

1. the walker moves and an RSS vector is sampled from the underlying model;
2. in S1 the last ``window`` ticks are decoded with the reinforced model,
   the tracked error is measured against the oracle labels in the window and
   the reinforced model is re-estimated from those labels;
   in S2 nothing is decoded and the tracked error is carried over;
3. the boost is scored, the next action chosen, and Q updated.

At the end of a play the whole play is decoded with each of the control,
reinforced and underlying models and scored against the true cells.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from itertools import product

import numpy as np

from .environment import (
    GridWorld, ModelTriplet, PathLossParams, build_world, seed_child, simulate_segment,
)
from .hmm import HmmParams, _forward_backward_trusted
from .reestimation import (
    DEFAULT_ORACLE_WEIGHT, VARIANCE_MODES, LabeledBatch, check_weight, reestimate,
)
from .sarsa_agent import (
    MdpAction, MdpState, QTable, SarsaConfig, boost, immediate_reward,
    next_state, sarsa_update, select_action,
)

RECORD_COLUMNS = ("policy", "grid", "aps", "coverage", "replication", "play",
                  "err_control", "err_reinforced", "err_underlying", "dependence")


@dataclass(frozen=True)
class LoopConfig:
    sarsa: SarsaConfig = SarsaConfig()
    oracle_weight: float = DEFAULT_ORACLE_WEIGHT
    play_length: int = 200
    n_plays: int = 100
    window: int = 20
    initial_state: MdpState = MdpState.S1
    initial_action: MdpAction = MdpAction.A1
    # 0.0: a play's first measured error never counts as an improvement;
    # math.inf makes it always count
    initial_error: float = 0.0
    variance_update: str = "fixed"
    reestimate_transitions: bool = False
    # "play": every play restarts the tracked error; "replication": only the first
    reset_error: str = "play"

    def __post_init__(self):
        check_weight(self.oracle_weight)
        if self.play_length < 1 or self.n_plays < 1 or self.window < 1:
            raise ValueError("play_length, n_plays and window must all be >= 1")
        if not (self.initial_error >= 0):
            raise ValueError("initial_error must be >= 0 (inf allowed)")
        if self.reset_error not in ("play", "replication"):
            raise ValueError("reset_error must be 'play' or 'replication'")
        if self.variance_update not in VARIANCE_MODES:
            raise ValueError(f"variance_update must be one of {VARIANCE_MODES}")
        object.__setattr__(self, "initial_state", MdpState(self.initial_state))
        object.__setattr__(self, "initial_action", MdpAction(self.initial_action))


@dataclass
class StepRecord:
    tick: int
    mdp_state: MdpState
    action: MdpAction
    reward: int
    boost: int
    error: float
    error_prev: float
    true_cell: int
    decoded_window: int = -1      # reinforced window decode of this tick, S1 only
    decoded_control: int = -1     # the three below come from the end-of-play decode
    decoded_reinforced: int = -1
    decoded_underlying: int = -1
    reestimated: bool = False


@dataclass
class PlayRecord:
    play: int
    err_control: float
    err_reinforced: float
    err_underlying: float
    dependence: float
    sd_control: float = 0.0
    sd_reinforced: float = 0.0
    sd_underlying: float = 0.0
    steps: list[StepRecord] | None = None


@dataclass
class LoopState:
    """Mutable state of one replication of the closed loop.

    A play's data is loaded as a *segment*: tick-aligned observations, true
    cells, and two label vectors (-1 = no label). ``err_labels`` are the
    labels the tracked error is measured against; ``fit_labels`` are the
    labels re-estimation may use. In simulation both are the oracle labels.
    """

    q: QTable
    reinforced: HmmParams
    centroids: np.ndarray
    window: int
    mdp_state: MdpState = MdpState.S1
    action: MdpAction = MdpAction.A1
    error: float = math.inf
    tick: int = 0
    obs: np.ndarray | None = None
    truth: np.ndarray | None = None
    err_labels: np.ndarray | None = None
    fit_labels: np.ndarray | None = None
    observable: np.ndarray | None = None    # states that can ever carry a fit label
    started: bool = False

    def start_play(self, cfg: LoopConfig, obs, truth, err_labels, fit_labels) -> None:
        self.mdp_state = cfg.initial_state
        self.action = cfg.initial_action
        if cfg.reset_error == "play" or not self.started:
            self.error = cfg.initial_error
        self.started = True
        self.tick = 0
        self.obs = np.asarray(obs, dtype=float)
        self.truth = np.asarray(truth, dtype=np.int64)
        self.err_labels = np.asarray(err_labels, dtype=np.int64)
        self.fit_labels = np.asarray(fit_labels, dtype=np.int64)

    @property
    def remaining(self) -> int:
        return 0 if self.obs is None else self.obs.shape[0] - self.tick


def distance_error(decoded, truth, centroids) -> float:
    """Mean Euclidean distance (m) between decoded and true cell centroids."""
    decoded = np.asarray(decoded, dtype=np.intp)
    truth = np.asarray(truth, dtype=np.intp)
    if decoded.shape != truth.shape:
        raise ValueError(f"length mismatch: {decoded.shape} vs {truth.shape}")
    if decoded.size == 0:
        raise ValueError("need at least one tick")
    c = np.asarray(centroids)
    d = c[decoded] - c[truth]
    return float(np.hypot(d[..., 0], d[..., 1]).mean())


def _distances(decoded, truth, centroids) -> np.ndarray:
    d = centroids[decoded] - centroids[truth]
    return np.hypot(d[:, 0], d[:, 1])


def tracked_boost(e_t: float, e_prev: float) -> int:
    """``boost`` extended to the infinite "no error yet" sentinel."""
    if math.isinf(e_prev):
        return -1 if math.isinf(e_t) else 1
    return boost(e_t, e_prev)


def run_tick(ls: LoopState, cfg: LoopConfig, rng: np.random.Generator) -> StepRecord:
    """Advance one tick through the loaded segment and run the agent on it.

    S1: decode the last ``window`` ticks with the reinforced model, measure
    the tracked error on ticks carrying an error label, re-estimate from the
    fit-labeled ticks. With no labels in the window the error is carried
    over and nothing is re-estimated. S2: carry the error over.
    """
    if ls.remaining <= 0:
        raise IndexError("segment exhausted; call start_play with new data")
    t = ls.tick
    s, a = ls.mdp_state, ls.action
    e_prev = ls.error
    e_t = e_prev
    decoded_now = -1
    refit = False

    if s == MdpState.S1:
        lo = max(0, t + 1 - ls.window)
        err_lab = ls.err_labels[lo:t + 1]
        fit_lab = ls.fit_labels[lo:t + 1]
        cov = err_lab >= 0
        has_err = bool(cov.any())
        has_fit = bool((fit_lab >= 0).any())
        if has_err or has_fit:
            z = ls.obs[lo:t + 1]
            decoded = np.argmax(_forward_backward_trusted(ls.reinforced, z).gamma, axis=1)
            decoded_now = int(decoded[-1])
            if has_err:
                e_t = float(_distances(decoded[cov], err_lab[cov], ls.centroids).mean())
            if has_fit:
                batch = LabeledBatch.from_sequence(fit_lab, z)
                ls.reinforced = reestimate(ls.reinforced, batch, cfg.oracle_weight,
                                           variance=cfg.variance_update,
                                           transitions=cfg.reestimate_transitions,
                                           observable=ls.observable)
                refit = True

    b = tracked_boost(e_t, e_prev)
    r = immediate_reward(s, a)
    s_next = next_state(a)
    a_next = select_action(ls.q, s_next, cfg.sarsa, rng)
    ls.q = sarsa_update(ls.q, s, a, b, s_next, a_next, cfg.sarsa)

    rec = StepRecord(t, s, a, r, b, e_t, e_prev, int(ls.truth[t]),
                     decoded_window=decoded_now, reestimated=refit)
    ls.mdp_state, ls.action, ls.error = s_next, a_next, e_t
    ls.tick += 1
    return rec


def evaluate_models(models: dict, obs: np.ndarray, truth: np.ndarray,
                    centroids: np.ndarray) -> dict:
    """Decode a whole sequence with each model -> (decoded, per-tick distances)."""
    out = {}
    for name, params in models.items():
        decoded = np.argmax(_forward_backward_trusted(params, obs).gamma, axis=1)
        out[name] = (decoded, _distances(decoded, truth, centroids))
    return out


def play_segment(ls: LoopState, cfg: LoopConfig, rng: np.random.Generator, play: int,
                 control: HmmParams, underlying: HmmParams | None,
                 keep_steps: bool = False) -> PlayRecord:
    """Run every tick of the loaded segment, then score the three models."""
    steps = [run_tick(ls, cfg, rng) for _ in range(ls.remaining)]
    models = {"control": control, "reinforced": ls.reinforced}
    if underlying is not None:
        models["underlying"] = underlying
    ev = evaluate_models(models, ls.obs, ls.truth, ls.centroids)
    dependence = sum(1 for st in steps if st.mdp_state == MdpState.S1) / len(steps)

    def stats(name):
        if name not in ev:
            return math.nan, math.nan
        d = ev[name][1]
        return float(d.mean()), float(d.std())

    if keep_steps:
        for i, st in enumerate(steps):
            st.decoded_control = int(ev["control"][0][i])
            st.decoded_reinforced = int(ev["reinforced"][0][i])
            if "underlying" in ev:
                st.decoded_underlying = int(ev["underlying"][0][i])
    (ec, sc), (er, sr), (eu, su) = stats("control"), stats("reinforced"), stats("underlying")
    return PlayRecord(play, ec, er, eu, dependence, sc, sr, su,
                      steps if keep_steps else None)


def run_play(play: int, ls: LoopState, world: GridWorld, triplet: ModelTriplet,
             cfg: LoopConfig, world_rng: np.random.Generator,
             agent_rng: np.random.Generator, keep_steps: bool = False) -> PlayRecord:
    """Simulate one play. ``world_rng`` drives the walker and the radio,
    ``agent_rng`` drives action selection, so the walk is the same under
    every policy."""
    cells, obs = simulate_segment(world, triplet.underlying, cfg.play_length, world_rng)
    labels = np.where(world.oracle_mask[cells], cells, -1)
    ls.start_play(cfg, obs, cells, labels, labels)
    return play_segment(ls, cfg, agent_rng, play, triplet.control, triplet.underlying,
                        keep_steps)


def new_loop_state(triplet: ModelTriplet, centroids: np.ndarray, cfg: LoopConfig) -> LoopState:
    return LoopState(QTable.zeros(), triplet.reinforced, np.asarray(centroids), cfg.window)


def run_replication(world: GridWorld, triplet: ModelTriplet, cfg: LoopConfig, seed,
                    keep_steps: bool = False) -> tuple[list[PlayRecord], LoopState]:
    """All plays of one replication. ``seed`` feeds two independent streams."""
    world_rng = np.random.default_rng(seed_child(seed, 0))
    agent_rng = np.random.default_rng(seed_child(seed, 1))
    ls = new_loop_state(triplet, world.centroids, cfg)
    ls.observable = world.oracle_mask
    plays = [run_play(i, ls, world, triplet, cfg, world_rng, agent_rng, keep_steps)
             for i in range(cfg.n_plays)]
    return plays, ls


# ------------------------------------------------------------ experiments

@dataclass(frozen=True)
class Setting:
    policy: str
    grid: int
    aps: int
    coverage: float


@dataclass(frozen=True)
class ExperimentConfig:
    loop: LoopConfig = LoopConfig()
    path_loss: PathLossParams = PathLossParams()
    policies: tuple[str, ...] = ("epsilon_greedy",)
    grids: tuple[int, ...] = (20,)
    aps: tuple[int, ...] = (6,)
    coverages: tuple[float, ...] = (0.5,)
    square: bool = False

    def __post_init__(self):
        for name in ("policies", "grids", "aps", "coverages"):
            if len(getattr(self, name)) == 0:
                raise ValueError(f"sweep axis {name!r} is empty")

    def settings(self) -> list[Setting]:
        return [Setting(p, g, m, c) for g, m, c, p in
                product(self.grids, self.aps, self.coverages, self.policies)]


def replication_seed(base_seed: int, grid: int, aps: int, rep: int) -> np.random.SeedSequence:
    """Worlds, trajectories and agent streams are paired across policies and
    coverages: only (seed, grid, aps, replication) enters the key."""
    return np.random.SeedSequence(int(base_seed), spawn_key=(int(grid), int(aps), int(rep)))


def _run_one(args) -> list[dict]:
    setting, rep, base_seed, exp = args
    seed = replication_seed(base_seed, setting.grid, setting.aps, rep)
    world, triplet = build_world(setting.grid, setting.aps, setting.coverage,
                                 exp.path_loss, seed_child(seed, 0), square=exp.square)
    cfg = replace(exp.loop, sarsa=replace(exp.loop.sarsa, policy=setting.policy))
    plays, _ = run_replication(world, triplet, cfg, seed_child(seed, 1))
    return [
        {"policy": setting.policy, "grid": setting.grid, "aps": setting.aps,
         "coverage": setting.coverage, "replication": rep, "play": p.play,
         "err_control": p.err_control, "err_reinforced": p.err_reinforced,
         "err_underlying": p.err_underlying, "dependence": p.dependence,
         "sd_control": p.sd_control, "sd_reinforced": p.sd_reinforced,
         "sd_underlying": p.sd_underlying}
        for p in plays
    ]


def run_experiment(exp: ExperimentConfig, n_runs: int, seed: int = 0,
                   workers: int = 1) -> list[dict]:
    """Record rows for every setting x replication x play, in a fixed order."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    jobs = [(s, rep, seed, exp) for s in exp.settings() for rep in range(n_runs)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_one, jobs))
    else:
        chunks = [_run_one(j) for j in jobs]
    return [row for chunk in chunks for row in chunk]


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def format_records(rows, columns=RECORD_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def write_records(rows, path, columns=RECORD_COLUMNS) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(format_records(rows, columns))


def aggregate_curves(rows) -> list[dict]:
    """Per-setting, per-play mean and population std across replications."""
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        key = (row["policy"], row["grid"], row["aps"], row["coverage"], row["play"])
        groups.setdefault(key, []).append(row)
    out = []
    for key in sorted(groups, key=lambda k: (str(k[0]), k[1], k[2], k[3], k[4])):
        g = groups[key]
        rec = dict(zip(("policy", "grid", "aps", "coverage", "play"), key))
        rec["n"] = len(g)
        for col in ("err_control", "err_reinforced", "err_underlying", "dependence"):
            v = np.array([float(r[col]) for r in g])
            if np.all(np.isnan(v)):
                rec[col + "_mean"] = rec[col + "_std"] = math.nan
            else:
                rec[col + "_mean"] = float(np.nanmean(v))
                rec[col + "_std"] = float(np.nanstd(v))
        out.append(rec)
    return out


SUMMARY_COLUMNS = ("policy", "grid", "aps", "coverage", "replications", "plays_used",
                   "err_control", "err_reinforced", "err_underlying", "improvement",
                   "improvement_std", "dependence")


def final_plays(n_plays: int, fraction: float) -> int:
    """Number of trailing plays in a "final ``fraction``" window (at least one)."""
    return max(1, math.ceil(n_plays * fraction - 1e-9))


def summarize_settings(rows, fraction: float = 0.2) -> list[dict]:
    """One row per setting: means over the final ``fraction`` of plays.

    ``improvement`` is control minus reinforced error, averaged per
    replication first; ``improvement_std`` is the population std of those
    per-replication values.
    """
    groups: dict[tuple, dict[int, list[dict]]] = {}
    for row in rows:
        key = (row["policy"], row["grid"], row["aps"], row["coverage"])
        groups.setdefault(key, {}).setdefault(row["replication"], []).append(row)
    out = []
    for key in sorted(groups, key=lambda k: (str(k[0]), k[1], k[2], k[3])):
        reps = groups[key]
        per_rep = []
        for rep_rows in reps.values():
            rep_rows = sorted(rep_rows, key=lambda r: r["play"])
            tail = rep_rows[-final_plays(len(rep_rows), fraction):]
            per_rep.append([np.mean([float(r[c]) for r in tail]) for c in
                            ("err_control", "err_reinforced", "err_underlying", "dependence")])
        m = np.array(per_rep)
        imp = m[:, 0] - m[:, 1]
        rec = dict(zip(("policy", "grid", "aps", "coverage"), key))
        rec.update(replications=len(reps), plays_used=len(tail),
                   err_control=float(m[:, 0].mean()), err_reinforced=float(m[:, 1].mean()),
                   err_underlying=float(m[:, 2].mean()), improvement=float(imp.mean()),
                   improvement_std=float(imp.std()), dependence=float(m[:, 3].mean()))
        out.append(rec)
    return out
