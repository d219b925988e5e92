"""Replay of recorded RSS sessions with room-level labels and partial oracles.

Input is a directory holding one CSV per recorded session plus a room table.

Session file (``*.csv``, any name except the room table)::

    t,rss_<ap1>,...,rss_<apM>,room,oracle_room,oracle_kind

``room`` is the ground-truth room, ``oracle_room``/``oracle_kind`` carry the
label an oracle sensor reported on that tick (``camera`` or ``pir``); empty
fields mean "no reading" / "no label".

Room table (``rooms.csv``)::

    room,x,y,camera

Each repeat draws three training sessions, fits a model on them, then
streams the remaining sessions in random order through the closed loop.
Camera labels drive both the tracked error and re-estimation; PIR labels
only feed re-estimation.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .environment import GridWorld, ModelTriplet, path_loss_matrix, PathLossParams, save_world
from .environment import seed_child, simulate_segment
from .hmm import RSS_MAX, RSS_MIN, SIGMA_FLOOR, HmmParams
from .loop import LoopConfig, LoopState, play_segment
from .sarsa_agent import POLICIES, QTable

ORACLE_KINDS = ("camera", "pir")
ROOM_TABLE_NAME = "rooms.csv"
TRAIN_SESSIONS = 3
CHECKPOINTS = (0.25, 0.5, 1.0)


class DatasetError(ValueError):
    """A dataset file violates the schema; the message names file and row."""


class UnderObservedRoomWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RoomTable:
    names: tuple[str, ...]
    centroids: np.ndarray
    camera: np.ndarray

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise DatasetError("room ids must be unique")
        cent = np.array(self.centroids, dtype=float).reshape(-1, 2)
        cam = np.array(self.camera, dtype=bool).reshape(-1)
        if cent.shape[0] != len(self.names) or cam.shape[0] != len(self.names):
            raise DatasetError("room table columns differ in length")
        if not np.all(np.isfinite(cent)):
            raise DatasetError("room centroids must be finite")
        cent.flags.writeable = False
        cam.flags.writeable = False
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "centroids", cent)
        object.__setattr__(self, "camera", cam)

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True)
class Session:
    """One recorded session. Label vectors use -1 for "no label"."""

    name: str
    t: np.ndarray
    obs: np.ndarray
    room: np.ndarray
    oracle_room: np.ndarray
    oracle_kind: np.ndarray   # 0 none, 1 camera, 2 pir

    def __len__(self):
        return self.t.shape[0]

    @property
    def camera_labels(self) -> np.ndarray:
        return np.where(self.oracle_kind == 1, self.oracle_room, -1)

    @property
    def fit_labels(self) -> np.ndarray:
        return np.where(self.oracle_kind > 0, self.oracle_room, -1)

    def without_pir(self) -> "Session":
        pir = self.oracle_kind == 2
        return replace(self, oracle_room=np.where(pir, -1, self.oracle_room),
                       oracle_kind=np.where(pir, 0, self.oracle_kind))


@dataclass(frozen=True)
class ReplayDataset:
    aps: tuple[str, ...]
    rooms: RoomTable
    sessions: tuple[Session, ...]

    @property
    def n_aps(self) -> int:
        return len(self.aps)

    def without_pir(self) -> "ReplayDataset":
        return replace(self, sessions=tuple(s.without_pir() for s in self.sessions))


# ------------------------------------------------------------------ loading

def parse_room_table(text: str, source: str = ROOM_TABLE_NAME) -> RoomTable:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["room", "x", "y", "camera"]:
        raise DatasetError(f"{source}: header must be room,x,y,camera")
    names, cent, cam = [], [], []
    for row_no, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise DatasetError(f"{source} row {row_no}: expected 4 fields, got {len(row)}")
        name = row[0].strip()
        if not name:
            raise DatasetError(f"{source} row {row_no}: empty room id")
        try:
            x, y = float(row[1]), float(row[2])
        except ValueError:
            raise DatasetError(f"{source} row {row_no}: bad coordinate") from None
        flag = row[3].strip().lower()
        if flag not in ("0", "1", "true", "false"):
            raise DatasetError(f"{source} row {row_no}: camera must be 0/1, got {row[3]!r}")
        if name in names:
            raise DatasetError(f"{source} row {row_no}: duplicate room id {name!r}")
        names.append(name)
        cent.append((x, y))
        cam.append(flag in ("1", "true"))
    if not names:
        raise DatasetError(f"{source}: no rooms declared")
    try:
        return RoomTable(tuple(names), cent, cam)
    except DatasetError as exc:
        raise DatasetError(f"{source}: {exc}") from None


def parse_session(text: str, rooms: RoomTable, name: str) -> tuple[tuple[str, ...], Session]:
    reader = csv.reader(io.StringIO(text))
    header = [h.strip() for h in next(reader, [])]
    if (len(header) < 5 or header[0] != "t"
            or header[-3:] != ["room", "oracle_room", "oracle_kind"]
            or not all(h.startswith("rss_") and len(h) > 4 for h in header[1:-3])):
        raise DatasetError(f"{name}: header must be t,rss_<ap>...,room,oracle_room,oracle_kind")
    aps = tuple(h[4:] for h in header[1:-3])
    m = len(aps)
    lookup = {r: i for i, r in enumerate(rooms.names)}
    t, obs, room, o_room, o_kind = [], [], [], [], []
    for row_no, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != m + 4:
            raise DatasetError(f"{name} row {row_no}: expected {m + 4} fields, got {len(row)}")
        where = f"{name} row {row_no}"
        try:
            ts = float(row[0])
        except ValueError:
            raise DatasetError(f"{where}: bad timestamp {row[0]!r}") from None
        if t and not ts > t[-1]:
            raise DatasetError(f"{where}: timestamps must increase strictly in session {name}")
        vec = []
        for cell in row[1:m + 1]:
            cell = cell.strip()
            if not cell:
                vec.append(math.nan)
                continue
            try:
                v = float(cell)
            except ValueError:
                raise DatasetError(f"{where}: bad RSS value {cell!r}") from None
            if not (math.isfinite(v) and RSS_MIN <= v <= RSS_MAX):
                raise DatasetError(f"{where}: RSS {v} outside [{RSS_MIN}, {RSS_MAX}] dBm")
            vec.append(v)
        true_room, lab, kind = (c.strip() for c in row[m + 1:])
        if true_room not in lookup:
            raise DatasetError(f"{where}: unknown room id {true_room!r}")
        if lab and lab not in lookup:
            raise DatasetError(f"{where}: unknown oracle room id {lab!r}")
        if bool(lab) != bool(kind):
            raise DatasetError(f"{where}: oracle_room and oracle_kind must both be set or both empty")
        if kind and kind not in ORACLE_KINDS:
            raise DatasetError(f"{where}: oracle_kind must be one of {ORACLE_KINDS}, got {kind!r}")
        t.append(ts)
        obs.append(vec)
        room.append(lookup[true_room])
        o_room.append(lookup[lab] if lab else -1)
        o_kind.append(ORACLE_KINDS.index(kind) + 1 if kind else 0)
    if not t:
        raise DatasetError(f"{name}: session has no ticks")
    session = Session(name, np.array(t), np.array(obs, dtype=float).reshape(-1, m),
                      np.array(room, dtype=np.int64), np.array(o_room, dtype=np.int64),
                      np.array(o_kind, dtype=np.int64))
    return aps, session


def load_dataset(path, room_table=None) -> ReplayDataset:
    """Load every session CSV in directory ``path``.

    ``room_table`` defaults to ``path/rooms.csv``. Sessions are ordered by
    file name so a dataset always loads the same way.
    """
    root = Path(path)
    if not root.is_dir():
        raise DatasetError(f"{root}: not a directory")
    table_path = Path(room_table) if room_table is not None else root / ROOM_TABLE_NAME
    if not table_path.is_file():
        raise DatasetError(f"{table_path}: room table not found")
    rooms = parse_room_table(table_path.read_text(), str(table_path))
    files = sorted(p for p in root.glob("*.csv") if p.resolve() != table_path.resolve())
    if not files:
        raise DatasetError(f"{root}: no session files")
    aps = None
    sessions = []
    for f in files:
        a, s = parse_session(f.read_text(), rooms, f.name)
        if aps is None:
            aps = a
        elif a != aps:
            raise DatasetError(f"{f.name}: AP columns {a} differ from {aps}")
        sessions.append(s)
    return ReplayDataset(aps, rooms, tuple(sessions))


# ------------------------------------------------------------------ model fit

def fit_initial_model(sessions, rooms: RoomTable,
                      sigma_floor: float = SIGMA_FLOOR) -> HmmParams:
    """Supervised fit on ground-truth room labels.

    Per-room, per-AP mean and population std of present readings; add-one
    smoothed transition counts; uniform prior. A room/AP pair without any
    reading falls back to that AP's pooled moments and triggers an
    :class:`UnderObservedRoomWarning`.
    """
    sessions = list(sessions)
    if not sessions:
        raise ValueError("need at least one training session")
    n, m = len(rooms), sessions[0].obs.shape[1]
    obs = np.concatenate([s.obs for s in sessions])
    lab = np.concatenate([s.room for s in sessions])
    present = np.isfinite(obs)

    pooled_mu = np.array([obs[present[:, k], k].mean() if present[:, k].any() else -80.0
                          for k in range(m)])
    pooled_sd = np.array([obs[present[:, k], k].std() if present[:, k].sum() > 1 else 10.0
                          for k in range(m)])
    mu = np.tile(pooled_mu, (n, 1))
    sigma = np.tile(np.maximum(pooled_sd, sigma_floor), (n, 1))
    missing = []
    for j in range(n):
        rows = lab == j
        for k in range(m):
            x = obs[rows & present[:, k], k]
            if x.size:
                mu[j, k] = x.mean()
                sigma[j, k] = max(sigma_floor, x.std())
            else:
                missing.append((rooms.names[j], k))
    if missing:
        names = sorted({r for r, _ in missing})
        warnings.warn(f"rooms without training readings on some AP: {names}",
                      UnderObservedRoomWarning, stacklevel=2)

    counts = np.ones((n, n))
    for s in sessions:
        np.add.at(counts, (s.room[:-1], s.room[1:]), 1.0)
    trans = counts / counts.sum(axis=1, keepdims=True)
    return HmmParams(np.full(n, 1.0 / n), trans, mu, sigma, sigma_floor=sigma_floor)


# ------------------------------------------------------------------ protocol

@dataclass(frozen=True)
class SplitPlan:
    repeat: int
    train: tuple[int, ...]
    test: tuple[int, ...]

    def __post_init__(self):
        if set(self.train) & set(self.test):
            raise ValueError("train and test sessions overlap")


def draw_split(n_sessions: int, repeat: int, rng: np.random.Generator,
               n_train: int = TRAIN_SESSIONS) -> SplitPlan:
    if n_sessions <= n_train:
        raise ValueError(f"need more than {n_train} sessions, got {n_sessions}")
    order = rng.permutation(n_sessions)
    train = tuple(sorted(int(i) for i in order[:n_train]))
    test = tuple(int(i) for i in order[n_train:])
    return SplitPlan(repeat, train, test)


def checkpoint_positions(n_test: int, checkpoints=CHECKPOINTS) -> tuple[int, ...]:
    """Index of the test session that closes each progress checkpoint."""
    return tuple(max(1, math.ceil(q * n_test - 1e-9)) - 1 for q in checkpoints)


def replay_seed(seed: int, repeat: int) -> np.random.SeedSequence:
    return seed_child(int(seed), int(repeat))


def run_replay(dataset: ReplayDataset, cfg: LoopConfig, n_repeats: int,
               seed: int = 0) -> list[dict]:
    """Record rows (loop CSV schema) for every repeat and test session.

    Splits and session orders depend only on ``(seed, repeat)``, so runs
    with different policies see identical data.
    """
    if n_repeats < 1:
        raise ValueError("n_repeats must be >= 1")
    rooms = dataset.rooms
    coverage = float(rooms.camera.mean())
    rows = []
    for rep in range(n_repeats):
        ss = replay_seed(seed, rep)
        plan = draw_split(len(dataset.sessions), rep, np.random.default_rng(seed_child(ss, 0)))
        agent_rng = np.random.default_rng(seed_child(ss, 1))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UnderObservedRoomWarning)
            control = fit_initial_model([dataset.sessions[i] for i in plan.train], rooms)
        ls = LoopState(QTable.zeros(), control, rooms.centroids, cfg.window)
        for pos, idx in enumerate(plan.test):
            s = dataset.sessions[idx]
            ls.start_play(cfg, s.obs, s.room, s.camera_labels, s.fit_labels)
            rec = play_segment(ls, cfg, agent_rng, pos, control, None)
            rows.append({"policy": cfg.sarsa.policy, "grid": len(rooms), "aps": dataset.n_aps,
                         "coverage": coverage, "replication": rep, "play": pos,
                         "err_control": rec.err_control, "err_reinforced": rec.err_reinforced,
                         "err_underlying": math.nan, "dependence": rec.dependence,
                         "session": s.name})
    return rows


SUMMARY_COLUMNS = ("policy", "quantity") + tuple(
    f"p{int(q * 100)}_{stat}" for q in CHECKPOINTS for stat in ("mean", "std"))


def summarize_checkpoints(rows) -> list[dict]:
    """Control/reinforced error and dependence at each checkpoint, mean and
    population std across repeats; one row per policy and quantity."""
    by_policy: dict[str, dict[int, list[dict]]] = {}
    for r in rows:
        by_policy.setdefault(r["policy"], {}).setdefault(r["replication"], []).append(r)
    out = []
    order = [p for p in POLICIES if p in by_policy] + sorted(set(by_policy) - set(POLICIES))
    for policy in order:
        reps = by_policy[policy]
        n_test = len(next(iter(reps.values())))
        pos = checkpoint_positions(n_test)
        for quantity, col in (("control", "err_control"), ("reinforced", "err_reinforced"),
                              ("dependence", "dependence")):
            rec = {"policy": policy, "quantity": quantity}
            for q, p in zip(CHECKPOINTS, pos):
                vals = np.array([sorted(r, key=lambda x: x["play"])[p][col]
                                 for r in reps.values()], dtype=float)
                rec[f"p{int(q * 100)}_mean"] = float(vals.mean())
                rec[f"p{int(q * 100)}_std"] = float(vals.std())
            out.append(rec)
    return out


# ------------------------------------------------------------------ fixtures

@dataclass(frozen=True)
class FixtureSpec:
    """Synthetic house: a grid of rooms, a few APs, cameras in some rooms,
    a noisy PIR everywhere, and a per-session RSS offset per AP."""

    rows: int = 3
    cols: int = 3
    room_size: float = 3.0
    n_aps: int = 4
    n_cameras: int = 3
    n_sessions: int = 19
    ticks: int = 200
    session_offset_sd: float = 3.0
    missing_prob: float = 0.05
    pir_prob: float = 0.3
    pir_error: float = 0.1
    path_loss: PathLossParams = PathLossParams()

    def __post_init__(self):
        if self.n_sessions <= TRAIN_SESSIONS:
            raise ValueError(f"a fixture needs more than {TRAIN_SESSIONS} sessions")
        if not 0 <= self.n_cameras <= self.rows * self.cols:
            raise ValueError("n_cameras out of range")
        for name in ("missing_prob", "pir_prob", "pir_error"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.ticks < 2 or self.n_aps < 1:
            raise ValueError("need ticks >= 2 and at least one AP")


def build_fixture(spec: FixtureSpec = FixtureSpec(), seed: int = 0):
    """Generate (world, generating model, dataset) for ``spec``."""
    rng_layout = np.random.default_rng(seed_child(seed, 0))
    n = spec.rows * spec.cols
    size = np.array([spec.cols, spec.rows], dtype=float) * spec.room_size
    aps = rng_layout.uniform(0.0, 1.0, size=(spec.n_aps, 2)) * size
    mask = np.zeros(n, dtype=bool)
    mask[rng_layout.permutation(n)[:spec.n_cameras]] = True
    world = GridWorld(spec.rows, spec.cols, aps, mask, cell_size=spec.room_size)

    p = spec.path_loss
    mu = np.clip(path_loss_matrix(world, p), RSS_MIN, RSS_MAX)
    trans = np.zeros((n, n))
    for cell in range(n):
        nb = world.neighbours(cell)
        trans[cell, nb] = 1.0 / len(nb)
    floor = min(SIGMA_FLOOR, p.shadow_sigma) if p.shadow_sigma > 0 else SIGMA_FLOOR
    model = HmmParams(np.full(n, 1.0 / n), trans, mu,
                      np.full_like(mu, max(p.shadow_sigma, floor)), sigma_floor=floor)

    names = tuple(f"room{j}" for j in range(n))
    rooms = RoomTable(names, world.centroids, mask)
    sessions = []
    for i in range(spec.n_sessions):
        rng = np.random.default_rng(seed_child(seed, 1, i))
        offset = rng.normal(0.0, spec.session_offset_sd, size=spec.n_aps)
        shifted = model._evolve(mu=np.clip(mu + offset, RSS_MIN, RSS_MAX))
        cells, obs = simulate_segment(world, shifted, spec.ticks, rng)
        obs = np.where(rng.random(obs.shape) < spec.missing_prob, np.nan, obs)
        o_room = np.full(spec.ticks, -1, dtype=np.int64)
        o_kind = np.zeros(spec.ticks, dtype=np.int64)
        cam = mask[cells]
        o_room[cam], o_kind[cam] = cells[cam], 1
        fire = ~cam & (rng.random(spec.ticks) < spec.pir_prob)
        wrong = rng.random(spec.ticks) < spec.pir_error
        for t in np.flatnonzero(fire):
            c = int(cells[t])
            if wrong[t]:
                others = world.neighbours(c)[1:]
                c = int(others[rng.integers(len(others))])
            o_room[t], o_kind[t] = c, 2
        t_axis = np.arange(spec.ticks, dtype=float)
        sessions.append(Session(f"session{i:02d}", t_axis, obs, cells, o_room, o_kind))
    dataset = ReplayDataset(tuple(f"ap{k}" for k in range(spec.n_aps)), rooms, tuple(sessions))
    return world, model, dataset


def format_room_table(rooms: RoomTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["room", "x", "y", "camera"])
    for name, (x, y), cam in zip(rooms.names, rooms.centroids.tolist(), rooms.camera):
        w.writerow([name, repr(x), repr(y), int(cam)])
    return buf.getvalue()


def format_session(session: Session, aps, rooms: RoomTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"rss_{a}" for a in aps] + ["room", "oracle_room", "oracle_kind"])
    for i in range(len(session)):
        rss = ["" if math.isnan(v) else repr(v) for v in session.obs[i].tolist()]
        o = int(session.oracle_room[i])
        kind = int(session.oracle_kind[i])
        w.writerow([repr(float(session.t[i]))] + rss + [
            rooms.names[int(session.room[i])],
            rooms.names[o] if o >= 0 else "",
            ORACLE_KINDS[kind - 1] if kind else "",
        ])
    return buf.getvalue()


def write_dataset(dataset: ReplayDataset, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / ROOM_TABLE_NAME).write_text(format_room_table(dataset.rooms))
    for s in dataset.sessions:
        (out / f"{s.name}.csv").write_text(format_session(s, dataset.aps, dataset.rooms))
    return out


def make_fixture(out_dir, spec: FixtureSpec = FixtureSpec(), seed: int = 0) -> Path:
    """Write a fixture dataset plus ``world.txt`` (the generating model)."""
    world, model, dataset = build_fixture(spec, seed)
    out = write_dataset(dataset, out_dir)
    save_world(world, ModelTriplet(model, model, model), out / "world.txt")
    return out
