"""Synthetic grid world: AP layout, path-loss RSS model, oracle coverage.

A world is a rows x cols grid of square cells. Every cell is one HMM state.
Three models describe it: the *underlying* model that generates the data,
a *control* copy whose means carry a one-off Gaussian corruption, and a
*reinforced* copy that starts equal to control and is adapted online.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .hmm import RSS_MAX, RSS_MIN, SIGMA_FLOOR, HmmParams, format_params, parse_params


@dataclass(frozen=True)
class PathLossParams:
    p0: float = -45.0           # dBm at d0
    d0: float = 1.0             # m
    exponent_n: float = 2.0
    shadow_sigma: float = 4.0   # dB, per-cell emission spread
    awgn_sigma_ctrl: float = 3.0  # dB, corruption of control/reinforced means

    def __post_init__(self):
        if not self.d0 > 0:
            raise ValueError(f"d0 must be positive, got {self.d0}")
        if not self.exponent_n > 0:
            raise ValueError(f"exponent_n must be positive, got {self.exponent_n}")
        if self.shadow_sigma < 0 or self.awgn_sigma_ctrl < 0:
            raise ValueError("sigmas must be non-negative")


@dataclass(frozen=True, eq=False)
class GridWorld:
    rows: int
    cols: int
    ap_positions: np.ndarray
    oracle_mask: np.ndarray
    cell_size: float = 1.0
    centroids: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid needs at least one cell")
        aps = np.array(self.ap_positions, dtype=float).reshape(-1, 2)
        mask = np.array(self.oracle_mask, dtype=bool).reshape(-1)
        if mask.shape[0] != self.rows * self.cols:
            raise ValueError("oracle mask length must equal the number of cells")
        w, h = self.cols * self.cell_size, self.rows * self.cell_size
        if np.any(aps < 0) or np.any(aps[:, 0] > w) or np.any(aps[:, 1] > h):
            raise ValueError("AP positions must lie inside the grid")
        idx = np.arange(self.rows * self.cols)
        cent = np.stack([(idx % self.cols + 0.5) * self.cell_size,
                         (idx // self.cols + 0.5) * self.cell_size], axis=1)
        for a in (aps, mask, cent):
            a.flags.writeable = False
        object.__setattr__(self, "ap_positions", aps)
        object.__setattr__(self, "oracle_mask", mask)
        object.__setattr__(self, "centroids", cent)

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @property
    def n_aps(self) -> int:
        return self.ap_positions.shape[0]

    @property
    def coverage(self) -> float:
        return float(self.oracle_mask.mean())

    def cell_of(self, row: int, col: int) -> int:
        return row * self.cols + col

    def neighbours(self, cell: int) -> list[int]:
        """The cell itself plus its in-grid 4-neighbourhood."""
        r, c = divmod(cell, self.cols)
        out = [cell]
        if r > 0:
            out.append(cell - self.cols)
        if r < self.rows - 1:
            out.append(cell + self.cols)
        if c > 0:
            out.append(cell - 1)
        if c < self.cols - 1:
            out.append(cell + 1)
        return out


@dataclass(frozen=True)
class ModelTriplet:
    underlying: HmmParams
    control: HmmParams
    reinforced: HmmParams


def grid_shape(n_cells: int) -> tuple[int, int]:
    """Near-square (rows, cols) factorisation with rows <= cols."""
    if n_cells < 1:
        raise ValueError("n_cells must be positive")
    rows = int(math.isqrt(n_cells))
    while n_cells % rows:
        rows -= 1
    return rows, n_cells // rows


def path_loss_mean(ap, cell, p: PathLossParams) -> float:
    """Log-distance mean RSS in dBm, clamped to p0 inside the reference distance."""
    d = math.hypot(cell[0] - ap[0], cell[1] - ap[1])
    return p.p0 - 10.0 * p.exponent_n * math.log10(max(d, p.d0) / p.d0)


def path_loss_matrix(world: GridWorld, p: PathLossParams) -> np.ndarray:
    """(n_cells, n_aps) mean RSS for every cell/AP pair."""
    diff = world.centroids[:, None, :] - world.ap_positions[None, :, :]
    d = np.hypot(diff[..., 0], diff[..., 1])
    return p.p0 - 10.0 * p.exponent_n * np.log10(np.maximum(d, p.d0) / p.d0)


def lazy_walk_matrix(world: GridWorld) -> np.ndarray:
    n = world.n_cells
    a = np.zeros((n, n))
    for cell in range(n):
        nb = world.neighbours(cell)
        a[cell, nb] = 1.0 / len(nb)
    return a


def seed_child(seed, *key: int) -> np.random.SeedSequence:
    """Stable sub-stream: the same (seed, key) always yields the same sequence."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + key)
    return np.random.SeedSequence(int(seed), spawn_key=key)


def oracle_count(n_cells: int, coverage: float) -> int:
    # tolerance guards products like 0.3 * 10 = 3.0000000000000004
    return min(n_cells, max(1, math.ceil(coverage * n_cells - 1e-9)))


def build_world(n_cells: int, m_aps: int, coverage: float,
                p: PathLossParams = PathLossParams(), seed=0, *,
                square: bool = False) -> tuple[GridWorld, ModelTriplet]:
    """Generate a world and its model triplet.

    ``n_cells`` is the number of 1 m cells, laid out near-square; with
    ``square=True`` it is the side length instead. AP placement, control
    corruption and the oracle ordering use separate sub-streams of ``seed``,
    so the oracle masks for increasing coverage are nested and everything
    except the mask is independent of ``coverage``.
    """
    if square:
        if n_cells < 2:
            raise ValueError("side must be at least 2")
        rows = cols = int(n_cells)
    else:
        if n_cells < 2:
            raise ValueError("need at least 2 cells")
        rows, cols = grid_shape(int(n_cells))
    if m_aps < 1:
        raise ValueError("need at least one AP")
    if not 0.0 < coverage <= 1.0:
        raise ValueError(f"coverage must lie in (0, 1], got {coverage}")

    n = rows * cols
    ap_rng = np.random.default_rng(seed_child(seed, 0))
    aps = ap_rng.uniform(0.0, 1.0, size=(m_aps, 2)) * np.array([cols, rows], dtype=float)

    order = np.random.default_rng(seed_child(seed, 1)).permutation(n)
    mask = np.zeros(n, dtype=bool)
    mask[order[:oracle_count(n, coverage)]] = True

    world = GridWorld(rows, cols, aps, mask)
    mu = np.clip(path_loss_matrix(world, p), RSS_MIN, RSS_MAX)
    sigma = np.full_like(mu, p.shadow_sigma)
    prior = np.full(n, 1.0 / n)
    trans = lazy_walk_matrix(world)
    floor = min(SIGMA_FLOOR, p.shadow_sigma)
    underlying = HmmParams(prior, trans, mu, sigma, sigma_floor=floor)

    noise = np.random.default_rng(seed_child(seed, 2)).normal(0.0, p.awgn_sigma_ctrl, size=mu.shape)
    control = underlying.replace(mu=mu + noise)
    return world, ModelTriplet(underlying, control, control)


def step_trajectory(world: GridWorld, cell: int, rng: np.random.Generator) -> int:
    """Lazy random walk: stay or move to an in-grid 4-neighbour, uniformly."""
    nb = world.neighbours(cell)
    return nb[int(rng.integers(len(nb)))]


def sample_observation(model: HmmParams, cell: int, rng: np.random.Generator) -> np.ndarray:
    if not 0 <= cell < model.n_states:
        raise IndexError(f"cell {cell} out of range")
    z = rng.normal(model.mu[cell], model.sigma[cell])
    return np.clip(z, RSS_MIN, RSS_MAX)


def simulate_segment(world: GridWorld, model: HmmParams, length: int,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """A walk of ``length`` ticks from a uniform start, plus its RSS readings.

    Same law as repeated :func:`step_trajectory` / :func:`sample_observation`
    calls, but drawn in bulk.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    start = int(rng.integers(world.n_cells))
    cells = _kernels.random_walk(start, rng.random(length - 1), world.rows, world.cols)
    obs = rng.normal(model.mu[cells], model.sigma[cells])
    return cells, np.clip(obs, RSS_MIN, RSS_MAX)


# ------------------------------------------------------------ world files
#
#   world <rows> <cols> <cell_size>
#   aps <M>
#   <x> <y>            (M lines)
#   oracle <bitstring, one char per cell, row-major>
#   [underlying]  <hmm block>
#   [control]     <hmm block>
#   [reinforced]  <hmm block>

def format_world(world: GridWorld, triplet: ModelTriplet) -> str:
    lines = [f"world {world.rows} {world.cols} {world.cell_size!r}", f"aps {world.n_aps}"]
    lines += [f"{x!r} {y!r}" for x, y in world.ap_positions.tolist()]
    lines.append("oracle " + "".join("1" if b else "0" for b in world.oracle_mask))
    for name in ("underlying", "control", "reinforced"):
        lines.append(f"[{name}]")
        lines.append(format_params(getattr(triplet, name)).rstrip("\n"))
    return "\n".join(lines) + "\n"


def parse_world(text: str) -> tuple[GridWorld, ModelTriplet]:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    head = lines[0].split()
    if head[0] != "world":
        raise ValueError("world file must start with a 'world' header")
    rows, cols, size = int(head[1]), int(head[2]), float(head[3])
    m = int(lines[1].split()[1])
    aps = [[float(v) for v in ln.split()] for ln in lines[2:2 + m]]
    bits = lines[2 + m].split()[1]
    world = GridWorld(rows, cols, aps, [c == "1" for c in bits], cell_size=size)
    sections: dict[str, list[str]] = {}
    current = None
    for ln in lines[3 + m:]:
        if ln.startswith("[") and ln.endswith("]"):
            current = ln[1:-1]
            sections[current] = []
        elif current is not None:
            sections[current].append(ln)
    models = {k: parse_params(v) for k, v in sections.items()}
    return world, ModelTriplet(models["underlying"], models["control"], models["reinforced"])


def save_world(world: GridWorld, triplet: ModelTriplet, path) -> None:
    Path(path).write_text(format_world(world, triplet))


def load_world(path) -> tuple[GridWorld, ModelTriplet]:
    return parse_world(Path(path).read_text())
