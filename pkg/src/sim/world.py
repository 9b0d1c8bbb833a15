"""
Kinematic planar tabletop: end-effector, object, basket and marker.

Positions live in the unit square. ``render_observation`` and
``step_dynamics`` are pure; ``SimWorld`` wraps them into a single-threaded
stepper that also keeps the episode trace used for scoring.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from config.settings import SuccessThresholds, WorldConfig
from src.core.errors import ConfigError, DomainError, NonFiniteStateError
from src.core.rng import split_rng

logger = logging.getLogger(__name__)

N_CHANNELS: int = 4
OBJECT_CH, BASKET_CH, MARKER_CH, EE_CH = range(N_CHANNELS)

Region = Tuple[Tuple[float, float], Tuple[float, float]]


def _vec(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64).reshape(2).copy()


# =============================================================================
# TASKS
# =============================================================================


@dataclass(frozen=True)
class TaskSpec:
    """One layout: object appearance code and the positions of everything on the table."""

    object_code: float
    object_pos: np.ndarray
    basket_pos: np.ndarray
    marker_pos: np.ndarray
    ee_start: np.ndarray
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("object_pos", "basket_pos", "marker_pos", "ee_start"):
            object.__setattr__(self, name, _vec(getattr(self, name)))
        if not 0.0 <= self.object_code <= 1.0:
            raise DomainError(f"object_code {self.object_code} outside [0, 1]")

    def positions(self) -> List[np.ndarray]:
        return [self.ee_start, self.object_pos, self.basket_pos, self.marker_pos]

    def min_separation(self) -> float:
        points = self.positions()
        return min(
            float(np.linalg.norm(points[i] - points[j])) for i in range(len(points)) for j in range(i + 1, len(points))
        )

    def to_dict(self) -> dict:
        return {
            "object_code": float(self.object_code),
            "object_pos": self.object_pos.tolist(),
            "basket_pos": self.basket_pos.tolist(),
            "marker_pos": self.marker_pos.tolist(),
            "ee_start": self.ee_start.tolist(),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TaskSpec":
        return cls(
            object_code=float(data["object_code"]),
            object_pos=np.array(data["object_pos"]),
            basket_pos=np.array(data["basket_pos"]),
            marker_pos=np.array(data["marker_pos"]),
            ee_start=np.array(data["ee_start"]),
            seed=int(data.get("seed", 0)),
        )


def _full_region(config: WorldConfig) -> Region:
    lo, hi = config.margin, 1.0 - config.margin
    return ((lo, hi), (lo, hi))


def _draw(rng: np.random.Generator, region: Region) -> np.ndarray:
    (x0, x1), (y0, y1) = region
    return np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])


def sample_task(
    config: WorldConfig,
    seed: int,
    split: str = "train",
    object_code: Optional[float] = None,
    object_region: Optional[Region] = None,
    basket_region: Optional[Region] = None,
) -> TaskSpec:
    """
    Draw a layout by rejection sampling.

    Args:
        config: World section of the experiment config.
        seed: Layout seed.
        split: "train" draws codes from config.train_codes, anything else from test_codes.
        object_code: Fixed appearance code (tasks share it across demos).
        object_region: Optional sub-box for the object.
        basket_region: Optional sub-box for the basket.

    Raises:
        ConfigError: No layout met the separation constraints in config.max_tries draws.
    """
    rng = split_rng(seed, "layout")
    if object_code is None:
        lo, hi = config.train_codes if split == "train" else config.test_codes
        object_code = float(rng.uniform(lo, hi))
    home = np.array(config.home, dtype=np.float64)
    full = _full_region(config)
    for _ in range(config.max_tries):
        spec = TaskSpec(
            object_code=object_code,
            object_pos=_draw(rng, object_region or full),
            basket_pos=_draw(rng, basket_region or full),
            marker_pos=_draw(rng, full),
            ee_start=home,
            seed=seed,
        )
        if spec.min_separation() >= config.min_separation:
            return spec
    raise ConfigError(
        f"no layout with separation >= {config.min_separation} m after {config.max_tries} draws (seed {seed})"
    )


def held_out_code(config: WorldConfig, seed: int, group: int) -> float:
    """Object code of held-out task ``group``."""
    return float(split_rng(seed, "group-code", group).uniform(*config.test_codes))


def latin_square_specs(
    config: WorldConfig,
    n_groups: int,
    trials_per_group: int,
    seed: int,
) -> List[List[TaskSpec]]:
    """
    Held-out evaluation layouts.

    Each group gets one held-out object code. Within a group, trial j puts
    the object and the basket in workspace cells read from a seeded Latin
    square over a 4x4 partition, so every group covers the workspace evenly.

    Returns:
        n_groups lists of trials_per_group TaskSpecs.
    """
    rng = split_rng(seed, "latin-square")
    cells = 4
    rows = rng.permutation(cells)
    cols = rng.permutation(cells)
    lo, hi = config.margin, 1.0 - config.margin
    edges = np.linspace(lo, hi, cells + 1)

    def region(cell: int) -> Region:
        r, c = divmod(cell, cells)
        return ((edges[c], edges[c + 1]), (edges[r], edges[r + 1]))

    groups: List[List[TaskSpec]] = []
    for g in range(n_groups):
        code = held_out_code(config, seed, g)
        trials = []
        for j in range(trials_per_group):
            row = rows[j % cells]
            obj_cell = row * cells + cols[(j + g) % cells]
            basket_cell = rows[(j + 2) % cells] * cells + cols[(j + g + 1) % cells]
            trials.append(
                sample_task(
                    config,
                    seed=int(seed * 1000 + g * 100 + j),
                    split="test",
                    object_code=code,
                    object_region=region(obj_cell),
                    basket_region=region(basket_cell),
                )
            )
        groups.append(trials)
    return groups


# =============================================================================
# STATE & RENDERING
# =============================================================================


@dataclass(frozen=True)
class WorldState:
    ee: np.ndarray
    ee_vel: np.ndarray
    object_pos: np.ndarray
    basket_pos: np.ndarray
    marker_pos: np.ndarray
    holding: bool = False
    object_in_basket: bool = False
    released: bool = False
    clamped: bool = False
    tick: int = 0
    t: float = 0.0


@dataclass(frozen=True)
class Observation:
    """G x G x 4 grid of blob images."""

    grid: np.ndarray

    @property
    def flat(self) -> np.ndarray:
        return self.grid.ravel()


def initial_state(spec: TaskSpec) -> WorldState:
    return WorldState(
        ee=spec.ee_start.copy(),
        ee_vel=np.zeros(2),
        object_pos=spec.object_pos.copy(),
        basket_pos=spec.basket_pos.copy(),
        marker_pos=spec.marker_pos.copy(),
    )


def _cell_centers(grid_size: int) -> Tuple[np.ndarray, np.ndarray]:
    centers = (np.arange(grid_size) + 0.5) / grid_size
    return np.meshgrid(centers, centers, indexing="ij")


def render_observation(state: WorldState, spec: TaskSpec, config: WorldConfig) -> Observation:
    """
    Render a Gaussian blob per entity; cell (i, j) is centred at ((i+0.5)/G, (j+0.5)/G).

    The object channel is scaled by the object code, so the code is the only
    appearance difference between tasks.
    """
    xs, ys = _cell_centers(config.grid_size)
    inv = 1.0 / (2.0 * config.blob_radius**2)

    def blob(p: np.ndarray) -> np.ndarray:
        return np.exp(-((xs - p[0]) ** 2 + (ys - p[1]) ** 2) * inv)

    grid = np.stack(
        [
            spec.object_code * blob(state.object_pos),
            blob(state.basket_pos),
            blob(state.marker_pos),
            blob(state.ee),
        ],
        axis=-1,
    )
    return Observation(np.clip(grid, 0.0, 1.0))


# =============================================================================
# DYNAMICS
# =============================================================================


def _push_basket(ee_old: np.ndarray, ee_new: np.ndarray, basket: np.ndarray, radius: float) -> np.ndarray:
    """
    Flat-paddle contact: the end-effector sweeps a segment of half-width
    ``radius`` perpendicular to its motion and shoves the basket ahead of it.

    Motion is resolved in increments of at most radius / 4 so fast moves
    cannot tunnel through the basket.
    """
    motion = ee_new - ee_old
    dist = float(np.linalg.norm(motion))
    if dist == 0.0:
        return basket
    unit = motion / dist
    n_sub = max(1, int(math.ceil(dist / (0.25 * radius))))
    previous = ee_old
    for i in range(1, n_sub + 1):
        point = ee_old + motion * (i / n_sub)
        ahead = float(np.dot(basket - previous, unit))
        rel = basket - point
        along = float(np.dot(rel, unit))
        lateral = float(np.linalg.norm(rel - along * unit))
        if ahead > 0.0 and lateral < radius and along < radius:
            basket = basket + (radius - along) * unit
        previous = point
    return basket


def step_dynamics(state: WorldState, command: np.ndarray, config: WorldConfig) -> WorldState:
    """
    Advance one tick of length config.delta.

    Args:
        state: Current state.
        command: Commanded end-effector position.
        config: World geometry and limits.

    Returns:
        New state. ``clamped`` is set when the command left the workspace or
        exceeded the speed limit.

    Raises:
        NonFiniteStateError: The command holds NaN or inf.
    """
    command = np.asarray(command, dtype=np.float64)
    if command.shape != (2,) or not np.all(np.isfinite(command)):
        raise NonFiniteStateError(f"commanded position {command!r} is not a finite 2-vector")
    target = np.clip(command, 0.0, 1.0)
    clamped = bool(np.any(target != command))
    step = target - state.ee
    max_step = config.max_speed * config.delta
    norm = float(np.linalg.norm(step))
    if norm > max_step:
        step = step * (max_step / norm)
        clamped = True
    ee = state.ee + step

    obj = state.object_pos
    basket = state.basket_pos
    in_basket = state.object_in_basket
    if state.holding:
        obj = ee.copy()
    elif state.released:
        basket = np.clip(_push_basket(state.ee, ee, basket, config.push_radius), 0.0, 1.0)
    if in_basket:
        obj = basket.copy()
    elif state.released and not state.holding and np.linalg.norm(obj - basket) < config.basket_inner_radius:
        in_basket = True
        obj = basket.copy()
        logger.debug(f"Basket captured the object at tick {state.tick + 1}")

    return replace(
        state,
        ee=ee,
        ee_vel=step / config.delta,
        object_pos=obj,
        basket_pos=basket,
        object_in_basket=in_basket,
        clamped=clamped,
        tick=state.tick + 1,
        t=state.t + config.delta,
    )


def grasp_state(state: WorldState, grasp_radius: float) -> Tuple[WorldState, float]:
    """Close the gripper; succeeds only within grasp_radius of the object."""
    distance = float(np.linalg.norm(state.ee - state.object_pos))
    if distance <= grasp_radius and not state.object_in_basket:
        return replace(state, holding=True, object_pos=state.ee.copy()), distance
    return state, distance


def release_state(state: WorldState, config: WorldConfig) -> Tuple[WorldState, Optional[float]]:
    """Open the gripper; a release close enough to the basket drops the object in."""
    if not state.holding:
        return replace(state, released=True), None
    distance = float(np.linalg.norm(state.object_pos - state.basket_pos))
    if distance < config.basket_inner_radius:
        return replace(state, holding=False, released=True, object_in_basket=True, object_pos=state.basket_pos.copy()), distance
    return replace(state, holding=False, released=True), distance


# =============================================================================
# STATEFUL WORLD
# =============================================================================


@dataclass
class EpisodeTrace:
    """Everything needed to score an episode after the fact."""

    states: List[WorldState] = field(default_factory=list)
    grasp_distance: Optional[float] = None
    release_distance: Optional[float] = None
    subtask_starts: List[int] = field(default_factory=list)
    perturbation_ticks: List[int] = field(default_factory=list)

    @property
    def final(self) -> WorldState:
        return self.states[-1]

    def ee_path(self) -> np.ndarray:
        return np.array([s.ee for s in self.states])


class SimWorld:
    """
    Single-threaded world instance.

    ``command`` is the stepping callback handed to ``execute_online``: it
    takes the commanded position, advances one tick and returns the measured
    end-effector position.
    """

    def __init__(self, spec: TaskSpec, config: WorldConfig, grasp_radius: float = SuccessThresholds.GRASP):
        self.spec = spec
        self.config = config
        self.grasp_radius = grasp_radius
        self.state = initial_state(spec)
        self.trace = EpisodeTrace(states=[self.state])

    @property
    def tick(self) -> int:
        return self.state.tick

    def command(self, position: np.ndarray) -> np.ndarray:
        self.state = step_dynamics(self.state, position, self.config)
        self.trace.states.append(self.state)
        return self.state.ee.copy()

    __call__ = command

    def displace(self, delta: np.ndarray) -> np.ndarray:
        """Externally move the end-effector (a held object moves with it)."""
        ee = np.clip(self.state.ee + _vec(delta), 0.0, 1.0)
        obj = ee.copy() if self.state.holding else self.state.object_pos
        self.state = replace(self.state, ee=ee, object_pos=obj)
        self.trace.states[-1] = self.state
        self.trace.perturbation_ticks.append(self.state.tick)
        return ee.copy()

    def grasp(self) -> bool:
        self.state, distance = grasp_state(self.state, self.grasp_radius)
        self.trace.grasp_distance = distance
        self.trace.states[-1] = self.state
        return self.state.holding

    def release(self) -> None:
        self.state, distance = release_state(self.state, self.config)
        if distance is not None:
            self.trace.release_distance = distance
        self.trace.states[-1] = self.state

    def mark_subtask_start(self) -> None:
        self.trace.subtask_starts.append(self.state.tick)

    def observe(self) -> Observation:
        return render_observation(self.state, self.spec, self.config)
