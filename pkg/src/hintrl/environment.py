"""Single-room gridworld with BabyAI-style semantics.

Three task families are generated: GoToObj, OpenDoor and PickupLoc. The
world is stored as an integer array so that observation encoding, hashing
and copying stay cheap; `WorldState.get` exposes cells as `GridObject`.

Coordinates are (x=column, y=row) with the origin at the top-left corner.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from .errors import ConfigError, UsageError

TASKS = ("GoToObj", "OpenDoor", "PickupLoc")

# Observation codes follow the BabyAI tables so the 7x7 view has 11 kinds,
# 6 colors and 3 door states.
OBS_KINDS = ("unseen", "empty", "wall", "floor", "door", "key", "ball", "box", "goal", "lava", "agent")
COLORS = ("red", "green", "blue", "purple", "yellow", "grey")
DOOR_STATES = ("open", "closed", "locked")
KIND_IDX = {k: i for i, k in enumerate(OBS_KINDS)}
COLOR_IDX = {c: i for i, c in enumerate(COLORS)}

# GridObject kinds; "floor" is stored as the BabyAI "empty" code.
OBJECT_KINDS = ("wall", "floor", "key", "ball", "box", "door")
PICKABLE = ("key", "ball", "box")

EMPTY, WALL, DOOR = KIND_IDX["empty"], KIND_IDX["wall"], KIND_IDX["door"]
PICKABLE_CODES = frozenset(KIND_IDX[k] for k in PICKABLE)
OPEN, CLOSED = 0, 1

VIEW_SIZE = 7


class Action(IntEnum):
    LEFT = 0
    RIGHT = 1
    FORWARD = 2
    PICKUP = 3
    DROP = 4
    TOGGLE = 5
    DONE = 6


ACTION_NAMES = {
    Action.LEFT: "turn left",
    Action.RIGHT: "turn right",
    Action.FORWARD: "move forward",
    Action.PICKUP: "pickup",
    Action.DROP: "drop",
    Action.TOGGLE: "toggle",
    Action.DONE: "done",
}


class Direction(IntEnum):
    NORTH = 0
    EAST = 1
    SOUTH = 2
    WEST = 3


DIR_VEC = ((0, -1), (1, 0), (0, 1), (-1, 0))
DIR_NAMES = ("north", "east", "south", "west")


@dataclass(frozen=True)
class GridObject:
    kind: str
    color: str
    door_state: str | None = None

    def __post_init__(self):
        if self.kind not in OBJECT_KINDS:
            raise ValueError(f"unknown object kind {self.kind!r}")
        if self.color not in COLORS:
            raise ValueError(f"unknown color {self.color!r}")
        if (self.kind == "door") != (self.door_state is not None):
            raise ValueError("door_state is set exactly for doors")

    def code(self) -> tuple[int, int, int]:
        kind = "empty" if self.kind == "floor" else self.kind
        state = DOOR_STATES.index(self.door_state) if self.door_state else 0
        return KIND_IDX[kind], COLOR_IDX[self.color], state

    @classmethod
    def from_code(cls, kind: int, color: int, state: int) -> GridObject | None:
        name = OBS_KINDS[kind]
        if name == "empty":
            return None
        if name == "door":
            return cls("door", COLORS[color], DOOR_STATES[state])
        return cls(name, COLORS[color])

    def describe(self) -> str:
        if self.kind == "door":
            return f"{self.color} door ({self.door_state})"
        return f"{self.color} {self.kind}"


@dataclass(frozen=True)
class AgentPose:
    x: int
    y: int
    dir: int

    def front(self) -> tuple[int, int]:
        dx, dy = DIR_VEC[self.dir]
        return self.x + dx, self.y + dy


@dataclass
class WorldState:
    """Full simulator state.

    `grid` has shape (height, width, 4) holding (kind, color, state, object id)
    per cell. Object ids are positive for movable objects and doors, 0 otherwise.
    """

    width: int
    height: int
    grid: np.ndarray
    agent: AgentPose
    carrying: GridObject | None = None
    carrying_id: int = 0
    step_count: int = 0
    rng_seed: int = 0
    max_steps: int = 64
    done: bool = False

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def get(self, x: int, y: int) -> GridObject | None:
        k, c, s, _ = self.grid[y, x]
        return GridObject.from_code(int(k), int(c), int(s))

    def object_id(self, x: int, y: int) -> int:
        return int(self.grid[y, x, 3])

    def objects(self) -> list[tuple[int, int, GridObject]]:
        """Non-wall objects in row-major order as (x, y, object)."""
        out = []
        kinds = self.grid[:, :, 0]
        ys, xs = np.nonzero((kinds != EMPTY) & (kinds != WALL))
        for y, x in zip(ys.tolist(), xs.tolist()):
            out.append((x, y, self.get(x, y)))
        return out

    def copy(self) -> WorldState:
        return replace(self, grid=self.grid.copy())

    def key(self) -> tuple:
        """Hashable identity of the dynamic state (step counter excluded)."""
        a = self.agent
        return (a.x, a.y, a.dir, self.carrying_id, self.grid.tobytes())


@dataclass(frozen=True)
class Mission:
    task_kind: str
    kind: str
    color: str
    text: str
    target_id: int
    target_pos: tuple[int, int]
    location: str | None = None
    success_mode: str = "open"


@dataclass
class Observation:
    view: np.ndarray
    mission_text: str
    carrying: tuple[int, int] | None = None


@dataclass(frozen=True)
class TaskConfig:
    room_size: int = 8
    max_steps: int | None = None
    reward_decay: float = 0.9
    opendoor_success: str = "open"
    max_distractors: int = 3

    def __post_init__(self):
        if self.room_size < 4:
            raise ConfigError("room_size must be at least 4", "task.room_size")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be positive", "task.max_steps")
        if not 0.0 <= self.reward_decay <= 1.0:
            raise ConfigError("reward_decay must lie in [0, 1]", "task.reward_decay")
        if self.opendoor_success not in ("open", "adjacent"):
            raise ConfigError("expected 'open' or 'adjacent'", "task.opendoor_success")

    def steps_limit(self) -> int:
        if self.max_steps is not None:
            return self.max_steps
        return 64 if self.room_size <= 8 else 8 * self.room_size


# --------------------------------------------------------------------------- #
# Construction
# --------------------------------------------------------------------------- #

def empty_grid(width: int, height: int) -> np.ndarray:
    grid = np.zeros((height, width, 4), dtype=np.int16)
    grid[:, :, 0] = EMPTY
    grid[0, :, :3] = (WALL, COLOR_IDX["grey"], 0)
    grid[-1, :, :3] = (WALL, COLOR_IDX["grey"], 0)
    grid[:, 0, :3] = (WALL, COLOR_IDX["grey"], 0)
    grid[:, -1, :3] = (WALL, COLOR_IDX["grey"], 0)
    return grid


def place(grid: np.ndarray, x: int, y: int, obj: GridObject, oid: int) -> None:
    grid[y, x, :3] = obj.code()
    grid[y, x, 3] = oid


def quadrant(x: int, y: int, width: int, height: int) -> str:
    vert = "top" if y < height // 2 else "bottom"
    horiz = "left" if x < width // 2 else "right"
    return f"{vert}-{horiz}"


WALL_SIDES = ("north", "east", "south", "west")


def _wall_side(x: int, y: int, width: int, height: int) -> str:
    if y == 0:
        return "north"
    if y == height - 1:
        return "south"
    if x == width - 1:
        return "east"
    return "west"


def _generate(task_kind: str, rng: np.random.Generator, cfg: TaskConfig, seed: int):
    size = cfg.room_size
    grid = empty_grid(size, size)
    interior = [(x, y) for y in range(1, size - 1) for x in range(1, size - 1)]

    def free_cell():
        while True:
            x, y = interior[rng.integers(len(interior))]
            if grid[y, x, 0] == EMPTY:
                return x, y

    if task_kind == "GoToObj":
        obj = GridObject(PICKABLE[rng.integers(3)], COLORS[rng.integers(6)])
        x, y = free_cell()
        place(grid, x, y, obj, 1)
        mission = Mission(task_kind, obj.kind, obj.color, f"go to the {obj.color} {obj.kind}", 1, (x, y))

    elif task_kind == "OpenDoor":
        colors = rng.permutation(6)[:4]
        doors = []
        for i, side in enumerate(WALL_SIDES):
            pos = int(rng.integers(1, size - 1))
            x, y = {"north": (pos, 0), "south": (pos, size - 1), "west": (0, pos), "east": (size - 1, pos)}[side]
            obj = GridObject("door", COLORS[colors[i]], "closed")
            place(grid, x, y, obj, i + 1)
            doors.append((x, y, obj, i + 1, side))
        x, y, obj, oid, side = doors[rng.integers(4)]
        verb = "open" if cfg.opendoor_success == "open" else "go to"
        if rng.random() < 0.5:
            text, location = f"{verb} the {obj.color} door", None
        else:
            text, location = f"{verb} the door on the {side} wall", f"on the {side} wall"
        mission = Mission(task_kind, "door", obj.color, text, oid, (x, y), location, cfg.opendoor_success)

    elif task_kind == "PickupLoc":
        target = GridObject(PICKABLE[rng.integers(3)], COLORS[rng.integers(6)])
        tx, ty = free_cell()
        place(grid, tx, ty, target, 1)
        tq = quadrant(tx, ty, size, size)
        oid = 2
        if rng.random() < 0.5:
            # same kind and color elsewhere, so only the location disambiguates
            for _ in range(50):
                x, y = free_cell()
                if quadrant(x, y, size, size) != tq:
                    place(grid, x, y, target, oid)
                    oid += 1
                    break
        for _ in range(int(rng.integers(1, cfg.max_distractors + 1))):
            obj = GridObject(PICKABLE[rng.integers(3)], COLORS[rng.integers(6)])
            x, y = free_cell()
            if obj == target and quadrant(x, y, size, size) == tq:
                continue
            place(grid, x, y, obj, oid)
            oid += 1
        location = f"in the {tq} corner"
        mission = Mission(task_kind, target.kind, target.color,
                          f"pick up the {target.color} {target.kind} {location}", 1, (tx, ty), location)
    else:
        raise ConfigError(f"unknown task {task_kind!r}; expected one of {TASKS}", "task.kind")

    ax, ay = free_cell()
    agent = AgentPose(ax, ay, int(rng.integers(4)))
    state = WorldState(size, size, grid, agent, rng_seed=seed, max_steps=cfg.steps_limit())
    return state, mission


def reset(task_kind: str, seed: int, cfg: TaskConfig | None = None) -> tuple[WorldState, Mission]:
    """Generate a solvable instance; identical (task, seed, cfg) give identical output."""
    from .planner import plan  # planner depends on this module

    if task_kind not in TASKS:
        raise ConfigError(f"unknown task {task_kind!r}; expected one of {TASKS}", "task.kind")
    cfg = cfg or TaskConfig()
    for attempt in range(1000):
        rng = np.random.default_rng([int(seed), attempt])
        state, mission = _generate(task_kind, rng, cfg, seed)
        if is_success(state, mission):
            continue
        try:
            plan(state, mission)
        except Exception:
            continue
        return state, mission
    raise RuntimeError(f"could not generate a solvable {task_kind} instance for seed {seed}")


# --------------------------------------------------------------------------- #
# Dynamics
# --------------------------------------------------------------------------- #

def is_success(state: WorldState, mission: Mission) -> bool:
    if mission.task_kind == "PickupLoc":
        return state.carrying_id == mission.target_id
    fx, fy = state.agent.front()
    facing = state.in_bounds(fx, fy) and state.grid[fy, fx, 3] == mission.target_id
    if mission.task_kind == "GoToObj":
        return bool(facing)
    tx, ty = mission.target_pos
    if mission.success_mode == "adjacent":
        return (fx, fy) == (tx, ty)
    return bool(state.grid[ty, tx, 2] == OPEN)


def step(state: WorldState, action: int, mission: Mission, reward_decay: float = 0.9
         ) -> tuple[WorldState, float, bool]:
    """Apply one action. Returns a new state; the input state is not modified."""
    if state.done:
        raise UsageError("step() called on a terminated episode")
    a = Action(action)
    agent = state.agent
    grid = state.grid
    carrying, carrying_id = state.carrying, state.carrying_id
    fx, fy = agent.front()
    inside = state.in_bounds(fx, fy)
    fk = int(grid[fy, fx, 0]) if inside else WALL

    if a == Action.LEFT:
        agent = AgentPose(agent.x, agent.y, (agent.dir - 1) % 4)
    elif a == Action.RIGHT:
        agent = AgentPose(agent.x, agent.y, (agent.dir + 1) % 4)
    elif a == Action.FORWARD:
        if fk == EMPTY or (fk == DOOR and grid[fy, fx, 2] == OPEN):
            agent = AgentPose(fx, fy, agent.dir)
    elif a == Action.PICKUP:
        if carrying is None and fk in PICKABLE_CODES:
            carrying = state.get(fx, fy)
            carrying_id = int(grid[fy, fx, 3])
            grid = grid.copy()
            grid[fy, fx] = (EMPTY, 0, 0, 0)
    elif a == Action.DROP:
        if carrying is not None and fk == EMPTY:
            grid = grid.copy()
            place(grid, fx, fy, carrying, carrying_id)
            carrying, carrying_id = None, 0
    elif a == Action.TOGGLE:
        if fk == DOOR:
            grid = grid.copy()
            grid[fy, fx, 2] = CLOSED if grid[fy, fx, 2] == OPEN else OPEN

    new = replace(state, grid=grid, agent=agent, carrying=carrying, carrying_id=carrying_id,
                  step_count=state.step_count + 1)
    success = is_success(new, mission)
    reward = 1.0 - reward_decay * (new.step_count / new.max_steps) if success else 0.0
    new.done = success or new.step_count >= new.max_steps
    return new, reward, new.done


# --------------------------------------------------------------------------- #
# Observation
# --------------------------------------------------------------------------- #

def _view_offsets():
    offsets = []
    for d in range(4):
        fdx, fdy = DIR_VEC[d]
        rdx, rdy = DIR_VEC[(d + 1) % 4]
        dx = np.zeros((VIEW_SIZE, VIEW_SIZE), dtype=np.int64)
        dy = np.zeros((VIEW_SIZE, VIEW_SIZE), dtype=np.int64)
        for row in range(VIEW_SIZE):
            for col in range(VIEW_SIZE):
                f, r = VIEW_SIZE - 1 - row, col - VIEW_SIZE // 2
                dx[row, col] = f * fdx + r * rdx
                dy[row, col] = f * fdy + r * rdy
        offsets.append((dx, dy))
    return offsets


_OFFSETS = _view_offsets()
_WALL_CELL = np.array([WALL, COLOR_IDX["grey"], 0], dtype=np.int16)


def view_positions(agent: AgentPose) -> tuple[np.ndarray, np.ndarray]:
    """World (x, y) for every view cell, indexed [row, col]."""
    dx, dy = _OFFSETS[agent.dir]
    return agent.x + dx, agent.y + dy


def _visibility(cells: np.ndarray) -> np.ndarray:
    # cells indexed [row, col]; light spreads from the agent cell, blocked by
    # walls and closed doors.
    n = VIEW_SIZE
    opaque = (cells[:, :, 0] == WALL) | ((cells[:, :, 0] == DOOR) & (cells[:, :, 2] != OPEN))
    opaque = opaque.tolist()
    mask = [[False] * n for _ in range(n)]
    mask[n - 1][n // 2] = True
    for j in range(n - 1, -1, -1):
        row = mask[j]
        for i in range(n - 1):
            if not row[i] or opaque[j][i]:
                continue
            row[i + 1] = True
            if j > 0:
                mask[j - 1][i + 1] = True
                mask[j - 1][i] = True
        for i in range(n - 1, 0, -1):
            if not row[i] or opaque[j][i]:
                continue
            row[i - 1] = True
            if j > 0:
                mask[j - 1][i - 1] = True
                mask[j - 1][i] = True
    return np.array(mask, dtype=bool)


def observe(state: WorldState, mission: Mission) -> Observation:
    xs, ys = view_positions(state.agent)
    inside = (xs >= 0) & (xs < state.width) & (ys >= 0) & (ys < state.height)
    cells = np.empty((VIEW_SIZE, VIEW_SIZE, 3), dtype=np.int16)
    cells[:] = _WALL_CELL
    cells[inside] = state.grid[ys[inside], xs[inside], :3]
    vis = _visibility(cells)
    cells[~vis] = 0
    carrying = None
    if state.carrying is not None:
        k, c, _ = state.carrying.code()
        carrying = (k, c)
    return Observation(cells, mission.text, carrying)


# --------------------------------------------------------------------------- #
# Serialization and display
# --------------------------------------------------------------------------- #

def to_json(state: WorldState, mission: Mission) -> str:
    return json.dumps({
        "width": state.width,
        "height": state.height,
        "cells": state.grid.tolist(),
        "agent": {"x": state.agent.x, "y": state.agent.y, "dir": state.agent.dir},
        "carrying": None if state.carrying is None else {
            "kind": state.carrying.kind, "color": state.carrying.color, "id": state.carrying_id},
        "step_count": state.step_count,
        "rng_seed": state.rng_seed,
        "max_steps": state.max_steps,
        "done": state.done,
        "mission": {
            "task_kind": mission.task_kind, "kind": mission.kind, "color": mission.color,
            "text": mission.text, "target_id": mission.target_id,
            "target_pos": list(mission.target_pos), "location": mission.location,
            "success_mode": mission.success_mode,
        },
    })


def from_json(text: str) -> tuple[WorldState, Mission]:
    d = json.loads(text)
    carrying = d["carrying"]
    state = WorldState(
        d["width"], d["height"], np.array(d["cells"], dtype=np.int16),
        AgentPose(**d["agent"]),
        carrying=None if carrying is None else GridObject(carrying["kind"], carrying["color"]),
        carrying_id=0 if carrying is None else carrying["id"],
        step_count=d["step_count"], rng_seed=d["rng_seed"], max_steps=d["max_steps"], done=d["done"],
    )
    m = dict(d["mission"])
    m["target_pos"] = tuple(m["target_pos"])
    return state, Mission(**m)


def render(state: WorldState, mission: Mission) -> str:
    from .encoders import encode_ascii

    return encode_ascii(state, mission).text


@dataclass
class Env:
    """Stateful wrapper used by training loops and the CLI."""

    task_kind: str
    cfg: TaskConfig = field(default_factory=TaskConfig)
    state: WorldState | None = None
    mission: Mission | None = None

    def reset(self, seed: int) -> Observation:
        self.state, self.mission = reset(self.task_kind, seed, self.cfg)
        return observe(self.state, self.mission)

    def step(self, action: int) -> tuple[Observation, float, bool]:
        self.state, reward, done = step(self.state, action, self.mission, self.cfg.reward_decay)
        return observe(self.state, self.mission), reward, done

    def success(self) -> bool:
        return is_success(self.state, self.mission)
