"""Exact shortest-plan oracle.

Breadth-first search over `PlanNode`s with uniform action cost. Children are
generated in ascending action-code order and the first success found wins,
so among equal-length plans the one with the lexicographically smallest
action sequence is returned.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .environment import (
    DIR_VEC, DOOR, OPEN, PICKABLE_CODES, WALL, Action, AgentPose, Mission, WorldState, is_success,
)
from .errors import Unsolvable


@dataclass(frozen=True)
class PlanNode:
    """Search key. `objects` holds the position of every movable object
    (None while carried), so dropped objects are tracked exactly."""

    pose: AgentPose
    carrying: int
    door_mask: int
    objects: tuple


@dataclass(frozen=True)
class Plan:
    actions: tuple[int, ...]

    @property
    def length(self) -> int:
        return len(self.actions)


class _Model:
    """Static layout of one instance plus the movable/door index tables."""

    def __init__(self, state: WorldState, mission: Mission):
        self.width, self.height = state.width, state.height
        grid = state.grid
        self.wall = set()
        self.door_bit = {}
        self.movable_ids = []
        self.movable_index = {}
        door_mask = 0
        objects = []
        for y in range(state.height):
            for x in range(state.width):
                k = int(grid[y, x, 0])
                if k == WALL:
                    self.wall.add((x, y))
                elif k == DOOR:
                    bit = 1 << len(self.door_bit)
                    self.door_bit[(x, y)] = bit
                    if grid[y, x, 2] == OPEN:
                        door_mask |= bit
                elif k in PICKABLE_CODES:
                    self.movable_index[int(grid[y, x, 3])] = len(objects)
                    self.movable_ids.append(int(grid[y, x, 3]))
                    objects.append((x, y))
        carrying = -1
        if state.carrying is not None:
            carrying = len(objects)
            self.movable_index[state.carrying_id] = carrying
            self.movable_ids.append(state.carrying_id)
            objects.append(None)
        a = state.agent
        self.start = (a.x, a.y, a.dir, carrying, door_mask, tuple(objects))

        self.task = mission.task_kind
        self.mode = mission.success_mode
        self.target_pos = tuple(mission.target_pos)
        self.target_index = self.movable_index.get(mission.target_id, -2)
        self.target_bit = self.door_bit.get(self.target_pos, 0)

    def success(self, node) -> bool:
        x, y, d, carrying, mask, objects = node
        if self.task == "PickupLoc":
            return carrying == self.target_index
        dx, dy = DIR_VEC[d]
        front = (x + dx, y + dy)
        if self.task == "GoToObj":
            return self.target_index >= 0 and objects[self.target_index] == front
        if self.mode == "adjacent":
            return front == self.target_pos
        return bool(mask & self.target_bit)

    def successors(self, node):
        x, y, d, carrying, mask, objects = node
        dx, dy = DIR_VEC[d]
        front = (x + dx, y + dy)
        fx, fy = front
        inside = 0 <= fx < self.width and 0 <= fy < self.height
        blocked_static = not inside or front in self.wall
        door = self.door_bit.get(front, 0)
        occupant = -1
        if not blocked_static and not door:
            for i, pos in enumerate(objects):
                if pos == front:
                    occupant = i
                    break

        yield Action.LEFT, (x, y, (d - 1) % 4, carrying, mask, objects)
        yield Action.RIGHT, (x, y, (d + 1) % 4, carrying, mask, objects)
        if not blocked_static and occupant < 0 and (not door or mask & door):
            yield Action.FORWARD, (fx, fy, d, carrying, mask, objects)
        if carrying < 0 and occupant >= 0:
            objs = list(objects)
            objs[occupant] = None
            yield Action.PICKUP, (x, y, d, occupant, mask, tuple(objs))
        if carrying >= 0 and not blocked_static and not door and occupant < 0:
            objs = list(objects)
            objs[carrying] = front
            yield Action.DROP, (x, y, d, -1, mask, tuple(objs))
        if door:
            yield Action.TOGGLE, (x, y, d, carrying, mask ^ door, objects)


def _search(state: WorldState, mission: Mission, bounded: bool = True) -> list[int]:
    model = _Model(state, mission)
    budget = state.max_steps - state.step_count if bounded else float("inf")
    start = model.start
    if model.success(start):
        return []
    parents = {start: None}
    depth = {start: 0}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        nd = depth[node] + 1
        if nd > budget:
            break
        for action, child in model.successors(node):
            if child in parents:
                continue
            parents[child] = (node, int(action))
            depth[child] = nd
            if model.success(child):
                actions = []
                cur = child
                while parents[cur] is not None:
                    cur, act = parents[cur]
                    actions.append(act)
                return actions[::-1]
            queue.append(child)
    raise Unsolvable(f"no plan within {budget} remaining steps")


def plan(state: WorldState, mission: Mission, bounded: bool = True) -> Plan:
    """Shortest plan; `bounded=False` ignores the remaining step budget."""
    return Plan(tuple(_search(state, mission, bounded)))


def optimal_action(state: WorldState, mission: Mission, bounded: bool = True) -> int:
    """First action of the optimal plan; DONE once the mission is achieved."""
    if is_success(state, mission):
        return int(Action.DONE)
    return plan(state, mission, bounded).actions[0]


def optimal_subgoal(state: WorldState, mission: Mission):
    from .hints import Subgoal

    if is_success(state, mission):
        return Subgoal.DONE
    fx, fy = state.agent.front()
    facing = state.in_bounds(fx, fy) and int(state.grid[fy, fx, 3]) == mission.target_id
    if mission.task_kind == "PickupLoc":
        if state.carrying is not None:
            return Subgoal.DROP
        return Subgoal.PICKUP if facing else Subgoal.GO_NEXT_TO
    if mission.task_kind == "OpenDoor" and mission.success_mode == "open" and facing:
        return Subgoal.OPEN
    return Subgoal.GO_NEXT_TO
