"""Text encodings of a world state for language-model prompts.

All four encoders are pure functions of (state, mission). Coordinates are
(x=column, y=row) with the origin at the top-left.
"""
from __future__ import annotations

import string
from dataclasses import dataclass, field
from enum import Enum

from .environment import DIR_NAMES, DIR_VEC, Mission, WorldState

ARROWS = ("^", ">", "v", "<")
WALL_GLYPH = "#"
FLOOR_GLYPH = "."
_RESERVED = set(ARROWS) | {WALL_GLYPH, FLOOR_GLYPH}


class EncodingKind(str, Enum):
    ASCII_GRID = "ascii_grid"
    NATURAL_LANGUAGE = "natural_language"
    TUPLE_LIST = "tuple_list"
    RELATIVE_DESCRIPTION = "relative_description"


@dataclass(frozen=True)
class EncodedState:
    kind: EncodingKind
    text: str
    legend: dict = field(default_factory=dict)


def _class_key(obj):
    return obj.kind, obj.color, obj.door_state or ""


def _class_label(key) -> str:
    kind, color, state = key
    return f"{color} {kind} ({state})" if state else f"{color} {kind}"


def symbol_map(classes) -> dict:
    """Assign one letter to every (kind, color, door_state) class.

    A kind seen in a single color takes its uppercased initial. A kind seen in
    several colors gives each color its lowercased initial. Remaining clashes,
    visited in sorted class order, move to the next unused letter.
    """
    classes = sorted(set(classes))
    colors_per_kind = {}
    for kind, color, _ in classes:
        colors_per_kind.setdefault(kind, set()).add(color)

    letters = string.ascii_uppercase + string.ascii_lowercase
    used = set()
    out = {}
    for key in classes:
        kind, color, _ = key
        wanted = kind[0].upper() if len(colors_per_kind[kind]) == 1 else color[0].lower()
        start = letters.index(wanted)
        for offset in range(len(letters)):
            sym = letters[(start + offset) % len(letters)]
            if sym not in used and sym not in _RESERVED:
                break
        used.add(sym)
        out[key] = sym
    return out


def encode_ascii(state: WorldState, mission: Mission) -> EncodedState:
    objects = state.objects()
    symbols = symbol_map(_class_key(o) for _, _, o in objects)
    rows = []
    for y in range(state.height):
        row = []
        for x in range(state.width):
            obj = state.get(x, y)
            if obj is None:
                row.append(FLOOR_GLYPH)
            elif obj.kind == "wall":
                row.append(WALL_GLYPH)
            else:
                row.append(symbols[_class_key(obj)])
        rows.append(row)
    a = state.agent
    rows[a.y][a.x] = ARROWS[a.dir]

    legend = {ARROWS[a.dir]: f"agent facing {DIR_NAMES[a.dir]}"}
    for key, sym in sorted(symbols.items(), key=lambda kv: kv[1]):
        legend[sym] = _class_label(key)
    lines = ["".join(r) for r in rows]
    lines.append("")
    lines.append("LEGEND:")
    lines += [f"{sym} = {meaning}" for sym, meaning in legend.items()]
    if state.carrying is not None:
        lines.append(f"CARRYING: {state.carrying.color} {state.carrying.kind}")
    lines.append(f"MISSION: {mission.text}")
    return EncodedState(EncodingKind.ASCII_GRID, "\n".join(lines), legend)


def encode_natural(state: WorldState, mission: Mission) -> EncodedState:
    parts = [f"Agent is facing {DIR_NAMES[state.agent.dir]}."]
    if state.carrying is not None:
        parts.append(f"Agent is carrying a {state.carrying.color} {state.carrying.kind}.")
    for x, y, obj in state.objects():
        parts.append(f"There is a {obj.color} {obj.kind} at position ({x},{y}).")
    parts.append(f"Mission: {mission.text}.")
    return EncodedState(EncodingKind.NATURAL_LANGUAGE, " ".join(parts))


def _tuple_item(obj, x, y) -> str:
    state = f" ({obj.door_state})" if obj.door_state else ""
    return f"('{obj.color}' {obj.kind}{state}, ({x},{y}))"


def encode_tuples(state: WorldState, mission: Mission) -> EncodedState:
    a = state.agent
    items = ", ".join(_tuple_item(o, x, y) for x, y, o in state.objects())
    text = f"Agent at ({a.x},{a.y}) facing {DIR_NAMES[a.dir]}. Objects: [{items}]."
    if state.carrying is not None:
        text += f" Carrying: ('{state.carrying.color}' {state.carrying.kind})."
    text += f" Mission: {mission.text}."
    return EncodedState(EncodingKind.TUPLE_LIST, text)


def _tiles(n: int) -> str:
    return f"{n} tile" if n == 1 else f"{n} tiles"


def relative_offset(state: WorldState, x: int, y: int) -> tuple[int, int]:
    """(ahead, right) displacement of cell (x, y) in the agent's frame."""
    a = state.agent
    fx, fy = DIR_VEC[a.dir]
    rx, ry = DIR_VEC[(a.dir + 1) % 4]
    dx, dy = x - a.x, y - a.y
    return dx * fx + dy * fy, dx * rx + dy * ry


def describe_relative(ahead: int, right: int) -> str:
    parts = []
    if ahead > 0:
        parts.append(f"{_tiles(ahead)} ahead")
    elif ahead < 0:
        parts.append(f"{_tiles(-ahead)} behind")
    if right > 0:
        parts.append(f"{_tiles(right)} to your right")
    elif right < 0:
        parts.append(f"{_tiles(-right)} to your left")
    if not parts:
        parts.append("here")
    return f"{', '.join(parts)} ({_tiles(abs(ahead) + abs(right))} away)"


def encode_relative(state: WorldState, mission: Mission) -> EncodedState:
    lines = [f"Agent is facing {DIR_NAMES[state.agent.dir]}."]
    if state.carrying is not None:
        lines.append(f"Carrying: {state.carrying.color} {state.carrying.kind}.")
    for x, y, obj in state.objects():
        lines.append(f"{obj.describe()}: {describe_relative(*relative_offset(state, x, y))}")
    lines.append(f"Mission: {mission.text}")
    return EncodedState(EncodingKind.RELATIVE_DESCRIPTION, "\n".join(lines))


ENCODERS = {
    EncodingKind.ASCII_GRID: encode_ascii,
    EncodingKind.NATURAL_LANGUAGE: encode_natural,
    EncodingKind.TUPLE_LIST: encode_tuples,
    EncodingKind.RELATIVE_DESCRIPTION: encode_relative,
}


def encode(kind, state: WorldState, mission: Mission) -> EncodedState:
    return ENCODERS[EncodingKind(kind)](state, mission)
