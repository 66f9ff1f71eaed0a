import re
from collections import deque

import pytest
from hypothesis import given, settings, strategies as st

from hintrl.encoders import (
    EncodingKind, encode, encode_ascii, encode_natural, encode_relative, encode_tuples, symbol_map,
)
from hintrl.environment import TASKS, GridObject, Mission, TaskConfig, reset, step

from helpers import room

RED_KEY = GridObject("key", "red")


def appendix_state(door_state):
    s = room(7, 6, agent=(1, 1, 0), objects=[(3, 2, RED_KEY), (5, 4, GridObject("door", "blue", door_state))])
    m = Mission("GoToObj", "key", "red", "go to the red key", 1, (3, 2))
    return s, m


def test_natural_language_appendix_example():
    s, m = appendix_state("closed")
    assert encode_natural(s, m).text == (
        "Agent is facing north. There is a red key at position (3,2). "
        "There is a blue door at position (5,4). Mission: go to the red key."
    )


def test_tuple_list_appendix_example():
    s, m = appendix_state("open")
    assert encode_tuples(s, m).text == (
        "Agent at (1,1) facing north. Objects: [('red' key, (3,2)), ('blue' door (open), (5,4))]. "
        "Mission: go to the red key."
    )


def test_ascii_empty_room():
    s = room(4, 4, agent=(1, 1, 0))
    m = Mission("GoToObj", "key", "red", "go to the red key", 1, (2, 2))
    enc = encode_ascii(s, m)
    grid = enc.text.split("\n\n")[0].splitlines()
    assert grid == ["####", "#^.#", "#..#", "####"]
    assert enc.text.splitlines()[-1] == "MISSION: go to the red key"


def test_ascii_legend_for_key_and_door():
    s, m = appendix_state("closed")
    enc = encode_ascii(s, m)
    lines = enc.text.splitlines()
    assert "K = red key" in lines and "D = blue door (closed)" in lines
    assert enc.legend["K"] == "red key" and enc.legend["D"] == "blue door (closed)"


def test_ascii_collision_uses_color_letters():
    s = room(6, 6, agent=(1, 1, 1), objects=[(2, 3, RED_KEY), (4, 3, GridObject("key", "purple"))])
    m = Mission("GoToObj", "key", "red", "go to the red key", 1, (2, 3))
    enc = encode_ascii(s, m)
    assert enc.legend["r"] == "red key" and enc.legend["p"] == "purple key"
    assert enc.text.splitlines()[3] == "#.r.p#"


def test_symbol_map_resolves_remaining_collisions_deterministically():
    classes = [("ball", "red", ""), ("box", "blue", "")]
    # both kinds want "B": ball sorts first, box takes the next free letter
    assert symbol_map(classes) == {("ball", "red", ""): "B", ("box", "blue", ""): "C"}
    classes = [("key", "green", ""), ("key", "grey", "")]
    assert symbol_map(classes) == {("key", "green", ""): "g", ("key", "grey", ""): "h"}
    # arrows and grid glyphs are never handed out
    many = [("key", c, "") for c in ("red", "green", "blue", "purple", "yellow", "grey")]
    assert not set(symbol_map(many).values()) & {"v", "^", "<", ">", "#", "."}


def test_agent_arrows():
    for d, arrow in enumerate("^>v<"):
        s = room(5, 5, agent=(2, 2, d))
        m = Mission("GoToObj", "key", "red", "x", 1, (1, 1))
        assert encode_ascii(s, m).text.splitlines()[2][2] == arrow


def test_empty_room_natural_and_tuples():
    s = room(5, 5, agent=(2, 2, 1))
    m = Mission("GoToObj", "key", "red", "go to the red key", 1, (1, 1))
    assert encode_natural(s, m).text == "Agent is facing east. Mission: go to the red key."
    assert "Objects: []" in encode_tuples(s, m).text


def test_relative_ahead_and_behind():
    s = room(6, 6, agent=(2, 4, 0), objects=[(2, 2, RED_KEY)])
    m = Mission("GoToObj", "key", "red", "go to the red key", 1, (2, 2))
    assert "red key: 2 tiles ahead (2 tiles away)" in encode_relative(s, m).text
    s = room(6, 6, agent=(3, 2, 1), objects=[(2, 2, RED_KEY)])
    assert "red key: 1 tile behind (1 tile away)" in encode_relative(s, m).text
    s = room(8, 8, agent=(2, 5, 0), objects=[(3, 3, RED_KEY)])
    assert "red key: 2 tiles ahead, 1 tile to your right (3 tiles away)" in encode_relative(s, m).text


_TUPLE_ITEM = re.compile(r"\('(\w+)' (\w+)(?: \((\w+)\))?, \((\d+),(\d+)\)\)")
_RELATIVE = re.compile(r"^(.+?): .*\((\d+) tiles? away\)$")


def random_state(task, seed, n_actions):
    s, m = reset(task, seed, TaskConfig(room_size=8))
    for i in range(n_actions):
        nxt, _, done = step(s, (seed * 7 + i * 3) % 7, m)
        if done:
            break
        s = nxt
    return s, m


@settings(max_examples=80, deadline=None)
@given(task=st.sampled_from(TASKS), seed=st.integers(0, 5000), n=st.integers(0, 20))
def test_encoding_properties(task, seed, n):
    s, m = random_state(task, seed, n)
    objects = s.objects()

    # purity
    for kind in EncodingKind:
        assert encode(kind, s, m) == encode(kind, s, m)

    # natural: 2 + objects (+1 when carrying) sentences
    text = encode_natural(s, m).text
    n_sentences = len(re.findall(r"\.(?: |$)", text))
    assert n_sentences == 2 + len(objects) + (s.carrying is not None)

    # tuples: parse-back recovers every object
    text = encode_tuples(s, m).text
    objects_part = text.split("Objects: ")[1].split("].")[0]
    parsed = [(k, c, (int(x), int(y))) for c, k, _, x, y in _TUPLE_ITEM.findall(objects_part)]
    assert parsed == [(o.kind, o.color, (x, y)) for x, y, o in objects]

    # relative: Manhattan distances
    lines = encode_relative(s, m).text.splitlines()
    dist_lines = [ln for ln in lines if _RELATIVE.match(ln)]
    assert len(dist_lines) == len(objects)
    for (x, y, _), ln in zip(objects, dist_lines):
        stated = int(_RELATIVE.match(ln).group(2))
        assert stated == abs(x - s.agent.x) + abs(y - s.agent.y)

    # ascii: rectangular grid, every object symbol present, one mission line
    enc = encode_ascii(s, m)
    grid = enc.text.split("\n\n")[0].splitlines()
    assert len({len(r) for r in grid}) == 1 and len(grid) == s.height
    n_symbols = sum(ch not in "#.^>v<" for r in grid for ch in r)
    agent_on_object = int(s.get(s.agent.x, s.agent.y) is not None)
    assert n_symbols + agent_on_object == len(objects)
    assert sum(ln.startswith("MISSION:") for ln in enc.text.splitlines()) == 1


def reachable_states(task, seed, room_size=6):
    s0, m = reset(task, seed, TaskConfig(room_size=room_size, max_steps=10_000))
    seen = {s0.key(): s0}
    queue = deque([s0])
    while queue:
        cur = queue.popleft()
        for a in range(7):
            nxt, _, _ = step(cur, a, m)
            nxt.done = False
            if nxt.key() not in seen:
                seen[nxt.key()] = nxt
                queue.append(nxt)
    return list(seen.values()), m


def test_ascii_injective_over_reachable_states():
    states, m = reachable_states("GoToObj", 3)
    assert len(states) > 500
    seen = {}
    for s in states:
        enc = encode_ascii(s, m)
        sig = (enc.text, tuple(sorted(enc.legend.items())))
        assert sig not in seen, "two distinct states share an ascii encoding"
        seen[sig] = s.key()
