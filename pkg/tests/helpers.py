"""Independent oracles and small builders shared by the test modules."""
from __future__ import annotations

import http.server
import json
import threading
from collections import deque

import numpy as np

from hintrl.environment import (
    AgentPose, GridObject, Mission, WorldState, empty_grid, is_success, place, step,
)


def brute_force_distance(state: WorldState, mission: Mission, limit: int | None = None) -> int | None:
    """BFS over full simulator states using environment.step only.

    Shares nothing with the planner's search model: states are keyed by the
    complete grid bytes, pose and carried object id.
    """
    if is_success(state, mission):
        return 0
    limit = state.max_steps - state.step_count if limit is None else limit
    start = state
    seen = {start.key()}
    frontier = deque([(start, 0)])
    while frontier:
        cur, d = frontier.popleft()
        if d >= limit:
            continue
        for a in range(7):
            probe = cur
            if probe.done:
                continue
            nxt, _, _ = step(probe, a, mission)
            nxt.done = False
            key = nxt.key()
            if key in seen:
                continue
            seen.add(key)
            if is_success(nxt, mission):
                return d + 1
            frontier.append((nxt, d + 1))
    return None


def room(width: int, height: int, agent=(1, 1, 0), objects=(), max_steps: int = 64) -> WorldState:
    """Hand-built single room; `objects` is [(x, y, GridObject), ...] with ids 1.. in order."""
    grid = empty_grid(width, height)
    for oid, (x, y, obj) in enumerate(objects, start=1):
        place(grid, x, y, obj, oid)
    return WorldState(width, height, grid, AgentPose(*agent), max_steps=max_steps)


def mission_for(state: WorldState, task: str, x: int, y: int, text: str = "", **kw) -> Mission:
    obj = state.get(x, y)
    return Mission(task, obj.kind, obj.color, text or f"go to the {obj.color} {obj.kind}",
                   state.object_id(x, y), (x, y), **kw)


FIG1_RESPONSE = '''Prediction(
    reasoning="The agent's mission is to go to the purple key. The purple key is located to the north of the agent. Since the agent is facing north, it first needs to move forward towards the purple key. The action to move the agent forward would be the most efficient first step.",
    primitive_action=2,
    subgoal=GoNextToSubgoal
)'''


class ScriptedServer:
    """Local OpenAI-compatible stub that replays a scripted list of (status, content)."""

    def __init__(self, script, default=(200, "Prediction(reasoning=\"x\", primitive_action=2, subgoal=done)")):
        self.script = list(script)
        self.default = default
        self.requests = []
        outer = self

        class Handler(http.server.BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                outer.requests.append(body)
                status, content = outer.script.pop(0) if outer.script else outer.default
                if callable(content):
                    content = content(body)
                payload = json.dumps({"choices": [{"message": {"role": "assistant", "content": content}}]})
                data = payload.encode() if status == 200 else b'{"error": "scripted"}'
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.httpd = http.server.ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.httpd.server_address[1]}/v1"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


def discounted_mc_advantages(rewards, values, dones, gamma, last_value):
    """Monte-Carlo discounted return minus value, by explicit forward sums."""
    n = len(rewards)
    adv = np.zeros(n)
    for t in range(n):
        g, disc, boot = 0.0, 1.0, True
        for j in range(t, n):
            g += disc * rewards[j]
            disc *= gamma
            if dones[j]:
                boot = False
                break
        if boot:
            g += disc * last_value
        adv[t] = g - values[t]
    return adv
