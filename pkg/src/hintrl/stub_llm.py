"""Deterministic OpenAI-compatible stand-in for a language-model endpoint.

It reads the ASCII grid and mission out of the user message and answers with
a greedy heuristic in the Prediction(...) format. A configurable fraction of
replies (chosen by prompt hash, so repeatable) is deliberately malformed.
Useful for offline tests and demos; it is not a planner.
"""
from __future__ import annotations

import argparse
import hashlib
import http.server
import json
import re
import threading

ARROWS = {"^": (0, -1), ">": (1, 0), "v": (0, 1), "<": (-1, 0)}
_DIRS = [(0, -1), (1, 0), (0, 1), (-1, 0)]
_MISSION = re.compile(r"^MISSION: (?:go to|pick up|open) the (?:(\w+) )?(\w+)", re.M)


def _parse(user: str):
    state = user.split("Current state:\n", 1)[-1]
    grid_text, _, rest = state.partition("\n\n")
    grid = grid_text.splitlines()
    legend = dict(re.findall(r"^(\S) = (.+)$", rest, re.M))
    return grid, legend


def heuristic(user: str) -> tuple[int, str, str]:
    grid, legend = _parse(user)
    m = _MISSION.search(user)
    verb = user[m.start():].split()[1] if m else "go"
    agent = next(((x, y, ch) for y, row in enumerate(grid) for x, ch in enumerate(row) if ch in ARROWS), None)
    if m is None or agent is None:
        return 0, "ExploreSubgoal", "cannot read the state; turning to look around"
    color, kind = m.group(1), m.group(2)
    symbols = {s for s, meaning in legend.items() if meaning.startswith(f"{color} {kind}" if color else kind)}
    targets = [(x, y) for y, row in enumerate(grid) for x, ch in enumerate(row) if ch in symbols]
    ax, ay, arrow = agent
    dx, dy = ARROWS[arrow]
    if not targets:
        return 0, "ExploreSubgoal", f"no {kind} visible; turning"
    tx, ty = min(targets, key=lambda p: abs(p[0] - ax) + abs(p[1] - ay))
    if (ax + dx, ay + dy) == (tx, ty):
        if verb == "pick":
            return 3, "PickupSubgoal", f"facing the {kind}; pick it up"
        if verb == "open":
            return 5, "OpenSubgoal", f"facing the {kind}; open it"
        return 6, "done", f"already facing the {kind}"
    ox, oy = tx - ax, ty - ay
    ahead = ox * dx + oy * dy
    if ahead > 0:
        fx, fy = ax + dx, ay + dy
        cell = grid[fy][fx] if 0 <= fy < len(grid) and 0 <= fx < len(grid[fy]) else "#"
        if cell == ".":
            return 2, "GoNextToSubgoal", f"the {kind} is ahead; move forward"
    right = _DIRS[(_DIRS.index((dx, dy)) + 1) % 4]
    side = ox * right[0] + oy * right[1]
    if side > 0:
        return 1, "GoNextToSubgoal", f"the {kind} is to the right; turn right"
    return 0, "GoNextToSubgoal", f"the {kind} is to the left or behind; turn left"


def reply(user: str, error_rate: float = 0.0) -> str:
    digest = int(hashlib.sha256(user.encode()).hexdigest()[:8], 16) / 0xFFFFFFFF
    if digest < error_rate:
        return "I am not sure what the agent should do here."
    action, subgoal, reason = heuristic(user)
    return f'Prediction(\n    reasoning="{reason}",\n    primitive_action={action},\n    subgoal={subgoal}\n)'


class StubServer:
    """Serve the heuristic on 127.0.0.1; use as a context manager."""

    def __init__(self, port: int = 0, error_rate: float = 0.0):
        self.requests = 0
        outer = self

        class Handler(http.server.BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                user = next((m["content"] for m in reversed(body.get("messages", []))
                             if m.get("role") == "user"), "")
                with outer._lock:
                    outer.requests += 1
                data = json.dumps({"choices": [{"index": 0, "message": {
                    "role": "assistant", "content": reply(user, error_rate)}}]}).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self._lock = threading.Lock()
        self.httpd = http.server.ThreadingHTTPServer(("127.0.0.1", port), Handler)
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.httpd.server_address[1]}/v1"

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description="offline chat-completion stub")
    parser.add_argument("--port", type=int, default=8000)
    parser.add_argument("--error-rate", type=float, default=0.0)
    args = parser.parse_args(argv)
    server = StubServer(args.port, args.error_rate)
    print(f"serving on {server.url}")
    try:
        server.httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.httpd.server_close()


if __name__ == "__main__":
    main()
