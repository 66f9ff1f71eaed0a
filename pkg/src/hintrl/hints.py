"""Hint values, providers and the schedule that builds enhanced observations."""
from __future__ import annotations

import json
import logging
import threading
import time
from collections import deque
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Protocol

import numpy as np

from .environment import ACTION_NAMES, Action, Mission, Observation, WorldState
from .errors import ConfigError, Unsolvable, UsageError

log = logging.getLogger(__name__)

NEUTRAL_ACTION = 7
N_HINT_ACTIONS = 8


class Subgoal(str, Enum):
    GO_NEXT_TO = "GoNextToSubgoal"
    PICKUP = "PickupSubgoal"
    DROP = "DropSubgoal"
    OPEN = "OpenSubgoal"
    CLOSE = "CloseSubgoal"
    EXPLORE = "ExploreSubgoal"
    DONE = "done"
    NONE = "none"


SUBGOALS = tuple(Subgoal)
SUBGOAL_INDEX = {s: i for i, s in enumerate(SUBGOALS)}


@dataclass(frozen=True)
class Hint:
    primitive_action: int
    subgoal: Subgoal
    reasoning: str | None = None

    def __post_init__(self):
        if not 0 <= self.primitive_action <= NEUTRAL_ACTION:
            raise ValueError(f"hint action {self.primitive_action} outside 0..7")
        neutral_action = self.primitive_action == NEUTRAL_ACTION
        if neutral_action != (self.subgoal == Subgoal.NONE):
            raise ValueError("action 7 and subgoal 'none' only occur together")

    @property
    def is_neutral(self) -> bool:
        return self.primitive_action == NEUTRAL_ACTION


NEUTRAL_HINT = Hint(NEUTRAL_ACTION, Subgoal.NONE)


class ActionHistory:
    """The most recent `capacity` actions as (step_index, action) pairs."""

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ConfigError("history size must be >= 0", "hints.p")
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)
        self._last = 0

    def push(self, step_index: int, action: int) -> ActionHistory:
        if step_index <= self._last:
            raise UsageError(f"step index {step_index} not after {self._last}")
        self._last = step_index
        self._items.append((step_index, int(action)))
        return self

    def clear(self) -> None:
        self._items.clear()
        self._last = 0

    def __len__(self) -> int:
        return len(self._items)

    def items(self) -> list[tuple[int, int]]:
        return list(self._items)

    def format(self) -> list[str]:
        return [f"step {i}: {ACTION_NAMES[Action(a)]}" for i, a in self._items]


@dataclass
class EnhancedObservation:
    base: Observation
    hint: Hint
    hint_available: int

    def __post_init__(self):
        if not self.hint_available and self.hint != NEUTRAL_HINT:
            raise ValueError("unavailable hints must be neutral")


@dataclass
class HintContext:
    """Extra facts a provider may use beyond the text encoding."""

    state: WorldState | None = None
    episode: int = 0
    t: int = 0
    worker: int = 0


class HintProvider(Protocol):
    name: str

    def get_hint(self, encoded, history: ActionHistory, mission: Mission,
                 ctx: HintContext | None = None) -> Hint: ...


class NeutralProvider:
    name = "neutral"

    def get_hint(self, encoded, history, mission, ctx=None) -> Hint:
        return NEUTRAL_HINT


class OracleProvider:
    """Planner hints. When the step budget is too short to finish, the hint
    still points along a shortest path to the goal."""

    name = "oracle"

    def get_hint(self, encoded, history, mission, ctx=None) -> Hint:
        from .planner import optimal_action, optimal_subgoal

        if ctx is None or ctx.state is None:
            raise UsageError("oracle provider needs the world state")
        try:
            action = optimal_action(ctx.state, mission)
        except Unsolvable:
            action = optimal_action(ctx.state, mission, bounded=False)
        return Hint(action, optimal_subgoal(ctx.state, mission))


class NoisyProvider:
    """Oracle hints whose action is replaced, with probability epsilon, by a
    uniformly drawn different action."""

    name = "noisy"

    def __init__(self, epsilon: float, seed: int = 0):
        if not 0.0 <= epsilon <= 1.0:
            raise ConfigError("epsilon must lie in [0, 1]", "hints.epsilon")
        self.epsilon = epsilon
        self.oracle = OracleProvider()
        self.rng = np.random.default_rng(seed)
        self._lock = threading.Lock()

    def get_hint(self, encoded, history, mission, ctx=None) -> Hint:
        hint = self.oracle.get_hint(encoded, history, mission, ctx)
        with self._lock:
            if self.rng.random() >= self.epsilon:
                return hint
            other = int(self.rng.integers(6))
        action = other if other < hint.primitive_action else other + 1
        return Hint(action, hint.subgoal)


class RecordedFailure(RuntimeError):
    """Replays a provider failure captured in a hint log."""


class ReplayProvider:
    """Serves hints from a hint log, keyed by (worker, episode, t).

    Entries logged as unavailable are replayed as failures so the rebuilt
    observations match the original run.
    """

    name = "replay"

    def __init__(self, path: str | Path):
        self.table = {}
        for rec in read_hint_log(path):
            key = (rec.get("worker", 0), rec["episode"], rec["t"])
            if rec.get("available", 1):
                self.table[key] = Hint(rec["hint_action"], Subgoal(rec["subgoal"]), rec.get("reasoning"))
            else:
                self.table[key] = RecordedFailure(rec.get("error") or "recorded failure")

    def get_hint(self, encoded, history, mission, ctx=None) -> Hint:
        ctx = ctx or HintContext()
        try:
            entry = self.table[(ctx.worker, ctx.episode, ctx.t)]
        except KeyError:
            raise LookupError(f"no recorded hint for worker={ctx.worker} episode={ctx.episode} t={ctx.t}")
        if isinstance(entry, RecordedFailure):
            raise entry
        return entry


class LLMProvider:
    """Queries a chat-completion endpoint and parses the Prediction block."""

    name = "llm"
    needs_text = True

    def __init__(self, client):
        self.client = client

    def get_hint(self, encoded, history, mission, ctx=None) -> Hint:
        from .llm_client import build_prompt, parse_prediction

        prompt = build_prompt(encoded, history, mission)
        pred = parse_prediction(self.client.query(prompt))
        return Hint(pred.primitive_action, Subgoal(pred.subgoal), pred.reasoning)


def schedule_due(t: int, k: int) -> bool:
    if k < 1:
        raise ConfigError("hint frequency k must be >= 1", "hints.k")
    if t < 1:
        raise UsageError("step index starts at 1")
    return t % k == 0


@dataclass
class HintEvent:
    """What `augment` did on a due step; the harness writes these to the hint log."""

    encoding_kind: str
    provider: str
    latency_ms: float
    error: str | None = None
    error_type: str | None = None


def augment(obs: Observation, t: int, k: int, provider: HintProvider | None, history: ActionHistory,
            mission: Mission, state: WorldState | None = None, encoding: str = "ascii_grid",
            ctx: HintContext | None = None) -> tuple[EnhancedObservation, HintEvent | None]:
    """Build the enhanced observation for step t.

    The provider is consulted only on due steps. Any provider exception turns
    into the neutral hint with availability 0.
    """
    due = schedule_due(t, k)
    if provider is None or not due:
        return EnhancedObservation(obs, NEUTRAL_HINT, 0), None
    from .encoders import encode

    ctx = ctx or HintContext()
    ctx.state, ctx.t = state, t
    start = time.perf_counter()
    try:
        encoded = None
        if getattr(provider, "needs_text", False) and state is not None:
            encoded = encode(encoding, state, mission)
        hint = provider.get_hint(encoded, history, mission, ctx)
    except Exception as exc:  # providers must never abort training
        log.debug("hint provider %s failed at t=%d: %s", provider.name, t, exc)
        event = HintEvent(encoding, provider.name, (time.perf_counter() - start) * 1e3, repr(exc),
                          type(exc).__name__)
        return EnhancedObservation(obs, NEUTRAL_HINT, 0), event
    event = HintEvent(encoding, provider.name, (time.perf_counter() - start) * 1e3)
    return EnhancedObservation(obs, hint, 1), event


def hint_record(episode: int, t: int, hint: Hint, event: HintEvent, worker: int = 0,
                available: int = 1) -> dict:
    return {
        "worker": worker,
        "episode": episode,
        "t": t,
        "encoding_kind": event.encoding_kind,
        "hint_action": hint.primitive_action,
        "subgoal": hint.subgoal.value,
        "provider": event.provider,
        "latency_ms": round(event.latency_ms, 3),
        "reasoning": hint.reasoning,
        "available": available,
        "error": event.error,
    }


def read_hint_log(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
