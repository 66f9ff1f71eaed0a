"""Prompting, querying and parsing for OpenAI-compatible chat endpoints."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import requests

from .environment import ACTION_NAMES, Action
from .errors import ConfigError

log = logging.getLogger(__name__)

PROMPT_VERSION = "v1"


class LlmError(RuntimeError):
    pass


class TransportError(LlmError):
    """Network or server failure that survived every retry."""


class AuthFailed(LlmError):
    pass


class BudgetExceeded(LlmError):
    pass


class ParseFailure(LlmError):
    pass


@dataclass
class LlmConfig:
    endpoint: str = "http://localhost:8000/v1"
    model: str = "llama3-70b"
    api_key_env: str = "OPENAI_API_KEY"
    temperature: float = 0.0
    max_tokens: int = 512
    timeout: float = 30.0
    max_retries: int = 3
    cache_enabled: bool = True
    cache_dir: str = ".llm_cache"
    max_requests: int | None = None
    max_inflight: int = 4
    backoff_base: float = 0.5
    parse_retries: int = 0

    def __post_init__(self):
        if self.timeout <= 0:
            raise ConfigError("timeout must be > 0", "hints.llm.timeout")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0", "hints.llm.max_retries")
        if self.max_inflight < 1:
            raise ConfigError("max_inflight must be >= 1", "hints.llm.max_inflight")

    @property
    def url(self) -> str:
        base = self.endpoint.rstrip("/")
        return base if base.endswith("/chat/completions") else base + "/chat/completions"


@dataclass(frozen=True)
class Prediction:
    reasoning: str
    primitive_action: int
    subgoal: str


# --------------------------------------------------------------------------- #
# Prompt
# --------------------------------------------------------------------------- #

SUBGOAL_CATALOG = (
    ("GoNextToSubgoal", "navigate next to a target object"),
    ("PickupSubgoal", "pick up a specific object"),
    ("DropSubgoal", "drop the currently carried object"),
    ("OpenSubgoal", "open a door or container"),
    ("CloseSubgoal", "close a door or container"),
    ("ExploreSubgoal", "explore the environment to locate objects"),
    ("done", "the task is completed"),
    ("none", "no specific subgoal"),
)
SUBGOAL_NAMES = tuple(name for name, _ in SUBGOAL_CATALOG)


def _system_message() -> str:
    actions = "\n".join(f"  {int(a)} = {ACTION_NAMES[a]}" for a in Action)
    subgoals = "\n".join(f"  {name}: {desc}" for name, desc in SUBGOAL_CATALOG)
    return (
        "You are a planning assistant for an agent in a 2D grid world.\n"
        "The agent acts with these primitive actions:\n"
        f"{actions}\n"
        "Move forward steps one cell in the facing direction; pickup, drop and toggle act on the "
        "cell directly in front of the agent. Toggle opens or closes a door.\n"
        "Subgoals:\n"
        f"{subgoals}\n"
        "Think step by step about where the agent is, which way it faces and where the target is, "
        "then recommend the single best next action.\n"
        "Answer in exactly this form:\n"
        "Prediction(\n"
        '    reasoning="<your step-by-step reasoning>",\n'
        "    primitive_action=<integer 0-6>,\n"
        "    subgoal=<one subgoal name>\n"
        ")"
    )


SYSTEM_MESSAGE = _system_message()


def build_prompt(encoded, history, mission) -> tuple[str, str]:
    """Return the (system, user) message pair. Deterministic in its inputs."""
    state_text = "\n".join(
        line for line in encoded.text.splitlines() if not line.startswith("MISSION:")
    ).rstrip()
    lines = history.format() if history is not None else []
    if lines:
        history_text = "Previous actions:\n" + "\n".join(lines)
    else:
        history_text = "Previous actions: (none)"
    user = (
        f"Current state:\n{state_text}\n\n{history_text}\n\n"
        f"MISSION: {mission.text}\n\nWhat should the agent do next?"
    )
    return SYSTEM_MESSAGE, user


# --------------------------------------------------------------------------- #
# Transport
# --------------------------------------------------------------------------- #

def cache_key(prompt: tuple[str, str], model: str, temperature: float) -> str:
    blob = json.dumps({"prompt": list(prompt), "model": model, "temperature": temperature},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


class LlmClient:
    """Chat-completion client with disk cache, retries and a request budget."""

    def __init__(self, config: LlmConfig, session: requests.Session | None = None, sleep=time.sleep,
                 seed: int | None = None):
        self.config = config
        self.session = session or requests.Session()
        self.sleep = sleep
        self.rng = random.Random(seed)
        self.network_requests = 0
        self.http_attempts = 0
        self.cache_hits = 0
        self._lock = threading.Lock()
        self._inflight = threading.BoundedSemaphore(config.max_inflight)

    def _cache_path(self, key: str) -> Path:
        return Path(self.config.cache_dir) / f"{key}.json"

    def _cache_read(self, key: str) -> str | None:
        path = self._cache_path(key)
        try:
            with open(path, encoding="utf-8") as fh:
                return json.load(fh)["response"]
        except (OSError, ValueError, KeyError):
            return None

    def _cache_write(self, key: str, payload: dict, content: str) -> None:
        directory = Path(self.config.cache_dir)
        directory.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump({"request": payload, "response": content}, fh)
        os.replace(tmp, self._cache_path(key))

    def payload(self, prompt: tuple[str, str]) -> dict:
        system, user = prompt
        return {
            "model": self.config.model,
            "messages": [{"role": "system", "content": system}, {"role": "user", "content": user}],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }

    def query(self, prompt: tuple[str, str], use_cache: bool = True) -> str:
        cfg = self.config
        key = cache_key(prompt, cfg.model, cfg.temperature)
        if cfg.cache_enabled and use_cache:
            hit = self._cache_read(key)
            if hit is not None:
                with self._lock:
                    self.cache_hits += 1
                return hit
        with self._lock:
            if cfg.max_requests is not None and self.network_requests >= cfg.max_requests:
                raise BudgetExceeded(f"request cap {cfg.max_requests} reached")
            self.network_requests += 1
        payload = self.payload(prompt)
        with self._inflight:
            content = self._post_with_retries(payload)
        if cfg.cache_enabled:
            self._cache_write(key, payload, content)
        return content

    def _post_with_retries(self, payload: dict) -> str:
        cfg = self.config
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(cfg.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        last = None
        for attempt in range(cfg.max_retries + 1):
            if attempt:
                delay = cfg.backoff_base * 2 ** (attempt - 1) * self.rng.uniform(0.5, 1.5)
                log.info("retrying LLM request in %.2fs (%s)", delay, last)
                self.sleep(delay)
            with self._lock:
                self.http_attempts += 1
            try:
                resp = self.session.post(cfg.url, json=payload, headers=headers, timeout=cfg.timeout)
            except (requests.Timeout, requests.ConnectionError) as exc:
                last = exc
                continue
            if resp.status_code in (401, 403):
                raise AuthFailed(f"endpoint rejected credentials ({resp.status_code})")
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise TransportError(f"unexpected HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise TransportError(f"malformed completion body: {exc}") from exc
        raise TransportError(f"gave up after {cfg.max_retries + 1} attempts: {last}")


def query(config: LlmConfig, prompt: tuple[str, str]) -> str:
    return LlmClient(config).query(prompt)


# --------------------------------------------------------------------------- #
# Parsing
# --------------------------------------------------------------------------- #

_QUOTED = r'"(?:[^"\\]|\\.)*"|\'(?:[^\'\\]|\\.)*\''
_REASONING = re.compile(r"\breasoning\s*[=:]\s*(" + _QUOTED + ")", re.S)
_OPEN_REASONING = re.compile(r"\breasoning\s*[=:]\s*[\"']")
_ACTION = re.compile(r"\bprimitive_action\s*[=:]\s*([^,\n)]*)")
_SUBGOAL = re.compile(r"\bsubgoal\s*[=:]\s*([^,\n)]*)")


def _block(raw: str) -> str:
    start = raw.rfind("Prediction(")
    if start < 0:
        raise ParseFailure("no Prediction( block")
    i = start + len("Prediction(")
    depth, quote, escaped = 1, None, False
    for j in range(i, len(raw)):
        ch = raw[j]
        if quote:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth == 0:
                return raw[i:j]
    return raw[i:]


def _unquote(value: str) -> str:
    value = value.strip()
    if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
        escapes = {"n": "\n", "t": "\t"}
        return re.sub(r"\\(.)", lambda m: escapes.get(m.group(1), m.group(1)), value[1:-1], flags=re.S)
    return value


def parse_prediction(raw) -> Prediction:
    """Extract the last Prediction(...) block. Raises ParseFailure on anything unusable."""
    if not isinstance(raw, str):
        raise ParseFailure(f"expected text, got {type(raw).__name__}")
    try:
        block = _block(raw)
        reasoning = ""
        m = _REASONING.search(block)
        if m:
            reasoning = _unquote(m.group(1))
            block = block[:m.start()] + block[m.end():]
        else:
            # an unterminated string swallows the rest of the block
            m = _OPEN_REASONING.search(block)
            if m:
                block = block[:m.start()]

        m = _ACTION.search(block)
        if not m:
            raise ParseFailure("missing primitive_action")
        token = _unquote(m.group(1)).strip()
        if not re.fullmatch(r"[+-]?\d+", token):
            raise ParseFailure(f"primitive_action {token!r} is not an integer")
        action = int(token)
        if not 0 <= action <= 6:
            raise ParseFailure(f"primitive_action {action} outside 0..6")

        m = _SUBGOAL.search(block)
        if not m:
            raise ParseFailure("missing subgoal")
        name = _unquote(m.group(1)).strip()
        if name.startswith("Subgoal."):
            name = name[len("Subgoal."):]
        lookup = {s.lower(): s for s in SUBGOAL_NAMES}
        if name.lower() not in lookup:
            raise ParseFailure(f"unknown subgoal {name!r}")
        return Prediction(reasoning, action, lookup[name.lower()])
    except ParseFailure:
        raise
    except Exception as exc:
        raise ParseFailure(f"unparseable response: {exc!r}") from exc
