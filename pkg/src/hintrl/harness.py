"""Training loop, evaluation and experiment grids."""
from __future__ import annotations

import csv
import json
import logging
import statistics
import time
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import environment as envmod
from .config import ExperimentConfig, HintSettings, TaskSettings
from .encoders import encode_ascii
from .environment import Env
from .errors import ConfigError, UsageError
from .hints import (
    ActionHistory, HintContext, LLMProvider, NeutralProvider, NoisyProvider, OracleProvider,
    ReplayProvider, augment, hint_record,
)
from .llm_client import LlmClient
from .planner import optimal_action, plan
from .rl import (
    Adam, NonFiniteLoss, PolicyNet, RolloutBuffer, act, feature_dim, featurize, load_checkpoint,
    ppo_update, save_checkpoint,
)

log = logging.getLogger(__name__)

TRAIN_SEED_LIMIT = 2 ** 30


def make_provider(hints: HintSettings, seed: int = 0, client: LlmClient | None = None):
    kind = hints.provider
    if kind == "none":
        return None
    if kind == "neutral":
        return NeutralProvider()
    if kind == "oracle":
        return OracleProvider()
    if kind == "noisy":
        return NoisyProvider(hints.epsilon, seed=seed)
    if kind == "replay":
        return ReplayProvider(hints.replay_path)
    if kind == "llm":
        return LLMProvider(client or LlmClient(hints.llm, seed=seed))
    raise ConfigError(f"unknown provider {kind!r}", "hints.provider")


def instance_seed(run_seed: int, worker: int, episode: int) -> int:
    """Training instance seed; always below TRAIN_SEED_LIMIT."""
    state = np.random.SeedSequence([run_seed, worker, episode]).generate_state(1)[0]
    return int(state) % TRAIN_SEED_LIMIT


@dataclass
class MetricPoint:
    frames: int
    win_rate: float
    mean_return: float
    episodes: int


@dataclass
class RunResult:
    seed: int
    out_dir: Path
    metrics: list
    frames: int
    checkpoint: Path | None = None
    hint_log: Path | None = None
    llm_budget_exhausted_at: int | None = None
    wall_seconds: float = 0.0


class _Worker:
    def __init__(self, index: int, cfg: ExperimentConfig, run_seed: int):
        self.index = index
        self.run_seed = run_seed
        self.env = Env(cfg.task.kind, cfg.task.env_config())
        self.history = ActionHistory(cfg.hints.p)
        self.episode = -1
        self.t = 0
        self.ep_return = 0.0
        self.obs = None

    def new_episode(self) -> None:
        self.episode += 1
        self.obs = self.env.reset(instance_seed(self.run_seed, self.index, self.episode))
        self.history.clear()
        self.t = 1
        self.ep_return = 0.0


def _jsonl(path: Path):
    return open(path, "w", encoding="utf-8")


def train(config: ExperimentConfig, provider=None) -> list[RunResult]:
    """Run every seed of `config`; artifacts go to <out_dir>/<name>/seed_<s>/."""
    root = Path(config.out_dir) / config.name
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "config.json", "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2)
    return [train_seed(config, seed, root / f"seed_{seed}", provider) for seed in config.seeds]


def train_seed(config: ExperimentConfig, seed: int, out_dir: str | Path, provider=None) -> RunResult:
    """One training run following the hint-augmented loop.

    Per step and worker: build the enhanced observation for step t (the
    provider is asked only when t mod k == 0), act, step the world, push the
    action into the history, store the transition. PPO updates run every
    horizon*workers frames.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump({**config.to_dict(), "seeds": [seed]}, fh, indent=2)

    ppo = config.ppo
    hints = config.hints
    if provider is None:
        provider = make_provider(hints, seed)
    dim = feature_dim(config.text)
    net = PolicyNet(dim, tuple(ppo.hidden), seed=seed, dtype=ppo.dtype)
    optimizer = Adam(net.params, ppo.lr, eps=ppo.adam_eps)
    act_rng = np.random.default_rng([seed, 1])
    update_rng = np.random.default_rng([seed, 2])
    buffer = RolloutBuffer(ppo.horizon, ppo.workers, dim, dtype=ppo.dtype)
    workers = [_Worker(i, config, seed) for i in range(ppo.workers)]
    feats = np.zeros((ppo.workers, dim), dtype=ppo.dtype)

    metrics_fh = _jsonl(out / "metrics.jsonl")
    hints_fh = _jsonl(out / "hints.jsonl") if provider is not None else None
    trace_fh = _jsonl(out / "trace.jsonl") if config.record_trace else None
    current_hints = [None] * ppo.workers
    budget_hit = None
    frames = 0

    def observe_worker(w: _Worker) -> None:
        nonlocal budget_hit
        ctx = HintContext(episode=w.episode, worker=w.index)
        eobs, event = augment(w.obs, w.t, hints.k, provider, w.history, w.env.mission,
                              state=w.env.state, encoding=hints.encoding, ctx=ctx)
        current_hints[w.index] = eobs
        featurize(eobs, config.text, out=feats[w.index])
        if event is not None:
            hints_fh.write(json.dumps(hint_record(w.episode, w.t, eobs.hint, event, w.index,
                                                  eobs.hint_available)) + "\n")
            if event.error_type == "BudgetExceeded" and budget_hit is None:
                budget_hit = frames
                log.warning("LLM request budget exhausted at frame %d; continuing with neutral hints",
                            frames)

    for w in workers:
        w.new_episode()
        observe_worker(w)

    outcomes = deque(maxlen=config.win_window)
    returns = deque(maxlen=config.win_window)
    episodes_done = 0
    metrics = []
    next_metric = config.metric_interval
    started = time.perf_counter()
    stop = False

    def emit(frames_now: int) -> MetricPoint:
        point = MetricPoint(
            frames_now,
            float(np.mean(outcomes)) if outcomes else 0.0,
            float(np.mean(returns)) if returns else 0.0,
            episodes_done,
        )
        metrics.append(point)
        metrics_fh.write(json.dumps(asdict(point)) + "\n")
        return point

    try:
        while frames < ppo.frames and not stop:
            actions, log_probs, values = act(net, feats, act_rng)
            step_feats = feats.copy()
            rewards = np.zeros(ppo.workers)
            dones = np.zeros(ppo.workers)
            for w in workers:
                a = int(actions[w.index])
                w.obs, reward, done = w.env.step(a)
                w.history.push(w.t, a)
                w.ep_return += reward
                rewards[w.index], dones[w.index] = reward, float(done)
                if trace_fh is not None:
                    h = current_hints[w.index]
                    trace_fh.write(json.dumps({
                        "worker": w.index, "episode": w.episode, "t": w.t,
                        "hint_available": h.hint_available, "hint_action": h.hint.primitive_action,
                        "subgoal": h.hint.subgoal.value, "action": a,
                        "history_len": len(w.history), "reward": reward, "done": done,
                    }) + "\n")
                if done:
                    outcomes.append(1.0 if reward > 0 else 0.0)
                    returns.append(w.ep_return)
                    episodes_done += 1
                    w.new_episode()
                else:
                    w.t += 1
                observe_worker(w)
            buffer.add(step_feats, actions, log_probs, values, rewards, dones)
            frames += ppo.workers

            if frames >= next_metric:
                point = emit(frames)
                next_metric += config.metric_interval
                if config.stop_win_rate is not None and point.win_rate >= config.stop_win_rate:
                    stop = True

            if buffer.full:
                _, _, last_values = act(net, feats, act_rng, greedy=True)
                buffer.finish(last_values, ppo.gamma, ppo.lam)
                try:
                    ppo_update(net, buffer, ppo, optimizer, update_rng)
                except NonFiniteLoss as exc:
                    with open(out / "diagnostic.json", "w", encoding="utf-8") as fh:
                        json.dump({"frames": frames, "stats": exc.stats}, fh, indent=2)
                    raise
        if not metrics or metrics[-1].frames != frames:
            emit(frames)
    finally:
        metrics_fh.close()
        if hints_fh:
            hints_fh.close()
        if trace_fh:
            trace_fh.close()

    ckpt = out / "checkpoint.npz"
    save_checkpoint(ckpt, net, {**config.to_dict(), "seeds": [seed]})
    summary = {"seed": seed, "frames": frames, "episodes": episodes_done,
               "llm_budget_exhausted_at": budget_hit,
               "wall_seconds": round(time.perf_counter() - started, 2)}
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    return RunResult(seed, out, metrics, frames, ckpt, out / "hints.jsonl" if hints_fh else None,
                     budget_hit, summary["wall_seconds"])


# --------------------------------------------------------------------------- #
# Metrics
# --------------------------------------------------------------------------- #

def load_metrics(path) -> list[MetricPoint]:
    with open(path, encoding="utf-8") as fh:
        return [MetricPoint(**json.loads(line)) for line in fh if line.strip()]


def frames_to_threshold(metrics, threshold: float) -> int | None:
    """First frame count whose win rate reaches `threshold`; None if never."""
    if not 0.0 < threshold < 1.0:
        raise UsageError("threshold must lie in (0, 1)")
    if not metrics:
        raise UsageError("no metric points")
    for point in metrics:
        frames, rate = (point.frames, point.win_rate) if isinstance(point, MetricPoint) else point
        if rate >= threshold:
            return frames
    return None


def format_frames(frames: int | None) -> str:
    if frames is None:
        return "Never"
    if frames >= 1_000_000:
        return f"{frames / 1e6:.2f}".rstrip("0").rstrip(".") + "M"
    if frames >= 1_000:
        return f"{frames / 1e3:.0f}K"
    return str(frames)


def format_speedup(baseline: int | None, frames: int | None) -> str:
    if frames is None:
        return ""
    if baseline is None:
        return "Achieved"
    ratio = baseline / frames
    return f"({ratio:.1f}".rstrip("0").rstrip(".") + "×)"


# --------------------------------------------------------------------------- #
# Evaluation
# --------------------------------------------------------------------------- #

def evaluate_policy(checkpoint, task: str | None = None, seeds=None, episodes: int = 100,
                    provider=None, config: ExperimentConfig | None = None) -> float:
    """Greedy success rate of a checkpoint on fresh evaluation seeds."""
    from .config import config_from_dict

    if episodes < 1:
        raise UsageError("episodes must be >= 1")
    if config is None:
        _, meta = load_checkpoint(checkpoint)
        config = config_from_dict(meta["config"])
    if task is not None and task != config.task.kind:
        config = replace(config, task=replace(config.task, kind=task))
    net, _ = load_checkpoint(checkpoint, expected_dim=feature_dim(config.text))
    if seeds is None:
        seeds = [config.eval_seed_base + i for i in range(episodes)]
    seeds = list(seeds)[:episodes]
    if any(s < TRAIN_SEED_LIMIT for s in seeds):
        raise ConfigError("evaluation seeds overlap the training seed range", "eval_seed_base")
    if provider is None:
        provider = make_provider(config.hints, seed=seeds[0])

    wins = 0
    env = Env(config.task.kind, config.task.env_config())
    history = ActionHistory(config.hints.p)
    for ep, s in enumerate(seeds):
        obs = env.reset(s)
        history.clear()
        t, done, reward = 1, False, 0.0
        while not done:
            eobs, _ = augment(obs, t, config.hints.k, provider, history, env.mission, state=env.state,
                              encoding=config.hints.encoding, ctx=HintContext(episode=ep))
            a, _, _ = act(net, featurize(eobs, config.text), greedy=True)
            obs, reward, done = env.step(a)
            history.push(t, a)
            t += 1
        wins += reward > 0
    return wins / len(seeds)


def evaluate_oracle(task: TaskSettings, seeds) -> float:
    """Success rate of executing planner output directly."""
    wins = 0
    seeds = list(seeds)
    for s in seeds:
        state, mission = envmod.reset(task.kind, s, task.env_config())
        for a in plan(state, mission).actions:
            state, reward, done = envmod.step(state, a, mission, task.reward_decay)
        wins += envmod.is_success(state, mission)
    return wins / len(seeds)


@dataclass
class HintQualityRecord:
    sample_id: int
    seed: int
    depth: int
    encoding_text: str
    hint_action: int | None
    subgoal: str | None
    oracle_action: int
    optimal_match: bool
    reasoning: str | None
    error: str | None = None
    state_awareness: bool | None = None
    action_reasoning: bool | None = None


def sample_state(task: TaskSettings, seed: int, rng: np.random.Generator):
    """Roll a uniform random policy to a random depth in [0, max_steps/2]."""
    cfg = task.env_config()
    state, mission = envmod.reset(task.kind, seed, cfg)
    history = ActionHistory(5)
    depth = int(rng.integers(0, cfg.steps_limit() // 2 + 1))
    taken = 0
    for i in range(depth):
        a = int(rng.integers(7))
        nxt, _, done = envmod.step(state, a, mission, cfg.reward_decay)
        if done:
            break
        state = nxt
        history.push(i + 1, a)
        taken += 1
    return state, mission, history, taken


def evaluate_hint_quality(provider, task: TaskSettings | str, n_samples: int = 30, seeds=None,
                          out_path=None, history_size: int = 5, sample_seed: int = 0):
    """Query `provider` on sampled states and judge each hint against the planner."""
    if n_samples < 1:
        raise UsageError("n_samples must be >= 1")
    if isinstance(task, str):
        task = TaskSettings(kind=task)
    if seeds is None:
        seeds = [TRAIN_SEED_LIMIT + 7919 * i for i in range(n_samples)]
    rng = np.random.default_rng(sample_seed)
    records = []
    for i, s in enumerate(list(seeds)[:n_samples]):
        state, mission, history, depth = sample_state(task, s, rng)
        trimmed = ActionHistory(history_size)
        for idx, a in history.items()[-history_size:] if history_size else []:
            trimmed.push(idx, a)
        encoded = encode_ascii(state, mission)
        oracle = optimal_action(state, mission)
        hint, error = None, None
        try:
            hint = provider.get_hint(encoded, trimmed, mission,
                                     HintContext(state=state, episode=i, t=depth + 1))
        except Exception as exc:
            error = repr(exc)
        records.append(HintQualityRecord(
            sample_id=i, seed=s, depth=depth, encoding_text=encoded.text,
            hint_action=None if hint is None else hint.primitive_action,
            subgoal=None if hint is None else hint.subgoal.value,
            oracle_action=oracle,
            optimal_match=hint is not None and hint.primitive_action == oracle,
            reasoning=None if hint is None else hint.reasoning,
            error=error,
        ))
    matches = sum(r.optimal_match for r in records)
    summary = {
        "task": task.kind,
        "provider": getattr(provider, "name", type(provider).__name__),
        "samples": len(records),
        "optimal_matches": matches,
        "optimal_match_rate": matches / len(records),
        "errors": sum(r.error is not None for r in records),
    }
    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", encoding="utf-8") as fh:
            for r in records:
                fh.write(json.dumps(asdict(r)) + "\n")
    return records, summary


# --------------------------------------------------------------------------- #
# Grids
# --------------------------------------------------------------------------- #

@dataclass
class GridRow:
    name: str
    task: str
    provider: str
    k: int
    text: bool
    final_win_rates: list = field(default_factory=list)
    thresholds: dict = field(default_factory=dict)
    error: str | None = None

    def win_summary(self) -> tuple[float, float, float] | None:
        if not self.final_win_rates:
            return None
        r = self.final_win_rates
        return float(np.mean(r)), float(min(r)), float(max(r))


def _median_frames(values) -> int | None:
    ordered = sorted(float("inf") if v is None else v for v in values)
    med = statistics.median_low(ordered) if ordered else float("inf")
    return None if med == float("inf") else int(med)


def run_grid(configs, out_dir=None, thresholds=(0.5, 0.75), evaluate: bool = True) -> list[GridRow]:
    """Train and evaluate each condition; write results.csv and results.txt."""
    if not configs:
        raise UsageError("run_grid needs at least one config")
    rows = []
    for cfg in configs:
        row = GridRow(cfg.name, cfg.task.kind, cfg.hints.provider, cfg.hints.k, cfg.text)
        try:
            results = train(cfg)
            for thr in thresholds:
                row.thresholds[thr] = _median_frames(
                    frames_to_threshold(r.metrics, thr) for r in results)
            for r in results:
                if evaluate and cfg.eval_episodes > 0:
                    row.final_win_rates.append(evaluate_policy(
                        r.checkpoint, episodes=cfg.eval_episodes, config=cfg))
                else:
                    row.final_win_rates.append(r.metrics[-1].win_rate)
        except Exception as exc:  # one failed cell must not sink the grid
            log.exception("grid cell %s failed", cfg.name)
            row.error = repr(exc)
        rows.append(row)
    if out_dir is not None:
        write_grid(rows, Path(out_dir), thresholds)
    return rows


def _baseline_row(rows):
    for row in rows:
        if row.provider == "none" and row.error is None:
            return row
    return None


def grid_table(rows, thresholds=(0.5, 0.75)) -> list[dict]:
    base = _baseline_row(rows)
    table = []
    for row in rows:
        rec = {"condition": row.name, "task": row.task, "provider": row.provider, "k": row.k,
               "text": row.text}
        summary = row.win_summary()
        if summary:
            rec["final_win_rate"] = f"{100 * summary[0]:.1f}%"
            rec["win_range"] = f"[{100 * summary[1]:.1f}%, {100 * summary[2]:.1f}%]"
        else:
            rec["final_win_rate"] = rec["win_range"] = ""
        for thr in thresholds:
            frames = row.thresholds.get(thr)
            rec[f"frames@{thr:.0%}"] = "" if row.error else format_frames(frames)
            speed = ""
            if base is not None and row is not base and not row.error:
                speed = format_speedup(base.thresholds.get(thr), frames)
            rec[f"speedup@{thr:.0%}"] = speed
        rec["error"] = row.error or ""
        table.append(rec)
    return table


def write_grid(rows, out_dir: Path, thresholds=(0.5, 0.75)) -> tuple[Path, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    table = grid_table(rows, thresholds)
    csv_path = out_dir / "results.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(table[0]))
        writer.writeheader()
        writer.writerows(table)
    txt_path = out_dir / "results.txt"
    txt_path.write_text(render_table(table), encoding="utf-8")
    return csv_path, txt_path


def render_table(table: list[dict]) -> str:
    cols = list(table[0])
    widths = {c: max(len(c), *(len(str(r[c])) for r in table)) for c in cols}
    line = "  ".join(c.ljust(widths[c]) for c in cols)
    out = [line, "-" * len(line)]
    for r in table:
        out.append("  ".join(str(r[c]).ljust(widths[c]) for c in cols))
    return "\n".join(out) + "\n"
