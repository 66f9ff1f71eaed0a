"""Command-line entry point: train, grid, eval-hints, rollout, plot."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import shlex
import sys
from pathlib import Path

from . import harness
from .config import load_config
from .encoders import encode_ascii
from .environment import ACTION_NAMES, TASKS, Action, Env
from .errors import ConfigError, UsageError
from .hints import ActionHistory, HintContext, augment, hint_record
from .planner import optimal_action
from .plot import read_series, render_svg
from .rl import act, feature_dim, featurize, load_checkpoint

log = logging.getLogger("hintrl")

DEFAULT_CONDITIONS = (
    "baseline hints.provider=none",
    "oracle_f5 hints.provider=oracle hints.k=5",
    "oracle_f10 hints.provider=oracle hints.k=10",
)


def _task_name(text: str) -> str:
    for name in TASKS:
        if name.lower() == text.lower():
            return name
    raise ConfigError(f"unknown task {text!r}; expected one of {TASKS}", "task.kind")


def _config(args, extra=()):
    return load_config(args.config, list(extra) + list(args.set or []))


def cmd_train(args) -> int:
    overrides = [f"out_dir={args.out}"] if args.out else []
    cfg = _config(args, overrides)
    for r in harness.train(cfg):
        last = r.metrics[-1]
        print(f"seed {r.seed}: {r.frames} frames, trailing win rate {last.win_rate:.3f} -> {r.out_dir}")
        if r.llm_budget_exhausted_at is not None:
            print(f"  LLM budget exhausted at frame {r.llm_budget_exhausted_at}")
    return 0


def _parse_condition(text: str):
    parts = shlex.split(text)
    if not parts or "=" in parts[0]:
        raise ConfigError(f"condition {text!r} must start with a name", "condition")
    return parts[0], parts[1:]


def cmd_grid(args) -> int:
    base = list(args.set or [])
    conditions = args.condition or list(DEFAULT_CONDITIONS)
    configs = []
    out_dir = args.out
    for cond in conditions:
        name, overrides = _parse_condition(cond)
        cfg = load_config(args.config, base + overrides + [f"name={name}"])
        if out_dir is None:
            out_dir = str(Path(cfg.out_dir) / "grid")
        configs.append(dataclasses.replace(cfg, out_dir=str(Path(out_dir))))
    rows = harness.run_grid(configs, out_dir)
    print(harness.render_table(harness.grid_table(rows)), end="")
    return 1 if any(r.error for r in rows) else 0


def cmd_eval_hints(args) -> int:
    cfg = _config(args)
    task = cfg.task if args.task is None else dataclasses.replace(cfg.task, kind=_task_name(args.task))
    provider = harness.make_provider(cfg.hints, seed=args.sample_seed)
    if provider is None:
        raise ConfigError("eval-hints needs a hint provider", "hints.provider")
    out = Path(args.out) if args.out else Path(cfg.out_dir) / "quality.jsonl"
    _, summary = harness.evaluate_hint_quality(provider, task, args.samples, out_path=out,
                                               history_size=cfg.hints.p, sample_seed=args.sample_seed)
    summary["records"] = str(out)
    print(json.dumps(summary, indent=2))
    return 0


def cmd_rollout(args) -> int:
    overrides = []
    if args.task:
        overrides.append(f"task.kind={_task_name(args.task)}")
    cfg = _config(args, overrides)
    net = None
    if args.policy == "checkpoint":
        if not args.checkpoint:
            raise ConfigError("--policy checkpoint needs --checkpoint", "checkpoint")
        net, _ = load_checkpoint(args.checkpoint, expected_dim=feature_dim(cfg.text))
    provider = harness.make_provider(cfg.hints, seed=args.seed)
    env = Env(cfg.task.kind, cfg.task.env_config())
    obs = env.reset(args.seed)
    history = ActionHistory(cfg.hints.p)
    record = open(args.record, "w", encoding="utf-8") if args.record else None
    t, done, reward = 1, False, 0.0
    try:
        print(f"task {cfg.task.kind}, seed {args.seed}, mission: {env.mission.text}")
        while not done:
            eobs, event = augment(obs, t, cfg.hints.k, provider, history, env.mission, state=env.state,
                                  encoding=cfg.hints.encoding, ctx=HintContext(episode=0, t=t))
            if net is None:
                a = int(optimal_action(env.state, env.mission))
            else:
                a, _, _ = act(net, featurize(eobs, cfg.text), greedy=True)
            if not args.quiet:
                print(f"\n--- step {t} ---")
                print(encode_ascii(env.state, env.mission).text)
                hint = "-" if not eobs.hint_available else \
                    f"{eobs.hint.primitive_action} ({eobs.hint.subgoal.value})"
                print(f"action: {a} ({ACTION_NAMES[Action(a)]})  hint: {hint}")
            obs, reward, done = env.step(a)
            history.push(t, a)
            if record is not None:
                rec = {"worker": 0, "episode": 0, "t": t, "encoding_kind": cfg.hints.encoding,
                       "hint_action": eobs.hint.primitive_action, "subgoal": eobs.hint.subgoal.value,
                       "provider": cfg.hints.provider, "latency_ms": 0.0, "reasoning": eobs.hint.reasoning,
                       "available": eobs.hint_available, "error": None}
                if event is not None:
                    rec.update(hint_record(0, t, eobs.hint, event, 0, eobs.hint_available))
                rec.update({"action": a, "reward": reward, "done": done})
                record.write(json.dumps(rec) + "\n")
            t += 1
    finally:
        if record is not None:
            record.close()
    steps = t - 1
    if reward > 0:
        print(f"SUCCESS in {steps} steps (reward {reward:.3f})")
        return 0
    print(f"FAILURE after {steps} steps")
    return 0


def cmd_plot(args) -> int:
    series, bad = [], 0
    for path in args.metrics:
        s = read_series(path)
        if not s.points:
            raise UsageError(f"{path}: no usable metric points")
        bad += s.bad_lines
        series.append(s)
    if args.names:
        if len(args.names) != len(series):
            raise UsageError("--names must match the number of metrics files")
        for s, n in zip(series, args.names):
            s.name = n
    svg = render_svg(series, args.budget, args.title)
    Path(args.out).write_text(svg, encoding="utf-8")
    print(f"wrote {args.out}: {len(series)} series, {bad} malformed line(s) skipped")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hintrl", description=__doc__)
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dot-path override, e.g. hints.k=5 (repeatable)")
        return p

    p = with_config(sub.add_parser("train", help="train one config over its seeds"))
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.set_defaults(func=cmd_train)

    p = with_config(sub.add_parser("grid", help="train and compare several conditions"))
    p.add_argument("--condition", action="append",
                   help='"NAME key=value ..." (repeatable); default: baseline, oracle k=5, oracle k=10')
    p.add_argument("--out", help="directory for results.csv / results.txt")
    p.set_defaults(func=cmd_grid)

    p = with_config(sub.add_parser("eval-hints", help="score a provider against the planner"))
    p.add_argument("--task")
    p.add_argument("--samples", type=int, default=30)
    p.add_argument("--sample-seed", type=int, default=0)
    p.add_argument("--out", help="quality.jsonl path")
    p.set_defaults(func=cmd_eval_hints)

    p = with_config(sub.add_parser("rollout", help="render one episode"))
    p.add_argument("--task")
    p.add_argument("--policy", choices=("oracle", "checkpoint"), default=None)
    p.add_argument("--checkpoint")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--record", help="write a per-step hint/action log (replayable)")
    p.add_argument("--quiet", action="store_true", help="print only the outcome line")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("plot", help="learning curves as SVG")
    p.add_argument("metrics", nargs="+")
    p.add_argument("-o", "--out", default="curves.svg")
    p.add_argument("--budget", type=float, help="x-axis upper bound (default: largest frame count)")
    p.add_argument("--names", nargs="+")
    p.add_argument("--title", default="Win rate")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "policy", "unset") is None:
        args.policy = "checkpoint" if args.checkpoint else "oracle"
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("command failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
