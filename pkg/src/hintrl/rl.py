"""PPO actor-critic over featurized enhanced observations (numpy, hand-written backprop)."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .environment import COLORS, OBJECT_KINDS, OBS_KINDS, PICKABLE, VIEW_SIZE, WALL_SIDES
from .errors import ConfigError
from .hints import N_HINT_ACTIONS, SUBGOAL_INDEX, SUBGOALS, EnhancedObservation

N_ACTIONS = 7

# --------------------------------------------------------------------------- #
# Features
# --------------------------------------------------------------------------- #

N_KIND, N_COLOR, N_STATE = len(OBS_KINDS), len(COLORS), 3
CELL_DIM = N_KIND + N_COLOR + N_STATE
VIEW_DIM = VIEW_SIZE * VIEW_SIZE * CELL_DIM
CARRY_DIM = 1 + len(OBJECT_KINDS)
MISSION_VOCAB = (
    ("go", "to", "the", "open", "pick", "up", "on", "in", "wall", "corner", "door")
    + PICKABLE + COLORS + WALL_SIDES
    + ("top-left", "top-right", "bottom-left", "bottom-right")
)
_VOCAB_INDEX = {w: i for i, w in enumerate(MISSION_VOCAB)}
BASE_DIM = VIEW_DIM + N_HINT_ACTIONS + len(SUBGOALS) + 1 + CARRY_DIM

_CELL_BASE = np.arange(VIEW_SIZE * VIEW_SIZE) * CELL_DIM
_KIND_NAME = {i: k for i, k in enumerate(OBS_KINDS)}


def feature_dim(text: bool = False) -> int:
    return BASE_DIM + (len(MISSION_VOCAB) if text else 0)


def mission_features(text: str) -> np.ndarray:
    out = np.zeros(len(MISSION_VOCAB))
    for word in text.lower().split():
        i = _VOCAB_INDEX.get(word)
        if i is not None:
            out[i] = 1.0
    return out


def featurize(obs: EnhancedObservation, text: bool = False, out: np.ndarray | None = None) -> np.ndarray:
    """Flatten an enhanced observation into the fixed-length policy input.

    The availability bit is set only for a non-neutral hint, so a neutral hint
    encodes identically whether or not it was scheduled.
    """
    vec = np.zeros(feature_dim(text)) if out is None else out
    vec[:] = 0.0
    cells = obs.base.view.reshape(-1, 3).astype(np.int64)
    vec[_CELL_BASE + cells[:, 0]] = 1.0
    vec[_CELL_BASE + N_KIND + cells[:, 1]] = 1.0
    vec[_CELL_BASE + N_KIND + N_COLOR + cells[:, 2]] = 1.0
    off = VIEW_DIM
    vec[off + obs.hint.primitive_action] = 1.0
    off += N_HINT_ACTIONS
    vec[off + SUBGOAL_INDEX[obs.hint.subgoal]] = 1.0
    off += len(SUBGOALS)
    vec[off] = float(bool(obs.hint_available) and not obs.hint.is_neutral)
    off += 1
    carry = 0
    if obs.base.carrying is not None:
        carry = 1 + OBJECT_KINDS.index(_KIND_NAME[obs.base.carrying[0]])
    vec[off + carry] = 1.0
    off += CARRY_DIM
    if text:
        vec[off:] = mission_features(obs.base.mission_text)
    return vec


# --------------------------------------------------------------------------- #
# Config
# --------------------------------------------------------------------------- #

@dataclass
class PPOConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    lr: float = 2.5e-4
    epochs: int = 4
    minibatch: int = 256
    horizon: int = 128
    workers: int = 8
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    max_grad_norm: float = 0.5
    frames: int = 500_000
    hidden: list = field(default_factory=lambda: [128, 128])
    adam_eps: float = 1e-5
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("gamma", "lam"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]", f"ppo.{name}")
        if self.clip <= 0:
            raise ConfigError("clip must be > 0", "ppo.clip")
        if self.frames <= 0:
            raise ConfigError("frame budget must be > 0", "ppo.frames")
        for name in ("epochs", "minibatch", "horizon", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1", f"ppo.{name}")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0", "ppo.lr")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64", "ppo.dtype")


# --------------------------------------------------------------------------- #
# Network
# --------------------------------------------------------------------------- #

PARAM_NAMES = ("W1", "b1", "W2", "b2", "Wpi", "bpi", "Wv", "bv")


class PolicyNet:
    """Two tanh hidden layers shared by a 7-way policy head and a value head."""

    def __init__(self, in_dim: int, hidden=(128, 128), seed: int = 0, dtype="float64"):
        h1, h2 = hidden
        rng = np.random.default_rng(seed)
        dt = np.dtype(dtype)

        def init(fan_in, fan_out, scale):
            return (rng.standard_normal((fan_in, fan_out)) * scale / np.sqrt(fan_in)).astype(dt)

        self.in_dim = in_dim
        self.hidden = (h1, h2)
        self.params = {
            "W1": init(in_dim, h1, 1.0), "b1": np.zeros(h1, dt),
            "W2": init(h1, h2, 1.0), "b2": np.zeros(h2, dt),
            "Wpi": init(h2, N_ACTIONS, 0.01), "bpi": np.zeros(N_ACTIONS, dt),
            "Wv": init(h2, 1, 1.0), "bv": np.zeros(1, dt),
        }

    @property
    def dtype(self):
        return self.params["W1"].dtype

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def forward(self, x: np.ndarray):
        p = self.params
        h1 = np.tanh(x @ p["W1"] + p["b1"])
        h2 = np.tanh(h1 @ p["W2"] + p["b2"])
        logits = h2 @ p["Wpi"] + p["bpi"]
        values = (h2 @ p["Wv"] + p["bv"])[:, 0]
        return logits, values, (x, h1, h2)

    def backward(self, cache, dlogits: np.ndarray, dvalues: np.ndarray) -> dict:
        p = self.params
        x, h1, h2 = cache
        dh2 = dlogits @ p["Wpi"].T + dvalues[:, None] @ p["Wv"].T
        da2 = dh2 * (1.0 - h2 * h2)
        dh1 = da2 @ p["W2"].T
        da1 = dh1 * (1.0 - h1 * h1)
        return {
            "W1": x.T @ da1, "b1": da1.sum(0),
            "W2": h1.T @ da2, "b2": da2.sum(0),
            "Wpi": h2.T @ dlogits, "bpi": dlogits.sum(0),
            "Wv": h2.T @ dvalues[:, None], "bv": np.array([dvalues.sum()], dtype=dvalues.dtype),
        }


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def entropy(logits: np.ndarray) -> np.ndarray:
    logp = log_softmax(logits)
    return -(np.exp(logp) * logp).sum(-1)


def act(net: PolicyNet, features: np.ndarray, rng: np.random.Generator | None = None, greedy: bool = False):
    """Sample (or argmax) actions for a batch of feature rows.

    Returns (actions, log_probs, values); a single 1-D feature vector gives scalars.
    """
    single = features.ndim == 1
    x = np.atleast_2d(features).astype(net.dtype, copy=False)
    logits, values, _ = net.forward(x)
    logp = log_softmax(logits.astype(np.float64))
    if greedy:
        actions = logp.argmax(-1)
    else:
        cdf = np.cumsum(np.exp(logp), -1)
        u = rng.random(len(x))[:, None] * cdf[:, -1:]
        actions = np.minimum((u > cdf).sum(-1), N_ACTIONS - 1)
    chosen = logp[np.arange(len(x)), actions]
    if single:
        return int(actions[0]), float(chosen[0]), float(values[0])
    return actions, chosen, values.astype(np.float64)


# --------------------------------------------------------------------------- #
# Advantages
# --------------------------------------------------------------------------- #

def compute_gae(rewards, values, dones, gamma: float, lam: float, last_value):
    """Generalized advantage estimates over the leading (time) axis.

    `dones[t]` marks that the episode ended after step t; `last_value` is the
    bootstrap value of the state following the final step.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not rewards.shape == values.shape == dones.shape:
        raise ValueError(f"length mismatch: {rewards.shape}, {values.shape}, {dones.shape}")
    adv = np.zeros_like(rewards)
    next_value = np.asarray(last_value, dtype=np.float64)
    running = np.zeros_like(next_value)
    for t in range(len(rewards) - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


class RolloutBuffer:
    def __init__(self, horizon: int, workers: int, dim: int, dtype="float32"):
        self.horizon, self.workers = horizon, workers
        self.features = np.zeros((horizon, workers, dim), dtype=dtype)
        self.actions = np.zeros((horizon, workers), dtype=np.int64)
        self.log_probs = np.zeros((horizon, workers))
        self.values = np.zeros((horizon, workers))
        self.rewards = np.zeros((horizon, workers))
        self.dones = np.zeros((horizon, workers))
        self.advantages = None
        self.returns = None
        self.ptr = 0

    @property
    def full(self) -> bool:
        return self.ptr == self.horizon

    def add(self, features, actions, log_probs, values, rewards, dones) -> None:
        i = self.ptr
        self.features[i] = features
        self.actions[i] = actions
        self.log_probs[i] = log_probs
        self.values[i] = values
        self.rewards[i] = rewards
        self.dones[i] = dones
        self.ptr += 1

    def finish(self, last_values, gamma: float, lam: float) -> None:
        self.advantages, self.returns = compute_gae(
            self.rewards, self.values, self.dones, gamma, lam, last_values)

    def batch(self) -> dict:
        if self.advantages is None:
            raise RuntimeError("advantages not computed; call finish() first")
        n = self.horizon * self.workers
        return {
            "features": self.features.reshape(n, -1),
            "actions": self.actions.reshape(n),
            "log_probs": self.log_probs.reshape(n),
            "advantages": self.advantages.reshape(n),
            "returns": self.returns.reshape(n),
        }

    def clear(self) -> None:
        self.ptr = 0
        self.advantages = self.returns = None


# --------------------------------------------------------------------------- #
# PPO objective and update
# --------------------------------------------------------------------------- #

def ppo_loss_and_grad(net: PolicyNet, x, actions, old_log_probs, advantages, returns,
                      clip: float, value_coef: float, entropy_coef: float):
    """Clipped-surrogate PPO loss and its gradient w.r.t. every parameter."""
    n = len(x)
    logits, values, cache = net.forward(x)
    logp_all = log_softmax(logits)
    probs = np.exp(logp_all)
    rows = np.arange(n)
    logp = logp_all[rows, actions]
    ratio = np.exp(logp - old_log_probs)
    surr1 = ratio * advantages
    surr2 = np.clip(ratio, 1.0 - clip, 1.0 + clip) * advantages
    policy_loss = -np.minimum(surr1, surr2).mean()
    ent = -(probs * logp_all).sum(-1)
    value_loss = ((values - returns) ** 2).mean()
    loss = policy_loss + value_coef * value_loss - entropy_coef * ent.mean()

    g_logp = -np.where(surr1 <= surr2, surr1, 0.0) / n
    dlogits = -g_logp[:, None] * probs
    dlogits[rows, actions] += g_logp
    dlogits += (entropy_coef / n) * probs * (logp_all + ent[:, None])
    dvalues = 2.0 * value_coef * (values - returns) / n
    grads = net.backward(cache, dlogits, dvalues)
    stats = {
        "loss": float(loss),
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": float(ent.mean()),
        "clip_fraction": float((np.abs(ratio - 1.0) > clip).mean()),
    }
    return loss, grads, stats


class Adam:
    def __init__(self, params: dict, lr: float, eps: float = 1e-5, betas=(0.9, 0.999)):
        self.lr, self.eps, self.b1, self.b2 = lr, eps, betas[0], betas[1]
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params[k] -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(params[k].dtype)


class NonFiniteLoss(FloatingPointError):
    def __init__(self, message: str, stats: dict):
        super().__init__(message)
        self.stats = stats


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        for g in grads.values():
            g *= scale
    return norm


def ppo_update(net: PolicyNet, buffer: RolloutBuffer, config: PPOConfig, optimizer: Adam,
               rng: np.random.Generator) -> dict:
    data = buffer.batch()
    adv = data["advantages"]
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    n = len(adv)
    dt = net.dtype
    totals = {}
    count = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch):
            idx = order[start:start + config.minibatch]
            loss, grads, stats = ppo_loss_and_grad(
                net, data["features"][idx].astype(dt, copy=False), data["actions"][idx],
                data["log_probs"][idx].astype(dt), adv[idx].astype(dt), data["returns"][idx].astype(dt),
                config.clip, config.value_coef, config.entropy_coef)
            if not np.isfinite(loss):
                raise NonFiniteLoss("non-finite PPO loss", stats)
            stats["grad_norm"] = clip_grad_norm(grads, config.max_grad_norm)
            optimizer.step(net.params, grads)
            for key, val in stats.items():
                totals[key] = totals.get(key, 0.0) + val
            count += 1
    buffer.clear()
    return {k: v / count for k, v in totals.items()}


# --------------------------------------------------------------------------- #
# Checkpoints
# --------------------------------------------------------------------------- #

CHECKPOINT_VERSION = 1


def save_checkpoint(path, net: PolicyNet, config: dict) -> None:
    meta = {"version": CHECKPOINT_VERSION, "feature_dim": net.in_dim, "hidden": list(net.hidden),
            "config": config}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), **net.params)


def load_checkpoint(path, expected_dim: int | None = None) -> tuple[PolicyNet, dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {meta.get('version')}", "checkpoint")
        if expected_dim is not None and meta["feature_dim"] != expected_dim:
            raise ConfigError(
                f"checkpoint expects {meta['feature_dim']} features, task/config gives {expected_dim}",
                "checkpoint")
        net = PolicyNet(meta["feature_dim"], tuple(meta["hidden"]), dtype=data["W1"].dtype)
        for name in PARAM_NAMES:
            net.params[name] = data[name].copy()
    return net, meta


def ppo_config_dict(cfg: PPOConfig) -> dict:
    return asdict(cfg)
