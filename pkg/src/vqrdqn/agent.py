"""Rainbow-style agent around :class:`~vqrdqn.network.QNetwork`."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from . import env as hrap
from .network import QNetwork, NetworkConfig
from .replay import (
    NStepAccumulator,
    PrioritizedReplay,
    Transition,
    double_q_bootstrap,
)

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class AgentConfig:
    gamma: float = 0.99
    n_step: int = 3
    learning_rate: float = 1e-4
    batch_size: int = 64
    target_sync_every: int = 1000
    epsilon_start: float = 1.0
    epsilon_decay: float = 0.9995
    epsilon_min: float = 0.05
    clip_norm: float = 10.0
    buffer_capacity: int = 100_000
    alpha: float = 0.6
    priority_eps: float = 1e-6
    train_every: int = 1
    warmup: int = 1000
    prioritized: bool = True
    double: bool = True
    loss: str = "td"  # "td" (squared scalar TD error) or "categorical" (C51 cross-entropy)
    importance_sampling: bool = False
    beta_start: float = 0.4
    beta_steps: int = 100_000

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.n_step < 1:
            raise ValueError("n_step must be >= 1")
        if self.epsilon_min > self.epsilon_start:
            raise ValueError("epsilon_min must not exceed epsilon_start")
        if self.loss not in ("td", "categorical"):
            raise ValueError(f"unknown loss {self.loss!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "AgentConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


@dataclass
class TrainStats:
    loss: float
    grad_norm: float
    td_abs_mean: float
    step: int


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self._tmp = {k: np.empty_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        lr_t = self.lr * np.sqrt(1 - self.b2**self.t) / (1 - self.b1**self.t)
        for k, p in params.items():
            g = grads[k].astype(p.dtype, copy=False)
            m, v, tmp = self.m[k], self.v[k], self._tmp[k]
            m *= self.b1
            np.multiply(g, 1 - self.b1, out=tmp)
            m += tmp
            v *= self.b2
            np.multiply(g, g, out=tmp)
            tmp *= 1 - self.b2
            v += tmp
            np.sqrt(v, out=tmp)
            tmp += self.eps
            np.divide(m, tmp, out=tmp)
            tmp *= lr_t
            p -= tmp


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place to global L2 norm <= max_norm; return the original norm."""
    norm = float(np.sqrt(sum(float(np.dot(g.ravel(), g.ravel())) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm


def select_action(net: QNetwork, obs: np.ndarray, epsilon: float, rng: np.random.Generator,
                  train: bool = False) -> int:
    """Epsilon-greedy over expected Q values; ties go to the lowest index."""
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(net.config.num_actions))
    return int(np.argmax(net.forward(obs, train=train).q[0]))


def project_distribution(next_dist: np.ndarray, returns: np.ndarray, discounts: np.ndarray,
                         atoms: np.ndarray) -> np.ndarray:
    """Project ``returns + discounts * atoms`` onto the fixed support."""
    v_min, v_max, n = atoms[0], atoms[-1], atoms.size
    dz = (v_max - v_min) / (n - 1)
    tz = np.clip(returns[:, None] + discounts[:, None] * atoms[None, :], v_min, v_max)
    b = (tz - v_min) / dz
    lower = np.floor(b).astype(np.int64)
    upper = np.ceil(b).astype(np.int64)
    # b on an exact atom puts all mass there
    same = lower == upper
    w_lower = np.where(same, 1.0, upper - b)
    w_upper = np.where(same, 0.0, b - lower)
    out = np.zeros_like(next_dist, dtype=np.float64)
    rows = np.repeat(np.arange(next_dist.shape[0]), n)
    np.add.at(out, (rows, lower.ravel()), (next_dist * w_lower).ravel())
    np.add.at(out, (rows, upper.ravel()), (next_dist * w_upper).ravel())
    return out


class Agent:
    """Main/target networks, replay, optimiser and exploration state.

    Separate generators drive network init, noise, action selection and replay
    sampling; all are spawned from one seed so a run is fully reproducible.
    """

    def __init__(self, net_config: NetworkConfig, config: AgentConfig, seed: int = 0):
        self.config = config
        self.net_config = net_config
        init_ss, noise_ss, act_ss, replay_ss = np.random.SeedSequence(seed).spawn(4)
        self.rngs = {
            "noise": np.random.default_rng(noise_ss),
            "act": np.random.default_rng(act_ss),
            "replay": np.random.default_rng(replay_ss),
        }
        self.main = QNetwork(net_config, np.random.default_rng(init_ss))
        if net_config.noisy:
            self.main.resample_noise(self.rngs["noise"])
        self.target = self.main.clone()
        self.buffer = PrioritizedReplay(
            config.buffer_capacity, net_config.input_dim, config.alpha, config.priority_eps,
            prioritized=config.prioritized, obs_dtype=net_config.dtype,
        )
        self.nstep = NStepAccumulator(config.n_step, config.gamma)
        self.optimizer = Adam(self.main.params, config.learning_rate)
        self.epsilon = config.epsilon_start
        self.train_steps = 0
        self.env_steps = 0

    # acting ---------------------------------------------------------------------

    def act(self, obs: np.ndarray, greedy: bool = False) -> int:
        if greedy:
            return select_action(self.main, obs, 0.0, self.rngs["act"], train=False)
        return select_action(self.main, obs, self.epsilon, self.rngs["act"],
                             train=self.net_config.noisy)

    def observe(self, tr: Transition) -> None:
        for item in self.nstep.push(tr):
            self.buffer.store(item)
        self.env_steps += 1

    @property
    def ready(self) -> bool:
        c = self.config
        return len(self.buffer) >= max(c.warmup, c.batch_size)

    def maybe_train(self) -> TrainStats | None:
        if self.ready and self.env_steps % self.config.train_every == 0:
            return self.train_step()
        return None

    def decay_epsilon(self) -> None:
        c = self.config
        self.epsilon = max(self.epsilon * c.epsilon_decay, c.epsilon_min)

    def sync_target(self) -> None:
        self.target.copy_from(self.main)

    # learning --------------------------------------------------------------------

    def td_targets(self, idx: np.ndarray) -> tuple[np.ndarray, object]:
        """n-step Double-DQN targets for buffer rows ``idx``.

        Returns the scalar targets and, for the categorical loss, the projected
        target distributions.
        """
        c, buf = self.config, self.buffer
        next_obs = buf.next_obs[idx]
        q_target_fwd = self.target.forward(next_obs, train=False)
        if c.double:
            q_main_next = self.main.forward(next_obs, train=self.net_config.noisy).q
        else:
            q_main_next = q_target_fwd.q
        discount = np.where(buf.bootstrap[idx], c.gamma**c.n_step, 0.0)
        bootstrap = double_q_bootstrap(q_main_next, q_target_fwd.q)
        targets = buf.returns[idx] + discount * bootstrap
        projected = None
        if c.loss == "categorical":
            a_star = np.argmax(q_main_next, axis=1)
            next_dist = q_target_fwd.dist[np.arange(len(idx)), a_star]
            projected = project_distribution(next_dist, buf.returns[idx], discount,
                                             self.main.atoms)
        return targets, projected

    def train_step(self) -> TrainStats:
        c, buf, net = self.config, self.buffer, self.main
        if net.config.noisy:
            net.resample_noise(self.rngs["noise"])
        idx = buf.sample(c.batch_size, self.rngs["replay"])
        targets, projected = self.td_targets(idx)
        fwd = net.forward(buf.obs[idx], train=net.config.noisy)
        rows = np.arange(len(idx))
        actions = buf.actions[idx]
        q_sa = fwd.q[rows, actions].astype(np.float64)
        delta = targets - q_sa
        if c.importance_sampling:
            frac = min(1.0, self.train_steps / max(1, c.beta_steps))
            beta = c.beta_start + frac * (1.0 - c.beta_start)
            weights = buf.importance_weights(idx, beta)
        else:
            weights = np.ones(len(idx))
        B = len(idx)
        grad_q = grad_dist = None
        if c.loss == "td":
            loss = float(np.mean(weights * delta**2))
            grad_q = np.zeros_like(fwd.q)
            grad_q[rows, actions] = -2.0 * weights * delta / B
        else:
            p = np.clip(fwd.dist[rows, actions].astype(np.float64), 1e-12, None)
            loss = float(np.mean(weights * -(projected * np.log(p)).sum(axis=1)))
            grad_dist = np.zeros_like(fwd.dist)
            grad_dist[rows, actions] = -(weights / B)[:, None] * projected / p
        if not np.isfinite(loss):
            raise TrainingError(
                f"non-finite loss {loss} at train step {self.train_steps}: "
                f"targets range [{np.min(targets)}, {np.max(targets)}], "
                f"q range [{np.min(q_sa)}, {np.max(q_sa)}]"
            )
        grads = net.backward(fwd, grad_q=grad_q, grad_dist=grad_dist)
        norm = clip_grad_norm(grads, c.clip_norm)
        self.optimizer.step(net.params, grads)
        net.invalidate()
        buf.update_priorities(idx, delta)
        self.train_steps += 1
        if self.train_steps % c.target_sync_every == 0:
            self.sync_target()
        return TrainStats(loss, norm, float(np.mean(np.abs(delta))), self.train_steps)

    # rng state ------------------------------------------------------------------------

    def rng_states(self) -> dict:
        return {k: r.bit_generator.state for k, r in self.rngs.items()}

    def set_rng_states(self, states: dict) -> None:
        for k, s in states.items():
            self.rngs[k].bit_generator.state = s


def run_episode(agent: Agent, instance_seed: int, hrap_config: hrap.HrapConfig,
                mode: hrap.ObservationMode = "augmented", learn: bool = True) -> tuple[float, list[float]]:
    """One training episode; returns the final reward and the losses of any train steps."""
    state, obs = hrap.reset(hrap_config, instance_seed, mode)
    losses: list[float] = []
    outcome = None
    while not state.done:
        a = agent.act(obs)
        outcome = hrap.step(state, a + 1)
        if learn:
            agent.observe(Transition(obs, a, outcome.reward, outcome.observation, outcome.done))
            stats = agent.maybe_train()
            if stats is not None:
                losses.append(stats.loss)
        obs = outcome.observation
    return outcome.reward, losses


def evaluate(net: QNetwork, hrap_config: hrap.HrapConfig, seeds: Sequence[int],
             mode: hrap.ObservationMode = "augmented") -> list[float]:
    """Greedy, noise-free final rewards on the given instance seeds."""
    rewards = []
    rng = np.random.default_rng(0)  # unused at epsilon 0
    for seed in seeds:
        state, obs = hrap.reset(hrap_config, seed, mode)
        outcome = None
        while not state.done:
            outcome = hrap.step(state, select_action(net, obs, 0.0, rng) + 1)
            obs = outcome.observation
        rewards.append(outcome.reward)
    return rewards
