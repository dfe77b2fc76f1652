"""Prioritised replay and n-step return bookkeeping."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    done: bool


@dataclass(frozen=True)
class NStepTransition:
    """A transition whose reward is the discounted sum over up to n steps.

    ``bootstrap`` is False when the episode ended inside the window, in which
    case no target-network value is added.
    """

    s: np.ndarray
    a: int
    ret: float
    s_next: np.ndarray
    bootstrap: bool
    steps: int


class BufferNotReady(RuntimeError):
    pass


def discounted_sum(rewards: Sequence[float], gamma: float) -> float:
    total, weight = 0.0, 1.0
    for r in rewards:
        total += weight * r
        weight *= gamma
    return total


def n_step_return(window: Sequence[Transition], bootstrap_value: float, gamma: float, n: int) -> float:
    """``sum_k gamma^k r_{t+k} + gamma^n * bootstrap_value``.

    Rewards are summed up to the first terminal transition (at most ``n`` of
    them); the bootstrap term is dropped if a terminal occurs in the window.
    """
    rewards, terminal = [], False
    for tr in window[:n]:
        rewards.append(tr.r)
        if tr.done:
            terminal = True
            break
    ret = discounted_sum(rewards, gamma)
    if not terminal:
        ret += gamma**n * bootstrap_value
    return ret


def double_q_bootstrap(q_main_next: np.ndarray, q_target_next: np.ndarray) -> np.ndarray:
    """Target-network value of the main network's greedy action, per row."""
    a_star = np.argmax(q_main_next, axis=-1)
    return np.take_along_axis(q_target_next, a_star[..., None], axis=-1)[..., 0]


class NStepAccumulator:
    """Turns a stream of 1-step transitions into n-step transitions."""

    def __init__(self, n: int, gamma: float):
        if n < 1:
            raise ValueError("n must be >= 1")
        self.n = n
        self.gamma = gamma
        self._window: deque[Transition] = deque()

    def _emit(self) -> NStepTransition:
        window = list(self._window)[: self.n]
        rewards, terminal = [], False
        for tr in window:
            rewards.append(tr.r)
            if tr.done:
                terminal = True
                break
        last = window[len(rewards) - 1]
        first = window[0]
        return NStepTransition(first.s, first.a, discounted_sum(rewards, self.gamma),
                               last.s_next, not terminal, len(rewards))

    def push(self, tr: Transition) -> list[NStepTransition]:
        self._window.append(tr)
        out = []
        if len(self._window) == self.n:
            out.append(self._emit())
            self._window.popleft()
        if tr.done:
            while self._window:
                out.append(self._emit())
                self._window.popleft()
        return out

    def clear(self) -> None:
        self._window.clear()


def per_probabilities(deltas: np.ndarray, alpha: float, eps: float) -> np.ndarray:
    """Sampling probabilities exactly as printed: ``(|d_i|^a + eps) / (sum_j |d_j|^a + eps)``.

    These differ from a normalised distribution by a factor
    ``(S + eps) / (S + N * eps)``; :class:`PrioritizedReplay` samples
    proportionally to the numerators.
    """
    num = np.abs(np.asarray(deltas, dtype=np.float64)) ** alpha
    return (num + eps) / (num.sum() + eps)


class PrioritizedReplay:
    """Ring buffer sampling with replacement proportional to stored priorities.

    Stored priorities are ``|delta|^alpha + eps``. New items receive the
    largest priority seen so far (1.0 initially). ``alpha = 0`` together with
    ``prioritized=False`` gives uniform replay.
    """

    def __init__(self, capacity: int, obs_dim: int, alpha: float = 0.6, eps: float = 1e-6,
                 prioritized: bool = True, obs_dtype="float32"):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.alpha = alpha
        self.eps = eps
        self.prioritized = prioritized
        self.obs = np.zeros((capacity, obs_dim), dtype=obs_dtype)
        self.next_obs = np.zeros((capacity, obs_dim), dtype=obs_dtype)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.returns = np.zeros(capacity, dtype=np.float64)
        self.bootstrap = np.zeros(capacity, dtype=bool)
        self.priorities = np.zeros(capacity, dtype=np.float64)
        self.max_priority = 1.0
        self.size = 0
        self._next = 0

    def __len__(self) -> int:
        return self.size

    def store(self, tr: NStepTransition) -> int:
        i = self._next
        self.obs[i] = tr.s
        self.next_obs[i] = tr.s_next
        self.actions[i] = tr.a
        self.returns[i] = tr.ret
        self.bootstrap[i] = tr.bootstrap
        self.priorities[i] = self.max_priority
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return i

    def probabilities(self) -> np.ndarray:
        if not self.prioritized:
            return np.full(self.size, 1.0 / self.size)
        p = self.priorities[: self.size]
        return p / p.sum()

    def sample(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        """Indices of a batch drawn with replacement."""
        if self.size == 0:
            raise BufferNotReady("cannot sample from an empty buffer")
        if not self.prioritized:
            return rng.integers(0, self.size, batch_size)
        cdf = np.cumsum(self.priorities[: self.size])
        idx = np.searchsorted(cdf, rng.random(batch_size) * cdf[-1], side="right")
        return np.minimum(idx, self.size - 1)

    def importance_weights(self, indices: np.ndarray, beta: float) -> np.ndarray:
        probs = self.probabilities()[indices]
        w = (self.size * probs) ** (-beta)
        return w / w.max()

    def update_priorities(self, indices: np.ndarray, deltas: np.ndarray) -> None:
        if not self.prioritized:
            return
        new = np.abs(deltas) ** self.alpha + self.eps
        self.priorities[indices] = new
        self.max_priority = max(self.max_priority, float(new.max()))
