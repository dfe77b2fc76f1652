"""Human resource allocation environment.

Officers are assigned to (event, task) slots one at a time. Slots are visited
in event order (events sorted by start time) and task index order, so an
episode lasts ``E * T`` steps and the per-step action is an officer index.

Each officer starts at the depot (row/column 0 of the transition matrix) and
visits the distinct events they serve in ascending event order. The hop into
an event is charged to that event's completion time.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Literal, Sequence

import numpy as np

ObservationMode = Literal["literal", "augmented"]

BRUTE_FORCE_LIMIT = 10**6


class ConfigError(ValueError):
    """Raised for invalid environment configuration."""


class EpisodeFinishedError(RuntimeError):
    """Raised when stepping an environment whose episode is over."""


class ActionError(ValueError):
    """Raised for out-of-range officer indices."""


class SearchSpaceTooLarge(ValueError):
    """Raised when exhaustive enumeration would exceed the guard."""


@dataclass(frozen=True)
class HrapConfig:
    num_officers: int = 3
    num_events: int = 2
    num_tasks: int = 2
    value_lo: int = 1
    value_hi: int = 20
    seed: int = 0

    def __post_init__(self):
        if min(self.num_officers, self.num_events, self.num_tasks) < 1:
            raise ConfigError(
                "num_officers, num_events and num_tasks must be >= 1, got "
                f"O={self.num_officers} E={self.num_events} T={self.num_tasks}"
            )
        if self.value_lo < 1 or self.value_hi < self.value_lo:
            raise ConfigError(
                f"need 1 <= value_lo <= value_hi, got [{self.value_lo}, {self.value_hi}]"
            )
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @property
    def num_slots(self) -> int:
        return self.num_events * self.num_tasks

    @property
    def label(self) -> str:
        return f"{self.num_officers}O-{self.num_tasks}T-{self.num_events}E"

    def with_seed(self, seed: int) -> "HrapConfig":
        return HrapConfig(
            self.num_officers, self.num_events, self.num_tasks,
            self.value_lo, self.value_hi, int(seed),
        )

    def observation_dim(self, mode: ObservationMode = "augmented") -> int:
        O, E, T = self.num_officers, self.num_events, self.num_tasks
        d = O * E * T + E + (E + 1) ** 2
        if mode == "augmented":
            d += 2 * E * T
        return d


@dataclass(frozen=True, eq=False)
class HrapInstance:
    """One sampled problem.

    Attributes:
        capability: ``(O, E, T)`` task durations in minutes.
        event_times: ``(E,)`` event start times, ascending.
        transition: ``(E+1, E+1)`` symmetric travel times, index 0 is the depot.
        config: the configuration (and seed) that produced the instance.
    """

    capability: np.ndarray
    event_times: np.ndarray
    transition: np.ndarray
    config: HrapConfig

    def __post_init__(self):
        for arr in (self.capability, self.event_times, self.transition):
            arr.setflags(write=False)

    @property
    def psi(self) -> int:
        return psi(self)

    def __eq__(self, other):
        if not isinstance(other, HrapInstance):
            return NotImplemented
        return (
            self.config == other.config
            and np.array_equal(self.capability, other.capability)
            and np.array_equal(self.event_times, other.event_times)
            and np.array_equal(self.transition, other.transition)
        )

    def to_dict(self) -> dict:
        return {
            "capability": self.capability.tolist(),
            "event_times": self.event_times.tolist(),
            "transition": self.transition.tolist(),
            "config": asdict(self.config),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HrapInstance":
        return cls(
            capability=np.asarray(data["capability"], dtype=np.int64),
            event_times=np.asarray(data["event_times"], dtype=np.int64),
            transition=np.asarray(data["transition"], dtype=np.int64),
            config=HrapConfig(**data["config"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "HrapInstance":
        return cls.from_dict(json.loads(text))


def generate_instance(config: HrapConfig) -> HrapInstance:
    """Sample capabilities, event times and a travel matrix from ``config.seed``."""
    O, E, T = config.num_officers, config.num_events, config.num_tasks
    lo, hi = config.value_lo, config.value_hi
    rng = np.random.default_rng(config.seed)
    capability = rng.integers(lo, hi + 1, size=(O, E, T), dtype=np.int64)
    event_times = np.sort(rng.integers(lo, hi + 1, size=E, dtype=np.int64))
    upper = np.triu(rng.integers(lo, hi + 1, size=(E + 1, E + 1), dtype=np.int64), k=1)
    transition = upper + upper.T
    return HrapInstance(capability, event_times, transition, config)


def psi(instance: HrapInstance) -> int:
    """Upper bound on the makespan, used to normalise rewards into [-1, 0]."""
    slots = instance.config.num_slots
    return int(instance.capability.max()) * slots + int(instance.transition.max()) * slots


def _event_totals(instance: HrapInstance, assignment: Sequence[int]) -> np.ndarray:
    cfg = instance.config
    T = cfg.num_tasks
    totals = np.zeros(cfg.num_events, dtype=np.int64)
    served: dict[int, set[int]] = {}
    for k, officer in enumerate(assignment):
        if officer == 0:
            continue
        e, t = divmod(k, T)
        totals[e] += instance.capability[officer - 1, e, t]
        served.setdefault(officer, set()).add(e)
    for events in served.values():
        prev = 0
        for e in sorted(events):
            totals[e] += instance.transition[prev, e + 1]
            prev = e + 1
    return totals


def partial_makespan(instance: HrapInstance, assignment: Sequence[int]) -> int:
    """Makespan counting only assigned slots (0 marks an unassigned slot)."""
    return int(_event_totals(instance, assignment).max())


def makespan(instance: HrapInstance, assignment: Sequence[int]) -> int:
    """Completion time of the slowest event for a full assignment.

    ``assignment`` holds one officer index in ``1..O`` per slot, slot ``k``
    being event ``k // T`` and task ``k % T``.
    """
    cfg = instance.config
    assignment = list(assignment)
    if len(assignment) != cfg.num_slots:
        raise ValueError(f"assignment must have {cfg.num_slots} slots, got {len(assignment)}")
    if any(not 1 <= int(o) <= cfg.num_officers for o in assignment):
        raise ValueError("makespan needs a full assignment with officers in 1..O")
    return partial_makespan(instance, assignment)


def batch_makespans(instance: HrapInstance, assignments: np.ndarray) -> np.ndarray:
    """Vectorised makespan over an ``(N, E*T)`` array of full assignments."""
    cfg = instance.config
    O, E, T = cfg.num_officers, cfg.num_events, cfg.num_tasks
    a = np.asarray(assignments)
    n = a.shape[0]
    totals = np.zeros((n, E), dtype=np.int64)
    for k in range(E * T):
        e, t = divmod(k, T)
        totals[:, e] += instance.capability[a[:, k] - 1, e, t]
    by_event = a.reshape(n, E, T)
    for officer in range(1, O + 1):
        serves = (by_event == officer).any(axis=2)
        prev = np.zeros(n, dtype=np.int64)
        for e in range(E):
            hit = serves[:, e]
            totals[hit, e] += instance.transition[prev[hit], e + 1]
            prev[hit] = e + 1
    return totals.max(axis=1)


def brute_force_best(instance: HrapInstance) -> tuple[tuple[int, ...], int]:
    """Exhaustive search; returns the lexicographically smallest optimum."""
    cfg = instance.config
    O, slots = cfg.num_officers, cfg.num_slots
    if O**slots > BRUTE_FORCE_LIMIT:
        raise SearchSpaceTooLarge(
            f"{O}^{slots} assignments exceed the enumeration limit of {BRUTE_FORCE_LIMIT}"
        )
    # first slot is the most significant digit, so row order is lexicographic
    codes = np.arange(O**slots, dtype=np.int64)
    powers = O ** np.arange(slots - 1, -1, -1, dtype=np.int64)
    assignments = (codes[:, None] // powers) % O + 1
    spans = batch_makespans(instance, assignments)
    best = int(np.argmin(spans))
    return tuple(int(o) for o in assignments[best]), int(spans[best])


@dataclass
class AssignmentState:
    instance: HrapInstance
    mode: ObservationMode = "augmented"
    slot_index: int = 0
    assignment: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.assignment is None:
            self.assignment = np.zeros(self.instance.config.num_slots, dtype=np.int64)

    @property
    def done(self) -> bool:
        return self.slot_index == self.instance.config.num_slots

    @property
    def current_slot(self) -> tuple[int, int]:
        """(event, task) of the next slot, both 0-based."""
        return divmod(self.slot_index, self.instance.config.num_tasks)


@dataclass(frozen=True)
class StepOutcome:
    observation: np.ndarray
    reward: float
    done: bool


def encode_state(state: AssignmentState, mode: ObservationMode | None = None) -> np.ndarray:
    """Observation vector; integer features are scaled by ``1 / value_hi``."""
    mode = mode or state.mode
    inst = state.instance
    cfg = inst.config
    scale = 1.0 / cfg.value_hi
    parts = [
        inst.capability.ravel() * scale,
        inst.event_times * scale,
        inst.transition.ravel() * scale,
    ]
    if mode == "augmented":
        onehot = np.zeros(cfg.num_slots)
        if not state.done:
            onehot[state.slot_index] = 1.0
        parts += [onehot, state.assignment / cfg.num_officers]
    elif mode != "literal":
        raise ValueError(f"unknown observation mode {mode!r}")
    return np.concatenate(parts).astype(np.float64)


def start(instance: HrapInstance, mode: ObservationMode = "augmented") -> tuple[AssignmentState, np.ndarray]:
    """Begin an episode on a given instance."""
    state = AssignmentState(instance, mode)
    return state, encode_state(state)


def reset(
    config: HrapConfig, episode_seed: int, mode: ObservationMode = "augmented"
) -> tuple[AssignmentState, np.ndarray]:
    return start(generate_instance(config.with_seed(episode_seed)), mode)


def step(state: AssignmentState, officer: int) -> StepOutcome:
    """Assign ``officer`` (1-based) to the current slot."""
    if state.done:
        raise EpisodeFinishedError("episode already finished; call reset()")
    cfg = state.instance.config
    if not 1 <= int(officer) <= cfg.num_officers:
        raise ActionError(f"officer must be in 1..{cfg.num_officers}, got {officer}")
    state.assignment[state.slot_index] = int(officer)
    state.slot_index += 1
    reward = -partial_makespan(state.instance, state.assignment) / psi(state.instance)
    return StepOutcome(encode_state(state), float(reward), state.done)


# -- seed streams -----------------------------------------------------------

_STREAMS = {"train": 0, "eval": 1}


def episode_seeds(master_seed: int, count: int, stream: str = "train") -> list[int]:
    """Per-episode instance seeds derived from a master seed.

    Training seeds are even and evaluation seeds odd, so the two streams never
    overlap for any master seed.
    """
    tag = _STREAMS[stream]
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(tag,))
    raw = ss.generate_state(max(count, 1), dtype=np.uint64)[:count]
    return [int((int(s) & ~1) | tag) for s in raw]


def rollout_random(
    config: HrapConfig, seeds: Iterable[int], rng: np.random.Generator,
    mode: ObservationMode = "augmented",
) -> list[float]:
    """Final-step rewards of uniformly random policies, one per seed."""
    rewards = []
    for seed in seeds:
        state, _ = reset(config, seed, mode)
        outcome = None
        while not state.done:
            outcome = step(state, int(rng.integers(1, config.num_officers + 1)))
        rewards.append(outcome.reward)
    return rewards


def random_baseline(config: HrapConfig, episodes: int, seed: int) -> float:
    """Mean final reward of random assignment over fresh instances."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rng = np.random.default_rng(seed)
    return float(np.mean(rollout_random(config, episode_seeds(seed, episodes, "eval"), rng)))


def enumerate_assignments(config: HrapConfig) -> Iterable[tuple[int, ...]]:
    return itertools.product(range(1, config.num_officers + 1), repeat=config.num_slots)
