"""Seeded training, evaluation, topology ablation and circuit-metric runs.

Every run directory contains ``config.snapshot`` (an INI file that
reproduces the run), ``curve.csv``, ``checkpoint.npz`` and ``eval.json``.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import env as hrap
from .agent import Agent, AgentConfig, evaluate, run_episode
from .circuit import Topology
from .metrics import report_csv, topology_report
from .network import NetworkConfig, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

VARIANTS = ("random", "ddqn", "rainbow", "vqr")
VARIANT_LABELS = {"random": "Baseline", "ddqn": "DDQN", "rainbow": "Rainbow DQN", "vqr": "VQR-DQN"}
CURVE_COLUMNS = ("episode", "train_reward", "epsilon", "loss_mean", "steps")
CHECKPOINT_WINDOW = 100

CURVE_FILE = "curve.csv"
EVAL_FILE = "eval.json"
CHECKPOINT_FILE = "checkpoint.npz"
SNAPSHOT_FILE = "config.snapshot"
RUN_FILE = "run.json"


class SchemaError(ValueError):
    """Checkpoint or config file does not match the expected experiment."""


# -- configuration ------------------------------------------------------------

# network fields a config file may set; input_dim/num_actions follow from hrap
_NETWORK_KEYS = tuple(f.name for f in fields(NetworkConfig)
                      if f.name not in ("input_dim", "num_actions"))


@dataclass
class ExperimentConfig:
    hrap: hrap.HrapConfig = field(default_factory=hrap.HrapConfig)
    agent_variant: str = "vqr"
    agent: AgentConfig = field(default_factory=AgentConfig)
    network: dict = field(default_factory=dict)
    episodes: int = 5000
    eval_episodes: int = 200
    master_seed: int = 0
    output_dir: str = "runs/default"
    observation_mode: str = "augmented"

    def __post_init__(self):
        if self.agent_variant not in VARIANTS:
            raise hrap.ConfigError(f"variant must be one of {VARIANTS}, got {self.agent_variant!r}")
        if self.episodes < 1 or self.eval_episodes < 1:
            raise hrap.ConfigError("episodes and eval_episodes must be >= 1")
        unknown = set(self.network) - set(_NETWORK_KEYS)
        if unknown:
            raise hrap.ConfigError(f"unknown network settings: {sorted(unknown)}")
        if self.agent_variant == "ddqn":
            a, n = self.agent, self.network_config()
            if a.prioritized or a.n_step != 1 or n.noisy or n.head != "scalar" or n.feature != "none":
                raise hrap.ConfigError(
                    "ddqn needs uniform replay, n_step=1 and a plain scalar-head network; "
                    "build it with make_experiment()"
                )

    def network_config(self) -> NetworkConfig:
        net = dict(self.network)
        v_min = net.get("v_min", "auto")
        if v_min == "auto":
            net["v_min"] = default_v_min(self.hrap)
        return NetworkConfig(
            input_dim=self.hrap.observation_dim(self.observation_mode),
            num_actions=self.hrap.num_officers,
            **net,
        )

    def with_overrides(self, **kwargs) -> "ExperimentConfig":
        return replace(self, **kwargs)

    def with_network(self, **kwargs) -> "ExperimentConfig":
        return replace(self, network={**self.network, **kwargs})

    def to_dict(self) -> dict:
        return {
            "experiment": {
                "agent_variant": self.agent_variant,
                "episodes": self.episodes,
                "eval_episodes": self.eval_episodes,
                "master_seed": self.master_seed,
                "output_dir": self.output_dir,
                "observation_mode": self.observation_mode,
            },
            "hrap": {k: v for k, v in asdict(self.hrap).items() if k != "seed"},
            "agent": self.agent.to_dict(),
            "network": {k: _plain(v) for k, v in self.network.items()},
        }

    def config_hash(self) -> str:
        return hashlib.sha256(to_ini(self).encode()).hexdigest()[:16]


def default_v_min(config: hrap.HrapConfig) -> float:
    """Lowest possible (undiscounted) episode return: every step costs at most 1."""
    return -float(config.num_slots)


def _plain(v):
    if isinstance(v, Topology):
        return v.value
    if isinstance(v, tuple):
        return list(v)
    return v


def make_experiment(variant: str = "vqr", hrap_config: hrap.HrapConfig | None = None,
                    agent: AgentConfig | None = None, network: dict | None = None,
                    **kwargs) -> ExperimentConfig:
    """Experiment config with the variant's required agent/network settings applied.

    ``ddqn`` uses a plain scalar-head network with uniform 1-step replay;
    ``rainbow`` swaps the circuit for a width-``n_qubits`` tanh layer.
    """
    agent = agent or AgentConfig()
    network = dict(network or {})
    network.setdefault("dtype", "float32")
    if variant == "ddqn":
        agent = replace(agent, prioritized=False, n_step=1, loss="td")
        network.update(feature="none", head="scalar", noisy=False)
    elif variant == "rainbow":
        network.update(feature="classical")
    elif variant == "vqr":
        network.update(feature="quantum")
    return ExperimentConfig(hrap=hrap_config or hrap.HrapConfig(), agent_variant=variant,
                            agent=agent, network=network, **kwargs)


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_ini(config: ExperimentConfig) -> str:
    """Render the config as INI text; ``from_ini`` reads it back unchanged."""
    lines = []
    for section, values in config.to_dict().items():
        lines.append(f"[{section}]")
        lines += [f"{k} = {_format(v)}" for k, v in values.items()]
        lines.append("")
    return "\n".join(lines)


def _coerce(text: str, like):
    text = text.strip()
    if isinstance(like, bool):
        low = text.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise hrap.ConfigError(f"expected a boolean, got {text!r}")
        return low in ("true", "1", "yes")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if isinstance(like, tuple):
        return tuple(int(x) for x in text.split(",") if x.strip())
    return text


_NETWORK_DEFAULTS = {f.name: f.default for f in fields(NetworkConfig) if f.name in _NETWORK_KEYS}


def from_ini(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise hrap.ConfigError(f"malformed config file: {exc}") from exc
    exp = dict(parser["experiment"]) if parser.has_section("experiment") else {}
    defaults = ExperimentConfig.__dataclass_fields__
    kwargs = {}
    for key, value in exp.items():
        if key not in defaults or key in ("hrap", "agent", "network"):
            raise hrap.ConfigError(f"unknown [experiment] key {key!r}")
        default = defaults[key].default
        kwargs[key] = _coerce(value, default)

    hrap_kwargs = {}
    if parser.has_section("hrap"):
        base = hrap.HrapConfig()
        for key, value in parser["hrap"].items():
            if not hasattr(base, key):
                raise hrap.ConfigError(f"unknown [hrap] key {key!r}")
            hrap_kwargs[key] = _coerce(value, getattr(base, key))
    agent_kwargs = {}
    if parser.has_section("agent"):
        base = AgentConfig()
        for key, value in parser["agent"].items():
            if not hasattr(base, key):
                raise hrap.ConfigError(f"unknown [agent] key {key!r}")
            agent_kwargs[key] = _coerce(value, getattr(base, key))
    network = {}
    if parser.has_section("network"):
        for key, value in parser["network"].items():
            if key not in _NETWORK_DEFAULTS:
                raise hrap.ConfigError(f"unknown [network] key {key!r}")
            default = _NETWORK_DEFAULTS[key]
            if key == "v_min" and value.strip() == "auto":
                network[key] = "auto"
            elif key == "topology":
                network[key] = Topology.parse(value).value
            else:
                network[key] = _coerce(value, default)
    return ExperimentConfig(hrap=hrap.HrapConfig(**hrap_kwargs), agent=AgentConfig(**agent_kwargs),
                            network=network, **kwargs)


def load_config(path) -> ExperimentConfig:
    return from_ini(Path(path).read_text())


# -- runs -------------------------------------------------------------------------


@dataclass
class RunRecord:
    config: dict
    curve_path: str
    checkpoint_path: str
    eval_path: str
    eval_summary: dict
    wall_clock: float
    best_episode: int
    best_moving_average: float


def baseline_rng(master_seed: int) -> np.random.Generator:
    """Action stream of the random policy; shared by the baseline and the random variant."""
    return np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=(7,)))


def _format_float(x: float) -> str:
    return "" if x is None or not np.isfinite(x) else repr(float(x))


def run_train(config: ExperimentConfig, evaluate_after: bool = True) -> RunRecord:
    """Train for ``config.episodes`` episodes and write all run artifacts."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / SNAPSHOT_FILE).write_text(to_ini(config))
    started = time.perf_counter()
    cfg = config.hrap
    seeds = hrap.episode_seeds(config.master_seed, config.episodes, "train")
    window: list[float] = []
    best_avg, best_episode, best_state = -np.inf, 0, None
    min_window = min(CHECKPOINT_WINDOW, config.episodes)

    agent = None
    rng = None
    if config.agent_variant == "random":
        rng = baseline_rng(config.master_seed)
    else:
        agent = Agent(config.network_config(), config.agent, seed=config.master_seed)

    curve_path = out / CURVE_FILE
    steps = 0
    try:
        with open(curve_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CURVE_COLUMNS)
            for ep, seed in enumerate(seeds, start=1):
                if agent is None:
                    reward = hrap.rollout_random(cfg, [seed], rng, config.observation_mode)[0]
                    losses, epsilon = [], 1.0
                    steps += cfg.num_slots
                else:
                    epsilon = agent.epsilon
                    reward, losses = run_episode(agent, seed, cfg, config.observation_mode)
                    agent.decay_epsilon()
                    steps = agent.env_steps
                loss_mean = float(np.mean(losses)) if losses else None
                writer.writerow([ep, _format_float(reward), _format_float(epsilon),
                                 _format_float(loss_mean), steps])
                fh.flush()
                window.append(reward)
                if len(window) > CHECKPOINT_WINDOW:
                    window.pop(0)
                if ep >= min_window:
                    avg = float(np.mean(window))
                    if avg > best_avg:
                        best_avg, best_episode = avg, ep
                        if agent is not None:
                            best_state = (agent.main.state_arrays(), agent.rng_states(),
                                          agent.epsilon)
    except OSError as exc:
        (out / "FAILED").write_text(f"run aborted: {exc}\n")
        raise

    ckpt_path = out / CHECKPOINT_FILE
    meta = {"experiment": config.to_dict(), "variant": config.agent_variant,
            "best_episode": best_episode, "best_moving_average": best_avg,
            "checkpoint_rule": f"best {CHECKPOINT_WINDOW}-episode moving average of final train reward"}
    if agent is None:
        with open(ckpt_path, "wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)))
    else:
        arrays, rng_states, eps = best_state
        net = agent.main.clone()
        net.load_arrays(arrays)
        meta.update(rng_states=rng_states, epsilon=eps)
        save_checkpoint(ckpt_path, net, meta)

    summary = run_eval(ckpt_path, config) if evaluate_after else {}
    record = RunRecord(
        config=config.to_dict(),
        curve_path=str(curve_path),
        checkpoint_path=str(ckpt_path),
        eval_path=str(out / EVAL_FILE) if evaluate_after else "",
        eval_summary={k: v for k, v in summary.items() if not k.startswith("per_episode")},
        wall_clock=time.perf_counter() - started,
        best_episode=best_episode,
        best_moving_average=best_avg,
    )
    (out / RUN_FILE).write_text(json.dumps(asdict(record), indent=2))
    return record


def reduction_percent(agent_mean: float, baseline_mean: float) -> float:
    """Normalised makespan reduction of an agent relative to the baseline, in percent."""
    return (agent_mean - baseline_mean) / abs(baseline_mean) * 100.0


def _read_checkpoint_meta(path) -> dict:
    with np.load(path, allow_pickle=False) as data:
        return json.loads(str(data["meta"]))


def run_eval(checkpoint, config: ExperimentConfig, write: bool = True) -> dict:
    """Greedy evaluation on the held-out seed stream against the random baseline."""
    meta = _read_checkpoint_meta(checkpoint)
    saved = meta.get("experiment", {})
    expected = config.to_dict()
    for section in ("hrap", "network"):
        if saved.get(section) != expected[section]:
            raise SchemaError(
                f"checkpoint [{section}] {saved.get(section)} does not match config {expected[section]}"
            )
    if meta.get("variant") != config.agent_variant:
        raise SchemaError(f"checkpoint variant {meta.get('variant')!r} != {config.agent_variant!r}")

    cfg = config.hrap
    seeds = hrap.episode_seeds(config.master_seed, config.eval_episodes, "eval")
    baseline = hrap.rollout_random(cfg, seeds, baseline_rng(config.master_seed),
                                   config.observation_mode)
    if config.agent_variant == "random":
        rewards = hrap.rollout_random(cfg, seeds, baseline_rng(config.master_seed),
                                      config.observation_mode)
    else:
        net, _ = load_checkpoint(checkpoint)
        if net.config.to_dict() != config.network_config().to_dict():
            raise SchemaError("checkpoint network architecture does not match config")
        rewards = evaluate(net, cfg, seeds, config.observation_mode)
    mean = float(np.mean(rewards))
    base_mean = float(np.mean(baseline))
    report = {
        "config": expected,
        "seed": config.master_seed,
        "episodes": config.eval_episodes,
        "mean_reward": mean,
        "per_episode_rewards": [float(r) for r in rewards],
        "baseline_mean_reward": base_mean,
        "per_episode_baseline_rewards": [float(r) for r in baseline],
        "reduction_percent": reduction_percent(mean, base_mean),
        "checkpoint": str(checkpoint),
        "best_episode": meta.get("best_episode"),
    }
    if write:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / EVAL_FILE).write_text(json.dumps(report, indent=2))
    return report


def run_seeds(config: ExperimentConfig, seeds: Sequence[int]) -> list[RunRecord]:
    records = []
    for seed in seeds:
        sub = config.with_overrides(master_seed=int(seed),
                                    output_dir=os.path.join(config.output_dir, f"seed{seed}"))
        records.append(run_train(sub))
    return records


ABLATION_COLUMNS = ("algorithm", "topology", "mean_reward", "reduction_percent",
                    "per_seed_rewards", "seeds", "episodes", "config_hash")


def run_ablation(topologies: Iterable, config: ExperimentConfig, seeds: Sequence[int] = (0,)) -> list[dict]:
    """Train one VQR agent per topology and seed; shared seeds keep instances identical.

    Returns rows laid out like the topology table: a baseline row, then one
    row per topology with rewards averaged over ``seeds``.
    """
    topologies = [Topology.parse(t) for t in topologies]
    base_out = Path(config.output_dir)
    rows, baseline_means = [], {}
    for topo in topologies:
        arm = config.with_network(topology=topo.value).with_overrides(
            agent_variant="vqr", output_dir=str(base_out / topo.value))
        records = run_seeds(arm, seeds)
        means = [r.eval_summary["mean_reward"] for r in records]
        for seed, r in zip(seeds, records):
            baseline_means[seed] = r.eval_summary["baseline_mean_reward"]
        rows.append({
            "algorithm": f"VQR-DQN + {topo.display}",
            "topology": topo.value,
            "mean_reward": float(np.mean(means)),
            "per_seed_rewards": means,
            "seeds": list(seeds),
            "episodes": config.episodes,
            "config_hash": arm.config_hash(),
        })
    base = float(np.mean([baseline_means[s] for s in seeds]))
    for row in rows:
        row["reduction_percent"] = reduction_percent(row["mean_reward"], base)
    table = [{"algorithm": "Baseline", "topology": "", "mean_reward": base,
              "reduction_percent": 0.0, "per_seed_rewards": [baseline_means[s] for s in seeds],
              "seeds": list(seeds), "episodes": config.episodes, "config_hash": ""}] + rows
    base_out.mkdir(parents=True, exist_ok=True)
    with open(base_out / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in table:
            writer.writerow({**row,
                             "per_seed_rewards": " ".join(repr(x) for x in row["per_seed_rewards"]),
                             "seeds": " ".join(str(s) for s in row["seeds"])})
    (base_out / "ablation.json").write_text(json.dumps(table, indent=2))
    return table


def format_table(rows: list[dict]) -> str:
    lines = [f"{'Algorithm':<24} Rewards"]
    for row in rows:
        pct = "" if row["algorithm"] == "Baseline" else f" ({row['reduction_percent']:+.1f}%)"
        lines.append(f"{row['algorithm']:<24} {row['mean_reward']:.4f}{pct}")
    return "\n".join(lines)


def run_metrics(n_qubits: int, n_layers: int, n_pairs: int = 5000, n_states: int = 2000,
                seed: int = 0, output_dir=None) -> list[dict]:
    rows = topology_report(n_qubits, n_layers, n_pairs, n_states, seed)
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(report_csv(rows))
    return rows


def oracle_mean(config: hrap.HrapConfig, seeds: Sequence[int]) -> float:
    """Mean optimal final reward (``-min makespan / psi``) over the given instances."""
    values = []
    for seed in seeds:
        inst = hrap.generate_instance(config.with_seed(seed))
        _, best = hrap.brute_force_best(inst)
        values.append(-best / hrap.psi(inst))
    return float(np.mean(values))
