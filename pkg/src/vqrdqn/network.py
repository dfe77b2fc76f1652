"""Hybrid value network: noisy dense trunk, circuit feature layer, dueling C51 head.

Everything is plain numpy with hand-written backward passes. Parameters live in
one ordered dict so the optimiser, target sync and checkpoints share a single
view of them; every update is done in place.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Literal

import numpy as np

from . import circuit
from .circuit import CircuitSpec, Topology

DuelingMode = Literal["logit_space", "paper_literal"]


@dataclass
class NetworkConfig:
    """Architecture of the value network.

    ``feature`` selects what sits between the trunk and the head:
    ``"quantum"`` (tanh angle encoder feeding the circuit), ``"classical"``
    (same encoder followed by a width-``n_qubits`` tanh layer) or ``"none"``.
    ``head`` is ``"dueling_c51"`` or ``"scalar"`` (one Q value per action).
    """

    input_dim: int
    num_actions: int
    hidden: tuple[int, ...] = (512, 512)
    n_qubits: int = 4
    n_layers: int = 2
    topology: Topology = Topology.RING
    n_atoms: int = 51
    v_min: float = -1.0
    v_max: float = 0.0
    angle_scale: float = float(np.pi)
    dueling_mode: DuelingMode = "logit_space"
    feature: str = "quantum"
    head: str = "dueling_c51"
    noisy: bool = True
    sigma_init: float = 0.017
    per_layer_hadamard: bool = False
    dtype: str = "float64"

    def __post_init__(self):
        self.topology = Topology.parse(self.topology)
        self.hidden = tuple(int(h) for h in self.hidden)
        if not self.v_min < self.v_max:
            raise ValueError(f"need v_min < v_max, got {self.v_min}, {self.v_max}")
        if self.n_atoms < 2:
            raise ValueError("n_atoms must be >= 2")
        if self.dueling_mode not in ("logit_space", "paper_literal"):
            raise ValueError(f"unknown dueling_mode {self.dueling_mode!r}")
        if self.feature not in ("quantum", "classical", "none"):
            raise ValueError(f"unknown feature {self.feature!r}")
        if self.head not in ("dueling_c51", "scalar"):
            raise ValueError(f"unknown head {self.head!r}")

    @property
    def circuit_spec(self) -> CircuitSpec:
        return CircuitSpec(self.n_qubits, self.n_layers, self.topology, self.per_layer_hadamard)

    @property
    def distributional(self) -> bool:
        return self.head == "dueling_c51"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["topology"] = self.topology.value
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


def support(v_min: float, v_max: float, n_atoms: int) -> np.ndarray:
    return np.linspace(v_min, v_max, n_atoms)


def q_values(dist: np.ndarray, atoms: np.ndarray) -> np.ndarray:
    """Expected value of each action's categorical distribution."""
    return dist @ atoms


def encode_angles(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                  angle_scale: float = float(np.pi)) -> tuple[np.ndarray, np.ndarray]:
    """Dense tanh layer scaled to rotation angles in ``[-angle_scale, angle_scale]``.

    Returns ``(angles, tanh_activations)``; the activations are kept for backward.
    """
    t = np.tanh(x @ w.T + b)
    return angle_scale * t, t


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


# -- noisy dense layer ------------------------------------------------------


@dataclass
class NoisyLayerParams:
    """Independent Gaussian noisy layer, ``w = w_mu + w_sigma * eps_w``."""

    w_mu: np.ndarray
    w_sigma: np.ndarray
    b_mu: np.ndarray
    b_sigma: np.ndarray
    eps_w: np.ndarray = field(default=None)
    eps_b: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.w_sigma.shape != self.w_mu.shape or self.b_mu.shape != (self.w_mu.shape[0],):
            raise ValueError("inconsistent noisy layer shapes")
        if self.eps_w is None:
            self.eps_w = np.zeros_like(self.w_mu)
        if self.eps_b is None:
            self.eps_b = np.zeros_like(self.b_mu)

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator,
             sigma_init: float = 0.017, dtype="float64") -> "NoisyLayerParams":
        bound = 1.0 / np.sqrt(n_in)
        return cls(
            w_mu=rng.uniform(-bound, bound, (n_out, n_in)).astype(dtype),
            w_sigma=np.full((n_out, n_in), sigma_init, dtype=dtype),
            b_mu=rng.uniform(-bound, bound, n_out).astype(dtype),
            b_sigma=np.full(n_out, sigma_init, dtype=dtype),
        )

    def weights(self, train: bool) -> tuple[np.ndarray, np.ndarray]:
        if not train:
            return self.w_mu, self.b_mu
        return self.w_mu + self.w_sigma * self.eps_w, self.b_mu + self.b_sigma * self.eps_b


def noisy_forward(params: NoisyLayerParams, x: np.ndarray, mode: str = "train") -> np.ndarray:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if x.shape[-1] != params.w_mu.shape[1]:
        raise ValueError(f"input width {x.shape[-1]} != layer fan-in {params.w_mu.shape[1]}")
    w, b = params.weights(mode == "train")
    return x @ w.T + b


def resample_noise(params: NoisyLayerParams, rng: np.random.Generator) -> None:
    dtype = params.w_mu.dtype
    params.eps_w[...] = rng.standard_normal(params.w_mu.shape, dtype=dtype)
    params.eps_b[...] = rng.standard_normal(params.b_mu.shape, dtype=dtype)


# -- network ------------------------------------------------------------------


@dataclass
class Forward:
    """Output of one batched forward pass plus what backward needs."""

    q: np.ndarray
    dist: np.ndarray | None
    train: bool
    acts: list = field(default_factory=list)
    cache: dict = field(default_factory=dict)


class QNetwork:
    def __init__(self, config: NetworkConfig, rng: np.random.Generator):
        self.config = config
        self.dtype = np.dtype(config.dtype)
        self.atoms = support(config.v_min, config.v_max, config.n_atoms)
        self.params: dict[str, np.ndarray] = {}
        self.noisy_layers: list[NoisyLayerParams] = []
        self._effective: list | None = None

        dt = self.dtype
        width = config.input_dim
        for i, h in enumerate(config.hidden):
            if config.noisy:
                layer = NoisyLayerParams.init(width, h, rng, config.sigma_init, dt)
                self.noisy_layers.append(layer)
                self.params[f"trunk{i}.w_mu"] = layer.w_mu
                self.params[f"trunk{i}.w_sigma"] = layer.w_sigma
                self.params[f"trunk{i}.b_mu"] = layer.b_mu
                self.params[f"trunk{i}.b_sigma"] = layer.b_sigma
            else:
                self._dense(f"trunk{i}", width, h, rng)
            width = h
        if config.feature in ("quantum", "classical"):
            n_angles = 2 * config.n_qubits * config.n_layers
            self._dense("encoder", width, n_angles, rng)
            width = config.n_qubits
            if config.feature == "classical":
                self._dense("classical", n_angles, config.n_qubits, rng)
        if config.distributional:
            self._dense("value", width, config.n_atoms, rng)
            self._dense("advantage", width, config.num_actions * config.n_atoms, rng)
        else:
            self._dense("q", width, config.num_actions, rng)

    def _dense(self, name: str, n_in: int, n_out: int, rng: np.random.Generator) -> None:
        bound = 1.0 / np.sqrt(n_in)
        self.params[f"{name}.w"] = rng.uniform(-bound, bound, (n_out, n_in)).astype(self.dtype)
        self.params[f"{name}.b"] = rng.uniform(-bound, bound, n_out).astype(self.dtype)

    @property
    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    # noise ------------------------------------------------------------------

    def resample_noise(self, rng: np.random.Generator) -> None:
        for layer in self.noisy_layers:
            resample_noise(layer, rng)
        self._effective = None

    def invalidate(self) -> None:
        """Drop cached noisy weights; call after any in-place parameter change."""
        self._effective = None

    def _trunk_weights(self, i: int, train: bool) -> tuple[np.ndarray, np.ndarray]:
        if not self.config.noisy:
            return self.params[f"trunk{i}.w"], self.params[f"trunk{i}.b"]
        if not train:
            return self.noisy_layers[i].weights(False)
        if self._effective is None:
            self._effective = [layer.weights(True) for layer in self.noisy_layers]
        return self._effective[i]

    # forward / backward ---------------------------------------------------------

    def forward(self, obs: np.ndarray, train: bool = False) -> Forward:
        cfg, p = self.config, self.params
        x = np.asarray(obs, dtype=self.dtype)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != cfg.input_dim:
            raise ValueError(f"observation width {x.shape[1]} != input_dim {cfg.input_dim}")
        out = Forward(q=None, dist=None, train=train)
        acts = out.acts
        for i in range(len(cfg.hidden)):
            w, b = self._trunk_weights(i, train)
            acts.append(x)
            x = np.maximum(x @ w.T + b, 0)
        acts.append(x)
        c = out.cache
        if cfg.feature != "none":
            angles, c["tanh"] = encode_angles(x, p["encoder.w"], p["encoder.b"], cfg.angle_scale)
            c["angles"] = angles
            if cfg.feature == "quantum":
                x = circuit.features(cfg.circuit_spec, angles.astype(np.float64)).astype(self.dtype)
            else:
                x = np.tanh(angles @ p["classical.w"].T + p["classical.b"])
                c["classical"] = x
        c["feature"] = x
        if cfg.distributional:
            B, A, N = x.shape[0], cfg.num_actions, cfg.n_atoms
            h_v = x @ p["value.w"].T + p["value.b"]
            h_a = (x @ p["advantage.w"].T + p["advantage.b"]).reshape(B, A, N)
            if cfg.dueling_mode == "logit_space":
                logits = h_v[:, None, :] + h_a - h_a.mean(axis=1, keepdims=True)
                dist = softmax(logits)
            else:
                v = softmax(h_v)
                adv = softmax(h_a)
                raw = v[:, None, :] + adv - adv.mean(axis=1, keepdims=True)
                clipped = np.maximum(raw, 0)
                total = clipped.sum(axis=-1, keepdims=True)
                dist = clipped / total
                c.update(v=v, adv=adv, raw=raw, total=total)
            out.dist = dist
            out.q = dist @ self.atoms.astype(self.dtype)
        else:
            out.q = x @ p["q.w"].T + p["q.b"]
        return out

    def backward(self, fwd: Forward, grad_q: np.ndarray | None = None,
                 grad_dist: np.ndarray | None = None) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss given its gradient w.r.t. q and/or dist."""
        cfg, p, c = self.config, self.params, fwd.cache
        grads: dict[str, np.ndarray] = {}
        f = c["feature"]
        if cfg.distributional:
            g = np.zeros_like(fwd.dist)
            if grad_dist is not None:
                g = g + grad_dist
            if grad_q is not None:
                g = g + grad_q[:, :, None] * self.atoms.astype(self.dtype)
            dist = fwd.dist
            B = dist.shape[0]
            if cfg.dueling_mode == "logit_space":
                g_logits = dist * (g - (g * dist).sum(axis=-1, keepdims=True))
                g_hv = g_logits.sum(axis=1)
                g_ha = g_logits - g_logits.mean(axis=1, keepdims=True)
            else:
                g_clip = (g - (g * dist).sum(axis=-1, keepdims=True)) / c["total"]
                g_raw = g_clip * (c["raw"] > 0)
                g_v = g_raw.sum(axis=1)
                g_adv = g_raw - g_raw.mean(axis=1, keepdims=True)
                v, adv = c["v"], c["adv"]
                g_hv = v * (g_v - (g_v * v).sum(axis=-1, keepdims=True))
                g_ha = adv * (g_adv - (g_adv * adv).sum(axis=-1, keepdims=True))
            g_ha = g_ha.reshape(B, -1)
            grads["value.w"] = g_hv.T @ f
            grads["value.b"] = g_hv.sum(axis=0)
            grads["advantage.w"] = g_ha.T @ f
            grads["advantage.b"] = g_ha.sum(axis=0)
            g_f = g_hv @ p["value.w"] + g_ha @ p["advantage.w"]
        else:
            gq = np.asarray(grad_q, dtype=self.dtype)
            grads["q.w"] = gq.T @ f
            grads["q.b"] = gq.sum(axis=0)
            g_f = gq @ p["q.w"]

        x = fwd.acts[-1]
        if cfg.feature != "none":
            angles = c["angles"]
            if cfg.feature == "quantum":
                g_angles = circuit.vjp(
                    cfg.circuit_spec, angles.astype(np.float64), g_f.astype(np.float64)
                ).astype(self.dtype)
            else:
                g_pre_c = g_f * (1 - c["classical"] ** 2)
                grads["classical.w"] = g_pre_c.T @ angles
                grads["classical.b"] = g_pre_c.sum(axis=0)
                g_angles = g_pre_c @ p["classical.w"]
            g_pre = g_angles * cfg.angle_scale * (1 - c["tanh"] ** 2)
            grads["encoder.w"] = g_pre.T @ x
            grads["encoder.b"] = g_pre.sum(axis=0)
            g_x = g_pre @ p["encoder.w"]
        else:
            g_x = g_f

        for i in reversed(range(len(cfg.hidden))):
            g_x = g_x * (fwd.acts[i + 1] > 0)
            x_in = fwd.acts[i]
            g_w = g_x.T @ x_in
            g_b = g_x.sum(axis=0)
            w, _ = self._trunk_weights(i, fwd.train)
            if cfg.noisy:
                layer = self.noisy_layers[i]
                grads[f"trunk{i}.w_mu"] = g_w
                grads[f"trunk{i}.b_mu"] = g_b
                if fwd.train:
                    grads[f"trunk{i}.w_sigma"] = g_w * layer.eps_w
                    grads[f"trunk{i}.b_sigma"] = g_b * layer.eps_b
                else:
                    grads[f"trunk{i}.w_sigma"] = np.zeros_like(layer.w_sigma)
                    grads[f"trunk{i}.b_sigma"] = np.zeros_like(layer.b_sigma)
            else:
                grads[f"trunk{i}.w"] = g_w
                grads[f"trunk{i}.b"] = g_b
            if i > 0:
                g_x = g_x @ w
        return {k: grads[k] for k in self.params}

    # copying / serialisation -----------------------------------------------------

    def copy_from(self, other: "QNetwork") -> None:
        for k, v in other.params.items():
            self.params[k][...] = v
        for mine, theirs in zip(self.noisy_layers, other.noisy_layers):
            mine.eps_w[...] = theirs.eps_w
            mine.eps_b[...] = theirs.eps_b
        self.invalidate()

    def clone(self) -> "QNetwork":
        twin = QNetwork(self.config, np.random.default_rng(0))
        twin.copy_from(self)
        return twin

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)}")
        for k, v in self.params.items():
            if arrays[k].shape != v.shape:
                raise ValueError(f"shape mismatch for {k}: {arrays[k].shape} vs {v.shape}")
            v[...] = arrays[k]
        self.invalidate()


def save_checkpoint(path, network: QNetwork, meta: dict) -> None:
    """Write parameters (in declared order) and JSON metadata to one ``.npz`` file."""
    meta = dict(meta, network=network.config.to_dict(), param_order=list(network.params))
    arrays = {f"param/{k}": v for k, v in network.params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path) -> tuple[QNetwork, dict]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        arrays = {k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")}
    net = QNetwork(NetworkConfig.from_dict(meta["network"]), np.random.default_rng(0))
    net.load_arrays(arrays)
    return net, meta
