"""Statevector simulation of the layered RX/RZ + CNOT ansatz.

Basis index ``b`` stores qubit 0 as its most significant bit. All kernels act
on a batch of states shaped ``(B, 2**n)`` so that many angle vectors (for
example every parameter-shift evaluation of a minibatch) run together.

Angle layout is layer-major: within layer ``l`` the first ``n_q`` entries are
the RX angles of qubits ``0..n_q-1`` and the next ``n_q`` the RZ angles.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

SHIFT = np.pi / 2
_SQRT_HALF = 1.0 / np.sqrt(2.0)


class Topology(str, enum.Enum):
    LINEAR = "linear"
    RING = "ring"
    STAR = "star"
    ALL_TO_ALL = "all_to_all"

    @classmethod
    def parse(cls, value: "str | Topology") -> "Topology":
        if isinstance(value, Topology):
            return value
        key = str(value).strip().lower().replace("-", "_").replace(" ", "_")
        aliases = {"alltoall": "all_to_all", "full": "all_to_all", "chain": "linear"}
        return cls(aliases.get(key, key))

    @property
    def display(self) -> str:
        return {"linear": "Linear", "ring": "Ring", "star": "Star",
                "all_to_all": "All-to-All"}[self.value]


@dataclass(frozen=True)
class CircuitSpec:
    n_qubits: int
    n_layers: int
    topology: Topology = Topology.RING
    per_layer_hadamard: bool = False

    def __post_init__(self):
        object.__setattr__(self, "topology", Topology.parse(self.topology))
        if not 1 <= self.n_qubits <= 8:
            raise ValueError(f"n_qubits must be in 1..8, got {self.n_qubits}")
        if self.n_layers < 0:
            raise ValueError(f"n_layers must be >= 0, got {self.n_layers}")

    @property
    def n_params(self) -> int:
        return 2 * self.n_qubits * self.n_layers

    @property
    def dim(self) -> int:
        return 2**self.n_qubits


def entangler_pairs(topology: Topology | str, n_qubits: int) -> list[tuple[int, int]]:
    """Ordered (control, target) CNOT list of one entangling layer."""
    topology = Topology.parse(topology)
    n = n_qubits
    if n < 2:
        return []
    if topology is Topology.RING:
        return [(i, (i + 1) % n) for i in range(n)]
    if topology is Topology.LINEAR:
        return [(i, i + 1) for i in range(n - 1)]
    if topology is Topology.STAR:
        return [(0, j) for j in range(1, n)]
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def _bit(index: np.ndarray, qubit: int, n: int) -> np.ndarray:
    return (index >> (n - 1 - qubit)) & 1


@lru_cache(maxsize=None)
def _cnot_permutation(control: int, target: int, n: int) -> np.ndarray:
    idx = np.arange(2**n)
    return idx ^ (_bit(idx, control, n) << (n - 1 - target))


@lru_cache(maxsize=None)
def _layer_permutation(topology: Topology, n: int) -> np.ndarray:
    # gathering with p1 then p2 equals one gather with p1[p2]
    perm = np.arange(2**n)
    for control, target in entangler_pairs(topology, n):
        perm = perm[_cnot_permutation(control, target, n)]
    perm.setflags(write=False)
    return perm


@lru_cache(maxsize=None)
def _z_signs(n: int) -> np.ndarray:
    idx = np.arange(2**n)
    signs = np.stack([1 - 2 * _bit(idx, q, n) for q in range(n)], axis=1).astype(np.float64)
    signs.setflags(write=False)
    return signs


def _split(states: np.ndarray, qubit: int, n: int) -> np.ndarray:
    return states.reshape(states.shape[0], 2**qubit, 2, 2 ** (n - qubit - 1))


def apply_h(states: np.ndarray, qubit: int, n: int) -> None:
    s = _split(states, qubit, n)
    a0 = s[:, :, 0, :].copy()
    a1 = s[:, :, 1, :]
    s[:, :, 0, :] = (a0 + a1) * _SQRT_HALF
    s[:, :, 1, :] = (a0 - a1) * _SQRT_HALF


def apply_rx(states: np.ndarray, qubit: int, n: int, theta: np.ndarray) -> None:
    s = _split(states, qubit, n)
    half = np.asarray(theta, dtype=np.float64).reshape(-1, 1, 1) / 2
    c, sn = np.cos(half), -1j * np.sin(half)
    a0 = s[:, :, 0, :].copy()
    a1 = s[:, :, 1, :].copy()
    s[:, :, 0, :] = c * a0 + sn * a1
    s[:, :, 1, :] = sn * a0 + c * a1


def apply_rz(states: np.ndarray, qubit: int, n: int, phi: np.ndarray) -> None:
    s = _split(states, qubit, n)
    phase = np.exp(-0.5j * np.asarray(phi, dtype=np.float64)).reshape(-1, 1, 1)
    s[:, :, 0, :] *= phase
    s[:, :, 1, :] *= phase.conj()


def apply_rx_rz(states: np.ndarray, qubit: int, n: int, theta: np.ndarray, phi: np.ndarray) -> None:
    """RX(theta) followed by RZ(phi) as one 2x2 update."""
    s = _split(states, qubit, n)
    half = np.asarray(theta, dtype=np.float64).reshape(-1, 1, 1) / 2
    phase = np.exp(-0.5j * np.asarray(phi, dtype=np.float64)).reshape(-1, 1, 1)
    c, sn = np.cos(half), -1j * np.sin(half)
    a0 = s[:, :, 0, :].copy()
    a1 = s[:, :, 1, :].copy()
    s[:, :, 0, :] = phase * (c * a0 + sn * a1)
    s[:, :, 1, :] = phase.conj() * (sn * a0 + c * a1)


def apply_cnot(states: np.ndarray, control: int, target: int, n: int) -> None:
    states[:] = states[:, _cnot_permutation(control, target, n)]


def prepare_batch(spec: CircuitSpec, angles: np.ndarray) -> np.ndarray:
    """Output states for a ``(B, n_params)`` batch of angle vectors."""
    angles = np.asarray(angles, dtype=np.float64)
    if angles.ndim != 2 or angles.shape[1] != spec.n_params:
        raise ValueError(
            f"expected angles of shape (B, {spec.n_params}), got {angles.shape}"
        )
    n = spec.n_qubits
    states = np.zeros((angles.shape[0], spec.dim), dtype=np.complex128)
    states[:, 0] = 1.0
    for q in range(n):
        apply_h(states, q, n)
    perm = _layer_permutation(spec.topology, n)
    for layer in range(spec.n_layers):
        if spec.per_layer_hadamard and layer > 0:
            for q in range(n):
                apply_h(states, q, n)
        base = 2 * n * layer
        for q in range(n):
            apply_rx_rz(states, q, n, angles[:, base + q], angles[:, base + n + q])
        if n > 1:
            states = states[:, perm]
    return states


def prepare(spec: CircuitSpec, angles: np.ndarray) -> np.ndarray:
    angles = np.asarray(angles, dtype=np.float64)
    if angles.shape != (spec.n_params,):
        raise ValueError(f"expected {spec.n_params} angles, got shape {angles.shape}")
    return prepare_batch(spec, angles[None, :])[0]


def expect_z(states: np.ndarray) -> np.ndarray:
    """Pauli-Z expectation per qubit; accepts one state or a batch."""
    states = np.asarray(states)
    n = int(np.log2(states.shape[-1]))
    return (np.abs(states) ** 2) @ _z_signs(n)


def features(spec: CircuitSpec, angles: np.ndarray) -> np.ndarray:
    """``(B, n_params)`` angles to ``(B, n_qubits)`` Z expectations."""
    return expect_z(prepare_batch(spec, angles))


def jacobian(spec: CircuitSpec, angles: np.ndarray) -> np.ndarray:
    """Parameter-shift Jacobian ``d<Z_i>/d theta_k`` of shape ``(B, P, n_q)``."""
    angles = np.asarray(angles, dtype=np.float64)
    squeeze = angles.ndim == 1
    if squeeze:
        angles = angles[None, :]
    B, P = angles.shape
    shifts = np.concatenate([np.eye(P), -np.eye(P)]) * SHIFT  # (2P, P)
    shifted = (angles[:, None, :] + shifts[None, :, :]).reshape(B * 2 * P, P)
    z = features(spec, shifted).reshape(B, 2, P, spec.n_qubits)
    jac = (z[:, 0] - z[:, 1]) / 2
    return jac[0] if squeeze else jac


def gradient(spec: CircuitSpec, angles: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product ``d(upstream . <Z>)/d theta`` for one angle vector."""
    return jacobian(spec, angles) @ np.asarray(upstream, dtype=np.float64)


def _apply_x(states: np.ndarray, qubit: int, n: int) -> np.ndarray:
    s = _split(states, qubit, n)
    return s[:, :, ::-1, :].reshape(states.shape)


def _apply_z(states: np.ndarray, qubit: int, n: int) -> np.ndarray:
    out = states.copy()
    _split(out, qubit, n)[:, :, 1, :] *= -1
    return out


def vjp(spec: CircuitSpec, angles: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Adjoint-method gradient of ``sum_i upstream_i <Z_i>`` for a batch.

    Runs the circuit once, then sweeps it backwards with the observable
    applied, so the cost is a few circuit passes instead of ``2 * n_params``.
    Agrees with :func:`jacobian` contracted with ``upstream``.
    """
    angles = np.asarray(angles, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    B, P = angles.shape
    n = spec.n_qubits
    psi = prepare_batch(spec, angles)
    lam = psi * (upstream @ _z_signs(n).T)
    perm = _layer_permutation(spec.topology, n)
    inverse = np.argsort(perm)
    grad = np.zeros((B, P))
    for layer in reversed(range(spec.n_layers)):
        if n > 1:
            psi = psi[:, inverse]
            lam = lam[:, inverse]
        base = 2 * n * layer
        for q in reversed(range(n)):
            # d/dtheta <O> = Im <lam| G |psi> with psi, lam taken just after the gate
            z_idx, x_idx = base + n + q, base + q
            grad[:, z_idx] = np.imag(np.sum(lam.conj() * _apply_z(psi, q, n), axis=1))
            apply_rz(psi, q, n, -angles[:, z_idx])
            apply_rz(lam, q, n, -angles[:, z_idx])
            grad[:, x_idx] = np.imag(np.sum(lam.conj() * _apply_x(psi, q, n), axis=1))
            apply_rx(psi, q, n, -angles[:, x_idx])
            apply_rx(lam, q, n, -angles[:, x_idx])
        if spec.per_layer_hadamard and layer > 0:
            for q in range(n):
                apply_h(psi, q, n)
                apply_h(lam, q, n)
    return grad


def draw(spec: CircuitSpec) -> str:
    """Plain-text gate listing, one line per qubit."""
    n = spec.n_qubits
    rows = [[f"q{q}:", "H"] for q in range(n)]
    for layer in range(spec.n_layers):
        if spec.per_layer_hadamard and layer > 0:
            for q in range(n):
                rows[q].append("H")
        base = 2 * n * layer
        for q in range(n):
            rows[q] += [f"RX(t{base + q})", f"RZ(t{base + n + q})"]
        for control, target in entangler_pairs(spec.topology, n):
            for q in range(n):
                rows[q].append(
                    f"*{target}" if q == control else f"X{control}" if q == target else "-"
                )
    for q in range(n):
        rows[q].append("<Z>")
    return "\n".join(" ".join(r) for r in rows)
