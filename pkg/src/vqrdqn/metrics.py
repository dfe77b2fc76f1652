"""Expressibility and entanglement of the ansatz under random angles.

Expressibility compares the histogram of fidelities between pairs of states
prepared from independent uniform angle vectors against the fidelity
distribution of Haar-random states, ``P(F) = (N - 1)(1 - F)^(N - 2)`` with
``N = 2^n_q``. Lower KL means more expressive. Entanglement is the average
Meyer-Wallach measure ``Q = 2 (1 - mean_k Tr(rho_k^2))``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .circuit import CircuitSpec, Topology, prepare_batch

DEFAULT_BINS = 75
_CHUNK = 4096


@dataclass(frozen=True)
class FidelityHistogram:
    counts: np.ndarray
    n_samples: int

    @property
    def bin_count(self) -> int:
        return self.counts.size

    @classmethod
    def from_samples(cls, fidelities, bins: int = DEFAULT_BINS) -> "FidelityHistogram":
        f = np.asarray(fidelities, dtype=np.float64)
        counts, _ = np.histogram(np.clip(f, 0.0, 1.0), bins=bins, range=(0.0, 1.0))
        return cls(counts, int(f.size))


@dataclass(frozen=True)
class ExpressibilityReport:
    spec: CircuitSpec
    kl: float
    n_samples: int
    seed: int


@dataclass(frozen=True)
class EntanglementReport:
    spec: CircuitSpec
    mean_mw: float
    std_mw: float
    n_samples: int
    seed: int


def _random_states(spec: CircuitSpec, count: int, rng: np.random.Generator) -> np.ndarray:
    angles = rng.uniform(0.0, 2 * np.pi, size=(count, spec.n_params))
    return prepare_batch(spec, angles)


def fidelity(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``|<a|b>|^2`` along the last axis."""
    return np.abs(np.sum(np.conj(a) * b, axis=-1)) ** 2


def fidelity_samples(spec: CircuitSpec, n_pairs: int, seed: int) -> np.ndarray:
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for start in range(0, n_pairs, _CHUNK):
        m = min(_CHUNK, n_pairs - start)
        psi = _random_states(spec, m, rng)
        phi = _random_states(spec, m, rng)
        out.append(fidelity(psi, phi))
    return np.clip(np.concatenate(out), 0.0, 1.0)


def haar_bin_masses(n_qubits: int, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Haar fidelity probability of each histogram bin, integrated exactly."""
    dim = 2**n_qubits
    edges = np.linspace(0.0, 1.0, bins + 1)
    cdf_tail = (1.0 - edges) ** (dim - 1)
    return cdf_tail[:-1] - cdf_tail[1:]


def expressibility_kl(hist: FidelityHistogram, n_qubits: int) -> float:
    """KL(circuit || Haar) over the histogram bins; empty circuit bins add 0."""
    if hist.n_samples < 1 or hist.counts.sum() == 0:
        raise ValueError("empty fidelity histogram")
    p = hist.counts / hist.counts.sum()
    q = haar_bin_masses(n_qubits, hist.bin_count)
    mask = p > 0
    if np.any(q[mask] <= 0):
        return float("inf")
    return float(max(0.0, np.sum(p[mask] * np.log(p[mask] / q[mask]))))


def expressibility(spec: CircuitSpec, n_pairs: int = 5000, seed: int = 0,
                   bins: int = DEFAULT_BINS) -> ExpressibilityReport:
    hist = FidelityHistogram.from_samples(fidelity_samples(spec, n_pairs, seed), bins)
    return ExpressibilityReport(spec, expressibility_kl(hist, spec.n_qubits), n_pairs, seed)


def single_qubit_purities(states: np.ndarray) -> np.ndarray:
    """``Tr(rho_k^2)`` for every qubit ``k``; input ``(B, 2^n)`` or ``(2^n,)``."""
    states = np.atleast_2d(states)
    B, dim = states.shape
    n = int(round(np.log2(dim)))
    out = np.empty((B, n))
    for k in range(n):
        s = states.reshape(B, 2**k, 2, 2 ** (n - k - 1))
        rho = np.einsum("bxiy,bxjy->bij", s, s.conj())
        out[:, k] = np.sum(np.abs(rho) ** 2, axis=(1, 2))
    return out


def meyer_wallach(states: np.ndarray) -> np.ndarray | float:
    """Meyer-Wallach measure of one state (float) or a batch (array)."""
    single = np.ndim(states) == 1
    q = 2.0 * (1.0 - single_qubit_purities(states).mean(axis=1))
    return float(q[0]) if single else q


def average_mw(spec: CircuitSpec, n_samples: int = 2000, seed: int = 0) -> EntanglementReport:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    values = []
    for start in range(0, n_samples, _CHUNK):
        m = min(_CHUNK, n_samples - start)
        values.append(meyer_wallach(_random_states(spec, m, rng)))
    q = np.concatenate(values)
    return EntanglementReport(spec, float(q.mean()), float(q.std()), n_samples, seed)


REPORT_COLUMNS = ("topology", "n_q", "n_l", "kl", "mean_mw", "std_mw", "n_samples", "seed")


def topology_report(n_qubits: int, n_layers: int, n_pairs: int = 5000, n_states: int = 2000,
                    seed: int = 0, topologies=tuple(Topology)) -> list[dict]:
    """One row per topology, ranked by KL (most expressive first).

    ``n_samples`` records ``"<fidelity pairs>/<MW states>"``.
    """
    rows = []
    for topo in topologies:
        spec = CircuitSpec(n_qubits, n_layers, Topology.parse(topo))
        ex = expressibility(spec, n_pairs, seed)
        ent = average_mw(spec, n_states, seed)
        rows.append({
            "topology": spec.topology.value,
            "n_q": n_qubits,
            "n_l": n_layers,
            "kl": ex.kl,
            "mean_mw": ent.mean_mw,
            "std_mw": ent.std_mw,
            "n_samples": f"{n_pairs}/{n_states}",
            "seed": seed,
        })
    rows.sort(key=lambda r: (r["kl"], -r["mean_mw"]))
    return rows


def report_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()
