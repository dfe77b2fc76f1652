"""Central finite-difference checks shared by the unit and acceptance tests."""

import numpy as np

from vqrdqn.network import NetworkConfig, QNetwork

TINY = dict(input_dim=6, num_actions=2, hidden=(8, 8), n_qubits=2, n_layers=1, n_atoms=3)


def tiny_network(seed=0, **overrides):
    cfg = NetworkConfig(**{**TINY, **overrides})
    rng = np.random.default_rng(seed)
    net = QNetwork(cfg, rng)
    if cfg.noisy:
        net.resample_noise(rng)
    return net


def loss_and_grads(net, obs, weights, train=True):
    """Linear loss ``sum(weights * dist)`` (or ``* q`` for a scalar head)."""
    fwd = net.forward(obs, train=train)
    if net.config.distributional:
        return float(np.sum(weights * fwd.dist)), net.backward(fwd, grad_dist=weights)
    return float(np.sum(weights * fwd.q)), net.backward(fwd, grad_q=weights)


def numeric_grads(net, obs, weights, h=1e-5, train=True):
    out = {}
    for name, p in net.params.items():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            net.invalidate()
            plus = loss_and_grads(net, obs, weights, train)[0]
            flat[i] = old - h
            net.invalidate()
            minus = loss_and_grads(net, obs, weights, train)[0]
            flat[i] = old
            gflat[i] = (plus - minus) / (2 * h)
        net.invalidate()
        out[name] = g
    return out


def relative_error(a: dict, b: dict) -> float:
    """``||a - b|| / max(||a||, ||b||)`` over all parameters stacked into one vector."""
    va = np.concatenate([a[k].ravel() for k in a])
    vb = np.concatenate([b[k].ravel() for k in a])
    scale = max(np.linalg.norm(va), np.linalg.norm(vb), 1e-300)
    return float(np.linalg.norm(va - vb) / scale)


def check_network(seed=0, batch=3, h=1e-5, train=True, **overrides):
    """Analytic vs numeric gradients of a random linear loss; returns (rel error, analytic, numeric)."""
    net = tiny_network(seed, **overrides)
    rng = np.random.default_rng(seed + 1000)
    obs = rng.normal(size=(batch, net.config.input_dim))
    shape = (batch, net.config.num_actions, net.config.n_atoms) if net.config.distributional \
        else (batch, net.config.num_actions)
    weights = rng.normal(size=shape)
    _, analytic = loss_and_grads(net, obs, weights, train)
    numeric = numeric_grads(net, obs, weights, h, train)
    return relative_error(analytic, numeric), analytic, numeric
