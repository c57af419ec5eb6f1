"""Finite-difference gradient checks for every op kind and the toy network."""

from __future__ import annotations

import numpy as np

from ..autodiff import (Tensor, add, additive_attention, concat, div, gather, matmul, max_, mean, mul, neg,
                        neighbor_pairs, no_grad, relu, reshape, softmax, sub, sum_, tanh, transpose)
from ..autodiff.gradcheck import check_gradients, analytic_grads, relative_error
from ..geometry.features import standardize
from ..geometry.types import PointCloud
from .config import NetworkConfig, toy_network
from .model import VolRegNet
from .train import TrainingSample, sample_loss


def synthetic_sample(cfg: NetworkConfig, seed: int = 0, n_vol: int | None = None, n_surf: int | None = None,
                     name: str = "") -> TrainingSample:
    """Random ball-shaped preop/intraop pair with a smooth displacement field."""
    n = cfg.n_points
    n_vol = n_vol or max(1, n - 7)
    n_surf = n_surf or max(1, int(0.6 * n))
    rng = np.random.default_rng(seed)

    def ball(m):
        p = rng.normal(size=(m, 3))
        return 0.05 * p * rng.random((m, 1)) ** (1 / 3) / np.linalg.norm(p, axis=1, keepdims=True)

    vol, surf = ball(n_vol), ball(n_surf) + [0.0, 0.0, 0.01]
    fv, fs = rng.normal(size=(n_vol, 5)) * 0.1, rng.normal(size=(n_surf, 5)) * 0.1
    phi = 0.01 * np.sin(30 * vol[:, [1, 2, 0]]) + 0.005
    pre = standardize(PointCloud(vol, features=fv), n, seed, cfg.frequencies)
    intra = standardize(PointCloud(surf, features=fs), n, seed, cfg.frequencies)
    gt = np.zeros((n, 3))
    gt[pre.valid_mask] = phi[pre.source_index[pre.valid_mask]]
    return TrainingSample(pre, intra, gt, name or f"synthetic{seed}")


def network_gradcheck(seed: int, cfg: NetworkConfig | None = None, h: float = 1e-6) -> float:
    """Relative error of the loss derivative along one random joint parameter direction."""
    cfg = cfg or toy_network(init_seed=seed)
    net = VolRegNet(cfg)
    s = synthetic_sample(cfg, seed)
    plan = net.plan(s.preop, s.intraop)

    def fn():
        return sample_loss(net, plan, s.phi_gt)

    params = net.params.tensors()
    grads = analytic_grads(fn, params)
    rng = np.random.default_rng(seed)
    dirs = [rng.standard_normal(p.shape) for p in params]
    with no_grad():
        for p, d in zip(params, dirs):
            p.data += h * d
        fp = fn().item()
        for p, d in zip(params, dirs):
            p.data -= 2 * h * d
        fm = fn().item()
        for p, d in zip(params, dirs):
            p.data += h * d
    analytic = sum(float(np.sum(g * d)) for g, d in zip(grads, dirs))
    return relative_error(analytic, (fp - fm) / (2 * h))


def op_gradchecks(seed: int, h: float = 1e-6) -> dict[str, float]:
    """Entrywise finite-difference error for each differentiable op on random inputs.

    Errors are relative to the largest gradient entry over the op's inputs.
    """
    rng = np.random.default_rng(seed)
    t = lambda *shape: Tensor(rng.normal(size=shape), requires_grad=True)  # noqa: E731
    a, b = t(3, 4), t(3, 4)
    pos = Tensor(rng.random((3, 4)) + 0.5, requires_grad=True)
    m, w = t(2, 3, 4), t(4, 5)
    idx = rng.integers(0, 3, 5)
    q, k = t(4, 6), t(3, 6)
    nb = rng.integers(0, 3, (4, 2))
    rel, wr = rng.normal(size=(4, 2, 5)), t(5, 6)
    heads, embed = 2, 3
    lg, vals = t(4, 2, heads * embed), t(4, 2, heads * embed)
    w0, b0, w1 = t(heads, embed, embed), t(heads, 1, embed), t(heads, embed, embed)
    # tanh/softmax weights keep every case smooth; relu/max inputs avoid kinks in expectation
    cases = {
        "add": (lambda: sum_(mul(add(a, b), add(a, b))), [a, b]),
        "sub": (lambda: sum_(mul(sub(a, b), a)), [a, b]),
        "mul": (lambda: sum_(mul(a, b)), [a, b]),
        "div": (lambda: sum_(div(a, pos)), [a, pos]),
        "neg": (lambda: sum_(mul(neg(a), b)), [a, b]),
        "relu": (lambda: sum_(mul(relu(a), b)), [a, b]),
        "tanh": (lambda: sum_(mul(tanh(a), b)), [a, b]),
        "matmul": (lambda: sum_(tanh(matmul(m, w))), [m, w]),
        "sum": (lambda: sum_(mul(sum_(m, axis=1), sum_(m, axis=1))), [m]),
        "mean": (lambda: sum_(mul(mean(m, axis=(0, 2)), mean(m, axis=(0, 2)))), [m]),
        "max": (lambda: sum_(mul(max_(m, axis=1), max_(m, axis=1))), [m]),
        "softmax": (lambda: sum_(mul(softmax(a, axis=1), b)), [a, b]),
        "reshape": (lambda: sum_(tanh(matmul(reshape(m, (6, 4)), w))), [m, w]),
        "transpose": (lambda: sum_(mul(transpose(m, (2, 0, 1)), transpose(m, (2, 0, 1)))), [m]),
        "concat": (lambda: sum_(tanh(concat([a, b], axis=0))), [a, b]),
        "gather": (lambda: sum_(tanh(gather(a, idx, axis=1))), [a]),
        "neighbor_pairs": (lambda: sum_(tanh(neighbor_pairs(q, k, nb, rel, wr))), [q, k, wr]),
        "additive_attention": (lambda: sum_(tanh(additive_attention(lg, vals, w0, b0, w1, heads, embed))),
                               [lg, vals, w0, b0, w1]),
    }
    return {name: check_gradients(fn, params, h, joint=True) for name, (fn, params) in cases.items()}
