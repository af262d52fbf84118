"""Reverse-mode differentiation of the empirical Lagrangian through the unrolled network.

The Lagrangian of one dataset is

    f(W_L) + sum_l lam_l * (||grad f(W_l)|| - (1 - eps) * ||grad f(W_{l-1})||)

with the loss and every gradient norm measured on the dataset's test split.
Batches are drawn once per evaluation and held fixed for the backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from surf import task
from surf.data import FLDataset
from surf.errors import ParameterError, StateError
from surf.unroll import (
    LayerCache,
    LayerParams,
    Trajectory,
    UnrolledParams,
    agent_offset,
    init_w0,
    unrolled_forward,
)

ParamGrads = list[LayerParams]


@dataclass
class ConstraintSlacks:
    s: np.ndarray  # (L,) slack per layer, <= 0 means satisfied
    norms: np.ndarray  # (L + 1,) gradient norms along the trajectory

    @property
    def decay_ratios(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.norms[1:] / self.norms[:-1]


def _rows(W, mode):
    return W[agent_offset(mode):]


def _pad(G, mode):
    if agent_offset(mode) == 0:
        return G
    return np.concatenate([np.zeros((1, G.shape[1])), G], axis=0)


def trajectory_norms(trajectory: Trajectory, dataset: FLDataset, mode: str) -> np.ndarray:
    return np.array([task.grad_norm(_rows(W, mode), dataset.test) for W in trajectory.W_seq])


def constraint_slacks(trajectory: Trajectory, dataset: FLDataset, epsilon: float, mode: str = "decentralized") -> ConstraintSlacks:
    """Slacks ``||grad f(W_l)|| - (1 - eps) ||grad f(W_{l-1})||`` on the test split."""
    norms = trajectory_norms(trajectory, dataset, mode)
    return ConstraintSlacks(norms[1:] - (1.0 - epsilon) * norms[:-1], norms)


def layer_vjp(upstream: np.ndarray, cache: LayerCache | None, lp: LayerParams, S: np.ndarray) -> tuple[np.ndarray, LayerParams]:
    """Pull ``upstream = dL/dW_l`` back through one layer.

    Returns ``dL/dW_{l-1}`` and the parameter gradients of the layer.
    """
    if cache is None:
        raise StateError("layer cache missing; run the forward pass with record=True")
    act = cache.active[:, None]
    gh = np.empty_like(lp.h)
    gh[0] = np.vdot(cache.w_prev * act, upstream)
    for k, sk in enumerate(cache.shifted, start=1):
        gh[k] = np.vdot(sk, upstream)
    gz = -upstream * ((cache.z > 0) & act)
    gM = gz.T @ cache.inputs
    gc = gz.sum(axis=0)

    down = lp.h[0] * upstream * act
    back = upstream
    St = S.T
    for hk in lp.h[1:]:
        back = St @ back
        down = down + hk * back
    d = lp.M.shape[0]
    down = down + gz @ lp.M[:, :d]
    return down, LayerParams(gh, gM, gc)


def _check_lambda(lam, L):
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (L,):
        raise ParameterError(f"lambda must have length L={L}, got shape {lam.shape}")
    if np.any(lam < 0):
        raise ParameterError("dual variables must be nonnegative")
    return lam


def _forward(theta, dataset, S, seed, w0, batches, mu0, sigma0):
    if w0 is None:
        w0 = init_w0(S.shape[0], theta.d, mu0, sigma0, seed)
    return unrolled_forward(w0, dataset, theta, S, seed, record=True, batches=batches)


def lagrangian(
    theta: UnrolledParams,
    lam,
    dataset: FLDataset,
    S: np.ndarray,
    epsilon: float,
    seed: int = 0,
    *,
    w0: np.ndarray | None = None,
    batches: np.ndarray | None = None,
    mu0: float = 0.0,
    sigma0: float = 0.1,
) -> tuple[float, ConstraintSlacks, Trajectory]:
    """Value of the per-dataset Lagrangian, its slacks and the recorded trajectory."""
    if not 0.0 < epsilon < 1.0:
        raise ParameterError(f"epsilon must lie in (0, 1), got {epsilon}")
    lam = _check_lambda(lam, theta.L)
    traj = _forward(theta, dataset, S, seed, w0, batches, mu0, sigma0)
    slacks = constraint_slacks(traj, dataset, epsilon, theta.mode)
    value = task.global_loss(_rows(traj.W_seq[-1], theta.mode), dataset.test) + float(lam @ slacks.s)
    return value, slacks, traj


def lagrangian_grad(
    theta: UnrolledParams,
    lam,
    dataset: FLDataset,
    S: np.ndarray,
    epsilon: float,
    seed: int = 0,
    *,
    w0: np.ndarray | None = None,
    batches: np.ndarray | None = None,
    mu0: float = 0.0,
    sigma0: float = 0.1,
) -> tuple[ParamGrads, ConstraintSlacks, float]:
    """Gradient of :func:`lagrangian` w.r.t. every layer's parameters.

    Also returns the slacks (the partial derivatives in ``lam``) and the
    Lagrangian value.
    """
    value, slacks, traj = lagrangian(
        theta, lam, dataset, S, epsilon, seed, w0=w0, batches=batches, mu0=mu0, sigma0=sigma0
    )
    lam = np.asarray(lam, dtype=float)
    L, mode = theta.L, theta.mode
    if L == 0:
        return [], slacks, value
    shard = dataset.test

    def norm_grad(W, coef):
        if coef == 0.0:
            return 0.0
        g, _ = task.grad_norm_backward(_rows(W, mode), shard)
        return coef * _pad(g, mode)

    upstream = _pad(task.global_grad(_rows(traj.W_seq[L], mode), shard), mode) + norm_grad(traj.W_seq[L], lam[L - 1])
    grads: ParamGrads = [None] * L
    for l in range(L, 0, -1):
        upstream, grads[l - 1] = layer_vjp(upstream, traj.cache[l - 1], theta.layers[l - 1], S)
        if l > 1:
            coef = lam[l - 2] - (1.0 - epsilon) * lam[l - 1]
            upstream = upstream + norm_grad(traj.W_seq[l - 1], coef)
    return grads, slacks, value
