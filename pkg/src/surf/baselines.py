"""Classical iterative baselines: DGD, DSGD, DFedAvgM and star-graph FedAvg.

Agents descend their own local objective ``f_i`` here, so local gradients do
not carry the ``1/n`` factor of :func:`surf.task.global_grad`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from surf import seeding, task
from surf.data import FLDataset
from surf.errors import ParameterError
from surf.graph import Graph, metropolis_weights

DGD = "dgd"
DSGD = "dsgd"
DFEDAVGM = "dfedavgm"
FEDAVG_STAR = "fedavg-star"
METHODS = (DGD, DSGD, DFEDAVGM, FEDAVG_STAR)


@dataclass
class BaselineRun:
    method: str
    snapshots: list[np.ndarray]  # W after each round, starting with W_0
    rounds: int
    hyper: dict = field(default_factory=dict)


def local_grads(W: np.ndarray, dataset: FLDataset, idx: np.ndarray | None) -> np.ndarray:
    """Row ``i``: gradient of agent ``i``'s mean loss over the examples ``idx[i]``."""
    x, y = dataset.train
    if idx is not None:
        rows = np.arange(dataset.n)[:, None]
        x, y = x[rows, idx], y[rows, idx]
    return W.shape[0] * task.global_grad(W, (x, y))


def _sample(rng, dataset, batch_count):
    if batch_count is None or batch_count >= dataset.m_train:
        return None
    return np.stack([rng.choice(dataset.m_train, size=batch_count, replace=False) for _ in range(dataset.n)])


def _w0(dataset, w0):
    return np.zeros((dataset.n, dataset.d)) if w0 is None else np.array(w0, dtype=float)


def dgd_run(
    dataset: FLDataset,
    graph: Graph,
    beta: float,
    T: int,
    batch_count: int | None = 10,
    seed: int = 0,
    *,
    w0: np.ndarray | None = None,
    adapt_then_combine: bool = False,
) -> BaselineRun:
    """``w_i <- sum_j a_ij w_j - beta * grad f_i(w_i)`` with Metropolis weights.

    With ``adapt_then_combine`` the local step is taken before mixing.
    """
    if beta < 0:
        raise ParameterError("step size must be nonnegative")
    A = metropolis_weights(graph)
    rng = seeding.rng(seed, seeding.BASELINE)
    W = _w0(dataset, w0)
    snaps = [W]
    for _ in range(T):
        G = local_grads(W, dataset, _sample(rng, dataset, batch_count))
        W = A @ (W - beta * G) if adapt_then_combine else A @ W - beta * G
        snaps.append(W)
    return BaselineRun(DGD, snaps, T, {"beta": beta, "batch_count": batch_count, "adapt_then_combine": adapt_then_combine})


def dsgd_run(dataset: FLDataset, graph: Graph, beta: float, T: int, seed: int = 0, *, w0=None) -> BaselineRun:
    """DGD with single-example stochastic gradients."""
    run = dgd_run(dataset, graph, beta, T, batch_count=1, seed=seed, w0=w0)
    run.method = DSGD
    return run


def dfedavgm_run(
    dataset: FLDataset,
    graph: Graph,
    beta: float,
    momentum: float = 0.9,
    local_steps: int = 6,
    T: int = 200,
    seed: int = 0,
    *,
    batch_count: int | None = 10,
    w0=None,
) -> BaselineRun:
    """Each round: ``local_steps`` heavy-ball SGD steps per agent, then one mixing."""
    if local_steps < 1:
        raise ParameterError("local_steps must be at least 1")
    if not 0.0 <= momentum < 1.0:
        raise ParameterError("momentum must lie in [0, 1)")
    A = metropolis_weights(graph)
    rng = seeding.rng(seed, seeding.BASELINE)
    W = _w0(dataset, w0)
    snaps = [W]
    for _ in range(T):
        Y = W.copy()
        buf = np.zeros_like(W)
        for _ in range(local_steps):
            buf = momentum * buf + local_grads(Y, dataset, _sample(rng, dataset, batch_count))
            Y = Y - beta * buf
        W = A @ Y
        snaps.append(W)
    hyper = {"beta": beta, "momentum": momentum, "local_steps": local_steps, "batch_count": batch_count}
    return BaselineRun(DFEDAVGM, snaps, T, hyper)


def fedavg_star_run(
    dataset: FLDataset,
    participants_per_round: int = 10,
    local_steps: int = 1,
    beta: float = 0.1,
    T: int = 200,
    seed: int = 0,
    *,
    batch_count: int | None = None,
    w0=None,
) -> BaselineRun:
    """FedAvg over a star: sampled agents train from the server model, server averages.

    Snapshots hold the server model broadcast to every agent row.
    """
    n = dataset.n
    if not 1 <= participants_per_round <= n:
        raise ParameterError(f"participants_per_round must lie in [1, {n}]")
    rng = seeding.rng(seed, seeding.BASELINE)
    w = _w0(dataset, w0).mean(axis=0)
    snaps = [np.tile(w, (n, 1))]
    for _ in range(T):
        chosen = np.sort(rng.choice(n, size=participants_per_round, replace=False))
        Y = np.tile(w, (n, 1))
        for _ in range(local_steps):
            Y = Y - beta * local_grads(Y, dataset, _sample(rng, dataset, batch_count))
        w = Y[chosen].mean(axis=0)
        snaps.append(np.tile(w, (n, 1)))
    hyper = {"participants_per_round": participants_per_round, "local_steps": local_steps, "beta": beta, "batch_count": batch_count}
    return BaselineRun(FEDAVG_STAR, snaps, T, hyper)


def run_method(method: str, dataset: FLDataset, graph: Graph, T: int, seed: int, w0=None, **hyper) -> BaselineRun:
    if method == DGD:
        return dgd_run(dataset, graph, T=T, seed=seed, w0=w0, **hyper)
    if method == DSGD:
        return dsgd_run(dataset, graph, T=T, seed=seed, w0=w0, **hyper)
    if method == DFEDAVGM:
        return dfedavgm_run(dataset, graph, T=T, seed=seed, w0=w0, **hyper)
    if method == FEDAVG_STAR:
        return fedavg_star_run(dataset, T=T, seed=seed, w0=w0, **hyper)
    raise ParameterError(f"unknown method {method!r}; expected one of {METHODS}")


def disagreement(W: np.ndarray) -> float:
    """Frobenius distance of the rows of ``W`` from their mean."""
    return float(np.linalg.norm(W - W.mean(axis=0)))


def run_metrics(run: BaselineRun, dataset: FLDataset) -> dict[str, np.ndarray]:
    """Test loss, accuracy and gradient norm after every round (index 0 = start)."""
    loss = np.array([task.global_loss(W, dataset.test) for W in run.snapshots])
    acc = np.array([task.accuracy(W, dataset.test).mean() for W in run.snapshots])
    gn = np.array([task.grad_norm(W, dataset.test) for W in run.snapshots])
    return {"loss": loss, "acc": acc, "grad_norm": gn}


def tune_step_size(
    method: str,
    datasets,
    graph: Graph,
    rounds: int,
    grid=(0.01, 0.03, 0.1, 0.3, 1.0),
    seed: int = 0,
    w0s=None,
    **hyper,
) -> float:
    """Step size from ``grid`` with the best mean test accuracy after ``rounds``."""
    best, best_acc = None, -np.inf
    for beta in grid:
        accs = []
        for q, ds in enumerate(datasets):
            w0 = None if w0s is None else w0s[q]
            run = run_method(method, ds, graph, rounds, seeding.derive(seed, q), w0=w0, beta=beta, **hyper)
            accs.append(task.accuracy(run.snapshots[-1], ds.test).mean())
        if np.mean(accs) > best_acc:
            best, best_acc = beta, float(np.mean(accs))
    return best
