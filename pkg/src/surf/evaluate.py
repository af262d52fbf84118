"""Meta-test evaluation, layer-wise descent diagnostics, ablation and asynchrony studies."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from surf import seeding, task
from surf.data import META_TEST, FLDataset, MetaDataset
from surf.errors import ParameterError
from surf.grad import constraint_slacks
from surf.unroll import UnrolledParams, agent_offset, init_w0, unrolled_forward

CSV_COLUMNS = ["layer", "mean_loss", "mean_acc", "mean_grad_norm", "slack_satisfaction", "decay_ratio"]


@dataclass
class EvalReport:
    """Per-dataset, per-layer measurements on the test shards.

    Arrays are indexed ``[dataset, layer]`` with layers ``0..L`` (``1..L``
    for slacks).
    """

    layer_acc: np.ndarray
    layer_loss: np.ndarray
    grad_norms: np.ndarray
    slacks: np.ndarray
    epsilon: float
    meta: dict = field(default_factory=dict)

    @property
    def Q(self) -> int:
        return self.layer_acc.shape[0]

    @property
    def dataset_acc(self) -> np.ndarray:
        return self.layer_acc[:, -1]

    @property
    def mean_acc(self) -> np.ndarray:
        return self.layer_acc.mean(axis=0)

    @property
    def mean_loss(self) -> np.ndarray:
        return self.layer_loss.mean(axis=0)

    @property
    def mean_grad_norm(self) -> np.ndarray:
        return self.grad_norms.mean(axis=0)

    @property
    def slack_satisfaction(self) -> np.ndarray:
        return (self.slacks <= 0).mean(axis=0)

    @property
    def ratios(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.grad_norms[:, 1:] / self.grad_norms[:, :-1]

    @property
    def decay_ratio(self) -> np.ndarray:
        return self.ratios.mean(axis=0)

    @property
    def median_decay_ratio(self) -> np.ndarray:
        return np.median(self.ratios, axis=0)

    def summary(self) -> dict:
        return {
            "Q": self.Q,
            "epsilon": self.epsilon,
            "final_accuracy": float(self.mean_acc[-1]) if self.Q else None,
            "dataset_accuracy": self.dataset_acc.tolist(),
            "mean_acc": self.mean_acc.tolist() if self.Q else [],
            "mean_loss": self.mean_loss.tolist() if self.Q else [],
            "mean_grad_norm": self.mean_grad_norm.tolist() if self.Q else [],
            "slack_satisfaction": self.slack_satisfaction.tolist() if self.Q else [],
            "decay_ratio": self.decay_ratio.tolist() if self.Q else [],
            "median_decay_ratio": self.median_decay_ratio.tolist() if self.Q else [],
            **self.meta,
        }


def eval_w0(n_nodes: int, d: int, seed: int, q: int, mu0: float = 0.0, sigma0: float = 0.1) -> np.ndarray:
    """Initial weights used for meta-test dataset ``q`` (shared with the baselines)."""
    return init_w0(n_nodes, d, mu0, sigma0, seeding.derive(seed, seeding.W0, q))


def batch_seed(seed: int, q: int) -> int:
    return seeding.derive(seed, seeding.BATCH, q)


def stale_mask(n_nodes: int, n_asyn: int, seed: int, q: int, offset: int = 0) -> np.ndarray:
    """Random set of ``n_asyn`` data-holding rows that communicate one layer late."""
    n = n_nodes - offset
    if not 0 <= n_asyn <= n:
        raise ParameterError(f"n_asyn must lie in [0, {n}], got {n_asyn}")
    mask = np.zeros(n_nodes, dtype=bool)
    chosen = seeding.rng(seed, seeding.STALE, q).choice(n, size=n_asyn, replace=False)
    mask[offset + chosen] = True
    return mask


def _evaluate(theta, meta_test, S, seed, epsilon, mu0, sigma0, n_asyn=0) -> EvalReport:
    off = agent_offset(theta.mode)
    accs, losses, norms, slacks = [], [], [], []
    for q, ds in enumerate(meta_test):
        w0 = eval_w0(S.shape[0], theta.d, seed, q, mu0, sigma0)
        stale = stale_mask(S.shape[0], n_asyn, seed, q, off) if n_asyn else None
        traj = unrolled_forward(w0, ds, theta, S, batch_seed(seed, q), stale=stale)
        rows = [W[off:] for W in traj.W_seq]
        accs.append([task.accuracy(W, ds.test).mean() for W in rows])
        losses.append([task.global_loss(W, ds.test) for W in rows])
        cs = constraint_slacks(traj, ds, epsilon, theta.mode)
        norms.append(cs.norms)
        slacks.append(cs.s)
    L = theta.L
    shape = lambda k: (len(meta_test), k)  # noqa: E731
    return EvalReport(
        np.array(accs).reshape(shape(L + 1)),
        np.array(losses).reshape(shape(L + 1)),
        np.array(norms).reshape(shape(L + 1)),
        np.array(slacks).reshape(shape(L)),
        epsilon,
        {"n_asyn": n_asyn, "seed": seed},
    )


def meta_evaluate(
    theta: UnrolledParams,
    meta_test: MetaDataset,
    S: np.ndarray,
    seed: int = 0,
    *,
    epsilon: float = 0.05,
    mu0: float = 0.0,
    sigma0: float = 0.1,
) -> EvalReport:
    """Run the network on every meta-test dataset and measure each layer."""
    if meta_test.role != META_TEST:
        raise ParameterError(f"expected a meta-test dataset, got role {meta_test.role!r}")
    return _evaluate(theta, meta_test, S, seed, epsilon, mu0, sigma0)


def layer_diagnostics(theta, meta_test, S, epsilon: float, seed: int = 0, **kw) -> dict[str, np.ndarray]:
    """Per-layer fraction of datasets meeting the descent constraint, and decay ratios."""
    rep = meta_evaluate(theta, meta_test, S, seed, epsilon=epsilon, **kw)
    return {
        "satisfaction": rep.slack_satisfaction,
        "mean_decay_ratio": rep.decay_ratio,
        "median_decay_ratio": rep.median_decay_ratio,
    }


@dataclass
class AsyncResult:
    n_asyn: list[int]
    accuracy: np.ndarray
    loss: np.ndarray
    reports: list[EvalReport]

    def drops(self) -> np.ndarray:
        """Accuracy lost relative to the synchronous entry (``n_asyn = 0``)."""
        return self.accuracy[self.n_asyn.index(0)] - self.accuracy


def async_evaluate(
    theta: UnrolledParams,
    meta_test: MetaDataset,
    S: np.ndarray,
    n_asyn,
    seed: int = 0,
    *,
    epsilon: float = 0.05,
    mu0: float = 0.0,
    sigma0: float = 0.1,
) -> AsyncResult:
    """Final-layer accuracy and loss when ``n_asyn`` agents broadcast stale rows."""
    grid = [int(k) for k in np.atleast_1d(n_asyn)]
    reports = [_evaluate(theta, meta_test, S, seed, epsilon, mu0, sigma0, k) for k in grid]
    return AsyncResult(
        grid,
        np.array([r.mean_acc[-1] for r in reports]),
        np.array([r.mean_loss[-1] for r in reports]),
        reports,
    )


def gain_fraction(curve: np.ndarray) -> float:
    """Share of the total accuracy gain already reached one layer before the end."""
    total = curve[-1] - curve[0]
    if total <= 0:
        return float("nan")
    return float((curve[-2] - curve[0]) / total)


def ablation_compare(theta_constrained, theta_unconstrained, meta_test, S, seed: int = 0, **kw) -> dict:
    if (theta_constrained.L, theta_constrained.d, theta_constrained.b) != (
        theta_unconstrained.L, theta_unconstrained.d, theta_unconstrained.b
    ):
        raise ParameterError("models must share dimensions")
    rc = meta_evaluate(theta_constrained, meta_test, S, seed, **kw)
    ru = meta_evaluate(theta_unconstrained, meta_test, S, seed, **kw)
    return {
        "constrained": {"acc": rc.mean_acc, "loss": rc.mean_loss, "gain_fraction": gain_fraction(rc.mean_acc)},
        "unconstrained": {"acc": ru.mean_acc, "loss": ru.mean_loss, "gain_fraction": gain_fraction(ru.mean_acc)},
    }


def accuracy_naive(W: np.ndarray, ds: FLDataset) -> float:
    """Per-example loop over agents; a slow cross-check of the vectorized accuracy."""
    per_agent = []
    for i in range(ds.n):
        hits = 0
        for x, y in zip(ds.x_test[i], ds.y_test[i]):
            hits += int(np.argmax(task.predict(W[i], x)) == y)
        per_agent.append(hits / ds.m_test)
    return float(np.mean(per_agent))


def _fmt(v) -> str:
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else repr(float(v))


def emit_report(report: EvalReport, path_prefix) -> tuple[Path, Path]:
    """Write ``<prefix>.csv`` (one row per layer) and ``<prefix>.json``."""
    prefix = Path(path_prefix)
    csv_path, json_path = prefix.with_name(prefix.name + ".csv"), prefix.with_name(prefix.name + ".json")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        if report.Q:
            sat, ratio = report.slack_satisfaction, report.decay_ratio
            for l in range(report.layer_acc.shape[1]):
                w.writerow(
                    [l, _fmt(report.mean_loss[l]), _fmt(report.mean_acc[l]), _fmt(report.mean_grad_norm[l]),
                     _fmt(sat[l - 1] if l else None), _fmt(ratio[l - 1] if l else None)]
                )
    json_path.write_text(json.dumps(report.summary(), indent=2))
    return csv_path, json_path
