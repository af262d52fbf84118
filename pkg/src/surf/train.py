"""Primal-dual meta-training of the unrolled network.

Each iteration draws dataset(s) uniformly with replacement from the
meta-training set, differentiates the Lagrangian once, moves every layer's
parameters down the gradient (Adam by default) and moves the multipliers up
the slacks, projected onto the nonnegative orthant.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from surf import seeding
from surf.data import META_TRAIN, MetaDataset
from surf.errors import ConfigError, FormatError
from surf.grad import lagrangian_grad
from surf.unroll import DECENTRALIZED, STAR, UnrolledParams, init_params, init_w0

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    L: int = 5
    K: int = 2
    epochs: int = 1
    mu_theta: float = 1e-2
    mu_lambda: float = 1e-2
    epsilon: float = 0.05
    b_count: int = 4
    seed: int = 0
    mode: str = DECENTRALIZED
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    constraints_enabled: bool = True
    optimizer: str = "adam"
    meta_batch: int = 1
    iters_per_epoch: int | None = None
    mu0: float = 0.0
    sigma0: float = 0.1
    init_scale: float = 0.01
    identity_init: bool = False

    def __post_init__(self):
        self.adam_betas = tuple(float(b) for b in self.adam_betas)
        if not (self.mu_theta > 0 and self.mu_lambda > 0):
            raise ConfigError("step sizes must be positive")
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError("epsilon must lie in (0, 1)")
        if self.epochs < 0 or self.L < 1 or self.K < 0 or self.b_count < 1 or self.meta_batch < 1:
            raise ConfigError("epochs, L, K, b_count and meta_batch must be nonnegative/positive")
        if self.mode not in (DECENTRALIZED, STAR):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == STAR and self.K != 1:
            raise ConfigError("star mode requires K = 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if len(self.adam_betas) != 2 or not all(0.0 <= b < 1.0 for b in self.adam_betas):
            raise ConfigError("adam_betas must be two numbers in [0, 1)")

    @classmethod
    def from_dict(cls, obj: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigError(f"unknown train config keys: {unknown}")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["adam_betas"] = list(self.adam_betas)
        return out


@dataclass
class IterationRecord:
    iteration: int
    epoch: int
    dataset: int
    lagrangian: float
    objective: float
    slacks: list[float]
    lam: list[float]
    grad_norms: list[float]


@dataclass
class TrainHistory:
    records: list[IterationRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_list(self) -> list[dict]:
        return [asdict(r) for r in self.records]

    @classmethod
    def from_list(cls, rows: list[dict]) -> TrainHistory:
        return cls([IterationRecord(**r) for r in rows])

    def write_csv(self, path, L: int) -> None:
        header = ["iteration", "epoch", "dataset", "lagrangian", "objective"]
        header += [f"slack_{l}" for l in range(1, L + 1)] + [f"lambda_{l}" for l in range(1, L + 1)]
        header += [f"grad_norm_{l}" for l in range(L + 1)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in self.records:
                w.writerow(
                    [r.iteration, r.epoch, r.dataset, repr(r.lagrangian), repr(r.objective)]
                    + [repr(v) for v in r.slacks + r.lam + r.grad_norms]
                )


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, arrays: list[np.ndarray]) -> AdamState:
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0)


def adam_step(
    params: list[np.ndarray],
    state: AdamState,
    grads: list[np.ndarray],
    mu_theta: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps_hat: float = 1e-8,
) -> tuple[list[np.ndarray], AdamState]:
    """Bias-corrected Adam update, in place on ``params`` and ``state``."""
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= mu_theta * (m / c1) / (np.sqrt(v / c2) + eps_hat)
    return params, state


def sgd_step(params: list[np.ndarray], grads: list[np.ndarray], mu_theta: float) -> list[np.ndarray]:
    for p, g in zip(params, grads):
        p -= mu_theta * g
    return params


def dual_ascent_step(lam, slacks, mu_lambda: float) -> np.ndarray:
    """Projected ascent ``max(0, lam + mu * s)``."""
    return np.maximum(0.0, np.asarray(lam, dtype=float) + mu_lambda * np.asarray(slacks, dtype=float))


@dataclass
class TrainState:
    theta: UnrolledParams
    lam: np.ndarray
    adam: AdamState
    iteration: int = 0
    history: TrainHistory = field(default_factory=TrainHistory)


def init_state(cfg: TrainConfig, d: int, b: int) -> TrainState:
    theta = init_params(cfg.L, cfg.K, d, b, cfg.seed, cfg.mode, scale=cfg.init_scale, identity=cfg.identity_init)
    return TrainState(theta, np.zeros(cfg.L), AdamState.zeros_like(theta.arrays()))


def iterations_per_epoch(cfg: TrainConfig, Q: int) -> int:
    return cfg.iters_per_epoch or math.ceil(Q / cfg.meta_batch)


def _check(meta: MetaDataset, S: np.ndarray, cfg: TrainConfig) -> None:
    if meta.role != META_TRAIN:
        raise ConfigError(f"training needs a meta-train dataset, got role {meta.role!r}")
    if not len(meta):
        raise ConfigError("empty meta-training set")
    ds = meta[0]
    nodes = ds.n + (1 if cfg.mode == STAR else 0)
    if S.shape != (nodes, nodes):
        raise ConfigError(f"shift operator is {S.shape}, expected {(nodes, nodes)} for {ds.n} agents in {cfg.mode} mode")
    if cfg.b_count > ds.m_train or cfg.b_count * cfg.L < ds.m_train:
        raise ConfigError(f"b_count={cfg.b_count} incompatible with m_train={ds.m_train}, L={cfg.L}")


def train_iteration(state: TrainState, meta: MetaDataset, S: np.ndarray, cfg: TrainConfig) -> IterationRecord:
    t = state.iteration
    picks = seeding.rng(cfg.seed, seeding.PICK, t).integers(len(meta), size=cfg.meta_batch)
    lam = state.lam if cfg.constraints_enabled else np.zeros(cfg.L)
    total = None
    slack_sum = np.zeros(cfg.L)
    norm_sum = np.zeros(cfg.L + 1)
    value_sum = 0.0
    for j, q in enumerate(picks):
        s = seeding.derive(cfg.seed, seeding.BATCH, t, j)
        w0 = init_w0(S.shape[0], state.theta.d, cfg.mu0, cfg.sigma0, s)
        grads, slacks, value = lagrangian_grad(state.theta, lam, meta[int(q)], S, cfg.epsilon, s, w0=w0)
        flat = [a for lp in grads for a in lp.arrays()]
        total = flat if total is None else [x + y for x, y in zip(total, flat)]
        slack_sum += slacks.s
        norm_sum += slacks.norms
        value_sum += value
    k = float(cfg.meta_batch)
    grads = [g / k for g in total]
    slacks_mean = slack_sum / k
    params = state.theta.arrays()
    if cfg.optimizer == "adam":
        adam_step(params, state.adam, grads, cfg.mu_theta, cfg.adam_betas, cfg.adam_eps)
    else:
        sgd_step(params, grads, cfg.mu_theta)
    if cfg.constraints_enabled:
        state.lam = dual_ascent_step(state.lam, slacks_mean, cfg.mu_lambda)
    value = value_sum / k
    rec = IterationRecord(
        iteration=t,
        epoch=t // iterations_per_epoch(cfg, len(meta)),
        dataset=int(picks[0]),
        lagrangian=float(value),
        objective=float(value - lam @ slacks_mean),
        slacks=slacks_mean.tolist(),
        lam=state.lam.tolist(),
        grad_norms=(norm_sum / k).tolist(),
    )
    state.iteration += 1
    state.history.records.append(rec)
    return rec


def train(
    meta: MetaDataset,
    S: np.ndarray,
    cfg: TrainConfig,
    state: TrainState | None = None,
    on_epoch=None,
) -> TrainState:
    """Run (or resume) training until ``cfg.epochs`` epochs are complete.

    ``on_epoch(state)`` is called after every finished epoch.
    """
    _check(meta, S, cfg)
    ds = meta[0]
    if state is None:
        state = init_state(cfg, ds.d, cfg.b_count * (ds.p + ds.n_classes))
    per_epoch = iterations_per_epoch(cfg, len(meta))
    total = cfg.epochs * per_epoch
    while state.iteration < total:
        rec = train_iteration(state, meta, S, cfg)
        if state.iteration % per_epoch == 0:
            log.info("epoch %d objective %.4f lambda %s", rec.epoch, rec.objective, np.round(state.lam, 4))
            if on_epoch is not None:
                on_epoch(state)
    return state


def primal_dual_train(meta: MetaDataset, S: np.ndarray, cfg: TrainConfig) -> tuple[UnrolledParams, np.ndarray, TrainHistory]:
    state = train(meta, S, cfg)
    return state.theta, state.lam, state.history


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(state: TrainState, cfg: TrainConfig, path) -> None:
    obj = {
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "theta": state.theta.to_dict(),
        "lambda": state.lam.tolist(),
        "adam": {"t": state.adam.t, "m": [a.tolist() for a in state.adam.m], "v": [a.tolist() for a in state.adam.v]},
        "iteration": state.iteration,
        "history": state.history.to_list(),
    }
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(obj))
    tmp.replace(path)


def load_checkpoint(path) -> tuple[TrainState, TrainConfig]:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not a valid checkpoint ({exc})") from None
    if not isinstance(obj, dict) or obj.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {obj.get('version') if isinstance(obj, dict) else None!r}")
    try:
        cfg = TrainConfig.from_dict(obj["config"])
        theta = UnrolledParams.from_dict(obj["theta"])
        shapes = [a.shape for a in theta.arrays()]
        adam = AdamState(
            [np.array(a, dtype=float).reshape(s) for a, s in zip(obj["adam"]["m"], shapes)],
            [np.array(a, dtype=float).reshape(s) for a, s in zip(obj["adam"]["v"], shapes)],
            int(obj["adam"]["t"]),
        )
        state = TrainState(theta, np.array(obj["lambda"], dtype=float), adam, int(obj["iteration"]), TrainHistory.from_list(obj["history"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed checkpoint ({exc})") from None
    return state, cfg
