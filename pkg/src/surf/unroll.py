"""The unrolled DGD network: graph filter minus a shared one-layer perceptron.

In ``star`` mode node 0 is a data-less server whose row is a single filter tap
on its shift-operator row; the remaining nodes hold data and use the
decentralized layer with ``K = 1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from surf import seeding
from surf.data import FLDataset, sample_layer_batches
from surf.errors import ConfigError, FormatError, ParameterError

DECENTRALIZED = "decentralized"
STAR = "star"
PARAMS_VERSION = 1


@dataclass
class LayerParams:
    h: np.ndarray  # (K + 1,) filter taps
    M: np.ndarray  # (d, d + b) perceptron weights, shared by all agents
    c: np.ndarray  # (d,) perceptron bias

    def arrays(self) -> list[np.ndarray]:
        return [self.h, self.M, self.c]

    def copy(self) -> LayerParams:
        return LayerParams(self.h.copy(), self.M.copy(), self.c.copy())


@dataclass
class UnrolledParams:
    layers: list[LayerParams]
    K: int
    mode: str = DECENTRALIZED

    def __post_init__(self):
        if self.mode not in (DECENTRALIZED, STAR):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == STAR and self.K != 1:
            raise ConfigError("star mode requires K = 1")
        for lp in self.layers:
            if lp.h.shape != (self.K + 1,):
                raise ConfigError(f"filter taps have shape {lp.h.shape}, expected ({self.K + 1},)")
            if lp.M.shape != self.layers[0].M.shape or lp.c.shape != (lp.M.shape[0],):
                raise ConfigError("layers disagree on perceptron dimensions")
            if lp.M.shape[1] < lp.M.shape[0]:
                raise ConfigError("perceptron input must be at least d wide")

    @property
    def L(self) -> int:
        return len(self.layers)

    @property
    def d(self) -> int:
        return self.layers[0].M.shape[0]

    @property
    def b(self) -> int:
        return self.layers[0].M.shape[1] - self.d

    def arrays(self) -> list[np.ndarray]:
        return [a for lp in self.layers for a in lp.arrays()]

    def copy(self) -> UnrolledParams:
        return UnrolledParams([lp.copy() for lp in self.layers], self.K, self.mode)

    def equals(self, other: UnrolledParams) -> bool:
        return (
            (self.K, self.mode, self.L) == (other.K, other.mode, other.L)
            and all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))
        )

    def to_dict(self) -> dict:
        return {
            "version": PARAMS_VERSION,
            "L": self.L, "K": self.K, "d": self.d, "b": self.b, "mode": self.mode,
            "layers": [{"h": lp.h.tolist(), "M": lp.M.tolist(), "c": lp.c.tolist()} for lp in self.layers],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> UnrolledParams:
        if obj.get("version") != PARAMS_VERSION:
            raise FormatError(f"unsupported parameter version {obj.get('version')!r}")
        try:
            layers = [
                LayerParams(np.array(lp["h"], dtype=float), np.array(lp["M"], dtype=float), np.array(lp["c"], dtype=float))
                for lp in obj["layers"]
            ]
            out = cls(layers, int(obj["K"]), obj["mode"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed parameters: {exc}") from None
        if (out.L, out.d, out.b) != (obj["L"], obj["d"], obj["b"]):
            raise FormatError("parameter dimensions do not match the recorded header")
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict())


def agent_offset(mode: str) -> int:
    """Index of the first data-holding row of ``W``."""
    return 1 if mode == STAR else 0


def init_w0(n: int, d: int, mu0: float = 0.0, sigma0: float = 0.1, seed: int = 0) -> np.ndarray:
    if sigma0 < 0:
        raise ParameterError("sigma0 must be nonnegative")
    return mu0 + sigma0 * seeding.rng(seed, seeding.W0).standard_normal((n, d))


def init_params(
    L: int, K: int, d: int, b: int, seed: int = 0, mode: str = DECENTRALIZED, *, scale: float = 0.01, identity: bool = False
) -> UnrolledParams:
    """Taps ``1/(K+1)`` and small Gaussian perceptron weights.

    ``identity=True`` gives identity layers instead (``h = e_0``, ``M = 0``,
    ``c = 0``), a network that never moves its input.
    """
    if min(K, d, b) < 0 or d == 0 or L < 0:
        raise ParameterError("dimensions must be positive")
    if mode == STAR and K != 1:
        raise ConfigError("star mode requires K = 1")
    g = seeding.rng(seed, seeding.INIT)
    layers = []
    for _ in range(L):
        if identity:
            h = np.zeros(K + 1)
            h[0] = 1.0
            layers.append(LayerParams(h, np.zeros((d, d + b)), np.zeros(d)))
        else:
            layers.append(
                LayerParams(np.full(K + 1, 1.0 / (K + 1)), scale * g.standard_normal((d, d + b)), scale * g.standard_normal(d))
            )
    return UnrolledParams(layers, K, mode)


def graph_filter(S: np.ndarray, W: np.ndarray, h) -> np.ndarray:
    """``sum_k h[k] S^k W`` using ``K`` successive shifts."""
    out = h[0] * W
    z = W
    for hk in h[1:]:
        z = S @ z
        out = out + hk * z
    return out


def relu(z):
    return np.maximum(z, 0.0)


@dataclass
class LayerCache:
    shifted: list[np.ndarray]  # S^k applied to the communicated rows, k = 1..K
    w_prev: np.ndarray
    inputs: np.ndarray  # [w_prev || batch] per row
    z: np.ndarray  # perceptron pre-activation
    active: np.ndarray  # rows with data (self tap and perceptron apply)


def _layer(W_prev, B, lp, S, mode, W_comm=None):
    if W_comm is None:
        W_comm = W_prev
    n = W_prev.shape[0]
    active = np.ones(n, dtype=bool)
    if mode == STAR:
        if lp.h.shape[0] != 2:
            raise ConfigError("star mode requires K = 1")
        active[0] = False
    elif mode != DECENTRALIZED:
        raise ConfigError(f"unknown mode {mode!r}")
    shifted = []
    z = W_comm
    for _ in range(len(lp.h) - 1):
        z = S @ z
        shifted.append(z)
    out = lp.h[0] * (W_prev * active[:, None])
    for hk, sk in zip(lp.h[1:], shifted):
        out = out + hk * sk
    inputs = np.concatenate([W_prev, B], axis=1)
    pre = inputs @ lp.M.T + lp.c
    out = out - relu(pre) * active[:, None]
    return out, LayerCache(shifted, W_prev, inputs, pre, active)


def udgd_layer(W_prev, B_l, lp: LayerParams, S, mode: str = DECENTRALIZED, W_comm=None) -> np.ndarray:
    """One unrolled layer.

    Row ``i`` is ``[H(W_prev)]_i - relu(M [w_i || b_i] + c)``. ``W_comm``,
    when given, replaces ``W_prev`` as the rows neighbors receive (the
    self tap and the perceptron still see ``W_prev``).
    """
    return _layer(W_prev, B_l, lp, S, mode, W_comm)[0]


@dataclass
class Trajectory:
    W_seq: list[np.ndarray]
    batches: np.ndarray
    cache: list[LayerCache] | None = field(default=None, repr=False)

    @property
    def L(self) -> int:
        return len(self.W_seq) - 1


def pad_batches(batches: np.ndarray, mode: str) -> np.ndarray:
    """Prepend a zero server row in star mode."""
    if mode != STAR:
        return batches
    return np.concatenate([np.zeros((batches.shape[0], 1, batches.shape[2])), batches], axis=1)


def b_count_for(theta: UnrolledParams, dataset: FLDataset) -> int:
    width = dataset.p + dataset.n_classes
    if theta.b % width:
        raise ConfigError(f"batch width {theta.b} is not a multiple of p + C = {width}")
    if theta.d != dataset.d:
        raise ConfigError(f"network expects d={theta.d}, dataset has d={dataset.d}")
    return theta.b // width


def unrolled_forward(
    W_0: np.ndarray,
    dataset: FLDataset,
    theta: UnrolledParams,
    S: np.ndarray,
    seed: int = 0,
    record: bool = False,
    *,
    batches: np.ndarray | None = None,
    stale: np.ndarray | None = None,
) -> Trajectory:
    """Run all ``L`` layers on batches drawn from the train shards.

    ``stale`` is a boolean mask over rows; those rows reach their neighbors
    one layer late (the value from ``W_{l-2}``, or ``W_0`` at the first
    layer).
    """
    if W_0.shape[0] != S.shape[0]:
        raise ConfigError(f"W_0 has {W_0.shape[0]} rows but S is {S.shape}")
    if theta.L == 0:
        return Trajectory([W_0], np.zeros((0, dataset.n, 0)), [] if record else None)
    if batches is None:
        batches = sample_layer_batches(dataset, theta.L, b_count_for(theta, dataset), seed)
    B = pad_batches(batches, theta.mode)
    if B.shape != (theta.L, S.shape[0], theta.b):
        raise ConfigError(f"batches have shape {B.shape}, expected {(theta.L, S.shape[0], theta.b)}")
    W_seq = [W_0]
    caches = [] if record else None
    prev_prev = W_0
    for l, lp in enumerate(theta.layers):
        W_prev = W_seq[-1]
        W_comm = None
        if stale is not None and stale.any():
            W_comm = np.where(stale[:, None], prev_prev, W_prev)
        W_next, cache = _layer(W_prev, B[l], lp, S, theta.mode, W_comm)
        if record:
            caches.append(cache)
        prev_prev = W_prev
        W_seq.append(W_next)
    return Trajectory(W_seq, batches, caches)


def communication_rounds(theta: UnrolledParams) -> int:
    return theta.L * theta.K
