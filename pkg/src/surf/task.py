"""Per-agent softmax regression: loss, analytic gradient and Hessian-vector products.

Stacked weights ``W`` are ``(n, d)`` with ``d = (p + 1) * C``; row ``i``
reshapes row-major to agent ``i``'s ``(p + 1, C)`` weight matrix whose last
row multiplies a constant bias input of 1. A shard is a pair ``(x, y)`` with
``x`` of shape ``(n, m, p)`` and integer labels ``y`` of shape ``(n, m)``.
"""

from __future__ import annotations

import numpy as np

from surf.errors import ParameterError

TOL_NORM = 1e-10


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def augment(x: np.ndarray) -> np.ndarray:
    return np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1)


def n_classes_of(W: np.ndarray, p: int) -> int:
    d = W.shape[-1]
    if d % (p + 1):
        raise ParameterError(f"weight dimension {d} is not a multiple of p + 1 = {p + 1}")
    return d // (p + 1)


def predict(w_i: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Class probabilities of one agent's classifier at a single input ``x``."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(w_i, dtype=float).reshape(x.shape[-1] + 1, -1)
    return softmax(augment(x) @ theta)


def _logits(W, shard):
    x, _ = shard
    if x.ndim != 3 or x.shape[1] == 0:
        raise ParameterError("every agent needs a non-empty shard")
    if W.shape[0] != x.shape[0]:
        raise ParameterError(f"W has {W.shape[0]} rows but the shard has {x.shape[0]} agents")
    p = x.shape[2]
    C = n_classes_of(W, p)
    return augment(x) @ W.reshape(W.shape[0], p + 1, C)


def _prep(W, shard):
    x, y = shard
    probs = softmax(_logits(W, shard))
    C = probs.shape[-1]
    xt = augment(x)
    return xt, probs, np.eye(C)[y], C


def agent_losses(W: np.ndarray, shard) -> np.ndarray:
    """Mean cross-entropy of each agent on its own shard."""
    _, y = shard
    z = _logits(W, shard)
    zmax = z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z - zmax).sum(axis=-1)) + zmax[..., 0]
    picked = np.take_along_axis(z, y[..., None], axis=-1)[..., 0]
    return (lse - picked).mean(axis=1)


def global_loss(W: np.ndarray, shard) -> float:
    """``(1/n) * sum_i f_i(w_i)`` with ``f_i`` the mean cross-entropy."""
    return float(agent_losses(W, shard).mean())


def global_grad(W: np.ndarray, shard) -> np.ndarray:
    """Gradient of :func:`global_loss` w.r.t. ``W`` (keeps the ``1/n`` factor)."""
    xt, probs, onehot, C = _prep(W, shard)
    n, m = xt.shape[:2]
    g = xt.transpose(0, 2, 1) @ (probs - onehot) / (n * m)
    return g.reshape(n, -1)


def hessian_vector(W: np.ndarray, shard, V: np.ndarray) -> np.ndarray:
    """Product of the (block-diagonal) Hessian of :func:`global_loss` with ``V``."""
    if V.shape != W.shape:
        raise ParameterError(f"V has shape {V.shape}, expected {W.shape}")
    xt, probs, _, C = _prep(W, shard)
    n, m, q = xt.shape
    u = xt @ V.reshape(n, q, C)
    r = probs * (u - (probs * u).sum(axis=-1, keepdims=True))
    return (xt.transpose(0, 2, 1) @ r / (n * m)).reshape(n, -1)


def grad_norm(W: np.ndarray, shard) -> float:
    """Frobenius norm of :func:`global_grad`."""
    return float(np.linalg.norm(global_grad(W, shard)))


def grad_norm_backward(W: np.ndarray, shard, tol_norm: float = TOL_NORM) -> tuple[np.ndarray, bool]:
    """Gradient of ``||grad f(W)||`` w.r.t. ``W``.

    Returns ``(H g / ||g||, False)``, or a zero matrix and ``True`` when the
    gradient norm is below ``tol_norm`` (where the norm is not differentiable).
    """
    g = global_grad(W, shard)
    nrm = np.linalg.norm(g)
    if nrm <= tol_norm:
        return np.zeros_like(W), True
    return hessian_vector(W, shard, g / nrm), False


def accuracy(W: np.ndarray, shard) -> np.ndarray:
    """Per-agent accuracy of row ``i`` of ``W`` on agent ``i``'s shard."""
    _, y = shard
    z = _logits(W, shard)
    return (z.argmax(axis=-1) == y).mean(axis=1)
