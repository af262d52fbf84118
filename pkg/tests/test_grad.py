import numpy as np
import pytest

from surf import data, graph, grad, task, unroll
from surf.errors import ParameterError, StateError


def problem(mode=unroll.DECENTRALIZED, L=3, K=2, seed=0):
    ds = data.gen_meta_dataset(4, 2, 2, 2 * L, 5, 1, 1.0, seed=seed)[0]  # d = 6
    if mode == unroll.STAR:
        S = graph.shift_operator(graph.make_star(5), graph.STAR_ROW)
    else:
        S = graph.shift_operator(graph.make_regular(4, 3, 0))
    theta = unroll.init_params(L, K, ds.d, 2 * (ds.p + ds.n_classes), seed=seed, mode=mode, scale=0.3)
    batches = data.sample_layer_batches(ds, L, 2, seed=seed + 1)
    w0 = unroll.init_w0(S.shape[0], ds.d, 0.0, 1.0, seed=seed + 2)
    lam = np.random.default_rng(seed).uniform(0.0, 2.0, L)
    return ds, S, theta, batches, w0, lam


def fd_check(ds, S, theta, batches, w0, lam, eps=0.05, h=1e-6):
    grads, _, _ = grad.lagrangian_grad(theta, lam, ds, S, eps, w0=w0, batches=batches)
    worst = 0.0
    for l, lp in enumerate(theta.layers):
        for name in ("h", "M", "c"):
            arr = getattr(lp, name)
            G = getattr(grads[l], name)
            for idx in np.ndindex(*arr.shape):
                orig = arr[idx]
                arr[idx] = orig + h
                fp = grad.lagrangian(theta, lam, ds, S, eps, w0=w0, batches=batches)[0]
                arr[idx] = orig - h
                fm = grad.lagrangian(theta, lam, ds, S, eps, w0=w0, batches=batches)[0]
                arr[idx] = orig
                F = (fp - fm) / (2 * h)
                worst = max(worst, abs(G[idx] - F) / max(abs(F), 1e-3))
    return worst


def test_lagrangian_grad_finite_differences():
    assert fd_check(*problem()) <= 1e-4


def test_lagrangian_grad_star_mode():
    assert fd_check(*problem(unroll.STAR, L=2, K=1)) <= 1e-4


def test_lagrangian_is_affine_in_lambda_and_dual_partial_is_slack():
    ds, S, theta, batches, w0, lam = problem()
    v0, slacks, _ = grad.lagrangian(theta, np.zeros(3), ds, S, 0.05, w0=w0, batches=batches)
    for l in range(3):
        e = np.zeros(3)
        e[l] = 1.0
        v1 = grad.lagrangian(theta, e, ds, S, 0.05, w0=w0, batches=batches)[0]
        assert v1 - v0 == pytest.approx(slacks.s[l], abs=1e-12)
    v = grad.lagrangian(theta, lam, ds, S, 0.05, w0=w0, batches=batches)[0]
    assert v == pytest.approx(v0 + lam @ slacks.s, abs=1e-12)


def test_slacks_definition():
    ds, S, theta, batches, w0, _ = problem()
    _, slacks, traj = grad.lagrangian(theta, np.zeros(3), ds, S, 0.1, w0=w0, batches=batches)
    N = [task.grad_norm(W, ds.test) for W in traj.W_seq]
    np.testing.assert_allclose(slacks.norms, N)
    np.testing.assert_allclose(slacks.s, [N[l] - 0.9 * N[l - 1] for l in range(1, 4)])
    np.testing.assert_allclose(slacks.decay_ratios, [N[l] / N[l - 1] for l in range(1, 4)])


def test_zero_lambda_gives_objective_gradient():
    ds, S, theta, batches, w0, _ = problem()
    _, _, value = grad.lagrangian_grad(theta, np.zeros(3), ds, S, 0.05, w0=w0, batches=batches)
    traj = unroll.unrolled_forward(w0, ds, theta, S, batches=batches)
    assert value == pytest.approx(task.global_loss(traj.W_seq[-1], ds.test), abs=1e-14)


def test_layer_vjp_needs_cache():
    ds, S, theta, *_ = problem()
    with pytest.raises(StateError):
        grad.layer_vjp(np.zeros((4, 6)), None, theta.layers[0], S)


def test_input_validation():
    ds, S, theta, batches, w0, _ = problem()
    for eps in (0.0, 1.0):
        with pytest.raises(ParameterError):
            grad.lagrangian(theta, np.zeros(3), ds, S, eps, w0=w0, batches=batches)
    with pytest.raises(ParameterError):
        grad.lagrangian(theta, np.array([0.1, -0.1, 0.0]), ds, S, 0.05, w0=w0, batches=batches)
    with pytest.raises(ParameterError):
        grad.lagrangian(theta, np.zeros(2), ds, S, 0.05, w0=w0, batches=batches)
