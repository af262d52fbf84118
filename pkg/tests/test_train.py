import json

import numpy as np
import pytest

from surf import data, graph, train
from surf.errors import ConfigError, FormatError


@pytest.fixture(scope="module")
def tiny():
    meta = data.gen_meta_dataset(4, 2, 2, 6, 4, 3, 1.0, seed=1)
    S = graph.shift_operator(graph.make_regular(4, 3, 0))
    return meta, S


def cfg(**kw):
    base = dict(L=3, K=2, epochs=2, b_count=2, seed=5, mu_lambda=0.1)
    base.update(kw)
    return train.TrainConfig(**base)


def test_adam_first_step_moves_by_step_size():
    p = [np.array([1.0, -2.0, 3.0])]
    g = [np.array([0.5, -4.0, 0.0])]
    train.adam_step(p, train.AdamState.zeros_like(p), g, 0.1, eps_hat=0.0 + 1e-300)
    np.testing.assert_allclose(p[0], [0.9, -1.9, 3.0])


def test_adam_matches_reference_loop():
    g = np.random.default_rng(0)
    p = [g.standard_normal(4)]
    grads = [g.standard_normal(4) for _ in range(5)]
    ref, m, v = p[0].copy(), np.zeros(4), np.zeros(4)
    st = train.AdamState.zeros_like(p)
    for t, gr in enumerate(grads, 1):
        m = 0.9 * m + 0.1 * gr
        v = 0.999 * v + 0.001 * gr**2
        ref = ref - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        train.adam_step(p, st, [gr], 0.01)
    np.testing.assert_allclose(p[0], ref, rtol=1e-14)


def test_sgd_step():
    p = [np.array([1.0, 2.0])]
    train.sgd_step(p, [np.array([1.0, -1.0])], 0.5)
    np.testing.assert_array_equal(p[0], [0.5, 2.5])


def test_dual_ascent_projects():
    out = train.dual_ascent_step([0.0, 0.3, 1.0], [-1.0, -1.0, 2.0], 0.2)
    np.testing.assert_allclose(out, [0.0, 0.1, 1.4])


def test_history_length_and_epochs(tiny):
    meta, S = tiny
    st = train.train(meta, S, cfg())
    assert len(st.history) == 6 and st.iteration == 6
    assert st.history.column("epoch").tolist() == [0, 0, 0, 1, 1, 1]
    assert np.all(st.lam >= 0)


def test_zero_epochs_returns_initial(tiny):
    meta, S = tiny
    st = train.train(meta, S, cfg(epochs=0))
    init = train.init_state(cfg(), meta[0].d, 2 * (meta[0].p + meta[0].n_classes))
    assert st.theta.equals(init.theta) and len(st.history) == 0


def test_lambda_follows_recorded_slacks(tiny):
    meta, S = tiny
    st = train.train(meta, S, cfg())
    lam = np.zeros(3)
    for r in st.history.records:
        lam = np.maximum(0.0, lam + 0.1 * np.array(r.slacks))
        np.testing.assert_allclose(r.lam, lam, atol=1e-15)


def test_constraints_disabled_equals_objective_only(tiny):
    meta, S = tiny
    st = train.train(meta, S, cfg(constraints_enabled=False))
    assert np.all(st.lam == 0)
    hist = st.history
    np.testing.assert_array_equal(hist.column("lagrangian"), hist.column("objective"))


def test_determinism(tiny):
    meta, S = tiny
    a = train.train(meta, S, cfg())
    b = train.train(meta, S, cfg())
    assert a.theta.equals(b.theta)
    assert a.history.to_list() == b.history.to_list()


def test_checkpoint_roundtrip_and_resume(tiny, tmp_path):
    meta, S = tiny
    full = train.train(meta, S, cfg(epochs=4))
    half = train.train(meta, S, cfg(epochs=2))
    train.save_checkpoint(half, cfg(epochs=2), tmp_path / "c.json")
    state, c = train.load_checkpoint(tmp_path / "c.json")
    assert c == cfg(epochs=2)
    assert state.theta.equals(half.theta) and state.adam.t == half.adam.t
    resumed = train.train(meta, S, cfg(epochs=4), state=state)
    assert resumed.theta.equals(full.theta)
    np.testing.assert_array_equal(resumed.lam, full.lam)
    assert resumed.history.to_list() == full.history.to_list()


def test_checkpoint_errors(tiny, tmp_path):
    meta, S = tiny
    st = train.train(meta, S, cfg(epochs=1))
    path = tmp_path / "c.json"
    train.save_checkpoint(st, cfg(epochs=1), path)
    text = path.read_text()
    (tmp_path / "cut.json").write_text(text[: len(text) // 2])
    with pytest.raises(FormatError):
        train.load_checkpoint(tmp_path / "cut.json")
    obj = json.loads(text)
    obj["version"] = 7
    (tmp_path / "v.json").write_text(json.dumps(obj))
    with pytest.raises(FormatError):
        train.load_checkpoint(tmp_path / "v.json")
    del obj["theta"]
    obj["version"] = 1
    (tmp_path / "k.json").write_text(json.dumps(obj))
    with pytest.raises(FormatError):
        train.load_checkpoint(tmp_path / "k.json")


def test_identity_init_lambda_grows(tiny):
    meta, S = tiny
    st = train.train(meta, S, cfg(epochs=3, identity_init=True, mu_theta=1e-4))
    lam = np.array(st.history.column("lam"))
    assert np.all(np.diff(np.vstack([np.zeros(3), lam[:9]]), axis=0) > 0)


def test_meta_batch_averages(tiny):
    meta, S = tiny
    st = train.train(meta, S, cfg(meta_batch=3, epochs=1))
    assert len(st.history) == 1


@pytest.mark.parametrize(
    "kw",
    [dict(epsilon=0.0), dict(epsilon=1.0), dict(mu_theta=0.0), dict(optimizer="rmsprop"), dict(mode="star", K=2), dict(L=0)],
)
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        cfg(**kw)


def test_config_unknown_key():
    with pytest.raises(ConfigError):
        train.TrainConfig.from_dict({"lr": 0.1})


def test_train_rejects_bad_inputs(tiny):
    meta, S = tiny
    with pytest.raises(ConfigError):
        train.train(data.MetaDataset(meta.datasets, data.META_TEST), S, cfg())
    with pytest.raises(ConfigError):
        train.train(meta, np.eye(5), cfg())
    with pytest.raises(ConfigError):
        train.train(meta, S, cfg(b_count=1))
