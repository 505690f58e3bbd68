import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from causalcap import predictor as pr
from causalcap.capacity import capacity_map
from causalcap.errors import BadDims, BadInput, EmptyLabels, NoSegments, TooFewSubgoals, Untrained
from causalcap.mazes import load_builtin
from causalcap.mdpcore import GridEnv
from causalcap.sampler import TrajectorySet, rollout_random
from causalcap.subgoals import Subgoal, SubgoalSet, build_subgoal_graph, select_subgoals


@pytest.fixture(scope="module")
def demo():
    env = GridEnv(load_builtin("demo"))
    tr = rollout_random(env, 500, 600, seed=0)
    graph = build_subgoal_graph(tr, select_subgoals(capacity_map(tr)), env)
    model = pr.init_model(2, 16, 64, 2, seed=0, bounds=env.bounds())
    pr.pretrain_encoder(model, tr.states, graph.subgoals, steps=1000, lr=0.01, batch=256, seed=0)
    pr.train_predictor(model, tr, graph.subgoals, horizon=50, steps=4000, lr=0.2, batch=500, seed=1)
    return env, tr, graph, model


def test_gradient_checks():
    errs = pr.gradient_check(0)
    assert set(errs) == {"pretrain", "predictor_hit", "predictor_miss"}
    assert max(errs.values()) < 1e-4


def test_same_seed_same_parameters():
    a, b = pr.init_model(seed=3), pr.init_model(seed=3)
    for x, y in zip(pr._blocks(a), pr._blocks(b)):
        np.testing.assert_array_equal(x, y)


@given(st.integers(1, 5), st.integers(0, 1000))
def test_encoder_output_shape(n, seed):
    m = pr.init_model(2, 64, 32, 2, seed=seed)
    assert m.embed(np.random.default_rng(seed).normal(size=(n, 2))).shape == (n, 64)


def test_zero_input_finite():
    m = pr.init_model()
    assert np.isfinite(m.embed(np.zeros((1, 2)))).all()
    assert np.isfinite(m.predict_embedding(np.zeros((1, 2)))).all()


def test_bad_dims():
    with pytest.raises(BadDims):
        pr.init_model(2, 0)
    with pytest.raises(BadDims):
        pr.init_model(bounds=(np.zeros(2), np.zeros(2)))


@given(st.integers(0, 1000), st.floats(0.1, 100))
def test_cosine_scale_invariant(seed, scale):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(4, 8)), rng.normal(size=(4, 8))
    np.testing.assert_allclose(pr.cosine(scale * x, y), pr.cosine(x, y), atol=1e-9)
    assert np.all(np.abs(pr.cosine(x, y)) <= 1 + 1e-12)


def test_cosine_self_is_one(rng):
    x = rng.normal(size=(5, 3))
    np.testing.assert_allclose(pr.cosine(x, x), 1.0)


def test_pure_autoencoder_recon_decreases(rng):
    m = pr.init_model(2, 8, 16, 2, seed=1)
    x = rng.uniform(-1, 1, size=(64, 2))
    g = rng.uniform(-1, 1, size=(3, 2))
    w = pr.LossWeights(1.0, 0.0)
    losses = []
    for _ in range(100):
        _, recon, _, (edw, edb, ddw, ddb) = pr.pretrain_loss(m, x, g, w)
        losses.append(recon)
        m.encoder.sgd(edw, edb, 1e-3)
        m.decoder.sgd(ddw, ddb, 1e-3)
    assert np.all(np.diff(losses) < 0)


def test_subgoal_similarity_driven_down():
    m = pr.init_model(2, 16, 32, 2, seed=2)
    anchors = np.array([[-0.5, 0.3], [0.6, -0.2]])
    curves = pr.pretrain_encoder(m, anchors, anchors, pr.LossWeights(0.0, 1.0), steps=300, lr=0.05, batch=2)
    sim = curves["sim"]
    assert np.all(np.diff(sim) <= 1e-12)
    assert sim[-1] < -0.9


def test_pretrain_needs_two_subgoals():
    with pytest.raises(TooFewSubgoals):
        pr.pretrain_encoder(pr.init_model(), np.zeros((4, 2)), np.zeros((1, 2)), steps=1)


def test_pretrain_needs_states():
    with pytest.raises(BadInput):
        pr.pretrain_encoder(pr.init_model(), np.zeros((0, 2)), np.eye(2), steps=1)


def _segment_model():
    m = pr.init_model(2, 4, 8, 1, seed=0, bounds=(np.zeros(2), np.full(2, 10.0)))
    subs = SubgoalSet([Subgoal(0, (1.0, 1.0), 1.1), Subgoal(1, (1.0, 9.0), 1.1)])
    pr.set_subgoals(m, subs)
    return m, subs


def _line(cells):
    cells = np.asarray(cells, dtype=np.int64)
    n = len(cells) - 1
    return TrajectorySet("discrete", np.zeros(n, np.int64), np.arange(n), cells[:-1], np.zeros((n, 2), np.int64),
                         cells[1:], np.zeros(n), np.zeros(n, bool))


def test_segment_hit_at_start_is_single_term():
    m, subs = _segment_model()
    idx = pr.segment_index(_line([(1, 1), (1, 2), (1, 3), (1, 4)]), subs, 3)
    rows, tg, wt = pr.segment_targets(m, idx, [0], 3)
    np.testing.assert_array_equal(rows, [0])
    np.testing.assert_array_equal(wt, [1.0])
    np.testing.assert_array_equal(tg[0], m.subgoal_table[0])


def test_segment_hit_weights():
    m, subs = _segment_model()
    idx = pr.segment_index(_line([(1, 6), (1, 7), (1, 8), (1, 9), (1, 8)]), subs, 4)
    rows, tg, wt = pr.segment_targets(m, idx, [0], 4)
    np.testing.assert_array_equal(rows, [0, 1, 2, 3])
    np.testing.assert_allclose(wt, 0.25)
    assert (tg == m.subgoal_table[1]).all()


def test_segment_miss_uses_own_last_output():
    m, subs = _segment_model()
    tr = _line([(1, 3), (1, 4), (1, 5), (1, 6), (1, 5)])
    idx = pr.segment_index(tr, subs, 4)
    rows, tg, wt = pr.segment_targets(m, idx, [0], 4)
    np.testing.assert_allclose(wt, 0.25)
    loss, _ = pr.predictor_loss(m, m.normalize(idx.states[rows]), tg, wt, 1)
    last_term = -wt[-1] * pr.cosine(m.predict_embedding(idx.states[rows[-1]]), tg[-1:])[0]
    assert last_term == pytest.approx(-0.25)
    assert -1 - 1e-12 <= loss <= 1 + 1e-12


def test_no_segments():
    _, subs = _segment_model()
    with pytest.raises(NoSegments):
        pr.segment_index(_line([(1, 3), (1, 4)]), subs, 5)


def test_untrained_errors():
    m = pr.init_model()
    with pytest.raises(Untrained):
        pr.predict_subgoal(m, (0.0, 0.0))


def test_clip_gradients_bounds_norm(rng):
    grads = [rng.normal(size=(3, 4)) * 10, rng.normal(size=4) * 10]
    out = pr.clip_gradients(grads, 1.0)
    assert np.sqrt(sum((g * g).sum() for g in out)) == pytest.approx(1.0)
    assert pr.clip_gradients(grads, None) is grads


def test_demo_region_accuracy(demo):
    env, _, graph, model = demo
    pts, labels = pr.labeled_states(graph, env)
    assert pr.eval_accuracy(model, pts, labels) > 0.9


def test_anchor_predicts_its_subgoal(demo):
    _, _, graph, model = demo
    for g in graph.subgoals:
        assert pr.predict_subgoal(model, g.anchor) == g.id


def test_dead_end_predicts_region_owner(demo):
    env, _, graph, model = demo
    dead_ends = [c for c in env.maze.free_cells if env.maze.degree(c) == 1]
    hits = [pr.predict_subgoal(model, c) == graph.regions[c] for c in dead_ends]
    assert np.mean(hits) >= 0.8


def test_prediction_stable(demo):
    _, _, _, model = demo
    s = (5.0, 5.0)
    assert len({pr.predict_subgoal(model, s) for _ in range(5)}) == 1


def test_self_labels_give_full_accuracy(demo):
    env, _, graph, model = demo
    pts, _ = pr.labeled_states(graph, env)
    assert pr.eval_accuracy(model, pts, pr.predict_many(model, pts)) == 1.0


def test_empty_labels(demo):
    with pytest.raises(EmptyLabels):
        pr.eval_accuracy(demo[3], np.zeros((0, 2)), [])


def test_untrained_accuracy_near_chance():
    k = 4
    rng = np.random.default_rng(0)
    accs = []
    for seed in range(40):
        m = pr.init_model(2, 8, 16, 2, seed=seed)
        anchors = rng.uniform(-1, 1, size=(k, 2))
        pr.set_subgoals(m, anchors)
        pts = rng.uniform(-1, 1, size=(200, 2))
        accs.append(pr.eval_accuracy(m, pts, rng.integers(k, size=200)))
    assert abs(np.mean(accs) - 1 / k) < 0.03


def test_save_load_roundtrip(demo, tmp_path):
    model = demo[3]
    p = tmp_path / "m.bin"
    pr.save_model(p, model)
    back = pr.load_model(p)
    for a, b in zip(pr._blocks(model), pr._blocks(back)):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(back.subgoal_table, model.subgoal_table)
    pr.save_model(tmp_path / "m2.bin", back)
    assert (tmp_path / "m2.bin").read_bytes() == p.read_bytes()


def test_load_rejects_garbage(tmp_path):
    p = tmp_path / "m.bin"
    p.write_bytes(b"nope")
    with pytest.raises(BadInput):
        pr.load_model(p)
    pr.save_model(p, pr.init_model(2, 4, 4, 1))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(BadInput):
        pr.load_model(p)
