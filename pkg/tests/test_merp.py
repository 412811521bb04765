import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmrel import merp, synthetic
from mmrel.commonsense import CsExtractor
from mmrel.embedding import DocEmbeddings, EncoderConfig, FrameCache, embed_document
from mmrel.errors import ConfigError
from mmrel.eventgraph import HIERARCHICAL, IDENTICAL, NOREL, Relation
from mmrel.merp import (Batch, MerpConfig, MerpModel, PairFeatures, class_weights, classify_pair,
                        contextualize, interaction_features, pair_features, predict_doc_probs,
                        predict_graph, prune_identical)
from mmrel.nn import softmax, weighted_cross_entropy

from conftest import make_doc
from gradcheck import numeric_grad, rel_error


def tiny_model(d=8, use_ct=True, use_cs=True, use_ei=True, layers=1, seed=0, heads=2):
    cfg = MerpConfig(dim=d, ct_heads=heads, ct_layers=layers, use_ct=use_ct, use_cs=use_cs,
                     use_ei=use_ei, seed=seed)
    cs = CsExtractor.init(2 * d, out_dim=12, seed=seed).freeze() if use_cs else None
    return MerpModel.init(cfg, cs)


# ---------------------------------------------------------------- small pieces


def test_interaction_examples():
    ft = np.array([1.0, 2.0])
    sf, mf = interaction_features(ft, ft)
    np.testing.assert_array_equal(sf, [0, 0])
    np.testing.assert_array_equal(mf, ft ** 2)
    sf, mf = interaction_features(np.zeros(2), np.array([3.0, 4.0]))
    np.testing.assert_array_equal(sf, [-3, -4])
    np.testing.assert_array_equal(mf, [0, 0])
    sf, mf = interaction_features(ft, np.array([3.0, 4.0]))
    np.testing.assert_array_equal(sf, [-2, -2])
    np.testing.assert_array_equal(mf, [3, 8])
    with pytest.raises(ValueError):
        interaction_features(np.zeros(2), np.zeros(3))


def test_class_weight_examples():
    assert class_weights((100, 100, 100)) == (1.0, 1.0, 1.0)
    np.testing.assert_allclose(class_weights((10, 10, 80)), (10 / 3, 10 / 3, 5 / 12))
    w = class_weights((300, 248, 9452))
    assert w[2] == min(w)
    with pytest.raises(ValueError):
        class_weights((0, 3, 4))


def test_config_defaults_and_validation():
    c = MerpConfig()
    assert (c.lr, c.batch_size, c.epochs, c.ct_layers, c.max_video_events, c.prune_threshold) == \
        (1e-5, 1024, 15, 1, 77, 28.0)
    with pytest.raises(ConfigError):
        MerpConfig(ct_layers=0)
    with pytest.raises(ConfigError):
        MerpConfig(dim=10, ct_heads=3)
    with pytest.raises(ConfigError):
        MerpConfig.from_dict({"learning_rate": 1.0})


def test_input_widths():
    d = 8
    assert tiny_model(d, use_ct=False, use_cs=False, use_ei=False).input_width == 2 * d
    assert tiny_model(d).input_width == 4 * d + 12
    assert MerpModel.widths(MerpConfig(dim=512), 512) == (2560, 88)


# ---------------------------------------------------------------- contextual transformer


def test_truncation_to_cap():
    m = tiny_model()
    m = MerpModel(m.config.variant(max_video_events=5), {**m.params, "ct.pos": m.params["ct.pos"][:5]},
                  m.cs)
    out = contextualize([np.ones(8) * i for i in range(9)], m)
    assert len(out) == 5 and out[0].shape == (8,)
    with pytest.raises(ValueError):
        contextualize([], m)


def test_hundred_events_give_seventy_seven(rng):
    m = tiny_model()
    vids = list(rng.standard_normal((100, 8)))
    out = contextualize(vids, m)
    assert len(out) == 77
    np.testing.assert_allclose(np.stack(out), np.stack(contextualize(vids[:77], m)), atol=1e-12)


def test_single_event_is_value_path(rng):
    m = tiny_model()
    x = rng.standard_normal(8)
    h = x + m.params["ct.pos"][0]
    expect = h + (h @ m.params["ct.0.wv"]) @ m.params["ct.0.wo"]
    np.testing.assert_allclose(contextualize([x], m)[0], expect, atol=1e-12)


def test_ct_off_passes_raw_embeddings(rng):
    m = tiny_model(use_ct=False)
    vids = rng.standard_normal((4, 8))
    np.testing.assert_array_equal(np.stack(contextualize(list(vids), m)), vids)


# ---------------------------------------------------------------- classification


def test_classify_pair_probabilities(rng):
    m = tiny_model()
    feats = pair_features(rng.standard_normal(8), rng.standard_normal(8), m)
    p = classify_pair(feats, m)
    assert p.shape == (3,) and np.all(p >= 0) and abs(p.sum() - 1) < 1e-12
    np.testing.assert_array_equal(p, classify_pair(feats, m))
    basic = tiny_model(use_ct=False, use_cs=False, use_ei=False)
    bf = pair_features(np.ones(8), np.ones(8), basic)
    assert bf.concat().shape == (16,)
    with pytest.raises(ValueError):
        classify_pair(PairFeatures(np.ones(8), np.ones(8)), m)


def test_softmax_sums_to_one_on_many_inputs(rng):
    m = tiny_model()
    z = rng.standard_normal((10_000, m.input_width)) * 3
    p = softmax(m.head(z)[0])
    assert np.all(p >= 0)
    assert np.abs(p.sum(axis=1) - 1).max() < 1e-6


def test_weighted_cross_entropy_normalises_by_weight_sum():
    logits = np.zeros((2, 3))
    loss, _, wsum = weighted_cross_entropy(logits, np.array([0, 2]), (3.0, 1.0, 0.5))
    assert wsum == 3.5
    assert loss == pytest.approx(np.log(3))


def _batch(rng, d=8):
    # two documents (3 and 2 shots), five labelled pairs
    x = np.zeros((2, 3, d))
    x[0] = rng.standard_normal((3, d))
    x[1, :2] = rng.standard_normal((2, d))
    mask = np.array([[True, True, True], [True, True, False]])
    return Batch(x, mask, np.array([0, 0, 0, 1, 1]), np.array([0, 1, 2, 0, 1]),
                 rng.standard_normal((5, d)), np.array([0, 1, 2, 2, 0]))


@pytest.mark.parametrize("toggles", [dict(), dict(use_cs=False), dict(use_ei=False),
                                     dict(use_ct=False), dict(layers=2)])
def test_loss_gradients_match_finite_differences(rng, toggles):
    m = tiny_model(**toggles)
    batch = _batch(rng)
    w = (2.0, 1.5, 0.4)
    _, grads, _ = m.loss_and_grads(batch, w)
    for name in m.params:
        num = numeric_grad(lambda p: m.loss_and_grads(batch, w)[0], m.params, name)
        assert rel_error(grads[name], num) < 1e-4, name


def test_padding_does_not_leak(rng):
    m = tiny_model()
    b = _batch(rng)
    base = m.logits_for(b)
    b.x[1, 2] = 1e3
    np.testing.assert_allclose(m.logits_for(b), base, atol=1e-12)


# ---------------------------------------------------------------- pruning


def test_prune_examples():
    preds = [Relation("e1", "v1", IDENTICAL), Relation("e1", "v2", HIERARCHICAL),
             Relation("e2", "v1", IDENTICAL)]
    scores = {("e1", "v1"): 25.0, ("e1", "v2"): 10.0, ("e2", "v1"): 30.0}
    out = prune_identical(preds, scores)
    assert [r.label for r in out] == [NOREL, HIERARCHICAL, IDENTICAL]


@st.composite
def prediction_sets(draw):
    n = draw(st.integers(0, 30))
    preds, scores = [], {}
    for i in range(n):
        lab = draw(st.sampled_from([HIERARCHICAL, IDENTICAL, NOREL]))
        preds.append(Relation(f"e{i}", "v", lab))
        scores[(f"e{i}", "v")] = draw(st.floats(-100, 100))
    return preds, scores


@settings(max_examples=200, deadline=None)
@given(prediction_sets(), st.floats(-50, 60))
def test_pruning_contract(case, threshold):
    preds, scores = case
    out = prune_identical(preds, scores, threshold)
    assert len(out) == len(preds)
    for before, after in zip(preds, out):
        key = (before.text_event_id, before.video_event_id)
        assert (after.text_event_id, after.video_event_id) == key
        if before.label == IDENTICAL and scores[key] < threshold:
            assert after.label == NOREL
        else:
            assert after.label == before.label


# ---------------------------------------------------------------- training


@pytest.fixture(scope="module")
def trained():
    spec = synthetic.SyntheticSpec(n_docs=30, n_eval_docs=0, seed=3, dim=16)
    enc = synthetic.make_encoder(spec)
    cache = FrameCache(spec.fps)
    split = synthetic.generate_split(spec, 30, "m", enc, cache)
    cfg = EncoderConfig(dim=16)
    embs = {d.doc_id: embed_document(d, enc, cfg, cache) for d in split.docs}
    gold = {r.key: r.label for r in split.gold}
    mcfg = MerpConfig(dim=16, ct_heads=4, lr=0.05, batch_size=64, epochs=15, seed=1)
    cs = CsExtractor.init(32, out_dim=16, seed=0).freeze()
    res = merp.train(gold, split.docs, enc, cs, mcfg, embeddings=embs)
    return split, enc, embs, mcfg, cs, gold, res


def test_loss_decreases_and_history_length(trained):
    *_, res = trained
    assert len(res.history) == 15 and len(res.log_rows) == 15
    assert res.history[-1] < res.history[0]
    assert res.log_csv().splitlines()[0] == "epoch,weighted_loss,acc_hierarchical,acc_identical,acc_norel"


def test_training_is_deterministic(trained):
    split, enc, embs, mcfg, cs, gold, res = trained
    again = merp.train(gold, split.docs, enc, cs, mcfg, embeddings=embs)
    for k in res.model.params:
        np.testing.assert_array_equal(res.model.params[k], again.model.params[k])


def test_training_rejects_dim_mismatch(trained):
    split, enc, embs, mcfg, cs, gold, res = trained
    with pytest.raises(ConfigError):
        merp.train(gold, split.docs, enc, cs, mcfg.variant(dim=8, ct_heads=4))
    with pytest.raises(ConfigError):
        merp.train(gold, split.docs, enc, CsExtractor.init(8, seed=0).freeze(), mcfg, embeddings=embs)


def test_norel_ratio_and_adam_run(trained):
    split, enc, embs, mcfg, cs, gold, res = trained
    r = merp.train(gold, split.docs[:10], enc, cs, mcfg.variant(norel_ratio=1.0, optimizer="adam",
                                                               lr=1e-3, epochs=2),
                   embeddings=embs)
    assert r.class_counts[2] == sum(r.class_counts[:2])


def test_recovers_planted_relations(trained):
    split, enc, embs, mcfg, cs, gold, res = trained
    found = set()
    for d in split.docs:
        g = predict_graph(d, res.model, emb=embs[d.doc_id])
        found |= {(d.doc_id, r.text_event_id, r.video_event_id, r.label) for r in g.relations}
    planted_h = {k + (v,) for k, v in gold.items() if v == HIERARCHICAL}
    assert len(planted_h & found) >= 0.8 * len(planted_h)


def test_checkpoint_round_trip(tmp_path, trained):
    *_, res = trained
    res.model.save(tmp_path / "m.bin")
    back = MerpModel.load(tmp_path / "m.bin")
    assert back.config == res.model.config
    for k in res.model.params:
        np.testing.assert_array_equal(back.params[k], res.model.params[k])


# ---------------------------------------------------------------- inference


def _two_by_two(rng, d=8):
    doc = make_doc(sentences=(("a", "b"),), text=(("e1", 0, (0, 1)), ("e2", 0, (1, 2))))
    emb = DocEmbeddings(doc.doc_id, ["e1", "e2"], rng.standard_normal((2, d)), ["v1", "v2"],
                        rng.standard_normal((2, d)))
    return doc, emb


def test_predict_graph_bounds(rng):
    m = tiny_model()
    doc, emb = _two_by_two(rng)
    g = predict_graph(doc, m, emb=emb, prune=False)
    assert len(g.relations) <= 4
    assert all(r.label != NOREL for r in g.relations)
    m.params["head.b2"] = np.array([-50.0, -50.0, 50.0])
    assert predict_graph(doc, m, emb=emb).relations == ()


def test_shots_past_cap_are_ignored(rng):
    m = tiny_model()
    n = 80
    emb = DocEmbeddings("d", ["e1"], rng.standard_normal((1, 8)), [f"v{j}" for j in range(n)],
                        rng.standard_normal((n, 8)))
    emb2 = DocEmbeddings("d", ["e1"], emb.text, emb.video_ids[:77], emb.video[:77].copy())
    p = predict_doc_probs(m, emb)
    assert p.shape == (1, 77, 3)
    np.testing.assert_allclose(p, predict_doc_probs(m, emb2), atol=1e-12)
