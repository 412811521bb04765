import pytest

from mmrel import synthetic
from mmrel.embedding import EncoderConfig, FrameCache, embed_document, similarity
from mmrel.errors import ConfigError
from mmrel.eventgraph import IDENTICAL, validate_document


def generate(**kw):
    spec = synthetic.SyntheticSpec(**kw)
    enc = synthetic.make_encoder(spec)
    cache = FrameCache(spec.fps)
    return spec, enc, cache, synthetic.generate_split(spec, spec.n_docs, "g", enc, cache)


def test_documents_are_valid_and_gold_resolves():
    _, _, cache, split = generate(n_docs=25, seed=5)
    docs = {d.doc_id: d for d in split.docs}
    for d in split.docs:
        assert validate_document(d) == []
        for ve in d.video_events:
            assert (d.doc_id, ve.id) in cache
    for r in split.gold:
        docs[r.doc_id].text_event(r.text_event_id)
        docs[r.doc_id].video_event(r.video_event_id)


def test_noise_free_identicals_clear_lambda():
    spec, enc, cache, split = generate(n_docs=10, noise=0.0, seed=2)
    cfg = EncoderConfig(dim=spec.dim)
    embs = {d.doc_id: embed_document(d, enc, cfg, cache) for d in split.docs}
    idents = [r for r in split.gold if r.label == IDENTICAL]
    assert idents
    for r in idents:
        e = embs[r.doc_id]
        s = similarity(e.text[e.text_index()[r.text_event_id]], e.video[e.video_index()[r.video_event_id]])
        assert s > 30.39


def test_zero_densities_give_no_gold():
    *_, split = generate(n_docs=10, hier_density=0.0, identical_density=0.0)
    assert split.gold == []


def test_same_seed_same_split():
    *_, a = generate(n_docs=5, seed=9)
    *_, b = generate(n_docs=5, seed=9)
    assert a.docs == b.docs and a.gold == b.gold


@pytest.mark.parametrize("bad", [dict(hier_density=1.5), dict(hier_density=0.7, identical_density=0.5),
                                 dict(text_events=(0, 3)), dict(video_events=(4, 2)), dict(noise=-1.0)])
def test_invalid_spec(bad):
    with pytest.raises(ConfigError):
        synthetic.SyntheticSpec(**bad).validate()


def test_simulated_ie_is_valid():
    _, _, _, split = generate(n_docs=20, seed=4)
    ie = synthetic.simulate_ie(split.docs, seed=4)
    assert [d.doc_id for d in ie] == [d.doc_id for d in split.docs]
    for d in ie:
        assert validate_document(d) == []
    assert ie == synthetic.simulate_ie(split.docs, seed=4)
