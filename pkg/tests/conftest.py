import numpy as np
import pytest

from mmrel.eventgraph import Document, TextEvent, VideoEvent


def make_doc(doc_id="d1", sentences=(("police", "made", "an", "arrest"), ("crowds", "chant")),
             text=(("e1", 0, (3, 4)),), shots=((0.0, 2.0), (2.0, 5.0)), duration=10.0, words=20):
    """Small valid document; ``text`` holds (id, sentence, span) triples."""
    sentences = tuple(tuple(s) for s in sentences)
    tes = tuple(TextEvent(i, s, span, " ".join(sentences[s][span[0]:span[1]])) for i, s, span in text)
    ves = tuple(VideoEvent(f"v{j + 1}", a, b) for j, (a, b) in enumerate(shots))
    return Document(doc_id, sentences, duration, words, tes, ves)


@pytest.fixture
def doc():
    return make_doc()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
