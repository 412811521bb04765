"""Synthetic corpora with planted multimodal event graphs.

The world is a small concept hierarchy: parent events (``protest``) with
subevents (``arrest``), plus background shot types that relate to nothing.
Each document mentions one or two parent events; its shots show subevents of
those parents, concepts mentioned in the text, or background.  Gold labels
follow from concepts alone: a shot showing the same concept as a text event is
Identical, a shot showing a subevent of the text event's concept is
Hierarchical.

Frame embeddings come from the toy encoder's concept vectors plus Gaussian
noise and are written to a frame cache, so the stored corpus carries no
concept tags.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ._random import stream
from .commonsense import KbEdge
from .embedding import FrameCache, ToyEncoder, frame_times
from .errors import ConfigError
from .eventgraph import (HIERARCHICAL, IDENTICAL, AsrSegment, Document, RelationRecord, TextEvent,
                         VideoEvent)

HIERARCHY = {
    "protest": ("march", "chant", "arrest"),
    "storm": ("rain", "flooding", "evacuation"),
    "election": ("voting", "counting", "speech"),
    "wildfire": ("smoke", "firefighting", "airdrop"),
    "wedding": ("vows", "dancing", "toast"),
    "football": ("kickoff", "goal", "celebration"),
}
BACKGROUND = ("anchor", "logo", "interview", "graphics", "studio", "traffic")
FILLER = (
    "the", "a", "officials", "said", "on", "monday", "in", "city", "after", "people",
    "were", "reported", "during", "local", "news", "near", "by", "with", "many", "later",
    "downtown", "residents", "crowds", "saw", "as", "had", "large", "region", "night", "was",
    "early", "morning", "witnesses", "described", "scene", "country", "state", "team", "group",
    "there",
)

_FIRST = {"protest": "march", "storm": "rain", "football": "kickoff"}
_LAST = {"protest": "arrest", "football": "celebration", "wedding": "toast"}
_DISTRACTOR_EDGES = (
    ("IsA", "protest", "demonstration"), ("IsA", "storm", "weather"),
    ("IsA", "election", "vote"), ("IsA", "wildfire", "fire"), ("IsA", "wedding", "ceremony"),
    ("IsA", "football", "sport"), ("AtLocation", "march", "street"),
    ("AtLocation", "voting", "polling station"), ("AtLocation", "goal", "stadium"),
    ("AtLocation", "toast", "reception"), ("UsedFor", "speech", "persuasion"),
    ("UsedFor", "airdrop", "delivery"), ("Causes", "storm", "damage"),
    ("Causes", "wildfire", "smoke damage"), ("Causes", "rain", "wet roads"),
    ("RelatedTo", "chant", "slogan"), ("RelatedTo", "arrest", "police"),
    ("RelatedTo", "flooding", "water"), ("RelatedTo", "evacuation", "shelter"),
    ("RelatedTo", "counting", "ballot"), ("RelatedTo", "smoke", "haze"),
    ("RelatedTo", "firefighting", "hose"), ("RelatedTo", "vows", "promise"),
    ("RelatedTo", "dancing", "music"), ("RelatedTo", "kickoff", "whistle"),
    ("RelatedTo", "celebration", "cheering"), ("Antonym", "celebration", "mourning"),
    ("Synonym", "flooding", "inundation"), ("MotivatedByGoal", "protest", "change"),
    ("HasPrerequisite", "voting", "registration"), ("CapableOf", "firefighter", "firefighting"),
    ("PartOf", "goal", "scoreline"),
)


def all_concepts() -> list[str]:
    out = []
    for parent, kids in HIERARCHY.items():
        out.append(parent)
        out.extend(kids)
    out.extend(BACKGROUND)
    return out


def subevent_pairs() -> list[tuple[str, str]]:
    return [(p, c) for p, kids in HIERARCHY.items() for c in kids]


def default_kb_edges() -> list[KbEdge]:
    """The 50-edge toy KB: the hierarchy as subevent edges plus unrelated edges."""
    edges = []
    for parent, child in subevent_pairs():
        if _FIRST.get(parent) == child:
            rel = "HasFirstSubevent"
        elif _LAST.get(parent) == child:
            rel = "HasLastSubevent"
        else:
            rel = "HasSubevent"
        edges.append(KbEdge(rel, parent, child))
    edges.extend(KbEdge(*e) for e in _DISTRACTOR_EDGES)
    return edges


@dataclass(frozen=True)
class SyntheticSpec:
    n_docs: int = 200
    text_events: tuple = (3, 6)
    video_events: tuple = (3, 8)
    hier_density: float = 0.4
    identical_density: float = 0.25
    noise: float = 0.1
    mention_rate: float = 0.7
    seed: int = 7
    dim: int = 32
    fps: float = 3.0
    n_eval_docs: int = 60

    def validate(self) -> None:
        for name in ("hier_density", "identical_density", "mention_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.hier_density + self.identical_density > 1.0:
            raise ConfigError("hier_density + identical_density must not exceed 1")
        for name in ("text_events", "video_events"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ConfigError(f"{name} range must satisfy 1 <= lo <= hi, got {(lo, hi)}")
        if self.n_docs < 0 or self.n_eval_docs < 0:
            raise ConfigError("document counts must be >= 0")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")
        if self.dim < 2:
            raise ConfigError("dim must be >= 2")


@dataclass
class SyntheticSplit:
    docs: list = field(default_factory=list)
    gold: list = field(default_factory=list)
    concepts: dict = field(default_factory=dict)  # (doc_id, event_id) -> concept


def gold_label(text_concept: str, shot_concept: str) -> Optional[str]:
    if text_concept == shot_concept:
        return IDENTICAL
    if shot_concept in HIERARCHY.get(text_concept, ()):
        return HIERARCHICAL
    return None


def make_encoder(spec: SyntheticSpec) -> ToyEncoder:
    return ToyEncoder(dim=spec.dim, seed=spec.seed, concepts=all_concepts())


def _sentence(rng, trigger: Optional[str]):
    length = int(rng.integers(5, 13))
    tokens = [FILLER[i] for i in rng.integers(len(FILLER), size=length)]
    pos = None
    if trigger is not None:
        pos = int(rng.integers(length))
        tokens[pos] = trigger
    return tokens, pos


def _make_doc(rng, doc_id: str, spec: SyntheticSpec):
    parents_all = list(HIERARCHY)
    m_target = int(rng.integers(spec.text_events[0], spec.text_events[1] + 1))
    n = int(rng.integers(spec.video_events[0], spec.video_events[1] + 1))
    n_par = 2 if (m_target >= 4 and rng.random() < 0.3) else 1
    parents = [parents_all[i] for i in rng.choice(len(parents_all), n_par, replace=False)]
    n_par = min(n_par, m_target)
    parents = parents[:n_par]
    kids = {c for p in parents for c in HIERARCHY[p]}
    others = [c for c in all_concepts()
              if c not in BACKGROUND and c not in parents and c not in kids]

    shots = []
    for _ in range(n):
        u = rng.random()
        if u < spec.hier_density:
            p = parents[int(rng.integers(len(parents)))]
            shots.append(("hier", HIERARCHY[p][int(rng.integers(3))]))
        elif u < spec.hier_density + spec.identical_density:
            shots.append(("ident", None))
        else:
            shots.append(("bg", BACKGROUND[int(rng.integers(len(BACKGROUND)))]))

    mentioned = []
    for kind, c in shots:
        if kind == "hier" and c not in mentioned and len(parents) + len(mentioned) < m_target:
            if rng.random() < spec.mention_rate:
                mentioned.append(c)
    n_distract = min(max(0, m_target - len(parents) - len(mentioned)), len(others))
    distract = [others[i] for i in rng.choice(len(others), n_distract, replace=False)]
    text_concepts = parents + mentioned + distract
    ident_pool = parents + distract
    shot_concepts = [c if kind != "ident" else ident_pool[int(rng.integers(len(ident_pool)))]
                     for kind, c in shots]

    order = rng.permutation(len(text_concepts))
    sentences, events, concepts = [], [], {}
    for rank, idx in enumerate(order):
        if rng.random() < 0.25:
            toks, _ = _sentence(rng, None)
            sentences.append(tuple(toks))
        c = text_concepts[idx]
        toks, pos = _sentence(rng, c)
        ev = TextEvent(f"e{rank + 1}", len(sentences), (pos, pos + 1), c)
        sentences.append(tuple(toks))
        events.append(ev)
        concepts[(doc_id, ev.id)] = c

    videos, t = [], 0.0
    asr = []
    for j, c in enumerate(shot_concepts):
        dur = round(float(rng.uniform(1.5, 7.0)), 2)
        start, end = round(t, 2), round(t + dur, 2)
        ev = VideoEvent(f"v{j + 1}", start, end, f"{doc_id}/v{j + 1}")
        videos.append(ev)
        concepts[(doc_id, ev.id)] = c
        words = [FILLER[i] for i in rng.integers(len(FILLER), size=int(rng.integers(2, 6)))]
        asr.append(AsrSegment(start, end, " ".join(words)))
        t = end
    duration = round(t + float(rng.uniform(0.0, 2.0)), 2)
    doc = Document(doc_id=doc_id, sentences=tuple(sentences), video_duration_s=duration,
                   description_word_count=int(rng.integers(10, 80)), text_events=tuple(events),
                   video_events=tuple(videos), asr_segments=tuple(asr))
    return doc, concepts


def generate_split(spec: SyntheticSpec, n_docs: int, prefix: str, encoder: ToyEncoder,
                   frame_cache: FrameCache) -> SyntheticSplit:
    """Generate ``n_docs`` documents, gold labels, and their frames into ``frame_cache``."""
    spec.validate()
    rng = stream(spec.seed, f"synthetic/{prefix}")
    noise_rng = stream(spec.seed, f"synthetic/{prefix}/frames")
    out = SyntheticSplit()
    for k in range(n_docs):
        doc_id = f"{prefix}{k:04d}"
        doc, concepts = _make_doc(rng, doc_id, spec)
        out.docs.append(doc)
        out.concepts.update(concepts)
        for te in doc.text_events:
            for ve in doc.video_events:
                lab = gold_label(concepts[(doc_id, te.id)], concepts[(doc_id, ve.id)])
                if lab is not None:
                    out.gold.append(RelationRecord(doc_id, te.id, ve.id, lab, None, "gold"))
        for ve in doc.video_events:
            base = encoder.frame_vector(concepts[(doc_id, ve.id)])
            z = len(frame_times(ve.start_s, ve.end_s, spec.fps))
            g = noise_rng.standard_normal((z, spec.dim)) / np.sqrt(spec.dim)
            frames = base[None, :] + spec.noise * g
            frames /= np.linalg.norm(frames, axis=1, keepdims=True)
            frame_cache.put(doc_id, ve.id, frames)
    return out


def simulate_ie(docs, seed: int, keep: float = 0.85, widen: float = 0.3,
                spurious: float = 0.3) -> list[Document]:
    """Stand-in for a text event extractor run over ``docs``.

    Each gold trigger survives with probability ``keep`` (its span sometimes
    widened by one token), and a spurious trigger on a filler token is added
    with probability ``spurious``.  Predicted events get fresh ids.
    """
    rng = stream(seed, "synthetic/ie")
    out = []
    for doc in docs:
        spans = []
        for ev in doc.text_events:
            if rng.random() >= keep:
                continue
            lo, hi = ev.trigger_span
            if rng.random() < widen:
                if lo > 0:
                    lo -= 1
                elif hi < len(doc.sentences[ev.sentence_index]):
                    hi += 1
            spans.append((ev.sentence_index, lo, hi))
        if rng.random() < spurious:
            taken = {(s, i) for s, lo, hi in spans for i in range(lo, hi)}
            taken |= {(e.sentence_index, e.trigger_span[0]) for e in doc.text_events}
            free = [(s, i) for s, toks in enumerate(doc.sentences) for i in range(len(toks))
                    if (s, i) not in taken]
            if free:
                s, i = free[int(rng.integers(len(free)))]
                spans.append((s, i, i + 1))
        spans.sort()
        events = tuple(TextEvent(f"p{k + 1}", s, (lo, hi), " ".join(doc.sentences[s][lo:hi]))
                       for k, (s, lo, hi) in enumerate(spans))
        out.append(replace(doc, text_events=events))
    return out
