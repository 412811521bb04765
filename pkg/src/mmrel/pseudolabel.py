"""Weak supervision: multimodal pseudo labels from text hierarchy + retrieval.

For each document:

1. a pluggable predictor proposes text-text hierarchy pairs ``parent -> sub``;
2. each text subevent is matched to the shots whose scaled similarity exceeds
   ``lam`` (Identical, provenance ``retrieval``);
3. the parent inherits those shots as Hierarchical subevents (one hop,
   provenance ``propagation``);
4. every text event is also compared directly with every shot (Identical,
   provenance ``direct-match``).

Pairs that end up with both labels are resolved by a conflict policy.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .embedding import (DocEmbeddings, EncoderConfig, FrameCache, JointEncoder, embed_document,
                        similarity_matrix)
from .errors import ConfigError, CorpusParseError, DataValidationError, MissingInputError, PipelineError
from .eventgraph import HIERARCHICAL, IDENTICAL, Document, pair_space

log = logging.getLogger(__name__)

DEFAULT_LAMBDA = 30.39

RETRIEVAL = "retrieval"
PROPAGATION = "propagation"
DIRECT_MATCH = "direct-match"
PROVENANCES = (RETRIEVAL, PROPAGATION, DIRECT_MATCH)

CONFLICT_POLICIES = ("identical-wins", "hierarchical-wins", "drop-both")
PSEUDO_SCHEMA = "mmrel.pseudo/1"


@dataclass(frozen=True)
class TextHierPair:
    parent_event_id: str
    sub_event_id: str
    doc_id: str


@dataclass(frozen=True)
class PseudoLabel:
    doc_id: str
    text_event_id: str
    video_event_id: str
    label: str
    provenance: str
    score: float

    def __post_init__(self):
        if self.label not in (HIERARCHICAL, IDENTICAL):
            raise ValueError(f"pseudo labels are Hierarchical or Identical, not {self.label!r}")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @property
    def key(self):
        return (self.doc_id, self.text_event_id, self.video_event_id)


@dataclass
class PseudoLabelSet:
    labels: list = field(default_factory=list)
    conflicts: list = field(default_factory=list)

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def mapping(self) -> dict:
        return {lab.key: lab.label for lab in self.labels}

    def counts(self) -> dict:
        out = {HIERARCHICAL: 0, IDENTICAL: 0}
        for lab in self.labels:
            out[lab.label] += 1
        return out


# --------------------------------------------------------------------------
# text hierarchy predictors

HierPredictor = Callable[[Document], Iterable]


class TablePredictor:
    """Echo a fixed ``{doc_id: [(parent_id, sub_id), ...]}`` table."""

    def __init__(self, table: Mapping[str, Sequence[tuple[str, str]]]):
        self.table = {k: list(v) for k, v in table.items()}

    def __call__(self, doc: Document):
        return list(self.table.get(doc.doc_id, ()))


class LexiconPredictor:
    """Mark ``e_u -> e_s`` whenever ``(surface_u, surface_s)`` is a known subevent pair."""

    def __init__(self, pairs: Iterable[tuple[str, str]]):
        self.pairs = {(a.lower(), b.lower()) for a, b in pairs}

    def __call__(self, doc: Document):
        out = []
        for u in doc.text_events:
            for s in doc.text_events:
                if u.id != s.id and (u.surface.lower(), s.surface.lower()) in self.pairs:
                    out.append((u.id, s.id))
        return out


def detect_text_hierarchy(doc: Document, predictor: HierPredictor) -> list[TextHierPair]:
    try:
        raw = list(predictor(doc))
    except Exception as exc:
        raise PipelineError(f"text hierarchy predictor failed: {exc!r}", doc_id=doc.doc_id) from exc
    ids = {e.id for e in doc.text_events}
    out, seen = [], set()
    for item in raw:
        if isinstance(item, TextHierPair):
            parent, sub = item.parent_event_id, item.sub_event_id
        else:
            parent, sub = item
        if parent == sub:
            raise DataValidationError(f"hierarchy pair {parent}->{sub} links an event to itself",
                                      doc_id=doc.doc_id)
        if parent not in ids or sub not in ids:
            raise DataValidationError(f"hierarchy pair {parent}->{sub} has an unknown event",
                                      doc_id=doc.doc_id)
        if (parent, sub) not in seen:
            seen.add((parent, sub))
            out.append(TextHierPair(parent, sub, doc.doc_id))
    return out


# --------------------------------------------------------------------------
# retrieval and propagation


def retrieve_identical(text_embedding, videos: Sequence[tuple[str, np.ndarray]],
                       lam: float = DEFAULT_LAMBDA, scale: float = 100.0) -> list[tuple[str, float]]:
    """Shots whose scaled similarity to the text event is strictly above ``lam``."""
    if not videos:
        return []
    ids = [v for v, _ in videos]
    sims = similarity_matrix(text_embedding, np.stack([vec for _, vec in videos]), scale)[0]
    return [(vid, float(s)) for vid, s in zip(ids, sims) if s > lam]


def _ancestors(hier_pairs: Sequence[TextHierPair]) -> dict:
    parents: dict = {}
    for hp in hier_pairs:
        parents.setdefault((hp.doc_id, hp.sub_event_id), []).append(hp.parent_event_id)
    closure: dict = {}
    for key in parents:
        doc_id = key[0]
        found, stack = [], list(parents[key])
        while stack:
            p = stack.pop(0)
            if p in found or p == key[1]:
                continue
            found.append(p)
            stack.extend(parents.get((doc_id, p), ()))
        closure[key] = found
    return closure


def propagate_hierarchy(hier_pairs: Sequence[TextHierPair], identical: Sequence[PseudoLabel],
                        multi_hop: bool = False) -> list[PseudoLabel]:
    """Hierarchical(parent, shot) for every parent of a text event identical to the shot."""
    if multi_hop:
        anc = _ancestors(hier_pairs)
        expanded = [TextHierPair(p, s, d) for (d, s), ps in anc.items() for p in ps]
        hier_pairs = expanded
    by_sub: dict = {}
    for lab in identical:
        if lab.label == IDENTICAL:
            by_sub.setdefault((lab.doc_id, lab.text_event_id), []).append(lab)
    out, seen = [], set()
    for hp in hier_pairs:
        for lab in by_sub.get((hp.doc_id, hp.sub_event_id), ()):
            key = (hp.doc_id, hp.parent_event_id, lab.video_event_id)
            if key in seen:
                continue
            seen.add(key)
            out.append(PseudoLabel(hp.doc_id, hp.parent_event_id, lab.video_event_id,
                                   HIERARCHICAL, PROPAGATION, lab.score))
    return out


def direct_identical_match(emb: DocEmbeddings, lam: float = DEFAULT_LAMBDA,
                           scale: float = 100.0) -> list[PseudoLabel]:
    """Identical labels for every (text, shot) pair above ``lam``."""
    if not emb.text_ids or not emb.video_ids:
        return []
    sims = similarity_matrix(emb.text, emb.video, scale)
    out = []
    for i, t in enumerate(emb.text_ids):
        for j, v in enumerate(emb.video_ids):
            if sims[i, j] > lam:
                out.append(PseudoLabel(emb.doc_id, t, v, IDENTICAL, DIRECT_MATCH, float(sims[i, j])))
    return out


def resolve_conflicts(identical: Sequence[PseudoLabel], hierarchical: Sequence[PseudoLabel],
                      policy: str = "identical-wins"):
    """Merge label lists so every pair keeps at most one label.

    Returns ``(kept_labels_by_key, conflict_keys)``.
    """
    if policy not in CONFLICT_POLICIES:
        raise ConfigError(f"unknown conflict policy {policy!r}")
    ident: dict = {}
    for lab in identical:
        ident.setdefault(lab.key, lab)
    hier: dict = {}
    for lab in hierarchical:
        hier.setdefault(lab.key, lab)
    clash = [k for k in hier if k in ident]
    for k in clash:
        if policy == "identical-wins":
            del hier[k]
        elif policy == "hierarchical-wins":
            del ident[k]
        else:
            del hier[k], ident[k]
    merged = dict(ident)
    merged.update(hier)
    return merged, clash


def label_document(doc: Document, emb: DocEmbeddings, hier_predictor: HierPredictor,
                   lam: float = DEFAULT_LAMBDA, conflict_policy: str = "identical-wins",
                   scale: float = 100.0, multi_hop: bool = False):
    """Pseudo labels for one document, in pair-space order, plus conflicting keys."""
    hier = detect_text_hierarchy(doc, hier_predictor)
    tindex = emb.text_index()
    retrieved = []
    if emb.video_ids:
        videos = list(zip(emb.video_ids, emb.video))
        subs = list(dict.fromkeys(hp.sub_event_id for hp in hier))
        for sub in subs:
            for vid, score in retrieve_identical(emb.text[tindex[sub]], videos, lam, scale):
                retrieved.append(PseudoLabel(doc.doc_id, sub, vid, IDENTICAL, RETRIEVAL, score))
    propagated = propagate_hierarchy(hier, retrieved, multi_hop=multi_hop)
    direct = direct_identical_match(emb, lam, scale)
    merged, clash = resolve_conflicts(retrieved + direct, propagated, conflict_policy)
    ordered = [merged[(doc.doc_id, t, v)] for t, v in pair_space(doc) if (doc.doc_id, t, v) in merged]
    return ordered, clash


def generate_pseudo_labels(corpus: Sequence[Document], hier_predictor: HierPredictor,
                           encoder: JointEncoder, lam: float = DEFAULT_LAMBDA,
                           conflict_policy: str = "identical-wins",
                           config: Optional[EncoderConfig] = None,
                           frame_cache: Optional[FrameCache] = None, multi_hop: bool = False,
                           workers: int = 1, embeddings: Optional[Mapping[str, DocEmbeddings]] = None
                           ) -> PseudoLabelSet:
    """Run the whole labelling procedure over a corpus.

    Per-document work may run on ``workers`` threads; results are reduced in
    corpus order so the output does not depend on scheduling.
    """
    if conflict_policy not in CONFLICT_POLICIES:
        raise ConfigError(f"unknown conflict policy {conflict_policy!r}")
    config = config or EncoderConfig(dim=encoder.dim)

    def one(doc):
        emb = embeddings[doc.doc_id] if embeddings is not None else \
            embed_document(doc, encoder, config, frame_cache)
        return label_document(doc, emb, hier_predictor, lam, conflict_policy,
                              config.similarity_scale, multi_hop)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, corpus))
    else:
        results = [one(doc) for doc in corpus]

    out = PseudoLabelSet()
    for labels, clash in results:
        out.labels.extend(labels)
        out.conflicts.extend(clash)
    if out.conflicts:
        log.info("resolved %d label conflicts with policy %s", len(out.conflicts), conflict_policy)
    return out


# --------------------------------------------------------------------------
# file I/O


def save_pseudo_labels(labels: Iterable[PseudoLabel], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for lab in labels:
            fh.write(json.dumps({
                "schema": PSEUDO_SCHEMA, "doc_id": lab.doc_id, "text_event_id": lab.text_event_id,
                "video_event_id": lab.video_event_id, "label": lab.label,
                "provenance": lab.provenance, "score": lab.score,
            }, separators=(",", ":")) + "\n")


def load_pseudo_labels(path) -> list[PseudoLabel]:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"no such file: {path}")
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                r = json.loads(line)
                out.append(PseudoLabel(str(r["doc_id"]), str(r["text_event_id"]),
                                       str(r["video_event_id"]), r["label"], r["provenance"],
                                       float(r["score"])))
            except (ValueError, KeyError, TypeError) as exc:
                raise CorpusParseError(str(exc), line=lineno, path=path) from None
    return out
