"""Multimodal event graph data model, validation and corpus I/O.

A :class:`Document` pairs a tokenized article with a shot-segmented video.
Text events are token spans; video events are shots.  Relations always point
from a text event to a video event.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from .errors import CorpusParseError, DataValidationError, MissingInputError

HIERARCHICAL = "Hierarchical"
IDENTICAL = "Identical"
NOREL = "NoRel"
LABELS = (HIERARCHICAL, IDENTICAL, NOREL)
RELATION_TYPES = (HIERARCHICAL, IDENTICAL)

CORPUS_SCHEMA = "mmrel.corpus/1"
RELATIONS_SCHEMA = "mmrel.relations/1"

PairKey = tuple  # (doc_id, text_event_id, video_event_id)


@dataclass(frozen=True)
class TextEvent:
    id: str
    sentence_index: int
    trigger_span: tuple[int, int]
    surface: str


@dataclass(frozen=True)
class VideoEvent:
    id: str
    start_s: float
    end_s: float
    frame_ref: Optional[str] = None


@dataclass(frozen=True)
class AsrSegment:
    start_s: float
    end_s: float
    text: str


@dataclass(frozen=True)
class Relation:
    text_event_id: str
    video_event_id: str
    label: str
    confidence: Optional[float] = None


@dataclass(frozen=True)
class Document:
    doc_id: str
    sentences: tuple[tuple[str, ...], ...]
    video_duration_s: float
    description_word_count: int
    text_events: tuple[TextEvent, ...] = ()
    video_events: tuple[VideoEvent, ...] = ()
    asr_segments: Optional[tuple[AsrSegment, ...]] = None

    def text_event(self, event_id: str) -> TextEvent:
        for ev in self.text_events:
            if ev.id == event_id:
                return ev
        raise KeyError(f"unknown text event {event_id!r} in doc {self.doc_id!r}")

    def video_event(self, event_id: str) -> VideoEvent:
        for ev in self.video_events:
            if ev.id == event_id:
                return ev
        raise KeyError(f"unknown video event {event_id!r} in doc {self.doc_id!r}")


@dataclass(frozen=True)
class MultimodalEventGraph:
    doc_id: str
    relations: tuple[Relation, ...] = ()

    def labels(self) -> dict:
        return {(self.doc_id, r.text_event_id, r.video_event_id): r.label
                for r in self.relations}


@dataclass(frozen=True)
class RelationRecord:
    """One line of a relation/label file."""

    doc_id: str
    text_event_id: str
    video_event_id: str
    label: str
    confidence: Optional[float] = None
    provenance: Optional[str] = None

    @property
    def key(self) -> PairKey:
        return (self.doc_id, self.text_event_id, self.video_event_id)


@dataclass(frozen=True)
class Violation:
    field: str
    rule: str
    detail: str = ""

    def __str__(self):
        s = f"{self.field}: {self.rule}"
        return f"{s} ({self.detail})" if self.detail else s


# --------------------------------------------------------------------------
# validation


def _finite(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def validate_document(doc: Document, relations: Iterable[Relation] = ()) -> list[Violation]:
    """Check every data-model invariant; return the violations found.

    ``relations`` are checked against the document as well (ids must resolve,
    labels must be known, at most one record per pair).
    """
    out: list[Violation] = []
    if not isinstance(doc.doc_id, str) or not doc.doc_id:
        out.append(Violation("doc_id", "non-empty string"))
    if not _finite(doc.video_duration_s) or doc.video_duration_s <= 0:
        out.append(Violation("video_duration_s", "finite and > 0", repr(doc.video_duration_s)))
    if (not isinstance(doc.description_word_count, int)
            or isinstance(doc.description_word_count, bool)
            or doc.description_word_count < 0):
        out.append(Violation("description_word_count", "integer >= 0",
                             repr(doc.description_word_count)))

    seen: set = set()
    for ev in list(doc.text_events) + list(doc.video_events):
        if not ev.id:
            out.append(Violation("id", "non-empty event id"))
        elif ev.id in seen:
            out.append(Violation("id", "unique event id", ev.id))
        seen.add(ev.id)

    for ev in doc.text_events:
        where = f"text_events[{ev.id}]"
        if not (0 <= ev.sentence_index < len(doc.sentences)):
            out.append(Violation(f"{where}.sentence_index", "within sentence range",
                                 str(ev.sentence_index)))
            continue
        tokens = doc.sentences[ev.sentence_index]
        start, end = ev.trigger_span
        if not start < end:
            out.append(Violation(f"{where}.trigger_span", "non-empty span", f"{start}..{end}"))
            continue
        if start < 0 or end > len(tokens):
            out.append(Violation(f"{where}.trigger_span", "within sentence token bounds",
                                 f"{start}..{end} of {len(tokens)}"))
            continue
        if ev.surface != " ".join(tokens[start:end]):
            out.append(Violation(f"{where}.surface", "surface equals span tokens",
                                 f"{ev.surface!r} != {' '.join(tokens[start:end])!r}"))

    prev = None
    for ev in doc.video_events:
        where = f"video_events[{ev.id}]"
        if not (_finite(ev.start_s) and _finite(ev.end_s)):
            out.append(Violation(where, "finite times"))
            continue
        if ev.start_s < 0:
            out.append(Violation(f"{where}.start_s", "start_s >= 0", str(ev.start_s)))
        if not ev.start_s < ev.end_s:
            out.append(Violation(f"{where}.end_s", "start_s < end_s",
                                 f"{ev.start_s} >= {ev.end_s}"))
        if _finite(doc.video_duration_s) and ev.end_s > doc.video_duration_s:
            out.append(Violation(f"{where}.end_s", "end_s <= video duration",
                                 f"{ev.end_s} > {doc.video_duration_s}"))
        if prev is not None:
            if ev.start_s < prev.start_s:
                out.append(Violation(f"{where}.start_s", "sorted by start_s"))
            elif ev.start_s < prev.end_s:
                out.append(Violation(f"{where}.start_s", "non-overlapping shots",
                                     f"overlaps {prev.id}"))
        prev = ev

    if doc.asr_segments is not None:
        for i, seg in enumerate(doc.asr_segments):
            if not (_finite(seg.start_s) and _finite(seg.end_s) and seg.start_s <= seg.end_s):
                out.append(Violation(f"asr_segments[{i}]", "start_s <= end_s"))

    text_ids = {e.id for e in doc.text_events}
    video_ids = {e.id for e in doc.video_events}
    pairs: set = set()
    for rel in relations:
        where = f"relation[{rel.text_event_id}->{rel.video_event_id}]"
        if rel.text_event_id not in text_ids or rel.video_event_id not in video_ids:
            out.append(Violation(where, "dangling id"))
        if rel.label not in LABELS:
            out.append(Violation(f"{where}.label", "known label", repr(rel.label)))
        if rel.confidence is not None and not (_finite(rel.confidence)
                                               and 0.0 <= rel.confidence <= 1.0):
            out.append(Violation(f"{where}.confidence", "confidence in [0, 1]"))
        key = (rel.text_event_id, rel.video_event_id)
        if key in pairs:
            out.append(Violation(where, "one relation per pair"))
        pairs.add(key)
    return out


def check_document(doc: Document, relations: Iterable[Relation] = ()) -> None:
    problems = validate_document(doc, relations)
    if problems:
        raise DataValidationError("; ".join(map(str, problems)), doc_id=doc.doc_id)


# --------------------------------------------------------------------------
# pair space and filtering


def pair_space(doc: Document) -> list[tuple[str, str]]:
    """All (text, video) id pairs: text events in document order, shots by time."""
    shots = sorted(doc.video_events, key=lambda v: v.start_s)
    return [(e.id, v.id) for e in doc.text_events for v in shots]


def corpus_pair_keys(docs: Iterable[Document]) -> list[PairKey]:
    return [(d.doc_id, t, v) for d in docs for t, v in pair_space(d)]


def filter_corpus(docs: Iterable[Document], max_duration_s: float = 840.0,
                  min_desc_words: int = 10) -> Iterator[Document]:
    """Drop long videos and documents with short descriptions (bounds kept)."""
    for doc in docs:
        if doc.video_duration_s <= max_duration_s and doc.description_word_count >= min_desc_words:
            yield doc


# --------------------------------------------------------------------------
# serialization


def document_to_record(doc: Document) -> dict:
    return {
        "schema": CORPUS_SCHEMA,
        "doc_id": doc.doc_id,
        "sentences": [list(s) for s in doc.sentences],
        "video_duration_s": doc.video_duration_s,
        "description_word_count": doc.description_word_count,
        "text_events": [
            {"id": e.id, "sentence_index": e.sentence_index,
             "trigger_span": list(e.trigger_span), "surface": e.surface}
            for e in doc.text_events
        ],
        "video_events": [
            {"id": v.id, "start_s": v.start_s, "end_s": v.end_s, "frame_ref": v.frame_ref}
            for v in doc.video_events
        ],
        "asr_segments": None if doc.asr_segments is None else [
            {"start_s": a.start_s, "end_s": a.end_s, "text": a.text} for a in doc.asr_segments
        ],
    }


def _req(rec: dict, key: str, kind, what: str):
    if key not in rec:
        raise ValueError(f"missing key {key!r} in {what}")
    val = rec[key]
    if kind is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ValueError(f"{what}.{key} must be a number")
        return float(val)
    if kind is int:
        if isinstance(val, bool) or not isinstance(val, int):
            raise ValueError(f"{what}.{key} must be an integer")
        return val
    if not isinstance(val, kind):
        raise ValueError(f"{what}.{key} must be {kind.__name__}")
    return val


def document_from_record(rec: dict) -> Document:
    if not isinstance(rec, dict):
        raise ValueError("record is not an object")
    schema = rec.get("schema", CORPUS_SCHEMA)
    if schema != CORPUS_SCHEMA:
        raise ValueError(f"unsupported schema {schema!r}")
    doc_id = _req(rec, "doc_id", str, "document")
    sentences = _req(rec, "sentences", list, "document")
    if not all(isinstance(s, list) and all(isinstance(t, str) for t in s) for s in sentences):
        raise ValueError("sentences must be lists of strings")
    text_events = []
    for i, e in enumerate(_req(rec, "text_events", list, "document")):
        where = f"text_events[{i}]"
        span = _req(e, "trigger_span", list, where)
        if len(span) != 2 or not all(isinstance(x, int) and not isinstance(x, bool) for x in span):
            raise ValueError(f"{where}.trigger_span must be two integers")
        text_events.append(TextEvent(
            id=_req(e, "id", str, where),
            sentence_index=_req(e, "sentence_index", int, where),
            trigger_span=(span[0], span[1]),
            surface=_req(e, "surface", str, where),
        ))
    video_events = []
    for i, v in enumerate(_req(rec, "video_events", list, "document")):
        where = f"video_events[{i}]"
        ref = v.get("frame_ref")
        if ref is not None and not isinstance(ref, str):
            raise ValueError(f"{where}.frame_ref must be a string or null")
        video_events.append(VideoEvent(
            id=_req(v, "id", str, where),
            start_s=_req(v, "start_s", float, where),
            end_s=_req(v, "end_s", float, where),
            frame_ref=ref,
        ))
    asr = rec.get("asr_segments")
    if asr is not None:
        asr = tuple(AsrSegment(_req(a, "start_s", float, "asr"), _req(a, "end_s", float, "asr"),
                               _req(a, "text", str, "asr")) for a in asr)
    return Document(
        doc_id=doc_id,
        sentences=tuple(tuple(s) for s in sentences),
        video_duration_s=_req(rec, "video_duration_s", float, "document"),
        description_word_count=_req(rec, "description_word_count", int, "document"),
        text_events=tuple(text_events),
        video_events=tuple(video_events),
        asr_segments=asr,
    )


def _dumps(rec: dict) -> str:
    return json.dumps(rec, ensure_ascii=False, separators=(",", ":"))


def _read_lines(path) -> Iterator[tuple[int, str]]:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"no such file: {path}")
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                yield lineno, line


def iter_corpus(path, validate: bool = True) -> Iterator[Document]:
    for lineno, line in _read_lines(path):
        try:
            doc = document_from_record(json.loads(line))
        except (ValueError, TypeError, AttributeError) as exc:
            raise CorpusParseError(str(exc), line=lineno, path=path) from None
        if validate:
            check_document(doc)
        yield doc


def load_corpus(path, validate: bool = True) -> list[Document]:
    return list(iter_corpus(path, validate=validate))


def save_corpus(docs: Iterable[Document], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(_dumps(document_to_record(doc)) + "\n")


def save_relations(records: Iterable[RelationRecord], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(_dumps({
                "schema": RELATIONS_SCHEMA, "doc_id": r.doc_id,
                "text_event_id": r.text_event_id, "video_event_id": r.video_event_id,
                "label": r.label, "confidence": r.confidence, "provenance": r.provenance,
            }) + "\n")


def load_relations(path) -> list[RelationRecord]:
    out = []
    for lineno, line in _read_lines(path):
        try:
            rec = json.loads(line)
            conf = rec.get("confidence")
            if conf is not None and (isinstance(conf, bool) or not isinstance(conf, (int, float))):
                raise ValueError("confidence must be a number or null")
            r = RelationRecord(
                doc_id=_req(rec, "doc_id", str, "relation"),
                text_event_id=_req(rec, "text_event_id", str, "relation"),
                video_event_id=_req(rec, "video_event_id", str, "relation"),
                label=_req(rec, "label", str, "relation"),
                confidence=None if conf is None else float(conf),
                provenance=rec.get("provenance"),
            )
        except (ValueError, TypeError, AttributeError) as exc:
            raise CorpusParseError(str(exc), line=lineno, path=path) from None
        if r.label not in LABELS:
            raise CorpusParseError(f"unknown label {r.label!r}", line=lineno, path=path)
        out.append(r)
    return out


def graphs_from_records(records: Iterable[RelationRecord]) -> dict[str, MultimodalEventGraph]:
    by_doc: dict[str, list[Relation]] = {}
    for r in records:
        by_doc.setdefault(r.doc_id, []).append(
            Relation(r.text_event_id, r.video_event_id, r.label, r.confidence))
    return {d: MultimodalEventGraph(d, tuple(rels)) for d, rels in by_doc.items()}


def records_from_graph(graph: MultimodalEventGraph, provenance: Optional[str] = None
                       ) -> list[RelationRecord]:
    return [RelationRecord(graph.doc_id, r.text_event_id, r.video_event_id, r.label,
                           r.confidence, provenance) for r in graph.relations]


def check_relations(docs: Sequence[Document], records: Iterable[RelationRecord]) -> None:
    """Raise :class:`DataValidationError` if any record does not resolve in ``docs``."""
    by_id = {d.doc_id: d for d in docs}
    grouped: dict[str, list[Relation]] = {}
    for r in records:
        if r.doc_id not in by_id:
            raise DataValidationError("relation references unknown document", doc_id=r.doc_id)
        grouped.setdefault(r.doc_id, []).append(
            Relation(r.text_event_id, r.video_event_id, r.label, r.confidence))
    for doc_id, rels in grouped.items():
        problems = [v for v in validate_document(by_id[doc_id], rels)
                    if v.field.startswith("relation")]
        if problems:
            raise DataValidationError("; ".join(map(str, problems)), doc_id=doc_id)
