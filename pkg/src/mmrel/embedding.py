"""Joint text/image encoder interface, event-focused text encoding and scoring.

Real pretrained encoders plug in through :class:`JointEncoder`: they receive
a sentence, the trigger span and the per-token attention weights that replace
the uniform end-of-sequence pooling, and they encode frames in batches.  The
package ships only :class:`ToyEncoder`, a seeded hashing encoder with optional
planted concept vectors, so everything stays hermetic.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Optional, Protocol, Sequence

import numpy as np

from . import _kernels
from .checkpoint import read_tensors, write_tensors
from .errors import ConfigError, MissingInputError
from .eventgraph import Document, VideoEvent


@dataclass(frozen=True)
class EncoderConfig:
    dim: int = 512
    fps: float = 3.0
    mask_exponent: float = 1.0
    similarity_scale: float = 100.0

    def __post_init__(self):
        if not isinstance(self.dim, int) or self.dim < 2:
            raise ConfigError(f"encoder dim must be an integer >= 2, got {self.dim!r}")
        if not self.fps > 0:
            raise ConfigError(f"fps must be positive, got {self.fps!r}")
        if not self.mask_exponent > 0:
            raise ConfigError(f"mask_exponent must be positive, got {self.mask_exponent!r}")


# --------------------------------------------------------------------------
# attention mask


def span_attention_weights(length: int, start: int, end: int, p: float = 1.0) -> np.ndarray:
    """Weights over ``length`` tokens that decay as ``(1 + dist)**-p`` from ``[start, end)``.

    Tokens inside the span have distance 0.  The weights sum to one.
    """
    if not 0 <= start < end <= length:
        raise ValueError(f"span [{start}, {end}) outside sentence of length {length}")
    if not p > 0:
        raise ValueError("mask exponent must be positive")
    idx = np.arange(length)
    dist = np.maximum(start - idx, 0) + np.maximum(idx - (end - 1), 0)
    w = (1.0 + dist) ** (-float(p))
    return w / w.sum()


def event_attention_weights(length: int, k: int, p: float = 1.0) -> np.ndarray:
    """Polynomially decaying attention centred on token ``k``."""
    if not 0 <= k < length:
        raise ValueError(f"event position {k} outside sentence of length {length}")
    return span_attention_weights(length, k, k + 1, p)


# --------------------------------------------------------------------------
# encoder interface


class JointEncoder(Protocol):
    dim: int

    def encode_event_texts(self, items: Sequence[tuple[Sequence[str], np.ndarray]]) -> np.ndarray:
        """Encode ``(tokens, token_weights)`` items into an ``(N, dim)`` array."""

    def encode_frames(self, frames: Sequence[Any]) -> np.ndarray:
        """Encode frame descriptors (files, tags, ...) into an ``(N, dim)`` array."""


def _stable_seed(*parts) -> int:
    h = hashlib.blake2b(":".join(map(str, parts)).encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "little")


class ToyEncoder:
    """Deterministic hashing encoder.

    Every token maps to a seeded Gaussian direction.  Tokens registered as
    ``concepts`` map to orthonormal directions (when there are at most ``dim``
    of them), identical for text and frames; other vectors are projected off
    the concept span so unrelated content never scores like a concept.  A
    sentence is encoded as the weighted sum of its token vectors, normalised.
    """

    def __init__(self, dim: int = 512, seed: int = 0, concepts: Sequence[str] = ()):
        if dim < 2:
            raise ConfigError("toy encoder dim must be >= 2")
        self.dim = int(dim)
        self.seed = int(seed)
        self.concepts = tuple(dict.fromkeys(concepts))
        self._basis = {}
        self._complement = None
        if self.concepts:
            rng = np.random.default_rng(_stable_seed("basis", self.seed, self.dim))
            g = rng.standard_normal((self.dim, max(self.dim, len(self.concepts))))
            if len(self.concepts) <= self.dim:
                qmat, _ = np.linalg.qr(g[:, :self.dim])
                for i, c in enumerate(self.concepts):
                    self._basis[c] = qmat[:, i].copy()
                span = qmat[:, :len(self.concepts)]
                if len(self.concepts) < self.dim:
                    self._complement = np.eye(self.dim) - span @ span.T
            else:
                for i, c in enumerate(self.concepts):
                    col = g[:, i]
                    self._basis[c] = col / np.linalg.norm(col)
        self._cache: dict = {}

    def _vector(self, domain: str, token: str) -> np.ndarray:
        if token in self._basis:
            return self._basis[token]
        key = (domain, token)
        vec = self._cache.get(key)
        if vec is None:
            rng = np.random.default_rng(_stable_seed(domain, self.seed, self.dim, token))
            vec = rng.standard_normal(self.dim)
            if self._complement is not None:
                vec = self._complement @ vec
            vec = vec / np.linalg.norm(vec)
            self._cache[key] = vec
        return vec

    def token_vector(self, token: str) -> np.ndarray:
        return self._vector("text", token)

    def frame_vector(self, descriptor) -> np.ndarray:
        tag = descriptor[0] if isinstance(descriptor, tuple) else descriptor
        if tag is None:
            raise ValueError("toy encoder needs a frame descriptor")
        return self._vector("frame", str(tag))

    def encode_event_texts(self, items):
        out = np.empty((len(items), self.dim))
        for n, (tokens, weights) in enumerate(items):
            vec = np.zeros(self.dim)
            for tok, w in zip(tokens, weights):
                vec += w * self.token_vector(tok)
            norm = np.linalg.norm(vec)
            out[n] = vec / norm if norm > 0 else vec
        return out

    def encode_frames(self, frames):
        out = np.empty((len(frames), self.dim))
        for n, f in enumerate(frames):
            out[n] = self.frame_vector(f)
        return out

    def to_dict(self) -> dict:
        return {"kind": "toy", "dim": self.dim, "seed": self.seed, "concepts": list(self.concepts)}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, d: dict) -> "ToyEncoder":
        if d.get("kind", "toy") != "toy":
            raise ConfigError(f"unsupported encoder kind {d.get('kind')!r}")
        return cls(dim=int(d["dim"]), seed=int(d["seed"]), concepts=d.get("concepts", ()))

    @classmethod
    def load(cls, path) -> "ToyEncoder":
        path = Path(path)
        if not path.is_file():
            raise MissingInputError(f"no such file: {path}")
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"bad encoder spec {path}: {exc}") from None


def toy_encoder(seed: int, dim: int = 512, concepts: Sequence[str] = ()) -> ToyEncoder:
    return ToyEncoder(dim=dim, seed=seed, concepts=concepts)


# --------------------------------------------------------------------------
# event encoding


def encode_text_span(tokens: Sequence[str], span: tuple[int, int], encoder: JointEncoder,
                     mask_exponent: float = 1.0) -> np.ndarray:
    weights = span_attention_weights(len(tokens), span[0], span[1], mask_exponent)
    return encoder.encode_event_texts([(tuple(tokens), weights)])[0]


def encode_phrase(phrase: str, encoder: JointEncoder, mask_exponent: float = 1.0) -> np.ndarray:
    tokens = phrase.split()
    if not tokens:
        raise ValueError("empty phrase")
    return encode_text_span(tokens, (0, len(tokens)), encoder, mask_exponent)


def encode_text_event(doc: Document, event_id: str, encoder: JointEncoder,
                      config: Optional[EncoderConfig] = None) -> np.ndarray:
    config = config or EncoderConfig(dim=encoder.dim)
    if config.dim != encoder.dim:
        raise ConfigError(f"encoder dim {encoder.dim} != configured dim {config.dim}")
    ev = doc.text_event(event_id)
    return encode_text_span(doc.sentences[ev.sentence_index], ev.trigger_span, encoder,
                            config.mask_exponent)


def encode_video_event(frame_embeddings) -> np.ndarray:
    """Mean of the frame embeddings."""
    frames = np.asarray(frame_embeddings, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise ValueError("need at least one frame embedding")
    return frames.mean(axis=0)


def frame_times(start_s: float, end_s: float, fps: float) -> np.ndarray:
    """Midpoint-uniform sample times inside ``[start_s, end_s)``."""
    z = int(np.floor((end_s - start_s) * fps))
    if z < 1:
        return np.array([(start_s + end_s) / 2.0])
    return start_s + (np.arange(z) + 0.5) / fps


def similarity(a, b, scale: float = 100.0) -> float:
    """Scaled cosine similarity."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch {a.shape} vs {b.shape}")
    if a.ndim != 1:
        raise ValueError("similarity takes two vectors; use similarity_matrix for batches")
    # same kernel as the batched path, so thresholds agree to the last bit
    return float(similarity_matrix(a, b, scale)[0, 0])


def similarity_matrix(a, b, scale: float = 100.0) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    if a.shape[1] != b.shape[1]:
        raise ValueError("dimension mismatch")
    if not (np.linalg.norm(a, axis=1).all() and np.linalg.norm(b, axis=1).all()):
        raise ValueError("similarity of a zero vector is undefined")
    return scale * _kernels.cosine_matrix(a, b)


# --------------------------------------------------------------------------
# frame-embedding cache


class FrameCache:
    """Per-shot ``Z x d`` frame embeddings keyed by ``(doc_id, event_id)``."""

    def __init__(self, fps: float = 3.0):
        self.fps = float(fps)
        self._frames: dict = {}

    def __contains__(self, key) -> bool:
        return key in self._frames

    def __len__(self) -> int:
        return len(self._frames)

    def get(self, doc_id: str, event_id: str) -> np.ndarray:
        return self._frames[(doc_id, event_id)]

    def put(self, doc_id: str, event_id: str, frames) -> None:
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] == 0:
            raise ValueError("frames must be a non-empty Z x d matrix")
        self._frames[(doc_id, event_id)] = frames

    def save(self, path) -> None:
        tensors = []
        for (doc_id, event_id), frames in self._frames.items():
            z, d = frames.shape
            tensors.append((f"{len(tensors)}", frames,
                            {"doc_id": doc_id, "event_id": event_id, "Z": z, "d": d,
                             "f_s": self.fps}))
        write_tensors(path, {"kind": "frame-cache", "version": 1, "f_s": self.fps}, tensors)

    @classmethod
    def load(cls, path) -> "FrameCache":
        meta, entries, arrays = read_tensors(path)
        cache = cls(fps=meta.get("f_s", 3.0))
        for e in entries:
            cache.put(e["doc_id"], e["event_id"], arrays[e["name"]])
        return cache


def video_event_frames(doc: Document, ev: VideoEvent, encoder: JointEncoder,
                       config: EncoderConfig, cache: Optional[FrameCache] = None) -> np.ndarray:
    if cache is not None and (doc.doc_id, ev.id) in cache:
        return cache.get(doc.doc_id, ev.id)
    if ev.frame_ref is None:
        raise ValueError(f"video event {ev.id!r} has no frames in cache and no frame_ref")
    times = frame_times(ev.start_s, ev.end_s, config.fps)
    return encoder.encode_frames([(ev.frame_ref, float(t)) for t in times])


@dataclass
class DocEmbeddings:
    """Encoded events of one document, rows aligned with the id tuples."""

    doc_id: str
    text_ids: tuple
    text: np.ndarray
    video_ids: tuple
    video: np.ndarray

    def text_index(self) -> dict:
        return {e: i for i, e in enumerate(self.text_ids)}

    def video_index(self) -> dict:
        return {v: j for j, v in enumerate(self.video_ids)}


def embed_document(doc: Document, encoder: JointEncoder, config: Optional[EncoderConfig] = None,
                   cache: Optional[FrameCache] = None) -> DocEmbeddings:
    config = config or EncoderConfig(dim=encoder.dim)
    if config.dim != encoder.dim:
        raise ConfigError(f"encoder dim {encoder.dim} != configured dim {config.dim}")
    d = encoder.dim
    items = []
    for ev in doc.text_events:
        tokens = doc.sentences[ev.sentence_index]
        items.append((tokens, span_attention_weights(len(tokens), ev.trigger_span[0],
                                                     ev.trigger_span[1], config.mask_exponent)))
    text = encoder.encode_event_texts(items) if items else np.zeros((0, d))
    shots = sorted(doc.video_events, key=lambda v: v.start_s)
    video = np.zeros((len(shots), d))
    for j, ev in enumerate(shots):
        frames = video_event_frames(doc, ev, encoder, config, cache)
        if frames.shape[1] != d:
            raise ConfigError(f"frame dim {frames.shape[1]} != encoder dim {d}")
        video[j] = encode_video_event(frames)
    return DocEmbeddings(doc.doc_id, tuple(e.id for e in doc.text_events), np.asarray(text),
                         tuple(v.id for v in shots), video)


def encoder_config_dict(config: EncoderConfig) -> dict:
    return asdict(config)
