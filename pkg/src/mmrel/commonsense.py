"""Commonsense pair features learned from knowledge-base subevent edges.

Positive pairs are KB edges of the subevent relations; negatives are random
head/tail pairings.  Both phrases are embedded with the event text encoder and
concatenated; a small affine network maps the concatenation to a 512-d
feature.  Training pulls positive features towards a learned anchor direction
and pushes negatives at least ``margin`` (cosine distance) away from it.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from ._random import stream
from .checkpoint import read_tensors, write_tensors
from .embedding import JointEncoder, encode_phrase
from .errors import ConfigError, CorpusParseError, MissingInputError
from .nn import make_optimizer, relu

SUBEVENT_RELATIONS = ("HasSubevent", "HasFirstSubevent", "HasLastSubevent")
CS_DIM = 512
POSITIVE, NEGATIVE = "positive", "negative"


@dataclass(frozen=True)
class KbEdge:
    relation: str
    head: str
    tail: str


@dataclass(frozen=True)
class KbEventPair:
    head_phrase: str
    tail_phrase: str
    polarity: str

    def __post_init__(self):
        if not self.head_phrase.strip() or not self.tail_phrase.strip():
            raise ValueError("KB phrases must be non-empty")
        if self.polarity not in (POSITIVE, NEGATIVE):
            raise ValueError(f"bad polarity {self.polarity!r}")


def _norm_relation(rel: str) -> str:
    rel = rel.strip()
    return rel[3:] if rel.startswith("/r/") else rel


def parse_kb_lines(lines: Iterable[str], path=None) -> list[KbEdge]:
    edges = []
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3 or not all(p.strip() for p in parts):
            raise CorpusParseError("expected relation<TAB>head<TAB>tail", line=lineno, path=path)
        edges.append(KbEdge(_norm_relation(parts[0]), parts[1].strip(), parts[2].strip()))
    return edges


def load_kb_edges(path) -> list[KbEdge]:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"no such file: {path}")
    with path.open(encoding="utf-8") as fh:
        return parse_kb_lines(fh, path=path)


def save_kb_edges(edges: Iterable[KbEdge], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for e in edges:
            fh.write(f"{e.relation}\t{e.head}\t{e.tail}\n")


def toy_kb_path() -> Path:
    """The bundled 50-edge fixture KB."""
    return Path(__file__).parent / "data" / "toy_kb.tsv"


def extract_kb_pairs(kb_edges: Iterable, allowed_relations: Sequence[str] = SUBEVENT_RELATIONS,
                     neg_ratio: float = 1.0, seed: int = 0) -> list[KbEventPair]:
    """Positive subevent pairs followed by seeded random negatives."""
    if neg_ratio < 0:
        raise ValueError("neg_ratio must be >= 0")
    allowed = {_norm_relation(r) for r in allowed_relations}
    positives, seen = [], set()
    for e in kb_edges:
        if not isinstance(e, KbEdge):
            e = KbEdge(_norm_relation(e[0]), e[1], e[2])
        if e.relation in allowed and (e.head, e.tail) not in seen:
            seen.add((e.head, e.tail))
            positives.append(KbEventPair(e.head, e.tail, POSITIVE))
    n_neg = int(round(neg_ratio * len(positives)))
    if n_neg == 0:
        return positives
    heads = sorted({p.head_phrase for p in positives})
    pool = sorted({p.head_phrase for p in positives} | {p.tail_phrase for p in positives})
    rng = stream(seed, "kb-negatives")
    chosen: list = []
    taken = set(seen)
    attempts = 0
    while len(chosen) < n_neg and attempts < 50 * n_neg:
        attempts += 1
        h = heads[rng.integers(len(heads))]
        t = pool[rng.integers(len(pool))]
        if h != t and (h, t) not in taken:
            taken.add((h, t))
            chosen.append((h, t))
    if len(chosen) < n_neg:
        rest = [(h, t) for h in heads for t in pool if h != t and (h, t) not in taken]
        need = n_neg - len(chosen)
        if need > len(rest):
            raise ValueError(f"cannot draw {n_neg} distinct negatives from {len(heads)} heads")
        idx = rng.choice(len(rest), size=need, replace=False)
        chosen.extend(rest[i] for i in sorted(idx))
    return positives + [KbEventPair(h, t, NEGATIVE) for h, t in chosen]


# --------------------------------------------------------------------------
# extractor


class FrozenError(RuntimeError):
    pass


class CsExtractor:
    """Affine (optionally deeper) map from ``[a; b]`` to a 512-d feature."""

    def __init__(self, weights: list, biases: list, anchor: np.ndarray, margin: float = 0.5):
        if len(weights) != len(biases) or not weights:
            raise ValueError("need matching, non-empty weight and bias lists")
        self.params = {}
        for i, (w, b) in enumerate(zip(weights, biases)):
            self.params[f"w{i}"] = np.array(w, dtype=np.float64)
            self.params[f"b{i}"] = np.array(b, dtype=np.float64)
        self.params["anchor"] = np.array(anchor, dtype=np.float64)
        self.depth = len(weights)
        self.margin = float(margin)
        self.frozen = False
        self.history: list = []

    @classmethod
    def init(cls, in_dim: int, out_dim: int = CS_DIM, depth: int = 1, seed: int = 0,
             margin: float = 0.5) -> "CsExtractor":
        if depth < 1:
            raise ConfigError("CS depth must be >= 1")
        rng = stream(seed, "cs-init")
        ws, bs, fan = [], [], in_dim
        for _ in range(depth):
            ws.append(rng.normal(0.0, 1.0 / np.sqrt(fan), size=(fan, out_dim)))
            bs.append(np.zeros(out_dim))
            fan = out_dim
        anchor = rng.normal(0.0, 1.0 / np.sqrt(out_dim), size=out_dim)
        return cls(ws, bs, anchor, margin)

    @property
    def in_dim(self) -> int:
        return self.params["w0"].shape[0]

    @property
    def out_dim(self) -> int:
        return self.params[f"w{self.depth - 1}"].shape[1]

    def freeze(self) -> "CsExtractor":
        self.frozen = True
        for arr in self.params.values():
            arr.setflags(write=False)
        return self

    def apply_update(self, optimizer, grads) -> None:
        if self.frozen:
            raise FrozenError("extractor is frozen")
        optimizer.step(self.params, grads)

    # forward / backward on stacked pair inputs ------------------------------

    def forward(self, x, params=None):
        """Features for stacked inputs ``x`` (N, in_dim); returns ``(out, cache)``."""
        p = self.params if params is None else params
        acts = [x]
        h = x
        for i in range(self.depth):
            h = h @ p[f"w{i}"] + p[f"b{i}"]
            if i < self.depth - 1:
                h = relu(h)
            acts.append(h)
        return h, acts

    def backward_input(self, dout, acts):
        """Gradient w.r.t. the input only (weights untouched)."""
        g = dout
        for i in reversed(range(self.depth)):
            if i < self.depth - 1:
                g = g * (acts[i + 1] > 0)
            g = g @ self.params[f"w{i}"].T
        return g

    def __call__(self, a, b):
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        x = np.concatenate([a, b], axis=-1)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"CS expects concatenated width {self.in_dim}, got {x.shape[-1]}")
        out, _ = self.forward(np.atleast_2d(x))
        return out[0] if x.ndim == 1 else out

    # persistence ------------------------------------------------------------

    def tensors(self, prefix: str = ""):
        return [(prefix + name, arr) for name, arr in self.params.items()]

    def meta(self) -> dict:
        return {"kind": "cs-extractor", "version": 1, "depth": self.depth,
                "in_dim": self.in_dim, "out_dim": self.out_dim, "margin": self.margin,
                "frozen": self.frozen}

    def save(self, path) -> None:
        write_tensors(path, self.meta(), self.tensors())

    @classmethod
    def from_arrays(cls, meta: dict, arrays: dict, prefix: str = "") -> "CsExtractor":
        depth = int(meta["depth"])
        ex = cls([arrays[f"{prefix}w{i}"] for i in range(depth)],
                 [arrays[f"{prefix}b{i}"] for i in range(depth)],
                 arrays[f"{prefix}anchor"], meta.get("margin", 0.5))
        if meta.get("frozen", True):
            ex.freeze()
        return ex

    @classmethod
    def load(cls, path) -> "CsExtractor":
        meta, _, arrays = read_tensors(path)
        if meta.get("kind") != "cs-extractor":
            raise ConfigError(f"{path} is not a CS extractor checkpoint")
        return cls.from_arrays(meta, arrays)


def cs_features(ft, cfv, extractor: CsExtractor) -> np.ndarray:
    """Commonsense feature of a (text, video) pair; the extractor must be frozen."""
    if not extractor.frozen:
        raise ValueError("cs_features needs a frozen extractor")
    ft = np.asarray(ft, dtype=np.float64)
    cfv = np.asarray(cfv, dtype=np.float64)
    if ft.shape[-1] != cfv.shape[-1] or ft.shape[-1] + cfv.shape[-1] != extractor.in_dim:
        raise ValueError(f"dimension mismatch: {ft.shape[-1]} + {cfv.shape[-1]} "
                         f"vs extractor input {extractor.in_dim}")
    return extractor(ft, cfv)


# --------------------------------------------------------------------------
# contrastive objective


def contrastive_loss(extractor: CsExtractor, x, positive, params=None):
    """Margin loss on cosine distance to the anchor; returns ``(loss, grads)``.

    ``x`` is ``(N, in_dim)``, ``positive`` a boolean vector.  Positives pay
    ``dist**2``, negatives ``max(0, margin - dist)**2``; the loss is the mean.
    """
    p = extractor.params if params is None else params
    positive = np.asarray(positive, dtype=bool)
    n = len(positive)
    z, acts = extractor.forward(x, p)
    a = p["anchor"]
    zn = np.linalg.norm(z, axis=1)
    an = np.linalg.norm(a)
    cos = (z @ a) / (zn * an)
    dist = 1.0 - cos
    hinge = np.maximum(extractor.margin - dist, 0.0)
    per = np.where(positive, dist ** 2, hinge ** 2)
    loss = float(per.mean())

    dd = np.where(positive, 2.0 * dist, -2.0 * hinge) / n
    dcos = -dd
    dz = dcos[:, None] * (a[None, :] / (zn * an)[:, None] - cos[:, None] * z / (zn ** 2)[:, None])
    da = (dcos[:, None] * (z / (zn * an)[:, None] - cos[:, None] * a[None, :] / an ** 2)).sum(0)
    grads = {"anchor": da}
    g = dz
    for i in reversed(range(extractor.depth)):
        if i < extractor.depth - 1:
            g = g * (acts[i + 1] > 0)
        grads[f"w{i}"] = acts[i].T @ g
        grads[f"b{i}"] = g.sum(axis=0)
        g = g @ p[f"w{i}"].T
    return loss, grads


def embed_pairs(pairs: Sequence[KbEventPair], encoder: JointEncoder, mask_exponent: float = 1.0):
    cache: dict = {}

    def vec(phrase):
        if phrase not in cache:
            cache[phrase] = encode_phrase(phrase, encoder, mask_exponent)
        return cache[phrase]

    x = np.stack([np.concatenate([vec(p.head_phrase), vec(p.tail_phrase)]) for p in pairs])
    positive = np.array([p.polarity == POSITIVE for p in pairs])
    return x, positive


def train_cs(pairs: Sequence[KbEventPair], encoder: JointEncoder, epochs: int = 200,
             margin: float = 0.5, seed: int = 0, lr: float = 0.1, momentum: float = 0.9,
             out_dim: int = CS_DIM, depth: int = 1, mask_exponent: float = 1.0,
             optimizer: str = "sgd") -> CsExtractor:
    """Full-batch training; returns a frozen extractor with ``history`` set.

    ``history[e]`` is the loss before update ``e``; the final entry is the loss
    after the last update.
    """
    n_pos = sum(p.polarity == POSITIVE for p in pairs)
    if n_pos == 0 or n_pos == len(pairs):
        raise ValueError("contrastive training needs at least one positive and one negative pair")
    x, positive = embed_pairs(pairs, encoder, mask_exponent)
    ex = CsExtractor.init(x.shape[1], out_dim, depth, seed, margin)
    opt = make_optimizer(optimizer, lr, momentum)
    history = []
    for _ in range(epochs):
        loss, grads = contrastive_loss(ex, x, positive)
        history.append(loss)
        ex.apply_update(opt, grads)
    history.append(contrastive_loss(ex, x, positive)[0])
    ex.history = history
    return ex.freeze()


def pair_scores(extractor: CsExtractor, x) -> np.ndarray:
    """Cosine of each feature with the anchor (higher means more subevent-like)."""
    z, _ = extractor.forward(np.atleast_2d(x))
    a = extractor.params["anchor"]
    return (z @ a) / (np.linalg.norm(z, axis=1) * np.linalg.norm(a))


def load_kb_pairs(path: Optional[str], neg_ratio: float = 1.0, seed: int = 0) -> list[KbEventPair]:
    return extract_kb_pairs(load_kb_edges(path or toy_kb_path()), neg_ratio=neg_ratio, seed=seed)
