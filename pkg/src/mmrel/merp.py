"""The multimodal event relation predictor.

Pipeline for one (text event, shot) pair::

    fv_1..fv_n --(+ learned positions, attention layers)--> cfv_j
    z = [ft ; cfv ; CS(ft, cfv) ; ft - cfv ; ft * cfv]
    p = softmax(W2 relu(W1 z + b1) + b2)        # (Hierarchical, Identical, NoRel)

Each of the contextual transformer (CT), the commonsense block (CS) and the
embedding interactions (EI) can be switched off.  All gradients are written
out by hand; the attention core runs in :mod:`mmrel._kernels`.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import _kernels
from ._random import stream
from .checkpoint import read_tensors, write_tensors
from .commonsense import CsExtractor
from .embedding import DocEmbeddings, EncoderConfig, FrameCache, JointEncoder, embed_document, similarity_matrix
from .errors import ConfigError
from .eventgraph import (HIERARCHICAL, IDENTICAL, LABELS, NOREL, Document, MultimodalEventGraph,
                         Relation)
from .nn import glorot, make_optimizer, relu, softmax, weighted_cross_entropy

log = logging.getLogger(__name__)

LABEL_INDEX = {lab: i for i, lab in enumerate(LABELS)}


@dataclass(frozen=True)
class MerpConfig:
    dim: int = 512
    ct_layers: int = 1
    ct_heads: int = 8
    max_video_events: int = 77
    use_ct: bool = True
    use_cs: bool = True
    use_ei: bool = True
    hidden: Optional[int] = None
    lr: float = 1e-5
    batch_size: int = 1024
    epochs: int = 15
    prune_threshold: float = 28.0
    optimizer: str = "sgd"
    momentum: float = 0.9
    norel_ratio: Optional[float] = None
    holdout_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.ct_layers < 1:
            raise ConfigError("ct_layers must be >= 1")
        if self.max_video_events < 1:
            raise ConfigError("max_video_events must be >= 1")
        if self.ct_heads < 1 or self.dim % self.ct_heads:
            raise ConfigError(f"dim {self.dim} is not divisible by ct_heads {self.ct_heads}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.norel_ratio is not None and self.norel_ratio < 0:
            raise ConfigError("norel_ratio must be >= 0")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigError("holdout_fraction must be in [0, 1)")

    @classmethod
    def from_dict(cls, d: Mapping) -> "MerpConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown MERP config keys: {sorted(unknown)}")
        return cls(**d)

    def variant(self, **changes) -> "MerpConfig":
        return MerpConfig(**{**asdict(self), **changes})


def class_weights(counts: Sequence[int]) -> tuple:
    """Inverse-frequency weights ``total / (3 * count)`` for (H, I, NoRel)."""
    counts = list(counts)
    if len(counts) != 3:
        raise ValueError("need three class counts")
    if any(c <= 0 for c in counts):
        raise ValueError(f"every class count must be positive, got {counts}")
    total = sum(counts)
    return tuple(total / (3.0 * c) for c in counts)


def interaction_features(ft, cfv):
    ft = np.asarray(ft, dtype=np.float64)
    cfv = np.asarray(cfv, dtype=np.float64)
    if ft.shape != cfv.shape:
        raise ValueError(f"dimension mismatch {ft.shape} vs {cfv.shape}")
    return ft - cfv, ft * cfv


@dataclass
class PairFeatures:
    ft: np.ndarray
    cfv: np.ndarray
    cs: Optional[np.ndarray] = None
    sf: Optional[np.ndarray] = None
    mf: Optional[np.ndarray] = None

    def concat(self) -> np.ndarray:
        blocks = [self.ft, self.cfv] + [b for b in (self.cs, self.sf, self.mf) if b is not None]
        return np.concatenate(blocks, axis=-1)


# --------------------------------------------------------------------------
# contextual transformer


def ct_forward(params, config: MerpConfig, x, mask):
    """Run the attention stack on padded shot sequences ``x`` (B, N, d)."""
    nb, nt, d = x.shape
    h = config.ct_heads
    dh = d // h
    cur = x + params["ct.pos"][:nt][None, :, :]
    caches = []
    for layer in range(config.ct_layers):
        p = f"ct.{layer}."

        def split(t):
            return t.reshape(nb, nt, h, dh).transpose(0, 2, 1, 3)

        q, k, v = split(cur @ params[p + "wq"]), split(cur @ params[p + "wk"]), split(cur @ params[p + "wv"])
        out, probs = _kernels.attention_forward(q, k, v, mask)
        ctx = out.transpose(0, 2, 1, 3).reshape(nb, nt, d)
        caches.append((cur, q, k, v, probs, ctx))
        cur = cur + ctx @ params[p + "wo"]
    return cur, caches


def ct_backward(params, config: MerpConfig, dout, caches, grads):
    nb, nt, d = dout.shape
    h = config.ct_heads
    dh = d // h
    g = dout
    for layer in reversed(range(config.ct_layers)):
        p = f"ct.{layer}."
        cur, q, k, v, probs, ctx = caches[layer]
        grads[p + "wo"] += ctx.reshape(-1, d).T @ g.reshape(-1, d)
        dctx = (g @ params[p + "wo"].T).reshape(nb, nt, h, dh).transpose(0, 2, 1, 3)
        dq, dk, dv = _kernels.attention_backward(dctx, q, k, v, probs)

        def merge(t):
            return t.transpose(0, 2, 1, 3).reshape(nb, nt, d)

        dq, dk, dv = merge(dq), merge(dk), merge(dv)
        flat = cur.reshape(-1, d)
        grads[p + "wq"] += flat.T @ dq.reshape(-1, d)
        grads[p + "wk"] += flat.T @ dk.reshape(-1, d)
        grads[p + "wv"] += flat.T @ dv.reshape(-1, d)
        g = g + dq @ params[p + "wq"].T + dk @ params[p + "wk"].T + dv @ params[p + "wv"].T
    grads["ct.pos"][:nt] += g.sum(axis=0)


# --------------------------------------------------------------------------
# model


class MerpModel:
    def __init__(self, config: MerpConfig, params: dict, cs: Optional[CsExtractor] = None):
        if config.use_cs:
            if cs is None:
                raise ConfigError("use_cs is on but no commonsense extractor was given")
            if cs.in_dim != 2 * config.dim:
                raise ConfigError(f"CS extractor expects {cs.in_dim // 2}-d embeddings, "
                                  f"model uses {config.dim}")
            if not cs.frozen:
                cs.freeze()
        self.config = config
        self.params = params
        self.cs = cs if config.use_cs else None

    # sizes ----------------------------------------------------------------

    @staticmethod
    def widths(config: MerpConfig, cs_dim: int) -> tuple:
        d = config.dim
        width = 2 * d + (cs_dim if config.use_cs else 0) + (2 * d if config.use_ei else 0)
        hidden = config.hidden or max(1, int(round(math.sqrt(width * 3))))
        return width, hidden

    @property
    def input_width(self) -> int:
        return self.widths(self.config, self.cs.out_dim if self.cs else 0)[0]

    @classmethod
    def init(cls, config: MerpConfig, cs: Optional[CsExtractor] = None) -> "MerpModel":
        rng = stream(config.seed, "merp-init")
        d = config.dim
        params = {}
        if config.use_ct:
            params["ct.pos"] = rng.normal(0.0, 0.02, size=(config.max_video_events, d))
            for layer in range(config.ct_layers):
                p = f"ct.{layer}."
                for name in ("wq", "wk", "wv"):
                    params[p + name] = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d))
                params[p + "wo"] = rng.normal(0.0, 0.1 / np.sqrt(d), size=(d, d))
        cs_dim = cs.out_dim if (cs is not None and config.use_cs) else 0
        width, hidden = cls.widths(config, cs_dim)
        params["head.w1"] = glorot(rng, width, hidden)
        params["head.b1"] = np.zeros(hidden)
        params["head.w2"] = glorot(rng, hidden, 3)
        params["head.b2"] = np.zeros(3)
        return cls(config, params, cs)

    def param_groups(self) -> dict:
        groups = {"ct": [], "head": []}
        for name in self.params:
            groups[name.split(".")[0]].append(name)
        return groups

    # forward pieces ----------------------------------------------------------

    def contextualize_batch(self, x, mask, params=None):
        params = self.params if params is None else params
        if not self.config.use_ct:
            return x, None
        return ct_forward(params, self.config, x, mask)

    def assemble(self, ft, cfv):
        blocks = [ft, cfv]
        cs_acts = None
        if self.cs is not None:
            cs_out, cs_acts = self.cs.forward(np.concatenate([ft, cfv], axis=1))
            blocks.append(cs_out)
        if self.config.use_ei:
            blocks.extend(interaction_features(ft, cfv))
        return np.concatenate(blocks, axis=1), cs_acts

    def assemble_backward(self, dz, ft, cs_acts):
        d = self.config.dim
        dcfv = dz[:, d:2 * d].copy()
        off = 2 * d
        if self.cs is not None:
            w = self.cs.out_dim
            dx = self.cs.backward_input(dz[:, off:off + w], cs_acts)
            dcfv += dx[:, d:]
            off += w
        if self.config.use_ei:
            dsf = dz[:, off:off + d]
            dmf = dz[:, off + d:off + 2 * d]
            dcfv += -dsf + dmf * ft
        return dcfv

    def head(self, z, params=None):
        p = self.params if params is None else params
        a1 = z @ p["head.w1"] + p["head.b1"]
        h1 = relu(a1)
        return h1 @ p["head.w2"] + p["head.b2"], (a1, h1)

    def head_backward(self, dlogits, z, cache, grads):
        a1, h1 = cache
        grads["head.w2"] += h1.T @ dlogits
        grads["head.b2"] += dlogits.sum(axis=0)
        da1 = (dlogits @ self.params["head.w2"].T) * (a1 > 0)
        grads["head.w1"] += z.T @ da1
        grads["head.b1"] += da1.sum(axis=0)
        return da1 @ self.params["head.w1"].T

    def logits_for(self, batch: "Batch"):
        xout, _ = self.contextualize_batch(batch.x, batch.mask)
        cfv = xout[batch.pair_doc, batch.pair_shot]
        z, _ = self.assemble(batch.ft, cfv)
        return self.head(z)[0]

    def loss_and_grads(self, batch: "Batch", weights):
        """Class-weighted cross-entropy on ``batch`` and gradients for every parameter."""
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        xout, caches = self.contextualize_batch(batch.x, batch.mask)
        cfv = xout[batch.pair_doc, batch.pair_shot]
        z, cs_acts = self.assemble(batch.ft, cfv)
        logits, hcache = self.head(z)
        loss, dlogits, wsum = weighted_cross_entropy(logits, batch.y, weights)
        dz = self.head_backward(dlogits, z, hcache, grads)
        if self.config.use_ct:
            dcfv = self.assemble_backward(dz, batch.ft, cs_acts)
            dx = np.zeros_like(xout)
            np.add.at(dx, (batch.pair_doc, batch.pair_shot), dcfv)
            ct_backward(self.params, self.config, dx, caches, grads)
        return loss, grads, wsum

    # persistence -------------------------------------------------------------

    def save(self, path) -> None:
        meta = {"kind": "merp", "version": 1, "config": asdict(self.config),
                "cs": self.cs.meta() if self.cs is not None else None}
        tensors = [(name, arr) for name, arr in self.params.items()]
        if self.cs is not None:
            tensors.extend(self.cs.tensors(prefix="cs."))
        write_tensors(path, meta, tensors)

    @classmethod
    def load(cls, path) -> "MerpModel":
        meta, _, arrays = read_tensors(path)
        if meta.get("kind") != "merp":
            raise ConfigError(f"{path} is not a MERP checkpoint")
        config = MerpConfig.from_dict(meta["config"])
        cs = CsExtractor.from_arrays(meta["cs"], arrays, prefix="cs.") if meta.get("cs") else None
        params = {k: v for k, v in arrays.items() if not k.startswith("cs.")}
        return cls(config, params, cs)


# --------------------------------------------------------------------------
# single-pair / single-video API


def contextualize(video_embs, model: MerpModel) -> list:
    """Contextualised shot embeddings for the first ``max_video_events`` shots."""
    embs = [np.asarray(e, dtype=np.float64) for e in video_embs]
    if not embs:
        raise ValueError("need at least one video event embedding")
    embs = embs[:model.config.max_video_events]
    x = np.stack(embs)[None]
    mask = np.ones((1, len(embs)), dtype=bool)
    out, _ = model.contextualize_batch(x, mask)
    return list(out[0])


def pair_features(ft, cfv, model: MerpModel) -> PairFeatures:
    ft = np.asarray(ft, dtype=np.float64)
    cfv = np.asarray(cfv, dtype=np.float64)
    feats = PairFeatures(ft, cfv)
    if model.cs is not None:
        feats.cs = model.cs(ft, cfv)
    if model.config.use_ei:
        feats.sf, feats.mf = interaction_features(ft, cfv)
    return feats


def classify_pair(features: PairFeatures, model: MerpModel) -> np.ndarray:
    """Probabilities over (Hierarchical, Identical, NoRel)."""
    z = np.atleast_2d(features.concat())
    if z.shape[1] != model.params["head.w1"].shape[0]:
        raise ValueError(f"feature width {z.shape[1]} != model input width "
                         f"{model.params['head.w1'].shape[0]}")
    logits, _ = model.head(z)
    return softmax(logits)[0]


# --------------------------------------------------------------------------
# batching and training


@dataclass
class Batch:
    x: np.ndarray          # (B, N, d) padded shot embeddings
    mask: np.ndarray       # (B, N)
    pair_doc: np.ndarray   # (P,) row into x
    pair_shot: np.ndarray  # (P,) column into x
    ft: np.ndarray         # (P, d)
    y: np.ndarray          # (P,)


@dataclass
class ExampleSet:
    """Flattened (text, shot) pairs over a list of documents."""

    video: list            # per-document (n_eff, d) shot matrices
    text: list             # per-document (m, d) text matrices
    doc: np.ndarray
    trow: np.ndarray
    shot: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)

    def batch(self, idx) -> Batch:
        idx = np.asarray(idx)
        docs, inverse = np.unique(self.doc[idx], return_inverse=True)
        nt = max(self.video[k].shape[0] for k in docs)
        d = self.video[docs[0]].shape[1]
        x = np.zeros((len(docs), nt, d))
        mask = np.zeros((len(docs), nt), dtype=bool)
        for r, k in enumerate(docs):
            n = self.video[k].shape[0]
            x[r, :n] = self.video[k]
            mask[r, :n] = True
        ft = np.stack([self.text[k][t] for k, t in zip(self.doc[idx], self.trow[idx])])
        return Batch(x, mask, inverse.reshape(-1), self.shot[idx], ft, self.y[idx])


def build_examples(docs: Sequence[Document], embeddings: Mapping[str, DocEmbeddings],
                   labels: Mapping, config: MerpConfig) -> ExampleSet:
    """All pairs of ``docs`` with labels from ``labels`` (missing pairs are NoRel)."""
    video, text, dd, tt, ss, yy = [], [], [], [], [], []
    for k, doc in enumerate(docs):
        emb = embeddings[doc.doc_id]
        n_eff = len(emb.video_ids)
        if config.use_ct:
            n_eff = min(n_eff, config.max_video_events)
        video.append(emb.video[:n_eff])
        text.append(emb.text)
        for i, t in enumerate(emb.text_ids):
            for j in range(n_eff):
                dd.append(k)
                tt.append(i)
                ss.append(j)
                yy.append(LABEL_INDEX[labels.get((doc.doc_id, t, emb.video_ids[j]), NOREL)])
    as_int = lambda a: np.asarray(a, dtype=np.int64)  # noqa: E731
    return ExampleSet(video, text, as_int(dd), as_int(tt), as_int(ss), as_int(yy))


@dataclass
class TrainResult:
    model: MerpModel
    history: list = field(default_factory=list)
    log_rows: list = field(default_factory=list)
    class_weights: tuple = ()
    class_counts: tuple = ()

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "weighted_loss", "acc_hierarchical", "acc_identical", "acc_norel"])
        for row in self.log_rows:
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()


def _holdout_split(n_docs: int, fraction: float, seed: int):
    order = stream(seed, "holdout").permutation(n_docs)
    n_hold = int(math.floor(n_docs * fraction)) if n_docs >= 2 else 0
    return np.sort(order[n_hold:]), np.sort(order[:n_hold])


def _per_class_accuracy(model: MerpModel, ex: ExampleSet, chunk: int = 4096):
    if len(ex) == 0:
        return (float("nan"),) * 3
    pred = np.empty(len(ex), dtype=np.int64)
    for s in range(0, len(ex), chunk):
        idx = np.arange(s, min(s + chunk, len(ex)))
        pred[idx] = model.logits_for(ex.batch(idx)).argmax(axis=1)
    out = []
    for c in range(3):
        sel = ex.y == c
        out.append(float((pred[sel] == c).mean()) if sel.any() else float("nan"))
    return tuple(out)


def train(pseudo_labels, corpus: Sequence[Document], encoder: Optional[JointEncoder],
          cs_extractor: Optional[CsExtractor], config: MerpConfig,
          embeddings: Optional[Mapping[str, DocEmbeddings]] = None,
          encoder_config: Optional[EncoderConfig] = None,
          frame_cache: Optional[FrameCache] = None) -> TrainResult:
    """Train on pseudo labels; unlabeled pairs of ``corpus`` serve as NoRel."""
    labels = pseudo_labels if isinstance(pseudo_labels, Mapping) else \
        {lab.key: lab.label for lab in pseudo_labels}
    if not labels:
        raise ValueError("training needs at least one pseudo label")
    if embeddings is None:
        if encoder is None:
            raise ConfigError("need an encoder or precomputed embeddings")
        if encoder.dim != config.dim:
            raise ConfigError(f"encoder dim {encoder.dim} != model dim {config.dim}")
        enc_cfg = encoder_config or EncoderConfig(dim=encoder.dim)
        embeddings = {d.doc_id: embed_document(d, encoder, enc_cfg, frame_cache) for d in corpus}
    for emb in embeddings.values():
        if emb.video.shape[1:] != (config.dim,) and emb.video.size:
            raise ConfigError(f"embedding dim {emb.video.shape[1]} != model dim {config.dim}")
        break
    if config.use_cs and cs_extractor is not None and cs_extractor.in_dim != 2 * config.dim:
        raise ConfigError(f"CS extractor input {cs_extractor.in_dim} != 2 x model dim {config.dim}")

    model = MerpModel.init(config, cs_extractor)
    train_idx, hold_idx = _holdout_split(len(corpus), config.holdout_fraction, config.seed)
    train_set = build_examples([corpus[i] for i in train_idx], embeddings, labels, config)
    hold_set = build_examples([corpus[i] for i in hold_idx], embeddings, labels, config)
    if len(train_set) == 0:
        raise ValueError("no training pairs")

    labeled = np.flatnonzero(train_set.y != LABEL_INDEX[NOREL])
    unlabeled = np.flatnonzero(train_set.y == LABEL_INDEX[NOREL])
    n_norel = len(unlabeled) if config.norel_ratio is None else \
        min(len(unlabeled), int(round(config.norel_ratio * len(labeled))))
    counts = [int((train_set.y[labeled] == c).sum()) for c in range(2)] + [n_norel]
    smoothed = [max(c, 1) for c in counts]
    if smoothed != counts:
        log.warning("class counts %s contain zeros; using add-one smoothing for weights", counts)
    weights = class_weights(smoothed)

    opt = make_optimizer(config.optimizer, config.lr, config.momentum)
    rng = stream(config.seed, "merp-batches")
    result = TrainResult(model, class_weights=weights, class_counts=tuple(counts))
    for epoch in range(config.epochs):
        if config.norel_ratio is None:
            pool = np.arange(len(train_set))
        else:
            pick = rng.choice(len(unlabeled), size=n_norel, replace=False) if n_norel else []
            pool = np.concatenate([labeled, unlabeled[np.sort(np.asarray(pick, dtype=np.int64))]])
        order = pool[rng.permutation(len(pool))]
        tot, wtot = 0.0, 0.0
        for s in range(0, len(order), config.batch_size):
            batch = train_set.batch(order[s:s + config.batch_size])
            loss, grads, wsum = model.loss_and_grads(batch, weights)
            opt.step(model.params, grads)
            tot += loss * wsum
            wtot += wsum
        epoch_loss = tot / wtot
        result.history.append(epoch_loss)
        acc = _per_class_accuracy(model, hold_set)
        result.log_rows.append((epoch + 1, epoch_loss) + acc)
        log.info("epoch %d loss %.5f", epoch + 1, epoch_loss)
    return result


# --------------------------------------------------------------------------
# inference


def predict_doc_probs(model: MerpModel, emb: DocEmbeddings) -> np.ndarray:
    """``(m, n_eff, 3)`` probabilities; shots beyond the CT cap are excluded."""
    m, n = len(emb.text_ids), len(emb.video_ids)
    if model.config.use_ct:
        n = min(n, model.config.max_video_events)
    if m == 0 or n == 0:
        return np.zeros((m, n, 3))
    x = emb.video[:n][None]
    xout, _ = model.contextualize_batch(x, np.ones((1, n), dtype=bool))
    cfv = np.repeat(xout[0][None], m, axis=0).reshape(m * n, -1)
    ft = np.repeat(emb.text, n, axis=0)
    z, _ = model.assemble(ft, cfv)
    return softmax(model.head(z)[0]).reshape(m, n, 3)


def prune_identical(predictions: Sequence[Relation], scores: Mapping, threshold: float = 28.0
                    ) -> list[Relation]:
    """Relabel Identical predictions scoring below ``threshold`` as NoRel.

    ``scores`` maps ``(text_event_id, video_event_id)`` to the encoder similarity.
    """
    out = []
    for r in predictions:
        if r.label == IDENTICAL and scores[(r.text_event_id, r.video_event_id)] < threshold:
            r = Relation(r.text_event_id, r.video_event_id, NOREL, r.confidence)
        out.append(r)
    return out


def predict_graph(doc: Document, model: MerpModel, encoder: Optional[JointEncoder] = None,
                  prune: bool = True, emb: Optional[DocEmbeddings] = None,
                  encoder_config: Optional[EncoderConfig] = None,
                  frame_cache: Optional[FrameCache] = None) -> MultimodalEventGraph:
    if emb is None:
        enc_cfg = encoder_config or EncoderConfig(dim=encoder.dim)
        emb = embed_document(doc, encoder, enc_cfg, frame_cache)
    scale = encoder_config.similarity_scale if encoder_config else 100.0
    probs = predict_doc_probs(model, emb)
    rels = []
    for i, t in enumerate(emb.text_ids):
        for j in range(probs.shape[1]):
            c = int(probs[i, j].argmax())
            rels.append(Relation(t, emb.video_ids[j], LABELS[c], float(probs[i, j, c])))
    if prune and rels:
        sims = similarity_matrix(emb.text, emb.video, scale)
        ti, vi = emb.text_index(), emb.video_index()
        scores = {(r.text_event_id, r.video_event_id): sims[ti[r.text_event_id], vi[r.video_event_id]]
                  for r in rels if r.label == IDENTICAL}
        rels = prune_identical(rels, scores, model.config.prune_threshold)
    return MultimodalEventGraph(doc.doc_id, tuple(r for r in rels if r.label != NOREL))
