"""Relation metrics, annotator agreement, baselines and report rendering.

Label sets are plain mappings from ``(doc_id, text_event_id, video_event_id)``
to a label.  Keys that are absent count as NoRel.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from ._random import stream
from .errors import CorpusParseError, DataValidationError, MissingInputError
from .eventgraph import HIERARCHICAL, IDENTICAL, LABELS, NOREL, RELATION_TYPES, TextEvent
from .pseudolabel import DEFAULT_LAMBDA, generate_pseudo_labels


def relation_counts(gold: Mapping, pred: Mapping, t: str) -> tuple[int, int, int]:
    """``(true positives, predicted t, gold t)`` for relation type ``t``."""
    pred_t = {k for k, v in pred.items() if v == t}
    gold_t = {k for k, v in gold.items() if v == t}
    return len(pred_t & gold_t), len(pred_t), len(gold_t)


def f1_score(p, r):
    return 0 * p if p + r == 0 else 2 * p * r / (p + r)


def relation_prf(gold: Mapping, pred: Mapping, t: str, exact: bool = False):
    """Precision, recall and F1 of type ``t``; empty denominators give 0.

    With ``exact=True`` the values are :class:`fractions.Fraction`.
    """
    if t not in RELATION_TYPES:
        raise ValueError(f"metrics are defined for {RELATION_TYPES}, not {t!r}")
    tp, n_pred, n_gold = relation_counts(gold, pred, t)
    div = Fraction if exact else (lambda a, b: a / b)
    zero = Fraction(0) if exact else 0.0
    p = div(tp, n_pred) if n_pred else zero
    r = div(tp, n_gold) if n_gold else zero
    return p, r, f1_score(p, r)


def avg_f1(f1_h, f1_i):
    return (f1_h + f1_i) / 2


def render_pct(value: float) -> str:
    """``0.0877 -> '8.8'``: times 100, one decimal, halves rounded up."""
    d = Decimal(f"{float(value) * 100:.9f}")
    return str(d.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


@dataclass
class MetricReport:
    precision: dict = field(default_factory=dict)
    recall: dict = field(default_factory=dict)
    f1: dict = field(default_factory=dict)
    avg_f1: float = 0.0
    counts: dict = field(default_factory=dict)  # t -> (tp, n_pred, n_gold)

    def row(self) -> list:
        out = []
        for t in RELATION_TYPES:
            out += [self.precision[t], self.recall[t], self.f1[t]]
        return out + [self.avg_f1]


def evaluate(gold: Mapping, pred: Mapping, universe: Optional[Iterable] = None) -> MetricReport:
    """Per-type P/R/F1 and their macro average.

    When ``universe`` is given every gold and predicted key must belong to it.
    """
    if universe is not None:
        universe = set(universe)
        stray = [k for k in list(gold) + list(pred) if k not in universe]
        if stray:
            k = stray[0]
            raise DataValidationError(
                f"{len(stray)} labelled pairs fall outside the evaluation pair space, e.g. {k}",
                doc_id=k[0] if isinstance(k, tuple) else None)
    rep = MetricReport()
    for t in RELATION_TYPES:
        p, r, f = relation_prf(gold, pred, t)
        rep.precision[t], rep.recall[t], rep.f1[t] = p, r, f
        rep.counts[t] = relation_counts(gold, pred, t)
    rep.avg_f1 = avg_f1(rep.f1[HIERARCHICAL], rep.f1[IDENTICAL])
    return rep


# --------------------------------------------------------------------------
# reports

CSV_FIELDS = ["method", "hier_p", "hier_r", "hier_f1", "ident_p", "ident_r", "ident_f1",
              "avg_f1", "hier_tp", "hier_pred", "hier_gold", "ident_tp", "ident_pred", "ident_gold"]


def report_csv(reports: Mapping[str, MetricReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for name, rep in reports.items():
        counts = [c for t in RELATION_TYPES for c in rep.counts.get(t, (0, 0, 0))]
        w.writerow([name] + [repr(float(v)) for v in rep.row()] + counts)
    return buf.getvalue()


def read_report_csv(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"no such file: {path}")
    out = {}
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                rep = MetricReport()
                for t, pre in ((HIERARCHICAL, "hier"), (IDENTICAL, "ident")):
                    rep.precision[t] = float(row[f"{pre}_p"])
                    rep.recall[t] = float(row[f"{pre}_r"])
                    rep.f1[t] = float(row[f"{pre}_f1"])
                    rep.counts[t] = tuple(int(row[f"{pre}_{c}"] or 0) for c in ("tp", "pred", "gold"))
                rep.avg_f1 = float(row["avg_f1"])
            except (KeyError, ValueError, TypeError) as exc:
                raise CorpusParseError(f"bad metric row: {exc}", line=lineno, path=path) from None
            out[row["method"]] = rep
    return out


def render_table(reports: Mapping[str, MetricReport]) -> str:
    """Fixed-width table: P/R/F1 per relation type and Avg F1, as percentages."""
    name_w = max([len("Method")] + [len(n) for n in reports])
    head1 = f"{'':<{name_w}} | {'Hierarchical':^20} | {'Identical':^20} | {'':>6}"
    head2 = f"{'Method':<{name_w}} | {'P':>6}{'R':>7}{'F1':>7} | {'P':>6}{'R':>7}{'F1':>7} | {'Avg F1':>6}"
    rule = "-" * len(head2)
    lines = [head1, head2, rule]
    for name, rep in reports.items():
        cells = [render_pct(v) for v in rep.row()]
        lines.append(f"{name:<{name_w}} | {cells[0]:>6}{cells[1]:>7}{cells[2]:>7} | "
                     f"{cells[3]:>6}{cells[4]:>7}{cells[5]:>7} | {cells[6]:>6}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# agreement


def iaa(annotations: Sequence, t: str) -> float:
    """Share of relations marked as ``t`` by at least two annotators.

    Each annotation is either a mapping ``key -> label`` or a set of keys that
    the annotator marked as ``t``.
    """
    if len(annotations) < 2:
        raise ValueError("agreement needs at least two annotators")
    sets = []
    for ann in annotations:
        if isinstance(ann, Mapping):
            sets.append({k for k, v in ann.items() if v == t})
        else:
            sets.append(set(ann))
    union = set().union(*sets)
    if not union:
        return 0.0
    agreed = sum(1 for r in union if sum(r in s for s in sets) >= 2)
    return agreed / len(union)


# --------------------------------------------------------------------------
# baselines


def label_prior(gold: Mapping, universe: Sequence) -> tuple:
    counts = np.zeros(3)
    for k in universe:
        counts[LABELS.index(gold.get(k, NOREL))] += 1
    if counts.sum() == 0:
        raise ValueError("empty universe")
    return tuple(counts / counts.sum())


def prior_baseline(prior: Sequence[float], pairs: Sequence, seed: int = 0) -> dict:
    """Draw each pair's label i.i.d. from ``prior`` over (H, I, NoRel)."""
    prior = np.asarray(prior, dtype=np.float64)
    if prior.shape != (3,) or (prior < 0).any() or not np.isclose(prior.sum(), 1.0, atol=1e-9):
        raise ValueError(f"prior must be 3 non-negative numbers summing to 1, got {prior}")
    rng = stream(seed, "prior-baseline")
    draws = rng.choice(3, size=len(pairs), p=prior / prior.sum())
    return {k: LABELS[c] for k, c in zip(pairs, draws)}


def mm_baseline(corpus, hier_predictor, encoder, lam: float = DEFAULT_LAMBDA,
                include_norel: bool = True, **kwargs) -> dict:
    """Pseudo-labelling applied to the evaluation corpus, read as predictions."""
    from .eventgraph import pair_space

    labels = generate_pseudo_labels(corpus, hier_predictor, encoder, lam, **kwargs).mapping()
    if not include_norel:
        return labels
    out = {}
    for doc in corpus:
        for t, v in pair_space(doc):
            k = (doc.doc_id, t, v)
            out[k] = labels.get(k, NOREL)
    return out


# --------------------------------------------------------------------------
# end-to-end (predicted text events)


def _spans_match(a: TextEvent, b: TextEvent, mode: str) -> int:
    if a.sentence_index != b.sentence_index:
        return 0
    if mode == "exact":
        return int(a.trigger_span == b.trigger_span)
    lo = max(a.trigger_span[0], b.trigger_span[0])
    hi = min(a.trigger_span[1], b.trigger_span[1])
    return max(0, hi - lo)


def match_predicted_text_events(gold_events: Sequence[TextEvent],
                                predicted_events: Sequence[TextEvent],
                                mode: str = "overlap") -> dict:
    """One-to-one map from predicted to gold text events with overlapping spans.

    Larger overlaps are matched first; ties go to the earlier event.
    """
    if mode not in ("overlap", "exact"):
        raise ValueError(f"unknown match mode {mode!r}")
    cands = []
    for pi, p in enumerate(predicted_events):
        for gi, g in enumerate(gold_events):
            ov = _spans_match(g, p, mode)
            if ov > 0:
                cands.append((-ov, pi, gi))
    cands.sort()
    used_p, used_g, out = set(), set(), {}
    for _, pi, gi in cands:
        if pi in used_p or gi in used_g:
            continue
        used_p.add(pi)
        used_g.add(gi)
        out[predicted_events[pi].id] = gold_events[gi].id
    return out


UNMATCHED = "unmatched:"


def map_predictions_to_gold(doc_id: str, predictions: Mapping, mapping: Mapping) -> dict:
    """Re-key predicted relations ``(text_id, video_id) -> label`` onto gold ids.

    Relations on unmatched predicted events keep a distinct key so they count
    as false positives.
    """
    out = {}
    for (t, v), lab in predictions.items():
        g = mapping.get(t)
        out[(doc_id, g if g is not None else UNMATCHED + t, v)] = lab
    return out
