"""Command line: gen-synthetic, pseudo-label, train-cs, train, eval, report."""

from __future__ import annotations

import argparse
import logging
import sys
from collections import defaultdict
from dataclasses import replace
from pathlib import Path

from . import commonsense, evaluation, merp, synthetic
from .config import MODES, PipelineConfig, load_config, with_overrides
from .embedding import EncoderConfig, FrameCache, ToyEncoder, embed_document, similarity
from .errors import ConfigError, DataValidationError, MissingInputError, MmrelError
from .eventgraph import (NOREL, RelationRecord, check_relations, corpus_pair_keys,
                         load_corpus, load_relations, save_corpus, save_relations)
from .pseudolabel import LexiconPredictor, generate_pseudo_labels, load_pseudo_labels, save_pseudo_labels

log = logging.getLogger("mmrel")

METHOD_PRIOR = "Prior Base."
METHOD_MM = "MM Base."
METHOD_MERP = "MERP"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


# --------------------------------------------------------------------------
# shared loaders


def _encoder(cfg: PipelineConfig) -> ToyEncoder:
    enc = ToyEncoder.load(cfg.path("encoder"))
    if enc.dim != cfg.encoder.dim:
        raise ConfigError(f"encoder file has dim {enc.dim}, config says {cfg.encoder.dim}")
    return enc


def _frames(cfg: PipelineConfig) -> FrameCache:
    p = cfg.path("frames")
    return FrameCache.load(p) if p.is_file() else FrameCache(cfg.encoder.fps)


def _kb_edges(cfg: PipelineConfig):
    p = cfg.path("kb")
    if not p.is_file():
        raise MissingInputError(f"no such file: {p}")
    return commonsense.load_kb_edges(p)


def _hier_predictor(cfg: PipelineConfig) -> LexiconPredictor:
    edges = _kb_edges(cfg)
    return LexiconPredictor((e.head, e.tail) for e in edges
                            if e.relation in commonsense.SUBEVENT_RELATIONS)


def _embed_all(docs, encoder, enc_cfg: EncoderConfig, frames: FrameCache) -> dict:
    return {d.doc_id: embed_document(d, encoder, enc_cfg, frames) for d in docs}


# --------------------------------------------------------------------------
# commands


def cmd_gen_synthetic(cfg: PipelineConfig) -> int:
    spec = cfg.synthetic
    spec.validate()
    if spec.dim != cfg.encoder.dim:
        raise ConfigError(f"synthetic dim {spec.dim} != encoder dim {cfg.encoder.dim}")
    encoder = synthetic.make_encoder(spec)
    frames = FrameCache(spec.fps)
    train = synthetic.generate_split(spec, spec.n_docs, "doc", encoder, frames)
    held = synthetic.generate_split(spec, spec.n_eval_docs, "eval", encoder, frames)
    ie_docs = synthetic.simulate_ie(held.docs, spec.seed)

    below = 0
    for split in (train, held):
        idents = defaultdict(list)
        for r in split.gold:
            if r.label == "Identical":
                idents[r.doc_id].append(r)
        for doc in split.docs:
            if not idents[doc.doc_id]:
                continue
            emb = embed_document(doc, encoder, cfg.encoder, frames)
            ti, vi = emb.text_index(), emb.video_index()
            for r in idents[doc.doc_id]:
                s = similarity(emb.text[ti[r.text_event_id]], emb.video[vi[r.video_event_id]],
                               cfg.encoder.similarity_scale)
                below += s <= cfg.lam
    if below:
        log.warning("%d planted Identical pairs score at or below lambda=%s", below, cfg.lam)

    save_corpus(train.docs, cfg.path("corpus"))
    save_relations(train.gold, cfg.path("gold"))
    save_corpus(held.docs, cfg.path("eval_corpus"))
    save_relations(held.gold, cfg.path("eval_gold"))
    save_corpus(ie_docs, cfg.path("ie_corpus"))
    frames.save(cfg.path("frames"))
    encoder.save(cfg.path("encoder"))
    commonsense.save_kb_edges(synthetic.default_kb_edges(), cfg.path("kb"))
    log.info("wrote %d training and %d evaluation documents", len(train.docs), len(held.docs))
    return 0


def cmd_pseudo_label(cfg: PipelineConfig) -> int:
    docs = load_corpus(cfg.path("corpus"))
    encoder, frames = _encoder(cfg), _frames(cfg)
    labels = generate_pseudo_labels(docs, _hier_predictor(cfg), encoder, cfg.lam,
                                    cfg.conflict_policy, cfg.encoder, frames, cfg.multi_hop,
                                    cfg.workers)
    save_pseudo_labels(labels.labels, cfg.path("pseudo_labels"))
    log.info("pseudo labels: %s", labels.counts())
    return 0


def cmd_train_cs(cfg: PipelineConfig) -> int:
    c = cfg.cs
    pairs = commonsense.extract_kb_pairs(_kb_edges(cfg), neg_ratio=c.neg_ratio,
                                         seed=cfg.stage_seed("kb-negatives"))
    ex = commonsense.train_cs(pairs, _encoder(cfg), epochs=c.epochs, margin=c.margin,
                              seed=cfg.stage_seed("cs"), lr=c.lr, momentum=c.momentum,
                              out_dim=c.out_dim, depth=c.depth,
                              mask_exponent=cfg.encoder.mask_exponent, optimizer=c.optimizer)
    ex.save(cfg.path("cs_checkpoint"))
    log.info("CS loss %.5f -> %.5f over %d pairs", ex.history[0], ex.history[-1], len(pairs))
    return 0


def cmd_train(cfg: PipelineConfig) -> int:
    docs = load_corpus(cfg.path("corpus"))
    labels = load_pseudo_labels(cfg.path("pseudo_labels"))
    check_relations(docs, [RelationRecord(*lab.key, lab.label, None, lab.provenance)
                           for lab in labels])
    encoder, frames = _encoder(cfg), _frames(cfg)
    cs = commonsense.CsExtractor.load(cfg.path("cs_checkpoint")) if cfg.merp.use_cs else None
    mcfg = cfg.merp.variant(seed=cfg.stage_seed("merp"))
    res = merp.train(labels, docs, encoder, cs, mcfg,
                     embeddings=_embed_all(docs, encoder, cfg.encoder, frames))
    res.model.save(cfg.path("model"))
    _write_text(cfg.path("train_log"), res.log_csv())
    log.info("class counts %s, weights %s", res.class_counts,
             tuple(round(w, 4) for w in res.class_weights))
    return 0


def _by_doc(mapping: dict) -> dict:
    out = defaultdict(dict)
    for (d, t, v), lab in mapping.items():
        out[d][(t, v)] = lab
    return out


def cmd_eval(cfg: PipelineConfig) -> int:
    gold_docs = load_corpus(cfg.path("eval_corpus"))
    gold_records = load_relations(cfg.path("eval_gold"))
    check_relations(gold_docs, gold_records)
    gold = {r.key: r.label for r in gold_records if r.label != NOREL}
    encoder, frames = _encoder(cfg), _frames(cfg)
    model = merp.MerpModel.load(cfg.path("model"))
    if model.config.dim != cfg.encoder.dim:
        raise ConfigError(f"model dim {model.config.dim} != encoder dim {cfg.encoder.dim}")
    model = merp.MerpModel(model.config.variant(prune_threshold=cfg.merp.prune_threshold),
                           model.params, model.cs)

    if cfg.mode == "iete2ve":
        docs = load_corpus(cfg.path("ie_corpus"))
        gold_by_id = {d.doc_id: d for d in gold_docs}
        stray = [d.doc_id for d in docs if d.doc_id not in gold_by_id]
        if stray:
            raise DataValidationError("predicted-event document has no gold counterpart",
                                      doc_id=stray[0])
        matches = {d.doc_id: evaluation.match_predicted_text_events(
            gold_by_id[d.doc_id].text_events, d.text_events, cfg.match) for d in docs}
        universe = None

        def to_gold(pred):
            out = {}
            for doc_id, rels in _by_doc(pred).items():
                out.update(evaluation.map_predictions_to_gold(doc_id, rels, matches[doc_id]))
            return out
    else:
        docs = gold_docs
        universe = corpus_pair_keys(docs)

        def to_gold(pred):
            return pred

    embs = _embed_all(docs, encoder, cfg.encoder, frames)
    records, merp_pred = [], {}
    for doc in docs:
        g = merp.predict_graph(doc, model, emb=embs[doc.doc_id], encoder_config=cfg.encoder)
        for r in g.relations:
            records.append(RelationRecord(doc.doc_id, r.text_event_id, r.video_event_id,
                                          r.label, r.confidence, "merp"))
            merp_pred[(doc.doc_id, r.text_event_id, r.video_event_id)] = r.label

    train_docs = load_corpus(cfg.path("corpus"))
    train_labels = {lab.key: lab.label for lab in load_pseudo_labels(cfg.path("pseudo_labels"))}
    prior = evaluation.label_prior(train_labels, corpus_pair_keys(train_docs))
    prior_pred = evaluation.prior_baseline(prior, corpus_pair_keys(docs), cfg.stage_seed("prior"))
    mm_pred = evaluation.mm_baseline(docs, _hier_predictor(cfg), encoder, cfg.lam,
                                     conflict_policy=cfg.conflict_policy, config=cfg.encoder,
                                     multi_hop=cfg.multi_hop, workers=cfg.workers, embeddings=embs)

    reports = {}
    for name, pred in ((METHOD_PRIOR, prior_pred), (METHOD_MM, mm_pred), (METHOD_MERP, merp_pred)):
        pred = {k: v for k, v in to_gold(pred).items() if v != NOREL}
        reports[name] = evaluation.evaluate(gold, pred, universe)

    save_relations(records, cfg.path("predictions"))
    _write_text(cfg.path("metrics"), evaluation.report_csv(reports))
    sys.stdout.write(evaluation.render_table(reports))
    return 0


def cmd_report(cfg: PipelineConfig) -> int:
    reports = evaluation.read_report_csv(cfg.path("metrics"))
    text = evaluation.render_table(reports)
    _write_text(cfg.path("report"), text)
    sys.stdout.write(text)
    return 0


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "pseudo-label": cmd_pseudo_label,
    "train-cs": cmd_train_cs,
    "train": cmd_train,
    "eval": cmd_eval,
    "report": cmd_report,
}


# --------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    shared = _Parser(add_help=False)
    shared.add_argument("--config", help="JSON config file")
    shared.add_argument("--work-dir", help="base directory for relative paths "
                        "(default: the config file's directory, else the current one)")
    shared.add_argument("--seed", type=int)
    shared.add_argument("--workers", type=int)
    shared.add_argument("--lambda", dest="lam", type=float)
    shared.add_argument("--prune-threshold", type=float)
    shared.add_argument("--mode", choices=MODES)
    shared.add_argument("--log-file", help="also write timestamped logs here")
    shared.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="mmrel", description="Multimodal event relation pipeline.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    gen = sub.add_parser("gen-synthetic", parents=[shared], help="write a synthetic corpus")
    gen.add_argument("--n-docs", type=int)
    gen.add_argument("--n-eval-docs", type=int)
    gen.add_argument("--noise", type=float)
    sub.add_parser("pseudo-label", parents=[shared], help="generate pseudo labels")
    sub.add_parser("train-cs", parents=[shared], help="train the commonsense extractor")
    tr = sub.add_parser("train", parents=[shared], help="train the relation model")
    tr.add_argument("--epochs", type=int)
    for part in ("ct", "cs", "ei"):
        tr.add_argument(f"--no-{part}", action="store_true", help=f"disable {part.upper()}")
    sub.add_parser("eval", parents=[shared], help="evaluate against gold relations")
    sub.add_parser("report", parents=[shared], help="render metrics as a table")
    return p


def resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config, args.work_dir)
    cfg = with_overrides(cfg, seed=args.seed, workers=args.workers, lam=args.lam,
                         prune_threshold=args.prune_threshold, mode=args.mode)
    syn = {k: getattr(args, a) for k, a in (("n_docs", "n_docs"), ("n_eval_docs", "n_eval_docs"),
                                            ("noise", "noise")) if getattr(args, a, None) is not None}
    if syn:
        cfg = replace(cfg, synthetic=replace(cfg.synthetic, **syn))
    mchanges = {}
    if getattr(args, "epochs", None) is not None:
        mchanges["epochs"] = args.epochs
    for part in ("ct", "cs", "ei"):
        if getattr(args, f"no_{part}", False):
            mchanges[f"use_{part}"] = False
    if mchanges:
        cfg = replace(cfg, merp=cfg.merp.variant(**mchanges))
    return cfg


def _setup_logging(args) -> None:
    root = logging.getLogger("mmrel")
    root.handlers.clear()
    root.setLevel(logging.INFO if args.verbose or args.log_file else logging.WARNING)
    h = logging.StreamHandler(sys.stderr)
    h.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    h.setLevel(logging.INFO if args.verbose else logging.WARNING)
    root.addHandler(h)
    if args.log_file:
        fh = logging.FileHandler(args.log_file)
        fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        root.addHandler(fh)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _setup_logging(args)
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except MmrelError as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"mmrel: error: {msg}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"mmrel: error: missing input: {exc.filename or exc}", file=sys.stderr)
        return MissingInputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
