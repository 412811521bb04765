"""Multimodal event relation extraction: pseudo labels, relation model, metrics."""

from .errors import (ConfigError, CorpusParseError, DataValidationError, MissingInputError,
                     MmrelError, PipelineError)
from .eventgraph import (HIERARCHICAL, IDENTICAL, LABELS, NOREL, Document, MultimodalEventGraph,
                         Relation, TextEvent, VideoEvent, load_corpus, save_corpus)
from .embedding import EncoderConfig, ToyEncoder, event_attention_weights, similarity
from .pseudolabel import DEFAULT_LAMBDA, generate_pseudo_labels, propagate_hierarchy
from .commonsense import CsExtractor, train_cs
from .merp import MerpConfig, MerpModel, predict_graph, train
from .evaluation import avg_f1, evaluate, iaa, relation_prf, render_pct

__version__ = "0.1.0"
