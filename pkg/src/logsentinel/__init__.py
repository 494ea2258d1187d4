"""Log anomaly detection with a masked-key transformer and a hypersphere objective."""

from .detector import DetectionConfig, Verdict, detect, score_sequences, tune
from .evaluation import (Metrics, SyntheticSpec, compute_metrics, export_embeddings,
                         generate_synthetic_corpus)
from .model import ModelConfig, ModelParams
from .parser import ParserConfig, ParserState, parse_lines, preprocess_line
from .sequencer import LogSequence, group_by_session, group_by_time_window
from .trainer import TrainConfig, TrainedModel, fit
from .vocab import Vocab, build_vocab, encode

__version__ = "0.1.0"
