"""sentmark: extractive rationale prediction with sentence markers and
fused multi-chunk encoding."""

from .analysis import Adequacy, Category, classify, summarize, taxonomy_report
from .corpus import (
    Example,
    MultiDocQARecord,
    SpanQARecord,
    fewshot_sample,
    load_examples,
    restructure_multidoc_qa,
    restructure_span_qa,
    save_examples,
    synth_dataset,
)
from .errors import (
    CheckpointError,
    CorpusError,
    DataError,
    MetricsError,
    NumericalError,
    SentmarkError,
    TextError,
)
from .estimator import RationaleExtractor
from .metrics import (
    EvalReport,
    ExampleScore,
    evaluate,
    exact_match,
    iou_f1,
    iou_f1_from_token_sets,
    sentence_token_spans,
    set_f1,
    token_f1,
)
from .model import (
    FusedStates,
    ModelConfig,
    Parameters,
    decoder_logits,
    encode_chunks,
    grad,
    greedy_decode,
    init_params,
    loss,
)
from .parsing import ParsedPrediction, PredictionRecord, map_to_sentences, parse_output
from .textproc import (
    ChunkSet,
    MarkedInput,
    Vocabulary,
    build_marked_input,
    build_vocab,
    chunk,
    detokenize,
    segment_sentences,
    serialize_input,
    serialize_target,
    tokenize,
)
from .training import TrainResult, TrainSchedule, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "Adequacy", "Category", "ChunkSet", "CheckpointError", "CorpusError",
    "DataError", "EvalReport", "Example", "ExampleScore", "FusedStates",
    "MarkedInput", "MetricsError", "ModelConfig", "MultiDocQARecord",
    "NumericalError", "Parameters", "ParsedPrediction", "PredictionRecord",
    "RationaleExtractor", "SentmarkError", "SpanQARecord", "TextError",
    "TrainResult", "TrainSchedule", "Vocabulary", "build_marked_input",
    "build_vocab", "chunk", "classify", "decoder_logits", "detokenize",
    "encode_chunks", "evaluate", "exact_match", "fewshot_sample", "grad",
    "greedy_decode", "init_params", "iou_f1", "iou_f1_from_token_sets",
    "load_checkpoint", "load_examples", "loss", "map_to_sentences",
    "parse_output", "restructure_multidoc_qa", "restructure_span_qa",
    "save_checkpoint", "save_examples", "segment_sentences",
    "sentence_token_spans", "serialize_input", "serialize_target", "set_f1",
    "summarize", "synth_dataset", "taxonomy_report", "token_f1", "tokenize",
    "train",
]
