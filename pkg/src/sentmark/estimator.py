"""Scikit-learn style estimator wrapping the full pipeline.

X is a list of corpus.Example objects; fit builds a vocabulary from the
training split, trains the fused-chunk seq2seq model, and keeps the
checkpoint with the best validation Token F1.  predict returns label
strings; predict_rationales returns 0-based sentence indices that are
guaranteed to come from each example's own sentences.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .corpus import Example
from .errors import DataError
from .metrics import EvalReport
from .model import ModelConfig
from .pipeline import evaluate_examples, predict_examples
from .textproc import build_vocab
from .training import TrainSchedule, train


def check_examples(X, allow_empty: bool = False) -> list[Example]:
    """Validate that X is a sequence of well-formed Example objects."""
    if X is None or isinstance(X, (str, bytes, Example)):
        raise DataError("X must be a sequence of Example objects")
    items = list(X)
    if not items and not allow_empty:
        raise DataError("X must contain at least one Example")
    for i, item in enumerate(items):
        if not isinstance(item, Example):
            raise DataError(f"X[{i}] is not an Example (got {type(item).__name__})")
        item.validate()
    return items


class RationaleExtractor(BaseEstimator):
    """Joint label + extractive-rationale predictor.

    Parameters mirror the model config and training schedule; all are
    plain constructor attributes so get_params/set_params and cloning
    work as usual.
    """

    def __init__(
        self,
        d_model: int = 64,
        n_heads: int = 4,
        n_enc_layers: int = 2,
        n_dec_layers: int = 2,
        d_ffn: int = 128,
        dropout_rate: float = 0.0,
        l_ctx: int = 64,
        n_chunks: int = 1,
        max_target_len: int = 32,
        vocab_size: int = 8192,
        max_markers: int = 64,
        lr: float = 1e-4,
        total_steps: int = 2000,
        batch_size: int = 8,
        eval_every: int = 500,
        lr_decay: str = "linear",
        seed: int = 0,
    ):
        self.d_model = d_model
        self.n_heads = n_heads
        self.n_enc_layers = n_enc_layers
        self.n_dec_layers = n_dec_layers
        self.d_ffn = d_ffn
        self.dropout_rate = dropout_rate
        self.l_ctx = l_ctx
        self.n_chunks = n_chunks
        self.max_target_len = max_target_len
        self.vocab_size = vocab_size
        self.max_markers = max_markers
        self.lr = lr
        self.total_steps = total_steps
        self.batch_size = batch_size
        self.eval_every = eval_every
        self.lr_decay = lr_decay
        self.seed = seed

    def _config(self, vocab_len: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_len,
            d_model=self.d_model,
            n_heads=self.n_heads,
            n_enc_layers=self.n_enc_layers,
            n_dec_layers=self.n_dec_layers,
            d_ffn=self.d_ffn,
            l_ctx=self.l_ctx,
            max_target_len=self.max_target_len,
            dropout_rate=self.dropout_rate,
            seed=self.seed,
        )

    def fit(self, X, y=None, val=None):
        """Train on X; select the checkpoint by Token F1 on `val` (or on
        X itself when no validation split is given).  y is ignored: the
        targets live on the examples."""
        X = check_examples(X)
        val = X if val is None else check_examples(val)
        self.vocab_ = build_vocab(X, size=self.vocab_size,
                                  max_markers=self.max_markers)
        config = self._config(len(self.vocab_))
        schedule = TrainSchedule(
            lr=self.lr,
            total_steps=self.total_steps,
            batch_size=self.batch_size,
            eval_every=self.eval_every,
            lr_decay=self.lr_decay,
        )
        result = train(X, val, config, schedule, self.vocab_,
                       n_chunks=self.n_chunks)
        self.params_ = result.params
        self.train_log_ = result.log
        self.best_step_ = result.best_step
        self.best_val_tf1_ = result.best_val_tf1
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError(
                "This RationaleExtractor instance is not fitted yet."
            )

    def _predictions(self, X):
        self._check_fitted()
        X = check_examples(X)
        return X, predict_examples(self.params_, self.vocab_, X,
                                   n_chunks=self.n_chunks)

    def predict(self, X) -> list[str]:
        """Predicted label string per example."""
        _, preds = self._predictions(X)
        return [p.parsed.label_text for p in preds]

    def predict_rationales(self, X) -> list[list[int]]:
        """Sorted 0-based rationale sentence indices per example."""
        _, preds = self._predictions(X)
        return [sorted(p.rationale_indices) for p in preds]

    def score(self, X, y=None) -> float:
        """Mean exact-match accuracy of the predicted labels."""
        return self.evaluate(X).em

    def evaluate(self, X) -> EvalReport:
        """Full metric report (EM, RF1, TF1, IOU F1) against gold."""
        self._check_fitted()
        X = check_examples(X)
        report, _ = evaluate_examples(self.params_, self.vocab_, X,
                                      n_chunks=self.n_chunks)
        return report
