"""Training loop: Adam with linear learning-rate decay, periodic
full-pipeline validation, and best-checkpoint selection by validation
Token F1 (ties keep the earlier step).

Checkpoints are zip containers with fixed timestamps (runs with the same
seed produce byte-identical files) holding the model config, the
vocabulary hash they are bound to, every weight tensor, and the step.
"""

from __future__ import annotations

import io
import json
import random
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Example
from .errors import CheckpointError, DataError, NumericalError
from .model import (
    ModelConfig,
    Parameters,
    expected_shapes,
    init_params,
    loss_and_grad,
)
from .pipeline import evaluate_examples
from .textproc import EOS_ID, Vocabulary, chunk, serialize_target, tokenize

_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass
class TrainSchedule:
    lr: float = 1e-4
    total_steps: int = 20000
    batch_size: int = 8
    eval_every: int = 500
    lr_decay: str = "linear"  # "linear" (to zero) or "constant"

    def __post_init__(self):
        if self.lr <= 0:
            raise DataError("lr must be positive")
        if self.total_steps < 0:
            raise DataError("total_steps must be >= 0")
        if self.batch_size < 1 or self.eval_every < 1:
            raise DataError("batch_size and eval_every must be >= 1")
        if self.lr_decay not in ("linear", "constant"):
            raise DataError(f"unknown lr_decay: {self.lr_decay!r}")

    def lr_at(self, step: int) -> float:
        """Learning rate applied at 1-based update `step`."""
        if self.lr_decay == "constant":
            return self.lr
        return self.lr * (1.0 - (step - 1) / self.total_steps)


class Adam:
    def __init__(self, config: ModelConfig, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        shapes = expected_shapes(config)
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}

    def step(self, params: Parameters, grads: dict[str, np.ndarray], lr: float):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params.tensors[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class TrainLogEntry:
    step: int
    loss: float
    val_em: float
    val_tf1: float

    def to_dict(self) -> dict:
        return {"step": self.step, "loss": self.loss, "val_em": self.val_em,
                "val_tf1": self.val_tf1}


@dataclass
class TrainResult:
    params: Parameters
    log: list[TrainLogEntry] = field(default_factory=list)
    best_step: int = 0
    best_val_tf1: float | None = None


def make_target(example: Example, vocab: Vocabulary, max_target_len: int) -> list[int]:
    """Token ids of the serialized target, ending with <eos>; sequences
    over the decoder length budget are clipped with <eos> kept."""
    ids = tokenize(
        serialize_target(example.label, example.rationale_indices), vocab
    )
    ids.append(EOS_ID)
    if len(ids) > max_target_len:
        ids = ids[: max_target_len - 1] + [EOS_ID]
    return ids


def _batches(n: int, batch_size: int, total_steps: int, rng: random.Random):
    """Yield index batches: a fresh seeded shuffle each epoch."""
    produced = 0
    while produced < total_steps:
        order = list(range(n))
        rng.shuffle(order)
        for lo in range(0, n, batch_size):
            yield order[lo : lo + batch_size]
            produced += 1
            if produced == total_steps:
                return


def train(
    train_examples: Sequence[Example],
    val_examples: Sequence[Example],
    config: ModelConfig,
    schedule: TrainSchedule,
    vocab: Vocabulary,
    n_chunks: int = 1,
    init: Parameters | None = None,
) -> TrainResult:
    """Train and return the parameters of the best validation-TF1 step.

    Validation runs the full pipeline (greedy decode, marker parsing,
    Token F1) every eval_every steps and at the final step; with
    total_steps=0 the (possibly provided) initial parameters come back
    untouched and the log is empty.
    """
    if not train_examples or not val_examples:
        raise DataError("train and validation sets must be non-empty")
    if init is not None:
        if expected_shapes(init.config) != expected_shapes(config):
            raise CheckpointError(
                "initial parameters' shapes do not match the model config"
            )
        params = Parameters(config=config, tensors=init.copy().tensors)
    else:
        params = init_params(config)
    result = TrainResult(params=params)
    if schedule.total_steps == 0:
        return result

    train_data = [
        (chunk(ex, vocab, config.l_ctx, n_chunks),
         make_target(ex, vocab, config.max_target_len))
        for ex in train_examples
    ]
    optimizer = Adam(config)
    order_rng = random.Random(config.seed)
    dropout_rng = (
        np.random.default_rng(config.seed + 1)
        if config.dropout_rate > 0 else None
    )

    best_params = None
    best_tf1 = -1.0
    window: list[float] = []
    for step, idxs in enumerate(
        _batches(len(train_data), schedule.batch_size, schedule.total_steps,
                 order_rng),
        start=1,
    ):
        batch = [train_data[i] for i in idxs]
        try:
            value, grads = loss_and_grad(
                params, batch, config.dropout_rate, dropout_rng
            )
        except NumericalError as exc:
            raise NumericalError(f"{exc} at step {step}") from exc
        window.append(value)
        optimizer.step(params, grads, schedule.lr_at(step))

        if step % schedule.eval_every == 0 or step == schedule.total_steps:
            report, _ = evaluate_examples(params, vocab, val_examples, n_chunks)
            result.log.append(TrainLogEntry(
                step=step,
                loss=sum(window) / len(window),
                val_em=report.em,
                val_tf1=report.tf1,
            ))
            window = []
            if report.tf1 > best_tf1:
                best_tf1 = report.tf1
                best_params = params.copy()
                result.best_step = step
                result.best_val_tf1 = report.tf1

    if best_params is not None:
        result.params = best_params
    return result


def save_checkpoint(
    path: str | Path,
    params: Parameters,
    step: int,
    vocab_hash: str,
    init_from: str | None = None,
) -> None:
    meta = {
        "format": 1,
        "config": asdict(params.config),
        "step": step,
        "vocab_hash": vocab_hash,
        "init_from": init_from,
        "tensors": {k: list(v.shape) for k, v in params.tensors.items()},
    }
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        zf.writestr(
            zipfile.ZipInfo("meta.json", date_time=_ZIP_EPOCH),
            json.dumps(meta, sort_keys=True),
        )
        for name, arr in params.tensors.items():
            buf = io.BytesIO()
            np.save(buf, arr, allow_pickle=False)
            zf.writestr(
                zipfile.ZipInfo(f"tensors/{name}.npy", date_time=_ZIP_EPOCH),
                buf.getvalue(),
            )


@dataclass
class Checkpoint:
    params: Parameters
    step: int
    vocab_hash: str
    init_from: str | None = None


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Load a checkpoint, validating every tensor shape against its config."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no such checkpoint: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            config = ModelConfig(**meta["config"])
            shapes = expected_shapes(config)
            if set(meta["tensors"]) != set(shapes):
                raise CheckpointError(
                    f"{path}: tensor set does not match the model config"
                )
            tensors = {}
            for name, shape in shapes.items():
                arr = np.load(io.BytesIO(zf.read(f"tensors/{name}.npy")),
                              allow_pickle=False)
                if arr.shape != shape:
                    raise CheckpointError(
                        f"{path}: tensor {name!r} has shape {arr.shape}, "
                        f"config requires {shape}"
                    )
                tensors[name] = arr.astype(np.float64)
            if not all(np.isfinite(v).all() for v in tensors.values()):
                raise CheckpointError(f"{path}: non-finite weights")
    except (KeyError, TypeError, ValueError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint: {exc}") from exc
    return Checkpoint(
        params=Parameters(config=config, tensors=tensors),
        step=int(meta["step"]),
        vocab_hash=str(meta["vocab_hash"]),
        init_from=meta.get("init_from"),
    )
