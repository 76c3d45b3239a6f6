"""Run configuration for the CLI: a flat JSON object of documented keys.

Command-line flags override file values.  The learning rate is restricted
to the two supported settings (1e-4 default, 1e-5 selectable); library
users calling training.train directly may pass any rate.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import DataError

ALLOWED_LRS = (1e-4, 1e-5)


@dataclass
class RunConfig:
    task: str = "synth"
    train_path: str | None = None
    val_path: str | None = None
    test_path: str | None = None
    vocab_path: str | None = None
    checkpoint_dir: str | None = None
    report_dir: str | None = None
    d_model: int = 64
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_ffn: int = 128
    dropout_rate: float = 0.0
    vocab_size: int = 8192
    max_markers: int = 256
    l_ctx: int = 512
    n_chunks: int = 1
    max_target_len: int = 32
    lr: float = 1e-4
    total_steps: int = 20000
    batch_size: int = 8
    eval_every: int = 500
    lr_decay: str = "linear"
    fewshot: float | int | None = None
    seed: int = 0

    def validate(self) -> "RunConfig":
        if self.lr not in ALLOWED_LRS:
            raise DataError(
                f"lr must be one of {ALLOWED_LRS}, got {self.lr!r}"
            )
        paths = [
            p for p in (
                self.train_path, self.val_path, self.test_path,
                self.vocab_path, self.checkpoint_dir, self.report_dir,
            ) if p is not None
        ]
        if len(set(paths)) != len(paths):
            raise DataError("configured paths must be distinct")
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such config file: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise DataError(f"{path}: config must be a flat JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(obj) - known)
    if unknown:
        raise DataError(f"{path}: unknown config keys: {unknown}")
    return RunConfig(**obj).validate()
