"""Toy encoder-decoder transformer with fused multi-chunk encoding.

Chunks are encoded independently with learned absolute positions that
restart at 0 per chunk; the per-chunk encoder states are concatenated
into one memory the decoder cross-attends over.  Because positions carry
no chunk identity and cross-attention is order-free over memory rows,
decoder logits are invariant (to float noise) under chunk permutation,
and a single chunk reduces exactly to a plain encoder-decoder.

All math is NumPy float64 with explicit backward passes, so gradients
can be validated against central finite differences and runs are
bit-reproducible.  The decoder input starts with <eos>; <pad> is only
ever attention-masked or loss-masked and never influences the loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NumericalError
from .textproc import ChunkSet, EOS_ID, PAD_ID

_NEG = -1e9


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_ffn: int = 128
    l_ctx: int = 64
    max_target_len: int = 32
    dropout_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "n_heads", "n_enc_layers",
                     "n_dec_layers", "d_ffn", "l_ctx"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )
        if self.max_target_len < 2:
            raise ValueError("max_target_len must be >= 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")


def expected_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Tensor name -> shape, in deterministic creation order."""
    d, f = config.d_model, config.d_ffn
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (config.vocab_size, d),
        "enc_pos": (config.l_ctx, d),
        "dec_pos": (config.max_target_len, d),
    }

    def attn(prefix: str) -> None:
        for w in ("wq", "wk", "wv", "wo"):
            shapes[f"{prefix}.{w}"] = (d, d)

    def ffn(prefix: str) -> None:
        shapes[f"{prefix}.w1"] = (d, f)
        shapes[f"{prefix}.b1"] = (f,)
        shapes[f"{prefix}.w2"] = (f, d)
        shapes[f"{prefix}.b2"] = (d,)

    def ln(prefix: str) -> None:
        shapes[f"{prefix}.g"] = (d,)
        shapes[f"{prefix}.b"] = (d,)

    for i in range(config.n_enc_layers):
        ln(f"enc.{i}.ln1")
        attn(f"enc.{i}.attn")
        ln(f"enc.{i}.ln2")
        ffn(f"enc.{i}.ffn")
    ln("enc.final_ln")
    for i in range(config.n_dec_layers):
        ln(f"dec.{i}.ln1")
        attn(f"dec.{i}.self_attn")
        ln(f"dec.{i}.ln2")
        attn(f"dec.{i}.cross_attn")
        ln(f"dec.{i}.ln3")
        ffn(f"dec.{i}.ffn")
    ln("dec.final_ln")
    return shapes


@dataclass
class Parameters:
    config: ModelConfig
    tensors: dict[str, np.ndarray]

    def copy(self) -> "Parameters":
        return Parameters(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def n_params(self) -> int:
        return sum(int(v.size) for v in self.tensors.values())


def init_params(config: ModelConfig) -> Parameters:
    """Deterministic init: matrices uniform in [-1/sqrt(d_in), 1/sqrt(d_in)],
    embedding tables uniform in [-0.05, 0.05], norm gains 1, biases 0."""
    rng = np.random.default_rng(config.seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in expected_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            tensors[name] = np.ones(shape)
        elif leaf in ("b", "b1", "b2"):
            tensors[name] = np.zeros(shape)
        elif name in ("tok_emb", "enc_pos", "dec_pos"):
            tensors[name] = rng.uniform(-0.05, 0.05, shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            tensors[name] = rng.uniform(-bound, bound, shape)
    return Parameters(config=config, tensors=tensors)


def zero_grads(config: ModelConfig) -> dict[str, np.ndarray]:
    return {name: np.zeros(shape) for name, shape in expected_shapes(config).items()}


@dataclass
class FusedStates:
    """Concatenated per-chunk encoder outputs for one example: chunk i's
    rows occupy block [i*l_ctx, (i+1)*l_ctx).  Masked rows are excluded
    from all decoder cross-attention."""

    states: np.ndarray  # (n_chunks * l_ctx, d_model)
    pad_mask: np.ndarray  # (n_chunks * l_ctx,) bool


# ------------------------------------------------------------------
# primitive layers (forward returns a cache consumed by backward)
# ------------------------------------------------------------------

def _ln_fwd(x, g, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def _ln_bwd(dy, cache):
    xhat, inv, g = cache
    axes = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axes)
    db = dy.sum(axes)
    dxhat = dy * g
    m1 = dxhat.mean(-1, keepdims=True)
    m2 = (dxhat * xhat).mean(-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def _linear(x, w):
    """x (..., d_in) @ w (d_in, d_out) as one BLAS call."""
    return (x.reshape(-1, x.shape[-1]) @ w).reshape(*x.shape[:-1], w.shape[1])


def _linear_dw(x, dy):
    """Weight gradient for y = x @ w, reduced over all leading axes."""
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])


def _split_heads(x, n_heads):
    n, l, d = x.shape
    return x.reshape(n, l, n_heads, d // n_heads).transpose(0, 2, 1, 3).reshape(
        n * n_heads, l, d // n_heads
    )


def _merge_heads(x, n_heads):
    nh, l, dk = x.shape
    n = nh // n_heads
    return x.reshape(n, n_heads, l, dk).transpose(0, 2, 1, 3).reshape(
        n, l, n_heads * dk
    )


def _mha_fwd(q_in, kv_in, wq, wk, wv, wo, n_heads, key_mask=None, causal=False,
             precomputed_kv=None):
    n, lq, d = q_in.shape
    lk = kv_in.shape[1]
    dk = d // n_heads
    qh = _split_heads(_linear(q_in, wq), n_heads)  # (n*h, lq, dk)
    if precomputed_kv is not None:
        # Inference-only reuse of the memory projections; the produced
        # cache must not be fed to _mha_bwd.
        kh, vh = precomputed_kv
    else:
        kh = _split_heads(_linear(kv_in, wk), n_heads)
        vh = _split_heads(_linear(kv_in, wv), n_heads)
    scale = 1.0 / np.sqrt(dk)
    scores = (qh @ kh.transpose(0, 2, 1)) * scale  # (n*h, lq, lk)
    if key_mask is not None:
        blocked = np.repeat(~key_mask, n_heads, axis=0)[:, None, :]
        scores = np.where(blocked, _NEG, scores)
    if causal:
        allow = np.tril(np.ones((lq, lk), dtype=bool))
        scores = np.where(allow[None], scores, _NEG)
    scores = scores - scores.max(-1, keepdims=True)
    attn = np.exp(scores)
    attn = attn / attn.sum(-1, keepdims=True)
    ctx = _merge_heads(attn @ vh, n_heads)  # (n, lq, d)
    out = _linear(ctx, wo)
    cache = (q_in, kv_in, qh, kh, vh, attn, ctx, wq, wk, wv, wo, scale, n_heads)
    return out, cache


def _mha_bwd(dout, cache):
    q_in, kv_in, qh, kh, vh, attn, ctx, wq, wk, wv, wo, scale, n_heads = cache
    dwo = _linear_dw(ctx, dout)
    dctx = _split_heads(_linear(dout, wo.T), n_heads)
    dattn = dctx @ vh.transpose(0, 2, 1)
    dvh = attn.transpose(0, 2, 1) @ dctx
    dscores = attn * (dattn - (dattn * attn).sum(-1, keepdims=True))
    dscores = dscores * scale
    dqh = dscores @ kh
    dkh = dscores.transpose(0, 2, 1) @ qh
    dq = _merge_heads(dqh, n_heads)
    dk_ = _merge_heads(dkh, n_heads)
    dv = _merge_heads(dvh, n_heads)
    dwq = _linear_dw(q_in, dq)
    dwk = _linear_dw(kv_in, dk_)
    dwv = _linear_dw(kv_in, dv)
    dq_in = _linear(dq, wq.T)
    dkv_in = _linear(dk_, wk.T) + _linear(dv, wv.T)
    return dq_in, dkv_in, dwq, dwk, dwv, dwo


# GELU (tanh form) keeps the loss surface smooth, so central-difference
# gradient checks converge at every parameter instead of breaking near
# ReLU kinks.
_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


def _gelu_fwd(h):
    t = np.tanh(_GELU_C * (h + _GELU_A * h * h * h))
    return 0.5 * h * (1.0 + t), (h, t)


def _gelu_bwd(dy, cache):
    h, t = cache
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * h * h)
    return dy * (0.5 * (1.0 + t) + 0.5 * h * (1.0 - t * t) * du)


def _ffn_fwd(x, w1, b1, w2, b2):
    h = _linear(x, w1) + b1
    r, gelu_cache = _gelu_fwd(h)
    return _linear(r, w2) + b2, (x, gelu_cache, r, w1, w2)


def _ffn_bwd(dy, cache):
    x, gelu_cache, r, w1, w2 = cache
    dw2 = _linear_dw(r, dy)
    db2 = dy.sum((0, 1))
    dh = _gelu_bwd(_linear(dy, w2.T), gelu_cache)
    dw1 = _linear_dw(x, dh)
    db1 = dh.sum((0, 1))
    dx = _linear(dh, w1.T)
    return dx, dw1, db1, dw2, db2


def _dropout_fwd(x, rate, rng):
    if rate <= 0.0 or rng is None:
        return x, None
    keep = rng.random(x.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    return x * keep * scale, (keep, scale)


def _dropout_bwd(dy, cache):
    if cache is None:
        return dy
    keep, scale = cache
    return dy * keep * scale


# ------------------------------------------------------------------
# encoder / decoder stacks
# ------------------------------------------------------------------

def _encoder_fwd(params, ids, mask, dropout_rate=0.0, rng=None):
    t = params.tensors
    cfg = params.config
    length = ids.shape[1]
    x = t["tok_emb"][ids] + t["enc_pos"][:length]
    layers = []
    for i in range(cfg.n_enc_layers):
        p = f"enc.{i}"
        h, c_ln1 = _ln_fwd(x, t[f"{p}.ln1.g"], t[f"{p}.ln1.b"])
        a, c_attn = _mha_fwd(
            h, h, t[f"{p}.attn.wq"], t[f"{p}.attn.wk"], t[f"{p}.attn.wv"],
            t[f"{p}.attn.wo"], cfg.n_heads, key_mask=mask,
        )
        a, c_d1 = _dropout_fwd(a, dropout_rate, rng)
        x = x + a
        h, c_ln2 = _ln_fwd(x, t[f"{p}.ln2.g"], t[f"{p}.ln2.b"])
        f, c_ffn = _ffn_fwd(
            h, t[f"{p}.ffn.w1"], t[f"{p}.ffn.b1"], t[f"{p}.ffn.w2"],
            t[f"{p}.ffn.b2"],
        )
        f, c_d2 = _dropout_fwd(f, dropout_rate, rng)
        x = x + f
        layers.append((c_ln1, c_attn, c_d1, c_ln2, c_ffn, c_d2))
    x, c_final = _ln_fwd(x, t["enc.final_ln.g"], t["enc.final_ln.b"])
    return x, {"ids": ids, "length": length, "layers": layers, "final": c_final}


def _encoder_bwd(params, dx, caches, grads):
    cfg = params.config
    dx, dg, db = _ln_bwd(dx, caches["final"])
    grads["enc.final_ln.g"] += dg
    grads["enc.final_ln.b"] += db
    for i in reversed(range(cfg.n_enc_layers)):
        p = f"enc.{i}"
        c_ln1, c_attn, c_d1, c_ln2, c_ffn, c_d2 = caches["layers"][i]
        d_f = _dropout_bwd(dx, c_d2)
        d_h, dw1, db1, dw2, db2 = _ffn_bwd(d_f, c_ffn)
        grads[f"{p}.ffn.w1"] += dw1
        grads[f"{p}.ffn.b1"] += db1
        grads[f"{p}.ffn.w2"] += dw2
        grads[f"{p}.ffn.b2"] += db2
        d_x, dg, db = _ln_bwd(d_h, c_ln2)
        grads[f"{p}.ln2.g"] += dg
        grads[f"{p}.ln2.b"] += db
        dx = dx + d_x
        d_a = _dropout_bwd(dx, c_d1)
        dq_in, dkv_in, dwq, dwk, dwv, dwo = _mha_bwd(d_a, c_attn)
        grads[f"{p}.attn.wq"] += dwq
        grads[f"{p}.attn.wk"] += dwk
        grads[f"{p}.attn.wv"] += dwv
        grads[f"{p}.attn.wo"] += dwo
        d_x, dg, db = _ln_bwd(dq_in + dkv_in, c_ln1)
        grads[f"{p}.ln1.g"] += dg
        grads[f"{p}.ln1.b"] += db
        dx = dx + d_x
    ids = caches["ids"]
    d = dx.shape[-1]
    np.add.at(grads["tok_emb"], ids.reshape(-1), dx.reshape(-1, d))
    grads["enc_pos"][: caches["length"]] += dx.sum(0)


def _precompute_cross_kv(params, memory):
    """Per-layer split-head projections of the memory, for decoding loops
    where the memory never changes between steps."""
    t = params.tensors
    cfg = params.config
    return [
        (
            _split_heads(_linear(memory, t[f"dec.{i}.cross_attn.wk"]),
                         cfg.n_heads),
            _split_heads(_linear(memory, t[f"dec.{i}.cross_attn.wv"]),
                         cfg.n_heads),
        )
        for i in range(cfg.n_dec_layers)
    ]


def _decoder_fwd(params, dec_ids, memory, mem_mask, dropout_rate=0.0, rng=None,
                 cross_kv=None):
    t = params.tensors
    cfg = params.config
    length = dec_ids.shape[1]
    x = t["tok_emb"][dec_ids] + t["dec_pos"][:length]
    layers = []
    for i in range(cfg.n_dec_layers):
        p = f"dec.{i}"
        h, c_ln1 = _ln_fwd(x, t[f"{p}.ln1.g"], t[f"{p}.ln1.b"])
        a, c_self = _mha_fwd(
            h, h, t[f"{p}.self_attn.wq"], t[f"{p}.self_attn.wk"],
            t[f"{p}.self_attn.wv"], t[f"{p}.self_attn.wo"], cfg.n_heads,
            causal=True,
        )
        a, c_d1 = _dropout_fwd(a, dropout_rate, rng)
        x = x + a
        h, c_ln2 = _ln_fwd(x, t[f"{p}.ln2.g"], t[f"{p}.ln2.b"])
        a, c_cross = _mha_fwd(
            h, memory, t[f"{p}.cross_attn.wq"], t[f"{p}.cross_attn.wk"],
            t[f"{p}.cross_attn.wv"], t[f"{p}.cross_attn.wo"], cfg.n_heads,
            key_mask=mem_mask,
            precomputed_kv=None if cross_kv is None else cross_kv[i],
        )
        a, c_d2 = _dropout_fwd(a, dropout_rate, rng)
        x = x + a
        h, c_ln3 = _ln_fwd(x, t[f"{p}.ln3.g"], t[f"{p}.ln3.b"])
        f, c_ffn = _ffn_fwd(
            h, t[f"{p}.ffn.w1"], t[f"{p}.ffn.b1"], t[f"{p}.ffn.w2"],
            t[f"{p}.ffn.b2"],
        )
        f, c_d3 = _dropout_fwd(f, dropout_rate, rng)
        x = x + f
        layers.append((c_ln1, c_self, c_d1, c_ln2, c_cross, c_d2, c_ln3,
                       c_ffn, c_d3))
    x, c_final = _ln_fwd(x, t["dec.final_ln.g"], t["dec.final_ln.b"])
    return x, {"ids": dec_ids, "length": length, "layers": layers,
               "final": c_final, "memory_shape": memory.shape}


def _decoder_bwd(params, dx, caches, grads):
    cfg = params.config
    dmemory = np.zeros(caches["memory_shape"])
    dx, dg, db = _ln_bwd(dx, caches["final"])
    grads["dec.final_ln.g"] += dg
    grads["dec.final_ln.b"] += db
    for i in reversed(range(cfg.n_dec_layers)):
        p = f"dec.{i}"
        (c_ln1, c_self, c_d1, c_ln2, c_cross, c_d2, c_ln3, c_ffn,
         c_d3) = caches["layers"][i]
        d_f = _dropout_bwd(dx, c_d3)
        d_h, dw1, db1, dw2, db2 = _ffn_bwd(d_f, c_ffn)
        grads[f"{p}.ffn.w1"] += dw1
        grads[f"{p}.ffn.b1"] += db1
        grads[f"{p}.ffn.w2"] += dw2
        grads[f"{p}.ffn.b2"] += db2
        d_x, dg, db = _ln_bwd(d_h, c_ln3)
        grads[f"{p}.ln3.g"] += dg
        grads[f"{p}.ln3.b"] += db
        dx = dx + d_x
        d_a = _dropout_bwd(dx, c_d2)
        dq_in, dkv_in, dwq, dwk, dwv, dwo = _mha_bwd(d_a, c_cross)
        grads[f"{p}.cross_attn.wq"] += dwq
        grads[f"{p}.cross_attn.wk"] += dwk
        grads[f"{p}.cross_attn.wv"] += dwv
        grads[f"{p}.cross_attn.wo"] += dwo
        dmemory += dkv_in
        d_x, dg, db = _ln_bwd(dq_in, c_ln2)
        grads[f"{p}.ln2.g"] += dg
        grads[f"{p}.ln2.b"] += db
        dx = dx + d_x
        d_a = _dropout_bwd(dx, c_d1)
        dq_in, dkv_in, dwq, dwk, dwv, dwo = _mha_bwd(d_a, c_self)
        grads[f"{p}.self_attn.wq"] += dwq
        grads[f"{p}.self_attn.wk"] += dwk
        grads[f"{p}.self_attn.wv"] += dwv
        grads[f"{p}.self_attn.wo"] += dwo
        d_x, dg, db = _ln_bwd(dq_in + dkv_in, c_ln1)
        grads[f"{p}.ln1.g"] += dg
        grads[f"{p}.ln1.b"] += db
        dx = dx + d_x
    ids = caches["ids"]
    d = dx.shape[-1]
    np.add.at(grads["tok_emb"], ids.reshape(-1), dx.reshape(-1, d))
    grads["dec_pos"][: caches["length"]] += dx.sum(0)
    return dmemory


def _cross_entropy(logits, targets, tgt_mask):
    """Mean over examples of the per-example token-mean cross-entropy."""
    b, t, _ = logits.shape
    z = logits - logits.max(-1, keepdims=True)
    lse = np.log(np.exp(z).sum(-1, keepdims=True))
    logp = z - lse
    ntok = tgt_mask.sum(-1)
    if np.any(ntok == 0):
        raise ValueError("example with no target tokens")
    weight = tgt_mask / (ntok[:, None] * b)
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = -(weight * picked).sum()
    dlogits = np.exp(logp) * weight[..., None]
    dlogits[np.arange(b)[:, None], np.arange(t)[None, :], targets] -= weight
    return loss, dlogits


# ------------------------------------------------------------------
# batch assembly and public operations
# ------------------------------------------------------------------

def _check_chunkset(config: ModelConfig, chunkset: ChunkSet) -> None:
    if chunkset.l_ctx != config.l_ctx:
        raise ValueError(
            f"chunkset l_ctx {chunkset.l_ctx} != model l_ctx {config.l_ctx}"
        )
    if not chunkset.pad_mask.any():
        raise ValueError("empty memory: all chunk positions are masked")


def _check_target(config: ModelConfig, target: Sequence[int]) -> None:
    if not target or target[-1] != EOS_ID:
        raise ValueError("target must be non-empty and end with <eos>")
    if len(target) > config.max_target_len:
        raise ValueError(
            f"target length {len(target)} exceeds max_target_len "
            f"{config.max_target_len}"
        )


def _assemble_batch(config, batch):
    b = len(batch)
    n_chunks = max(cs.n_chunks for cs, _ in batch)
    l = config.l_ctx
    enc_ids = np.full((b, n_chunks, l), PAD_ID, dtype=np.int64)
    enc_mask = np.zeros((b, n_chunks, l), dtype=bool)
    t_max = max(len(tgt) for _, tgt in batch)
    dec_in = np.full((b, t_max), PAD_ID, dtype=np.int64)
    targets = np.full((b, t_max), PAD_ID, dtype=np.int64)
    tgt_mask = np.zeros((b, t_max), dtype=bool)
    for k, (cs, tgt) in enumerate(batch):
        _check_chunkset(config, cs)
        _check_target(config, tgt)
        enc_ids[k, : cs.n_chunks] = cs.token_ids
        enc_mask[k, : cs.n_chunks] = cs.pad_mask
        dec_in[k, 0] = EOS_ID
        dec_in[k, 1 : len(tgt)] = tgt[:-1]
        targets[k, : len(tgt)] = tgt
        tgt_mask[k, : len(tgt)] = True
    return enc_ids, enc_mask, dec_in, targets, tgt_mask


def _forward(params, enc_ids, enc_mask, dec_in, dropout_rate=0.0, rng=None):
    b, n_chunks, l = enc_ids.shape
    d = params.config.d_model
    enc_out, enc_caches = _encoder_fwd(
        params, enc_ids.reshape(b * n_chunks, l),
        enc_mask.reshape(b * n_chunks, l), dropout_rate, rng,
    )
    memory = enc_out.reshape(b, n_chunks * l, d)
    mem_mask = enc_mask.reshape(b, n_chunks * l)
    hidden, dec_caches = _decoder_fwd(
        params, dec_in, memory, mem_mask, dropout_rate, rng
    )
    logits = _linear(hidden, params.tensors["tok_emb"].T)
    return logits, hidden, enc_caches, dec_caches


def batch_loss(params: Parameters, batch) -> float:
    """Mean over the batch of per-example token-mean cross-entropy.

    batch is a sequence of (ChunkSet, target token ids ending in <eos>).
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    enc_ids, enc_mask, dec_in, targets, tgt_mask = _assemble_batch(
        params.config, batch
    )
    logits, _, _, _ = _forward(params, enc_ids, enc_mask, dec_in)
    value, _ = _cross_entropy(logits, targets, tgt_mask)
    return float(value)


def loss(params: Parameters, chunkset: ChunkSet, target_ids: Sequence[int]) -> float:
    """Teacher-forced token-mean cross-entropy for one example."""
    return batch_loss(params, [(chunkset, list(target_ids))])


def loss_and_grad(params: Parameters, batch, dropout_rate=0.0, rng=None):
    """Loss plus gradients of the mean batch loss, keyed like the tensors."""
    if not batch:
        raise ValueError("batch must be non-empty")
    enc_ids, enc_mask, dec_in, targets, tgt_mask = _assemble_batch(
        params.config, batch
    )
    b, n_chunks, l = enc_ids.shape
    d = params.config.d_model
    logits, hidden, enc_caches, dec_caches = _forward(
        params, enc_ids, enc_mask, dec_in, dropout_rate, rng
    )
    value, dlogits = _cross_entropy(logits, targets, tgt_mask)
    if not np.isfinite(value):
        raise NumericalError(f"non-finite loss: {value}")
    grads = zero_grads(params.config)
    emb = params.tensors["tok_emb"]
    grads["tok_emb"] += _linear_dw(dlogits, hidden)
    dhidden = _linear(dlogits, emb)
    dmemory = _decoder_bwd(params, dhidden, dec_caches, grads)
    _encoder_bwd(params, dmemory.reshape(b * n_chunks, l, d), enc_caches, grads)
    return float(value), grads


def grad(params: Parameters, batch) -> dict[str, np.ndarray]:
    """Gradients of the mean batch loss (matches central finite differences)."""
    _, grads = loss_and_grad(params, batch)
    return grads


def encode_chunks(params: Parameters, chunkset: ChunkSet) -> FusedStates:
    """Encode each chunk independently and concatenate the states."""
    _check_chunkset(params.config, chunkset)
    states, _ = _encoder_fwd(params, chunkset.token_ids, chunkset.pad_mask)
    return FusedStates(
        states=states.reshape(-1, params.config.d_model),
        pad_mask=chunkset.pad_mask.reshape(-1),
    )


def decoder_logits(
    params: Parameters, fused: FusedStates, target_prefix: Sequence[int]
) -> np.ndarray:
    """Logits for every position of a decoder input prefix (causal self-
    attention; cross-attention over all unmasked fused rows)."""
    if not fused.pad_mask.any():
        raise ValueError("empty memory: all fused rows are masked")
    if not 1 <= len(target_prefix) <= params.config.max_target_len:
        raise ValueError(
            f"prefix length {len(target_prefix)} outside "
            f"[1, {params.config.max_target_len}]"
        )
    dec_in = np.asarray(target_prefix, dtype=np.int64)[None, :]
    hidden, _ = _decoder_fwd(
        params, dec_in, fused.states[None], fused.pad_mask[None]
    )
    return hidden[0] @ params.tensors["tok_emb"].T


def greedy_decode_batch(
    params: Parameters,
    chunksets: Sequence[ChunkSet],
    max_target_len: int | None = None,
) -> list[list[int]]:
    """Greedy decoding for several examples at once (same semantics as
    greedy_decode per example; rows that emit <eos> stop growing)."""
    cfg = params.config
    t_max = cfg.max_target_len if max_target_len is None else max_target_len
    if not 1 <= t_max <= cfg.max_target_len:
        raise ValueError(f"max_target_len outside [1, {cfg.max_target_len}]")
    if not chunksets:
        return []
    b = len(chunksets)
    n_chunks = max(cs.n_chunks for cs in chunksets)
    l = cfg.l_ctx
    enc_ids = np.full((b, n_chunks, l), PAD_ID, dtype=np.int64)
    enc_mask = np.zeros((b, n_chunks, l), dtype=bool)
    for k, cs in enumerate(chunksets):
        _check_chunkset(cfg, cs)
        enc_ids[k, : cs.n_chunks] = cs.token_ids
        enc_mask[k, : cs.n_chunks] = cs.pad_mask
    enc_out, _ = _encoder_fwd(
        params, enc_ids.reshape(b * n_chunks, l), enc_mask.reshape(b * n_chunks, l)
    )
    memory = enc_out.reshape(b, n_chunks * l, cfg.d_model)
    mem_mask = enc_mask.reshape(b, n_chunks * l)
    emb = params.tensors["tok_emb"]
    cross_kv = _precompute_cross_kv(params, memory)

    generated: list[list[int]] = [[] for _ in range(b)]
    finished = [False] * b
    dec_in = np.full((b, 1), EOS_ID, dtype=np.int64)
    for step in range(t_max):
        hidden, _ = _decoder_fwd(params, dec_in, memory, mem_mask,
                                 cross_kv=cross_kv)
        last_logits = hidden[:, -1] @ emb.T
        nxt = last_logits.argmax(-1)  # ties resolve to the lowest id
        for k in range(b):
            if finished[k]:
                nxt[k] = PAD_ID
            elif nxt[k] == EOS_ID:
                finished[k] = True
            else:
                generated[k].append(int(nxt[k]))
        if all(finished) or step == t_max - 1:
            break
        dec_in = np.concatenate([dec_in, nxt[:, None]], axis=1)
    return generated


def greedy_decode(
    params: Parameters, chunkset: ChunkSet, max_target_len: int | None = None
) -> list[int]:
    """Argmax decoding (ties to the lowest id), stopping at <eos> or the
    length limit; the returned ids exclude <eos>."""
    return greedy_decode_batch(params, [chunkset], max_target_len)[0]
