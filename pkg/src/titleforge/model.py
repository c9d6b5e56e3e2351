"""Transformer encoder-decoder for title generation.

Pre-layer-norm blocks: every sub-component normalizes its input, then a
residual skip adds that input back to the (dropped-out) output. The
encoder is bidirectional over the fused description/code sequence; the
decoder adds causal self-attention and cross-attention over the encoder
states. Input and output token embeddings are shared.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import DegenerateMaskError, LengthExceededError, ShapeMismatchError
from .tokenizer import ModelInput

NEG_INF = -1e9  # additive mask surrogate; true -inf would NaN the softmax


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 768
    n_heads: int = 12
    n_layers: int = 12
    d_ff: int | None = None
    max_encoder_len: int = 512
    max_decoder_len: int = 30
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_ff is None:
            self.d_ff = 4 * self.d_model
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must divide evenly across heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @classmethod
    def toy(cls, vocab_size, **overrides):
        """Small defaults for desk-scale runs and tests."""
        base = dict(
            vocab_size=vocab_size,
            d_model=64,
            n_heads=4,
            n_layers=2,
            d_ff=128,
            max_encoder_len=128,
            max_decoder_len=24,
        )
        base.update(overrides)
        return cls(**base)


class ModelParams:
    """All learned weights, addressable by dotted name.

    Names ending in .b1/.b2 are biases and .gamma/.beta are layer-norm
    parameters; the optimizer's freeze rule keys off these suffixes.
    """

    def __init__(self, config: ModelConfig, seed=0, dtype=np.float32, init_std=0.02):
        self.config = config
        self.dtype = dtype
        self._tensors: dict[str, T.Tensor] = {}
        rng = np.random.default_rng(seed)
        c = config

        def weight(name, shape):
            data = rng.normal(0.0, init_std, size=shape)
            self._tensors[name] = T.Tensor(data, requires_grad=True, dtype=dtype)

        def norm(name):
            self._tensors[f"{name}.gamma"] = T.Tensor(np.ones(c.d_model), True, dtype)
            self._tensors[f"{name}.beta"] = T.Tensor(np.zeros(c.d_model), True, dtype)

        def attention(name):
            for proj in ("wq", "wk", "wv", "wo"):
                weight(f"{name}.{proj}", (c.d_model, c.d_model))

        def ffn(name):
            weight(f"{name}.w1", (c.d_model, c.d_ff))
            self._tensors[f"{name}.b1"] = T.Tensor(np.zeros(c.d_ff), True, dtype)
            weight(f"{name}.w2", (c.d_ff, c.d_model))
            self._tensors[f"{name}.b2"] = T.Tensor(np.zeros(c.d_model), True, dtype)

        weight("embedding.tokens", (c.vocab_size, c.d_model))
        weight("embedding.enc_pos", (c.max_encoder_len, c.d_model))
        weight("embedding.dec_pos", (c.max_decoder_len, c.d_model))
        for i in range(c.n_layers):
            norm(f"encoder.{i}.ln_attn")
            attention(f"encoder.{i}.attn")
            norm(f"encoder.{i}.ln_ffn")
            ffn(f"encoder.{i}.ffn")
        norm("encoder.ln_out")
        for i in range(c.n_layers):
            norm(f"decoder.{i}.ln_self")
            attention(f"decoder.{i}.self_attn")
            norm(f"decoder.{i}.ln_cross")
            attention(f"decoder.{i}.cross_attn")
            norm(f"decoder.{i}.ln_ffn")
            ffn(f"decoder.{i}.ffn")
        norm("decoder.ln_out")

    def __getitem__(self, name) -> T.Tensor:
        return self._tensors[name]

    def named(self):
        return self._tensors.items()

    def zero_grads(self):
        for t in self._tensors.values():
            t.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._tensors.items()}

    def load_arrays(self, arrays):
        for name, t in self._tensors.items():
            src = np.asarray(arrays[name], dtype=self.dtype)
            if src.shape != t.data.shape:
                raise ShapeMismatchError(f"{name}: {src.shape} vs {t.data.shape}")
            t.data = src.copy()


def is_bias_or_norm(name: str) -> bool:
    """Parameter-group membership for the freeze rule."""
    return name.rsplit(".", 1)[-1] in {"b1", "b2", "gamma", "beta"}


@dataclass
class EncoderOutput:
    h: T.Tensor  # [batch, src_len, d_model]
    pad_mask: np.ndarray  # [batch, src_len] bool, True where real tokens


def multi_head_attention(
    queries, keys, values, *, wq, wk, wv, wo, n_heads, mask=None,
    dropout_rate=0.0, training=False, rng=None,
):
    """softmax(QK^T / sqrt(d_k) + mask) V per head, then output projection.

    ``mask`` is an additive float array broadcastable to
    [batch, heads, q_len, k_len]; disallowed keys carry NEG_INF.
    """
    b, lq, d = queries.data.shape
    lk = keys.data.shape[1]
    if d % n_heads != 0:
        raise ShapeMismatchError("model width must divide across heads")
    dk = d // n_heads

    if mask is not None:
        if np.all(mask <= NEG_INF / 2, axis=-1).any():
            raise DegenerateMaskError("a query position has every key masked out")

    def split_heads(x, length):
        x = T.reshape(x, (b, length, n_heads, dk))
        return T.transpose(x, (0, 2, 1, 3))  # [b, heads, len, dk]

    q = split_heads(T.matmul(queries, wq), lq)
    k = split_heads(T.matmul(keys, wk), lk)
    v = split_heads(T.matmul(values, wv), lk)

    scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dk))
    if mask is not None:
        full = np.broadcast_to(mask, scores.data.shape)
        scores = T.add(scores, T.constant(full, dtype=scores.data.dtype))
    attn = T.softmax(scores, axis=-1)
    attn = T.dropout(attn, dropout_rate, training, rng)
    ctx = T.matmul(attn, v)
    ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, lq, d))
    return T.matmul(ctx, wo)


def feed_forward(x, *, w1, b1, w2, b2, dropout_rate=0.0, training=False, rng=None):
    """relu(x W1 + b1) W2 + b2, with dropout on the hidden activations."""
    h = T.relu(T.add(T.matmul(x, w1), b1))
    h = T.dropout(h, dropout_rate, training, rng)
    return T.add(T.matmul(h, w2), b2)


def padding_attention_mask(pad_mask, dtype):
    """[batch, src] bool -> additive [batch, 1, 1, src]."""
    return np.where(pad_mask[:, None, None, :], 0.0, NEG_INF).astype(dtype)


def causal_attention_mask(length, dtype):
    m = np.triu(np.full((length, length), NEG_INF, dtype=dtype), k=1)
    return m[None, None, :, :]


class Transformer:
    def __init__(self, config: ModelConfig, seed=0, dtype=np.float32, init_std=0.02):
        self.config = config
        self.params = ModelParams(config, seed=seed, dtype=dtype, init_std=init_std)

    @property
    def dtype(self):
        return self.params.dtype

    def _ln(self, x, name):
        p = self.params
        return T.layer_norm(x, p[f"{name}.gamma"], p[f"{name}.beta"])

    def _attn(self, name, q, kv, mask, training, rng):
        p = self.params
        return multi_head_attention(
            q, kv, kv,
            wq=p[f"{name}.wq"], wk=p[f"{name}.wk"], wv=p[f"{name}.wv"], wo=p[f"{name}.wo"],
            n_heads=self.config.n_heads, mask=mask,
            dropout_rate=self.config.dropout, training=training, rng=rng,
        )

    def _ffn(self, name, x, training, rng):
        p = self.params
        return feed_forward(
            x, w1=p[f"{name}.w1"], b1=p[f"{name}.b1"], w2=p[f"{name}.w2"], b2=p[f"{name}.b2"],
            dropout_rate=self.config.dropout, training=training, rng=rng,
        )

    def _drop(self, x, training, rng):
        return T.dropout(x, self.config.dropout, training, rng)

    def encode_batch(self, token_ids, pad_mask=None, training=False, rng=None) -> EncoderOutput:
        """Run the encoder stack over a padded id batch [batch, src_len]."""
        ids = np.asarray(token_ids, dtype=np.int64)
        b, length = ids.shape
        c = self.config
        if length > c.max_encoder_len:
            raise LengthExceededError(f"encoder input {length} > {c.max_encoder_len}")
        if ids.size and ids.max() >= c.vocab_size:
            raise IndexError("token id outside the vocabulary")
        if pad_mask is None:
            pad_mask = np.ones((b, length), dtype=bool)
        p = self.params

        x = T.embedding(p["embedding.tokens"], ids)
        pos = T.embedding(p["embedding.enc_pos"], np.arange(length))
        x = T.add(x, pos)
        x = self._drop(x, training, rng)
        mask = None
        if not pad_mask.all():
            mask = padding_attention_mask(pad_mask, x.data.dtype)
        for i in range(c.n_layers):
            h = self._ln(x, f"encoder.{i}.ln_attn")
            a = self._attn(f"encoder.{i}.attn", h, h, mask, training, rng)
            x = T.add(x, self._drop(a, training, rng))
            f = self._ffn(f"encoder.{i}.ffn", self._ln(x, f"encoder.{i}.ln_ffn"), training, rng)
            x = T.add(x, self._drop(f, training, rng))
        x = self._ln(x, "encoder.ln_out")
        x = self._drop(x, training, rng)
        return EncoderOutput(h=x, pad_mask=pad_mask)

    def encode(self, model_input: ModelInput, training=False, rng=None) -> EncoderOutput:
        ids = np.asarray([model_input.token_ids], dtype=np.int64)
        return self.encode_batch(ids, training=training, rng=rng)

    def decoder_logits(self, token_ids, enc: EncoderOutput, training=False, rng=None) -> T.Tensor:
        """Teacher-forced decoder: logits [batch, tgt_len, vocab]."""
        ids = np.asarray(token_ids, dtype=np.int64)
        b, length = ids.shape
        c = self.config
        if length > c.max_decoder_len:
            raise LengthExceededError(f"decoder input {length} > {c.max_decoder_len}")
        if ids.size and ids.max() >= c.vocab_size:
            raise IndexError("token id outside the vocabulary")
        p = self.params

        y = T.embedding(p["embedding.tokens"], ids)
        pos = T.embedding(p["embedding.dec_pos"], np.arange(length))
        y = T.add(y, pos)
        y = self._drop(y, training, rng)
        causal = causal_attention_mask(length, y.data.dtype)
        cross = None
        if not enc.pad_mask.all():
            cross = padding_attention_mask(enc.pad_mask, y.data.dtype)
        for i in range(c.n_layers):
            s = self._ln(y, f"decoder.{i}.ln_self")
            a = self._attn(f"decoder.{i}.self_attn", s, s, causal, training, rng)
            y = T.add(y, self._drop(a, training, rng))
            x = self._attn(f"decoder.{i}.cross_attn", self._ln(y, f"decoder.{i}.ln_cross"),
                           enc.h, cross, training, rng)
            y = T.add(y, self._drop(x, training, rng))
            f = self._ffn(f"decoder.{i}.ffn", self._ln(y, f"decoder.{i}.ln_ffn"), training, rng)
            y = T.add(y, self._drop(f, training, rng))
        y = self._ln(y, "decoder.ln_out")
        y = self._drop(y, training, rng)
        # Shared embedding doubles as the output projection.
        logits = T.matmul(y, T.transpose(p["embedding.tokens"], (1, 0)))
        return logits

    def decode_step(self, prefix, enc: EncoderOutput) -> np.ndarray:
        """Next-token distribution after ``prefix`` (starts with BOS)."""
        if len(prefix) > self.config.max_decoder_len:
            raise LengthExceededError(
                f"prefix {len(prefix)} > {self.config.max_decoder_len}"
            )
        with T.no_grad():
            logits = self.decoder_logits(np.asarray([prefix]), enc)
        last = logits.data[0, -1].astype(np.float64)
        last -= last.max()
        e = np.exp(last)
        return e / e.sum()


# --- checkpoint file --------------------------------------------------------
#
# Layout: magic, 8-byte little-endian manifest length, JSON manifest
# (config, tensor table with offsets, sha256 of the data section), then the
# raw float32 little-endian arrays back to back.

CHECKPOINT_MAGIC = b"TFCKPT1\n"


def save_checkpoint(model: Transformer, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names, blobs, table = [], [], []
    offset = 0
    for name, t in model.params.named():
        raw = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
        table.append({"name": name, "shape": list(t.data.shape), "offset": offset,
                      "nbytes": len(raw)})
        names.append(name)
        blobs.append(raw)
        offset += len(raw)
    data = b"".join(blobs)
    digest = hashlib.sha256(data).hexdigest()
    manifest = json.dumps({
        "format": "titleforge-checkpoint",
        "version": 1,
        "config": asdict(model.config),
        "tensors": table,
        "checksum": digest,
    }).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(manifest)))
        f.write(manifest)
        f.write(data)
    return digest


def load_checkpoint(path) -> tuple[Transformer, str]:
    """Rebuild the model; returns (model, model_id from the data checksum)."""
    path = Path(path)
    with open(path, "rb") as f:
        if f.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        (mlen,) = struct.unpack("<Q", f.read(8))
        manifest = json.loads(f.read(mlen).decode("utf-8"))
        data = f.read()
    digest = hashlib.sha256(data).hexdigest()
    if digest != manifest["checksum"]:
        raise ValueError(f"checkpoint data corrupt: checksum mismatch in {path}")
    config = ModelConfig(**manifest["config"])
    model = Transformer(config)
    arrays = {}
    for entry in manifest["tensors"]:
        start, size = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(data[start:start + size], dtype="<f4")
        arrays[entry["name"]] = arr.reshape(entry["shape"])
    model.params.load_arrays(arrays)
    return model, digest
