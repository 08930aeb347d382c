"""A small pre-LN transformer encoder with [CLS] pooling.

The same architecture serves as teacher and student at different depths.
Sentence representation is the raw final-layer hidden state at position 0;
padding positions are masked out of attention at every layer, so pad token
ids can never influence the output.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ShapeError, ValidationError
from .seeding import rng_for
from .tokenizer import TokenSequence, Vocab, tokenize

ATTENTION_MASK_BIAS = -1e9


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 128
    max_len: int = 32
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_len"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValidationError(f"{name} must be a positive integer, got {value!r}")
        if self.d_model % self.n_heads != 0:
            raise ValidationError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ValidationError(f"seed must be a non-negative integer, got {self.seed!r}")


def parameter_spec(config: EncoderConfig) -> list[tuple[str, tuple]]:
    """Ordered (name, shape) pairs; the single source of parameter layout."""
    d, f = config.d_model, config.d_ff
    spec = [
        ("tok_emb", (config.vocab_size, d)),
        ("pos_emb", (config.max_len, d)),
    ]
    for i in range(config.n_layers):
        prefix = f"layer{i}."
        spec.extend(
            [
                (prefix + "ln1.gain", (d,)),
                (prefix + "ln1.bias", (d,)),
                (prefix + "wq", (d, d)),
                (prefix + "bq", (d,)),
                (prefix + "wk", (d, d)),
                (prefix + "bk", (d,)),
                (prefix + "wv", (d, d)),
                (prefix + "bv", (d,)),
                (prefix + "wo", (d, d)),
                (prefix + "bo", (d,)),
                (prefix + "ln2.gain", (d,)),
                (prefix + "ln2.bias", (d,)),
                (prefix + "w1", (d, f)),
                (prefix + "b1", (f,)),
                (prefix + "w2", (f, d)),
                (prefix + "b2", (d,)),
            ]
        )
    spec.extend([("ln_f.gain", (d,)), ("ln_f.bias", (d,))])
    return spec


class EncoderModel:
    """Config plus named parameter tensors in canonical order."""

    def __init__(self, config: EncoderConfig, params: dict[str, ad.Tensor]):
        expected = parameter_spec(config)
        if [(k, v.data.shape) for k, v in params.items()] != [(n, s) for n, s in expected]:
            raise ValidationError("parameter names/shapes do not match the config layout")
        self.config = config
        self.params = params

    def parameters(self) -> list[ad.Tensor]:
        return list(self.params.values())

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def copy(self) -> "EncoderModel":
        cloned = {
            name: ad.Tensor(p.data.copy(), requires_grad=True) for name, p in self.params.items()
        }
        return EncoderModel(self.config, cloned)


def init_model(config: EncoderConfig) -> EncoderModel:
    """Seeded scaled-normal initialization; identical seed, identical model.

    Weight matrices use std 1/sqrt(fan_in); residual-branch output
    projections (wo, w2) are further scaled by 1/sqrt(2 * n_layers); norms
    start at identity, biases at zero.
    """
    rng = rng_for(config.seed, "encoder-init")
    residual_scale = 1.0 / math.sqrt(2.0 * config.n_layers)
    params: dict[str, ad.Tensor] = {}
    for name, shape in parameter_spec(config):
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gain":
            data = np.ones(shape)
        elif leaf == "bias" or leaf.startswith("b"):
            data = np.zeros(shape)
        elif name in ("tok_emb", "pos_emb"):
            data = rng.normal(0.0, 0.1, shape)
        else:
            std = 1.0 / math.sqrt(shape[0])
            if leaf in ("wo", "w2"):
                std *= residual_scale
            data = rng.normal(0.0, std, shape)
        params[name] = ad.Tensor(data, requires_grad=True)
    return EncoderModel(config, params)


@dataclass
class EmbeddingBatch:
    """n x d sentence embeddings with optional row-aligned provenance."""

    values: ad.Tensor
    texts: list[str] | None = None
    labels: list | None = None
    langs: list[str] | None = None

    @property
    def matrix(self) -> np.ndarray:
        return self.values.data

    def __len__(self):
        return self.values.data.shape[0]


def _attention_bias(lengths: np.ndarray, max_len: int) -> np.ndarray:
    # (batch, 1, 1, max_len): 0 at real positions, large negative at pads.
    valid = np.arange(max_len)[None, :] < lengths[:, None]
    return np.where(valid, 0.0, ATTENTION_MASK_BIAS)[:, None, None, :]


def _forward(model: EncoderModel, ids: np.ndarray, bias: np.ndarray) -> ad.Tensor:
    cfg = model.config
    P = model.params
    batch, length = ids.shape
    heads, d_head = cfg.n_heads, cfg.d_model // cfg.n_heads
    scale = 1.0 / math.sqrt(d_head)
    bias_t = ad.Tensor(bias)

    x = ad.add(ad.embedding_lookup(P["tok_emb"], ids), P["pos_emb"])
    for i in range(cfg.n_layers):
        p = f"layer{i}."
        u = ad.layer_norm(x, P[p + "ln1.gain"], P[p + "ln1.bias"])

        def split_heads(t):
            return ad.swapaxes(ad.reshape(t, (batch, length, heads, d_head)), 1, 2)

        q = split_heads(ad.add(ad.matmul(u, P[p + "wq"]), P[p + "bq"]))
        k = split_heads(ad.add(ad.matmul(u, P[p + "wk"]), P[p + "bk"]))
        v = split_heads(ad.add(ad.matmul(u, P[p + "wv"]), P[p + "bv"]))
        scores = ad.add(ad.mul(ad.matmul(q, ad.swapaxes(k, -1, -2)), scale), bias_t)
        attn = ad.softmax(scores, axis=-1)
        context = ad.reshape(ad.swapaxes(ad.matmul(attn, v), 1, 2), (batch, length, cfg.d_model))
        x = ad.add(x, ad.add(ad.matmul(context, P[p + "wo"]), P[p + "bo"]))

        u2 = ad.layer_norm(x, P[p + "ln2.gain"], P[p + "ln2.bias"])
        hidden = ad.gelu(ad.add(ad.matmul(u2, P[p + "w1"]), P[p + "b1"]))
        x = ad.add(x, ad.add(ad.matmul(hidden, P[p + "w2"]), P[p + "b2"]))

    out = ad.layer_norm(x, P["ln_f.gain"], P["ln_f.bias"])
    return out[:, 0, :]


def encode_batch(model: EncoderModel, batch: list[TokenSequence], record_graph: bool = False) -> EmbeddingBatch:
    """Embed a batch of token sequences via the [CLS] position.

    With ``record_graph`` the result participates in autodiff; without it no
    graph is recorded and the call is safe to run concurrently on an
    immutable model.
    """
    if not batch:
        raise ValidationError("cannot encode an empty batch")
    max_len = model.config.max_len
    for pos, seq in enumerate(batch):
        if len(seq.ids) != max_len:
            raise ShapeError(
                f"sequence {pos} has length {len(seq.ids)}, model expects {max_len}"
            )
    ids = np.array([seq.ids for seq in batch], dtype=np.int64)
    lengths = np.array([seq.attention_length for seq in batch], dtype=np.int64)
    bias = _attention_bias(lengths, max_len)
    context = contextlib.nullcontext() if record_graph else ad.no_grad()
    with context:
        values = _forward(model, ids, bias)
    return EmbeddingBatch(values=values)


def embed_texts(model: EncoderModel, vocab: Vocab, texts, batch_size: int = 128) -> np.ndarray:
    """Inference-only embedding of raw texts; returns an (n, d) array."""
    texts = list(texts)
    sequences = [tokenize(t, vocab, model.config.max_len) for t in texts]
    rows = []
    for start in range(0, len(sequences), batch_size):
        chunk = sequences[start : start + batch_size]
        rows.append(encode_batch(model, chunk, record_graph=False).matrix)
    return np.vstack(rows) if rows else np.zeros((0, model.config.d_model))
