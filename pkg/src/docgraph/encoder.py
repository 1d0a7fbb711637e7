"""Context encoder: embeddings plus residual attention/convolution blocks.

One document is one batch. Token states are (length, dim) matrices. Every
block adds its transformed output back onto its input, so zeroing the final
convolution of each block makes encode() reproduce embed() exactly.
"""

from __future__ import annotations

import numpy as np

from . import ndtensor as nd
from .config import TrainConfig
from .errors import DataError

UNK_INDEX = 0


class Encoder:
    """Owns the embedding tables and block parameters inside a ParameterSet."""

    def __init__(
        self,
        params: nd.ParameterSet,
        rng,
        vocab_size: int,
        max_len: int,
        cfg: TrainConfig,
        prefix: str = "encoder",
    ):
        self.cfg = cfg
        self.max_len = max_len
        self.vocab_size = vocab_size
        self.prefix = prefix
        self.params = params
        n = cfg.embed_dim
        inner = 4 * n
        self.head_dim = n // cfg.heads

        def add(name, shape, kind):
            if kind == "emb":
                # unit-scale rows keep word identity comparable in magnitude
                # with the block outputs added on top of it
                data = rng.normal(0.0, 1.0 / np.sqrt(n), size=shape)
            elif kind == "zeros":
                data = np.zeros(shape)
            elif kind == "ones":
                data = np.ones(shape)
            else:
                data = nd.glorot_uniform(shape, rng)
            return params.add(f"{prefix}/{name}", data)

        self.word_emb = add("word_emb", (vocab_size, n), "emb")
        self.pos_emb = add("pos_emb", (max_len, n), "emb")
        self.blocks = []
        for k in range(cfg.blocks):
            heads = []
            for h in range(cfg.heads):
                heads.append(
                    {
                        "wq": add(f"block{k}/head{h}/wq", (n, self.head_dim), "glorot"),
                        "wk": add(f"block{k}/head{h}/wk", (n, self.head_dim), "glorot"),
                        "wv": add(f"block{k}/head{h}/wv", (n, self.head_dim), "glorot"),
                    }
                )
            self.blocks.append(
                {
                    "heads": heads,
                    "ln_gain": add(f"block{k}/ln_gain", (n,), "ones"),
                    "ln_bias": add(f"block{k}/ln_bias", (n,), "zeros"),
                    "conv1_w": add(f"block{k}/conv1_w", (1, n, inner), "glorot"),
                    "conv1_b": add(f"block{k}/conv1_b", (inner,), "zeros"),
                    "conv2_w": add(f"block{k}/conv2_w", (1, inner, n), "glorot"),
                    "conv2_b": add(f"block{k}/conv2_b", (n,), "zeros"),
                    # the final convolution starts at zero so every block is
                    # the identity map at initialization; token identity then
                    # reaches the scorer undiluted and the block fades in as
                    # this layer trains
                    "conv3_w": add(f"block{k}/conv3_w", (5, n, n), "zeros"),
                    "conv3_b": add(f"block{k}/conv3_b", (n,), "zeros"),
                }
            )

    # -- forward ------------------------------------------------------------

    def embed(self, token_ids, mode: str, rngs=None) -> nd.Tensor:
        """Word plus learned position embeddings, with word/input dropout."""
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.ndim != 1 or ids.size == 0:
            raise DataError(f"token id sequence must be a non-empty vector, got shape {ids.shape}")
        if ids.size > self.max_len:
            raise DataError(f"sequence length {ids.size} exceeds position table ({self.max_len})")
        if ids.max() >= self.vocab_size or ids.min() < 0:
            raise DataError("token id outside the vocabulary range")
        if mode == "train" and self.cfg.keep_word < 1.0:
            # word dropout: swap the id itself for the unknown token
            u = rngs["word_dropout"].random(ids.size)
            ids = np.where(u < self.cfg.keep_word, ids, UNK_INDEX)
        x = nd.add(
            nd.embedding_lookup(self.word_emb.value, ids),
            nd.embedding_lookup(self.pos_emb.value, np.arange(ids.size)),
        )
        return nd.dropout(
            x, self.cfg.keep_input, mode, rngs["dropout"] if rngs is not None else None
        )

    def _attend(self, x: nd.Tensor, block, mode: str, rngs) -> nd.Tensor:
        scale = 1.0 / np.sqrt(self.head_dim)
        outputs = []
        for head in block["heads"]:
            q = nd.matmul(x, head["wq"].value)
            k = nd.matmul(x, head["wk"].value)
            v = nd.matmul(x, head["wv"].value)
            scores = nd.mul_const(nd.matmul(q, nd.transpose(k)), scale)
            weights = nd.softmax_over_axis(scores, axis=-1)
            weights = nd.dropout(
                weights, self.cfg.keep_attention, mode, rngs["dropout"] if rngs else None
            )
            outputs.append(nd.matmul(weights, v))
        return outputs[0] if len(outputs) == 1 else nd.concat(outputs, axis=1)

    def _block(self, x: nd.Tensor, block, mode: str, rngs) -> nd.Tensor:
        att = self._attend(x, block, mode, rngs)
        normed = nd.layer_norm(att, block["ln_gain"].value, block["ln_bias"].value)
        h = nd.relu(nd.conv1d(normed, block["conv1_w"].value, block["conv1_b"].value))
        h = nd.conv1d(h, block["conv2_w"].value, block["conv2_b"].value)
        h = nd.conv1d(h, block["conv3_w"].value, block["conv3_b"].value)
        return nd.add(x, h)

    def encode(self, token_ids, mode: str, rngs=None) -> nd.Tensor:
        """Full stack: embeddings run through every residual block."""
        x = self.embed(token_ids, mode, rngs)
        for block in self.blocks:
            x = self._block(x, block, mode, rngs)
        return x
