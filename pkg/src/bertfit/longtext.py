"""Long-document handling: truncation and hierarchical fraction pooling.

Capacity is 510 content tokens at paper scale (512 minus [CLS] and [SEP]);
head+tail keeps the first 128 and last 382. Over-length documents can
instead be chunked into ceil(L/510) fractions whose [CLS] representations
are pooled by mean, max, or a single-query self-attention combiner.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import Rng

STRATEGIES = ("head_only", "tail_only", "head_tail",
              "hier_mean", "hier_max", "hier_attn")


@dataclass
class TruncationStrategy:
    kind: str = "head_tail"         # head_only | tail_only | head_tail
    head_budget: int = 128
    tail_budget: int = 382
    capacity: int = 510

    def __post_init__(self):
        if self.kind not in ("head_only", "tail_only", "head_tail"):
            raise ValueError(f"unknown truncation kind {self.kind!r}")
        if self.kind == "head_tail" and \
                self.head_budget + self.tail_budget != self.capacity:
            raise ValueError(
                f"head {self.head_budget} + tail {self.tail_budget} "
                f"!= capacity {self.capacity}")


def truncate(tokens: list, strategy: TruncationStrategy) -> list:
    cap = strategy.capacity
    if len(tokens) <= cap:
        return list(tokens)
    if strategy.kind == "head_only":
        return list(tokens[:cap])
    if strategy.kind == "tail_only":
        return list(tokens[-cap:])
    return list(tokens[:strategy.head_budget]) + \
        list(tokens[-strategy.tail_budget:])


@dataclass
class ChunkedDocument:
    fractions: list                 # list of TokenizedSequence
    n_content: int

    @property
    def k(self):
        return len(self.fractions)


def chunk(tokens: list, vocab, capacity: int = 510,
          label=None) -> ChunkedDocument:
    """Split into ceil(L/capacity) contiguous fractions, each wrapped with
    [CLS]/[SEP] and padded to capacity+2."""
    from .tokenizer import encode
    n = len(tokens)
    k = max(1, -(-n // capacity))
    max_len = capacity + 2
    fractions = []
    for i in range(k):
        part = tokens[i * capacity:(i + 1) * capacity]
        fractions.append(encode(part, None, max_len, vocab, label=label))
    return ChunkedDocument(fractions=fractions, n_content=n)


@dataclass
class FractionCombiner:
    """Pools k fraction [CLS] vectors into one width-H vector."""

    kind: str                       # mean | max | attn
    query: Tensor | None = None     # (H,) learned query, attn only
    wk: Tensor | None = None        # (H, H)
    wv: Tensor | None = None        # (H, H)

    @classmethod
    def init(cls, kind: str, hidden: int = 0, rng: Rng | None = None,
             dtype=np.float32):
        if kind in ("mean", "max"):
            return cls(kind=kind)
        if kind != "attn":
            raise ValueError(f"unknown combiner kind {kind!r}")
        # value projection starts at identity so a single fraction passes
        # through unchanged
        return cls(
            kind="attn",
            query=Tensor(rng.truncated_normal((hidden,), 0.02, dtype=dtype),
                         name="combiner.q"),
            wk=Tensor(rng.truncated_normal((hidden, hidden), 0.02,
                                           dtype=dtype), name="combiner.wk"),
            wv=Tensor(np.eye(hidden, dtype=dtype), name="combiner.wv"),
        )

    def parameters(self):
        if self.kind == "attn":
            return [self.query, self.wk, self.wv]
        return []


def combine(cls_vectors: Tensor, combiner: FractionCombiner,
            return_weights: bool = False):
    """Pool (k, H) fraction representations into (H,).

    attn: weights = softmax_k(q . (W_k c_i) / sqrt(H)), output
    sum_i w_i (W_v c_i).
    """
    k, H = cls_vectors.shape
    if combiner.kind == "mean":
        out = ad.tmean(cls_vectors, axis=0)
        return (out, None) if return_weights else out
    if combiner.kind == "max":
        out = ad.tmax(cls_vectors, axis=0)
        return (out, None) if return_weights else out
    keys = ad.matmul(cls_vectors, combiner.wk)          # (k, H)
    vals = ad.matmul(cls_vectors, combiner.wv)          # (k, H)
    q = ad.reshape(combiner.query, (H, 1))
    scores = ad.scale(ad.matmul(keys, q), 1.0 / np.sqrt(H))   # (k, 1)
    weights = ad.softmax(ad.reshape(scores, (1, k)), axis=-1)  # (1, k)
    out = ad.reshape(ad.matmul(weights, vals), (H,))
    if return_weights:
        return out, weights
    return out
