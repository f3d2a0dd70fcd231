"""Auxiliary objectives: contrastive query-embedding learning with dropout
views, domain-intent classification on the session SEP vector, and the
weighted total loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from . import nn
from .autograd import Tensor
from .data import PAD_ID, TrainingExample
from .model import AbmConfig, _pad_seq


@dataclass(frozen=True)
class LossWeights:
    contrastive: float = 1e-2
    domain_intent: float = 1e-1

    def __post_init__(self):
        if self.contrastive < 0 or self.domain_intent < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class ContrastiveBatch:
    h: Tensor       # [B, E], first dropout view
    h_plus: Tensor  # [B, E], second dropout view
    temperature: float


SEGMENT_BY_KIND = {"original": 0, "nbest": 1, "final": 2}


def collect_queries(
    examples: Sequence[TrainingExample], max_queries: int | None = None
) -> list[tuple[tuple[int, ...], int]]:
    """All query sequences in a batch (original, n-best, final), deduplicated
    by token sequence so exact repeats do not poison in-batch negatives."""
    seen: set[tuple[int, ...]] = set()
    out: list[tuple[tuple[int, ...], int]] = []
    for ex in examples:
        b = ex.current.bundle
        cands = [(tuple(b.q_o), SEGMENT_BY_KIND["original"])]
        cands += [(tuple(q), SEGMENT_BY_KIND["nbest"]) for q in b.q_n]
        cands.append((tuple(b.q_f), SEGMENT_BY_KIND["final"]))
        for seq, seg in cands:
            if seq in seen:
                continue
            seen.add(seq)
            out.append((seq, seg))
    if max_queries is not None:
        out = out[:max_queries]
    return out


def encode_query_batch(
    ids: np.ndarray,
    mask: np.ndarray,
    segments: np.ndarray,
    params: dict,
    config: AbmConfig,
    training: bool,
    rng: np.random.Generator | None,
) -> Tensor:
    """Encode standalone queries through the shared ASR/query-match encoder.

    Uses exactly the named parameters of that sub-module (token table, its
    positional/segment embeddings and its attention blocks); per-query vector
    is the masked reduce-max over encoded positions.
    """
    Lq = ids.shape[1]
    x = ag.embedding(params["token_emb"], ids)
    x = ag.add(x, _pos_slice(params["asr.pos_emb"], Lq))
    x = ag.add(x, ag.embedding(params["asr.seg_emb"], segments[:, None]))
    o = nn.encoder_stack(
        x, mask, params, "asr", config.layers_asr, config.n_heads,
        config.dropout_rate, rng, training,
    )
    return ag.reduce_max(o, axis=1, mask=mask[:, :, None])


def _pos_slice(pos_param, length: int) -> Tensor:
    out = Tensor(pos_param.data[:length], (pos_param,))

    def bw(g):
        full = np.zeros_like(pos_param.data)
        full[:length] = g
        pos_param._accumulate(full)

    out._backward = bw
    return out


def contrastive_views(
    examples: Sequence[TrainingExample],
    params: dict,
    config: AbmConfig,
    rng_a: np.random.Generator,
    rng_b: np.random.Generator,
    temperature: float = 0.05,
    max_queries: int | None = 64,
) -> ContrastiveBatch:
    """Two independently-dropped-out encodings of the batch's queries."""
    queries = collect_queries(examples, max_queries)
    if not queries:
        raise ValueError("empty contrastive batch")
    Lq = config.max_query_len
    ids = np.zeros((len(queries), Lq), dtype=np.int64)
    mask = np.zeros((len(queries), Lq), dtype=bool)
    segments = np.zeros(len(queries), dtype=np.int64)
    for i, (seq, seg) in enumerate(queries):
        ids[i], mask[i] = _pad_seq(seq, Lq)
        segments[i] = seg
    h = encode_query_batch(ids, mask, segments, params, config, True, rng_a)
    h_plus = encode_query_batch(ids, mask, segments, params, config, True, rng_b)
    return ContrastiveBatch(h, h_plus, temperature)


def simcse_loss(batch: ContrastiveBatch) -> Tensor:
    """In-batch contrastive loss over cosine similarities at temperature tau."""
    if batch.temperature <= 0:
        raise ValueError("temperature must be positive")
    if (np.linalg.norm(batch.h.data, axis=-1) == 0).any() or (
        np.linalg.norm(batch.h_plus.data, axis=-1) == 0
    ).any():
        raise ValueError("zero-norm vector in contrastive batch")
    hn = ag.l2_normalize(batch.h, axis=-1)
    hpn = ag.l2_normalize(batch.h_plus, axis=-1)
    sims = ag.mul(ag.matmul(hn, ag.transpose(hpn, (1, 0))), 1.0 / batch.temperature)
    targets = np.arange(sims.shape[0])
    return ag.reduce_mean(ag.softmax_cross_entropy(sims, targets))


def domain_intent_logits(sep_current: Tensor, params: dict) -> Tensor:
    """Single dense layer over the current-turn SEP vector, no activation."""
    return nn.linear(sep_current, params["domint.w"], params["domint.b"])


def domain_intent_loss(logits: Tensor, targets) -> Tensor:
    """Mean softmax cross entropy over the joint domain-intent classes."""
    return ag.reduce_mean(ag.softmax_cross_entropy(logits, targets))


def total_loss(l_main: Tensor, l_self: Tensor | None, l_cl: Tensor | None,
               weights: LossWeights) -> Tensor:
    """L = L_main + w1 * L_self + w2 * L_cl (missing components contribute 0)."""
    total = l_main
    if l_self is not None and weights.contrastive != 0.0:
        total = ag.add(total, ag.mul(l_self, weights.contrastive))
    if l_cl is not None and weights.domain_intent != 0.0:
        total = ag.add(total, ag.mul(l_cl, weights.domain_intent))
    return total
