"""Three-sub-module satisfaction model: ASR/query match, query/reply match,
session match, fused into a single satisfaction probability."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag
from . import nn
from .autograd import Parameter, Tensor
from .data import (
    NUM_INTERVAL_BUCKETS,
    PAD_ID,
    TrainingExample,
    Turn,
    discretize_interval,
    PAD_TURN,
)


@dataclass(frozen=True)
class AbmConfig:
    embed_size: int = 32
    n_heads: int = 4
    layers_asr: int = 2
    layers_qr: int = 2
    layers_sess: int = 2
    turns: int = 5
    k_best: int = 3
    vocab_size: int = 200
    num_domains: int = 6
    num_intents: int = 4
    num_slots: int = 8
    max_slots: int = 4
    max_query_len: int = 16
    max_title_len: int = 24
    dropout_rate: float = 0.1
    interval_buckets: int = NUM_INTERVAL_BUCKETS

    def __post_init__(self):
        if self.embed_size % self.n_heads != 0:
            raise ValueError("embed_size must be divisible by n_heads")
        if min(self.layers_asr, self.layers_qr, self.layers_sess) < 1:
            raise ValueError("each sub-module needs at least one layer")
        if self.turns < 1:
            raise ValueError("turns must be >= 1")

    # derived layout sizes
    @property
    def nlu_vocab(self) -> int:
        return 1 + self.num_domains + self.num_intents + self.num_slots

    @property
    def nlu_len(self) -> int:
        return 2 + self.max_slots  # domain, intent, slot padding

    @property
    def asr_len(self) -> int:
        return (self.k_best + 2) * self.max_query_len

    @property
    def qr_len(self) -> int:
        return self.max_query_len + self.nlu_len + self.max_title_len

    @property
    def turn_len(self) -> int:
        return self.max_query_len + self.nlu_len + 2  # + interval + SEP

    @property
    def sess_len(self) -> int:
        return self.turns * self.turn_len

    @property
    def num_classes(self) -> int:
        return self.num_domains * self.num_intents

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "AbmConfig":
        return AbmConfig(**d)


def init_parameters(config: AbmConfig, seed: int, dtype=np.float32) -> dict[str, Parameter]:
    rng = np.random.default_rng(seed)
    E = config.embed_size
    params: dict[str, Parameter] = {}

    def emb(name, rows):
        params[name] = Parameter(name, (rng.standard_normal((rows, E)) * 0.02).astype(dtype))

    emb("token_emb", config.vocab_size)
    emb("nlu_emb", config.nlu_vocab)
    emb("interval_emb", config.interval_buckets)
    emb("sep_emb", 1)
    emb("asr.pos_emb", config.asr_len)
    emb("asr.seg_emb", 3)
    emb("qr.pos_emb", config.qr_len)
    emb("qr.seg_emb", 3)
    emb("sess.pos_emb", config.sess_len)
    emb("sess.turn_emb", config.turns)
    for i in range(config.layers_asr):
        nn.init_block_params(params, f"asr.block{i}", E, rng, dtype)
    for i in range(config.layers_qr):
        nn.init_block_params(params, f"qr.block{i}", E, rng, dtype)
    for i in range(config.layers_sess):
        nn.init_block_params(params, f"sess.block{i}", E, rng, dtype)
    params["fusion.w"] = Parameter("fusion.w", (rng.standard_normal((3 * E, 1)) * 0.02).astype(dtype))
    params["fusion.b"] = Parameter("fusion.b", np.zeros((1,), dtype=dtype))
    params["domint.w"] = Parameter(
        "domint.w", (rng.standard_normal((E, config.num_classes)) * 0.02).astype(dtype)
    )
    params["domint.b"] = Parameter("domint.b", np.zeros((config.num_classes,), dtype=dtype))
    return params


def encoder_param_names(config: AbmConfig, module: str) -> set[str]:
    """Names of the parameters a given sub-module encoder touches."""
    layers = {"asr": config.layers_asr, "qr": config.layers_qr, "sess": config.layers_sess}[module]
    names = {"token_emb", f"{module}.pos_emb"}
    if module in ("asr", "qr"):
        names.add(f"{module}.seg_emb")
    if module in ("qr", "sess"):
        names.add("nlu_emb")
    if module == "sess":
        names.update({"interval_emb", "sep_emb", "sess.turn_emb"})
    for i in range(layers):
        p = f"{module}.block{i}"
        names.update({f"{p}.ln1.gain", f"{p}.ln1.bias", f"{p}.ln2.gain", f"{p}.ln2.bias"})
        for part in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"):
            names.add(f"{p}.attn.{part}")
        for part in ("w1", "b1", "w2", "b2"):
            names.add(f"{p}.ffn.{part}")
    return names


# ---------------------------------------------------------------------------
# featurization: examples -> fixed-shape id/mask arrays
# ---------------------------------------------------------------------------

@dataclass
class Features:
    asr_ids: np.ndarray     # [B, asr_len]
    asr_mask: np.ndarray
    asr_seg: np.ndarray     # [asr_len], static
    qf_ids: np.ndarray      # [B, Lq]
    qf_mask: np.ndarray
    qr_nlu_ids: np.ndarray  # [B, nlu_len]
    qr_nlu_mask: np.ndarray
    title_ids: np.ndarray   # [B, Lt]
    title_mask: np.ndarray
    sess_tok_ids: np.ndarray  # [B, L, Lq]
    sess_tok_mask: np.ndarray
    sess_nlu_ids: np.ndarray  # [B, L, nlu_len]
    sess_nlu_mask: np.ndarray
    sess_int_ids: np.ndarray  # [B, L]
    turn_valid: np.ndarray    # [B, L]
    labels: np.ndarray        # [B]
    domain_intent: np.ndarray  # [B]

    @property
    def batch_size(self) -> int:
        return self.asr_ids.shape[0]


def _pad_seq(seq: Sequence[int], length: int) -> tuple[np.ndarray, np.ndarray]:
    seq = list(seq)[:length]
    ids = np.full(length, PAD_ID, dtype=np.int64)
    mask = np.zeros(length, dtype=bool)
    ids[: len(seq)] = seq
    mask[: len(seq)] = True
    return ids, mask

def encode_nlu_ids(nlu, config: AbmConfig) -> tuple[np.ndarray, np.ndarray]:
    """Map an NLU result into the shared NLU table id space (0 = pad)."""
    ids = np.zeros(config.nlu_len, dtype=np.int64)
    mask = np.zeros(config.nlu_len, dtype=bool)
    ids[0] = 1 + nlu.domain_id
    ids[1] = 1 + config.num_domains + nlu.intent_id
    mask[:2] = True
    for j, s in enumerate(nlu.slot_ids[: config.max_slots]):
        ids[2 + j] = 1 + config.num_domains + config.num_intents + s
        mask[2 + j] = True
    return ids, mask


def featurize_asr(bundle, config: AbmConfig) -> tuple[np.ndarray, np.ndarray]:
    Lq = config.max_query_len
    parts_ids, parts_mask = [], []
    i, m = _pad_seq(bundle.q_o, Lq)
    parts_ids.append(i); parts_mask.append(m)
    nbest = list(bundle.q_n)[: config.k_best]
    while len(nbest) < config.k_best:
        nbest.append((PAD_ID,))
    for q in nbest:
        i, m = _pad_seq(q, Lq)
        parts_ids.append(i); parts_mask.append(m)
    i, m = _pad_seq(bundle.q_f, Lq)
    parts_ids.append(i); parts_mask.append(m)
    return np.concatenate(parts_ids), np.concatenate(parts_mask)


def asr_segment_ids(config: AbmConfig) -> np.ndarray:
    Lq = config.max_query_len
    seg = np.empty(config.asr_len, dtype=np.int64)
    seg[:Lq] = 0
    seg[Lq: Lq * (1 + config.k_best)] = 1
    seg[Lq * (1 + config.k_best):] = 2
    return seg


def qr_segment_ids(config: AbmConfig) -> np.ndarray:
    seg = np.empty(config.qr_len, dtype=np.int64)
    seg[: config.max_query_len] = 0
    seg[config.max_query_len: config.max_query_len + config.nlu_len] = 1
    seg[config.max_query_len + config.nlu_len:] = 2
    return seg


def featurize_batch(examples: Sequence[TrainingExample], config: AbmConfig) -> Features:
    B, L = len(examples), config.turns
    Lq, Lt, Nn = config.max_query_len, config.max_title_len, config.nlu_len
    f = Features(
        asr_ids=np.zeros((B, config.asr_len), dtype=np.int64),
        asr_mask=np.zeros((B, config.asr_len), dtype=bool),
        asr_seg=asr_segment_ids(config),
        qf_ids=np.zeros((B, Lq), dtype=np.int64),
        qf_mask=np.zeros((B, Lq), dtype=bool),
        qr_nlu_ids=np.zeros((B, Nn), dtype=np.int64),
        qr_nlu_mask=np.zeros((B, Nn), dtype=bool),
        title_ids=np.zeros((B, Lt), dtype=np.int64),
        title_mask=np.zeros((B, Lt), dtype=bool),
        sess_tok_ids=np.zeros((B, L, Lq), dtype=np.int64),
        sess_tok_mask=np.zeros((B, L, Lq), dtype=bool),
        sess_nlu_ids=np.zeros((B, L, Nn), dtype=np.int64),
        sess_nlu_mask=np.zeros((B, L, Nn), dtype=bool),
        sess_int_ids=np.zeros((B, L), dtype=np.int64),
        turn_valid=np.zeros((B, L), dtype=bool),
        labels=np.zeros(B, dtype=np.float64),
        domain_intent=np.zeros(B, dtype=np.int64),
    )
    for b, ex in enumerate(examples):
        turns = list(ex.turns)[-L:]
        n_pad = L - len(turns)
        turns = [PAD_TURN] * n_pad + turns
        cur = turns[-1]
        f.asr_ids[b], f.asr_mask[b] = featurize_asr(cur.bundle, config)
        f.qf_ids[b], f.qf_mask[b] = _pad_seq(cur.bundle.q_f, Lq)
        f.qr_nlu_ids[b], f.qr_nlu_mask[b] = encode_nlu_ids(cur.nlu, config)
        f.title_ids[b], f.title_mask[b] = _pad_seq(cur.response.title, Lt)
        for i, turn in enumerate(turns):
            if i < n_pad:
                continue  # padded turn: ids 0, masks off
            f.turn_valid[b, i] = True
            f.sess_tok_ids[b, i], f.sess_tok_mask[b, i] = _pad_seq(turn.bundle.q_f, Lq)
            f.sess_nlu_ids[b, i], f.sess_nlu_mask[b, i] = encode_nlu_ids(turn.nlu, config)
            f.sess_int_ids[b, i] = discretize_interval(turn.interval_s)
        f.labels[b] = ex.label
        f.domain_intent[b] = ex.domain_intent
    return f


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

@dataclass
class ForwardTrace:
    s_e: Tensor
    o_e: Tensor
    t_q: Tensor
    e_p: Tensor
    o_p: Tensor
    t_r: Tensor
    e_s: Tensor
    o_s: Tensor
    t_s: Tensor
    sep_current: Tensor
    p: Tensor


def encode_asr_query_match(
    asr_ids: np.ndarray,
    asr_mask: np.ndarray,
    asr_seg: np.ndarray,
    params: dict,
    config: AbmConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (T_q [B,E], s_e, o_e)."""
    x = ag.embedding(params["token_emb"], asr_ids)
    x = ag.add(x, params["asr.pos_emb"])
    x = ag.add(x, ag.embedding(params["asr.seg_emb"], asr_seg))
    s_e = x
    o_e = nn.encoder_stack(
        s_e, asr_mask, params, "asr", config.layers_asr, config.n_heads,
        config.dropout_rate, rng, training,
    )
    t_q = ag.reduce_max(o_e, axis=1, mask=asr_mask[:, :, None])
    return t_q, s_e, o_e


def encode_query_reply_match(
    qf_ids, qf_mask, nlu_ids, nlu_mask, title_ids, title_mask,
    params: dict,
    config: AbmConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (T_r [B,E], e_p, o_p)."""
    eq = ag.embedding(params["token_emb"], qf_ids)
    eh = ag.embedding(params["nlu_emb"], nlu_ids)
    er = ag.embedding(params["token_emb"], title_ids)
    x = ag.concat([eq, eh, er], axis=1)
    x = ag.add(x, params["qr.pos_emb"])
    x = ag.add(x, ag.embedding(params["qr.seg_emb"], qr_segment_ids(config)))
    mask = np.concatenate([qf_mask, nlu_mask, title_mask], axis=1)
    e_p = x
    o_p = nn.encoder_stack(
        e_p, mask, params, "qr", config.layers_qr, config.n_heads,
        config.dropout_rate, rng, training,
    )
    t_r = ag.reduce_max(o_p, axis=1, mask=mask[:, :, None])
    return t_r, e_p, o_p


def encode_session(
    sess_tok_ids, sess_tok_mask, sess_nlu_ids, sess_nlu_mask,
    sess_int_ids, turn_valid,
    params: dict,
    config: AbmConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Returns (T_s [B,E], sep_current [B,E], E_s, o_s).

    Per-turn layout: [q_f tokens | NLU ids | interval | SEP], turns
    chronological; the SEP of the last (current) turn is the final position.
    """
    B, L = sess_int_ids.shape
    E = config.embed_size
    et = ag.embedding(params["token_emb"], sess_tok_ids)        # [B,L,Lq,E]
    en = ag.embedding(params["nlu_emb"], sess_nlu_ids)          # [B,L,Nn,E]
    ei = ag.reshape(ag.embedding(params["interval_emb"], sess_int_ids), (B, L, 1, E))
    es = ag.embedding(params["sep_emb"], np.zeros((B, L, 1), dtype=np.int64))
    x = ag.concat([et, en, ei, es], axis=2)                     # [B,L,P,E]
    x = ag.reshape(x, (B, L * config.turn_len, E))
    x = ag.add(x, params["sess.pos_emb"])
    turn_idx = np.repeat(np.arange(L), config.turn_len)
    x = ag.add(x, ag.embedding(params["sess.turn_emb"], turn_idx))
    # mask: token/nlu masks plus always-on interval and SEP, gated by turn validity
    ones = np.ones((B, L, 1), dtype=bool)
    mask = np.concatenate([sess_tok_mask, sess_nlu_mask, ones, ones], axis=2)
    mask = (mask & turn_valid[:, :, None]).reshape(B, L * config.turn_len)
    e_s = x
    o_s = nn.encoder_stack(
        e_s, mask, params, "sess", config.layers_sess, config.n_heads,
        config.dropout_rate, rng, training,
    )
    t_s = ag.reduce_max(o_s, axis=1, mask=mask[:, :, None])
    sep_current = ag.select_position(o_s, L * config.turn_len - 1)
    return t_s, sep_current, e_s, o_s


def fuse_and_predict(t_q: Tensor, t_r: Tensor, t_s: Tensor, params: dict) -> Tensor:
    """Satisfaction probability p in (0,1), shape [B]."""
    fused = ag.concat([t_q, t_r, t_s], axis=-1)
    logit = nn.linear(fused, params["fusion.w"], params["fusion.b"])
    return ag.sigmoid(ag.reshape(logit, (logit.shape[0],)))


def forward_batch(
    feats: Features,
    params: dict,
    config: AbmConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> ForwardTrace:
    t_q, s_e, o_e = encode_asr_query_match(
        feats.asr_ids, feats.asr_mask, feats.asr_seg, params, config, training, rng
    )
    t_r, e_p, o_p = encode_query_reply_match(
        feats.qf_ids, feats.qf_mask, feats.qr_nlu_ids, feats.qr_nlu_mask,
        feats.title_ids, feats.title_mask, params, config, training, rng,
    )
    t_s, sep_current, e_s, o_s = encode_session(
        feats.sess_tok_ids, feats.sess_tok_mask, feats.sess_nlu_ids,
        feats.sess_nlu_mask, feats.sess_int_ids, feats.turn_valid,
        params, config, training, rng,
    )
    p = fuse_and_predict(t_q, t_r, t_s, params)
    return ForwardTrace(s_e, o_e, t_q, e_p, o_p, t_r, e_s, o_s, t_s, sep_current, p)


def forward_example(
    example: TrainingExample,
    params: dict,
    config: AbmConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> ForwardTrace:
    return forward_batch(featurize_batch([example], config), params, config, training, rng)


def main_loss(p: Tensor, labels) -> Tensor:
    """Mean binary cross entropy between prediction and satisfaction label."""
    return ag.reduce_mean(ag.binary_cross_entropy(p, labels))
