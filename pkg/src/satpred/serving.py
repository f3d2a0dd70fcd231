"""Staged inference: the three sub-modules run at different pipeline stages
(after ASR, after LU, after IR), cached vectors are fused at the end, and a
threshold gate decides between responding and asking for clarification.

The staged path reuses the exact sub-module code of the monolithic forward,
so both produce bit-identical probabilities."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autograd import Tensor
from .data import TrainingExample
from .model import (
    AbmConfig,
    featurize_batch,
    encode_asr_query_match,
    encode_query_reply_match,
    encode_session,
    fuse_and_predict,
    forward_batch,
)


class Stage(enum.Enum):
    AWAIT_ASR = "AwaitAsr"
    AWAIT_SESSION = "AwaitSession"
    AWAIT_REPLY = "AwaitReply"
    DONE = "Done"


class StageOrderError(RuntimeError):
    """A stage was invoked out of order; state is left unchanged."""


@dataclass(frozen=True)
class Decision:
    kind: str  # "Respond" | "Clarify"
    p: float
    threshold: float


@dataclass
class StagedState:
    request_id: str
    stage: Stage = Stage.AWAIT_ASR
    t_q: Optional[np.ndarray] = None
    t_s: Optional[np.ndarray] = None
    sep_current: Optional[np.ndarray] = None
    p: Optional[float] = None
    decision: Optional[Decision] = None


def decide(p: float, threshold: float) -> Decision:
    """Clarify iff p <= threshold (boundary clarifies)."""
    kind = "Clarify" if p <= threshold else "Respond"
    return Decision(kind, p, threshold)


def _require(state: StagedState, expected: Stage, op: str) -> None:
    if state.stage is not expected:
        raise StageOrderError(
            f"{op} called in stage {state.stage.value}; expected {expected.value}"
        )


def stage_asr(state: StagedState, example: TrainingExample,
              params: dict, config: AbmConfig) -> StagedState:
    _require(state, Stage.AWAIT_ASR, "stage_asr")
    feats = featurize_batch([example], config)
    t_q, _, _ = encode_asr_query_match(
        feats.asr_ids, feats.asr_mask, feats.asr_seg, params, config, training=False
    )
    state.t_q = t_q.data
    state.stage = Stage.AWAIT_SESSION
    return state


def stage_session(state: StagedState, example: TrainingExample,
                  params: dict, config: AbmConfig) -> StagedState:
    _require(state, Stage.AWAIT_SESSION, "stage_session")
    feats = featurize_batch([example], config)
    t_s, sep, _, _ = encode_session(
        feats.sess_tok_ids, feats.sess_tok_mask, feats.sess_nlu_ids,
        feats.sess_nlu_mask, feats.sess_int_ids, feats.turn_valid,
        params, config, training=False,
    )
    state.t_s = t_s.data
    state.sep_current = sep.data
    state.stage = Stage.AWAIT_REPLY
    return state


def stage_reply(state: StagedState, example: TrainingExample,
                params: dict, config: AbmConfig,
                threshold: float) -> tuple[StagedState, Decision]:
    _require(state, Stage.AWAIT_REPLY, "stage_reply")
    feats = featurize_batch([example], config)
    t_r, _, _ = encode_query_reply_match(
        feats.qf_ids, feats.qf_mask, feats.qr_nlu_ids, feats.qr_nlu_mask,
        feats.title_ids, feats.title_mask, params, config, training=False,
    )
    p_tensor = fuse_and_predict(Tensor(state.t_q), t_r, Tensor(state.t_s), params)
    p = float(p_tensor.data[0])
    state.p = p
    state.decision = decide(p, threshold)
    state.stage = Stage.DONE
    return state, state.decision


def infer_staged(example: TrainingExample, params: dict, config: AbmConfig,
                 threshold: float, request_id: str = "") -> Decision:
    state = StagedState(request_id or example.session_id)
    stage_asr(state, example, params, config)
    stage_session(state, example, params, config)
    _, decision = stage_reply(state, example, params, config, threshold)
    return decision


def infer_monolithic(example: TrainingExample, params: dict, config: AbmConfig,
                     threshold: float) -> Decision:
    feats = featurize_batch([example], config)
    trace = forward_batch(feats, params, config, training=False)
    return decide(float(trace.p.data[0]), threshold)
