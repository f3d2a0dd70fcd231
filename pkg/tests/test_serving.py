"""Tests for staged inference: state machine safety, gate semantics and
exact equivalence with the monolithic forward."""

import numpy as np
import pytest

from satpred.corpus import GeneratorConfig, generate_split
from satpred.model import AbmConfig, init_parameters
from satpred.serving import (
    Decision,
    Stage,
    StagedState,
    StageOrderError,
    decide,
    infer_monolithic,
    infer_staged,
    stage_asr,
    stage_reply,
    stage_session,
)

CFG = AbmConfig()


@pytest.fixture(scope="module")
def setup():
    gen = GeneratorConfig(sessions_train=30, sessions_valid=1,
                          sessions_test=1, seed=9)
    examples = generate_split(gen, "train")
    params = init_parameters(CFG, 0)
    return examples, params


class TestDecide:
    def test_respond_above_threshold(self):
        d = decide(0.9, 0.78)
        assert d.kind == "Respond" and d.p == 0.9 and d.threshold == 0.78

    def test_clarify_below_threshold(self):
        assert decide(0.5, 0.78).kind == "Clarify"

    def test_boundary_clarifies(self):
        assert decide(0.78, 0.78).kind == "Clarify"

    def test_every_finite_p_decides(self):
        for p in (0.0, 0.25, 0.78, 1.0):
            assert decide(p, 0.78).kind in ("Respond", "Clarify")


class TestStateMachine:
    def test_forward_progression(self, setup):
        examples, params = setup
        state = StagedState("r1")
        assert state.stage is Stage.AWAIT_ASR
        stage_asr(state, examples[0], params, CFG)
        assert state.stage is Stage.AWAIT_SESSION
        assert state.t_q is not None
        stage_session(state, examples[0], params, CFG)
        assert state.stage is Stage.AWAIT_REPLY
        assert state.t_s is not None and state.sep_current is not None
        _, decision = stage_reply(state, examples[0], params, CFG, 0.78)
        assert state.stage is Stage.DONE
        assert isinstance(decision, Decision)

    def test_out_of_order_calls_leave_state_unchanged(self, setup):
        examples, params = setup
        state = StagedState("r2")
        with pytest.raises(StageOrderError):
            stage_session(state, examples[0], params, CFG)
        assert state.stage is Stage.AWAIT_ASR and state.t_s is None
        with pytest.raises(StageOrderError):
            stage_reply(state, examples[0], params, CFG, 0.78)
        assert state.stage is Stage.AWAIT_ASR

        stage_asr(state, examples[0], params, CFG)
        with pytest.raises(StageOrderError):
            stage_asr(state, examples[0], params, CFG)
        assert state.stage is Stage.AWAIT_SESSION

    def test_done_state_rejects_everything(self, setup):
        examples, params = setup
        state = StagedState("r3")
        stage_asr(state, examples[0], params, CFG)
        stage_session(state, examples[0], params, CFG)
        stage_reply(state, examples[0], params, CFG, 0.5)
        for op in (stage_asr, stage_session):
            with pytest.raises(StageOrderError):
                op(state, examples[0], params, CFG)
        with pytest.raises(StageOrderError):
            stage_reply(state, examples[0], params, CFG, 0.5)

    def test_repeated_requests_deterministic(self, setup):
        examples, params = setup
        d1 = infer_staged(examples[1], params, CFG, 0.78)
        d2 = infer_staged(examples[1], params, CFG, 0.78)
        assert d1 == d2


class TestEquivalence:
    def test_staged_equals_monolithic_exactly(self, setup):
        examples, params = setup
        for ex in examples[:40]:
            ps = infer_staged(ex, params, CFG, 0.78).p
            pm = infer_monolithic(ex, params, CFG, 0.78).p
            assert ps == pm  # bit-exact

    def test_decision_equality_follows(self, setup):
        examples, params = setup
        for ex in examples[:20]:
            assert infer_staged(ex, params, CFG, 0.78) == \
                infer_monolithic(ex, params, CFG, 0.78)

    def test_cached_t_q_matches_monolithic_trace(self, setup):
        from satpred.model import featurize_batch, forward_batch
        examples, params = setup
        ex = examples[0]
        state = StagedState("r")
        stage_asr(state, ex, params, CFG)
        trace = forward_batch(featurize_batch([ex], CFG), params, CFG)
        np.testing.assert_array_equal(state.t_q, trace.t_q.data)

    def test_fault_injection_detected(self, setup):
        # corrupting the cached T_q must change p, so the equivalence
        # check is a real detector and not vacuous
        examples, params = setup
        ex = examples[0]
        state = StagedState("r")
        stage_asr(state, ex, params, CFG)
        stage_session(state, ex, params, CFG)
        state.t_q = state.t_q + 0.25  # fault injection
        _, decision = stage_reply(state, ex, params, CFG, 0.78)
        p_ref = infer_monolithic(ex, params, CFG, 0.78).p
        assert decision.p != p_ref
