"""Synthetic dialogue corpus generator.

Reproduces the problem structure the model is built for: a power-law domain
distribution, rare utterances from a global rare-token pool, ASR n-best
corruption, four error types, rule-based weak labels with configurable flip
noise, and a ground-truth test split.

Error plans are drawn i.i.d. per turn from the configured mix; user actions
after a dissatisfied turn (repeat / rephrase / interrupt / abandon) shape the
*content* of the following turn so that the weak-label rules R1-R3 recover
the ground truth exactly. Label flips are then the only label noise source.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .data import (
    PAD_ID,
    CandidateResponse,
    NluResult,
    QueryBundle,
    Session,
    SliceTags,
    TrainingExample,
    Turn,
    write_examples,
)

ERROR_KINDS = ("ASR", "NLU", "IR", "USER", "NONE")
DISSATISFIED_ACTIONS = ("repeat", "rephrase", "interrupt", "abandon")

SPLIT_IDS = {"train": 0, "valid": 1, "test": 2}

FOLLOWUP_INTERVAL = (2.0, 25.0)   # seconds, under the 30 s rule gate
NORMAL_INTERVAL = (35.0, 600.0)   # seconds, above the gate
ASR_ERROR_NOISE_FLOOR = 0.4       # forced corruption rate for ASR-error turns


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    num_domains: int = 6
    num_intents: int = 4
    zipf_alpha: float = 1.0
    vocab_size: int = 200
    rare_token_pool_size: int = 40
    asr_noise_rate: float = 0.15
    error_type_mix: dict = field(
        default_factory=lambda: {
            "NONE": 0.55, "ASR": 0.207, "NLU": 0.054, "IR": 0.1035, "USER": 0.0855
        }
    )
    weak_label_flip_rate: float = 0.1
    sessions_train: int = 200
    sessions_valid: int = 60
    sessions_test: int = 200
    seed: int = 0
    k_best: int = 3
    rare_rate: float = 0.2
    max_query_len: int = 16
    max_title_len: int = 24
    max_gen_query_len: int = 8
    num_slots: int = 8
    max_slots: int = 4
    min_turns: int = 2
    max_turns: int = 6
    window_turns: int = 5
    rewrite_revert_fraction: float = 1.0

    def validate(self) -> None:
        if self.zipf_alpha <= 0:
            raise ConfigError("zipf_alpha must be > 0")
        if self.num_domains < 2:
            raise ConfigError("need at least 2 domains")
        if abs(sum(self.error_type_mix.values()) - 1.0) > 1e-9:
            raise ConfigError("error_type_mix must sum to 1")
        if set(self.error_type_mix) - set(ERROR_KINDS):
            raise ConfigError(f"unknown error types: {set(self.error_type_mix) - set(ERROR_KINDS)}")
        for name in ("asr_noise_rate", "weak_label_flip_rate", "rare_rate",
                     "rewrite_revert_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.k_best < 1:
            raise ConfigError("k_best must be >= 1")
        if self.max_gen_query_len > self.max_query_len or self.max_gen_query_len < 2:
            raise ConfigError("max_gen_query_len must be in [2, max_query_len]")
        if self.vocab_size - 3 - self.rare_token_pool_size < 4 * self.num_domains:
            raise ConfigError("vocab too small for per-domain pools")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "GeneratorConfig":
        return GeneratorConfig(**d)


@dataclass(frozen=True)
class ErrorPlan:
    error_type: str
    affected_turn: int
    rare_utterance: bool


class VocabPools:
    """Partition of the token id space: per-domain common pools plus a global
    rare pool. Reserved ids 0..2 are excluded."""

    def __init__(self, config: GeneratorConfig):
        first = 3
        n_rare = config.rare_token_pool_size
        self.rare_pool = np.arange(first, first + n_rare)
        rest = np.arange(first + n_rare, config.vocab_size)
        self.domain_pools = np.array_split(rest, config.num_domains)


def zipf_probs(alpha: float, num_domains: int) -> np.ndarray:
    if alpha <= 0:
        raise ConfigError("zipf exponent must be > 0")
    ranks = np.arange(1, num_domains + 1, dtype=np.float64)
    w = ranks ** (-alpha)
    return w / w.sum()


def sample_domain(rng: np.random.Generator, alpha: float, num_domains: int) -> int:
    """Zipf-distributed domain id; id 0 is the head ('media-like') domain."""
    if num_domains < 2:
        raise ConfigError("need at least 2 domains")
    return int(rng.choice(num_domains, p=zipf_probs(alpha, num_domains)))


def sample_utterance(
    rng: np.random.Generator,
    domain_id: int,
    rare: bool,
    pools: VocabPools,
    config: GeneratorConfig,
) -> tuple[list[int], int]:
    """Token sequence plus a true intent; rare utterances draw at least half
    their tokens from the global rare pool."""
    n = int(rng.integers(2, config.max_gen_query_len + 1))
    dp = pools.domain_pools[domain_id]
    tokens = rng.choice(dp, size=n).tolist()
    if rare:
        n_rare = math.ceil(n / 2)
        positions = rng.choice(n, size=n_rare, replace=False)
        rare_toks = rng.choice(pools.rare_pool, size=n_rare)
        for pos, tok in zip(positions, rare_toks):
            tokens[pos] = int(tok)
    intent = int(rng.integers(config.num_intents))
    return [int(t) for t in tokens], intent


def _ambiguous_utterance(rng, domain_id, pools, config) -> tuple[list[int], int]:
    """Mixed-domain utterance used for USER-error turns."""
    n = int(rng.integers(2, config.max_gen_query_len + 1))
    other = int(rng.integers(len(pools.domain_pools) - 1))
    if other >= domain_id:
        other += 1
    half = n // 2
    toks = rng.choice(pools.domain_pools[domain_id], size=n - half).tolist()
    toks += rng.choice(pools.domain_pools[other], size=half).tolist()
    intent = int(rng.integers(config.num_intents))
    return [int(t) for t in toks], intent


def _substitute(rng: np.random.Generator, token: int, vocab_size: int) -> int:
    """A uniformly random non-reserved token different from `token`."""
    r = int(rng.integers(vocab_size - 4))
    cand = 3 + r
    if cand >= token >= 3:
        cand += 1
    return cand


def corrupt_asr(
    tokens,
    noise_rate: float,
    k_best: int,
    rng: np.random.Generator,
    vocab_size: int,
    revert_fraction: float = 0.0,
) -> QueryBundle:
    """ASR decoding simulation: per-position substitutions, K independent
    n-best hypotheses sorted by distance to q_o, and a rewrite analog that
    reverts a fraction of the substitutions in q_f."""
    if k_best < 1:
        raise ConfigError("k_best must be >= 1")
    tokens = list(tokens)

    def corrupt_once():
        out = list(tokens)
        subs = []
        for i in range(len(out)):
            if rng.random() < noise_rate:
                out[i] = _substitute(rng, out[i], vocab_size)
                subs.append(i)
        return out, subs

    q_o, sub_positions = corrupt_once()
    hyps = [corrupt_once()[0] for _ in range(k_best)]
    hyps.sort(key=lambda h: sum(a != b for a, b in zip(h, q_o)))
    q_f = list(q_o)
    n_rev = int(round(revert_fraction * len(sub_positions)))
    if n_rev:
        for pos in rng.choice(len(sub_positions), size=n_rev, replace=False):
            i = sub_positions[int(pos)]
            q_f[i] = tokens[i]
    return QueryBundle.make(q_o, hyps, q_f)


def _force_corrupt(clean, rng, config: GeneratorConfig) -> QueryBundle:
    """Corruption for ASR-error turns: q_o guaranteed to differ from the
    clean utterance and the rewrite does not recover it."""
    rate = max(config.asr_noise_rate, ASR_ERROR_NOISE_FLOOR)
    for _ in range(16):
        b = corrupt_asr(clean, rate, config.k_best, rng, config.vocab_size, 0.0)
        if list(b.q_o) != list(clean):
            return b
    # force one substitution as a last resort
    q_o = list(clean)
    i = int(rng.integers(len(q_o)))
    q_o[i] = _substitute(rng, q_o[i], config.vocab_size)
    return QueryBundle.make(q_o, [list(q_o)] * config.k_best, q_o)


def simulate_turn_outcome(
    error_plan: ErrorPlan,
    rng: np.random.Generator,
    viable_actions: tuple[str, ...] = DISSATISFIED_ACTIONS,
) -> tuple[int, str]:
    """(ground_truth_satisfied, user_action) for a turn under a given plan."""
    if error_plan.error_type == "NONE":
        return 1, "play_through"
    action = str(rng.choice(list(viable_actions)))
    return 0, action


def weak_label_rule(turn: Turn, next_turn: Turn | None) -> int:
    """Rule-based weak satisfaction label, before flip noise.

    R1: the next turn repeats the identical final query within 30 s.
    R2: the user interrupted or abandoned.
    R3: the next turn re-asks the same domain-intent within 30 s.
    """
    if turn.user_action in ("interrupt", "abandon"):
        return 0
    if next_turn is not None and next_turn.interval_s < 30.0:
        if next_turn.bundle.q_f == turn.bundle.q_f:
            return 0
        if (next_turn.nlu.domain_id, next_turn.nlu.intent_id) == (
            turn.nlu.domain_id,
            turn.nlu.intent_id,
        ):
            return 0
    return 1


def weak_label(turn: Turn, next_turn: Turn | None, flip_rate: float,
               rng: np.random.Generator) -> int:
    label = weak_label_rule(turn, next_turn)
    if flip_rate > 0 and rng.random() < flip_rate:
        label = 1 - label
    return label


# ---------------------------------------------------------------------------
# session simulation
# ---------------------------------------------------------------------------

def _anchor_tokens(dp: np.ndarray, intent: int) -> list[int]:
    return [int(dp[(intent * 2) % len(dp)]), int(dp[(intent * 2 + 1) % len(dp)])]


def _matched_title(rng, pools, domain, intent, echo, config) -> list[int]:
    dp = pools.domain_pools[domain]
    title = _anchor_tokens(dp, intent) + [int(t) for t in echo[:2]]
    title += [int(t) for t in rng.choice(dp, size=2)]
    return title[: config.max_title_len]


def _mismatched_title(rng, pools, domain, avoid, config) -> list[int]:
    dp = pools.domain_pools[domain]
    avoid = set(avoid)
    cand = [int(t) for t in dp if int(t) not in avoid]
    if len(cand) < 4:
        cand = [int(t) for t in dp]
    idx = rng.choice(len(cand), size=4, replace=True)
    return [cand[int(i)] for i in idx][: config.max_title_len]


def _wrong_prediction(rng, domain, intent, config) -> tuple[int, int]:
    if rng.random() < 0.5 and config.num_intents > 1:
        wrong_i = int(rng.integers(config.num_intents - 1))
        if wrong_i >= intent:
            wrong_i += 1
        return domain, wrong_i
    wrong_d = int(rng.integers(config.num_domains - 1))
    if wrong_d >= domain:
        wrong_d += 1
    return wrong_d, int(rng.integers(config.num_intents))


@dataclass
class _TurnState:
    turn: Turn
    plan: ErrorPlan
    clean: list[int]
    intent: int
    ground_truth: int


def _viable_actions(plan: str, next_plan: str | None) -> tuple[str, ...]:
    actions = ["interrupt", "abandon"]
    if next_plan is not None:
        if next_plan != "ASR" or plan == "ASR":
            actions.append("repeat")
        if plan in ("IR", "USER") and next_plan != "NLU":
            actions.append("rephrase")
    return tuple(actions)


def generate_session(
    config: GeneratorConfig,
    pools: VocabPools,
    session_id: str,
    rng: np.random.Generator,
) -> tuple[Session, list[_TurnState], int]:
    domain = sample_domain(rng, config.zipf_alpha, config.num_domains)
    n_turns = int(rng.integers(config.min_turns, config.max_turns + 1))
    kinds = list(config.error_type_mix)
    probs = [config.error_type_mix[k] for k in kinds]
    plans = [str(rng.choice(kinds, p=probs)) for _ in range(n_turns)]
    rare_flags = [bool(rng.random() < config.rare_rate) for _ in range(n_turns)]

    states: list[_TurnState] = []
    pending_action: str | None = None  # action of the previous turn if dissatisfied
    for i in range(n_turns):
        plan_kind = plans[i]
        rare = rare_flags[i]
        prev = states[-1] if states else None

        if pending_action == "repeat":
            clean, intent = prev.clean, prev.intent
            bundle = prev.turn.bundle
            rare = prev.plan.rare_utterance
        else:
            if pending_action == "rephrase":
                clean, _ = sample_utterance(rng, domain, rare, pools, config)
                while clean == prev.clean:
                    clean, _ = sample_utterance(rng, domain, rare, pools, config)
                intent = prev.intent
            elif plan_kind == "USER":
                clean, intent = _ambiguous_utterance(rng, domain, pools, config)
            else:
                clean, intent = sample_utterance(rng, domain, rare, pools, config)
            if plan_kind == "ASR":
                bundle = _force_corrupt(clean, rng, config)
            else:
                bundle = corrupt_asr(
                    clean, config.asr_noise_rate, config.k_best, rng,
                    config.vocab_size, config.rewrite_revert_fraction,
                )

        # system prediction of domain-intent
        if plan_kind == "NLU":
            pred_d, pred_i = _wrong_prediction(rng, domain, intent, config)
        elif plan_kind == "ASR":
            if pending_action == "rephrase":
                pred_d, pred_i = prev.turn.nlu.domain_id, prev.turn.nlu.intent_id
            else:
                pred_d = int(rng.integers(config.num_domains))
                pred_i = int(rng.integers(config.num_intents))
        else:
            pred_d, pred_i = domain, intent

        n_slots = int(rng.integers(0, config.max_slots + 1))
        slots = tuple(int(s) for s in rng.integers(0, config.num_slots, size=n_slots))

        if plan_kind == "IR":
            title = _mismatched_title(rng, pools, pred_d, bundle.q_f, config)
        elif plan_kind == "NLU":
            title = _matched_title(rng, pools, pred_d, pred_i, [], config)
        elif plan_kind == "NONE":
            title = _matched_title(rng, pools, pred_d, pred_i, clean, config)
        else:  # ASR, USER
            title = _matched_title(rng, pools, pred_d, pred_i, bundle.q_f, config)

        if i == 0:
            interval = 0.0
        elif pending_action in ("repeat", "rephrase"):
            interval = float(rng.uniform(*FOLLOWUP_INTERVAL))
        else:
            interval = float(rng.uniform(*NORMAL_INTERVAL))

        plan = ErrorPlan(plan_kind, i, rare)
        next_plan = plans[i + 1] if i + 1 < n_turns else None
        gt, action = simulate_turn_outcome(
            plan, rng, _viable_actions(plan_kind, next_plan)
        )
        turn = Turn(
            bundle=bundle,
            nlu=NluResult(pred_d, pred_i, slots),
            response=CandidateResponse(tuple(title)),
            interval_s=round(interval, 3),
            user_action=action,
        )
        states.append(_TurnState(turn, plan, clean, intent, gt))
        pending_action = action if action in ("repeat", "rephrase") else None

    session = Session(session_id, tuple(s.turn for s in states), n_turns - 1)
    return session, states, domain


def session_examples(
    config: GeneratorConfig,
    session: Session,
    states: list[_TurnState],
    domain: int,
    flip_rng: np.random.Generator,
    with_ground_truth: bool,
) -> list[TrainingExample]:
    examples = []
    for i, st in enumerate(states):
        next_turn = states[i + 1].turn if i + 1 < len(states) else None
        label = weak_label(st.turn, next_turn, config.weak_label_flip_rate, flip_rng)
        window = session.turns[max(0, i + 1 - config.window_turns): i + 1]
        d = st.turn.nlu.domain_id * config.num_intents + st.turn.nlu.intent_id
        examples.append(
            TrainingExample(
                session_id=session.session_id,
                turns=window,
                label=label,
                domain_intent=d,
                slices=SliceTags(st.plan.error_type, st.plan.rare_utterance, domain),
                ground_truth=st.ground_truth if with_ground_truth else None,
            )
        )
    return examples


def generate_split(config: GeneratorConfig, split: str) -> list[TrainingExample]:
    config.validate()
    pools = VocabPools(config)
    split_id = SPLIT_IDS[split]
    n_sessions = {
        "train": config.sessions_train,
        "valid": config.sessions_valid,
        "test": config.sessions_test,
    }[split]
    out: list[TrainingExample] = []
    for s in range(n_sessions):
        rng = np.random.default_rng([config.seed, split_id, s])
        flip_rng = np.random.default_rng([config.seed, split_id, s, 7])
        sid = f"{split}-{s:06d}"
        session, states, domain = generate_session(config, pools, sid, rng)
        out.extend(
            session_examples(config, session, states, domain, flip_rng,
                             with_ground_truth=(split == "test"))
        )
    return out


def generate_corpus(config: GeneratorConfig) -> dict[str, list[TrainingExample]]:
    """Deterministic (config, seed) -> {train, valid, test} example lists."""
    return {split: generate_split(config, split) for split in ("train", "valid", "test")}


def corpus_stats(examples) -> dict:
    """Exact summary counts used by reports and acceptance checks."""
    stats = {
        "n_examples": 0,
        "n_sessions": 0,
        "domain_session_counts": {},
        "domain_example_counts": {},
        "error_counts": {k: 0 for k in ERROR_KINDS},
        "rare_fraction": 0.0,
        "label_mean": 0.0,
        "ground_truth_mean": None,
    }
    session_domains: dict[str, int] = {}
    n_rare = 0
    label_sum = 0
    gt_sum, gt_n = 0, 0
    for ex in examples:
        stats["n_examples"] += 1
        session_domains[ex.session_id] = ex.slices.domain
        dom = str(ex.slices.domain)
        stats["domain_example_counts"][dom] = stats["domain_example_counts"].get(dom, 0) + 1
        stats["error_counts"][ex.slices.error_type] += 1
        n_rare += ex.slices.rare
        label_sum += ex.label
        if ex.ground_truth is not None:
            gt_sum += ex.ground_truth
            gt_n += 1
    stats["n_sessions"] = len(session_domains)
    for dom in session_domains.values():
        stats["domain_session_counts"][str(dom)] = (
            stats["domain_session_counts"].get(str(dom), 0) + 1
        )
    if stats["n_examples"]:
        stats["rare_fraction"] = n_rare / stats["n_examples"]
        stats["label_mean"] = label_sum / stats["n_examples"]
    if gt_n:
        stats["ground_truth_mean"] = gt_sum / gt_n
    return stats


def write_corpus(config: GeneratorConfig, out_dir: str) -> dict[str, list[TrainingExample]]:
    """Write train/valid/test files, per-split stats and a corpus meta file."""
    os.makedirs(out_dir, exist_ok=True)
    splits = generate_corpus(config)
    for split, examples in splits.items():
        write_examples(os.path.join(out_dir, f"{split}.jsonl"), examples)
        with open(os.path.join(out_dir, f"{split}.stats.json"), "w") as fh:
            json.dump(corpus_stats(examples), fh, indent=2, sort_keys=True)
    meta = {
        "generator": config.to_dict(),
        "vocab_size": config.vocab_size,
        "num_domains": config.num_domains,
        "num_intents": config.num_intents,
        "num_slots": config.num_slots,
        "max_slots": config.max_slots,
        "k_best": config.k_best,
        "max_query_len": config.max_query_len,
        "max_title_len": config.max_title_len,
        "window_turns": config.window_turns,
    }
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return splits
