"""Core data types for dialogue sessions, queries, NLU results and labels.

Everything here is plain data: immutable-after-construction records plus the
tokenization / interval-bucketing / windowing helpers shared by the corpus
generator, the model featurizer and the serving path.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

PAD_ID = 0
UNK_ID = 1
SEP_ID = 2
RESERVED_IDS = (PAD_ID, UNK_ID, SEP_ID)

NUM_INTERVAL_BUCKETS = 11  # buckets 0..10, log2 capped

USER_ACTIONS = ("play_through", "repeat", "rephrase", "interrupt", "abandon", "none")
ERROR_TYPES = ("ASR", "NLU", "IR", "USER", "NONE")


class EmptyQueryError(ValueError):
    """Raised when a blank string is tokenized."""


@dataclass(frozen=True)
class Limits:
    """Structural bounds used by validation and featurization."""

    vocab_size: int
    num_domains: int
    num_intents: int
    num_slots: int = 8
    max_query_len: int = 16
    max_title_len: int = 24
    max_slots: int = 4
    max_session_len: int = 10


class Vocab:
    """Dense 0-based token vocabulary with reserved PAD/UNK/SEP ids."""

    RESERVED = ("<pad>", "<unk>", "<sep>")

    def __init__(self, tokens: Sequence[str] = ()):
        self._id_to_token: list[str] = list(self.RESERVED)
        self._token_to_id: dict[str, int] = {t: i for i, t in enumerate(self._id_to_token)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token in self._token_to_id:
            return self._token_to_id[token]
        idx = len(self._id_to_token)
        self._id_to_token.append(token)
        self._token_to_id[token] = idx
        return idx

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self._id_to_token[idx]

    def __len__(self) -> int:
        return len(self._id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id


def tokenize(text: str, vocab: Vocab) -> list[int]:
    """Whitespace tokenization into vocab ids; unknown words map to UNK."""
    parts = text.split()
    if not parts:
        raise EmptyQueryError("blank input cannot be tokenized into a query")
    return [vocab.id_of(p) for p in parts]


def discretize_interval(seconds: float) -> int:
    """Base-2 log bucket of a nonnegative interval, capped at bucket 10."""
    if seconds < 0:
        raise ValueError(f"interval must be nonnegative, got {seconds}")
    return min(int(math.floor(math.log2(1.0 + seconds))), NUM_INTERVAL_BUCKETS - 1)


@dataclass(frozen=True)
class QueryBundle:
    """Original ASR query, its n-best alternatives, and the rewritten query."""

    q_o: tuple[int, ...]
    q_n: tuple[tuple[int, ...], ...]
    q_f: tuple[int, ...]

    @staticmethod
    def make(q_o, q_n, q_f) -> "QueryBundle":
        return QueryBundle(tuple(q_o), tuple(tuple(q) for q in q_n), tuple(q_f))


@dataclass(frozen=True)
class NluResult:
    domain_id: int
    intent_id: int
    slot_ids: tuple[int, ...] = ()


@dataclass(frozen=True)
class CandidateResponse:
    title: tuple[int, ...]
    voice_response: tuple[int, ...] = ()


@dataclass(frozen=True)
class Turn:
    bundle: QueryBundle
    nlu: NluResult
    response: CandidateResponse
    interval_s: float
    user_action: str = "none"


@dataclass(frozen=True)
class Session:
    session_id: str
    turns: tuple[Turn, ...]
    current_index: int


@dataclass(frozen=True)
class SliceTags:
    error_type: str
    rare: bool
    domain: int


@dataclass(frozen=True)
class TrainingExample:
    """One prediction instance: a turn window ending at the current turn.

    `turns` holds only real turns (oldest -> current, at most the window
    length); padding to a fixed window is applied at featurization time.
    """

    session_id: str
    turns: tuple[Turn, ...]
    label: int
    domain_intent: int
    slices: SliceTags
    ground_truth: Optional[int] = None

    @property
    def current(self) -> Turn:
        return self.turns[-1]


PAD_TURN = Turn(
    bundle=QueryBundle((PAD_ID,), ((PAD_ID,),), (PAD_ID,)),
    nlu=NluResult(0, 0, ()),
    response=CandidateResponse((PAD_ID,)),
    interval_s=0.0,
    user_action="none",
)


def window(session: Session, length: int) -> tuple[list[Turn], list[bool]]:
    """Last `length` turns ending at current_index, left-padded with PAD_TURN.

    Returns (turns, padded) where padded[i] marks synthetic PAD entries.
    Order is oldest -> current.
    """
    if length < 1:
        raise ValueError("window length must be >= 1")
    end = session.current_index + 1
    start = max(0, end - length)
    real = list(session.turns[start:end])
    n_pad = length - len(real)
    turns = [PAD_TURN] * n_pad + real
    padded = [True] * n_pad + [False] * len(real)
    return turns, padded


def validate_session(session: Session, limits: Limits) -> list[str]:
    """Collect every invariant violation; an empty list means ok."""
    v: list[str] = []
    if not 1 <= len(session.turns) <= limits.max_session_len:
        v.append(f"session length {len(session.turns)} outside [1, {limits.max_session_len}]")
    if not 0 <= session.current_index < max(len(session.turns), 1):
        v.append(f"current_index {session.current_index} out of range")
    for i, turn in enumerate(session.turns):
        if turn.interval_s < 0:
            v.append(f"turn {i}: negative interval")
        if i == 0 and turn.interval_s != 0:
            v.append("turn 0: first turn must have interval_s = 0")
        b = turn.bundle
        if len(b.q_n) < 1:
            v.append(f"turn {i}: n-best list empty")
        for name, seq in (("q_o", b.q_o), ("q_f", b.q_f)) + tuple(
            (f"q_n[{j}]", q) for j, q in enumerate(b.q_n)
        ):
            if len(seq) == 0:
                v.append(f"turn {i}: {name} empty")
            if len(seq) > limits.max_query_len:
                v.append(f"turn {i}: {name} longer than {limits.max_query_len}")
            if any(t < 0 or t >= limits.vocab_size for t in seq):
                v.append(f"turn {i}: {name} id out of range")
        if not 0 <= turn.nlu.domain_id < limits.num_domains:
            v.append(f"turn {i}: domain id out of range")
        if not 0 <= turn.nlu.intent_id < limits.num_intents:
            v.append(f"turn {i}: intent id out of range")
        if len(turn.nlu.slot_ids) > limits.max_slots:
            v.append(f"turn {i}: too many slots")
        if any(s < 0 or s >= limits.num_slots for s in turn.nlu.slot_ids):
            v.append(f"turn {i}: slot id out of range")
        if len(turn.response.title) == 0:
            v.append(f"turn {i}: empty title")
        if len(turn.response.title) > limits.max_title_len:
            v.append(f"turn {i}: title longer than {limits.max_title_len}")
        if turn.user_action not in USER_ACTIONS:
            v.append(f"turn {i}: unknown action {turn.user_action!r}")
    return v


# ---------------------------------------------------------------------------
# line-delimited record serialization (one example window per line)
# ---------------------------------------------------------------------------

def turn_to_record(turn: Turn) -> dict:
    return {
        "q_o": list(turn.bundle.q_o),
        "q_n": [list(q) for q in turn.bundle.q_n],
        "q_f": list(turn.bundle.q_f),
        "domain": turn.nlu.domain_id,
        "intent": turn.nlu.intent_id,
        "slots": list(turn.nlu.slot_ids),
        "title": list(turn.response.title),
        "interval_s": turn.interval_s,
        "action": turn.user_action,
    }


def turn_from_record(rec: dict) -> Turn:
    return Turn(
        bundle=QueryBundle.make(rec["q_o"], rec["q_n"], rec["q_f"]),
        nlu=NluResult(rec["domain"], rec["intent"], tuple(rec.get("slots", ()))),
        response=CandidateResponse(tuple(rec["title"])),
        interval_s=float(rec["interval_s"]),
        user_action=rec.get("action", "none"),
    )


def example_to_record(ex: TrainingExample) -> dict:
    return {
        "session_id": ex.session_id,
        "turns": [turn_to_record(t) for t in ex.turns],
        "label": ex.label,
        "domain_intent": ex.domain_intent,
        "slices": {
            "error_type": ex.slices.error_type,
            "rare": ex.slices.rare,
            "domain": ex.slices.domain,
        },
        "ground_truth": ex.ground_truth,
    }


def example_from_record(rec: dict) -> TrainingExample:
    sl = rec["slices"]
    gt = rec.get("ground_truth")
    return TrainingExample(
        session_id=rec["session_id"],
        turns=tuple(turn_from_record(t) for t in rec["turns"]),
        label=int(rec["label"]),
        domain_intent=int(rec["domain_intent"]),
        slices=SliceTags(sl["error_type"], bool(sl["rare"]), int(sl.get("domain", 0))),
        ground_truth=None if gt is None else int(gt),
    )


def example_to_line(ex: TrainingExample) -> str:
    return json.dumps(example_to_record(ex), sort_keys=True, separators=(",", ":"))


def example_from_line(line: str) -> TrainingExample:
    return example_from_record(json.loads(line))


def write_examples(path, examples) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(example_to_line(ex) + "\n")


def read_examples(path) -> list[TrainingExample]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(example_from_line(line))
    return out


def session_to_record(session: Session) -> dict:
    return {
        "session_id": session.session_id,
        "turns": [turn_to_record(t) for t in session.turns],
        "current_index": session.current_index,
    }


def session_from_record(rec: dict) -> Session:
    return Session(
        session_id=rec["session_id"],
        turns=tuple(turn_from_record(t) for t in rec["turns"]),
        current_index=int(rec["current_index"]),
    )
