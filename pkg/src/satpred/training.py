"""Mini-batch Adam training with the weighted multi-task objective, plus the
four-way ablation harness (TBM2 / ABM_S / ABM_C / ABM)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag
from . import aux_tasks, model
from .autograd import Tensor
from .data import TrainingExample
from .metrics import UndefinedMetricError, evaluate_auc, evaluate_cla, slice_report
from .model import AbmConfig, featurize_batch, forward_batch, init_parameters, main_loss
from .nn import Adam, NonFiniteGradientError

ABLATIONS = ("TBM2", "ABM_S", "ABM_C", "ABM")

# rng stream tags: one purpose per child seed so skipping a path never
# shifts the randomness of another
_STREAM_SHUFFLE = 100
_STREAM_FORWARD = 1
_STREAM_VIEW_A = 2
_STREAM_VIEW_B = 3


@dataclass(frozen=True)
class TrainConfig:
    abm: AbmConfig
    lr: float = 1.2e-3
    batch_size: int = 32
    epochs: int = 5
    seed: int = 0
    w_contrastive: float = 1e-2
    w_domain_intent: float = 1e-1
    temperature: float = 0.05
    max_contrastive_queries: int = 64
    precision: str = "f32"
    ablation: str = "ABM"

    def weights(self) -> aux_tasks.LossWeights:
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}")
        w1 = self.w_contrastive if self.ablation in ("ABM_S", "ABM") else 0.0
        w2 = self.w_domain_intent if self.ablation in ("ABM_C", "ABM") else 0.0
        return aux_tasks.LossWeights(w1, w2)

    @property
    def dtype(self):
        return np.float64 if self.precision == "f64" else np.float32


@dataclass
class HistoryRow:
    step: int
    loss: float
    loss_main: float
    loss_self: float
    loss_cl: float

    def to_line(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))


@dataclass
class TrainResult:
    params: dict
    config: TrainConfig
    history: list[HistoryRow]
    valid_auc: list[float]
    best_valid_auc: Optional[float]
    aborted: bool = False


def train_step(
    params: dict,
    batch: Sequence[TrainingExample],
    tcfg: TrainConfig,
    step: int,
) -> tuple[Tensor, float, float, float]:
    """One forward/backward over a batch; returns (total, main, self, cl)."""
    cfg = tcfg.abm
    weights = tcfg.weights()
    rng_fwd = np.random.default_rng([tcfg.seed, _STREAM_FORWARD, step])
    feats = featurize_batch(batch, cfg)
    trace = forward_batch(feats, params, cfg, training=True, rng=rng_fwd)
    l_main = main_loss(trace.p, feats.labels.astype(trace.p.dtype))

    l_self = None
    if weights.contrastive > 0.0:
        views = aux_tasks.contrastive_views(
            batch, params, cfg,
            np.random.default_rng([tcfg.seed, _STREAM_VIEW_A, step]),
            np.random.default_rng([tcfg.seed, _STREAM_VIEW_B, step]),
            temperature=tcfg.temperature,
            max_queries=tcfg.max_contrastive_queries,
        )
        l_self = aux_tasks.simcse_loss(views)

    l_cl = None
    if weights.domain_intent > 0.0:
        logits = aux_tasks.domain_intent_logits(trace.sep_current, params)
        l_cl = aux_tasks.domain_intent_loss(logits, feats.domain_intent)

    total = aux_tasks.total_loss(l_main, l_self, l_cl, weights)
    return (
        total,
        l_main.item(),
        0.0 if l_self is None else l_self.item(),
        0.0 if l_cl is None else l_cl.item(),
    )


def score_examples(
    params: dict,
    config: AbmConfig,
    examples: Sequence[TrainingExample],
    batch_size: int = 64,
) -> np.ndarray:
    """Inference-mode satisfaction probabilities for a list of examples."""
    scores = []
    for start in range(0, len(examples), batch_size):
        feats = featurize_batch(examples[start: start + batch_size], config)
        trace = forward_batch(feats, params, config, training=False)
        scores.append(trace.p.data.copy())
    return np.concatenate(scores) if scores else np.zeros(0)


def _clone_params(params: dict) -> dict:
    from .autograd import Parameter

    return {n: Parameter(n, p.data.copy()) for n, p in params.items()}


def train(
    tcfg: TrainConfig,
    train_examples: Sequence[TrainingExample],
    valid_examples: Sequence[TrainingExample] = (),
    history_path: Optional[str] = None,
    target_train_auc: Optional[float] = None,
) -> TrainResult:
    """Deterministic mini-batch Adam on the weighted total loss.

    Batch order, dropout and contrastive views all come from per-step rng
    streams derived from (seed, purpose, step). Keeps the parameters of the
    best-validation-AUC epoch; aborts on a non-finite loss, returning the
    last good parameters. When ``target_train_auc`` is set, stops at the end
    of the first epoch whose training AUC reaches the target.
    """
    cfg = tcfg.abm
    params = init_parameters(cfg, tcfg.seed, dtype=tcfg.dtype)
    optimizer = Adam(params, lr=tcfg.lr)
    history: list[HistoryRow] = []
    valid_auc: list[float] = []
    best: Optional[dict] = None
    best_auc = None
    aborted = False
    n = len(train_examples)
    step = 0
    hist_fh = open(history_path, "w", encoding="utf-8") if history_path else None
    try:
        for epoch in range(tcfg.epochs):
            order = np.random.default_rng([tcfg.seed, _STREAM_SHUFFLE, epoch]).permutation(n)
            for start in range(0, n, tcfg.batch_size):
                batch = [train_examples[i] for i in order[start: start + tcfg.batch_size]]
                last_good = _clone_params(params)
                try:
                    total, lm, ls, lc = train_step(params, batch, tcfg, step)
                    if not np.isfinite(total.data):
                        raise NonFiniteGradientError("non-finite loss")
                    total.backward()
                    optimizer.step()
                except NonFiniteGradientError:
                    params = last_good
                    aborted = True
                    break
                row = HistoryRow(step, float(total.data), lm, ls, lc)
                history.append(row)
                if hist_fh:
                    hist_fh.write(row.to_line() + "\n")
                step += 1
            if aborted:
                break
            if target_train_auc is not None:
                scores = score_examples(params, cfg, train_examples)
                labels = [ex.label for ex in train_examples]
                try:
                    if evaluate_auc(scores, labels) >= target_train_auc:
                        break
                except UndefinedMetricError:
                    pass
            if valid_examples:
                scores = score_examples(params, cfg, valid_examples)
                labels = [ex.label for ex in valid_examples]
                try:
                    auc = evaluate_auc(scores, labels)
                except UndefinedMetricError:
                    auc = float("nan")
                valid_auc.append(auc)
                if best_auc is None or (auc == auc and auc >= best_auc):
                    best_auc = auc
                    best = _clone_params(params)
    finally:
        if hist_fh:
            hist_fh.close()
    final = best if best is not None else params
    return TrainResult(final, tcfg, history, valid_auc, best_auc, aborted)


def ablation_run(
    base: TrainConfig,
    splits: dict,
    precision_floor: float = 0.85,
) -> dict[str, dict]:
    """Train all four ablations from a shared seed/corpus and report each.

    Returns per-ablation dicts with the trained params, selected threshold
    and the ground-truth test MetricsReport.
    """
    from dataclasses import replace

    out: dict[str, dict] = {}
    for ablation in ABLATIONS:
        tcfg = replace(base, ablation=ablation)
        result = train(tcfg, splits["train"], splits["valid"])
        valid_scores = score_examples(result.params, tcfg.abm, splits["valid"])
        valid_labels = [ex.label for ex in splits["valid"]]
        try:
            _, theta = evaluate_cla(valid_scores, valid_labels, precision_floor)
        except UndefinedMetricError:
            theta = None
        test_scores = score_examples(result.params, tcfg.abm, splits["test"])
        report = slice_report(
            test_scores, splits["test"], theta, precision_floor, model_id=ablation
        )
        out[ablation] = {
            "result": result,
            "theta": theta,
            "report": report,
            "test_scores": test_scores,
        }
    return out


def ablation_table(reports: dict[str, dict], head_domain: int = 0) -> str:
    """Comparison table: overall / head domain / long-tail domains / rare slice."""
    lines = [f"{'model':<8}{'overall':>16}{'head':>16}{'long-tail':>16}{'rare':>16}"]

    def cell(auc, cla):
        a = "-" if auc is None else f"{auc:.3f}"
        c = "-" if cla is None else f"{cla:.3f}"
        return f"{a}/{c}"

    for name in ABLATIONS:
        if name not in reports:
            continue
        rep = reports[name]["report"]
        cells = [cell(rep.auc, rep.cla)]
        head = [r for r in rep.slices if r.name == f"domain={head_domain}"]
        cells.append(cell(head[0].auc, head[0].cla) if head else "-")
        # long-tail / rare columns come from dedicated aggregation
        cells.append(reports[name].get("longtail_cell", "-"))
        cells.append(reports[name].get("rare_cell", "-"))
        lines.append(f"{name:<8}" + "".join(f"{c:>16}" for c in cells))
    return "\n".join(lines)


def longtail_metrics(scores, examples, head_domain: int = 0,
                     precision_floor: float = 0.85) -> tuple[Optional[float], Optional[float]]:
    """AUC/CLA over ground truth restricted to non-head domains."""
    idx = [i for i, ex in enumerate(examples) if ex.slices.domain != head_domain]
    sub_scores = [scores[i] for i in idx]
    sub_labels = [examples[i].ground_truth for i in idx]
    try:
        auc = evaluate_auc(sub_scores, sub_labels)
        cla, _ = evaluate_cla(sub_scores, sub_labels, precision_floor)
    except UndefinedMetricError:
        return None, None
    return auc, cla


def rare_recall_at_theta(scores, examples, theta: Optional[float]) -> int:
    """Dissatisfied rare-slice turns recalled by the gate at threshold theta."""
    if theta is None:
        return 0
    return sum(
        1
        for s, ex in zip(scores, examples)
        if ex.slices.rare and ex.ground_truth == 0 and s <= theta
    )
