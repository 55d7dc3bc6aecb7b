"""Ablation drivers.

Each driver runs one family of pruning variants on a shared seeded setup and
returns plain row dicts, ready for ``write_csv``. A variant is: prune (with
or without merging), optionally recover with a short fine-tune, then
evaluate on the held-out split.
"""

import dataclasses
import logging
from dataclasses import dataclass
from typing import Iterable

from igprune.analysis.metrics import EvalReport, RankingSnapshot, default_topk, evaluate, rank_correlation, topk_overlap
from igprune.analysis.sensitivity import ranking_from_igia, run_sensitivity
from igprune.importance.igia import IgiaMatrix, compute_igia
from igprune.importance.plan import PrunePlan, make_prune_plan, pruned_ratio
from igprune.importance.scoring import LayerScores, layer_scores, rank_layers
from igprune.merge.layer_merge import MergeConfig, MergeStrategy
from igprune.model.surgery import block_parameter_counts, reset_adapters
from igprune.model.transformer import ModelState
from igprune.prune import apply_prune
from igprune.train.datasets import Dataset, subsample
from igprune.train.trainer import TrainConfig, run_finetune

__all__ = [
    "EVAL_COLUMNS",
    "Experiment",
    "prepare_experiment",
    "evaluate_plan",
    "sweep_sparsity",
    "sweep_merge_count",
    "compare_strategies",
    "importance_direction",
    "data_size_stability",
    "step_count_ablation",
]

log = logging.getLogger(__name__)

EVAL_COLUMNS = ("loss", "perplexity", "accuracy", "ratio")


@dataclass
class Experiment:
    """
    Shared state of an ablation family.

    Attributes
    ----------
        model (ModelState): Model being pruned.
        data (Dataset): Training and held-out data.
        train (TrainConfig): Probe settings (``probe_steps``) and the recovery
            fine-tune budget (``total_steps``, ``mode``).
        igia (dict[str, IgiaMatrix]): IGIA of ``model`` on ``data``.
        scores (LayerScores): Layer scores derived from ``igia``.
        recover_steps (int): Fine-tune steps after pruning; 0 evaluates the pruned model as is.
    """

    model: ModelState
    data: Dataset
    train: TrainConfig
    igia: dict[str, IgiaMatrix]
    scores: LayerScores
    recover_steps: int = 0

    def plan(self, prune_count: int, merge_count: int = 0) -> PrunePlan:
        return make_prune_plan(
            self.scores, prune_count, merge_count, layer_sizes=block_parameter_counts(self.model)
        )


def prepare_experiment(
    model: ModelState,
    data: Dataset,
    train: TrainConfig,
    recover_steps: int = 0,
    *,
    progress: bool = False,
) -> Experiment:
    igia = compute_igia(model, data, dataclasses.replace(train, mode="lora"), progress=progress)
    return Experiment(model, data, train, igia, layer_scores(igia, model.layer_ids), recover_steps)


def _recover(exp: Experiment, model: ModelState) -> ModelState:
    if exp.recover_steps == 0:
        return model
    cfg = dataclasses.replace(exp.train, total_steps=exp.recover_steps, probe_steps=0)
    if cfg.mode == "lora":
        model = reset_adapters(model, cfg.seed)
    return run_finetune(model, exp.data, cfg).model


def _row(report: EvalReport, ratio: float, **keys) -> dict:
    return {**keys, "loss": report.loss, "perplexity": report.perplexity, "accuracy": report.accuracy, "ratio": ratio}


def evaluate_plan(exp: Experiment, plan: PrunePlan, merge_cfg: MergeConfig | None = None) -> EvalReport:
    pruned = apply_prune(exp.model, plan, exp.igia, merge_cfg)
    return evaluate(_recover(exp, pruned), exp.data)


def sweep_sparsity(
    exp: Experiment,
    prune_count: int,
    merge_count: int,
    sparsities: Iterable[float] = (0.5, 0.6, 0.7, 0.8, 0.9),
) -> list[dict]:
    plan = exp.plan(prune_count, merge_count)
    rows = []
    for p in sparsities:
        report = evaluate_plan(exp, plan, MergeConfig(sparsity_p=p))
        rows.append(_row(report, plan.achieved_ratio, sparsity_p=p))
    return rows


def sweep_merge_count(
    exp: Experiment,
    prune_count: int,
    merge_counts: Iterable[int],
    sparsity_p: float = 0.8,
) -> list[dict]:
    rows = []
    for m in merge_counts:
        plan = exp.plan(prune_count, m)
        report = evaluate_plan(exp, plan, MergeConfig(sparsity_p=sparsity_p))
        rows.append(_row(report, plan.achieved_ratio, merge_count=m))
    return rows


def compare_strategies(
    exp: Experiment,
    prune_count: int,
    merge_count: int,
    strategies: Iterable[MergeStrategy] = tuple(MergeStrategy),
    sparsity_p: float = 0.8,
) -> list[dict]:
    """One row per merge strategy plus a ``none`` row that discards every pruned layer."""
    discard = exp.plan(prune_count, 0)
    rows = [_row(evaluate_plan(exp, discard), discard.achieved_ratio, strategy="none")]
    plan = exp.plan(prune_count, merge_count)
    for strategy in strategies:
        cfg = MergeConfig(sparsity_p=sparsity_p, strategy=strategy)
        rows.append(_row(evaluate_plan(exp, plan, cfg), plan.achieved_ratio, strategy=cfg.strategy.value))
    return rows


def _single_layer_plan(exp: Experiment, layer_id: int) -> PrunePlan:
    sizes = block_parameter_counts(exp.model)
    retained = tuple(j for j in exp.model.layer_ids if j != layer_id)
    return PrunePlan(retained, (layer_id,), achieved_ratio=pruned_ratio(sizes, [layer_id]), scores=exp.scores)


def importance_direction(exp: Experiment) -> list[dict]:
    """Held-out metrics after dropping the single lowest- and the single highest-scoring layer."""
    ranking = rank_layers(exp.scores)
    rows = []
    for which, layer_id in (("lowest", ranking[-1]), ("highest", ranking[0])):
        plan = _single_layer_plan(exp, layer_id)
        rows.append(_row(evaluate_plan(exp, plan), plan.achieved_ratio, pruned=which, layer=layer_id))
    return rows


def data_size_stability(
    model: ModelState,
    data: Dataset,
    train: TrainConfig,
    fractions: Iterable[float] = (0.01, 0.1, 0.3, 1.0),
    *,
    prune_count: int = 1,
    merge_count: int = 0,
    recover_steps: int = 0,
    k: int | None = None,
) -> list[dict]:
    """
    Probe on random shares of the training split and compare each ranking
    with the full-data one; every share is also pruned and evaluated.
    """
    k = default_topk(len(model.layers)) if k is None else k
    full = prepare_experiment(model, data, train, recover_steps)
    reference = RankingSnapshot(train.probe_steps, tuple(rank_layers(full.scores)))
    rows = []
    for f in fractions:
        part = subsample(data, f, train.seed)
        exp = prepare_experiment(model, part, train, recover_steps)
        ranking = RankingSnapshot(train.probe_steps, tuple(rank_layers(exp.scores)))
        # prune with the share's ranking, recover and evaluate on the full data
        exp = dataclasses.replace(exp, data=data)
        plan = exp.plan(prune_count, merge_count)
        row = _row(evaluate_plan(exp, plan), plan.achieved_ratio, fraction=f, samples=len(part))
        row["topk_overlap"] = topk_overlap(ranking, reference, k)
        row["spearman"] = rank_correlation(ranking, reference)
        row["ranking"] = " ".join(map(str, ranking.ranking))
        rows.append(row)
    return rows


def step_count_ablation(
    model: ModelState,
    data: Dataset,
    train: TrainConfig,
    fractions: Iterable[float] = (0.0002, 0.0005, 0.0008, 0.01),
    *,
    prune_count: int = 1,
    merge_count: int = 0,
    recover_steps: int = 0,
    k: int | None = None,
) -> list[dict]:
    """
    Prune with the IGIA gathered over a fraction of ``total_steps`` and
    evaluate; the ranking of each fraction is compared with the one at the
    final step.
    """
    result = run_sensitivity(model, data, train, fractions, k, keep_igia=True)
    rows = []
    for step in sorted(result.igia_at):
        igia = result.igia_at[step]
        snapshot = ranking_from_igia(igia, model.layer_ids, step)
        exp = Experiment(model, data, train, igia, layer_scores(igia, model.layer_ids), recover_steps)
        plan = exp.plan(prune_count, merge_count)
        row = _row(evaluate_plan(exp, plan), plan.achieved_ratio, fraction=result.fractions[step], steps=step)
        row["topk_overlap"] = topk_overlap(snapshot, result.reference, result.k)
        row["ranking"] = " ".join(map(str, snapshot.ranking))
        rows.append(row)
    return rows
