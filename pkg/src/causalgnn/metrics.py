"""Classification metrics, explanation scoring and the ablation harness."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import graphs, model, training
from .tensor import ContractError

MU_GRID = tuple((k, 10) for k in range(1, 11))  # 0.1 .. 1.0 as exact ratios
TOP_K_BUDGETS = (3, 4, 5)


@dataclass
class Confusion:
    """Binary confusion counts; class 1 is treated as positive."""

    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "Confusion":
        y_true = np.asarray(y_true, dtype=np.intp)
        y_pred = np.asarray(y_pred, dtype=np.intp)
        if y_true.shape != y_pred.shape:
            raise ContractError("prediction/label lengths disagree")
        return cls(tp=int(np.sum((y_true == 1) & (y_pred == 1))),
                   tn=int(np.sum((y_true == 0) & (y_pred == 0))),
                   fp=int(np.sum((y_true == 0) & (y_pred == 1))),
                   fn=int(np.sum((y_true == 1) & (y_pred == 0))))


def metrics(confusion: Confusion) -> tuple[float, float, float]:
    """(accuracy, F1, Matthews correlation) from exact integer counts.

    Any zero factor in the Matthews denominator makes the coefficient 0 by
    convention (the statistic is undefined there).
    """
    c = confusion
    if c.total <= 0:
        raise ContractError("cannot score an empty confusion")
    accuracy = (c.tp + c.tn) / c.total
    f1_den = 2 * c.tp + c.fp + c.fn
    f1 = 2 * c.tp / f1_den if f1_den else 0.0
    den = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    mcc = (c.tp * c.tn - c.fp * c.fn) / math.sqrt(den) if den else 0.0
    return accuracy, f1, mcc


@dataclass
class ExplanationScore:
    """Precision of a ranked edge explanation against a ground-truth mask.

    precision_at_mu uses budget ceil(mu * |E|); the capped variant divides
    by min(budget, |mask|) so a perfect explainer scores 1 at every budget
    that covers the motif, while raw_precision_at_mu divides by the budget
    itself.  auc is the exact mean of the capped curve.
    """

    precision_at_mu: list[float]
    raw_precision_at_mu: list[float]
    auc: float
    raw_auc: float
    precision_at_k: dict[int, float]


def _ranked_edges(explanation: model.Explanation,
                  graph: graphs.Graph) -> list[tuple[int, int]]:
    edges = graph.edge_list()
    w = explanation.weights
    return sorted(edges, key=lambda e: (-w[e[0], e[1]], e[0], e[1]))


def explanation_score(explanation: model.Explanation,
                      graph: graphs.Graph) -> ExplanationScore:
    """Score one explanation against the graph's ground-truth edge mask.

    Observed edges are ranked by weight (ties broken by edge index); for
    each budget the precision counts how many selected edges are mask edges.
    """
    if graph.mask is None or not graph.mask_edge_list():
        raise ContractError("explanation scoring needs a nonempty ground-truth mask")
    ranked = _ranked_edges(explanation, graph)
    mask = set(graph.mask_edge_list())
    total = len(ranked)
    capped, raw = [], []
    for num, den in MU_GRID:
        budget = -(-num * total // den)  # ceil with exact integer arithmetic
        hits = sum(1 for e in ranked[:budget] if e in mask)
        capped.append(hits / min(budget, len(mask)))
        raw.append(hits / budget)
    at_k = {}
    for k in TOP_K_BUDGETS:
        budget = min(k, total)
        hits = sum(1 for e in ranked[:budget] if e in mask)
        at_k[k] = hits / min(budget, len(mask))
    return ExplanationScore(precision_at_mu=capped, raw_precision_at_mu=raw,
                            auc=float(np.mean(capped)), raw_auc=float(np.mean(raw)),
                            precision_at_k=at_k)


def score_explanations(params: model.ModelParams, dataset: graphs.Dataset,
                       indices: list[int]) -> dict:
    """Mean explanation scores over the masked graphs among the given indices."""
    masked = [i for i in indices if dataset.graphs[i].mask is not None
              and dataset.graphs[i].mask_edge_list()]
    if not masked:
        raise ContractError("no graphs with ground-truth masks to score")
    explanations = training.explain_graphs(params, dataset, masked)
    scores = [explanation_score(e, dataset.graphs[i])
              for e, i in zip(explanations, masked)]
    return {
        "count": len(scores),
        "auc": float(np.mean([s.auc for s in scores])),
        "raw_auc": float(np.mean([s.raw_auc for s in scores])),
        "precision_at_mu": [float(np.mean([s.precision_at_mu[i] for s in scores]))
                            for i in range(len(MU_GRID))],
        "precision_at_k": {k: float(np.mean([s.precision_at_k[k] for s in scores]))
                           for k in TOP_K_BUDGETS},
    }


# -- ablation harness ------------------------------------------------------------

ABLATION_VARIANTS = ("full", "no-causal", "non-mi", "plain-classifier")
HSIC_PROBE_EPOCHS = (1, 50, 100)


@dataclass
class AblationRow:
    variant: str
    seed: int
    accuracy: float
    f1: float
    mcc: float
    hsic_trajectory: dict[int, float] = field(default_factory=dict)


def evaluate_test_metrics(params: model.ModelParams, dataset: graphs.Dataset,
                          indices: list[int]) -> tuple[float, float, float]:
    preds = training.predict_labels(params, dataset, indices)
    truth = [dataset.graphs[i].label for i in indices]
    return metrics(Confusion.from_predictions(truth, preds))


def ablation_run(dataset: graphs.Dataset, variants: list[str],
                 config: model.TrainConfig | None = None,
                 seeds: list[int] | None = None) -> list[AblationRow]:
    """Train each requested variant on identical splits and seeds.

    Every row carries test accuracy/F1/MCC plus the tracked dependence
    between the two latent blocks at the probe epochs.  Variants run
    sequentially so results are reproducible run to run.
    """
    base = config or model.TrainConfig()
    unknown = set(variants) - set(ABLATION_VARIANTS)
    if unknown:
        raise ContractError(
            f"unknown ablation variants {sorted(unknown)}; valid: {ABLATION_VARIANTS}")
    rows = []
    for variant in variants:
        for seed in (seeds if seeds is not None else [base.seed]):
            cfg = model.TrainConfig(**{**base.to_dict(),
                                       "variant": variant, "seed": seed})
            params, history = training.train(dataset, cfg)
            sp = graphs.split(dataset, cfg.seed)
            accuracy, f1, mcc = evaluate_test_metrics(params, dataset, sp.test)
            trajectory = {e: history.rows[e - 1].hsic_alpha_beta
                          for e in HSIC_PROBE_EPOCHS
                          if e <= len(history.rows)}
            rows.append(AblationRow(variant=variant, seed=seed, accuracy=accuracy,
                                    f1=f1, mcc=mcc, hsic_trajectory=trajectory))
    return rows


def ablation_table(rows: list[AblationRow]) -> str:
    """Aligned plain-text rendering of ablation results."""
    header = f"{'variant':<18} {'seed':>4} {'accuracy':>9} {'f1':>9} {'mcc':>9} " \
             f"{'hsic@1':>9} {'hsic@50':>9} {'hsic@100':>9}"
    lines = [header, "-" * len(header)]
    for r in rows:
        tr = r.hsic_trajectory
        lines.append(
            f"{r.variant:<18} {r.seed:>4} {r.accuracy:>9.4f} {r.f1:>9.4f} "
            f"{r.mcc:>9.4f} "
            + " ".join(f"{tr.get(e, float('nan')):>9.4f}" for e in HSIC_PROBE_EPOCHS))
    return "\n".join(lines) + "\n"
