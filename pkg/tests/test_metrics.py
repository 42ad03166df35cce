"""Classification metrics and explanation scoring."""

import math

import numpy as np
import pytest

from causalgnn import graphs as G
from causalgnn.metrics import (Confusion, ablation_run, explanation_score,
                               evaluate_test_metrics, metrics)
from causalgnn.model import Explanation, TrainConfig
from causalgnn.tensor import ContractError
from causalgnn.training import train

RNG = np.random.default_rng(77)


def test_perfect_confusion():
    assert metrics(Confusion(tp=5, tn=5, fp=0, fn=0)) == (1.0, 1.0, 1.0)


def test_anti_perfect_confusion():
    accuracy, f1, mcc = metrics(Confusion(tp=0, tn=0, fp=5, fn=5))
    assert accuracy == 0.0
    assert mcc == -1.0


def test_worked_mcc_example():
    accuracy, f1, mcc = metrics(Confusion(tp=3, tn=4, fp=2, fn=1))
    assert mcc == pytest.approx(10 / math.sqrt(600), abs=1e-15)
    assert accuracy == pytest.approx(0.7)
    assert f1 == pytest.approx(6 / 9)


def test_zero_denominator_convention():
    _, _, mcc = metrics(Confusion(tp=4, tn=0, fp=0, fn=6))
    assert mcc == 0.0
    with pytest.raises(ContractError):
        metrics(Confusion())


def test_metrics_match_independent_reimplementation():
    # separate scalar arithmetic, 1000 random confusions
    rng = np.random.default_rng(123)
    for _ in range(1000):
        tp, tn, fp, fn = (int(v) for v in rng.integers(0, 40, 4))
        if tp + tn + fp + fn == 0:
            continue
        accuracy, f1, mcc = metrics(Confusion(tp=tp, tn=tn, fp=fp, fn=fn))
        total = tp + tn + fp + fn
        ref_acc = (tp + tn) / total
        ref_f1 = (2.0 * tp) / (2.0 * tp + fp + fn) if tp + fp + fn else 0.0
        prod = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
        ref_mcc = ((tp * tn) - (fp * fn)) / prod ** 0.5 if prod else 0.0
        assert accuracy == pytest.approx(ref_acc, abs=1e-15)
        assert f1 == pytest.approx(ref_f1, abs=1e-15)
        assert mcc == pytest.approx(ref_mcc, abs=1e-13)


def test_confusion_from_predictions():
    c = Confusion.from_predictions([1, 1, 0, 0, 1], [1, 0, 0, 1, 1])
    assert (c.tp, c.tn, c.fp, c.fn) == (2, 1, 1, 1)
    assert c.total == 5


def _graph_with_mask(seed=0):
    return G.generate_ba2motif(2, seed=seed).graphs[0]


def test_perfect_explanation_scores_one_everywhere():
    g = _graph_with_mask()
    weights = np.full((25, 25), 0.2)
    for i, j in g.mask_edge_list():
        weights[i, j] = weights[j, i] = 0.9
    score = explanation_score(Explanation(weights=weights), g)
    assert score.precision_at_k[3] == 1.0
    assert score.precision_at_k[5] == 1.0
    assert all(p == 1.0 for p in score.precision_at_mu)
    assert score.auc == 1.0


def test_missing_mask_rejected():
    g = _graph_with_mask()
    g.mask = None
    with pytest.raises(ContractError):
        explanation_score(Explanation(weights=np.full((25, 25), 0.5)), g)


def test_score_invariant_under_monotone_weight_transforms():
    g = _graph_with_mask(seed=5)
    w = RNG.random((25, 25))
    w = 0.5 * (w + w.T)
    s1 = explanation_score(Explanation(weights=w), g)
    s2 = explanation_score(Explanation(weights=0.1 + 0.5 * w), g)
    assert s1.precision_at_mu == s2.precision_at_mu
    assert s1.precision_at_k == s2.precision_at_k


def test_auc_is_exact_mean_of_curve():
    g = _graph_with_mask(seed=2)
    w = RNG.random((25, 25))
    s = explanation_score(Explanation(weights=0.5 * (w + w.T)), g)
    assert s.auc == pytest.approx(float(np.mean(s.precision_at_mu)), abs=1e-15)
    assert s.raw_auc == pytest.approx(float(np.mean(s.raw_precision_at_mu)), abs=1e-15)


def test_random_weights_match_hypergeometric_oracle():
    # Monte-Carlo over 500 random weight draws against the exact expected
    # hit count of uniformly random ranking
    g = _graph_with_mask(seed=9)
    edges = g.edge_list()
    e_total = len(edges)
    m = len(g.mask_edge_list())
    rng = np.random.default_rng(11)
    sums = np.zeros(10)
    trials = 500
    for _ in range(trials):
        w = np.zeros((25, 25))
        order = rng.permutation(e_total)
        for (i, j), v in zip(edges, order):
            w[i, j] = w[j, i] = v
        s = explanation_score(Explanation(weights=w / e_total), g)
        sums += np.array(s.precision_at_mu)
    empirical = sums / trials
    for k in range(1, 11):
        budget = -(-k * e_total // 10)
        expected = (budget * m / e_total) / min(budget, m)
        # binomial-ish Monte-Carlo noise at 500 trials
        assert abs(empirical[k - 1] - expected) < 0.06, (k, empirical[k - 1], expected)


def test_ablation_single_variant_matches_direct_train():
    ds = G.generate_ba2motif(40, seed=7)
    cfg = TrainConfig(epochs=6, vae_epochs=3, batch_size=8, seed=0)
    rows = ablation_run(ds, ["full"], config=cfg)
    assert len(rows) == 1
    params, _ = train(ds, cfg)
    sp = G.split(ds, cfg.seed)
    accuracy, f1, mcc = evaluate_test_metrics(params, ds, sp.test)
    assert rows[0].accuracy == accuracy
    assert rows[0].f1 == f1
    assert rows[0].mcc == mcc
    assert rows[0].variant == "full"


def test_ablation_rejects_unknown_variant():
    ds = G.generate_ba2motif(20, seed=7)
    with pytest.raises(ContractError):
        ablation_run(ds, ["full", "no-vae"])
