import dataclasses
import json
from decimal import ROUND_HALF_UP, Decimal

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from viewprox import CLASSES, evaluation as ev, model
from viewprox.errors import EmptyInput, EmptyPredictionList, LengthMismatch, TooFewSubjects
from viewprox.model import Prediction

# Reported per-fold confusion matrices (rows true TD/ASD/ID, columns predicted).
# Fold 1 sums to 23 subjects and fold 5 to 22, while the reported fold split
# lists 22 and 23; the arithmetic here follows the matrices as given.
FOLD_MATRICES = [
    [[5, 0, 2], [0, 7, 2], [0, 3, 4]],
    [[6, 2, 0], [0, 8, 0], [2, 2, 4]],
    [[5, 1, 1], [3, 5, 0], [1, 1, 5]],
    [[4, 2, 2], [0, 7, 1], [0, 4, 4]],
    [[6, 1, 0], [0, 7, 1], [1, 4, 2]],
]
FOLD_RECALL = [(0.71, 0.78, 0.57), (0.75, 1, 0.5), (0.71, 0.63, 0.71), (0.5, 0.88, 0.5), (0.86, 0.88, 0.29)]
FOLD_PRECISION = [(1, 0.7, 0.5), (0.75, 0.67, 1), (0.56, 0.71, 0.83), (1, 0.54, 0.57), (0.86, 0.58, 0.67)]
OVERALL_MATRIX = [[26, 6, 5], [3, 34, 4], [4, 14, 19]]
OVERALL_RECALL = (0.7, 0.83, 0.51)
OVERALL_PRECISION = (0.79, 0.63, 0.68)
FOLD_MRR = (0.826, 0.792, 0.818, 0.854, 0.833)
OVERALL_MRR = 0.825


def rounds_to(values, reported):
    """Two-decimal half-up rounding of ``values`` gives ``reported`` (so |diff| <= 0.005)."""
    return all(
        Decimal(repr(v)).quantize(Decimal("0.01"), ROUND_HALF_UP) == Decimal(repr(float(r))).quantize(Decimal("0.01"))
        for v, r in zip(values, reported)
    )


def labels_from_counts(counts):
    true, pred = [], []
    for i, row in enumerate(counts):
        for j, n in enumerate(row):
            true += [CLASSES[i]] * n
            pred += [CLASSES[j]] * n
    return true, pred


@pytest.mark.parametrize("fold", range(5))
def test_fold_precision_recall(fold):
    res = ev.confusion_and_prf(*labels_from_counts(FOLD_MATRICES[fold]))
    assert res.counts.tolist() == FOLD_MATRICES[fold]
    assert rounds_to(res.recall, FOLD_RECALL[fold])
    assert rounds_to(res.precision, FOLD_PRECISION[fold])


def test_overall_matrix_and_pooled_averages():
    total = sum(np.array(m) for m in FOLD_MATRICES)
    assert total.tolist() == OVERALL_MATRIX
    pooled = ev.prf_from_counts(total)
    assert rounds_to(pooled.recall, OVERALL_RECALL)
    assert rounds_to(pooled.precision, OVERALL_PRECISION)


def test_weighted_accuracy_fixture():
    per_fold = [(int(np.trace(m)), int(np.sum(m))) for m in FOLD_MATRICES]
    assert per_fold == [(16, 23), (18, 24), (15, 22), (15, 24), (15, 22)]
    acc = ev.weighted_accuracy(per_fold)
    assert acc == 79 / 115
    assert acc == pytest.approx(0.6869, abs=1e-4)
    assert ev.weighted_accuracy([(5, 5), (7, 7)]) == 1.0


def test_majority_baseline():
    labels = ["TD"] * 37 + ["ASD"] * 41 + ["ID"] * 37
    assert ev.majority_baseline(labels) == 41 / 115
    assert ev.majority_baseline(labels) == pytest.approx(0.3565, abs=1e-4)


def test_perfect_predictions():
    labels = ["TD", "ASD", "ID", "ASD"]
    res = ev.confusion_and_prf(labels, labels)
    assert res.counts.tolist() == [[1, 0, 0], [0, 2, 0], [0, 0, 1]]
    assert res.precision == [1, 1, 1] and res.recall == [1, 1, 1]


def test_undefined_precision_is_absent():
    res = ev.confusion_and_prf(["TD", "ASD"], ["TD", "TD"])
    assert res.precision == [0.5, None, None]
    assert res.recall == [1.0, 0.0, None]


def test_confusion_errors():
    with pytest.raises(LengthMismatch):
        ev.confusion_and_prf(["TD"], [])
    with pytest.raises(EmptyInput):
        ev.confusion_and_prf([], [])
    with pytest.raises(ValueError):
        ev.confusion_and_prf(["XX"], ["TD"])


def test_mrr_examples():
    assert ev.mean_reciprocal_rank([("TD", [0.9, 0.05, 0.05]), ("ID", [0.1, 0.2, 0.7])]) == 1.0
    assert ev.mean_reciprocal_rank([("TD", [0.6, 0.3, 0.1]), ("ASD", [0.6, 0.3, 0.1])]) == 0.75
    ranked = {1: [0.7, 0.2, 0.1], 2: [0.2, 0.7, 0.1], 3: [0.1, 0.2, 0.7]}
    fold = [("TD", ranked[1])] * 18 + [("TD", ranked[2])] * 4 + [("TD", ranked[3])] * 2
    assert ev.mean_reciprocal_rank(fold) == pytest.approx((18 + 2 + 2 / 3) / 24, rel=1e-15)
    assert round(ev.mean_reciprocal_rank(fold), 4) == 0.8611


def test_mrr_tie_order():
    assert ev.reciprocal_rank("TD", [0.4, 0.4, 0.2]) == 1.0
    assert ev.reciprocal_rank("ASD", [0.4, 0.4, 0.2]) == 0.5
    assert ev.reciprocal_rank("ID", [1 / 3] * 3) == pytest.approx(1 / 3)


def test_mrr_empty():
    with pytest.raises(EmptyInput):
        ev.mean_reciprocal_rank([])


def test_reported_mrr_inside_rank_envelope():
    for value in (*FOLD_MRR, OVERALL_MRR):
        assert 1 / 3 <= value <= 1
    # Each fold's MRR must be at least its accuracy.
    for m, mrr in zip(FOLD_MATRICES, FOLD_MRR):
        assert mrr >= np.trace(m) / np.sum(m)


probability_rows = st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3).filter(lambda r: sum(r) > 0)


@settings(max_examples=500, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(CLASSES), probability_rows), min_size=1, max_size=40))
def test_mrr_bounds_and_dominates_accuracy(rankings):
    mrr = ev.mean_reciprocal_rank(rankings)
    assert 1 / 3 <= mrr <= 1
    hits = [ev.reciprocal_rank(t, s) == 1.0 for t, s in rankings]
    assert mrr >= np.mean(hits)


def probs(*rows):
    return [Prediction(np.log(np.array(r)), np.array(r, dtype=float)) for r in rows]


def test_aggregate_examples():
    label, _ = ev.aggregate_subject(probs([0.2, 0.7, 0.1], [0.1, 0.6, 0.3], [0.8, 0.1, 0.1]))
    assert label == "ASD"
    label, mean = ev.aggregate_subject(probs([0.50, 0.34, 0.16], [0.34, 0.56, 0.10]))
    assert mean[:2] == pytest.approx([0.42, 0.45])
    assert label == "ASD"
    assert ev.aggregate_subject(probs([0.1, 0.1, 0.8]))[0] == "ID"
    with pytest.raises(EmptyPredictionList):
        ev.aggregate_subject([])


def test_aggregate_exact_tie_uses_class_order():
    assert ev.aggregate_subject(np.array([[0.6, 0.4, 0.0], [0.4, 0.6, 0.0]]))[0] == "TD"


def cohort_37_41_37():
    labels = ["TD"] * 37 + ["ASD"] * 41 + ["ID"] * 37
    return [(f"S{i:03d}", y) for i, y in enumerate(labels)]


def test_make_folds_37_41_37():
    plan = ev.make_folds(cohort_37_41_37(), 5, seed=0)
    sizes = [len(f) for f in plan.folds]
    assert sum(sizes) == 115 and all(22 <= s <= 24 for s in sizes)
    for counts in plan.class_counts:
        assert counts["TD"] in (7, 8) and counts["ID"] in (7, 8) and counts["ASD"] in (8, 9)
    assert ev.make_folds(cohort_37_41_37(), 5, seed=0) == plan


def test_make_folds_exact_division():
    subjects = [(f"s{i}", CLASSES[i % 3]) for i in range(15)]
    plan = ev.make_folds(subjects, 5, seed=3)
    assert all(c == {"TD": 1, "ASD": 1, "ID": 1} for c in plan.class_counts)


def test_make_folds_too_few():
    with pytest.raises(TooFewSubjects):
        ev.make_folds([(f"s{i}", CLASSES[i % 3]) for i in range(12)], 5)


@settings(max_examples=200, deadline=None)
@given(
    counts=st.tuples(st.integers(5, 40), st.integers(5, 40), st.integers(5, 40)),
    k=st.integers(2, 5),
    seed=st.integers(0, 2**32 - 1),
)
def test_make_folds_partition(counts, k, seed):
    subjects = [(f"s{c}_{i}", CLASSES[c]) for c in range(3) for i in range(counts[c])]
    plan = ev.make_folds(subjects, k, seed)
    flat = [s for f in plan.folds for s in f]
    assert sorted(flat) == sorted(s for s, _ in subjects)
    for c in CLASSES:
        per = [fc[c] for fc in plan.class_counts]
        assert max(per) - min(per) <= 1
    sizes = [len(f) for f in plan.folds]
    assert max(sizes) - min(sizes) <= 1


def test_split_train_val_stratified():
    subjects = cohort_37_41_37()[:92]
    train, val = ev.split_train_val(subjects, seed=1)
    assert not set(train) & set(val)
    assert len(train) + len(val) == 92
    label = dict(subjects)
    for c in CLASSES:
        n_c = sum(1 for _, y in subjects if y == c)
        assert sum(1 for s in val if label[s] == c) == round(n_c / 8)


def test_crossval_report_invariants(crossval_report, synthetic_subjects):
    rep = crossval_report
    true_counts = [sum(1 for r in synthetic_subjects if r.label == c) for c in CLASSES]
    assert rep.confusion.counts.sum(axis=1).tolist() == true_counts
    assert np.array_equal(rep.confusion.counts, sum(f.confusion.counts for f in rep.folds))
    assert rep.accuracy == np.trace(rep.confusion.counts) / rep.confusion.total
    assert rep.mrr >= rep.accuracy
    for f in rep.folds:
        assert f.mrr >= f.accuracy
        held = set(f.test_ids)
        assert not held & set(f.train_ids) and not held & set(f.val_ids)
        assert not set(f.train_ids) & set(f.val_ids)
        assert len(held) + len(f.train_ids) + len(f.val_ids) == 115


def test_crossval_deterministic(processed_subjects):
    subset = processed_subjects[:10] + processed_subjects[37:47] + processed_subjects[78:88]
    cfg = model.SchemeConfig.default(2, max_epochs=2)
    a = ev.report_json(ev.run_crossval(subset, cfg, seed=4))
    b = ev.report_json(ev.run_crossval(subset, cfg, seed=4))
    assert a == b
    assert json.loads(a)["format"] == ev.REPORT_VERSION


def test_crossval_rejects_unlabeled(processed_subjects):
    subjects = list(processed_subjects[:30])
    subjects[3] = dataclasses.replace(subjects[3], label=None)
    with pytest.raises(ValueError, match=subjects[3].subject_id):
        ev.run_crossval(subjects, model.SchemeConfig.default(2, max_epochs=1))


def test_scheme3_report_records_duration_branch(processed_subjects):
    subset = processed_subjects[:6] + processed_subjects[37:43] + processed_subjects[78:84]
    rep = ev.run_crossval(subset, model.SchemeConfig.default(3, max_epochs=1), seed=0, k=3)
    doc = rep.to_dict()
    assert doc["scheme"]["duration_fc"] == [1, 8]
    assert doc["scheme"]["head_layers"] == [[40, 16], [16, 3]]


def test_summary_layout():
    doc = {
        "format": ev.REPORT_VERSION,
        "seed": 0,
        "scheme": model.SchemeConfig.default(2).to_dict(),
        "folds": [],
        "overall": {},
    }
    fold_docs = []
    for i, m in enumerate(FOLD_MATRICES):
        c = ev.prf_from_counts(m)
        fold_docs.append({
            "fold": i + 1, "n_subjects": c.total, "accuracy": c.accuracy, "mrr": FOLD_MRR[i],
            "confusion": {"counts": m, "precision": c.precision, "recall": c.recall},
        })
    pooled = ev.prf_from_counts(OVERALL_MATRIX)
    doc["folds"] = fold_docs
    doc["overall"] = {
        "n_subjects": 115, "weighted_accuracy": 79 / 115, "mrr": OVERALL_MRR,
        "confusion": {"counts": OVERALL_MATRIX, "precision": pooled.precision, "recall": pooled.recall},
    }
    text = ev.format_summary(doc)
    lines = text.splitlines()
    header = next(line for line in lines if line.startswith("Category") and "Average Recall" in line)
    assert header.split()[1:4] == list(CLASSES)
    assert "Average Precision  0.79  0.63  0.68" in text
    assert any(line.startswith("TD") and line.split()[-1] == "0.70" for line in lines)
    assert "0.6870" in text
