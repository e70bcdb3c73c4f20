"""Cross-validation harness and the metrics it reports."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from viewprox import CLASSES
from viewprox.errors import EmptyInput, EmptyPredictionList, LengthMismatch, TooFewSubjects
from viewprox.model import ChunkData, Prediction, SchemeConfig, predict_proba, train
from viewprox.signal import ProcessedTrace

REPORT_VERSION = "viewprox-report/1"
N_CLASSES = len(CLASSES)


def _class_index(label) -> int:
    return CLASSES.index(label) if isinstance(label, str) else int(label)


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass
class FoldPlan:
    folds: list[list[str]]
    class_counts: list[dict[str, int]]

    def fold_of(self, subject_id: str) -> int:
        for i, fold in enumerate(self.folds):
            if subject_id in fold:
                return i
        raise KeyError(subject_id)


def make_folds(subjects: Sequence[tuple[str, str]], k: int = 5, seed: int = 0) -> FoldPlan:
    """Seeded stratified partition of (subject_id, label) pairs into k folds.

    Each class is shuffled and dealt round-robin, continuing from the fold
    where the previous class stopped, so fold sizes differ by at most one
    overall and per class.
    """
    if k < 2:
        raise ValueError("need at least two folds")
    by_class: dict[str, list[str]] = {c: [] for c in CLASSES}
    for sid, label in subjects:
        by_class[CLASSES[_class_index(label)]].append(sid)
    for c, ids in by_class.items():
        if len(ids) < k:
            raise TooFewSubjects(f"class {c} has {len(ids)} subjects, need at least {k}")
    rng = np.random.default_rng(seed)
    folds: list[list[str]] = [[] for _ in range(k)]
    counts = [{c: 0 for c in CLASSES} for _ in range(k)]
    offset = 0
    for c in CLASSES:
        ids = sorted(by_class[c])
        for j, pos in enumerate(rng.permutation(len(ids))):
            f = (offset + j) % k
            folds[f].append(ids[pos])
            counts[f][c] += 1
        offset = (offset + len(ids)) % k
    return FoldPlan(folds, counts)


def split_train_val(subjects: Sequence[tuple[str, str]], seed: int, ratio: tuple[int, int] = (7, 1)):
    """Stratified subject-level split; returns (train_ids, val_ids)."""
    rng = np.random.default_rng(seed)
    frac = ratio[1] / sum(ratio)
    train_ids, val_ids = [], []
    for c in CLASSES:
        ids = sorted(sid for sid, label in subjects if CLASSES[_class_index(label)] == c)
        if not ids:
            continue
        n_val = max(1, round(frac * len(ids))) if len(ids) >= 2 else 0
        perm = [ids[i] for i in rng.permutation(len(ids))]
        val_ids += perm[:n_val]
        train_ids += perm[n_val:]
    return train_ids, val_ids


def aggregate_subject(chunk_predictions) -> tuple[str, np.ndarray]:
    """Modal chunk class; ties go to the higher mean probability, then class order."""
    if len(chunk_predictions) == 0:
        raise EmptyPredictionList("no chunk predictions to aggregate")
    if isinstance(chunk_predictions[0], Prediction):
        probs = np.stack([p.probabilities for p in chunk_predictions])
    else:
        probs = np.asarray(chunk_predictions, dtype=float)
    mean = probs.mean(axis=0)
    votes = np.bincount(probs.argmax(axis=1), minlength=N_CLASSES)
    tied = np.flatnonzero(votes == votes.max())
    best = max(tied, key=lambda c: (mean[c], -c))
    return CLASSES[best], mean


@dataclass
class ConfusionResult:
    counts: np.ndarray  # rows true, columns predicted
    precision: list[float | None]
    recall: list[float | None]

    @property
    def correct(self) -> int:
        return int(np.trace(self.counts))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return self.correct / self.total


def prf_from_counts(counts) -> ConfusionResult:
    counts = np.asarray(counts, dtype=int)
    if counts.shape != (N_CLASSES, N_CLASSES) or np.any(counts < 0):
        raise ValueError("counts must be a nonnegative 3x3 matrix")
    rows, cols = counts.sum(axis=1), counts.sum(axis=0)
    diag = np.diag(counts)
    recall = [float(diag[i] / rows[i]) if rows[i] else None for i in range(N_CLASSES)]
    precision = [float(diag[j] / cols[j]) if cols[j] else None for j in range(N_CLASSES)]
    return ConfusionResult(counts, precision, recall)


def confusion_and_prf(true_labels, predicted_labels) -> ConfusionResult:
    if len(true_labels) != len(predicted_labels):
        raise LengthMismatch(f"{len(true_labels)} true labels vs {len(predicted_labels)} predictions")
    if len(true_labels) == 0:
        raise EmptyInput("no labels")
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=int)
    for t, p in zip(true_labels, predicted_labels):
        counts[_class_index(t), _class_index(p)] += 1
    return prf_from_counts(counts)


def weighted_accuracy(per_fold: Sequence[tuple[int, int]]) -> float:
    """Fold accuracies weighted by hold-out size, i.e. pooled correct / pooled total."""
    correct = sum(c for c, _ in per_fold)
    total = sum(t for _, t in per_fold)
    if any(t <= 0 for _, t in per_fold) or total == 0:
        raise ValueError("fold totals must be positive")
    return correct / total


def majority_baseline(labels) -> float:
    """Best accuracy of a classifier that always outputs one class."""
    counts = Counter(CLASSES[_class_index(y)] for y in labels)
    return max(counts.values()) / sum(counts.values())


def reciprocal_rank(true_class, scores) -> float:
    scores = np.asarray(scores, dtype=float)
    order = sorted(range(N_CLASSES), key=lambda c: (-scores[c], c))
    return 1.0 / (order.index(_class_index(true_class)) + 1)


def mean_reciprocal_rank(subject_rankings) -> float:
    """Mean over subjects of 1/rank of the true class among descending class scores.

    Equal scores are ordered TD, ASD, ID.
    """
    if len(subject_rankings) == 0:
        raise EmptyInput("no rankings")
    return float(np.mean([reciprocal_rank(t, s) for t, s in subject_rankings]))


@dataclass
class SubjectResult:
    subject_id: str
    fold: int
    true_label: str
    predicted: str
    mean_probabilities: list[float]
    n_chunks: int


@dataclass
class FoldResult:
    fold: int
    test_ids: list[str]
    train_ids: list[str]
    val_ids: list[str]
    confusion: ConfusionResult
    mrr: float
    epochs: int
    best_val_loss: float

    @property
    def accuracy(self) -> float:
        return self.confusion.accuracy


@dataclass
class EvalReport:
    plan: FoldPlan
    config: SchemeConfig
    seed: int
    folds: list[FoldResult]
    subjects: list[SubjectResult]
    extra_config: dict = field(default_factory=dict)

    @property
    def confusion(self) -> ConfusionResult:
        return prf_from_counts(sum(f.confusion.counts for f in self.folds))

    @property
    def accuracy(self) -> float:
        return weighted_accuracy([(f.confusion.correct, f.confusion.total) for f in self.folds])

    @property
    def mrr(self) -> float:
        # subject-weighted across folds
        return mean_reciprocal_rank([(s.true_label, s.mean_probabilities) for s in self.subjects])

    def to_dict(self) -> dict:
        def cm(c: ConfusionResult) -> dict:
            return {"counts": c.counts.tolist(), "precision": c.precision, "recall": c.recall}

        return {
            "format": REPORT_VERSION,
            "classes": list(CLASSES),
            "seed": self.seed,
            "scheme": self.config.to_dict(),
            "config": self.extra_config,
            "plan": {"folds": self.plan.folds, "class_counts": self.plan.class_counts},
            "folds": [
                {
                    "fold": f.fold + 1,
                    "n_subjects": f.confusion.total,
                    "accuracy": f.accuracy,
                    "mrr": f.mrr,
                    "epochs": f.epochs,
                    "best_val_loss": f.best_val_loss,
                    "confusion": cm(f.confusion),
                    "train_ids": f.train_ids,
                    "val_ids": f.val_ids,
                    "test_ids": f.test_ids,
                }
                for f in self.folds
            ],
            "overall": {
                "n_subjects": self.confusion.total,
                "weighted_accuracy": self.accuracy,
                "mrr": self.mrr,
                "confusion": cm(self.confusion),
            },
            "subjects": [vars(s) for s in self.subjects],
        }


def chunk_data(subjects: Sequence[ProcessedTrace]) -> ChunkData:
    X = np.concatenate([s.chunks.chunks for s in subjects])
    y = [s.label for s in subjects for _ in range(len(s.chunks.chunks))]
    durations = np.concatenate([np.full(len(s.chunks.chunks), s.frame_count_original, float) for s in subjects])
    ids = [s.subject_id for s in subjects for _ in range(len(s.chunks.chunks))]
    return ChunkData(X, y, durations, ids)


def run_crossval(
    subjects: Sequence[ProcessedTrace], config: SchemeConfig, seed: int = 0, k: int = 5, extra_config: dict | None = None
) -> EvalReport:
    """k-fold CV with a 7:1 subject-level train/validation split inside each round."""
    by_id = {}
    for s in subjects:
        if s.label is None:
            raise ValueError(f"subject {s.subject_id}: missing label")
        if not s.chunks.usable:
            raise ValueError(f"subject {s.subject_id}: no complete chunk")
        if s.chunks.chunks.shape[1] != config.input_length:
            raise ValueError(f"subject {s.subject_id}: chunk length differs from the model input")
        by_id[s.subject_id] = s
    pairs = [(s.subject_id, s.label) for s in subjects]
    plan = make_folds(pairs, k, seed)
    folds, results = [], []
    for f, test_ids in enumerate(plan.folds):
        held = set(test_ids)
        rest = [(sid, lab) for sid, lab in pairs if sid not in held]
        train_ids, val_ids = split_train_val(rest, _derived_seed(seed, f, 1))
        fold_config = replace(config, seed=_derived_seed(seed, f, 2) % (2**31))
        try:
            model, log = train(
                fold_config, chunk_data([by_id[i] for i in train_ids]), chunk_data([by_id[i] for i in val_ids])
            )
        except (ValueError, ArithmeticError) as exc:
            raise type(exc)(f"fold {f + 1}: {exc}") from exc
        true, pred, rankings = [], [], []
        for sid in test_ids:
            s = by_id[sid]
            durations = np.full(len(s.chunks.chunks), s.frame_count_original, float) if config.scheme == 3 else None
            probs = predict_proba(model, s.chunks.chunks, durations)
            label, mean = aggregate_subject(probs)
            true.append(s.label)
            pred.append(label)
            rankings.append((s.label, mean))
            results.append(SubjectResult(sid, f + 1, s.label, label, mean.tolist(), len(probs)))
        best = min(log, key=lambda r: r.val_loss)
        folds.append(
            FoldResult(
                fold=f,
                test_ids=list(test_ids),
                train_ids=train_ids,
                val_ids=val_ids,
                confusion=confusion_and_prf(true, pred),
                mrr=mean_reciprocal_rank(rankings),
                epochs=len(log),
                best_val_loss=best.val_loss,
            )
        )
    return EvalReport(plan, config, seed, folds, results, extra_config or {})


def report_json(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n"


def write_report(path: str | Path, report: EvalReport) -> None:
    Path(path).write_text(report_json(report))


def _fmt(x: float | None, digits: int = 2) -> str:
    return "-" if x is None else f"{x:.{digits}f}"


def format_confusion(c: ConfusionResult, title: str, average: bool = False) -> str:
    """Fixed-layout table: recall in the last column, precision in the last row."""
    recall_head = "Average Recall" if average else "Recall"
    prec_head = "Average Precision" if average else "Precision"
    width = max(len(prec_head), 8)
    lines = [title, f"{'Category':<{width}} {'TD':>5} {'ASD':>5} {'ID':>5}  {recall_head}"]
    for i, name in enumerate(CLASSES):
        row = " ".join(f"{int(v):>5d}" for v in c.counts[i])
        lines.append(f"{name:<{width}} {row}  {_fmt(c.recall[i])}")
    lines.append(f"{prec_head:<{width}} " + " ".join(f"{_fmt(p):>5}" for p in c.precision))
    return "\n".join(lines)


def format_summary(doc: dict) -> str:
    """Human-readable tables from a serialized report."""

    def conf(d: dict) -> ConfusionResult:
        return ConfusionResult(np.array(d["counts"]), d["precision"], d["recall"])

    out = [f"Scheme {doc['scheme']['scheme']}, seed {doc['seed']}, {len(doc['folds'])} folds", ""]
    for f in doc["folds"]:
        title = f"Fold {f['fold']}: n={f['n_subjects']} accuracy={f['accuracy']:.4f} MRR={f['mrr']:.3f}"
        out += [format_confusion(conf(f["confusion"]), title), ""]
    o = doc["overall"]
    title = f"Overall: n={o['n_subjects']} weighted accuracy={o['weighted_accuracy']:.4f} MRR={o['mrr']:.3f}"
    out += [format_confusion(conf(o["confusion"]), title, average=True), ""]
    out.append("MRR by fold: " + " ".join(f"{f['mrr']:.3f}" for f in doc["folds"]) + f" | overall {o['mrr']:.3f}")
    return "\n".join(out) + "\n"
