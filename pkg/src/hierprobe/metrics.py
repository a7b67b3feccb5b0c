"""Classification metrics for the coarse OA task and the 5-way KL task."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .exceptions import UndefinedMetricError, ValidationError
from .hierarchy import N_GRADES, LabelRecord, as_kl_probs, check_unique_ids, oa_prob_from_kl

OA_DECISION_THRESHOLD = 0.5


@dataclass(frozen=True)
class PredictionSet:
    """Per-subject model outputs.

    ``p_kl`` is an ``(N, 5)`` array, or ``None`` for models without a KL head.
    """

    subject_ids: tuple[str, ...]
    p_oa: np.ndarray
    p_kl: np.ndarray | None = None

    def __post_init__(self):
        ids = tuple(self.subject_ids)
        object.__setattr__(self, "subject_ids", ids)
        check_unique_ids(ids)
        p_oa = np.asarray(self.p_oa, dtype=np.float64).reshape(-1)
        if p_oa.shape[0] != len(ids):
            raise ValidationError("p_oa length does not match subject_ids")
        if not np.all(np.isfinite(p_oa)) or np.any(p_oa < 0) or np.any(p_oa > 1):
            raise ValidationError("p_oa values must be probabilities in [0, 1]")
        object.__setattr__(self, "p_oa", p_oa)
        if self.p_kl is not None:
            p_kl = as_kl_probs(np.asarray(self.p_kl, dtype=np.float64).reshape(-1, N_GRADES))
            if p_kl.shape[0] != len(ids):
                raise ValidationError("p_kl length does not match subject_ids")
            object.__setattr__(self, "p_kl", p_kl)

    def __len__(self):
        return len(self.subject_ids)

    @classmethod
    def from_kl(cls, subject_ids, p_kl) -> "PredictionSet":
        """KL-only predictions; the OA probability is the KL-implied marginal."""
        p_kl = as_kl_probs(np.asarray(p_kl, dtype=np.float64).reshape(-1, N_GRADES))
        return cls(tuple(subject_ids), oa_prob_from_kl(p_kl), p_kl)

    def aligned_to(self, labels: Sequence[LabelRecord]) -> "PredictionSet":
        """Reorder to the label order; the subject sets must coincide exactly."""
        wanted = [r.subject_id for r in labels]
        if len(wanted) != len(self.subject_ids) or set(wanted) != set(self.subject_ids):
            raise ValidationError("prediction subjects do not match label subjects")
        pos = {sid: i for i, sid in enumerate(self.subject_ids)}
        order = np.array([pos[s] for s in wanted], dtype=np.int64)
        return self.take(order)

    def take(self, idx: np.ndarray) -> "PredictionSet":
        # bypasses validation: indices may repeat (bootstrap resamples)
        obj = object.__new__(PredictionSet)
        object.__setattr__(obj, "subject_ids", tuple(self.subject_ids[i] for i in idx))
        object.__setattr__(obj, "p_oa", self.p_oa[idx])
        object.__setattr__(obj, "p_kl", None if self.p_kl is None else self.p_kl[idx])
        return obj

    def oa_pred(self) -> np.ndarray:
        return (self.p_oa >= OA_DECISION_THRESHOLD).astype(np.int64)

    def kl_pred(self) -> np.ndarray:
        if self.p_kl is None:
            raise ValidationError("prediction set carries no KL probabilities")
        return argmax_grade(self.p_kl)


class MacroScore(NamedTuple):
    value: float
    per_class: tuple[float, ...]
    skipped: tuple[int, ...]


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # rows = true, columns = predicted

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        return int(np.trace(self.counts)) / self.total

    def to_list(self) -> list[list[int]]:
        return self.counts.tolist()


@dataclass(frozen=True)
class MetricReport:
    task: str  # "OA" or "KL"
    auc: float
    acc: float
    f1: float
    per_class_f1: tuple[float, ...] | None = None
    per_class_auc: tuple[float, ...] | None = None
    skipped_classes: tuple[int, ...] = ()
    confusion: ConfusionMatrix | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        out = {
            "task": self.task,
            "auc": self.auc,
            "acc": self.acc,
            "f1": self.f1,
            "per_class_f1": list(self.per_class_f1) if self.per_class_f1 is not None else None,
            "per_class_auc": list(self.per_class_auc) if self.per_class_auc is not None else None,
            "skipped_classes": list(self.skipped_classes),
        }
        if self.confusion is not None:
            out["confusion_matrix"] = self.confusion.to_list()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        cm = d.get("confusion_matrix")
        return cls(
            task=d["task"],
            auc=d["auc"],
            acc=d["acc"],
            f1=d["f1"],
            per_class_f1=tuple(d["per_class_f1"]) if d.get("per_class_f1") is not None else None,
            per_class_auc=tuple(d["per_class_auc"]) if d.get("per_class_auc") is not None else None,
            skipped_classes=tuple(d.get("skipped_classes", ())),
            confusion=ConfusionMatrix(np.array(cm, dtype=np.int64)) if cm is not None else None,
        )


def _paired(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 1 or b.ndim != 1:
        raise ValidationError("expected 1-D sequences")
    if a.shape[0] != b.shape[0]:
        raise ValidationError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    return a, b


def average_ranks(x) -> np.ndarray:
    """1-based ranks with ties sharing the mean of the ranks they span."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    # boundaries of tie groups in sorted order
    starts = np.flatnonzero(np.r_[True, sx[1:] != sx[:-1]])
    ends = np.r_[starts[1:], n]
    group_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = np.repeat(group_rank, ends - starts)
    return ranks


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(tie)."""
    scores, labels = _paired(scores, labels)
    labels = labels.astype(np.int64)
    if np.any((labels != 0) & (labels != 1)):
        raise ValidationError("AUC labels must be binary")
    n_pos = int(labels.sum())
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("undefined AUC: labels contain a single class")
    ranks = average_ranks(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy(pred_labels, true_labels) -> float:
    pred, true = _paired(pred_labels, true_labels)
    if pred.shape[0] == 0:
        raise ValidationError("accuracy of an empty sequence")
    return float(np.count_nonzero(pred == true) / pred.shape[0])


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2 * tp / denom


def binary_f1(pred_labels, true_labels) -> float:
    pred, true = _paired(pred_labels, true_labels)
    pred = pred.astype(bool)
    true = true.astype(bool)
    tp = int(np.count_nonzero(pred & true))
    fp = int(np.count_nonzero(pred & ~true))
    fn = int(np.count_nonzero(~pred & true))
    return _f1(tp, fp, fn)


def _check_grades(g: np.ndarray) -> np.ndarray:
    g = g.astype(np.int64)
    if g.size and (g.min() < 0 or g.max() >= N_GRADES):
        raise ValidationError("grades must lie in 0..4")
    return g


def macro_f1(pred_grades, true_grades) -> MacroScore:
    """Per-class one-vs-rest F1, averaged over classes present in ``true_grades``."""
    pred, true = _paired(pred_grades, true_grades)
    if true.shape[0] == 0:
        raise ValidationError("macro-F1 of an empty sequence")
    pred, true = _check_grades(pred), _check_grades(true)
    per_class = []
    for k in range(N_GRADES):
        p, t = pred == k, true == k
        tp = int(np.count_nonzero(p & t))
        per_class.append(_f1(tp, int(np.count_nonzero(p & ~t)), int(np.count_nonzero(~p & t))))
    present = [k for k in range(N_GRADES) if np.any(true == k)]
    skipped = tuple(k for k in range(N_GRADES) if k not in present)
    value = float(np.mean([per_class[k] for k in present]))
    return MacroScore(value, tuple(per_class), skipped)


def macro_ovr_auc(p_kl, true_grades) -> MacroScore:
    """One-vs-rest AUC per KL class, unweighted mean over computable classes.

    A class is computable when it is present in ``true_grades`` but not the
    only grade there. Non-computable classes get NaN in ``per_class``.
    """
    p_kl = np.asarray(p_kl, dtype=np.float64)
    true = _check_grades(np.asarray(true_grades))
    if p_kl.ndim != 2 or p_kl.shape != (true.shape[0], N_GRADES):
        raise ValidationError("p_kl must be an (N, 5) array aligned with the grades")
    per_class = []
    skipped = []
    for k in range(N_GRADES):
        ind = (true == k).astype(np.int64)
        if 0 < ind.sum() < ind.shape[0]:
            per_class.append(roc_auc(p_kl[:, k], ind))
        else:
            per_class.append(float("nan"))
            skipped.append(k)
    computed = [v for v in per_class if v == v]
    if not computed:
        raise UndefinedMetricError("undefined macro AUC: no KL class has both members and non-members")
    return MacroScore(float(np.mean(computed)), tuple(per_class), tuple(skipped))


def confusion_matrix(pred_labels, true_labels, n_classes: int) -> ConfusionMatrix:
    pred, true = _paired(pred_labels, true_labels)
    pred = pred.astype(np.int64)
    true = true.astype(np.int64)
    for name, arr in (("predicted", pred), ("true", true)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValidationError(f"{name} label outside 0..{n_classes - 1}")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (true, pred), 1)
    return ConfusionMatrix(counts)


def argmax_grade(p) -> int | np.ndarray:
    """Most probable grade; ties go to the lowest grade (np.argmax semantics)."""
    p = np.asarray(p, dtype=np.float64)
    out = np.argmax(p, axis=-1)
    return int(out) if p.ndim == 1 else out.astype(np.int64)


def evaluate_oa(preds: PredictionSet, labels: Sequence[LabelRecord]) -> MetricReport:
    preds = preds.aligned_to(labels)
    y = np.array([r.oa for r in labels], dtype=np.int64)
    hard = preds.oa_pred()
    cm = confusion_matrix(hard, y, 2)
    return MetricReport(
        task="OA",
        auc=roc_auc(preds.p_oa, y),
        acc=accuracy(hard, y),
        f1=binary_f1(hard, y),
        confusion=cm,
    )


def evaluate_kl(preds: PredictionSet, labels: Sequence[LabelRecord]) -> MetricReport:
    preds = preds.aligned_to(labels)
    if preds.p_kl is None:
        raise ValidationError("KL metrics need KL probabilities")
    y = np.array([r.kl for r in labels], dtype=np.int64)
    hard = preds.kl_pred()
    f1 = macro_f1(hard, y)
    auc = macro_ovr_auc(preds.p_kl, y)
    return MetricReport(
        task="KL",
        auc=auc.value,
        acc=accuracy(hard, y),
        f1=f1.value,
        per_class_f1=f1.per_class,
        per_class_auc=auc.per_class,
        skipped_classes=tuple(sorted(set(f1.skipped) | set(auc.skipped))),
        confusion=confusion_matrix(hard, y, N_GRADES),
    )


# Scalar metric functions over (aligned predictions, oa labels, kl labels).
def _oa_auc(p: PredictionSet, oa, kl):
    return roc_auc(p.p_oa, oa)


def _oa_acc(p, oa, kl):
    return accuracy(p.oa_pred(), oa)


def _oa_f1(p, oa, kl):
    return binary_f1(p.oa_pred(), oa)


def _kl_auc(p, oa, kl):
    return macro_ovr_auc(p.p_kl, kl).value


def _kl_acc(p, oa, kl):
    return accuracy(p.kl_pred(), kl)


def _kl_f1(p, oa, kl):
    return macro_f1(p.kl_pred(), kl).value


METRICS = {
    "oa_auc": _oa_auc,
    "oa_acc": _oa_acc,
    "oa_f1": _oa_f1,
    "kl_auc": _kl_auc,
    "kl_acc": _kl_acc,
    "kl_f1": _kl_f1,
}
