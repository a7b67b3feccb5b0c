"""Coarse/fine label hierarchy: KL grades 0..4 and the derived binary OA label."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .exceptions import ValidationError

N_GRADES = 5
OA_THRESHOLD = 2
SIMPLEX_TOL = 1e-6


def check_grade(kl) -> int:
    """Return ``kl`` as a plain int, rejecting anything outside 0..4."""
    if isinstance(kl, (bool, np.bool_)):
        raise ValidationError(f"KL grade must be an integer, got {kl!r}")
    if isinstance(kl, (float, np.floating)):
        if not float(kl).is_integer():
            raise ValidationError(f"KL grade must be an integer, got {kl!r}")
    try:
        value = int(kl)
    except (TypeError, ValueError):
        raise ValidationError(f"KL grade must be an integer, got {kl!r}") from None
    if not 0 <= value < N_GRADES:
        raise ValidationError(f"KL grade {value} outside 0..4")
    return value


def derive_oa(kl: int) -> int:
    """Binary OA label implied by a KL grade (OA present iff KL >= 2)."""
    return int(check_grade(kl) >= OA_THRESHOLD)


def derive_oa_array(grades) -> np.ndarray:
    grades = np.asarray(grades)
    if grades.size and (grades.min() < 0 or grades.max() >= N_GRADES):
        raise ValidationError("KL grades must lie in 0..4")
    return (grades >= OA_THRESHOLD).astype(np.int64)


@dataclass(frozen=True)
class LabelRecord:
    subject_id: str
    kl: int
    oa: int = -1

    def __post_init__(self):
        if not isinstance(self.subject_id, str) or not self.subject_id:
            raise ValidationError("subject_id must be a nonempty string")
        kl = check_grade(self.kl)
        object.__setattr__(self, "kl", kl)
        expected = derive_oa(kl)
        if self.oa == -1:
            object.__setattr__(self, "oa", expected)
        elif self.oa != expected:
            raise ValidationError(
                f"{self.subject_id}: OA label {self.oa} inconsistent with KL grade {kl}"
            )


def check_unique_ids(ids: Iterable[str]) -> None:
    seen = set()
    for sid in ids:
        if sid in seen:
            raise ValidationError(f"duplicate subject_id {sid!r}")
        seen.add(sid)


def as_kl_probs(p, tol: float = SIMPLEX_TOL) -> np.ndarray:
    """Validate KL probability vector(s) and renormalize them onto the simplex.

    Accepts a single length-5 vector or an ``(N, 5)`` array. Entries must lie
    in [0, 1] and each row must sum to 1 within ``tol``.
    """
    arr = np.array(p, dtype=np.float64)
    single = arr.ndim == 1
    rows = np.atleast_2d(arr)
    if rows.ndim != 2 or rows.shape[1] != N_GRADES:
        raise ValidationError(f"KL probability vectors must have 5 entries, got shape {arr.shape}")
    if not np.all(np.isfinite(rows)):
        raise ValidationError("KL probabilities must be finite")
    if np.any(rows < 0.0) or np.any(rows > 1.0):
        raise ValidationError("KL probabilities must lie in [0, 1]")
    sums = rows.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if bad.size:
        i = int(bad[0])
        raise ValidationError(f"KL probabilities of row {i} sum to {sums[i]!r}, not 1")
    rows = rows / sums[:, None]
    return rows[0] if single else rows


def oa_prob_from_kl(p) -> float | np.ndarray:
    """Coarse OA probability implied by the KL head: p2 + p3 + p4.

    Vectorized over rows when given an ``(N, 5)`` array.
    """
    probs = as_kl_probs(p)
    return probs[..., OA_THRESHOLD:].sum(axis=-1)


@dataclass(frozen=True)
class CohortSummary:
    grade_counts: tuple[int, ...]
    oa_negative: int
    oa_positive: int

    @property
    def n(self) -> int:
        return sum(self.grade_counts)


def summarize_cohort(records: Sequence[LabelRecord]) -> CohortSummary:
    if not records:
        raise ValidationError("empty cohort")
    check_unique_ids(r.subject_id for r in records)
    counts = Counter(r.kl for r in records)
    grade_counts = tuple(counts.get(g, 0) for g in range(N_GRADES))
    neg = sum(grade_counts[:OA_THRESHOLD])
    return CohortSummary(grade_counts, neg, sum(grade_counts) - neg)


def records_from_grades(grades: Iterable[int], prefix: str = "s") -> list[LabelRecord]:
    """Build records with generated ids ``{prefix}0000`` ... for a grade list."""
    return [LabelRecord(f"{prefix}{i:04d}", g) for i, g in enumerate(grades)]


def records_from_counts(counts: Sequence[int], prefix: str = "s") -> list[LabelRecord]:
    grades = [g for g, c in enumerate(counts) for _ in range(c)]
    return records_from_grades(grades, prefix)
