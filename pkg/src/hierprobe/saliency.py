"""Saliency/ROI overlap on 3-D voxel grids.

Volumes are plain ``(D, H, W)`` numpy arrays in C order; masks are boolean
arrays of the same shape. Top-q% selection is by voxel count,
``ceil(q/100 * V)``, with ties broken toward lower linear index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .exceptions import DegenerateInputError, ValidationError

TOP1_Q = 1
DEFAULT_QS = (5, 10)


def as_volume(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 3:
        raise ValidationError(f"volume must be 3-D (D, H, W), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("volume contains non-finite values")
    return arr


def as_mask(m) -> np.ndarray:
    arr = np.asarray(m)
    if arr.ndim != 3:
        raise ValidationError(f"mask must be 3-D (D, H, W), got shape {arr.shape}")
    if arr.dtype != bool:
        if np.any((arr != 0) & (arr != 1)):
            raise ValidationError("non-binary mask")
        arr = arr.astype(bool)
    return arr


def _pair(s, m) -> tuple[np.ndarray, np.ndarray]:
    s, m = as_volume(s), as_mask(m)
    if s.shape != m.shape:
        raise ValidationError(f"saliency shape {s.shape} != mask shape {m.shape}")
    return s, m


def normalize_saliency(v) -> np.ndarray:
    """Scale a non-negative saliency volume so its maximum is exactly 1."""
    v = as_volume(v)
    if np.any(v < 0):
        raise ValidationError("saliency must be non-negative (absolute gradients)")
    peak = v.max()
    if peak == 0:
        raise DegenerateInputError("degenerate saliency: all voxels are zero")
    return v / peak


def mass_at_roi(s, m) -> float:
    s, m = _pair(s, m)
    total = s.sum()
    if not total > 0:
        raise DegenerateInputError("saliency has zero total mass")
    return float(s[m].sum() / total)


def topq_count(q, n_voxels: int) -> int:
    """ceil(q/100 * V), computed exactly for decimal q (1% of 1000 is 10, not 11)."""
    if isinstance(q, bool) or not isinstance(q, (int, float, Fraction, np.integer, np.floating)):
        raise ValidationError(f"q must be a number, got {q!r}")
    frac = Fraction(str(q)) if isinstance(q, (float, np.floating)) else Fraction(q)
    if not 0 < frac <= 100:
        raise ValidationError(f"q must satisfy 0 < q <= 100, got {q}")
    return math.ceil(frac * n_voxels / 100)


def topq_mask(s, q) -> np.ndarray:
    s = as_volume(s)
    k = topq_count(q, s.size)
    flat = s.reshape(-1)
    # stable sort of negated values: descending value, ascending index within ties
    order = np.argsort(-flat, kind="stable")
    sel = np.zeros(flat.shape[0], dtype=bool)
    sel[order[:k]] = True
    return sel.reshape(s.shape)


def topfrac_at_roi(s, m, q=TOP1_Q) -> float:
    s, m = _pair(s, m)
    top = topq_mask(s, q)
    return float(np.count_nonzero(top & m) / np.count_nonzero(top))


def dice_at_q(s, m, q) -> float:
    s, m = _pair(s, m)
    if not m.any():
        raise ValidationError("mask has no foreground voxels")
    top = topq_mask(s, q)
    inter = np.count_nonzero(top & m)
    return float(2 * inter / (np.count_nonzero(top) + np.count_nonzero(m)))


@dataclass(frozen=True)
class OverlapReport:
    mass_roi: float
    top1_roi: float
    dice: dict = field(default_factory=dict)  # q -> Dice@q

    def to_dict(self) -> dict:
        return {
            "mass_roi": self.mass_roi,
            "top1_roi": self.top1_roi,
            "dice": {_qkey(q): v for q, v in self.dice.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OverlapReport":
        return cls(d["mass_roi"], d["top1_roi"], {_qparse(k): v for k, v in d["dice"].items()})


def _qkey(q) -> str:
    return str(int(q)) if float(q).is_integer() else repr(float(q))


def _qparse(k: str):
    v = float(k)
    return int(v) if v.is_integer() else v


def overlap_report(s, m, qs: Iterable = DEFAULT_QS) -> OverlapReport:
    s, m = _pair(s, m)
    if not m.any():
        raise ValidationError("mask has no foreground voxels")
    s = normalize_saliency(s)
    return OverlapReport(
        mass_roi=mass_at_roi(s, m),
        top1_roi=topfrac_at_roi(s, m, TOP1_Q),
        dice={q: dice_at_q(s, m, q) for q in qs},
    )


def mean_report(reports: Sequence[OverlapReport]) -> OverlapReport:
    """Unweighted mean across cases."""
    if not reports:
        raise ValidationError("no overlap reports to average")
    qs = list(reports[0].dice)
    return OverlapReport(
        mass_roi=float(np.mean([r.mass_roi for r in reports])),
        top1_roi=float(np.mean([r.top1_roi for r in reports])),
        dice={q: float(np.mean([r.dice[q] for r in reports])) for q in qs},
    )
