"""Synthetic cohorts with a known severity signal.

Each subject gets a KL grade, and a ``D x H x W`` volume of Gaussian noise in
which an ROI box is darkened by ``severity_gain * kl`` and a distractor box by
``distractor_gain * oa``. Training labels are then corrupted with
adjacent-grade noise; test labels stay clean unless ``noisy_test`` is set.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import _rng
from .exceptions import ValidationError
from .hierarchy import N_GRADES, LabelRecord, derive_oa_array

PAPER_TRAIN_COUNTS = (82, 46, 86, 111, 58)
DEFAULT_GRADE_PROBS = tuple(c / sum(PAPER_TRAIN_COUNTS) for c in PAPER_TRAIN_COUNTS)

Box = tuple[tuple[int, int], tuple[int, int], tuple[int, int]]  # half-open per axis

_LABEL_STREAM = 1 << 40


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 400  # training subjects
    n_test: int = 100
    dims: tuple[int, int, int] = (12, 12, 12)
    grade_probs: tuple[float, ...] = DEFAULT_GRADE_PROBS
    # small graded ROI, larger OA-only distractor: the distractor is the easier
    # coarse cue, so OA-only training can separate classes without the ROI
    roi_box: Box = ((5, 7), (2, 4), (2, 4))
    severity_gain: float = 0.5
    distractor_box: Box = ((3, 9), (6, 12), (6, 12))
    distractor_gain: float = 0.5
    noise_sd: float = 1.0
    label_flip_rate: float = 0.2
    noisy_test: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        object.__setattr__(self, "grade_probs", tuple(float(v) for v in self.grade_probs))
        object.__setattr__(self, "roi_box", _box(self.roi_box))
        object.__setattr__(self, "distractor_box", _box(self.distractor_box))
        if self.n_subjects < 0 or self.n_test < 0 or self.n_subjects + self.n_test == 0:
            raise ValidationError("need at least one subject")
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValidationError(f"invalid dims {self.dims}")
        p = np.array(self.grade_probs)
        if p.shape != (N_GRADES,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
            raise ValidationError("grade_probs must be 5 probabilities summing to 1")
        for name, box in (("roi_box", self.roi_box), ("distractor_box", self.distractor_box)):
            for (lo, hi), n in zip(box, self.dims):
                if not 0 <= lo < hi <= n:
                    raise ValidationError(f"{name} {box} does not fit inside dims {self.dims}")
        if _boxes_overlap(self.roi_box, self.distractor_box):
            raise ValidationError("roi_box and distractor_box must be disjoint")
        if not 0.0 <= self.label_flip_rate <= 1.0:
            raise ValidationError("label_flip_rate must lie in [0, 1]")
        if self.noise_sd < 0:
            raise ValidationError("noise_sd must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        d["grade_probs"] = list(self.grade_probs)
        d["roi_box"] = [list(a) for a in self.roi_box]
        d["distractor_box"] = [list(a) for a in self.distractor_box]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown synth config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("dims", "grade_probs"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _box(b) -> Box:
    try:
        box = tuple((int(lo), int(hi)) for lo, hi in b)
    except (TypeError, ValueError):
        raise ValidationError(f"invalid box {b!r}") from None
    if len(box) != 3:
        raise ValidationError(f"box needs 3 axes, got {b!r}")
    return box


def _boxes_overlap(a: Box, b: Box) -> bool:
    return all(lo1 < hi2 and lo2 < hi1 for (lo1, hi1), (lo2, hi2) in zip(a, b))


def box_mask(dims, box: Box) -> np.ndarray:
    m = np.zeros(dims, dtype=bool)
    (d0, d1), (h0, h1), (w0, w1) = box
    m[d0:d1, h0:h1, w0:w1] = True
    return m


@dataclass
class SynthCohort:
    subject_ids: tuple[str, ...]
    volumes: np.ndarray  # (N, D, H, W)
    roi_mask: np.ndarray  # (D, H, W) bool, shared anatomy
    kl_true: np.ndarray
    kl_observed: np.ndarray
    split: np.ndarray  # "train" / "test"
    config: SynthConfig = field(repr=False)

    @property
    def oa_observed(self) -> np.ndarray:
        return derive_oa_array(self.kl_observed)

    @property
    def oa_true(self) -> np.ndarray:
        return derive_oa_array(self.kl_true)

    def indices(self, split: str | None = None) -> np.ndarray:
        if split is None:
            return np.arange(len(self.subject_ids))
        return np.flatnonzero(self.split == split)

    def records(self, split: str | None = None, observed: bool = True) -> list[LabelRecord]:
        grades = self.kl_observed if observed else self.kl_true
        return [LabelRecord(self.subject_ids[i], int(grades[i])) for i in self.indices(split)]

    def inputs(self, split: str | None = None) -> np.ndarray:
        """Flattened volumes, one row per subject."""
        idx = self.indices(split)
        return self.volumes[idx].reshape(idx.shape[0], -1)

    def ids(self, split: str | None = None) -> tuple[str, ...]:
        return tuple(self.subject_ids[i] for i in self.indices(split))


def perturb_labels(kl_true: Sequence[int], rate: float, seed: int) -> np.ndarray:
    """Move each grade one step to a neighbour with probability ``rate``.

    Direction is uniform for grades 1..3 and forced inward at 0 and 4. Subject
    ``i`` uses its own generator ``derive_seed(seed, i)``.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValidationError("flip rate must lie in [0, 1]")
    grades = np.asarray(kl_true, dtype=np.int64)
    out = grades.copy()
    for i, g in enumerate(grades):
        rng = _rng.generator(seed, i)
        flip, up = rng.random(2)
        if flip >= rate:
            continue
        if g == 0:
            out[i] = 1
        elif g == N_GRADES - 1:
            out[i] = N_GRADES - 2
        else:
            out[i] = g + 1 if up < 0.5 else g - 1
    return out


def generate_cohort(cfg: SynthConfig) -> SynthCohort:
    n = cfg.n_subjects + cfg.n_test
    roi = box_mask(cfg.dims, cfg.roi_box)
    distractor = box_mask(cfg.dims, cfg.distractor_box)
    probs = np.array(cfg.grade_probs)
    probs = probs / probs.sum()
    kl_true = np.empty(n, dtype=np.int64)
    volumes = np.empty((n, *cfg.dims), dtype=np.float64)
    for i in range(n):
        rng = _rng.generator(cfg.seed, i)
        g = int(rng.choice(N_GRADES, p=probs))
        vol = rng.normal(0.0, cfg.noise_sd, size=cfg.dims)
        vol[roi] -= cfg.severity_gain * g
        vol[distractor] -= cfg.distractor_gain * float(g >= 2)
        kl_true[i] = g
        volumes[i] = vol
    split = np.array(["train"] * cfg.n_subjects + ["test"] * cfg.n_test)
    label_seed = _rng.derive_seed(cfg.seed, _LABEL_STREAM)
    noisy = perturb_labels(kl_true, cfg.label_flip_rate, label_seed)
    kl_observed = kl_true.copy()
    apply = np.ones(n, dtype=bool) if cfg.noisy_test else split == "train"
    kl_observed[apply] = noisy[apply]
    ids = tuple(f"sub{i:05d}" for i in range(n))
    return SynthCohort(ids, volumes, roi, kl_true, kl_observed, split, cfg)
