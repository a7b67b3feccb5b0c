"""Paired comparison of two models on the same test subjects.

McNemar's exact test for paired correct/incorrect outcomes and a paired
subject-level bootstrap for everything else.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import _rng
from .exceptions import UndefinedMetricError, ValidationError
from .hierarchy import LabelRecord
from .metrics import METRICS, PredictionSet

DEFAULT_BOOTSTRAP = 10_000
MAX_REDRAWS = 100


class McNemarResult(NamedTuple):
    b: int  # A correct, B wrong
    c: int  # A wrong, B correct
    p_value: float


def mcnemar_exact(correct_a, correct_b) -> McNemarResult:
    """Exact two-sided McNemar test on paired correctness indicators."""
    a = np.asarray(correct_a).astype(bool)
    b_ = np.asarray(correct_b).astype(bool)
    if a.shape != b_.shape or a.ndim != 1:
        raise ValidationError("paired outcome sequences must be 1-D and of equal length")
    if a.size == 0:
        raise ValidationError("no paired outcomes")
    b = int(np.count_nonzero(a & ~b_))
    c = int(np.count_nonzero(~a & b_))
    return McNemarResult(b, c, mcnemar_p(b, c))


def mcnemar_p(b: int, c: int) -> float:
    n = b + c
    if n == 0:
        return 1.0
    # exact integer tail, one rounding at the end
    tail = sum(math.comb(n, i) for i in range(min(b, c) + 1))
    return min(1.0, 2 * tail / 2**n)


def replicate_seed(seed: int, index: int) -> int:
    return _rng.derive_seed(seed, index)


@dataclass(frozen=True)
class DiffResult:
    metric: str
    mean_diff: float
    ci_low: float
    ci_high: float
    p_value: float
    n_replicates_used: int
    n_discarded: int
    n_bootstrap: int
    seed: int
    ci_method: str = "percentile-2.5/97.5"
    p_value_method: str = "doubled-tail-floor-1/(m+1)"

    def to_dict(self) -> dict:
        return asdict(self)


def _metric_fn(metric: str | Callable) -> Callable:
    if callable(metric):
        return metric
    try:
        return METRICS[metric]
    except KeyError:
        raise ValidationError(f"unknown metric {metric!r}; choose from {sorted(METRICS)}") from None


def _replicate(fn, a, b, oa, kl, n, seed, index):
    """One bootstrap replicate; returns (diff or None, redraws used)."""
    rng = _rng.generator(seed, index)
    for _attempt in range(MAX_REDRAWS):
        idx = rng.integers(0, n, size=n)
        try:
            return fn(a.take(idx), oa[idx], kl[idx]) - fn(b.take(idx), oa[idx], kl[idx])
        except UndefinedMetricError:
            continue
    return None


def paired_bootstrap(
    metric: str | Callable,
    preds_a: PredictionSet,
    preds_b: PredictionSet,
    labels: Sequence[LabelRecord],
    n_bootstrap: int = DEFAULT_BOOTSTRAP,
    seed: int = 0,
    n_jobs: int = 1,
) -> DiffResult:
    """Paired bootstrap of ``metric(A) - metric(B)`` over resampled subjects.

    Replicate ``i`` draws from a generator seeded by ``replicate_seed(seed, i)``,
    so the result is bit-identical for any ``n_jobs``. A replicate whose
    resample leaves the metric undefined is redrawn (same generator) up to
    100 times before being discarded.
    """
    if n_bootstrap < 100:
        raise ValidationError("n_bootstrap must be at least 100")
    fn = _metric_fn(metric)
    a = preds_a.aligned_to(labels)
    b = preds_b.aligned_to(labels)
    oa = np.array([r.oa for r in labels], dtype=np.int64)
    kl = np.array([r.kl for r in labels], dtype=np.int64)
    n = len(labels)

    def run(indices):
        return [_replicate(fn, a, b, oa, kl, n, seed, i) for i in indices]

    if n_jobs <= 1:
        diffs = run(range(n_bootstrap))
    else:
        chunks = np.array_split(np.arange(n_bootstrap), n_jobs)
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(run, [c.tolist() for c in chunks]))
        diffs = [d for part in parts for d in part]

    kept = np.array([d for d in diffs if d is not None], dtype=np.float64)
    n_discarded = n_bootstrap - kept.shape[0]
    if kept.shape[0] == 0:
        raise UndefinedMetricError(f"metric {metric!r} undefined on every bootstrap replicate")
    m = kept.shape[0]
    lo, hi = np.percentile(kept, [2.5, 97.5])
    tail = min(np.count_nonzero(kept <= 0.0), np.count_nonzero(kept >= 0.0)) / m
    p = min(1.0, max(2.0 * tail, 1.0 / (m + 1)))
    return DiffResult(
        metric=metric if isinstance(metric, str) else getattr(metric, "__name__", "custom"),
        mean_diff=float(kept.mean()),
        ci_low=float(lo),
        ci_high=float(hi),
        p_value=float(p),
        n_replicates_used=m,
        n_discarded=n_discarded,
        n_bootstrap=n_bootstrap,
        seed=seed,
    )
