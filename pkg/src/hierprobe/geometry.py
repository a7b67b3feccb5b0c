"""Severity-axis geometry of penultimate-layer embeddings.

PCA first component, Spearman alignment of PC1 with KL/OA labels, a 1-D
logistic OA probe on PC1, and the ordering of adjacent KL-centroid distances.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .exceptions import DegenerateInputError, UndefinedMetricError, ValidationError
from .hierarchy import LabelRecord, check_grade, check_unique_ids
from .metrics import average_ranks, roc_auc


@dataclass(frozen=True)
class EmbeddingMatrix:
    subject_ids: tuple[str, ...]
    rows: np.ndarray  # (N, D)

    def __post_init__(self):
        ids = tuple(self.subject_ids)
        rows = np.array(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise ValidationError("embedding rows must form an (N, D) matrix")
        if rows.shape[0] != len(ids):
            raise ValidationError("embedding rows and subject_ids differ in length")
        if rows.shape[0] < 2:
            raise ValidationError("need at least two embeddings")
        if not np.all(np.isfinite(rows)):
            raise ValidationError("embeddings must be finite")
        check_unique_ids(ids)
        object.__setattr__(self, "subject_ids", ids)
        object.__setattr__(self, "rows", rows)

    @property
    def shape(self):
        return self.rows.shape


class PC1(NamedTuple):
    evr: float
    scores: np.ndarray
    loading: np.ndarray


def _as_rows(emb) -> np.ndarray:
    rows = emb.rows if isinstance(emb, EmbeddingMatrix) else np.asarray(emb, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 2:
        raise ValidationError("need an (N, D) matrix with N >= 2")
    return rows


def pca_first_component(emb) -> PC1:
    """Leading principal axis of the sample covariance (N-1 denominator).

    The loading is sign-fixed so its largest-magnitude entry is positive.
    """
    x = _as_rows(emb)
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (x.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals, 0.0, None)
    total = evals.sum()
    if not total > 0:
        raise DegenerateInputError("degenerate embedding: zero total variance")
    loading = evecs[:, -1].copy()
    if loading[np.argmax(np.abs(loading))] < 0:
        loading = -loading
    return PC1(float(evals[-1] / total), centered @ loading, loading)


def spearman(x, y) -> float:
    """Spearman rank correlation with average ranks for ties."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise ValidationError("spearman needs two equal-length 1-D sequences")
    if x.shape[0] < 2:
        raise ValidationError("spearman needs at least two observations")
    rx = average_ranks(x)
    ry = average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    sxx = rx @ rx
    syy = ry @ ry
    if sxx == 0 or syy == 0:
        raise UndefinedMetricError("undefined correlation: constant sequence")
    r = (rx @ ry) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def fit_logistic_1d(scores, labels, tol: float = 1e-8, max_iter: int = 100):
    """Fit P(y=1) = sigmoid(a + b*s) by damped Newton.

    Scores are standardized internally; the returned ``(intercept, slope)``
    refer to the original score scale. Stops when the gradient norm of the
    mean log-likelihood drops to ``tol`` or after ``max_iter`` iterations
    (separable data never converges; the slope keeps growing).
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    mu, sd = s.mean(), s.std()
    if sd == 0:
        # no information: only the intercept moves
        p = y.mean()
        return float(np.log(p / (1 - p))), 0.0
    u = (s - mu) / sd
    design = np.column_stack([np.ones_like(u), u])
    w = np.zeros(2)

    def nll(w):
        eta = design @ w
        return float(np.mean(np.logaddexp(0.0, eta) - y * eta))

    cur = nll(w)
    for _ in range(max_iter):
        eta = design @ w
        p = 0.5 * (1.0 + np.tanh(0.5 * eta))
        grad = design.T @ (p - y) / len(y)
        if np.linalg.norm(grad) <= tol:
            break
        hess = (design * (p * (1 - p))[:, None]).T @ design / len(y)
        hess += 1e-12 * np.eye(2)
        step = np.linalg.solve(hess, grad)
        t = 1.0
        while t > 1e-10:
            cand = w - t * step
            new = nll(cand)
            if new <= cur:
                break
            t *= 0.5
        else:
            break
        w, cur = cand, new
    slope = w[1] / sd
    return float(w[0] - slope * mu), float(slope)


def probe_auroc(scores, oa) -> float:
    """AUROC of a 1-D logistic OA probe fit and scored on the same subjects.

    The AUC is taken on the fitted linear predictor, which ranks subjects
    exactly as the fitted probabilities do but cannot saturate to ties.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(oa).astype(np.int64)
    if s.shape != y.shape or s.ndim != 1:
        raise ValidationError("scores and labels must be equal-length 1-D sequences")
    if y.min() == y.max():
        raise UndefinedMetricError("probe needs both OA classes")
    intercept, slope = fit_logistic_1d(s, y)
    return roc_auc(intercept + slope * s, y)


class CentroidOrder(NamedTuple):
    grades: tuple[int, ...]
    adj_distances: tuple[float, ...]
    rho: float


def centroid_monotonicity(emb, grades) -> CentroidOrder:
    """Distances between consecutive present KL-grade centroids and their rank trend."""
    x = _as_rows(emb)
    g = np.array([check_grade(v) for v in grades], dtype=np.int64)
    if g.shape[0] != x.shape[0]:
        raise ValidationError("grades and embeddings differ in length")
    present = sorted(set(g.tolist()))
    if len(present) < 3:
        raise ValidationError(f"need at least 3 KL grades present, got {present}")
    centroids = np.stack([x[g == k].mean(axis=0) for k in present])
    d = np.linalg.norm(np.diff(centroids, axis=0), axis=1)
    # equal spacing has no trend; report 0 rather than an undefined correlation
    rho = 0.0 if np.all(d == d[0]) else spearman(np.arange(d.shape[0]), d)
    return CentroidOrder(tuple(present), tuple(float(v) for v in d), rho)


@dataclass(frozen=True)
class SeverityAxisReport:
    evr_pc1: float
    rho_pc1_kl: float
    rho_pc1_oa: float
    auroc_oa_probe: float
    adj_distances: tuple[float, ...]
    rho_k_dadj: float
    classes_present: tuple[int, ...]
    n_subjects: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adj_distances"] = list(self.adj_distances)
        d["classes_present"] = list(self.classes_present)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SeverityAxisReport":
        d = dict(d)
        d["adj_distances"] = tuple(d["adj_distances"])
        d["classes_present"] = tuple(d["classes_present"])
        return cls(**d)


def severity_axis_report(emb: EmbeddingMatrix, labels: Sequence[LabelRecord]) -> SeverityAxisReport:
    by_id = {r.subject_id: r for r in labels}
    if len(by_id) != len(labels) or set(by_id) != set(emb.subject_ids):
        raise ValidationError("embedding subjects do not match label subjects")
    ordered = [by_id[s] for s in emb.subject_ids]
    kl = np.array([r.kl for r in ordered], dtype=np.int64)
    oa = np.array([r.oa for r in ordered], dtype=np.int64)
    pc = pca_first_component(emb)
    order = centroid_monotonicity(emb, kl)
    return SeverityAxisReport(
        evr_pc1=pc.evr,
        rho_pc1_kl=spearman(pc.scores, kl),
        rho_pc1_oa=spearman(pc.scores, oa),
        auroc_oa_probe=probe_auroc(pc.scores, oa),
        adj_distances=order.adj_distances,
        rho_k_dadj=order.rho,
        classes_present=order.grades,
        n_subjects=len(ordered),
    )
