"""A micro shared-encoder model trained under single-OA, single-KL or dual supervision.

encoder: z = tanh(W_enc x + b_enc); OA head: one logit; KL head: five logits.
Everything is plain numpy with hand-written backpropagation and AdamW.
Parameters live in one flat float64 vector; named arrays are views into it.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import _rng
from .exceptions import TrainingDivergedError, ValidationError
from .geometry import EmbeddingMatrix
from .hierarchy import N_GRADES, LabelRecord, oa_prob_from_kl
from .metrics import PredictionSet

SETTINGS = ("single_oa", "single_kl", "dual")

# seed-stream indices, so adding/removing a head never shifts another stream
_INIT_STREAM = {"W_enc": 0, "w_oa": 1, "W_kl": 2}
_SHUFFLE_STREAM = 1 << 32


def _check_setting(setting: str) -> str:
    if setting not in SETTINGS:
        raise ValidationError(f"unknown setting {setting!r}; choose from {SETTINGS}")
    return setting


def has_oa_head(setting: str) -> bool:
    return setting in ("single_oa", "dual")


def has_kl_head(setting: str) -> bool:
    return setting in ("single_kl", "dual")


def param_layout(d: int, h: int, setting: str) -> list[tuple[str, tuple[int, ...]]]:
    layout = [("W_enc", (h, d)), ("b_enc", (h,))]
    if has_oa_head(setting):
        layout += [("w_oa", (1, h)), ("b_oa", (1,))]
    if has_kl_head(setting):
        layout += [("W_kl", (N_GRADES, h)), ("b_kl", (N_GRADES,))]
    return layout


class MicroModel:
    def __init__(self, d: int, h: int, setting: str, theta: np.ndarray | None = None):
        if d < 1 or h < 1:
            raise ValidationError("input and hidden sizes must be >= 1")
        self.d, self.h, self.setting = int(d), int(h), _check_setting(setting)
        self.layout = param_layout(self.d, self.h, setting)
        size = sum(int(np.prod(shape)) for _, shape in self.layout)
        if theta is None:
            theta = np.zeros(size)
        theta = np.array(theta, dtype=np.float64).reshape(-1)
        if theta.shape[0] != size:
            raise ValidationError(f"expected {size} parameters, got {theta.shape[0]}")
        self.theta = theta
        self.params = self._views(theta)

    def _views(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        out, pos = {}, 0
        for name, shape in self.layout:
            n = int(np.prod(shape))
            out[name] = flat[pos:pos + n].reshape(shape)
            pos += n
        return out

    def unflatten(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        return self._views(flat)

    def decay_mask(self) -> np.ndarray:
        """1 for weight matrices, 0 for biases (no decay on biases)."""
        mask = np.zeros_like(self.theta)
        for name, view in self._views(mask).items():
            if not name.startswith("b_"):
                view[...] = 1.0
        return mask

    @property
    def has_oa(self) -> bool:
        return has_oa_head(self.setting)

    @property
    def has_kl(self) -> bool:
        return has_kl_head(self.setting)

    def copy(self) -> "MicroModel":
        return MicroModel(self.d, self.h, self.setting, self.theta.copy())


def init_model(d: int, h: int, setting: str, seed: int = 0) -> MicroModel:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero."""
    model = MicroModel(d, h, setting)
    for name, arr in model.params.items():
        if name.startswith("b_"):
            continue
        bound = 1.0 / np.sqrt(arr.shape[1])
        rng = _rng.generator(seed, _INIT_STREAM[name])
        arr[...] = rng.uniform(-bound, bound, size=arr.shape)
    return model


def _as_batch(model: MicroModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    x2 = x.reshape(1, -1) if x.ndim == 1 else x
    if x2.ndim != 2 or x2.shape[1] != model.d:
        raise ValidationError(f"input dimension {x.shape} does not match model d={model.d}")
    if not np.all(np.isfinite(x2)):
        raise ValidationError("inputs must be finite")
    return x2


def forward(model: MicroModel, x):
    """Return ``(z, oa_logit, kl_logits)``; absent heads give ``None``.

    ``x`` may be a single d-vector or an ``(N, d)`` batch.
    """
    xb = _as_batch(model, x)
    p = model.params
    z = np.tanh(xb @ p["W_enc"].T + p["b_enc"])
    oa = (z @ p["w_oa"].T)[:, 0] + p["b_oa"][0] if model.has_oa else None
    kl = z @ p["W_kl"].T + p["b_kl"] if model.has_kl else None
    if np.asarray(x).ndim == 1:
        return z[0], None if oa is None else float(oa[0]), None if kl is None else kl[0]
    return z, oa, kl


@dataclass(frozen=True)
class TrainConfig:
    lambda_oa: float = 1.0
    lambda_kl: float = 1.0
    lr: float = 1e-4
    weight_decay: float = 1e-4
    epochs: int = 100
    batch_size: int = 2
    hidden: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValidationError("lr must be positive")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.batch_size < 1 or self.hidden < 1:
            raise ValidationError("batch_size and hidden must be >= 1")
        if self.lambda_oa < 0 or self.lambda_kl < 0 or self.weight_decay < 0:
            raise ValidationError("loss weights and weight decay must be non-negative")

    def check_setting(self, setting: str) -> None:
        active = {"single_oa": self.lambda_oa, "single_kl": self.lambda_kl,
                  "dual": max(self.lambda_oa, self.lambda_kl)}[_check_setting(setting)]
        if active <= 0:
            raise ValidationError(f"all loss weights are zero for setting {setting}")

    def to_dict(self) -> dict:
        return asdict(self)


def bce_with_logits(logit, y):
    logit = np.asarray(logit, dtype=np.float64)
    return np.maximum(logit, 0.0) - logit * y + np.log1p(np.exp(-np.abs(logit)))


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits) -> np.ndarray:
    return np.exp(_log_softmax(np.asarray(logits, dtype=np.float64)))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def cross_entropy(logits, grade):
    logits = np.asarray(logits, dtype=np.float64)
    ls = _log_softmax(np.atleast_2d(logits))
    g = np.atleast_1d(np.asarray(grade, dtype=np.int64))
    out = -ls[np.arange(ls.shape[0]), g]
    return out if logits.ndim == 2 else float(out[0])


def compute_loss(oa_logit, kl_logits, label: LabelRecord, cfg: TrainConfig, setting: str) -> float:
    """Per-sample loss: lambda_OA * BCE(OA) + lambda_KL * CE(KL), active terms only."""
    _check_setting(setting)
    total = 0.0
    if has_oa_head(setting):
        if oa_logit is None:
            raise ValidationError(f"setting {setting} needs an OA logit")
        total += cfg.lambda_oa * float(bce_with_logits(oa_logit, label.oa))
    if has_kl_head(setting):
        if kl_logits is None:
            raise ValidationError(f"setting {setting} needs KL logits")
        total += cfg.lambda_kl * cross_entropy(kl_logits, label.kl)
    return total


def _labels(batch_labels) -> tuple[np.ndarray, np.ndarray]:
    oa = np.array([r.oa for r in batch_labels], dtype=np.float64)
    kl = np.array([r.kl for r in batch_labels], dtype=np.int64)
    return oa, kl


def _loss_and_grad(model: MicroModel, x: np.ndarray, oa: np.ndarray, kl: np.ndarray,
                   cfg: TrainConfig) -> tuple[float, np.ndarray]:
    p = model.params
    n = x.shape[0]
    z = np.tanh(x @ p["W_enc"].T + p["b_enc"])
    grad = np.zeros_like(model.theta)
    g = model.unflatten(grad)
    dz = np.zeros_like(z)
    loss = 0.0
    if model.has_oa:
        logit = (z @ p["w_oa"].T)[:, 0] + p["b_oa"][0]
        loss += cfg.lambda_oa * float(bce_with_logits(logit, oa).mean())
        d_logit = cfg.lambda_oa * (sigmoid(logit) - oa) / n
        g["w_oa"][...] = d_logit @ z
        g["b_oa"][...] = d_logit.sum()
        dz += np.outer(d_logit, p["w_oa"][0])
    if model.has_kl:
        logits = z @ p["W_kl"].T + p["b_kl"]
        ls = _log_softmax(logits)
        loss += cfg.lambda_kl * float(-ls[np.arange(n), kl].mean())
        d_logits = np.exp(ls)
        d_logits[np.arange(n), kl] -= 1.0
        d_logits *= cfg.lambda_kl / n
        g["W_kl"][...] = d_logits.T @ z
        g["b_kl"][...] = d_logits.sum(axis=0)
        dz += d_logits @ p["W_kl"]
    da = dz * (1.0 - z * z)
    g["W_enc"][...] = da.T @ x
    g["b_enc"][...] = da.sum(axis=0)
    return loss, grad


def batch_loss(model: MicroModel, xs, labels: Sequence[LabelRecord], cfg: TrainConfig) -> float:
    x = _as_batch(model, xs)
    oa, kl = _labels(labels)
    return _loss_and_grad(model, x, oa, kl, cfg)[0]


def compute_gradients(model: MicroModel, xs, labels: Sequence[LabelRecord],
                      cfg: TrainConfig) -> dict[str, np.ndarray]:
    """Exact gradient of the mean batch loss, keyed by parameter name."""
    if len(labels) == 0:
        raise ValidationError("empty batch")
    x = _as_batch(model, xs)
    if x.shape[0] != len(labels):
        raise ValidationError("inputs and labels differ in length")
    oa, kl = _labels(labels)
    _, grad = _loss_and_grad(model, x, oa, kl, cfg)
    return {k: v.copy() for k, v in model.unflatten(grad).items()}


@dataclass
class AdamWState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, theta: np.ndarray) -> "AdamWState":
        return cls(np.zeros_like(theta), np.zeros_like(theta))


def adamw_step(theta: np.ndarray, grad: np.ndarray, state: AdamWState, lr: float,
               weight_decay: float, decay_mask: np.ndarray | float = 1.0) -> np.ndarray:
    """In-place decoupled-weight-decay Adam update; returns ``theta``.

    theta <- theta - lr * mhat / (sqrt(vhat) + eps) - lr * wd * theta
    """
    if theta.shape != grad.shape or state.m.shape != theta.shape:
        raise ValidationError("parameter, gradient and moment shapes differ")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1 - b1 ** state.step
    bc2 = 1 - b2 ** state.step
    m, v = state.m, state.v
    m *= b1
    m += (1 - b1) * grad
    v *= b2
    buf = grad * grad
    buf *= 1 - b2
    v += buf
    # buf <- sqrt(vhat) + eps ; then the Adam update lr * mhat / buf
    np.divide(v, bc2, out=buf)
    np.sqrt(buf, out=buf)
    buf += state.eps
    np.divide(m, buf, out=buf)
    buf *= lr / bc1
    if weight_decay:
        theta -= (lr * weight_decay) * decay_mask * theta
    theta -= buf
    return theta


@dataclass
class TrainResult:
    model: MicroModel
    loss_history: list[float] = field(default_factory=list)
    config: TrainConfig | None = None


def train(xs, labels: Sequence[LabelRecord], cfg: TrainConfig, setting: str) -> TrainResult:
    """Train a fresh model on ``(xs, labels)``.

    Minibatches follow a per-epoch permutation drawn from
    ``derive_seed(seed, 2**32 + epoch)``; the final partial batch is kept.
    """
    cfg.check_setting(setting)
    x = np.asarray(xs, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValidationError("training inputs must be a nonempty (N, d) array")
    if x.shape[0] != len(labels):
        raise ValidationError("inputs and labels differ in length")
    if not np.all(np.isfinite(x)):
        raise ValidationError("training inputs must be finite")
    oa, kl = _labels(labels)
    n = x.shape[0]
    model = init_model(x.shape[1], cfg.hidden, setting, cfg.seed)
    state = AdamWState.zeros_like(model.theta)
    mask = model.decay_mask()
    history = []
    for epoch in range(cfg.epochs):
        order = _rng.generator(cfg.seed, _SHUFFLE_STREAM + epoch).permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grad = _loss_and_grad(model, x[idx], oa[idx], kl[idx], cfg)
            total += loss * idx.shape[0]
            adamw_step(model.theta, grad, state, cfg.lr, cfg.weight_decay, mask)
        epoch_loss = total / n
        if not np.isfinite(epoch_loss) or not np.all(np.isfinite(model.theta)):
            raise TrainingDivergedError(f"non-finite loss at epoch {epoch + 1}")
        history.append(epoch_loss)
    return TrainResult(model, history, cfg)


def embed(model: MicroModel, xs, subject_ids: Sequence[str] | None = None) -> EmbeddingMatrix:
    x = _as_batch(model, xs)
    z, _, _ = forward(model, x)
    ids = tuple(subject_ids) if subject_ids is not None else tuple(f"s{i:04d}" for i in range(x.shape[0]))
    return EmbeddingMatrix(ids, z)


def input_saliency(model: MicroModel, x, target: str = "kl_predicted") -> np.ndarray:
    """|d logit_target / d x| for one input vector.

    ``target`` is ``"oa_pos"`` (the OA logit) or ``"kl_predicted"`` (the logit
    of the argmax KL class).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError("input_saliency takes a single input vector")
    z, _, kl = forward(model, x)
    p = model.params
    if target == "oa_pos":
        if not model.has_oa:
            raise ValidationError("model has no OA head")
        head = p["w_oa"][0]
    elif target == "kl_predicted":
        if not model.has_kl:
            raise ValidationError("model has no KL head")
        head = p["W_kl"][int(np.argmax(kl))]
    else:
        raise ValidationError(f"unknown saliency target {target!r}")
    return np.abs(p["W_enc"].T @ (head * (1.0 - z * z)))


def default_saliency_target(setting: str) -> str:
    return "kl_predicted" if has_kl_head(setting) else "oa_pos"


def predict(model: MicroModel, xs, subject_ids: Sequence[str] | None = None) -> PredictionSet:
    """Head probabilities; without an OA head p_oa is the KL-implied p2+p3+p4."""
    x = _as_batch(model, xs)
    _, oa, kl = forward(model, x)
    ids = tuple(subject_ids) if subject_ids is not None else tuple(f"s{i:04d}" for i in range(x.shape[0]))
    p_kl = softmax(kl) if kl is not None else None
    p_oa = sigmoid(oa) if oa is not None else oa_prob_from_kl(p_kl)
    return PredictionSet(ids, p_oa, p_kl)
