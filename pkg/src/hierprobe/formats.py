"""On-disk formats: label/prediction/embedding CSVs, raw volumes, checkpoints, reports.

Volumes are a raw little-endian payload (``f32`` for saliency and images,
``u8`` for masks) plus a JSON sidecar ``<file>.json`` holding
``{"dims": [D, H, W], "dtype": ..., "order": "C"}``.

Reports are JSON documents with sorted keys. Every report carries the
manifest of the run that produced it, and is accompanied by a plain-text
rendering next to it (same stem, ``.txt``).
"""

from __future__ import annotations

import base64
import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import ValidationError
from .geometry import EmbeddingMatrix
from .hierarchy import N_GRADES, LabelRecord, check_grade, check_unique_ids
from .metrics import PredictionSet
from .microtrain import MicroModel, TrainConfig, param_layout

LABEL_HEADER = ("subject_id", "kl")
PRED_HEADER = ("subject_id", "p_oa") + tuple(f"p_kl{k}" for k in range(N_GRADES))
VOLUME_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}
CHECKPOINT_FORMAT = "hierprobe-checkpoint/1"
REPORT_FORMAT = "hierprobe-report/1"


def _tool_version() -> str:
    from . import __version__

    return __version__


def _read_rows(path) -> list[list[str]]:
    text = Path(path).read_text(encoding="utf-8-sig")
    # csv handles both LF and CRLF when fed universal-newline text
    return list(csv.reader(text.splitlines()))


def _write_rows(path, header: Sequence[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _real(v: float) -> str:
    # shortest repr that round-trips exactly
    return repr(float(v))


# labels


def parse_labels_csv(path) -> list[LabelRecord]:
    rows = _read_rows(path)
    if not rows or tuple(c.strip() for c in rows[0]) != LABEL_HEADER:
        raise ValidationError(f"{path}: line 1: expected header 'subject_id,kl'")
    out: list[LabelRecord] = []
    seen: dict[str, int] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise ValidationError(f"{path}: line {lineno}: expected 2 fields, got {len(row)}")
        sid, raw = row[0].strip(), row[1].strip()
        if not sid:
            raise ValidationError(f"{path}: line {lineno}: empty subject_id")
        try:
            kl = int(raw)
        except ValueError:
            raise ValidationError(f"{path}: line {lineno}: non-integer KL grade {raw!r}") from None
        try:
            check_grade(kl)
        except ValidationError:
            raise ValidationError(f"{path}: line {lineno}: KL grade {kl} outside 0..4") from None
        if sid in seen:
            raise ValidationError(f"{path}: line {lineno}: duplicate subject_id {sid!r} (first at line {seen[sid]})")
        seen[sid] = lineno
        out.append(LabelRecord(sid, kl))
    if not out:
        raise ValidationError(f"{path}: empty cohort")
    return out


def write_labels_csv(path, records: Sequence[LabelRecord]) -> None:
    check_unique_ids([r.subject_id for r in records])
    _write_rows(path, LABEL_HEADER, [(r.subject_id, r.kl) for r in records])


# predictions


def parse_predictions_csv(path) -> PredictionSet:
    rows = _read_rows(path)
    header = tuple(c.strip() for c in rows[0]) if rows else ()
    if header == PRED_HEADER:
        has_kl = True
    elif header == PRED_HEADER[:2]:
        has_kl = False
    else:
        raise ValidationError(f"{path}: line 1: expected header {','.join(PRED_HEADER)} (KL columns optional)")
    ids, p_oa, p_kl = [], [], []
    seen = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ValidationError(f"{path}: row {lineno}: expected {len(header)} fields, got {len(row)}")
        sid = row[0].strip()
        if not sid or sid in seen:
            raise ValidationError(f"{path}: row {lineno}: empty or duplicate subject_id {sid!r}")
        seen.add(sid)
        try:
            vals = [float(c) for c in row[1:]]
        except ValueError:
            raise ValidationError(f"{path}: row {lineno}: non-numeric probability") from None
        if not all(math.isfinite(v) and 0.0 <= v <= 1.0 for v in vals):
            raise ValidationError(f"{path}: row {lineno}: probability outside [0, 1]")
        if has_kl:
            total = math.fsum(vals[1:])
            if abs(total - 1.0) > 1e-6:
                raise ValidationError(f"{path}: row {lineno}: p_kl sums to {total!r}, not 1")
            p_kl.append(vals[1:])
        ids.append(sid)
        p_oa.append(vals[0])
    if not ids:
        raise ValidationError(f"{path}: empty cohort")
    return PredictionSet(tuple(ids), np.array(p_oa), np.array(p_kl) if has_kl else None)


def write_predictions_csv(path, preds: PredictionSet) -> None:
    has_kl = preds.p_kl is not None
    header = PRED_HEADER if has_kl else PRED_HEADER[:2]
    rows = []
    for i, sid in enumerate(preds.subject_ids):
        row = [sid, _real(preds.p_oa[i])]
        if has_kl:
            row += [_real(v) for v in preds.p_kl[i]]
        rows.append(row)
    _write_rows(path, header, rows)


# embeddings


def write_embeddings_csv(path, emb: EmbeddingMatrix) -> None:
    header = ["subject_id"] + [f"z{j}" for j in range(emb.rows.shape[1])]
    _write_rows(path, header, [[sid] + [_real(v) for v in row] for sid, row in zip(emb.subject_ids, emb.rows)])


def parse_embeddings_csv(path) -> EmbeddingMatrix:
    rows = _read_rows(path)
    if not rows or rows[0][0].strip() != "subject_id" or len(rows[0]) < 2:
        raise ValidationError(f"{path}: line 1: expected header subject_id,z0,...")
    width = len(rows[0])
    ids, data = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != width:
            raise ValidationError(f"{path}: line {lineno}: expected {width} fields, got {len(row)}")
        try:
            data.append([float(c) for c in row[1:]])
        except ValueError:
            raise ValidationError(f"{path}: line {lineno}: non-numeric embedding value") from None
        ids.append(row[0].strip())
    return EmbeddingMatrix(tuple(ids), np.array(data, dtype=np.float64).reshape(len(ids), width - 1))


# volumes


def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def write_volume(path, vol, dtype: str = "f32") -> None:
    if dtype not in VOLUME_DTYPES:
        raise ValidationError(f"unknown dtype {dtype!r}")
    arr = np.asarray(vol)
    if arr.ndim != 3:
        raise ValidationError(f"volume must be 3-D, got shape {arr.shape}")
    if dtype == "u8":
        if arr.dtype != bool and np.any((arr != 0) & (arr != 1)):
            raise ValidationError("non-binary mask")
        arr = arr.astype(np.uint8)
    payload = np.ascontiguousarray(arr, dtype=VOLUME_DTYPES[dtype])
    Path(path).write_bytes(payload.tobytes(order="C"))
    meta = {"dims": list(arr.shape), "dtype": dtype, "order": "C"}
    sidecar_path(path).write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")


def read_volume(path) -> np.ndarray:
    """Load a volume; ``u8`` payloads come back as boolean masks."""
    try:
        meta = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValidationError(f"{path}: missing sidecar {sidecar_path(path).name}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed sidecar: {exc}") from None
    dtype = meta.get("dtype")
    if dtype not in VOLUME_DTYPES:
        raise ValidationError(f"{path}: unknown dtype {dtype!r}")
    if meta.get("order", "C") != "C":
        raise ValidationError(f"{path}: only C voxel order is supported")
    dims = meta.get("dims")
    if not isinstance(dims, list) or len(dims) != 3 or not all(isinstance(v, int) and v > 0 for v in dims):
        raise ValidationError(f"{path}: dims must be three positive integers")
    raw = Path(path).read_bytes()
    dt = VOLUME_DTYPES[dtype]
    expected = math.prod(dims) * dt.itemsize
    if len(raw) != expected:
        raise ValidationError(f"{path}: payload has {len(raw)} bytes, dims {dims} imply {expected}")
    arr = np.frombuffer(raw, dtype=dt).reshape(dims)
    if dtype == "u8":
        if np.any(arr > 1):
            raise ValidationError(f"{path}: non-binary mask")
        return arr.astype(bool)
    return arr.copy()


# checkpoints


def _encode_array(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def _decode_array(s: str, shape) -> np.ndarray:
    buf = base64.b64decode(s.encode("ascii"), validate=True)
    arr = np.frombuffer(buf, dtype="<f8")
    if arr.size != math.prod(shape):
        raise ValidationError(f"checkpoint array has {arr.size} values, expected shape {tuple(shape)}")
    return arr.reshape(shape).astype(np.float64)


def save_checkpoint(path, model: MicroModel, cfg: TrainConfig, extra: dict | None = None) -> None:
    params = {name: {"shape": list(shape), "data": _encode_array(model.params[name])}
              for name, shape in param_layout(model.d, model.h, model.setting)}
    doc = {
        "format": CHECKPOINT_FORMAT,
        "tool_version": _tool_version(),
        "input_dim": model.d,
        "hidden": model.h,
        "setting": model.setting,
        "config": cfg.to_dict(),
        "params": params,
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[MicroModel, TrainConfig]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"{path}: not a checkpoint document")
    d, h, setting = doc["input_dim"], doc["hidden"], doc["setting"]
    parts = []
    for name, shape in param_layout(d, h, setting):
        entry = doc["params"].get(name)
        if entry is None or tuple(entry["shape"]) != shape:
            raise ValidationError(f"{path}: parameter {name} missing or misshapen")
        parts.append(_decode_array(entry["data"], shape).ravel())
    model = MicroModel(d, h, setting, np.concatenate(parts))
    return model, TrainConfig(**doc["config"])


# manifests and reports


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


@dataclass(frozen=True)
class RunManifest:
    """Provenance for one CLI invocation.

    ``run_id`` hashes everything else, so identical inputs, flags and seed
    give an identical id.
    """

    command: str
    config: dict
    inputs: dict = field(default_factory=dict)  # role -> {"name", "sha256"}
    seed: int | None = None
    setting: str | None = None
    tool_version: str = field(default_factory=_tool_version)

    @property
    def run_id(self) -> str:
        body = asdict(self)
        return hashlib.sha256(_canonical(body).encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["run_id"] = self.run_id
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        d = dict(d)
        rid = d.pop("run_id", None)
        m = cls(**d)
        if rid is not None and rid != m.run_id:
            raise ValidationError("manifest run_id does not match its contents")
        return m


def describe_inputs(**paths) -> dict:
    return {role: {"name": Path(p).name, "sha256": file_digest(p)} for role, p in sorted(paths.items())}


def _plain(obj):
    """Convert numpy scalars/arrays and tuples into JSON-ready values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def emit_report(doc: dict, path) -> Path:
    """Write ``doc`` as JSON plus a ``.txt`` table; returns the JSON path."""
    manifest = doc.get("manifest")
    if manifest is None:
        raise ValidationError("report has no manifest")
    if isinstance(manifest, RunManifest):
        manifest = manifest.to_dict()
    body = _plain({**doc, "manifest": manifest, "format": REPORT_FORMAT})
    path = Path(path)
    try:
        text = json.dumps(body, sort_keys=True, indent=2, allow_nan=False)
    except ValueError:
        raise ValidationError("report contains non-finite numbers") from None
    path.write_text(text + "\n", encoding="utf-8")
    path.with_suffix(".txt").write_text(render_table(body), encoding="utf-8")
    return path


def load_report(path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != REPORT_FORMAT or "manifest" not in doc:
        raise ValidationError(f"{path}: not a report document")
    RunManifest.from_dict(doc["manifest"])
    return doc


def _flatten(obj, prefix=""):
    if isinstance(obj, dict):
        for k in sorted(obj):
            yield from _flatten(obj[k], f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(obj, list) and obj and isinstance(obj[0], (dict, list)):
        for i, v in enumerate(obj):
            yield from _flatten(v, f"{prefix}[{i}]")
    else:
        yield prefix, obj


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, list):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def render_table(doc: dict) -> str:
    rows = [(k, _fmt(v)) for k, v in _flatten(doc)]
    width = max(len(k) for k, _ in rows)
    return "".join(f"{k.ljust(width)}  {v}\n" for k, v in rows)
