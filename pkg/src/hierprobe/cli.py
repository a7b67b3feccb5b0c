"""Command-line entry point: ``hierprobe <subcommand> ...``.

Exit status is 0 on success and 2 on invalid input. Every subcommand prints
the seed it ran with.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import ValidationError
from .formats import (
    RunManifest,
    describe_inputs,
    emit_report,
    parse_embeddings_csv,
    parse_labels_csv,
    parse_predictions_csv,
    read_volume,
    save_checkpoint,
    write_embeddings_csv,
    write_labels_csv,
    write_predictions_csv,
    write_volume,
)
from .geometry import severity_axis_report
from .metrics import evaluate_kl, evaluate_oa
from .microtrain import (
    SETTINGS,
    TrainConfig,
    default_saliency_target,
    embed,
    input_saliency,
    predict,
    train,
)
from .saliency import DEFAULT_QS, mean_report, overlap_report
from .stats import DEFAULT_BOOTSTRAP, mcnemar_exact, paired_bootstrap
from .synth import SynthConfig, generate_cohort

MASK_FILE = "roi_mask.raw"


def _seed_line(seed) -> None:
    print(f"seed: {seed}")


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from None


# synth


def cmd_synth(args) -> None:
    raw = _load_json(args.config) if args.config else {}
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = SynthConfig.from_dict(raw)
    _seed_line(cfg.seed)
    cohort = generate_cohort(cfg)
    out = Path(args.out)
    (out / "volumes").mkdir(parents=True, exist_ok=True)
    for split in ("train", "test"):
        write_labels_csv(out / f"labels_{split}.csv", cohort.records(split))
    # clean grades for every subject, for ground-truth analyses
    write_labels_csv(out / "labels_true.csv", cohort.records(None, observed=False))
    for sid, vol in zip(cohort.subject_ids, cohort.volumes):
        write_volume(out / "volumes" / f"{sid}.raw", vol, "f32")
    write_volume(out / MASK_FILE, cohort.roi_mask, "u8")
    manifest = RunManifest("synth", cfg.to_dict(), seed=cfg.seed)
    doc = {
        "manifest": manifest.to_dict(),
        "subjects": {"train": len(cohort.indices("train")), "test": len(cohort.indices("test"))},
        "roi_fraction": float(cohort.roi_mask.mean()),
    }
    (out / "manifest.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {len(cohort.subject_ids)} subjects to {out}")


# train


def _load_split(data: Path, split: str):
    labels = parse_labels_csv(data / f"labels_{split}.csv")
    vols = [read_volume(data / "volumes" / f"{r.subject_id}.raw") for r in labels]
    shapes = {v.shape for v in vols}
    if len(shapes) != 1:
        raise ValidationError(f"{split} volumes have differing shapes: {sorted(shapes)}")
    x = np.stack([v.astype(np.float64).ravel() for v in vols])
    return labels, x, vols[0].shape


def cmd_train(args) -> None:
    cfg = TrainConfig(
        lambda_oa=args.lambda_oa,
        lambda_kl=args.lambda_kl,
        lr=args.lr,
        weight_decay=args.wd,
        epochs=args.epochs,
        batch_size=args.batch,
        hidden=args.hidden,
        seed=args.seed,
    )
    cfg.check_setting(args.setting)
    _seed_line(cfg.seed)
    data = Path(args.data)
    train_labels, x_train, dims = _load_split(data, "train")
    test_labels, x_test, test_dims = _load_split(data, "test")
    if test_dims != dims:
        raise ValidationError("train and test volumes differ in shape")
    result = train(x_train, train_labels, cfg, args.setting)
    model = result.model
    out = Path(args.out)
    (out / "saliency").mkdir(parents=True, exist_ok=True)
    ids = tuple(r.subject_id for r in test_labels)
    save_checkpoint(out / "checkpoint.json", model, cfg, {"volume_dims": list(dims)})
    write_predictions_csv(out / "preds.csv", predict(model, x_test, ids))
    write_embeddings_csv(out / "embeddings.csv", embed(model, x_test, ids))
    target = args.saliency_target or default_saliency_target(args.setting)
    for sid, x in zip(ids, x_test):
        write_volume(out / "saliency" / f"{sid}.raw", input_saliency(model, x, target).reshape(dims), "f32")
    inputs = describe_inputs(labels_train=data / "labels_train.csv", labels_test=data / "labels_test.csv")
    manifest = RunManifest("train", {**cfg.to_dict(), "saliency_target": target}, inputs, cfg.seed, args.setting)
    emit_report({"manifest": manifest, "loss_history": result.loss_history}, out / "train_report.json")
    print(f"final training loss {result.loss_history[-1]:.6g}; outputs in {out}")


# eval / compare


def cmd_eval(args) -> None:
    _seed_line(args.seed)
    preds = parse_predictions_csv(args.preds)
    labels = parse_labels_csv(args.labels)
    doc = {}
    if args.task in ("oa", "both"):
        doc["oa"] = evaluate_oa(preds, labels).to_dict()
    if args.task in ("kl", "both"):
        doc["kl"] = evaluate_kl(preds, labels).to_dict()
    inputs = describe_inputs(preds=args.preds, labels=args.labels)
    doc["manifest"] = RunManifest("eval", {"task": args.task}, inputs, args.seed)
    emit_report(doc, args.output)
    print(f"report written to {args.output}")


def cmd_compare(args) -> None:
    _seed_line(args.seed)
    labels = parse_labels_csv(args.labels)
    a = parse_predictions_csv(args.preds_a).aligned_to(labels)
    b = parse_predictions_csv(args.preds_b).aligned_to(labels)
    if args.task == "oa":
        truth = np.array([r.oa for r in labels])
        hits_a, hits_b = a.oa_pred() == truth, b.oa_pred() == truth
        boot_metrics = ("oa_auc", "oa_f1")
    else:
        truth = np.array([r.kl for r in labels])
        hits_a, hits_b = a.kl_pred() == truth, b.kl_pred() == truth
        boot_metrics = ("kl_auc", "kl_f1")
    mc = mcnemar_exact(hits_a, hits_b)
    doc = {
        "mcnemar": {"metric": f"{args.task}_acc", "b": mc.b, "c": mc.c, "p_value": mc.p_value,
                    "acc_a": float(hits_a.mean()), "acc_b": float(hits_b.mean())},
        "bootstrap": [
            paired_bootstrap(m, a, b, labels, args.bootstrap, args.seed, args.jobs).to_dict()
            for m in boot_metrics
        ],
    }
    inputs = describe_inputs(preds_a=args.preds_a, preds_b=args.preds_b, labels=args.labels)
    # n_jobs is excluded from the config: it cannot change the result
    doc["manifest"] = RunManifest("compare", {"task": args.task, "bootstrap": args.bootstrap}, inputs, args.seed)
    emit_report(doc, args.output)
    print(f"report written to {args.output}")


# geometry / saliency


def cmd_geometry(args) -> None:
    _seed_line(args.seed)
    emb = parse_embeddings_csv(args.embeddings)
    labels = parse_labels_csv(args.labels)
    report = severity_axis_report(emb, labels)
    inputs = describe_inputs(embeddings=args.embeddings, labels=args.labels)
    emit_report({"manifest": RunManifest("geometry", {}, inputs, args.seed), "geometry": report.to_dict()},
                args.output)
    print(f"report written to {args.output}")


def _parse_qs(text: str) -> tuple:
    try:
        qs = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ValidationError(f"invalid --q list {text!r}") from None
    if not qs or any(not 0 < q <= 100 for q in qs):
        raise ValidationError("--q values must lie in (0, 100]")
    return tuple(int(q) if q.is_integer() else q for q in qs)


def cmd_saliency(args) -> None:
    _seed_line(args.seed)
    qs = _parse_qs(args.q)
    mask = read_volume(args.mask)
    if mask.dtype != bool:
        raise ValidationError(f"{args.mask}: mask must be stored as u8")
    files = sorted(Path(args.sal).glob("*.raw"))
    if not files:
        raise ValidationError(f"no saliency volumes (*.raw) in {args.sal}")
    per_subject = {f.stem: overlap_report(read_volume(f), mask, qs) for f in files}
    config = {"q": list(qs), "roi_fraction": float(mask.mean())}
    inputs = describe_inputs(mask=args.mask)
    inputs["saliency"] = {"name": Path(args.sal).name, "n_files": len(files)}
    doc = {
        "manifest": RunManifest("saliency", config, inputs, args.seed),
        "per_subject": {k: v.to_dict() for k, v in per_subject.items()},
        "mean": mean_report(list(per_subject.values())).to_dict(),
    }
    emit_report(doc, args.output)
    print(f"report written to {args.output}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hierprobe", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic cohort")
    s.add_argument("--config", help="JSON file of synth settings (defaults if omitted)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    d = TrainConfig()
    s = sub.add_parser("train", help="train a micro model on a cohort directory")
    s.add_argument("--data", required=True)
    s.add_argument("--setting", required=True, choices=SETTINGS)
    s.add_argument("--lambda-oa", type=float, default=d.lambda_oa)
    s.add_argument("--lambda-kl", type=float, default=d.lambda_kl)
    s.add_argument("--epochs", type=int, default=d.epochs)
    s.add_argument("--lr", type=float, default=d.lr)
    s.add_argument("--wd", type=float, default=d.weight_decay)
    s.add_argument("--batch", type=int, default=d.batch_size)
    s.add_argument("--hidden", type=int, default=d.hidden)
    s.add_argument("--seed", type=int, default=d.seed)
    s.add_argument("--saliency-target", choices=("oa_pos", "kl_predicted"))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="metric report for one prediction file")
    s.add_argument("--preds", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--task", choices=("oa", "kl", "both"), default="both")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--seed", type=int, default=0, help="recorded only; evaluation is not random")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("compare", help="paired comparison of two prediction files")
    s.add_argument("--preds-a", required=True)
    s.add_argument("--preds-b", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--task", choices=("oa", "kl"), required=True)
    s.add_argument("--bootstrap", type=int, default=DEFAULT_BOOTSTRAP)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("-o", "--output", default="compare.json")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("geometry", help="severity-axis report for an embedding file")
    s.add_argument("--embeddings", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--seed", type=int, default=0, help="recorded only")
    s.set_defaults(func=cmd_geometry)

    s = sub.add_parser("saliency", help="saliency/ROI overlap for a directory of volumes")
    s.add_argument("--sal", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--q", default=",".join(str(q) for q in DEFAULT_QS))
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--seed", type=int, default=0, help="recorded only")
    s.set_defaults(func=cmd_saliency)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
