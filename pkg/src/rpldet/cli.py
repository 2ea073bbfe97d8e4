"""Command-line interface.

Subcommands: simulate, pretrain, selftrain, thresholds, nms, assign, eval.
Every parameter can come from an INI config file (sections [scene],
[train], [pretrain]) or from flags; flags win. RPLDET_CONFIG names a
default config file. Errors print one line to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional, Sequence

from . import dataio
from .assignment import partition
from .boxes import ClassCatalog, Dataset
from .detector import DetectorParams
from .evaluation import audit_pseudo_labels, mean_ap, pr_curve
from .nms import LONE_BOX_MEAN_IOU, group_nms
from .synthetic import SceneConfig, SyntheticDataset, generate_dataset, pretrain_source
from .thresholds import (DEFAULT_FALLBACK_THRESHOLD, DEFAULT_OBJECTNESS_FLOOR,
                         collect_foreground, estimate_thresholds)
from .training import TrainConfig, self_train

DATA_FILES = {
    "source": "source.jsonl",
    "target": "target.jsonl",
    "target_eval": "target_eval.jsonl",
    "heldout": "heldout.jsonl",
    "manifest": "manifest.json",
}


def _add_dataclass_flags(parser: argparse.ArgumentParser, cls, skip: Sequence[str] = ()) -> None:
    for f in fields(cls):
        if f.name in skip:
            continue
        py_type = {"int": int, "float": float, "str": str}.get(str(f.type))
        if py_type is None:
            continue  # booleans get dedicated flags
        parser.add_argument(f"--{f.name.replace('_', '-')}", type=py_type,
                            default=None, dest=f.name)


def _merged_config(cls, sections: dict, section_name: str, args: argparse.Namespace,
                   skip: Sequence[str] = ()):
    values = dataio.section_overrides(sections, section_name, cls)
    for f in fields(cls):
        if f.name in skip:
            continue
        flag_value = getattr(args, f.name, None)
        if flag_value is not None:
            values[f.name] = flag_value
    return cls(**values)


def _load_sections(args: argparse.Namespace) -> dict:
    path = getattr(args, "config", None) or os.environ.get("RPLDET_CONFIG")
    if not path:
        return {}
    return dataio.read_config_file(path)


def _load_bundle(data_dir: str | Path) -> SyntheticDataset:
    data_dir = Path(data_dir)
    manifest_path = data_dir / DATA_FILES["manifest"]
    if not manifest_path.exists():
        raise FileNotFoundError(f"missing manifest: {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    config = SceneConfig(**manifest)
    return SyntheticDataset(
        source_labeled=dataio.read_dataset_jsonl(data_dir / DATA_FILES["source"]),
        target_unlabeled=dataio.read_dataset_jsonl(data_dir / DATA_FILES["target"]),
        target_eval=dataio.read_dataset_jsonl(data_dir / DATA_FILES["target_eval"]),
        target_heldout=dataio.read_dataset_jsonl(data_dir / DATA_FILES["heldout"]),
        config=config,
    )


def _write_bundle(bundle: SyntheticDataset, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataio.write_dataset_jsonl(bundle.source_labeled, out_dir / DATA_FILES["source"])
    dataio.write_dataset_jsonl(bundle.target_unlabeled, out_dir / DATA_FILES["target"])
    dataio.write_dataset_jsonl(bundle.target_eval, out_dir / DATA_FILES["target_eval"])
    dataio.write_dataset_jsonl(bundle.target_heldout, out_dir / DATA_FILES["heldout"])
    manifest = json.dumps(bundle.config.to_json_dict(), sort_keys=True, indent=2) + "\n"
    (out_dir / DATA_FILES["manifest"]).write_text(manifest, encoding="utf-8")


def _stored_predictions(dataset: Dataset):
    """(frame_id, stored scored boxes) pairs: the file's own distributions."""
    return [(f.frame_id, list(f.boxes)) for f in dataset.frames]


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------

def _cmd_simulate(args: argparse.Namespace) -> int:
    sections = _load_sections(args)
    config = _merged_config(SceneConfig, sections, "scene", args)
    bundle = generate_dataset(config)
    _write_bundle(bundle, args.out)
    print(f"wrote dataset bundle to {args.out}")
    return 0


def _pretrain_settings(sections: dict, args: argparse.Namespace) -> tuple[int, float]:
    raw = sections.get("pretrain", {})
    epochs = int(raw.get("epochs", 30))
    lr = float(raw.get("learning_rate", 0.05))
    if getattr(args, "epochs", None) is not None:
        epochs = args.epochs
    if getattr(args, "learning_rate", None) is not None:
        lr = args.learning_rate
    return epochs, lr


def _cmd_pretrain(args: argparse.Namespace) -> int:
    sections = _load_sections(args)
    bundle = _load_bundle(args.data)
    epochs, lr = _pretrain_settings(sections, args)
    params = pretrain_source(bundle, epochs=epochs, learning_rate=lr)
    dataio.write_checkpoint(params, args.out)
    print(f"wrote source checkpoint to {args.out}")
    return 0


def _cmd_selftrain(args: argparse.Namespace) -> int:
    sections = _load_sections(args)
    config = _merged_config(TrainConfig, sections, "train", args,
                            skip=("use_cate", "use_lpla", "debug_trace"))
    overrides = {}
    if args.no_cate:
        overrides["use_cate"] = False
    if args.no_lpla:
        overrides["use_lpla"] = False
    if overrides:
        kwargs = {f.name: getattr(config, f.name) for f in fields(TrainConfig)}
        kwargs.update(overrides)
        config = TrainConfig(**kwargs)

    if args.data:
        bundle = _load_bundle(args.data)
    else:
        scene = _merged_config(SceneConfig, sections, "scene", args, skip=("rng_seed",))
        bundle = generate_dataset(scene)

    if args.params:
        params = dataio.read_checkpoint(args.params)
    else:
        epochs, lr = _pretrain_settings(sections, args)
        params = pretrain_source(bundle, epochs=epochs, learning_rate=lr)

    report = self_train(config, bundle.target_unlabeled, params,
                        eval_dataset=bundle.target_heldout,
                        audit_dataset=bundle.target_eval)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    catalog = bundle.target_unlabeled.catalog
    dataio.write_losses_csv(report, out_dir / "losses.csv")
    dataio.write_report_json(report, config, catalog, out_dir / "report.json")
    dataio.write_checkpoint(report.final_teacher, out_dir / "teacher.ckpt")
    dataio.write_checkpoint(report.final_student, out_dir / "student.ckpt")
    if report.eval_history:
        print(f"final teacher mAP@0.5: {report.final_map:.4f} "
              f"(iteration-0 baseline {report.initial_map:.4f})")
    print(f"wrote training report to {out_dir}")
    return 0


def _cmd_thresholds(args: argparse.Namespace) -> int:
    if bool(args.pred) == bool(args.detections):
        raise ValueError("provide exactly one of --pred or --detections")
    floor = args.objectness_floor if args.objectness_floor is not None else DEFAULT_OBJECTNESS_FLOOR
    fallback = args.fallback if args.fallback is not None else DEFAULT_FALLBACK_THRESHOLD
    if args.pred:
        dataset = dataio.read_dataset_jsonl(args.pred)
        catalog = dataset.catalog
        foreground = collect_foreground(dataset.frames, objectness_floor=floor)
    else:
        per_frame = dataio.read_detections_jsonl(args.detections)
        rows = [(d.class_id, d.score) for _, dets in per_frame for d in dets]
        if args.class_count is not None:
            n_classes = args.class_count
        else:
            n_classes = 1 + max((cid for cid, _ in rows), default=0)
        catalog = ClassCatalog(names=tuple(f"class_{i:02d}" for i in range(n_classes)))
        foreground = rows
    table = estimate_thresholds(foreground, catalog, fallback=fallback)
    doc = json.dumps(table.to_json_dict(catalog), sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(doc, encoding="utf-8")
    else:
        sys.stdout.write(doc)
    return 0


def _cmd_nms(args: argparse.Namespace) -> int:
    dataset = dataio.read_dataset_jsonl(args.pred)
    thr = args.iou_threshold if args.iou_threshold is not None else 0.5
    lone = args.lone_box_mean_iou if args.lone_box_mean_iou is not None else LONE_BOX_MEAN_IOU
    per_frame = [(fid, group_nms(boxes, thr, lone_box_mean_iou=lone))
                 for fid, boxes in _stored_predictions(dataset)]
    dataio.write_pseudo_boxes_jsonl(per_frame, args.out)
    print(f"wrote grouped NMS output to {args.out}")
    return 0


def _cmd_assign(args: argparse.Namespace) -> int:
    dataset = dataio.read_dataset_jsonl(args.pred)
    thr = args.iou_threshold if args.iou_threshold is not None else 0.5
    beta = args.beta if args.beta is not None else 0.85
    lone = args.lone_box_mean_iou if args.lone_box_mean_iou is not None else LONE_BOX_MEAN_IOU
    records = []
    for fid, boxes in _stored_predictions(dataset):
        labels = partition(group_nms(boxes, thr, lone_box_mean_iou=lone), beta)
        for pb, certain in ([(p, True) for p in labels.certain]
                            + [(p, False) for p in labels.uncertain]):
            records.append({
                "frame_id": fid,
                "class": pb.survivor.class_id,
                "box": [pb.survivor.box.x_min, pb.survivor.box.y_min,
                        pb.survivor.box.x_max, pb.survivor.box.y_max],
                "score": pb.survivor.score,
                "mean_iou": pb.mean_iou,
                "certain": certain,
            })
    dataio.write_labels_jsonl(records, args.out)
    print(f"wrote {len(records)} pseudo labels to {args.out}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    gt_dataset = dataio.read_dataset_jsonl(args.gt)
    if gt_dataset.ground_truth is None:
        raise ValueError(f"{args.gt} carries no ground truth")
    per_frame = dict(dataio.read_detections_jsonl(args.pred))
    predictions = [per_frame.get(f.frame_id, []) for f in gt_dataset.frames]
    thr = args.iou_threshold if args.iou_threshold is not None else 0.5
    catalog = gt_dataset.catalog

    result = mean_ap(predictions, gt_dataset.ground_truth, catalog, iou_threshold=thr)
    audit = audit_pseudo_labels(predictions, gt_dataset.ground_truth,
                                catalog.class_count, iou_threshold=thr)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ap_result.json").write_text(
        json.dumps(result.to_json_dict(catalog), sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    (out_dir / "bias_audit.json").write_text(
        json.dumps(audit.to_json_dict(catalog), sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    for cid in sorted(result.per_class_ap):
        recall, precision, scores = pr_curve(predictions, gt_dataset.ground_truth,
                                             cid, iou_threshold=thr)
        lines = ["recall,precision,score"]
        for r, p, s in zip(recall, precision, scores):
            lines.append(f"{r!r},{p!r},{s!r}")
        (out_dir / f"pr_{catalog.names[cid]}.csv").write_text(
            "\n".join(lines) + "\n", encoding="utf-8")
    print(f"mAP@{thr}: {result.map_50:.4f}; wrote evaluation to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rpldet",
        description="Source-free self-training detection pipeline on synthetic scenes.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic dataset bundle")
    p_sim.add_argument("--config", default=None)
    p_sim.add_argument("--out", required=True)
    _add_dataclass_flags(p_sim, SceneConfig)
    p_sim.set_defaults(func=_cmd_simulate)

    p_pre = sub.add_parser("pretrain", help="supervised pretraining on the source split")
    p_pre.add_argument("--config", default=None)
    p_pre.add_argument("--data", required=True)
    p_pre.add_argument("--out", required=True)
    p_pre.add_argument("--epochs", type=int, default=None)
    p_pre.add_argument("--learning-rate", type=float, default=None, dest="learning_rate")
    p_pre.set_defaults(func=_cmd_pretrain)

    p_tr = sub.add_parser("selftrain", help="run the self-training loop")
    p_tr.add_argument("--config", default=None)
    p_tr.add_argument("--data", default=None, help="dataset bundle directory (generated when omitted)")
    p_tr.add_argument("--params", default=None, help="source checkpoint (pretrained when omitted)")
    p_tr.add_argument("--out", required=True)
    p_tr.add_argument("--seed", type=int, default=None, dest="rng_seed")
    p_tr.add_argument("--no-cate", action="store_true",
                      help="fixed threshold instead of adaptive per-class thresholds")
    p_tr.add_argument("--no-lpla", action="store_true",
                      help="treat every pseudo label as certain")
    p_tr.add_argument("--epochs", type=int, default=None, help="pretraining epochs when --params omitted")
    p_tr.add_argument("--learning-rate", type=float, default=None, dest="learning_rate",
                      help="pretraining learning rate when --params omitted")
    _add_dataclass_flags(p_tr, TrainConfig, skip=("rng_seed",))
    p_tr.set_defaults(func=_cmd_selftrain)

    p_thr = sub.add_parser("thresholds", help="one-shot adaptive threshold estimate")
    p_thr.add_argument("--pred", default=None, help="frames JSONL with stored distributions")
    p_thr.add_argument("--detections", default=None, help="detections JSONL with explicit class/score")
    p_thr.add_argument("--objectness-floor", type=float, default=None, dest="objectness_floor")
    p_thr.add_argument("--fallback", type=float, default=None)
    p_thr.add_argument("--class-count", type=int, default=None, dest="class_count")
    p_thr.add_argument("--out", default=None)
    p_thr.set_defaults(func=_cmd_thresholds)

    p_nms = sub.add_parser("nms", help="grouped NMS over stored predictions")
    p_nms.add_argument("--pred", required=True)
    p_nms.add_argument("--out", required=True)
    p_nms.add_argument("--iou-threshold", type=float, default=None, dest="iou_threshold")
    p_nms.add_argument("--lone-box-mean-iou", type=float, default=None, dest="lone_box_mean_iou")
    p_nms.set_defaults(func=_cmd_nms)

    p_asn = sub.add_parser("assign", help="certain/uncertain pseudo-label assignment")
    p_asn.add_argument("--pred", required=True)
    p_asn.add_argument("--out", required=True)
    p_asn.add_argument("--beta", type=float, default=None)
    p_asn.add_argument("--iou-threshold", type=float, default=None, dest="iou_threshold")
    p_asn.add_argument("--lone-box-mean-iou", type=float, default=None, dest="lone_box_mean_iou")
    p_asn.set_defaults(func=_cmd_assign)

    p_ev = sub.add_parser("eval", help="AP / bias-audit evaluation of detections")
    p_ev.add_argument("--pred", required=True, help="detections JSONL")
    p_ev.add_argument("--gt", required=True, help="frames JSONL with ground truth")
    p_ev.add_argument("--out", required=True)
    p_ev.add_argument("--iou-threshold", type=float, default=None, dest="iou_threshold")
    p_ev.set_defaults(func=_cmd_eval)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError, json.JSONDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
