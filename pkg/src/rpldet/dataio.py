"""File formats: JSONL datasets and detections, checkpoints, config files.

Dataset files are JSON Lines with a header record carrying the catalog,
then one frame per line. Checkpoints are a JSON shape header line followed
by the concatenated parameter blocks as little-endian float64. Config
files are INI-style text whose sections mirror the config dataclasses.
All writers are deterministic: reruns produce byte-identical files.
"""

from __future__ import annotations

import configparser
import csv
import json
from dataclasses import fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .boxes import (BBox, ClassCatalog, ClassDistribution, Dataset, Frame,
                    GroundTruthBox, ScoredBox)
from .detector import DetectorParams
from .evaluation import Detection
from .nms import PseudoBox
from .training import TrainConfig, TrainReport


class SchemaError(ValueError):
    """A file does not match the expected record layout."""


# ---------------------------------------------------------------------------
# dataset JSONL
# ---------------------------------------------------------------------------

def _box_list(b: BBox) -> list[float]:
    return [b.x_min, b.y_min, b.x_max, b.y_max]


def _frame_record(frame: Frame, gt: Optional[Sequence[GroundTruthBox]]) -> dict:
    rec = {
        "frame_id": frame.frame_id,
        "proposals": [
            {
                "box": _box_list(sb.box),
                "objectness": sb.dist.objectness,
                "probs": [float(p) for p in sb.dist.probs],
                "features": [float(v) for v in frame.features[i]],
            }
            for i, sb in enumerate(frame.boxes)
        ],
    }
    if gt is not None:
        rec["gt"] = [{"class": g.class_id, "box": _box_list(g.box)} for g in gt]
    return rec


def write_dataset_jsonl(dataset: Dataset, path: str | Path, include_gt: bool = True) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        header = {"catalog": list(dataset.catalog.names)}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i, frame in enumerate(dataset.frames):
            gt = None
            if include_gt and dataset.ground_truth is not None:
                gt = dataset.ground_truth[i]
            fh.write(json.dumps(_frame_record(frame, gt), sort_keys=True) + "\n")


def read_dataset_jsonl(path: str | Path) -> Dataset:
    path = Path(path)
    frames = []
    gts = []
    any_gt = False
    with path.open("r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise SchemaError(f"{path}: empty file, expected a catalog header")
        header = json.loads(header_line)
        if "catalog" not in header:
            raise SchemaError(f"{path}: first record must carry the catalog")
        catalog = ClassCatalog(names=tuple(header["catalog"]))
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                frame_id = rec["frame_id"]
                boxes = []
                feats = []
                for i, p in enumerate(rec["proposals"]):
                    dist = ClassDistribution(probs=np.asarray(p["probs"], dtype=np.float64),
                                             objectness=float(p["objectness"]))
                    boxes.append(ScoredBox.from_dist(BBox(*p["box"]), dist, proposal_index=i))
                    feats.append(p["features"])
                n = len(boxes)
                features = (np.asarray(feats, dtype=np.float64)
                            if n else np.zeros((0, 0)))
                frames.append(Frame(frame_id=frame_id, boxes=tuple(boxes), features=features))
                if "gt" in rec:
                    any_gt = True
                    gts.append(tuple(GroundTruthBox(class_id=int(g["class"]), box=BBox(*g["box"]))
                                     for g in rec["gt"]))
                else:
                    gts.append(())
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"{path}:{lineno}: bad frame record: {exc}") from exc
    return Dataset(frames=tuple(frames), catalog=catalog,
                   ground_truth=tuple(gts) if any_gt else None)


# ---------------------------------------------------------------------------
# detections JSONL
# ---------------------------------------------------------------------------

def write_detections_jsonl(per_frame: Sequence[tuple[str, Sequence[Detection]]],
                           path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for frame_id, dets in per_frame:
            rec = {
                "frame_id": frame_id,
                "detections": [
                    {"class": d.class_id, "box": _box_list(d.box), "score": d.score}
                    for d in dets
                ],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_detections_jsonl(path: str | Path) -> list[tuple[str, list[Detection]]]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                dets = [Detection(class_id=int(d["class"]), box=BBox(*d["box"]),
                                  score=float(d["score"]))
                        for d in rec["detections"]]
                out.append((rec["frame_id"], dets))
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"{path}:{lineno}: bad detection record: {exc}") from exc
    return out


def write_pseudo_boxes_jsonl(per_frame: Sequence[tuple[str, Sequence[PseudoBox]]],
                             path: str | Path) -> None:
    """Grouped-NMS output: one record per frame with survivor groups."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for frame_id, pbs in per_frame:
            rec = {
                "frame_id": frame_id,
                "pseudo_boxes": [
                    {
                        "class": pb.survivor.class_id,
                        "box": _box_list(pb.survivor.box),
                        "score": pb.survivor.score,
                        "mean_iou": pb.mean_iou,
                        "suppressed": [
                            {"class": s.class_id, "box": _box_list(s.box), "score": s.score}
                            for s in pb.suppressed
                        ],
                    }
                    for pb in pbs
                ],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def write_labels_jsonl(records: Sequence[dict], path: str | Path) -> None:
    """Assignment output: one record per pseudo label."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_BLOCKS = ("W", "b", "w_obj", "b_obj", "V", "c")


def write_checkpoint(params: DetectorParams, path: str | Path) -> None:
    arrays = {name: np.atleast_1d(np.asarray(getattr(params, name), dtype=np.float64))
              for name in _BLOCKS}
    header = {"dtype": "<f8",
              "blocks": [[name, list(np.asarray(getattr(params, name)).shape)]
                         for name in _BLOCKS]}
    with Path(path).open("wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        for name in _BLOCKS:
            fh.write(arrays[name].astype("<f8").tobytes())


def read_checkpoint(path: str | Path) -> DetectorParams:
    with Path(path).open("rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
            blocks = header["blocks"]
            if header.get("dtype") != "<f8":
                raise SchemaError(f"{path}: unsupported dtype {header.get('dtype')}")
            raw = fh.read()
            values = {}
            offset = 0
            for name, shape in blocks:
                count = int(np.prod(shape)) if shape else 1
                arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
                offset += count * 8
                values[name] = arr.reshape(shape) if shape else float(arr[0])
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise SchemaError(f"{path}: bad checkpoint: {exc}") from exc
    return DetectorParams(**values)


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------

def _coerce(py_type, raw: str):
    if py_type is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if py_type is int:
        return int(raw)
    if py_type is float:
        return float(raw)
    return raw


def read_config_file(path: str | Path) -> dict[str, dict[str, str]]:
    """Raw sections of an INI config file (values kept as strings)."""
    parser = configparser.ConfigParser()
    read = parser.read(str(path))
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")
    return {section: dict(parser.items(section)) for section in parser.sections()}


def section_overrides(sections: dict[str, dict[str, str]], name: str, cls) -> dict:
    """Typed overrides of one section against a config dataclass."""
    raw = sections.get(name, {})
    by_name = {f.name: f for f in fields(cls)}
    out = {}
    for key, value in raw.items():
        if key not in by_name:
            raise SchemaError(f"unknown key {key!r} in [{name}] section")
        ftype = by_name[key].type
        py_type = {"int": int, "float": float, "bool": bool, "str": str}.get(str(ftype), str)
        try:
            out[key] = _coerce(py_type, value)
        except ValueError as exc:
            raise SchemaError(f"bad value for {key!r} in [{name}]: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# training reports
# ---------------------------------------------------------------------------

def write_losses_csv(report: TrainReport, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "l_cls", "l_reg", "l_u", "l_sl"])
        for it, row in report.losses:
            writer.writerow([it, repr(row.l_cls), repr(row.l_reg),
                             repr(row.l_u), repr(row.l_sl)])


def report_json_dict(report: TrainReport, config: TrainConfig,
                     catalog: ClassCatalog) -> dict:
    doc = {
        "config": {f.name: getattr(config, f.name) for f in fields(TrainConfig)},
        "initial_map": report.initial_map if report.eval_history else None,
        "final_map": report.final_map if report.eval_history else None,
        "eval_history": [
            {"iteration": it, **res.to_json_dict(catalog)} for it, res in report.eval_history
        ],
        "threshold_history": [
            {"iteration": it, **table.to_json_dict(catalog)} for it, table in report.threshold_history
        ],
        "audit_history": [
            {"iteration": it, **audit.to_json_dict(catalog)} for it, audit in report.audit_history
        ],
    }
    return doc


def write_report_json(report: TrainReport, config: TrainConfig, catalog: ClassCatalog,
                      path: str | Path) -> None:
    doc = report_json_dict(report, config, catalog)
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")
