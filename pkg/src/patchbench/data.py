"""Dataset ingestion and run-record persistence.

The single-object filter keeps annotated images with exactly one
sufficiently large object and emits a JSON-lines manifest. Run records
persist per-image stage images (inspectable 8-bit PNG plus a raw float32
sidecar for exact re-evaluation), per-image metadata, and the aggregate
report under one self-contained directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage

from .core import Detection, Image, PatchBenchError

STAGE_FILES = ("original", "patched", "sac", "inpainted", "diffused")


class FormatError(PatchBenchError):
    """An annotation or manifest file does not parse."""


class IntegrityError(PatchBenchError):
    """A run directory is missing referenced files."""


@dataclass(frozen=True)
class ManifestEntry:
    """One dataset image: id, file path, class label, and object box."""

    image_id: str
    path: str
    class_id: int
    bbox: tuple[int, int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "image_id", str(self.image_id))
        object.__setattr__(self, "path", str(self.path))
        object.__setattr__(self, "class_id", int(self.class_id))
        object.__setattr__(self, "bbox", tuple(int(v) for v in self.bbox))


def filter_single_object(annotation_path, min_area_fraction: float = 0.01,
                         images_dir: str | None = None) -> list[ManifestEntry]:
    """Keep images whose annotations contain exactly one salient object.

    "Salient" means the annotation covers at least ``min_area_fraction``
    of the image area; smaller annotations are ignored entirely. Output
    order follows the annotation file's image order.
    """
    try:
        with open(annotation_path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(
            f"{annotation_path}: invalid JSON at line {exc.lineno}, column {exc.colno}: "
            f"{exc.msg}"
        ) from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{annotation_path}: top level must be an object")
    for key in ("images", "annotations"):
        if key not in doc or not isinstance(doc[key], list):
            raise FormatError(f"{annotation_path}: missing or non-list {key!r} section")

    images = {}
    order = []
    for index, row in enumerate(doc["images"]):
        where = f"{annotation_path}: images[{index}]"
        if not isinstance(row, dict):
            raise FormatError(f"{where} must be an object")
        for key in ("id", "file_name", "height", "width"):
            if key not in row:
                raise FormatError(f"{where}: missing key {key!r}")
        images[row["id"]] = row
        order.append(row["id"])

    salient_by_image: dict = {}
    for index, row in enumerate(doc["annotations"]):
        where = f"{annotation_path}: annotations[{index}]"
        if not isinstance(row, dict):
            raise FormatError(f"{where} must be an object")
        for key in ("image_id", "category_id", "bbox"):
            if key not in row:
                raise FormatError(f"{where}: missing key {key!r}")
        image_id = row["image_id"]
        if image_id not in images:
            raise FormatError(f"{where}: unknown image_id {image_id!r}")
        bbox = row["bbox"]
        if not isinstance(bbox, list) or len(bbox) != 4:
            raise FormatError(f"{where}: bbox must be [x, y, w, h]")
        info = images[image_id]
        area = float(row.get("area", bbox[2] * bbox[3]))
        if area >= min_area_fraction * info["height"] * info["width"]:
            salient_by_image.setdefault(image_id, []).append(row)

    entries = []
    for image_id in order:
        salient = salient_by_image.get(image_id, [])
        if len(salient) != 1:
            continue
        annotation = salient[0]
        info = images[image_id]
        path = info["file_name"]
        if images_dir is not None:
            path = os.path.join(images_dir, path)
        entries.append(
            ManifestEntry(
                image_id=str(image_id),
                path=path,
                class_id=int(annotation["category_id"]),
                bbox=tuple(int(round(v)) for v in annotation["bbox"]),
            )
        )
    return entries


def save_manifest(entries, path) -> None:
    """Write manifest entries as JSON-lines, one entry per line."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for entry in entries:
            fh.write(json.dumps({
                "image_id": entry.image_id,
                "path": entry.path,
                "class_id": entry.class_id,
                "bbox": list(entry.bbox),
            }, sort_keys=True) + "\n")


def load_manifest(path) -> list[ManifestEntry]:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: line {line_number}: {exc.msg}") from exc
            try:
                entries.append(ManifestEntry(
                    image_id=row["image_id"], path=row["path"],
                    class_id=row["class_id"], bbox=tuple(row["bbox"]),
                ))
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}: line {line_number}: {exc}") from exc
    return entries


@dataclass
class ImageRecord:
    """Per-image artifacts of one pipeline run."""

    image_id: str
    true_class: int
    stages: dict
    detections: dict
    defense_json: dict | None = None
    loss_trace: tuple[float, ...] | None = None
    placement: dict | None = None


@dataclass
class RunRecord:
    """One run directory's worth of content."""

    run_id: str
    config: dict
    images: list
    report: dict | None = None
    ablation_csv: str | None = None


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _detection_to_json(detection) -> dict:
    # Accepts both Detection objects and already-serialized rows so a
    # reloaded run can be saved again unchanged.
    if isinstance(detection, dict):
        return {
            "class_id": detection["class_id"],
            "confidence": detection["confidence"],
            "bbox": list(detection["bbox"]),
        }
    return {
        "class_id": detection.class_id,
        "confidence": detection.confidence,
        "bbox": list(detection.bbox),
    }


def detections_from_json(rows) -> tuple[Detection, ...]:
    """Rebuild Detection tuples from serialized rows; passes objects through."""
    return tuple(
        Detection(class_id=row["class_id"], confidence=row["confidence"],
                  bbox=tuple(row["bbox"]))
        if isinstance(row, dict) else row
        for row in rows
    )


def write_image_f32(image: Image, path) -> None:
    """Raw little-endian float32 sidecar, row-major H x W x 3."""
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(image.data, dtype="<f4").tobytes())


def read_image_f32(path, height: int, width: int) -> Image:
    data = np.fromfile(path, dtype="<f4")
    if data.size != height * width * 3:
        raise IntegrityError(
            f"{path}: holds {data.size} floats, expected {height * width * 3}"
        )
    return Image(np.clip(data.astype(np.float64).reshape(height, width, 3), 0.0, 1.0))


def save_run(record: RunRecord, parent_dir) -> str:
    """Persist the run under parent_dir/run_<id>; returns the run path."""
    run_dir = os.path.join(parent_dir, f"run_{record.run_id}")
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.json"), "w", encoding="ascii",
              newline="\n") as fh:
        fh.write(_canonical_json(record.config))

    image_index = []
    for item in record.images:
        image_dir = os.path.join(run_dir, "images", item.image_id)
        os.makedirs(image_dir, exist_ok=True)
        row = {
            "image_id": item.image_id,
            "true_class": item.true_class,
            "stages": sorted(item.stages),
            "detections": {
                stage: [_detection_to_json(d) for d in dets]
                for stage, dets in sorted(item.detections.items())
            },
        }
        for stage, image in item.stages.items():
            if stage not in STAGE_FILES:
                raise ValueError(f"unknown stage {stage!r}")
            png_path = os.path.join(image_dir, f"{stage}.png")
            PILImage.fromarray(image.to_u8(), mode="RGB").save(png_path, format="PNG")
            write_image_f32(image, os.path.join(image_dir, f"{stage}.f32"))
        if item.defense_json is not None:
            row["defense"] = item.defense_json
        if item.placement is not None:
            row["placement"] = item.placement
        if item.loss_trace is not None:
            trace_path = os.path.join(image_dir, "loss_trace.csv")
            with open(trace_path, "w", encoding="ascii", newline="\n") as fh:
                fh.write("iter,loss\n")
                for iteration, loss in enumerate(item.loss_trace):
                    fh.write(f"{iteration},{repr(float(loss))}\n")
        image_index.append(row)

    report = dict(record.report) if record.report is not None else {}
    report.setdefault("run_id", record.run_id)
    report["images"] = image_index
    with open(os.path.join(run_dir, "report.json"), "w", encoding="ascii",
              newline="\n") as fh:
        fh.write(_canonical_json(report))
    if record.ablation_csv is not None:
        with open(os.path.join(run_dir, "ablation.csv"), "w", encoding="ascii",
                  newline="\n") as fh:
            fh.write(record.ablation_csv)
    return run_dir


def load_run(run_dir) -> RunRecord:
    """Reload a run directory; missing referenced files raise IntegrityError.

    Stage pixels reload from the float32 sidecars, so re-evaluation sees
    exactly what was stored (PNG files are for inspection only).
    """
    run_dir = os.fspath(run_dir)
    run_id = os.path.basename(run_dir.rstrip("/"))
    if run_id.startswith("run_"):
        run_id = run_id[len("run_"):]
    missing = []
    for name in ("config.json", "report.json"):
        if not os.path.exists(os.path.join(run_dir, name)):
            missing.append(name)
    if missing:
        raise IntegrityError(f"{run_dir}: missing {', '.join(missing)}")
    with open(os.path.join(run_dir, "config.json"), "r", encoding="utf-8") as fh:
        config = json.load(fh)
    with open(os.path.join(run_dir, "report.json"), "r", encoding="utf-8") as fh:
        report = json.load(fh)

    images = []
    for row in report.get("images", []):
        image_id = row["image_id"]
        image_dir = os.path.join(run_dir, "images", image_id)
        stages = {}
        for stage in row.get("stages", []):
            png_path = os.path.join(image_dir, f"{stage}.png")
            f32_path = os.path.join(image_dir, f"{stage}.f32")
            absent = [p for p in (png_path, f32_path) if not os.path.exists(p)]
            if absent:
                missing.extend(os.path.relpath(p, run_dir) for p in absent)
                continue
            with PILImage.open(png_path) as png:
                width, height = png.size
            stages[stage] = read_image_f32(f32_path, height, width)
        detections = row.get("detections", {})
        loss_trace = None
        trace_path = os.path.join(image_dir, "loss_trace.csv")
        if os.path.exists(trace_path):
            with open(trace_path, "r", encoding="utf-8") as fh:
                lines = fh.read().splitlines()[1:]
            loss_trace = tuple(float(line.split(",")[1]) for line in lines if line)
        images.append(ImageRecord(
            image_id=image_id,
            true_class=int(row.get("true_class", -1)),
            stages=stages,
            detections=detections,
            defense_json=row.get("defense"),
            loss_trace=loss_trace,
            placement=row.get("placement"),
        ))
    if missing:
        raise IntegrityError(f"{run_dir}: missing {', '.join(sorted(set(missing)))}")

    ablation_csv = None
    csv_path = os.path.join(run_dir, "ablation.csv")
    if os.path.exists(csv_path):
        with open(csv_path, "r", encoding="utf-8") as fh:
            ablation_csv = fh.read()
    aggregate = {k: v for k, v in report.items() if k != "images"}
    return RunRecord(run_id=run_id, config=config, images=images,
                     report=aggregate, ablation_csv=ablation_csv)
