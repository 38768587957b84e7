"""Command-line pipeline driver.

Subcommands mirror the pipeline stages: ``dataset`` prepares a manifest
(synthetic shapes or a filtered annotation file), ``attack`` generates
placement-optimized patches, ``defend`` runs the three defenses,
``eval`` aggregates the stage report, ``ablate`` sweeps patch sizes, and
``report`` prints a stored report. All randomness derives from --seed;
two invocations with the same config and seed produce byte-identical
report.json and ablation.csv at any worker count.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from PIL import Image as PILImage

from . import data as data_mod
from .attack import AttackConfig, run_attack
from .core import Image, PatchBenchError, derive_stream
from .defense import (
    DenoiserParams,
    NoiseSchedule,
    SegmenterParams,
    STAGE_BY_BRANCH,
    ToyDenoiser,
    make_segmentation_dataset,
    run_defenses,
    train_denoiser,
    train_segmenter,
)
from .detector import RemoteDetector, shapes
from .detector.toy import ToyDetector, ToyDetectorParams, train_toy_detector
from .evaluate import (
    StageScores,
    ablation_sweep,
    emit_plot,
    score_detection,
    stage_report,
)

ENDPOINT_ENV = "PATCHBENCH_DETECTOR_URL"

# Flat dotted-key configuration with defaults; unknown keys are rejected.
CONFIG_DEFAULTS = {
    "detector.endpoint": "toy",
    "detector.feature_layer": "conv2",
    "dataset.per_class": 3,
    "dataset.annotations": None,
    "dataset.images_dir": None,
    "dataset.min_area_fraction": 0.01,
    "dataset.manifest": None,
    "attack.target_class": None,
    "attack.lam": 0.01,
    "attack.p": 2,
    "attack.eta": 0.05,
    "attack.iterations": 500,
    "attack.epsilon": 1.0,
    "attack.patch_size_fraction": 0.1,
    "attack.use_saliency": True,
    "attack.saliency_threshold": 0.6,
    "defense.binarize_threshold": 0.5,
    "defense.min_component": 10,
    "defense.dilation_iterations": 2,
    "defense.inpaint_radius": 3,
    "defense.schedule_steps": 50,
    "defense.beta_start": 1e-4,
    "defense.beta_end": 0.02,
    "defense.segmenter_count": 240,
    "defense.segmenter_epochs": 10,
    "defense.denoiser_count": 240,
    "defense.denoiser_epochs": 10,
    "train.detector_per_class": 150,
    "train.detector_epochs": 12,
    "ablate.sizes_pct": [1, 5, 10, 20, 50],
}

# Sub-stream ids off the master seed, one per pipeline role.
_S_DETECTOR, _S_DATASET, _S_SEGDATA, _S_SEGTRAIN, _S_DENOISER = 0, 1, 2, 3, 4
_S_ATTACK, _S_DEFEND, _S_ABLATE = 5, 6, 7


class UsageError(Exception):
    """Bad flags or configuration; maps to exit code 2."""


def load_config(path: str | None, overrides: dict) -> dict:
    config = dict(CONFIG_DEFAULTS)
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(
                f"config {path} is not valid JSON (line {exc.lineno}): {exc.msg}"
            ) from exc
        if not isinstance(doc, dict):
            raise UsageError(f"config {path} must be a JSON object of dotted keys")
        unknown = sorted(set(doc) - set(CONFIG_DEFAULTS))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        config.update(doc)
    for key, value in overrides.items():
        if value is not None:
            config[key] = value
    if config["detector.endpoint"] == "toy" and os.environ.get(ENDPOINT_ENV):
        if "detector.endpoint" not in overrides or overrides["detector.endpoint"] is None:
            config["detector.endpoint"] = os.environ[ENDPOINT_ENV]
    return config


def _training_digest(config: dict, keys) -> str:
    blob = json.dumps({k: config[k] for k in keys}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:8]


def _models_dir(out_dir: str) -> str:
    path = os.path.join(out_dir, "models")
    os.makedirs(path, exist_ok=True)
    return path


def build_detector(config: dict, seed: int, out_dir: str):
    endpoint = config["detector.endpoint"]
    if endpoint != "toy":
        return RemoteDetector(endpoint, feature_layer=config["detector.feature_layer"])
    digest = _training_digest(config, ["train.detector_per_class", "train.detector_epochs"])
    cache = os.path.join(_models_dir(out_dir), f"toy_detector_{seed}_{digest}.npz")
    if os.path.exists(cache):
        return ToyDetector(ToyDetectorParams.load(cache))
    detector = train_toy_detector(
        derive_stream(seed, (_S_DETECTOR,)),
        per_class=int(config["train.detector_per_class"]),
        epochs=int(config["train.detector_epochs"]),
    )
    detector.params.save(cache)
    return detector


def build_segmenter(config: dict, seed: int, out_dir: str) -> SegmenterParams:
    digest = _training_digest(config, ["defense.segmenter_count", "defense.segmenter_epochs"])
    cache = os.path.join(_models_dir(out_dir), f"segmenter_{seed}_{digest}.npz")
    if os.path.exists(cache):
        return SegmenterParams.load(cache)
    pairs = make_segmentation_dataset(
        derive_stream(seed, (_S_SEGDATA,)), count=int(config["defense.segmenter_count"])
    )
    params = train_segmenter(
        pairs, epochs=int(config["defense.segmenter_epochs"]),
        stream=derive_stream(seed, (_S_SEGTRAIN,)),
    )
    params.save(cache)
    return params


def build_denoiser(config: dict, seed: int, out_dir: str,
                   schedule: NoiseSchedule) -> ToyDenoiser:
    digest = _training_digest(config, [
        "defense.denoiser_count", "defense.denoiser_epochs",
        "defense.schedule_steps", "defense.beta_start", "defense.beta_end",
    ])
    cache = os.path.join(_models_dir(out_dir), f"denoiser_{seed}_{digest}.npz")
    if os.path.exists(cache):
        return ToyDenoiser(DenoiserParams.load(cache), schedule)
    stream = derive_stream(seed, (_S_DENOISER,))
    images, _, _ = shapes.make_dataset(
        stream.child(0), per_class=max(1, int(config["defense.denoiser_count"]) // 4)
    )
    denoiser = train_denoiser(
        images, schedule, stream.child(1), epochs=int(config["defense.denoiser_epochs"])
    )
    denoiser.params.save(cache)
    return denoiser


def build_schedule(config: dict) -> NoiseSchedule:
    return NoiseSchedule.linear(
        steps=int(config["defense.schedule_steps"]),
        beta_start=float(config["defense.beta_start"]),
        beta_end=float(config["defense.beta_end"]),
    )


def _run_id(seed: int) -> str:
    return f"{seed:08x}"


def _run_dir(out_dir: str, seed: int) -> str:
    return os.path.join(out_dir, f"run_{_run_id(seed)}")


def _manifest_path(config: dict, out_dir: str) -> str:
    configured = config["dataset.manifest"]
    if configured:
        return configured
    return os.path.join(out_dir, "dataset", "manifest.jsonl")


def _load_entry_image(entry: data_mod.ManifestEntry, manifest_dir: str) -> Image:
    path = entry.path
    if not os.path.isabs(path):
        path = os.path.join(manifest_dir, path)
    sidecar = os.path.splitext(path)[0] + ".f32"
    with PILImage.open(path) as png:
        width, height = png.size
        if os.path.exists(sidecar):
            return data_mod.read_image_f32(sidecar, height, width)
        return Image.from_u8(np.asarray(png.convert("RGB")))


def cmd_dataset(config: dict, seed: int, out_dir: str) -> int:
    dataset_dir = os.path.join(out_dir, "dataset")
    images_dir = os.path.join(dataset_dir, "images")
    os.makedirs(images_dir, exist_ok=True)
    annotations = config["dataset.annotations"]
    if annotations:
        entries = data_mod.filter_single_object(
            annotations,
            min_area_fraction=float(config["dataset.min_area_fraction"]),
            images_dir=config["dataset.images_dir"],
        )
    else:
        stream = derive_stream(seed, (_S_DATASET,))
        per_class = int(config["dataset.per_class"])
        entries = []
        for class_id, class_name in enumerate(shapes.CLASS_NAMES):
            for index in range(per_class):
                rng = stream.child(class_id, index).generator()
                image, bbox = shapes.generate_image(rng, class_id)
                image_id = f"{class_name}_{index}"
                png_path = os.path.join(images_dir, f"{image_id}.png")
                PILImage.fromarray(image.to_u8(), mode="RGB").save(png_path, format="PNG")
                data_mod.write_image_f32(
                    image, os.path.join(images_dir, f"{image_id}.f32")
                )
                entries.append(data_mod.ManifestEntry(
                    image_id=image_id,
                    path=os.path.join("images", f"{image_id}.png"),
                    class_id=class_id,
                    bbox=bbox,
                ))
    manifest = _manifest_path(config, out_dir)
    os.makedirs(os.path.dirname(manifest) or ".", exist_ok=True)
    data_mod.save_manifest(entries, manifest)
    print(f"wrote {len(entries)} manifest entries to {manifest}")
    return 0


def _attack_config(config: dict, seed: int) -> AttackConfig:
    p_raw = config["attack.p"]
    p = float("inf") if p_raw in ("inf", float("inf")) else float(p_raw)
    return AttackConfig(
        target_class=config["attack.target_class"],
        lam=float(config["attack.lam"]),
        p=p,
        eta=float(config["attack.eta"]),
        iterations=int(config["attack.iterations"]),
        epsilon=float(config["attack.epsilon"]),
        patch_size_fraction=float(config["attack.patch_size_fraction"]),
        seed=seed,
    )


def _load_manifest_entries(config: dict, out_dir: str):
    manifest = _manifest_path(config, out_dir)
    if not os.path.exists(manifest):
        raise PatchBenchError(
            f"manifest {manifest} not found; run the dataset subcommand first"
        )
    return data_mod.load_manifest(manifest), os.path.dirname(manifest)


def _config_snapshot(config: dict, seed: int) -> dict:
    return {"seed": seed, "config": {k: config[k] for k in sorted(config)}}


def cmd_attack(config: dict, seed: int, out_dir: str, jobs: int) -> int:
    entries, manifest_dir = _load_manifest_entries(config, out_dir)
    handle = build_detector(config, seed, out_dir)
    attack_config = _attack_config(config, seed)
    use_saliency = bool(config["attack.use_saliency"])
    threshold = float(config["attack.saliency_threshold"])

    def one(index: int) -> data_mod.ImageRecord:
        entry = entries[index]
        image = _load_entry_image(entry, manifest_dir)
        result = run_attack(
            handle, image, attack_config, true_class=entry.class_id,
            stream=derive_stream(seed, (_S_ATTACK, index)),
            use_saliency=use_saliency, saliency_threshold=threshold,
        )
        return data_mod.ImageRecord(
            image_id=entry.image_id,
            true_class=entry.class_id,
            stages={"original": image, "patched": result.patched_image},
            detections={
                "original": result.pre_detections,
                "patched": result.post_detections,
            },
            loss_trace=result.loss_trace,
            placement={
                "position": list(result.position),
                "grid_size": len(result.grid.positions) if result.grid else 0,
            },
        )

    records = _parallel_map(one, len(entries), jobs)
    record = data_mod.RunRecord(
        run_id=_run_id(seed), config=_config_snapshot(config, seed), images=records
    )
    run_dir = data_mod.save_run(record, out_dir)
    print(f"attacked {len(records)} images; run at {run_dir}")
    return 0


def _parallel_map(fn, count: int, jobs: int) -> list:
    if jobs <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, i) for i in range(count)]
    return [f.result() for f in futures]


def cmd_defend(config: dict, seed: int, out_dir: str, jobs: int) -> int:
    run_dir = _run_dir(out_dir, seed)
    record = data_mod.load_run(run_dir)
    handle = build_detector(config, seed, out_dir)
    segmenter = build_segmenter(config, seed, out_dir)
    schedule = build_schedule(config)
    denoiser = build_denoiser(config, seed, out_dir, schedule)

    def one(index: int) -> None:
        item = record.images[index]
        adv = item.stages.get("patched")
        if adv is None:
            raise PatchBenchError(f"image {item.image_id} has no patched stage")
        report = run_defenses(
            adv, handle, segmenter, denoiser, schedule,
            stream=derive_stream(seed, (_S_DEFEND, index)),
            binarize_threshold=float(config["defense.binarize_threshold"]),
            min_component=int(config["defense.min_component"]),
            dilation_iterations=int(config["defense.dilation_iterations"]),
            inpaint_radius=int(config["defense.inpaint_radius"]),
        )
        for branch, stage in STAGE_BY_BRANCH.items():
            if branch in report.images:
                item.stages[stage] = report.images[branch]
                item.detections[stage] = report.detections[branch]
        item.defense_json = report.to_json_dict()

    _parallel_map(one, len(record.images), jobs)
    data_mod.save_run(record, out_dir)
    print(f"defended {len(record.images)} images; run at {run_dir}")
    return 0


def cmd_eval(config: dict, seed: int, out_dir: str) -> int:
    run_dir = _run_dir(out_dir, seed)
    record = data_mod.load_run(run_dir)
    if not record.images:
        raise PatchBenchError(f"{run_dir} holds no images to evaluate")
    stage_names = sorted({s for item in record.images for s in item.detections})
    stages = []
    for name in stage_names:
        scores = tuple(
            score_detection(
                data_mod.detections_from_json(item.detections.get(name, [])),
                item.true_class,
            )
            for item in record.images
        )
        stages.append(StageScores(name=name, scores=scores))
    record.report = stage_report(stages)
    data_mod.save_run(record, out_dir)
    print(f"evaluated {len(record.images)} images; report at {run_dir}/report.json")
    return 0


def cmd_ablate(config: dict, seed: int, out_dir: str, jobs: int) -> int:
    entries, manifest_dir = _load_manifest_entries(config, out_dir)
    handle = build_detector(config, seed, out_dir)
    dataset = [
        (_load_entry_image(entry, manifest_dir), entry.class_id) for entry in entries
    ]
    sizes = [float(s) for s in config["ablate.sizes_pct"]]
    rows = ablation_sweep(
        handle, dataset, sizes, _attack_config(config, seed),
        stream=derive_stream(seed, (_S_ABLATE,)), jobs=jobs,
        use_saliency=bool(config["attack.use_saliency"]),
    )
    run_dir = _run_dir(out_dir, seed)
    os.makedirs(run_dir, exist_ok=True)
    config_path = os.path.join(run_dir, "config.json")
    if not os.path.exists(config_path):
        with open(config_path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(json.dumps(_config_snapshot(config, seed), sort_keys=True, indent=2) + "\n")
    emit_plot(rows, run_dir)
    failed = [row for row in rows if row.error is not None]
    print(f"swept {len(rows)} sizes ({len(failed)} failed); csv at {run_dir}/ablation.csv")
    return 0 if not failed else 1


def cmd_report(config: dict, seed: int, out_dir: str) -> int:
    run_dir = _run_dir(out_dir, seed)
    record = data_mod.load_run(run_dir)
    report = record.report or {}
    print(f"run {record.run_id}: {len(record.images)} images")
    for stage in report.get("stages", []):
        print(f"  {stage['name']:>10}: mean {stage['mean']:6.2f} +- {stage['stderr']:.2f}")
    if "attack_rel_change_pct" in report:
        print(f"  attack: -{report['attack_points']:.2f} points "
              f"({report['attack_rel_change_pct']:.2f}% relative)")
    for defense in report.get("defenses", []):
        print(f"  {defense['name']:>10}: {defense['points']:+.2f} points, "
              f"recovery {defense['recovery_pct']:+.2f}%")
    if record.ablation_csv:
        print("  ablation rows:")
        for line in record.ablation_csv.strip().splitlines()[1:]:
            size, drop = line.split(",")
            print(f"    {float(size):5.1f}% -> {float(drop):6.2f} point drop")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchbench",
        description="Placement-optimized adversarial patches and mask-based defenses.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("dataset", "prepare a dataset manifest (synthetic shapes or filtered annotations)"),
        ("attack", "generate placement-optimized patches for every manifest image"),
        ("defend", "run removal, inpainting and diffusion restoration on a run"),
        ("eval", "aggregate per-stage confidence scores into report.json"),
        ("ablate", "sweep patch sizes and emit ablation.csv plus the chart"),
        ("report", "print a stored run report"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", help="JSON config file of flat dotted keys")
        cmd.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
        cmd.add_argument("--out", default="out", help="output directory (default ./out)")
        cmd.add_argument("--jobs", type=int, default=1, help="worker count (default 1)")
        cmd.add_argument("--detector", help="detector endpoint URL, or 'toy'")
        if name == "dataset":
            cmd.add_argument("--annotations", help="annotation JSON to filter")
            cmd.add_argument("--images-dir", help="directory the annotations refer to")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.seed < 0:
        parser.error("--seed must be nonnegative")
    overrides = {"detector.endpoint": args.detector}
    if getattr(args, "annotations", None):
        overrides["dataset.annotations"] = args.annotations
    if getattr(args, "images_dir", None):
        overrides["dataset.images_dir"] = args.images_dir
    try:
        config = load_config(args.config, overrides)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    os.makedirs(args.out, exist_ok=True)
    try:
        if args.command == "dataset":
            return cmd_dataset(config, args.seed, args.out)
        if args.command == "attack":
            return cmd_attack(config, args.seed, args.out, args.jobs)
        if args.command == "defend":
            return cmd_defend(config, args.seed, args.out, args.jobs)
        if args.command == "eval":
            return cmd_eval(config, args.seed, args.out)
        if args.command == "ablate":
            return cmd_ablate(config, args.seed, args.out, args.jobs)
        if args.command == "report":
            return cmd_report(config, args.seed, args.out)
    except PatchBenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
