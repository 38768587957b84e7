"""Confidence scoring, aggregation, relative-change arithmetic, stage
reports, and the patch-size ablation sweep.

Scoring follows the confidence-zeroing rule: an image scores the top
detection's confidence when its class matches the ground truth and zero
otherwise (a missing detection also scores zero). Stage means are plain
arithmetic means; reported figures are percentages.

Reference stage means of 81.07 / 63.18 / 65.98 / 79.50 / 84.76 reproduce
headline changes of 22.06 (attack), 3.45 (removal) and 26.61 (diffusion)
under these formulas. A sometimes-quoted 5.05 for inpainting is not
derivable from those means, which give 20.13 via the same recovery
formula; this module reports the derivable value.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

from .core import PatchBenchError

STAGE_NAMES = ("original", "patched", "sac", "inpainted", "diffused")
DEFENSE_STAGES = ("sac", "inpainted", "diffused")
ABLATION_CSV_HEADER = "patch_size_pct,mean_conf_drop_pct"


class AggregationError(PatchBenchError):
    """Aggregation over an empty score collection."""


class MetricError(PatchBenchError):
    """A metric formula received a degenerate operand (zero baseline)."""


class ReportError(PatchBenchError):
    """A stage report is missing a mandatory stage."""


def score_detection(detections, true_class: int) -> float:
    """Confidence of the top detection if its class is correct, else 0.

    The top detection is the highest-confidence one; an empty detection
    sequence scores 0 (a hidden object is at least as harmful as a
    misclassified one).
    """
    if not detections:
        return 0.0
    top = max(detections, key=lambda d: d.confidence)
    if top.class_id != int(true_class):
        return 0.0
    return float(top.confidence)


def mean_confidence(scores) -> float:
    """Arithmetic mean of a nonempty score collection."""
    values = [float(s) for s in scores]
    if not values:
        raise AggregationError("cannot average an empty score collection")
    return math.fsum(values) / len(values)


def relative_change(orig_mean: float, method_mean: float) -> float:
    """|orig - method| / orig x 100. Scale-invariant in the common factor."""
    if orig_mean <= 0.0:
        raise MetricError(f"baseline mean must be positive, got {orig_mean}")
    return abs(orig_mean - method_mean) / orig_mean * 100.0


def recovery_vs_patched(method_mean: float, patched_mean: float, orig_mean: float) -> float:
    """(method - patched) / orig x 100, signed: positive means recovery."""
    if orig_mean <= 0.0:
        raise MetricError(f"baseline mean must be positive, got {orig_mean}")
    return (method_mean - patched_mean) / orig_mean * 100.0


@dataclass(frozen=True)
class StageScores:
    """Per-image confidence scores for one pipeline stage."""

    name: str
    scores: tuple[float, ...]

    def __post_init__(self):
        if self.name not in STAGE_NAMES:
            raise ValueError(f"unknown stage {self.name!r}; expected one of {STAGE_NAMES}")
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        for s in self.scores:
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"stage {self.name!r} has score {s} outside [0, 1]")

    @property
    def mean(self) -> float:
        return mean_confidence(self.scores)

    @property
    def stderr(self) -> float:
        """Standard error of the mean: sample stddev / sqrt(N); 0 for N <= 1."""
        n = len(self.scores)
        if n <= 1:
            return 0.0
        m = self.mean
        var = math.fsum((s - m) ** 2 for s in self.scores) / (n - 1)
        return math.sqrt(var) / math.sqrt(n)


def stage_report(stages) -> dict:
    """Aggregate per-stage scores into the report record.

    Requires the "original" and "patched" stages; defense stages are
    optional. All reported figures are percentages: stage means and
    standard errors, the attack's relative change, and per-defense point
    deltas (method minus patched) plus recovery relative to the original.
    """
    by_name = {}
    for stage in stages:
        if stage.name in by_name:
            raise ReportError(f"duplicate stage {stage.name!r}")
        by_name[stage.name] = stage
    for required in ("original", "patched"):
        if required not in by_name:
            raise ReportError(f"missing mandatory stage {required!r}")
    orig = by_name["original"].mean
    patched = by_name["patched"].mean
    report = {
        "stages": [
            {
                "name": name,
                "mean": by_name[name].mean * 100.0,
                "stderr": by_name[name].stderr * 100.0,
            }
            for name in STAGE_NAMES
            if name in by_name
        ],
        "attack_points": (orig - patched) * 100.0,
        "attack_rel_change_pct": relative_change(orig, patched),
        "defenses": [
            {
                "name": name,
                "points": (by_name[name].mean - patched) * 100.0,
                "recovery_pct": recovery_vs_patched(by_name[name].mean, patched, orig),
            }
            for name in DEFENSE_STAGES
            if name in by_name
        ],
    }
    return report


@dataclass(frozen=True)
class AblationRow:
    """One patch-size sweep result; error rows carry no drop value."""

    patch_size_pct: float
    mean_conf_drop_pct: float | None
    error: str | None = None

    def __post_init__(self):
        if not 0.0 < self.patch_size_pct <= 100.0:
            raise ValueError(f"patch_size_pct must be in (0, 100], got {self.patch_size_pct}")
        if self.error is None and (
            self.mean_conf_drop_pct is None or self.mean_conf_drop_pct < 0.0
        ):
            raise ValueError("mean_conf_drop_pct must be a nonnegative number")


def ablation_sweep(handle, dataset, sizes_pct, config, stream, jobs: int = 1,
                   use_saliency: bool = True) -> list[AblationRow]:
    """Mean confidence drop (clean minus patched, percentage points) per size.

    ``dataset`` is a sequence of (Image, true_class) pairs. Each
    (size, image) pair draws from the sub-stream stream.child(size_index,
    image_index), so results are a pure function of (dataset, sizes,
    stream) regardless of worker count; the reduction runs in index order.
    """
    from .attack import run_attack

    sizes = [float(s) for s in sizes_pct]
    if not sizes:
        raise ValueError("sizes_pct must be nonempty")
    for s in sizes:
        if not 0.0 < s <= 100.0:
            raise ValueError(f"patch size {s}% outside (0, 100]")
    pairs = list(dataset)

    def one(size_index: int, image_index: int) -> float:
        image, true_class = pairs[image_index]
        cfg = replace(config, patch_size_fraction=sizes[size_index] / 100.0)
        result = run_attack(
            handle, image, cfg, true_class=int(true_class),
            stream=stream.child(size_index, image_index), use_saliency=use_saliency,
        )
        clean = score_detection(result.pre_detections, true_class)
        patched = score_detection(result.post_detections, true_class)
        return clean - patched

    tasks = [(s, i) for s in range(len(sizes)) for i in range(len(pairs))]
    outcomes: dict[tuple[int, int], float | Exception] = {}
    if jobs <= 1:
        for s, i in tasks:
            try:
                outcomes[(s, i)] = one(s, i)
            except Exception as exc:
                outcomes[(s, i)] = exc
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {key: pool.submit(one, *key) for key in tasks}
        for key, future in futures.items():
            exc = future.exception()
            outcomes[key] = exc if exc is not None else future.result()

    rows = []
    for s, size in enumerate(sizes):
        drops, failure = [], None
        for i in range(len(pairs)):
            outcome = outcomes[(s, i)]
            if isinstance(outcome, Exception):
                failure = f"image {i}: {outcome}"
                break
            drops.append(outcome)
        if failure is not None:
            rows.append(AblationRow(patch_size_pct=size, mean_conf_drop_pct=None,
                                    error=failure))
        else:
            drop = max(0.0, (math.fsum(drops) / len(drops)) * 100.0)
            rows.append(AblationRow(patch_size_pct=size, mean_conf_drop_pct=drop))
    return rows


def format_ablation_csv(rows) -> str:
    """Deterministic CSV text for sweep rows; error rows are omitted."""
    lines = [ABLATION_CSV_HEADER]
    for row in rows:
        if row.error is not None:
            continue
        lines.append(f"{repr(float(row.patch_size_pct))},{repr(float(row.mean_conf_drop_pct))}")
    return "\n".join(lines) + "\n"


def emit_plot(rows, out_dir) -> dict:
    """Write the sweep CSV, a log-scale chart, and chart metadata.

    The chart puts the confidence drop on x and the patch size on a
    logarithmic y axis. Returns the written paths keyed csv/plot/meta.
    """
    import os

    rows = list(rows)
    if not rows:
        raise ValueError("rows must be nonempty")
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "ablation.csv")
    with open(csv_path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(format_ablation_csv(rows))

    plotted = [(r.mean_conf_drop_pct, r.patch_size_pct) for r in rows if r.error is None]
    meta = {
        "x_axis": "mean_conf_drop_pct",
        "y_axis": "patch_size_pct",
        "y_scale": "log",
        "points": len(plotted),
        "error_sizes_pct": [r.patch_size_pct for r in rows if r.error is not None],
    }
    meta_path = os.path.join(out_dir, "ablation_plot.json")
    with open(meta_path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(json.dumps(meta, sort_keys=True, indent=2) + "\n")

    from matplotlib.backends.backend_agg import FigureCanvasAgg
    from matplotlib.figure import Figure

    fig = Figure(figsize=(6, 4))
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(111)
    if plotted:
        xs, ys = zip(*plotted)
        ax.plot(xs, ys, marker="o")
    ax.set_xlabel("mean confidence drop (pct points)")
    ax.set_ylabel("patch size (% of image, log scale)")
    ax.set_yscale("log")
    ax.grid(True, which="both", alpha=0.3)
    plot_path = os.path.join(out_dir, "ablation_plot.png")
    fig.savefig(plot_path, dpi=100)
    return {"csv": csv_path, "plot": plot_path, "meta": meta_path}
