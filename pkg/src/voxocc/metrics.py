"""Evaluation: ray-walk discrete depth statistics against lidar returns,
dense depth-map statistics, binary occupancy classification, and threshold
sweeping.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .depthmap import DepthMap
from .geometry import GridSpec, Ray, world_to_voxel
from .labels import LabelSet, PointCloud, in_range_mask
from .volume import GridMode, ScalarGrid, sigmoid, softplus

DEPTH_COLUMNS = ("abs_rel", "sq_rel", "rmse", "rmse_log", "a1", "a2", "a3", "n")


@dataclass
class MetricReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    n: int

    def row(self):
        return (self.abs_rel, self.sq_rel, self.rmse, self.rmse_log,
                self.delta1, self.delta2, self.delta3, self.n)


@dataclass
class ConfusionReport:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def precision(self):
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self):
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    @property
    def accuracy(self):
        total = self.tp + self.fp + self.tn + self.fn
        return (self.tp + self.tn) / total if total else 0.0

    @property
    def iou(self):
        d = self.tp + self.fn + self.fp
        return self.tp / d if d else 0.0


def depth_statistics(pred, gt) -> MetricReport:
    """The seven depth statistics over paired positive depth arrays.

    delta thresholds use a strict '<' against 1.25, 1.25^2, 1.25^3.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.size == 0:
        raise ValueError("no samples to evaluate")
    err = pred - gt
    ratio = np.maximum(pred / gt, gt / pred)
    return MetricReport(
        abs_rel=float(np.mean(np.abs(err) / gt)),
        sq_rel=float(np.mean(err ** 2 / gt)),
        rmse=float(np.sqrt(np.mean(err ** 2))),
        rmse_log=float(np.sqrt(np.mean((np.log(pred) - np.log(gt)) ** 2))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25 ** 2)),
        delta3=float(np.mean(ratio < 1.25 ** 3)),
        n=int(pred.size),
    )


def _threshold_values(grid: ScalarGrid, raw):
    """Map raw voxel values into the domain the threshold compares against."""
    if grid.mode == GridMode.PROBABILITY:
        return sigmoid(raw)
    if grid.mode == GridMode.DENSITY:
        return softplus(raw)
    return np.asarray(raw, dtype=np.float64)  # SDF thresholds raw values


def occupied_at_many(grid: ScalarGrid, pts, threshold) -> np.ndarray:
    """Vectorized occupancy test at world points (nearest-voxel semantics).

    Out-of-grid points are never occupied. SDF grids compare raw values
    (>= threshold occupied, or <= under the flipped sign convention);
    probability and density grids compare their activated value.
    """
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    _, idx, inside = world_to_voxel(pts, grid.spec)
    safe = np.where(inside[:, None], idx, 0)
    raw = grid.values[safe[:, 0], safe[:, 1], safe[:, 2]]
    val = _threshold_values(grid, raw)
    if grid.mode == GridMode.SDF and grid.sdf_sign_flip:
        occ = val <= threshold
    else:
        occ = val >= threshold
    return occ & inside


def occupied_at(grid: ScalarGrid, p, threshold) -> bool:
    return bool(occupied_at_many(grid, np.asarray(p).reshape(1, 3), threshold)[0])


def first_occupied_depth(grid: ScalarGrid, ray: Ray, threshold,
                         step: float = 0.2, max_depth: float = 52.0) -> float:
    """Walk the ray at fixed intervals and return the distance of the first
    occupied sample; the last sample stands in when nothing is occupied."""
    if step <= 0 or max_depth <= step:
        raise ValueError("need step > 0 and max_depth > step")
    ts = np.arange(1, int(np.floor(max_depth / step)) + 1) * step
    pts = ray.origin + ts[:, None] * ray.direction
    occ = occupied_at_many(grid, pts, threshold)
    hits = np.flatnonzero(occ)
    return float(ts[hits[0]]) if hits.size else float(ts[-1])


def discrete_depth_metrics(grid: ScalarGrid, cloud: PointCloud, threshold,
                           step: float = 0.2, max_depth: float = 52.0):
    """Per lidar return: compare its range against the first occupied sample
    along the same ray. Returns (MetricReport, n_skipped) where skipped
    counts returns outside the grid extents.
    """
    keep = in_range_mask(cloud, grid.spec)
    pts = cloud.points[keep]
    skipped = int((~keep).sum())
    if pts.shape[0] == 0:
        raise ValueError("no in-range points to evaluate")
    vecs = pts - cloud.origin
    gt = np.linalg.norm(vecs, axis=1)
    dirs = vecs / gt[:, None]

    ts = np.arange(1, int(np.floor(max_depth / step)) + 1) * step
    pred = np.empty(len(pts))
    # chunked so the (points x steps) position tensor stays small
    chunk = 4096
    for s in range(0, len(pts), chunk):
        d = dirs[s:s + chunk]
        sample_pts = (cloud.origin + ts[None, :, None] * d[:, None, :]).reshape(-1, 3)
        occ = occupied_at_many(grid, sample_pts, threshold).reshape(len(d), -1)
        first = np.argmax(occ, axis=1)
        any_hit = occ.any(axis=1)
        pred[s:s + chunk] = np.where(any_hit, ts[first], ts[-1])
    return depth_statistics(pred, gt), skipped


def depth_map_metrics(pred: DepthMap, gt: DepthMap, cap: float = 52.0) -> MetricReport:
    """Depth statistics over pixels valid in both maps with 0 < gt <= cap."""
    if pred.shape != gt.shape:
        raise ValueError("depth map resolutions differ")
    mask = pred.valid & gt.valid & (gt.depth > 0) & (gt.depth <= cap)
    if not mask.any():
        raise ValueError("no jointly valid pixels")
    return depth_statistics(pred.depth[mask], gt.depth[mask])


def classification_metrics(grid: ScalarGrid, labels: LabelSet, threshold) -> ConfusionReport:
    """Occupied labels are the positive class; prediction is the nearest-voxel
    occupancy test at each label point."""
    if len(labels.occupied) + len(labels.empty) == 0:
        raise ValueError("empty label set")
    pred_occ = occupied_at_many(grid, labels.occupied, threshold) if len(labels.occupied) else np.zeros(0, bool)
    pred_emp = occupied_at_many(grid, labels.empty, threshold) if len(labels.empty) else np.zeros(0, bool)
    tp = int(pred_occ.sum())
    fn = int((~pred_occ).sum())
    fp = int(pred_emp.sum())
    tn = int((~pred_emp).sum())
    return ConfusionReport(tp=tp, fp=fp, tn=tn, fn=fn)


def threshold_sweep(grid: ScalarGrid, cloud: PointCloud, lo, hi, step,
                    walk_step: float = 0.2, max_depth: float = 52.0):
    """Discrete depth statistics at every threshold in [lo, hi] (inclusive,
    stepped). Returns (table, best_threshold); best minimizes abs_rel with
    ties broken toward the smaller threshold.
    """
    if not (lo < hi) or step <= 0:
        raise ValueError("need lo < hi and step > 0")
    n_steps = int(round((hi - lo) / step))
    thresholds = lo + step * np.arange(n_steps + 1)
    table = []
    best = None
    for thr in thresholds:
        report, skipped = discrete_depth_metrics(grid, cloud, thr, walk_step, max_depth)
        table.append((float(thr), report))
        if best is None or report.abs_rel < best[1].abs_rel:
            best = (float(thr), report)
    return table, best[0]


# ---------------------------------------------------------------------------
# Report emission

def report_csv(rows, header_extra=("threshold",)) -> str:
    """CSV for (threshold, MetricReport) rows, or bare MetricReport rows when
    header_extra is empty."""
    out = io.StringIO()
    out.write(",".join(header_extra + DEPTH_COLUMNS) + "\n")
    for row in rows:
        if isinstance(row, MetricReport):
            prefix, report = (), row
        else:
            *prefix, report = row
        vals = list(prefix) + list(report.row())
        out.write(",".join(f"{v:.9g}" if isinstance(v, float) else str(v)
                           for v in vals) + "\n")
    return out.getvalue()


def report_text(report: MetricReport) -> str:
    lines = [f"{name:>8s}: {val:.6f}" for name, val in
             zip(DEPTH_COLUMNS[:-1], report.row()[:-1])]
    lines.append(f"{'n':>8s}: {report.n}")
    return "\n".join(lines)
