"""Map and trajectory scoring.

Geometric score: number of cells whose estimated height is within a closed
tolerance (default 0.05 m) of the truth, counting only cells mapped on both
sides. Rock score: F1 = 2TP / (2TP + FP + FN) over cell labels, defined as
1.0 when both maps are all-negative. Trajectory metric: root mean square of
the 3D position error between timestamp-aligned trajectories in the shared
lander frame (no alignment transform).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .gridmap import HeightGrid, RockGrid

HEIGHT_TOLERANCE = 0.05  # meters


@dataclass
class MapScore:
    geometric: int
    tp: int
    fp: int
    fn: int
    tn: int
    s_rock: float
    mapped_both: int = 0

    def __post_init__(self):
        if min(self.geometric, self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("score counts must be non-negative")


@dataclass
class TrajectoryMetric:
    rmse: float
    errors: np.ndarray = field(repr=False, default=None)  # (N, 3) per-axis series

    def __post_init__(self):
        if self.rmse < 0:
            raise ValueError("RMSE must be non-negative")


def _check_specs(a, b):
    if a.spec != b.spec:
        raise ValueError("grids have mismatched specs")


def score_height(est: HeightGrid, truth: HeightGrid,
                 tolerance: float = HEIGHT_TOLERANCE) -> int:
    """Cells mapped in both grids with |est - truth| <= tolerance (closed)."""
    _check_specs(est, truth)
    both = est.mapped_mask() & truth.mapped_mask()
    diff = np.abs(est.values - truth.values)
    return int(np.sum(both & (diff <= tolerance)))


def rock_confusion(est: RockGrid, truth: RockGrid) -> tuple[int, int, int, int]:
    _check_specs(est, truth)
    e = est.labels.astype(bool)
    t = truth.labels.astype(bool)
    tp = int(np.sum(e & t))
    fp = int(np.sum(e & ~t))
    fn = int(np.sum(~e & t))
    tn = int(np.sum(~e & ~t))
    return tp, fp, fn, tn


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 1.0  # both maps all-negative: the correct answer was given
    return 2.0 * tp / denom


def score_rock(est: RockGrid, truth: RockGrid) -> MapScore:
    tp, fp, fn, tn = rock_confusion(est, truth)
    return MapScore(0, tp, fp, fn, tn, f1_from_counts(tp, fp, fn))


def score_maps(est_height: HeightGrid, truth_height: HeightGrid,
               est_rock: RockGrid, truth_rock: RockGrid,
               tolerance: float = HEIGHT_TOLERANCE) -> MapScore:
    geometric = score_height(est_height, truth_height, tolerance)
    tp, fp, fn, tn = rock_confusion(est_rock, truth_rock)
    both = int(np.sum(est_height.mapped_mask() & truth_height.mapped_mask()))
    return MapScore(geometric, tp, fp, fn, tn, f1_from_counts(tp, fp, fn), both)


def trajectory_rmse(est_positions: np.ndarray, truth_positions: np.ndarray) -> TrajectoryMetric:
    """RMSE over timestamp-aligned 3D positions of equal length."""
    est = np.asarray(est_positions, dtype=float).reshape(-1, 3)
    truth = np.asarray(truth_positions, dtype=float).reshape(-1, 3)
    if len(est) != len(truth):
        raise ValueError(f"trajectory length mismatch: {len(est)} vs {len(truth)}")
    if len(est) == 0:
        raise ValueError("empty trajectories")
    errors = est - truth
    rmse = float(np.sqrt(np.mean(np.sum(errors**2, axis=1))))
    return TrajectoryMetric(rmse, errors)


@dataclass(frozen=True)
class ScoreWeights:
    """Stub for combining component scores into one total; no defaults are
    defined, so reports only show a total when weights are configured."""

    geometric: float
    rock: float


def format_report(score: MapScore, metric: Optional[TrajectoryMetric] = None,
                  dead_metric: Optional[TrajectoryMetric] = None,
                  meta: Optional[dict] = None,
                  weights: Optional[ScoreWeights] = None) -> str:
    lines = ["# score report v1"]
    for key, value in (meta or {}).items():
        lines.append(f"meta {key} {value}")
    lines.append(f"geometric_score {score.geometric}")
    lines.append(f"mapped_both {score.mapped_both}")
    lines.append(f"rock_tp {score.tp}")
    lines.append(f"rock_fp {score.fp}")
    lines.append(f"rock_fn {score.fn}")
    lines.append(f"rock_tn {score.tn}")
    lines.append(f"rock_f1 {score.s_rock:.17g}")
    if metric is not None:
        lines.append(f"rmse {metric.rmse:.17g}")
    if dead_metric is not None:
        lines.append(f"rmse_dead_reckoned {dead_metric.rmse:.17g}")
    if weights is not None:
        total = weights.geometric * score.geometric + weights.rock * score.s_rock
        lines.append(f"total_score {total:.17g}")
    return "\n".join(lines) + "\n"


def write_report(path, *args, **kwargs) -> None:
    with open(path, "w") as fh:
        fh.write(format_report(*args, **kwargs))
