"""Per-pose semantic landmark storage and world-frame projection.

Points are kept in the frame of the pose that first observed them and only
re-expressed at projection time, so pose corrections from later loop closures
propagate to every historical point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence, Union

import numpy as np

from .se3 import Pose3

LABEL_GROUND = 0
LABEL_ROCK = 1
LABEL_LANDER = 2

LABEL_NAMES = {LABEL_GROUND: "ground", LABEL_ROCK: "rock", LABEL_LANDER: "lander"}
LABEL_IDS = {name: label for label, name in LABEL_NAMES.items()}


@dataclass(frozen=True)
class SemanticPoint:
    """One labeled 3D point; the frame is whatever context it came from."""

    position: np.ndarray
    label: str

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(3)
        p.setflags(write=False)
        object.__setattr__(self, "position", p)
        if self.label not in LABEL_IDS:
            raise ValueError(f"unknown semantic label: {self.label!r}")


class PointBatch:
    """Column store of labeled points that still iterates as SemanticPoints."""

    def __init__(self, positions: np.ndarray, labels: np.ndarray):
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        labels = np.asarray(labels, dtype=np.uint8).reshape(-1)
        if len(positions) != len(labels):
            raise ValueError("positions and labels must have equal length")
        if len(labels) and labels.max() > LABEL_LANDER:
            raise ValueError("labels must be in the closed {ground, rock, lander} set")
        self.positions = positions
        self.labels = labels

    @staticmethod
    def from_points(points: Iterable[SemanticPoint]) -> "PointBatch":
        pts = list(points)
        if not pts:
            return PointBatch(np.zeros((0, 3)), np.zeros(0, dtype=np.uint8))
        return PointBatch(
            np.stack([p.position for p in pts]),
            np.array([LABEL_IDS[p.label] for p in pts], dtype=np.uint8),
        )

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self) -> Iterator[SemanticPoint]:
        for pos, lab in zip(self.positions, self.labels):
            yield SemanticPoint(pos, LABEL_NAMES[int(lab)])

    def __getitem__(self, index) -> SemanticPoint:
        return SemanticPoint(self.positions[index], LABEL_NAMES[int(self.labels[index])])


PointsLike = Union[PointBatch, Sequence[SemanticPoint]]


def _as_batch(points: PointsLike) -> PointBatch:
    return points if isinstance(points, PointBatch) else PointBatch.from_points(points)


class SemanticCloud:
    """Map from pose index to the local points first observed at that pose."""

    def __init__(self):
        self._store: dict[int, list[PointBatch]] = {}

    def attach_points(self, k: int, points: PointsLike, num_poses: int) -> None:
        """Append local points under pose k; rejects unknown pose indices."""
        if not 0 <= k < num_poses:
            raise KeyError(f"pose index {k} does not exist (have {num_poses})")
        batch = _as_batch(points)
        if len(batch) == 0:
            return
        self._store.setdefault(k, []).append(batch)

    def count_for(self, k: int) -> int:
        return sum(len(b) for b in self._store.get(k, []))

    def total_points(self) -> int:
        return sum(self.count_for(k) for k in self._store)

    def pose_indices(self) -> list[int]:
        return sorted(self._store)

    def project_world(self, poses: Sequence[Pose3]) -> PointBatch:
        """All points re-expressed in the world frame with the given poses.

        Recomputed from scratch every call: after an optimization shifts pose
        k, every point stored under k moves with it.
        """
        positions = []
        labels = []
        for k in sorted(self._store):
            if k >= len(poses):
                raise KeyError(f"no pose estimate for stored pose index {k}")
            pose = poses[k]
            for batch in self._store[k]:
                positions.append(pose.apply(batch.positions))
                labels.append(batch.labels)
        if not positions:
            return PointBatch(np.zeros((0, 3)), np.zeros(0, dtype=np.uint8))
        return PointBatch(np.concatenate(positions), np.concatenate(labels))


def write_cloud(path, batch: PointBatch) -> None:
    """One `x y z label` line per point."""
    with open(path, "w") as fh:
        for pos, lab in zip(batch.positions, batch.labels):
            fh.write(
                f"{pos[0]:.17g} {pos[1]:.17g} {pos[2]:.17g} {LABEL_NAMES[int(lab)]}\n"
            )


def read_cloud(path) -> PointBatch:
    positions = []
    labels = []
    with open(path) as fh:
        for line in fh:
            toks = line.split()
            if not toks:
                continue
            positions.append([float(v) for v in toks[:3]])
            labels.append(LABEL_IDS[toks[3]])
    return PointBatch(np.array(positions).reshape(-1, 3), np.array(labels, dtype=np.uint8))
