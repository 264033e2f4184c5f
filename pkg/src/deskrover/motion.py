"""Local arc-sampling planner and the speed-drop backup maneuver.

Each control cycle converts rock detections to rover-frame disc obstacles,
samples a fan of constant-curvature arcs, discards arcs intersecting any
buffered obstacle, and picks the survivor whose endpoint is closest to the
goal. A small state machine reverses and replans when the rover stalls.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Optional

import numpy as np

from .worldsim import RockDetection


@dataclass(frozen=True)
class RockObstacle:
    x: float
    y: float
    radius: float

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("obstacle radius must be >= 0")


@dataclass(frozen=True)
class Arc:
    """Constant-curvature forward motion in the rover frame (x ahead, y left)."""

    curvature: float  # 1/m, signed, positive turns left
    length: float     # m

    def endpoint(self) -> np.ndarray:
        k, s = self.curvature, self.length
        if abs(k) < 1e-12:
            return np.array([s, 0.0])
        return np.array([np.sin(k * s) / k, (1.0 - np.cos(k * s)) / k])

    def sample(self, step: float = 0.02) -> np.ndarray:
        """Points along the arc at spacing <= step, endpoints included."""
        n = max(2, int(np.ceil(self.length / step)) + 1)
        s = np.linspace(0.0, self.length, n)
        k = self.curvature
        if abs(k) < 1e-12:
            return np.stack([s, np.zeros_like(s)], axis=1)
        return np.stack([np.sin(k * s) / k, (1.0 - np.cos(k * s)) / k], axis=1)


@dataclass(frozen=True)
class ArcFanConfig:
    count: int = 15
    max_curvature: float = 1.0  # 1/m
    arc_length: float = 1.5     # m
    sample_step: float = 0.02   # m


def arc_fan(cfg: ArcFanConfig = ArcFanConfig()) -> list[Arc]:
    """Symmetric fan of arcs; an odd count always includes the straight arc."""
    curvatures = np.linspace(-cfg.max_curvature, cfg.max_curvature, cfg.count)
    return [Arc(float(k), cfg.arc_length) for k in curvatures]


def rock_radius(width_px: float, depth_m: float, f_px: float) -> float:
    """Physical radius from pixel width and depth: w * d / (2 f)."""
    if f_px <= 0:
        raise ValueError("focal length must be positive")
    if depth_m <= 0:
        raise ValueError("depth must be positive")
    if width_px < 0:
        raise ValueError("pixel width must be >= 0")
    return width_px * depth_m / (2.0 * f_px)


def filter_rocks(detections: Iterable[RockDetection], f_px: float,
                 min_radius: float = 0.12) -> list[RockObstacle]:
    """Detections -> rover-frame obstacles, dropping radii below the floor."""
    obstacles = []
    for det in detections:
        radius = rock_radius(det.width_px, det.depth_m, f_px)
        if radius < min_radius:
            continue
        obstacles.append(
            RockObstacle(
                det.depth_m * np.cos(det.bearing_rad),
                det.depth_m * np.sin(det.bearing_rad),
                radius,
            )
        )
    return obstacles


def arc_collides(arc: Arc, obstacles: Iterable[RockObstacle], rover_radius: float,
                 step: float = 0.02) -> bool:
    """True iff the arc passes within (obstacle + rover) radius of an obstacle.

    Checked by dense sampling; the inflation by half the sample spacing makes
    the answer conservative, so the check is exact to within the step.
    """
    obstacles = list(obstacles)
    if not obstacles:
        return False
    pts = arc.sample(step)
    centers = np.array([[o.x, o.y] for o in obstacles])
    limits = np.array([o.radius for o in obstacles]) + rover_radius + step / 2.0
    d2 = (pts[:, None, 0] - centers[None, :, 0]) ** 2 + (pts[:, None, 1] - centers[None, :, 1]) ** 2
    return bool(np.any(d2 < limits[None, :] ** 2))


def select_arc(arcs: Iterable[Arc], obstacles: Iterable[RockObstacle],
               rover_radius: float, goal, step: float = 0.02) -> Optional[Arc]:
    """Non-colliding arc whose endpoint is closest to the goal.

    Ties break toward smaller |curvature|, then toward the left (positive)
    arc. Returns None when every arc collides.
    """
    arcs = list(arcs)
    if not arcs:
        raise ValueError("arc fan is empty")
    obstacles = list(obstacles)
    goal = np.asarray(goal, dtype=float).reshape(2)
    best = None
    best_key = None
    for arc in arcs:
        if arc_collides(arc, obstacles, rover_radius, step):
            continue
        dist = float(np.linalg.norm(arc.endpoint() - goal))
        key = (dist, abs(arc.curvature), 0 if arc.curvature > 0 else 1)
        if best_key is None or key < best_key:
            best = arc
            best_key = key
    return best


@dataclass(frozen=True)
class BackupConfig:
    speed_fraction: float = 0.25   # stall when actual < fraction * expected
    stall_seconds: float = 2.5     # sustained-stall trigger (middle of 2-3 s band)
    reverse_seconds: float = 2.0
    reverse_speed: float = 0.2     # m/s magnitude


@dataclass(frozen=True)
class BackupState:
    phase: str = "normal"          # normal | reversing | replanning
    stall_timer: float = 0.0
    reverse_timer: float = 0.0
    expected_speed: float = 0.0
    last_trigger: str = ""         # "stall" or "no_arc", for the mission log

    def __post_init__(self):
        if self.stall_timer < 0 or self.reverse_timer < 0:
            raise ValueError("timers must be >= 0")


def backup_step(state: BackupState, actual_speed: float, arc_available: bool,
                dt: float, making_progress: bool = True,
                cfg: BackupConfig = BackupConfig()):
    """Advance the backup state machine one control cycle.

    Returns (new state, command override or None). In the normal phase the
    stall timer accumulates only while the speed is below the trigger fraction
    AND the rover is not making waypoint progress (so ordinary slowdowns, e.g.
    climbing, never trigger). Sustained stall or an empty arc fan starts a
    timed reverse, followed by a replanning phase that returns to normal on
    the first cycle with a feasible arc.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if state.phase == "normal":
        slow = actual_speed < cfg.speed_fraction * state.expected_speed
        timer = state.stall_timer + dt if (slow and not making_progress) else 0.0
        if timer > cfg.stall_seconds or not arc_available:
            trigger = "no_arc" if not arc_available else "stall"
            new = replace(state, phase="reversing", stall_timer=0.0,
                          reverse_timer=0.0, last_trigger=trigger)
            return new, (-cfg.reverse_speed, 0.0)
        return replace(state, stall_timer=timer), None
    if state.phase == "reversing":
        timer = state.reverse_timer + dt
        if timer >= cfg.reverse_seconds:
            return replace(state, phase="replanning", stall_timer=0.0,
                           reverse_timer=0.0), (0.0, 0.0)
        return replace(state, reverse_timer=timer), (-cfg.reverse_speed, 0.0)
    if state.phase == "replanning":
        if arc_available:
            return replace(state, phase="normal", stall_timer=0.0,
                           reverse_timer=0.0), None
        new = replace(state, phase="reversing", stall_timer=0.0,
                      reverse_timer=0.0, last_trigger="no_arc")
        return new, (-cfg.reverse_speed, 0.0)
    raise ValueError(f"unknown backup phase {state.phase!r}")


def format_debug_line(cycle: int, obstacles, arcs, collisions, selected) -> str:
    """One planner debug record per control cycle, line-oriented."""
    obs = ";".join(f"{o.x:.3f},{o.y:.3f},{o.radius:.3f}" for o in obstacles)
    fan = ";".join(
        f"{a.curvature:.3f}:{'X' if hit else '.'}" for a, hit in zip(arcs, collisions)
    )
    sel = f"{selected.curvature:.3f}" if selected is not None else "none"
    return f"cycle {cycle} obstacles [{obs}] fan [{fan}] selected {sel}"
