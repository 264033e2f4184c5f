"""High-level waypoint plans over the mapping square.

Two strategies: a nested 3x3 loop pattern (small loop around the lander, one
perimeter loop per grid cell, then cross and diagonal sweeps that revisit the
loop interiors) and an outward Archimedean spiral. Plans are pure functions
of their parameters; the mission loop owns the cursor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAP_SIDE = 27.0


@dataclass(frozen=True)
class WaypointPlan:
    waypoints: np.ndarray  # (N, 2) lander-frame meters
    arrival_radius: float = 1.2

    def __post_init__(self):
        wp = np.asarray(self.waypoints, dtype=float).reshape(-1, 2)
        if len(wp) == 0:
            raise ValueError("plan needs at least one waypoint")
        if np.any(np.all(np.isclose(wp[1:], wp[:-1]), axis=1)):
            raise ValueError("consecutive waypoints must be distinct")
        wp.setflags(write=False)
        object.__setattr__(self, "waypoints", wp)
        if self.arrival_radius <= 0:
            raise ValueError("arrival radius must be positive")

    def __len__(self) -> int:
        return len(self.waypoints)

    def path_length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)))


class PlanCursor:
    """Tracks the active waypoint; advances on arrival, None when exhausted."""

    def __init__(self, plan: WaypointPlan):
        self.plan = plan
        self.index = 0

    def next_waypoint(self, position) -> "np.ndarray | None":
        pos = np.asarray(position, dtype=float).reshape(2)
        while self.index < len(self.plan):
            wp = self.plan.waypoints[self.index]
            if np.linalg.norm(wp - pos) > self.plan.arrival_radius:
                return wp
            self.index += 1
        return None

    def skip(self) -> None:
        """Abandon the active waypoint (mission-level watchdog)."""
        if self.index < len(self.plan):
            self.index += 1

    @property
    def exhausted(self) -> bool:
        return self.index >= len(self.plan)


def next_waypoint(cursor: PlanCursor, position) -> "np.ndarray | None":
    return cursor.next_waypoint(position)


def _append(waypoints: list, pt) -> None:
    pt = (float(pt[0]), float(pt[1]))
    if waypoints and np.allclose(waypoints[-1], pt):
        return
    waypoints.append(pt)


def _square_loop(waypoints: list, center, half: float, midpoints: bool) -> None:
    """Closed square loop, starting at the corner nearest the previous point."""
    cx, cy = center
    corners = [
        (cx - half, cy - half),
        (cx + half, cy - half),
        (cx + half, cy + half),
        (cx - half, cy + half),
    ]
    if waypoints:
        prev = np.asarray(waypoints[-1])
        start = int(np.argmin([np.hypot(c[0] - prev[0], c[1] - prev[1]) for c in corners]))
    else:
        start = 0
    ordered = corners[start:] + corners[:start]
    ring = ordered + [ordered[0]]
    for a, b in zip(ring, ring[1:]):
        _append(waypoints, a)
        if midpoints:
            _append(waypoints, ((a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0))
    _append(waypoints, ring[0])


def nested_loop_plan(cell_size: float = 9.0, inset: float = 0.4,
                     map_side: float = MAP_SIDE,
                     initial_loop_radius: float = 2.0,
                     arrival_radius: float = 1.2,
                     edge_midpoints: bool = True,
                     sweep_margin: float = 0.9) -> WaypointPlan:
    """Nested 3x3 coverage pattern.

    Starts with a small octagonal loop around the lander, then walks the
    perimeter of each 3x3 cell (center, left-middle, top-middle, right-middle,
    bottom-middle, then top-left, top-right, bottom-left, bottom-right) with
    corners inset from the cell edges so adjacent loops overlap. Finishes with
    straight sweeps along both axes and both diagonals covering the loop
    interiors the perimeters miss.
    """
    if cell_size * 3 > map_side + 1e-9:
        raise ValueError("three cells must fit inside the mapping square")
    if inset < 0 or inset >= cell_size / 2:
        raise ValueError("inset must be in [0, cell_size / 2)")
    waypoints: list = []

    angles = np.arange(8) * (2 * np.pi / 8)
    for a in angles:
        _append(waypoints, (initial_loop_radius * np.cos(a), initial_loop_radius * np.sin(a)))
    _append(waypoints, (initial_loop_radius, 0.0))

    c = cell_size
    half = c / 2.0 - inset
    cell_centers = [
        (0.0, 0.0),
        (-c, 0.0), (0.0, c), (c, 0.0), (0.0, -c),
        (-c, c), (c, c), (-c, -c), (c, -c),
    ]
    for center in cell_centers:
        _square_loop(waypoints, center, half, edge_midpoints)

    reach = map_side / 2.0 - sweep_margin
    sweeps = [
        ((-reach, 0.0), (reach, 0.0)),
        ((0.0, reach), (0.0, -reach)),
        ((-reach, -reach), (reach, reach)),
        ((reach, -reach), (-reach, reach)),
    ]
    for a, b in sweeps:
        if waypoints and np.hypot(*(np.asarray(waypoints[-1]) - a)) > np.hypot(*(np.asarray(waypoints[-1]) - b)):
            a, b = b, a
        _append(waypoints, a)
        _append(waypoints, b)

    plan = WaypointPlan(np.array(waypoints), arrival_radius)
    bound = map_side / 2.0 + 1e-9
    if np.any(np.abs(plan.waypoints) > bound):
        raise ValueError("nested plan leaves the mapping square")
    return plan


def spiral_plan(r0: float = 2.0, dr: float = 2.5, r_max: float = 16.0,
                points_per_rev: int = 16,
                map_side: float = MAP_SIDE,
                arrival_radius: float = 1.2,
                clip_margin: float = 0.5) -> WaypointPlan:
    """Outward Archimedean spiral r(theta) = r0 + dr * theta / 2pi.

    Sampled at `points_per_rev` per revolution until r_max, with waypoints
    clamped into the mapping square minus `clip_margin`.
    """
    if r0 <= 0 or dr <= 0:
        raise ValueError("spiral needs positive r0 and dr")
    if r_max > map_side / 2.0 * np.sqrt(2.0):
        raise ValueError("r_max exceeds the mapping square diagonal")
    if points_per_rev < 4:
        raise ValueError("need at least 4 points per revolution")
    thetas = []
    k = 0
    while True:
        theta = 2 * np.pi * k / points_per_rev
        if r0 + dr * theta / (2 * np.pi) > r_max:
            break
        thetas.append(theta)
        k += 1
    theta = np.array(thetas)
    r = r0 + dr * theta / (2 * np.pi)
    xy = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    limit = map_side / 2.0 - clip_margin
    xy = np.clip(xy, -limit, limit)
    keep = [0]
    for idx in range(1, len(xy)):
        if not np.allclose(xy[idx], xy[keep[-1]]):
            keep.append(idx)
    return WaypointPlan(xy[keep], arrival_radius)


def write_plan(path, plan: WaypointPlan) -> None:
    """One `x y` waypoint per line."""
    with open(path, "w") as fh:
        for x, y in plan.waypoints:
            fh.write(f"{x:.17g} {y:.17g}\n")


def read_plan(path, arrival_radius: float = 1.2) -> WaypointPlan:
    pts = []
    with open(path) as fh:
        for line in fh:
            toks = line.split()
            if toks:
                pts.append((float(toks[0]), float(toks[1])))
    return WaypointPlan(np.array(pts), arrival_radius)


def polyline_covers(plan: WaypointPlan, sensing_radius: float = 3.0,
                    map_side: float = MAP_SIDE, cells: int = 180) -> float:
    """Fraction of mapping-square cell centers within sensing range of the path."""
    res = map_side / cells
    xs = -map_side / 2.0 + (np.arange(cells) + 0.5) * res
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    centers = np.stack([gx.ravel(), gy.ravel()], axis=1)
    covered = np.zeros(len(centers), dtype=bool)
    wp = plan.waypoints
    for a, b in zip(wp[:-1], wp[1:]):
        covered |= _segment_distances(centers, a, b) <= sensing_radius
        if covered.all():
            break
    return float(covered.mean())


def revisit_fraction(plan: WaypointPlan, radius: float = 1.0, lag: int = 2) -> float:
    """Fraction of waypoints within `radius` of a path segment at least `lag`
    waypoints older (loop-closure opportunity density of the plan geometry)."""
    wp = plan.waypoints
    hits = 0
    for k in range(len(wp)):
        upper = k - lag
        if upper < 1:
            continue
        near = False
        for s in range(upper):
            if _segment_distances(wp[k:k + 1], wp[s], wp[s + 1])[0] <= radius:
                near = True
                break
        if near:
            hits += 1
    return hits / len(wp)


def _segment_distances(points: np.ndarray, a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-18:
        return np.linalg.norm(points - a, axis=1)
    s = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    proj = a + s[:, None] * ab
    return np.linalg.norm(points - proj, axis=1)
