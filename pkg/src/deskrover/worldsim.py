"""Deterministic desk-scale world: terrain, rock layouts, rover kinematics,
and the parametric sensor oracles (noisy odometry, rock detections, relative
pose measurements for loop closure, and labeled ground points).

Everything is seeded: the same (scenario seed, noise seed, config) reproduces
bit-identical missions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cloud import LABEL_GROUND, LABEL_ROCK, PointBatch
from .gridmap import GridSpec, HeightGrid, RockGrid
from .se3 import Pose3, se3_exp

WORLD_SIDE = 40.0          # meters, terrain extent
MAP_SIDE = 27.0            # meters, scored mapping square
DEFAULT_ROVER_RADIUS = 0.7  # meters, physical footprint disc


@dataclass(frozen=True)
class Camera:
    """Oracle camera: focal length in pixels, horizontal fov, range.

    The wide default fov stands in for a multi-camera rig; a memoryless
    obstacle check needs rocks to stay visible while the rover skirts them.
    """

    f_px: float = 500.0
    fov_rad: float = 2.6
    max_range_m: float = 6.0

    def __post_init__(self):
        if self.f_px <= 0:
            raise ValueError("focal length must be positive")


@dataclass(frozen=True)
class SensorNoise:
    """Noise magnitudes for every oracle. All sigmas >= 0."""

    odom_trans_sigma_per_m: float = 0.01
    odom_rot_sigma_per_rad: float = 0.0087   # ~0.5 deg per radian turned
    loop_trans_sigma: float = 0.005
    loop_rot_sigma: float = 0.0044           # ~0.25 deg
    loop_failure_prob: float = 0.1
    rock_pixel_sigma: float = 2.0
    depth_sigma_frac: float = 0.02
    seed: int = 0

    def __post_init__(self):
        sigmas = (
            self.odom_trans_sigma_per_m, self.odom_rot_sigma_per_rad,
            self.loop_trans_sigma, self.loop_rot_sigma,
            self.rock_pixel_sigma, self.depth_sigma_frac,
        )
        if any(s < 0 for s in sigmas):
            raise ValueError("noise sigmas must be >= 0")
        if not 0.0 <= self.loop_failure_prob <= 1.0:
            raise ValueError("loop failure probability must be in [0, 1]")

    @staticmethod
    def noiseless(seed: int = 0) -> "SensorNoise":
        return SensorNoise(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, seed)


@dataclass(frozen=True)
class Rock:
    x: float
    y: float
    radius: float
    height: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("rock radius must be positive")


@dataclass(frozen=True)
class RockPreset:
    preset_id: int
    rocks: tuple[Rock, ...]

    def centers(self) -> np.ndarray:
        return np.array([[r.x, r.y] for r in self.rocks]).reshape(-1, 2)

    def radii(self) -> np.ndarray:
        return np.array([r.radius for r in self.rocks])


@dataclass(frozen=True)
class RockDetection:
    """One rock seen by the camera oracle, in the rover's horizontal frame."""

    width_px: float
    depth_m: float
    bearing_rad: float
    label: str = "rock"


@dataclass
class RoverState:
    pose: Pose3
    commanded_v: float = 0.0
    commanded_w: float = 0.0
    actual_speed: float = 0.0
    clock: float = 0.0


class Terrain:
    """Smooth seeded heightfield over the world square with bilinear queries."""

    def __init__(self, lattice: np.ndarray, spacing: float, origin: float, seed: int):
        self.lattice = lattice
        self.spacing = spacing
        self.origin = origin
        self.seed = seed
        dz_x = np.abs(np.diff(lattice, axis=0)).max() / spacing
        dz_y = np.abs(np.diff(lattice, axis=1)).max() / spacing
        # Bilinear patches are axis-wise Lipschitz; combine the axis bounds.
        self._lipschitz = float(np.hypot(dz_x, dz_y))

    @staticmethod
    def generate(seed: int, side: float = WORLD_SIDE, spacing: float = 0.25,
                 amplitude: float = 0.35) -> "Terrain":
        """Sum of smoothstep-interpolated value-noise octaves, seeded."""
        rng = np.random.default_rng(np.random.SeedSequence([17, seed]))
        half = side / 2.0
        n = int(round(side / spacing)) + 1
        xs = np.linspace(-half, half, n)
        gx, gy = np.meshgrid(xs, xs, indexing="ij")
        z = np.zeros((n, n))
        octave_cells = [4, 8, 16, 32]
        weights = np.array([8.0, 4.0, 2.0, 1.0])
        weights *= amplitude / weights.sum()
        for cells, w in zip(octave_cells, weights):
            ctrl = rng.uniform(-1.0, 1.0, size=(cells + 1, cells + 1))
            u = (gx + half) / side * cells
            v = (gy + half) / side * cells
            i0 = np.clip(u.astype(int), 0, cells - 1)
            j0 = np.clip(v.astype(int), 0, cells - 1)
            fu = u - i0
            fv = v - j0
            fu = fu * fu * (3.0 - 2.0 * fu)
            fv = fv * fv * (3.0 - 2.0 * fv)
            z += w * (
                ctrl[i0, j0] * (1 - fu) * (1 - fv)
                + ctrl[i0 + 1, j0] * fu * (1 - fv)
                + ctrl[i0, j0 + 1] * (1 - fu) * fv
                + ctrl[i0 + 1, j0 + 1] * fu * fv
            )
        return Terrain(z, spacing, -half, seed)

    def height(self, x, y):
        """Bilinear height at (x, y); clamps queries to the lattice edge."""
        nx = self.lattice.shape[0]
        u = np.clip((np.asarray(x, dtype=float) - self.origin) / self.spacing, 0, nx - 1 - 1e-12)
        v = np.clip((np.asarray(y, dtype=float) - self.origin) / self.spacing, 0, nx - 1 - 1e-12)
        i0 = u.astype(int)
        j0 = v.astype(int)
        fu = u - i0
        fv = v - j0
        z = (
            self.lattice[i0, j0] * (1 - fu) * (1 - fv)
            + self.lattice[i0 + 1, j0] * fu * (1 - fv)
            + self.lattice[i0, j0 + 1] * (1 - fu) * fv
            + self.lattice[i0 + 1, j0 + 1] * fu * fv
        )
        return z if np.ndim(x) else float(z)

    def lipschitz_bound(self) -> float:
        return self._lipschitz


@dataclass(frozen=True)
class Scenario:
    seed: int
    terrain: Terrain
    rocks: RockPreset
    spawn: Pose3


_PRESET_ROCK_COUNTS = {1: 14, 2: 18, 3: 26, 4: 9, 5: 21}


def rock_preset(preset_id: int) -> RockPreset:
    """Fixed rock layout for a preset id; independent of the scenario seed."""
    if preset_id not in _PRESET_ROCK_COUNTS:
        raise ValueError(f"preset id must be 1..5, got {preset_id}")
    rng = np.random.default_rng(np.random.SeedSequence([23, preset_id]))
    count = _PRESET_ROCK_COUNTS[preset_id]
    rocks: list[Rock] = []
    while len(rocks) < count:
        x, y = rng.uniform(-12.5, 12.5, size=2)
        radius = rng.uniform(0.18, 0.42)
        height = rng.uniform(0.12, 0.35)
        if np.hypot(x, y) < 2.8 + radius:
            continue
        if any(np.hypot(x - r.x, y - r.y) < 3.4 for r in rocks):
            continue
        rocks.append(Rock(x, y, radius, height))
    return RockPreset(preset_id, tuple(rocks))


def generate_scenario(seed: int, preset_id: int,
                      rover_radius: float = DEFAULT_ROVER_RADIUS) -> Scenario:
    """Deterministic (terrain, rocks, spawn) for a seed and rock preset."""
    terrain = Terrain.generate(seed)
    rocks = rock_preset(preset_id)
    rng = np.random.default_rng(np.random.SeedSequence([41, seed, preset_id]))
    while True:
        x, y = rng.uniform(-12.0, 12.0, size=2)
        yaw = rng.uniform(-np.pi, np.pi)
        if np.hypot(x, y) < 3.0:
            continue
        clear = all(
            np.hypot(x - r.x, y - r.y) > r.radius + rover_radius + 0.2
            for r in rocks.rocks
        )
        if clear:
            break
    spawn = pose_on_terrain(x, y, yaw, terrain)
    return Scenario(seed, terrain, rocks, spawn)


def pose_on_terrain(x: float, y: float, yaw: float, terrain: Terrain,
                    wheelbase: float = 0.5, track: float = 0.5) -> Pose3:
    """Planar pose with z slaved to the terrain and pitch/roll from its slope."""
    z = terrain.height(x, y)
    fwd = np.array([np.cos(yaw), np.sin(yaw)])
    left = np.array([-np.sin(yaw), np.cos(yaw)])
    hb = wheelbase / 2.0
    ht = track / 2.0
    dz_fwd = (terrain.height(x + hb * fwd[0], y + hb * fwd[1])
              - terrain.height(x - hb * fwd[0], y - hb * fwd[1]))
    dz_left = (terrain.height(x + ht * left[0], y + ht * left[1])
               - terrain.height(x - ht * left[0], y - ht * left[1]))
    pitch = -np.arctan2(dz_fwd, wheelbase)
    roll = np.arctan2(dz_left, track)
    return Pose3.from_planar(x, y, yaw, z=z, pitch=pitch, roll=roll)


def step_rover(state: RoverState, cmd: tuple[float, float], dt: float,
               terrain: Terrain, rocks: RockPreset,
               rover_radius: float = DEFAULT_ROVER_RADIUS) -> RoverState:
    """Advance the rover by one kinematic step.

    The planar motion is the exact constant-curvature unicycle update; z,
    pitch, and roll follow the terrain. A translation that would overlap a
    rock disc stalls the rover in place (actual speed drops to zero), which is
    the condition the backup maneuver recovers from.
    """
    if not 0.0 < dt <= 0.1:
        raise ValueError("dt must be in (0, 0.1] (simulator steps at >= 10 Hz)")
    v, w = cmd
    x, y = state.pose.translation[:2]
    yaw = state.pose.yaw()
    if abs(w) < 1e-12:
        nx = x + v * dt * np.cos(yaw)
        ny = y + v * dt * np.sin(yaw)
        nyaw = yaw
    else:
        nx = x + v / w * (np.sin(yaw + w * dt) - np.sin(yaw))
        ny = y + v / w * (-np.cos(yaw + w * dt) + np.cos(yaw))
        nyaw = yaw + w * dt

    stalled = False
    if abs(v) > 1e-12:
        limit = WORLD_SIDE / 2.0 - 0.5
        if abs(nx) > limit or abs(ny) > limit:
            stalled = True
        elif len(rocks.rocks):
            d = np.hypot(rocks.centers()[:, 0] - nx, rocks.centers()[:, 1] - ny)
            if np.any(d < rocks.radii() + rover_radius):
                stalled = True
    if stalled:
        nx, ny = x, y
        nyaw = yaw  # wheels push against the obstacle: no motion at all
        actual = 0.0
    else:
        actual = abs(v)
    pose = pose_on_terrain(nx, ny, nyaw, terrain)
    return RoverState(pose, v, w, actual, state.clock + dt)


def sense_odometry(true_delta: Pose3, noise: SensorNoise,
                   rng: Optional[np.random.Generator] = None):
    """Noisy relative pose plus its covariance.

    The perturbation is a right-multiplied Gaussian twist whose sigmas scale
    with the distance traveled and angle turned, so zero motion measures
    exactly as the identity. The returned 6x6 covariance ([rot, trans] twist
    order) is floored to stay positive definite in noiseless configurations.
    """
    if rng is None:
        rng = np.random.default_rng(noise.seed)
    dist = float(np.linalg.norm(true_delta.translation))
    try:
        angle = float(np.linalg.norm(true_delta.log()[:3]))
    except Exception:
        angle = np.pi
    sig_t = noise.odom_trans_sigma_per_m * dist
    sig_r = noise.odom_rot_sigma_per_rad * angle
    xi = np.zeros(6)
    if sig_r > 0:
        xi[:3] = rng.normal(0.0, sig_r, size=3)
    if sig_t > 0:
        xi[3:] = rng.normal(0.0, sig_t, size=3)
    measured = true_delta @ se3_exp(xi) if np.any(xi) else true_delta
    floor = 1e-4
    cov = np.diag([max(sig_r, floor) ** 2] * 3 + [max(sig_t, floor) ** 2] * 3)
    return measured, cov


def _visible_rocks(pose: Pose3, rocks: RockPreset, camera: Camera):
    """Indices, depths, and bearings of rocks inside the fov with line of sight."""
    x, y = pose.translation[:2]
    yaw = pose.yaw()
    out = []
    centers = rocks.centers()
    radii = rocks.radii()
    for k, rock in enumerate(rocks.rocks):
        dx, dy = rock.x - x, rock.y - y
        d = float(np.hypot(dx, dy))
        if d <= rock.radius or d > camera.max_range_m:
            continue
        bearing = float((np.arctan2(dy, dx) - yaw + np.pi) % (2 * np.pi) - np.pi)
        if abs(bearing) > camera.fov_rad / 2.0:
            continue
        # Line of sight: another closer rock disc crossing the view ray hides it.
        occluded = False
        u = np.array([dx, dy]) / d
        for m in range(len(rocks.rocks)):
            if m == k:
                continue
            rel = centers[m] - (x, y)
            along = float(rel @ u)
            if not 0.0 < along < d:
                continue
            if abs(u[0] * rel[1] - u[1] * rel[0]) < radii[m]:
                occluded = True
                break
        if not occluded:
            out.append((k, d, bearing))
    return out


def sense_rocks(pose: Pose3, rocks: RockPreset, camera: Camera,
                noise: SensorNoise,
                rng: Optional[np.random.Generator] = None) -> list[RockDetection]:
    """One detection per visible rock: noisy pixel width, depth, and bearing.

    Noiseless detections invert exactly through w_px * d / (2 f) to the true
    rock radius.
    """
    if rng is None:
        rng = np.random.default_rng(noise.seed)
    detections = []
    for k, d, bearing in _visible_rocks(pose, rocks, camera):
        rock = rocks.rocks[k]
        w_px = 2.0 * rock.radius * camera.f_px / d
        if noise.rock_pixel_sigma > 0:
            w_px += rng.normal(0.0, noise.rock_pixel_sigma)
        if noise.depth_sigma_frac > 0:
            d *= 1.0 + rng.normal(0.0, noise.depth_sigma_frac)
        detections.append(RockDetection(max(w_px, 1e-6), max(d, 1e-6), bearing))
    return detections


def sense_loop_closure(pose_i: Pose3, pose_j: Pose3, noise: SensorNoise,
                       rng: Optional[np.random.Generator] = None):
    """Relative-pose measurement inverse(pose_i) * pose_j, or None on failure.

    Returns (measured, covariance) with probability 1 - failure_prob, else
    None, standing in for a matcher that could not be verified.
    """
    if rng is None:
        rng = np.random.default_rng(noise.seed)
    if noise.loop_failure_prob > 0 and rng.random() < noise.loop_failure_prob:
        return None
    rel = pose_i.inverse() @ pose_j
    xi = np.zeros(6)
    if noise.loop_rot_sigma > 0:
        xi[:3] = rng.normal(0.0, noise.loop_rot_sigma, size=3)
    if noise.loop_trans_sigma > 0:
        xi[3:] = rng.normal(0.0, noise.loop_trans_sigma, size=3)
    measured = rel @ se3_exp(xi) if np.any(xi) else rel
    floor = 1e-4
    cov = np.diag(
        [max(noise.loop_rot_sigma, floor) ** 2] * 3
        + [max(noise.loop_trans_sigma, floor) ** 2] * 3
    )
    return measured, cov


def sample_ground_points(pose: Pose3, terrain: Terrain, rocks: RockPreset,
                         camera: Camera, budget: int,
                         rng: Optional[np.random.Generator] = None,
                         rock_detail: int = 24,
                         rock_pad: float = 0.25) -> PointBatch:
    """Labeled 3D points in the rover frame.

    `budget` points are drawn over the visible ground wedge; points landing on
    a rock footprint are labeled rock and lifted to the rock top. Each visible
    rock additionally contributes `rock_detail`-scaled samples spread at
    uniform density over its footprint plus a `rock_pad` ground ring, so the
    per-cell rock/ground vote balance tracks the footprint's area coverage.
    """
    if budget <= 0:
        raise ValueError("sample budget must be positive")
    if rng is None:
        rng = np.random.default_rng(0)
    x, y = pose.translation[:2]
    yaw = pose.yaw()
    bearings = rng.uniform(-camera.fov_rad / 2.0, camera.fov_rad / 2.0, size=budget)
    r_min = 0.5
    u = rng.uniform(0.0, 1.0, size=budget)
    ranges = np.sqrt(u * (camera.max_range_m**2 - r_min**2) + r_min**2)
    wx = x + ranges * np.cos(yaw + bearings)
    wy = y + ranges * np.sin(yaw + bearings)

    centers = rocks.centers()
    radii = rocks.radii()
    heights = np.array([r.height for r in rocks.rocks])

    def classify(px, py):
        if not len(centers):
            return np.full(px.shape, -1, dtype=int)
        d2 = (px[:, None] - centers[None, :, 0]) ** 2 + (py[:, None] - centers[None, :, 1]) ** 2
        inside = d2 < (radii[None, :] ** 2)
        hit = inside.any(axis=1)
        return np.where(hit, inside.argmax(axis=1), -1)

    rock_idx = classify(wx, wy)
    wz = terrain.height(wx, wy)
    labels = np.full(budget, LABEL_GROUND, dtype=np.uint8)
    on_rock = rock_idx >= 0
    if np.any(on_rock):
        labels[on_rock] = LABEL_ROCK
        wz = np.where(on_rock, wz + heights[np.clip(rock_idx, 0, None)], wz)
    world = [np.stack([wx, wy, wz], axis=1)]
    all_labels = [labels]

    ref_disc = 0.55  # detail count is quoted for a disc of this radius
    for k, d, bearing in _visible_rocks(pose, rocks, camera):
        rock = rocks.rocks[k]
        disc = rock.radius + rock_pad
        count = max(8, int(round(rock_detail * (disc / ref_disc) ** 2)))
        rr = disc * np.sqrt(rng.uniform(0.0, 1.0, size=count))
        ra = rng.uniform(0.0, 2 * np.pi, size=count)
        px = rock.x + rr * np.cos(ra)
        py = rock.y + rr * np.sin(ra)
        inside = rr < rock.radius
        pz = terrain.height(px, py) + np.where(inside, rock.height, 0.0)
        world.append(np.stack([px, py, pz], axis=1))
        all_labels.append(np.where(inside, LABEL_ROCK, LABEL_GROUND).astype(np.uint8))

    local = pose.inverse().apply(np.concatenate(world))
    return PointBatch(local, np.concatenate(all_labels))


def export_truth_grids(terrain: Terrain, rocks: RockPreset,
                       spec: GridSpec = GridSpec(), subgrid: int = 5):
    """Ground-truth height and rock grids on the mapping square.

    Each cell is probed on a subgrid x subgrid lattice: the height value is
    the median of probe heights outside rock footprints (no-data when every
    probe is on a rock), and the rock label is a strict majority of probes
    inside footprints, mirroring the estimator's vote rule.
    """
    n = spec.cells
    res = spec.resolution
    half = spec.half_side
    offs = (np.arange(subgrid) + 0.5) / subgrid * res
    centers = rocks.centers()
    radii = rocks.radii()

    # Probe lattice: (n, n, subgrid^2) points over the whole mapping square.
    edges = -half + np.arange(n) * res
    px = (edges[:, None] + offs[None, :]).reshape(n, 1, subgrid, 1)
    py = (edges[:, None] + offs[None, :]).reshape(1, n, 1, subgrid)
    gx = np.broadcast_to(px, (n, n, subgrid, subgrid)).reshape(n, n, -1)
    gy = np.broadcast_to(py, (n, n, subgrid, subgrid)).reshape(n, n, -1)
    if len(centers):
        flat_x = gx.reshape(-1)
        flat_y = gy.reshape(-1)
        on_rock = np.zeros(flat_x.shape, dtype=bool)
        for (cx, cy), r in zip(centers, radii):
            on_rock |= (flat_x - cx) ** 2 + (flat_y - cy) ** 2 < r * r
        on_rock = on_rock.reshape(n, n, -1)
    else:
        on_rock = np.zeros(gx.shape, dtype=bool)
    n_probes = gx.shape[-1]
    n_rock = on_rock.sum(axis=-1)
    rock = (n_rock > n_probes - n_rock).astype(np.uint8)

    zs = terrain.height(gx.reshape(-1), gy.reshape(-1)).reshape(n, n, -1)
    zs = np.where(on_rock, np.nan, zs)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN cells -> nan
        height = np.nanmedian(zs, axis=-1)
    hg = HeightGrid.from_values(spec, height)
    rg = RockGrid.from_labels(spec, rock)
    return hg, rg
