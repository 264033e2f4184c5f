"""deskrover: desk-scale rover autonomy sandbox.

Pose-graph SLAM with loop closures, semantic grid mapping, coverage and
arc-based motion planning, and competition-style scoring, wired around a
deterministic parametric simulator.
"""

from .cloud import PointBatch, SemanticCloud, SemanticPoint
from .coverage import PlanCursor, WaypointPlan, nested_loop_plan, spiral_plan
from .gridmap import GridSpec, HeightGrid, RockGrid, build_height_grid, build_rock_grid
from .mission import MissionConfig, MissionResult, run_mission, run_suite
from .motion import Arc, BackupState, RockObstacle, arc_collides, select_arc
from .scoring import MapScore, TrajectoryMetric, score_height, score_rock, trajectory_rmse
from .se3 import DegenerateRotationError, Pose3, rotation_distance, se3_exp, se3_log
from .slamgraph import (
    BetweenFactor,
    Keyframe,
    LMConfig,
    LoopGateConfig,
    PoseGraph,
    PriorFactor,
    SlamBackend,
    between_residual,
    estimate_velocity,
    loop_candidates,
    maybe_make_keyframe,
)
from .worldsim import (
    Camera,
    RockDetection,
    RockPreset,
    RoverState,
    Scenario,
    SensorNoise,
    Terrain,
    generate_scenario,
    sense_loop_closure,
    sense_odometry,
    sense_rocks,
    sample_ground_points,
    step_rover,
)

__version__ = "0.1.0"
