"""Pose-graph SLAM backend.

A graph of SE(3) pose nodes constrained by odometry/loop between-factors and
one anchoring prior, optimized by damped Gauss-Newton (Levenberg-Marquardt)
with tangent-space updates and a sparse direct solve of the normal equations.

Covariances are 6x6 in [rot, trans] twist ordering. The between residual is
r = log(z^-1 * T_i^-1 * T_j), so a measurement exactly satisfied by the
estimates gives r = 0, and nodes are retracted on the right: T <- T * exp(d).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .se3 import (
    Pose3,
    rotation_distance,
    se3_adjoint_rt,
    se3_exp_rt,
    se3_log_rt,
    se3_right_jacobian_inv,
)


class GaugeError(RuntimeError):
    """Optimization requested on a graph without an anchoring prior."""


@dataclass
class PoseNode:
    index: int
    estimate: Pose3
    timestamp: float = 0.0


@dataclass(frozen=True)
class BetweenFactor:
    """Relative-pose constraint between nodes i and j (measurement z of T_i^-1 T_j)."""

    i: int
    j: int
    z: Pose3
    cov: np.ndarray
    kind: str = "odometry"  # "odometry" | "loop"

    def __post_init__(self):
        object.__setattr__(self, "cov", _check_spd(self.cov))
        object.__setattr__(self, "_whitener", _whitener(self.cov))


@dataclass(frozen=True)
class PriorFactor:
    index: int
    z: Pose3
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "cov", _check_spd(self.cov))


@dataclass(frozen=True)
class Keyframe:
    """Periodically stored frame used for loop-closure gating.

    `signature` is the opaque observation handle the loop oracle consumes
    (this artifact passes the frame's ground-truth pose handle).
    """

    node_index: int
    pose: Pose3
    signature: Any = None


@dataclass(frozen=True)
class LoopGateConfig:
    tau_t: float = 1.2          # meters
    tau_r: float = 0.5236       # radians (30 deg)
    n_exclude: int = 5          # most-recent keyframes never considered
    max_candidates: int = 3
    keyframe_interval: int = 20

    def __post_init__(self):
        if self.tau_t <= 0 or not (0 < self.tau_r < np.pi) or self.n_exclude < 1:
            raise ValueError("invalid loop gate configuration")


@dataclass(frozen=True)
class LMConfig:
    max_iters: int = 100
    lambda0: float = 1e-4
    lambda_scale: float = 10.0
    rel_tol: float = 1e-9
    abs_tol: float = 1e-14
    grad_tol: float = 1e-12
    lambda_min: float = 1e-12
    lambda_max: float = 1e10


@dataclass
class OptimizeReport:
    initial_cost: float
    final_cost: float
    iterations: int
    accepted_steps: int
    converged: bool
    reason: str


def _check_spd(cov: np.ndarray) -> np.ndarray:
    cov = np.array(cov, dtype=float)
    if cov.shape != (6, 6):
        raise ValueError(f"covariance must be 6x6, got {cov.shape}")
    if np.abs(cov - cov.T).max() > 1e-12:
        raise ValueError("covariance must be symmetric")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ValueError("covariance must be positive definite") from None
    cov.setflags(write=False)
    return cov


def _whitener(cov: np.ndarray) -> np.ndarray:
    """W with W^T W = cov^-1, so the whitened residual is W @ r."""
    L = np.linalg.cholesky(cov)
    return np.linalg.inv(L)


def between_residual(factor: BetweenFactor, T_i: Pose3, T_j: Pose3) -> np.ndarray:
    """Twist r = log(z^-1 * T_i^-1 * T_j); zero iff estimates satisfy z."""
    E = factor.z.inverse() @ T_i.inverse() @ T_j
    return E.log()


def between_jacobians(factor: BetweenFactor, T_i: Pose3, T_j: Pose3):
    """Analytic d r / d(tangent of T_i), d r / d(tangent of T_j)."""
    r = between_residual(factor, T_i, T_j)
    Jr_inv = se3_right_jacobian_inv(r)
    B = T_j.inverse() @ T_i
    J_i = -Jr_inv @ se3_adjoint_rt(B.rotation, B.translation)
    J_j = Jr_inv
    return r, J_i, J_j


def maybe_make_keyframe(frame_index: int, interval: int = 20) -> bool:
    """Every `interval`-th frame (frame 0 included) is a keyframe."""
    if frame_index < 0:
        raise ValueError("frame index must be >= 0")
    return frame_index % interval == 0


def loop_candidates(
    graph: "PoseGraph",
    keyframes: Sequence[Keyframe],
    current: Keyframe,
    cfg: LoopGateConfig,
) -> list[Keyframe]:
    """Gated loop-closure candidates for the latest keyframe.

    Keyframes older than the `n_exclude` most recent are kept when both the
    translation gate ||t_i - t_j|| < tau_t and the rotation gate
    ||log(R_j^T R_i)|| < tau_r pass, using current graph estimates. Sorted by
    ascending translation distance and truncated to `max_candidates`.
    """
    older = sorted(
        (kf for kf in keyframes if kf.node_index < current.node_index),
        key=lambda kf: kf.node_index,
    )
    if cfg.n_exclude > 0:
        older = older[: -cfg.n_exclude] if len(older) > cfg.n_exclude else []
    cur_est = graph.nodes[current.node_index].estimate
    scored = []
    for kf in older:
        est = graph.nodes[kf.node_index].estimate
        dist = float(np.linalg.norm(est.translation - cur_est.translation))
        if dist >= cfg.tau_t:
            continue
        if rotation_distance(est.rotation, cur_est.rotation) >= cfg.tau_r:
            continue
        scored.append((dist, kf.node_index, kf))
    scored.sort(key=lambda item: (item[0], item[1]))
    return [kf for _, _, kf in scored[: cfg.max_candidates]]


def estimate_velocity(stamped_poses: Sequence[tuple[float, Pose3]], window: int = 5):
    """Mean finite-difference (linear m/s, signed angular rad/s) over the window."""
    if window < 2:
        raise ValueError("velocity window must cover at least 2 poses")
    recent = list(stamped_poses)[-window:]
    if len(recent) < 2:
        raise ValueError("need at least 2 poses to estimate velocity")
    lin = []
    ang = []
    for (t0, p0), (t1, p1) in zip(recent, recent[1:]):
        dt = t1 - t0
        if dt <= 0:
            raise ValueError("timestamps must strictly increase")
        lin.append(np.linalg.norm(p1.translation - p0.translation) / dt)
        dyaw = p1.yaw() - p0.yaw()
        dyaw = (dyaw + np.pi) % (2.0 * np.pi) - np.pi
        ang.append(dyaw / dt)
    return float(np.mean(lin)), float(np.mean(ang))


class PoseGraph:
    """Single-owner mutable pose graph anchored by exactly one prior."""

    def __init__(self, prior_pose: Pose3, prior_cov: np.ndarray, timestamp: float = 0.0):
        self.nodes: list[PoseNode] = [PoseNode(0, prior_pose, timestamp)]
        self.factors: list[BetweenFactor] = []
        self.prior = PriorFactor(0, prior_pose, prior_cov)
        self._loop_pairs: set[tuple[int, int]] = set()
        # True once optimize() converged and only exactly-satisfied odometry
        # extensions happened since (those leave the optimum stationary).
        self._converged_clean = False

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_factors(self) -> int:
        return len(self.factors)

    def estimates(self) -> list[Pose3]:
        return [n.estimate for n in self.nodes]

    def add_odometry(self, delta: Pose3, cov: np.ndarray, timestamp: float = 0.0) -> int:
        """Append a node initialized to previous * delta plus its odometry factor."""
        prev = self.nodes[-1]
        node = PoseNode(prev.index + 1, prev.estimate @ delta, timestamp)
        self.nodes.append(node)
        self.factors.append(BetweenFactor(prev.index, node.index, delta, cov, "odometry"))
        return node.index

    def add_loop_closure(self, i: int, j: int, z: Pose3, cov: np.ndarray) -> int:
        """Append a loop factor; estimates are untouched until optimize()."""
        n = self.num_nodes
        if not (0 <= i < n and 0 <= j < n):
            raise IndexError(f"loop closure references missing node ({i}, {j})")
        if i == j:
            raise ValueError("loop closure must connect distinct nodes")
        if (i, j) in self._loop_pairs:
            raise ValueError(f"duplicate loop closure ({i}, {j})")
        self.factors.append(BetweenFactor(i, j, z, cov, "loop"))
        self._loop_pairs.add((i, j))
        self._converged_clean = False
        return len(self.factors) - 1

    # -- optimization ------------------------------------------------------

    def _stacked_state(self):
        R = np.stack([n.estimate.rotation for n in self.nodes])
        t = np.stack([n.estimate.translation for n in self.nodes])
        return R, t

    def _stacked_factors(self):
        ii = np.array([f.i for f in self.factors], dtype=int)
        jj = np.array([f.j for f in self.factors], dtype=int)
        zR = np.stack([f.z.rotation for f in self.factors]) if self.factors else np.zeros((0, 3, 3))
        zt = np.stack([f.z.translation for f in self.factors]) if self.factors else np.zeros((0, 3))
        W = np.stack([f._whitener for f in self.factors]) if self.factors else np.zeros((0, 6, 6))
        return ii, jj, zR, zt, W

    def optimize(self, cfg: LMConfig = LMConfig(),
                 skip_if_extended: bool = False) -> OptimizeReport:
        """Minimize the Mahalanobis-weighted residual sum over all node estimates.

        Accepted Levenberg-Marquardt steps never increase the cost; the report
        carries initial/final cost, iteration count, and a convergence flag.
        Hitting max_iters returns the best state found with converged=False.

        With skip_if_extended, a graph that converged before and has only been
        extended by odometry factors their nodes exactly satisfy (which keeps
        the previous optimum stationary) reports convergence at the evaluated
        cost without a solve. Callers that edit estimates by hand must not set
        it.
        """
        if self.prior is None:
            raise GaugeError("pose graph has no anchoring prior")

        R, t = self._stacked_state()
        ii, jj, zR, zt, Wf = self._stacked_factors()
        zRT = np.swapaxes(zR, -1, -2)
        p_idx = self.prior.index
        pz_R = self.prior.z.rotation
        pz_t = self.prior.z.translation
        Wp = _whitener(self.prior.cov)
        n = self.num_nodes
        nf = len(ii)

        def residuals(R, t):
            """Whitened residual stack: factors then prior."""
            out = np.zeros((nf + 1, 6))
            if nf:
                RiT = np.swapaxes(R[ii], -1, -2)
                rel_R = RiT @ R[jj]
                rel_t = (RiT @ (t[jj] - t[ii])[..., None])[..., 0]
                E_R = zRT @ rel_R
                E_t = (zRT @ (rel_t - zt)[..., None])[..., 0]
                out[:-1] = (Wf @ se3_log_rt(E_R, E_t)[..., None])[..., 0]
            out[-1] = Wp @ se3_log_rt(pz_R.T @ R[p_idx], pz_R.T @ (t[p_idx] - pz_t))
            return out

        def cost_of(rw):
            return float(np.sum(rw * rw))

        def gradient_and_blocks(R, t):
            """Whitened residuals plus per-factor Jacobian blocks and gradient."""
            rw = np.zeros((nf + 1, 6))
            b = np.zeros(6 * n)
            if nf:
                RiT = np.swapaxes(R[ii], -1, -2)
                RjT = np.swapaxes(R[jj], -1, -2)
                rel_R = RiT @ R[jj]
                rel_t = (RiT @ (t[jj] - t[ii])[..., None])[..., 0]
                E_R = zRT @ rel_R
                E_t = (zRT @ (rel_t - zt)[..., None])[..., 0]
                r = se3_log_rt(E_R, E_t)
                rw[:-1] = (Wf @ r[..., None])[..., 0]
                Jr_inv = se3_right_jacobian_inv(r)
                B_R = np.swapaxes(rel_R, -1, -2)
                B_t = (RjT @ (t[ii] - t[jj])[..., None])[..., 0]
                J_i = Wf @ (-(Jr_inv @ se3_adjoint_rt(B_R, B_t)))
                J_j = Wf @ Jr_inv
                rwf = rw[:-1]
                gi = -(np.swapaxes(J_i, -1, -2) @ rwf[..., None])[..., 0]
                gj = -(np.swapaxes(J_j, -1, -2) @ rwf[..., None])[..., 0]
                idx = np.concatenate(
                    [(ii[:, None] * 6 + np.arange(6)).ravel(),
                     (jj[:, None] * 6 + np.arange(6)).ravel()]
                )
                b += np.bincount(idx, weights=np.concatenate([gi.ravel(), gj.ravel()]),
                                 minlength=6 * n)
            else:
                J_i = J_j = np.zeros((0, 6, 6))
            rp = se3_log_rt(pz_R.T @ R[p_idx], pz_R.T @ (t[p_idx] - pz_t))
            rw[-1] = Wp @ rp
            J_p = Wp @ se3_right_jacobian_inv(rp)
            b[p_idx * 6:p_idx * 6 + 6] -= J_p.T @ rw[-1]
            return rw, J_i, J_j, J_p, b

        # The block sparsity pattern is iteration-invariant: build the
        # block-row-major layout and duplicate-summing map once per call.
        if nf:
            brows = np.concatenate([ii, ii, jj, jj, [p_idx]])
            bcols = np.concatenate([ii, jj, ii, jj, [p_idx]])
        else:
            brows = np.array([p_idx])
            bcols = np.array([p_idx])
        order = np.lexsort((bcols, brows))
        br_s = brows[order]
        bc_s = bcols[order]
        new_group = np.empty(len(order), dtype=bool)
        new_group[0] = True
        new_group[1:] = (br_s[1:] != br_s[:-1]) | (bc_s[1:] != bc_s[:-1])
        group_starts = np.flatnonzero(new_group)
        bsr_indices = bc_s[group_starts].astype(np.int32)
        bsr_indptr = np.zeros(n + 1, dtype=np.int32)
        np.add.at(bsr_indptr, br_s[group_starts] + 1, 1)
        bsr_indptr = np.cumsum(bsr_indptr, dtype=np.int32)
        diag_blocks = np.flatnonzero(br_s[group_starts] == bc_s[group_starts])
        eye6 = np.eye(6)

        def blocks_to_data(J_i, J_j, J_p):
            if nf:
                JiT = np.swapaxes(J_i, -1, -2)
                JjT = np.swapaxes(J_j, -1, -2)
                stacked = np.concatenate(
                    [JiT @ J_i, JiT @ J_j, JjT @ J_i, JjT @ J_j,
                     (J_p.T @ J_p)[None]]
                )
            else:
                stacked = (J_p.T @ J_p)[None]
            return np.add.reduceat(stacked[order], group_starts, axis=0)

        def solve(block_data, lam, b):
            data = block_data.copy()
            data[diag_blocks] += lam * eye6
            H = sp.bsr_matrix(
                (data, bsr_indices, bsr_indptr),
                shape=(6 * n, 6 * n), blocksize=(6, 6),
            ).tocsc()
            try:
                return spla.splu(H, permc_spec="MMD_AT_PLUS_A").solve(b)
            except RuntimeError as exc:
                raise GaugeError(f"normal equations singular: {exc}") from exc

        def retract(R, t, delta):
            d = delta.reshape(n, 6)
            eR, et = se3_exp_rt(d)
            return R @ eR, (R @ et[..., None])[..., 0] + t

        cost = cost_of(residuals(R, t))
        initial_cost = cost
        if skip_if_extended and self._converged_clean:
            return OptimizeReport(initial_cost, initial_cost, 0, 0, True, "extended")
        lam = cfg.lambda0
        iterations = 0
        accepted = 0
        converged = False
        reason = "max_iters"

        while iterations < cfg.max_iters:
            iterations += 1
            rw, J_i, J_j, J_p, b = gradient_and_blocks(R, t)
            cost = cost_of(rw)
            if cost <= cfg.abs_tol:
                converged = True
                reason = "abs_cost"
                break
            if np.abs(b).max() < cfg.grad_tol:
                converged = True
                reason = "gradient"
                break
            block_data = blocks_to_data(J_i, J_j, J_p)
            step_done = False
            while lam <= cfg.lambda_max:
                delta = solve(block_data, lam, b)
                # Decrease predicted by the damped quadratic model; when it is
                # negligible relative to the cost, no step can help: converged.
                predicted = float(delta @ (lam * delta + b))
                if predicted <= max(cfg.rel_tol * cost, cfg.abs_tol):
                    step_done = True
                    converged = True
                    reason = "stalled"
                    break
                R_new, t_new = retract(R, t, delta)
                new_cost = cost_of(residuals(R_new, t_new))
                if new_cost <= cost:
                    R, t = R_new, t_new
                    accepted += 1
                    lam = max(lam / cfg.lambda_scale, cfg.lambda_min)
                    step_done = True
                    break
                lam *= cfg.lambda_scale
            if converged:
                break
            if not step_done:
                reason = "lambda_max"
                break
            if cost - new_cost <= cfg.rel_tol * max(cost, 1e-300):
                cost = new_cost
                converged = True
                reason = "rel_cost"
                break
            cost = new_cost

        for k, node in enumerate(self.nodes):
            node.estimate = Pose3(R[k], t[k])
        final_cost = cost_of(residuals(R, t))
        self._converged_clean = converged
        return OptimizeReport(initial_cost, final_cost, iterations, accepted, converged, reason)

    # -- serialization -----------------------------------------------------

    def dump(self, path) -> None:
        """Plain-text graph dump: one node or factor per line."""
        lines = ["# posegraph v1"]
        for node in self.nodes:
            pose = " ".join(f"{v:.17g}" for v in node.estimate.flat())
            lines.append(f"node {node.index} {node.timestamp:.17g} {pose}")
        pz = " ".join(f"{v:.17g}" for v in self.prior.z.flat())
        pc = " ".join(f"{v:.17g}" for v in np.asarray(self.prior.cov).ravel())
        lines.append(f"prior {self.prior.index} {pz} {pc}")
        for f in self.factors:
            z = " ".join(f"{v:.17g}" for v in f.z.flat())
            c = " ".join(f"{v:.17g}" for v in np.asarray(f.cov).ravel())
            lines.append(f"between {f.kind} {f.i} {f.j} {z} {c}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @staticmethod
    def load(path) -> "PoseGraph":
        nodes: list[PoseNode] = []
        prior: Optional[PriorFactor] = None
        factors: list[BetweenFactor] = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                kind, rest = line.split(None, 1)
                if kind == "node":
                    toks = rest.split()
                    idx = int(toks[0])
                    ts = float(toks[1])
                    pose = Pose3.from_flat([float(v) for v in toks[2:14]])
                    nodes.append(PoseNode(idx, pose, ts))
                elif kind == "prior":
                    toks = rest.split()
                    idx = int(toks[0])
                    pose = Pose3.from_flat([float(v) for v in toks[1:13]])
                    cov = np.array([float(v) for v in toks[13:49]]).reshape(6, 6)
                    prior = PriorFactor(idx, pose, cov)
                elif kind == "between":
                    toks = rest.split()
                    fk = toks[0]
                    i, j = int(toks[1]), int(toks[2])
                    pose = Pose3.from_flat([float(v) for v in toks[3:15]])
                    cov = np.array([float(v) for v in toks[15:51]]).reshape(6, 6)
                    factors.append(BetweenFactor(i, j, pose, cov, fk))
                else:
                    raise ValueError(f"unknown graph line kind: {kind}")
        if prior is None or not nodes:
            raise ValueError("graph file missing prior or nodes")
        nodes.sort(key=lambda n: n.index)
        graph = PoseGraph.__new__(PoseGraph)
        graph.nodes = nodes
        graph.prior = prior
        graph.factors = factors
        graph._loop_pairs = {(f.i, f.j) for f in factors if f.kind == "loop"}
        graph._converged_clean = False
        return graph


@dataclass
class BackendReport:
    """What one backend update did: the new node plus any keyframe activity."""

    node_index: int
    keyframe: Optional[Keyframe] = None
    candidates: list[Keyframe] = field(default_factory=list)
    loops_added: list[tuple[int, int]] = field(default_factory=list)
    loops_failed: int = 0
    opt_report: Optional[OptimizeReport] = None


class SlamBackend:
    """Sequential backend: insert odometry, manage keyframes, close loops, optimize.

    Not re-entrant; one mission loop owns it. Snapshots handed out are copies.
    """

    def __init__(
        self,
        initial_pose: Pose3,
        prior_cov: np.ndarray,
        gate: LoopGateConfig = LoopGateConfig(),
        lm: LMConfig = LMConfig(),
        initial_signature: Any = None,
        timestamp: float = 0.0,
    ):
        self.graph = PoseGraph(initial_pose, prior_cov, timestamp)
        self.gate = gate
        self.lm = lm
        self.keyframes: list[Keyframe] = [Keyframe(0, initial_pose, initial_signature)]

    def update(
        self,
        delta: Pose3,
        cov: np.ndarray,
        frame_index: int,
        loop_oracle: Optional[Callable[[Any, Any], Optional[tuple[Pose3, np.ndarray]]]] = None,
        signature: Any = None,
        timestamp: float = 0.0,
        cloud=None,
        points=None,
    ) -> BackendReport:
        """One backend update for a new frame.

        Inserts the composed pose and odometry factor, attaches the frame's
        local semantic points to the cloud; on keyframes, stores the keyframe,
        gates candidates, asks the loop oracle for a relative-pose measurement
        per candidate (adding a loop factor when it succeeds), and
        re-optimizes the graph.
        """
        node_index = self.graph.add_odometry(delta, cov, timestamp)
        if node_index != frame_index:
            raise ValueError(
                f"frame index {frame_index} does not match node index {node_index}"
            )
        if cloud is not None and points is not None:
            cloud.attach_points(node_index, points, self.graph.num_nodes)
        report = BackendReport(node_index)
        if not maybe_make_keyframe(frame_index, self.gate.keyframe_interval):
            return report

        current = Keyframe(node_index, self.graph.nodes[node_index].estimate, signature)
        self.keyframes.append(current)
        report.keyframe = current
        report.candidates = loop_candidates(self.graph, self.keyframes, current, self.gate)
        if loop_oracle is not None:
            for cand in report.candidates:
                measured = loop_oracle(cand.signature, current.signature)
                if measured is None:
                    report.loops_failed += 1
                    continue
                z, loop_cov = measured
                self.graph.add_loop_closure(cand.node_index, node_index, z, loop_cov)
                report.loops_added.append((cand.node_index, node_index))
        report.opt_report = self.graph.optimize(
            self.lm, skip_if_extended=not report.loops_added
        )
        return report
