"""Skill learning from demonstration records.

Demonstrations are segmented at gripper-change points; each segment gets a
time-based task-parameterized Gaussian mixture over (t, EE pose) observed
from every relevant task frame, plus a world-frame mixture over the base
pose. At reproduction time the per-frame Gaussians are transported into the
world frame and multiplied component-wise, Gaussian mixture regression turns
the product into a pose track over normalized time, and one of two policies
consumes the track: ee_plus_agent steers the full teleoperation stack with
synthetic operator signals, whole_body servos the base on the base mixture
and solves arm IK against the EE track directly.

Orientations are handled in the tangent space: residual rotation vectors
about a per-(segment, frame) anchor quaternion, re-linearized once about the
fitted mean after a first EM pass. Right-residuals (q = anchor * exp(r)) are
invariant under frame changes, so transporting a frame's Gaussians into the
world only rotates the position block and carries the anchor along.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .geometry import Pose, Twist, UnitQuaternion, average_quaternions
from .inference import Gripper, OperatorSignal
from .records import DemonstrationRecord, pose_from_doc
from .robot import (
    JointState,
    RobotDescription,
    clamp_state,
    diff_ik,
    forward_kinematics,
    neutral_state,
)
from .scripting import OperatorConfig, steer_signal
from .serialization import canonical_dumps
from .simulator import Simulator, SimulatorConfig, WaypointTracker, world_clearance
from .world import World, world_from_doc

SKILL_SCHEMA_VERSION = 1
POLICY_KINDS = ("ee_plus_agent", "whole_body")


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class ImitationConfig:
    n_components: int = 5
    em_tolerance: float = 1e-6
    em_max_iterations: int = 200
    regularization: float = 1e-6
    # frame kept when across-demo endpoint position variance (trace) is below
    endpoint_variance_max: float = 0.02
    seed: int = 0  # EM initialization jitter
    eps_pos: float = 0.05  # advance gates of the rollout stepping rule
    eps_rot: float = 0.2
    stall_ticks: int = 500
    hold_ticks: int = 200  # final pose command held this long after the track ends
    base_gain: float = 2.0  # whole_body base servo P gain, 1/s
    ee_v_max: float = 0.25  # whole_body EE twist caps
    ee_omega_max: float = 1.0


# -- mixtures ---------------------------------------------------------------


@dataclass
class FrameGaussians:
    """One frame's view of a segment: K Gaussians over (t, position, rotvec)."""

    name: str
    anchor: UnitQuaternion  # log-map base for the rotvec block
    means: np.ndarray  # (K, D)
    covariances: np.ndarray  # (K, D, D)


@dataclass
class TPGMM:
    priors: np.ndarray  # (K,), shared across frames
    frames: list[FrameGaussians]

    @property
    def n_components(self) -> int:
        return len(self.priors)

    def frame(self, name: str) -> FrameGaussians:
        for f in self.frames:
            if f.name == name:
                return f
        raise KeyError(f"model has no frame {name!r}")


@dataclass
class SkillSegment:
    gripper: Gripper  # constant gripper state during the segment
    duration_ticks: int  # mean demo length, sets the track resolution
    ee: TPGMM  # 7-dim: (t, position, rotvec)
    base: TPGMM | None = None  # 4-dim world-frame (t, x, y, yaw)


@dataclass
class SkillModel:
    robot: str
    frame_names: list[str]  # union of frames kept by any segment
    segments: list[SkillSegment]
    # log-likelihood traces per EM pass, for audit; not serialized
    training: list[dict] = field(default_factory=list, repr=False)

    def gripper_schedule(self) -> list[str]:
        return [seg.gripper.value for seg in self.segments]

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SKILL_SCHEMA_VERSION,
            "kind": "skill",
            "robot": self.robot,
            "frames": list(self.frame_names),
            "gripper_schedule": self.gripper_schedule(),
            "segments": [_segment_to_doc(seg) for seg in self.segments],
        }

    def save(self, path) -> None:
        from pathlib import Path

        Path(path).write_text(canonical_dumps(self.to_json_dict()) + "\n", encoding="utf-8")

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SkillModel":
        version = doc.get("schema_version")
        if version != SKILL_SCHEMA_VERSION:
            raise ValueError(f"unsupported skill schema_version {version!r}")
        if doc.get("kind") != "skill":
            raise ValueError(f"not a skill model: kind {doc.get('kind')!r}")
        segments = [_segment_from_doc(d) for d in doc["segments"]]
        return cls(
            robot=doc["robot"],
            frame_names=list(doc["frames"]),
            segments=segments,
        )

    @classmethod
    def load(cls, path) -> "SkillModel":
        import json
        from pathlib import Path

        return cls.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _gaussians_to_doc(fg: FrameGaussians) -> dict:
    k, d = fg.means.shape
    return {
        "name": fg.name,
        "anchor": [float(v) for v in fg.anchor.wxyz],
        "means": [[float(v) for v in m] for m in fg.means],
        # row-major flattening, one list per component
        "covariances": [[float(v) for v in c.reshape(d * d)] for c in fg.covariances],
    }


def _gaussians_from_doc(doc: dict) -> FrameGaussians:
    means = np.array(doc["means"], dtype=float)
    d = means.shape[1]
    covs = np.array(doc["covariances"], dtype=float).reshape(-1, d, d)
    return FrameGaussians(
        name=doc["name"],
        anchor=UnitQuaternion.from_wxyz(doc["anchor"]),
        means=means,
        covariances=covs,
    )


def _tpgmm_to_doc(model: TPGMM) -> dict:
    return {
        "priors": [float(v) for v in model.priors],
        "frames": [_gaussians_to_doc(f) for f in model.frames],
    }


def _tpgmm_from_doc(doc: dict) -> TPGMM:
    return TPGMM(
        priors=np.array(doc["priors"], dtype=float),
        frames=[_gaussians_from_doc(f) for f in doc["frames"]],
    )


def _segment_to_doc(seg: SkillSegment) -> dict:
    doc = {
        "gripper": seg.gripper.value,
        "duration_ticks": int(seg.duration_ticks),
        "ee": _tpgmm_to_doc(seg.ee),
    }
    if seg.base is not None:
        doc["base"] = _tpgmm_to_doc(seg.base)
    return doc


def _segment_from_doc(doc: dict) -> SkillSegment:
    return SkillSegment(
        gripper=Gripper(doc["gripper"]),
        duration_ticks=int(doc["duration_ticks"]),
        ee=_tpgmm_from_doc(doc["ee"]),
        base=_tpgmm_from_doc(doc["base"]) if "base" in doc else None,
    )


# -- EM ---------------------------------------------------------------------


def _log_gaussian(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Log density of rows of x under N(mean, cov); raises LinAlgError if not SPD."""
    chol = np.linalg.cholesky(cov)
    diff = x - mean
    sol = np.linalg.solve(chol, diff.T)
    maha = np.sum(sol * sol, axis=0)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    d = x.shape[1]
    return -0.5 * (maha + logdet + d * math.log(2.0 * math.pi))


def _floor_covariance(sig: np.ndarray, reg: float) -> np.ndarray:
    """Clip eigenvalues up to reg.

    This is the exact M-step maximizer over {cov : min eig >= reg}, which is
    what keeps the raw log-likelihood nondecreasing; adding reg*I instead
    re-injects mass into collapsed directions every iteration and can walk
    the likelihood backwards on near-deterministic data.
    """
    sig = 0.5 * (sig + sig.T)
    vals, vecs = np.linalg.eigh(sig)
    if vals[0] >= reg:
        return sig
    return (vecs * np.maximum(vals, reg)) @ vecs.T


def _chunk_indices(t: np.ndarray, k: int) -> list[np.ndarray]:
    # uniform time-slicing: sort by t, split into k nearly equal runs
    order = np.argsort(t, kind="stable")
    return [chunk for chunk in np.array_split(order, k) if len(chunk)]


def fit_tpgmm(
    samples: dict[str, np.ndarray],
    n_components: int,
    config: ImitationConfig | None = None,
    *,
    context: str = "model",
) -> tuple[TPGMM, list[float]]:
    """EM fit of a shared-prior mixture over per-frame sample matrices.

    Every frame's matrix holds the same N samples viewed from that frame
    (column 0 is normalized time, shared across frames), so one set of
    responsibilities couples the frames. Returns the model (anchors set to
    identity; callers owning orientation data overwrite them) and the
    per-iteration log-likelihood trace.
    """
    cfg = config or ImitationConfig()
    names = list(samples)
    if not names:
        raise FitError(f"{context}: no frames to fit")
    mats = [np.asarray(samples[n], dtype=float) for n in names]
    n = mats[0].shape[0]
    if any(m.shape[0] != n for m in mats):
        raise FitError(f"{context}: frames disagree on sample count")
    k = min(n_components, n)
    if k < 1:
        raise FitError(f"{context}: no samples")

    rng = np.random.default_rng(cfg.seed)
    reg = cfg.regularization
    chunks = _chunk_indices(mats[0][:, 0], k)
    k = len(chunks)
    priors = np.array([len(c) for c in chunks], dtype=float) / n
    means = []
    covs = []
    for mat in mats:
        d = mat.shape[1]
        jitter = mat.std(axis=0) * 1e-3
        mu = np.empty((k, d))
        sig = np.empty((k, d, d))
        for i, idx in enumerate(chunks):
            rows = mat[idx]
            mu[i] = rows.mean(axis=0) + rng.normal(size=d) * jitter
            ctr = rows - rows.mean(axis=0)
            sig[i] = _floor_covariance(ctr.T @ ctr / len(rows), reg)
        means.append(mu)
        covs.append(sig)

    trace: list[float] = []
    prev = None
    for _ in range(cfg.em_max_iterations):
        log_w = np.broadcast_to(np.log(priors), (n, k)).copy()
        for f in range(len(mats)):
            for i in range(k):
                try:
                    log_w[:, i] += _log_gaussian(mats[f], means[f][i], covs[f][i])
                except np.linalg.LinAlgError:
                    raise FitError(
                        f"{context}: component {i} covariance singular in frame "
                        f"{names[f]!r} despite regularization"
                    ) from None
        norm = logsumexp(log_w, axis=1)
        ll = float(norm.sum())
        trace.append(ll)
        if prev is not None and ll - prev < cfg.em_tolerance:
            break
        prev = ll

        gamma = np.exp(log_w - norm[:, None])
        nk = gamma.sum(axis=0)
        if np.any(nk <= 0.0):
            dead = int(np.argmin(nk))
            raise FitError(f"{context}: component {dead} collapsed (no support)")
        priors = nk / n
        for f, mat in enumerate(mats):
            means[f] = gamma.T @ mat / nk[:, None]
            for i in range(k):
                ctr = mat - means[f][i]
                covs[f][i] = _floor_covariance((gamma[:, i, None] * ctr).T @ ctr / nk[i], reg)

    frames = [
        FrameGaussians(name, UnitQuaternion.identity(), means[f], covs[f])
        for f, name in enumerate(names)
    ]
    return TPGMM(priors=priors, frames=frames), trace


# -- demonstrations to samples ----------------------------------------------


def segment_rows(rows: list[dict]) -> list[tuple[int, int]]:
    """Half-open row ranges of constant gripper state; gripper changes cut."""
    if not rows:
        return []
    bounds = [0]
    for i in range(1, len(rows)):
        if rows[i]["gripper"] != rows[i - 1]["gripper"]:
            bounds.append(i)
    bounds.append(len(rows))
    return list(zip(bounds[:-1], bounds[1:]))


def _segment_times(length: int) -> np.ndarray:
    if length == 1:
        return np.zeros(1)
    return np.arange(length, dtype=float) / (length - 1)


def _ee_samples(
    rows: list[dict], start: int, end: int, frame_pose: Pose, anchor: UnitQuaternion
) -> np.ndarray:
    inv = frame_pose.inverse()
    anchor_inv = anchor.inverse()
    t = _segment_times(end - start)
    out = np.empty((end - start, 7))
    for j in range(start, end):
        local = inv.compose(pose_from_doc(rows[j]["ee"]))
        out[j - start, 0] = t[j - start]
        out[j - start, 1:4] = local.position
        out[j - start, 4:7] = (anchor_inv * local.orientation).rotvec()
    return out


def _local_orientations(rows, start, end, frame_pose: Pose) -> list[UnitQuaternion]:
    inv_q = frame_pose.orientation.inverse()
    return [inv_q * pose_from_doc(rows[j]["ee"]).orientation for j in range(start, end)]


def _base_samples(rows: list[dict], start: int, end: int) -> np.ndarray:
    t = _segment_times(end - start)
    out = np.empty((end - start, 4))
    for j in range(start, end):
        out[j - start, 0] = t[j - start]
        out[j - start, 1:4] = rows[j]["base"]
    return out


def _relinearize(
    model: TPGMM, anchors: dict[str, UnitQuaternion]
) -> dict[str, UnitQuaternion]:
    """Shift each frame's anchor to the prior-weighted mean rotation.

    Means move by the first-order chart change; the second EM pass (run on
    freshly logged residuals) absorbs the higher-order error.
    """
    out = {}
    for fg in model.frames:
        shift = model.priors @ fg.means[:, 4:7]
        out[fg.name] = anchors[fg.name] * UnitQuaternion.from_rotvec(shift)
        fg.means[:, 4:7] -= shift
    return out


def fit_skill(
    demos: list[DemonstrationRecord],
    config: ImitationConfig | None = None,
    *,
    frames: list[str] | None = None,
    fit_base: bool = True,
) -> SkillModel:
    """Fit one SkillModel from demonstration records.

    Segmentation must agree across demos (same count, same gripper states).
    Frame relevance is judged per segment: a frame is kept when the
    across-demo variance of the segment endpoint position in that frame
    stays below config.endpoint_variance_max (trace, m^2); if every frame
    fails the gate the steadiest one is kept so the product never empties.
    A single demo is accepted (all variances are zero then); the CLI is
    where the two-demo floor for generalization lives.
    """
    cfg = config or ImitationConfig()
    if not demos:
        raise FitError("no demonstrations given")

    robots = [d.header["robot"]["name"] for d in demos]
    if len(set(robots)) != 1:
        raise FitError(f"demonstrations mix robots: {sorted(set(robots))}")
    worlds = [world_from_doc(d.header["world"]) for d in demos]

    available = ["world"] + [f.name for f in worlds[0].frames]
    for i, w in enumerate(worlds[1:], start=1):
        names = {"world"} | {f.name for f in w.frames}
        missing = [n for n in available if n not in names]
        if missing:
            raise FitError(f"demonstration {i} is missing frame {missing[0]!r}")
    frame_names = list(frames) if frames is not None else available
    for name in frame_names:
        if name not in available:
            raise FitError(f"demonstrations have no frame {name!r}")

    segmentations = [segment_rows(d.rows) for d in demos]
    counts = [len(s) for s in segmentations]
    if len(set(counts)) != 1:
        raise FitError(f"segment counts differ across demos: {counts}")
    n_segments = counts[0]
    if n_segments == 0:
        raise FitError("demonstrations are empty")
    for s in range(n_segments):
        states = {demos[i].rows[segmentations[i][s][0]]["gripper"] for i in range(len(demos))}
        if len(states) != 1:
            raise FitError(f"segment {s} gripper state differs across demos: {sorted(states)}")

    segments: list[SkillSegment] = []
    training: list[dict] = []
    kept_union: list[str] = []
    for s in range(n_segments):
        spans = [segmentations[i][s] for i in range(len(demos))]
        gripper = Gripper(demos[0].rows[spans[0][0]]["gripper"])
        duration = int(round(float(np.mean([end - start for start, end in spans]))))

        # relevance gate on segment-endpoint position variance per frame
        endpoint_var = {}
        for name in frame_names:
            ends = np.array(
                [
                    worlds[i].frame(name).inverse().compose(
                        pose_from_doc(demos[i].rows[end - 1]["ee"])
                    ).position
                    for i, (start, end) in enumerate(spans)
                ]
            )
            endpoint_var[name] = float(ends.var(axis=0).sum())
        kept = [n for n in frame_names if endpoint_var[n] < cfg.endpoint_variance_max]
        if not kept:
            kept = [min(frame_names, key=endpoint_var.get)]
        for name in kept:
            if name not in kept_union:
                kept_union.append(name)

        anchors = {}
        for name in kept:
            quats = []
            for i, (start, end) in enumerate(spans):
                quats.extend(_local_orientations(demos[i].rows, start, end, worlds[i].frame(name)))
            anchors[name] = average_quaternions(quats)

        def stack(anchor_map):
            return {
                name: np.vstack(
                    [
                        _ee_samples(
                            demos[i].rows, start, end, worlds[i].frame(name), anchor_map[name]
                        )
                        for i, (start, end) in enumerate(spans)
                    ]
                )
                for name in kept
            }

        ctx = f"segment {s}"
        ee_model, trace1 = fit_tpgmm(stack(anchors), cfg.n_components, cfg, context=ctx)
        anchors = _relinearize(ee_model, anchors)
        ee_model, trace2 = fit_tpgmm(stack(anchors), cfg.n_components, cfg, context=ctx)
        for fg in ee_model.frames:
            fg.anchor = anchors[fg.name]
        training.append({"name": f"{ctx} ee pass 1", "log_likelihood": trace1})
        training.append({"name": f"{ctx} ee pass 2", "log_likelihood": trace2})

        base_model = None
        if fit_base:
            base_rows = {
                "world": np.vstack(
                    [_base_samples(demos[i].rows, start, end) for i, (start, end) in enumerate(spans)]
                )
            }
            base_model, base_trace = fit_tpgmm(
                base_rows, cfg.n_components, cfg, context=f"{ctx} base"
            )
            training.append({"name": f"{ctx} base", "log_likelihood": base_trace})

        segments.append(
            SkillSegment(gripper=gripper, duration_ticks=duration, ee=ee_model, base=base_model)
        )

    return SkillModel(
        robot=robots[0], frame_names=kept_union, segments=segments, training=training
    )


# alias matching the operation-level name
fit = fit_skill


# -- frame product and regression --------------------------------------------


@dataclass
class WorldGMM:
    """A segment's mixture transported to the world frame.

    The rotvec block lives in the chart about `anchor`; position and time
    are plain world coordinates.
    """

    priors: np.ndarray
    means: np.ndarray  # (K, D)
    covariances: np.ndarray  # (K, D, D)
    anchor: UnitQuaternion


def frame_product(model: TPGMM, frames: dict[str, Pose]) -> WorldGMM:
    """Transport per-frame Gaussians to the world frame and multiply them.

    The linear map per frame is blockdiag(1, R, I): time unchanged, position
    rotated and shifted, rotvec residuals unchanged because right-residuals
    are invariant under left composition. Residual charts from different
    frames are aligned to the first frame's world anchor by a first-order
    mean shift (exact whenever the frame orientations agree).
    """
    if not model.frames:
        raise ValueError("model has no frames")
    for fg in model.frames:
        if fg.name not in frames:
            raise KeyError(f"missing frame {fg.name!r}")

    d = model.frames[0].means.shape[1]
    ref_anchor: UnitQuaternion | None = None
    lam_sum = np.zeros((model.n_components, d, d))
    eta_sum = np.zeros((model.n_components, d))
    for fg in model.frames:
        pose = frames[fg.name]
        rot = pose.orientation.rotation_matrix()
        a = np.eye(d)
        a[1:4, 1:4] = rot
        b = np.zeros(d)
        b[1:4] = pose.position
        world_anchor = pose.orientation * fg.anchor
        if ref_anchor is None:
            ref_anchor = world_anchor
            delta = np.zeros(3)
        else:
            delta = (ref_anchor.inverse() * world_anchor).rotvec()
        means = fg.means @ a.T + b
        if d >= 7:
            means[:, 4:7] += delta
        for k in range(model.n_components):
            cov = a @ fg.covariances[k] @ a.T
            lam = np.linalg.inv(cov)
            lam_sum[k] += lam
            eta_sum[k] += lam @ means[k]

    covs = np.empty_like(lam_sum)
    means = np.empty_like(eta_sum)
    for k in range(model.n_components):
        cov = np.linalg.inv(lam_sum[k])
        covs[k] = 0.5 * (cov + cov.T)
        means[k] = covs[k] @ eta_sum[k]
    return WorldGMM(
        priors=model.priors.copy(),
        means=means,
        covariances=covs,
        anchor=ref_anchor if ref_anchor is not None else UnitQuaternion.identity(),
    )


@dataclass
class RegressedPoint:
    mean: np.ndarray  # conditional mean over the non-time dims
    covariance: np.ndarray
    confidence: float  # max component responsibility; 0.0 on fallback
    fallback: bool


def gmr_condition(gmm: WorldGMM, t: float) -> RegressedPoint:
    """Condition the mixture on time (dimension 0)."""
    k, d = gmm.means.shape
    mu_t = gmm.means[:, 0]
    var_t = gmm.covariances[:, 0, 0]
    with np.errstate(over="ignore", divide="ignore"):  # -inf weights handled below
        log_h = np.log(gmm.priors) - 0.5 * (
            (t - mu_t) ** 2 / var_t + np.log(2.0 * math.pi * var_t)
        )
    norm = logsumexp(log_h)
    if not np.isfinite(norm):
        h = np.zeros(k)
        h[int(np.argmin(np.abs(t - mu_t)))] = 1.0
        fallback = True
    else:
        h = np.exp(log_h - norm)
        fallback = False

    cond_means = np.empty((k, d - 1))
    cond_covs = np.empty((k, d - 1, d - 1))
    for i in range(k):
        cov = gmm.covariances[i]
        gain = cov[1:, 0] / var_t[i]
        cond_means[i] = gmm.means[i, 1:] + gain * (t - mu_t[i])
        cond_covs[i] = cov[1:, 1:] - np.outer(gain, cov[0, 1:])

    mean = h @ cond_means
    cov = np.zeros((d - 1, d - 1))
    for i in range(k):
        dm = cond_means[i] - mean
        cov += h[i] * (cond_covs[i] + np.outer(dm, dm))
    return RegressedPoint(
        mean=mean,
        covariance=0.5 * (cov + cov.T),
        confidence=0.0 if fallback else float(h.max()),
        fallback=fallback,
    )


def gmr(gmm: WorldGMM, t: float) -> tuple[Pose, RegressedPoint]:
    """Conditional EE pose at normalized time t; orientation via exp map."""
    point = gmr_condition(gmm, t)
    pose = Pose(
        point.mean[0:3].copy(),
        (gmm.anchor * UnitQuaternion.from_rotvec(point.mean[3:6])).canonical(),
    )
    return pose, point


# -- rollouts -----------------------------------------------------------------


@dataclass
class TrackPoint:
    pose: Pose
    base: np.ndarray | None  # (3,) world (x, y, yaw), whole_body only
    segment: int
    gripper: Gripper


def skill_track(
    model: SkillModel, world: World, *, with_base: bool = False
) -> list[TrackPoint]:
    """Discretize every segment's GMR into per-tick commanded poses."""
    frames = {name: world.frame(name) for name in model.frame_names}
    track: list[TrackPoint] = []
    for s, seg in enumerate(model.segments):
        product = frame_product(seg.ee, frames)
        base_product = None
        if with_base:
            if seg.base is None:
                raise FitError("whole_body rollout needs a base-pose fit in the model")
            base_product = frame_product(seg.base, {"world": Pose.identity()})
        n = max(int(seg.duration_ticks), 2)
        for j in range(n):
            t = j / (n - 1)
            pose, _ = gmr(product, t)
            base_cmd = None
            if base_product is not None:
                base_cmd = gmr_condition(base_product, t).mean.copy()
            track.append(TrackPoint(pose=pose, base=base_cmd, segment=s, gripper=seg.gripper))
    return track


def _within(ee: Pose, target: Pose, cfg: ImitationConfig) -> bool:
    return (
        float(np.linalg.norm(ee.position - target.position)) <= cfg.eps_pos
        and ee.orientation.angle_to(target.orientation) <= cfg.eps_rot
    )


def _report(
    tracker: WaypointTracker,
    *,
    collision_ticks: int,
    min_clearance: float,
    stalled: bool,
    track_index: int,
    track_len: int,
    timeout_ticks: int,
) -> dict:
    finished = track_index >= track_len
    completed = tracker.completion_tick is not None and tracker.completion_tick <= timeout_ticks
    return {
        "success": bool(
            tracker.complete and completed and collision_ticks == 0 and not stalled and finished
        ),
        "completion_ticks": tracker.completion_tick,
        "rms_error": tracker.rms_error(),
        "progress": tracker.progress(),
        "min_clearance": min_clearance,
        "collision_ticks": collision_ticks,
        "stalled": bool(stalled),
        "track_progress": track_index / track_len if track_len else 0.0,
    }


def rollout_ee_plus_agent(
    model: SkillModel,
    world: World,
    desc: RobotDescription,
    *,
    config: ImitationConfig | None = None,
    operator: OperatorConfig | None = None,
    start: JointState | None = None,
    sim_config: SimulatorConfig | None = None,
) -> dict:
    """Drive the full teleoperation stack along the learned EE track.

    Commanded poses become synthetic operator signals (the same steering the
    virtual operator uses), so base and torso motion come entirely from the
    base agent reacting to the extrapolated plan, exactly as during the
    demonstrations.
    """
    cfg = config or ImitationConfig()
    ocfg = operator or OperatorConfig()
    if world.task is None:
        raise ValueError("world has no task")
    track = skill_track(model, world)
    sim = Simulator(world, desc, config=sim_config, start=start)

    idx = 0
    last_advance = 0
    stalled = False
    current_segment = -1
    pending: Gripper | None = None
    timeout = world.task.timeout_ticks
    while idx < len(track) and sim.state.tick < timeout:
        point = track[idx]
        if point.segment != current_segment:
            current_segment = point.segment
            pending = point.gripper
        sig = steer_signal(
            sim.state.ee, point.pose, ocfg, gripper=pending or Gripper.HOLD
        )
        pending = None
        sim.step(sig)
        if _within(sim.state.ee, point.pose, cfg):
            idx += 1  # never more than one index per tick
            last_advance = sim.state.tick
        elif sim.state.tick - last_advance >= cfg.stall_ticks:
            stalled = True
            break
    # hold the last pose command until the task gates close or the budget runs out
    held = 0
    while (
        idx >= len(track)
        and track
        and not stalled
        and sim.progress() < 1.0
        and held < cfg.hold_ticks
        and sim.state.tick < timeout
    ):
        sim.step(steer_signal(sim.state.ee, track[-1].pose, ocfg))
        held += 1
    for _ in range(ocfg.settle_ticks):
        sim.step(OperatorSignal.inactive())

    report = sim.report()
    report.update(
        stalled=bool(stalled),
        track_progress=idx / len(track) if track else 0.0,
        ticks=sim.state.tick,
    )
    report["success"] = bool(report["success"] and not stalled and idx >= len(track))
    return report


def rollout_whole_body(
    model: SkillModel,
    world: World,
    desc: RobotDescription,
    *,
    config: ImitationConfig | None = None,
    start: JointState | None = None,
    sim_config: SimulatorConfig | None = None,
) -> dict:
    """Servo the base on the base mixture and the arm on the EE track.

    The base follows its recorded world-frame track; the arm solves damped
    IK for whatever EE error remains after the base's contribution. EE
    tracking has priority in the sense that the arm sees the full residual;
    the report carries the base deviation so conflicts are visible.
    """
    cfg = config or ImitationConfig()
    scfg = sim_config or SimulatorConfig()
    if world.task is None:
        raise ValueError("world has no task")
    track = skill_track(model, world, with_base=True)
    loop = _WholeBodyLoop(world, desc, cfg, scfg, start)

    idx = 0
    last_advance = 0
    stalled = False
    timeout = world.task.timeout_ticks
    while idx < len(track) and loop.tick < timeout:
        loop.step(track[idx])
        if _within(loop.ee, track[idx].pose, cfg):
            idx += 1  # never more than one index per tick
            last_advance = loop.tick
        elif loop.tick - last_advance >= cfg.stall_ticks:
            stalled = True
            break
    held = 0
    while (
        idx >= len(track)
        and track
        and not stalled
        and not loop.tracker.complete
        and held < cfg.hold_ticks
        and loop.tick < timeout
    ):
        loop.step(track[-1])
        held += 1

    report = _report(
        loop.tracker,
        collision_ticks=loop.collision_ticks,
        min_clearance=loop.min_clearance,
        stalled=stalled,
        track_index=idx,
        track_len=len(track),
        timeout_ticks=timeout,
    )
    report["base_rms"] = math.sqrt(loop.base_sq / loop.tick) if loop.tick else 0.0
    report["ticks"] = loop.tick
    return report


class _WholeBodyLoop:
    """Per-tick state of the whole_body servo: base P control plus arm IK.

    The arm solves for the EE twist left over after the base's contribution,
    so EE tracking has priority; base deviation accumulates for the report.
    Collision gating matches the simulator: reject entering contact, allow
    only clearance-improving motion while in contact.
    """

    def __init__(self, world, desc, cfg, scfg, start):
        self.world = world
        self.desc = desc
        self.cfg = cfg
        self.scfg = scfg
        self.state = clamp_state(desc, start.copy() if start is not None else neutral_state(desc))
        self.ee = forward_kinematics(desc, self.state)
        self.tracker = WaypointTracker.for_world(world)
        self.clearance = world_clearance(world, desc, self.state, 0, scfg.capsule_radius)
        self.min_clearance = self.clearance
        self.collided = False
        self.collision_ticks = 0
        self.base_sq = 0.0
        self.tick = 0
        self._dynamic = any(o.schedule for o in world.obstacles)

    def step(self, point: TrackPoint) -> None:
        desc, cfg, state, ee = self.desc, self.cfg, self.state, self.ee
        dt = self.scfg.tick_s
        target_base = point.base

        # base P-servo in the world frame, clipped to platform limits
        v_xy = cfg.base_gain * (target_base[:2] - state.base[:2])
        speed = float(np.linalg.norm(v_xy))
        if speed > desc.base_v_max:
            v_xy *= desc.base_v_max / speed
        yaw_err = math.remainder(target_base[2] - state.base[2], math.tau)
        omega = float(np.clip(cfg.base_gain * yaw_err, -desc.base_omega_max, desc.base_omega_max))

        # EE twist toward the commanded pose, minus what the base provides
        lin = (point.pose.position - ee.position) / dt
        ln = float(np.linalg.norm(lin))
        if ln > cfg.ee_v_max:
            lin *= cfg.ee_v_max / ln
        ang = (point.pose.orientation * ee.orientation.inverse()).rotvec() / dt
        an = float(np.linalg.norm(ang))
        if an > cfg.ee_omega_max:
            ang *= cfg.ee_omega_max / an
        arm_offset = ee.position - np.array([state.base[0], state.base[1], 0.0])
        base_lin = np.array([v_xy[0], v_xy[1], 0.0]) + np.cross(
            np.array([0.0, 0.0, omega]), arm_offset
        )
        qdot = diff_ik(desc, state, Twist(lin - base_lin, ang - np.array([0.0, 0.0, omega])))

        base = state.base + np.array([v_xy[0] * dt, v_xy[1] * dt, omega * dt])
        driven = state.driven() + qdot * dt
        cand = clamp_state(desc, JointState(base=base, torso=driven[0], arm=driven[1:]))
        self.tick += 1

        cur_clear = self.clearance
        if self._dynamic:
            cur_clear = world_clearance(
                self.world, desc, state, self.tick, self.scfg.capsule_radius
            )
        cand_clear = world_clearance(self.world, desc, cand, self.tick, self.scfg.capsule_radius)
        if not self.collided:
            if cand_clear > 0.0:
                self.state, self.clearance = cand, cand_clear
            else:
                self.collided = True
                self.clearance = cur_clear
        else:
            if cand_clear > cur_clear:
                self.state, self.clearance = cand, cand_clear
                if cand_clear > 0.0:
                    self.collided = False
            else:
                self.clearance = cur_clear
        self.ee = forward_kinematics(desc, self.state)
        self.min_clearance = min(self.min_clearance, self.clearance)
        self.collision_ticks += int(self.collided)
        self.base_sq += float(np.sum((self.state.base[:2] - target_base[:2]) ** 2))
        self.tracker.update(self.ee, self.tick)


def rollout(
    policy_kind: str,
    model: SkillModel,
    world: World,
    desc: RobotDescription,
    **kwargs,
) -> dict:
    if policy_kind == "ee_plus_agent":
        return rollout_ee_plus_agent(model, world, desc, **kwargs)
    if policy_kind == "whole_body":
        kwargs.pop("operator", None)
        return rollout_whole_body(model, world, desc, **kwargs)
    raise ValueError(f"unknown rollout policy {policy_kind!r}; expected one of {POLICY_KINDS}")
