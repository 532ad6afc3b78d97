"""Synthetic scenes, pinhole projection and analytic Jacobians.

Conventions
-----------
* A ``Pose`` maps camera coordinates to world coordinates:
  ``p_world = rotation @ p_cam + translation``.
* Pose perturbations are right-multiplicative, rotation first::

      pose [+] (dtheta, dt) = (R Exp(dtheta), t + R dt)

* Landmark perturbations are additive in the world frame.
* The camera is a normalized pinhole: ``h(p) = (X/Z, Y/Z)`` of the
  camera-frame point.
* A scene's state vector stacks one 6-vector per pose in scene order, so
  pose ``i`` owns columns ``6 i .. 6 i + 5`` of ``H_x``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from covaug.errors import BehindCamera, DivergedTriangulation, InsufficientViews
from covaug.landmark_init import LinearizedLandmarkSystem
from covaug.matblocks import rcond
from covaug.relpose import RelPoseSystem

MIN_DEPTH = 1e-6
POSE_DIM = 6
PRESETS = ("general", "collinear", "single-view")


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return (
        np.eye(3)
        + (np.sin(theta) / theta) * K
        + ((1.0 - np.cos(theta)) / theta**2) * K @ K
    )


def so3_log(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    cos_theta = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    theta = np.arccos(cos_theta)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-8:
        return 0.5 * w
    if np.pi - theta < 1e-6:
        # near pi: axis from the symmetric part
        B = 0.5 * (R + np.eye(3))
        axis = np.sqrt(np.maximum(np.diag(B), 0.0))
        i = int(np.argmax(axis))
        axis = B[i] / np.sqrt(B[i, i])
        if axis @ w < 0:
            axis = -axis
        return theta * axis / np.linalg.norm(axis)
    return (theta / (2.0 * np.sin(theta))) * w


def orthonormalize(R) -> np.ndarray:
    """Closest rotation matrix (polar projection)."""
    U, _, Vt = np.linalg.svd(R)
    if np.linalg.det(U @ Vt) < 0:
        U[:, -1] = -U[:, -1]
    return U @ Vt


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(-1)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation a 3-vector")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9 or np.linalg.det(R) < 0:
            raise ValueError("rotation must be a proper orthonormal matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def to_camera(self, p) -> np.ndarray:
        return self.rotation.T @ (np.asarray(p, dtype=float) - self.translation)


@dataclass(frozen=True)
class Landmark:
    position: np.ndarray

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(-1)
        if p.shape != (3,) or not np.all(np.isfinite(p)):
            raise ValueError("landmark position must be a finite 3-vector")
        object.__setattr__(self, "position", p)


def boxplus_pose(pose: Pose, delta) -> Pose:
    delta = np.asarray(delta, dtype=float).reshape(6)
    R = orthonormalize(pose.rotation @ so3_exp(delta[:3]))
    return Pose(R, pose.translation + pose.rotation @ delta[3:])


def boxminus_pose(a: Pose, b: Pose) -> np.ndarray:
    """The increment ``delta`` with ``boxplus_pose(b, delta) == a``."""
    dtheta = so3_log(b.rotation.T @ a.rotation)
    dt = b.rotation.T @ (a.translation - b.translation)
    return np.concatenate([dtheta, dt])


def _camera_point(pose: Pose, lm: Landmark, min_depth: float) -> np.ndarray:
    pc = pose.to_camera(lm.position)
    if pc[2] <= min_depth:
        raise BehindCamera(float(pc[2]))
    return pc


def project(pose: Pose, lm: Landmark, min_depth: float = MIN_DEPTH) -> np.ndarray:
    pc = _camera_point(pose, lm, min_depth)
    return pc[:2] / pc[2]


def jacobians(pose: Pose, lm: Landmark, min_depth: float = MIN_DEPTH):
    """``(H_pose 2x6, H_lm 2x3)`` of ``project`` at ``(pose, lm)``.

    The perturbed camera point is ``p_c + [p_c]x dtheta - dt + R^T df``
    to first order.
    """
    pc = _camera_point(pose, lm, min_depth)
    X, Y, Z = pc
    J_proj = np.array([[1.0 / Z, 0.0, -X / Z**2], [0.0, 1.0 / Z, -Y / Z**2]])
    H_pose = np.hstack([J_proj @ skew(pc), -J_proj])
    H_lm = J_proj @ pose.rotation.T
    return H_pose, H_lm


def _reprojection(poses, observations, p):
    lm = Landmark(p)
    r = np.concatenate([np.asarray(z, dtype=float) - project(T, lm) for T, z in zip(poses, observations)])
    J = np.vstack([jacobians(T, lm)[1] for T in poses])
    return r, J


def midpoint_triangulation(pose_a: Pose, z_a, pose_b: Pose, z_b) -> Landmark:
    """Midpoint of the shortest segment joining two bearing rays."""
    da = pose_a.rotation @ np.array([z_a[0], z_a[1], 1.0])
    db = pose_b.rotation @ np.array([z_b[0], z_b[1], 1.0])
    oa, ob = pose_a.translation, pose_b.translation
    M = np.array([[da @ da, -da @ db], [da @ db, -db @ db]])
    rhs = np.array([da @ (ob - oa), db @ (ob - oa)])
    if rcond(M) < 1e-12:
        raise DivergedTriangulation("parallel rays: zero baseline or identical bearings")
    s, u = np.linalg.solve(M, rhs)
    return Landmark(0.5 * ((oa + s * da) + (ob + u * db)))


def triangulate_gauss_newton(
    poses: Sequence[Pose],
    observations: Sequence,
    initial: Landmark,
    max_iterations: int = 50,
    gradient_tol: float = 1e-10,
) -> Landmark:
    """Minimize the reprojection error of one landmark over its position."""
    if len(poses) < 2 or len(poses) != len(observations):
        raise ValueError("need at least two poses with one observation each")
    p = initial.position.copy()
    grad_norm = np.inf
    for _ in range(max_iterations):
        r, J = _reprojection(poses, observations, p)
        # r = z - h(p), so the cost gradient is -J^T r
        g = J.T @ r
        grad_norm = np.linalg.norm(g)
        if grad_norm < gradient_tol:
            break
        N = J.T @ J
        if rcond(N) < 1e-12:
            raise DivergedTriangulation("rank-deficient normal equations (unobservable landmark)")
        step = np.linalg.solve(N, g)
        p = p + step
        if np.linalg.norm(step) <= 1e-15 * (1.0 + np.linalg.norm(p)):
            r, J = _reprojection(poses, observations, p)
            grad_norm = np.linalg.norm(J.T @ r)
            break
    if grad_norm > 1e-6:
        raise DivergedTriangulation(f"gradient norm {grad_norm:.3e} after {max_iterations} iterations")
    return Landmark(p)


@dataclass(frozen=True)
class Scene:
    """Cameras, landmarks and the deterministic observation noise.

    ``visibility[i, j]`` says whether pose ``i`` observes landmark ``j``;
    by default every landmark in front of a camera is observed.
    ``relpose_index`` selects the camera whose pose is the relative-pose
    parameter; the landmark prior for that problem is
    ``landmark_prior_sigma**2 I`` per landmark.
    """

    poses: tuple
    landmarks: tuple
    noise_sigma: float
    rng_seed: int
    noise_free: bool = False
    visibility: np.ndarray | None = None
    relpose_index: int = 0
    landmark_prior_sigma: float = 0.05
    pose_prior_sigma: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        object.__setattr__(self, "landmarks", tuple(self.landmarks))
        if not self.noise_sigma > 0:
            raise ValueError("noise_sigma must be positive")
        vis = np.zeros((len(self.poses), len(self.landmarks)), dtype=bool)
        for i, T in enumerate(self.poses):
            for j, lm in enumerate(self.landmarks):
                vis[i, j] = T.to_camera(lm.position)[2] > MIN_DEPTH
        if self.visibility is not None:
            requested = np.asarray(self.visibility, dtype=bool)
            if requested.shape != vis.shape:
                raise ValueError("visibility must be poses x landmarks")
            vis &= requested
        vis.setflags(write=False)
        object.__setattr__(self, "visibility", vis)

    @property
    def state_dim(self) -> int:
        return POSE_DIM * len(self.poses)

    def observers(self, landmark_index: int) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.visibility[:, landmark_index])]

    def observations(self) -> dict[tuple[int, int], np.ndarray]:
        """Noisy normalized image observations keyed by ``(pose, landmark)``."""
        rng = np.random.default_rng([self.rng_seed, 1])
        out = {}
        for j, lm in enumerate(self.landmarks):
            for i, T in enumerate(self.poses):
                noise = rng.standard_normal(2)
                if self.visibility[i, j]:
                    z = project(T, lm)
                    if not self.noise_free:
                        z = z + self.noise_sigma * noise
                    out[(i, j)] = z
        return out

    def state_prior_cov(self) -> np.ndarray:
        """Correlated SPD pose-state covariance with roughly ``pose_prior_sigma`` scale."""
        rng = np.random.default_rng([self.rng_seed, 2])
        m = self.state_dim
        G = rng.standard_normal((m, m)) / np.sqrt(m)
        P = self.pose_prior_sigma**2 * (0.5 * G @ G.T + 0.5 * np.eye(m))
        return 0.5 * (P + P.T)


def generate_scene(
    num_poses: int = 5,
    num_landmarks: int = 10,
    noise_sigma: float = 1e-3,
    seed: int = 0,
    preset: str = "general",
    baseline: float = 1.0,
    noise_free: bool = False,
    landmark_prior_sigma: float = 0.05,
    pose_prior_sigma: float = 0.01,
) -> Scene:
    """Forward-looking cameras along the x axis and landmarks ahead of them.

    Presets
    -------
    general
        Landmarks uniform in a box 4-10 m in front of the cameras.
    collinear
        Landmarks on the optical axis of the relative-pose camera (pose 0).
    single-view
        Each landmark is visible from exactly one pose.
    """
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; expected one of {PRESETS}")
    if num_poses < 1:
        raise ValueError("need at least one pose")
    rng = np.random.default_rng([seed, 0])
    xs = np.linspace(-0.5, 0.5, num_poses) * baseline if num_poses > 1 else np.zeros(1)
    poses = []
    for x in xs:
        R = so3_exp(0.05 * rng.standard_normal(3))
        t = np.array([x, 0.0, 0.0]) + 0.02 * rng.standard_normal(3)
        poses.append(Pose(R, t))

    visibility = None
    if preset == "collinear":
        ref = poses[0]
        depths = rng.uniform(3.0, 12.0, num_landmarks)
        landmarks = [Landmark(ref.translation + ref.rotation @ np.array([0.0, 0.0, d])) for d in depths]
    else:
        pts = rng.uniform([-2.0, -2.0, 4.0], [2.0, 2.0, 10.0], (num_landmarks, 3))
        landmarks = [Landmark(p) for p in pts]
        if preset == "single-view":
            visibility = np.zeros((num_poses, num_landmarks), dtype=bool)
            visibility[np.arange(num_landmarks) % num_poses, np.arange(num_landmarks)] = True
    return Scene(
        tuple(poses), tuple(landmarks), noise_sigma, seed,
        noise_free=noise_free, visibility=visibility,
        landmark_prior_sigma=landmark_prior_sigma, pose_prior_sigma=pose_prior_sigma,
    )


def linearize_landmark(scene: Scene, landmark_index: int, estimate: Landmark, observations) -> LinearizedLandmarkSystem:
    views = scene.observers(landmark_index)
    k = 2 * len(views)
    residual = np.empty(k)
    H_x = np.zeros((k, scene.state_dim))
    H_f = np.empty((k, 3))
    for row, i in enumerate(views):
        T = scene.poses[i]
        rows = slice(2 * row, 2 * row + 2)
        residual[rows] = observations[(i, landmark_index)] - project(T, estimate)
        H_pose, H_lm = jacobians(T, estimate)
        H_x[rows, POSE_DIM * i : POSE_DIM * (i + 1)] = H_pose
        H_f[rows] = H_lm
    return LinearizedLandmarkSystem(residual, H_x, H_f, scene.noise_sigma)


def build_landmark_system(scene: Scene, landmark_index: int, observations=None) -> LinearizedLandmarkSystem:
    """Triangulate landmark ``landmark_index`` and linearize around the estimate."""
    views = scene.observers(landmark_index)
    if len(views) < 2:
        raise InsufficientViews(len(views))
    if observations is None:
        observations = scene.observations()
    zs = [observations[(i, landmark_index)] for i in views]
    poses = [scene.poses[i] for i in views]
    initial = midpoint_triangulation(poses[0], zs[0], poses[-1], zs[-1])
    estimate = triangulate_gauss_newton(poses, zs, initial)
    return linearize_landmark(scene, landmark_index, estimate, observations)


def build_relpose_system(scene: Scene, observations=None) -> RelPoseSystem:
    """Linearize the relative-pose camera's observations of the landmarks.

    The linearization point is the scene geometry itself (pose and landmark
    positions are inputs, not estimated here). ``H_f`` holds one 3-column
    block per visible landmark, in landmark order.
    """
    c = scene.relpose_index
    T = scene.poses[c]
    visible = [int(j) for j in np.flatnonzero(scene.visibility[c])]
    if not visible:
        raise InsufficientViews(0, required=1)
    if observations is None:
        observations = scene.observations()
    l = len(visible)
    k = 2 * l
    residual = np.empty(k)
    H_f = np.zeros((k, 3 * l))
    H_T = np.empty((k, POSE_DIM))
    for b, j in enumerate(visible):
        rows = slice(2 * b, 2 * b + 2)
        lm = scene.landmarks[j]
        residual[rows] = observations[(c, j)] - project(T, lm)
        H_pose, H_lm = jacobians(T, lm)
        H_T[rows] = H_pose
        H_f[rows, 3 * b : 3 * b + 3] = H_lm
    noise_cov = scene.noise_sigma**2 * np.eye(k)
    prior = scene.landmark_prior_sigma**2 * np.eye(3 * l)
    return RelPoseSystem(residual, H_f, H_T, noise_cov, prior)
