"""Parametric skeletal body and a procedural motion generator.

The body follows the SMPL-X structure at desk scale: a 24-joint skeleton, a
capsule-sampled humanoid template, linear shape / pose / expression
blendshapes and linear blend skinning.  Poses are 24 x 6 continuous (6D)
rotations, one per joint.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff.io import load_tensor, save_tensor
from .autodiff.tensor import ContractError, DimensionError
from .vocab import ACTIONS, REGIONS, ConfigurationError, check

logger = logging.getLogger(__name__)

N_JOINTS = 24
N_BETAS = 4
N_POSE_BLEND = 4
N_EXPR = 2

JOINT_NAMES = (
    "pelvis", "l_hip", "r_hip", "spine1", "l_knee", "r_knee", "spine2", "l_ankle", "r_ankle",
    "spine3", "l_foot", "r_foot", "neck", "l_collar", "r_collar", "head", "l_shoulder",
    "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist", "l_hand", "r_hand",
)
PARENTS = np.array([-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21])
MIRROR_PAIRS = ((1, 2), (4, 5), (7, 8), (10, 11), (13, 14), (16, 17), (18, 19), (20, 21), (22, 23))
J = {name: i for i, name in enumerate(JOINT_NAMES)}

# y up, subject faces +z, the body's left side is +x; A-pose arms.
REST_JOINTS = np.array([
    [0.0, 0.95, 0.0], [0.09, 0.88, 0.0], [-0.09, 0.88, 0.0], [0.0, 1.05, 0.0],
    [0.10, 0.50, 0.0], [-0.10, 0.50, 0.0], [0.0, 1.18, 0.0], [0.10, 0.09, 0.0],
    [-0.10, 0.09, 0.0], [0.0, 1.30, 0.0], [0.10, 0.02, 0.11], [-0.10, 0.02, 0.11],
    [0.0, 1.50, 0.0], [0.07, 1.43, 0.0], [-0.07, 1.43, 0.0], [0.0, 1.62, 0.0],
    [0.18, 1.43, 0.0], [-0.18, 1.43, 0.0], [0.36, 1.25, 0.0], [-0.36, 1.25, 0.0],
    [0.51, 1.09, 0.02], [-0.51, 1.09, 0.02], [0.56, 1.03, 0.03], [-0.56, 1.03, 0.03],
])

# (driving joint, child joint, capsule radius, region)
_SEGMENTS = [
    ("pelvis", "spine1", 0.13, "torso"), ("spine1", "spine2", 0.13, "torso"),
    ("spine2", "spine3", 0.14, "torso"), ("spine3", "neck", 0.11, "torso"),
    ("neck", "head", 0.05, "neck"),
    ("pelvis", "l_hip", 0.09, "upper_leg"), ("pelvis", "r_hip", 0.09, "upper_leg"),
    ("l_hip", "l_knee", 0.075, "upper_leg"), ("r_hip", "r_knee", 0.075, "upper_leg"),
    ("l_knee", "l_ankle", 0.055, "lower_leg"), ("r_knee", "r_ankle", 0.055, "lower_leg"),
    ("l_ankle", "l_foot", 0.045, "foot"), ("r_ankle", "r_foot", 0.045, "foot"),
    ("spine3", "l_collar", 0.07, "torso"), ("spine3", "r_collar", 0.07, "torso"),
    ("l_collar", "l_shoulder", 0.06, "torso"), ("r_collar", "r_shoulder", 0.06, "torso"),
    ("l_shoulder", "l_elbow", 0.05, "upper_arm"), ("r_shoulder", "r_elbow", 0.05, "upper_arm"),
    ("l_elbow", "l_wrist", 0.04, "forearm"), ("r_elbow", "r_wrist", 0.04, "forearm"),
    ("l_wrist", "l_hand", 0.035, "hand"), ("r_wrist", "r_hand", 0.035, "hand"),
]
POSE_BLEND_JOINTS = (J["l_knee"], J["r_knee"], J["l_elbow"], J["r_elbow"])


class DegeneracyError(ValueError):
    pass


@dataclass(frozen=True)
class BodyTemplate:
    rest_vertices: np.ndarray      # (V, 3)
    shape_basis: np.ndarray        # (V, 3, n_betas)
    pose_basis: np.ndarray         # (V, 3, n_pose_features)
    expr_basis: np.ndarray         # (V, 3, n_expr)
    joint_regressor: np.ndarray    # (K, V)
    weights: np.ndarray            # (V, K)
    parents: np.ndarray            # (K,), -1 marks the root
    regions: np.ndarray = field(default=None)           # (V,) index into REGIONS
    pose_blend_joints: tuple = POSE_BLEND_JOINTS

    @property
    def n_vertices(self) -> int:
        return self.rest_vertices.shape[0]

    @property
    def n_joints(self) -> int:
        return self.parents.shape[0]

    def rest_joints(self, betas=None) -> np.ndarray:
        return self.joint_regressor @ self._shaped_rest(betas)

    def _shaped_rest(self, betas) -> np.ndarray:
        if betas is None:
            return self.rest_vertices
        betas = np.asarray(betas, dtype=np.float64)
        if betas.shape != (self.shape_basis.shape[2],):
            raise DimensionError(f"betas must have length {self.shape_basis.shape[2]}, got {betas.shape}")
        return self.rest_vertices + self.shape_basis @ betas


@dataclass
class BodyParams:
    betas: np.ndarray
    pose: np.ndarray           # (24, 6)
    expression: np.ndarray = None

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64)
        self.pose = np.asarray(self.pose, dtype=np.float64).reshape(-1, 6)
        if self.expression is None:
            self.expression = np.zeros(N_EXPR)
        self.expression = np.asarray(self.expression, dtype=np.float64)
        if self.pose.shape != (N_JOINTS, 6):
            raise DimensionError(f"pose must be {N_JOINTS}x6, got {self.pose.shape}")
        for arr in (self.betas, self.pose, self.expression):
            if not np.isfinite(arr).all():
                raise ValueError("body parameters must be finite")

    @classmethod
    def rest(cls, betas=None) -> "BodyParams":
        return cls(np.zeros(N_BETAS) if betas is None else betas, identity_pose())


# -- rotations ----------------------------------------------------------------

def rot6d_to_matrix(r) -> np.ndarray:
    """Gram-Schmidt the two 3-vectors in ``r`` into the first two columns of a rotation."""
    r = np.asarray(r, dtype=np.float64).reshape(6)
    a1, a2 = r[:3], r[3:]
    n1 = np.linalg.norm(a1)
    if n1 < 1e-12:
        raise DegeneracyError("first 6D column is zero")
    b1 = a1 / n1
    u2 = a2 - (b1 @ a2) * b1
    n2 = np.linalg.norm(u2)
    if n2 < 1e-9 * max(np.linalg.norm(a2), 1e-300) or n2 < 1e-12:
        raise DegeneracyError("6D columns are parallel or zero")
    b2 = u2 / n2
    return np.stack([b1, b2, np.cross(b1, b2)], axis=1)


def rot6d_to_matrices(pose: np.ndarray) -> np.ndarray:
    pose = np.asarray(pose, dtype=np.float64).reshape(-1, 6)
    return np.stack([rot6d_to_matrix(r) for r in pose])


def matrix_to_rot6d(rot: np.ndarray) -> np.ndarray:
    rot = np.asarray(rot, dtype=np.float64)
    return np.concatenate([rot[..., :, 0], rot[..., :, 1]], axis=-1)


def axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    k = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def identity_pose() -> np.ndarray:
    return np.tile(np.array([1.0, 0, 0, 0, 1.0, 0]), (N_JOINTS, 1))


# -- template -----------------------------------------------------------------

def _orthonormal_frame(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(d, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(d, e1)


def build_template(ring_spacing: float = 0.07, around: int = 7) -> BodyTemplate:
    """Procedural humanoid: capsules along bones, a head sphere, joint octahedra."""
    verts, normals, regions, weights = [], [], [], []
    region_index = {name: i for i, name in enumerate(REGIONS)}

    def add(v, n, region, w):
        verts.append(v)
        normals.append(n)
        regions.append(region_index[region])
        weights.append(w)

    for a, b, radius, region in _SEGMENTS:
        ja, jb = J[a], J[b]
        pa, pb = REST_JOINTS[ja], REST_JOINTS[jb]
        axis = pb - pa
        length = np.linalg.norm(axis)
        d = axis / length
        e1, e2 = _orthonormal_frame(d)
        rings = max(2, int(round(length / ring_spacing)))
        for i in range(rings):
            u = (i + 0.5) / rings
            for k in range(around):
                phi = 2 * np.pi * (k + 0.5 * (i % 2)) / around
                n = np.cos(phi) * e1 + np.sin(phi) * e2
                w = np.zeros(N_JOINTS)
                w[ja] = 1.0
                if u > 0.6:
                    w[jb] += 0.5 * (u - 0.6) / 0.4
                    w[ja] -= 0.5 * (u - 0.6) / 0.4
                parent = PARENTS[ja]
                if u < 0.2 and parent >= 0:
                    w[parent] += 0.3 * (0.2 - u) / 0.2
                    w[ja] -= 0.3 * (0.2 - u) / 0.2
                add(pa + u * axis + radius * n, n, region, w)

    # head sphere, rigidly attached to the head joint
    centre = REST_JOINTS[J["head"]] + np.array([0.0, 0.05, 0.0])
    n_head = 60
    golden = np.pi * (3.0 - np.sqrt(5.0))
    for i in range(n_head):
        y = 1 - 2 * (i + 0.5) / n_head
        r = np.sqrt(1 - y * y)
        n = np.array([np.cos(golden * i) * r, y, np.sin(golden * i) * r])
        w = np.zeros(N_JOINTS)
        w[J["head"]] = 1.0
        region = "hair" if (y > 0.35 or (n[2] < -0.3 and y > -0.2)) else "head"
        add(centre + np.array([0.095, 0.115, 0.1]) * n, n, region, w)

    # six vertices around every joint; their mean is the joint itself
    joint_regressor = np.zeros((N_JOINTS, 0))
    octa = np.vstack([np.eye(3), -np.eye(3)])
    joint_rows = []
    for j in range(N_JOINTS):
        start = len(verts)
        for n in octa:
            w = np.zeros(N_JOINTS)
            if PARENTS[j] >= 0:
                w[j], w[PARENTS[j]] = 0.5, 0.5
            else:
                w[j] = 1.0
            add(REST_JOINTS[j] + 0.02 * n, n, _joint_region(j), w)
        joint_rows.append(range(start, start + 6))

    V = len(verts)
    verts = np.array(verts)
    normals = np.array(normals)
    weights = np.array(weights)
    joint_regressor = np.zeros((N_JOINTS, V))
    for j, rows in enumerate(joint_rows):
        joint_regressor[j, list(rows)] = 1.0 / 6.0

    shape_basis = np.zeros((V, 3, N_BETAS))
    shape_basis[:, 1, 0] = 0.1 * verts[:, 1]                       # stature
    shape_basis[:, :, 1] = 0.03 * normals                            # girth
    upper = 1.0 / (1.0 + np.exp(-(verts[:, 1] - 1.25) / 0.04))
    shape_basis[:, 0, 2] = 0.12 * verts[:, 0] * upper                # shoulder width
    torso = np.array([REGIONS[r] == "torso" for r in regions])
    shape_basis[torso, 2, 3] = 0.04 * np.maximum(normals[torso, 2], 0.0)  # belly

    expr_basis = np.zeros((V, 3, N_EXPR))
    head = np.array([REGIONS[r] == "head" for r in regions])
    lower_face = head & (verts[:, 1] < centre[1]) & (normals[:, 2] > 0.2)
    expr_basis[lower_face, 1, 0] = -0.012
    expr_basis[head, :, 1] = 0.008 * normals[head]

    pose_basis = np.zeros((V, 3, N_POSE_BLEND))
    for k, j in enumerate(POSE_BLEND_JOINTS):
        dist2 = np.sum((verts - REST_JOINTS[j]) ** 2, axis=1)
        pose_basis[:, :, k] = 0.015 * np.exp(-dist2 / (2 * 0.04 ** 2))[:, None] * normals

    return BodyTemplate(
        rest_vertices=verts,
        shape_basis=shape_basis,
        pose_basis=pose_basis,
        expr_basis=expr_basis,
        joint_regressor=joint_regressor,
        weights=weights,
        parents=PARENTS.copy(),
        regions=np.array(regions),
    )


def _joint_region(j: int) -> str:
    name = JOINT_NAMES[j]
    for key, region in (("knee", "lower_leg"), ("ankle", "foot"), ("foot", "foot"), ("hip", "upper_leg"),
                        ("elbow", "forearm"), ("wrist", "hand"), ("hand", "hand"), ("shoulder", "upper_arm"),
                        ("head", "head"), ("neck", "neck")):
        if key in name:
            return region
    return "torso"


_DEFAULT_TEMPLATE: BodyTemplate | None = None


def default_template() -> BodyTemplate:
    global _DEFAULT_TEMPLATE
    if _DEFAULT_TEMPLATE is None:
        _DEFAULT_TEMPLATE = build_template()
    return _DEFAULT_TEMPLATE


# -- blendshapes, kinematics, skinning -----------------------------------------

def pose_features(tpl: BodyTemplate, rotations: np.ndarray) -> np.ndarray:
    """-trace(R - I) / 2 per blend joint: zero at rest, grows with bend angle."""
    return np.array([-np.trace(rotations[j] - np.eye(3)) / 2.0 for j in tpl.pose_blend_joints])


def shaped_template(tpl: BodyTemplate, betas=None, pose=None, expression=None) -> np.ndarray:
    """T(beta, theta, psi) = T_bar + Bs(beta) + Bp(theta) + Be(psi)."""
    verts = tpl._shaped_rest(betas).copy()
    if pose is not None:
        rots = rot6d_to_matrices(pose)
        if rots.shape[0] != tpl.n_joints:
            raise DimensionError(f"pose has {rots.shape[0]} joints, template has {tpl.n_joints}")
        verts += tpl.pose_basis @ pose_features(tpl, rots)
    if expression is not None:
        expression = np.asarray(expression, dtype=np.float64)
        if expression.shape != (tpl.expr_basis.shape[2],):
            raise DimensionError(f"expression must have length {tpl.expr_basis.shape[2]}")
        verts += tpl.expr_basis @ expression
    return verts


def _traversal_order(parents: np.ndarray) -> list[int]:
    roots = [j for j, p in enumerate(parents) if p < 0]
    if len(roots) != 1:
        raise ContractError(f"hierarchy must have exactly one root, found {len(roots)}")
    children: dict[int, list[int]] = {j: [] for j in range(len(parents))}
    for j, p in enumerate(parents):
        if p >= 0:
            if p >= len(parents):
                raise ContractError(f"joint {j} has invalid parent {p}")
            children[int(p)].append(j)
    order, stack = [], [roots[0]]
    while stack:
        j = stack.pop()
        order.append(j)
        stack.extend(reversed(children[j]))
    if len(order) != len(parents):
        raise ContractError("joint hierarchy contains a cycle or disconnected joints")
    return order


def forward_kinematics(tpl: BodyTemplate, betas=None, pose=None, translation=None) -> np.ndarray:
    """World transforms (K, 4, 4) of every joint for the given shape and pose."""
    joints = tpl.rest_joints(betas)
    K = tpl.n_joints
    rots = np.tile(np.eye(3), (K, 1, 1)) if pose is None else rot6d_to_matrices(pose)
    if rots.shape[0] != K:
        raise DimensionError(f"pose has {rots.shape[0]} joints, template has {K}")
    trans = np.zeros(3) if translation is None else np.asarray(translation, dtype=np.float64)
    world = np.zeros((K, 4, 4))
    for j in _traversal_order(tpl.parents):
        local = np.eye(4)
        local[:3, :3] = rots[j]
        p = tpl.parents[j]
        if p < 0:
            local[:3, 3] = joints[j] + trans
            world[j] = local
        else:
            local[:3, 3] = joints[j] - joints[p]
            world[j] = world[p] @ local
    return world


def skinning_transforms(tpl: BodyTemplate, betas=None, pose=None, translation=None) -> np.ndarray:
    """Rest-relative transforms G_k = world_k * [I | -J_k]."""
    world = forward_kinematics(tpl, betas, pose, translation)
    joints = tpl.rest_joints(betas)
    rel = world.copy()
    rel[:, :3, 3] -= np.einsum("kij,kj->ki", world[:, :3, :3], joints)
    return rel


def blend_points(points: np.ndarray, weights: np.ndarray, transforms: np.ndarray) -> np.ndarray:
    """Apply the weight-blended transform field to (N, 3) points."""
    blended = np.einsum("nk,kij->nij", weights, transforms)
    return np.einsum("nij,nj->ni", blended[:, :3, :3], points) + blended[:, :3, 3]


def lbs(tpl: BodyTemplate, betas=None, pose=None, expression=None, translation=None) -> np.ndarray:
    """M(beta, theta, psi): posed vertices (V, 3)."""
    shaped = shaped_template(tpl, betas, pose, expression)
    return blend_points(shaped, tpl.weights, skinning_transforms(tpl, betas, pose, translation))


def posed_joints(tpl: BodyTemplate, params: BodyParams, translation=None) -> np.ndarray:
    return forward_kinematics(tpl, params.betas, params.pose, translation)[:, :3, 3]


# -- motion -------------------------------------------------------------------

@dataclass
class PoseSequence:
    """Per-frame, per-actor poses; poses (F, A, 24, 6), translations (F, A, 3)."""

    poses: np.ndarray
    translations: np.ndarray
    betas: np.ndarray                 # (A, n_betas)
    expressions: np.ndarray = None    # (A, n_expr)
    fps: float = 8.0
    action: str = ""
    seed: int = 0

    def __post_init__(self):
        if self.expressions is None:
            self.expressions = np.zeros((self.betas.shape[0], N_EXPR))
        F, A = self.poses.shape[:2]
        if self.translations.shape != (F, A, 3) or self.betas.shape[0] != A:
            raise DimensionError("inconsistent actor count across pose sequence arrays")
        if not np.isfinite(self.translations).all():
            raise ValueError("root translations must be finite")

    @property
    def n_frames(self) -> int:
        return self.poses.shape[0]

    @property
    def n_actors(self) -> int:
        return self.poses.shape[1]

    @property
    def frames(self) -> list[list[tuple[BodyParams, np.ndarray]]]:
        return [[self.actor(f, a) for a in range(self.n_actors)] for f in range(self.n_frames)]

    def actor(self, frame: int, actor: int) -> tuple[BodyParams, np.ndarray]:
        params = BodyParams(self.betas[actor], self.poses[frame, actor], self.expressions[actor])
        return params, self.translations[frame, actor]

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        save_tensor(d / "poses.amgt", self.poses)
        save_tensor(d / "translations.amgt", self.translations)
        save_tensor(d / "betas.amgt", self.betas)
        save_tensor(d / "expressions.amgt", self.expressions)
        meta = {"fps": self.fps, "actors": self.n_actors, "action": self.action, "seed": self.seed}
        (d / "meta.txt").write_text("".join(f"{k}={v}\n" for k, v in meta.items()))

    @classmethod
    def load(cls, directory) -> "PoseSequence":
        d = Path(directory)
        meta = dict(line.split("=", 1) for line in (d / "meta.txt").read_text().splitlines() if "=" in line)
        return cls(
            poses=load_tensor(d / "poses.amgt").astype(np.float64),
            translations=load_tensor(d / "translations.amgt").astype(np.float64),
            betas=load_tensor(d / "betas.amgt").astype(np.float64),
            expressions=load_tensor(d / "expressions.amgt").astype(np.float64),
            fps=float(meta["fps"]),
            action=meta["action"],
            seed=int(meta["seed"]),
        )


X_AXIS, Y_AXIS, Z_AXIS = np.eye(3)

WALK_SPEED = 0.07      # metres per frame
ACTOR_OFFSET = 0.55    # lateral distance of each actor from the mirror plane


def _action_pose(action: str, phase: float, amp: float) -> tuple[dict, np.ndarray]:
    """Local joint rotations and root offset at ``phase`` in [0, 1)."""
    s = np.sin(2 * np.pi * phase)
    c = np.cos(2 * np.pi * phase)
    rot: dict[int, np.ndarray] = {}
    root = np.zeros(3)
    arms_down = 0.35  # lowers the A-pose arms a little
    rot[J["l_shoulder"]] = axis_angle(Z_AXIS, -arms_down)
    rot[J["r_shoulder"]] = axis_angle(Z_AXIS, arms_down)

    if action == "walk":
        rot[J["pelvis"]] = axis_angle(Y_AXIS, np.pi / 2)  # face the direction of travel (+x)
        swing = 0.18 * amp * s
        rot[J["l_hip"]] = axis_angle(X_AXIS, -swing)
        rot[J["r_hip"]] = axis_angle(X_AXIS, swing)
        rot[J["l_knee"]] = axis_angle(X_AXIS, 0.5 * amp * max(0.0, -s))
        rot[J["r_knee"]] = axis_angle(X_AXIS, 0.5 * amp * max(0.0, s))
        rot[J["l_shoulder"]] = axis_angle(Z_AXIS, -arms_down - 0.35) @ axis_angle(X_AXIS, 0.3 * amp * s)
        rot[J["r_shoulder"]] = axis_angle(Z_AXIS, arms_down + 0.35) @ axis_angle(X_AXIS, -0.3 * amp * s)
        root[1] = 0.02 * amp * np.cos(4 * np.pi * phase)
    elif action == "jump":
        lift = np.sin(np.pi * phase) ** 2
        crouch = np.cos(np.pi * phase) ** 2
        root[1] = 0.3 * amp * lift
        rot[J["l_hip"]] = axis_angle(X_AXIS, -0.5 * amp * crouch)
        rot[J["r_hip"]] = axis_angle(X_AXIS, -0.5 * amp * crouch)
        rot[J["l_knee"]] = axis_angle(X_AXIS, 0.9 * amp * crouch)
        rot[J["r_knee"]] = axis_angle(X_AXIS, 0.9 * amp * crouch)
        rot[J["l_shoulder"]] = axis_angle(Z_AXIS, 1.6 * amp * lift - arms_down)
        rot[J["r_shoulder"]] = axis_angle(Z_AXIS, -1.6 * amp * lift + arms_down)
    elif action == "wave":
        rot[J["r_shoulder"]] = axis_angle(Z_AXIS, -1.9)
        rot[J["r_elbow"]] = axis_angle(Z_AXIS, -0.9 - 0.5 * amp * s)
        rot[J["head"]] = axis_angle(Y_AXIS, -0.2 * amp * s)
    elif action == "box":
        left, right = max(0.0, s), max(0.0, -s)
        rot[J["spine2"]] = axis_angle(Y_AXIS, 0.3 * amp * s)
        rot[J["l_shoulder"]] = axis_angle(X_AXIS, -1.3 * amp * (0.4 + 0.6 * left)) @ axis_angle(Z_AXIS, -0.9)
        rot[J["r_shoulder"]] = axis_angle(X_AXIS, -1.3 * amp * (0.4 + 0.6 * right)) @ axis_angle(Z_AXIS, 0.9)
        rot[J["l_elbow"]] = axis_angle(Y_AXIS, 1.8 * (1 - left))
        rot[J["r_elbow"]] = axis_angle(Y_AXIS, -1.8 * (1 - right))
        rot[J["l_knee"]] = axis_angle(X_AXIS, 0.2)
        rot[J["r_knee"]] = axis_angle(X_AXIS, 0.2)
    elif action == "squat":
        depth = np.sin(np.pi * phase) ** 2
        root[1] = -0.35 * amp * depth
        rot[J["l_hip"]] = axis_angle(X_AXIS, -1.4 * amp * depth)
        rot[J["r_hip"]] = axis_angle(X_AXIS, -1.4 * amp * depth)
        rot[J["l_knee"]] = axis_angle(X_AXIS, 1.8 * amp * depth)
        rot[J["r_knee"]] = axis_angle(X_AXIS, 1.8 * amp * depth)
        rot[J["l_ankle"]] = axis_angle(X_AXIS, -0.4 * amp * depth)
        rot[J["r_ankle"]] = axis_angle(X_AXIS, -0.4 * amp * depth)
        rot[J["spine1"]] = axis_angle(X_AXIS, 0.5 * amp * depth)
        rot[J["l_shoulder"]] = axis_angle(X_AXIS, -1.4 * depth) @ axis_angle(Z_AXIS, -arms_down)
        rot[J["r_shoulder"]] = axis_angle(X_AXIS, -1.4 * depth) @ axis_angle(Z_AXIS, arms_down)
    elif action == "spin":
        rot[J["pelvis"]] = axis_angle(Y_AXIS, 2 * np.pi * phase)
        rot[J["l_shoulder"]] = axis_angle(Z_AXIS, 0.5)
        rot[J["r_shoulder"]] = axis_angle(Z_AXIS, -0.5)
    elif action == "latin_dance":
        root[0] = 0.08 * amp * s
        rot[J["pelvis"]] = axis_angle(Y_AXIS, 0.35 * amp * s)
        rot[J["spine2"]] = axis_angle(Z_AXIS, 0.15 * amp * c)
        rot[J["l_knee"]] = axis_angle(X_AXIS, 0.4 * amp * max(0.0, s))
        rot[J["r_knee"]] = axis_angle(X_AXIS, 0.4 * amp * max(0.0, -s))
        rot[J["l_shoulder"]] = axis_angle(Z_AXIS, 0.8 + 0.5 * amp * s)
        rot[J["r_shoulder"]] = axis_angle(Z_AXIS, 0.2 + 0.5 * amp * c)
        rot[J["l_elbow"]] = axis_angle(Y_AXIS, 0.6 * amp * (1 + c))
    return rot, root


def _mirror_pose(rots: np.ndarray) -> np.ndarray:
    """Reflect a pose across the x = 0 plane, swapping left and right joints."""
    m = np.diag([-1.0, 1.0, 1.0])
    swap = np.arange(N_JOINTS)
    for a, b in MIRROR_PAIRS:
        swap[a], swap[b] = b, a
    return np.einsum("ij,kjl,lm->kim", m, rots[swap], m)


def generate_motion(action: str, n_frames: int, n_actors: int = 1, seed: int = 0, fps: float = 8.0,
                    cycle_frames: float | None = None) -> PoseSequence:
    """Deterministic periodic motion for ``action``.

    One motion cycle spans ``cycle_frames`` frames (default ``n_frames - 1``, so
    the last frame closes the loop for actions without net travel).  The seed
    only perturbs amplitude and body shape.  A second actor is the mirror image
    of the first across the x = 0 plane.
    """
    check("action", action, ACTIONS)
    if n_actors not in (1, 2):
        raise ConfigurationError(f"n_actors must be 1 or 2, got {n_actors}")
    if n_frames < 1:
        raise ConfigurationError("n_frames must be positive")
    rng = np.random.default_rng(seed)
    amp = 1.0 + 0.1 * (rng.random() - 0.5)
    betas = 0.5 * (rng.random((n_actors, N_BETAS)) - 0.5)
    cycle = float(cycle_frames or max(n_frames - 1, 1))

    rots = np.tile(np.eye(3), (n_frames, N_JOINTS, 1, 1))
    trans = np.zeros((n_frames, 3))
    for k in range(n_frames):
        local, root = _action_pose(action, (k / cycle) % 1.0, amp)
        for j, r in local.items():
            rots[k, j] = r
        trans[k] = root
        if action == "walk":
            trans[k, 0] += WALK_SPEED * (k - (n_frames - 1) / 2)

    poses = np.zeros((n_frames, n_actors, N_JOINTS, 6))
    translations = np.zeros((n_frames, n_actors, 3))
    offset = ACTOR_OFFSET if n_actors == 2 else 0.0
    for k in range(n_frames):
        poses[k, 0] = matrix_to_rot6d(rots[k])
        translations[k, 0] = trans[k] + np.array([-offset, 0, 0])
        if n_actors == 2:
            poses[k, 1] = matrix_to_rot6d(_mirror_pose(rots[k]))
            translations[k, 1] = trans[k] * np.array([-1.0, 1.0, 1.0]) + np.array([offset, 0, 0])
    if n_actors == 2:
        betas[1] = betas[0]
    return PoseSequence(poses, translations, betas, fps=fps, action=action, seed=seed)
