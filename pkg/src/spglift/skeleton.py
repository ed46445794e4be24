"""Kinematic tree model of the human body.

Poses are plain numpy arrays throughout the package:
  * 3D pose: (M, 3) camera-space meters, axes x right / y down / z forward
    (positive depth), batched as (..., M, 3).
  * 2D pose: (M, 2) pixels, batched as (..., M, 2).

The Skeleton carries the joint tree (parent links), left/right symmetry
map, and per-bone rest lengths. Rest bone directions are only needed to
pose the body with forward kinematics (the synthetic generator); they are
not part of the serialized skeleton.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

ROOT = -1


@dataclass(frozen=True)
class Skeleton:
    """Joint tree with bone lengths and a left/right flip permutation.

    Attributes:
        names: per-joint labels, length M.
        parent: per-joint parent index, root has -1.
        flip_map: involutive permutation pairing left/right joints.
        rest_bone_lengths: meters, one entry per non-root joint in
            ascending joint-index order (length M - 1).
        rest_directions: optional unit bone directions (M - 1, 3) matching
            rest_bone_lengths; required only for forward kinematics.
    """

    names: tuple[str, ...]
    parent: np.ndarray
    flip_map: np.ndarray
    rest_bone_lengths: np.ndarray
    rest_directions: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "parent", np.asarray(self.parent, dtype=np.intp))
        object.__setattr__(self, "flip_map", np.asarray(self.flip_map, dtype=np.intp))
        object.__setattr__(self, "rest_bone_lengths",
                           np.asarray(self.rest_bone_lengths, dtype=np.float64))
        _validate_tree(self.parent)
        m = len(self.parent)
        if len(self.names) != m or len(self.flip_map) != m:
            raise ContractError("skeleton field lengths disagree")
        if not np.array_equal(self.flip_map[self.flip_map], np.arange(m)):
            raise ContractError("flip_map is not an involution")
        root = int(np.flatnonzero(self.parent == ROOT)[0])
        if self.flip_map[root] != root:
            raise ContractError("flip_map must map the root to itself")
        if len(self.rest_bone_lengths) != m - 1:
            raise ContractError(f"expected {m - 1} rest bone lengths")
        if np.any(self.rest_bone_lengths <= 0):
            raise ContractError("rest bone lengths must be positive")

    @property
    def num_joints(self) -> int:
        return len(self.parent)

    @property
    def root(self) -> int:
        return int(np.flatnonzero(self.parent == ROOT)[0])

    @property
    def non_root_joints(self) -> np.ndarray:
        """Joint indices with a parent, ascending (defines bone order)."""
        return np.flatnonzero(self.parent != ROOT)

    def bone_names(self) -> list[str]:
        return [self.names[j] for j in self.non_root_joints]

    def with_bone_lengths(self, lengths) -> "Skeleton":
        return Skeleton(self.names, self.parent, self.flip_map,
                        np.asarray(lengths, dtype=np.float64), self.rest_directions)

    def to_json(self) -> dict:
        return {
            "names": list(self.names),
            "parent": self.parent.tolist(),
            "flip_map": self.flip_map.tolist(),
            "rest_bone_lengths": self.rest_bone_lengths.tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "Skeleton":
        skel = cls(tuple(data["names"]), data["parent"], data["flip_map"],
                   data["rest_bone_lengths"])
        # Reattach the canonical directions when the topology is the
        # default one, so forward kinematics keeps working after a round
        # trip (directions themselves are not serialized).
        default = default_skeleton()
        if (skel.names == default.names
                and np.array_equal(skel.parent, default.parent)):
            object.__setattr__(skel, "rest_directions", default.rest_directions)
        return skel


def _validate_tree(parent: np.ndarray):
    roots = np.flatnonzero(parent == ROOT)
    if len(roots) != 1:
        raise ContractError(f"expected exactly one root, found {len(roots)}")
    m = len(parent)
    for j in range(m):
        seen = set()
        node = j
        while node != ROOT:
            if node in seen:
                raise ContractError(f"cycle through joint {j}")
            seen.add(node)
            p = parent[node]
            if p != ROOT and not 0 <= p < m:
                raise ContractError(f"parent index {p} out of range")
            node = p


# Conventional 17-joint layout (pelvis = 0). Rest directions describe a
# standing body facing the camera: y points down, so the head is at -y.
_JOINTS = (
    # name,            parent, direction (unit-ish),    length m
    ("pelvis",         ROOT,   None,                    None),
    ("right_hip",      0,      (-1.0, 0.0, 0.0),        0.13),
    ("right_knee",     1,      (0.0, 1.0, 0.0),         0.45),
    ("right_ankle",    2,      (0.0, 1.0, 0.0),         0.45),
    ("left_hip",       0,      (1.0, 0.0, 0.0),         0.13),
    ("left_knee",      4,      (0.0, 1.0, 0.0),         0.45),
    ("left_ankle",     5,      (0.0, 1.0, 0.0),         0.45),
    ("spine",          0,      (0.0, -1.0, 0.0),        0.24),
    ("neck",           7,      (0.0, -1.0, 0.0),        0.25),
    ("nose",           8,      (0.0, -0.76822128, 0.64018439), 0.13),
    ("head_top",       9,      (0.0, -0.96152395, -0.27472113), 0.115),
    ("left_shoulder",  8,      (0.99227788, 0.12403473, 0.0), 0.17),
    ("left_elbow",     11,     (0.0, 1.0, 0.0),         0.28),
    ("left_wrist",     12,     (0.0, 1.0, 0.0),         0.26),
    ("right_shoulder", 8,      (-0.99227788, 0.12403473, 0.0), 0.17),
    ("right_elbow",    14,     (0.0, 1.0, 0.0),         0.28),
    ("right_wrist",    15,     (0.0, 1.0, 0.0),         0.26),
)

_FLIP_PAIRS = ((1, 4), (2, 5), (3, 6), (11, 14), (12, 15), (13, 16))


def default_skeleton() -> Skeleton:
    """The standard 17-joint body: pelvis root, spine/neck/head chain,
    hip-knee-ankle and shoulder-elbow-wrist limbs on both sides."""
    names = tuple(j[0] for j in _JOINTS)
    parent = np.array([j[1] for j in _JOINTS], dtype=np.intp)
    flip_map = np.arange(len(_JOINTS))
    for a, b in _FLIP_PAIRS:
        flip_map[a], flip_map[b] = b, a
    directions = np.array([j[2] for j in _JOINTS[1:]], dtype=np.float64)
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    lengths = np.array([j[3] for j in _JOINTS[1:]], dtype=np.float64)
    return Skeleton(names, parent, flip_map, lengths, directions)


def bone_lengths(pose: np.ndarray, skel: Skeleton) -> np.ndarray:
    """Per-bone Euclidean lengths of a pose.

    Args:
        pose: (..., M, 3).

    Returns:
        (..., M - 1) lengths in bone order (non-root joints ascending).
    """
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape[-2] != skel.num_joints:
        raise ContractError(
            f"pose has {pose.shape[-2]} joints, skeleton has {skel.num_joints}")
    children = skel.non_root_joints
    deltas = pose[..., children, :] - pose[..., skel.parent[children], :]
    return np.linalg.norm(deltas, axis=-1)


def forward_kinematics(skel: Skeleton, root_position, joint_rotations) -> np.ndarray:
    """Pose the skeleton from local joint rotations.

    Each joint's global rotation composes down the chain; a child sits at
    its parent's position plus the parent's global rotation applied to the
    rest bone vector. Bone lengths are preserved by construction.

    Args:
        root_position: (..., 3) meters.
        joint_rotations: (..., M, 3, 3) orthonormal local rotations.

    Returns:
        (..., M, 3) joint positions.
    """
    if skel.rest_directions is None:
        raise ContractError("skeleton has no rest directions; cannot pose")
    rot = np.asarray(joint_rotations, dtype=np.float64)
    root_position = np.asarray(root_position, dtype=np.float64)
    m = skel.num_joints
    if rot.shape[-3:] != (m, 3, 3):
        raise ContractError(f"expected rotations (..., {m}, 3, 3), got {rot.shape}")
    gram = np.matmul(np.swapaxes(rot, -1, -2), rot) - np.eye(3)
    if np.abs(gram).max() > 1e-9:
        raise ContractError("joint rotations are not orthonormal")

    offsets = np.zeros((m, 3))
    offsets[skel.non_root_joints] = (skel.rest_directions
                                     * skel.rest_bone_lengths[:, None])

    batch = rot.shape[:-3]
    pos = np.zeros(batch + (m, 3))
    global_rot = np.zeros(batch + (m, 3, 3))
    order = _topological_order(skel.parent)
    for j in order:
        p = skel.parent[j]
        if p == ROOT:
            pos[..., j, :] = root_position
            global_rot[..., j, :, :] = rot[..., j, :, :]
        else:
            global_rot[..., j, :, :] = np.matmul(global_rot[..., p, :, :],
                                                 rot[..., j, :, :])
            step = np.matmul(global_rot[..., p, :, :], offsets[j])
            pos[..., j, :] = pos[..., p, :] + step
    return pos


def _topological_order(parent: np.ndarray) -> list[int]:
    order, placed = [], set()
    pending = list(range(len(parent)))
    while pending:
        remaining = []
        for j in pending:
            if parent[j] == ROOT or parent[j] in placed:
                order.append(j)
                placed.add(j)
            else:
                remaining.append(j)
        pending = remaining
    return order


def flip_horizontal(pose: np.ndarray, skel: Skeleton, axis_center: float = 0.0) -> np.ndarray:
    """Mirror a pose about a vertical axis and swap left/right joints.

    Works for 2D and 3D poses, batched or not; x is reflected about
    `axis_center` (use the root x to flip a 3D pose in place).
    """
    pose = np.asarray(pose, dtype=np.float64)
    flipped = pose[..., skel.flip_map, :].copy()
    if axis_center == 0.0:
        flipped[..., 0] = -flipped[..., 0]
    else:
        flipped[..., 0] = 2.0 * axis_center - flipped[..., 0]
    return flipped
