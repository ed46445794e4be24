"""Training losses and their weighted combination.

Four terms drive training:
  * mpjpe           - mean per-joint Euclidean error, applied to the (x, y)
                      components of the prediction against the target.
  * depth-weighted  - mean of |pred_z - gt_z| / gt_z, anchoring the global
                      position without letting far poses dominate.
  * kinematic       - mean absolute bone-length change between consecutive
                      predicted frames; every joint pair connected in the
                      tree contributes in both directions, so each bone is
                      counted twice and the sum is normalized by 1 / (2 M).
  * reprojection    - mpjpe in pixels between the camera projection of the
                      predicted 3D pose and the original 2D input.

All functions build on diffcore tensors so gradients reach the encoder.
Plain arrays are accepted wherever a value does not need a gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .camera import CameraIntrinsics, project_sequence
from .errors import ConfigError, ContractError, DomainError
from .skeleton import Skeleton


@dataclass(frozen=True)
class LossWeights:
    """Non-negative weights; at least one must be positive."""

    pose3d: float = 1.0
    depth: float = 1.0
    kinematic: float = 0.01
    reproj: float = 0.001

    def __post_init__(self):
        vals = (self.pose3d, self.depth, self.kinematic, self.reproj)
        if any(w < 0 for w in vals):
            raise ConfigError(f"loss weights must be non-negative, got {vals}")
        if all(w == 0 for w in vals):
            raise ConfigError("at least one loss weight must be positive")

    def to_json(self) -> dict:
        return {"pose3d": self.pose3d, "depth": self.depth,
                "kinematic": self.kinematic, "reproj": self.reproj}

    @classmethod
    def from_json(cls, data: dict) -> "LossWeights":
        unknown = set(data) - {"pose3d", "depth", "kinematic", "reproj"}
        if unknown:
            raise ConfigError(f"unknown loss weight keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class LossBreakdown:
    """Scalar values of each component and their weighted total.

    Components whose weight is zero are skipped entirely and reported as
    0.0, so `total == sum(w_i * component_i)` holds exactly. The graph
    node for backpropagation rides along in `total_tensor`.
    """

    pose3d_mpjpe: float
    depth_wmpjpe: float
    kinematic: float
    reproj_mpjpe: float
    total: float
    total_tensor: dc.DiffTensor = field(repr=False, compare=False, default=None)


def mpjpe(pred, gt) -> dc.DiffTensor:
    """Mean per-joint position error over all leading dims.

    Args:
        pred, gt: (..., M, D) with D in {2, 3}.
    """
    p = dc.as_tensor(pred)
    g = dc.as_tensor(gt)
    if p.shape != g.shape:
        raise ContractError(f"mpjpe: shape mismatch {p.shape} vs {g.shape}")
    if p.shape[-1] not in (2, 3):
        raise ContractError(f"mpjpe: last axis must be 2 or 3, got {p.shape}")
    return dc.mean_all(dc.euclidean_norm_lastaxis(p - g))


def weighted_mpjpe_depth(pred_z, gt_z) -> dc.DiffTensor:
    """Mean of |pred_z - gt_z| / gt_z; gt depths must be positive."""
    p = dc.as_tensor(pred_z)
    g = dc.as_tensor(gt_z)
    if p.shape != g.shape:
        raise ContractError(f"depth loss: shape mismatch {p.shape} vs {g.shape}")
    if np.any(g.values <= 0.0):
        raise DomainError("depth loss: ground-truth depth must be positive")
    return dc.mean_all(dc.absolute(p - g) * (1.0 / g.values))


def bone_length_tensor(pose, skel: Skeleton) -> dc.DiffTensor:
    """Differentiable per-bone lengths: (..., M, 3) -> (..., M - 1)."""
    p = dc.as_tensor(pose)
    if p.shape[-2] != skel.num_joints:
        raise ContractError(
            f"pose has {p.shape[-2]} joints, skeleton has {skel.num_joints}")
    children = skel.non_root_joints
    child = dc.take_axis(p, children, axis=-2)
    parent = dc.take_axis(p, skel.parent[children], axis=-2)
    return dc.euclidean_norm_lastaxis(child - parent)


def kinematic_constraint(prev, curr, skel: Skeleton) -> dc.DiffTensor:
    """Bone-length change penalty between two poses.

    For (M, 3) inputs this is sum_bones |len_prev - len_curr| / M, which
    equals the double-counted neighbor sum with the 1 / (2 M) normalizer.
    Batched inputs (..., M, 3) return the mean over leading dims.
    """
    lp = bone_length_tensor(prev, skel)
    lc = bone_length_tensor(curr, skel)
    if lp.shape != lc.shape:
        raise ContractError(f"kinematic: shape mismatch {lp.shape} vs {lc.shape}")
    per_pair = dc.sum_axis(dc.absolute(lp - lc), axis=-1) * (1.0 / skel.num_joints)
    return dc.mean_all(per_pair)


def reprojection_mpjpe(pred3d, cam: CameraIntrinsics, input2d) -> dc.DiffTensor:
    """Pixel mpjpe between the projected prediction and the 2D input."""
    return mpjpe(project_sequence(pred3d, cam), dc.as_tensor(input2d))


def total_loss(pred3d, gt3d, cam: CameraIntrinsics, input2d, skel: Skeleton,
               weights: LossWeights) -> LossBreakdown:
    """Weighted combination of all four terms for a frame sequence.

    Args:
        pred3d: (T, M, 3) predictions, typically a DiffTensor.
        gt3d: (T, M, 3) targets (depth column positive).
        input2d: (T, M, 2) original 2D input in pixels.

    The kinematic term pairs consecutive frames (T - 1 pairs; the first
    frame has no predecessor and contributes no pair).
    """
    p = dc.as_tensor(pred3d)
    g = np.asarray(gt3d, dtype=np.float64)
    if p.shape != g.shape or p.values.ndim != 3:
        raise ContractError(f"total_loss: bad shapes {p.shape} vs {g.shape}")
    frames = p.shape[0]

    terms: list[dc.DiffTensor] = []
    values = {"pose3d": 0.0, "depth": 0.0, "kinematic": 0.0, "reproj": 0.0}

    if weights.pose3d > 0:
        term = mpjpe(dc.take_axis(p, [0, 1], axis=-1), g[..., :2])
        values["pose3d"] = term.item()
        terms.append(term * weights.pose3d)
    if weights.depth > 0:
        pred_z = dc.reshape(dc.take_axis(p, [2], axis=-1), p.shape[:-1])
        term = weighted_mpjpe_depth(pred_z, g[..., 2])
        values["depth"] = term.item()
        terms.append(term * weights.depth)
    if weights.kinematic > 0 and frames >= 2:
        prev = dc.take_axis(p, np.arange(frames - 1), axis=0)
        curr = dc.take_axis(p, np.arange(1, frames), axis=0)
        term = kinematic_constraint(prev, curr, skel)
        values["kinematic"] = term.item()
        terms.append(term * weights.kinematic)
    if weights.reproj > 0:
        term = reprojection_mpjpe(p, cam, input2d)
        values["reproj"] = term.item()
        terms.append(term * weights.reproj)

    # A single-frame batch with only the kinematic weight active has no
    # pairs to penalize; the total is then a constant zero.
    total = terms[0] if terms else dc.as_tensor(0.0)
    for t in terms[1:]:
        total = total + t
    return LossBreakdown(
        pose3d_mpjpe=values["pose3d"],
        depth_wmpjpe=values["depth"],
        kinematic=values["kinematic"],
        reproj_mpjpe=values["reproj"],
        total=total.item(),
        total_tensor=total,
    )
