"""Nonlinear pinhole camera with radial and tangential distortion.

The forward projection of a camera-space joint (x, y, z):

    n        = clamp((x, y) / z, -1, 1)        # normalized image coords
    r        = n_x^2 + n_y^2                   # squared radius
    radial   = 1 + k1*r + k2*r^2 + k3*r^3
    tangent  = p1*n_x + p2*n_y
    out      = n * (radial + tangent) + (p1, p2) * r
    pixels   = f_c * out + c_e

The clamp keeps extreme off-axis points bounded (also at inference), and
the whole map is differentiable with respect to the 3D coordinates, so it
can sit inside a training loss. Depth-scale invariance holds exactly:
scaling (x, y, z) jointly leaves n, and hence the pixels, unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import ConfigError, ContractError, DomainError


@dataclass(frozen=True)
class CameraIntrinsics:
    """Intrinsic parameters; pixels for f_c/c_e, dimensionless distortion.

    Attributes:
        f_c: (fx, fy) focal length in pixels.
        c_e: (cx, cy) principal point in pixels.
        d_r: (k1, k2, k3) radial coefficients.
        d_t: (p1, p2) tangential coefficients.
        image_size: (width, height) in pixels.
    """

    f_c: tuple[float, float]
    c_e: tuple[float, float]
    d_r: tuple[float, float, float]
    d_t: tuple[float, float]
    image_size: tuple[int, int]

    def __post_init__(self):
        if len(self.f_c) != 2 or len(self.c_e) != 2:
            raise ConfigError("f_c and c_e must have two components")
        if len(self.d_r) != 3 or len(self.d_t) != 2:
            raise ConfigError("expected 3 radial and 2 tangential coefficients")
        if min(self.f_c) <= 0:
            raise ConfigError(f"focal length must be positive, got {self.f_c}")
        if min(self.image_size) <= 0:
            raise ConfigError(f"image size must be positive, got {self.image_size}")

    def to_json(self) -> dict:
        return {
            "f_c": [float(v) for v in self.f_c],
            "c_e": [float(v) for v in self.c_e],
            "d_r": [float(v) for v in self.d_r],
            "d_t": [float(v) for v in self.d_t],
            "image_size": [int(v) for v in self.image_size],
        }

    @classmethod
    def from_json(cls, data: dict) -> "CameraIntrinsics":
        try:
            return cls(
                f_c=tuple(data["f_c"]),
                c_e=tuple(data["c_e"]),
                d_r=tuple(data["d_r"]),
                d_t=tuple(data["d_t"]),
                image_size=tuple(data["image_size"]),
            )
        except KeyError as missing:
            raise ConfigError(f"camera JSON missing field {missing}") from None

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def project(pose_xy, pose_z, cam: CameraIntrinsics):
    """Project camera-space joints to pixels.

    Args:
        pose_xy: (..., M, 2) meters, DiffTensor or array.
        pose_z: (..., M, 1) meters, all > 0.
        cam: intrinsics.

    Returns:
        (..., M, 2) pixel coordinates; a DiffTensor when either input is
        one (gradients flow into both), otherwise a plain array.
    """
    tensor_in = isinstance(pose_xy, dc.DiffTensor) or isinstance(pose_z, dc.DiffTensor)
    xy = dc.as_tensor(pose_xy)
    z = dc.as_tensor(pose_z)
    if xy.shape[-1] != 2 or z.shape[-1] != 1 or xy.shape[:-1] != z.shape[:-1]:
        raise ContractError(
            f"expected (..., M, 2) and (..., M, 1), got {xy.shape} and {z.shape}")
    if np.isnan(xy.values).any() or np.isnan(z.values).any():
        raise ContractError("projection input contains NaN")
    bad = z.values <= 0.0
    if bad.any():
        joint = int(np.argwhere(bad)[0][-2])
        raise DomainError(f"non-positive depth at joint {joint}")

    k1, k2, k3 = (float(v) for v in cam.d_r)
    d_t = np.asarray(cam.d_t, dtype=np.float64)

    n = dc.clamp(xy / z, -1.0, 1.0)
    r = dc.sum_axis(dc.square(n), axis=-1, keepdims=True)
    r2 = dc.square(r)
    radial = r * k1 + r2 * k2 + (r2 * r) * k3 + 1.0
    tangent = dc.sum_axis(n * d_t, axis=-1, keepdims=True)
    out = n * (radial + tangent) + r * d_t
    pixels = out * np.asarray(cam.f_c) + np.asarray(cam.c_e)
    return pixels if tensor_in else pixels.values


def project_sequence(poses, cam: CameraIntrinsics):
    """Project a pose sequence (..., M, 3) -> (..., M, 2).

    Purely elementwise over frames, so results match per-frame `project`
    calls bit for bit.
    """
    tensor_in = isinstance(poses, dc.DiffTensor)
    t = dc.as_tensor(poses)
    if t.shape[-1] != 3:
        raise ContractError(f"expected (..., M, 3), got {t.shape}")
    xy = dc.take_axis(t, [0, 1], axis=-1)
    z = dc.take_axis(t, [2], axis=-1)
    pixels = project(xy, z, cam)
    return pixels if tensor_in else pixels.values


_PRESETS = ("ideal", "random")


def sample_camera(rng_seed: int, preset: str = "random") -> CameraIntrinsics:
    """Deterministic intrinsics from a seed.

    Presets:
        "ideal": zero distortion, f = (1000, 1000), c = (500, 500).
        "random": focal length uniform in [900, 1200] px, principal point
            within +-20 px of center, d_r in [-0.3, 0.3]^3, d_t in
            [-0.01, 0.01]^2, 1000x1000 image.
    """
    if preset == "ideal":
        return CameraIntrinsics((1000.0, 1000.0), (500.0, 500.0),
                                (0.0, 0.0, 0.0), (0.0, 0.0), (1000, 1000))
    if preset != "random":
        raise ConfigError(f"unknown camera preset {preset!r}; known: {_PRESETS}")
    rng = np.random.default_rng(rng_seed)
    f = rng.uniform(900.0, 1200.0, size=2)
    c = 500.0 + rng.uniform(-20.0, 20.0, size=2)
    d_r = rng.uniform(-0.3, 0.3, size=3)
    d_t = rng.uniform(-0.01, 0.01, size=2)
    return CameraIntrinsics(tuple(f), tuple(c), tuple(d_r), tuple(d_t), (1000, 1000))
