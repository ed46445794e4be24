"""Temporal dilated convolutional network lifting 2D windows to 3D poses.

The stack maps a window of J frames of normalized 2D key points to the 3D
pose of the window's center frame:

    input block:   conv(2M -> C, width k) -> batchnorm -> relu -> dropout
    R connections: [dilated block + pointwise block] with an identity skip
                   (the skip path slices the temporal center to match the
                   shrinking sequence length; channels stay at C, so no
                   projection is needed)
    output layer:  conv(C -> 3M, width 1), linear

Each block is conv -> batchnorm -> relu -> dropout. Convolutions carry no
implicit padding, and the dilation of connection level l is k^(l+1), so a
stack with R connections consumes exactly k * k^R frames per output frame.
Running the same stack over a longer padded sequence predicts every frame
of a clip in one pass; in eval mode that is bit-identical to running each
window separately.

Pixel inputs are normalized to roughly [-1, 1] before entering the
network: x' = 2(x - w/2)/w, y' = 2(y - h/2)/w (aspect preserving).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import ConfigError, ContractError


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture hyperparameters.

    The window must satisfy kernel * kernel^num_connections == window so
    that one window yields exactly one output frame.
    """

    num_joints: int = 17
    window: int = 27
    channels: int = 128
    kernel: int = 3
    dropout: float = 0.25
    depth_bias: float = 4.0  # initial output bias on z channels, meters

    def __post_init__(self):
        if self.window % 2 == 0 or self.window < 1:
            raise ConfigError(f"window must be odd and positive, got {self.window}")
        if self.channels < 1:
            raise ConfigError(f"channels must be positive, got {self.channels}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.kernel < 2:
            raise ConfigError(f"kernel width must be >= 2, got {self.kernel}")
        self.num_connections  # validates the window/kernel pairing

    @property
    def num_connections(self) -> int:
        """R such that kernel^(R+1) == window."""
        k, target = self.kernel, self.window
        size, r = k, 0
        while size < target:
            size *= k
            r += 1
        if size != target:
            valid = [k ** (i + 1) for i in range(6)]
            raise ConfigError(
                f"window {target} is not a power of kernel {k}; "
                f"valid windows for k={k}: {valid}")
        return r

    @property
    def dilations(self) -> tuple[int, ...]:
        return tuple(self.kernel ** (level + 1)
                     for level in range(self.num_connections))

    @property
    def receptive_field(self) -> int:
        return self.window

    def to_json(self) -> dict:
        return {
            "num_joints": self.num_joints,
            "window": self.window,
            "channels": self.channels,
            "kernel": self.kernel,
            "dropout": self.dropout,
            "depth_bias": self.depth_bias,
        }

    @classmethod
    def from_json(cls, data: dict) -> "EncoderConfig":
        unknown = set(data) - {"num_joints", "window", "channels", "kernel",
                               "dropout", "depth_bias"}
        if unknown:
            raise ConfigError(f"unknown encoder config keys: {sorted(unknown)}")
        return cls(**data)


class EncoderModel:
    """Parameter container plus the forward pass.

    A model is mutable during training (batchnorm running statistics,
    dropout); snapshot semantics in eval mode are a pure function of
    (parameters, input).
    """

    def __init__(self, config: EncoderConfig, params: dict[str, dc.DiffTensor],
                 bn_stats: dict[str, np.ndarray]):
        self.config = config
        self.params = params
        self.bn_stats = bn_stats
        self.training = False

    def set_training(self, training: bool):
        self.training = training

    def parameters(self) -> dict[str, dc.DiffTensor]:
        return self.params

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        """All tensors needed to restore the model (params + bn buffers)."""
        out = {f"param/{k}": v.values for k, v in self.params.items()}
        out.update({f"bnstat/{k}": v for k, v in self.bn_stats.items()})
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        for k, p in self.params.items():
            src = np.asarray(arrays[f"param/{k}"], dtype=np.float64)
            if src.shape != p.shape:
                raise ContractError(f"checkpoint shape mismatch for {k}")
            p.values = src.copy()
        for k in self.bn_stats:
            self.bn_stats[k] = np.asarray(arrays[f"bnstat/{k}"],
                                          dtype=np.float64).copy()

    # ---------------------------------------------------------------
    # forward machinery
    # ---------------------------------------------------------------

    def _block(self, x: dc.DiffTensor, name: str, dilation: int,
               rng: np.random.Generator | None) -> dc.DiffTensor:
        p = self.params
        y = dc.conv1d_dilated(x, p[f"{name}.conv.w"], dilation)
        y = y + p[f"{name}.conv.b"]
        y = dc.batchnorm_1d(y, p[f"{name}.bn.gamma"], p[f"{name}.bn.beta"],
                            self.bn_stats[f"{name}.bn.mean"],
                            self.bn_stats[f"{name}.bn.var"],
                            training=self.training)
        y = dc.relu(y)
        return dc.dropout(y, self.config.dropout, rng, training=self.training)

    def run_stack(self, x: dc.DiffTensor,
                  rng: np.random.Generator | None = None) -> dc.DiffTensor:
        """(N, 2M, L) -> (N, 3M, L - window + 1)."""
        cfg = self.config
        y = self._block(x, "in", 1, rng)
        for level, dilation in enumerate(cfg.dilations):
            trim = dilation * (cfg.kernel - 1) // 2
            length = y.shape[2]
            skip = dc.take_axis(y, np.arange(trim, length - trim), axis=2)
            y = self._block(y, f"res{level}.a", dilation, rng)
            y = self._block(y, f"res{level}.b", 1, rng)
            y = y + skip
        out = dc.conv1d_dilated(y, self.params["out.conv.w"], 1)
        return out + self.params["out.conv.b"]


def build(config: EncoderConfig, rng_seed: int) -> EncoderModel:
    """Deterministically initialized model.

    He-uniform conv weights, zero biases (except the output depth
    channels, which start at config.depth_bias so initial predictions sit
    at a valid positive depth), batchnorm gamma=1 beta=0.
    """
    rng = np.random.default_rng(rng_seed)
    cfg = config
    m, c, k = cfg.num_joints, cfg.channels, cfg.kernel
    params: dict[str, dc.DiffTensor] = {}
    bn_stats: dict[str, np.ndarray] = {}

    def conv(name: str, c_in: int, c_out: int, width: int):
        bound = np.sqrt(6.0 / (c_in * width))
        params[f"{name}.conv.w"] = dc.parameter(
            rng.uniform(-bound, bound, size=(c_out, c_in, width)))
        params[f"{name}.conv.b"] = dc.parameter(np.zeros((c_out, 1)))

    def norm(name: str, width: int):
        params[f"{name}.bn.gamma"] = dc.parameter(np.ones(width))
        params[f"{name}.bn.beta"] = dc.parameter(np.zeros(width))
        bn_stats[f"{name}.bn.mean"] = np.zeros(width)
        bn_stats[f"{name}.bn.var"] = np.ones(width)

    conv("in", 2 * m, c, k)
    norm("in", c)
    for level in range(cfg.num_connections):
        conv(f"res{level}.a", c, c, k)
        norm(f"res{level}.a", c)
        conv(f"res{level}.b", c, c, 1)
        norm(f"res{level}.b", c)
    conv("out", c, 3 * m, 1)
    bias = np.zeros((3 * m, 1))
    bias[2::3] = cfg.depth_bias  # z channel of every joint
    params["out.conv.b"] = dc.parameter(bias)
    return EncoderModel(cfg, params, bn_stats)


def frames_to_channels(frames: np.ndarray) -> np.ndarray:
    """(L, M, 2) -> (1, 2M, L) channel-major layout for the conv stack."""
    length, m, _ = frames.shape
    return frames.reshape(length, 2 * m).T[None]


def channels_to_poses(out: dc.DiffTensor) -> dc.DiffTensor:
    """(1, 3M, T) stack output -> (T, M, 3) poses, inside the graph."""
    _, c3m, frames = out.shape
    seq = dc.transpose(out, (0, 2, 1))
    return dc.reshape(seq, (frames, c3m // 3, 3))


def forward(model: EncoderModel, window: np.ndarray,
            rng: np.random.Generator | None = None) -> dc.DiffTensor:
    """Predict the 3D pose of the center frame of one window.

    Args:
        window: (J, M, 2) normalized 2D coordinates, exactly J frames.

    Returns:
        (M, 3) DiffTensor.
    """
    cfg = model.config
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (cfg.window, cfg.num_joints, 2):
        raise ContractError(
            f"expected window ({cfg.window}, {cfg.num_joints}, 2), got {window.shape}")
    out = model.run_stack(dc.as_tensor(frames_to_channels(window)), rng)
    return dc.reshape(channels_to_poses(out), (cfg.num_joints, 3))


def forward_padded(model: EncoderModel, padded: np.ndarray,
                   rng: np.random.Generator | None = None) -> dc.DiffTensor:
    """Run convolutionally over an already padded sequence.

    Args:
        padded: (T + J - 1, M, 2) normalized coordinates.

    Returns:
        (T, M, 3) DiffTensor, one prediction per covered center frame.
    """
    padded = np.asarray(padded, dtype=np.float64)
    if padded.ndim != 3 or padded.shape[0] < model.config.window:
        raise ContractError(
            f"padded sequence too short for window {model.config.window}: "
            f"{padded.shape}")
    out = model.run_stack(dc.as_tensor(frames_to_channels(padded)), rng)
    return channels_to_poses(out)


def forward_sequence(model: EncoderModel, frames: np.ndarray,
                     rng: np.random.Generator | None = None) -> dc.DiffTensor:
    """Predict all T frames of a clip with edge-replicate padding.

    Interior predictions match windowed `forward` calls bitwise in eval
    mode (batchnorm then applies the same affine transform everywhere).
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[0] < 1:
        raise ContractError(f"expected (T, M, 2) with T >= 1, got {frames.shape}")
    pad = (model.config.window - 1) // 2
    padded = np.pad(frames, ((pad, pad), (0, 0), (0, 0)), mode="edge")
    return forward_padded(model, padded, rng)


def split_output(pred: dc.DiffTensor) -> tuple[dc.DiffTensor, dc.DiffTensor]:
    """(..., M, 3) -> ((..., M, 2) plane coords, (..., M, 1) depth)."""
    t = dc.as_tensor(pred)
    return dc.take_axis(t, [0, 1], axis=-1), dc.take_axis(t, [2], axis=-1)


def normalize_2d(pixels: np.ndarray, image_size) -> np.ndarray:
    """Pixels -> aspect-preserving normalized coords in about [-1, 1]."""
    w, h = image_size
    out = np.empty_like(np.asarray(pixels, dtype=np.float64))
    out[..., 0] = 2.0 * (pixels[..., 0] - w / 2.0) / w
    out[..., 1] = 2.0 * (pixels[..., 1] - h / 2.0) / w
    return out


def unnormalize_2d(coords: np.ndarray, image_size) -> np.ndarray:
    """Inverse of normalize_2d."""
    w, h = image_size
    out = np.empty_like(np.asarray(coords, dtype=np.float64))
    out[..., 0] = coords[..., 0] * (w / 2.0) + w / 2.0
    out[..., 1] = coords[..., 1] * (w / 2.0) + h / 2.0
    return out
