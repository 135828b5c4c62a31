"""Spatio-temporal U-Net frame scorer.

Maps a [T, C, w, h] feature sequence to L = T * expansion per-frame
selection probabilities: a 1x1x1 channel squeeze, a temporal
encoder/decoder with skip connections, spatial average pooling and a
strided 1-D transposed convolution that expands feature steps back to
frame resolution, finished by a sigmoid.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Mapping, NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DegenerateInputError, ParseError, ShapeMismatchError
from .validation import check_feature_array

CHECKPOINT_MAGIC = b"VSCK0001"

_CONFIG_FIELDS = ("in_channels", "squeezed_channels", "levels", "base_channels",
                  "expansion", "width", "height")


@dataclass(frozen=True)
class ModelConfig:
    """Static shape description of the scorer network."""

    in_channels: int
    squeezed_channels: int
    levels: int = 2
    base_channels: int = 16
    expansion: int = 1
    width: int = 1
    height: int = 1

    def __post_init__(self):
        for field in _CONFIG_FIELDS:
            value = getattr(self, field)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{field} must be a positive int, got {value!r}")
        if self.squeezed_channels > self.in_channels:
            raise ValueError(
                f"squeezed_channels ({self.squeezed_channels}) cannot exceed "
                f"in_channels ({self.in_channels})")

    def level_channels(self, level: int) -> int:
        return self.base_channels * (2 ** level)


class ForwardResult(NamedTuple):
    probs: Tensor   # length-L selection probabilities in (0, 1)
    logits: Tensor  # pre-sigmoid scores, used for stable log-prob terms


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes in their canonical (checkpoint) order."""
    shapes: dict[str, tuple[int, ...]] = {
        "squeeze.weight": (config.squeezed_channels, config.in_channels, 1, 1, 1),
        "squeeze.bias": (config.squeezed_channels,),
    }
    prev = config.squeezed_channels
    for level in range(config.levels):
        ch = config.level_channels(level)
        shapes[f"enc{level}.conv1.weight"] = (ch, prev, 3, 3, 3)
        shapes[f"enc{level}.conv1.bias"] = (ch,)
        shapes[f"enc{level}.conv2.weight"] = (ch, ch, 3, 3, 3)
        shapes[f"enc{level}.conv2.bias"] = (ch,)
        prev = ch
    bottom = config.level_channels(config.levels)
    shapes["bottom.conv1.weight"] = (bottom, prev, 3, 3, 3)
    shapes["bottom.conv1.bias"] = (bottom,)
    shapes["bottom.conv2.weight"] = (bottom, bottom, 3, 3, 3)
    shapes["bottom.conv2.bias"] = (bottom,)
    prev = bottom
    for level in reversed(range(config.levels)):
        ch = config.level_channels(level)
        shapes[f"dec{level}.up.weight"] = (prev, ch, 2, 1, 1)
        shapes[f"dec{level}.up.bias"] = (ch,)
        shapes[f"dec{level}.conv1.weight"] = (ch, 2 * ch, 3, 3, 3)
        shapes[f"dec{level}.conv1.bias"] = (ch,)
        shapes[f"dec{level}.conv2.weight"] = (ch, ch, 3, 3, 3)
        shapes[f"dec{level}.conv2.bias"] = (ch,)
        prev = ch
    shapes["head.weight"] = (config.base_channels, 1, config.expansion, 1, 1)
    shapes["head.bias"] = (1,)
    return shapes


def parameter_count(config: ModelConfig) -> int:
    """Total scalar parameter count, a pure function of the config.

    Closed form: squeeze C'*(C+1); encoder level l with c = base*2^l and
    p = previous channels contributes 27*c*(p + c) + 2c; the bottom block
    is the same with c = base*2^levels; decoder level l adds the 2-tap
    upsampling kernel 2*(2c)*c + c plus 27*c*(2c + c) + 2c; the head adds
    base*expansion + 1.
    """
    return sum(int(np.prod(s)) for s in parameter_shapes(config).values())


def init_params(config: ModelConfig, seed: int) -> dict[str, Tensor]:
    """Glorot-uniform weights (axis 0 treated as fan-out), zero biases.

    Fans count only kernel taps that can ever see data: with same padding,
    a 3-wide spatial tap on a width-1 input reads zeros on both sides, so
    the effective extent per spatial axis is min(kernel, input extent).
    Without this the activations vanish for spatially pooled features.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".bias"):
            data = np.zeros(shape)
        else:
            taps = int(np.prod(shape[2:3]))
            if len(shape) == 5:
                taps *= min(shape[3], config.width) * min(shape[4], config.height)
            fan_in = shape[1] * taps
            fan_out = shape[0] * taps
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def _check_params(params: Mapping[str, Tensor], config: ModelConfig) -> None:
    expected = parameter_shapes(config)
    for name, shape in expected.items():
        if name not in params:
            raise ShapeMismatchError(f"missing parameter {name!r}")
        if tuple(params[name].data.shape) != shape:
            raise ShapeMismatchError(
                f"parameter {name!r} has shape {params[name].data.shape}, expected {shape}")


def squeeze_features(features: Tensor | np.ndarray, params: Mapping[str, Tensor],
                     config: ModelConfig) -> Tensor:
    """1x1x1 channel compression, the first stage of the forward pass."""
    x = features if isinstance(features, Tensor) else Tensor(check_feature_array(features))
    if x.data.shape[1] != config.in_channels:
        raise ShapeMismatchError(
            f"channel axis: input has {x.data.shape[1]} channels, "
            f"config expects {config.in_channels}")
    return ad.add_channel_bias(ad.conv3d(x, params["squeeze.weight"]), params["squeeze.bias"])


def forward(features: Tensor | np.ndarray, params: Mapping[str, Tensor],
            config: ModelConfig) -> ForwardResult:
    """Full scorer pass; the input temporal length must divide by 2**levels."""
    x = features if isinstance(features, Tensor) else Tensor(check_feature_array(features))
    T = x.data.shape[0]
    block = 2 ** config.levels
    if T % block:
        raise DegenerateInputError(
            f"temporal length {T} is not divisible by {block}; right-pad the "
            "sequence first (dataio.pad_to_pow2) and truncate the scores after")
    if x.data.shape[2] != config.width or x.data.shape[3] != config.height:
        raise ShapeMismatchError(
            f"spatial axes: input is {x.data.shape[2]}x{x.data.shape[3]}, "
            f"config expects {config.width}x{config.height}")
    _check_params(params, config)

    x = squeeze_features(x, params, config)
    skips = []
    for level in range(config.levels):
        x = ad.relu(ad.add_channel_bias(
            ad.conv3d(x, params[f"enc{level}.conv1.weight"], padding=1),
            params[f"enc{level}.conv1.bias"]))
        x = ad.relu(ad.add_channel_bias(
            ad.conv3d(x, params[f"enc{level}.conv2.weight"], padding=1),
            params[f"enc{level}.conv2.bias"]))
        skips.append(x)
        x = ad.temporal_max_pool(x, window=2, stride=2)

    x = ad.relu(ad.add_channel_bias(
        ad.conv3d(x, params["bottom.conv1.weight"], padding=1), params["bottom.conv1.bias"]))
    x = ad.relu(ad.add_channel_bias(
        ad.conv3d(x, params["bottom.conv2.weight"], padding=1), params["bottom.conv2.bias"]))

    for level in reversed(range(config.levels)):
        x = ad.add_channel_bias(
            ad.conv_transpose(x, params[f"dec{level}.up.weight"], stride=(2, 1, 1)),
            params[f"dec{level}.up.bias"])
        # encoder features first, upsampled features second
        x = ad.concat_channels(skips[level], x)
        x = ad.relu(ad.add_channel_bias(
            ad.conv3d(x, params[f"dec{level}.conv1.weight"], padding=1),
            params[f"dec{level}.conv1.bias"]))
        x = ad.relu(ad.add_channel_bias(
            ad.conv3d(x, params[f"dec{level}.conv2.weight"], padding=1),
            params[f"dec{level}.conv2.bias"]))

    pooled = ad.spatial_mean_pool(x)
    pooled = ad.reshape(pooled, (T, config.base_channels, 1, 1))
    logits = ad.add_channel_bias(
        ad.conv_transpose(pooled, params["head.weight"], stride=(config.expansion, 1, 1)),
        params["head.bias"])
    logits = ad.reshape(logits, (T * config.expansion,))
    return ForwardResult(probs=ad.sigmoid(logits), logits=logits)


def predict_scores(features: np.ndarray, params: Mapping[str, Tensor],
                   config: ModelConfig) -> np.ndarray:
    """Forward pass returning plain score values (no tape kept by caller)."""
    return forward(features, params, config).probs.data.copy()


# ---------------------------------------------------------------------------
# flat parameter views, used by the finite-difference harness


def flatten_params(params: Mapping[str, Tensor], config: ModelConfig) -> np.ndarray:
    _check_params(params, config)
    return np.concatenate([params[name].data.ravel()
                           for name in parameter_shapes(config)])


def params_from_flat(flat: Tensor, config: ModelConfig) -> dict[str, Tensor]:
    """Carve a flat parameter vector into named graph nodes (differentiable)."""
    shapes = parameter_shapes(config)
    total = sum(int(np.prod(s)) for s in shapes.values())
    if flat.data.shape != (total,):
        raise ShapeMismatchError(
            f"flat parameter vector has shape {flat.data.shape}, expected ({total},)")
    params: dict[str, Tensor] = {}
    offset = 0
    for name, shape in shapes.items():
        size = int(np.prod(shape))
        params[name] = ad.reshape(ad.slice_range(flat, offset, size), shape)
        offset += size
    return params


# ---------------------------------------------------------------------------
# checkpoint container


def save_checkpoint(path, config: ModelConfig, params: Mapping[str, Tensor]) -> None:
    """Write the config header plus named float32 parameter blocks."""
    _check_params(params, config)
    chunks = [CHECKPOINT_MAGIC,
              struct.pack("<7I", *(getattr(config, f) for f in _CONFIG_FIELDS)),
              struct.pack("<I", len(parameter_shapes(config)))]
    for name in parameter_shapes(config):
        raw = name.encode("utf-8")
        data = params[name].data
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(np.ascontiguousarray(data, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, Tensor]]:
    """Read a checkpoint back; inverse of :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        blob = fh.read()

    def take(offset: int, count: int, what: str) -> tuple[bytes, int]:
        if offset + count > len(blob):
            raise ParseError(f"truncated checkpoint: {what} at byte {offset} "
                             f"needs {count} bytes, file has {len(blob)}")
        return blob[offset:offset + count], offset + count

    raw, pos = take(0, len(CHECKPOINT_MAGIC), "magic")
    if raw != CHECKPOINT_MAGIC:
        raise ParseError(f"bad magic at byte 0: {raw!r}")
    raw, pos = take(pos, 28, "config header")
    config = ModelConfig(**dict(zip(_CONFIG_FIELDS, struct.unpack("<7I", raw))))
    raw, pos = take(pos, 4, "parameter count")
    (count,) = struct.unpack("<I", raw)
    params: dict[str, Tensor] = {}
    for _ in range(count):
        raw, pos = take(pos, 4, "name length")
        (name_len,) = struct.unpack("<I", raw)
        raw, pos = take(pos, name_len, "parameter name")
        name = raw.decode("utf-8")
        raw, pos = take(pos, 4, "rank")
        (ndim,) = struct.unpack("<I", raw)
        raw, pos = take(pos, 4 * ndim, "shape")
        shape = struct.unpack(f"<{ndim}I", raw)
        size = int(np.prod(shape)) if ndim else 1
        raw, pos = take(pos, 4 * size, f"data of {name!r}")
        data = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    if pos != len(blob):
        raise ParseError(f"trailing bytes after byte {pos}")
    _check_params(params, config)
    return config, params
