"""Network construction and inference.

Architectures are written as "n1(f1)-n2(f2)-...-nL(fL)": each layer applies a
valid convolution with nI filters of odd square size fI; every layer except
the last is followed by ReLU, the last is linear. The input is a single
grayscale channel and the last layer must produce a single channel.

Checkpoints are a small versioned binary container (see save_checkpoint) that
round-trips weights bit-exactly.
"""

from __future__ import annotations

import json
import re
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .ops import (
    FilterBank,
    as_tensor,
    conv2d_valid,
    conv2d_valid_batch,
    relu,
    zero_pad,
)

SPEC_PATTERN = re.compile(r"^\d+\(\d+\)(-\d+\(\d+\))+$")
_TOKEN = re.compile(r"^(\d+)\((\d+)\)$")


class SpecParseError(ValueError):
    """Raised when an architecture string violates the grammar."""


@dataclass(frozen=True)
class LayerSpec:
    num_filters: int
    filter_size: int


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    in_channels: int = 1


@dataclass
class Network:
    spec: NetworkSpec
    banks: list[FilterBank]

    def __post_init__(self):
        if len(self.banks) != len(self.spec.layers):
            raise ValueError(
                f"{len(self.spec.layers)} layers in spec but {len(self.banks)} filter banks")
        prev = self.spec.in_channels
        for i, (layer, bank) in enumerate(zip(self.spec.layers, self.banks)):
            if bank.num_filters != layer.num_filters or bank.filter_size != layer.filter_size:
                raise ValueError(f"bank {i} does not match layer spec {layer}")
            if bank.in_channels != prev:
                raise ValueError(
                    f"bank {i} expects {bank.in_channels} input channels, chain provides {prev}")
            prev = layer.num_filters


def parse_spec(text: str) -> NetworkSpec:
    """Parse "n1(f1)-n2(f2)-..." into a NetworkSpec (single input channel).

    Raises SpecParseError naming the offending token for malformed strings,
    even filter sizes, fewer than two layers, or a last layer that does not
    produce exactly one channel.
    """
    compact = re.sub(r"\s+", "", text)
    if not compact:
        raise SpecParseError("empty architecture string")
    layers = []
    for token in compact.split("-"):
        m = _TOKEN.match(token)
        if not m:
            raise SpecParseError(f"malformed layer token {token!r} in {text!r}")
        n, f = int(m.group(1)), int(m.group(2))
        if n < 1:
            raise SpecParseError(f"layer token {token!r}: filter count must be >= 1")
        if f < 1 or f % 2 == 0:
            raise SpecParseError(f"layer token {token!r}: filter size must be odd and >= 1")
        layers.append(LayerSpec(n, f))
    if len(layers) < 2:
        raise SpecParseError(f"need at least 2 layers, got {len(layers)} in {text!r}")
    if layers[-1].num_filters != 1:
        raise SpecParseError(
            f"last layer must have exactly 1 filter, got {layers[-1].num_filters}")
    return NetworkSpec(tuple(layers))


def format_spec(spec: NetworkSpec) -> str:
    """Canonical architecture string for a NetworkSpec."""
    return "-".join(f"{l.num_filters}({l.filter_size})" for l in spec.layers)


def param_count(spec: NetworkSpec, include_biases: bool = False) -> int:
    """Total number of weights (optionally plus biases) in the architecture."""
    total, prev = 0, spec.in_channels
    for layer in spec.layers:
        total += layer.num_filters * prev * layer.filter_size ** 2
        if include_biases:
            total += layer.num_filters
        prev = layer.num_filters
    return total


def shrink(spec: NetworkSpec) -> int:
    """Total spatial shrink of the stacked valid convolutions: sum of (f - 1)."""
    return sum(l.filter_size - 1 for l in spec.layers)


def training_pad(spec: NetworkSpec) -> int:
    """Total zero padding (both sides combined) that maps an 18x18 training
    patch to a 14x14 output: shrink - 4. Always even for odd filter sizes."""
    s = shrink(spec)
    if s < 4:
        raise ValueError(
            f"network shrink {s} is below 4; the 18->14 patch protocol needs shrink >= 4")
    return s - 4


def init_network(spec: NetworkSpec, weight_std: float = 0.001, seed=0) -> Network:
    """Fresh network with N(0, weight_std^2) weights and zero biases.

    The same seed always produces a bit-identical network.
    """
    if weight_std <= 0:
        raise ValueError(f"weight_std must be > 0, got {weight_std}")
    rng = np.random.default_rng(seed)
    banks = []
    prev = spec.in_channels
    for layer in spec.layers:
        shape = (layer.num_filters, prev, layer.filter_size, layer.filter_size)
        banks.append(FilterBank(rng.normal(0.0, weight_std, size=shape),
                                np.zeros(layer.num_filters)))
        prev = layer.num_filters
    return Network(spec, banks)


def forward(net: Network, x: np.ndarray, keep_intermediates: bool = False):
    """Run the network: conv+ReLU for all layers but the last, conv for the last.

    Output spatial size is the input size minus shrink(spec). When
    keep_intermediates is true, also returns the list of per-layer
    post-activation maps (the last entry being the output itself).
    """
    x = as_tensor(x)
    if x.shape[0] != net.spec.in_channels:
        raise ValueError(f"input has {x.shape[0]} channels, expected {net.spec.in_channels}")
    acts = []
    a = x
    last = len(net.banks) - 1
    for i, bank in enumerate(net.banks):
        a = conv2d_valid(a, bank)
        if i != last:
            a = relu(a)
        if keep_intermediates:
            acts.append(a)
    return (a, acts) if keep_intermediates else a


def forward_batch(net: Network, x: np.ndarray, keep_intermediates: bool = False):
    """Batched forward over a (N, C, H, W) stack; see forward()."""
    acts = []
    a = np.asarray(x, dtype=np.float64)
    last = len(net.banks) - 1
    for i, bank in enumerate(net.banks):
        a = conv2d_valid_batch(a, bank)
        if i != last:
            np.maximum(a, 0.0, out=a)
        if keep_intermediates:
            acts.append(a)
    return (a, acts) if keep_intermediates else a


def predict_image(net: Network, lr_upscaled: np.ndarray) -> np.ndarray:
    """Super-resolve a single-channel image, preserving its size.

    The image is zero-padded by shrink/2 per side, run through the network,
    and the result is clamped to [0, 1]. Output shape equals input shape.
    """
    x = as_tensor(lr_upscaled)
    if x.shape[0] != 1:
        raise ValueError(f"expected a single-channel image, got {x.shape[0]} channels")
    half = shrink(net.spec) // 2
    out = forward(net, zero_pad(x, half, half, half, half))
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# checkpoints
#
# Binary layout (all integers little-endian):
#   magic    4 bytes  b"TSR1"
#   version  u32      currently 1
#   body:
#     spec string     u32 length + utf-8 bytes
#     iteration       u64
#     rng state       u32 length + utf-8 JSON descriptor (may be empty)
#     layer count     u32
#     per layer:      u32 num_filters, u32 in_channels, u32 filter_size,
#                     weights as little-endian float64, biases likewise
#   checksum  u32     crc32 over the body
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"TSR1"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    """Base class for checkpoint read failures."""


class CheckpointVersionError(CheckpointError):
    """Container version is not supported."""


class CheckpointCorruptError(CheckpointError):
    """Payload is truncated, malformed, or fails its checksum."""


@dataclass
class Checkpoint:
    spec_text: str
    iteration: int
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    rng_state: str = ""
    version: int = CHECKPOINT_VERSION

    def to_network(self) -> Network:
        spec = parse_spec(self.spec_text)
        banks = [FilterBank(w.copy(), b.copy()) for w, b in zip(self.weights, self.biases)]
        return Network(spec, banks)


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def save_checkpoint(net: Network, iteration: int, path, rng_state: dict | str = "") -> None:
    """Write the network to `path` in the container format described above."""
    if isinstance(rng_state, dict):
        rng_state = json.dumps(rng_state, sort_keys=True)
    body = bytearray()
    body += _pack_str(format_spec(net.spec))
    body += struct.pack("<Q", int(iteration))
    body += _pack_str(rng_state)
    body += struct.pack("<I", len(net.banks))
    for bank in net.banks:
        body += struct.pack("<III", bank.num_filters, bank.in_channels, bank.filter_size)
        body += bank.weights.astype("<f8").tobytes()
        body += bank.biases.astype("<f8").tobytes()
    blob = CHECKPOINT_MAGIC + struct.pack("<I", CHECKPOINT_VERSION) + bytes(body)
    blob += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(blob)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointCorruptError("checkpoint truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint; missing file, unknown version, and corruption raise
    FileNotFoundError, CheckpointVersionError, CheckpointCorruptError."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointCorruptError(f"{path}: not a checkpoint file (bad magic)")
    version = struct.unpack("<I", data[4:8])[0]
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path}: unsupported version {version}")
    body, stored = data[8:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != stored:
        raise CheckpointCorruptError(f"{path}: checksum mismatch")
    r = _Reader(body)
    spec_text = r.string()
    iteration = r.u64()
    rng_state = r.string()
    n_layers = r.u32()
    weights, biases = [], []
    for _ in range(n_layers):
        n, c, f = r.u32(), r.u32(), r.u32()
        w = np.frombuffer(r.take(n * c * f * f * 8), dtype="<f8").reshape(n, c, f, f)
        b = np.frombuffer(r.take(n * 8), dtype="<f8")
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    if r.pos != len(body):
        raise CheckpointCorruptError(f"{path}: {len(body) - r.pos} trailing bytes")
    return Checkpoint(spec_text, iteration, weights, biases, rng_state, version)
