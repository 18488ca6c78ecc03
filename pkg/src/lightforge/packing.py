"""Control-packet assembly: hints + mask (+ provisional image) into the
planar channel stacks consumed by the conditioning network, plus the
compositing and color-permutation steps used when materializing training
frames.

Container format (the contract the conditioning side parses on its own):
little-endian header ``{magic "DLCP", version u32, layout u8, width u32,
height u32, channels u32}`` followed by the channels as planar float32,
and a ``<file>.json`` sidecar holding the provenance ids.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import ForegroundMask
from .imageio import HdrImage

MAGIC = b"DLCP"
FORMAT_VERSION = 1
_LAYOUT_CODES = {"multiplied": 0, "direct": 1}
_LAYOUT_NAMES = {v: k for k, v in _LAYOUT_CODES.items()}
_HEADER = struct.Struct("<4sIBIII")

# the six RGB channel orders, lexicographic; entry p means out[..., i] = in[..., p[i]]
COLOR_PERMUTATIONS = (
    (0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0),
)

_HINT_COUNTS = (3, 4, 5)


@dataclass(frozen=True)
class RadianceHintSet:
    """Hint renders in slot order: diffuse first, then sharpening speculars.

    All images share dimensions and (when present) the exact same coverage
    alpha, since they are traced with a common camera, lighting, and seed.
    """

    hints: tuple
    lighting_id: str = ""
    camera_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "hints", tuple(self.hints))
        if len(self.hints) not in _HINT_COUNTS:
            raise ValueError(f"hint count must be one of {_HINT_COUNTS}, got {len(self.hints)}")
        w, h = self.hints[0].width, self.hints[0].height
        for im in self.hints[1:]:
            if im.width != w or im.height != h:
                raise ValueError("hint images must share dimensions")

    @property
    def hint_count(self) -> int:
        return len(self.hints)

    @property
    def width(self) -> int:
        return self.hints[0].width

    @property
    def height(self) -> int:
        return self.hints[0].height

    @property
    def alpha(self):
        return self.hints[0].alpha


@dataclass(frozen=True)
class ControlPacket:
    """Planar float32 channel stack plus provenance.

    Channel budget: 3·k hint channels, plus the mask, plus 3 provisional
    channels in the direct layout; k ∈ {3,4,5} covers the ablations.
    """

    layout: str                    # {multiplied, direct}
    channels: np.ndarray           # (C, H, W) float32, planar
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.layout not in _LAYOUT_CODES:
            raise ValueError(f"layout must be one of {sorted(_LAYOUT_CODES)}")
        ch = np.ascontiguousarray(self.channels, dtype=np.float32)
        if ch.ndim != 3:
            raise ValueError("channels must be a planar (C, H, W) stack")
        object.__setattr__(self, "channels", ch)
        allowed = self._allowed_counts(self.layout)
        if ch.shape[0] not in allowed:
            raise ValueError(
                f"{self.layout} layout expects {sorted(allowed)} channels, got {ch.shape[0]}")
        mask = ch[-1]
        if mask.min() < 0.0 or mask.max() > 1.0:
            raise ValueError("mask channel must lie in [0, 1]")

    @staticmethod
    def _allowed_counts(layout):
        if layout == "multiplied":
            return {3 * k + 1 for k in _HINT_COUNTS}
        return {3 * k + 4 for k in _HINT_COUNTS}

    @property
    def channel_count(self) -> int:
        return self.channels.shape[0]

    @property
    def width(self) -> int:
        return self.channels.shape[2]

    @property
    def height(self) -> int:
        return self.channels.shape[1]


def permute_color_channels(images, permutation):
    """Apply one RGB reordering to every image; alpha is untouched."""
    perm = tuple(int(p) for p in permutation)
    if sorted(perm) != [0, 1, 2]:
        raise ValueError(f"permutation must reorder (0, 1, 2), got {permutation}")
    out = []
    for im in images:
        out.append(HdrImage(im.data[..., perm], alpha=im.alpha,
                            diagnostics=im.diagnostics))
    return out


def _check_dims(width, height, *named):
    for name, (w, h) in named:
        if w != width or h != height:
            raise ValueError(f"{name} is {w}x{h}, expected {width}x{height}")


def _hint_planes(hints: RadianceHintSet):
    planes = []
    for im in hints.hints:
        for c in range(3):
            planes.append(im.data[..., c])
    return planes


def pack_direct(provisional: HdrImage, hints: RadianceHintSet,
                mask: ForegroundMask) -> ControlPacket:
    """Provisional RGB, then the flattened hints, then the mask."""
    w, h = hints.width, hints.height
    _check_dims(w, h,
                ("provisional image", (provisional.width, provisional.height)),
                ("mask", (mask.width, mask.height)))
    planes = [provisional.data[..., c] for c in range(3)]
    planes += _hint_planes(hints)
    planes.append(mask.values)
    return ControlPacket(layout="direct", channels=np.stack(planes, axis=0))


def pack_multiplied(features: np.ndarray, hints: RadianceHintSet,
                    mask: ForegroundMask) -> ControlPacket:
    """Per-channel product of an encoded feature map with the hints.

    ``features`` is (H, W, 3·hint_count), channels aligned with the
    flattened hint order.
    """
    f = np.asarray(features, dtype=np.float32)
    w, h = hints.width, hints.height
    if f.ndim != 3:
        raise ValueError("feature map must be (H, W, C)")
    _check_dims(w, h, ("feature map", (f.shape[1], f.shape[0])),
                ("mask", (mask.width, mask.height)))
    want = 3 * hints.hint_count
    if f.shape[2] != want:
        raise ValueError(f"feature map must carry {want} channels, got {f.shape[2]}")
    planes = []
    for c, hp in enumerate(_hint_planes(hints)):
        planes.append(f[..., c] * hp)
    planes.append(mask.values)
    return ControlPacket(layout="multiplied", channels=np.stack(planes, axis=0))


def _box3(m: np.ndarray) -> np.ndarray:
    """3x3 edge-clamped box filter."""
    p = np.pad(np.asarray(m, dtype=np.float32), 1, mode="edge")
    acc = np.zeros(m.shape, dtype=np.float32)
    for dy in range(3):
        for dx in range(3):
            acc += p[dy:dy + m.shape[0], dx:dx + m.shape[1]]
    return acc / 9.0


def composite(foreground: HdrImage, background: HdrImage,
              mask: ForegroundMask) -> HdrImage:
    """Blend over the background through a box-softened mask."""
    _check_dims(foreground.width, foreground.height,
                ("background", (background.width, background.height)),
                ("mask", (mask.width, mask.height)))
    m = _box3(mask.values)[..., None]
    out = m * foreground.data + (1.0 - m) * background.data
    return HdrImage(out)


# ---------------------------------------------------------------------------
# container I/O
# ---------------------------------------------------------------------------

def write_control_packet(packet: ControlPacket, path) -> None:
    path = Path(path)
    ch = packet.channels
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, _LAYOUT_CODES[packet.layout],
                          ch.shape[2], ch.shape[1], ch.shape[0])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(ch, dtype="<f4").tobytes())
    sidecar = {
        "layout": packet.layout,
        "channels": int(ch.shape[0]),
        "width": int(ch.shape[2]),
        "height": int(ch.shape[1]),
        "provenance": packet.provenance,
        "version": FORMAT_VERSION,
    }
    with open(path.with_name(path.name + ".json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_control_packet(path) -> ControlPacket:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, code, width, height, channels = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    if code not in _LAYOUT_NAMES:
        raise ValueError(f"{path}: unknown layout code {code}")
    body = raw[_HEADER.size:]
    want = channels * height * width * 4
    if len(body) != want:
        raise ValueError(f"{path}: expected {want} payload bytes, got {len(body)}")
    data = np.frombuffer(body, dtype="<f4").reshape(channels, height, width)
    sidecar = path.with_name(path.name + ".json")
    provenance = {}
    if sidecar.exists():
        with open(sidecar) as fh:
            provenance = json.load(fh).get("provenance", {})
    return ControlPacket(layout=_LAYOUT_NAMES[code],
                         channels=data.astype(np.float32),
                         provenance=provenance)
