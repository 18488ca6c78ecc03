"""Readers for the renderer's interchange artifacts.

This package talks to the rendering side only through files: `.dlcp`
control-packet containers, the JSONL corpus manifest, PFM images, and
8-bit mask PNGs.  The parsers here are intentionally independent of the
renderer's code; the binary layout is the contract.
"""

import itertools
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

MAGIC = b"DLCP"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIBIII")
_LAYOUTS = {0: "multiplied", 1: "direct"}
_HINT_COUNTS = (3, 4, 5)

# lexicographic RGB reorderings; manifest records store an index into this
COLOR_PERMUTATIONS = tuple(itertools.permutations((0, 1, 2)))

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class PacketFile:
    """One parsed container: planar float32 channels, exact file bits."""

    layout: str                  # {multiplied, direct}
    channels: np.ndarray         # (C, H, W) float32
    sidecar: dict

    @property
    def channel_count(self) -> int:
        return self.channels.shape[0]

    @property
    def hint_count(self) -> int:
        reserved = 1 if self.layout == "multiplied" else 4
        return (self.channel_count - reserved) // 3


def allowed_channel_counts(layout: str) -> set:
    if layout == "multiplied":
        return {3 * k + 1 for k in _HINT_COUNTS}
    return {3 * k + 4 for k in _HINT_COUNTS}


def read_dlcp(path) -> PacketFile:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, code, width, height, channels = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    if code not in _LAYOUTS:
        raise ValueError(f"{path}: unknown layout code {code}")
    layout = _LAYOUTS[code]
    if channels not in allowed_channel_counts(layout):
        raise ValueError(f"{path}: {layout} layout cannot carry "
                         f"{channels} channels")
    payload = raw[_HEADER.size:]
    want = channels * height * width * 4
    if len(payload) != want:
        raise ValueError(f"{path}: payload is {len(payload)} bytes, "
                         f"expected {want}")
    data = np.frombuffer(payload, dtype="<f4").reshape(channels, height, width)
    sidecar_path = path.with_name(path.name + ".json")
    sidecar = json.loads(sidecar_path.read_text()) if sidecar_path.exists() \
        else {}
    return PacketFile(layout=layout, channels=data.copy(), sidecar=sidecar)


# ---------------------------------------------------------------------------
# corpus manifest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairRecord:
    object_id: str
    view_id: str
    input_lighting: str
    output_lighting: str
    hint_variant: str
    permutation: int
    input_render: str
    output_render: str
    hint_paths: tuple
    mask_path: str


@dataclass(frozen=True)
class Manifest:
    seed: int
    ratio_config: dict
    records: tuple


def read_manifest(path) -> Manifest:
    path = Path(path)
    header_path = path.with_name(path.name + ".header.json")
    if not header_path.exists():
        raise ValueError(f"{path}: missing header sidecar")
    header = json.loads(header_path.read_text())
    if header.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported manifest schema "
                         f"{header.get('schema_version')}")
    records = []
    for i, line in enumerate(path.read_text().splitlines()):
        if not line.strip():
            continue
        try:
            blob = json.loads(line)
            records.append(PairRecord(
                object_id=blob["object_id"], view_id=blob["view_id"],
                input_lighting=blob["input_lighting"],
                output_lighting=blob["output_lighting"],
                hint_variant=blob["hint_variant"],
                permutation=int(blob["permutation"]),
                input_render=blob["input_render"],
                output_render=blob["output_render"],
                hint_paths=tuple(blob["hint_paths"]),
                mask_path=blob["mask_path"]))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValueError(f"{path}: corrupt record on line {i + 1}: {exc}")
        if not 0 <= records[-1].permutation < len(COLOR_PERMUTATIONS):
            raise ValueError(f"{path}: record {i + 1} permutation out of range")
    if len(records) != header.get("record_count"):
        raise ValueError(
            f"{path}: {len(records)} records but header declares "
            f"{header.get('record_count')}")
    return Manifest(seed=int(header["seed"]),
                    ratio_config=header.get("ratio_config", {}),
                    records=tuple(records))


# ---------------------------------------------------------------------------
# image files
# ---------------------------------------------------------------------------

def read_pfm(path) -> np.ndarray:
    """Float32 image, row 0 on top; file rows run bottom-to-top."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"PF", b"Pf"):
        raise ValueError(f"{path}: not a PFM file")
    color = parts[0] == b"PF"
    try:
        w, h = (int(t) for t in parts[1].split())
        scale = float(parts[2])
    except ValueError:
        raise ValueError(f"{path}: malformed PFM header")
    count = w * h * (3 if color else 1)
    if len(parts[3]) != 4 * count:
        raise ValueError(
            f"{path}: expected {count} samples, got {len(parts[3]) / 4:g}")
    data = np.frombuffer(parts[3], dtype="<f4" if scale < 0 else ">f4")
    shape = (h, w, 3) if color else (h, w)
    return np.ascontiguousarray(data.reshape(shape)[::-1]).astype(np.float32)


def read_mask(path) -> np.ndarray:
    """8-bit mask PNG as float32 coverage in [0, 1]."""
    img = Image.open(path)
    if img.mode != "L":
        img = img.convert("L")
    return np.asarray(img, dtype=np.float32) / 255.0
