"""Image containers and file I/O.

Formats
-------
HDR images travel as PFM (portable float map): little-endian, scale header
-1.0, rows stored bottom-to-top as in the original format definition. Color
images use the ``PF`` variant, single-channel data the ``Pf`` variant. In
memory, row 0 is always the top image row; flipping happens at the file
boundary.

Masks are 8-bit single-channel PNG with 255 = foreground. LDR previews are
PNG after a linear -> sRGB transfer with clamping. Radiance ``.hdr`` files
are read/written through OpenCV.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
from PIL import Image


@dataclass
class HdrImage:
    """Linear-radiance image, float32, with an optional coverage alpha."""

    data: np.ndarray                      # (H, W, 3) float32
    alpha: Optional[np.ndarray] = None    # (H, W) float32 in [0, 1]
    diagnostics: Any = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError(f"HdrImage data must be (H, W, 3), got {self.data.shape}")
        if self.alpha is not None:
            self.alpha = np.asarray(self.alpha, dtype=np.float32)
            if self.alpha.shape != self.data.shape[:2]:
                raise ValueError("alpha dimensions must match image")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


def write_pfm(path, image: np.ndarray) -> None:
    """Write a float32 array as PFM (little-endian, scale -1.0).

    (H, W) arrays become ``Pf`` files, (H, W, 3) arrays ``PF`` files.
    """
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 3 and image.shape[2] == 3:
        header = b"PF"
    elif image.ndim == 2:
        header = b"Pf"
    else:
        raise ValueError(f"PFM supports (H,W) or (H,W,3) arrays, got {image.shape}")
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        # file rows run bottom-to-top
        f.write(np.ascontiguousarray(image[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into a float32 array, row 0 on top."""
    with open(path, "rb") as f:
        raw = f.read()
    m = re.match(rb"^(PF|Pf)\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s", raw)
    if not m:
        raise ValueError(f"{path}: not a PFM file")
    color = m.group(1) == b"PF"
    w, h = int(m.group(2)), int(m.group(3))
    scale = float(m.group(4))
    offset = m.end()
    count = w * h * (3 if color else 1)
    data = np.frombuffer(raw, dtype="<f4" if scale < 0 else ">f4", count=count, offset=offset)
    if data.size != count:
        raise ValueError(f"{path}: truncated PFM payload")
    if abs(scale) not in (0.0, 1.0):
        data = data * np.float32(abs(scale))
    shape = (h, w, 3) if color else (h, w)
    return np.ascontiguousarray(data.reshape(shape)[::-1]).astype(np.float32)


def write_mask_png(path, mask: np.ndarray) -> None:
    """Write a [0,1] coverage array as 8-bit single-channel PNG (255 = foreground)."""
    arr = np.clip(np.asarray(mask, dtype=np.float32), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="L").save(path)


def read_mask_png(path) -> np.ndarray:
    """Read an 8-bit mask PNG into float32 coverage in [0,1]."""
    img = Image.open(path)
    if img.mode != "L":
        img = img.convert("L")
    return np.asarray(img, dtype=np.float32) / 255.0


def linear_to_srgb(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    lo = x * 12.92
    hi = 1.055 * np.power(np.maximum(x, 1e-8), 1.0 / 2.4) - 0.055
    return np.where(x <= 0.0031308, lo, hi)


def write_png_preview(path, image: np.ndarray) -> None:
    """Clamp + sRGB-encode a linear (H, W, 3) image and save as 8-bit PNG."""
    srgb = linear_to_srgb(np.asarray(image, dtype=np.float32))
    Image.fromarray(np.round(srgb * 255.0).astype(np.uint8), mode="RGB").save(path)


def write_hdr(path, image: np.ndarray) -> None:
    """Write a linear (H, W, 3) image as Radiance .hdr."""
    import cv2

    bgr = np.asarray(image, dtype=np.float32)[:, :, ::-1]
    if not cv2.imwrite(str(path), np.ascontiguousarray(bgr)):
        raise IOError(f"failed to write {path}")


def read_hdr(path) -> np.ndarray:
    """Read a Radiance .hdr file into linear float32 RGB."""
    import cv2

    bgr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if bgr is None:
        raise IOError(f"failed to read {path}")
    if bgr.ndim == 2:
        bgr = np.repeat(bgr[:, :, None], 3, axis=2)
    return np.ascontiguousarray(bgr[:, :, ::-1].astype(np.float32))


def read_radiance_image(path) -> np.ndarray:
    """Read an HDR image by extension (.pfm or .hdr) into (H, W, 3) float32."""
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".pfm":
        img = read_pfm(path)
        if img.ndim == 2:
            img = np.repeat(img[:, :, None], 3, axis=2)
        return img
    if ext == ".hdr":
        return read_hdr(path)
    raise ValueError(f"unsupported HDR format: {path}")
