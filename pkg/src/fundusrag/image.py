"""Fundus image preprocessing: morphology, resampling, normalization.

Images are plain numpy arrays: ``(H, W)`` uint8 for grayscale, ``(H, W, 3)``
uint8 for RGB, float32 after normalization.  PPM (P6) and PGM (P5) with
maxval 255 are the only raster interchange formats, keeping the tests
dependency-free and bit-exact.

Border conventions, fixed because toolkits disagree: morphology replicates
the border (avoids artificial rim responses on fundus borders), resampling
clamps source coordinates, rotation fills out-of-bounds with black.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

DR_SIZE = (512, 512)
ME_SIZE = (224, 224)
VLM_SIZE = (448, 448)

DEFAULT_KERNEL_SIZE = 15  # elliptical element for lesion contrast enhancement

LANCZOS_A = 3
_LANCZOS_TAPS = 2 * LANCZOS_A


@dataclass(frozen=True)
class PreprocessSpec:
    dr_size: tuple[int, int] = DR_SIZE
    me_size: tuple[int, int] = ME_SIZE
    vlm_size: tuple[int, int] = VLM_SIZE
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD

    def __post_init__(self):
        if any(s <= 0 for s in self.std):
            raise ValueError("std components must be positive")


# ---------------------------------------------------------------------------
# PPM / PGM I/O


def read_image(source: str | Path | bytes) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) image with maxval 255."""
    data = source if isinstance(source, bytes) else Path(source).read_bytes()
    header, offset = _parse_netpbm_header(data)
    magic, width, height, maxval = header
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval} (only 255)")
    channels = 3 if magic == "P6" else 1
    expected = width * height * channels
    raster = data[offset : offset + expected]
    if len(raster) != expected:
        raise ValueError(f"truncated raster: expected {expected} bytes, got {len(raster)}")
    arr = np.frombuffer(raster, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(height, width).copy()
    return arr.reshape(height, width, 3).copy()


def write_image(path: str | Path, img: np.ndarray) -> None:
    """Write uint8 grayscale as P5 or RGB as P6."""
    img = _require_u8(img)
    if img.ndim == 2:
        magic, (h, w) = "P5", img.shape
    elif img.ndim == 3 and img.shape[2] == 3:
        magic, (h, w) = "P6", img.shape[:2]
    else:
        raise ValueError(f"unsupported image shape {img.shape}")
    header = f"{magic}\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())


def _parse_netpbm_header(data: bytes) -> tuple[tuple[str, int, int, int], int]:
    magic = data[:2].decode("ascii", "replace")
    if magic not in ("P5", "P6"):
        raise ValueError(f"unsupported magic {magic!r} (only P5/P6)")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        if pos >= len(data):
            raise ValueError("truncated header")
        ch = data[pos : pos + 1]
        if ch == b"#":
            pos = data.index(b"\n", pos) + 1
        elif ch.isspace():
            pos += 1
        else:
            match = re.match(rb"\d+", data[pos:])
            if not match:
                raise ValueError("malformed header field")
            fields.append(int(match.group(0)))
            pos += match.end()
    if not data[pos : pos + 1].isspace():
        raise ValueError("missing whitespace after maxval")
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ValueError("image dimensions must be positive")
    return (magic, width, height, maxval), pos


def _require_u8(img: np.ndarray, ndim: int | None = None) -> np.ndarray:
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got {arr.dtype}")
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"expected {ndim}-D image, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# Grayscale morphology


def elliptical_kernel(width: int, height: int) -> np.ndarray:
    """Boolean elliptical structuring element with a centered anchor.

    Cell (x, y) is set iff ((x-cx)/rx)^2 + ((y-cy)/ry)^2 <= 1 with semi-axes
    rx = (width-1)/2, ry = (height-1)/2; a zero semi-axis admits only the
    center line.  This yields the single cell at 1x1 and the plus shape at
    3x3 (corners fall outside the ellipse).
    """
    for name, value in (("width", width), ("height", height)):
        if value < 1 or value % 2 == 0:
            raise ValueError(f"{name} must be an odd positive integer, got {value}")
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    mask = np.zeros((height, width), dtype=bool)
    for y in range(height):
        for x in range(width):
            if cx == 0.0:
                tx = 0.0 if x == cx else math.inf
            else:
                tx = ((x - cx) / cx) ** 2
            if cy == 0.0:
                ty = 0.0 if y == cy else math.inf
            else:
                ty = ((y - cy) / cy) ** 2
            mask[y, x] = tx + ty <= 1.0
    return mask


def _check_se(img: np.ndarray, se: np.ndarray) -> np.ndarray:
    mask = np.asarray(se, dtype=bool)
    if mask.ndim != 2 or mask.shape[0] % 2 == 0 or mask.shape[1] % 2 == 0:
        raise ValueError("structuring element must be 2-D with odd dimensions")
    if not mask.any():
        raise ValueError("structuring element must have at least one set cell")
    if mask.shape[0] > img.shape[0] or mask.shape[1] > img.shape[1]:
        raise ValueError(
            f"structuring element {mask.shape} larger than image {img.shape}"
        )
    return mask


def erode(img: np.ndarray, se: np.ndarray) -> np.ndarray:
    """Per-pixel minimum over the set cells of ``se`` (replicate border)."""
    img = _require_u8(img, 2)
    return _kernels.erode_u8(img, _check_se(img, se))


def dilate(img: np.ndarray, se: np.ndarray) -> np.ndarray:
    """Per-pixel maximum over the set cells of ``se`` (replicate border)."""
    img = _require_u8(img, 2)
    return _kernels.dilate_u8(img, _check_se(img, se))


def opening(img: np.ndarray, se: np.ndarray) -> np.ndarray:
    return dilate(erode(img, se), se)


def closing(img: np.ndarray, se: np.ndarray) -> np.ndarray:
    return erode(dilate(img, se), se)


def top_hat(img: np.ndarray, se: np.ndarray) -> np.ndarray:
    """Image minus its opening: small bright structures."""
    img = _require_u8(img, 2)
    diff = img.astype(np.int16) - opening(img, se).astype(np.int16)
    return np.clip(diff, 0, 255).astype(np.uint8)


def black_hat(img: np.ndarray, se: np.ndarray) -> np.ndarray:
    """Closing minus the image: small dark structures."""
    img = _require_u8(img, 2)
    diff = closing(img, se).astype(np.int16) - img.astype(np.int16)
    return np.clip(diff, 0, 255).astype(np.uint8)


def enhance_green(img: np.ndarray, se: np.ndarray) -> np.ndarray:
    """Lesion contrast enhancement on the green channel.

    enhanced = clamp(g + top_hat(g) - black_hat(g)): bright microstructures
    are amplified, dark ones deepened.
    """
    img = _require_u8(img, 3)
    g = np.ascontiguousarray(img[:, :, 1])
    combined = (
        g.astype(np.int32)
        + top_hat(g, se).astype(np.int32)
        - black_hat(g, se).astype(np.int32)
    )
    return np.clip(combined, 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# Lanczos resampling


def _lanczos(x: float) -> float:
    if x == 0.0:
        return 1.0
    if abs(x) >= LANCZOS_A:
        return 0.0
    pix = math.pi * x
    return LANCZOS_A * math.sin(pix) * math.sin(pix / LANCZOS_A) / (pix * pix)


def lanczos_weights(src_size: int, dst_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Clamped tap indices and normalized weights for one axis.

    Output coordinates map to source space with half-pixel centers; each
    output sample takes the 6 integer taps covering the |x| < 3 support.
    Both kernel backends consume these exact tables, so backend agreement
    reduces to the accumulation loop.
    """
    if dst_size < 1:
        raise ValueError("target size must be >= 1")
    scale = src_size / dst_size
    idx = np.empty((dst_size, _LANCZOS_TAPS), dtype=np.int32)
    weights = np.empty((dst_size, _LANCZOS_TAPS), dtype=np.float64)
    for o in range(dst_size):
        sx = (o + 0.5) * scale - 0.5
        j0 = math.floor(sx) - (LANCZOS_A - 1)
        total = 0.0
        for t in range(_LANCZOS_TAPS):
            w = _lanczos((j0 + t) - sx)
            weights[o, t] = w
            total += w
        for t in range(_LANCZOS_TAPS):
            weights[o, t] /= total
            idx[o, t] = min(max(j0 + t, 0), src_size - 1)
    return idx, weights


def resize_lanczos_float(img: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    """Separable Lanczos-3 resize returning float64 (pre-rounding values)."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3:
        channels = [resize_lanczos_float(arr[:, :, c], target_w, target_h) for c in range(arr.shape[2])]
        return np.stack(channels, axis=2)
    if arr.ndim != 2:
        raise ValueError(f"unsupported image shape {arr.shape}")
    h, w = arr.shape
    x_idx, x_w = lanczos_weights(w, target_w)
    y_idx, y_w = lanczos_weights(h, target_h)
    # Horizontal pass via the rows kernel on the transpose, then vertical.
    horiz = _kernels.resample_rows(np.ascontiguousarray(arr.T), x_idx, x_w).T
    return _kernels.resample_rows(np.ascontiguousarray(horiz), y_idx, y_w)


def resize_lanczos(img: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    """Lanczos-3 resize rounded half-up and clamped to [0, 255] uint8."""
    img = _require_u8(img)
    resampled = resize_lanczos_float(img, target_w, target_h)
    return np.clip(np.floor(resampled + 0.5), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# Normalization and augmentation


def normalize(img: np.ndarray, spec: PreprocessSpec = PreprocessSpec()) -> np.ndarray:
    """Scale to [0, 1] then standardize per channel: (p/255 - mean)/std."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an RGB image, got shape {arr.shape}")
    mean = np.asarray(spec.mean, dtype=np.float64)
    std = np.asarray(spec.std, dtype=np.float64)
    return ((arr / 255.0 - mean) / std).astype(np.float32)


def augment(
    img: np.ndarray,
    rotation_deg: float,
    brightness_factor: float,
    max_rotation_deg: float = 15.0,
    brightness_range: tuple[float, float] = (0.8, 1.2),
) -> np.ndarray:
    """Rotation about the center (bilinear, black fill) then brightness.

    Parameters outside the configured ranges are rejected rather than
    clipped, surfacing bad sweep configurations early.
    """
    img = _require_u8(img)
    if abs(rotation_deg) > max_rotation_deg:
        raise ValueError(f"rotation {rotation_deg} outside +/-{max_rotation_deg} degrees")
    lo, hi = brightness_range
    if not lo <= brightness_factor <= hi:
        raise ValueError(f"brightness factor {brightness_factor} outside [{lo}, {hi}]")

    theta = math.radians(rotation_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)

    def _one(channel: np.ndarray) -> np.ndarray:
        rotated = _kernels.rotate_bilinear(
            np.ascontiguousarray(channel, dtype=np.float64), cos_t, sin_t
        )
        return np.clip(np.floor(rotated * brightness_factor + 0.5), 0, 255).astype(np.uint8)

    if img.ndim == 2:
        return _one(img)
    if img.ndim == 3 and img.shape[2] == 3:
        return np.stack([_one(img[:, :, c]) for c in range(3)], axis=2)
    raise ValueError(f"unsupported image shape {img.shape}")
