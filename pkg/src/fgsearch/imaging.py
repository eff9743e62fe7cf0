"""Raster geometry: composites, crop boxes, resampling, and augmentations.

Rasters are numpy arrays of shape (H, W, 3), values in [0, 1], float dtype.
All resampling is bilinear with the align-corners=false convention: pixel
(i, j) covers the unit square [i, i+1] x [j, j+1] of the continuous image
plane, its center sits at (i + 0.5, j + 0.5), and a normalized coordinate
v in [0, 1] maps to the continuous coordinate v * size. Samples outside the
pixel-center hull are clamped to the border (edge replication).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

# A pixel counts as part of the glyph when any channel drops below this.
# 2/255 of slack keeps the test tolerant to 8-bit PNG round-trips.
WHITE_THRESH = 1.0 - 2.0 / 255.0


class DegenerateBoxError(ValueError):
    """Raised when a box rounds to zero pixels in either dimension."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle in normalized [0, 1] image coordinates."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box must have positive size, got w={self.w}, h={self.h}")
        if self.x < -1e-9 or self.y < -1e-9:
            raise ValueError(f"box origin must be >= 0, got x={self.x}, y={self.y}")
        if self.x + self.w > 1 + 1e-9 or self.y + self.h > 1 + 1e-9:
            raise ValueError(f"box exceeds unit square: {self}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2, self.y + self.h / 2)

    def aspect_ratio(self, image_w: int, image_h: int) -> float:
        """Pixel-space width/height ratio of the box."""
        return (self.w * image_w) / (self.h * image_h)

    def contains(self, other: "Box", tol: float = 1e-9) -> bool:
        return (
            self.x <= other.x + tol
            and self.y <= other.y + tol
            and self.x + self.w >= other.x + other.w - tol
            and self.y + self.h >= other.y + other.h - tol
        )

    def to_pixels(self, image_w: int, image_h: int) -> tuple[int, int, int, int]:
        """Round to integer pixel bounds (x0, y0, x1, y1), clipped to the image.

        Raises DegenerateBoxError when the box rounds to zero pixels.
        """
        x0 = int(round(self.x * image_w))
        y0 = int(round(self.y * image_h))
        x1 = int(round((self.x + self.w) * image_w))
        y1 = int(round((self.y + self.h) * image_h))
        x0, x1 = max(0, x0), min(image_w, x1)
        y0, y1 = max(0, y0), min(image_h, y1)
        if x1 <= x0 or y1 <= y0:
            raise DegenerateBoxError(f"box {self} rounds to zero pixels at {image_w}x{image_h}")
        return x0, y0, x1, y1


def validate_raster(img: np.ndarray) -> None:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"raster must be (H, W, 3), got {img.shape}")
    if img.min() < -1e-6 or img.max() > 1 + 1e-6:
        raise ValueError("raster values must lie in [0, 1]")


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

def _sample_bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample img at continuous points (ys, xs); coordinates in the [0, size]
    frame with pixel centers at half-integers. Border-clamped."""
    h, w = img.shape[:2]
    yc = np.clip(ys - 0.5, 0.0, h - 1.0)
    xc = np.clip(xs - 0.5, 0.0, w - 1.0)
    y0 = np.floor(yc).astype(np.intp)
    x0 = np.floor(xc).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    ty = (yc - y0)[..., None]
    tx = (xc - x0)[..., None]
    top = img[y0, x0] * (1 - tx) + img[y0, x1] * tx
    bot = img[y1, x0] * (1 - tx) + img[y1, x1] * tx
    return top * (1 - ty) + bot * ty


def crop_and_resize(img: np.ndarray, box: Box, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resample of the box region of img to (out_h, out_w, 3)."""
    h, w = img.shape[:2]
    oy = (np.arange(out_h) + 0.5) / out_h
    ox = (np.arange(out_w) + 0.5) / out_w
    ys = (box.y + oy * box.h) * h
    xs = (box.x + ox * box.w) * w
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    return _sample_bilinear(img, grid_y, grid_x)


def resize(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resize of the full raster."""
    return crop_and_resize(img, Box(0.0, 0.0, 1.0, 1.0), out_w, out_h)


# ---------------------------------------------------------------------------
# Foregrounds and composites
# ---------------------------------------------------------------------------

def glyph_mask(fg: np.ndarray) -> np.ndarray:
    """Boolean mask of non-white (glyph) pixels."""
    return fg.min(axis=2) < WHITE_THRESH


def tight_glyph_bounds(fg: np.ndarray) -> tuple[int, int, int, int]:
    """Pixel bounds (x0, y0, x1, y1) of the non-white content; the whole
    raster when no pixel qualifies (blank/constant foregrounds)."""
    mask = glyph_mask(fg)
    if not mask.any():
        return 0, 0, fg.shape[1], fg.shape[0]
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1


def glyph_aspect_ratio(fg: np.ndarray) -> float:
    """Width/height of the tight glyph box in pixels."""
    x0, y0, x1, y1 = tight_glyph_bounds(fg)
    return (x1 - x0) / (y1 - y0)


def pad_to_square(img: np.ndarray, fill: float = 1.0) -> np.ndarray:
    """Center img on a square canvas of its longer side."""
    h, w = img.shape[:2]
    side = max(h, w)
    out = np.full((side, side, 3), fill, dtype=img.dtype)
    y0 = (side - h) // 2
    x0 = (side - w) // 2
    out[y0:y0 + h, x0:x0 + w] = img
    return out


def composite(background: np.ndarray, query_box: Box, foreground: np.ndarray) -> np.ndarray:
    """Paste the foreground into the query box of the background.

    The tight glyph crop of the foreground (its white padding stripped) is
    bilinear-resized to the box's pixel extent and pasted opaquely, so the
    box is filled edge to edge. Pixels outside the box are untouched.
    """
    h, w = background.shape[:2]
    x0, y0, x1, y1 = query_box.to_pixels(w, h)
    gx0, gy0, gx1, gy1 = tight_glyph_bounds(foreground)
    crop = foreground[gy0:gy1, gx0:gx1]
    patch = resize(crop, x1 - x0, y1 - y0)
    out = background.copy()
    out[y0:y1, x0:x1] = patch
    return out


# ---------------------------------------------------------------------------
# Crop box
# ---------------------------------------------------------------------------

def crop_box(query_box: Box, image_w: int, image_h: int) -> Box:
    """Context crop around the query box with box_area/crop_area = 0.5.

    The crop is concentric with the query box with each side scaled by
    sqrt(2). When that overflows the image it is translated to fit (size and
    the 0.5 ratio preserved); a side longer than the image is clamped to the
    full extent, sacrificing the ratio. `area_ratio` recovers the achieved
    value.
    """
    cw = query_box.w * math.sqrt(2.0)
    ch = query_box.h * math.sqrt(2.0)
    cx, cy = query_box.center
    x = cx - cw / 2
    y = cy - ch / 2
    if cw >= 1.0:
        x, cw = 0.0, 1.0
    else:
        x = min(max(x, 0.0), 1.0 - cw)
    if ch >= 1.0:
        y, ch = 0.0, 1.0
    else:
        y = min(max(y, 0.0), 1.0 - ch)
    return Box(x, y, cw, ch)


def area_ratio(query_box: Box, crop: Box) -> float:
    """Achieved area(query)/area(crop), 0.5 when no clamping occurred."""
    return query_box.area / crop.area


def pad_box(box: Box, seed: int, max_frac: float = 0.3) -> Box:
    """Randomly pad each side outward by an independent fraction of the box
    size, up to max_frac, then clip to the unit square."""
    rng = np.random.default_rng(seed)
    u = rng.uniform(0.0, 1.0, size=4)
    return _pad_box_with(box, u, max_frac)


def _pad_box_with(box: Box, u, max_frac: float = 0.3) -> Box:
    left, right, top, bottom = (float(v) * max_frac for v in u)
    # clip each pad against the image border so u=0 stays exactly identity
    dl = min(left * box.w, box.x)
    dr = min(right * box.w, 1.0 - box.x - box.w)
    dt = min(top * box.h, box.y)
    db = min(bottom * box.h, 1.0 - box.y - box.h)
    return Box(box.x - dl, box.y - dt, box.w + dl + dr, box.h + dt + db)


# ---------------------------------------------------------------------------
# Color space helpers
# ---------------------------------------------------------------------------

def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    v = maxc
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.maximum(maxc, 1e-12), 0.0)
    safe = np.maximum(delta, 1e-12)
    hr = ((g - b) / safe) % 6.0
    hg = (b - r) / safe + 2.0
    hb = (r - g) / safe + 4.0
    h = np.where(maxc == r, hr, np.where(maxc == g, hg, hb)) / 6.0
    h = np.where(delta > 0, h, 0.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0] % 1.0, hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = (i.astype(np.int64) % 6)[..., None]
    rgb = np.select(
        [i == 0, i == 1, i == 2, i == 3, i == 4, i == 5],
        [
            np.stack([v, t, p], axis=-1),
            np.stack([q, v, p], axis=-1),
            np.stack([p, v, t], axis=-1),
            np.stack([p, q, v], axis=-1),
            np.stack([t, p, v], axis=-1),
            np.stack([v, p, q], axis=-1),
        ],
    )
    return rgb


def hue_distance(a: float, b: float) -> float:
    """Distance between two hues on the unit circle, in [0, 0.5]."""
    d = abs(a - b) % 1.0
    return min(d, 1.0 - d)


# ---------------------------------------------------------------------------
# Augmentations
# ---------------------------------------------------------------------------

def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with edge replication; identity for sigma<=0."""
    if sigma <= 0:
        return img.copy()
    radius = max(1, int(math.ceil(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (xs / sigma) ** 2)
    kernel /= kernel.sum()
    padded = np.pad(img, ((radius, radius), (0, 0), (0, 0)), mode="edge")
    out = np.zeros_like(img)
    for k, kv in enumerate(kernel):
        out += kv * padded[k:k + img.shape[0]]
    padded = np.pad(out, ((0, 0), (radius, radius), (0, 0)), mode="edge")
    out = np.zeros_like(img)
    for k, kv in enumerate(kernel):
        out += kv * padded[:, k:k + img.shape[1]]
    return out


def positive_jitter_params(seed: int, hue_amp: float = 0.05, value_amp: float = 0.05,
                           sigma_range: tuple[float, float] = (0.3, 1.0)):
    """Seeded draw of (hue shift, value shift, blur sigma) for positives."""
    rng = np.random.default_rng(seed)
    dh = float(rng.uniform(-hue_amp, hue_amp))
    dv = float(rng.uniform(-value_amp, value_amp))
    sigma = float(rng.uniform(*sigma_range))
    return dh, dv, sigma


def augment_positive(fg: np.ndarray, seed: int, hue_amp: float = 0.05,
                     value_amp: float = 0.05,
                     sigma_range: tuple[float, float] = (0.3, 1.0)) -> np.ndarray:
    """Label-preserving foreground augmentation: small hue/value jitter on the
    glyph plus Gaussian blur. Geometry is untouched; the white margin keeps
    its value so tight-crop logic still applies."""
    dh, dv, sigma = positive_jitter_params(seed, hue_amp, value_amp, sigma_range)
    out = fg.astype(np.float64, copy=True)
    mask = glyph_mask(fg)
    if mask.any() and (dh != 0.0 or dv != 0.0):
        hsv = rgb_to_hsv(out[mask])
        hsv[:, 0] = (hsv[:, 0] + dh) % 1.0
        hsv[:, 2] = np.clip(hsv[:, 2] + dv, 0.0, 1.0)
        out[mask] = hsv_to_rgb(hsv)
    out = gaussian_blur(out, sigma)
    return np.clip(out, 0.0, 1.0)


def negative_rotation(seed: int, tau_geo: float) -> float:
    """Seeded rotation angle with |angle| in [2*tau_geo, 4*tau_geo]."""
    rng = np.random.default_rng(seed)
    magnitude = float(rng.uniform(2.0 * tau_geo, 4.0 * tau_geo))
    sign = 1.0 if rng.uniform() < 0.5 else -1.0
    return sign * magnitude

def rotate_glyph(fg: np.ndarray, angle: float) -> np.ndarray:
    """Rotate the glyph about its tight-box center onto a white canvas large
    enough to hold it, then tight-crop and re-pad to square."""
    gx0, gy0, gx1, gy1 = tight_glyph_bounds(fg)
    crop = fg[gy0:gy1, gx0:gx1]
    ch, cw = crop.shape[:2]
    side = int(math.ceil(math.hypot(ch, cw))) + 2
    canvas = np.full((side, side, 3), 1.0, dtype=np.float64)
    oy = (side - ch) // 2
    ox = (side - cw) // 2
    canvas[oy:oy + ch, ox:ox + cw] = crop
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    cy = cx = side / 2.0
    ys, xs = np.meshgrid(np.arange(side) + 0.5, np.arange(side) + 0.5, indexing="ij")
    # inverse map: output pixel -> source location
    sx = cos_a * (xs - cx) + sin_a * (ys - cy) + cx
    sy = -sin_a * (xs - cx) + cos_a * (ys - cy) + cy
    inside = (sx >= 0) & (sx <= side) & (sy >= 0) & (sy <= side)
    rotated = _sample_bilinear(canvas, sy, sx)
    rotated[~inside] = 1.0
    tx0, ty0, tx1, ty1 = tight_glyph_bounds(rotated)
    return pad_to_square(np.clip(rotated[ty0:ty1, tx0:tx1], 0.0, 1.0))


def augment_negative(fg: np.ndarray, seed: int, tau_geo: float = 0.35) -> np.ndarray:
    """Label-flipping augmentation: rotate the glyph far enough to violate the
    geometry tolerance, re-padded onto a square white canvas."""
    return rotate_glyph(fg, negative_rotation(seed, tau_geo))


# ---------------------------------------------------------------------------
# PNG I/O (8-bit RGB; values scaled to [0, 1] by /255)
# ---------------------------------------------------------------------------

def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_png(path, img: np.ndarray) -> None:
    validate_raster(img)
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")
