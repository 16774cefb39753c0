"""Hole-mask generation: random brush strokes and object-shaped masks.

Masks are uint8 grids with 1 marking the hole to complete. Strokes are
filled polylines with round caps (exact distance-to-segment rasterized
in numpy) plus filled rectangles; object masks dilate an instance shape
with a square (Chebyshev) structuring element, with optional jitter and
a probabilistic union with a small stroke mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ConfigurationError


@dataclass(frozen=True)
class StrokeMaskParams:
    stroke_count: tuple[int, int] = (1, 8)
    vertex_count: tuple[int, int] = (4, 18)
    brush_width: tuple[float, float] = (0.02, 0.12)  # fraction of min(H, W)
    rect_count: tuple[int, int] = (0, 4)
    rect_size: tuple[float, float] = (0.05, 0.30)    # per-side fraction

    def validate(self) -> None:
        for name in ("stroke_count", "vertex_count", "brush_width", "rect_count", "rect_size"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ConfigurationError(f"{name} range ({lo}, {hi}) is empty or negative")


@dataclass(frozen=True)
class ObjectMaskParams:
    dilation_radius: int | None = None  # None: 5% of min(H, W), at least 1 px
    jitter: int | None = None           # None: 3% of min(H, W) per axis
    stroke_union_prob: float = 0.2

    def validate(self) -> None:
        if self.dilation_radius is not None and self.dilation_radius < 0:
            raise ConfigurationError("dilation_radius must be >= 0")
        if self.jitter is not None and self.jitter < 0:
            raise ConfigurationError("jitter must be >= 0")
        if not 0.0 <= self.stroke_union_prob <= 1.0:
            raise ConfigurationError("stroke_union_prob must be in [0, 1]")


def _paint_capsule(mask: np.ndarray, p0, p1, radius: float) -> None:
    """Set mask pixels within `radius` of segment p0-p1 (round caps)."""
    h, w = mask.shape
    y0 = max(int(np.floor(min(p0[0], p1[0]) - radius)), 0)
    y1 = min(int(np.ceil(max(p0[0], p1[0]) + radius)) + 1, h)
    x0 = max(int(np.floor(min(p0[1], p1[1]) - radius)), 0)
    x1 = min(int(np.ceil(max(p0[1], p1[1]) + radius)) + 1, w)
    if y0 >= y1 or x0 >= x1:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dy, dx = p1[0] - p0[0], p1[1] - p0[1]
    seg_len2 = dy * dy + dx * dx
    if seg_len2 == 0.0:
        dist2 = (yy - p0[0]) ** 2 + (xx - p0[1]) ** 2
    else:
        t = ((yy - p0[0]) * dy + (xx - p0[1]) * dx) / seg_len2
        t = np.clip(t, 0.0, 1.0)
        dist2 = (yy - (p0[0] + t * dy)) ** 2 + (xx - (p0[1] + t * dx)) ** 2
    mask[y0:y1, x0:x1] |= dist2 <= radius * radius


# Draws outside this coverage band are rejected and redrawn with a derived
# seed; guarantees usable hole sizes without touching the brush defaults.
COVERAGE_BOUNDS = (0.01, 0.95)
_MAX_REDRAWS = 16


def random_stroke_mask(
    seed, height: int, width: int, params: StrokeMaskParams | None = None
) -> np.ndarray:
    """Brush-stroke hole mask, deterministic in (seed, dims, params).

    When the params allow any ink at all, draws whose coverage falls
    outside COVERAGE_BOUNDS are redrawn from derived seeds.
    """
    if height < 16 or width < 16:
        raise ValueError(f"mask dims must be >= 16, got {height}x{width}")
    params = params or StrokeMaskParams()
    params.validate()
    can_paint = params.stroke_count[1] > 0 or params.rect_count[1] > 0
    mask = _draw_stroke_mask(seed, height, width, params)
    if not can_paint:
        return mask
    lo, hi = COVERAGE_BOUNDS
    for redraw in range(1, _MAX_REDRAWS + 1):
        coverage = np.count_nonzero(mask) / mask.size
        if lo <= coverage <= hi:
            break
        mask = _draw_stroke_mask((seed, redraw), height, width, params)
    return mask


def _draw_stroke_mask(seed, height: int, width: int, params: StrokeMaskParams) -> np.ndarray:
    rng = np.random.default_rng(seed)
    mask = np.zeros((height, width), dtype=bool)
    min_dim = min(height, width)

    n_strokes = int(rng.integers(params.stroke_count[0], params.stroke_count[1] + 1))
    for _ in range(n_strokes):
        n_vertices = int(rng.integers(params.vertex_count[0], params.vertex_count[1] + 1))
        radius = rng.uniform(*params.brush_width) * min_dim / 2.0
        y = rng.uniform(0, height)
        x = rng.uniform(0, width)
        angle = rng.uniform(0, 2 * np.pi)
        for _ in range(max(n_vertices - 1, 0)):
            angle += rng.uniform(-1.0, 1.0)
            step = rng.uniform(0.05, 0.25) * min_dim
            ny = np.clip(y + step * np.sin(angle), 0, height - 1)
            nx = np.clip(x + step * np.cos(angle), 0, width - 1)
            _paint_capsule(mask, (y, x), (ny, nx), radius)
            y, x = ny, nx
        if n_vertices == 1:
            _paint_capsule(mask, (y, x), (y, x), radius)

    n_rects = int(rng.integers(params.rect_count[0], params.rect_count[1] + 1))
    for _ in range(n_rects):
        rh = max(int(rng.uniform(*params.rect_size) * height), 1)
        rw = max(int(rng.uniform(*params.rect_size) * width), 1)
        ry = int(rng.integers(0, max(height - rh, 0) + 1))
        rx = int(rng.integers(0, max(width - rw, 0) + 1))
        mask[ry : ry + rh, rx : rx + rw] = True

    return mask.astype(np.uint8)


def _as_pixel_set(instance_pixels: np.ndarray, height: int, width: int) -> np.ndarray:
    """Normalize a boolean map or an (N, 2) row/col array to a boolean map."""
    arr = np.asarray(instance_pixels)
    if arr.dtype == bool:
        if arr.shape != (height, width):
            raise ValueError(f"instance map shape {arr.shape} != ({height}, {width})")
        return arr
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("instance_pixels must be a boolean map or an (N, 2) coord array")
    if arr.shape[0] == 0:
        return np.zeros((height, width), dtype=bool)
    rows, cols = arr[:, 0], arr[:, 1]
    if rows.min() < 0 or rows.max() >= height or cols.min() < 0 or cols.max() >= width:
        raise ValueError("instance pixel coordinates out of bounds")
    out = np.zeros((height, width), dtype=bool)
    out[rows, cols] = True
    return out


def object_mask(
    instance_pixels: np.ndarray,
    height: int,
    width: int,
    seed=0,
    params: ObjectMaskParams | None = None,
) -> np.ndarray:
    """Object-shaped hole: dilated (optionally jittered) instance shape.

    Dilation uses a (2r+1)-square element, so every hole pixel lies
    within Chebyshev distance r of an instance pixel. With probability
    stroke_union_prob the result is unioned with one small stroke.
    """
    params = params or ObjectMaskParams()
    params.validate()
    shape = _as_pixel_set(instance_pixels, height, width)
    if not shape.any():
        raise ValueError("instance pixel set is empty")
    min_dim = min(height, width)
    radius = params.dilation_radius
    if radius is None:
        radius = max(int(round(0.05 * min_dim)), 1)
    jitter = params.jitter
    if jitter is None:
        jitter = int(round(0.03 * min_dim))

    rng = np.random.default_rng(seed)
    if jitter > 0:
        dy = int(rng.integers(-jitter, jitter + 1))
        dx = int(rng.integers(-jitter, jitter + 1))
        shifted = np.zeros_like(shape)
        src = shape[
            max(-dy, 0) : height - max(dy, 0),
            max(-dx, 0) : width - max(dx, 0),
        ]
        shifted[
            max(dy, 0) : height - max(-dy, 0),
            max(dx, 0) : width - max(-dx, 0),
        ] = src
        if shifted.any():
            shape = shifted

    if radius > 0:
        footprint = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
        shape = ndimage.binary_dilation(shape, structure=footprint)

    mask = shape.copy()
    if params.stroke_union_prob > 0 and rng.uniform() < params.stroke_union_prob:
        small = StrokeMaskParams(
            stroke_count=(1, 2),
            vertex_count=(3, 6),
            brush_width=(0.02, 0.06),
            rect_count=(0, 0),
        )
        stroke_seed = int(rng.integers(0, 2**31))
        mask |= random_stroke_mask(stroke_seed, height, width, small).astype(bool)

    return mask.astype(np.uint8)


def stroke_mask_overlapping(
    seed, height: int, width: int, instances: np.ndarray,
    params: StrokeMaskParams | None = None, max_tries: int = 32,
) -> np.ndarray:
    """Stroke mask regenerated (derived seeds) until it overlaps an instance.

    Falls back to the last candidate if no overlap is found; callers that
    require overlap should check. Used when evaluation masks must touch
    an instance.
    """
    mask = random_stroke_mask(seed, height, width, params)
    for attempt in range(1, max_tries + 1):
        if np.any((mask > 0) & (instances > 0)):
            return mask
        mask = random_stroke_mask((seed, attempt), height, width, params)
    return mask


def hole_coverage(mask: np.ndarray) -> float:
    return float(np.count_nonzero(mask)) / mask.size


def save_mask(mask: np.ndarray, path) -> None:
    Image.fromarray((mask > 0).astype(np.uint8) * 255).save(path)


def load_mask(path) -> np.ndarray:
    arr = np.array(Image.open(path).convert("L"))
    return (arr >= 128).astype(np.uint8)
