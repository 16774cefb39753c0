"""Aligned object crops for the object-level discriminators.

A crop gathers four parts at a fixed resolution S: the image patch, the
hole mask, the guidance channels, and a binary shape map of the sampled
instance. Continuous channels go through an anti-aliasing path (2x
nearest-duplication upscale, separable binomial low-pass, bilinear
sampling); discrete channels are nearest-sampled from the unfiltered
maps at the same positions, so label values never interpolate.

The low-pass path engages only when the crop minifies (source window
larger than S); at scale 1 the sample positions land on pixel centers
and the crop is an exact copy. Out-of-bounds samples reflect
symmetrically about the image border.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .guidance import GuidanceMap, instance_boundaries

LOWPASS_KERNEL = (1.0, 4.0, 6.0, 4.0, 1.0)  # binomial, normalized by its sum


@dataclass(frozen=True)
class BBox:
    x0: int
    y0: int
    x1: int
    y1: int

    def validate(self, height: int, width: int) -> None:
        if not (0 <= self.x0 < self.x1 <= width and 0 <= self.y0 < self.y1 <= height):
            raise ValueError(f"invalid bbox {self} for {height}x{width}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0


@dataclass(frozen=True)
class CropConfig:
    size: int = 64          # S; 224 mirrors the full-scale setting
    margin: float = 0.1     # context added per side, fraction of bbox size

    def validate(self) -> None:
        # Tiny sizes are allowed here for oracle checks; training-facing
        # code (ensemble build) enforces the >= 16 learnability floor.
        if self.size < 4:
            raise ValueError(f"crop size must be >= 4, got {self.size}")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")


@dataclass(frozen=True)
class CropGrid:
    """Sample positions (source pixel coordinates) for one crop."""

    xs: np.ndarray          # (S,) x coordinates of output pixel centers
    ys: np.ndarray          # (S,)
    minifying: bool         # True: low-pass prefilter engages


@dataclass
class ObjectCrop:
    image_c: np.ndarray     # float32 (3, S, S)
    mask_c: np.ndarray      # uint8 (S, S)
    guidance_c: GuidanceMap
    shape_c: np.ndarray     # uint8 (S, S)
    bbox: BBox
    instance_id: int


def instance_bbox(instances: np.ndarray, instance_id: int) -> BBox:
    """Minimal axis-aligned half-open box containing all pixels of the id."""
    ys, xs = np.nonzero(np.asarray(instances) == instance_id)
    if ys.size == 0:
        raise ValueError(f"instance id {instance_id} not present")
    return BBox(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def sample_overlapping_instance(
    instances: np.ndarray, mask: np.ndarray, seed, min_area: int = 16
) -> int | None:
    """Uniformly pick an instance that overlaps the hole and is large enough."""
    inst = np.asarray(instances)
    if inst.shape != np.asarray(mask).shape:
        raise ValueError("instance map and mask must share shape")
    overlapped = np.unique(inst[(inst > 0) & (np.asarray(mask) > 0)])
    candidates = [
        int(i) for i in overlapped if int(np.count_nonzero(inst == i)) >= min_area
    ]
    if not candidates:
        return None
    rng = np.random.default_rng(seed)
    return candidates[int(rng.integers(len(candidates)))]


def crop_grid(bbox: BBox, height: int, width: int, cfg: CropConfig) -> CropGrid:
    """Expanded, square-padded sample grid for a bbox.

    The bbox is clamped to the image, grown by cfg.margin per side, then
    the shorter axis is padded symmetrically to a square window so the
    resize to S x S preserves aspect ratio.
    """
    cfg.validate()
    x0 = max(min(bbox.x0, width), 0)
    x1 = max(min(bbox.x1, width), 0)
    y0 = max(min(bbox.y0, height), 0)
    y1 = max(min(bbox.y1, height), 0)
    if x0 >= x1 or y0 >= y1:
        raise ValueError(f"bbox {bbox} degenerate after clamping to {height}x{width}")
    bw, bh = float(x1 - x0), float(y1 - y0)
    ex0, ex1 = x0 - cfg.margin * bw, x1 + cfg.margin * bw
    ey0, ey1 = y0 - cfg.margin * bh, y1 + cfg.margin * bh
    side = max(ex1 - ex0, ey1 - ey0)
    cx, cy = (ex0 + ex1) / 2.0, (ey0 + ey1) / 2.0
    s = cfg.size
    step = side / s
    offsets = (np.arange(s, dtype=np.float64) + 0.5) * step
    xs = (cx - side / 2.0) + offsets
    ys = (cy - side / 2.0) + offsets
    return CropGrid(xs=xs, ys=ys, minifying=step > 1.0 + 1e-9)


def _reflect_indices(idx: np.ndarray, n: int) -> np.ndarray:
    """Symmetric reflection about the border: -1 -> 0, n -> n-1, period 2n."""
    if n == 1:
        return np.zeros_like(idx)
    idx = np.mod(idx, 2 * n)
    return np.where(idx >= n, 2 * n - 1 - idx, idx)


def _symmetric_pad_1d(t: torch.Tensor, pad: int, dim: int) -> torch.Tensor:
    front = t.narrow(dim, 0, pad).flip(dim)
    back = t.narrow(dim, t.shape[dim] - pad, pad).flip(dim)
    return torch.cat([front, t, back], dim=dim)


def _lowpass_upsample2x(image: torch.Tensor) -> torch.Tensor:
    """2x nearest-duplication upscale followed by the separable binomial filter."""
    c, h, w = image.shape
    up = image.repeat_interleave(2, dim=1).repeat_interleave(2, dim=2)
    kernel = torch.tensor(LOWPASS_KERNEL, dtype=image.dtype, device=image.device)
    kernel = kernel / kernel.sum()
    pad = (len(LOWPASS_KERNEL) - 1) // 2
    x = _symmetric_pad_1d(up, pad, 2)
    x = torch.nn.functional.conv1d(
        x.reshape(c * 2 * h, 1, x.shape[2]), kernel.view(1, 1, -1)
    ).reshape(c, 2 * h, 2 * w)
    x = _symmetric_pad_1d(x, pad, 1)
    x = x.permute(0, 2, 1)
    x = torch.nn.functional.conv1d(
        x.reshape(c * 2 * w, 1, x.shape[2]), kernel.view(1, 1, -1)
    ).reshape(c, 2 * w, 2 * h)
    return x.permute(0, 2, 1)


def _bilinear_axis_weights(coords: np.ndarray, n: int):
    i0 = np.floor(coords).astype(np.int64)
    frac = coords - i0
    ia = _reflect_indices(i0, n)
    ib = _reflect_indices(i0 + 1, n)
    return ia, ib, frac


def resample_continuous(image: torch.Tensor, grid: CropGrid) -> torch.Tensor:
    """Bilinear-resample continuous channels at the grid positions.

    When the grid minifies, sampling happens on the low-passed 2x
    upscale; otherwise directly on the source. Differentiable in the
    image values (indices are constants).
    """
    c = image.shape[0]
    if grid.minifying:
        src = _lowpass_upsample2x(image)
        # source coord sx maps to upscaled continuous index 2*sx - 0.5
        fx = grid.xs * 2.0 - 0.5
        fy = grid.ys * 2.0 - 0.5
    else:
        src = image
        fx = grid.xs - 0.5
        fy = grid.ys - 0.5
    h, w = src.shape[1], src.shape[2]
    xa, xb, tx = _bilinear_axis_weights(fx, w)
    ya, yb, ty = _bilinear_axis_weights(fy, h)
    dt = image.dtype
    tx_t = torch.from_numpy(tx).to(dt).view(1, 1, -1)
    ty_t = torch.from_numpy(ty).to(dt).view(1, -1, 1)
    xa_t, xb_t = torch.from_numpy(xa), torch.from_numpy(xb)
    ya_t, yb_t = torch.from_numpy(ya), torch.from_numpy(yb)

    def gather(iy, ix):
        return src[:, iy.view(-1, 1), ix.view(1, -1)]

    top = gather(ya_t, xa_t) * (1 - tx_t) + gather(ya_t, xb_t) * tx_t
    bot = gather(yb_t, xa_t) * (1 - tx_t) + gather(yb_t, xb_t) * tx_t
    return top * (1 - ty_t) + bot * ty_t


def nearest_sample(map_: np.ndarray, grid: CropGrid) -> np.ndarray:
    """Nearest-neighbor sample of a (H, W) or (C, H, W) map at grid positions."""
    arr = np.asarray(map_)
    h, w = arr.shape[-2], arr.shape[-1]
    ix = _reflect_indices(np.floor(grid.xs).astype(np.int64), w)
    iy = _reflect_indices(np.floor(grid.ys).astype(np.int64), h)
    return arr[..., iy[:, None], ix[None, :]]


def crop_continuous_np(image: np.ndarray, grid: CropGrid) -> np.ndarray:
    with torch.no_grad():
        out = resample_continuous(torch.from_numpy(np.ascontiguousarray(image)), grid)
    return out.numpy()


def crop_guidance(g: GuidanceMap, instances: np.ndarray, grid: CropGrid) -> GuidanceMap:
    """Nearest-sample guidance channels; panoptic boundary channel is
    recomputed from the nearest-sampled instance ids at crop resolution."""
    if g.kind == "panoptic":
        sem_channels = nearest_sample(g.channels[: g.num_classes], grid)
        ids_c = nearest_sample(instances, grid)
        boundary = instance_boundaries(ids_c)[None].astype(np.float32)
        channels = np.concatenate([sem_channels, boundary], axis=0)
    else:
        channels = nearest_sample(g.channels, grid)
    return GuidanceMap(kind=g.kind, channels=channels, num_classes=g.num_classes)


def crop_align(
    image: np.ndarray,
    mask: np.ndarray,
    guidance: GuidanceMap,
    instances: np.ndarray,
    instance_id: int,
    bbox: BBox,
    cfg: CropConfig | None = None,
) -> ObjectCrop:
    """Build the aligned 4-part object input at resolution S x S."""
    cfg = cfg or CropConfig()
    inst = np.asarray(instances)
    if not np.any(inst == instance_id):
        raise ValueError(f"instance id {instance_id} not present")
    h, w = inst.shape
    grid = crop_grid(bbox, h, w, cfg)
    image_c = crop_continuous_np(np.asarray(image, dtype=np.float32), grid)
    mask_c = (nearest_sample(np.asarray(mask), grid) > 0).astype(np.uint8)
    guidance_c = crop_guidance(guidance, inst, grid)
    shape_c = (nearest_sample(inst, grid) == instance_id).astype(np.uint8)
    return ObjectCrop(
        image_c=image_c,
        mask_c=mask_c,
        guidance_c=guidance_c,
        shape_c=shape_c,
        bbox=bbox,
        instance_id=instance_id,
    )
