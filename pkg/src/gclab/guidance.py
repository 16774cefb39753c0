"""Guidance-map encodings: edge, semantic one-hot, and panoptic.

The panoptic encoding stacks the semantic one-hot channels with a
single instance-boundary channel (a pixel is boundary iff some
4-neighbor carries a different instance id), so the channel count stays
fixed regardless of how many instances the scene holds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

GUIDANCE_KINDS = ("edge", "semantic", "panoptic", "none")


@dataclass
class GuidanceMap:
    kind: str                 # edge | semantic | panoptic | none
    channels: np.ndarray      # float32 (C, H, W), values in [0, 1]
    num_classes: int = 0      # K; 0 for edge/none

    @property
    def height(self) -> int:
        return int(self.channels.shape[1])

    @property
    def width(self) -> int:
        return int(self.channels.shape[2])


def guidance_channel_count(kind: str, num_classes: int) -> int:
    """Channel count C_g for a guidance kind. 'none' matches panoptic shape
    (zero-filled block) so guidance-free models share the generator layout."""
    if kind == "edge":
        return 1
    if kind == "semantic":
        return num_classes
    if kind in ("panoptic", "none"):
        return num_classes + 1
    raise ValueError(f"unknown guidance kind {kind!r}")


def validate_guidance(g: GuidanceMap) -> None:
    if g.kind not in GUIDANCE_KINDS:
        raise ValueError(f"unknown guidance kind {g.kind!r}")
    c = g.channels
    if c.ndim != 3:
        raise ValueError(f"guidance channels must be (C, H, W), got {c.shape}")
    if g.kind == "none":
        if np.any(c != 0.0):
            raise ValueError("'none' guidance must be all zeros")
        return
    if c.min() < 0.0 or c.max() > 1.0:
        raise ValueError("guidance values outside [0, 1]")
    if g.kind == "edge":
        if c.shape[0] != 1 or not np.all(np.isin(c, (0.0, 1.0))):
            raise ValueError("edge guidance must be one binary channel")
    elif g.kind == "semantic":
        if c.shape[0] != g.num_classes:
            raise ValueError(f"semantic guidance needs K={g.num_classes} channels")
        if not np.allclose(c.sum(axis=0), 1.0):
            raise ValueError("semantic guidance must be one-hot per pixel")
    elif g.kind == "panoptic":
        if c.shape[0] != g.num_classes + 1:
            raise ValueError(f"panoptic guidance needs K+1={g.num_classes + 1} channels")
        if not np.allclose(c[: g.num_classes].sum(axis=0), 1.0):
            raise ValueError("panoptic semantic channels must be one-hot per pixel")
        if not np.all(np.isin(c[g.num_classes], (0.0, 1.0))):
            raise ValueError("panoptic boundary channel must be binary")


def _grayscale(image: np.ndarray) -> np.ndarray:
    # Rec.601 luma; input is (3, H, W) in [-1, 1].
    r, g, b = image[0], image[1], image[2]
    return 0.299 * r + 0.587 * g + 0.114 * b


def encode_edge(image: np.ndarray, low_threshold: float, high_threshold: float) -> GuidanceMap:
    """Binary edge map: Sobel gradient magnitude with two-threshold hysteresis.

    Weak pixels (>= low) survive only when 8-connected to a strong pixel
    (>= high). No non-maximum suppression, so edges are ~2 px wide.
    """
    if not 0 < low_threshold <= high_threshold:
        raise ValueError("thresholds must satisfy 0 < low <= high")
    gray = _grayscale(np.asarray(image, dtype=np.float32))
    gx = ndimage.sobel(gray, axis=1, mode="reflect")
    gy = ndimage.sobel(gray, axis=0, mode="reflect")
    mag = np.hypot(gx, gy)
    strong = mag >= high_threshold
    weak = mag >= low_threshold
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    keep = np.zeros(n + 1, dtype=bool)
    keep[np.unique(labels[strong])] = True
    keep[0] = False
    edges = keep[labels]
    return GuidanceMap(kind="edge", channels=edges[None].astype(np.float32), num_classes=0)


def encode_semantic(semantic: np.ndarray, num_classes: int) -> GuidanceMap:
    """K-channel one-hot encoding of a class-index map."""
    sem = np.asarray(semantic)
    if sem.min() < 0 or sem.max() >= num_classes:
        raise ValueError(f"semantic indices must be in [0, {num_classes})")
    onehot = np.zeros((num_classes,) + sem.shape, dtype=np.float32)
    yy, xx = np.indices(sem.shape)
    onehot[sem, yy, xx] = 1.0
    return GuidanceMap(kind="semantic", channels=onehot, num_classes=num_classes)


def instance_boundaries(instances: np.ndarray) -> np.ndarray:
    """Binary map of pixels whose 4-neighborhood crosses an instance id."""
    ids = np.asarray(instances)
    boundary = np.zeros(ids.shape, dtype=bool)
    horiz = ids[:, :-1] != ids[:, 1:]
    boundary[:, :-1] |= horiz
    boundary[:, 1:] |= horiz
    vert = ids[:-1, :] != ids[1:, :]
    boundary[:-1, :] |= vert
    boundary[1:, :] |= vert
    return boundary


def encode_panoptic(
    semantic: np.ndarray, instances: np.ndarray, num_classes: int
) -> GuidanceMap:
    """Semantic one-hot channels plus one instance-boundary channel."""
    if np.asarray(semantic).shape != np.asarray(instances).shape:
        raise ValueError("semantic and instance maps must share shape")
    onehot = encode_semantic(semantic, num_classes).channels
    boundary = instance_boundaries(instances)[None].astype(np.float32)
    return GuidanceMap(
        kind="panoptic",
        channels=np.concatenate([onehot, boundary], axis=0),
        num_classes=num_classes,
    )


def zero_guidance(height: int, width: int, num_classes: int) -> GuidanceMap:
    """All-zero guidance block shaped like panoptic guidance (K+1 channels).

    Fed to generators trained without guidance so they share the layout
    of guided models.
    """
    return GuidanceMap(
        kind="none",
        channels=np.zeros((num_classes + 1, height, width), dtype=np.float32),
        num_classes=num_classes,
    )


def encode_guidance(
    kind: str,
    image: np.ndarray,
    semantic: np.ndarray | None,
    instances: np.ndarray | None,
    num_classes: int,
    edge_low: float = 0.15,
    edge_high: float = 0.3,
) -> GuidanceMap:
    """Encode whichever guidance `kind` asks for from scene maps."""
    if kind == "edge":
        return encode_edge(image, edge_low, edge_high)
    if kind == "semantic":
        return encode_semantic(semantic, num_classes)
    if kind == "panoptic":
        return encode_panoptic(semantic, instances, num_classes)
    if kind == "none":
        return zero_guidance(image.shape[1], image.shape[2], num_classes)
    raise ValueError(f"unknown guidance kind {kind!r}")
