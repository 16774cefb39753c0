"""Fully automatic inpainting and guidance-editing operations.

The default pipeline variant completes the hole with a guidance-free
model, predicts a panoptic layout on the completed image, then runs the
guided model with that layout. The alternative variant segments the
incomplete image directly. Editing ops (remove / insert / replace)
rewrite the scene maps locally and return the hole mask plus encoded
guidance to feed the guided model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy import ndimage

from .errors import PipelineError
from .generator import GeneratorState, complete
from .guidance import GuidanceMap, encode_panoptic
from .masks import ObjectMaskParams, object_mask
from .scenes import PanopticScene, class_palette, densify_instance_map

BACKGROUND = 0


class SegmenterInterface(Protocol):
    tag: str
    handles_incomplete_input: bool

    def __call__(
        self, image: np.ndarray, mask: np.ndarray | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Return (semantic, instances) maps at the input resolution."""


@dataclass
class OracleSegmenter:
    """Returns a known scene's ground-truth maps; test/benchmark double."""

    scene: PanopticScene
    tag: str = "oracle"
    handles_incomplete_input: bool = True

    def __call__(self, image, mask=None):
        return self.scene.semantic.copy(), self.scene.instances.copy()


@dataclass
class ToySegmenter:
    """Rule-based segmenter for the synthetic palette.

    Assigns each pixel the class of the nearest palette color, then
    splits non-background classes into instances by connected
    components. Valid panoptic output, approximate semantics.
    """

    num_classes: int
    tag: str = "toy-palette"
    handles_incomplete_input: bool = True
    min_instance_pixels: int = 4

    def __call__(self, image, mask=None):
        img = np.asarray(image, dtype=np.float32)
        palette = class_palette(self.num_classes)  # (K, 3)
        dist = ((img[None] - palette[:, :, None, None]) ** 2).sum(axis=1)
        semantic = np.argmin(dist, axis=0).astype(np.int32)
        instances = np.zeros_like(semantic)
        next_id = 0
        for cls in range(1, self.num_classes):
            labels, n = ndimage.label(semantic == cls, structure=np.ones((3, 3), bool))
            for comp in range(1, n + 1):
                sel = labels == comp
                if sel.sum() < self.min_instance_pixels:
                    semantic[sel] = BACKGROUND
                    continue
                next_id += 1
                instances[sel] = next_id
        return semantic, densify_instance_map(instances)


@dataclass
class PipelineConfig:
    variant: str = "inpaint_then_segment"   # or "segment_incomplete"
    stage1: GeneratorState | None = None    # guidance-free inpainter
    guided: GeneratorState | None = None
    segmenter: SegmenterInterface | None = None
    num_classes: int = 4

    def validate(self) -> None:
        if self.variant not in ("inpaint_then_segment", "segment_incomplete"):
            raise PipelineError(f"unknown pipeline variant {self.variant!r}")
        if self.guided is None or self.segmenter is None:
            raise PipelineError("pipeline needs a guided model and a segmenter")
        if self.variant == "inpaint_then_segment" and self.stage1 is None:
            raise PipelineError("inpaint_then_segment needs a stage-1 inpainter")
        if self.variant == "segment_incomplete" and not getattr(
            self.segmenter, "handles_incomplete_input", False
        ):
            raise PipelineError("segmenter cannot handle incomplete input")


def _segment(segmenter, image, mask, num_classes):
    semantic, instances = segmenter(image, mask)
    semantic = np.asarray(semantic, dtype=np.int32)
    instances = densify_instance_map(np.asarray(instances, dtype=np.int32))
    h, w = image.shape[1], image.shape[2]
    if semantic.shape != (h, w) or instances.shape != (h, w):
        raise PipelineError(
            f"segmenter output shape {semantic.shape} does not match input {h}x{w}"
        )
    if semantic.min() < 0 or semantic.max() >= num_classes:
        raise PipelineError("segmenter produced class indices outside [0, K)")
    if np.any((instances > 0) & (semantic == BACKGROUND)):
        raise PipelineError("segmenter assigned instances to background pixels")
    return semantic, instances


def auto_complete(
    image: np.ndarray, mask: np.ndarray, cfg: PipelineConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Standard inpainting without user guidance.

    Returns (completed image, predicted semantic, predicted instances).
    """
    cfg.validate()
    img = np.asarray(image, dtype=np.float32)
    msk = np.asarray(mask)
    if msk.shape != img.shape[1:]:
        raise ValueError(f"mask shape {msk.shape} does not match image {img.shape[1:]}")
    k = cfg.num_classes
    if cfg.variant == "inpaint_then_segment":
        # Zero block shaped to whatever guidance width stage 1 was trained with.
        stage1_guidance = np.zeros(
            (cfg.stage1.config.guidance_channels, img.shape[1], img.shape[2]), np.float32
        )
        initial = complete(cfg.stage1, img, msk, stage1_guidance)
        semantic, instances = _segment(cfg.segmenter, initial, None, k)
    else:
        masked = img * (msk == 0)
        semantic, instances = _segment(cfg.segmenter, masked, msk, k)
    guidance = encode_panoptic(semantic, instances, k)
    out = complete(cfg.guided, img, msk, guidance)
    return out, semantic, instances


@dataclass
class EditResult:
    mask: np.ndarray            # hole to complete
    guidance: GuidanceMap       # encoded from the edited maps
    semantic: np.ndarray        # edited maps, for export / chaining
    instances: np.ndarray


def _edit_params(params: ObjectMaskParams | None) -> ObjectMaskParams:
    # Editing holes are deterministic: dilate only, no jitter or strokes.
    if params is not None:
        return params
    return ObjectMaskParams(jitter=0, stroke_union_prob=0.0)


def remove_instance(
    semantic: np.ndarray,
    instances: np.ndarray,
    num_classes: int,
    instance_id: int,
    params: ObjectMaskParams | None = None,
    seed: int = 0,
) -> EditResult:
    """Relabel an instance to background and return the hole + guidance."""
    sem = np.asarray(semantic, dtype=np.int32).copy()
    inst = np.asarray(instances, dtype=np.int32).copy()
    sel = inst == instance_id
    if instance_id <= 0 or not sel.any():
        raise ValueError(f"instance id {instance_id} not present")
    h, w = sem.shape
    hole = object_mask(sel, h, w, seed=seed, params=_edit_params(params))
    sem[sel] = BACKGROUND
    inst[sel] = 0
    inst = densify_instance_map(inst)
    return EditResult(
        mask=hole,
        guidance=encode_panoptic(sem, inst, num_classes),
        semantic=sem,
        instances=inst,
    )


def insert_instance(
    semantic: np.ndarray,
    instances: np.ndarray,
    num_classes: int,
    stencil: np.ndarray,
    class_index: int,
    position: tuple[int, int],
    params: ObjectMaskParams | None = None,
    seed: int = 0,
) -> EditResult:
    """Paint a new instance (occluding prior content) under a stencil."""
    sem = np.asarray(semantic, dtype=np.int32).copy()
    inst = np.asarray(instances, dtype=np.int32).copy()
    sten = np.asarray(stencil, dtype=bool)
    if not 0 <= class_index < num_classes:
        raise ValueError(f"class_index {class_index} out of range [0, {num_classes})")
    if class_index == BACKGROUND:
        raise ValueError("cannot insert a background-class instance")
    top, left = position
    h, w = sem.shape
    sh, sw = sten.shape
    if top < 0 or left < 0 or top + sh > h or left + sw > w:
        raise ValueError(f"stencil {sh}x{sw} at {position} does not fit in {h}x{w}")
    if not sten.any():
        raise ValueError("stencil is empty")
    placed = np.zeros((h, w), dtype=bool)
    placed[top : top + sh, left : left + sw] = sten
    new_id = int(inst.max()) + 1
    sem[placed] = class_index
    inst[placed] = new_id
    inst = densify_instance_map(inst)  # prior instances may be fully occluded
    hole = object_mask(placed, h, w, seed=seed, params=_edit_params(params))
    return EditResult(
        mask=hole,
        guidance=encode_panoptic(sem, inst, num_classes),
        semantic=sem,
        instances=inst,
    )


def replace_instance(
    semantic: np.ndarray,
    instances: np.ndarray,
    num_classes: int,
    instance_id: int,
    new_class_index: int,
    params: ObjectMaskParams | None = None,
    seed: int = 0,
) -> EditResult:
    """Change an instance's class keeping its shape; hole covers the shape.

    With new_class_index equal to the old class this is the
    anonymization mode: same guidance, re-synthesized pixels.
    """
    sem = np.asarray(semantic, dtype=np.int32).copy()
    inst = np.asarray(instances, dtype=np.int32).copy()
    sel = inst == instance_id
    if instance_id <= 0 or not sel.any():
        raise ValueError(f"instance id {instance_id} not present")
    if not 0 <= new_class_index < num_classes:
        raise ValueError(f"class_index {new_class_index} out of range [0, {num_classes})")
    if new_class_index == BACKGROUND:
        raise ValueError("use remove_instance to relabel to background")
    h, w = sem.shape
    sem[sel] = new_class_index
    hole = object_mask(sel, h, w, seed=seed, params=_edit_params(params))
    return EditResult(
        mask=hole,
        guidance=encode_panoptic(sem, inst, num_classes),
        semantic=sem,
        instances=inst,
    )
