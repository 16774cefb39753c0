"""Synthetic panoptic scenes and dataset storage.

A scene bundles an RGB image in [-1, 1] with a semantic class map, an
instance id map, and per-instance annotations. Scenes are generated
deterministically from (seed, config) by painting textured shapes
back-to-front, so the instance map reflects visibility. A small
on-disk format (PNG maps + JSON manifest) round-trips scenes exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

from .errors import ConfigurationError, LoadError, StorageError, ValidationError

BACKGROUND_CLASS = 0
MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1

# Base palette: distinct colors per class index, values in [-1, 1].
# Kept well separated so the toy color-quantizing segmenter can invert them.
_PALETTE = np.array(
    [
        (-0.60, -0.55, -0.45),  # 0: background
        (0.75, -0.45, -0.45),   # 1
        (-0.45, 0.70, -0.40),   # 2
        (-0.40, -0.40, 0.80),   # 3
        (0.75, 0.70, -0.45),    # 4
        (0.75, -0.40, 0.75),    # 5
        (-0.45, 0.70, 0.75),    # 6
        (0.80, 0.75, 0.70),     # 7
    ],
    dtype=np.float32,
)

DEFAULT_SHAPES = ("disc", "rect", "triangle", "person")


def class_palette(num_classes: int) -> np.ndarray:
    """Colors for class indices 0..K-1, cycling the base palette."""
    idx = np.arange(num_classes) % len(_PALETTE)
    return _PALETTE[idx].copy()


@dataclass(frozen=True)
class SceneConfig:
    height: int = 64
    width: int = 64
    num_classes: int = 4
    min_instances: int = 1
    max_instances: int = 5
    shapes: tuple[str, ...] = DEFAULT_SHAPES
    shading: float = 0.05

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigurationError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.height < 16 or self.width < 16:
            raise ConfigurationError(f"scene size must be >= 16, got {self.height}x{self.width}")
        if self.min_instances < 0 or self.max_instances < self.min_instances:
            raise ConfigurationError("instance count range is empty")
        unknown = set(self.shapes) - set(DEFAULT_SHAPES)
        if unknown:
            raise ConfigurationError(f"unknown shapes: {sorted(unknown)}")


@dataclass(frozen=True)
class InstanceAnnotation:
    id: int
    class_index: int
    area: int
    bbox: tuple[int, int, int, int]  # (x0, y0, x1, y1), half-open


@dataclass
class PanopticScene:
    image: np.ndarray       # float32 (3, H, W) in [-1, 1]
    semantic: np.ndarray    # int32 (H, W), values < num_classes
    instances: np.ndarray   # int32 (H, W), ids 0..n dense
    annotations: list[InstanceAnnotation]
    num_classes: int
    seed: int = 0

    @property
    def height(self) -> int:
        return int(self.image.shape[1])

    @property
    def width(self) -> int:
        return int(self.image.shape[2])


@dataclass(frozen=True)
class ManifestItem:
    image: str
    semantic: str
    instance: str
    annotations: str


@dataclass
class DatasetManifest:
    root: Path
    num_classes: int
    class_names: list[str]
    items: list[ManifestItem] = field(default_factory=list)


def rgb_to_u8(image: np.ndarray) -> np.ndarray:
    """Map float image in [-1, 1] to uint8 HxWx3."""
    arr = np.asarray(image, dtype=np.float64)
    u8 = np.round((arr + 1.0) / 2.0 * 255.0)
    return np.clip(u8, 0, 255).astype(np.uint8).transpose(1, 2, 0)


def u8_to_rgb(arr: np.ndarray) -> np.ndarray:
    """Inverse of rgb_to_u8: uint8 HxWx3 to float32 (3, H, W) in [-1, 1]."""
    f = arr.astype(np.float32) / 255.0 * 2.0 - 1.0
    return f.transpose(2, 0, 1)


def scan_annotations(semantic: np.ndarray, instances: np.ndarray) -> list[InstanceAnnotation]:
    """Rebuild annotations by a full scan of the instance map.

    Raises ValidationError if ids are not dense 1..n, an instance is
    empty, or an instance spans multiple semantic classes.
    """
    ids = np.unique(instances)
    ids = ids[ids > 0]
    n = int(ids.max()) if ids.size else 0
    if not np.array_equal(ids, np.arange(1, n + 1)):
        raise ValidationError(f"instance ids must be dense 1..n, got {ids.tolist()}")
    annotations = []
    for inst_id in range(1, n + 1):
        ys, xs = np.nonzero(instances == inst_id)
        if ys.size == 0:
            raise ValidationError(f"instance {inst_id} has no pixels")
        classes = np.unique(semantic[ys, xs])
        if classes.size != 1:
            raise ValidationError(f"instance {inst_id} spans classes {classes.tolist()}")
        bbox = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
        annotations.append(
            InstanceAnnotation(
                id=inst_id, class_index=int(classes[0]), area=int(ys.size), bbox=bbox
            )
        )
    return annotations


def validate_scene(scene: PanopticScene) -> None:
    """Check every PanopticScene invariant; raise ValidationError on failure."""
    img, sem, inst = scene.image, scene.semantic, scene.instances
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValidationError(f"image must be (3, H, W), got {img.shape}")
    h, w = img.shape[1], img.shape[2]
    if h < 16 or w < 16:
        raise ValidationError(f"image must be at least 16x16, got {h}x{w}")
    if sem.shape != (h, w) or inst.shape != (h, w):
        raise ValidationError("semantic/instance shape mismatch with image")
    if not np.all(np.isfinite(img)):
        raise ValidationError("image contains non-finite values")
    if img.min() < -1.0 or img.max() > 1.0:
        raise ValidationError("image values outside [-1, 1]")
    if sem.min() < 0 or sem.max() >= scene.num_classes:
        raise ValidationError(f"semantic indices must be in [0, {scene.num_classes})")
    rescanned = scan_annotations(sem, inst)
    if rescanned != scene.annotations:
        raise ValidationError("annotations do not match a rescan of the instance map")


def densify_instance_map(instances: np.ndarray) -> np.ndarray:
    """Relabel positive ids to consecutive 1..n, preserving first-seen order."""
    out = np.zeros_like(instances)
    next_id = 1
    for raw in np.unique(instances):
        if raw <= 0:
            continue
        out[instances == raw] = next_id
        next_id += 1
    return out


def _disc_stencil(h, w, cy, cx, r):
    yy, xx = np.mgrid[0:h, 0:w]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r**2


def _rect_stencil(h, w, cy, cx, ry, rx):
    yy, xx = np.mgrid[0:h, 0:w]
    return (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)


def _triangle_stencil(h, w, cy, cx, r):
    # Upright isoceles triangle: apex at cy-r, base at cy+r.
    yy, xx = np.mgrid[0:h, 0:w]
    t = (yy - (cy - r)) / max(2.0 * r, 1.0)  # 0 at apex, 1 at base
    half_width = np.clip(t, 0.0, 1.0) * r
    return (yy >= cy - r) & (yy <= cy + r) & (np.abs(xx - cx) <= half_width)


def _person_stencil(h, w, cy, cx, r):
    # Two-blob compound: disc head over an elliptical body; non-convex.
    head_r = max(r * 0.45, 1.5)
    head = _disc_stencil(h, w, cy - r * 0.8, cx, head_r)
    yy, xx = np.mgrid[0:h, 0:w]
    body = ((yy - (cy + r * 0.35)) / max(r * 0.95, 1.0)) ** 2 + (
        (xx - cx) / max(r * 0.55, 1.0)
    ) ** 2 <= 1.0
    return head | body


_STENCILS = {
    "disc": lambda h, w, cy, cx, r, rng: _disc_stencil(h, w, cy, cx, r),
    "rect": lambda h, w, cy, cx, r, rng: _rect_stencil(
        h, w, cy, cx, max(int(r * rng.uniform(0.6, 1.2)), 2), max(int(r * rng.uniform(0.6, 1.2)), 2)
    ),
    "triangle": lambda h, w, cy, cx, r, rng: _triangle_stencil(h, w, cy, cx, r),
    "person": lambda h, w, cy, cx, r, rng: _person_stencil(h, w, cy, cx, r),
}


def _paint_scene(seed: int, attempt: int, config: SceneConfig):
    rng = np.random.default_rng((seed, attempt, 0xC0DE))
    h, w = config.height, config.width
    palette = class_palette(config.num_classes)

    # Background: flat class-0 color with a gentle vertical shade.
    image = np.empty((3, h, w), dtype=np.float32)
    image[:] = palette[BACKGROUND_CLASS][:, None, None]
    shade = (np.linspace(-1.0, 1.0, h, dtype=np.float32) * config.shading)[None, :, None]
    image = image + shade
    semantic = np.full((h, w), BACKGROUND_CLASS, dtype=np.int32)
    instances = np.zeros((h, w), dtype=np.int32)

    n = int(rng.integers(config.min_instances, config.max_instances + 1))
    next_id = 0
    for _ in range(n):
        kind = config.shapes[int(rng.integers(len(config.shapes)))]
        cls = int(rng.integers(1, config.num_classes))
        min_dim = min(h, w)
        r = float(rng.uniform(0.06, 0.22)) * min_dim
        cy = float(rng.uniform(0.15, 0.85)) * h
        cx = float(rng.uniform(0.15, 0.85)) * w
        stencil = _STENCILS[kind](h, w, cy, cx, r, rng)
        if not stencil.any():
            continue
        next_id += 1
        color = palette[cls] + rng.uniform(-config.shading, config.shading, size=3).astype(
            np.float32
        )
        image[:, stencil] = color[:, None]
        # Per-instance horizontal shade keeps texture non-constant inside shapes.
        cols = np.nonzero(stencil)[1]
        span = max(int(cols.max()) - int(cols.min()), 1)
        local = (cols - cols.min()) / span * 2.0 - 1.0
        image[:, stencil] += (local * config.shading * 0.5).astype(np.float32)[None, :]
        semantic[stencil] = cls
        instances[stencil] = next_id
    return image, semantic, instances


def generate_scene(seed: int, config: SceneConfig | None = None) -> PanopticScene:
    """Deterministically synthesize a toy panoptic scene.

    Shapes are painted back-to-front: each new instance occludes prior
    ones, and fully occluded instances are dropped before ids are
    re-densified. Retries with derived seeds until at least
    config.min_instances instances remain visible.
    """
    config = config or SceneConfig()
    config.validate()
    for attempt in range(64):
        image, semantic, instances = _paint_scene(seed, attempt, config)
        instances = densify_instance_map(instances)
        visible = int(instances.max())
        if visible >= config.min_instances:
            break
    else:
        raise ConfigurationError(
            "could not place the requested minimum instances; relax the config"
        )

    # Snap to the 8-bit grid so the PNG round trip is exact.
    image = np.clip(image, -1.0, 1.0)
    image = u8_to_rgb(rgb_to_u8(image))
    annotations = scan_annotations(semantic, instances)
    scene = PanopticScene(
        image=image,
        semantic=semantic,
        instances=instances,
        annotations=annotations,
        num_classes=config.num_classes,
        seed=seed,
    )
    validate_scene(scene)
    return scene


def ingest_scene(
    image_u8: np.ndarray,
    semantic: np.ndarray,
    instances: np.ndarray,
    num_classes: int,
) -> PanopticScene:
    """Build a scene from externally produced maps.

    Sparse instance ids (as emitted by panoptic tools) are re-densified
    to 1..n; annotations are rebuilt by scan. Raises ValidationError if
    the maps cannot be made consistent.
    """
    dense = densify_instance_map(np.asarray(instances, dtype=np.int32))
    sem = np.asarray(semantic, dtype=np.int32)
    scene = PanopticScene(
        image=u8_to_rgb(np.asarray(image_u8, dtype=np.uint8)),
        semantic=sem,
        instances=dense,
        annotations=scan_annotations(sem, dense),
        num_classes=num_classes,
    )
    validate_scene(scene)
    return scene


def _default_class_names(num_classes: int) -> list[str]:
    names = ["background"]
    names += [f"class_{i}" for i in range(1, num_classes)]
    return names


def save_dataset(
    scenes: Sequence[PanopticScene],
    root: str | Path,
    class_names: list[str] | None = None,
) -> DatasetManifest:
    """Write scenes to `root` in the PNG+JSON dataset layout."""
    root = Path(root)
    if scenes:
        num_classes = scenes[0].num_classes
        if any(s.num_classes != num_classes for s in scenes):
            raise ValidationError("all scenes in a dataset must share num_classes")
    else:
        num_classes = 2
    names = class_names or _default_class_names(num_classes)
    if len(names) != num_classes:
        raise ValidationError(f"class_names must have length {num_classes}")

    try:
        root.mkdir(parents=True, exist_ok=True)
        items = []
        for i, scene in enumerate(scenes):
            stem = f"{i:06d}"
            item = ManifestItem(
                image=f"{stem}_img.png",
                semantic=f"{stem}_sem.png",
                instance=f"{stem}_inst.png",
                annotations=f"{stem}_ann.json",
            )
            Image.fromarray(rgb_to_u8(scene.image)).save(root / item.image)
            Image.fromarray(scene.semantic.astype(np.uint8)).save(root / item.semantic)
            Image.fromarray(scene.instances.astype(np.uint16)).save(root / item.instance)
            ann = [
                {"id": a.id, "class_index": a.class_index, "area": a.area, "bbox": list(a.bbox)}
                for a in scene.annotations
            ]
            (root / item.annotations).write_text(json.dumps(ann, indent=1))
            items.append(item)
        manifest = DatasetManifest(
            root=root, num_classes=num_classes, class_names=list(names), items=items
        )
        payload = {
            "version": MANIFEST_VERSION,
            "K": manifest.num_classes,
            "class_names": manifest.class_names,
            "items": [vars(it) for it in manifest.items],
        }
        (root / MANIFEST_NAME).write_text(json.dumps(payload, indent=1))
    except OSError as exc:
        raise StorageError(f"failed to write dataset under {root}: {exc}") from exc
    return manifest


def read_manifest(manifest_path: str | Path) -> DatasetManifest:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_NAME
    try:
        payload = json.loads(manifest_path.read_text())
    except OSError as exc:
        raise LoadError(f"cannot read manifest {manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise LoadError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc
    items = [ManifestItem(**it) for it in payload["items"]]
    return DatasetManifest(
        root=manifest_path.parent,
        num_classes=int(payload["K"]),
        class_names=list(payload["class_names"]),
        items=items,
    )


def load_dataset(manifest_path: str | Path) -> Iterator[PanopticScene]:
    """Yield scenes in manifest order, validating each against the invariants."""
    manifest = read_manifest(manifest_path)
    for item in manifest.items:
        paths = {name: manifest.root / getattr(item, name) for name in vars(item)}
        for name, p in paths.items():
            if not p.exists():
                raise LoadError(f"missing {name} file: {p}")
        image = np.array(Image.open(paths["image"]).convert("RGB"), dtype=np.uint8)
        semantic = np.array(Image.open(paths["semantic"]), dtype=np.int32)
        instances = np.array(Image.open(paths["instance"]), dtype=np.int32)
        ann_payload = json.loads(paths["annotations"].read_text())
        annotations = [
            InstanceAnnotation(
                id=int(a["id"]),
                class_index=int(a["class_index"]),
                area=int(a["area"]),
                bbox=tuple(int(v) for v in a["bbox"]),
            )
            for a in ann_payload
        ]
        scene = PanopticScene(
            image=u8_to_rgb(image),
            semantic=semantic,
            instances=instances,
            annotations=annotations,
            num_classes=manifest.num_classes,
        )
        validate_scene(scene)
        yield scene


def flip_scene(scene: PanopticScene) -> PanopticScene:
    """Horizontal flip of all maps jointly; annotations are rebuilt."""
    sem = scene.semantic[:, ::-1].copy()
    inst = scene.instances[:, ::-1].copy()
    return replace(
        scene,
        image=scene.image[:, :, ::-1].copy(),
        semantic=sem,
        instances=inst,
        annotations=scan_annotations(sem, inst),
    )
