"""Alternating generator/discriminator optimization.

Each step runs a discriminator phase (generator forwarded without
gradients, fake crops taken at the same grid as the real crops) and a
generator phase (adversarial terms on fakes plus the perceptual loss).
All randomness derives from (config.seed, step, element), so resuming
from a checkpoint is bitwise-equivalent to an uninterrupted run.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import checkpoint as ckpt
from .discriminators import (
    MEMBER_NAMES,
    CropBatch,
    DiscriminatorEnsemble,
    FrozenVisionEncoder,
    build_ensemble,
    create_frozen_encoder,
)
from .errors import NumericError, TrainingError, ValidationError
from .generator import GeneratorConfig, GeneratorState, complete_torch, init_generator
from .guidance import encode_guidance, guidance_channel_count
from .losses import (
    LossReport,
    LossWeights,
    adv_d_loss,
    adv_g_loss,
    create_perceptual_extractor,
    perceptual_loss,
    r1_penalty,
)
from .masks import (
    ObjectMaskParams,
    StrokeMaskParams,
    object_mask,
    random_stroke_mask,
    stroke_mask_overlapping,
)
from .objectalign import (
    CropConfig,
    CropGrid,
    ObjectCrop,
    crop_align,
    crop_grid,
    instance_bbox,
    resample_continuous,
    sample_overlapping_instance,
)
from .scenes import PanopticScene, densify_instance_map, flip_scene

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 100
    batch_size: int = 8
    lr: float = 1e-3
    beta1: float = 0.0
    beta2: float = 0.99
    adam_eps: float = 1e-8
    seed: int = 0
    image_size: int = 64
    num_classes: int = 4
    guidance_kind: str = "panoptic"       # edge | semantic | panoptic | none
    members: tuple[str, ...] = MEMBER_NAMES
    rec_weight: float = 1.0
    adv_weights: dict = field(default_factory=dict)
    r1_gamma: float = 0.0
    mask_scheme: str = "stroke"           # stroke | object | none
    require_mask_instance_overlap: bool = False
    crop_size: int = 64
    crop_margin: float = 0.1
    min_instance_area: int = 16
    flip_prob: float = 0.5
    gen_base_width: int = 32
    gen_levels: int = 4
    gen_max_width: int = 128
    disc_base_width: int = 32
    disc_levels: int = 4
    disc_max_width: int = 128
    frozen_seed: int = 7
    perceptual_seed: int = 1234
    perceptual_kind: str = "high"
    checkpoint_every: int = 0             # 0: final checkpoint only
    log_every: int = 1

    def validate(self) -> None:
        if self.lr <= 0:
            raise ValidationError("lr must be > 0")
        if self.batch_size < 1 or self.steps < 1:
            raise ValidationError("batch_size and steps must be >= 1")
        if self.image_size % 2 ** (self.gen_levels - 1):
            raise ValidationError("image_size must divide the generator stride")
        if self.image_size % 2**self.disc_levels:
            raise ValidationError("image_size must divide the discriminator stride")
        if self.crop_size % 2**self.disc_levels:
            raise ValidationError("crop_size must divide the discriminator stride")
        unknown = set(self.members) - set(MEMBER_NAMES)
        if unknown:
            raise ValidationError(f"unknown members {sorted(unknown)}")
        if self.mask_scheme not in ("stroke", "object", "none"):
            raise ValidationError(f"unknown mask scheme {self.mask_scheme!r}")

    def weights(self) -> LossWeights:
        return LossWeights(rec=self.rec_weight, adv=dict(self.adv_weights),
                           r1_gamma=self.r1_gamma)

    def guidance_channels(self) -> int:
        return guidance_channel_count(self.guidance_kind, self.num_classes)

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(
            base_width=self.gen_base_width,
            levels=self.gen_levels,
            guidance_channels=self.guidance_channels(),
            max_width=self.gen_max_width,
        )

    def crop_config(self) -> CropConfig:
        return CropConfig(size=self.crop_size, margin=self.crop_margin)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["members"] = list(self.members)
        return d

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        d["members"] = tuple(d.get("members", MEMBER_NAMES))
        return TrainConfig(**d)


@dataclass
class BatchElement:
    image: np.ndarray
    mask: np.ndarray
    semantic: np.ndarray
    instances: np.ndarray
    instance_id: int | None = None
    grid: CropGrid | None = None
    crop_real: ObjectCrop | None = None


@dataclass
class Batch:
    images: torch.Tensor       # (B, 3, H, W)
    masks: torch.Tensor        # (B, 1, H, W)
    guidance: torch.Tensor     # (B, C_g, H, W)
    elements: list[BatchElement]
    crop_index: list[int]
    crop_grids: list[CropGrid]
    real_crops: CropBatch | None

    @property
    def crop_skip_rate(self) -> float:
        return 1.0 - len(self.crop_index) / len(self.elements)


@dataclass
class TrainState:
    generator: GeneratorState
    ensemble: DiscriminatorEnsemble
    frozen_encoder: FrozenVisionEncoder
    perceptual: torch.nn.Module
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    config: TrainConfig
    step: int = 0


def init_train_state(config: TrainConfig) -> TrainState:
    config.validate()
    torch.manual_seed(config.seed)
    generator = init_generator(config.seed * 1000003 + 11, config.generator_config())
    frozen = create_frozen_encoder(seed=config.frozen_seed, input_size=config.image_size)
    perceptual = create_perceptual_extractor(
        seed=config.perceptual_seed, kind=config.perceptual_kind
    )
    ensemble = build_ensemble(
        seed=config.seed,
        image_size=config.image_size,
        guidance_channels=config.guidance_channels(),
        members=config.members,
        crop_config=config.crop_config(),
        frozen=frozen,
        base_width=config.disc_base_width,
        levels=config.disc_levels,
        max_width=config.disc_max_width,
    )
    opt_g = torch.optim.Adam(
        generator.module.parameters(), lr=config.lr,
        betas=(config.beta1, config.beta2), eps=config.adam_eps,
    )
    opt_d = torch.optim.Adam(
        list(ensemble.trainable_parameters()), lr=config.lr,
        betas=(config.beta1, config.beta2), eps=config.adam_eps,
    )
    return TrainState(
        generator=generator, ensemble=ensemble, frozen_encoder=frozen,
        perceptual=perceptual, opt_g=opt_g, opt_d=opt_d, config=config,
    )


def _crop_window(scene: PanopticScene, rng: np.random.Generator, size: int) -> PanopticScene:
    h, w = scene.semantic.shape
    if (h, w) == (size, size):
        return scene
    if h < size or w < size:
        raise ValidationError(f"scene {h}x{w} smaller than training size {size}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    inst = densify_instance_map(scene.instances[top : top + size, left : left + size])
    return PanopticScene(
        image=scene.image[:, top : top + size, left : left + size].copy(),
        semantic=scene.semantic[top : top + size, left : left + size].copy(),
        instances=inst,
        annotations=[],
        num_classes=scene.num_classes,
        seed=scene.seed,
    )


def _element_mask(rng, semantic_shape, instances, config: TrainConfig) -> np.ndarray:
    h, w = semantic_shape
    if config.mask_scheme == "none":
        return np.zeros((h, w), dtype=np.uint8)
    if config.mask_scheme == "object":
        ids = np.unique(instances)
        ids = ids[ids > 0]
        if ids.size:
            target = int(ids[int(rng.integers(ids.size))])
            return object_mask(
                instances == target, h, w, seed=int(rng.integers(2**31)),
                params=ObjectMaskParams(),
            )
        # No instances to shape the hole from: fall back to strokes.
    seed = int(rng.integers(2**31))
    if config.require_mask_instance_overlap:
        return stroke_mask_overlapping(seed, h, w, instances, StrokeMaskParams())
    return random_stroke_mask(seed, h, w, StrokeMaskParams())


def build_batch(scenes: Sequence[PanopticScene], seeds: Sequence, config: TrainConfig) -> Batch:
    """Assemble one training batch; fully determined by the seeds."""
    if not scenes:
        raise ValidationError("no scenes to train on")
    elements = []
    guidance_stack = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        scene = scenes[int(rng.integers(len(scenes)))]
        if config.flip_prob > 0 and rng.uniform() < config.flip_prob:
            scene = flip_scene(scene)
        scene = _crop_window(scene, rng, config.image_size)
        mask = _element_mask(rng, scene.semantic.shape, scene.instances, config)
        g = encode_guidance(
            config.guidance_kind, scene.image, scene.semantic, scene.instances,
            config.num_classes,
        )
        element = BatchElement(
            image=scene.image, mask=mask,
            semantic=scene.semantic, instances=scene.instances,
        )
        inst_id = sample_overlapping_instance(
            scene.instances, mask, int(rng.integers(2**31)), config.min_instance_area
        )
        if inst_id is not None:
            bbox = instance_bbox(scene.instances, inst_id)
            element.instance_id = inst_id
            element.grid = crop_grid(bbox, *scene.semantic.shape, config.crop_config())
            element.crop_real = crop_align(
                scene.image, mask, g, scene.instances, inst_id, bbox, config.crop_config()
            )
        elements.append(element)
        guidance_stack.append(g.channels)

    images = torch.from_numpy(np.stack([e.image for e in elements])).float()
    masks = torch.from_numpy(np.stack([e.mask for e in elements]))[:, None].float()
    guidance = torch.from_numpy(np.stack(guidance_stack)).float()
    crop_index = [i for i, e in enumerate(elements) if e.crop_real is not None]
    crop_grids = [elements[i].grid for i in crop_index]
    real_crops = (
        CropBatch.from_crops([elements[i].crop_real for i in crop_index])
        if crop_index else None
    )
    return Batch(
        images=images, masks=masks, guidance=guidance, elements=elements,
        crop_index=crop_index, crop_grids=crop_grids, real_crops=real_crops,
    )


def _fake_crop_batch(fake: torch.Tensor, batch: Batch) -> CropBatch | None:
    """Crop the fake composite at the identical grids as the real crops.

    Discrete parts (mask, guidance, shape) are shared with the real
    crops; only the image channels differ. Differentiable in `fake`.
    """
    if batch.real_crops is None:
        return None
    images = torch.stack(
        [resample_continuous(fake[i], g) for i, g in zip(batch.crop_index, batch.crop_grids)]
    )
    rc = batch.real_crops
    return CropBatch(image=images, mask=rc.mask, guidance=rc.guidance, shape=rc.shape)


def _check_finite(value: torch.Tensor, term: str) -> None:
    if not torch.isfinite(value).all():
        raise TrainingError(f"non-finite loss term: {term}")


def discriminator_step(state: TrainState, batch: Batch) -> LossReport:
    """Phase 1: update discriminator parameters only."""
    weights = state.config.weights()
    with torch.no_grad():
        fake = complete_torch(state.generator, batch.images, batch.masks, batch.guidance)
        fake_crops = _fake_crop_batch(fake, batch)
    report = LossReport(object_terms_skipped=batch.real_crops is None)
    total = None
    real_images = batch.images
    if weights.r1_gamma > 0:
        real_images = batch.images.detach().requires_grad_(True)
    for name in state.ensemble.enabled_names():
        is_object = name.startswith("object")
        if is_object and batch.real_crops is None:
            continue
        if is_object:
            real_logit = state.ensemble.run(name, crop=batch.real_crops)
            fake_logit = state.ensemble.run(name, crop=fake_crops)
        else:
            real_logit = state.ensemble.run(
                name, image=real_images, mask=batch.masks, guidance=batch.guidance
            )
            fake_logit = state.ensemble.run(
                name, image=fake, mask=batch.masks, guidance=batch.guidance
            )
        try:
            term = adv_d_loss(real_logit, fake_logit)
        except NumericError as exc:
            raise TrainingError(f"non-finite loss term: d_adv/{name}") from exc
        _check_finite(term, f"d_adv/{name}")
        w = weights.adv_weight(name)
        weighted = w * term
        if name == "image_d" and weights.r1_gamma > 0:
            weighted = weighted + weights.r1_gamma * r1_penalty(real_logit, real_images)
        report.d_real[name] = float(real_logit.detach().mean())
        report.d_fake[name] = float(fake_logit.detach().mean())
        report.d_adv[name] = float(weighted.detach())
        total = weighted if total is None else total + weighted
    if total is not None:
        state.opt_d.zero_grad(set_to_none=True)
        total.backward()
        state.opt_d.step()
        report.d_total = float(total.detach())
    return report


def generator_step(state: TrainState, batch: Batch) -> LossReport:
    """Phase 2: update generator parameters only."""
    weights = state.config.weights()
    fake = complete_torch(state.generator, batch.images, batch.masks, batch.guidance)
    fake_crops = _fake_crop_batch(fake, batch)
    report = LossReport(object_terms_skipped=batch.real_crops is None)
    total = None
    for name in state.ensemble.enabled_names():
        is_object = name.startswith("object")
        if is_object and batch.real_crops is None:
            continue
        if is_object:
            fake_logit = state.ensemble.run(name, crop=fake_crops)
        else:
            fake_logit = state.ensemble.run(
                name, image=fake, mask=batch.masks, guidance=batch.guidance
            )
        try:
            term = adv_g_loss(fake_logit)
        except NumericError as exc:
            raise TrainingError(f"non-finite loss term: g_adv/{name}") from exc
        _check_finite(term, f"g_adv/{name}")
        weighted = weights.adv_weight(name) * term
        report.g_adv[name] = float(weighted.detach())
        total = weighted if total is None else total + weighted
    if weights.rec > 0:
        rec = perceptual_loss(fake, batch.images, state.perceptual)
        _check_finite(rec, "perceptual")
        report.perceptual = float(rec.detach())
        weighted = weights.rec * rec
        total = weighted if total is None else total + weighted
    if total is not None:
        state.opt_g.zero_grad(set_to_none=True)
        total.backward()
        state.opt_g.step()
        report.g_total = float(total.detach())
    return report


def train_step(state: TrainState, batch: Batch) -> tuple[TrainState, LossReport]:
    """One alternating optimization step; mutates and returns the state."""
    d_report = discriminator_step(state, batch)
    g_report = generator_step(state, batch)
    report = LossReport(
        d_real=d_report.d_real, d_fake=d_report.d_fake, d_adv=d_report.d_adv,
        g_adv=g_report.g_adv, perceptual=g_report.perceptual,
        g_total=g_report.g_total, d_total=d_report.d_total,
        object_terms_skipped=batch.real_crops is None,
    )
    state.step += 1
    state.generator.step = state.step
    return state, report


def step_seeds(config: TrainConfig, step: int) -> list[tuple]:
    return [(config.seed, step, i) for i in range(config.batch_size)]


def save_train_checkpoint(path, state: TrainState) -> Path:
    config = {
        "kind": "train",
        "train": state.config.to_dict(),
        "generator": asdict(state.generator.config),
    }
    arrays = ckpt.module_arrays(state.generator.module, "generator")
    for name in MEMBER_NAMES:
        member = state.ensemble.member(name)
        if member is not None:
            arrays.update(ckpt.module_arrays(member, f"disc/{name}"))
    arrays.update(ckpt.module_arrays(state.frozen_encoder.module, "frozen"))
    arrays.update(ckpt.module_arrays(state.perceptual, "perceptual"))
    arrays.update(ckpt.optimizer_arrays(state.opt_g, "opt_g"))
    arrays.update(ckpt.optimizer_arrays(state.opt_d, "opt_d"))
    return ckpt.save_archive(path, config, arrays, state.step)


def load_train_state(path) -> TrainState:
    config_dict, arrays, step = ckpt.load_archive(path)
    if config_dict.get("kind") != "train":
        raise ValidationError(f"{path} is not a training checkpoint")
    config = TrainConfig.from_dict(config_dict["train"])
    state = init_train_state(config)
    ckpt.load_module_arrays(state.generator.module, arrays, "generator")
    for name in MEMBER_NAMES:
        member = state.ensemble.member(name)
        if member is not None:
            ckpt.load_module_arrays(member, arrays, f"disc/{name}")
    ckpt.load_module_arrays(state.frozen_encoder.module, arrays, "frozen")
    ckpt.load_module_arrays(state.perceptual, arrays, "perceptual")
    ckpt.load_optimizer_arrays(state.opt_g, arrays, "opt_g")
    ckpt.load_optimizer_arrays(state.opt_d, arrays, "opt_d")
    state.step = step
    state.generator.step = step
    return state


def train(
    config: TrainConfig,
    scenes: Sequence[PanopticScene],
    out_dir,
    resume_from=None,
) -> Path:
    """Run the training loop; returns the final checkpoint path.

    Writes a JSON-lines log (one line per step) and periodic checkpoints
    under out_dir. With resume_from, continues an earlier run to
    config.steps; per-step seeding makes the result identical to an
    uninterrupted run.
    """
    config.validate()
    scenes = list(scenes)
    if not scenes:
        raise ValidationError("training dataset is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if resume_from is not None:
        state = load_train_state(resume_from)
        state = _rewire_config(state, config)
    else:
        state = init_train_state(config)

    log_path = out_dir / "train_log.jsonl"
    mode = "a" if resume_from is not None else "w"
    final_path = out_dir / "final.ckpt"
    with open(log_path, mode) as log:
        try:
            for step in range(state.step, config.steps):
                batch = build_batch(scenes, step_seeds(config, step), config)
                state, report = train_step(state, batch)
                if config.log_every and state.step % config.log_every == 0:
                    line = {"step": state.step, **report.as_dict(),
                            "crop_skip_rate": batch.crop_skip_rate}
                    log.write(json.dumps(line) + "\n")
                if config.checkpoint_every and state.step % config.checkpoint_every == 0:
                    save_train_checkpoint(out_dir / f"step-{state.step:06d}.ckpt", state)
        except KeyboardInterrupt:
            logger.warning("interrupted at step %d; writing checkpoint", state.step)
            save_train_checkpoint(final_path, state)
            raise
    save_train_checkpoint(final_path, state)
    return final_path


def _rewire_config(state: TrainState, config: TrainConfig) -> TrainState:
    """Continue a loaded state under `config` (e.g. more steps).

    Architecture-determining fields must match the checkpoint.
    """
    old, new = state.config, config
    arch_fields = (
        "image_size", "num_classes", "guidance_kind", "members", "crop_size",
        "gen_base_width", "gen_levels", "gen_max_width",
        "disc_base_width", "disc_levels", "disc_max_width",
    )
    for name in arch_fields:
        if getattr(old, name) != getattr(new, name):
            raise ValidationError(
                f"cannot resume: config field {name} differs "
                f"({getattr(old, name)!r} != {getattr(new, name)!r})"
            )
    state = copy.copy(state)
    state.config = config
    return state
