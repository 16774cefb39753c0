import numpy as np
import pytest
import torch

from gclab.discriminators import (
    ConvDiscriminator,
    CropBatch,
    DiscriminatorConfig,
    SemanticDiscriminator,
    build_ensemble,
    create_frozen_encoder,
    d_image,
    d_object,
    d_object_semantic,
    d_semantic,
    param_checksum,
)
from gclab.generator import seeded_init_
from gclab.guidance import encode_panoptic
from gclab.objectalign import CropConfig, crop_align, instance_bbox


@pytest.fixture(scope="module")
def frozen():
    return create_frozen_encoder(seed=0, input_size=64)


@pytest.fixture(scope="module")
def ensemble(frozen):
    return build_ensemble(seed=0, image_size=64, guidance_channels=5,
                          crop_config=CropConfig(size=32), frozen=frozen,
                          base_width=16, max_width=64)


def random_inputs(batch, rng):
    image = rng.uniform(-1, 1, (batch, 3, 64, 64)).astype(np.float32)
    mask = (rng.uniform(size=(batch, 1, 64, 64)) < 0.3).astype(np.float32)
    guidance = rng.uniform(0, 1, (batch, 5, 64, 64)).astype(np.float32)
    return image, mask, guidance


def make_crop(scene, mask):
    g = encode_panoptic(scene.semantic, scene.instances, scene.num_classes)
    bbox = instance_bbox(scene.instances, 1)
    return crop_align(scene.image, mask, g, scene.instances, 1, bbox, CropConfig(size=32))


def test_d_image_batch_of_logits(ensemble):
    rng = np.random.default_rng(0)
    image, mask, guidance = random_inputs(5, rng)
    out = d_image(ensemble.image_d, image, mask, guidance)
    assert out.shape == (5,)
    assert np.isfinite(out).all()


def test_d_image_deterministic(ensemble):
    rng = np.random.default_rng(1)
    image, mask, guidance = random_inputs(3, rng)
    a = d_image(ensemble.image_d, image, mask, guidance)
    b = d_image(ensemble.image_d, image, mask, guidance)
    assert np.array_equal(a, b)


def test_d_image_hole_pixel_sensitivity(ensemble):
    """Finite differences: the logit responds to in-hole pixel changes."""
    rng = np.random.default_rng(2)
    image, mask, guidance = random_inputs(1, rng)
    base = d_image(ensemble.image_d, image, mask, guidance)[0]
    hole = np.argwhere(mask[0, 0] > 0)
    hits = 0
    for k in range(50):
        r, c = hole[int(rng.integers(len(hole)))]
        perturbed = image.copy()
        perturbed[0, :, r, c] += 0.05
        out = d_image(ensemble.image_d, perturbed, mask, guidance)[0]
        if abs(out - base) > 0:
            hits += 1
    assert hits >= 45  # >= 90% of 50 samples


def test_d_image_shape_mismatch(ensemble):
    rng = np.random.default_rng(3)
    image, mask, guidance = random_inputs(2, rng)
    with pytest.raises(ValueError):
        d_image(ensemble.image_d, image, mask[:, :, :32], guidance)
    with pytest.raises(ValueError):
        d_image(ensemble.image_d, image, mask, guidance[:, :3])


def test_d_semantic_logits_and_frozen_checksum(ensemble, frozen):
    rng = np.random.default_rng(4)
    image, mask, guidance = random_inputs(4, rng)
    before = frozen.checksum()
    out = d_semantic(ensemble.image_semantic_d, frozen, image, mask, guidance)
    assert out.shape == (4,)
    assert np.isfinite(out).all()

    # one optimization step on the member must never move the frozen branch
    member = ensemble.image_semantic_d
    opt = torch.optim.Adam(member.parameters(), lr=1e-2)
    x = torch.cat([torch.from_numpy(image), torch.from_numpy(mask),
                   torch.from_numpy(guidance)], dim=1)
    logit = member(x, frozen.embed(torch.from_numpy(image)))
    opt.zero_grad()
    logit.sum().backward()
    opt.step()
    assert frozen.checksum() == before


def test_d_semantic_zeroed_projection_equals_conv_only(ensemble, frozen):
    rng = np.random.default_rng(5)
    image, mask, guidance = random_inputs(2, rng)
    member = ensemble.image_semantic_d
    saved_w = member.proj.weight.detach().clone()
    saved_b = member.proj.bias.detach().clone()
    with torch.no_grad():
        member.proj.weight.zero_()
        member.proj.bias.zero_()
    x = torch.cat([torch.from_numpy(image), torch.from_numpy(mask),
                   torch.from_numpy(guidance)], dim=1)
    with torch.no_grad():
        zeroed = member(x, frozen.embed(torch.from_numpy(image)))
        conv_only = member.forward_conv_only(x)
    with torch.no_grad():
        member.proj.weight.copy_(saved_w)
        member.proj.bias.copy_(saved_b)
    assert torch.equal(zeroed, conv_only)


def test_d_semantic_guidance_swap_changes_logit(ensemble, frozen):
    rng = np.random.default_rng(6)
    hits = 0
    for _ in range(100):
        image, mask, guidance = random_inputs(1, rng)
        other = rng.uniform(0, 1, guidance.shape).astype(np.float32)
        a = d_semantic(ensemble.image_semantic_d, frozen, image, mask, guidance)[0]
        b = d_semantic(ensemble.image_semantic_d, frozen, image, mask, other)[0]
        if abs(a - b) > 0:
            hits += 1
    assert hits >= 90


def test_d_object_logits_and_determinism(ensemble, toy_scenes, center_mask):
    crops = [make_crop(s, center_mask) for s in toy_scenes[:3]]
    out = d_object(ensemble.object_d, crops)
    assert out.shape == (3,)
    assert np.isfinite(out).all()
    assert np.array_equal(out, d_object(ensemble.object_d, crops))


def test_d_object_consumes_shape_channel(toy_scenes, center_mask):
    """Zeroing I_c changes the logit for nearly every random init."""
    crop = make_crop(toy_scenes[0], center_mask)
    assert crop.shape_c.any()
    cfg = DiscriminatorConfig(in_channels=3 + 1 + 5 + 1, input_size=32,
                              base_width=8, max_width=32)
    hits = 0
    for seed in range(100):
        member = ConvDiscriminator(cfg)
        seeded_init_(member, seed)
        with_shape = d_object(member, crop)[0]
        blank = crop.__class__(**{**vars(crop), "shape_c": np.zeros_like(crop.shape_c)})
        without = d_object(member, blank)[0]
        if abs(with_shape - without) > 0:
            hits += 1
    assert hits >= 90


def test_d_object_resolution_mismatch(ensemble, toy_scenes, center_mask):
    g = encode_panoptic(toy_scenes[0].semantic, toy_scenes[0].instances, 4)
    bbox = instance_bbox(toy_scenes[0].instances, 1)
    wrong = crop_align(toy_scenes[0].image, center_mask, g, toy_scenes[0].instances,
                       1, bbox, CropConfig(size=16))
    with pytest.raises(ValueError):
        d_object(ensemble.object_d, wrong)


def test_d_object_semantic_logits_and_grad(ensemble, frozen, toy_scenes, center_mask):
    crops = [make_crop(s, center_mask) for s in toy_scenes[:2]]
    before = frozen.checksum()
    out = d_object_semantic(ensemble.object_semantic_d, frozen, crops)
    assert out.shape == (2,)
    assert np.isfinite(out).all()
    assert frozen.checksum() == before

    # finite differences on image_c pixels inside the instance shape
    crop = crops[0]
    inside = np.argwhere(crop.shape_c > 0)
    rng = np.random.default_rng(8)
    base = d_object_semantic(ensemble.object_semantic_d, frozen, crop)[0]
    hits = 0
    for _ in range(50):
        r, c = inside[int(rng.integers(len(inside)))]
        bumped = crop.__class__(**{**vars(crop), "image_c": crop.image_c.copy()})
        bumped.image_c[:, r, c] += 0.05
        out = d_object_semantic(ensemble.object_semantic_d, frozen, bumped)[0]
        if abs(out - base) > 0:
            hits += 1
    assert hits >= 45


def test_minibatch_stddev_single_vs_batch(ensemble):
    rng = np.random.default_rng(9)
    image, mask, guidance = random_inputs(2, rng)
    batch_logits = d_image(ensemble.image_d, image, mask, guidance)
    single = d_image(ensemble.image_d, image[:1], mask[:1], guidance[:1])
    # the stddev feature depends on the batch, so logits differ
    assert not np.isclose(batch_logits[0], single[0])


def test_ensemble_validation_rules(frozen):
    with pytest.raises(ValueError):
        build_ensemble(seed=0, image_size=64, guidance_channels=5,
                       members=("image_semantic_d",), frozen=frozen)
    with pytest.raises(ValueError):
        build_ensemble(seed=0, image_size=64, guidance_channels=5,
                       members=("image_d", "image_semantic_d"), frozen=None)
    with pytest.raises(ValueError):
        build_ensemble(seed=0, image_size=64, guidance_channels=5,
                       members=("image_d", "bogus"))
    ens = build_ensemble(seed=0, image_size=64, guidance_channels=5,
                         members=("image_d",))
    assert ens.enabled_names() == ["image_d"]


def test_frozen_encoder_checksum_stable_and_tagged():
    a = create_frozen_encoder(seed=3, input_size=32)
    b = create_frozen_encoder(seed=3, input_size=32)
    assert a.checksum() == b.checksum()
    assert a.tag == b.tag
    assert not any(p.requires_grad for p in a.module.parameters())
    c = create_frozen_encoder(seed=4, input_size=32)
    assert c.checksum() != a.checksum()


def test_param_checksum_detects_any_change(ensemble):
    member = ensemble.image_d
    before = param_checksum(member)
    with torch.no_grad():
        member.fc2.bias += 1e-6
    after = param_checksum(member)
    with torch.no_grad():
        member.fc2.bias -= 1e-6
    assert before != after
