"""Shared fixtures. Trained-model fixtures are session-scoped because
training even toy models costs minutes; tests must not mutate them."""

from __future__ import annotations

import numpy as np
import pytest

from gclab.guidance import encode_panoptic
from gclab.scenes import SceneConfig, generate_scene
from gclab.training import train

from train_fixtures import IMAGE_ONLY_CONFIG, SMOKE_CONFIG, STAGE1_CONFIG


@pytest.fixture(scope="session")
def toy_scenes():
    cfg = SceneConfig(height=64, width=64, num_classes=4, min_instances=1, max_instances=4)
    return [generate_scene(i, cfg) for i in range(8)]


@pytest.fixture(scope="session")
def eval_scenes():
    cfg = SceneConfig(height=64, width=64, num_classes=4, min_instances=1, max_instances=4)
    return [generate_scene(1000 + i, cfg) for i in range(12)]


@pytest.fixture()
def scene(toy_scenes):
    return toy_scenes[0]


@pytest.fixture()
def panoptic_guidance(scene):
    return encode_panoptic(scene.semantic, scene.instances, scene.num_classes)


@pytest.fixture()
def center_mask(scene):
    mask = np.zeros(scene.semantic.shape, dtype=np.uint8)
    h, w = mask.shape
    mask[h // 4 : 3 * h // 4, w // 4 : 3 * w // 4] = 1
    return mask


@pytest.fixture(scope="session")
def smoke_run(toy_scenes, tmp_path_factory):
    """500-step full-ensemble run under object masks (acceptance 6 / 7)."""
    out = tmp_path_factory.mktemp("smoke-run")
    ckpt = train(SMOKE_CONFIG, toy_scenes, out)
    return out, ckpt


@pytest.fixture(scope="session")
def image_only_run(toy_scenes, tmp_path_factory):
    """Ablation arm: conditional StyleGAN member + perceptual only."""
    out = tmp_path_factory.mktemp("image-only-run")
    ckpt = train(IMAGE_ONLY_CONFIG, toy_scenes, out)
    return out, ckpt


@pytest.fixture(scope="session")
def stage1_run(toy_scenes, tmp_path_factory):
    """Guidance-free inpainter for the automatic pipeline."""
    out = tmp_path_factory.mktemp("stage1-run")
    ckpt = train(STAGE1_CONFIG, toy_scenes, out)
    return out, ckpt
