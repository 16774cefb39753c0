"""Command line interface.

Commands map 1:1 onto module operations: gen-data, train, eval, infer,
pipeline run, serve. Exit codes: 0 success, 2 validation/usage error,
1 anything else.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np
from PIL import Image

from .checkpoint import load_generator
from .errors import ConfigurationError, GclabError, ValidationError
from .generator import complete
from .guidance import encode_guidance
from .masks import load_mask, random_stroke_mask, save_mask
from .metrics import ToyFeatureExtractor, extract_features, metrics_report
from .pipeline import PipelineConfig, OracleSegmenter, ToySegmenter, auto_complete
from .scenes import (
    SceneConfig,
    generate_scene,
    load_dataset,
    rgb_to_u8,
    save_dataset,
    u8_to_rgb,
)
from .training import TrainConfig, train


@click.group()
def cli():
    """gclab: structure-guided image completion toolkit."""


@cli.command("gen-data")
@click.option("--out", required=True, type=click.Path())
@click.option("--count", default=16, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--size", default=64, show_default=True)
@click.option("--classes", "num_classes", default=4, show_default=True)
@click.option("--min-instances", default=1, show_default=True)
@click.option("--max-instances", default=5, show_default=True)
def gen_data(out, count, seed, size, num_classes, min_instances, max_instances):
    """Generate a synthetic panoptic dataset."""
    cfg = SceneConfig(
        height=size, width=size, num_classes=num_classes,
        min_instances=min_instances, max_instances=max_instances,
    )
    scenes = [generate_scene(seed + i, cfg) for i in range(count)]
    manifest = save_dataset(scenes, out)
    click.echo(f"wrote {len(manifest.items)} scenes to {manifest.root}")


@cli.command("train")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="JSON file with TrainConfig fields; flags override.")
@click.option("--steps", type=int)
@click.option("--seed", type=int)
@click.option("--batch-size", type=int)
@click.option("--guidance-kind", type=click.Choice(["edge", "semantic", "panoptic", "none"]))
@click.option("--mask-scheme", type=click.Choice(["stroke", "object", "none"]))
@click.option("--members", help="comma-separated discriminator members")
@click.option("--resume", "resume_from", type=click.Path(exists=True))
def train_cmd(data, out, config_path, steps, seed, batch_size, guidance_kind,
              mask_scheme, members, resume_from):
    """Train a completion model on a dataset manifest."""
    fields = {}
    if config_path:
        fields.update(json.loads(Path(config_path).read_text()))
    for key, value in (
        ("steps", steps), ("seed", seed), ("batch_size", batch_size),
        ("guidance_kind", guidance_kind), ("mask_scheme", mask_scheme),
    ):
        if value is not None:
            fields[key] = value
    if members:
        fields["members"] = tuple(m.strip() for m in members.split(",") if m.strip())
    config = TrainConfig.from_dict({**TrainConfig().to_dict(), **fields})
    scenes = list(load_dataset(data))
    path = train(config, scenes, out, resume_from=resume_from)
    click.echo(str(path))


def _completions_for_eval(scenes, state, mask_scheme, seed, num_classes, guidance_kind):
    reals, fakes = [], []
    for i, scene in enumerate(scenes):
        h, w = scene.semantic.shape
        if mask_scheme == "none":
            mask = np.zeros((h, w), dtype=np.uint8)
        elif mask_scheme == "object":
            from .masks import object_mask

            ids = np.unique(scene.instances)
            ids = ids[ids > 0]
            if ids.size:
                rng = np.random.default_rng((seed, i))
                target = int(ids[int(rng.integers(ids.size))])
                mask = object_mask(scene.instances == target, h, w, seed=(seed, i, 1))
            else:
                mask = random_stroke_mask((seed, i), h, w)
        else:
            mask = random_stroke_mask((seed, i), h, w)
        guidance = encode_guidance(
            guidance_kind, scene.image, scene.semantic, scene.instances, num_classes
        )
        out = complete(state, scene.image, mask, guidance)
        reals.append(scene.image)
        fakes.append(out)
    return np.stack(reals), np.stack(fakes)


@cli.command("eval")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--mask-scheme", default="stroke", show_default=True,
              type=click.Choice(["stroke", "object", "none"]))
@click.option("--guidance-kind", default="panoptic", show_default=True,
              type=click.Choice(["edge", "semantic", "panoptic", "none"]))
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(), help="Write the JSON report here.")
def eval_cmd(data, checkpoint, mask_scheme, guidance_kind, seed, out_path):
    """Complete a dataset under a mask scheme and report FID / IDS."""
    scenes = list(load_dataset(data))
    if not scenes:
        raise ValidationError("dataset is empty")
    state = load_generator(checkpoint)
    num_classes = scenes[0].num_classes
    reals, fakes = _completions_for_eval(
        scenes, state, mask_scheme, seed, num_classes, guidance_kind
    )
    extractor = ToyFeatureExtractor()
    report = metrics_report(
        extract_features(reals, extractor),
        extract_features(fakes, extractor),
        mask_scheme=mask_scheme,
    )
    text = json.dumps(report, indent=1)
    if out_path:
        Path(out_path).write_text(text)
    click.echo(text)


@cli.command("infer")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--mask", "mask_path", required=True, type=click.Path(exists=True))
@click.option("--guidance-kind", default="none", show_default=True,
              type=click.Choice(["edge", "semantic", "panoptic", "none"]))
@click.option("--semantic", "semantic_path", type=click.Path(exists=True))
@click.option("--instance", "instance_path", type=click.Path(exists=True))
@click.option("--edge", "edge_path", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def infer_cmd(checkpoint, image_path, mask_path, guidance_kind, semantic_path,
              instance_path, edge_path, out):
    """Complete one image with an optional guidance map."""
    state = load_generator(checkpoint)
    image = u8_to_rgb(np.array(Image.open(image_path).convert("RGB")))
    mask = load_mask(mask_path)
    k = max(state.config.guidance_channels - 1, 0)
    if guidance_kind == "none":
        channels = np.zeros(
            (state.config.guidance_channels, image.shape[1], image.shape[2]), np.float32
        )
    elif guidance_kind == "edge":
        channels = load_mask(edge_path)[None].astype(np.float32)
    else:
        semantic = np.array(Image.open(semantic_path), dtype=np.int32)
        if guidance_kind == "semantic":
            channels = encode_guidance("semantic", image, semantic, None, k).channels
        else:
            instances = np.array(Image.open(instance_path), dtype=np.int32)
            channels = encode_guidance("panoptic", image, semantic, instances, k).channels
    result = complete(state, image, mask, channels)
    Image.fromarray(rgb_to_u8(result)).save(out)
    click.echo(out)


@cli.group("pipeline")
def pipeline_group():
    """Automatic inpainting pipeline commands."""


@pipeline_group.command("run")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="JSON file with variant/stage1/guided/segmenter; flags override.")
@click.option("--stage1", type=click.Path(exists=True),
              help="Guidance-free inpainter checkpoint.")
@click.option("--guided", type=click.Path(exists=True),
              help="Panoptic-guided model checkpoint.")
@click.option("--variant", type=click.Choice(["inpaint_then_segment", "segment_incomplete"]))
@click.option("--segmenter", type=click.Choice(["toy", "oracle"]))
@click.option("--mask-scheme", default="stroke", show_default=True,
              type=click.Choice(["stroke", "object"]))
@click.option("--seed", default=0, show_default=True)
@click.option("--out-dir", required=True, type=click.Path())
def pipeline_run(data, config_path, stage1, guided, variant, segmenter, mask_scheme,
                 seed, out_dir):
    """Run automatic inpainting over a dataset; write completions + layouts."""
    fields = json.loads(Path(config_path).read_text()) if config_path else {}
    stage1 = stage1 or fields.get("stage1")
    guided = guided or fields.get("guided")
    variant = variant or fields.get("variant", "inpaint_then_segment")
    segmenter = segmenter or fields.get("segmenter", "toy")
    if not stage1 or not guided:
        raise ValidationError("pipeline run needs --stage1 and --guided "
                              "(flags or config file)")
    scenes = list(load_dataset(data))
    if not scenes:
        raise ValidationError("dataset is empty")
    stage1_state = load_generator(stage1)
    guided_state = load_generator(guided)
    num_classes = scenes[0].num_classes
    out_root = Path(out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    for i, scene in enumerate(scenes):
        h, w = scene.semantic.shape
        if mask_scheme == "object" and scene.annotations:
            from .masks import object_mask

            rng = np.random.default_rng((seed, i))
            target = scene.annotations[int(rng.integers(len(scene.annotations)))].id
            mask = object_mask(scene.instances == target, h, w, seed=(seed, i, 1))
        else:
            mask = random_stroke_mask((seed, i), h, w)
        seg = (
            OracleSegmenter(scene) if segmenter == "oracle"
            else ToySegmenter(num_classes=num_classes)
        )
        cfg = PipelineConfig(
            variant=variant, stage1=stage1_state, guided=guided_state,
            segmenter=seg, num_classes=num_classes,
        )
        out, sem, inst = auto_complete(scene.image, mask, cfg)
        stem = f"{i:06d}"
        Image.fromarray(rgb_to_u8(out)).save(out_root / f"{stem}_completed.png")
        Image.fromarray(sem.astype(np.uint8)).save(out_root / f"{stem}_sem.png")
        Image.fromarray(inst.astype(np.uint16)).save(out_root / f"{stem}_inst.png")
        save_mask(mask, out_root / f"{stem}_mask.png")
    click.echo(f"wrote {len(scenes)} completions to {out_root}")


@cli.command("serve")
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="JSON ServiceConfig (models, default_model, ...).")
@click.option("--host", default=None)
@click.option("--port", default=None, type=int)
def serve_cmd(config_path, host, port):
    """Start the HTTP inference service."""
    import os

    import uvicorn

    from .service import ServiceConfig, create_app

    cfg = ServiceConfig()
    if config_path:
        payload = json.loads(Path(config_path).read_text())
        cfg = ServiceConfig(**payload)
    app = create_app(cfg)
    host = host or os.environ.get("GCLAB_HOST", "127.0.0.1")
    port = port or int(os.environ.get("GCLAB_PORT", "8321"))
    uvicorn.run(app, host=host, port=port)


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        exc.show()
        return 2
    except (ValidationError, ConfigurationError) as exc:
        click.echo(f"validation error: {exc}", err=True)
        return 2
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        return 1
    except (GclabError, ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
