"""HTTP inference service: completion, segmentation, and metadata.

Images travel as base64 PNG (lossless, so the composite invariant
survives the wire). A model registry maps tags to loaded generator
checkpoints; each model's inference is serialized behind a lock.
Errors carry a machine-readable `field` naming the offending input.
"""

from __future__ import annotations

import base64
import binascii
import io
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Header, Request
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel

from .checkpoint import load_generator
from .errors import GclabError, PipelineError
from .generator import GeneratorState, complete
from .guidance import encode_edge, encode_panoptic, encode_semantic
from .pipeline import PipelineConfig, ToySegmenter, auto_complete
from .scenes import densify_instance_map, rgb_to_u8, u8_to_rgb

DEFAULT_MAX_PAYLOAD = 32 * 1024 * 1024


class ApiError(Exception):
    def __init__(self, status: int, message: str, field_name: str = ""):
        super().__init__(message)
        self.status = status
        self.field = field_name


@dataclass
class ModelEntry:
    tag: str
    state: GeneratorState
    guidance_kind: str
    lock: threading.Lock = field(default_factory=threading.Lock)


@dataclass
class ServiceConfig:
    models: dict[str, str] = field(default_factory=dict)       # tag -> checkpoint path
    model_kinds: dict[str, str] = field(default_factory=dict)  # tag -> guidance kind
    default_model: str = ""
    stage1_model: str = ""          # guidance-free model for the automatic pipeline
    segmenter: str = "toy"          # toy | none
    num_classes: int = 4
    class_names: list[str] = field(default_factory=list)
    api_key: str = ""
    max_payload: int = DEFAULT_MAX_PAYLOAD
    crop_size: int = 64

    @staticmethod
    def from_env(base: "ServiceConfig | None" = None) -> "ServiceConfig":
        cfg = base or ServiceConfig()
        cfg.api_key = os.environ.get("GCLAB_API_KEY", cfg.api_key)
        model_dir = os.environ.get("GCLAB_MODEL_DIR")
        if model_dir and not cfg.models:
            for p in sorted(Path(model_dir).glob("*.ckpt")):
                cfg.models[p.stem] = str(p)
        return cfg


class CompleteRequest(BaseModel):
    image: str
    mask: str
    guidance_kind: str = "none"    # edge | semantic | panoptic | none
    semantic: str | None = None
    instance: str | None = None
    edge: str | None = None
    model: str | None = None


class SegmentRequest(BaseModel):
    image: str
    mask: str | None = None


def png_b64_encode(arr: np.ndarray, mode: str | None = None) -> str:
    img = Image.fromarray(arr) if mode is None else Image.fromarray(arr, mode=mode)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def png_b64_decode(data: str, field_name: str) -> np.ndarray:
    try:
        raw = base64.b64decode(data, validate=True)
        return np.array(Image.open(io.BytesIO(raw)))
    except (binascii.Error, OSError, ValueError) as exc:
        raise ApiError(400, f"cannot decode PNG payload: {exc}", field_name) from exc


def _decode_rgb(data: str, field_name: str) -> np.ndarray:
    arr = png_b64_decode(data, field_name)
    if arr.ndim == 3 and arr.shape[2] == 4:
        arr = arr[:, :, :3]
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise ApiError(422, "image must be an 8-bit RGB PNG", field_name)
    return u8_to_rgb(arr)


def _decode_mask(data: str, shape: tuple[int, int], field_name: str) -> np.ndarray:
    arr = png_b64_decode(data, field_name)
    if arr.ndim == 3:
        arr = arr[:, :, 0]
    if arr.shape != shape:
        raise ApiError(422, f"mask shape {arr.shape} != image shape {shape}", field_name)
    return (arr >= 128).astype(np.uint8)


def _decode_index_map(data: str, shape: tuple[int, int], field_name: str) -> np.ndarray:
    arr = png_b64_decode(data, field_name)
    if arr.ndim == 3:
        arr = arr[:, :, 0]
    if arr.shape != shape:
        raise ApiError(422, f"{field_name} shape {arr.shape} != image shape {shape}",
                       field_name)
    return arr.astype(np.int32)


class ServiceState:
    def __init__(self, config: ServiceConfig):
        self.config = config
        self.models: dict[str, ModelEntry] = {}
        for tag, path in config.models.items():
            state = load_generator(path)
            kind = config.model_kinds.get(tag, "panoptic")
            self.models[tag] = ModelEntry(tag=tag, state=state, guidance_kind=kind)
        self.segmenter = (
            ToySegmenter(num_classes=config.num_classes)
            if config.segmenter == "toy" else None
        )

    def entry(self, tag: str | None, want_kind: str) -> ModelEntry:
        if tag is None:
            tag = (
                self.config.stage1_model
                if want_kind == "none" and self.config.stage1_model
                else self.config.default_model
            )
        entry = self.models.get(tag or "")
        if entry is None:
            raise ApiError(503, f"model {tag!r} not loaded", "model")
        return entry


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = ServiceConfig.from_env(config)
    state = ServiceState(config)
    app = FastAPI(title="gclab inference service", openapi_url="/v1/openapi")

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status, content={"error": str(exc), "field": exc.field}
        )

    @app.exception_handler(GclabError)
    async def _gclab_error(_req: Request, exc: GclabError):
        return JSONResponse(status_code=422, content={"error": str(exc), "field": ""})

    def check_auth(key: str | None):
        if config.api_key and key != config.api_key:
            raise ApiError(401, "missing or invalid API key", "api_key")

    def check_size(request: CompleteRequest | SegmentRequest):
        total = sum(
            len(v) for v in vars(request).values() if isinstance(v, str)
        )
        if total > config.max_payload:
            raise ApiError(413, f"payload exceeds {config.max_payload} bytes", "image")

    @app.get("/v1/meta")
    def meta():
        names = state.config.class_names or [
            "background", *(f"class_{i}" for i in range(1, config.num_classes))
        ]
        return {
            "model_tags": sorted(state.models),
            "default_model": config.default_model,
            "K": config.num_classes,
            "class_names": names,
            "guidance_kinds": sorted(
                {e.guidance_kind for e in state.models.values()} | {"none"}
            ),
            "crop_size": config.crop_size,
            "segmenter": getattr(state.segmenter, "tag", None),
        }

    @app.post("/v1/complete")
    def complete_endpoint(
        request: CompleteRequest, x_api_key: str | None = Header(default=None)
    ):
        check_auth(x_api_key)
        check_size(request)
        t0 = time.monotonic()
        image = _decode_rgb(request.image, "image")
        h, w = image.shape[1], image.shape[2]
        mask = _decode_mask(request.mask, (h, w), "mask")
        kind = request.guidance_kind
        k = config.num_classes
        predicted = None

        if kind == "none":
            entry = state.entry(request.model, "none")
            guided = state.entry(None, "panoptic") if request.model is None else entry
            if state.segmenter is None:
                raise ApiError(501, "no segmenter configured", "guidance_kind")
            stage1 = state.models.get(config.stage1_model)
            if stage1 is None:
                raise ApiError(503, "stage-1 model not loaded", "model")
            cfg = PipelineConfig(
                variant="inpaint_then_segment",
                stage1=stage1.state,
                guided=guided.state,
                segmenter=state.segmenter,
                num_classes=k,
            )
            with stage1.lock, guided.lock:
                try:
                    out, sem, inst = auto_complete(image, mask, cfg)
                except PipelineError as exc:
                    raise ApiError(422, str(exc), "guidance") from exc
            predicted = (sem, inst)
            entry = guided
        else:
            entry = state.entry(request.model, kind)
            try:
                if kind == "semantic":
                    if request.semantic is None:
                        raise ApiError(422, "semantic map required", "semantic")
                    sem = _decode_index_map(request.semantic, (h, w), "semantic")
                    guidance = encode_semantic(sem, k)
                elif kind == "panoptic":
                    if request.semantic is None or request.instance is None:
                        raise ApiError(422, "semantic and instance maps required",
                                       "semantic" if request.semantic is None else "instance")
                    sem = _decode_index_map(request.semantic, (h, w), "semantic")
                    inst = _decode_index_map(request.instance, (h, w), "instance")
                    guidance = encode_panoptic(sem, densify_instance_map(inst), k)
                elif kind == "edge":
                    if request.edge is None:
                        raise ApiError(422, "edge map required", "edge")
                    edge = _decode_mask(request.edge, (h, w), "edge")
                    from .guidance import GuidanceMap

                    guidance = GuidanceMap(
                        kind="edge", channels=edge[None].astype(np.float32), num_classes=0
                    )
                else:
                    raise ApiError(422, f"unknown guidance kind {kind!r}", "guidance_kind")
            except ValueError as exc:
                raise ApiError(422, str(exc), "guidance") from exc
            if guidance.channels.shape[0] != entry.state.config.guidance_channels:
                raise ApiError(
                    422,
                    f"model {entry.tag!r} expects "
                    f"{entry.state.config.guidance_channels} guidance channels",
                    "guidance_kind",
                )
            with entry.lock:
                try:
                    out = complete(entry.state, image, mask, guidance)
                except ValueError as exc:
                    raise ApiError(422, str(exc), "image") from exc

        response = {
            "image": png_b64_encode(rgb_to_u8(out)),
            "model": entry.tag,
            "elapsed_ms": round((time.monotonic() - t0) * 1000.0, 3),
        }
        if predicted is not None:
            sem, inst = predicted
            response["semantic"] = png_b64_encode(sem.astype(np.uint8))
            response["instance"] = png_b64_encode(inst.astype(np.uint16))
        return response

    @app.post("/v1/segment")
    def segment_endpoint(
        request: SegmentRequest, x_api_key: str | None = Header(default=None)
    ):
        check_auth(x_api_key)
        check_size(request)
        if state.segmenter is None:
            raise ApiError(501, "no segmenter configured", "segmenter")
        image = _decode_rgb(request.image, "image")
        mask = None
        if request.mask is not None:
            mask = _decode_mask(request.mask, (image.shape[1], image.shape[2]), "mask")
        semantic, instances = state.segmenter(image, mask)
        instances = densify_instance_map(np.asarray(instances, dtype=np.int32))
        return {
            "semantic": png_b64_encode(np.asarray(semantic, np.uint8)),
            "instance": png_b64_encode(instances.astype(np.uint16)),
            "segmenter": state.segmenter.tag,
        }

    app.state.service = state
    return app
