"""Checkpoint archives: a zip holding config JSON, named float arrays,
and the training-step counter, tagged "gclab-ckpt-v1".

Array names are namespaced: generator/<param>, disc/<member>/<param>,
frozen/<param>, perceptual/<param>, opt_g/..., opt_d/.... A generator
can be loaded from any archive that carries the generator namespace.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .errors import LoadError, StorageError
from .generator import CompletionGenerator, GeneratorConfig, GeneratorState

FORMAT_TAG = "gclab-ckpt-v1"
META_NAME = "meta.json"
ARRAYS_NAME = "arrays.npz"


def save_archive(path, config: dict, arrays: dict[str, np.ndarray], step: int) -> Path:
    path = Path(path)
    meta = {"format": FORMAT_TAG, "step": int(step), "config": config}
    buf = io.BytesIO()
    np.savez(buf, **{k: np.asarray(v) for k, v in arrays.items()})
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
            zf.writestr(META_NAME, json.dumps(meta, indent=1))
            zf.writestr(ARRAYS_NAME, buf.getvalue())
    except OSError as exc:
        raise StorageError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_archive(path) -> tuple[dict, dict[str, np.ndarray], int]:
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read(META_NAME))
            with zf.open(ARRAYS_NAME) as fh:
                npz = np.load(io.BytesIO(fh.read()))
                arrays = {k: npz[k] for k in npz.files}
    except (OSError, KeyError, zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise LoadError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("format") != FORMAT_TAG:
        raise LoadError(f"unsupported checkpoint format {meta.get('format')!r}")
    return meta["config"], arrays, int(meta["step"])


def module_arrays(module: torch.nn.Module, prefix: str) -> dict[str, np.ndarray]:
    return {
        f"{prefix}/{name}": tensor.detach().cpu().numpy().copy()
        for name, tensor in module.state_dict().items()
    }


def load_module_arrays(module: torch.nn.Module, arrays: dict, prefix: str) -> None:
    state = {}
    want = prefix + "/"
    for key, value in arrays.items():
        if key.startswith(want):
            state[key[len(want):]] = torch.from_numpy(np.asarray(value))
    if not state:
        raise LoadError(f"checkpoint has no arrays under {prefix!r}")
    module.load_state_dict(state)


def optimizer_arrays(opt: torch.optim.Optimizer, prefix: str) -> dict[str, np.ndarray]:
    out = {}
    sd = opt.state_dict()
    for idx, entry in sd["state"].items():
        for field_name, value in entry.items():
            t = value if isinstance(value, torch.Tensor) else torch.tensor(value)
            out[f"{prefix}/{idx}/{field_name}"] = t.detach().cpu().numpy().copy()
    return out


def load_optimizer_arrays(opt: torch.optim.Optimizer, arrays: dict, prefix: str) -> None:
    sd = opt.state_dict()
    state: dict[int, dict] = {}
    want = prefix + "/"
    for key, value in arrays.items():
        if not key.startswith(want):
            continue
        idx_str, field_name = key[len(want):].split("/", 1)
        entry = state.setdefault(int(idx_str), {})
        arr = np.asarray(value)
        if field_name == "step":
            entry[field_name] = torch.tensor(arr.reshape(()))
        else:
            entry[field_name] = torch.from_numpy(arr)
    sd["state"] = state
    opt.load_state_dict(sd)


def save_generator_checkpoint(path, state: GeneratorState) -> Path:
    config = {"kind": "generator", "generator": asdict(state.config)}
    arrays = module_arrays(state.module, "generator")
    return save_archive(path, config, arrays, state.step)


def load_generator(path) -> GeneratorState:
    """Rebuild a GeneratorState from any archive carrying the generator
    namespace (slim export or full training checkpoint)."""
    config, arrays, step = load_archive(path)
    gen_cfg = GeneratorConfig(**config["generator"])
    module = CompletionGenerator(gen_cfg)
    load_module_arrays(module, arrays, "generator")
    module.eval()
    return GeneratorState(module=module, config=gen_cfg, step=step)
