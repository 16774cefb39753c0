"""Conditional completion generator.

Encoder-decoder with a cascaded modulation decoder: a strided-conv
encoder produces a global code (spatial mean of the deepest feature);
each decoder level first modulates with an affine projection of that
code, then with a pixelwise projection of the skip feature. The network
takes [masked image, mask, guidance] and the output is composited so
known pixels pass through untouched.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .guidance import GuidanceMap

logger = logging.getLogger(__name__)

LRELU_SLOPE = 0.2


@dataclass(frozen=True)
class GeneratorConfig:
    base_width: int = 32
    levels: int = 4
    guidance_channels: int = 5   # C_g; 0 disables the guidance concat
    modulation: str = "cascaded"  # cascaded | plain
    noise: bool = False
    max_width: int = 256

    def validate(self) -> None:
        if self.levels < 3:
            raise ValueError(f"levels must be >= 3, got {self.levels}")
        if self.base_width < 8:
            raise ValueError(f"base_width must be >= 8, got {self.base_width}")
        if self.guidance_channels < 0:
            raise ValueError("guidance_channels must be >= 0")
        if self.modulation not in ("cascaded", "plain"):
            raise ValueError(f"unknown modulation style {self.modulation!r}")

    def widths(self) -> list[int]:
        return [min(self.base_width * 2**l, self.max_width) for l in range(self.levels)]

    @property
    def in_channels(self) -> int:
        return 3 + 1 + self.guidance_channels

    @property
    def stride_factor(self) -> int:
        return 2 ** (self.levels - 1)


class _DecoderLevel(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, code_dim: int, modulation: str):
        super().__init__()
        self.modulation = modulation
        self.conv_a = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.conv_b = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        if modulation == "cascaded":
            self.global_affine = nn.Linear(code_dim, 2 * out_ch)
            self.spatial_affine = nn.Conv2d(out_ch, 2 * out_ch, 1)
        else:
            self.skip_proj = nn.Conv2d(out_ch, out_ch, 1)

    def forward(self, x, skip, code):
        x = nn.functional.interpolate(x, scale_factor=2, mode="nearest")
        x = self.conv_a(x)
        if self.modulation == "cascaded":
            scale, shift = self.global_affine(code).chunk(2, dim=1)
            x = x * (1 + scale[:, :, None, None]) + shift[:, :, None, None]
            x = nn.functional.leaky_relu(x, LRELU_SLOPE)
            x = self.conv_b(x)
            s, b = self.spatial_affine(skip).chunk(2, dim=1)
            x = x * (1 + s) + b
        else:
            x = nn.functional.leaky_relu(x, LRELU_SLOPE)
            x = self.conv_b(x + self.skip_proj(skip))
        return nn.functional.leaky_relu(x, LRELU_SLOPE)


class CompletionGenerator(nn.Module):
    def __init__(self, config: GeneratorConfig):
        super().__init__()
        config.validate()
        self.config = config
        widths = config.widths()
        code_dim = widths[-1]
        self.stem = nn.Conv2d(config.in_channels, widths[0], 3, padding=1)
        self.encoder = nn.ModuleList(
            nn.Conv2d(widths[l - 1], widths[l], 3, stride=2, padding=1)
            for l in range(1, config.levels)
        )
        self.code_fc1 = nn.Linear(widths[-1], code_dim)
        self.code_fc2 = nn.Linear(code_dim, code_dim)
        if config.noise:
            self.noise_fc = nn.Linear(code_dim, code_dim)
        self.decoder = nn.ModuleList(
            _DecoderLevel(widths[l + 1], widths[l], code_dim, config.modulation)
            for l in reversed(range(config.levels - 1))
        )
        self.head = nn.Conv2d(widths[0], 3, 3, padding=1)

    def forward(self, net_in: torch.Tensor, noise: torch.Tensor | None = None) -> torch.Tensor:
        feats = [nn.functional.leaky_relu(self.stem(net_in), LRELU_SLOPE)]
        for conv in self.encoder:
            feats.append(nn.functional.leaky_relu(conv(feats[-1]), LRELU_SLOPE))
        code = feats[-1].mean(dim=(2, 3))
        code = nn.functional.leaky_relu(self.code_fc1(code), LRELU_SLOPE)
        code = self.code_fc2(code)
        if self.config.noise:
            z = noise if noise is not None else torch.zeros_like(code)
            code = code + self.noise_fc(z)
        x = feats[-1]
        for i, level in enumerate(self.decoder):
            skip = feats[self.config.levels - 2 - i]
            x = level(x, skip, code)
        return torch.tanh(self.head(x))


@dataclass
class GeneratorState:
    module: CompletionGenerator
    config: GeneratorConfig
    step: int = 0

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.module.parameters())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.detach().numpy().copy() for k, v in self.module.state_dict().items()}


def seeded_init_(module: nn.Module, seed: int) -> None:
    """Deterministic parameter init: fan-in-scaled normals, zero biases."""
    gen = torch.Generator().manual_seed(seed)
    for name, p in module.named_parameters():
        with torch.no_grad():
            if p.ndim >= 2:
                fan_in = p[0].numel()
                p.copy_(torch.randn(p.shape, generator=gen) * (1.0 / np.sqrt(fan_in)))
            else:
                p.zero_()


def init_generator(seed: int, config: GeneratorConfig | None = None) -> GeneratorState:
    config = config or GeneratorConfig()
    config.validate()
    module = CompletionGenerator(config)
    seeded_init_(module, seed)
    state = GeneratorState(module=module, config=config)
    logger.info(
        "generator init: seed=%d params=%d config=%s",
        seed, state.parameter_count(), json.dumps(asdict(config)),
    )
    return state


def _check_inputs_torch(
    config: GeneratorConfig, image: torch.Tensor, mask: torch.Tensor, guidance: torch.Tensor
) -> None:
    if image.ndim != 4 or image.shape[1] != 3:
        raise ValueError(f"image must be (B, 3, H, W), got {tuple(image.shape)}")
    b, _, h, w = image.shape
    if mask.shape != (b, 1, h, w):
        raise ValueError(f"mask must be (B, 1, {h}, {w}), got {tuple(mask.shape)}")
    if guidance.shape != (b, config.guidance_channels, h, w):
        raise ValueError(
            f"guidance must have {config.guidance_channels} channels at {h}x{w}, "
            f"got {tuple(guidance.shape)}"
        )
    f = config.stride_factor
    if h % f or w % f:
        raise ValueError(f"H and W must be multiples of {f}, got {h}x{w}")


def complete_torch(
    state: GeneratorState,
    image: torch.Tensor,
    mask: torch.Tensor,
    guidance: torch.Tensor,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """Differentiable completion: returns raw output composited with the input."""
    _check_inputs_torch(state.config, image, mask, guidance)
    hole = mask > 0.5
    net_in = torch.cat([image * (~hole), mask.to(image.dtype), guidance], dim=1)
    raw = state.module(net_in, noise=noise)
    return torch.where(hole, raw, image)


def complete(
    state: GeneratorState,
    image: np.ndarray,
    mask: np.ndarray,
    guidance: GuidanceMap | np.ndarray,
) -> np.ndarray:
    """Complete a single image; known pixels are returned bit-identical."""
    channels = guidance.channels if isinstance(guidance, GuidanceMap) else np.asarray(guidance)
    img_t = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))[None]
    mask_t = torch.from_numpy(np.ascontiguousarray(mask, dtype=np.float32))[None, None]
    g_t = torch.from_numpy(np.ascontiguousarray(channels, dtype=np.float32))[None]
    with torch.no_grad():
        out = complete_torch(state, img_t, mask_t, g_t)
    return out[0].numpy()
