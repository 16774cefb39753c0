"""Discriminator ensemble: StyleGAN-style and semantic members at image
and object level.

The semantic members fuse two branches: a frozen pretrained-style vision
encoder over the image alone (global embedding) and a trainable
strided-conv branch over [image, mask, guidance]. Object-level members
see the aligned crop parts [image_c, mask_c, guidance_c, shape_c].
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .generator import LRELU_SLOPE, seeded_init_
from .guidance import GuidanceMap
from .objectalign import CropConfig, ObjectCrop

MEMBER_NAMES = ("image_d", "image_semantic_d", "object_d", "object_semantic_d")


def param_checksum(module: nn.Module) -> str:
    """Stable digest of all parameters and buffers; detects any update."""
    h = hashlib.sha256()
    state = module.state_dict()
    for name in sorted(state):
        h.update(name.encode())
        h.update(state[name].detach().cpu().numpy().tobytes())
    return h.hexdigest()


class _AttentionBlock(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, 4 * dim)
        self.fc2 = nn.Linear(4 * dim, dim)

    def forward(self, x):
        b, n, d = x.shape
        dh = d // self.heads
        q, k, v = self.qkv(self.norm1(x)).reshape(b, n, 3, self.heads, dh).permute(2, 0, 3, 1, 4)
        attn = torch.softmax(q @ k.transpose(-2, -1) / dh**0.5, dim=-1)
        x = x + self.out((attn @ v).transpose(1, 2).reshape(b, n, d))
        return x + self.fc2(torch.nn.functional.gelu(self.fc1(self.norm2(x))))


class VisionEncoder(nn.Module):
    """Small ViT producing one global embedding per image."""

    def __init__(self, input_size: int = 64, patch: int = 8, dim: int = 64,
                 depth: int = 2, heads: int = 4):
        super().__init__()
        if input_size % patch:
            raise ValueError("input_size must be divisible by patch")
        self.input_size = input_size
        self.embed_dim = dim
        self.patch_embed = nn.Conv2d(3, dim, patch, stride=patch)
        n_tokens = (input_size // patch) ** 2
        self.pos_embed = nn.Parameter(torch.zeros(1, n_tokens, dim))
        self.blocks = nn.ModuleList(_AttentionBlock(dim, heads) for _ in range(depth))
        self.norm = nn.LayerNorm(dim)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.shape[-2:] != (self.input_size, self.input_size):
            images = nn.functional.interpolate(
                images, size=(self.input_size, self.input_size),
                mode="bilinear", align_corners=False,
            )
        x = self.patch_embed(images).flatten(2).transpose(1, 2) + self.pos_embed
        for block in self.blocks:
            x = block(x)
        return self.norm(x).mean(dim=1)


@dataclass
class FrozenVisionEncoder:
    tag: str
    input_size: int
    embed_dim: int
    module: VisionEncoder

    def embed(self, images: torch.Tensor) -> torch.Tensor:
        return self.module(images)

    def checksum(self) -> str:
        return param_checksum(self.module)


def create_frozen_encoder(
    seed: int = 0, input_size: int = 64, patch: int = 8, dim: int = 64,
    depth: int = 2, heads: int = 4, tag: str | None = None,
) -> FrozenVisionEncoder:
    """Hermetic frozen encoder: deterministic random init, never trained.

    Production deployments load a pretrained checkpoint via
    load_frozen_encoder instead; the interface is identical.
    """
    module = VisionEncoder(input_size=input_size, patch=patch, dim=dim,
                           depth=depth, heads=heads)
    seeded_init_(module, seed)
    with torch.no_grad():
        module.pos_embed.normal_(0, 0.02, generator=torch.Generator().manual_seed(seed + 1))
    module.requires_grad_(False)
    module.eval()
    return FrozenVisionEncoder(
        tag=tag or f"vit-random-s{seed}", input_size=input_size,
        embed_dim=dim, module=module,
    )


def load_frozen_encoder(path, input_size: int = 224, patch: int = 16, dim: int = 512,
                        depth: int = 12, heads: int = 8, tag: str = "vit-pretrained"):
    """Load pretrained encoder weights (state_dict file) from a local path."""
    module = VisionEncoder(input_size=input_size, patch=patch, dim=dim,
                           depth=depth, heads=heads)
    module.load_state_dict(torch.load(path, map_location="cpu", weights_only=True))
    module.requires_grad_(False)
    module.eval()
    return FrozenVisionEncoder(tag=tag, input_size=input_size, embed_dim=dim, module=module)


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int
    input_size: int
    base_width: int = 32
    levels: int = 4       # stride-2 stages
    max_width: int = 128

    def validate(self) -> None:
        if self.input_size % 2**self.levels:
            raise ValueError(
                f"input_size {self.input_size} not divisible by {2 ** self.levels}"
            )

    def widths(self) -> list[int]:
        return [min(self.base_width * 2**l, self.max_width) for l in range(self.levels + 1)]


def minibatch_stddev(x: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    # eps keeps sqrt differentiable at zero variance (matters for R1's
    # second-order gradients on identical batch elements)
    std = torch.sqrt(x.var(dim=0, unbiased=False) + eps).mean()
    feat = std.view(1, 1, 1, 1).expand(x.shape[0], 1, x.shape[2], x.shape[3])
    return torch.cat([x, feat], dim=1)


class _ConvTrunk(nn.Module):
    """Shared strided-conv pyramid ending in a flattened deep feature."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        widths = cfg.widths()
        self.stem = nn.Conv2d(cfg.in_channels, widths[0], 3, padding=1)
        self.downs = nn.ModuleList(
            nn.Conv2d(widths[l], widths[l + 1], 3, stride=2, padding=1)
            for l in range(cfg.levels)
        )
        self.post = nn.Conv2d(widths[-1] + 1, widths[-1], 3, padding=1)
        self.deep_res = cfg.input_size // 2**cfg.levels
        self.deep_features = widths[-1] * self.deep_res**2

    def forward(self, x):
        if x.shape[-2:] != (self.cfg.input_size, self.cfg.input_size):
            raise ValueError(
                f"discriminator expects {self.cfg.input_size}x{self.cfg.input_size} "
                f"inputs, got {tuple(x.shape[-2:])}"
            )
        if x.shape[1] != self.cfg.in_channels:
            raise ValueError(
                f"discriminator expects {self.cfg.in_channels} channels, "
                f"got {x.shape[1]}"
            )
        x = nn.functional.leaky_relu(self.stem(x), LRELU_SLOPE)
        for conv in self.downs:
            x = nn.functional.leaky_relu(conv(x), LRELU_SLOPE)
        x = minibatch_stddev(x)
        x = nn.functional.leaky_relu(self.post(x), LRELU_SLOPE)
        return x.flatten(1)


class ConvDiscriminator(nn.Module):
    """StyleGAN-style member: conv pyramid + minibatch stddev + FC head."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.trunk = _ConvTrunk(cfg)
        hidden = cfg.widths()[-1]
        self.fc1 = nn.Linear(self.trunk.deep_features, hidden)
        self.fc2 = nn.Linear(hidden, 1)

    def forward(self, x):
        h = nn.functional.leaky_relu(self.fc1(self.trunk(x)), LRELU_SLOPE)
        return self.fc2(h).squeeze(1)


class SemanticDiscriminator(nn.Module):
    """Two-branch member: frozen global embedding fused with a conv branch.

    The frozen embedding is passed in (computed from the image alone);
    the conv branch consumes the full conditional concatenation.
    """

    def __init__(self, cfg: DiscriminatorConfig, embed_dim: int, proj_dim: int = 128):
        super().__init__()
        self.trunk = _ConvTrunk(cfg)
        self.proj = nn.Linear(embed_dim, proj_dim)
        hidden = cfg.widths()[-1]
        self.fc1 = nn.Linear(proj_dim + self.trunk.deep_features, hidden)
        self.fc2 = nn.Linear(hidden, 1)

    def _head(self, fused):
        return self.fc2(nn.functional.leaky_relu(self.fc1(fused), LRELU_SLOPE)).squeeze(1)

    def forward(self, x, embed):
        return self._head(torch.cat([self.proj(embed), self.trunk(x)], dim=1))

    def forward_conv_only(self, x):
        """Head with the frozen-branch slot zeroed; equals forward() when the
        projection weights and bias are zero."""
        deep = self.trunk(x)
        zeros = deep.new_zeros(deep.shape[0], self.proj.out_features)
        return self._head(torch.cat([zeros, deep], dim=1))


@dataclass
class DiscriminatorEnsemble:
    image_d: ConvDiscriminator | None = None
    image_semantic_d: SemanticDiscriminator | None = None
    object_d: ConvDiscriminator | None = None
    object_semantic_d: SemanticDiscriminator | None = None
    enabled: dict[str, bool] = field(default_factory=dict)
    crop_config: CropConfig | None = None
    frozen: FrozenVisionEncoder | None = None

    def validate(self) -> None:
        if not (self.image_d is not None and self.enabled.get("image_d")):
            raise ValueError("image_d must be present and enabled")
        for name in ("object_d", "object_semantic_d"):
            if self.enabled.get(name) and self.crop_config is None:
                raise ValueError(f"{name} enabled without a crop config")
        for name in ("image_semantic_d", "object_semantic_d"):
            if self.enabled.get(name) and self.frozen is None:
                raise ValueError(f"{name} enabled without a frozen encoder")

    def enabled_names(self) -> list[str]:
        return [n for n in MEMBER_NAMES if self.enabled.get(n) and getattr(self, n) is not None]

    def member(self, name: str) -> nn.Module:
        return getattr(self, name)

    def run(self, name: str, *, image=None, mask=None, guidance=None, crop=None):
        """Forward one member on image-level tensors or a CropBatch."""
        module = self.member(name)
        if name in ("image_d", "image_semantic_d"):
            x = torch.cat([image, mask, guidance], dim=1)
            if name == "image_d":
                return module(x)
            return module(x, self.frozen.embed(image))
        x = torch.cat([crop.image, crop.mask, crop.guidance, crop.shape], dim=1)
        if name == "object_d":
            return module(x)
        return module(x, self.frozen.embed(crop.image))

    def trainable_parameters(self):
        for name in self.enabled_names():
            yield from self.member(name).parameters()


@dataclass
class CropBatch:
    image: torch.Tensor     # (N, 3, S, S)
    mask: torch.Tensor      # (N, 1, S, S)
    guidance: torch.Tensor  # (N, C_g, S, S)
    shape: torch.Tensor     # (N, 1, S, S)

    @staticmethod
    def from_crops(crops: list[ObjectCrop]) -> "CropBatch":
        return CropBatch(
            image=torch.from_numpy(np.stack([c.image_c for c in crops])).float(),
            mask=torch.from_numpy(np.stack([c.mask_c for c in crops]))[:, None].float(),
            guidance=torch.from_numpy(
                np.stack([c.guidance_c.channels for c in crops])
            ).float(),
            shape=torch.from_numpy(np.stack([c.shape_c for c in crops]))[:, None].float(),
        )


def build_ensemble(
    seed: int,
    image_size: int,
    guidance_channels: int,
    members: tuple[str, ...] = MEMBER_NAMES,
    crop_config: CropConfig | None = None,
    frozen: FrozenVisionEncoder | None = None,
    base_width: int = 32,
    levels: int = 4,
    max_width: int = 128,
) -> DiscriminatorEnsemble:
    unknown = set(members) - set(MEMBER_NAMES)
    if unknown:
        raise ValueError(f"unknown discriminator members: {sorted(unknown)}")
    needs_crops = {"object_d", "object_semantic_d"} & set(members)
    if needs_crops and crop_config is None:
        crop_config = CropConfig(size=min(image_size, 64))
    if needs_crops and crop_config.size < 16:
        raise ValueError(f"training crops must be >= 16 px, got {crop_config.size}")
    if {"image_semantic_d", "object_semantic_d"} & set(members) and frozen is None:
        raise ValueError("semantic members need a frozen encoder")
    image_in = 3 + 1 + guidance_channels
    crop_in = image_in + 1  # + instance shape channel
    ens = DiscriminatorEnsemble(
        enabled={n: n in members for n in MEMBER_NAMES},
        crop_config=crop_config,
        frozen=frozen,
    )
    img_cfg = DiscriminatorConfig(image_in, image_size, base_width, levels, max_width)
    if "image_d" in members:
        ens.image_d = ConvDiscriminator(img_cfg)
        seeded_init_(ens.image_d, seed * 7919 + 1)
    if "image_semantic_d" in members:
        ens.image_semantic_d = SemanticDiscriminator(img_cfg, frozen.embed_dim)
        seeded_init_(ens.image_semantic_d, seed * 7919 + 2)
    if needs_crops:
        crop_cfg = DiscriminatorConfig(crop_in, crop_config.size, base_width, levels, max_width)
        if "object_d" in members:
            ens.object_d = ConvDiscriminator(crop_cfg)
            seeded_init_(ens.object_d, seed * 7919 + 3)
        if "object_semantic_d" in members:
            ens.object_semantic_d = SemanticDiscriminator(crop_cfg, frozen.embed_dim)
            seeded_init_(ens.object_semantic_d, seed * 7919 + 4)
    ens.validate()
    return ens


def _image_level_input(image, mask, guidance):
    img = np.asarray(image, dtype=np.float32)
    msk = np.asarray(mask, dtype=np.float32)
    chans = guidance.channels if isinstance(guidance, GuidanceMap) else np.asarray(guidance)
    if img.ndim == 3:
        img, msk, chans = img[None], msk[None], chans[None]
    img_t = torch.from_numpy(np.ascontiguousarray(img))
    msk_t = torch.from_numpy(np.ascontiguousarray(msk, dtype=np.float32))
    if msk_t.ndim == 3:
        msk_t = msk_t[:, None]
    g_t = torch.from_numpy(np.ascontiguousarray(chans, dtype=np.float32))
    if img_t.shape[-2:] != msk_t.shape[-2:] or img_t.shape[-2:] != g_t.shape[-2:]:
        raise ValueError("image/mask/guidance spatial shapes differ")
    return img_t, msk_t, g_t


def d_image(member: ConvDiscriminator, image, mask, guidance) -> np.ndarray:
    """Image-level conditional logits; one finite scalar per batch element."""
    img_t, msk_t, g_t = _image_level_input(image, mask, guidance)
    with torch.no_grad():
        out = member(torch.cat([img_t, msk_t, g_t], dim=1))
    return out.numpy()


def d_semantic(member: SemanticDiscriminator, frozen: FrozenVisionEncoder,
               image, mask, guidance) -> np.ndarray:
    img_t, msk_t, g_t = _image_level_input(image, mask, guidance)
    with torch.no_grad():
        out = member(torch.cat([img_t, msk_t, g_t], dim=1), frozen.embed(img_t))
    return out.numpy()


def _crop_batch(crops) -> CropBatch:
    if isinstance(crops, ObjectCrop):
        crops = [crops]
    return CropBatch.from_crops(list(crops))


def d_object(member: ConvDiscriminator, crops) -> np.ndarray:
    cb = _crop_batch(crops)
    with torch.no_grad():
        out = member(torch.cat([cb.image, cb.mask, cb.guidance, cb.shape], dim=1))
    return out.numpy()


def d_object_semantic(member: SemanticDiscriminator, frozen: FrozenVisionEncoder,
                      crops) -> np.ndarray:
    cb = _crop_batch(crops)
    with torch.no_grad():
        x = torch.cat([cb.image, cb.mask, cb.guidance, cb.shape], dim=1)
        out = member(x, frozen.embed(cb.image))
    return out.numpy()
