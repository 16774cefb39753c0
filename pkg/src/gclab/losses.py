"""Training objective: non-saturating adversarial terms per enabled
discriminator plus a 4-scale perceptual reconstruction loss.

Adversarial losses use the softplus form: the discriminator minimizes
softplus(-real) + softplus(fake), the generator minimizes
softplus(-fake). The perceptual loss is the sum over scales of the mean
absolute difference between frozen feature maps (mean within a scale so
the value is resolution-independent).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import NumericError
from .generator import LRELU_SLOPE, seeded_init_

PERCEPTUAL_SCALES = 4


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        t = x
    else:
        t = torch.as_tensor(np.asarray(x, dtype=np.float64))
    if not torch.isfinite(t).all():
        raise NumericError("adversarial loss received non-finite logits")
    return t


def adv_d_loss(real_logit, fake_logit) -> torch.Tensor:
    """Mean softplus(-real) + mean softplus(fake)."""
    real = _as_tensor(real_logit)
    fake = _as_tensor(fake_logit)
    return nn.functional.softplus(-real).mean() + nn.functional.softplus(fake).mean()


def adv_g_loss(fake_logit) -> torch.Tensor:
    """Mean softplus(-fake): the non-saturating generator term."""
    return nn.functional.softplus(-_as_tensor(fake_logit)).mean()


def r1_penalty(real_logits: torch.Tensor, real_image: torch.Tensor) -> torch.Tensor:
    """Gradient penalty on real inputs. Off by default; stability aid only."""
    (grad,) = torch.autograd.grad(
        real_logits.sum(), real_image, create_graph=True
    )
    return grad.pow(2).sum(dim=(1, 2, 3)).mean() / 2.0


class PerceptualExtractor(nn.Module):
    """Frozen 4-scale feature pyramid.

    kind 'high' uses dilated convolutions in the later stages for a wide
    receptive field; 'standard' is a plain strided pyramid. Weights are
    deterministic from the seed; a pretrained state_dict can be loaded
    on top for full-scale runs.
    """

    def __init__(self, kind: str = "high", width: int = 24):
        super().__init__()
        if kind not in ("high", "standard"):
            raise ValueError(f"unknown perceptual extractor kind {kind!r}")
        self.kind = kind
        self.tag = f"perc-{kind}"
        w = width
        if kind == "high":
            dilations = (1, 1, 2, 4)
            strides = (2, 2, 1, 1)
        else:
            dilations = (1, 1, 1, 1)
            strides = (2, 2, 2, 2)
        chans = [3, w, 2 * w, 4 * w, 4 * w]
        self.convs = nn.ModuleList(
            nn.Conv2d(chans[i], chans[i + 1], 3, stride=strides[i],
                      padding=dilations[i], dilation=dilations[i])
            for i in range(PERCEPTUAL_SCALES)
        )

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        for conv in self.convs:
            x = nn.functional.leaky_relu(conv(x), LRELU_SLOPE)
            feats.append(x)
        return feats


def create_perceptual_extractor(seed: int = 1234, kind: str = "high") -> PerceptualExtractor:
    module = PerceptualExtractor(kind=kind)
    seeded_init_(module, seed)
    module.requires_grad_(False)
    module.eval()
    return module


def perceptual_loss(generated, target, extractor) -> torch.Tensor:
    """Sum over scales of mean |feature difference|; zero iff inputs equal
    (for injective-enough extractors it is a pseudometric either way)."""
    gen_t = generated if isinstance(generated, torch.Tensor) else torch.as_tensor(
        np.asarray(generated, dtype=np.float32)
    )
    tgt_t = target if isinstance(target, torch.Tensor) else torch.as_tensor(
        np.asarray(target, dtype=np.float32)
    )
    if gen_t.shape != tgt_t.shape:
        raise ValueError(f"shape mismatch: {tuple(gen_t.shape)} vs {tuple(tgt_t.shape)}")
    if gen_t.ndim == 3:
        gen_t, tgt_t = gen_t[None], tgt_t[None]
    feats_gen = extractor(gen_t)
    feats_tgt = extractor(tgt_t)
    total = gen_t.new_zeros(())
    for fg, ft in zip(feats_gen, feats_tgt):
        total = total + (fg - ft).abs().mean()
    return total


@dataclass(frozen=True)
class LossWeights:
    rec: float = 1.0
    adv: dict = field(default_factory=dict)  # per-member, default 1.0
    r1_gamma: float = 0.0                    # 0 disables the R1 term

    def adv_weight(self, name: str) -> float:
        return float(self.adv.get(name, 1.0))


@dataclass
class LossReport:
    d_real: dict[str, float] = field(default_factory=dict)
    d_fake: dict[str, float] = field(default_factory=dict)
    d_adv: dict[str, float] = field(default_factory=dict)
    g_adv: dict[str, float] = field(default_factory=dict)
    perceptual: float = 0.0
    g_total: float = 0.0
    d_total: float = 0.0
    object_terms_skipped: bool = False

    def as_dict(self) -> dict:
        return {
            "d_adv": dict(self.d_adv),
            "g_adv": dict(self.g_adv),
            "d_real_logit": dict(self.d_real),
            "d_fake_logit": dict(self.d_fake),
            "perceptual": self.perceptual,
            "g_total": self.g_total,
            "d_total": self.d_total,
            "object_terms_skipped": self.object_terms_skipped,
        }


def total_losses(
    ensemble,
    fake_bundle: tuple,
    real_bundle: tuple,
    crops: tuple | None,
    extractor,
    weights: LossWeights | None = None,
) -> LossReport:
    """Evaluate the full objective for reporting (no gradients).

    Bundles are (image, mask, guidance) tensors; crops is
    (real_crop_batch, fake_crop_batch) or None. Object members
    contribute zero and set the skipped flag when crops is None.
    """
    weights = weights or LossWeights()
    fake_img, mask, guidance = fake_bundle
    real_img = real_bundle[0]
    report = LossReport()
    g_total = 0.0
    d_total = 0.0
    with torch.no_grad():
        for name in ensemble.enabled_names():
            is_object = name.startswith("object")
            if is_object and crops is None:
                report.object_terms_skipped = True
                continue
            if is_object:
                real_crops, fake_crops = crops
                real_logit = ensemble.run(name, crop=real_crops)
                fake_logit = ensemble.run(name, crop=fake_crops)
            else:
                real_logit = ensemble.run(name, image=real_img, mask=mask, guidance=guidance)
                fake_logit = ensemble.run(name, image=fake_img, mask=mask, guidance=guidance)
            w = weights.adv_weight(name)
            d_term = float(adv_d_loss(real_logit, fake_logit))
            g_term = float(adv_g_loss(fake_logit))
            report.d_real[name] = float(real_logit.mean())
            report.d_fake[name] = float(fake_logit.mean())
            report.d_adv[name] = w * d_term
            report.g_adv[name] = w * g_term
            d_total += w * d_term
            g_total += w * g_term
        rec = float(perceptual_loss(fake_img, real_img, extractor)) if weights.rec else 0.0
    report.perceptual = rec
    report.g_total = g_total + weights.rec * rec
    report.d_total = d_total
    for label, value in (("g_total", report.g_total), ("d_total", report.d_total)):
        if not np.isfinite(value):
            raise NumericError(f"{label} is non-finite")
    return report
