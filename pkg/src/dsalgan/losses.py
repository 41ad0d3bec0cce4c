"""Loss terms for the denoising GAN, the saliency GAN and both discriminators.

All functions take torch tensors and return a 0-d tensor so they can be
differentiated. Probabilities are clamped to ``[eps, 1 - eps]`` before any log;
the logit form of the BCE works in log space and needs no clamp.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import torch
import torch.nn.functional as F

EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    w1: float = 1e-3  # denoising adversarial term
    w2: float = 5e-3  # saliency adversarial term
    w3: float = 1e-1  # cycle term
    eps: float = EPS

    def __post_init__(self):
        for name in ("w1", "w2", "w3"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")
        if not 0 < self.eps < 1e-3:
            raise ValueError(f"eps must be in (0, 1e-3), got {self.eps}")


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def _per_sample_l2(a: torch.Tensor, b: torch.Tensor, squared: bool) -> torch.Tensor:
    diff = (a - b).reshape(a.shape[0], -1)
    if squared:
        return diff.pow(2).mean(dim=1)
    return torch.linalg.vector_norm(diff, dim=1)


def denoise_content_loss(pred: torch.Tensor, target: torch.Tensor, squared: bool = False) -> torch.Tensor:
    """Batch mean of the per-sample L2 norm of ``pred - target``.

    With ``squared=True`` it is the mean squared error instead.
    """
    _check_same_shape(pred, target, "content loss")
    return _per_sample_l2(pred, target, squared).mean()


def cycle_loss(reconstructed: torch.Tensor, denoised: torch.Tensor, squared: bool = False) -> torch.Tensor:
    _check_same_shape(reconstructed, denoised, "cycle loss")
    return _per_sample_l2(reconstructed, denoised, squared).mean()


def adversarial_gen_loss(d_scores: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Non-saturating generator loss, mean of ``-log D(fake)``."""
    return -torch.log(d_scores.clamp(eps, 1.0 - eps)).mean()


def saliency_bce_loss(pred: torch.Tensor, target: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Binary cross entropy averaged over pixels and samples; target must be binary."""
    _check_same_shape(pred, target, "BCE loss")
    if not torch.all((target == 0) | (target == 1)):
        raise ValueError("BCE target must contain only 0 and 1")
    p = pred.clamp(eps, 1.0 - eps)
    return -(target * torch.log(p) + (1 - target) * torch.log1p(-p)).mean()


def saliency_bce_with_logits(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """The same BCE computed from pre-sigmoid scores.

    No clamp is needed in log space, so the gradient stays ``sigmoid(l) - z``
    even when the map saturates; the clamped form has zero gradient there.
    """
    _check_same_shape(logits, target, "BCE loss")
    if not torch.all((target == 0) | (target == 1)):
        raise ValueError("BCE target must contain only 0 and 1")
    return F.binary_cross_entropy_with_logits(logits, target)


def discriminator_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    real = real_scores.clamp(eps, 1.0 - eps)
    fake = fake_scores.clamp(eps, 1.0 - eps)
    return (-torch.log(real)).mean() + (-torch.log1p(-fake)).mean()


def total_denoise_loss(content, adversarial, w: LossWeights):
    return content + w.w1 * adversarial


def total_sod_loss(bce, adversarial, cyclic, w: LossWeights):
    return bce + w.w2 * adversarial + w.w3 * cyclic


@dataclass
class LossReport:
    """Scalar loss values for one training step; terms a phase does not use stay NaN."""

    phase: str = ""
    step: int = 0
    batch_size: int = 0
    content: float = math.nan
    adv_denoise: float = math.nan
    total_denoise: float = math.nan
    bce: float = math.nan
    adv_sod: float = math.nan
    cyclic: float = math.nan
    total_sod: float = math.nan
    d1: float = math.nan
    d2: float = math.nan
    w1: float = math.nan
    w2: float = math.nan
    w3: float = math.nan

    TERMS = (
        "content", "adv_denoise", "total_denoise", "bce", "adv_sod",
        "cyclic", "total_sod", "d1", "d2",
    )

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_row(self) -> dict:
        return asdict(self)

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, t) for t in self.TERMS)

    def check(self, rtol: float = 1e-6) -> None:
        """Raise if a used term is non-finite or a total drifts from its weighted sum."""
        for term in self.TERMS:
            value = getattr(self, term)
            if value is None or (not math.isnan(value) and not math.isfinite(value)):
                raise FloatingPointError(f"{term} is not finite: {value}")
        if not math.isnan(self.total_denoise):
            expected = self.content + self.w1 * self.adv_denoise
            _check_total("total_denoise", self.total_denoise, expected, rtol)
        if not math.isnan(self.total_sod):
            expected = self.bce + self.w2 * self.adv_sod + self.w3 * self.cyclic
            _check_total("total_sod", self.total_sod, expected, rtol)


def _check_total(name: str, total: float, expected: float, rtol: float) -> None:
    if abs(total - expected) > rtol * max(abs(expected), 1e-12):
        raise AssertionError(f"{name}={total!r} differs from weighted sum {expected!r}")
