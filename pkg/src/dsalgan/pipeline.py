"""The five-network bundle and numpy-facing inference (noisy image -> denoised -> saliency)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .nets import (
    NetworkParams,
    NetworkSpec,
    build_denoiser_spec,
    build_discriminator_spec,
    build_reverse_generator_spec,
    build_saliency_generator_spec,
    forward,
    init_params,
)

NET_ORDER = ("G1", "D1", "G2", "D2", "G3")


def to_tensor(images: np.ndarray) -> torch.Tensor:
    """``(N, H, W, C)`` or ``(N, H, W)`` array -> ``(N, C, H, W)`` float32 tensor."""
    a = np.asarray(images, dtype=np.float32)
    if a.ndim == 3:
        a = a[..., None]
    return torch.from_numpy(np.ascontiguousarray(a.transpose(0, 3, 1, 2)))


def to_numpy(t: torch.Tensor) -> np.ndarray:
    """``(N, C, H, W)`` tensor -> ``(N, H, W, C)`` array, with single channels squeezed."""
    a = t.detach().cpu().numpy().transpose(0, 2, 3, 1)
    return a[..., 0] if a.shape[-1] == 1 else a


@dataclass
class Models:
    specs: dict[str, NetworkSpec]
    params: dict[str, NetworkParams]

    def __call__(self, name: str, x: torch.Tensor, logits: bool = False) -> torch.Tensor:
        return forward(self.specs[name], self.params[name], x, logits)

    def spec_hashes(self) -> dict[str, str]:
        return {name: spec.spec_hash() for name, spec in self.specs.items()}

    def state_dicts(self) -> dict[str, dict[str, torch.Tensor]]:
        return {name: p.state_dict() for name, p in self.params.items()}

    def denoise(self, noisy: np.ndarray, batch_size: int = 32) -> np.ndarray:
        return self._map(noisy, batch_size, lambda x: self("G1", x))

    def saliency(self, noisy: np.ndarray, batch_size: int = 32) -> np.ndarray:
        return self._map(noisy, batch_size, lambda x: self("G2", self("G1", x)))

    def denoise_and_saliency(self, noisy: np.ndarray, batch_size: int = 32):
        outs, maps = [], []
        with torch.no_grad():
            for start in range(0, len(noisy), batch_size):
                y = self("G1", to_tensor(noisy[start : start + batch_size]))
                outs.append(to_numpy(y))
                maps.append(to_numpy(self("G2", y)))
        return np.concatenate(outs), np.concatenate(maps)

    def _map(self, images, batch_size, fn) -> np.ndarray:
        out = []
        with torch.no_grad():
            for start in range(0, len(images), batch_size):
                out.append(to_numpy(fn(to_tensor(images[start : start + batch_size]))))
        return np.concatenate(out)


def build_specs(
    size: int,
    width_scale: float = 0.125,
    denoiser_depth: int = 5,
    denoiser_channels: int = 8,
    disc_width_scale: float = 1.0,
) -> dict[str, NetworkSpec]:
    return {
        "G1": build_denoiser_spec(denoiser_depth, denoiser_channels),
        "D1": build_discriminator_spec(3, size, disc_width_scale, "D1"),
        "G2": build_saliency_generator_spec(width_scale),
        "D2": build_discriminator_spec(4, size, disc_width_scale, "D2"),
        "G3": build_reverse_generator_spec(denoiser_depth, denoiser_channels),
    }


def build_models(specs: dict[str, NetworkSpec], init_seed: int = 0) -> Models:
    params = {name: init_params(specs[name], init_seed + i) for i, name in enumerate(NET_ORDER)}
    return Models(specs, params)


def models_from_config(net_cfg, size: int) -> Models:
    specs = build_specs(
        size,
        width_scale=net_cfg.width_scale,
        denoiser_depth=net_cfg.denoiser_depth,
        denoiser_channels=net_cfg.denoiser_channels,
        disc_width_scale=net_cfg.disc_width_scale,
    )
    return build_models(specs, net_cfg.init_seed)
