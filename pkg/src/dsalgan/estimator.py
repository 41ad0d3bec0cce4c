"""scikit-learn style wrappers: a Gaussian-noise transformer and the full denoise + saliency model."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import evaluation
from .config import PHASES, RunConfig, from_dict
from .pipeline import Models, models_from_config
from .train import Checkpoint, TrainData, TrainState, run_schedule
from .validation import check_images, check_masks
from .data import SampleTriplet


class GaussianNoise(TransformerMixin, BaseEstimator):
    """Corrupt image batches with clipped Gaussian noise of std ``sigma / 255``.

    Image ``i`` of a batch always gets the same noise field for a given
    ``random_state``, whatever the sigma.
    """

    def __init__(self, sigma: float = 50.0, random_state: int = 0):
        self.sigma = sigma
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_images(X, multiple_of=0, square=False)
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        self.image_shape_ = X.shape[1:]
        return self

    def transform(self, X):
        check_is_fitted(self, "image_shape_")
        X = check_images(X, multiple_of=0, square=False)
        return evaluation.corrupt_set(X, float(self.sigma), int(self.random_state))


class DSALGAN(BaseEstimator):
    """Denoising GAN feeding a saliency GAN with a cycle-consistency generator.

    ``fit(X, y)`` takes clean images ``X`` (N, H, W, 3) and binary masks ``y``
    (N, H, W); noisy inputs are synthesized on the fly at the ``sigmas`` levels.
    After fitting, ``transform`` denoises noisy images and ``predict_proba``
    returns saliency maps.
    """

    def __init__(
        self,
        width_scale: float = 0.125,
        disc_width_scale: float = 0.125,
        denoiser_depth: int = 5,
        denoiser_channels: int = 8,
        sigmas=(10.0, 30.0, 50.0, 80.0),
        steps=(500, 1000, 500),
        batch_size: int = 8,
        gen_lr: float = 1e-4,
        disc_lr: float = 1e-4,
        saliency_lr: float | None = None,
        d_steps_per_g: int = 1,
        w1: float = 1e-3,
        w2: float = 5e-3,
        w3: float = 1e-1,
        l2_squared: bool = False,
        freeze_g1: bool = False,
        clip_norm: float = 5.0,
        random_state: int = 0,
    ):
        self.width_scale = width_scale
        self.disc_width_scale = disc_width_scale
        self.denoiser_depth = denoiser_depth
        self.denoiser_channels = denoiser_channels
        self.sigmas = sigmas
        self.steps = steps
        self.batch_size = batch_size
        self.gen_lr = gen_lr
        self.disc_lr = disc_lr
        self.saliency_lr = saliency_lr
        self.d_steps_per_g = d_steps_per_g
        self.w1 = w1
        self.w2 = w2
        self.w3 = w3
        self.l2_squared = l2_squared
        self.freeze_g1 = freeze_g1
        self.clip_norm = clip_norm
        self.random_state = random_state

    def run_config(self, size: int) -> RunConfig:
        seed = int(self.random_state)
        return from_dict({
            "data": {"size": size, "sigmas": list(self.sigmas), "seed": seed},
            "net": {
                "width_scale": self.width_scale,
                "disc_width_scale": self.disc_width_scale,
                "denoiser_depth": self.denoiser_depth,
                "denoiser_channels": self.denoiser_channels,
                "init_seed": seed,
            },
            "loss": {"w1": self.w1, "w2": self.w2, "w3": self.w3, "l2_squared": self.l2_squared},
            "train": {
                "steps": dict(zip(PHASES, (int(s) for s in self.steps))),
                "batch_size": self.batch_size,
                "gen_lr": self.gen_lr,
                "disc_lr": self.disc_lr,
                "saliency_lr": self.saliency_lr,
                "d_steps_per_g": self.d_steps_per_g,
                "seed": seed,
                "clip_norm": self.clip_norm,
                "freeze_g1": self.freeze_g1,
            },
        })

    def fit(self, X, y, checkpoint_dir=None):
        X = check_images(X)
        y = check_masks(y, n=X.shape[0], size=X.shape[1:3])
        if len(self.steps) != len(PHASES):
            raise ValueError(f"steps needs one count per phase {PHASES}, got {self.steps}")
        cfg = self.run_config(X.shape[1])
        samples = [SampleTriplet(clean=c, mask=m) for c, m in zip(X, y)]
        state = TrainState.fresh(models_from_config(cfg.net, X.shape[1]), TrainData.from_samples(samples), cfg.train.seed)
        state.config_hash = cfg.config_hash()
        self.checkpoint_ = run_schedule(
            [cfg.phase_config(p) for p in PHASES], state, checkpoint_dir, config_dict=cfg.to_dict()
        )
        self.models_ = state.models
        self.history_ = state.history
        self.image_size_ = X.shape[1]
        return self

    @classmethod
    def from_checkpoint(cls, path) -> "DSALGAN":
        """Rebuild a fitted estimator from a checkpoint file (inference only)."""
        ckpt = Checkpoint.load(path)
        est = cls()
        if ckpt.config:
            net, loss, train = ckpt.config["net"], ckpt.config["loss"], ckpt.config["train"]
            est.set_params(
                width_scale=net["width_scale"], disc_width_scale=net["disc_width_scale"],
                denoiser_depth=net["denoiser_depth"], denoiser_channels=net["denoiser_channels"],
                w1=loss["w1"], w2=loss["w2"], w3=loss["w3"], batch_size=train["batch_size"],
                random_state=train["seed"],
            )
        est.checkpoint_ = ckpt
        est.models_ = ckpt.to_models()
        est.history_ = []
        est.image_size_ = ckpt.specs["D1"].input_size
        return est

    def _check_input(self, X) -> np.ndarray:
        check_is_fitted(self, "models_")
        return check_images(X)

    def transform(self, X) -> np.ndarray:
        """Denoise noisy images with G1."""
        X = self._check_input(X)
        return self.models_.denoise(X)

    def predict_proba(self, X) -> np.ndarray:
        """Saliency maps G2(G1(X)) of shape (N, H, W), values in (0, 1)."""
        X = self._check_input(X)
        return self.models_.saliency(X)

    def predict(self, X, threshold: float = 0.5) -> np.ndarray:
        return (self.predict_proba(X) >= threshold).astype(np.float32)

    def score(self, X, y) -> float:
        """Mean pixel AUC over images whose mask contains both classes."""
        maps = self.predict_proba(X)
        y = check_masks(y, n=maps.shape[0], size=maps.shape[1:])
        return evaluation.summarize(list(maps), list(y), "score", 0).auc

    @property
    def models(self) -> Models:
        check_is_fitted(self, "models_")
        return self.models_
