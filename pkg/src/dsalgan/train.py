"""Three-phase training: pretrain the denoising GAN, pretrain the saliency GAN, then finetune jointly.

All randomness during training (batch indices, noise levels, noise fields)
comes from one ``torch.Generator`` owned by :class:`TrainState`, and its state
is stored in every checkpoint, so a resumed run replays the same batches.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import losses as L
from .config import PHASES, ConfigError, TrainConfig
from .data import SampleTriplet, stack_samples
from .nets import NetworkSpec
from .pipeline import NET_ORDER, Models, to_tensor

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "dsalgan-checkpoint"
CHECKPOINT_VERSION = 1
ADAM_BETAS = (0.5, 0.999)


class NonFiniteLossError(FloatingPointError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainData:
    clean: torch.Tensor  # (N, 3, H, W)
    masks: torch.Tensor  # (N, 1, H, W), binary

    @classmethod
    def from_samples(cls, samples: Sequence[SampleTriplet]) -> "TrainData":
        clean, masks = stack_samples(samples)
        cl = torch.channels_last
        return cls(to_tensor(clean).contiguous(memory_format=cl), to_tensor(masks).contiguous(memory_format=cl))

    def __len__(self) -> int:
        return self.clean.shape[0]


@dataclass
class Batch:
    noisy: torch.Tensor
    clean: torch.Tensor
    mask: torch.Tensor
    indices: torch.Tensor
    sigmas: torch.Tensor


def sample_batch(data: TrainData, cfg: TrainConfig, gen: torch.Generator) -> Batch:
    idx = torch.randint(len(data), (cfg.batch_size,), generator=gen)
    levels = torch.tensor(cfg.sigmas, dtype=torch.float32)
    sig = levels[torch.randint(len(levels), (cfg.batch_size,), generator=gen)]
    clean = data.clean[idx]
    noise = torch.randn(clean.shape, generator=gen) * (sig / 255.0).view(-1, 1, 1, 1)
    return Batch((clean + noise).clamp(0.0, 1.0), clean, data.masks[idx], idx, sig)


def _trainable(phase: str, freeze_g1: bool) -> tuple[str, ...]:
    if phase == "pretrain_denoise":
        return ("G1", "D1")
    if phase == "pretrain_sod":
        return ("G2", "D2", "G3")
    return ("D1", "D2", "G2", "G3") if freeze_g1 else NET_ORDER


@dataclass
class TrainState:
    models: Models
    data: TrainData
    rng: torch.Generator
    phase: str | None = None
    step: int = 0
    completed: list[str] = field(default_factory=list)
    optims: dict[str, torch.optim.Optimizer] = field(default_factory=dict)
    counters: Counter = field(default_factory=Counter)
    history: list[L.LossReport] = field(default_factory=list)
    config_hash: str = ""
    dump_dir: Path | None = None
    _pending_optim: dict | None = None

    @classmethod
    def fresh(cls, models: Models, data: TrainData, seed: int = 0, **kw) -> "TrainState":
        return cls(models, data, torch.Generator().manual_seed(int(seed)), **kw)

    def begin_phase(self, cfg: TrainConfig) -> None:
        self.phase = cfg.phase
        self.step = 0
        self.optims = {}
        self._pending_optim = None
        self.ensure_optimizers(cfg)

    def ensure_optimizers(self, cfg: TrainConfig) -> None:
        if self.optims:
            return
        for name in _trainable(cfg.phase, cfg.freeze_g1):
            lr = cfg.disc_lr if name.startswith("D") else cfg.gen_lr
            if name in ("G2", "G3") and cfg.saliency_lr is not None:
                lr = cfg.saliency_lr
            self.optims[name] = torch.optim.Adam(self.models.params[name].parameters(), lr=lr, betas=ADAM_BETAS)
        if self._pending_optim:
            for name, state in self._pending_optim.items():
                if name in self.optims:
                    self.optims[name].load_state_dict(state)
            self._pending_optim = None

    def finish_phase(self) -> None:
        if self.phase not in self.completed:
            self.completed.append(self.phase)

    # -- checkpoints --------------------------------------------------------

    def checkpoint(self, config: dict | None = None) -> "Checkpoint":
        optim = {name: opt.state_dict() for name, opt in self.optims.items()}
        if self._pending_optim and not optim:
            optim = self._pending_optim
        return Checkpoint(
            phase=self.phase,
            step=self.step,
            completed=list(self.completed),
            specs=dict(self.models.specs),
            params=self.models.state_dicts(),
            optim=optim,
            rng=self.rng.get_state(),
            counters=dict(self.counters),
            config_hash=self.config_hash,
            config=config,
        )

    @classmethod
    def from_checkpoint(cls, ckpt: "Checkpoint", data: TrainData, **kw) -> "TrainState":
        models = ckpt.to_models()
        rng = torch.Generator()
        rng.set_state(ckpt.rng)
        return cls(
            models, data, rng,
            phase=ckpt.phase,
            step=ckpt.step,
            completed=list(ckpt.completed),
            counters=Counter(ckpt.counters),
            config_hash=ckpt.config_hash,
            _pending_optim=ckpt.optim or None,
            **kw,
        )


@dataclass
class Checkpoint:
    phase: str | None
    step: int
    completed: list[str]
    specs: dict[str, NetworkSpec]
    params: dict[str, dict[str, torch.Tensor]]
    optim: dict
    rng: torch.Tensor
    counters: dict
    config_hash: str = ""
    config: dict | None = None

    def to_models(self) -> Models:
        from .nets import init_params

        params = {}
        for name, spec in self.specs.items():
            p = init_params(spec, 0)
            p.load_state_dict(self.params[name])
            params[name] = p
        return Models(dict(self.specs), params)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "phase": self.phase,
            "step": self.step,
            "completed": list(self.completed),
            "specs": {name: spec.to_dict() for name, spec in self.specs.items()},
            "spec_hashes": {name: spec.spec_hash() for name, spec in self.specs.items()},
            "params": self.params,
            "optim": self.optim,
            "rng": self.rng,
            "counters": dict(self.counters),
            "config_hash": self.config_hash,
            "config": self.config,
        }
        tmp = path.with_suffix(path.suffix + ".tmp")
        torch.save(payload, tmp)
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path, specs: dict[str, NetworkSpec] | None = None) -> "Checkpoint":
        """Load a checkpoint; refuses files whose embedded spec hashes do not match.

        ``specs``, when given, must hash identically to the stored specs.
        """
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        try:
            payload = torch.load(path, map_location="cpu", weights_only=True)
        except Exception as exc:
            raise CheckpointError(f"{path}: not a readable checkpoint ({exc})") from exc
        if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        if payload["version"] != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {payload['version']}")
        stored = {name: NetworkSpec.from_dict(d) for name, d in payload["specs"].items()}
        for name, spec in stored.items():
            if spec.spec_hash() != payload["spec_hashes"][name]:
                raise CheckpointError(f"{path}: spec hash mismatch for {name} (corrupt file)")
            if specs is not None and name in specs and specs[name].spec_hash() != spec.spec_hash():
                raise CheckpointError(f"{path}: {name} was saved with a different network spec")
        return cls(
            phase=payload["phase"],
            step=payload["step"],
            completed=list(payload["completed"]),
            specs=stored,
            params=payload["params"],
            optim=payload["optim"],
            rng=payload["rng"],
            counters=payload["counters"],
            config_hash=payload["config_hash"],
            config=payload["config"],
        )


# ---------------------------------------------------------------------------
# steps


def _guard(state: TrainState, batch: Batch, **terms: torch.Tensor) -> None:
    for name, value in terms.items():
        if not torch.isfinite(value):
            where = ""
            if state.dump_dir is not None:
                state.dump_dir.mkdir(parents=True, exist_ok=True)
                dump = state.dump_dir / f"nonfinite_{state.phase}_{state.step}.npz"
                np.savez(dump, noisy=batch.noisy.numpy(), clean=batch.clean.numpy(),
                         mask=batch.mask.numpy(), indices=batch.indices.numpy())
                where = f"; batch dumped to {dump}"
            raise NonFiniteLossError(
                f"{name} is {value.item()} at {state.phase} step {state.step}, "
                f"batch indices {batch.indices.tolist()}{where}"
            )


def _update(state: TrainState, names: Sequence[str], loss: torch.Tensor, clip: float) -> None:
    names = [n for n in names if n in state.optims]
    if not names:
        return
    params = [p for n in names for p in state.models.params[n].parameters()]
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    for p, g in zip(params, grads):
        p.grad = torch.zeros_like(p) if g is None else g
    torch.nn.utils.clip_grad_norm_(params, clip)
    for n in names:
        state.optims[n].step()
        state.optims[n].zero_grad(set_to_none=True)
        state.counters[f"{n}_updates"] += 1


def _denoise_substep(state: TrainState, cfg: TrainConfig, batch: Batch, report: L.LossReport) -> None:
    m, w = state.models, cfg.weights
    for _ in range(cfg.d_steps_per_g):
        with torch.no_grad():
            fake = m("G1", batch.noisy)
        d1 = L.discriminator_loss(m("D1", batch.clean), m("D1", fake), w.eps)
        _guard(state, batch, d1=d1)
        _update(state, ["D1"], d1, cfg.clip_norm)
    denoised = m("G1", batch.noisy)
    content = L.denoise_content_loss(denoised, batch.clean, cfg.l2_squared)
    adv = L.adversarial_gen_loss(m("D1", denoised), w.eps)
    total = L.total_denoise_loss(content, adv, w)
    _guard(state, batch, content=content, adv_denoise=adv, total_denoise=total)
    _update(state, ["G1"], total, cfg.clip_norm)
    report.content, report.adv_denoise, report.total_denoise = content.item(), adv.item(), total.item()
    report.d1 = d1.item()


def _sod_substep(state: TrainState, cfg: TrainConfig, batch: Batch, report: L.LossReport) -> None:
    m, w = state.models, cfg.weights
    g1_trainable = cfg.phase == "joint" and not cfg.freeze_g1
    if g1_trainable:
        denoised = m("G1", batch.noisy)
    else:
        with torch.no_grad():
            denoised = m("G1", batch.noisy)
    cond = denoised.detach()
    for _ in range(cfg.d_steps_per_g):
        with torch.no_grad():
            fake = m("G2", cond)
        d2 = L.discriminator_loss(
            m("D2", torch.cat([batch.mask, cond], 1)), m("D2", torch.cat([fake, cond], 1)), w.eps
        )
        _guard(state, batch, d2=d2)
        _update(state, ["D2"], d2, cfg.clip_norm)
    logits = m("G2", denoised, logits=True)
    sal = torch.sigmoid(logits)
    bce = L.saliency_bce_with_logits(logits, batch.mask)
    adv = L.adversarial_gen_loss(m("D2", torch.cat([sal, denoised], 1)), w.eps)
    trained = ["G2", "G3"] + (["G1"] if g1_trainable else [])
    if w.w3 == 0:
        # the cycle term is reported but cannot move any weight
        with torch.no_grad():
            cyc = L.cycle_loss(m("G3", sal), denoised, cfg.l2_squared)
        trained.remove("G3")
    else:
        cyc = L.cycle_loss(m("G3", sal), denoised, cfg.l2_squared)
    total = L.total_sod_loss(bce, adv, cyc, w)
    _guard(state, batch, bce=bce, adv_sod=adv, cyclic=cyc, total_sod=total)
    _update(state, trained, total, cfg.clip_norm)
    report.bce, report.adv_sod, report.cyclic, report.total_sod = bce.item(), adv.item(), cyc.item(), total.item()
    report.d2 = d2.item()


def _new_report(state: TrainState, cfg: TrainConfig) -> L.LossReport:
    w = cfg.weights
    return L.LossReport(cfg.phase, state.step + 1, cfg.batch_size, w1=w.w1, w2=w.w2, w3=w.w3)


def _finish(state: TrainState, report: L.LossReport) -> L.LossReport:
    report.check()
    state.step += 1
    state.history.append(report)
    return report


def train_step_denoise(state: TrainState, cfg: TrainConfig, batch: Batch | None = None) -> L.LossReport:
    """``d_steps_per_g`` D1 updates (clean vs G1(noisy)), then one G1 update on content + w1 * adversarial."""
    if cfg.phase not in ("pretrain_denoise", "joint"):
        raise ConfigError(f"denoise step not allowed in phase {cfg.phase}")
    state.ensure_optimizers(cfg)
    batch = batch or sample_batch(state.data, cfg, state.rng)
    report = _new_report(state, cfg)
    _denoise_substep(state, cfg, batch, report)
    return _finish(state, report)


def train_step_sod(state: TrainState, cfg: TrainConfig, batch: Batch | None = None) -> L.LossReport:
    """D2 updates on (mask | image) vs (G2 map | image), then G2+G3 (and G1 when joint) on the SOD total."""
    if cfg.phase not in ("pretrain_sod", "joint"):
        raise ConfigError(f"SOD step not allowed in phase {cfg.phase}")
    state.ensure_optimizers(cfg)
    batch = batch or sample_batch(state.data, cfg, state.rng)
    report = _new_report(state, cfg)
    _sod_substep(state, cfg, batch, report)
    return _finish(state, report)


def train_step_joint(state: TrainState, cfg: TrainConfig, batch: Batch | None = None) -> L.LossReport:
    """A denoising sub-step followed by an SOD sub-step on the same batch."""
    if cfg.phase != "joint":
        raise ConfigError(f"joint step not allowed in phase {cfg.phase}")
    state.ensure_optimizers(cfg)
    batch = batch or sample_batch(state.data, cfg, state.rng)
    report = _new_report(state, cfg)
    _denoise_substep(state, cfg, batch, report)
    _sod_substep(state, cfg, batch, report)
    return _finish(state, report)


STEP_FUNCTIONS = {
    "pretrain_denoise": train_step_denoise,
    "pretrain_sod": train_step_sod,
    "joint": train_step_joint,
}


# ---------------------------------------------------------------------------
# schedule


def append_log(path, reports: Sequence[L.LossReport]) -> None:
    path = Path(path)
    new = not path.exists()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=L.LossReport.columns())
        if new:
            writer.writeheader()
        for r in reports:
            writer.writerow({k: ("" if isinstance(v, float) and v != v else v) for k, v in r.as_row().items()})


def run_schedule(
    configs: Sequence[TrainConfig],
    state: TrainState,
    checkpoint_dir=None,
    log_path=None,
    config_dict: dict | None = None,
) -> Checkpoint:
    """Run the phases in order and return the final checkpoint.

    A phase already listed in ``state.completed`` is skipped; a phase that the
    state is partway through (after a resume) continues from ``state.step``.
    The joint phase refuses to start unless both pretrain phases are complete.
    """
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None
    for cfg in configs:
        if cfg.phase in state.completed:
            logger.info("skipping %s: already complete", cfg.phase)
            continue
        if cfg.phase == "joint":
            missing = [p for p in PHASES[:2] if p not in state.completed]
            if missing:
                raise ConfigError(f"joint phase needs completed pretrain checkpoints; missing {missing}")
        if state.phase != cfg.phase:
            state.begin_phase(cfg)
        else:
            state.ensure_optimizers(cfg)
        step_fn = STEP_FUNCTIONS[cfg.phase]
        pending = []
        while state.step < cfg.steps:
            report = step_fn(state, cfg)
            pending.append(report)
            if state.step % 50 == 0 or state.step == cfg.steps:
                logger.info("%s step %d: %s", cfg.phase, state.step, _summary(report))
            if cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
                if log_path:
                    append_log(log_path, pending)
                    pending = []
                if ckpt_dir:
                    state.checkpoint(config_dict).save(ckpt_dir / f"{cfg.phase}_step{state.step:06d}.ckpt")
        if log_path and pending:
            append_log(log_path, pending)
        state.finish_phase()
        if ckpt_dir:
            state.checkpoint(config_dict).save(ckpt_dir / f"{cfg.phase}.ckpt")
    return state.checkpoint(config_dict)


def _summary(report: L.LossReport) -> str:
    return " ".join(f"{t}={getattr(report, t):.4g}" for t in L.LossReport.TERMS if getattr(report, t) == getattr(report, t))
