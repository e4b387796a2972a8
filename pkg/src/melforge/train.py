"""Training loop for the conditional score estimator.

Each step draws a segment batch, per-item times t ~ U(t_min, 1) and noise
eps ~ N(0, I), forms x_t by the closed-form forward marginal, and regresses
sigma_t * S + eps to zero under the summed-square loss. All randomness comes
from one seeded numpy generator, so (seed, config, data) fully determine the
trajectory, including saved checkpoints.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import TrainingConfig
from .data import ManifestEntry, load_batch
from .diffusion import NoiseSchedule
from .dsp import NormalizationStats
from .errors import ConfigError, DivergenceError
from .model import ScoreNet, UNetConfig, build_score_net, save_checkpoint
from .optim import AdamState, adam_step
from .textcond import PhoneMelDict

log = logging.getLogger(__name__)


def torch_loss(
    model: torch.nn.Module,
    sched: NoiseSchedule,
    x0: torch.Tensor,
    y: torch.Tensor,
    mu: torch.Tensor,
    t: np.ndarray,
    eps: torch.Tensor,
) -> torch.Tensor:
    """Differentiable mirror of the score-matching loss.

    mean over items of ||sigma_t * S(x_t, t, y, mu) + eps||^2 with x_t formed
    in-graph; schedule coefficients enter as constants.
    """
    rho = torch.as_tensor(np.asarray(sched.rho_coeff(t)), dtype=x0.dtype)[:, None, None]
    sig = torch.as_tensor(np.asarray(sched.sigma(t)), dtype=x0.dtype)[:, None, None]
    x_t = rho * x0 + sig * eps
    t_tensor = torch.as_tensor(t, dtype=x0.dtype)
    s = model(x_t, t_tensor, y, mu)
    residual = sig * s + eps
    return residual.pow(2).sum(dim=(-2, -1)).mean()


def model_backward(
    model: torch.nn.Module,
    sched: NoiseSchedule,
    x0: torch.Tensor,
    y: torch.Tensor,
    mu: torch.Tensor,
    t: np.ndarray,
    eps: torch.Tensor,
) -> tuple[float, dict[str, torch.Tensor]]:
    """Loss value and reverse-mode gradients for every named parameter."""
    loss = torch_loss(model, sched, x0, y, mu, t, eps)
    if not torch.isfinite(loss):
        raise DivergenceError(f"non-finite training loss {loss.item()}")
    params = dict(model.named_parameters())
    grads = torch.autograd.grad(loss, list(params.values()), allow_unused=False)
    return float(loss.item()), dict(zip(params.keys(), grads))


@dataclass
class TrainResult:
    checkpoint_path: Path
    log_path: Path
    final_loss: float
    steps: int


def train(
    model_config: UNetConfig,
    entries: list[ManifestEntry],
    stats: NormalizationStats,
    sched: NoiseSchedule,
    training: TrainingConfig,
    out_dir: str | Path,
    seed: int,
    phone_dict: PhoneMelDict | None = None,
    hop_seconds: float | None = None,
    resume_model: ScoreNet | None = None,
    resume_adam: dict | None = None,
    start_epoch: int = 0,
) -> TrainResult:
    """Run the training loop, checkpointing per epoch.

    phone_dict None means no-text mode: the mu stream is all zeros. On
    divergence the last per-epoch checkpoint is left in place and a
    DivergenceError is raised.
    """
    if not entries:
        raise ConfigError("training dataset is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    model = resume_model if resume_model is not None else build_score_net(model_config, seed)
    adam = AdamState(lr=training.lr, beta1=training.adam_beta1, beta2=training.adam_beta2)
    if resume_adam is not None:
        params = dict(model.named_parameters())
        adam.step = resume_adam["step"]
        adam.m = {k: v.to(params[k].dtype) for k, v in resume_adam["m"].items()}
        adam.v = {k: v.to(params[k].dtype) for k, v in resume_adam["v"].items()}

    rng = np.random.default_rng([seed, start_epoch, 0x6D656C66])
    params = dict(model.named_parameters())
    log_path = out_dir / "training_log.csv"
    mode = "a" if start_epoch > 0 and log_path.exists() else "w"
    final_path = out_dir / "checkpoint.dmse"
    t0 = time.time()
    global_step = start_epoch * training.steps_per_epoch
    last_loss = float("nan")

    with open(log_path, mode, newline="") as log_file:
        writer = csv.writer(log_file)
        if mode == "w":
            writer.writerow(["step", "epoch", "loss", "wall_time"])
        for epoch in range(start_epoch, training.epochs):
            for _ in range(training.steps_per_epoch):
                batch = load_batch(
                    entries,
                    training.batch_size,
                    training.segment_frames,
                    rng,
                    stats,
                    phone_dict=phone_dict,
                    hop_seconds=hop_seconds,
                )
                t = rng.uniform(sched.t_min, 1.0, size=training.batch_size)
                eps = rng.standard_normal(batch.x0.shape)
                x0_t = torch.from_numpy(batch.x0.astype(np.float32))
                y_t = torch.from_numpy(batch.y.astype(np.float32))
                mu_t = torch.from_numpy(batch.mu.astype(np.float32))
                eps_t = torch.from_numpy(eps.astype(np.float32))
                try:
                    loss_value, grads = model_backward(model, sched, x0_t, y_t, mu_t, t, eps_t)
                except DivergenceError:
                    log.error(
                        "training diverged at step %d; last good checkpoint: %s",
                        global_step,
                        final_path if final_path.exists() else "none",
                    )
                    raise
                adam_step(params, grads, adam)
                global_step += 1
                last_loss = loss_value
                writer.writerow([global_step, epoch, f"{loss_value:.8g}", f"{time.time() - t0:.3f}"])
            meta = {
                "epoch": epoch + 1,
                "global_step": global_step,
                "seed": seed,
                "text_conditioning": phone_dict is not None,
                "schedule": {"beta0": sched.beta0, "beta1": sched.beta1, "t_min": sched.t_min},
                "norm_stats": {"mean": stats.mean, "scale": stats.scale},
            }
            save_checkpoint(out_dir / f"checkpoint_epoch{epoch + 1}.dmse", model, model_config, meta, adam)
            save_checkpoint(final_path, model, model_config, meta, adam)
            log.info("epoch %d done, step %d, loss %.6g", epoch + 1, global_step, last_loss)

    return TrainResult(final_path, log_path, last_loss, global_step)
