"""Training loop: window sampling, augmented views, Adam with an LR ramp."""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
import torch

from .audio import AudioBuffer
from .effects import EffectChainSpec
from .errors import ModelError, TrainingDivergedError
from .model import (
    CpcConfig,
    CpcModel,
    LossReport,
    batched_negative_indices,
    build_model,
    forward_logits,
    infonce_from_logits,
)
from .rng import RngStream
from .views import AugPlacement, ViewPair, make_views

# rng derivation namespaces under the training root seed
_NS_WINDOWS, _NS_VIEWS, _NS_NEGATIVES = 1, 2, 3


def lr_scale(epoch: int, ramp_epochs: int) -> float:
    """Learning-rate ramp: epoch e scales by (e+1)/ramp until the ramp ends."""
    if ramp_epochs <= 0:
        return 1.0
    return min(1.0, (epoch + 1) / ramp_epochs)


def sample_windows(
    corpus: Sequence[AudioBuffer], config: CpcConfig, rng: RngStream
) -> list[AudioBuffer]:
    """Draw a batch of fixed-length windows from random corpus positions."""
    window = config.window_samples
    eligible = [u for u in corpus if len(u) >= window]
    if not eligible:
        raise ModelError(f"no corpus utterance is at least {window} samples long")
    batch = []
    for i in range(config.batch_size):
        item_rng = rng.child(i)
        utt = eligible[item_rng.integer(0, len(eligible) - 1)]
        offset = item_rng.integer(0, len(utt) - window)
        batch.append(AudioBuffer(utt.samples[offset : offset + window], utt.sample_rate))
    return batch


def views_to_tensors(views: Sequence[ViewPair]) -> tuple[torch.Tensor, torch.Tensor]:
    past = np.stack([v.past.samples for v in views]).astype(np.float32)
    future = np.stack([v.future.samples for v in views]).astype(np.float32)
    return torch.from_numpy(past), torch.from_numpy(future)


def train_step(
    model: CpcModel,
    optimizer: torch.optim.Optimizer,
    views: Sequence[ViewPair],
    step_rng: RngStream,
    epoch: int,
) -> LossReport:
    """One forward/backward/update on a batch of view pairs."""
    cfg = model.config
    for group in optimizer.param_groups:
        group["lr"] = cfg.learning_rate * lr_scale(epoch, cfg.ramp_epochs)
    past, future = views_to_tensors(views)
    frames = cfg.frame_count(past.shape[1])
    t_count = frames - cfg.prediction_steps
    if t_count < 1:
        raise ModelError(f"{frames} frames too short for {cfg.prediction_steps} steps")
    neg_idx = torch.from_numpy(
        batched_negative_indices(
            len(views), frames, t_count, cfg.prediction_steps, cfg.negatives, step_rng
        )
    )
    pos_logits, neg_logits = forward_logits(model, past, future, neg_idx)
    loss, report = infonce_from_logits(pos_logits, neg_logits)
    if not math.isfinite(report.loss):
        raise TrainingDivergedError(f"loss {report.loss} at epoch {epoch}")
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return report


def train(
    config: CpcConfig,
    corpus: Sequence[AudioBuffer],
    chain_spec: EffectChainSpec,
    placement: AugPlacement,
    seed: int,
    steps: int,
    threads: int = 1,
    model: Optional[CpcModel] = None,
) -> tuple[CpcModel, list[LossReport]]:
    """Train for ``steps`` optimizer updates; returns the model and history.

    Fully deterministic under (config, corpus, chain_spec, placement, seed):
    torch compute is pinned to one thread and all sampling runs on derived
    rng paths, so ``threads`` only changes how view construction is
    scheduled, never the result.
    """
    torch.set_num_threads(1)
    rng = RngStream(seed)
    if model is None:
        model = build_model(config, seed)
    model.train()
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, betas=config.adam_betas
    )
    history: list[LossReport] = []
    for step in range(steps):
        epoch = step // config.steps_per_epoch
        batch = sample_windows(corpus, config, rng.child(_NS_WINDOWS, step))
        views = make_views(batch, placement, chain_spec, rng.child(_NS_VIEWS, step), threads)
        report = train_step(model, optimizer, views, rng.child(_NS_NEGATIVES, step), epoch)
        history.append(report)
    return model, history
