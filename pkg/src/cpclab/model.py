"""Desk-scale CPC: conv encoder, recurrent context, future-step predictors,
the contrastive loss with in-batch negatives, and gradient verification."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import torch
from torch import nn

from .audio import AudioBuffer
from .errors import ModelError
from .rng import RngStream


@dataclass(frozen=True)
class CpcConfig:
    """Architecture and optimization knobs.

    Defaults follow the full-scale recipe (256-dim encoder over 160-sample
    hops, 2-layer LSTM, 12 prediction steps, 128 negatives, multi-head
    predictor, Adam 2e-4 with a 10-epoch learning-rate ramp); ``tiny()`` is
    the CI-sized profile.
    """

    encoder_kernels: tuple[int, ...] = (10, 8, 4, 4, 4)
    encoder_strides: tuple[int, ...] = (5, 4, 2, 2, 2)
    encoder_dim: int = 256
    context_layers: int = 2
    context_dim: int = 256
    prediction_steps: int = 12
    negatives: int = 128
    predictor_mode: str = "multi_head"  # or "per_step"
    attention_heads: int = 8
    ff_mult: int = 2
    norm_eps: float = 1e-5
    sample_rate: int = 16000
    window_seconds: float = 1.0
    batch_size: int = 8
    learning_rate: float = 2e-4
    adam_betas: tuple[float, float] = (0.9, 0.999)
    ramp_epochs: int = 10
    steps_per_epoch: int = 200

    def __post_init__(self):
        if len(self.encoder_kernels) != len(self.encoder_strides):
            raise ModelError("encoder kernels and strides must have equal length")
        if not 1 <= self.context_layers <= 3:
            raise ModelError(f"context_layers must be 1..3, got {self.context_layers}")
        if self.prediction_steps < 1:
            raise ModelError("prediction_steps must be >= 1")
        if self.negatives < 1:
            raise ModelError("negatives must be >= 1")
        if self.predictor_mode not in ("multi_head", "per_step"):
            raise ModelError(f"unknown predictor_mode {self.predictor_mode!r}")
        if self.predictor_mode == "multi_head" and self.context_dim % self.attention_heads:
            raise ModelError("context_dim must be divisible by attention_heads")

    @classmethod
    def tiny(cls, **overrides) -> "CpcConfig":
        base = dict(
            encoder_dim=32,
            context_dim=32,
            prediction_steps=4,
            negatives=16,
            attention_heads=4,
        )
        base.update(overrides)
        return cls(**base)

    @property
    def frame_hop(self) -> int:
        hop = 1
        for s in self.encoder_strides:
            hop *= s
        return hop

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.frame_hop

    @property
    def window_samples(self) -> int:
        return int(round(self.window_seconds * self.sample_rate))

    @property
    def receptive_field(self) -> int:
        rf, jump = 1, 1
        for k, s in zip(self.encoder_kernels, self.encoder_strides):
            rf += (k - 1) * jump
            jump *= s
        return rf

    def frame_count(self, n_samples: int) -> int:
        """Encoder output length via the strided-conv floor arithmetic."""
        length = n_samples
        for k, s in zip(self.encoder_kernels, self.encoder_strides):
            pad = (k - s + 1) // 2
            length = (length + 2 * pad - k) // s + 1
        return length

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "CpcConfig":
        doc = dict(doc)
        for key in ("encoder_kernels", "encoder_strides", "adam_betas"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


@dataclass(frozen=True)
class LossReport:
    """Contrastive loss value plus per-step ranking accuracy."""

    loss: float
    per_step_accuracy: tuple[float, ...]


@dataclass(frozen=True)
class FeatureSequence:
    """Time-major frame embeddings with their frame rate."""

    frames: np.ndarray  # (T, D) float32
    frame_rate: float
    level: str  # "z" (encoder) or "c" (context)

    def __post_init__(self):
        arr = np.asarray(self.frames, dtype=np.float32)
        if arr.ndim != 2:
            raise ModelError(f"frames must be (T, D), got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ModelError("non-finite feature frames")
        arr.setflags(write=False)
        object.__setattr__(self, "frames", arr)
        if self.level not in ("z", "c"):
            raise ModelError(f"level must be 'z' or 'c', got {self.level!r}")


class ChannelNorm(nn.Module):
    """Normalize each time step across channels, with per-channel affine.

    Equivalent to (x - mean_c) / sqrt(var_c + eps) * w + b per position;
    routed through the fused layer-norm kernel on a transposed view.
    """

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.channels = channels
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = torch.nn.functional.layer_norm(
            x.transpose(1, 2), (self.channels,), self.weight, self.bias, self.eps
        )
        return y.transpose(1, 2)


class ConvEncoder(nn.Module):
    """Strided 1-D convolutions with channel normalization and ReLU."""

    def __init__(self, config: CpcConfig):
        super().__init__()
        layers = []
        in_ch = 1
        for k, s in zip(config.encoder_kernels, config.encoder_strides):
            pad = (k - s + 1) // 2
            layers += [
                nn.Conv1d(in_ch, config.encoder_dim, k, stride=s, padding=pad),
                ChannelNorm(config.encoder_dim, config.norm_eps),
                nn.ReLU(),
            ]
            in_ch = config.encoder_dim
        self.net = nn.Sequential(*layers)

    def forward(self, waves: torch.Tensor) -> torch.Tensor:
        # (B, S) -> (B, T, D)
        return self.net(waves.unsqueeze(1)).transpose(1, 2)


class CausalSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, c = x.shape
        head_dim = c // self.heads
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(b, t, self.heads, head_dim).transpose(1, 2)
        k = k.view(b, t, self.heads, head_dim).transpose(1, 2)
        v = v.view(b, t, self.heads, head_dim).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(head_dim)
        mask = torch.triu(torch.ones(t, t, dtype=torch.bool, device=x.device), diagonal=1)
        scores = scores.masked_fill(mask, float("-inf"))
        out = torch.softmax(scores, dim=-1) @ v
        out = out.transpose(1, 2).reshape(b, t, c)
        return self.proj(out)


class MultiHeadPredictor(nn.Module):
    """One causal transformer layer shared by K linear future-step heads."""

    def __init__(self, config: CpcConfig):
        super().__init__()
        dim = config.context_dim
        self.steps = config.prediction_steps
        self.out_dim = config.encoder_dim
        self.ln_attn = nn.LayerNorm(dim)
        self.attn = CausalSelfAttention(dim, config.attention_heads)
        self.ln_ff = nn.LayerNorm(dim)
        self.ff = nn.Sequential(
            nn.Linear(dim, config.ff_mult * dim),
            nn.ReLU(),
            nn.Linear(config.ff_mult * dim, dim),
        )
        self.heads = nn.Linear(dim, self.steps * self.out_dim)

    def forward(self, c: torch.Tensor) -> torch.Tensor:
        h = c + self.attn(self.ln_attn(c))
        h = h + self.ff(self.ln_ff(h))
        b, t, _ = h.shape
        return self.heads(h).view(b, t, self.steps, self.out_dim)


class PerStepPredictor(nn.Module):
    """K independent linear predictors applied to each context vector."""

    def __init__(self, config: CpcConfig):
        super().__init__()
        self.steps = config.prediction_steps
        self.out_dim = config.encoder_dim
        self.heads = nn.Linear(config.context_dim, self.steps * self.out_dim)

    def forward(self, c: torch.Tensor) -> torch.Tensor:
        b, t, _ = c.shape
        return self.heads(c).view(b, t, self.steps, self.out_dim)


class CpcModel(nn.Module):
    """Encoder + causal context + predictor, glued by the config."""

    def __init__(self, config: CpcConfig):
        super().__init__()
        self.config = config
        self.encoder = ConvEncoder(config)
        self.context = nn.LSTM(
            config.encoder_dim,
            config.context_dim,
            num_layers=config.context_layers,
            batch_first=True,
        )
        if config.predictor_mode == "multi_head":
            self.predictor = MultiHeadPredictor(config)
        else:
            self.predictor = PerStepPredictor(config)

    def encode(self, waves: torch.Tensor) -> torch.Tensor:
        """Raw waves (B, S) to encoder frames z (B, T, D)."""
        if waves.dim() != 2:
            raise ModelError(f"waves must be (batch, samples), got {tuple(waves.shape)}")
        if self.config.frame_count(waves.shape[1]) < 1:
            raise ModelError(
                f"wave of {waves.shape[1]} samples shorter than the receptive field"
            )
        return self.encoder(waves)

    def contextualize(self, z: torch.Tensor) -> torch.Tensor:
        """Encoder frames to causal context c; c_t depends only on z_1..z_t."""
        out, _ = self.context(z)
        return out

    def predict(self, c: torch.Tensor) -> torch.Tensor:
        """Context frames to K future-step predictions (B, T, K, D)."""
        return self.predictor(c)


def build_model(config: CpcConfig, seed: int) -> CpcModel:
    """Construct a model with seed-fixed init; recurrent biases start at 0."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = CpcModel(config)
    with torch.no_grad():
        for name, param in model.context.named_parameters():
            if name.startswith("bias"):
                param.zero_()
    return model


# ---------------------------------------------------------------------------
# negatives and loss


def sample_negatives(
    future_z: torch.Tensor,
    item: int,
    t: int,
    k: int,
    n_negatives: int,
    rng: RngStream,
) -> torch.Tensor:
    """Uniform without-replacement draw of negative frames for one (t, k).

    Candidates are all future-view encoder frames in the batch except the
    positive frame z_{t+k} of the query item.
    """
    b, t_len, d = future_z.shape
    total = b * t_len
    if n_negatives > total - 1:
        raise ModelError(f"{n_negatives} negatives requested from {total - 1} candidates")
    pos = item * t_len + t + k
    if not 0 <= pos < total:
        raise ModelError(f"positive frame index {pos} out of range")
    keys = rng.np.random(total)
    keys[pos] = np.inf
    idx = np.sort(np.argpartition(keys, n_negatives - 1)[:n_negatives])
    return future_z.reshape(total, d)[torch.from_numpy(idx)]


def batched_negative_indices(
    batch: int, frames: int, t_count: int, steps: int, n_negatives: int, rng: RngStream
) -> np.ndarray:
    """Negative frame indices for every (item, t, step) tuple at once.

    Same draw semantics as :func:`sample_negatives` (uniform without
    replacement, positive excluded), shaped (batch, t_count, steps,
    n_negatives) into the flattened (batch * frames) future-frame pool.
    """
    total = batch * frames
    if n_negatives > total - 1:
        raise ModelError(f"{n_negatives} negatives requested from {total - 1} candidates")
    uniforms = rng.np.random((batch, t_count, steps, n_negatives))
    b = np.arange(batch)[:, None, None]
    t = np.arange(t_count)[None, :, None]
    k = np.arange(steps)[None, None, :]
    positive = np.ascontiguousarray(
        np.broadcast_to(b * frames + t + k + 1, (batch, t_count, steps)), dtype=np.int64
    )
    return partial_fisher_yates(uniforms, positive, total)


def infonce_from_logits(
    pos_logits: torch.Tensor, neg_logits: torch.Tensor
) -> tuple[torch.Tensor, LossReport]:
    """Softmax cross-entropy with the positive as target, averaged per step.

    ``pos_logits`` is (B, T, K) and ``neg_logits`` (B, T, K, N).  Accuracy
    per step is the fraction of positions whose positive outranks every
    negative.
    """
    if not (torch.isfinite(pos_logits).all() and torch.isfinite(neg_logits).all()):
        raise ModelError("non-finite logits in contrastive loss")
    stacked = torch.cat([pos_logits.unsqueeze(-1), neg_logits], dim=-1)
    loss_btk = torch.logsumexp(stacked, dim=-1) - pos_logits
    per_step_loss = loss_btk.mean(dim=(0, 1))
    loss = per_step_loss.mean()
    with torch.no_grad():
        wins = pos_logits > neg_logits.max(dim=-1).values
        accuracy = wins.to(torch.float64).mean(dim=(0, 1))
    report = LossReport(float(loss.detach()), tuple(float(a) for a in accuracy))
    return loss, report


def cpc_loss(
    predictions: torch.Tensor, positives: torch.Tensor, negatives: torch.Tensor
) -> tuple[torch.Tensor, LossReport]:
    """Contrastive loss from raw vectors.

    predictions/positives are (B, T, K, D), negatives (B, T, K, N, D);
    scores are dot products.
    """
    pos_logits = (predictions * positives).sum(dim=-1)
    neg_logits = torch.einsum("btkd,btknd->btkn", predictions, negatives)
    return infonce_from_logits(pos_logits, neg_logits)


def forward_logits(
    model: CpcModel,
    past_waves: torch.Tensor,
    future_waves: torch.Tensor,
    negative_indices: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor]:
    """One CPC forward pass: past drives predictions, future supplies targets.

    Scores every prediction against the whole future-frame pool once, then
    gathers the positive and the sampled negative columns so both sides of
    the softmax share one matmul.
    """
    z_future = model.encode(future_waves)
    b, t_len, d = z_future.shape
    steps = model.config.prediction_steps
    t_count = t_len - steps
    if t_count < 1:
        raise ModelError(f"{t_len} frames too short for {steps} prediction steps")
    c = model.contextualize(model.encode(past_waves))
    preds = model.predict(c)[:, :t_count]
    flat = z_future.reshape(b * t_len, d)
    logits = torch.einsum("btkd,fd->btkf", preds, flat)
    bi = torch.arange(b)[:, None, None]
    ti = torch.arange(t_count)[None, :, None]
    ki = torch.arange(steps)[None, None, :]
    positive = bi * t_len + ti + ki + 1
    pos_logits = torch.gather(logits, -1, positive.unsqueeze(-1)).squeeze(-1)
    neg_logits = torch.gather(logits, -1, negative_indices)
    return pos_logits, neg_logits


# ---------------------------------------------------------------------------
# feature extraction


def extract_features(model: CpcModel, wave: AudioBuffer, level: str = "c") -> FeatureSequence:
    """Deterministic inference pass over one waveform, no augmentation."""
    if level not in ("z", "c"):
        raise ModelError(f"level must be 'z' or 'c', got {level!r}")
    cfg = model.config
    if wave.sample_rate != cfg.sample_rate:
        raise ModelError(f"wave rate {wave.sample_rate} != model rate {cfg.sample_rate}")
    if cfg.frame_count(len(wave)) < 1:
        raise ModelError(f"wave of {len(wave)} samples shorter than the receptive field")
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            waves = torch.from_numpy(np.asarray(wave.samples, dtype=np.float32)).unsqueeze(0)
            z = model.encode(waves)
            frames = z if level == "z" else model.contextualize(z)
    finally:
        model.train(was_training)
    return FeatureSequence(frames[0].numpy(), cfg.frame_rate, level)


# ---------------------------------------------------------------------------
# gradient verification


def central_difference(
    loss_fn: Callable[[], torch.Tensor], param: torch.Tensor, index: int, eps: float
) -> float:
    """Central finite difference of the loss along one parameter coordinate."""
    flat = param.view(-1)
    with torch.no_grad():
        original = flat[index].item()
        flat[index] = original + eps
        f_plus = float(loss_fn())
        flat[index] = original - eps
        f_minus = float(loss_fn())
        flat[index] = original
    return (f_plus - f_minus) / (2.0 * eps)


def _stable_central_difference(
    loss_fn: Callable[[], torch.Tensor],
    pattern_fn: Optional[Callable[[], bytes]],
    param: torch.Tensor,
    index: int,
    eps: float,
) -> float:
    """Central difference that refuses to straddle a ReLU kink.

    The loss is piecewise smooth in any single parameter; if the activation
    pattern differs between the two evaluation points the secant measures a
    different linear piece than the analytic gradient, so the step shrinks
    until the pattern is stable (the analytic value is exact on each piece).
    """
    flat = param.view(-1)
    step = eps
    for _ in range(8):
        with torch.no_grad():
            original = flat[index].item()
            flat[index] = original + step
            f_plus = float(loss_fn())
            pat_plus = pattern_fn() if pattern_fn is not None else None
            flat[index] = original - step
            f_minus = float(loss_fn())
            pat_minus = pattern_fn() if pattern_fn is not None else None
            flat[index] = original
        if pattern_fn is None or pat_plus == pat_minus:
            break
        step /= 4.0
    return (f_plus - f_minus) / (2.0 * step)


def max_relative_gradient_error(
    params: Sequence[torch.Tensor],
    loss_fn: Callable[[], torch.Tensor],
    eps: float = 1e-4,
    rng: Optional[RngStream] = None,
    sample_fraction: float = 0.01,
    floor: float = 1e-3,
    pattern_fn: Optional[Callable[[], bytes]] = None,
) -> float:
    """Worst disagreement between autograd and finite differences.

    Checks about ``sample_fraction`` of the coordinates of each parameter
    tensor (at least one per tensor); relative error uses a small floor so
    coordinates with negligible gradient are judged on absolute terms.
    ``pattern_fn``, when given, fingerprints the active set of piecewise
    nonlinearities so finite differences never cross a kink.
    """
    params = [p for p in params if p.requires_grad]
    if rng is None:
        rng = RngStream(0)
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    if pattern_fn is not None:
        pattern_fn()  # drain captures from the analytic pass
    worst = 0.0
    for param, grad in zip(params, grads):
        numel = param.numel()
        count = min(numel, max(1, int(round(numel * sample_fraction))))
        if count == numel:
            indices = np.arange(numel)
        else:
            indices = np.sort(rng.np.choice(numel, size=count, replace=False))
        for index in indices:
            analytic = 0.0 if grad is None else float(grad.reshape(-1)[int(index)])
            numeric = _stable_central_difference(loss_fn, pattern_fn, param, int(index), eps)
            rel = abs(analytic - numeric) / max(abs(analytic) + abs(numeric), floor)
            worst = max(worst, rel)
    return worst


def grad_check_config(context_layers: int = 2, predictor_mode: str = "multi_head") -> CpcConfig:
    """Miniature config for finite-difference checks (dim 8, K 2, N 4, T 20)."""
    return CpcConfig(
        encoder_dim=8,
        context_dim=8,
        context_layers=context_layers,
        prediction_steps=2,
        negatives=4,
        predictor_mode=predictor_mode,
        attention_heads=2,
        batch_size=2,
        window_seconds=0.2,
    )


class _ReluPatternProbe:
    """Fingerprints which ReLU units are active in the most recent forwards."""

    def __init__(self, model: nn.Module):
        self._chunks: list[bytes] = []
        self._handles = [
            module.register_forward_hook(self._capture)
            for module in model.modules()
            if isinstance(module, nn.ReLU)
        ]

    def _capture(self, _module, inputs, _output):
        self._chunks.append((inputs[0] > 0).cpu().numpy().tobytes())

    def take(self) -> bytes:
        pattern = b"".join(self._chunks)
        self._chunks.clear()
        return pattern

    def close(self) -> None:
        for handle in self._handles:
            handle.remove()


def grad_check(
    config: Optional[CpcConfig] = None,
    seed: int = 0,
    eps: float = 1e-4,
    sample_fraction: float = 0.01,
) -> float:
    """Max relative error between analytic and finite-difference gradients.

    Runs the full pipeline loss (encode both views, contextualize, predict,
    contrastive loss with fixed negatives) on a tiny random model in float64.
    """
    cfg = config if config is not None else grad_check_config()
    model = build_model(cfg, seed).double()
    rng = RngStream(seed)
    samples = cfg.window_samples
    batch = cfg.batch_size
    past = torch.from_numpy(0.1 * rng.child(0).np.standard_normal((batch, samples)))
    future = torch.from_numpy(0.1 * rng.child(1).np.standard_normal((batch, samples)))
    frames = cfg.frame_count(samples)
    t_count = frames - cfg.prediction_steps
    neg_idx = torch.from_numpy(
        batched_negative_indices(
            batch, frames, t_count, cfg.prediction_steps, cfg.negatives, rng.child(2)
        )
    )

    def loss_fn() -> torch.Tensor:
        pos_logits, neg_logits = forward_logits(model, past, future, neg_idx)
        loss, _ = infonce_from_logits(pos_logits, neg_logits)
        return loss

    probe = _ReluPatternProbe(model)
    try:
        return max_relative_gradient_error(
            list(model.parameters()),
            loss_fn,
            eps=eps,
            rng=rng.child(3),
            sample_fraction=sample_fraction,
            pattern_fn=probe.take,
        )
    finally:
        probe.close()


GRAD_CHECK_VARIANTS = tuple(
    (layers, mode) for layers in (1, 2, 3) for mode in ("multi_head", "per_step")
)


def grad_check_all_variants(seed: int = 0, eps: float = 1e-4) -> dict[str, float]:
    """Gradient fidelity across every context depth and predictor mode."""
    results = {}
    for layers, mode in GRAD_CHECK_VARIANTS:
        cfg = grad_check_config(context_layers=layers, predictor_mode=mode)
        results[f"context{layers}_{mode}"] = grad_check(cfg, seed=seed, eps=eps)
    return results
