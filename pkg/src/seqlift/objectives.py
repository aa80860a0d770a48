"""Training objectives.

Four losses drive the latent-space model: a pairwise contrastive ranking
loss on the scalar latent score, an autoregressive reconstruction loss, a
maximum-mean-discrepancy penalty pulling latent batches toward a unit
Gaussian prior (random-feature kernel, unbiased U-statistic), and a
cycle-consistency loss that asks the encoder to rank the model's own
reconstructions correctly. The baseline generator reuses the
reconstruction form with empty conditioning as a plain LM loss.

Scores follow one system-wide convention: higher = more desirable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .seqcore import BOS, TIE, DesirabilityOrder, LabeledSequence, TokenSequence, compare_labels
from .model import SeqEncDec, _pad_mask, pack_batch


@dataclass(frozen=True)
class LossWeights:
    contrast: float = 1.0
    recon: float = 1.0
    smooth: float = 1.0
    cyc_con: float = 1.0

    def __post_init__(self):
        for name in ("contrast", "recon", "smooth", "cyc_con"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative")


@dataclass(frozen=True)
class MMDKernelConfig:
    """Random-feature Gaussian kernel; features are frozen per seed."""

    sigma: float = 14.0
    n_features: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("kernel bandwidth must be positive")
        if self.n_features < 1:
            raise ValueError("feature dimension must be >= 1")


class RandomFeatureMap:
    """phi(u) = sqrt(2/D) cos(W u + b), with W ~ N(0, 1/sigma^2), b ~ U[0, 2pi).

    E[phi(u) . phi(v)] = exp(-||u - v||^2 / (2 sigma^2)).
    """

    def __init__(self, dim: int, config: MMDKernelConfig):
        rng = np.random.default_rng(config.seed)
        self.dim = dim
        self.config = config
        self.weight = rng.standard_normal((dim, config.n_features)) / config.sigma
        self.bias = rng.uniform(0.0, 2.0 * math.pi, config.n_features)
        self.scale = math.sqrt(2.0 / config.n_features)

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        w = torch.as_tensor(self.weight, dtype=x.dtype, device=x.device)
        b = torch.as_tensor(self.bias, dtype=x.dtype, device=x.device)
        return self.scale * torch.cos(x @ w + b)


_FEATURE_CACHE: dict[tuple, RandomFeatureMap] = {}


def feature_map(dim: int, config: MMDKernelConfig) -> RandomFeatureMap:
    key = (dim, config.sigma, config.n_features, config.seed)
    fm = _FEATURE_CACHE.get(key)
    if fm is None:
        fm = _FEATURE_CACHE[key] = RandomFeatureMap(dim, config)
    return fm


def rf_gaussian_kernel(u, v, config: MMDKernelConfig):
    """Approximate Gaussian kernel value(s) via the random-feature inner product.

    Accepts single vectors or [n, d] batches; returns a scalar or an
    [n, m] kernel matrix accordingly.
    """
    ut = torch.as_tensor(np.asarray(u), dtype=torch.float64) if not torch.is_tensor(u) else u
    vt = torch.as_tensor(np.asarray(v), dtype=torch.float64) if not torch.is_tensor(v) else v
    single = ut.ndim == 1 and vt.ndim == 1
    ut = ut[None, :] if ut.ndim == 1 else ut
    vt = vt[None, :] if vt.ndim == 1 else vt
    if ut.shape[-1] != vt.shape[-1]:
        raise ValueError("kernel inputs must share their dimension")
    fm = feature_map(ut.shape[-1], config)
    k = fm(ut) @ fm(vt).T
    if single:
        return float(k[0, 0]) if not (torch.is_tensor(u) or torch.is_tensor(v)) else k[0, 0]
    return k


def mmd_loss(z_batch: torch.Tensor, prior_batch: torch.Tensor, config: MMDKernelConfig) -> torch.Tensor:
    """Unbiased U-statistic MMD^2 estimate between a latent batch and prior draws.

    off-diagonal means of the two within-batch kernel matrices, minus twice
    the full cross mean. May be negative; exactly zero when both batches
    consist of one repeated common point.
    """
    if not torch.is_tensor(z_batch):
        z_batch = torch.as_tensor(np.asarray(z_batch), dtype=torch.float64)
    if not torch.is_tensor(prior_batch):
        prior_batch = torch.as_tensor(np.asarray(prior_batch), dtype=z_batch.dtype)
    n, m = z_batch.shape[0], prior_batch.shape[0]
    if n < 2 or m < 2:
        raise ValueError("mmd_loss needs at least two points per batch")
    if z_batch.shape[1] != prior_batch.shape[1]:
        raise ValueError("latent and prior batches must share their dimension")
    fm = feature_map(z_batch.shape[1], config)
    fz, fp = fm(z_batch), fm(prior_batch)
    k_zz = fz @ fz.T
    k_pp = fp @ fp.T
    k_zp = fz @ fp.T
    eye_n = torch.eye(n, dtype=torch.bool, device=k_zz.device)
    eye_m = torch.eye(m, dtype=torch.bool, device=k_pp.device)
    # diagonal zeroed before summing so the all-identical case cancels exactly
    t_zz = k_zz.masked_fill(eye_n, 0.0).sum() / (n * (n - 1))
    t_pp = k_pp.masked_fill(eye_m, 0.0).sum() / (m * (m - 1))
    t_zp = 2.0 * k_zp.mean(dim=1).mean()
    return t_zz + t_pp - t_zp


def sample_prior(n: int, dim: int, rng: np.random.Generator, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """n unit-Gaussian prior draws over the full latent space."""
    return torch.as_tensor(rng.standard_normal((n, dim)), dtype=dtype)


def contrastive_loss(s_better, s_worse):
    """-log sigmoid(s_better - s_worse), the pairwise ranking loss.

    ln 2 at a tie, -> 0 as the better score pulls ahead. Computed as
    softplus(s_worse - s_better), stable for gaps up to 1e4 either way.
    Accepts floats (returns float) or tensors (returns tensor, elementwise).
    """
    if torch.is_tensor(s_better) or torch.is_tensor(s_worse):
        return F.softplus(torch.as_tensor(s_worse) - s_better)
    if not (math.isfinite(s_better) and math.isfinite(s_worse)):
        raise ValueError("contrastive_loss requires finite scores")
    return float(F.softplus(torch.as_tensor(s_worse - s_better, dtype=torch.float64)))


def reconstruction_loss(rows, x: TokenSequence):
    """Negative log-likelihood of x under per-position distribution rows.

    rows[i] is the model's distribution for token i; the result is
    -sum_i log rows[i][x_i]. Zero iff every row is a correct one-hot.
    """
    is_tensor = torch.is_tensor(rows)
    r = rows if is_tensor else torch.as_tensor(np.asarray(rows), dtype=torch.float64)
    if r.ndim != 2 or r.shape[0] != x.length:
        raise ValueError("need one distribution row per sequence position")
    idx = torch.as_tensor(x.tokens, dtype=torch.long)
    picked = r[torch.arange(x.length), idx]
    nll = -torch.log(picked).sum()
    return nll if is_tensor else float(nll)


def lm_loss(rows, x: TokenSequence):
    """Unconditional language-model NLL; same form as reconstruction_loss."""
    return reconstruction_loss(rows, x)


def sequence_nll(logits: torch.Tensor, targets: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    """Per-sequence NLL summed over valid positions, from raw logits.

    logits [B, T, V], targets [B, T] (positions >= lengths[b] ignored).
    Returns [B]; the batch training loss is the mean of this.
    """
    logp = F.log_softmax(logits, dim=-1)
    picked = logp.gather(-1, targets.clamp(min=0)[:, :, None]).squeeze(-1)
    mask = torch.arange(targets.shape[1], device=targets.device)[None, :] < lengths[:, None]
    return -(picked * mask).sum(dim=1)


def cycle_scores(model: SeqEncDec, seqs: list[TokenSequence], hard: bool = False) -> torch.Tensor:
    """Ranking scores of the model's own teacher-forced reconstructions.

    Each input is encoded, reconstructed as per-position output
    distributions, and re-encoded; the re-encoder ingests the
    distributions as probability-weighted mixtures of token embeddings,
    so gradients reach encoder and decoder alike. With hard=True the
    distributions are collapsed to argmax ids first (gradient then flows
    through the encoder only).
    """
    ids, lengths = pack_batch(seqs)
    mem = mem_pad = None
    if model.config.decoder_sees_encoder_states:
        mem, mem_pad = model.encoder.states(ids, lengths)
        z = model.encoder.to_latent(mem[:, 0, :])
    else:
        z = model.encoder.latents(ids, lengths)
    bos = torch.full((ids.shape[0], 1), BOS, dtype=torch.long, device=ids.device)
    dec_in = torch.cat([bos, ids[:, :-1]], dim=1) if ids.shape[1] > 1 else bos
    pad = _pad_mask(lengths, dec_in.shape[1])
    logits = model.decoder.logits(
        z, dec_in, pad_mask=pad, memory_extra=mem, memory_pad_mask=mem_pad
    )
    if hard:
        z2 = model.encoder.latents(logits.argmax(dim=-1), lengths)
    else:
        z2 = model.encoder.latents_soft(torch.softmax(logits, dim=-1), lengths)
    return z2[:, 0]


def cycle_consistency_loss(
    model: SeqEncDec,
    x_a: LabeledSequence,
    x_b: LabeledSequence,
    order: DesirabilityOrder,
    hard: bool = False,
) -> torch.Tensor:
    """Contrastive loss on re-encoded reconstructions of a strictly ordered pair."""
    cmp = compare_labels(x_a.label, x_b.label, order)
    if cmp == TIE:
        raise ValueError("cycle consistency needs a strictly ordered pair")
    better, worse = (x_a, x_b) if cmp > 0 else (x_b, x_a)
    scores = cycle_scores(model, [better.sequence, worse.sequence], hard=hard)
    return contrastive_loss(scores[0], scores[1])


def total_loss(parts: dict, weights: LossWeights, warmup_on: bool):
    """Weighted sum of the four parts; smoothing terms gated off pre-warmup.

    parts supplies {"contrast", "recon", "smooth", "cyc_con"}. Before the
    warmup midpoint the smooth and cyc_con terms contribute exactly zero
    no matter their weights.
    """
    out = weights.contrast * parts["contrast"] + weights.recon * parts["recon"]
    if warmup_on:
        out = out + weights.smooth * parts["smooth"] + weights.cyc_con * parts["cyc_con"]
    return out
