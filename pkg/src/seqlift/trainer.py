"""Training loops.

One joint optimizer trains the encoder-decoder on reconstruction plus
pairwise contrastive ranking, with the latent-smoothing (MMD) and
cycle-consistency terms switched on at the warmup midpoint. The baseline
pair is trained separately: an unconditional generator on LM loss and a
discriminator encoder on the contrastive loss alone. Runs are seed
deterministic in single-worker mode and write append-only loss logs.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .fileio import atomic_write_text, canonical_json, format_float, sha256_of
from .model import (
    Checkpoint,
    DecoderCore,
    EncoderCore,
    ModelConfig,
    SeqEncDec,
    _pad_mask,
    checkpoint_payload,
    latent_stats,
    load_checkpoint,
    pack_batch,
    save_checkpoint,
)
from .objectives import (
    LossWeights,
    MMDKernelConfig,
    mmd_loss,
    sample_prior,
    sequence_nll,
)
from .seqcore import (
    BOS,
    EOS,
    TIE,
    DesirabilityOrder,
    LabeledSequence,
    SequenceDataset,
    compare_labels,
)

LOG_HEADER = "step\tepoch\tlr\tcontrast\trecon\tsmooth\tcyc_con\ttotal\twarmup"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 8
    batch_size: int = 128
    peak_lr: float = 1e-3
    weights: LossWeights = field(default_factory=LossWeights)
    midpoint_fraction: float = 0.5
    subset_fraction: float = 0.5  # most-desirable fraction used for encoder-decoder training
    kernel: MMDKernelConfig = field(default_factory=MMDKernelConfig)
    grad_clip: float = 1.0
    hard_cycle: bool = False
    checkpoint_every: int = 0  # epochs between mid-run checkpoints; 0 = final only
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2 (pairing and MMD need it)")
        if not 0.0 <= self.midpoint_fraction <= 1.0:
            raise ValueError("midpoint fraction must lie in [0, 1]")
        if not 0.0 < self.subset_fraction <= 1.0:
            raise ValueError("subset fraction must lie in (0, 1]")
        if self.peak_lr <= 0:
            raise ValueError("peak learning rate must be positive")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "peak_lr": self.peak_lr,
            "weights": {
                "contrast": self.weights.contrast,
                "recon": self.weights.recon,
                "smooth": self.weights.smooth,
                "cyc_con": self.weights.cyc_con,
            },
            "midpoint_fraction": self.midpoint_fraction,
            "subset_fraction": self.subset_fraction,
            "kernel": {
                "sigma": self.kernel.sigma,
                "n_features": self.kernel.n_features,
                "seed": self.kernel.seed,
            },
            "grad_clip": self.grad_clip,
            "hard_cycle": self.hard_cycle,
            "checkpoint_every": self.checkpoint_every,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        w = LossWeights(**d.pop("weights"))
        k = MMDKernelConfig(**d.pop("kernel"))
        return TrainConfig(weights=w, kernel=k, **d)


def ablation_variants(base: TrainConfig, *, no_cc: bool = False, no_smooth: bool = False) -> TrainConfig:
    """Zero out ablated loss weights; everything else untouched."""
    w = base.weights
    new = LossWeights(
        contrast=w.contrast,
        recon=w.recon,
        smooth=0.0 if no_smooth else w.smooth,
        cyc_con=0.0 if no_cc else w.cyc_con,
    )
    return replace(base, weights=new)


def linear_lr(step: int, total_steps: int, peak: float) -> float:
    """Linear decay from peak at step 0 to (almost) zero at the end."""
    return peak * (1.0 - step / total_steps)


def warmup_active(step: int, total_steps: int, midpoint_fraction: float) -> bool:
    """True once the step index reaches the warmup midpoint."""
    return step >= math.floor(midpoint_fraction * total_steps)


def sample_pair_indices(
    labels: list, order: DesirabilityOrder, rng: np.random.Generator
) -> list[tuple[int, int]]:
    """Disjoint (better, worse) index pairs from one minibatch.

    A random permutation is cut into consecutive pairs, ties are dropped,
    and each surviving pair is ordered by label desirability; every index
    appears in at most one pair.
    """
    perm = rng.permutation(len(labels))
    pairs = []
    for k in range(0, len(perm) - 1, 2):
        i, j = int(perm[k]), int(perm[k + 1])
        cmp = compare_labels(labels[i], labels[j], order)
        if cmp == TIE:
            continue
        pairs.append((i, j) if cmp > 0 else (j, i))
    return pairs


def sample_pairs(
    batch: list[LabeledSequence], seed, order: DesirabilityOrder
) -> list[tuple[LabeledSequence, LabeledSequence]]:
    """(more desirable, less desirable) item pairs for one training step."""
    if len(batch) < 2:
        raise ValueError("pair sampling needs at least two items")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx = sample_pair_indices([b.label for b in batch], order, rng)
    return [(batch[i], batch[j]) for i, j in idx]


def most_desirable_subset(dataset: SequenceDataset, fraction: float) -> SequenceDataset:
    """The most desirable `fraction` of the dataset (stable under ties)."""
    if fraction >= 1.0:
        return dataset
    labels = np.array([it.label for it in dataset.items], dtype=np.float64)
    des = labels if dataset.order is DesirabilityOrder.HIGHER_BETTER else -labels
    idx = np.argsort(-des, kind="stable")
    k = max(2, int(math.floor(fraction * len(dataset))))
    keep = sorted(int(i) for i in idx[:k])  # preserve original ordering
    return SequenceDataset(
        tuple(dataset.items[i] for i in keep), dataset.order, dataset.n_classes
    )


class LossLog:
    """Append-only per-step loss records, one TSV row per step."""

    def __init__(self):
        self.rows: list[str] = []

    def add(self, step, epoch, lr, parts: dict, total: float, warmup: bool):
        self.rows.append(
            "\t".join(
                [
                    str(step),
                    str(epoch),
                    format_float(lr),
                    format_float(parts["contrast"]),
                    format_float(parts["recon"]),
                    format_float(parts["smooth"]),
                    format_float(parts["cyc_con"]),
                    format_float(total),
                    "1" if warmup else "0",
                ]
            )
        )

    def text(self) -> str:
        return "\n".join([LOG_HEADER] + self.rows) + "\n"

    def save(self, path: str) -> None:
        atomic_write_text(path, self.text())


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    """Shuffled batch index lists; a trailing batch of <2 items is dropped."""
    perm = rng.permutation(n)
    out = []
    for lo in range(0, n, batch_size):
        idx = perm[lo : lo + batch_size]
        if len(idx) >= 2:
            out.append([int(i) for i in idx])
    return out


def _steps_per_epoch(n: int, batch_size: int) -> int:
    full, rem = divmod(n, batch_size)
    return full + (1 if rem >= 2 else 0)


def _teacher_tensors(items: list[LabeledSequence]):
    """Padded ids plus shifted decoder inputs/targets with the end token."""
    seqs = [it.sequence for it in items]
    ids, lengths = pack_batch(seqs)
    b, lmax = ids.shape
    dec_in = torch.zeros((b, lmax + 1), dtype=torch.long)
    dec_in[:, 0] = BOS
    dec_in[:, 1:] = ids
    targets = torch.zeros((b, lmax + 1), dtype=torch.long)
    targets[:, :lmax] = ids
    targets[torch.arange(b), lengths] = EOS
    return ids, lengths, dec_in, targets


def _guard_finite(value: float, step: int, what: str) -> None:
    if not math.isfinite(value):
        raise RuntimeError(f"{what} diverged at step {step}: total loss {value}")


def train_genhance(
    dataset: SequenceDataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    run_dir: str | None = None,
) -> Checkpoint:
    """Train the latent encoder-decoder; returns its checkpoint.

    Per step: reconstruction on every item and contrastive ranking on
    sampled pairs; after the warmup midpoint, additionally the MMD pull
    toward the unit-Gaussian prior (fresh prior draws each step) and
    cycle consistency on the same pairs. Linear LR decay, Adam, global
    gradient-norm clipping. The checkpoint carries LatentStats computed
    on the training subset after the last step.
    """
    torch.set_num_threads(1)  # keeps runs bit-reproducible
    subset = most_desirable_subset(dataset, train_config.subset_fraction)
    if len(subset) < 2:
        raise ValueError("training subset has fewer than two items")
    order = dataset.order
    cfg = train_config
    ss = np.random.SeedSequence(cfg.seed)
    rng_batches, rng_pairs, rng_prior = (np.random.default_rng(c) for c in ss.spawn(3))

    model = SeqEncDec(model_config)
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.peak_lr)
    total_steps = cfg.epochs * _steps_per_epoch(len(subset), cfg.batch_size)
    labels_all = [it.label for it in subset.items]
    log = LossLog()
    t0 = time.monotonic()
    step = 0
    for epoch in range(cfg.epochs):
        for batch_idx in _batches(len(subset), cfg.batch_size, rng_batches):
            items = [subset.items[i] for i in batch_idx]
            labels = [labels_all[i] for i in batch_idx]
            ids, lengths, dec_in, targets = _teacher_tensors(items)
            warm = warmup_active(step, total_steps, cfg.midpoint_fraction)

            pad = _pad_mask(lengths + 1, dec_in.shape[1])
            if model_config.decoder_sees_encoder_states:
                states, enc_pad = model.encoder.states(ids, lengths)
                z = model.encoder.to_latent(states[:, 0, :])
                logits = model.decoder.logits(
                    z, dec_in, pad_mask=pad, memory_extra=states, memory_pad_mask=enc_pad
                )
            else:
                z = model.encoder.latents(ids, lengths)
                logits = model.decoder.logits(z, dec_in, pad_mask=pad)
            recon = sequence_nll(logits, targets, lengths + 1).mean()

            pairs = sample_pair_indices(labels, order, rng_pairs)
            scores = z[:, 0]
            if pairs:
                ib = torch.as_tensor([p[0] for p in pairs])
                iw = torch.as_tensor([p[1] for p in pairs])
                contrast = torch.nn.functional.softplus(scores[iw] - scores[ib]).mean()
            else:
                contrast = torch.zeros((), dtype=z.dtype)

            smooth = torch.zeros((), dtype=z.dtype)
            cyc = torch.zeros((), dtype=z.dtype)
            if warm:
                prior = sample_prior(
                    z.shape[0], model_config.latent_dim, rng_prior, model_config.torch_dtype
                )
                smooth = mmd_loss(z, prior, cfg.kernel)
                if pairs:
                    content_logits = logits[:, : ids.shape[1], :]
                    if cfg.hard_cycle:
                        z2 = model.encoder.latents(content_logits.argmax(dim=-1), lengths)
                    else:
                        z2 = model.encoder.latents_soft(
                            torch.softmax(content_logits, dim=-1), lengths
                        )
                    s2 = z2[:, 0]
                    cyc = torch.nn.functional.softplus(s2[iw] - s2[ib]).mean()

            w = cfg.weights
            total = w.contrast * contrast + w.recon * recon
            if warm:
                total = total + w.smooth * smooth + w.cyc_con * cyc
            _guard_finite(float(total.detach()), step, "train_genhance")

            lr = linear_lr(step, total_steps, cfg.peak_lr)
            for g in opt.param_groups:
                g["lr"] = lr
            opt.zero_grad()
            total.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()

            log.add(
                step,
                epoch,
                lr,
                {
                    "contrast": float(contrast.detach()),
                    "recon": float(recon.detach()),
                    "smooth": float(smooth.detach()),
                    "cyc_con": float(cyc.detach()),
                },
                float(total.detach()),
                warm,
            )
            step += 1
        if run_dir and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(
                os.path.join(run_dir, f"checkpoint_epoch{epoch + 1}.json"),
                model,
                "genhance",
                model_config,
                train_meta={"epoch": epoch + 1, "seed": cfg.seed},
            )

    stats = latent_stats(model, subset)
    # wall time stays out of the payload so reruns stay byte-identical
    print(f"train_genhance: {step} steps in {time.monotonic() - t0:.1f}s")
    meta = {
        "method": "genhance",
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "steps": step,
        "n_train": len(subset),
    }
    if run_dir:
        os.makedirs(run_dir, exist_ok=True)
        log.save(os.path.join(run_dir, "loss_log.tsv"))
        atomic_write_text(
            os.path.join(run_dir, "train_config.json"),
            canonical_json({"model": model_config.to_dict(), "train": cfg.to_dict()}) + "\n",
        )
        path = os.path.join(run_dir, "checkpoint.json")
        save_checkpoint(path, model, "genhance", model_config, stats, meta)
        return load_checkpoint(path)
    payload = checkpoint_payload(model, "genhance", model_config, stats, meta)
    model.eval()
    return Checkpoint("genhance", model_config, model, stats, meta, sha256_of(payload))


def train_gendisc(
    dataset: SequenceDataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    run_dir: str | None = None,
) -> tuple[Checkpoint, Checkpoint]:
    """Train the unconditional generator and the contrastive discriminator.

    Both see the full dataset. The generator is the decoder alone,
    conditioned on a zero latent (empty context), trained on sequence
    NLL; the discriminator is an encoder trained purely on the pairwise
    contrastive loss. Parameter sets are independent.
    """
    torch.set_num_threads(1)
    if len(dataset) < 2:
        raise ValueError("need at least two items")
    cfg = train_config
    order = dataset.order
    ss = np.random.SeedSequence(cfg.seed)
    rng_gen_batches, rng_disc_batches, rng_pairs = (np.random.default_rng(c) for c in ss.spawn(3))
    total_steps = cfg.epochs * _steps_per_epoch(len(dataset), cfg.batch_size)

    # generator: decoder with empty conditioning
    torch.manual_seed(model_config.seed)
    gen = DecoderCore(model_config)
    gen.train()
    opt_g = torch.optim.Adam(gen.parameters(), lr=cfg.peak_lr)
    glog = LossLog()
    step = 0
    zeros_proto = torch.zeros((cfg.batch_size, model_config.latent_dim), dtype=model_config.torch_dtype)
    for epoch in range(cfg.epochs):
        for batch_idx in _batches(len(dataset), cfg.batch_size, rng_gen_batches):
            items = [dataset.items[i] for i in batch_idx]
            ids, lengths, dec_in, targets = _teacher_tensors(items)
            z = zeros_proto[: len(items)]
            pad = _pad_mask(lengths + 1, dec_in.shape[1])
            logits = gen.logits(z, dec_in, pad_mask=pad)
            lm = sequence_nll(logits, targets, lengths + 1).mean()
            _guard_finite(float(lm.detach()), step, "train_gendisc generator")
            lr = linear_lr(step, total_steps, cfg.peak_lr)
            for g in opt_g.param_groups:
                g["lr"] = lr
            opt_g.zero_grad()
            lm.backward()
            torch.nn.utils.clip_grad_norm_(gen.parameters(), cfg.grad_clip)
            opt_g.step()
            glog.add(step, epoch, lr, _parts(recon=float(lm.detach())), float(lm.detach()), False)
            step += 1

    # discriminator: encoder on contrastive pairs only
    torch.manual_seed(model_config.seed + 1)
    disc = EncoderCore(model_config)
    disc.train()
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.peak_lr)
    dlog = LossLog()
    step = 0
    for epoch in range(cfg.epochs):
        for batch_idx in _batches(len(dataset), cfg.batch_size, rng_disc_batches):
            items = [dataset.items[i] for i in batch_idx]
            ids, lengths = pack_batch([it.sequence for it in items])
            pairs = sample_pair_indices([it.label for it in items], order, rng_pairs)
            lr = linear_lr(step, total_steps, cfg.peak_lr)
            if pairs:
                scores = disc.latents(ids, lengths)[:, 0]
                ib = torch.as_tensor([p[0] for p in pairs])
                iw = torch.as_tensor([p[1] for p in pairs])
                contrast = torch.nn.functional.softplus(scores[iw] - scores[ib]).mean()
                _guard_finite(float(contrast.detach()), step, "train_gendisc discriminator")
                for g in opt_d.param_groups:
                    g["lr"] = lr
                opt_d.zero_grad()
                contrast.backward()
                torch.nn.utils.clip_grad_norm_(disc.parameters(), cfg.grad_clip)
                opt_d.step()
                val = float(contrast.detach())
            else:
                val = 0.0  # all labels tied; step contributes nothing
            dlog.add(step, epoch, lr, _parts(contrast=val), val, False)
            step += 1

    meta_g = {"method": "gendisc-generator", "seed": cfg.seed, "epochs": cfg.epochs, "n_train": len(dataset)}
    meta_d = {"method": "gendisc-discriminator", "seed": cfg.seed, "epochs": cfg.epochs, "n_train": len(dataset)}
    if run_dir:
        os.makedirs(run_dir, exist_ok=True)
        glog.save(os.path.join(run_dir, "generator_loss.tsv"))
        dlog.save(os.path.join(run_dir, "discriminator_loss.tsv"))
        atomic_write_text(
            os.path.join(run_dir, "train_config.json"),
            canonical_json({"model": model_config.to_dict(), "train": cfg.to_dict()}) + "\n",
        )
        gp = os.path.join(run_dir, "generator.json")
        dp = os.path.join(run_dir, "discriminator.json")
        save_checkpoint(gp, gen, "generator", model_config, train_meta=meta_g)
        save_checkpoint(dp, disc, "discriminator", model_config, train_meta=meta_d)
        return load_checkpoint(gp), load_checkpoint(dp)
    gen.eval()
    disc.eval()
    ck_g = Checkpoint(
        "generator", model_config, gen, None, meta_g,
        sha256_of(checkpoint_payload(gen, "generator", model_config, train_meta=meta_g)),
    )
    ck_d = Checkpoint(
        "discriminator", model_config, disc, None, meta_d,
        sha256_of(checkpoint_payload(disc, "discriminator", model_config, train_meta=meta_d)),
    )
    return ck_g, ck_d


def _parts(contrast: float = 0.0, recon: float = 0.0, smooth: float = 0.0, cyc_con: float = 0.0) -> dict:
    return {"contrast": contrast, "recon": recon, "smooth": smooth, "cyc_con": cyc_con}
