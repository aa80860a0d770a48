"""Encoder-decoder with a split latent bottleneck.

The encoder reads a class-summary token prepended to the sequence and
projects that token's hidden state to a latent vector z = [z_par ; z_perp].
z_par is a single scalar that doubles as the ranking score (the score map
is the identity). The decoder generates autoregressively while
cross-attending to a single conditioning state projected from z, so the
latent vector is the only route from input to output; shifting z_par is
what steers generation. Optionally the decoder may also attend to the full
encoder state sequence (ablation flag), which weakens that bottleneck.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .fileio import atomic_write_text, canonical_json, pack_array, sha256_of, unpack_array
from .seqcore import BOS, CLS, EOS, MASK, PAD, SequenceDataset, TokenSequence, Vocabulary

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class DecodeSpec:
    """Decoding strategy: greedy, or temperature sampling with optional top-k."""

    strategy: str = "sample"
    temperature: float = 1.0
    top_k: int = 10  # 0 disables the top-k restriction

    def __post_init__(self):
        if self.strategy not in ("greedy", "sample"):
            raise ValueError(f"unknown decoding strategy {self.strategy!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.top_k < 0:
            raise ValueError("top_k must be non-negative")


@dataclass(frozen=True)
class ModelConfig:
    symbols: tuple[str, ...]
    max_len: int = 48
    enc_layers: int = 2
    dec_layers: int = 2
    width: int = 128
    heads: int = 4
    latent_dim: int = 64
    dtype: str = "float32"
    decoder_sees_encoder_states: bool = False
    decode: DecodeSpec = field(default_factory=DecodeSpec)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(self.symbols))
        if self.latent_dim < 2:
            raise ValueError("latent_dim must be >= 2 so z_perp is non-empty")
        if self.width % self.heads != 0:
            raise ValueError("width must be divisible by heads")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(tuple(self.symbols))

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32

    def to_dict(self) -> dict:
        return {
            "symbols": list(self.symbols),
            "max_len": self.max_len,
            "enc_layers": self.enc_layers,
            "dec_layers": self.dec_layers,
            "width": self.width,
            "heads": self.heads,
            "latent_dim": self.latent_dim,
            "dtype": self.dtype,
            "decoder_sees_encoder_states": self.decoder_sees_encoder_states,
            "decode": {
                "strategy": self.decode.strategy,
                "temperature": self.decode.temperature,
                "top_k": self.decode.top_k,
            },
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        dec = d.pop("decode")
        return ModelConfig(symbols=tuple(d.pop("symbols")), decode=DecodeSpec(**dec), **d)


@dataclass(frozen=True)
class LatentVector:
    """Split latent: scalar attribute axis plus the attribute-orthogonal rest."""

    z_par: float
    z_perp: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.z_perp, dtype=np.float64)
        if not np.isfinite(self.z_par) or not np.isfinite(arr).all():
            raise ValueError("latent entries must be finite")
        object.__setattr__(self, "z_perp", arr)

    @property
    def dim(self) -> int:
        return 1 + self.z_perp.size

    def full(self) -> np.ndarray:
        return np.concatenate([[self.z_par], self.z_perp])


def score_latent(z: LatentVector) -> float:
    """Ranking score of a latent vector; the attribute axis read off unchanged."""
    return float(z.z_par)


def perturb(z: LatentVector, delta: float) -> LatentVector:
    """Shift the attribute axis by delta; the orthogonal part is untouched."""
    return LatentVector(z.z_par + float(delta), z.z_perp.copy())


@dataclass(frozen=True)
class LatentStats:
    mean: float
    std: float
    count: int


class EncoderCore(nn.Module):
    """Embeddings + transformer encoder + latent projection (also the ranker)."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        vocab = config.vocab
        dt = config.torch_dtype
        self.tok_emb = nn.Embedding(vocab.size, config.width, dtype=dt)
        self.pos_emb = nn.Embedding(config.max_len + 2, config.width, dtype=dt)
        layer = nn.TransformerEncoderLayer(
            d_model=config.width,
            nhead=config.heads,
            dim_feedforward=4 * config.width,
            dropout=0.0,
            batch_first=True,
            norm_first=True,
            dtype=dt,
        )
        self.encoder = nn.TransformerEncoder(layer, config.enc_layers, enable_nested_tensor=False)
        self.final_norm = nn.LayerNorm(config.width, dtype=dt)
        self.to_latent = nn.Linear(config.width, config.latent_dim, dtype=dt)

    def _run(self, emb: torch.Tensor, pad_mask: torch.Tensor | None):
        pos = torch.arange(emb.shape[1], device=emb.device)
        h = emb + self.pos_emb(pos)[None, :, :]
        h = self.encoder(h, src_key_padding_mask=pad_mask)
        return self.final_norm(h)

    def states(self, ids: torch.Tensor, lengths: torch.Tensor):
        """Hidden states for [CLS] + content ids. Returns (states, pad_mask)."""
        b = ids.shape[0]
        cls_col = torch.full((b, 1), CLS, dtype=torch.long, device=ids.device)
        full = torch.cat([cls_col, ids], dim=1)
        pad_mask = _pad_mask(lengths + 1, full.shape[1])
        return self._run(self.tok_emb(full), pad_mask), pad_mask

    def latents(self, ids: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        states, _ = self.states(ids, lengths)
        return self.to_latent(states[:, 0, :])

    def latents_soft(self, probs: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """Latents for probability rows: inputs are mixtures of token embeddings."""
        b = probs.shape[0]
        mixed = probs @ self.tok_emb.weight
        cls_emb = self.tok_emb.weight[CLS][None, None, :].expand(b, 1, -1)
        emb = torch.cat([cls_emb, mixed], dim=1)
        pad_mask = _pad_mask(lengths + 1, emb.shape[1])
        states = self._run(emb, pad_mask)
        return self.to_latent(states[:, 0, :])


class DecoderCore(nn.Module):
    """Latent-conditioned autoregressive decoder."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        vocab = config.vocab
        dt = config.torch_dtype
        self.tok_emb = nn.Embedding(vocab.size, config.width, dtype=dt)
        self.pos_emb = nn.Embedding(config.max_len + 2, config.width, dtype=dt)
        self.cond_proj = nn.Linear(config.latent_dim, config.width, dtype=dt)
        layer = nn.TransformerDecoderLayer(
            d_model=config.width,
            nhead=config.heads,
            dim_feedforward=4 * config.width,
            dropout=0.0,
            batch_first=True,
            norm_first=True,
            dtype=dt,
        )
        self.decoder = nn.TransformerDecoder(layer, config.dec_layers)
        self.final_norm = nn.LayerNorm(config.width, dtype=dt)
        self.out = nn.Linear(config.width, vocab.size, dtype=dt)

    def logits(
        self,
        z: torch.Tensor,
        dec_in: torch.Tensor,
        pad_mask: torch.Tensor | None = None,
        memory_extra: torch.Tensor | None = None,
        memory_pad_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Teacher-forced logits: row t sees z and dec_in[:, : t + 1] only."""
        t = dec_in.shape[1]
        memory = self.cond_proj(z)[:, None, :]
        mem_mask = None
        if memory_extra is not None:
            memory = torch.cat([memory, memory_extra], dim=1)
            if memory_pad_mask is not None:
                keep = torch.zeros(
                    (memory.shape[0], 1), dtype=torch.bool, device=memory.device
                )
                mem_mask = torch.cat([keep, memory_pad_mask], dim=1)
        pos = torch.arange(t, device=dec_in.device)
        h = self.tok_emb(dec_in) + self.pos_emb(pos)[None, :, :]
        causal = torch.triu(torch.ones(t, t, dtype=torch.bool, device=dec_in.device), 1)
        h = self.decoder(
            h,
            memory,
            tgt_mask=causal,
            tgt_key_padding_mask=pad_mask,
            memory_key_padding_mask=mem_mask,
        )
        return self.out(self.final_norm(h))


class SeqEncDec(nn.Module):
    """The full latent-bottleneck encoder-decoder."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        torch.manual_seed(config.seed)  # deterministic init
        self.config = config
        self.encoder = EncoderCore(config)
        self.decoder = DecoderCore(config)


def _pad_mask(valid_lengths: torch.Tensor, total: int) -> torch.Tensor:
    """Boolean key-padding mask: True marks padded positions."""
    ar = torch.arange(total, device=valid_lengths.device)
    return ar[None, :] >= valid_lengths[:, None]


def pack_batch(seqs: list[TokenSequence], device=None) -> tuple[torch.Tensor, torch.Tensor]:
    """Pad content-token id sequences into [B, Lmax] plus a length vector."""
    lengths = torch.as_tensor([s.length for s in seqs], dtype=torch.long, device=device)
    lmax = int(lengths.max().item()) if len(seqs) else 0
    ids = torch.full((len(seqs), lmax), PAD, dtype=torch.long, device=device)
    for i, s in enumerate(seqs):
        ids[i, : s.length] = torch.as_tensor(s.tokens, dtype=torch.long)
    return ids, lengths


def _check_input(model: SeqEncDec, x: TokenSequence) -> None:
    model.config.vocab.validate(x, max_len=model.config.max_len)


def encode(model: SeqEncDec, x: TokenSequence) -> LatentVector:
    """Deterministic latent for one sequence (evaluation mode)."""
    _check_input(model, x)
    z = encode_many(model, [x])[0]
    return LatentVector(float(z[0]), z[1:].astype(np.float64))


def encode_many(model: SeqEncDec, seqs: list[TokenSequence], batch_size: int = 256) -> np.ndarray:
    """Latents for a list of sequences as an [N, d_z] array."""
    model.eval()
    out = []
    with torch.no_grad():
        for lo in range(0, len(seqs), batch_size):
            chunk = seqs[lo : lo + batch_size]
            ids, lengths = pack_batch(chunk)
            out.append(model.encoder.latents(ids, lengths).double().cpu().numpy())
    return np.concatenate(out, axis=0) if out else np.zeros((0, model.config.latent_dim))


def ranker_scores(encoder: EncoderCore, seqs: list[TokenSequence], batch_size: int = 256) -> np.ndarray:
    """Ranking scores (z_par) for a list of sequences."""
    encoder.eval()
    out = []
    with torch.no_grad():
        for lo in range(0, len(seqs), batch_size):
            ids, lengths = pack_batch(seqs[lo : lo + batch_size])
            out.append(encoder.latents(ids, lengths)[:, 0].double().cpu().numpy())
    return np.concatenate(out) if out else np.zeros(0)


def teacher_forced_logits(model: SeqEncDec, z: LatentVector, x: TokenSequence) -> np.ndarray:
    """Per-position next-token distributions for reconstructing x from z.

    Row t is the model's distribution over the vocabulary for x_t given z
    and x_{<t}; rows are proper probability distributions.
    """
    _check_input(model, x)
    if x.length == 0:
        return np.zeros((0, model.config.vocab.size))
    model.eval()
    with torch.no_grad():
        dt = model.config.torch_dtype
        zt = torch.as_tensor(z.full(), dtype=dt)[None, :]
        dec_in = torch.as_tensor([BOS] + list(x.tokens[:-1]), dtype=torch.long)[None, :]
        mem = mem_pad = None
        if model.config.decoder_sees_encoder_states:
            ids, lengths = pack_batch([x])
            mem, mem_pad = model.encoder.states(ids, lengths)
        logits = model.decoder.logits(zt, dec_in, memory_extra=mem, memory_pad_mask=mem_pad)
        probs = torch.softmax(logits, dim=-1)[0]
    return probs.double().cpu().numpy()


def decode(
    model: SeqEncDec,
    z: LatentVector,
    spec: DecodeSpec | None = None,
    generator: torch.Generator | None = None,
) -> tuple[TokenSequence, bool]:
    """Generate one sequence conditioned on z. Returns (sequence, truncated)."""
    seqs, trunc = decode_batch(model, z.full()[None, :], spec, generator)
    return seqs[0], trunc[0]


def decode_batch(
    model: "SeqEncDec | DecoderCore",
    z_batch: np.ndarray | torch.Tensor,
    spec: DecodeSpec | None = None,
    generator: torch.Generator | None = None,
    memory_extra: torch.Tensor | None = None,
    memory_pad_mask: torch.Tensor | None = None,
) -> tuple[list[TokenSequence], list[bool]]:
    """Autoregressive generation for a batch of latent vectors.

    Accepts the full encoder-decoder or a bare decoder. Sampling is
    restricted to content symbols plus the end token; a sequence that
    reaches max_len without the end token is flagged truncated. Greedy
    decoding with fixed parameters is deterministic.
    """
    spec = spec or model.config.decode
    model.eval()
    dec = model.decoder if isinstance(model, SeqEncDec) else model
    cfg = model.config
    dt = cfg.torch_dtype
    z = torch.as_tensor(np.asarray(z_batch), dtype=dt)
    b = z.shape[0]
    banned = [PAD, BOS, CLS, MASK]
    with torch.no_grad():
        dec_in = torch.full((b, 1), BOS, dtype=torch.long)
        finished = torch.zeros(b, dtype=torch.bool)
        for _ in range(cfg.max_len + 1):
            logits = dec.logits(
                z, dec_in, memory_extra=memory_extra, memory_pad_mask=memory_pad_mask
            )[:, -1, :]
            logits[:, banned] = float("-inf")
            if spec.strategy == "greedy":
                nxt = logits.argmax(dim=-1)
            else:
                scaled = logits / spec.temperature
                if spec.top_k > 0 and spec.top_k < scaled.shape[-1]:
                    kth = torch.topk(scaled, spec.top_k, dim=-1).values[:, -1:]
                    scaled = scaled.masked_fill(scaled < kth, float("-inf"))
                probs = torch.softmax(scaled, dim=-1)
                nxt = torch.multinomial(probs, 1, generator=generator).squeeze(1)
            nxt = torch.where(finished, torch.full_like(nxt, EOS), nxt)
            dec_in = torch.cat([dec_in, nxt[:, None]], dim=1)
            finished = finished | (nxt == EOS)
            if bool(finished.all()):
                break
    seqs, truncated = [], []
    for i in range(b):
        toks = []
        done = False
        for t in dec_in[i, 1:].tolist():
            if t == EOS:
                done = True
                break
            toks.append(int(t))
        seqs.append(TokenSequence(tuple(toks[: cfg.max_len])))
        truncated.append(not done)
    return seqs, truncated


def latent_stats(model: SeqEncDec, dataset: SequenceDataset) -> LatentStats:
    """Mean and (population) std of the ranking score over a dataset."""
    if len(dataset) == 0:
        raise ValueError("latent_stats requires a non-empty dataset")
    scores = encode_many(model, [it.sequence for it in dataset.items])[:, 0]
    return LatentStats(float(scores.mean()), float(scores.std(ddof=0)), len(dataset))


# ---------------------------------------------------------------------------
# Checkpoints: a versioned JSON container with the model config, every
# parameter tensor (bit-exact), latent stats, and training metadata.

ROLE_CLASSES = {
    "genhance": SeqEncDec,
    "generator": DecoderCore,
    "discriminator": EncoderCore,
}


@dataclass
class Checkpoint:
    role: str
    config: ModelConfig
    module: nn.Module
    stats: LatentStats | None
    train_meta: dict
    digest: str


def _state_payload(module: nn.Module) -> dict:
    return {name: pack_array(t.detach().cpu().numpy()) for name, t in module.state_dict().items()}


def checkpoint_payload(
    module: nn.Module,
    role: str,
    config: ModelConfig,
    stats: LatentStats | None = None,
    train_meta: dict | None = None,
) -> dict:
    if role not in ROLE_CLASSES:
        raise ValueError(f"unknown checkpoint role {role!r}")
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "role": role,
        "model_config": config.to_dict(),
        "state": _state_payload(module),
        "train_meta": train_meta or {},
    }
    if stats is not None:
        payload["latent_stats"] = {
            "mean": stats.mean,
            "std": stats.std,
            "count": stats.count,
        }
    return payload


def save_checkpoint(
    path: str,
    module: nn.Module,
    role: str,
    config: ModelConfig,
    stats: LatentStats | None = None,
    train_meta: dict | None = None,
) -> None:
    payload = checkpoint_payload(module, role, config, stats, train_meta)
    atomic_write_text(path, canonical_json(payload) + "\n")


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    payload = json.loads(text)
    if payload["format_version"] != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {payload['format_version']}")
    config = ModelConfig.from_dict(payload["model_config"])
    module = ROLE_CLASSES[payload["role"]](config)
    state = {
        name: torch.as_tensor(unpack_array(blob)) for name, blob in payload["state"].items()
    }
    module.load_state_dict(state)
    module.eval()
    stats = None
    if "latent_stats" in payload:
        s = payload["latent_stats"]
        stats = LatentStats(s["mean"], s["std"], s["count"])
    digest = sha256_of(payload)
    return Checkpoint(payload["role"], config, module, stats, payload["train_meta"], digest)
