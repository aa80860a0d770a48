"""Candidate generation and ranking.

Three ways to produce candidate pools: latent-perturbation sampling from
the encoder-decoder (encode a seed, shift the scalar attribute axis,
decode), unconditional sampling from a baseline generator scored by a
separately trained discriminator, and Metropolis-Hastings chains over
sequence space with uniform-substitution or generator-infill proposals.
All pools carry provenance and are byte-stable across reruns.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from collections import Counter
from typing import Callable

import numpy as np
import torch

from .fileio import atomic_write_text, canonical_json, format_float
from .model import (
    Checkpoint,
    DecodeSpec,
    DecoderCore,
    EncoderCore,
    SeqEncDec,
    decode_batch,
    encode_many,
    pack_batch,
    ranker_scores,
)
from .objectives import sequence_nll
from .oracle import CurationConfig, validity_filter
from .seqcore import BOS, N_SPECIAL, TokenSequence, Vocabulary, levenshtein

POOL_FORMAT_VERSION = 1
POOL_HEADER = "tokens\tranker_score\tsource\tseed_ref\tchain_id\tvalid"

SOURCES = ("genhance", "gendisc", "mcmc")


@dataclass(frozen=True)
class RankedCandidate:
    sequence: TokenSequence
    score: float
    source: str
    seed_ref: int = -1  # index of the seed / chain-initial sequence, -1 if none
    chain_id: int = -1
    valid: bool = True

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown candidate source {self.source!r}")
        if not math.isfinite(self.score):
            raise ValueError("candidate score must be finite")


@dataclass(frozen=True)
class CandidatePool:
    candidates: tuple[RankedCandidate, ...]
    provenance: dict

    def __len__(self) -> int:
        return len(self.candidates)

    def sequences(self) -> list[TokenSequence]:
        return [c.sequence for c in self.candidates]

    def scores(self) -> np.ndarray:
        return np.array([c.score for c in self.candidates], dtype=np.float64)


def rank(pool: CandidatePool, k: int) -> list[RankedCandidate]:
    """Top-k candidates, descending by ranker score, stable on ties."""
    if len(pool) == 0:
        raise ValueError("cannot rank an empty pool")
    ordered = sorted(pool.candidates, key=lambda c: -c.score)
    return ordered[: min(k, len(ordered))]


# ---------------------------------------------------------------------------
# Latent-perturbation sampling and the generator-discriminator baseline.


def _draw_candidates(
    decode_fn: Callable[[int, torch.Generator], list[tuple[TokenSequence, int]]],
    n: int,
    validity: CurationConfig,
    gen_seed: int,
    batch_size: int,
    what: str,
) -> list[tuple[TokenSequence, int]]:
    """Draw batches until n candidates pass the validity filter.

    Aborts with a diagnostic if the valid yield stays under 1% once the
    resample budget (100 draws per requested candidate) is spent.
    """
    gen = torch.Generator().manual_seed(gen_seed)
    kept: list[tuple[TokenSequence, int]] = []
    drawn = 0
    budget = 100 * max(n, 2)
    while len(kept) < n:
        chunk = min(batch_size, max(2 * (n - len(kept)), 16))
        batch = decode_fn(chunk, gen)
        drawn += len(batch)
        kept.extend((s, ref) for s, ref in batch if validity_filter(s, validity))
        if drawn >= budget and len(kept) < n:
            rate = len(kept) / drawn
            if rate < 0.01:
                raise RuntimeError(
                    f"{what}: validity yield {rate:.2%} after {drawn} draws "
                    f"({len(kept)}/{n} kept); model is not producing usable sequences"
                )
            budget += 100 * max(n, 2)
    return kept[:n]


def genhance_sample(
    checkpoint: Checkpoint,
    seeds: list[TokenSequence],
    delta_fraction: float,
    n: int,
    spec: DecodeSpec | None = None,
    *,
    validity: CurationConfig,
    seed: int = 0,
    batch_size: int = 256,
) -> CandidatePool:
    """Candidates decoded from perturbed latents of seed sequences.

    Seeds are visited round-robin; each is encoded, its attribute axis is
    shifted by delta_fraction x (training z_par std, from the checkpoint's
    LatentStats), and the decoder samples a sequence from the shifted
    latent. Candidates failing the validity filter are discarded and
    redrawn; survivors are re-encoded and scored.
    """
    model = checkpoint.module
    if not isinstance(model, SeqEncDec):
        raise ValueError("latent perturbation sampling needs an encoder-decoder checkpoint")
    if checkpoint.stats is None:
        raise ValueError("checkpoint lacks LatentStats; retrain or recompute stats")
    if not seeds:
        raise ValueError("need at least one seed sequence")
    delta = float(delta_fraction) * checkpoint.stats.std
    z_seeds = encode_many(model, seeds)
    mem_seeds = pad_seeds = None
    if model.config.decoder_sees_encoder_states:
        model.eval()
        with torch.no_grad():
            ids_s, len_s = pack_batch(seeds)
            mem_seeds, pad_seeds = model.encoder.states(ids_s, len_s)
    cursor = 0

    def decode_some(count: int, gen: torch.Generator):
        nonlocal cursor
        refs = [(cursor + i) % len(seeds) for i in range(count)]
        cursor = (cursor + count) % len(seeds)
        z = z_seeds[refs].copy()
        z[:, 0] += delta
        mem = mem_seeds[refs] if mem_seeds is not None else None
        pad = pad_seeds[refs] if pad_seeds is not None else None
        out, _ = decode_batch(model, z, spec, gen, memory_extra=mem, memory_pad_mask=pad)
        return list(zip(out, refs))

    kept = _draw_candidates(decode_some, n, validity, seed, batch_size, "genhance_sample")
    scores = ranker_scores(model.encoder, [s for s, _ in kept])
    cands = tuple(
        RankedCandidate(s, float(y), "genhance", seed_ref=ref)
        for (s, ref), y in zip(kept, scores)
    )
    prov = {
        "source": "genhance",
        "checkpoint": checkpoint.digest,
        "config": checkpoint.config.to_dict(),
        "seed": seed,
        "delta_fraction": float(delta_fraction),
        "delta": delta,
        "n": n,
    }
    return CandidatePool(cands, prov)


def gendisc_sample(
    generator: Checkpoint,
    discriminator: Checkpoint,
    n: int,
    spec: DecodeSpec | None = None,
    *,
    validity: CurationConfig,
    seed: int = 0,
    batch_size: int = 256,
) -> CandidatePool:
    """Unconditionally sampled candidates scored by a trained discriminator."""
    gen_model = generator.module
    disc_model = discriminator.module
    if not isinstance(gen_model, DecoderCore):
        raise ValueError("gendisc sampling needs a generator checkpoint")
    if not isinstance(disc_model, EncoderCore):
        raise ValueError("gendisc sampling needs a discriminator checkpoint")
    dim = gen_model.config.latent_dim

    def decode_some(count: int, gen: torch.Generator):
        z = np.zeros((count, dim))  # empty conditioning
        out, _ = decode_batch(gen_model, z, spec, gen)
        return [(s, -1) for s in out]

    kept = _draw_candidates(decode_some, n, validity, seed, batch_size, "gendisc_sample")
    scores = ranker_scores(disc_model, [s for s, _ in kept])
    cands = tuple(
        RankedCandidate(s, float(y), "gendisc") for (s, _), y in zip(kept, scores)
    )
    prov = {
        "source": "gendisc",
        "checkpoint": generator.digest,
        "discriminator": discriminator.digest,
        "config": generator.config.to_dict(),
        "seed": seed,
        "n": n,
    }
    return CandidatePool(cands, prov)


# ---------------------------------------------------------------------------
# Metropolis-Hastings over sequences.


def acceptance_prob(s_new_fitness: float, s_old_fitness: float, T: float) -> float:
    """min(1, exp((new - old) / T)); exactly 1 for any improvement or tie."""
    if T <= 0:
        raise ValueError("temperature must be positive")
    delta = s_new_fitness - s_old_fitness
    if delta >= 0:
        return 1.0
    return math.exp(delta / T)


@dataclass
class ProposalOperator:
    """Local move generator for MCMC chains.

    kind "uniform": one mutable position resampled to a different symbol
    (a symmetric proposal). kind "infill": a contiguous span of 1-2
    mutable positions is replaced by sampling from a generator's
    conditional distribution over all span fillings, scored in the
    context of the whole sequence. Constant regions are never touched.
    """

    kind: str
    vocab: Vocabulary
    mutable_positions: tuple[int, ...]
    seed: int = 0
    spans: tuple[int, ...] = (1, 2)
    generator: DecoderCore | None = None
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("uniform", "infill"):
            raise ValueError(f"unknown proposal kind {self.kind!r}")
        if not self.mutable_positions:
            raise ValueError("proposal operator needs at least one mutable position")
        if self.kind == "infill" and self.generator is None:
            raise ValueError("infill proposals need a generator checkpoint")
        if self.kind == "infill" and (not self.spans or min(self.spans) < 1):
            raise ValueError("span lengths must be positive")
        self.rng = np.random.default_rng(self.seed)

    def clone(self, seed: int) -> "ProposalOperator":
        return replace(self, seed=seed)

    def _windows(self, length: int) -> list[tuple[int, int]]:
        """(start, span) windows that lie entirely inside the mutable region."""
        mut = set(p for p in self.mutable_positions if p < length)
        wins = []
        for span in self.spans:
            for start in range(length - span + 1):
                if all(start + o in mut for o in range(span)):
                    wins.append((start, span))
        return wins


def propose(operator: ProposalOperator, s: TokenSequence) -> TokenSequence:
    """One local move from s; vocabulary membership and constant region preserved."""
    toks = list(s.tokens)
    positions = [p for p in operator.mutable_positions if p < len(toks)]
    if not positions:
        raise ValueError("sequence has no mutable positions")
    rng = operator.rng
    n_content = operator.vocab.n_content
    if operator.kind == "uniform":
        pos = positions[rng.integers(len(positions))]
        shift = 1 + int(rng.integers(n_content - 1))
        toks[pos] = N_SPECIAL + (toks[pos] - N_SPECIAL + shift) % n_content
        return TokenSequence(tuple(toks))
    return _infill(operator, s, rng)


def _infill(operator: ProposalOperator, s: TokenSequence, rng: np.random.Generator) -> TokenSequence:
    wins = operator._windows(s.length)
    if not wins:
        raise ValueError("no span fits inside the mutable region")
    start, span = wins[rng.integers(len(wins))]
    n_content = operator.vocab.n_content
    fillings = np.stack(
        [g.ravel() for g in np.meshgrid(*([np.arange(n_content) + N_SPECIAL] * span), indexing="ij")],
        axis=1,
    )
    variants = []
    base = list(s.tokens)
    for fill in fillings:
        toks = list(base)
        toks[start : start + span] = [int(t) for t in fill]
        variants.append(TokenSequence(tuple(toks)))
    gen = operator.generator
    gen.eval()
    with torch.no_grad():
        ids, lengths = pack_batch(variants)
        z = torch.zeros((len(variants), gen.config.latent_dim), dtype=gen.config.torch_dtype)
        bos = torch.full((ids.shape[0], 1), BOS, dtype=torch.long)
        dec_in = torch.cat([bos, ids[:, :-1]], dim=1) if ids.shape[1] > 1 else bos
        logits = gen.logits(z, dec_in)
        nll = sequence_nll(logits, ids, lengths).double()
    logp = -nll.numpy()
    logp -= logp.max()
    p = np.exp(logp)
    p /= p.sum()
    pick = rng.choice(len(variants), p=p)
    return variants[pick]


def _resolve_cap(edit_cap, length: int) -> float:
    if edit_cap is None:
        return math.inf
    cap = float(edit_cap)
    if cap <= 0:
        raise ValueError("edit cap must be positive")
    if isinstance(edit_cap, float) and edit_cap < 1.0:
        return cap * length  # fraction of the initial length
    return cap


def mcmc_run(
    ranker: Callable[[list[TokenSequence]], np.ndarray],
    init: list[TokenSequence],
    proposal: ProposalOperator,
    T: float,
    iterations: int,
    edit_cap=None,
    *,
    seed: int = 0,
    validity: CurationConfig | None = None,
    provenance: dict | None = None,
    return_trajectory: bool = False,
):
    """Independent Metropolis-Hastings chains, one per initial sequence.

    Each iteration proposes a local move; moves that stray beyond the
    edit cap (Levenshtein distance to the chain's own initial sequence;
    a float < 1 means a fraction of its length) are rejected outright,
    and the rest are accepted with probability min(1, exp(delta/T)). The
    pool holds every accepted state plus each chain's final state, scored
    by the ranker that drove the chain. Seed-deterministic.

    With return_trajectory=True also returns one Counter of post-step
    states per chain (for stationarity checks).
    """
    if T <= 0:
        raise ValueError("temperature must be positive")
    if iterations < 1:
        raise ValueError("need at least one iteration")
    if not init:
        raise ValueError("need at least one chain")
    n_chains = len(init)
    children = np.random.SeedSequence(seed).spawn(2 * n_chains)
    chain_rngs = [np.random.default_rng(children[2 * i]) for i in range(n_chains)]
    operators = [
        proposal.clone(int(np.random.default_rng(children[2 * i + 1]).integers(2**31)))
        for i in range(n_chains)
    ]
    states = list(init)
    fitness = np.asarray(ranker(states), dtype=np.float64).copy()
    caps = [_resolve_cap(edit_cap, s.length) for s in init]
    accepted: list[tuple[int, TokenSequence, float]] = []
    tallies = [Counter() for _ in range(n_chains)] if return_trajectory else None
    n_accept = 0
    for _ in range(iterations):
        props = [propose(operators[i], states[i]) for i in range(n_chains)]
        new_fit = np.asarray(ranker(props), dtype=np.float64)
        for i in range(n_chains):
            if caps[i] == math.inf or levenshtein(props[i], init[i]) <= caps[i]:
                a = acceptance_prob(float(new_fit[i]), float(fitness[i]), T)
                if a >= 1.0 or chain_rngs[i].random() < a:
                    states[i] = props[i]
                    fitness[i] = new_fit[i]
                    accepted.append((i, props[i], float(new_fit[i])))
                    n_accept += 1
            if return_trajectory:
                tallies[i][states[i].tokens] += 1
    cands = []
    for i, s, y in accepted:
        ok = validity_filter(s, validity) if validity is not None else True
        cands.append(RankedCandidate(s, y, "mcmc", seed_ref=i, chain_id=i, valid=ok))
    for i in range(n_chains):
        ok = validity_filter(states[i], validity) if validity is not None else True
        cands.append(
            RankedCandidate(states[i], float(fitness[i]), "mcmc", seed_ref=i, chain_id=i, valid=ok)
        )
    prov = dict(provenance or {})
    prov.update(
        {
            "source": "mcmc",
            "proposal": proposal.kind,
            "temperature": T,
            "iterations": iterations,
            "edit_cap": edit_cap,
            "chains": n_chains,
            "seed": seed,
            "accept_rate": n_accept / (iterations * n_chains),
        }
    )
    pool = CandidatePool(tuple(cands), prov)
    if return_trajectory:
        return pool, tallies
    return pool


def encoder_ranker(encoder: EncoderCore) -> Callable[[list[TokenSequence]], np.ndarray]:
    """Batched ranking-score callable backed by a trained encoder."""

    def _rank(seqs: list[TokenSequence]) -> np.ndarray:
        return ranker_scores(encoder, seqs)

    return _rank


# ---------------------------------------------------------------------------
# Pool files: one provenance line, a header, then one row per candidate.


def pool_to_text(pool: CandidatePool, vocab: Vocabulary) -> str:
    lines = [
        "#format seqlift-pool v%d" % POOL_FORMAT_VERSION,
        "#provenance " + canonical_json({**pool.provenance, "symbols": list(vocab.symbols)}),
        POOL_HEADER,
    ]
    for c in pool.candidates:
        lines.append(
            "\t".join(
                [
                    vocab.render(c.sequence),
                    format_float(c.score),
                    c.source,
                    str(c.seed_ref),
                    str(c.chain_id),
                    "1" if c.valid else "0",
                ]
            )
        )
    return "\n".join(lines) + "\n"


def save_pool(path: str, pool: CandidatePool, vocab: Vocabulary) -> None:
    atomic_write_text(path, pool_to_text(pool, vocab))


def load_pool(path: str) -> tuple[CandidatePool, Vocabulary]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if len(lines) < 3 or not lines[0].startswith("#format seqlift-pool"):
        raise ValueError(f"{path} is not a candidate pool file")
    prov = json.loads(lines[1].removeprefix("#provenance "))
    vocab = Vocabulary(tuple(prov.pop("symbols")))
    if lines[2] != POOL_HEADER:
        raise ValueError(f"unexpected pool header in {path}")
    cands = []
    for row in lines[3:]:
        if not row:
            continue
        tokens, score, source, seed_ref, chain_id, valid = row.split("\t")
        cands.append(
            RankedCandidate(
                vocab.parse(tokens),
                float(score),
                source,
                seed_ref=int(seed_ref),
                chain_id=int(chain_id),
                valid=valid == "1",
            )
        )
    return CandidatePool(tuple(cands), prov), vocab
